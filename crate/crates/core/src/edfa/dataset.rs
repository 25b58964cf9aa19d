use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{EdfaFeatures, VirtualEdfaDevice};
use crate::error::{Error, Result};
use crate::grid::N_CHANNELS;
use crate::profiles::{derive_seed, generate_batch};

pub const TOTAL_IN_RANGE: (f64, f64) = (-6.0, 12.0);
pub const TOTAL_OUT_RANGE: (f64, f64) = (10.0, 21.0);
pub const PROFILE_EXCURSION_RANGE: (f64, f64) = (0.0, 15.0);

#[derive(Debug, Clone, PartialEq)]
pub struct GainSample {
    pub features: EdfaFeatures,
    /// Measured gain per channel, dB.
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GainDataset {
    pub device_id: String,
    pub seed: u64,
    pub samples: Vec<GainSample>,
}

/// Random profiles and operating points labelled by a noisy virtual device.
pub fn generate_training_set(device: &VirtualEdfaDevice, n_samples: usize, seed: u64) -> Result<GainDataset> {
    if n_samples == 0 {
        return Err(Error::invalid("cannot generate an empty dataset"));
    }
    device.validate()?;
    let profiles = generate_batch(n_samples, PROFILE_EXCURSION_RANGE, seed)?;
    let samples = profiles
        .iter()
        .map(|g| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(g.seed, 1));
            let total_in = rng.random_range(TOTAL_IN_RANGE.0..=TOTAL_IN_RANGE.1);
            let total_out = rng.random_range(TOTAL_OUT_RANGE.0..=TOTAL_OUT_RANGE.1);
            let features = EdfaFeatures::from_profile(&g.profile, total_out)
                .map(|f| EdfaFeatures { total_in, ..f })?;
            let target = device.virtual_gain(&features, Some(&mut rng));
            Ok(GainSample { features, target })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(GainDataset {
        device_id: device.id.clone(),
        seed,
        samples,
    })
}

impl GainDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let io = |e: std::io::Error| Error::io("<dataset>", e);
        writeln!(w, "# device={} seed={}", self.device_id, self.seed).map_err(io)?;
        let mut csv = csv::Writer::from_writer(w);
        let header: Vec<String> = (0..N_CHANNELS)
            .map(|n| format!("p{n}"))
            .chain(["total_in".to_string(), "total_out".to_string()])
            .chain((0..N_CHANNELS).map(|n| format!("g{n}")))
            .collect();
        csv.write_record(&header).map_err(csv_err)?;
        for s in &self.samples {
            let row = s
                .features
                .normalized_profile
                .iter()
                .chain([&s.features.total_in, &s.features.total_out])
                .chain(&s.target)
                .map(|v| v.to_string());
            csv.write_record(row).map_err(csv_err)?;
        }
        csv.flush().map_err(io)
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(f))
            .map_err(|e| relabel(e, path))
    }

    pub fn read_csv<R: Read>(mut r: R) -> Result<Self> {
        let mut text = String::new();
        r.read_to_string(&mut text)
            .map_err(|e| Error::io("<dataset>", e))?;
        let (meta, body) = match text.strip_prefix('#') {
            Some(rest) => rest.split_once('\n').unwrap_or((rest, "")),
            None => ("", text.as_str()),
        };
        let mut device_id = String::new();
        let mut seed = 0;
        for kv in meta.split_whitespace() {
            match kv.split_once('=') {
                Some(("device", v)) => device_id = v.to_string(),
                Some(("seed", v)) => {
                    seed = v
                        .parse()
                        .map_err(|_| Error::parse("<dataset>", format!("bad seed `{v}` in header comment")))?
                }
                _ => {}
            }
        }
        let line_offset = if meta.is_empty() && !text.starts_with('#') { 0 } else { 1 };
        let mut csv = csv::Reader::from_reader(body.as_bytes());
        let width = 2 * N_CHANNELS + 2;
        let mut samples = Vec::new();
        for (i, rec) in csv.records().enumerate() {
            let line = i + 2 + line_offset;
            let rec = rec.map_err(|e| Error::parse("<dataset>", format!("line {line}: {e}")))?;
            if rec.len() != width {
                return Err(Error::parse(
                    "<dataset>",
                    format!("line {line}: expected {width} columns, found {}", rec.len()),
                ));
            }
            let vals = rec
                .iter()
                .map(|f| f.trim().parse::<f64>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|e| Error::parse("<dataset>", format!("line {line}: {e}")))?;
            let features = EdfaFeatures::new(vals[..N_CHANNELS].to_vec(), vals[N_CHANNELS], vals[N_CHANNELS + 1])
                .map_err(|e| Error::parse("<dataset>", format!("line {line}: {e}")))?;
            samples.push(GainSample {
                features,
                target: vals[N_CHANNELS + 2..].to_vec(),
            });
        }
        Ok(Self {
            device_id,
            seed,
            samples,
        })
    }

    pub fn load_csv(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_csv(f).map_err(|e| relabel(e, path))
    }
}

fn csv_err(e: csv::Error) -> Error {
    Error::parse("<dataset>", e.to_string())
}

fn relabel(e: Error, path: &Path) -> Error {
    match e {
        Error::Parse { message, .. } => Error::parse(path, message),
        Error::Io { source, .. } => Error::io(path, source),
        other => other,
    }
}
