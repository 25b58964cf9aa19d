//! Frequency grid, power profiles and unit conversions.
//!
//! Every profile lives on the same 83-channel C-band grid. Powers are
//! per-channel totals and may be expressed in dBm, natural-log watts
//! (the propagation domain) or linear watts.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};

/// Number of carriers on the grid.
pub const N_CHANNELS: usize = 83;

/// Representation of an "off" channel in dB-domain values.
pub const FLOOR_DBM: f64 = -60.0;

const DEFAULT_F_START_THZ: f64 = 191.5;
const DEFAULT_SPACING_THZ: f64 = 0.05;

/// Tolerance used when matching frequencies read from files against the grid.
const FREQ_MATCH_TOL_THZ: f64 = 1e-6;

/// Uniform frequency grid with [`N_CHANNELS`] carriers.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrequencyGrid {
    f_start_thz: f64,
    spacing_thz: f64,
}

impl FrequencyGrid {
    pub fn new(f_start_thz: f64, spacing_thz: f64) -> Result<Self> {
        if !f_start_thz.is_finite() || f_start_thz <= 0.0 {
            return Err(Error::invalid(format!(
                "grid start frequency must be positive, got {f_start_thz}"
            )));
        }
        if !spacing_thz.is_finite() || spacing_thz <= 0.0 {
            return Err(Error::invalid(format!(
                "grid spacing must be positive, got {spacing_thz}"
            )));
        }
        Ok(Self {
            f_start_thz,
            spacing_thz,
        })
    }

    /// The default C-band grid: 191.5 THz to 195.6 THz on 50 GHz spacing.
    pub fn c_band() -> Self {
        Self {
            f_start_thz: DEFAULT_F_START_THZ,
            spacing_thz: DEFAULT_SPACING_THZ,
        }
    }

    pub fn n_channels(&self) -> usize {
        N_CHANNELS
    }

    pub fn f_start_thz(&self) -> f64 {
        self.f_start_thz
    }

    pub fn spacing_thz(&self) -> f64 {
        self.spacing_thz
    }

    pub fn frequency(&self, k: usize) -> f64 {
        self.f_start_thz + k as f64 * self.spacing_thz
    }

    pub fn frequencies(&self) -> Vec<f64> {
        (0..N_CHANNELS).map(|k| self.frequency(k)).collect()
    }

    /// Full occupied band, first to last carrier.
    pub fn span_thz(&self) -> f64 {
        self.frequency(N_CHANNELS - 1) - self.f_start_thz
    }
}

impl Default for FrequencyGrid {
    fn default() -> Self {
        Self::c_band()
    }
}

/// Convenience alias for [`FrequencyGrid::c_band`].
pub fn build_grid() -> FrequencyGrid {
    FrequencyGrid::c_band()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PowerUnit {
    Dbm,
    /// Natural logarithm of the power in watts.
    LogWatts,
    Watts,
}

impl fmt::Display for PowerUnit {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            PowerUnit::Dbm => "dBm",
            PowerUnit::LogWatts => "log-W",
            PowerUnit::Watts => "W",
        };
        f.write_str(s)
    }
}

pub fn dbm_to_watts(dbm: f64) -> f64 {
    10f64.powf((dbm - 30.0) / 10.0)
}

/// Zero watts maps to [`FLOOR_DBM`].
pub fn watts_to_dbm(w: f64) -> Result<f64> {
    if w < 0.0 || !w.is_finite() {
        return Err(Error::invalid(format!(
            "power must be finite and non-negative, got {w} W"
        )));
    }
    if w == 0.0 {
        return Ok(FLOOR_DBM);
    }
    Ok(10.0 * w.log10() + 30.0)
}

pub fn dbm_to_log_watts(dbm: f64) -> f64 {
    (dbm - 30.0) * std::f64::consts::LN_10 / 10.0
}

pub fn log_watts_to_dbm(lw: f64) -> f64 {
    lw * 10.0 / std::f64::consts::LN_10 + 30.0
}

/// Per-channel power values on a [`FrequencyGrid`] in one unit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerProfile {
    grid: FrequencyGrid,
    values: Vec<f64>,
    unit: PowerUnit,
}

impl PowerProfile {
    pub fn new(grid: FrequencyGrid, values: Vec<f64>, unit: PowerUnit) -> Result<Self> {
        if values.len() != grid.n_channels() {
            return Err(Error::invalid(format!(
                "profile has {} values, grid has {} channels",
                values.len(),
                grid.n_channels()
            )));
        }
        if let Some(k) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "channel {k} is not finite ({})",
                values[k]
            )));
        }
        if unit == PowerUnit::Watts {
            if let Some(k) = values.iter().position(|&v| v < 0.0) {
                return Err(Error::invalid(format!(
                    "channel {k} has negative power {} W",
                    values[k]
                )));
            }
        }
        Ok(Self { grid, values, unit })
    }

    pub fn from_dbm(values: Vec<f64>) -> Result<Self> {
        Self::new(FrequencyGrid::c_band(), values, PowerUnit::Dbm)
    }

    /// Every channel at the same level.
    pub fn flat(grid: FrequencyGrid, level_dbm: f64) -> Self {
        Self {
            grid,
            values: vec![level_dbm; grid.n_channels()],
            unit: PowerUnit::Dbm,
        }
    }

    pub fn grid(&self) -> &FrequencyGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn unit(&self) -> PowerUnit {
        self.unit
    }

    pub fn convert(&self, target: PowerUnit) -> Result<PowerProfile> {
        if target == self.unit {
            return Ok(self.clone());
        }
        let values = self
            .values
            .iter()
            .map(|&v| convert_value(v, self.unit, target))
            .collect::<Result<Vec<_>>>()?;
        PowerProfile::new(self.grid, values, target)
    }

    pub fn to_dbm(&self) -> Result<PowerProfile> {
        self.convert(PowerUnit::Dbm)
    }

    pub fn total_power_dbm(&self) -> Result<f64> {
        let dbm = self.to_dbm()?;
        Ok(total_power_dbm(&dbm.values))
    }

    /// Shift so the strongest channel sits at 0 dBm.
    pub fn normalize(&self) -> Result<PowerProfile> {
        if self.unit != PowerUnit::Dbm {
            return Err(Error::invalid(format!(
                "normalize expects a dBm profile, got {}",
                self.unit
            )));
        }
        Ok(Self {
            grid: self.grid,
            values: normalize_db(&self.values),
            unit: PowerUnit::Dbm,
        })
    }

    /// Uniform dB offset. Only meaningful for dBm profiles.
    pub fn shifted(&self, offset_db: f64) -> PowerProfile {
        debug_assert_eq!(self.unit, PowerUnit::Dbm);
        Self {
            grid: self.grid,
            values: self.values.iter().map(|v| v + offset_db).collect(),
            unit: self.unit,
        }
    }

    /// Rescale a dBm profile so its total power equals `total_dbm`.
    pub fn with_total_dbm(&self, total_dbm: f64) -> Result<PowerProfile> {
        let dbm = self.to_dbm()?;
        let current = total_power_dbm(&dbm.values);
        Ok(dbm.shifted(total_dbm - current))
    }

    /// max − min in dB.
    pub fn excursion_db(&self) -> Result<f64> {
        Ok(excursion(self.to_dbm()?.values()))
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let dbm = self.to_dbm()?;
        let mut w = csv::Writer::from_writer(writer);
        let io = |e: csv::Error| Error::invalid(format!("writing profile CSV: {e}"));
        w.write_record(["freq_thz", "power_dbm"]).map_err(io)?;
        for (k, v) in dbm.values.iter().enumerate() {
            w.write_record([format!("{:.4}", self.grid.frequency(k)), format!("{v}")])
                .map_err(io)?;
        }
        w.flush()
            .map_err(|e| Error::invalid(format!("writing profile CSV: {e}")))?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write_csv(std::io::BufWriter::new(file))
    }

    /// Parse the `freq_thz,power_dbm` format. Rows must match `grid` exactly.
    pub fn read_csv<R: Read>(reader: R, grid: FrequencyGrid) -> Result<PowerProfile> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(reader);
        let headers = rdr
            .headers()
            .map_err(|e| Error::invalid(format!("line 1: {e}")))?
            .clone();
        if headers.len() != 2 || &headers[0] != "freq_thz" || &headers[1] != "power_dbm" {
            return Err(Error::invalid(
                "line 1: expected header `freq_thz,power_dbm`".to_string(),
            ));
        }
        let mut values = Vec::with_capacity(N_CHANNELS);
        for (row, record) in rdr.records().enumerate() {
            let line = row + 2;
            let record = record.map_err(|e| Error::invalid(format!("line {line}: {e}")))?;
            if record.len() != 2 {
                return Err(Error::invalid(format!(
                    "line {line}: expected 2 fields, found {}",
                    record.len()
                )));
            }
            let parse = |s: &str, what: &str| {
                s.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::invalid(format!("line {line}: bad {what} `{s}`")))
            };
            let f = parse(&record[0], "frequency")?;
            let p = parse(&record[1], "power")?;
            if row >= N_CHANNELS {
                return Err(Error::invalid(format!(
                    "line {line}: more than {N_CHANNELS} data rows"
                )));
            }
            if (f - grid.frequency(row)).abs() > FREQ_MATCH_TOL_THZ {
                return Err(Error::invalid(format!(
                    "line {line}: frequency {f} THz does not match grid channel {row} ({} THz)",
                    grid.frequency(row)
                )));
            }
            values.push(p);
        }
        if values.len() != N_CHANNELS {
            return Err(Error::invalid(format!(
                "expected {N_CHANNELS} data rows, found {}",
                values.len()
            )));
        }
        PowerProfile::new(grid, values, PowerUnit::Dbm)
    }

    pub fn load_csv(path: &Path, grid: FrequencyGrid) -> Result<PowerProfile> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        PowerProfile::read_csv(std::io::BufReader::new(file), grid).map_err(|e| match e {
            Error::InvalidInput(m) => Error::parse(path, m),
            other => other,
        })
    }
}

pub fn convert_value(v: f64, from: PowerUnit, to: PowerUnit) -> Result<f64> {
    use PowerUnit::*;
    let out = match (from, to) {
        (a, b) if a == b => v,
        (Dbm, Watts) => dbm_to_watts(v),
        (Dbm, LogWatts) => dbm_to_log_watts(v),
        (Watts, Dbm) => watts_to_dbm(v)?,
        (Watts, LogWatts) => dbm_to_log_watts(watts_to_dbm(v)?),
        (LogWatts, Dbm) => log_watts_to_dbm(v),
        (LogWatts, Watts) => v.exp(),
        _ => unreachable!(),
    };
    Ok(out)
}

/// 10·log10 of the summed linear power of dBm values.
pub fn total_power_dbm(values_dbm: &[f64]) -> f64 {
    // Factor out the maximum so a sum of tiny terms never underflows to zero.
    let max = values_dbm.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = values_dbm
        .iter()
        .map(|v| 10f64.powf((v - max) / 10.0))
        .sum();
    max + 10.0 * sum.log10()
}

pub fn normalize_db(values: &[f64]) -> Vec<f64> {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    values.iter().map(|v| v - max).collect()
}

pub fn excursion(values: &[f64]) -> f64 {
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
            (lo.min(v), hi.max(v))
        });
    hi - lo
}

/// Least-squares slope of dB values against frequency, in dB/THz.
pub fn slope_db_per_thz(profile: &PowerProfile) -> Result<f64> {
    let dbm = profile.to_dbm()?;
    let f = profile.grid().frequencies();
    let n = f.len() as f64;
    let fm = f.iter().sum::<f64>() / n;
    let pm = dbm.values().iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (x, y) in f.iter().zip(dbm.values()) {
        sxy += (x - fm) * (y - pm);
        sxx += (x - fm) * (x - fm);
    }
    Ok(sxy / sxx)
}


/// Total power of a dBm vector recorded on a tape (scalar result).
pub fn total_power_dbm_var(tape: &mut Tape, x: Var) -> Var {
    let m = tape.max(x);
    let n = tape.value(x).len();
    let mb = tape.broadcast(m, n);
    let z = tape.sub(x, mb);
    let z = tape.scale(z, std::f64::consts::LN_10 / 10.0);
    let e = tape.exp(z);
    let s = tape.sum(e);
    let l = tape.ln(s);
    let db = tape.scale(l, 10.0 / std::f64::consts::LN_10);
    tape.add(db, m)
}

/// `x − max(x)` recorded on a tape.
pub fn normalize_var(tape: &mut Tape, x: Var) -> Var {
    let m = tape.max(x);
    let n = tape.value(x).len();
    let mb = tape.broadcast(m, n);
    tape.sub(x, mb)
}
