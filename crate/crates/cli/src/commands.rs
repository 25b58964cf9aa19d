use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};
use wdm_cascade::cascade::{predict_output, predict_output_ground_truth, LinkConfig};
use wdm_cascade::edfa::{
    dataset_mse, generate_training_set, train_edfa_model_with, GainDataset, TrainingConfig, VirtualEdfaDevice,
};
use wdm_cascade::eval::{run_baseline_comparison, run_channel_mse, run_power_sweep, SweepConfig};
use wdm_cascade::fiber::FiberModelKind;
use wdm_cascade::grid::{FrequencyGrid, PowerProfile, N_CHANNELS};
use wdm_cascade::optimize::optimize_input;
use wdm_cascade::profiles::{derive_seed, generate_batch};

use crate::config::{load_or_default, EdfaElement, ElementSpec, FiberElement, LinkFile, OptimizeFile};
use crate::{CliError, Command, GlobalOpts};

/// What a command did, for the manifest.
#[derive(Debug, Default)]
pub struct Outcome {
    pub config: Value,
    pub outputs: Vec<PathBuf>,
}

impl Outcome {
    fn merge(&mut self, key: &str, other: Outcome) {
        if !self.config.is_object() {
            self.config = json!({});
        }
        self.config[key] = other.config;
        self.outputs.extend(other.outputs);
    }
}

fn snapshot<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("config types serialize")
}

fn out_path(global: &GlobalOpts, given: &Option<PathBuf>, default: &str) -> PathBuf {
    match given {
        Some(p) if p.is_absolute() => p.clone(),
        Some(p) => global.out_dir.join(p),
        None => global.out_dir.join(default),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, CliError> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::Input(format!("cannot write {}: {e}", path.display())))
}

pub fn execute(global: &GlobalOpts, command: &Command) -> Result<Outcome, CliError> {
    let seed = global.seed.unwrap_or(0);
    match command {
        Command::GenDevice {
            params,
            id,
            perturb_seed,
            out,
        } => gen_device(global, params.as_deref(), id.as_deref(), *perturb_seed, out),
        Command::GenDataset { device, samples, out } => {
            let dev = VirtualEdfaDevice::load(device)?;
            gen_dataset(&dev, *samples, seed, &out_path(global, out, "dataset.csv"))
        }
        Command::Train { dataset, val, hyper, out } => {
            let mut hp: TrainingConfig = load_or_default(hyper.as_deref())?;
            if let Some(s) = global.seed {
                hp.seed = s;
            }
            let train = GainDataset::load_csv(dataset)?;
            let (train, val) = match val {
                Some(v) => (train, GainDataset::load_csv(v)?),
                None => split_tail(train),
            };
            train_model(global, &train, &val, &hp, &out_path(global, out, "model.json"))
        }
        Command::Simulate {
            link,
            profile,
            truth,
            out,
        } => simulate(global, link, profile, *truth, seed, &out_path(global, out, "output.csv")),
        Command::Optimize { link, opt_config } => optimize(global, link, opt_config.as_deref()),
        Command::Evaluate {
            link,
            sweep_config,
            opt_config,
            skip_baselines,
        } => {
            let mut sweep: SweepConfig = load_or_default(sweep_config.as_deref())?;
            if let Some(s) = global.seed {
                sweep.seed = s;
            }
            evaluate(global, link, &sweep, opt_config.as_deref(), *skip_baselines)
        }
        Command::GenProfiles {
            count,
            min_excursion,
            max_excursion,
            out,
        } => gen_profiles(*count, (*min_excursion, *max_excursion), seed, &out_path(global, out, "profiles.csv")),
        Command::Demo {
            samples,
            val_samples,
            profiles,
            max_epochs,
        } => demo(global, *samples, *val_samples, *profiles, *max_epochs, seed),
        Command::Replay { .. } => Err(CliError::Input("replay cannot be nested".into())),
    }
}

fn gen_device(
    global: &GlobalOpts,
    params: Option<&Path>,
    id: Option<&str>,
    perturb_seed: Option<u64>,
    out: &Option<PathBuf>,
) -> Result<Outcome, CliError> {
    let base: VirtualEdfaDevice = load_or_default(params)?;
    base.validate()?;
    let id = id.map(str::to_string).unwrap_or_else(|| base.id.clone());
    let device = match perturb_seed {
        Some(s) => base.perturbed(id, s),
        None => VirtualEdfaDevice { id, ..base },
    };
    let path = out_path(global, out, &format!("{}.device.json", device.id.to_lowercase()));
    device.save(&path)?;
    println!("device {} written to {}", device.id, path.display());
    Ok(Outcome {
        config: json!({ "device": snapshot(&device), "perturb_seed": perturb_seed }),
        outputs: vec![path],
    })
}

fn gen_dataset(
    device: &VirtualEdfaDevice,
    samples: usize,
    seed: u64,
    path: &Path,
) -> Result<Outcome, CliError> {
    let ds = generate_training_set(device, samples, seed)?;
    ds.save_csv(path)?;
    println!("{} samples from device {} written to {}", ds.len(), device.id, path.display());
    Ok(Outcome {
        config: json!({ "device": snapshot(device), "samples": samples, "seed": seed }),
        outputs: vec![path.to_path_buf()],
    })
}

/// Holds out the last tenth (at least one sample) for validation.
fn split_tail(mut ds: GainDataset) -> (GainDataset, GainDataset) {
    let n_val = (ds.len() / 10).max(1).min(ds.len().saturating_sub(1));
    let val_samples = ds.samples.split_off(ds.len() - n_val);
    let val = GainDataset {
        samples: val_samples,
        ..ds.clone()
    };
    (ds, val)
}

fn train_model(
    global: &GlobalOpts,
    train: &GainDataset,
    val: &GainDataset,
    hp: &TrainingConfig,
    path: &Path,
) -> Result<Outcome, CliError> {
    let (model, report) = train_edfa_model_with(train, val, hp, |s| {
        if s.epoch % 10 == 0 {
            eprintln!("epoch {:>3}  train {:.5}  val {:.5}  lr {:.2e}", s.epoch, s.train_mse, s.val_mse, s.learning_rate);
        }
    })?;
    model.save(path)?;
    let history = global.out_dir.join(format!(
        "{}.history.csv",
        path.file_stem().and_then(|s| s.to_str()).unwrap_or("model")
    ));
    let mut w = create(&history)?;
    let io = |e: std::io::Error| CliError::Input(format!("cannot write {}: {e}", history.display()));
    writeln!(w, "epoch,train_mse_db2,val_mse_db2,learning_rate").map_err(io)?;
    for s in &report.history {
        writeln!(w, "{},{},{},{}", s.epoch, s.train_mse, s.val_mse, s.learning_rate).map_err(io)?;
    }
    w.flush().map_err(io)?;
    let train_mse = dataset_mse(&model, train);
    println!(
        "final train MSE {train_mse:.5} dB², validation MSE {:.5} dB² (epoch {})",
        report.best_val_mse, report.best_epoch
    );
    Ok(Outcome {
        config: json!({
            "hyper": snapshot(hp),
            "train_samples": train.len(),
            "val_samples": val.len(),
            "best_epoch": report.best_epoch,
            "best_val_mse_db2": report.best_val_mse,
            "train_mse_db2": train_mse,
        }),
        outputs: vec![path.to_path_buf(), history],
    })
}

/// Loads a link file and applies the global overrides.
fn load_link(global: &GlobalOpts, path: &Path) -> Result<(LinkConfig, Value), CliError> {
    let (mut file, base) = LinkFile::load(path)?;
    if let Some(k) = global.model {
        file.fiber_model = k;
    }
    if let Some(f) = global.leff_alpha_factor {
        file.leff_alpha_factor = f;
    }
    let link = file.build(&base)?;
    Ok((link, snapshot(&file.resolved())))
}

fn simulate(
    global: &GlobalOpts,
    link_path: &Path,
    profile: &Path,
    truth: bool,
    seed: u64,
    path: &Path,
) -> Result<Outcome, CliError> {
    let (link, link_cfg) = load_link(global, link_path)?;
    let input = PowerProfile::load_csv(profile, FrequencyGrid::c_band())?;
    let output = if truth {
        predict_output_ground_truth(&link, &input, Some(seed))?
    } else {
        predict_output(&link, &input)?
    };
    output.save_csv(path)?;
    println!(
        "output total {:.3} dBm, excursion {:.3} dB written to {}",
        output.total_power_dbm()?,
        output.excursion_db()?,
        path.display()
    );
    Ok(Outcome {
        config: json!({ "link": link_cfg, "truth": truth, "noise_seed": seed }),
        outputs: vec![path.to_path_buf()],
    })
}

fn optimize(global: &GlobalOpts, link_path: &Path, opt: Option<&Path>) -> Result<Outcome, CliError> {
    let (link, link_cfg) = load_link(global, link_path)?;
    let (mut file, base) = OptimizeFile::load_or_default(opt)?;
    if let Some(s) = global.seed {
        file.seed = s;
    }
    let cfg = file.to_config(&base)?;
    let r = optimize_input(&link, &cfg)?;
    let dir = &global.out_dir;
    let (input_path, output_path, trace_path) =
        (dir.join("optimized_input.csv"), dir.join("optimized_output.csv"), dir.join("trace.csv"));
    r.input.save_csv(&input_path)?;
    r.output.save_csv(&output_path)?;
    r.write_trace_csv(create(&trace_path)?)?;
    let mut outputs = vec![input_path, output_path, trace_path];
    let mut truth = None;
    if link_has_devices(&link) {
        let measured = predict_output_ground_truth(&link, &r.input, Some(cfg.seed))?;
        let p = dir.join("optimized_truth_output.csv");
        measured.save_csv(&p)?;
        outputs.push(p);
        truth = Some(measured.excursion_db()?);
    }
    println!(
        "{} iterations, predicted excursion {:.4} dB{}{}",
        r.iterations,
        r.final_cost(),
        truth.map(|t| format!(", ground-truth excursion {t:.4} dB")).unwrap_or_default(),
        if r.converged { "" } else { " (iteration budget reached)" }
    );
    Ok(Outcome {
        config: json!({
            "link": link_cfg,
            "optimizer": snapshot(&file),
            "iterations": r.iterations,
            "converged": r.converged,
            "final_cost_db": r.final_cost(),
            "ground_truth_excursion_db": truth,
        }),
        outputs,
    })
}

fn link_has_devices(link: &LinkConfig) -> bool {
    use wdm_cascade::cascade::LinkElement;
    link.elements.iter().all(|e| match e {
        LinkElement::Edfa(s) => s.device.is_some(),
        LinkElement::Fiber { .. } => true,
    })
}

fn evaluate(
    global: &GlobalOpts,
    link_path: &Path,
    sweep: &SweepConfig,
    opt: Option<&Path>,
    skip_baselines: bool,
) -> Result<Outcome, CliError> {
    let (link, link_cfg) = load_link(global, link_path)?;
    let dir = &global.out_dir;
    let report = run_power_sweep(&link, sweep)?;
    let sweep_path = dir.join("sweep.csv");
    report.write_csv(create(&sweep_path)?)?;
    for row in &report.rows {
        println!("{:>5.1} dBm  {:<4}  {:.4} dB²", row.p_launch_dbm, row.model_kind, row.mean_mse_db2);
    }
    let kind = global.model.unwrap_or(FiberModelKind::Srs);
    let channels = run_channel_mse(&link, sweep.channel_power_dbm, kind, sweep.n_profiles, sweep.seed)?;
    let channel_path = dir.join("channel_mse.csv");
    channels.write_csv(create(&channel_path)?)?;
    println!("per-channel MSE at {} dBm: mean {:.4} dB²", sweep.channel_power_dbm, channels.mean());
    let mut outputs = vec![sweep_path, channel_path];
    let mut config = json!({ "link": link_cfg, "sweep": snapshot(sweep) });
    if !skip_baselines {
        let (mut file, base) = OptimizeFile::load_or_default(opt)?;
        if let Some(s) = global.seed {
            file.seed = s;
        }
        let cfg = file.to_config(&base)?;
        let srs = link.with_fiber_kind(FiberModelKind::Srs);
        let bulk = link.with_fiber_kind(FiberModelKind::Bulk);
        let b = run_baseline_comparison(&srs, &bulk, sweep.channel_power_dbm, &cfg, sweep.seed)?;
        for row in &b.rows {
            println!("{:<7} excursion {:.3} dB  slope {:+.3} dB/THz", row.name, row.excursion_db, row.slope_db_per_thz);
        }
        outputs.extend(b.save(dir)?);
        config["optimizer"] = snapshot(&file);
    }
    Ok(Outcome { config, outputs })
}

fn gen_profiles(count: usize, range: (f64, f64), seed: u64, path: &Path) -> Result<Outcome, CliError> {
    let batch = generate_batch(count, range, seed)?;
    let mut w = create(path)?;
    let io = |e: std::io::Error| CliError::Input(format!("cannot write {}: {e}", path.display()));
    let header: Vec<String> = ["index", "seed", "excursion_db", "filter_length"]
        .into_iter()
        .map(String::from)
        .chain((0..N_CHANNELS).map(|k| format!("p{k}")))
        .collect();
    writeln!(w, "{}", header.join(",")).map_err(io)?;
    for (i, g) in batch.iter().enumerate() {
        let values: Vec<String> = g.profile.values().iter().map(|v| v.to_string()).collect();
        writeln!(w, "{i},{},{},{},{}", g.seed, g.excursion_db, g.filter_length, values.join(",")).map_err(io)?;
    }
    w.flush().map_err(io)?;
    println!("{count} profiles written to {}", path.display());
    Ok(Outcome {
        config: json!({ "count": count, "excursion_range_db": [range.0, range.1], "seed": seed }),
        outputs: vec![path.to_path_buf()],
    })
}

/// Link file for `A2-90km-A3-70km` behind a launch attenuation.
pub fn two_span_link_file(model: &str, a2: &str, a3: &str) -> LinkFile {
    let fiber = |len: f64, model| {
        ElementSpec::Fiber(FiberElement {
            length_km: len,
            alpha_db_per_km: None,
            aeff_um2: None,
            step_m: None,
            model,
        })
    };
    let edfa = |name: &str, device: &str| {
        ElementSpec::Edfa(EdfaElement {
            name: Some(name.into()),
            model: Some(model.into()),
            device: Some(device.into()),
        })
    };
    LinkFile {
        p_launch_dbm: 18.0,
        fiber_model: FiberModelKind::Srs,
        leff_alpha_factor: 2.0,
        fiber: Default::default(),
        raman: Default::default(),
        elements: vec![
            fiber(90.0, Some(FiberModelKind::Bulk)),
            edfa("A2", a2),
            fiber(90.0, None),
            edfa("A3", a3),
            fiber(70.0, None),
        ],
    }
}

fn demo(
    global: &GlobalOpts,
    samples: usize,
    val_samples: usize,
    profiles: usize,
    max_epochs: usize,
    seed: u64,
) -> Result<Outcome, CliError> {
    let dir = &global.out_dir;
    let mut outcome = Outcome {
        config: json!({ "samples": samples, "val_samples": val_samples, "profiles": profiles, "seed": seed }),
        outputs: vec![],
    };
    outcome.merge("gen_device_a1", gen_device(global, None, Some("A1"), None, &None)?);
    outcome.merge("gen_device_a2", gen_device(global, None, Some("A2"), Some(2), &None)?);
    outcome.merge("gen_device_a3", gen_device(global, None, Some("A3"), Some(3), &None)?);

    let a1 = VirtualEdfaDevice::load(&dir.join("a1.device.json"))?;
    outcome.merge("gen_dataset", gen_dataset(&a1, samples, seed, &dir.join("train.csv"))?);
    let val_seed = derive_seed(seed, 1);
    outcome.merge("gen_dataset_val", gen_dataset(&a1, val_samples, val_seed, &dir.join("val.csv"))?);

    let hp = TrainingConfig {
        max_epochs,
        seed,
        ..Default::default()
    };
    let train = GainDataset::load_csv(&dir.join("train.csv"))?;
    let val = GainDataset::load_csv(&dir.join("val.csv"))?;
    outcome.merge("train", train_model(global, &train, &val, &hp, &dir.join("a1.model.json"))?);

    let link_path = dir.join("two_span.toml");
    let text = toml::to_string(&two_span_link_file("a1.model.json", "a2.device.json", "a3.device.json"))
        .map_err(|e| CliError::Input(format!("cannot encode link config: {e}")))?;
    std::fs::write(&link_path, text).map_err(|e| CliError::Input(format!("cannot write {}: {e}", link_path.display())))?;
    outcome.outputs.push(link_path.clone());

    outcome.merge("optimize", optimize(global, &link_path, None)?);
    let sweep = SweepConfig {
        n_profiles: profiles,
        seed,
        ..Default::default()
    };
    outcome.merge("evaluate", evaluate(global, &link_path, &sweep, None, false)?);
    Ok(outcome)
}
