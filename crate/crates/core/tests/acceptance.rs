//! End-to-end acceptance run. Criteria execute one after another (timing
//! checks must not share the CPU) and each prints a single PASS/FAIL line.

use std::sync::Arc;
use std::time::{Duration, Instant};

use wdm_cascade::autodiff::Tape;
use wdm_cascade::cascade::{predict_output, predict_output_tape, three_span_link, two_span_link, EdfaStage, LinkConfig};
use wdm_cascade::edfa::{dataset_mse, generate_training_set, train_edfa_model, EdfaMlp, TrainingConfig, VirtualEdfaDevice};
use wdm_cascade::eval::{run_baseline_comparison, run_channel_mse, run_power_sweep, with_workers, SweepConfig};
use wdm_cascade::fiber::{propagate_bulk, propagate_srs, srs_step, FiberModelKind, FiberSpan, RamanGainModel};
use wdm_cascade::grid::{FrequencyGrid, PowerProfile, PowerUnit, FLOOR_DBM, N_CHANNELS};
use wdm_cascade::optimize::{
    cost_and_gradient, cost_min_flatness, cost_tape, optimize_input, CostKind, OptimizationConfig,
};
use wdm_cascade::profiles::{derive_seed, generate_batch};
use wdm_cascade::Result;

const SEED: u64 = 0;
const TRAIN_SAMPLES: usize = 20_000;
const HELDOUT_SAMPLES: usize = 2_000;

struct Verdict {
    pass: bool,
    detail: String,
}

impl Verdict {
    fn new(pass: bool, detail: impl Into<String>) -> Self {
        Self { pass, detail: detail.into() }
    }
}

struct Devices {
    a1: VirtualEdfaDevice,
    a2: VirtualEdfaDevice,
    a3: VirtualEdfaDevice,
}

impl Devices {
    fn new() -> Self {
        let a1 = VirtualEdfaDevice::default();
        Self {
            a2: a1.perturbed("A2", 2),
            a3: a1.perturbed("A3", 3),
            a1,
        }
    }
}

struct Fixture {
    devices: Devices,
    model: Arc<EdfaMlp>,
    train_time: Duration,
}

impl Fixture {
    fn stage(&self, device: &VirtualEdfaDevice) -> EdfaStage {
        EdfaStage::new(device.id.clone())
            .with_model(self.model.clone())
            .with_device(device.clone())
    }

    fn two_span(&self, p_launch_dbm: f64) -> LinkConfig {
        two_span_link(self.stage(&self.devices.a2), self.stage(&self.devices.a3), p_launch_dbm).unwrap()
    }

    fn three_span(&self, p_launch_dbm: f64) -> LinkConfig {
        three_span_link(
            self.stage(&self.devices.a1),
            self.stage(&self.devices.a2),
            self.stage(&self.devices.a3),
            p_launch_dbm,
        )
        .unwrap()
    }
}

fn train_fixture() -> Result<Fixture> {
    let devices = Devices::new();
    let start = Instant::now();
    let train = generate_training_set(&devices.a1, TRAIN_SAMPLES, SEED)?;
    let val = generate_training_set(&devices.a1, HELDOUT_SAMPLES, derive_seed(SEED, 1))?;
    let (model, _) = train_edfa_model(&train, &val, &TrainingConfig::default())?;
    Ok(Fixture {
        devices,
        model: Arc::new(model),
        train_time: start.elapsed(),
    })
}

fn gradient_correctness(fx: &Fixture) -> Result<Verdict> {
    let start = Instant::now();
    let link = fx.two_span(18.0);
    let cfg = OptimizationConfig::default();
    let h = 1e-4;
    let cost = |x: &[f64]| -> Result<f64> { cost_min_flatness(&predict_output(&link, &PowerProfile::from_dbm(x.to_vec())?)?) };
    // Which side of every max/min/relu the forward pass took; a central
    // difference straddling a change of branch is not a valid oracle.
    let branches = |x: &[f64]| -> Result<u64> {
        let mut tape = Tape::new();
        let v = tape.input(x.to_vec());
        let y = predict_output_tape(&mut tape, &link, v)?;
        cost_tape(&mut tape, y, CostKind::MinFlatness, None, None);
        Ok(tape.branch_signature())
    };
    let (mut checked, mut kinks, mut worst, mut worst_grad) = (0usize, 0usize, 0.0f64, 0.0f64);
    // Coordinates over tolerance, and how many of those sit below the
    // resolution of a double-precision central difference of this cost.
    let (mut over, mut unresolvable) = (0usize, 0usize);
    for g in generate_batch(20, (0.0, 15.0), 77)? {
        let x = g.profile.values().to_vec();
        let (_, grad) = cost_and_gradient(&link, &x, &cfg)?;
        let here = branches(&x)?;
        for k in 0..N_CHANNELS {
            if grad[k].abs() <= 1e-8 {
                continue;
            }
            let mut up = x.clone();
            up[k] += h;
            let mut down = x.clone();
            down[k] -= h;
            let fd = (cost(&up)? - cost(&down)?) / (2.0 * h);
            let rel = (fd - grad[k]).abs() / grad[k].abs();
            if rel >= 1e-5 && (branches(&up)? != here || branches(&down)? != here) {
                kinks += 1;
                continue;
            }
            checked += 1;
            if rel >= 1e-5 {
                over += 1;
                let resolution = 2.0 * f64::EPSILON * cost(&x)?.abs() / (2.0 * h);
                if resolution / grad[k].abs() >= 1e-5 {
                    unresolvable += 1;
                }
            }
            if rel > worst {
                worst = rel;
                worst_grad = grad[k].abs();
            }
        }
    }
    let elapsed = start.elapsed();
    Ok(Verdict::new(
        worst < 1e-5 && elapsed < Duration::from_secs(120) && checked > 0,
        format!(
            "{checked} coordinates, worst relative error {worst:.2e} (< 1e-5) at |grad| {worst_grad:.1e}, \
             {over} over tolerance ({unresolvable} below f64 difference resolution), {kinks} straddle a kink, {:.1} s (< 120 s)",
            elapsed.as_secs_f64()
        ),
    ))
}

fn surrogate_quality(fx: &Fixture) -> Result<Verdict> {
    let d = &fx.devices;
    let sets = [
        ("A1", generate_training_set(&d.a1, HELDOUT_SAMPLES, derive_seed(SEED, 1))?),
        ("A2", generate_training_set(&d.a2, HELDOUT_SAMPLES, derive_seed(SEED, 2))?),
        ("A3", generate_training_set(&d.a3, HELDOUT_SAMPLES, derive_seed(SEED, 3))?),
    ];
    let mut pass = fx.train_time < Duration::from_secs(30 * 60);
    let mut parts = Vec::new();
    for (id, ds) in &sets {
        let mse = dataset_mse(&fx.model, ds);
        pass &= mse < 0.06;
        parts.push(format!("{id} {mse:.4}"));
    }
    Ok(Verdict::new(
        pass,
        format!(
            "held-out MSE dB² {} (< 0.06), training {:.0} s (< 1800 s)",
            parts.join(", "),
            fx.train_time.as_secs_f64()
        ),
    ))
}

fn cascade_prediction(fx: &Fixture) -> Result<Verdict> {
    let n = 200;
    let three = run_channel_mse(&fx.three_span(18.0), 18.0, FiberModelKind::Srs, n, SEED)?.mean();
    let two = run_channel_mse(&fx.two_span(18.0), 18.0, FiberModelKind::Srs, n, SEED)?.mean();
    Ok(Verdict::new(
        three < 0.6 && two <= three,
        format!("{n} profiles at 18 dBm: 3-span MSE {three:.4} dB² (< 0.6), 2-span {two:.4} dB² (≤ 3-span)"),
    ))
}

fn fiber_model_gap(fx: &Fixture) -> Result<Verdict> {
    let cfg = SweepConfig {
        powers_dbm: vec![12.0, 21.0],
        n_profiles: 200,
        seed: SEED,
        ..SweepConfig::default()
    };
    let report = run_power_sweep(&fx.two_span(18.0), &cfg)?;
    let bulk12 = report.mean_mse(12.0, FiberModelKind::Bulk).unwrap();
    let bulk21 = report.mean_mse(21.0, FiberModelKind::Bulk).unwrap();
    let srs21 = report.mean_mse(21.0, FiberModelKind::Srs).unwrap();
    Ok(Verdict::new(
        bulk21 > bulk12 && bulk21 > srs21,
        format!("bulk MSE {bulk12:.4} at 12 dBm, {bulk21:.4} at 21 dBm; SRS {srs21:.4} at 21 dBm (dB²)"),
    ))
}

fn optimization_flatness(fx: &Fixture) -> Result<Verdict> {
    let cfg = OptimizationConfig {
        max_iters: 500,
        ..OptimizationConfig::default()
    };
    let res = optimize_input(&fx.two_span(18.0), &cfg)?;
    let excursion = res.output.excursion_db()?;
    let monotone = res.trace.windows(2).all(|w| w[1] <= w[0]);
    Ok(Verdict::new(
        excursion <= 0.5 && monotone && res.iterations <= 500,
        format!(
            "simulated output excursion {excursion:.3} dB (≤ 0.5) after {} iterations, trace monotone: {monotone}",
            res.iterations
        ),
    ))
}

fn baseline_ordering(fx: &Fixture) -> Result<Verdict> {
    let srs = fx.two_span(18.0);
    let bulk = srs.with_fiber_kind(FiberModelKind::Bulk);
    let report = run_baseline_comparison(&srs, &bulk, 18.0, &OptimizationConfig::default(), SEED)?;
    let ex = |name| report.get(name).unwrap().excursion_db;
    let (s, b, n, f) = (ex("SRSopt"), ex("BLopt"), ex("naive"), ex("flat"));
    let naive_slope = report.get("naive").unwrap().slope_db_per_thz;
    let flat_slope = report.get("flat").unwrap().slope_db_per_thz;
    let ordered = s <= b && b <= n && n <= f;
    let opposite = naive_slope * flat_slope < 0.0;
    Ok(Verdict::new(
        ordered && opposite,
        format!(
            "ground-truth excursion dB: SRSopt {s:.3}, BLopt {b:.3}, naive {n:.3}, flat {f:.3} (ordered: {ordered}); \
             slope dB/THz naive {naive_slope:+.3} vs flat {flat_slope:+.3}"
        ),
    ))
}

fn srs_physics() -> Result<Verdict> {
    let grid = FrequencyGrid::c_band();
    let raman = RamanGainModel::default();

    // Channels other than the pair sit low enough that exp() underflows to 0.
    let span = FiberSpan::new(1.0)?;
    let level = (0.01f64).ln();
    let mut lw = vec![-800.0; N_CHANNELS];
    lw[0] = level;
    lw[82] = level;
    let before = PowerProfile::new(grid, lw, PowerUnit::LogWatts)?;
    let after = srs_step(&before, &span, &raman)?;
    let loss = span.alpha_np_per_m() * span.step_m;
    let d_low = after.values()[0] - level + loss;
    let d_high = after.values()[82] - level + loss;
    let exchange = (d_low + d_high).abs() <= 8.0 * f64::EPSILON * level.abs() && d_low > 0.0;

    let span = FiberSpan::new(100.0)?;
    let mut single = vec![FLOOR_DBM; N_CHANNELS];
    single[0] = 18.0;
    let single = PowerProfile::from_dbm(single)?;
    let lone = (propagate_srs(&single, &span, &raman)?.values()[0] - propagate_bulk(&single, &span)?.values()[0]).abs();

    let fine = FiberSpan { step_m: 50.0, ..span };
    let mut halving = 0.0f64;
    for g in generate_batch(20, (0.0, 15.0), 5)? {
        let p = g.profile.with_total_dbm(21.0)?;
        let a = propagate_srs(&p, &span, &raman)?;
        let b = propagate_srs(&p, &fine, &raman)?;
        for (x, y) in a.values().iter().zip(b.values()) {
            halving = halving.max((x - y).abs());
        }
    }
    Ok(Verdict::new(
        exchange && lone < 1e-6 && halving < 0.01,
        format!(
            "pair increments {d_low:.3e}/{d_high:.3e} nat (sum {:.1e}), single channel vs bulk {lone:.1e} dB (< 1e-6), \
             step halving at 21 dBm {halving:.2e} dB (< 0.01)",
            d_low + d_high
        ),
    ))
}

fn performance(fx: &Fixture) -> Result<Verdict> {
    let link = fx.three_span(21.0);
    let input = generate_batch(1, (0.0, 15.0), 9)?.remove(0).profile;
    let start = Instant::now();
    predict_output(&link, &input)?;
    let forward = start.elapsed();
    let start = Instant::now();
    cost_and_gradient(&link, input.values(), &OptimizationConfig::default())?;
    let both = start.elapsed();
    Ok(Verdict::new(
        forward < Duration::from_secs(1) && both < Duration::from_secs(5),
        format!(
            "3-span 300 km at 100 m steps: forward {:.3} s (< 1), forward+backward {:.3} s (< 5)",
            forward.as_secs_f64(),
            both.as_secs_f64()
        ),
    ))
}

/// Every artifact of the seeded pipelines, serialized.
fn pipeline_bytes(fx: &Fixture) -> Result<Vec<Vec<u8>>> {
    let mut out = Vec::new();
    let ds = generate_training_set(&fx.devices.a1, 1_000, 11)?;
    let mut buf = Vec::new();
    ds.write_csv(&mut buf)?;
    out.push(buf);

    let cfg = TrainingConfig {
        max_epochs: 3,
        seed: 4,
        ..TrainingConfig::default()
    };
    let val = generate_training_set(&fx.devices.a1, 200, 12)?;
    let (model, _) = train_edfa_model(&ds, &val, &cfg)?;
    out.push(model.to_json().into_bytes());

    let link = fx.two_span(18.0);
    let res = optimize_input(&link, &OptimizationConfig { max_iters: 50, ..OptimizationConfig::default() })?;
    let mut buf = Vec::new();
    res.input.write_csv(&mut buf)?;
    res.write_trace_csv(&mut buf)?;
    out.push(buf);

    let sweep = SweepConfig {
        powers_dbm: vec![12.0, 18.0],
        n_profiles: 20,
        seed: 3,
        ..SweepConfig::default()
    };
    let mut buf = Vec::new();
    run_power_sweep(&link, &sweep)?.write_csv(&mut buf)?;
    out.push(buf);
    Ok(out)
}

fn determinism(fx: &Fixture) -> Result<Verdict> {
    let runs = [
        with_workers(Some(1), || pipeline_bytes(fx))??,
        with_workers(Some(1), || pipeline_bytes(fx))??,
        with_workers(Some(4), || pipeline_bytes(fx))??,
    ];
    let names = ["dataset", "training", "optimization", "sweep"];
    let differing: Vec<&str> = names
        .iter()
        .enumerate()
        .filter(|(i, _)| runs.iter().any(|r| r[*i] != runs[0][*i]))
        .map(|(_, n)| *n)
        .collect();
    Ok(Verdict::new(
        differing.is_empty(),
        if differing.is_empty() {
            "dataset, training, optimization and sweep byte-identical over 2 runs and 1 vs 4 workers".to_string()
        } else {
            format!("outputs differ for: {}", differing.join(", "))
        },
    ))
}

fn report(index: usize, name: &str, outcome: Result<Verdict>) -> bool {
    let (pass, detail) = match outcome {
        Ok(v) => (v.pass, v.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    println!("criterion {index} {name}: {} | {detail}", if pass { "PASS" } else { "FAIL" });
    pass
}

fn main() {
    // Answer libtest's discovery probe without running anything.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let fixture = match train_fixture() {
        Ok(f) => f,
        Err(e) => {
            println!("training the A1 surrogate failed: {e}");
            std::process::exit(1);
        }
    };
    let results = [
        report(1, "gradient correctness", gradient_correctness(&fixture)),
        report(2, "surrogate quality", surrogate_quality(&fixture)),
        report(3, "cascade prediction", cascade_prediction(&fixture)),
        report(4, "fiber-model gap", fiber_model_gap(&fixture)),
        report(5, "optimization flatness", optimization_flatness(&fixture)),
        report(6, "baseline ordering", baseline_ordering(&fixture)),
        report(7, "SRS physics", srs_physics()),
        report(8, "performance budget", performance(&fixture)),
        report(9, "determinism", determinism(&fixture)),
    ];
    let failed: Vec<String> = results
        .iter()
        .enumerate()
        .filter(|(_, ok)| !**ok)
        .map(|(i, _)| (i + 1).to_string())
        .collect();
    if failed.is_empty() {
        println!("acceptance: all 9 criteria pass");
    } else {
        println!("acceptance: failing criteria {}", failed.join(", "));
        std::process::exit(1);
    }
}
