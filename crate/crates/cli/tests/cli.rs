use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::Instant;

use wdm_cascade::edfa::{EdfaMlp, VirtualEdfaDevice};
use wdm_cascade::grid::{FrequencyGrid, PowerProfile};

fn wdm(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wdmcascade"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn read(p: impl AsRef<Path>) -> String {
    std::fs::read_to_string(p.as_ref()).unwrap_or_else(|e| panic!("{}: {e}", p.as_ref().display()))
}

/// Untrained surrogate plus the three virtual devices, and a two-span link
/// file referring to them.
fn two_span_setup(dir: &Path) -> PathBuf {
    EdfaMlp::xavier(3).save(&dir.join("m.json")).unwrap();
    let a1 = VirtualEdfaDevice::default();
    a1.perturbed("A2", 2).save(&dir.join("a2.json")).unwrap();
    a1.perturbed("A3", 3).save(&dir.join("a3.json")).unwrap();
    let link = dir.join("link.toml");
    std::fs::write(
        &link,
        r#"
p_launch_dbm = 18.0
elements = [
  { fiber = { length_km = 90, model = "bulk" } },
  { edfa = { name = "A2", model = "m.json", device = "a2.json" } },
  { fiber = { length_km = 90 } },
  { edfa = { name = "A3", model = "m.json", device = "a3.json" } },
  { fiber = { length_km = 70 } },
]
"#,
    )
    .unwrap();
    link
}

fn write_flat_profile(path: &Path) {
    PowerProfile::flat(FrequencyGrid::c_band(), 0.0).save_csv(path).unwrap();
}

#[test]
fn gen_device_defaults_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    ok(&wdm(dir.path(), &["gen-device", "--out-dir", "out"]));
    let dev = VirtualEdfaDevice::load(&dir.path().join("out/a1.device.json")).unwrap();
    assert_eq!(dev.g_ref, 28.0);
    let manifest: serde_json::Value = serde_json::from_str(&read(dir.path().join("out/manifest-gen-device.json"))).unwrap();
    assert_eq!(manifest["command"], "gen-device");
    assert_eq!(manifest["outputs"][0], "a1.device.json");
    assert_eq!(manifest["config"]["device"]["g_ref"], 28.0);
}

#[test]
fn perturbed_device_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&wdm(dir.path(), &["gen-device", "--id", "A2", "--perturb-seed", "2", "--out-dir", out]));
    }
    let a = read(dir.path().join("a/a2.device.json"));
    assert_eq!(a, read(dir.path().join("b/a2.device.json")));
    assert_ne!(VirtualEdfaDevice::load(&dir.path().join("a/a2.device.json")).unwrap().tilt_coeff, 0.30);
}

#[test]
fn invalid_device_field_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("p.toml"), "noise_sigma = -1.0\n").unwrap();
    let out = wdm(dir.path(), &["gen-device", "--params", "p.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("noise_sigma"), "{}", stderr(&out));

    std::fs::write(dir.path().join("q.toml"), "g_reff = 20.0\n").unwrap();
    let out = wdm(dir.path(), &["gen-device", "--params", "q.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("g_reff"), "{}", stderr(&out));
}

#[test]
fn smoke_training_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&wdm(d, &["gen-device"]));
    ok(&wdm(d, &["gen-dataset", "--device", "a1.device.json", "--samples", "100", "--seed", "4"]));
    std::fs::write(d.join("hp.toml"), "max_epochs = 5\n").unwrap();
    let start = Instant::now();
    for name in ["m1.json", "m2.json"] {
        let out = wdm(d, &["train", "--dataset", "dataset.csv", "--hyper", "hp.toml", "--seed", "1", "--out", name]);
        ok(&out);
        assert!(String::from_utf8_lossy(&out.stdout).contains("dB²"));
    }
    assert!(start.elapsed().as_secs() < 60);
    assert_eq!(read(d.join("m1.json")), read(d.join("m2.json")));
    assert!(d.join("m1.history.csv").exists());
}

#[test]
fn missing_dataset_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = wdm(dir.path(), &["train", "--dataset", "nope.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("nope.csv"));
}

#[test]
fn diverging_training_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&wdm(d, &["gen-device"]));
    ok(&wdm(d, &["gen-dataset", "--device", "a1.device.json", "--samples", "64"]));
    std::fs::write(d.join("hp.toml"), "learning_rate = 1e300\nmax_epochs = 3\n").unwrap();
    let out = wdm(d, &["train", "--dataset", "dataset.csv", "--hyper", "hp.toml"]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
}

#[test]
fn simulate_bulk_single_span() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("link.toml"), "p_launch_dbm = 18.0\nelements = [ { fiber = { length_km = 100 } } ]\n").unwrap();
    write_flat_profile(&d.join("flat.csv"));
    ok(&wdm(d, &["simulate", "--link", "link.toml", "--profile", "flat.csv", "--model", "bulk"]));
    let out = PowerProfile::load_csv(&d.join("output.csv"), FrequencyGrid::c_band()).unwrap();
    assert!((out.total_power_dbm().unwrap() - (18.0 - 20.0)).abs() < 1e-9);
    assert!(out.excursion_db().unwrap() < 1e-9);

    ok(&wdm(d, &["simulate", "--link", "link.toml", "--profile", "flat.csv", "--out", "srs.csv"]));
    let srs = PowerProfile::load_csv(&d.join("srs.csv"), FrequencyGrid::c_band()).unwrap();
    assert!(srs.excursion_db().unwrap() > 0.1);
}

#[test]
fn simulate_three_span_is_fast() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    EdfaMlp::xavier(1).save(&d.join("m.json")).unwrap();
    std::fs::write(
        d.join("link.toml"),
        r#"
p_launch_dbm = 21.0
elements = [
  { fiber = { length_km = 100 } }, { edfa = { model = "m.json" } },
  { fiber = { length_km = 100 } }, { edfa = { model = "m.json" } },
  { fiber = { length_km = 100 } },
]
"#,
    )
    .unwrap();
    write_flat_profile(&d.join("flat.csv"));
    let start = Instant::now();
    ok(&wdm(d, &["simulate", "--link", "link.toml", "--profile", "flat.csv"]));
    let t = start.elapsed();
    assert!(t.as_secs_f64() < 1.0, "{t:?}");
}

#[test]
fn malformed_profile_names_line() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    std::fs::write(d.join("link.toml"), "p_launch_dbm = 18.0\nelements = [ { fiber = { length_km = 10 } } ]\n").unwrap();
    write_flat_profile(&d.join("flat.csv"));
    let mut text = read(d.join("flat.csv"));
    text = text.replacen("191.6000,0", "191.6000,abc", 1);
    std::fs::write(d.join("bad.csv"), text).unwrap();
    let out = wdm(d, &["simulate", "--link", "link.toml", "--profile", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("line 4"), "{}", stderr(&out));
}

#[test]
fn bad_flag_values_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = wdm(dir.path(), &["gen-profiles", "--leff-alpha-factor", "3"]);
    assert_eq!(out.status.code(), Some(2));
    let out = wdm(dir.path(), &["gen-profiles", "--model", "raman"]);
    assert_eq!(out.status.code(), Some(2));
}

fn trace(path: &Path) -> Vec<f64> {
    read(path).lines().skip(1).map(|l| l.split(',').nth(1).unwrap().parse().unwrap()).collect()
}

#[test]
fn optimize_two_span_link() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    two_span_setup(d);
    std::fs::write(d.join("opt.toml"), "max_iters = 60\n").unwrap();
    ok(&wdm(d, &["optimize", "--link", "link.toml", "--opt-config", "opt.toml", "--out-dir", "o"]));
    let t = trace(&d.join("o/trace.csv"));
    assert!(t.len() > 1 && t.windows(2).all(|w| w[1] <= w[0]));
    assert!(t.last().unwrap() < &t[0]);
    assert!(d.join("o/optimized_truth_output.csv").exists());

    std::fs::write(d.join("one.toml"), "max_iters = 1\n").unwrap();
    ok(&wdm(d, &["optimize", "--link", "link.toml", "--opt-config", "one.toml", "--out-dir", "p"]));
    assert_eq!(trace(&d.join("p/trace.csv")).len(), 2);

    std::fs::write(d.join("tight.toml"), "max_iters = 5\nexcursion_bound = 0.01\n").unwrap();
    ok(&wdm(d, &["optimize", "--link", "link.toml", "--opt-config", "tight.toml", "--out-dir", "q"]));
    let p = PowerProfile::load_csv(&d.join("q/optimized_input.csv"), FrequencyGrid::c_band()).unwrap();
    assert!(p.excursion_db().unwrap() <= 0.01 + 1e-9);
}

#[test]
fn evaluate_smoke_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    two_span_setup(d);
    std::fs::write(d.join("sweep.toml"), "n_profiles = 10\npowers_dbm = [12.0, 18.0, 21.0]\nseed = 3\n").unwrap();
    std::fs::write(d.join("opt.toml"), "max_iters = 10\n").unwrap();
    let args = |out: &'static str, workers: &'static str| {
        vec![
            "evaluate", "--link", "link.toml", "--sweep-config", "sweep.toml", "--opt-config", "opt.toml",
            "--out-dir", out, "--workers", workers,
        ]
    };
    ok(&wdm(d, &args("a", "1")));
    ok(&wdm(d, &args("b", "4")));
    assert_eq!(read(d.join("a/sweep.csv")).lines().count(), 1 + 3 * 2);
    assert_eq!(read(d.join("a/channel_mse.csv")).lines().count(), 1 + 83);
    assert_eq!(read(d.join("a/baselines.csv")).lines().count(), 1 + 4);
    for f in [
        "sweep.csv",
        "channel_mse.csv",
        "baselines.csv",
        "baseline_SRSopt_input.csv",
        "baseline_naive_output.csv",
    ] {
        assert_eq!(read(d.join("a").join(f)), read(d.join("b").join(f)), "{f}");
    }
}

#[test]
fn evaluate_without_model_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    VirtualEdfaDevice::default().save(&d.join("a2.json")).unwrap();
    std::fs::write(
        d.join("link.toml"),
        "p_launch_dbm = 18.0\nelements = [ { fiber = { length_km = 90 } }, { edfa = { device = \"a2.json\" } } ]\n",
    )
    .unwrap();
    std::fs::write(d.join("sweep.toml"), "n_profiles = 2\n").unwrap();
    let out = wdm(d, &["evaluate", "--link", "link.toml", "--sweep-config", "sweep.toml"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(stderr(&out).contains("A1"), "{}", stderr(&out));
}

#[test]
fn replay_regenerates_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&wdm(d, &["gen-profiles", "--count", "7", "--seed", "11", "--out-dir", "first"]));
    ok(&wdm(d, &["replay", "first/manifest-gen-profiles.json", "--out-dir", "second"]));
    let a = read(d.join("first/profiles.csv"));
    assert_eq!(a.lines().count(), 8);
    assert_eq!(a, read(d.join("second/profiles.csv")));
}
