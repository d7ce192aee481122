//! End-to-end runs of the `phycosf` binary on tiny synthetic data.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use phycosf_core::datasets::{load_cube, load_plane, load_scenes, save_cube, SceneSplit};
use phycosf_core::pipeline::{Checkpoint, TrainConfig, Trainer, BLOB_FILE};
use phycosf_core::{SpectralCube, Tensor};
use serde_json::{json, Value};
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_phycosf");

fn run(args: &[&str], envs: &[(&str, &str)]) -> Output {
    let mut cmd = Command::new(BIN);
    cmd.args(args).env_remove("PHYCOSF_SEED").env("RUST_LOG", "warn");
    for (k, v) in envs {
        cmd.env(k, v);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_json(path: &Path, v: &Value) -> PathBuf {
    std::fs::write(path, serde_json::to_string_pretty(v).unwrap()).unwrap();
    path.to_path_buf()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Six-band grid with 570 nm held out; four 12×12 scenes, three for training.
fn simulate_config() -> Value {
    json!({
        "sensed_wavelengths": [450.0, 530.0, 650.0],
        "synthetic": {
            "scenes": 4, "train": 3, "height": 12, "width": 12,
            "n_blobs": 3, "n_peaks": 2,
            "grid": [450.0, 490.0, 530.0, 570.0, 610.0, 650.0],
            "holdout": [3]
        }
    })
}

fn train_config() -> Value {
    json!({
        "wavelength_pool": [450.0, 490.0, 530.0, 610.0, 650.0],
        "n_sample": 3, "patch": 8, "stages": 2, "channels": 12,
        "state_dim": 4, "freq_count": 4, "embed_dim": 8,
        "epochs": 2, "steps_per_epoch": 2
    })
}

fn simulate(dir: &Path) -> PathBuf {
    let cfg = write_json(&dir.join("sim.json"), &simulate_config());
    let out = dir.join("sim");
    let o = run(&["simulate", "--config", p(&cfg), "--out", p(&out)], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out
}

fn train(dir: &Path, data: &Path, out: &Path, extra: &[&str]) -> Output {
    let cfg = write_json(&dir.join("train.json"), &train_config());
    let mut args = vec!["train", "--config", p(&cfg), "--data", p(data), "--out", p(out)];
    args.extend_from_slice(extra);
    run(&args, &[])
}

/// Relative path → bytes for every file under `root` except manifests.
fn tree(root: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let path = e.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().unwrap() != "manifests.jsonl" {
                out.push((path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn manifests(dir: &Path) -> Vec<Value> {
    std::fs::read_to_string(dir.join("manifests.jsonl"))
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

#[test]
fn simulate_is_byte_identical_across_runs() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(&dir.path().join("sim.json"), &simulate_config());
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = run(&["simulate", "--config", p(&cfg), "--out", p(out)], &[]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    let (ta, tb) = (tree(&a), tree(&b));
    assert!(ta.iter().any(|(f, _)| f.starts_with("measurements")));
    assert_eq!(ta, tb);
    let m = manifests(&a);
    assert_eq!(m.len(), 1);
    assert_eq!(m[0]["command"], "simulate");
    assert_eq!(m[0]["exit_code"], 0);
    assert_eq!(m[0]["input_hash"], manifests(&b)[0]["input_hash"]);
}

#[test]
fn missing_config_key_exits_2_naming_it() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(&dir.path().join("sim.json"), &json!({ "mask_seed": 3 }));
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", p(&cfg), "--out", p(&out)], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("sensed_wavelengths"), "{}", stderr(&o));
    assert_eq!(manifests(&out)[0]["exit_code"], 2);

    let t = write_json(&dir.path().join("t.json"), &json!({ "n_sample": 3 }));
    let o = run(&["train", "--config", p(&t), "--data", p(dir.path()), "--out", p(&out)], &[]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("wavelength_pool"), "{}", stderr(&o));
}

#[test]
fn measurement_width_is_width_plus_max_shift() {
    let dir = TempDir::new().unwrap();
    let grid = [450.0, 500.0, 550.0, 600.0];
    let cfg = write_json(
        &dir.path().join("sim.json"),
        &json!({
            "sensed_wavelengths": grid,
            "synthetic": { "scenes": 2, "train": 1, "height": 8, "width": 8, "grid": grid, "holdout": [] }
        }),
    );
    let out = dir.path().join("out");
    let o = run(&["simulate", "--config", p(&cfg), "--out", p(&out)], &[]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    // Default dispersion is two pixels per band step: max shift 6.
    let y = load_plane(&out.join("measurements").join("scene_00")).unwrap();
    assert_eq!(y.shape(), &[8, 14]);
}

#[test]
fn overrides_and_seed_variable_reach_the_manifest() {
    let dir = TempDir::new().unwrap();
    let cfg = write_json(&dir.path().join("sim.json"), &simulate_config());
    let out = dir.path().join("out");
    let o = run(
        &["simulate", "--config", p(&cfg), "--out", p(&out), "--set", "noise_sigma=0.01"],
        &[("PHYCOSF_SEED", "42")],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let m = &manifests(&out)[0];
    assert_eq!(m["seed"], 42);
    assert_eq!(m["config"]["seed"], 42);
    assert_eq!(m["config"]["noise_sigma"], 0.01);

    let o = run(&["simulate", "--config", p(&cfg), "--out", p(&out)], &[("PHYCOSF_SEED", "x")]);
    assert_eq!(code(&o), 2);
    assert_eq!(manifests(&out).len(), 2, "manifests are appended");
}

#[test]
fn zero_epochs_writes_the_initial_checkpoint() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path());
    let data = sim.join("dataset");
    let out = dir.path().join("train");
    let o = train(dir.path(), &data, &out, &["--set", "epochs=0"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ckpt = Checkpoint::load(&out.join("checkpoint")).unwrap();
    assert_eq!(ckpt.step, 0);
    let split = SceneSplit::load(&data.join("split.json")).unwrap();
    let mut config: TrainConfig = serde_json::from_value(train_config()).unwrap();
    config.epochs = 0;
    let init = Trainer::new(config, load_scenes(&data, &split.train_scenes).unwrap()).unwrap();
    assert_eq!(ckpt, init.checkpoint());
}

#[test]
fn interrupted_and_resumed_training_matches_uninterrupted() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path());
    let data = sim.join("dataset");
    let (whole, split) = (dir.path().join("whole"), dir.path().join("split"));
    assert_eq!(code(&train(dir.path(), &data, &whole, &[])), 0);
    let o = train(dir.path(), &data, &split, &["--stop-after-epochs", "1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert_eq!(Checkpoint::load(&split.join("checkpoint")).unwrap().epoch(), 1);
    let o = train(dir.path(), &data, &split, &["--resume"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for f in [BLOB_FILE, "manifest.json"] {
        let a = std::fs::read(whole.join("checkpoint").join(f)).unwrap();
        let b = std::fs::read(split.join("checkpoint").join(f)).unwrap();
        assert!(a == b, "{f} differs");
    }
    let (la, lb) = (
        std::fs::read_to_string(whole.join("loss.csv")).unwrap(),
        std::fs::read_to_string(split.join("loss.csv")).unwrap(),
    );
    assert_eq!(la, lb);
    assert_eq!(la.lines().count(), 1 + 4);
    let audit: Value = serde_json::from_slice(&std::fs::read(split.join("sampled_wavelengths.json")).unwrap()).unwrap();
    assert_eq!(audit["outside_pool"], json!([]));
    assert_eq!(audit["held_out_seen"], json!([]));
}

#[test]
fn divergence_exits_3_and_keeps_the_last_good_checkpoint() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path());
    let out = dir.path().join("train");
    let o = train(dir.path(), &sim.join("dataset"), &out, &["--set", "lr=1e300", "--set", "lr_min=1e300"]);
    assert_eq!(code(&o), 3, "{}", stderr(&o));
    let ckpt = Checkpoint::load(&out.join("checkpoint")).unwrap();
    assert!(ckpt.params.iter().all(|v| v.is_finite()));
    assert!(stderr(&o).contains("last good checkpoint"));
    assert_eq!(manifests(&out)[0]["exit_code"], 3);
}

/// Simulated data plus a checkpoint trained on it.
fn trained(dir: &Path) -> (PathBuf, PathBuf) {
    let sim = simulate(dir);
    let out = dir.join("train");
    let o = train(dir, &sim.join("dataset"), &out, &["--set", "epochs=1"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    (sim, out.join("checkpoint"))
}

fn render(sim: &Path, ckpt: &Path, out: &Path, queries: &[&str]) -> Output {
    let m = sim.join("measurements").join("scene_03");
    let s = sim.join("sensing.json");
    let mut args = vec!["render", "--checkpoint", p(ckpt), "--measurement", p(&m), "--sensing", p(&s), "--out", p(out)];
    args.extend_from_slice(queries);
    run(&args, &[])
}

#[test]
fn render_contract() {
    let dir = TempDir::new().unwrap();
    let (sim, ckpt) = trained(dir.path());

    let out = dir.path().join("r21");
    let o = render(&sim, &ckpt, &out, &["--range", "450:650:10"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let cube = load_cube(&out.join("cube")).unwrap();
    assert_eq!(cube.bands(), 21);
    assert_eq!((cube.height(), cube.width()), (12, 12));
    assert_eq!(cube.wavelengths()[20], 650.0);

    // Held-out wavelength renders and scores against the oracle slice.
    let held = dir.path().join("held");
    let o = render(&sim, &ckpt, &held, &["--lambdas", "570"]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let ev = dir.path().join("ev");
    let r = sim.join("dataset").join("scenes").join("scene_03");
    let o = run(
        &["eval", "--pred", p(&held.join("cube")), "--reference", p(&r), "--select", "570",
          "--task", "super-resolution", "--out", p(&ev)],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: Value = serde_json::from_slice(&std::fs::read(ev.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["wavelengths"], json!([570.0]));
    assert_eq!(report["task"], "super-resolution");

    for bad in [&["--lambdas", "700"][..], &["--lambdas", "440,500"], &["--lambdas", "500,490"], &["--range", "450:650"]] {
        let o = render(&sim, &ckpt, &dir.path().join("bad"), bad);
        assert_eq!(code(&o), 4, "{bad:?}: {}", stderr(&o));
    }

    // A measurement from a different setup does not fit the sidecar.
    let other = dir.path().join("other");
    let cfg = write_json(
        &dir.path().join("o.json"),
        &json!({ "sensed_wavelengths": [450.0, 650.0], "synthetic": { "scenes": 4, "train": 3, "height": 12, "width": 12 } }),
    );
    assert_eq!(code(&run(&["simulate", "--config", p(&cfg), "--out", p(&other)], &[])), 0);
    let o = run(
        &["render", "--checkpoint", p(&ckpt),
          "--measurement", p(&other.join("measurements").join("scene_03")),
          "--sensing", p(&sim.join("sensing.json")), "--lambdas", "500", "--out", p(&dir.path().join("mm"))],
        &[],
    );
    assert_eq!(code(&o), 5, "{}", stderr(&o));
}

#[test]
fn eval_outputs_and_mismatch() {
    let dir = TempDir::new().unwrap();
    let grid = [450.0, 490.0, 530.0, 570.0, 610.0, 650.0];
    // Bright cubes keep SAM's epsilon negligible.
    let bright = |name: &str, seed: u64| {
        let n = grid.len() * 12 * 12;
        let data = (0..n).map(|k| 0.2 + 0.7 * (((k as u64 * 7919 + seed * 104_729) % 1000) as f64 / 1000.0)).collect();
        let cube = SpectralCube::new(Tensor::new(&[grid.len(), 12, 12], data).unwrap(), grid.to_vec()).unwrap();
        let path = dir.path().join(name);
        save_cube(&cube, &path).unwrap();
        path
    };
    let (a, b) = (bright("scene_00", 1), bright("scene_01", 2));
    let out = dir.path().join("ev");
    let o = run(
        &["eval", "--pred", p(&a), "--reference", p(&a), "--pred", p(&b), "--reference", p(&b), "--out", p(&out)],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let r: Value = serde_json::from_slice(&std::fs::read(out.join("report.json")).unwrap()).unwrap();
    // SAM keeps its epsilon, so identical spectra score a hair above zero.
    assert!(r["average"]["sam"].as_f64().unwrap() < 0.02);
    assert_eq!(r["average"]["ssim"], 1.0);
    assert_eq!(r["average"]["psnr"], 100.0);
    assert_eq!(r["scenes"].as_array().unwrap().len(), 2);
    for f in ["report.md", "psnr_curve.svg", "signature.svg", "heatmaps/scene_00_450nm.pgm"] {
        assert!(out.join(f).exists(), "{f}");
    }

    // Drop one band from the prediction.
    let cube = load_cube(&a).unwrap();
    let short = dir.path().join("short");
    save_cube(&cube.select(&[450.0, 490.0, 530.0, 570.0, 610.0]).unwrap(), &short).unwrap();
    let out = dir.path().join("mm");
    let o = run(&["eval", "--pred", p(&short), "--reference", p(&a), "--out", p(&out)], &[]);
    assert_eq!(code(&o), 5);
    assert!(stderr(&o).contains("650"), "{}", stderr(&o));
    assert_eq!(manifests(&out)[0]["exit_code"], 5);
}

#[test]
fn sweep_writes_one_report_per_combination() {
    let dir = TempDir::new().unwrap();
    let sim = simulate(dir.path());
    let cfg = write_json(&dir.path().join("train.json"), &train_config());
    let out = dir.path().join("sweep");
    let o = run(
        &["sweep", "--config", p(&cfg), "--data", p(&sim.join("dataset")), "--out", p(&out),
          "--variants", "full,no-ssh", "--seeds", "0,1", "--set", "epochs=1", "--set", "steps_per_epoch=1"],
        &[],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    for v in ["full", "no-ssh"] {
        for s in [0, 1] {
            let r: Value = serde_json::from_slice(&std::fs::read(out.join(format!("{v}_seed{s}.json"))).unwrap()).unwrap();
            assert_eq!(r["holdout"]["wavelengths"], json!([570.0]));
        }
    }
    let summary: Value = serde_json::from_slice(&std::fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary.as_array().unwrap().len(), 4);

    let o = run(
        &["sweep", "--config", p(&cfg), "--data", p(&sim.join("dataset")), "--out", p(&out), "--variants", "bogus"],
        &[],
    );
    assert_eq!(code(&o), 2);
}
