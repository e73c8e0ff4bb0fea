use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn wda(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_wda"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = wda(args, cwd);
    assert!(
        out.status.success(),
        "wda {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

/// Data, a source model and a short WGAN adaptation under `dir`.
fn short_pipeline(dir: &Path, seed: &str) {
    ok(&["gen-data", "--out", "data", "--seed", seed], dir);
    ok(&["train-source", "--data", "data", "--out", "src", "--epochs", "2", "--seed", seed], dir);
    ok(
        &[
            "adapt", "--method", "wgan", "--data", "data", "--source-ckpt", "src", "--out", "wgan",
            "--max-epochs", "1", "--steps-per-epoch", "4", "--seed", seed,
        ],
        dir,
    );
}

#[test]
fn default_pipeline_reaches_high_source_accuracy() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["gen-data", "--out", "data", "--seed", "0"], d);
    assert!(d.join("data/manifest.csv").exists());
    assert!(d.join("data/effective_config.toml").exists());
    let train = ok(&["train-source", "--data", "data", "--out", "src", "--seed", "0"], d);
    assert!(train.contains("selected epoch"));
    let eval = ok(&["evaluate", "--data", "data", "--ckpts", "src", "--out", "reports/report.json", "--seed", "0"], d);
    let line = eval.lines().find(|l| l.starts_with("non_adapted:")).expect("non-adapted line");
    let acc: f64 = line
        .split("source accuracy ")
        .nth(1)
        .and_then(|rest| rest.split_whitespace().next())
        .and_then(|v| v.parse().ok())
        .expect("accuracy value");
    assert!(acc >= 0.90, "source accuracy {acc}");
    assert!(d.join("reports/report.json").exists());
    assert!(d.join("reports/effective_config.toml").exists());
}

#[test]
fn adapt_flags_are_echoed_in_the_history_header() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["gen-data", "--out", "data", "--seed", "3"], d);
    ok(&["train-source", "--data", "data", "--out", "src", "--epochs", "1", "--seed", "3"], d);
    ok(
        &[
            "adapt", "--method", "wgan", "--data", "data", "--source-ckpt", "src", "--out", "wgan",
            "--lr", "5e-5", "--batch-size", "16", "--max-epochs", "1", "--steps-per-epoch", "2", "--seed", "3",
        ],
        d,
    );
    let history = fs::read_to_string(d.join("wgan/history.jsonl")).unwrap();
    let header: serde_json::Value = serde_json::from_str(history.lines().next().unwrap()).unwrap();
    assert_eq!(header["method"], "wgan");
    assert_eq!(header["config"]["learning_rate"].as_f64(), Some(5e-5));
    assert_eq!(header["config"]["batch_size"].as_u64(), Some(16));
    for f in ["extractor.ckpt", "classifier.ckpt", "source_extractor.ckpt", "critic.ckpt", "effective_config.toml"] {
        assert!(d.join("wgan").join(f).exists(), "{f} missing");
    }
    let effective = fs::read_to_string(d.join("wgan/effective_config.toml")).unwrap();
    assert!(effective.contains("batch_size = 16"));
}

#[test]
fn same_seed_gives_identical_reports() {
    let runs: Vec<Vec<u8>> = (0..2)
        .map(|_| {
            let tmp = tempfile::tempdir().unwrap();
            let d = tmp.path();
            short_pipeline(d, "5");
            ok(&["evaluate", "--data", "data", "--ckpts", "src", "wgan", "--out", "report.json", "--seed", "5"], d);
            fs::read(d.join("report.json")).unwrap()
        })
        .collect();
    assert!(!runs[0].is_empty());
    assert!(runs[0] == runs[1], "reports differ between identical runs");
}

#[test]
fn divergence_and_plot_write_their_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    short_pipeline(d, "1");
    ok(&["divergence", "--data", "data", "--ckpts", "wgan", "--out", "div.json", "--seed", "1"], d);
    let div: serde_json::Value = serde_json::from_str(&fs::read_to_string(d.join("div.json")).unwrap()).unwrap();
    let summary = &div["summary"];
    for key in ["critic_wasserstein_estimate", "hdh_bound_estimate"] {
        for side in ["before", "after"] {
            assert!(summary[key][side].as_f64().is_some_and(f64::is_finite), "{key}.{side}");
        }
    }
    ok(&["evaluate", "--data", "data", "--ckpts", "src", "wgan", "--out", "report.json", "--seed", "1"], d);
    ok(&["plot", "--report", "report.json", "--out", "figs", "--history", "wgan/history.jsonl"], d);
    for f in ["confusion_non_adapted_target.png", "confusion_adapted_wgan_target.png", "history_0_wgan.png"] {
        let img = image::open(d.join("figs").join(f)).unwrap();
        assert!(img.width() > 0 && img.height() > 0);
    }
}

#[test]
fn config_errors_exit_with_2() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    fs::write(d.join("bad.toml"), "bogus_key = 1\n").unwrap();
    let out = wda(&["gen-data", "--out", "data", "--config", "bad.toml"], d);
    assert_eq!(code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("bogus_key"));

    fs::write(d.join("neg.toml"), "[adapt]\nclip_c = -1.0\n").unwrap();
    assert_eq!(code(&wda(&["gen-data", "--out", "data", "--config", "neg.toml"], d)), 2);

    assert_eq!(code(&wda(&["gen-data", "--out", "data", "--frobnicate"], d)), 2);
    assert!(!d.join("data").exists());
}

#[test]
fn data_errors_exit_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    assert_eq!(code(&wda(&["train-source", "--data", "missing", "--out", "src"], d)), 3);

    ok(&["gen-data", "--out", "data", "--seed", "2"], d);
    let manifest = fs::read_to_string(d.join("data/manifest.csv")).unwrap();
    let first = manifest.lines().nth(1).unwrap();
    let feature = first.split(',').next().unwrap();
    fs::write(d.join("data").join(feature), b"not a feature file").unwrap();
    let out = wda(&["train-source", "--data", "data", "--out", "src"], d);
    assert_eq!(code(&out), 3, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn numeric_failures_exit_with_4() {
    let tmp = tempfile::tempdir().unwrap();
    let d = tmp.path();
    ok(&["gen-data", "--out", "data", "--seed", "4"], d);
    let out = wda(&["train-source", "--data", "data", "--out", "src", "--lr", "1e300", "--epochs", "1"], d);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("not finite"));
}
