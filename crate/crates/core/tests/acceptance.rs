//! Runs every acceptance criterion and prints one PASS/FAIL line each.

mod common;

use std::time::{Duration, Instant};

use rand::Rng;

use wda::adaptation::{critic_loss, gan_discriminator_loss, run_adaptation, AdaptInputs, Method};
use wda::checkpoint::{encode_checkpoint, CheckpointHeader};
use wda::data::{generate_synthetic, UnlabeledSplit};
use wda::divergence::wasserstein1d_exact;
use wda::domain::{LabelVector, ParameterSet};
use wda::evaluation::ModelKind;
use wda::experiment::{run_experiment, run_experiment_observed, ExperimentConfig, ExperimentOutcome};
use wda::gradcheck::DEFAULT_TOLERANCE;
use wda::models::{ClassifierSpec, Models};
use wda::nn::Mode;
use wda::rng::{stream_rng, Stream};
use wda::source_training::{label_loss, train_source};

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];

struct Verdict {
    name: &'static str,
    pass: bool,
    detail: String,
    elapsed: Duration,
}

fn run(name: &'static str, f: impl FnOnce() -> (bool, String)) -> Verdict {
    let t = Instant::now();
    let (pass, detail) = f();
    let v = Verdict {
        name,
        pass,
        detail,
        elapsed: t.elapsed(),
    };
    println!(
        "{} [{}] {} ({:.1}s)",
        if v.pass { "PASS" } else { "FAIL" },
        v.name,
        v.detail,
        v.elapsed.as_secs_f64()
    );
    v
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = v.collect();
    v.iter().sum::<f64>() / v.len() as f64
}

fn default_runs(clip_violations: &mut usize, clip_checks: &mut usize) -> (Vec<ExperimentOutcome>, Duration) {
    let t = Instant::now();
    let runs = SEEDS
        .iter()
        .map(|&seed| {
            let cfg = ExperimentConfig::default().seeded(seed);
            let data = generate_synthetic(&cfg.data).unwrap();
            run_experiment_observed(&cfg, &data, &mut |u| {
                let c = u.clip_c.expect("wgan clips");
                *clip_checks += 1;
                if u.critic_params.iter().any(|(_, p)| p.value.iter().any(|v| !(-c..=c).contains(v))) {
                    *clip_violations += 1;
                }
            })
            .unwrap()
        })
        .collect();
    (runs, t.elapsed())
}

fn gradient_correctness() -> (bool, String) {
    let reports = common::gradient_reports();
    let worst = reports.iter().max_by(|a, b| a.1.max_relative_error.total_cmp(&b.1.max_relative_error)).unwrap();
    let pass = reports.len() == 9 && reports.iter().all(|(_, r)| r.checked > 0 && r.passes(DEFAULT_TOLERANCE));
    (pass, format!("{} losses/modes, worst {:.2e} ({})", reports.len(), worst.1.max_relative_error, worst.0))
}

fn oracle_equivalence() -> (bool, String) {
    let agree = common::oracle_trials(200);
    let mut rng = stream_rng(12, Stream::Data, 0);
    let mut axiom_failures = 0;
    for _ in 0..500 {
        let n = rng.random_range(1..=8);
        let mut draw = || -> Vec<f64> { (0..n).map(|_| rng.random_range(-10.0..10.0)).collect() };
        let (a, b, c) = (draw(), draw(), draw());
        let w = |x: &[f64], y: &[f64]| wasserstein1d_exact(x, y).unwrap();
        let ok = w(&a, &b) >= 0.0 && w(&a, &b) == w(&b, &a) && w(&a, &a) == 0.0 && w(&a, &c) <= w(&a, &b) + w(&b, &c) + 1e-9;
        axiom_failures += usize::from(!ok);
    }
    (agree == 200 && axiom_failures == 0, format!("{agree}/200 brute-force matches, {axiom_failures} axiom failures on 500 triples"))
}

fn closed_forms() -> (bool, String) {
    // all-zero classifier weights give a uniform 10-class posterior
    let mut spec = common::tiny_spec();
    spec.classifier = ClassifierSpec {
        layer_widths: vec![8, 8, 10],
    };
    let wide = Models::new(spec).unwrap();
    let mut zero_h = common::tiny_params(&wide, 0).h;
    zero_h.iter_mut().for_each(|(_, v)| v.value.fill(0.0));
    let x1 = common::random_features(5, 1, 6, 6, 0.0);
    let y1 = LabelVector::from_indices(&[3], 10).unwrap();
    let ce = label_loss(&wide, &zero_h, &common::tiny_params(&wide, 0).m, &x1, &y1, Mode::Eval).unwrap().mean;

    let models = common::tiny_models();
    let p = common::tiny_params(&models, 0);
    let mut zero_hd = p.hd.clone();
    zero_hd.iter_mut().for_each(|(_, v)| v.value.fill(0.0));
    let xs = common::random_features(0, 8, 6, 6, 0.0);
    let xt = common::random_features(1, 8, 6, 6, 0.8);
    let d = gan_discriminator_loss(&models, &zero_hd, &p.m, &p.m, &xs, &xt, Mode::Eval).unwrap();
    let w = critic_loss(&models, &p.hd, &p.m, &p.m.clone(), &xs, &xs, Mode::Eval).unwrap();

    let e = [(ce - 10f64.ln()).abs(), (d - 2.0 * 2f64.ln()).abs(), w.abs()];
    (e.iter().all(|&v| v <= 1e-6), format!("CE {ce:.6}, GAN disc {d:.6}, WGAN critic {w:.1e}"))
}

fn end_to_end(runs: &[ExperimentOutcome], elapsed: Duration) -> (bool, String) {
    let acc = |o: &ExperimentOutcome, k: ModelKind| {
        let r = o.report.model(k).unwrap();
        (r.source.micro_accuracy, r.target.micro_accuracy)
    };
    let non: Vec<_> = runs.iter().map(|o| acc(o, ModelKind::NonAdapted)).collect();
    let wgan: Vec<_> = runs.iter().map(|o| acc(o, ModelKind::AdaptedWgan)).collect();
    let gan: Vec<_> = runs.iter().map(|o| acc(o, ModelKind::AdaptedGan)).collect();
    let min_src = non.iter().map(|a| a.0).fold(1.0, f64::min);
    let max_tgt = non.iter().map(|a| a.1).fold(0.0, f64::max);
    let gain = mean(wgan.iter().zip(&non).map(|(w, n)| w.1 - n.1));
    let src_drop = mean(wgan.iter().zip(&non).map(|(w, n)| n.0 - w.0));
    let wgan_t = mean(wgan.iter().map(|a| a.1));
    let gan_t = mean(gan.iter().map(|a| a.1));
    let pass = min_src >= 0.90 && max_tgt <= 0.60 && gain >= 0.10 && src_drop <= 0.03 && wgan_t >= gan_t && elapsed < Duration::from_secs(300);
    (
        pass,
        format!(
            "non-adapted src min {min_src:.3} tgt max {max_tgt:.3}; WGAN gain {gain:+.3} src drop {src_drop:+.3}; \
             target WGAN {wgan_t:.3} vs GAN {gan_t:.3}; pipeline {:.0}s",
            elapsed.as_secs_f64()
        ),
    )
}

fn divergence_behaviour(runs: &[ExperimentOutcome]) -> (bool, String) {
    let block = |o: &ExperimentOutcome| o.report.divergence.iter().find(|b| b.model == ModelKind::AdaptedWgan).unwrap().clone();
    let hdh_before = mean(runs.iter().map(|o| block(o).hdh_bound_estimate.before));
    let hdh_after = mean(runs.iter().map(|o| block(o).hdh_bound_estimate.after));
    let w_before = mean(runs.iter().map(|o| block(o).critic_wasserstein_estimate.before));
    let w_after = mean(runs.iter().map(|o| block(o).critic_wasserstein_estimate.after));
    let (est, exact) = common::one_dimensional_sweep();
    let rho = common::spearman(&est, &exact);
    (
        hdh_after < hdh_before && w_after < w_before && rho >= 0.9,
        format!("H-div {hdh_before:.3} -> {hdh_after:.3}, critic {w_before:.3} -> {w_after:.3}, sweep Spearman {rho:.3}"),
    )
}

/// Compile-time: adaptation only ever sees the label-free target type.
fn target_field<'a>(i: &AdaptInputs<'a>) -> &'a UnlabeledSplit {
    i.target
}

fn checkpoint_bytes(role: &str, p: &ParameterSet) -> Vec<u8> {
    let h = CheckpointHeader {
        role: role.into(),
        method: None,
        spec: serde_json::Value::Null,
    };
    encode_checkpoint(&h, p).unwrap()
}

fn frozen_contract() -> (bool, String) {
    let cfg = ExperimentConfig::default().seeded(0);
    let data = generate_synthetic(&cfg.data).unwrap();
    let models = Models::new(cfg.model_spec(data.num_classes())).unwrap();
    let src = train_source(&models, &data.source.train, &data.source.valid, &cfg.source).unwrap();
    let before = (
        checkpoint_bytes("extractor", &src.extractor_params),
        checkpoint_bytes("classifier", &src.classifier_params),
    );
    let target = data.target.train.unlabeled();
    let inputs = AdaptInputs {
        models: &models,
        ms_params: &src.extractor_params,
        h_star_params: &src.classifier_params,
        source: &data.source.train,
        target: &target,
    };
    assert_eq!(target_field(&inputs).len(), target.len());
    let mut adapt = cfg.adapt.clone();
    adapt.max_epochs = 3;
    let mut same = true;
    for method in [Method::Wgan, Method::Gan] {
        run_adaptation(method, inputs, &adapt, &mut |_| {}).unwrap();
        same &= checkpoint_bytes("extractor", &src.extractor_params) == before.0;
        same &= checkpoint_bytes("classifier", &src.classifier_params) == before.1;
    }
    (same, format!("M_S {} bytes and h* {} bytes unchanged after both arms; target type carries no labels", before.0.len(), before.1.len()))
}

fn reproducibility(first: &ExperimentOutcome) -> (bool, String) {
    let cfg = ExperimentConfig::default().seeded(SEEDS[0]);
    let data = generate_synthetic(&cfg.data).unwrap();
    let again = run_experiment(&cfg, &data).unwrap();
    let (a, b) = (first.report.to_json().unwrap(), again.report.to_json().unwrap());
    (a == b, format!("seed {} report JSON {} bytes, identical: {}", SEEDS[0], a.len(), a == b))
}

fn main() {
    let mut verdicts = Vec::new();
    verdicts.push(run("2 gradient correctness", gradient_correctness));
    verdicts.push(run("3 oracle equivalence", oracle_equivalence));
    verdicts.push(run("4 closed-form losses", closed_forms));

    let (mut violations, mut checks) = (0, 0);
    let (runs, elapsed) = default_runs(&mut violations, &mut checks);
    verdicts.push(run("1 clipping invariant", || {
        (checks > 0 && violations == 0, format!("{checks} critic updates over {} seeds, {violations} out of range", SEEDS.len()))
    }));
    verdicts.push(run("5 end-to-end direction", || end_to_end(&runs, elapsed)));
    verdicts.push(run("6 divergence behaviour", || divergence_behaviour(&runs)));
    verdicts.push(run("7 frozen-model contract", frozen_contract));
    verdicts.push(run("8 reproducibility", || reproducibility(&runs[0])));

    verdicts.sort_by_key(|v| v.name);
    let failed: Vec<_> = verdicts.iter().filter(|v| !v.pass).map(|v| v.name).collect();
    println!("acceptance: {}/{} criteria passed", verdicts.len() - failed.len(), verdicts.len());
    if !failed.is_empty() {
        eprintln!("failed: {failed:?}");
        std::process::exit(1);
    }
}
