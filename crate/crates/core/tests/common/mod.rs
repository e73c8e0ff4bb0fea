#![allow(dead_code)]

use ndarray::{Array2, Array4};
use rand::Rng;
use rand_distr::StandardNormal;

use wda::adaptation::{CriticObjective, GeneratorObjective, LabeledBatch, Method};
use wda::data::{generate_synthetic, Dataset, ShiftConfig};
use wda::divergence::{critic_wasserstein_estimate, wasserstein1d_exact, DivergenceConfig};
use wda::domain::{FeatureTensor, LabelVector, LatentRep, ParameterSet};
use wda::gradcheck::{check_gradient, GradCheckReport, DEFAULT_STEP};
use wda::models::{ClassifierSpec, ConvLayerSpec, Critic, CriticSpec, FeatureExtractorSpec, ModelSpec, Models, PoolSpec};
use wda::nn::{Mode, Network};
use wda::rng::{stream_rng, Stream};
use wda::experiment::{model_spec, ExtractorKind};
use wda::source_training::{train_source, LabelLossWrtClassifier, LabelLossWrtExtractor, SourceTrainConfig};

pub const TINY_CLASSES: usize = 3;

/// 6x6 input, one conv layer with batch-norm and pooling, 18-d latent.
pub fn tiny_spec() -> ModelSpec {
    ModelSpec {
        extractor: FeatureExtractorSpec {
            time_frames: 6,
            mel_bands: 6,
            conv_layers: vec![ConvLayerSpec {
                kernel_width: 3,
                out_channels: 2,
                stride: (1, 1),
                batch_norm: true,
                pool: Some(PoolSpec { kernel: 3, stride: (2, 2) }),
            }],
        },
        classifier: ClassifierSpec {
            layer_widths: vec![8, 8, TINY_CLASSES],
        },
        critic: CriticSpec { layer_widths: vec![6, 1] },
    }
}

pub fn tiny_models() -> Models {
    Models::new(tiny_spec()).expect("valid tiny spec")
}

pub fn random_features(seed: u64, n: usize, t: usize, m: usize, shift: f64) -> FeatureTensor {
    let mut rng = stream_rng(seed, Stream::Data, 99);
    let data = Array4::from_shape_simple_fn((n, 1, t, m), || rng.sample::<f64, _>(StandardNormal) + shift);
    FeatureTensor::new(data).expect("finite")
}

pub fn random_labels(seed: u64, n: usize, k: usize) -> LabelVector {
    let mut rng = stream_rng(seed, Stream::Data, 98);
    let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..k)).collect();
    LabelVector::from_indices(&idx, k).expect("in range")
}

pub struct TinyParams {
    pub m: ParameterSet,
    pub h: ParameterSet,
    pub hd: ParameterSet,
}

pub fn tiny_params(models: &Models, seed: u64) -> TinyParams {
    let mut rng = stream_rng(seed, Stream::Init, 77);
    let mut m = models.extractor.init_params(&mut rng).unwrap();
    // non-trivial running statistics so eval mode differs from identity
    for (name, p) in m.iter_mut() {
        if name.ends_with("running_mean") {
            p.value.mapv_inplace(|_| 0.1);
        } else if name.ends_with("running_var") {
            p.value.mapv_inplace(|_| 1.7);
        }
    }
    TinyParams {
        m,
        h: models.classifier.init_params(&mut rng).unwrap(),
        hd: models.critic.init_params(&mut rng).unwrap(),
    }
}

/// Smallest distance of any ReLU input to zero and of any active max-pool
/// winner to the runner-up in its window. Finite differences with step `h`
/// are only trustworthy when this stays well above `h`.
pub fn kink_margin(models: &Models, p: &TinyParams, x: &FeatureTensor, mode: Mode) -> f64 {
    let ex = models.extractor.network();
    let layers = ex.layers();
    let prefix = |k: usize| {
        let net = Network::new(layers[..k].to_vec(), ex.input_shape().to_vec()).unwrap();
        net.forward(&p.m, x.data().clone().into_dyn(), mode).unwrap().0
    };
    // conv, bn | relu | pool
    let pre = prefix(2);
    let mut margin = pre.iter().fold(f64::INFINITY, |a, v| a.min(v.abs()));
    let act = prefix(3).into_dimensionality::<ndarray::Ix4>().unwrap();
    let (b, c, h, w) = act.dim();
    for bi in 0..b {
        for ci in 0..c {
            for oi in (0..h).step_by(2) {
                for oj in (0..w).step_by(2) {
                    let mut window: Vec<f64> = Vec::new();
                    for i in oi.saturating_sub(1)..(oi + 2).min(h) {
                        for j in oj.saturating_sub(1)..(oj + 2).min(w) {
                            window.push(act[[bi, ci, i, j]]);
                        }
                    }
                    window.sort_by(|a, b| b.total_cmp(a));
                    if window[0] > 0.0 {
                        margin = margin.min(window[0] - window[1]);
                    }
                }
            }
        }
    }
    let z = models.extractor.forward(&p.m, x, mode).unwrap();
    for (net, params) in [(models.classifier.network(), &p.h), (models.critic.network(), &p.hd)] {
        let head = Network::new(net.layers()[..1].to_vec(), net.input_shape().to_vec()).unwrap();
        let pre = head.forward(params, z.data().clone().into_dyn(), Mode::Eval).unwrap().0;
        margin = pre.iter().fold(margin, |a, v| a.min(v.abs()));
    }
    margin
}

pub struct GradPoint {
    pub models: Models,
    pub params: TinyParams,
    pub xs: FeatureTensor,
    pub xt: FeatureTensor,
    pub ys: LabelVector,
    pub seed: u64,
}

/// First seed whose parameters and batches keep every kink at least
/// `5 * DEFAULT_STEP` away in both batch-norm modes.
pub fn smooth_point(n: usize) -> GradPoint {
    let models = tiny_models();
    for seed in 0..5000 {
        let params = tiny_params(&models, seed);
        let xs = random_features(2 * seed, n, 6, 6, 0.0);
        let xt = random_features(2 * seed + 1, n, 6, 6, 0.7);
        let ok = [Mode::Train, Mode::Eval]
            .iter()
            .all(|&mode| [&xs, &xt].iter().all(|x| kink_margin(&models, &params, x, mode) > 5.0 * DEFAULT_STEP));
        if ok {
            return GradPoint {
                ys: random_labels(seed, n, TINY_CLASSES),
                models,
                params,
                xs,
                xt,
                seed,
            };
        }
    }
    panic!("no smooth test point found");
}

/// Finite-difference checks of every training loss on tiny networks.
pub fn gradient_reports() -> Vec<(String, GradCheckReport)> {
    let GradPoint {
        models,
        params: p,
        xs,
        xt,
        ys,
        ..
    } = smooth_point(4);
    let zs = models.extractor.forward(&p.m, &xs, Mode::Eval).unwrap();
    let zt = models.extractor.forward(&p.m, &xt, Mode::Eval).unwrap();
    let src = LabeledBatch { x: &xs, y: &ys };

    let mut out = Vec::new();
    let mut push = |name: &str, r: GradCheckReport| out.push((name.to_string(), r));
    for mode in [Mode::Train, Mode::Eval] {
        let obj = LabelLossWrtExtractor {
            models: &models,
            h_params: &p.h,
            x: &xs,
            y: &ys,
            mode,
        };
        push(&format!("label CE wrt extractor ({mode:?})"), check_gradient(&obj, &p.m, DEFAULT_STEP).unwrap());
    }
    let obj = LabelLossWrtClassifier {
        models: &models,
        m_params: &p.m,
        x: &xs,
        y: &ys,
        mode: Mode::Train,
    };
    push("label CE wrt classifier", check_gradient(&obj, &p.h, DEFAULT_STEP).unwrap());
    for method in [Method::Wgan, Method::Gan] {
        let obj = CriticObjective {
            method,
            models: &models,
            zs: &zs,
            zt: &zt,
        };
        push(&format!("{} critic", method.as_str()), check_gradient(&obj, &p.hd, DEFAULT_STEP).unwrap());
        for mode in [Mode::Eval, Mode::Train] {
            let obj = GeneratorObjective {
                method,
                models: &models,
                hd: &p.hd,
                h_star: &p.h,
                xt: &xt,
                src,
                mode,
            };
            push(
                &format!("{} generator ({mode:?})", method.as_str()),
                check_gradient(&obj, &p.m, DEFAULT_STEP).unwrap(),
            );
        }
    }
    out
}

/// Reduced synthetic problem for fast end-to-end tests.
pub fn small_shift(seed: u64, severity: f64) -> ShiftConfig {
    ShiftConfig {
        num_classes: 3,
        mel_bands: 16,
        time_frames: 16,
        samples_per_class_source: 40,
        samples_per_class_target: 20,
        gain_curve_severity: severity,
        seed,
        ..ShiftConfig::default()
    }
}

pub fn small_dataset(seed: u64, severity: f64) -> Dataset {
    generate_synthetic(&small_shift(seed, severity)).unwrap()
}

pub struct Trained {
    pub models: Models,
    pub data: Dataset,
    pub ms: ParameterSet,
    pub h_star: ParameterSet,
}

/// Small synthetic task with a source model trained on it.
pub fn trained_small(seed: u64, severity: f64) -> Trained {
    let data = small_dataset(seed, severity);
    let models = Models::new(model_spec(ExtractorKind::Toy, data.time_frames, data.mel_bands, data.num_classes())).unwrap();
    let cfg = SourceTrainConfig {
        epochs: 8,
        batch_size: 16,
        seed,
        ..SourceTrainConfig::default()
    };
    let out = train_source(&models, &data.source.train, &data.source.valid, &cfg).unwrap();
    Trained {
        models,
        data,
        ms: out.extractor_params,
        h_star: out.classifier_params,
    }
}

/// Minimum of the mean absolute difference over every assignment.
pub fn brute_force_w1(a: &[f64], b: &[f64]) -> f64 {
    fn go(a: &[f64], b: &[f64], used: &mut Vec<bool>, i: usize, acc: f64, best: &mut f64) {
        if i == a.len() {
            *best = best.min(acc);
            return;
        }
        for j in 0..b.len() {
            if !used[j] {
                used[j] = true;
                go(a, b, used, i + 1, acc + (a[i] - b[j]).abs(), best);
                used[j] = false;
            }
        }
    }
    let mut best = f64::INFINITY;
    go(a, b, &mut vec![false; b.len()], 0, 0.0, &mut best);
    best / a.len() as f64
}

pub fn oracle_trials(trials: usize) -> usize {
    let mut rng = stream_rng(11, Stream::Data, 0);
    let mut agree = 0;
    for _ in 0..trials {
        let n = rng.random_range(1..=8);
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let b: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
        let exact = wasserstein1d_exact(&a, &b).unwrap();
        if (exact - brute_force_w1(&a, &b)).abs() < 1e-12 {
            agree += 1;
        }
    }
    agree
}

pub fn gaussian_cloud(seed: u64, salt: u32, n: usize, dim: usize, shift: f64) -> LatentRep {
    let mut rng = stream_rng(seed, Stream::Data, salt);
    let data = Array2::from_shape_fn((n, dim), |(_, j)| rng.sample::<f64, _>(StandardNormal) + if j == 0 { shift } else { 0.0 });
    LatentRep::new(data).unwrap()
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut r = vec![0.0; v.len()];
    for (rank, &i) in idx.iter().enumerate() {
        r[i] = rank as f64;
    }
    r
}

/// Spearman correlation without ties.
pub fn spearman(a: &[f64], b: &[f64]) -> f64 {
    let (ra, rb) = (ranks(a), ranks(b));
    let n = a.len() as f64;
    let d2: f64 = ra.iter().zip(&rb).map(|(x, y)| (x - y) * (x - y)).sum();
    1.0 - 6.0 * d2 / (n * (n * n - 1.0))
}


/// Critic gap and exact distance on 1-D Gaussian latents over a shift sweep.
pub fn one_dimensional_sweep() -> (Vec<f64>, Vec<f64>) {
    let critic = Critic::new(CriticSpec::default(), 1).unwrap();
    let zs = gaussian_cloud(2, 1, 200, 1, 0.0);
    let (mut est, mut exact) = (Vec::new(), Vec::new());
    for shift in [0.0, 0.3, 0.6, 1.0, 1.5, 2.5] {
        let zt = gaussian_cloud(2, 2, 200, 1, shift);
        est.push(critic_wasserstein_estimate(&critic, &zs, &zt, &DivergenceConfig::default()).unwrap().gap);
        exact.push(wasserstein1d_exact(&zs.data().column(0).to_vec(), &zt.data().column(0).to_vec()).unwrap());
    }
    (est, exact)
}
