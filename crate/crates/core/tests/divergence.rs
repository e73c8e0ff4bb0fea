mod common;

use ndarray::Array2;
use proptest::prelude::*;

use wda::divergence::{critic_wasserstein_estimate, hdh_bound_estimate, wasserstein1d_exact, DivergenceConfig, DomainClassifier};
use wda::domain::{DomainTag, LatentRep};
use wda::models::{Critic, CriticSpec};
use wda::rng::{stream_rng, Stream};
use wda::Result;

#[test]
fn sorted_matching_is_the_optimal_assignment() {
    assert_eq!(common::oracle_trials(200), 200);
}

#[test]
fn two_point_example_by_brute_force() {
    assert_eq!(common::brute_force_w1(&[0.0, 1.0], &[1.0, 2.0]), 1.0);
    assert_eq!(wasserstein1d_exact(&[0.0, 1.0], &[1.0, 2.0]).unwrap(), 1.0);
}

fn sample(n: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-100.0f64..100.0, n)
}

fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..=8).prop_flat_map(|n| (sample(n), sample(n), sample(n)))
}

proptest! {
    #[test]
    fn metric_axioms((a, b, c) in triple()) {
        let ab = wasserstein1d_exact(&a, &b).unwrap();
        let ba = wasserstein1d_exact(&b, &a).unwrap();
        let bc = wasserstein1d_exact(&b, &c).unwrap();
        let ac = wasserstein1d_exact(&a, &c).unwrap();
        prop_assert!(ab >= 0.0);
        prop_assert_eq!(ab, ba);
        prop_assert_eq!(wasserstein1d_exact(&a, &a).unwrap(), 0.0);
        prop_assert!(ac <= ab + bc + 1e-9);
    }

    #[test]
    fn permutation_invariant(mut a in sample(6), b in sample(6), seed in 0u64..1000) {
        let before = wasserstein1d_exact(&a, &b).unwrap();
        use rand::seq::SliceRandom;
        a.shuffle(&mut stream_rng(seed, Stream::Data, 0));
        prop_assert_eq!(wasserstein1d_exact(&a, &b).unwrap(), before);
    }

    #[test]
    fn bound_stays_in_range(flags_s in prop::collection::vec(any::<bool>(), 1..20), flags_t in prop::collection::vec(any::<bool>(), 1..20)) {
        let zs = latents_from(&flags_s);
        let zt = latents_from(&flags_t);
        let v = hdh_bound_estimate(&SignClassifier, &zs, &zt).unwrap();
        prop_assert!((0.0..=2.0).contains(&v));
    }
}

/// Positive first coordinate means target.
struct SignClassifier;

impl DomainClassifier for SignClassifier {
    fn predict(&self, z: &LatentRep) -> Result<Vec<DomainTag>> {
        Ok(z.data()
            .rows()
            .into_iter()
            .map(|r| if r[0] > 0.0 { DomainTag::Target } else { DomainTag::Source })
            .collect())
    }
}

fn latents_from(flags: &[bool]) -> LatentRep {
    let v: Vec<f64> = flags.iter().map(|&f| if f { 1.0 } else { -1.0 }).collect();
    LatentRep::new(Array2::from_shape_vec((v.len(), 1), v).unwrap()).unwrap()
}

#[test]
fn hdh_examples() {
    let zs = latents_from(&[false; 10]);
    let zt = latents_from(&[true; 10]);
    assert_eq!(hdh_bound_estimate(&SignClassifier, &zs, &zt).unwrap(), 2.0);
    let half = latents_from(&[true, false, true, false]);
    assert_eq!(hdh_bound_estimate(&SignClassifier, &half, &half).unwrap(), 0.0);
    let empty = LatentRep::new(Array2::zeros((0, 1)));
    if let Ok(empty) = empty {
        assert!(hdh_bound_estimate(&SignClassifier, &empty, &zt).is_err());
    }
}

#[test]
fn identical_latents_give_no_gap() {
    let z = common::gaussian_cloud(0, 1, 200, 8, 0.0);
    let critic = Critic::new(CriticSpec::default(), 8).unwrap();
    let est = critic_wasserstein_estimate(&critic, &z, &z, &DivergenceConfig::default()).unwrap();
    assert!(est.estimate <= 0.05 * est.score_scale, "{est:?}");
}

#[test]
fn critic_estimate_grows_with_shift() {
    let critic = Critic::new(CriticSpec::default(), 8).unwrap();
    let zs = common::gaussian_cloud(1, 1, 200, 8, 0.0);
    let mut last = -1.0;
    for shift in [0.5, 1.0, 2.0, 4.0] {
        let zt = common::gaussian_cloud(1, 2, 200, 8, shift);
        let est = critic_wasserstein_estimate(&critic, &zs, &zt, &DivergenceConfig::default()).unwrap().estimate;
        let exact = wasserstein1d_exact(&zs.data().column(0).to_vec(), &zt.data().column(0).to_vec()).unwrap();
        assert!(est > last, "shift {shift}: estimate {est} not above {last} (exact projection {exact})");
        last = est;
    }
}

#[test]
fn critic_estimate_tracks_exact_distance_in_one_dimension() {
    let (est, exact) = common::one_dimensional_sweep();
    let rho = common::spearman(&est, &exact);
    assert!(rho >= 0.9, "rho {rho}, estimates {est:?}, exact {exact:?}");
}
