mod common;

use proptest::prelude::*;

use wda::data::{generate_synthetic, load_manifest, write_feature_file, ShiftConfig, SCENE_LABELS};
use wda::domain::FeatureTensor;
use wda::evaluation::evaluate;

#[test]
fn zero_severity_target_matches_source_accuracy() {
    let t = common::trained_small(0, 0.0);
    let src = evaluate(&t.models, &t.ms, &t.h_star, &t.data.source.test).unwrap().micro_accuracy;
    let tgt = evaluate(&t.models, &t.ms, &t.h_star, t.data.target.test.for_evaluation()).unwrap().micro_accuracy;
    assert!((src - tgt).abs() <= 0.02 + 1e-12, "source {src} target {tgt}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn generated_values_are_finite_and_bounded(
        seed in 0u64..1000,
        severity in 0.0f64..4.0,
        noise in 0.0f64..2.0,
        offset in -3.0f64..3.0,
    ) {
        let cfg = ShiftConfig {
            num_classes: 2,
            mel_bands: 8,
            time_frames: 8,
            samples_per_class_source: 5,
            samples_per_class_target: 5,
            gain_curve_severity: severity,
            noise_std: noise,
            offset,
            seed,
        };
        let d = generate_synthetic(&cfg).unwrap();
        let splits = [
            &d.source.train, &d.source.valid, &d.source.test,
            d.target.train.for_evaluation(), d.target.valid.for_evaluation(), d.target.test.for_evaluation(),
        ];
        for s in splits.into_iter().filter(|s| !s.is_empty()) {
            prop_assert!(s.features().unwrap().data().iter().all(|v| v.is_finite() && v.abs() <= 10.0));
        }
    }

    #[test]
    fn device_column_decides_the_domain(devices in prop::collection::vec(0usize..3, 1..12)) {
        let dir = tempfile::tempdir().unwrap();
        let x = FeatureTensor::new(ndarray::Array4::zeros((1, 1, 2, 3))).unwrap();
        write_feature_file(&dir.path().join("x.udaw"), &x).unwrap();
        let mut csv = String::from("path,scene_label,device,split\n");
        for d in &devices {
            csv.push_str(&format!("x.udaw,{},{},train\n", SCENE_LABELS[0], ["A", "B", "C"][*d]));
        }
        let manifest = dir.path().join("manifest.csv");
        std::fs::write(&manifest, csv).unwrap();
        let names: Vec<String> = SCENE_LABELS.iter().map(|s| s.to_string()).collect();
        let data = load_manifest(&manifest, &names).unwrap();
        let a = devices.iter().filter(|&&d| d == 0).count();
        prop_assert_eq!(data.source_len(), a);
        prop_assert_eq!(data.target_len(), devices.len() - a);
    }
}
