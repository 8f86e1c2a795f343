use rca_core::data::{
    generate_scenario, zscore_normalize, Dataset, Domain, Provenance, Sample, ScenarioKind, ScenarioSpec,
};
use rca_core::model::{init_params, ArchSpec, Dense, Mlp, ModelParams};
use rca_core::numeric::{Activation, Matrix};
use rca_core::training::{select_pseudo_labels, train, train_source_only, TrainConfig};
use rca_core::Error;

fn scenario(kind: ScenarioKind, n: usize, seed: u64) -> (Dataset, Dataset) {
    let spec = ScenarioSpec {
        source_samples: n,
        target_samples: n,
        seed,
        ..ScenarioSpec::preset(kind)
    };
    let (s, t) = generate_scenario(&spec).unwrap();
    (zscore_normalize(&s).0, zscore_normalize(&t).0)
}

fn quick(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        pseudo_label_warmup_epochs: 1,
        ..TrainConfig::default()
    }
}

#[test]
fn same_seed_gives_identical_history() {
    let (s, t) = scenario(ScenarioKind::LabelScarcity, 300, 1);
    let arch = ArchSpec::new(8, 4);
    let a = train::<f64>(&s, &t, &arch, &quick(4)).unwrap();
    let b = train::<f64>(&s, &t, &arch, &quick(4)).unwrap();
    assert_eq!(a, b);
    let c = train::<f64>(&s, &t, &arch, &TrainConfig { seed: 1, ..quick(4) }).unwrap();
    assert_ne!(a.0, c.0);
    assert_eq!(a.1.epochs.len(), 4);
    assert!(a.1.epochs.iter().enumerate().all(|(i, r)| r.epoch == i));
}

#[test]
fn disabled_alignment_matches_source_only_trainer() {
    let (s, t) = scenario(ScenarioKind::LabelScarcity, 300, 2);
    let arch = ArchSpec::new(8, 4);
    let cfg = TrainConfig {
        lambda_mmd: 0.0,
        lambda_adv: 0.0,
        pseudo_labels: false,
        epochs: 5,
        seed: 17,
        ..TrainConfig::default()
    };
    let (full, _) = train::<f64>(&s, &t, &arch, &cfg).unwrap();
    let plain = train_source_only::<f64>(&s, &t, &arch, &cfg).unwrap();
    assert_eq!(full.extractor, plain.extractor);
    assert_eq!(full.classifier, plain.classifier);

    // The same holds with a threshold no sample can reach.
    let cfg = TrainConfig {
        pseudo_labels: true,
        confidence_threshold: 1.0,
        pseudo_label_warmup_epochs: 0,
        ..cfg
    };
    let (gated, history) = train::<f64>(&s, &t, &arch, &cfg).unwrap();
    assert_eq!(gated.extractor, plain.extractor);
    assert_eq!(gated.classifier, plain.classifier);
    assert!(history.epochs.iter().all(|r| r.pseudo_label_count == 0));
}

#[test]
fn zero_shift_source_is_learned() {
    let (s, t) = scenario(ScenarioKind::ZeroShift, 600, 3);
    let cfg = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    let (_, history) = train::<f64>(&s, &t, &ArchSpec::new(8, 4), &cfg).unwrap();
    let last = history.epochs.last().unwrap();
    assert!(last.source_accuracy >= 0.95, "{}", last.source_accuracy);
}

#[test]
fn source_loss_falls_over_training() {
    let (s, t) = scenario(ScenarioKind::LabelScarcity, 2000, 0);
    let cfg = TrainConfig {
        epochs: 20,
        ..TrainConfig::default()
    };
    let (_, history) = train::<f64>(&s, &t, &ArchSpec::new(8, 4), &cfg).unwrap();
    let mean = |r: &[rca_core::training::EpochRecord]| {
        r.iter().map(|e| e.losses.l_source).sum::<f64>() / r.len() as f64
    };
    let n = history.epochs.len();
    let (first, last) = (mean(&history.epochs[..5]), mean(&history.epochs[n - 5..]));
    assert!(last < first, "first {first}, last {last}");
    for r in &history.epochs {
        assert!(r.losses.l_source >= 0.0 && r.losses.l_mmd >= 0.0 && r.losses.l_adv >= 0.0);
        assert!((0.0..1.0).contains(&r.grl_coefficient));
        assert!(r.pseudo_label_count <= cfg.pseudo_label_class_cap * 4);
    }
    assert!(history.epochs[..cfg.pseudo_label_warmup_epochs]
        .iter()
        .all(|r| r.pseudo_label_count == 0));
}

/// Identity extractor and classifier over two classes: the top-class
/// probability of input `(a, 0)` is `1 / (1 + e^(−a))`.
fn fixture_model() -> ModelParams<f64> {
    let identity = |act| Dense {
        weight: Matrix::identity(2),
        bias: vec![0.0, 0.0],
        activation: act,
    };
    ModelParams {
        extractor: Mlp {
            layers: vec![identity(Activation::Linear)],
        },
        classifier: Mlp {
            layers: vec![identity(Activation::Linear)],
        },
        discriminator: Mlp {
            layers: vec![Dense {
                weight: Matrix::zeros(2, 1),
                bias: vec![0.0],
                activation: Activation::Sigmoid,
            }],
        },
    }
}

fn target_with_confidences(confidences: &[f64]) -> Dataset {
    let samples = confidences
        .iter()
        .map(|&p| Sample {
            features: vec![(p / (1.0 - p)).ln(), 0.0],
            label: None,
            truth: None,
            domain: Domain::Target,
            node_type: None,
        })
        .collect();
    Dataset::new(samples, 2, vec!["a".into(), "b".into()], Provenance::Derived).unwrap()
}

#[test]
fn pseudo_label_fixture_selection() {
    let params = fixture_model();
    let target = target_with_confidences(&[0.97, 0.80, 0.99]);
    let picked = select_pseudo_labels(&params, &target, 0.95, usize::MAX).unwrap();
    let idx: Vec<usize> = picked.iter().map(|p| p.target_index).collect();
    assert_eq!(idx, vec![0, 2]);
    assert!(picked.iter().all(|p| p.predicted_class == 0));
    assert!((picked[0].confidence - 0.97).abs() < 1e-12);

    assert!(select_pseudo_labels(&params, &target, 1.0, usize::MAX).unwrap().is_empty());
    assert_eq!(select_pseudo_labels(&params, &target, 1e-12, usize::MAX).unwrap().len(), 3);
    // Cap of one keeps the most confident sample of the class.
    let capped = select_pseudo_labels(&params, &target, 0.5, 1).unwrap();
    assert_eq!(capped.len(), 1);
    assert_eq!(capped[0].target_index, 2);
}

#[test]
fn labeled_target_rows_are_ignored_by_selection() {
    let params = fixture_model();
    let mut target = target_with_confidences(&[0.99, 0.99]);
    target.samples[0].label = Some(0);
    let picked = select_pseudo_labels(&params, &target, 0.5, usize::MAX).unwrap();
    assert_eq!(picked.len(), 1);
    assert_eq!(picked[0].target_index, 1);
}

#[test]
fn invalid_inputs_are_rejected() {
    let (s, t) = scenario(ScenarioKind::LabelScarcity, 100, 4);
    let arch = ArchSpec::new(8, 4);
    let empty = s.subset(&[]);
    assert!(matches!(
        train::<f64>(&empty, &t, &arch, &quick(1)),
        Err(Error::EmptyBatch(_))
    ));
    assert!(train::<f64>(&s, &t, &ArchSpec::new(5, 4), &quick(1)).is_err());
    for bad in [
        TrainConfig { lambda_mmd: -1.0, ..quick(1) },
        TrainConfig { confidence_threshold: 0.0, ..quick(1) },
        TrainConfig { batch_size: 1, ..quick(1) },
        TrainConfig { learning_rate: 0.0, ..quick(1) },
        TrainConfig { momentum: 1.0, ..quick(1) },
    ] {
        assert!(matches!(train::<f64>(&s, &t, &arch, &bad), Err(Error::InvalidArgument(_))));
    }
}

#[test]
fn single_precision_training_runs() {
    let (s, t) = scenario(ScenarioKind::ZeroShift, 400, 5);
    let arch = ArchSpec::new(8, 4);
    let (p32, h) = train::<f32>(&s, &t, &arch, &quick(10)).unwrap();
    assert!(p32.is_finite());
    assert!(h.epochs.last().unwrap().source_accuracy > 0.9);
    let p: ModelParams<f32> = init_params(&arch, 0).unwrap();
    assert!(p.check_against(&arch).is_ok());
}
