//! End-to-end acceptance checks. Runs without the libtest harness so each
//! criterion's PASS/FAIL line is always printed.

mod common;

use std::time::{Duration, Instant};

use common::*;
use rand::Rng;
use rca_core::data::{generate_scenario, zscore_normalize, NormMode, NormStats, ScenarioKind, ScenarioSpec};
use rca_core::experiment::{run_experiment, summary_to_csv, Ablation, AxisValue, ExperimentPlan, ExperimentReport};
use rca_core::metrics::{accuracy, confusion_matrix, macro_auc_ovr, macro_f1};
use rca_core::model::{init_params, predict_proba, ArchSpec, ModelParams};
use rca_core::numeric::{grad_reverse, GradReverse, Matrix};
use rca_core::objectives::{domain_adversarial_loss, mmd_loss, source_loss};
use rca_core::persistence::{history_to_csv, load_model, save_model, Checkpoint};
use rca_core::training::{batch_gradients, train, train_source_only, LabeledRows, TrainConfig};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn gradient_soundness() -> Outcome {
    let start = Instant::now();
    let arch = ArchSpec {
        input_dim: 6,
        extractor_hidden: vec![8, 8],
        feature_dim: 8,
        num_classes: 3,
        discriminator_hidden: vec![8],
        ..ArchSpec::default()
    };
    let params: ModelParams<f64> = init_params(&arch, 2024).unwrap();
    let x = random_matrix(&mut rng(2025), 8, 6, 1.5);
    let n_source = 4;
    // Four labeled source rows and one pseudo-labeled target row.
    let labeled = LabeledRows {
        rows: vec![0, 1, 2, 3, 6],
        classes: vec![0, 1, 2, 1, 0],
        weights: vec![1.0, 1.0, 1.0, 1.0, 0.5],
    };

    let mut worst = 0.0f64;
    // (λ₁, reversal): source loss alone, with MMD, with the reversed
    // adversarial path, and all three together.
    for (lambda_mmd, reversal) in [(0.0, 0.0), (1.0, 0.0), (0.0, 1.0), (0.7, 0.4)] {
        let g = batch_gradients(&params, &x, n_source, &labeled, lambda_mmd, reversal).unwrap();
        let objective = |p: &ModelParams<f64>| {
            let (s, m, a) = batch_losses(p, &x, n_source, &labeled);
            s + lambda_mmd * m - reversal * a
        };
        let num_f = numeric_grad(&flatten(&params.extractor), |v| {
            objective(&ModelParams {
                extractor: unflatten(&params.extractor, v),
                ..params.clone()
            })
        });
        let num_c = numeric_grad(&flatten(&params.classifier), |v| {
            objective(&ModelParams {
                classifier: unflatten(&params.classifier, v),
                ..params.clone()
            })
        });
        let num_d = numeric_grad(&flatten(&params.discriminator), |v| {
            let p = ModelParams {
                discriminator: unflatten(&params.discriminator, v),
                ..params.clone()
            };
            batch_losses(&p, &x, n_source, &labeled).2
        });
        worst = worst
            .max(max_rel_err(&flatten_grads(&g.grads.extractor), &num_f))
            .max(max_rel_err(&flatten_grads(&g.grads.classifier), &num_c))
            .max(max_rel_err(&flatten_grads(&g.grads.discriminator), &num_d));
    }
    let elapsed = start.elapsed();
    outcome(
        worst < 1e-4 && elapsed < Duration::from_secs(5),
        format!("max relative error {worst:.2e}, {elapsed:.2?}"),
    )
}

fn reversal_exactness() -> Outcome {
    let mut r = rng(77);
    let mut mismatches = 0;
    for _ in 0..100 {
        let rows = r.random_range(1..12);
        let cols = r.random_range(1..12);
        let up = random_matrix(&mut r, rows, cols, 10.0);
        let lambda: f64 = r.random_range(0.0..3.0);
        let expected: Vec<u64> = up.as_slice().iter().map(|&g| (-lambda * g).to_bits()).collect();
        let got: Vec<u64> = grad_reverse(&up, lambda).unwrap().as_slice().iter().map(|v| v.to_bits()).collect();
        let layer = GradReverse::new(lambda).unwrap();
        let via_layer: Vec<u64> = layer.backward(&up).as_slice().iter().map(|v| v.to_bits()).collect();
        if got != expected || via_layer != expected || layer.forward(&up) != up {
            mismatches += 1;
        }
    }
    outcome(mismatches == 0, format!("{mismatches} of 100 instances differ"))
}

fn loss_oracles() -> Outcome {
    let mut r = rng(303);
    let (mut mmd_err, mut adv_err) = (0.0f64, 0.0f64);
    let mut self_mmd_zero = true;
    for _ in 0..100 {
        let d = r.random_range(1..10);
        let ns = r.random_range(1..20);
        let nt = r.random_range(1..20);
        let f_s = random_matrix(&mut r, ns, d, 2.0);
        let f_t = random_matrix(&mut r, nt, d, 2.0);
        mmd_err = mmd_err.max((mmd_loss(&f_s, &f_t).unwrap().value - naive_mmd(&f_s, &f_t)).abs());
        self_mmd_zero &= mmd_loss(&f_s, &f_s).unwrap().value == 0.0;

        let d_s: Vec<f64> = (0..ns).map(|_| r.random_range(0.0..1.0)).collect();
        let d_t: Vec<f64> = (0..nt).map(|_| r.random_range(0.0..1.0)).collect();
        let got = domain_adversarial_loss(&d_s, &d_t).unwrap().value;
        adv_err = adv_err.max((got - naive_domain_loss(&d_s, &d_t)).abs());
    }
    let mut ce_err = 0.0f64;
    for k in 2..=10usize {
        let probs = Matrix::filled(7, k, 1.0 / k as f64);
        let labels: Vec<usize> = (0..7).map(|i| i % k).collect();
        ce_err = ce_err.max((source_loss(&probs, &labels).unwrap().0 - (k as f64).ln()).abs());
    }
    outcome(
        mmd_err <= 1e-12 && adv_err <= 1e-12 && self_mmd_zero && ce_err <= 1e-12,
        format!("mmd {mmd_err:.1e}, adversarial {adv_err:.1e}, mmd(f,f)=0 {self_mmd_zero}, uniform CE {ce_err:.1e}"),
    )
}

fn reduction_equivalence() -> Outcome {
    let spec = ScenarioSpec {
        source_samples: 400,
        target_samples: 400,
        seed: 9,
        ..ScenarioSpec::default()
    };
    let (s, t) = generate_scenario(&spec).unwrap();
    let (s, t) = (zscore_normalize(&s).0, zscore_normalize(&t).0);
    let arch = ArchSpec::new(spec.feature_dim, spec.num_classes);
    let cfg = TrainConfig {
        lambda_mmd: 0.0,
        lambda_adv: 0.0,
        pseudo_labels: false,
        epochs: 8,
        seed: 31,
        ..TrainConfig::default()
    };
    let (full, _) = train::<f64>(&s, &t, &arch, &cfg).unwrap();
    let plain = train_source_only::<f64>(&s, &t, &arch, &cfg).unwrap();
    let same = full.extractor == plain.extractor && full.classifier == plain.classifier;
    outcome(same, format!("final extractor and classifier identical: {same}"))
}

fn metric_oracles() -> Outcome {
    let mut r = rng(505);
    let mut auc_mismatch = 0;
    let mut cases = 0;
    while cases < 200 {
        let k = r.random_range(2..=5);
        let n = r.random_range(2..=50);
        let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..k)).collect();
        if labels.iter().all(|&y| y == labels[0]) {
            continue;
        }
        // Half the cases use a coarse grid so ties are common.
        let coarse = cases % 2 == 0;
        let data = (0..n * k)
            .map(|_| {
                let v: f64 = r.random_range(0.0..1.0);
                if coarse {
                    (v * 8.0).floor() / 8.0
                } else {
                    v
                }
            })
            .collect();
        let scores = Matrix::from_vec(n, k, data).unwrap();
        if macro_auc_ovr(&scores, &labels).unwrap() != pair_macro_auc(&scores, &labels) {
            auc_mismatch += 1;
        }
        cases += 1;
    }

    // Hand-tallied fixtures: (labels, predictions, confusion, macro-F1, accuracy).
    let fixtures: [(&[usize], &[usize], Vec<Vec<usize>>, f64, f64); 2] = [
        (
            &[0, 0, 0, 1, 1, 2, 2, 2, 2, 0],
            &[0, 1, 0, 1, 2, 2, 2, 0, 2, 0],
            vec![vec![3, 1, 0], vec![0, 1, 1], vec![1, 0, 3]],
            2.0 / 3.0,
            0.7,
        ),
        (
            &[0, 1, 2, 2],
            &[0, 0, 2, 2],
            vec![vec![1, 0, 0], vec![1, 0, 0], vec![0, 0, 2]],
            5.0 / 9.0,
            0.75,
        ),
    ];
    let mut fixture_ok = true;
    for (labels, preds, confusion, f1, acc) in &fixtures {
        let m = confusion_matrix(preds, labels, 3).unwrap();
        fixture_ok &= &m == confusion;
        fixture_ok &= (macro_f1(&m) - f1).abs() < 1e-12;
        fixture_ok &= (accuracy(preds, labels).unwrap() - acc).abs() < 1e-12;
    }
    outcome(
        auc_mismatch == 0 && fixture_ok,
        format!("AUC mismatches {auc_mismatch} of 200, confusion fixtures ok: {fixture_ok}"),
    )
}

fn plan(kind: ScenarioKind, axis: Vec<AxisValue>, ablations: Vec<Ablation>) -> ExperimentPlan {
    ExperimentPlan {
        scenario: ScenarioSpec::preset(kind),
        axis_values: axis,
        seeds: (0..5).collect(),
        ablations,
        ..ExperimentPlan::default()
    }
}

fn numbers(v: &[f64]) -> Vec<AxisValue> {
    v.iter().map(|&x| AxisValue::Number(x)).collect()
}

fn run(plan: &ExperimentPlan) -> ExperimentReport {
    let report = run_experiment(plan).unwrap();
    for f in &report.failures {
        println!("  cell failed: {} ({})", f.cell, f.error);
    }
    report
}

fn mean_of(report: &ExperimentReport, axis: &str, ablation: Ablation, pick: fn(&rca_core::experiment::Aggregate) -> f64) -> f64 {
    report
        .aggregate(axis, ablation)
        .filter(|a| a.n_seeds == 5)
        .map(|a| pick(&a))
        .unwrap_or(f64::NAN)
}

fn adaptation_benefit() -> Outcome {
    let start = Instant::now();
    let spec = ScenarioSpec::default();
    let p = plan(
        ScenarioKind::LabelScarcity,
        numbers(&[spec.label_fraction]),
        vec![Ablation::Full, Ablation::SourceOnly],
    );
    let report = run(&p);
    let elapsed = start.elapsed();
    let axis = spec.label_fraction.to_string();
    let full = mean_of(&report, &axis, Ablation::Full, |a| a.accuracy_mean);
    let so = mean_of(&report, &axis, Ablation::SourceOnly, |a| a.accuracy_mean);
    let gap = 100.0 * (full - so);
    outcome(
        gap >= 5.0 && elapsed < Duration::from_secs(60),
        format!("full {:.1}%, source_only {:.1}%, gap {gap:.1} points, {elapsed:.1?}", 100.0 * full, 100.0 * so),
    )
}

fn label_scarcity_trend() -> Outcome {
    let fractions = [0.1, 0.25, 0.5, 1.0];
    let report = run(&plan(ScenarioKind::LabelScarcity, numbers(&fractions), vec![Ablation::Full]));
    let acc: Vec<f64> = fractions
        .iter()
        .map(|f| mean_of(&report, &f.to_string(), Ablation::Full, |a| a.accuracy_mean))
        .collect();
    let chance = 1.0 / ScenarioSpec::default().num_classes as f64;
    let above = 100.0 * (acc[0] - chance);
    outcome(
        acc[3] >= acc[0] && above >= 20.0,
        format!(
            "accuracy {} ; 0.1 is {above:.1} points above chance",
            fractions
                .iter()
                .zip(&acc)
                .map(|(f, a)| format!("{f}:{:.1}%", 100.0 * a))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn imbalance_trend() -> Outcome {
    let ratios = [1.0, 5.0, 10.0, 20.0, 50.0];
    let report = run(&plan(
        ScenarioKind::ClassImbalance,
        numbers(&ratios),
        vec![Ablation::Full, Ablation::Uncapped],
    ));
    let f1 = |ablation| -> Vec<f64> {
        ratios
            .iter()
            .map(|r| mean_of(&report, &r.to_string(), ablation, |a| a.macro_f1_mean))
            .collect()
    };
    let (capped, uncapped) = (f1(Ablation::Full), f1(Ablation::Uncapped));
    let rises: Vec<f64> = capped.windows(2).map(|w| w[1] - w[0]).filter(|&d| d > 0.0).collect();
    let monotone = rises.len() <= 1 && rises.iter().all(|&d| d <= 0.01);
    // Both readings of "loses no more": the drop from ratio 1 and the level at 50.
    let drop_capped = capped[0] - capped[4];
    let drop_uncapped = uncapped[0] - uncapped[4];
    let cap_ok = drop_capped <= drop_uncapped && capped[4] >= uncapped[4];
    let fmt = |v: &[f64]| v.iter().map(|x| format!("{:.1}", 100.0 * x)).collect::<Vec<_>>().join("/");
    outcome(
        monotone && cap_ok && capped.iter().chain(&uncapped).all(|v| v.is_finite()),
        format!(
            "macro-F1 capped {} uncapped {}; drop at 50: capped {:.1}, uncapped {:.1}",
            fmt(&capped),
            fmt(&uncapped),
            100.0 * drop_capped,
            100.0 * drop_uncapped
        ),
    )
}

fn heterogeneous_robustness() -> Outcome {
    let names = ["cpu_intensive", "memory_intensive", "io_bound", "mixed"];
    let report = run(&plan(
        ScenarioKind::HeterogeneousNodes,
        names.iter().map(|n| AxisValue::Name(n.to_string())).collect(),
        vec![Ablation::Full],
    ));
    let acc: Vec<f64> = names
        .iter()
        .map(|n| mean_of(&report, n, Ablation::Full, |a| a.accuracy_mean))
        .collect();
    let best = acc.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let spread = 100.0 * (best - acc.iter().copied().fold(f64::INFINITY, f64::min));
    outcome(
        acc.iter().all(|a| a.is_finite()) && spread <= 10.0,
        format!(
            "{} ; spread {spread:.1} points",
            names
                .iter()
                .zip(&acc)
                .map(|(n, a)| format!("{n}:{:.1}%", 100.0 * a))
                .collect::<Vec<_>>()
                .join(" ")
        ),
    )
}

fn determinism_and_persistence() -> Outcome {
    let spec = ScenarioSpec {
        source_samples: 500,
        target_samples: 500,
        seed: 12,
        ..ScenarioSpec::default()
    };
    let (s, t) = generate_scenario(&spec).unwrap();
    let norm = NormStats::fit(&[&s, &t], NormMode::PerDomain);
    let (s, t) = (norm.apply(&s), norm.apply(&t));
    let arch = ArchSpec::new(spec.feature_dim, spec.num_classes);
    let cfg = TrainConfig {
        epochs: 6,
        pseudo_label_warmup_epochs: 2,
        seed: 12,
        ..TrainConfig::default()
    };
    let (params, h1) = train::<f64>(&s, &t, &arch, &cfg).unwrap();
    let (_, h2) = train::<f64>(&s, &t, &arch, &cfg).unwrap();
    let history_same = history_to_csv(&h1).into_bytes() == history_to_csv(&h2).into_bytes();

    let small = ExperimentPlan {
        scenario: ScenarioSpec {
            source_samples: 300,
            target_samples: 300,
            ..ScenarioSpec::default()
        },
        axis_values: numbers(&[0.1, 0.5]),
        seeds: vec![0, 1],
        train: TrainConfig {
            epochs: 4,
            ..TrainConfig::default()
        },
        ..ExperimentPlan::default()
    };
    let summary_same = summary_to_csv(&run(&small).rows).into_bytes() == summary_to_csv(&run(&small).rows).into_bytes();

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ckpt");
    let ckpt = Checkpoint {
        arch,
        params,
        norm: Some(norm),
        config: cfg,
        seed: 12,
    };
    save_model(&ckpt, &path).unwrap();
    let back: Checkpoint<f64> = load_model(&path).unwrap();
    let x = t.feature_matrix::<f64>();
    let bits = |p: &ModelParams<f64>| {
        predict_proba(&x, p).unwrap().as_slice().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    };
    let preds_same = bits(&ckpt.params) == bits(&back.params);
    outcome(
        history_same && summary_same && preds_same,
        format!("history identical {history_same}, summary identical {summary_same}, predictions identical {preds_same}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("1 gradient soundness", gradient_soundness),
        ("2 gradient reversal exactness", reversal_exactness),
        ("3 loss oracles", loss_oracles),
        ("4 reduction equivalence", reduction_equivalence),
        ("5 metric oracles", metric_oracles),
        ("6 adaptation benefit", adaptation_benefit),
        ("7 label-scarcity trend", label_scarcity_trend),
        ("8 imbalance trend", imbalance_trend),
        ("9 heterogeneous robustness", heterogeneous_robustness),
        ("10 determinism and persistence", determinism_and_persistence),
    ];
    let mut failed = Vec::new();
    for (name, check) in criteria {
        let o = check();
        println!("{} criterion {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
        if !o.pass {
            failed.push(name);
        }
    }
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
