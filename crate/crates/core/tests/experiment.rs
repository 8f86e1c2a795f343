use std::collections::HashSet;
use std::fs;

use rca_core::data::{ScenarioKind, ScenarioSpec};
use rca_core::experiment::{
    run_experiment, summary_to_csv, write_report, Ablation, AxisValue, ExperimentPlan,
};
use rca_core::training::TrainConfig;

fn small_plan(kind: ScenarioKind, axis: Vec<AxisValue>) -> ExperimentPlan {
    ExperimentPlan {
        scenario: ScenarioSpec {
            source_samples: 240,
            target_samples: 240,
            ..ScenarioSpec::preset(kind)
        },
        axis_values: axis,
        seeds: vec![3, 4],
        ablations: vec![Ablation::Full, Ablation::SourceOnly],
        train: TrainConfig {
            epochs: 3,
            pseudo_label_warmup_epochs: 1,
            ..TrainConfig::default()
        },
        ..ExperimentPlan::default()
    }
}

fn numbers(v: &[f64]) -> Vec<AxisValue> {
    v.iter().map(|&x| AxisValue::Number(x)).collect()
}

#[test]
fn grid_produces_one_row_per_cell() {
    let plan = small_plan(ScenarioKind::LabelScarcity, numbers(&[0.1, 1.0]));
    let report = run_experiment(&plan).unwrap();
    assert!(report.failures.is_empty());
    assert_eq!(report.rows.len(), 8);
    let cells: HashSet<_> = report
        .rows
        .iter()
        .map(|r| (r.axis_value.clone(), r.seed, r.ablation))
        .collect();
    assert_eq!(cells.len(), 8);

    let dir = tempfile::tempdir().unwrap();
    write_report(&report, dir.path()).unwrap();
    let summary = fs::read_to_string(dir.path().join("summary.csv")).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines[0], "scenario,axis_value,seed,ablation,accuracy,macro_f1,macro_auc");
    assert_eq!(lines.len(), 9);
    assert!(lines[1].starts_with("label_scarcity,0.1,3,full,"));
    let agg = fs::read_to_string(dir.path().join("summary_aggregate.csv")).unwrap();
    assert_eq!(agg.lines().count(), 5);
}

#[test]
fn summary_is_reproducible_and_schedule_independent() {
    let plan = small_plan(ScenarioKind::ClassImbalance, numbers(&[1.0, 5.0]));
    let a = summary_to_csv(&run_experiment(&plan).unwrap().rows);
    let b = summary_to_csv(&run_experiment(&plan).unwrap().rows);
    assert_eq!(a, b);
    let sequential = ExperimentPlan {
        parallel: false,
        ..plan
    };
    assert_eq!(a, summary_to_csv(&run_experiment(&sequential).unwrap().rows));
}

#[test]
fn heterogeneous_plan_reports_each_node_type() {
    let names = ["cpu_intensive", "memory_intensive", "io_bound", "mixed"];
    let plan = ExperimentPlan {
        seeds: vec![1],
        ablations: vec![Ablation::Full],
        ..small_plan(
            ScenarioKind::HeterogeneousNodes,
            names.iter().map(|n| AxisValue::Name(n.to_string())).collect(),
        )
    };
    let report = run_experiment(&plan).unwrap();
    let got: Vec<&str> = report.rows.iter().map(|r| r.axis_value.as_str()).collect();
    assert_eq!(got, names);
    assert!(report.rows.iter().all(|r| (0.0..=1.0).contains(&r.accuracy)));
}

#[test]
fn invalid_plans_are_rejected() {
    let mut plan = small_plan(ScenarioKind::LabelScarcity, numbers(&[1.5]));
    assert!(run_experiment(&plan).is_err());
    plan.axis_values = vec![AxisValue::Name("io_bound".into())];
    assert!(run_experiment(&plan).is_err());
    plan.axis_values = numbers(&[0.5]);
    plan.seeds.clear();
    assert!(run_experiment(&plan).is_err());
}

#[test]
fn plan_files_parse_from_toml() {
    let text = r#"
        seeds = [0, 1]
        ablations = ["full", "source_only", "uncapped"]
        axis_values = [1, 10, 50]

        [scenario]
        kind = "class_imbalance"
        source_samples = 500

        [train]
        epochs = 12
    "#;
    let plan: ExperimentPlan = toml::from_str(text).unwrap();
    plan.validate().unwrap();
    assert_eq!(plan.scenario.kind, ScenarioKind::ClassImbalance);
    assert_eq!(plan.scenario.source_samples, 500);
    assert_eq!(plan.train.epochs, 12);
    assert_eq!(plan.ablations.len(), 3);
    assert_eq!(plan.axis_values[2].to_string(), "50");
    // Unset scenario fields come from the preset of the named kind.
    assert!(plan.scenario.imbalance_in_source);
    assert_eq!(plan.scenario.target_samples, 2000);

    let typo = text.replace("epochs = 12", "epoch = 12");
    assert!(toml::from_str::<ExperimentPlan>(&typo).is_err());
}
