//! Scenario sweeps: generate, split, train and evaluate every
//! (axis value, seed, ablation) cell of a plan, and summarize.

use std::fmt;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{generate_scenario, Dataset, NodeType, NormMode, NormStats, ScenarioKind, ScenarioSpec};
use crate::error::{Error, Result};
use crate::metrics::{self, MetricsReport};
use crate::model::{self, ArchSpec};
use crate::persistence::fmt_sig9;
use crate::training::{train, TrainConfig};

/// Training variant compared in a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    /// MMD + adversarial + class-capped pseudo-labels.
    Full,
    /// Trained on the labeled source alone; no target data reaches the loss.
    SourceOnly,
    MmdOnly,
    AdvOnly,
    NoPseudo,
    /// Full method with no per-class pseudo-label cap.
    Uncapped,
}

impl Ablation {
    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut c = base.clone();
        match self {
            Ablation::Full => {}
            Ablation::SourceOnly => {
                c.lambda_mmd = 0.0;
                c.lambda_adv = 0.0;
                c.pseudo_labels = false;
                c.use_target_labels = false;
            }
            Ablation::MmdOnly => {
                c.lambda_adv = 0.0;
                c.pseudo_labels = false;
            }
            Ablation::AdvOnly => {
                c.lambda_mmd = 0.0;
                c.pseudo_labels = false;
            }
            Ablation::NoPseudo => c.pseudo_labels = false,
            Ablation::Uncapped => c.pseudo_label_class_cap = 0,
        }
        c
    }
}

impl fmt::Display for Ablation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Ablation::Full => "full",
            Ablation::SourceOnly => "source_only",
            Ablation::MmdOnly => "mmd_only",
            Ablation::AdvOnly => "adv_only",
            Ablation::NoPseudo => "no_pseudo",
            Ablation::Uncapped => "uncapped",
        })
    }
}

impl FromStr for Ablation {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "full" => Ok(Ablation::Full),
            "source_only" => Ok(Ablation::SourceOnly),
            "mmd_only" => Ok(Ablation::MmdOnly),
            "adv_only" => Ok(Ablation::AdvOnly),
            "no_pseudo" => Ok(Ablation::NoPseudo),
            "uncapped" => Ok(Ablation::Uncapped),
            other => Err(Error::InvalidArgument(format!("unknown ablation `{other}`"))),
        }
    }
}

/// A point on the sweep axis: a number (label fraction, imbalance ratio,
/// shift magnitude) or a node-type name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum AxisValue {
    Number(f64),
    Name(String),
}

impl fmt::Display for AxisValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AxisValue::Number(v) => write!(f, "{v}"),
            AxisValue::Name(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentPlan {
    /// Base scenario; its kind decides what the axis values mean.
    pub scenario: ScenarioSpec,
    /// label_scarcity: label fractions; class_imbalance: imbalance ratios;
    /// heterogeneous_nodes: node types to report; zero_shift: shift magnitudes.
    pub axis_values: Vec<AxisValue>,
    pub seeds: Vec<u64>,
    pub ablations: Vec<Ablation>,
    /// Layer layout; input width and class count are taken from the scenario.
    pub arch: ArchSpec,
    pub train: TrainConfig,
    /// Share of target samples reserved for evaluation.
    pub holdout_fraction: f64,
    pub normalization: NormMode,
    /// Run cells on the rayon pool. Output order and values do not change.
    pub parallel: bool,
}

impl Default for ExperimentPlan {
    fn default() -> Self {
        Self {
            scenario: ScenarioSpec::default(),
            axis_values: vec![AxisValue::Number(0.1), AxisValue::Number(1.0)],
            seeds: vec![0],
            ablations: vec![Ablation::Full, Ablation::SourceOnly],
            arch: ArchSpec::default(),
            train: TrainConfig::default(),
            holdout_fraction: 0.3,
            normalization: NormMode::PerDomain,
            parallel: true,
        }
    }
}

impl ExperimentPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.axis_values.is_empty() {
            return bad("plan needs at least one axis value".into());
        }
        if self.seeds.is_empty() {
            return bad("plan needs at least one seed".into());
        }
        if self.ablations.is_empty() {
            return bad("plan needs at least one ablation".into());
        }
        if !(self.holdout_fraction > 0.0 && self.holdout_fraction < 1.0) {
            return bad(format!(
                "holdout_fraction must be in (0, 1), got {}",
                self.holdout_fraction
            ));
        }
        self.train.validate()?;
        for v in &self.axis_values {
            self.scenario_for(v, 0)?.validate()?;
        }
        Ok(())
    }

    fn numeric(&self, v: &AxisValue) -> Result<f64> {
        match v {
            AxisValue::Number(x) => Ok(*x),
            AxisValue::Name(s) => s.parse().map_err(|_| {
                Error::InvalidArgument(format!(
                    "{} expects numeric axis values, got `{s}`",
                    self.scenario.kind
                ))
            }),
        }
    }

    /// Scenario for one axis value and seed.
    pub fn scenario_for(&self, v: &AxisValue, seed: u64) -> Result<ScenarioSpec> {
        let mut spec = self.scenario.clone();
        spec.seed = seed;
        match spec.kind {
            ScenarioKind::LabelScarcity => spec.label_fraction = self.numeric(v)?,
            ScenarioKind::ClassImbalance => spec.imbalance_ratio = self.numeric(v)?,
            ScenarioKind::ZeroShift => spec.shift.magnitude = self.numeric(v)?,
            ScenarioKind::HeterogeneousNodes => {
                let name = v.to_string();
                let nt: NodeType = name.parse()?;
                if !spec.node_types.iter().any(|b| b.node_type == nt) {
                    return Err(Error::InvalidArgument(format!(
                        "node type {nt} is not part of the scenario"
                    )));
                }
            }
        }
        Ok(spec)
    }

    fn arch_for(&self, spec: &ScenarioSpec) -> ArchSpec {
        ArchSpec {
            input_dim: spec.feature_dim,
            num_classes: spec.num_classes,
            ..self.arch.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scenario: ScenarioKind,
    pub axis_value: String,
    pub seed: u64,
    pub ablation: Ablation,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub macro_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub scenario: ScenarioKind,
    pub axis_value: String,
    pub ablation: Ablation,
    pub n_seeds: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub macro_f1_mean: f64,
    pub macro_f1_std: f64,
    pub macro_auc_mean: f64,
    pub macro_auc_std: f64,
}

#[derive(Debug)]
pub struct CellFailure {
    pub cell: String,
    pub error: Error,
}

#[derive(Debug, Default)]
pub struct ExperimentReport {
    /// Completed cells in canonical (axis, seed, ablation) order.
    pub rows: Vec<SummaryRow>,
    pub failures: Vec<CellFailure>,
}

impl ExperimentReport {
    /// Mean and population std over seeds for every (axis, ablation) pair,
    /// in first-appearance order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut keys: Vec<(String, Ablation)> = Vec::new();
        for r in &self.rows {
            let k = (r.axis_value.clone(), r.ablation);
            if !keys.contains(&k) {
                keys.push(k);
            }
        }
        keys.into_iter()
            .map(|(axis, ablation)| {
                let rows: Vec<&SummaryRow> = self
                    .rows
                    .iter()
                    .filter(|r| r.axis_value == axis && r.ablation == ablation)
                    .collect();
                let stat = |f: fn(&SummaryRow) -> f64| {
                    let n = rows.len() as f64;
                    let mean = rows.iter().map(|r| f(r)).sum::<f64>() / n;
                    let var = rows.iter().map(|r| (f(r) - mean).powi(2)).sum::<f64>() / n;
                    (mean, var.sqrt())
                };
                let (am, asd) = stat(|r| r.accuracy);
                let (fm, fsd) = stat(|r| r.macro_f1);
                let (um, usd) = stat(|r| r.macro_auc);
                Aggregate {
                    scenario: rows[0].scenario,
                    axis_value: axis,
                    ablation,
                    n_seeds: rows.len(),
                    accuracy_mean: am,
                    accuracy_std: asd,
                    macro_f1_mean: fm,
                    macro_f1_std: fsd,
                    macro_auc_mean: um,
                    macro_auc_std: usd,
                }
            })
            .collect()
    }

    pub fn aggregate(&self, axis_value: &str, ablation: Ablation) -> Option<Aggregate> {
        self.aggregates()
            .into_iter()
            .find(|a| a.axis_value == axis_value && a.ablation == ablation)
    }
}

/// Held-out evaluation split, stratified by ground-truth class. Returns
/// (training indices, held-out indices), each sorted.
pub fn holdout_split(ds: &Dataset, fraction: f64, seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x686f_6c64);
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); ds.num_classes + 1];
    for (i, s) in ds.samples.iter().enumerate() {
        let slot = s.eval_label().unwrap_or(ds.num_classes);
        by_class[slot].push(i);
    }
    let (mut train_idx, mut held) = (Vec::new(), Vec::new());
    for mut members in by_class {
        members.shuffle(&mut rng);
        let k = (members.len() as f64 * fraction).round() as usize;
        held.extend_from_slice(&members[..k]);
        train_idx.extend_from_slice(&members[k..]);
    }
    train_idx.sort_unstable();
    held.sort_unstable();
    (train_idx, held)
}

fn evaluate_on(params: &model::ModelParams<f64>, ds: &Dataset) -> Result<MetricsReport> {
    let labeled: Vec<usize> = (0..ds.len())
        .filter(|&i| ds.samples[i].eval_label().is_some())
        .collect();
    let sub = ds.subset(&labeled);
    let labels: Vec<usize> = sub.samples.iter().filter_map(|s| s.eval_label()).collect();
    let probs = model::predict_proba(&sub.feature_matrix::<f64>(), params)?;
    metrics::evaluate(&probs, &labels)
}

/// One (seed, ablation) training run, evaluated at each requested axis value.
/// Every axis value but heterogeneous node types gets its own dataset, so
/// `axis` has one element except in that case.
fn run_cell(
    plan: &ExperimentPlan,
    axis: &[AxisValue],
    seed: u64,
    ablation: Ablation,
) -> Result<Vec<SummaryRow>> {
    let spec = plan.scenario_for(&axis[0], seed)?;
    let (source, target) = generate_scenario(&spec)?;
    let (train_idx, held_idx) = holdout_split(&target, plan.holdout_fraction, seed);
    let target_train = target.subset(&train_idx);
    let held = target.subset(&held_idx).unlabeled();

    let stats = NormStats::fit(&[&source, &target_train], plan.normalization);
    let source = stats.apply(&source);
    let target_train = stats.apply(&target_train);
    let held = stats.apply(&held);

    let mut config = ablation.apply(&plan.train);
    config.seed = seed;
    let (params, _) = train::<f64>(&source, &target_train, &plan.arch_for(&spec), &config)?;

    axis.iter()
        .map(|v| {
            let eval_set = match spec.kind {
                ScenarioKind::HeterogeneousNodes => {
                    let nt: NodeType = v.to_string().parse()?;
                    let idx: Vec<usize> = (0..held.len())
                        .filter(|&i| held.samples[i].node_type == Some(nt))
                        .collect();
                    held.subset(&idx)
                }
                _ => held.clone(),
            };
            let report = evaluate_on(&params, &eval_set)?;
            Ok(SummaryRow {
                scenario: spec.kind,
                axis_value: v.to_string(),
                seed,
                ablation,
                accuracy: report.accuracy,
                macro_f1: report.macro_f1,
                macro_auc: report.macro_auc,
            })
        })
        .collect()
}

/// Runs every cell of the plan. Failed cells are reported alongside the
/// completed ones rather than aborting the sweep.
pub fn run_experiment(plan: &ExperimentPlan) -> Result<ExperimentReport> {
    plan.validate()?;

    // Work units: (axis group, seed, ablation). Heterogeneous scenarios
    // share one training run across all node types.
    let groups: Vec<Vec<AxisValue>> = match plan.scenario.kind {
        ScenarioKind::HeterogeneousNodes => vec![plan.axis_values.clone()],
        _ => plan.axis_values.iter().map(|v| vec![v.clone()]).collect(),
    };
    let mut units = Vec::new();
    for (g, group) in groups.iter().enumerate() {
        for &seed in &plan.seeds {
            for &ablation in &plan.ablations {
                units.push((g, group, seed, ablation));
            }
        }
    }
    let run = |&(_, group, seed, ablation): &(usize, &Vec<AxisValue>, u64, Ablation)| {
        run_cell(plan, group, seed, ablation).map_err(|e| CellFailure {
            cell: format!(
                "axis={} seed={seed} ablation={ablation}",
                group.iter().map(ToString::to_string).collect::<Vec<_>>().join("|")
            ),
            error: e,
        })
    };
    let results: Vec<std::result::Result<Vec<SummaryRow>, CellFailure>> = if plan.parallel {
        units.par_iter().map(run).collect()
    } else {
        units.iter().map(run).collect()
    };

    let mut report = ExperimentReport::default();
    let mut ok: Vec<SummaryRow> = Vec::new();
    for r in results {
        match r {
            Ok(rows) => ok.extend(rows),
            Err(f) => report.failures.push(f),
        }
    }
    // Canonical order: axis value (plan order), then seed, then ablation.
    let axis_pos = |s: &str| plan.axis_values.iter().position(|v| v.to_string() == s);
    let seed_pos = |s: u64| plan.seeds.iter().position(|&x| x == s);
    let abl_pos = |a: Ablation| plan.ablations.iter().position(|&x| x == a);
    ok.sort_by_key(|r| (axis_pos(&r.axis_value), seed_pos(r.seed), abl_pos(r.ablation)));
    report.rows = ok;
    Ok(report)
}

pub const SUMMARY_COLUMNS: [&str; 7] = [
    "scenario",
    "axis_value",
    "seed",
    "ablation",
    "accuracy",
    "macro_f1",
    "macro_auc",
];

pub fn summary_to_csv(rows: &[SummaryRow]) -> String {
    let mut out = SUMMARY_COLUMNS.join(",");
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.scenario,
            r.axis_value,
            r.seed,
            r.ablation,
            fmt_sig9(r.accuracy),
            fmt_sig9(r.macro_f1),
            fmt_sig9(r.macro_auc)
        );
    }
    out
}

pub fn aggregates_to_csv(aggs: &[Aggregate]) -> String {
    let mut out = String::from(
        "scenario,axis_value,ablation,n_seeds,accuracy_mean,accuracy_std,macro_f1_mean,macro_f1_std,macro_auc_mean,macro_auc_std\n",
    );
    for a in aggs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            a.scenario,
            a.axis_value,
            a.ablation,
            a.n_seeds,
            fmt_sig9(a.accuracy_mean),
            fmt_sig9(a.accuracy_std),
            fmt_sig9(a.macro_f1_mean),
            fmt_sig9(a.macro_f1_std),
            fmt_sig9(a.macro_auc_mean),
            fmt_sig9(a.macro_auc_std)
        );
    }
    out
}

/// Writes `summary.csv` and `summary_aggregate.csv` into `dir`.
pub fn write_report(report: &ExperimentReport, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let summary = dir.join("summary.csv");
    std::fs::write(&summary, summary_to_csv(&report.rows)).map_err(|e| Error::io(&summary, e))?;
    let agg = dir.join("summary_aggregate.csv");
    std::fs::write(&agg, aggregates_to_csv(&report.aggregates())).map_err(|e| Error::io(&agg, e))
}
