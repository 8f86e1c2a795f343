//! Telemetry datasets: CSV ingestion, per-domain normalization, label
//! masking, and the synthetic domain-shift scenario generator.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numeric::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Domain {
    Source,
    Target,
}

impl FromStr for Domain {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "source" | "s" => Ok(Domain::Source),
            "target" | "t" => Ok(Domain::Target),
            other => Err(Error::InvalidArgument(format!("unknown domain `{other}`"))),
        }
    }
}

impl fmt::Display for Domain {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Domain::Source => "source",
            Domain::Target => "target",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeType {
    CpuIntensive,
    MemoryIntensive,
    IoBound,
    Mixed,
}

impl NodeType {
    pub const ALL: [NodeType; 4] = [
        NodeType::CpuIntensive,
        NodeType::MemoryIntensive,
        NodeType::IoBound,
        NodeType::Mixed,
    ];
}

impl FromStr for NodeType {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "cpu_intensive" | "cpu" => Ok(NodeType::CpuIntensive),
            "memory_intensive" | "memory" | "mem" => Ok(NodeType::MemoryIntensive),
            "io_bound" | "io" => Ok(NodeType::IoBound),
            "mixed" => Ok(NodeType::Mixed),
            other => Err(Error::InvalidArgument(format!("unknown node type `{other}`"))),
        }
    }
}

impl fmt::Display for NodeType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NodeType::CpuIntensive => "cpu_intensive",
            NodeType::MemoryIntensive => "memory_intensive",
            NodeType::IoBound => "io_bound",
            NodeType::Mixed => "mixed",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub features: Vec<f64>,
    /// Label visible to training; `None` for unlabeled samples.
    pub label: Option<usize>,
    /// Evaluation-only ground truth. Training never reads this field.
    pub truth: Option<usize>,
    pub domain: Domain,
    pub node_type: Option<NodeType>,
}

impl Sample {
    /// Label used for evaluation: ground truth when known, else the visible label.
    pub fn eval_label(&self) -> Option<usize> {
        self.truth.or(self.label)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    TraceCsv(PathBuf),
    Synthetic { spec_hash: String },
    Derived,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub num_classes: usize,
    pub feature_names: Vec<String>,
    pub provenance: Provenance,
}

impl Dataset {
    pub fn new(
        samples: Vec<Sample>,
        num_classes: usize,
        feature_names: Vec<String>,
        provenance: Provenance,
    ) -> Result<Self> {
        let ds = Self {
            samples,
            num_classes,
            feature_names,
            provenance,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.feature_names.len();
        for (i, s) in self.samples.iter().enumerate() {
            if s.features.len() != d {
                return Err(Error::InvalidArgument(format!(
                    "sample {i} has {} features, dataset has {d}",
                    s.features.len()
                )));
            }
            for l in s.label.iter().chain(s.truth.iter()) {
                if *l >= self.num_classes {
                    return Err(Error::LabelOutOfRange {
                        label: *l,
                        classes: self.num_classes,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn feature_dim(&self) -> usize {
        self.feature_names.len()
    }

    pub fn count_domain(&self, domain: Domain) -> usize {
        self.samples.iter().filter(|s| s.domain == domain).count()
    }

    pub fn labeled_count(&self) -> usize {
        self.samples.iter().filter(|s| s.label.is_some()).count()
    }

    pub fn feature_matrix<T: Scalar>(&self) -> Matrix<T> {
        let data = self
            .samples
            .iter()
            .flat_map(|s| s.features.iter().map(|&v| T::lit(v)))
            .collect();
        Matrix::from_vec(self.len(), self.feature_dim(), data).expect("uniform width")
    }

    pub fn subset(&self, indices: &[usize]) -> Self {
        Self {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
            num_classes: self.num_classes,
            feature_names: self.feature_names.clone(),
            provenance: self.provenance.clone(),
        }
    }

    pub fn with_domain(&self, domain: Domain) -> Self {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.samples[i].domain == domain)
            .collect();
        self.subset(&idx)
    }

    /// Copy with every visible label removed (ground truth kept).
    pub fn unlabeled(&self) -> Self {
        let mut out = self.clone();
        for s in &mut out.samples {
            s.truth = s.truth.or(s.label);
            s.label = None;
        }
        out
    }

    /// Per-class counts of the evaluation labels.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for s in &self.samples {
            if let Some(l) = s.eval_label() {
                counts[l] += 1;
            }
        }
        counts
    }
}

/// Column layout of a telemetry CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceSchema {
    /// Required numeric columns. Empty means "every column not listed below".
    pub feature_columns: Vec<String>,
    pub label_column: String,
    pub truth_column: String,
    pub domain_column: String,
    pub node_type_column: String,
    /// Columns ignored when features are inferred.
    pub ignored_columns: Vec<String>,
    pub default_domain: Domain,
    /// Class count; inferred from the largest label when absent.
    pub num_classes: Option<usize>,
}

impl Default for TraceSchema {
    fn default() -> Self {
        Self {
            feature_columns: [
                "cpu_usage",
                "mem_usage",
                "disk_read",
                "disk_write",
                "net_in",
                "net_out",
            ]
            .map(String::from)
            .to_vec(),
            label_column: "label".into(),
            truth_column: "true_label".into(),
            domain_column: "domain".into(),
            node_type_column: "node_type".into(),
            ignored_columns: vec!["timestamp".into(), "node_id".into()],
            default_domain: Domain::Target,
            num_classes: None,
        }
    }
}

impl TraceSchema {
    /// Schema whose feature columns are taken from the header.
    pub fn inferred() -> Self {
        Self {
            feature_columns: Vec::new(),
            ..Self::default()
        }
    }

    fn meta_columns(&self) -> [&str; 4] {
        [
            &self.label_column,
            &self.truth_column,
            &self.domain_column,
            &self.node_type_column,
        ]
    }
}

fn parse_label(
    cell: &str,
    path: &Path,
    row: usize,
    column: &str,
) -> Result<Option<usize>> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    cell.parse::<usize>().map(Some).map_err(|_| Error::ParseCell {
        path: path.to_path_buf(),
        row,
        column: column.to_string(),
        value: cell.to_string(),
    })
}

/// Loads one sample per data row. Rows are reported by file line number, so
/// the first data row is row 2.
pub fn load_trace_csv(path: impl AsRef<Path>, schema: &TraceSchema) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(file);
    let headers: Vec<String> = reader.headers()?.iter().map(|h| h.trim().to_string()).collect();
    let find = |name: &str| headers.iter().position(|h| h == name);

    let feature_names: Vec<String> = if schema.feature_columns.is_empty() {
        let meta = schema.meta_columns();
        headers
            .iter()
            .filter(|h| !meta.contains(&h.as_str()) && !schema.ignored_columns.contains(h))
            .cloned()
            .collect()
    } else {
        schema.feature_columns.clone()
    };
    if feature_names.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "{}: no feature columns",
            path.display()
        )));
    }
    let feature_idx = feature_names
        .iter()
        .map(|name| {
            find(name).ok_or_else(|| Error::MissingColumn {
                path: path.to_path_buf(),
                column: name.clone(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let label_idx = find(&schema.label_column);
    let truth_idx = find(&schema.truth_column);
    let domain_idx = find(&schema.domain_column);
    let node_idx = find(&schema.node_type_column);

    let mut samples = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record?;
        let row = i + 2;
        if record.len() != headers.len() {
            return Err(Error::RowWidth {
                path: path.to_path_buf(),
                row,
                found: record.len(),
                expected: headers.len(),
            });
        }
        let features = feature_idx
            .iter()
            .zip(&feature_names)
            .map(|(&c, name)| {
                let cell = record[c].trim();
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| Error::ParseCell {
                        path: path.to_path_buf(),
                        row,
                        column: name.clone(),
                        value: cell.to_string(),
                    })
            })
            .collect::<Result<Vec<_>>>()?;
        let label = match label_idx {
            Some(c) => parse_label(&record[c], path, row, &schema.label_column)?,
            None => None,
        };
        let truth = match truth_idx {
            Some(c) => parse_label(&record[c], path, row, &schema.truth_column)?,
            None => None,
        };
        let cell_err = |column: &str, value: &str| Error::ParseCell {
            path: path.to_path_buf(),
            row,
            column: column.to_string(),
            value: value.to_string(),
        };
        let domain = match domain_idx.map(|c| record[c].trim()) {
            Some(cell) if !cell.is_empty() => cell
                .parse()
                .map_err(|_| cell_err(&schema.domain_column, cell))?,
            _ => schema.default_domain,
        };
        let node_type = match node_idx.map(|c| record[c].trim()) {
            Some(cell) if !cell.is_empty() => Some(
                cell.parse()
                    .map_err(|_| cell_err(&schema.node_type_column, cell))?,
            ),
            _ => None,
        };
        samples.push(Sample {
            features,
            label,
            truth,
            domain,
            node_type,
        });
    }

    let max_label = samples
        .iter()
        .flat_map(|s| s.label.iter().chain(s.truth.iter()))
        .copied()
        .max();
    let num_classes = schema
        .num_classes
        .unwrap_or_else(|| max_label.map_or(2, |m| (m + 1).max(2)));
    Dataset::new(
        samples,
        num_classes,
        feature_names,
        Provenance::TraceCsv(path.to_path_buf()),
    )
}

/// Writes a dataset in the layout [`load_trace_csv`] reads with an inferred
/// schema. Output is byte-identical for identical datasets.
pub fn write_dataset_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(file);
    let mut header = ds.feature_names.clone();
    header.extend(["domain", "node_type", "label", "true_label"].map(String::from));
    w.write_record(&header)?;
    let opt = |v: Option<usize>| v.map(|l| l.to_string()).unwrap_or_default();
    for s in &ds.samples {
        let mut rec: Vec<String> = s.features.iter().map(|v| format!("{v}")).collect();
        rec.push(s.domain.to_string());
        rec.push(s.node_type.map(|n| n.to_string()).unwrap_or_default());
        rec.push(opt(s.label));
        rec.push(opt(s.truth));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Mean and standard deviation per feature column.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Variance floor below which a column is treated as constant.
const MIN_STD: f64 = 1e-9;

impl ColumnStats {
    pub fn fit<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> Option<Self> {
        let rows: Vec<&[f64]> = rows.collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mut mean = vec![0.0; dim];
        for r in &rows {
            for (m, v) in mean.iter_mut().zip(*r) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; dim];
        for r in &rows {
            for ((s, v), m) in var.iter_mut().zip(*r).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var
            .into_iter()
            .map(|s| {
                let sd = (s / n).sqrt();
                if sd < MIN_STD {
                    1.0
                } else {
                    sd
                }
            })
            .collect();
        Some(Self { mean, std })
    }

    pub fn apply(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = (*v - m) / s;
        }
    }

    pub fn invert(&self, x: &mut [f64]) {
        for ((v, m), s) in x.iter_mut().zip(&self.mean).zip(&self.std) {
            *v = *v * s + m;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NormMode {
    /// Each domain standardized with its own statistics.
    #[default]
    PerDomain,
    /// Both domains standardized with source statistics.
    SourceOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mode: NormMode,
    pub source: Option<ColumnStats>,
    pub target: Option<ColumnStats>,
}

impl NormStats {
    /// Fits statistics on `datasets` jointly (samples grouped by domain tag).
    pub fn fit(datasets: &[&Dataset], mode: NormMode) -> Self {
        let dim = datasets.first().map_or(0, |d| d.feature_dim());
        let rows = |domain: Domain| {
            datasets
                .iter()
                .flat_map(|d| d.samples.iter())
                .filter(move |s| s.domain == domain)
                .map(|s| s.features.as_slice())
        };
        Self {
            mode,
            source: ColumnStats::fit(rows(Domain::Source), dim),
            target: ColumnStats::fit(rows(Domain::Target), dim),
        }
    }

    fn stats_for(&self, domain: Domain) -> Option<&ColumnStats> {
        match (self.mode, domain) {
            (NormMode::SourceOnly, _) | (NormMode::PerDomain, Domain::Source) => {
                self.source.as_ref().or(self.target.as_ref())
            }
            (NormMode::PerDomain, Domain::Target) => self.target.as_ref().or(self.source.as_ref()),
        }
    }

    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        for s in &mut out.samples {
            if let Some(st) = self.stats_for(s.domain) {
                st.apply(&mut s.features);
            }
        }
        out
    }

    pub fn invert(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        for s in &mut out.samples {
            if let Some(st) = self.stats_for(s.domain) {
                st.invert(&mut s.features);
            }
        }
        out
    }
}

/// Standardizes every feature column per domain. A constant column maps to 0.
pub fn zscore_normalize(ds: &Dataset) -> (Dataset, NormStats) {
    zscore_normalize_with(ds, NormMode::PerDomain)
}

pub fn zscore_normalize_with(ds: &Dataset, mode: NormMode) -> (Dataset, NormStats) {
    let stats = NormStats::fit(&[ds], mode);
    (stats.apply(ds), stats)
}

/// Keeps exactly `ceil(fraction·n)` of the `n` visible labels, stratified by
/// class so that each class keeps at least one label when `fraction > 0`.
/// Unlabeled samples stay unlabeled; removed labels move to `truth`.
pub fn mask_labels(ds: &Dataset, fraction: f64, seed: u64) -> Result<Dataset> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "label fraction must be in [0, 1], got {fraction}"
        )));
    }
    let mut by_class: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, s) in ds.samples.iter().enumerate() {
        if let Some(l) = s.label {
            by_class.entry(l).or_default().push(i);
        }
    }
    let n: usize = by_class.values().map(Vec::len).sum();
    let total = ((fraction * n as f64) - 1e-9).ceil().max(0.0) as usize;

    // Floor of each class's exact share, at least one, then hand out the
    // remainder by largest fractional part (ties to the lower class).
    let mut quotas: BTreeMap<usize, usize> = BTreeMap::new();
    let mut remainders = Vec::new();
    for (&c, members) in &by_class {
        let share = fraction * members.len() as f64;
        let mut q = (share + 1e-9).floor() as usize;
        if fraction > 0.0 {
            q = q.max(1);
        }
        q = q.min(members.len());
        remainders.push((share - share.floor(), c));
        quotas.insert(c, q);
    }
    let mut assigned: usize = quotas.values().sum();
    remainders.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    while assigned < total {
        let mut progressed = false;
        for &(_, c) in &remainders {
            if assigned >= total {
                break;
            }
            let q = quotas.get_mut(&c).expect("class present");
            if *q < by_class[&c].len() {
                *q += 1;
                assigned += 1;
                progressed = true;
            }
        }
        if !progressed {
            break;
        }
    }
    // Over-allocation from the one-per-class floor: trim the largest quotas.
    while assigned > total {
        let Some((&c, _)) = quotas
            .iter()
            .filter(|(_, &q)| q > 1)
            .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(a.0)))
        else {
            break;
        };
        *quotas.get_mut(&c).expect("class present") -= 1;
        assigned -= 1;
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = ds.clone();
    for (c, members) in &by_class {
        let mut order = members.clone();
        order.shuffle(&mut rng);
        for &i in &order[quotas[c]..] {
            let s = &mut out.samples[i];
            s.truth = s.truth.or(s.label);
            s.label = None;
        }
    }
    out.provenance = match &ds.provenance {
        Provenance::Synthetic { .. } => ds.provenance.clone(),
        _ => Provenance::Derived,
    };
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    LabelScarcity,
    ClassImbalance,
    HeterogeneousNodes,
    ZeroShift,
}

impl FromStr for ScenarioKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "label_scarcity" => Ok(ScenarioKind::LabelScarcity),
            "class_imbalance" => Ok(ScenarioKind::ClassImbalance),
            "heterogeneous_nodes" => Ok(ScenarioKind::HeterogeneousNodes),
            "zero_shift" => Ok(ScenarioKind::ZeroShift),
            other => Err(Error::InvalidArgument(format!("unknown scenario `{other}`"))),
        }
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScenarioKind::LabelScarcity => "label_scarcity",
            ScenarioKind::ClassImbalance => "class_imbalance",
            ScenarioKind::HeterogeneousNodes => "heterogeneous_nodes",
            ScenarioKind::ZeroShift => "zero_shift",
        })
    }
}

/// Target-domain distortion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ShiftSpec {
    /// Length of the per-class mean translation.
    pub magnitude: f64,
    /// Rotation angle in degrees.
    pub rotation_deg: f64,
    /// Multiplier on the target noise standard deviation.
    pub noise_scale: f64,
}

impl Default for ShiftSpec {
    fn default() -> Self {
        Self {
            magnitude: 1.5,
            rotation_deg: 60.0,
            noise_scale: 1.0,
        }
    }
}

impl ShiftSpec {
    pub fn none() -> Self {
        Self {
            magnitude: 0.0,
            rotation_deg: 0.0,
            noise_scale: 1.0,
        }
    }
}

/// One node-type block of the heterogeneous target domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NodeTypeShift {
    pub node_type: NodeType,
    /// Relative share of target samples.
    pub weight: f64,
    /// Multiplier on the base shift.
    pub strength: f64,
}

/// Deserialized fields are applied over the preset of the given kind.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "ScenarioOverrides")]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    pub num_classes: usize,
    pub feature_dim: usize,
    pub source_samples: usize,
    pub target_samples: usize,
    /// Distance between any two source class means.
    pub class_separation: f64,
    pub label_fraction: f64,
    /// Majority-to-minority class count ratio.
    pub imbalance_ratio: f64,
    /// Apply the imbalance to the source domain as well as the target.
    pub imbalance_in_source: bool,
    pub shift: ShiftSpec,
    pub node_types: Vec<NodeTypeShift>,
    pub seed: u64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioOverrides {
    kind: Option<ScenarioKind>,
    num_classes: Option<usize>,
    feature_dim: Option<usize>,
    source_samples: Option<usize>,
    target_samples: Option<usize>,
    class_separation: Option<f64>,
    label_fraction: Option<f64>,
    imbalance_ratio: Option<f64>,
    imbalance_in_source: Option<bool>,
    shift: Option<ShiftSpec>,
    node_types: Option<Vec<NodeTypeShift>>,
    seed: Option<u64>,
}

impl From<ScenarioOverrides> for ScenarioSpec {
    fn from(o: ScenarioOverrides) -> Self {
        let p = ScenarioSpec::preset(o.kind.unwrap_or(ScenarioKind::LabelScarcity));
        Self {
            kind: p.kind,
            num_classes: o.num_classes.unwrap_or(p.num_classes),
            feature_dim: o.feature_dim.unwrap_or(p.feature_dim),
            source_samples: o.source_samples.unwrap_or(p.source_samples),
            target_samples: o.target_samples.unwrap_or(p.target_samples),
            class_separation: o.class_separation.unwrap_or(p.class_separation),
            label_fraction: o.label_fraction.unwrap_or(p.label_fraction),
            imbalance_ratio: o.imbalance_ratio.unwrap_or(p.imbalance_ratio),
            imbalance_in_source: o.imbalance_in_source.unwrap_or(p.imbalance_in_source),
            shift: o.shift.unwrap_or(p.shift),
            node_types: o.node_types.unwrap_or(p.node_types),
            seed: o.seed.unwrap_or(p.seed),
        }
    }
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self::preset(ScenarioKind::LabelScarcity)
    }
}

impl ScenarioSpec {
    /// Default parameters for each scenario kind. The label-scarcity preset
    /// is the standard shift scenario.
    pub fn preset(kind: ScenarioKind) -> Self {
        let base = Self {
            kind,
            num_classes: 4,
            feature_dim: 8,
            source_samples: 2000,
            target_samples: 2000,
            class_separation: 4.0,
            label_fraction: 0.05,
            imbalance_ratio: 1.0,
            imbalance_in_source: false,
            shift: ShiftSpec::default(),
            node_types: Vec::new(),
            seed: 0,
        };
        match kind {
            ScenarioKind::LabelScarcity => base,
            ScenarioKind::ClassImbalance => Self {
                imbalance_ratio: 10.0,
                imbalance_in_source: true,
                ..base
            },
            ScenarioKind::HeterogeneousNodes => Self {
                node_types: vec![
                    NodeTypeShift {
                        node_type: NodeType::CpuIntensive,
                        weight: 1.0,
                        strength: 0.7,
                    },
                    NodeTypeShift {
                        node_type: NodeType::MemoryIntensive,
                        weight: 1.0,
                        strength: 0.8,
                    },
                    NodeTypeShift {
                        node_type: NodeType::IoBound,
                        weight: 1.0,
                        strength: 0.9,
                    },
                    NodeTypeShift {
                        node_type: NodeType::Mixed,
                        weight: 1.0,
                        strength: 1.0,
                    },
                ],
                ..base
            },
            ScenarioKind::ZeroShift => Self {
                shift: ShiftSpec::none(),
                label_fraction: 1.0,
                ..base
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidArgument(msg));
        if self.num_classes < 2 {
            return bad(format!("num_classes must be >= 2, got {}", self.num_classes));
        }
        if self.feature_dim < 2 {
            return bad(format!("feature_dim must be >= 2, got {}", self.feature_dim));
        }
        if self.source_samples < self.num_classes || self.target_samples < self.num_classes {
            return bad("each domain needs at least one sample per class".into());
        }
        if !(self.label_fraction > 0.0 && self.label_fraction <= 1.0) {
            return bad(format!("label_fraction must be in (0, 1], got {}", self.label_fraction));
        }
        if !(self.imbalance_ratio >= 1.0) || !self.imbalance_ratio.is_finite() {
            return bad(format!("imbalance_ratio must be >= 1, got {}", self.imbalance_ratio));
        }
        if !(self.class_separation > 0.0) || !self.class_separation.is_finite() {
            return bad(format!("class_separation must be positive, got {}", self.class_separation));
        }
        let s = &self.shift;
        if !(s.magnitude >= 0.0) || !s.rotation_deg.is_finite() || !(s.noise_scale > 0.0) {
            return bad(format!("invalid shift {s:?}"));
        }
        if self.kind == ScenarioKind::HeterogeneousNodes {
            if self.node_types.is_empty() {
                return bad("heterogeneous_nodes needs at least one node type".into());
            }
            for nt in &self.node_types {
                if !(nt.weight > 0.0) || !(nt.strength >= 0.0) {
                    return bad(format!("invalid node type block {nt:?}"));
                }
            }
        }
        Ok(())
    }

    /// Stable content hash of the spec, used as dataset provenance.
    pub fn spec_hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        // FNV-1a, 64 bit.
        let mut h: u64 = 0xcbf29ce484222325;
        for b in json.bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
        format!("{h:016x}")
    }

    fn effective_shift(&self) -> ShiftSpec {
        match self.kind {
            ScenarioKind::ZeroShift => ShiftSpec::none(),
            _ => self.shift,
        }
    }
}

/// Splits `total` into per-class counts proportional to
/// `ratio^(−c/(K−1))`, exact sum by largest remainder.
pub fn imbalanced_counts(total: usize, k: usize, ratio: f64) -> Vec<usize> {
    let weights: Vec<f64> = (0..k)
        .map(|c| ratio.powf(-(c as f64) / (k as f64 - 1.0)))
        .collect();
    let wsum: f64 = weights.iter().sum();
    let shares: Vec<f64> = weights.iter().map(|w| w / wsum * total as f64).collect();
    let mut counts: Vec<usize> = shares.iter().map(|s| s.floor() as usize).collect();
    let mut order: Vec<usize> = (0..k).collect();
    order.sort_by(|&a, &b| {
        let ra = shares[a] - shares[a].floor();
        let rb = shares[b] - shares[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    let mut left = total - counts.iter().sum::<usize>();
    for &c in order.iter().cycle() {
        if left == 0 {
            break;
        }
        counts[c] += 1;
        left -= 1;
    }
    counts
}

fn gaussian_vec(rng: &mut ChaCha8Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) {
    let n = dot(v, v).sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
}

/// Gram–Schmidt on `count` Gaussian draws.
fn random_orthonormal(rng: &mut ChaCha8Rng, d: usize, count: usize) -> Vec<Vec<f64>> {
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(count);
    while basis.len() < count {
        let mut v = gaussian_vec(rng, d);
        for b in &basis {
            let p = dot(&v, b);
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= p * y);
        }
        if dot(&v, &v) > 1e-12 {
            normalize(&mut v);
            basis.push(v);
        }
    }
    basis
}

/// Class-conditional distortion applied to one block of target samples.
struct TargetTransform {
    translations: Vec<Vec<f64>>,
    plane: (Vec<f64>, Vec<f64>),
    angle: f64,
    noise_scale: f64,
}

impl TargetTransform {
    fn draw(rng: &mut ChaCha8Rng, means: &[Vec<f64>], shift: &ShiftSpec) -> Self {
        let d = means[0].len();
        let translations = means
            .iter()
            .map(|_| {
                let mut u = gaussian_vec(rng, d);
                normalize(&mut u);
                u.iter_mut().for_each(|x| *x *= shift.magnitude);
                u
            })
            .collect();
        // Rotation plane drawn inside the span of the class means, where a
        // rotation moves class structure rather than isotropic noise.
        let span_dim = means.len().min(d);
        let mut combos = Vec::with_capacity(2);
        for _ in 0..2 {
            let coefs = gaussian_vec(rng, span_dim);
            let mut v = vec![0.0; d];
            for (m, c) in means.iter().zip(&coefs) {
                v.iter_mut().zip(m).for_each(|(x, y)| *x += c * y);
            }
            combos.push(v);
        }
        let mut u1 = combos[0].clone();
        normalize(&mut u1);
        let mut u2 = combos[1].clone();
        let p = dot(&u2, &u1);
        u2.iter_mut().zip(&u1).for_each(|(x, y)| *x -= p * y);
        if dot(&u2, &u2) < 1e-12 {
            u2 = random_orthonormal(rng, d, 2)[1].clone();
            let p = dot(&u2, &u1);
            u2.iter_mut().zip(&u1).for_each(|(x, y)| *x -= p * y);
        }
        normalize(&mut u2);
        Self {
            translations,
            plane: (u1, u2),
            angle: shift.rotation_deg.to_radians(),
            noise_scale: shift.noise_scale,
        }
    }

    /// Same geometry with translation, angle and excess noise scaled.
    fn scaled(&self, strength: f64) -> Self {
        Self {
            translations: self
                .translations
                .iter()
                .map(|t| t.iter().map(|x| x * strength).collect())
                .collect(),
            plane: self.plane.clone(),
            angle: self.angle * strength,
            noise_scale: 1.0 + (self.noise_scale - 1.0) * strength,
        }
    }

    fn rotate(&self, x: &mut [f64]) {
        let (u1, u2) = &self.plane;
        let a = dot(x, u1);
        let b = dot(x, u2);
        let (s, c) = self.angle.sin_cos();
        let (ra, rb) = (c * a - s * b, s * a + c * b);
        for ((v, p), q) in x.iter_mut().zip(u1).zip(u2) {
            *v += (ra - a) * p + (rb - b) * q;
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng, mean: &[f64], class: usize) -> Vec<f64> {
        let noise = gaussian_vec(rng, mean.len());
        let mut x: Vec<f64> = mean
            .iter()
            .zip(&self.translations[class])
            .zip(&noise)
            .map(|((m, t), e)| m + t + self.noise_scale * e)
            .collect();
        self.rotate(&mut x);
        x
    }
}

fn counts_for(spec: &ScenarioSpec, total: usize, imbalanced: bool) -> Vec<usize> {
    if imbalanced {
        imbalanced_counts(total, spec.num_classes, spec.imbalance_ratio)
    } else {
        imbalanced_counts(total, spec.num_classes, 1.0)
    }
}

/// Draws a labeled source domain and a shifted, partially labeled target
/// domain. Fully determined by the spec, seed included.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<(Dataset, Dataset)> {
    spec.validate()?;
    let (k, d) = (spec.num_classes, spec.feature_dim);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    // Class means: orthogonal directions at pairwise distance `separation`.
    let means: Vec<Vec<f64>> = if k <= d {
        random_orthonormal(&mut rng, d, k)
            .into_iter()
            .map(|v| v.into_iter().map(|x| x * spec.class_separation / 2f64.sqrt()).collect())
            .collect()
    } else {
        (0..k)
            .map(|_| {
                let mut v = gaussian_vec(&mut rng, d);
                normalize(&mut v);
                v.into_iter().map(|x| x * spec.class_separation).collect()
            })
            .collect()
    };

    let imbalance_on = spec.kind == ScenarioKind::ClassImbalance || spec.imbalance_ratio > 1.0;
    let source_counts = counts_for(spec, spec.source_samples, imbalance_on && spec.imbalance_in_source);
    let mut source = Vec::with_capacity(spec.source_samples);
    let identity = TargetTransform::draw(&mut rng, &means, &ShiftSpec::none());
    for (c, &n) in source_counts.iter().enumerate() {
        for _ in 0..n {
            source.push(Sample {
                features: identity.sample(&mut rng, &means[c], c),
                label: Some(c),
                truth: Some(c),
                domain: Domain::Source,
                node_type: None,
            });
        }
    }

    // Node types share one drift geometry and differ only in its strength.
    let base = TargetTransform::draw(&mut rng, &means, &spec.effective_shift());
    let blocks: Vec<(Option<NodeType>, usize, TargetTransform)> =
        if spec.kind == ScenarioKind::HeterogeneousNodes {
            let wsum: f64 = spec.node_types.iter().map(|n| n.weight).sum();
            let mut left = spec.target_samples;
            spec.node_types
                .iter()
                .enumerate()
                .map(|(i, nt)| {
                    let n = if i + 1 == spec.node_types.len() {
                        left
                    } else {
                        ((nt.weight / wsum) * spec.target_samples as f64).round() as usize
                    }
                    .min(left);
                    left -= n;
                    (Some(nt.node_type), n, base.scaled(nt.strength))
                })
                .collect()
        } else {
            vec![(None, spec.target_samples, base)]
        };

    let mut target = Vec::with_capacity(spec.target_samples);
    for (node_type, n, transform) in blocks {
        let counts = counts_for(spec, n, imbalance_on);
        for (c, &m) in counts.iter().enumerate() {
            for _ in 0..m {
                target.push(Sample {
                    features: transform.sample(&mut rng, &means[c], c),
                    label: Some(c),
                    truth: Some(c),
                    domain: Domain::Target,
                    node_type,
                });
            }
        }
    }

    source.shuffle(&mut rng);
    target.shuffle(&mut rng);

    let names: Vec<String> = (0..d).map(|i| format!("x{i}")).collect();
    let provenance = Provenance::Synthetic {
        spec_hash: spec.spec_hash(),
    };
    let source = Dataset::new(source, k, names.clone(), provenance.clone())?;
    let target = Dataset::new(target, k, names, provenance)?;
    let target = mask_labels(&target, spec.label_fraction, spec.seed ^ 0x6d61_736b)?;
    Ok((source, target))
}
