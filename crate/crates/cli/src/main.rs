use std::fs::{self, File};
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Parser, Subcommand};
use serde::Deserialize;

use rca_core::data::{
    generate_scenario, load_trace_csv, write_dataset_csv, Dataset, Domain, NormMode, NormStats, ScenarioKind,
    ScenarioSpec, TraceSchema,
};
use rca_core::experiment::{run_experiment, write_report, ExperimentPlan};
use rca_core::metrics::evaluate;
use rca_core::model::{argmax, predict_proba, ArchSpec};
use rca_core::persistence::{fmt_sig9, load_model, save_model, write_history_csv, Checkpoint};
use rca_core::training::{train, TrainConfig};
use rca_core::Checkpoint64;

#[derive(Parser)]
#[command(name = "rca", version, about = "Root-cause classification with domain-adaptive transfer learning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic source/target scenario as two CSV files.
    Generate {
        #[arg(long)]
        scenario: Option<ScenarioKind>,
        /// TOML scenario overrides.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Directory for source.csv and target.csv.
        #[arg(long, env = "RCA_OUTPUT_DIR")]
        out: PathBuf,
    },
    /// Train on a labeled source CSV and a (partly) unlabeled target CSV.
    Train {
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        target: PathBuf,
        /// TOML file with [train] and [arch] sections and a normalization key.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Checkpoint path; the epoch history is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on labeled data and write a metrics CSV.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        report: PathBuf,
    },
    /// Print the predicted class and its confidence for every row.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run a sweep plan and write summary.csv and summary_aggregate.csv.
    Experiment {
        #[arg(long)]
        plan: PathBuf,
        #[arg(long, env = "RCA_OUTPUT_DIR")]
        out: PathBuf,
    },
}

#[derive(Debug, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct TrainFile {
    normalization: NormMode,
    arch: ArchSpec,
    train: TrainConfig,
}

fn read_toml<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

/// Telemetry traces use the fixed column set; anything else (for example
/// files written by `generate`) has its feature columns taken from the header.
fn schema_for(path: &Path, default_domain: Domain, num_classes: Option<usize>) -> Result<TraceSchema> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let mut header = String::new();
    BufReader::new(file)
        .read_line(&mut header)
        .with_context(|| format!("reading {}", path.display()))?;
    let columns: Vec<&str> = header.trim_end().split(',').map(str::trim).collect();
    let trace = TraceSchema::default();
    let base = if trace.feature_columns.iter().all(|c| columns.contains(&c.as_str())) {
        trace
    } else {
        TraceSchema::inferred()
    };
    Ok(TraceSchema {
        default_domain,
        num_classes,
        ..base
    })
}

fn load(path: &Path, domain: Domain, num_classes: Option<usize>) -> Result<Dataset> {
    let schema = schema_for(path, domain, num_classes)?;
    load_trace_csv(path, &schema).with_context(|| format!("loading {}", path.display()))
}

fn generate(scenario: Option<ScenarioKind>, spec: Option<PathBuf>, seed: Option<u64>, out: PathBuf) -> Result<()> {
    let mut table = match &spec {
        Some(path) => read_toml::<toml::Table>(path)?,
        None => toml::Table::new(),
    };
    if let Some(kind) = scenario {
        table.insert("kind".into(), toml::Value::String(kind.to_string()));
    }
    let mut spec: ScenarioSpec = table.try_into().context("invalid scenario spec")?;
    if let Some(seed) = seed {
        spec.seed = seed;
    }
    let (source, target) = generate_scenario(&spec).context("generating scenario")?;
    fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    for (name, ds) in [("source.csv", &source), ("target.csv", &target)] {
        let path = out.join(name);
        write_dataset_csv(ds, &path).with_context(|| format!("writing {}", path.display()))?;
    }
    println!(
        "{} scenario, seed {}: {} source and {} target rows in {}",
        spec.kind,
        spec.seed,
        source.len(),
        target.len(),
        out.display()
    );
    Ok(())
}

fn history_path(checkpoint: &Path) -> PathBuf {
    checkpoint.with_extension("history.csv")
}

fn train_cmd(source: PathBuf, target: PathBuf, config: Option<PathBuf>, out: PathBuf) -> Result<()> {
    let file: TrainFile = match &config {
        Some(path) => read_toml(path)?,
        None => TrainFile::default(),
    };
    let source = load(&source, Domain::Source, None)?;
    let target = load(&target, Domain::Target, None)?;
    ensure!(
        source.feature_dim() == target.feature_dim(),
        "source has {} features but target has {}",
        source.feature_dim(),
        target.feature_dim()
    );
    let k = source.num_classes.max(target.num_classes);
    let (source, target) = (Dataset { num_classes: k, ..source }, Dataset { num_classes: k, ..target });

    let norm = NormStats::fit(&[&source, &target], file.normalization);
    let (s, t) = (norm.apply(&source), norm.apply(&target));
    let arch = ArchSpec {
        input_dim: s.feature_dim(),
        num_classes: k,
        ..file.arch
    };
    let (params, history) = train::<f64>(&s, &t, &arch, &file.train).context("training")?;

    if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    }
    let ckpt = Checkpoint {
        arch,
        params,
        norm: Some(norm),
        seed: file.train.seed,
        config: file.train,
    };
    save_model(&ckpt, &out).with_context(|| format!("writing {}", out.display()))?;
    let hist = history_path(&out);
    write_history_csv(&history, &hist).with_context(|| format!("writing {}", hist.display()))?;
    if let Some(last) = history.epochs.last() {
        println!(
            "trained {} epochs: source accuracy {:.4}, target accuracy {}",
            history.epochs.len(),
            last.source_accuracy,
            last.target_accuracy.map_or("n/a".into(), |a| format!("{a:.4}"))
        );
    }
    println!("checkpoint {} history {}", out.display(), hist.display());
    Ok(())
}

/// Loads a checkpoint and a data file normalized the way training saw it.
fn model_and_data(model: &Path, data: &Path) -> Result<(Checkpoint64, Dataset)> {
    let ckpt: Checkpoint64 = load_model(model).with_context(|| format!("loading model {}", model.display()))?;
    let ds = load(data, Domain::Target, Some(ckpt.arch.num_classes))?;
    ensure!(
        ds.feature_dim() == ckpt.arch.input_dim,
        "{} has {} features but the model expects {}",
        data.display(),
        ds.feature_dim(),
        ckpt.arch.input_dim
    );
    let ds = match &ckpt.norm {
        Some(norm) => norm.apply(&ds),
        None => ds,
    };
    Ok((ckpt, ds))
}

fn eval_cmd(model: PathBuf, data: PathBuf, report: PathBuf) -> Result<()> {
    let (ckpt, ds) = model_and_data(&model, &data)?;
    let rows: Vec<usize> = (0..ds.len()).filter(|&i| ds.samples[i].eval_label().is_some()).collect();
    if rows.is_empty() {
        bail!("{} has no labeled rows to evaluate", data.display());
    }
    let ds = ds.subset(&rows);
    let labels: Vec<usize> = ds.samples.iter().filter_map(|s| s.eval_label()).collect();
    let probs = predict_proba(&ds.feature_matrix::<f64>(), &ckpt.params).context("scoring")?;
    let m = evaluate(&probs, &labels).context("computing metrics")?;

    let mut out = String::from("metric,value\n");
    out += &format!("samples,{}\n", labels.len());
    out += &format!("accuracy,{}\n", fmt_sig9(m.accuracy));
    out += &format!("macro_f1,{}\n", fmt_sig9(m.macro_f1));
    out += &format!("macro_auc,{}\n", fmt_sig9(m.macro_auc));
    for (c, f1) in m.per_class_f1.iter().enumerate() {
        out += &format!("f1_class_{c},{}\n", fmt_sig9(*f1));
    }
    fs::write(&report, out).with_context(|| format!("writing {}", report.display()))?;
    println!(
        "{} rows: accuracy {:.4}, macro-F1 {:.4}, macro-AUC {:.4}",
        labels.len(),
        m.accuracy,
        m.macro_f1,
        m.macro_auc
    );
    Ok(())
}

fn predict_cmd(model: PathBuf, data: PathBuf) -> Result<()> {
    let (ckpt, ds) = model_and_data(&model, &data)?;
    let probs = predict_proba(&ds.feature_matrix::<f64>(), &ckpt.params).context("scoring")?;
    let stdout = std::io::stdout();
    let mut w = stdout.lock();
    writeln!(w, "row,class,confidence")?;
    for r in 0..probs.rows() {
        let c = argmax(probs.row(r));
        writeln!(w, "{r},{c},{}", fmt_sig9(probs[(r, c)]))?;
    }
    Ok(())
}

fn experiment_cmd(plan: PathBuf, out: PathBuf) -> Result<()> {
    let plan: ExperimentPlan = read_toml(&plan)?;
    let report = run_experiment(&plan).context("running experiment")?;
    write_report(&report, &out).with_context(|| format!("writing report to {}", out.display()))?;
    println!("{} rows written to {}", report.rows.len(), out.join("summary.csv").display());
    for f in &report.failures {
        eprintln!("cell failed: {}: {}", f.cell, f.error);
    }
    ensure!(report.failures.is_empty(), "{} cells failed", report.failures.len());
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate { scenario, spec, seed, out } => generate(scenario, spec, seed, out),
        Command::Train { source, target, config, out } => train_cmd(source, target, config, out),
        Command::Eval { model, data, report } => eval_cmd(model, data, report),
        Command::Predict { model, data } => predict_cmd(model, data),
        Command::Experiment { plan, out } => experiment_cmd(plan, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
