//! Checkpoint documents and training-history CSV.
//!
//! A checkpoint is UTF-8 text: one header line
//! `RCA-CHECKPOINT format_version=<n>` followed by a JSON body. Every model
//! parameter and normalization statistic is stored as the hex bit pattern of
//! the float, so a round trip is bit-exact.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{ColumnStats, NormMode, NormStats};
use crate::error::{Error, Result};
use crate::model::{ArchSpec, Dense, Mlp, ModelParams};
use crate::numeric::{Activation, Matrix};
use crate::scalar::Scalar;
use crate::training::{TrainConfig, TrainHistory};

pub const CHECKPOINT_MAGIC: &str = "RCA-CHECKPOINT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub arch: ArchSpec,
    pub params: ModelParams<T>,
    pub norm: Option<NormStats>,
    pub config: TrainConfig,
    pub seed: u64,
}

#[derive(Serialize, Deserialize)]
struct LayerDoc {
    activation: Activation,
    rows: usize,
    cols: usize,
    weight: Vec<String>,
    bias: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct ParamsDoc {
    extractor: Vec<LayerDoc>,
    classifier: Vec<LayerDoc>,
    discriminator: Vec<LayerDoc>,
}

#[derive(Serialize, Deserialize)]
struct StatsDoc {
    mean: Vec<String>,
    std: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct NormDoc {
    mode: NormMode,
    source: Option<StatsDoc>,
    target: Option<StatsDoc>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointDoc {
    scalar: String,
    seed: u64,
    arch: ArchSpec,
    config: TrainConfig,
    norm: Option<NormDoc>,
    params: ParamsDoc,
}

fn encode<T: Scalar>(values: &[T]) -> Vec<String> {
    values.iter().map(|v| v.to_bits_hex()).collect()
}

fn decode<T: Scalar>(values: &[String], what: &str) -> Result<Vec<T>> {
    values
        .iter()
        .map(|s| {
            T::from_bits_hex(s)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("bad {what} value `{s}`")))
        })
        .collect()
}

fn encode_mlp<T: Scalar>(mlp: &Mlp<T>) -> Vec<LayerDoc> {
    mlp.layers
        .iter()
        .map(|l| LayerDoc {
            activation: l.activation,
            rows: l.weight.rows(),
            cols: l.weight.cols(),
            weight: encode(l.weight.as_slice()),
            bias: encode(&l.bias),
        })
        .collect()
}

fn decode_mlp<T: Scalar>(docs: &[LayerDoc], name: &str) -> Result<Mlp<T>> {
    let layers = docs
        .iter()
        .map(|d| {
            let weight = Matrix::from_vec(d.rows, d.cols, decode(&d.weight, name)?)
                .map_err(|e| Error::CorruptCheckpoint(format!("{name}: {e}")))?;
            let bias = decode(&d.bias, name)?;
            if bias.len() != d.cols {
                return Err(Error::CorruptCheckpoint(format!(
                    "{name}: bias has {} entries, layer has {} outputs",
                    bias.len(),
                    d.cols
                )));
            }
            Ok(Dense {
                weight,
                bias,
                activation: d.activation,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Mlp { layers })
}

fn encode_stats(s: &ColumnStats) -> StatsDoc {
    StatsDoc {
        mean: encode(&s.mean),
        std: encode(&s.std),
    }
}

fn decode_stats(s: &StatsDoc) -> Result<ColumnStats> {
    Ok(ColumnStats {
        mean: decode(&s.mean, "normalization mean")?,
        std: decode(&s.std, "normalization std")?,
    })
}

/// Renders a checkpoint document.
pub fn checkpoint_to_string<T: Scalar>(ckpt: &Checkpoint<T>) -> Result<String> {
    let doc = CheckpointDoc {
        scalar: T::NAME.to_string(),
        seed: ckpt.seed,
        arch: ckpt.arch.clone(),
        config: ckpt.config.clone(),
        norm: ckpt.norm.as_ref().map(|n| NormDoc {
            mode: n.mode,
            source: n.source.as_ref().map(encode_stats),
            target: n.target.as_ref().map(encode_stats),
        }),
        params: ParamsDoc {
            extractor: encode_mlp(&ckpt.params.extractor),
            classifier: encode_mlp(&ckpt.params.classifier),
            discriminator: encode_mlp(&ckpt.params.discriminator),
        },
    };
    let body = serde_json::to_string_pretty(&doc)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    Ok(format!(
        "{CHECKPOINT_MAGIC} format_version={FORMAT_VERSION}\n{body}\n"
    ))
}

/// Parses a checkpoint document. Nothing is returned unless every field
/// decodes and the parameters match the stored architecture.
pub fn checkpoint_from_str<T: Scalar>(text: &str) -> Result<Checkpoint<T>> {
    let (header, body) = text
        .split_once('\n')
        .ok_or_else(|| Error::CorruptCheckpoint("missing header line".into()))?;
    let version = header
        .trim_end()
        .strip_prefix(CHECKPOINT_MAGIC)
        .and_then(|rest| rest.trim().strip_prefix("format_version="))
        .ok_or_else(|| Error::CorruptCheckpoint(format!("bad header `{header}`")))?;
    if version.parse::<u32>().ok() != Some(FORMAT_VERSION) {
        return Err(Error::VersionMismatch {
            found: version.to_string(),
            expected: FORMAT_VERSION,
        });
    }

    let doc: CheckpointDoc =
        serde_json::from_str(body).map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    if doc.scalar != T::NAME {
        return Err(Error::CorruptCheckpoint(format!(
            "checkpoint holds {} parameters, requested {}",
            doc.scalar,
            T::NAME
        )));
    }
    let params = ModelParams {
        extractor: decode_mlp(&doc.params.extractor, "extractor")?,
        classifier: decode_mlp(&doc.params.classifier, "classifier")?,
        discriminator: decode_mlp(&doc.params.discriminator, "discriminator")?,
    };
    params
        .check_against(&doc.arch)
        .map_err(|e| Error::CorruptCheckpoint(e.to_string()))?;
    let norm = match &doc.norm {
        Some(n) => Some(NormStats {
            mode: n.mode,
            source: n.source.as_ref().map(decode_stats).transpose()?,
            target: n.target.as_ref().map(decode_stats).transpose()?,
        }),
        None => None,
    };
    Ok(Checkpoint {
        arch: doc.arch,
        params,
        norm,
        config: doc.config,
        seed: doc.seed,
    })
}

pub fn save_model<T: Scalar>(ckpt: &Checkpoint<T>, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let text = checkpoint_to_string(ckpt)?;
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn load_model<T: Scalar>(path: impl AsRef<Path>) -> Result<Checkpoint<T>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_str(&text)
}

pub const HISTORY_COLUMNS: [&str; 9] = [
    "epoch",
    "l_source",
    "l_mmd",
    "l_adv",
    "l_total",
    "source_acc",
    "target_acc",
    "pseudo_count",
    "grl_coef",
];

/// Nine significant digits in scientific notation.
pub fn fmt_sig9(v: f64) -> String {
    format!("{v:.8e}")
}

pub fn history_to_csv(history: &TrainHistory) -> String {
    let mut out = HISTORY_COLUMNS.join(",");
    out.push('\n');
    for r in &history.epochs {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.epoch,
            fmt_sig9(r.losses.l_source),
            fmt_sig9(r.losses.l_mmd),
            fmt_sig9(r.losses.l_adv),
            fmt_sig9(r.losses.l_total),
            fmt_sig9(r.source_accuracy),
            r.target_accuracy.map(fmt_sig9).unwrap_or_default(),
            r.pseudo_label_count,
            fmt_sig9(r.grl_coefficient),
        );
    }
    out
}

pub fn write_history_csv(history: &TrainHistory, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    if history.epochs.is_empty() {
        return Err(Error::InvalidArgument("history has no epochs".into()));
    }
    std::fs::write(path, history_to_csv(history)).map_err(|e| Error::io(path, e))
}
