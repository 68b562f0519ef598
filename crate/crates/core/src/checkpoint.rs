//! Model checkpoints, optimizer-state sidecars, and training logs.

use std::fmt;
use std::fs;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::baselines::{MfParameters, MfScorer};
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::evaluation::Scorer;
use crate::probability::{HistogramStore, PwfKind};
use crate::training::WeuScorer;
use crate::utility::WeuParameters;

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const TRAIN_STATE_FILE: &str = "train_state.json";
pub const TRAIN_LOG_FILE: &str = "train_log.csv";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ModelType {
    #[serde(rename = "eu")]
    Eu,
    #[serde(rename = "tf")]
    Tf,
    #[serde(rename = "tf+")]
    TfPlus,
    #[serde(rename = "prelec")]
    Prelec,
    #[serde(rename = "prelec+")]
    PrelecPlus,
    #[serde(rename = "cf-lfm")]
    CfLfm,
    #[serde(rename = "bpr")]
    Bpr,
}

impl ModelType {
    pub const ALL: [ModelType; 7] = [
        ModelType::Eu,
        ModelType::Tf,
        ModelType::TfPlus,
        ModelType::Prelec,
        ModelType::PrelecPlus,
        ModelType::CfLfm,
        ModelType::Bpr,
    ];

    /// The weighting kind of a utility model; `None` for the baselines.
    pub fn kind(self) -> Option<PwfKind> {
        match self {
            ModelType::Eu => Some(PwfKind::Identity),
            ModelType::Tf => Some(PwfKind::Tf),
            ModelType::TfPlus => Some(PwfKind::TfPlus),
            ModelType::Prelec => Some(PwfKind::Prelec),
            ModelType::PrelecPlus => Some(PwfKind::PrelecPlus),
            ModelType::CfLfm | ModelType::Bpr => None,
        }
    }

    pub fn from_kind(kind: PwfKind) -> Self {
        match kind {
            PwfKind::Identity => ModelType::Eu,
            PwfKind::Tf => ModelType::Tf,
            PwfKind::TfPlus => ModelType::TfPlus,
            PwfKind::Prelec => ModelType::Prelec,
            PwfKind::PrelecPlus => ModelType::PrelecPlus,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ModelType::CfLfm => "cf-lfm",
            ModelType::Bpr => "bpr",
            other => other.kind().map(PwfKind::name).unwrap_or_default(),
        }
    }
}

impl fmt::Display for ModelType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ModelType {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ModelType::ALL
            .into_iter()
            .find(|m| m.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| {
                let names: Vec<_> = ModelType::ALL.iter().map(|m| m.name()).collect();
                Error::Config(format!("unknown model {s:?}; expected one of {}", names.join(", ")))
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelParameters {
    Weu(WeuParameters),
    Mf(MfParameters),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub model_type: ModelType,
    pub seed: u64,
    pub parameters: ModelParameters,
}

impl Checkpoint {
    pub fn weu(params: WeuParameters, seed: u64) -> Self {
        Self { model_type: ModelType::from_kind(params.kind), seed, parameters: ModelParameters::Weu(params) }
    }

    pub fn mf(model_type: ModelType, params: MfParameters, seed: u64) -> Self {
        Self { model_type, seed, parameters: ModelParameters::Mf(params) }
    }

    fn check_consistent(&self) -> Result<()> {
        let ok = match (&self.parameters, self.model_type.kind()) {
            (ModelParameters::Weu(p), Some(kind)) => p.kind == kind && p.check_shape().is_ok(),
            (ModelParameters::Mf(_), None) => true,
            _ => false,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("parameters do not match model type {}", self.model_type)))
        }
    }

    pub fn check_against(&self, dataset: &SplitDataset) -> Result<()> {
        match &self.parameters {
            ModelParameters::Weu(p) => p.check_against(dataset),
            ModelParameters::Mf(p) => p.check_against(dataset),
        }
    }

    pub fn weu_params(&self) -> Option<&WeuParameters> {
        match &self.parameters {
            ModelParameters::Weu(p) => Some(p),
            ModelParameters::Mf(_) => None,
        }
    }

    /// Deterministic scorer; utility models need the training histograms.
    pub fn scorer<'a>(&'a self, hists: &'a HistogramStore) -> Box<dyn Scorer + 'a> {
        match &self.parameters {
            ModelParameters::Weu(p) => Box::new(WeuScorer::new(p, hists)),
            ModelParameters::Mf(p) => Box::new(MfScorer(p)),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let ckpt: Checkpoint =
            serde_json::from_str(&text).map_err(|e| Error::File { path: path.into(), message: e.to_string() })?;
        ckpt.check_consistent().map_err(|e| Error::File { path: path.into(), message: e.to_string() })?;
        Ok(ckpt)
    }
}

/// How per-epoch random streams are derived. Every stream is a ChaCha8
/// generator keyed by `(seed, purpose, epoch)`, so `(seed, next_epoch)` is
/// the full generator state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub scheme: String,
    pub seed: u64,
    pub next_epoch: usize,
}

impl RngState {
    pub fn new(seed: u64, next_epoch: usize) -> Self {
        Self { scheme: "chacha8/seed-purpose-epoch".into(), seed, next_epoch }
    }
}

/// Optimizer sidecar written next to a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainStateDoc {
    pub model_type: ModelType,
    pub epoch: usize,
    pub best_epoch: usize,
    pub rng: RngState,
    pub momentum: ModelParameters,
}

impl TrainStateDoc {
    pub fn save(&self, path: &Path) -> Result<()> {
        write_json(path, self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_str(&text).map_err(|e| Error::File { path: path.into(), message: e.to_string() })
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut json = serde_json::to_string(value)?;
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

/// Writes `epoch,objective,<metric>` rows.
pub fn write_train_log<W: Write + ?Sized>(w: &mut W, metric: &str, rows: &[(usize, f64, f64)]) -> std::io::Result<()> {
    writeln!(w, "epoch,objective,{metric}")?;
    for (epoch, objective, value) in rows {
        writeln!(w, "{epoch},{objective},{value}")?;
    }
    Ok(())
}
