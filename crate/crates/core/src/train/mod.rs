//! Two-stage training: particle inference drives decoder learning, then the
//! encoder is fitted to the inferred latents by optimal transport.

mod ablation;
mod bundle;
mod config;
mod generative;
mod inference;
mod pipeline;

use std::io::{self, Write};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use ablation::{moment_match, train_encoder_kl, train_vae};
pub use bundle::{EncoderHead, ModelBundle, Prediction};
pub use config::{override_field, Ablation, MatchingMode, TrainConfig};
pub use generative::{build_inference_pairs, infer_latents, particle_nll, train_decoder_stage, InferencePairSet, LatentCache};
pub use inference::{train_encoder_stage, transport_loss, transport_plan};
pub use pipeline::{evaluate, fit, FitOutcome, Splits};

use crate::data::TabularDataset;
use crate::error::Result;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Decoder,
    Encoder,
    Vae,
    EncoderKl,
}

impl Stage {
    pub fn as_str(self) -> &'static str {
        match self {
            Stage::Decoder => "decoder",
            Stage::Encoder => "encoder",
            Stage::Vae => "vae",
            Stage::EncoderKl => "encoder_kl",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub stage: Stage,
    pub loss: f64,
    pub valid_sse: Option<f64>,
}

/// Columns `epoch,stage,loss,valid_sse`; the last is blank when not measured.
pub fn write_logs_csv<W: Write>(out: &mut W, logs: &[EpochLog]) -> io::Result<()> {
    writeln!(out, "epoch,stage,loss,valid_sse")?;
    for l in logs {
        let sse = l.valid_sse.map(|v| v.to_string()).unwrap_or_default();
        writeln!(out, "{},{},{},{}", l.epoch, l.stage.as_str(), l.loss, sse)?;
    }
    Ok(())
}

/// Row indices shuffled by a per-epoch stream and cut into batches.
pub(crate) fn minibatches(n: usize, batch_size: usize, seed: u64, stream: &str, epoch: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut crate::rng::stream(seed, stream, epoch as u64));
    idx.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect()
}

/// Result of a stage that selects its best bundle on validation data.
#[derive(Debug, Clone)]
pub struct StageOutcome {
    pub best: ModelBundle,
    pub best_valid_sse: f64,
    /// 0 when no epoch beat the starting bundle.
    pub best_epoch: usize,
    /// Parameters after the final epoch, whether or not they were selected.
    pub last: ModelBundle,
    pub logs: Vec<EpochLog>,
}

pub(crate) struct BestTracker {
    best: ModelBundle,
    sse: f64,
    epoch: usize,
}

impl BestTracker {
    pub(crate) fn new(initial: &ModelBundle, valid: &TabularDataset) -> Result<Self> {
        if valid.is_empty() {
            return Err(crate::error::Error::EmptyInput("validation rows"));
        }
        Ok(Self {
            best: initial.clone(),
            sse: initial.sse(valid)?,
            epoch: 0,
        })
    }

    /// Records a candidate and returns its validation SSE. Replaces the best
    /// only on strict improvement.
    pub(crate) fn offer(&mut self, candidate: &ModelBundle, valid: &TabularDataset, epoch: usize) -> Result<f64> {
        let sse = candidate.sse(valid)?;
        if sse < self.sse {
            self.best = candidate.clone();
            self.sse = sse;
            self.epoch = epoch;
        }
        Ok(sse)
    }

    pub(crate) fn finish(self, last: ModelBundle, logs: Vec<EpochLog>) -> StageOutcome {
        StageOutcome {
            best: self.best,
            best_valid_sse: self.sse,
            best_epoch: self.epoch,
            last,
            logs,
        }
    }
}
