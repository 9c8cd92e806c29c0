use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{Ablation, MatchingMode, TrainConfig};
use crate::data::{Standardizer, TabularDataset};
use crate::error::{ensure_len, Error, Result};
use crate::numcore::MlpParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderHead {
    /// Encoder output is the latent itself.
    Deterministic,
    /// Encoder output is `[mean; log-variance]`.
    Gaussian,
}

/// Encoder, decoder and the data scaling they were trained under.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelBundle {
    pub encoder: MlpParams<f64>,
    pub decoder: MlpParams<f64>,
    pub latent_dim: usize,
    pub head: EncoderHead,
    pub standardizer: Standardizer,
    pub config_hash: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub y: f64,
    pub x_reconstruction: Vec<f64>,
    pub z: Vec<f64>,
}

impl ModelBundle {
    /// Randomly initialized networks for `input_dim` features.
    pub fn init(cfg: &TrainConfig, input_dim: usize, standardizer: Standardizer) -> Result<Self> {
        cfg.validate()?;
        let mut enc_rng = crate::rng::stream(cfg.seed, "encoder-init", 0);
        let mut dec_rng = crate::rng::stream(cfg.seed, "decoder-init", 0);
        let head = match (cfg.ablation, cfg.matching_mode) {
            (Ablation::Full, MatchingMode::BatchMean) => EncoderHead::Deterministic,
            _ => EncoderHead::Gaussian,
        };
        Ok(Self {
            encoder: MlpParams::random(&cfg.encoder_dims(input_dim), cfg.activation, &mut enc_rng)?,
            decoder: MlpParams::random(&cfg.decoder_dims(input_dim), cfg.activation, &mut dec_rng)?,
            latent_dim: cfg.latent_dim,
            head,
            standardizer,
            config_hash: cfg.hash(),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Latent code for standardized features; the mean for a Gaussian head.
    pub fn encode(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.encoder.predict(x)?;
        out.truncate(self.latent_dim);
        Ok(out)
    }

    /// Encoder then decoder; the label is the last decoder output.
    pub fn predict(&self, x: &[f64]) -> Result<Prediction> {
        let z = self.encode(x)?;
        let mut out = self.decoder.predict(&z)?;
        let y = out.pop().expect("decoder has at least one output");
        Ok(Prediction {
            y,
            x_reconstruction: out,
            z,
        })
    }

    /// Label predictions for every row, in the dataset's own scaling.
    pub fn predict_labels(&self, ds: &TabularDataset) -> Result<Vec<f64>> {
        ensure_len("prediction feature count", self.input_dim(), ds.n_features())?;
        ds.x().row_iter().map(|x| self.predict(x).map(|p| p.y)).collect()
    }

    pub fn sse(&self, ds: &TabularDataset) -> Result<f64> {
        let pred = self.predict_labels(ds)?;
        crate::metrics::sum_squared_error(ds.y(), &pred)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let json = serde_json::to_string_pretty(self)?;
        fs::write(path, json).map_err(|e| Error::io(format!("writing {}", path.display()), e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(format!("reading {}", path.display()), e))?;
        let bundle: Self = serde_json::from_str(&text)?;
        ensure_len("bundle latent width", bundle.latent_dim, bundle.decoder.input_dim())?;
        Ok(bundle)
    }
}
