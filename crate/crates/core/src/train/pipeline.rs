//! End-to-end fitting: standardize, train under the configured ablation,
//! evaluate the selected bundle on held-out rows.

use serde::{Deserialize, Serialize};

use super::ablation::{train_encoder_kl, train_vae};
use super::bundle::ModelBundle;
use super::config::{Ablation, MatchingMode, TrainConfig};
use super::generative::{build_inference_pairs, train_decoder_stage, LatentCache};
use super::inference::{train_encoder_stage, transport_loss};
use super::{EpochLog, StageOutcome};
use crate::data::{split_chronological, SplitSpec, Standardizer, TabularDataset};
use crate::error::{ensure_len, Result};
use crate::metrics::{regression_metrics, LabelSpace, MetricReport};

/// Raw (unscaled) partitions.
#[derive(Debug, Clone)]
pub struct Splits {
    pub train: TabularDataset,
    pub valid: TabularDataset,
    pub test: TabularDataset,
}

impl Splits {
    pub fn chronological(ds: &TabularDataset, spec: &SplitSpec) -> Result<Self> {
        let (train, valid, test) = split_chronological(ds, spec)?;
        Ok(Self { train, valid, test })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitOutcome {
    pub bundle: ModelBundle,
    pub logs: Vec<EpochLog>,
    pub test_standardized: MetricReport,
    pub test_original: MetricReport,
    pub best_valid_sse: f64,
    pub best_epoch: usize,
    /// Mean encoder transport loss before the encoder stage and after its
    /// final epoch (full mode only).
    pub transport_initial: Option<f64>,
    pub transport_final: Option<f64>,
}

/// Test metrics of `bundle` on raw rows, in standardized and original label units.
pub fn evaluate(bundle: &ModelBundle, raw: &TabularDataset) -> Result<(MetricReport, MetricReport)> {
    let scaled = bundle.standardizer.apply(raw)?;
    let pred = bundle.predict_labels(&scaled)?;
    let standardized = regression_metrics(scaled.y(), &pred, LabelSpace::Standardized)?;
    let pred_orig: Vec<f64> = pred.iter().map(|&p| bundle.standardizer.invert_label(p)).collect();
    let original = regression_metrics(raw.y(), &pred_orig, LabelSpace::Original)?;
    Ok((standardized, original))
}

/// Trains on `splits.train`, selects on `splits.valid` and reports on
/// `splits.test`. The standardizer is fitted on training rows only.
pub fn fit(splits: &Splits, cfg: &TrainConfig) -> Result<FitOutcome> {
    cfg.validate()?;
    let n_features = splits.train.n_features();
    ensure_len("validation feature count", n_features, splits.valid.n_features())?;
    ensure_len("test feature count", n_features, splits.test.n_features())?;
    let standardizer = Standardizer::fit(&splits.train)?;
    let train = standardizer.apply(&splits.train)?;
    let valid = standardizer.apply(&splits.valid)?;
    let mut bundle = ModelBundle::init(cfg, n_features, standardizer)?;
    let mut logs = Vec::new();
    let mut transport = (None, None);

    let outcome: StageOutcome = match cfg.ablation {
        Ablation::NoKprox => train_vae(&bundle, &train, &valid, cfg)?,
        Ablation::Full | Ablation::NoWass => {
            let mut cache = LatentCache::new(train.len());
            logs.extend(train_decoder_stage(&mut bundle, &train, cfg, &mut cache)?);
            if cfg.ablation == Ablation::Full {
                let pairs = build_inference_pairs(&bundle, &train, cfg, &cache, cfg.matching_mode)?;
                let initial = transport_loss(&bundle, &pairs, cfg)?;
                let out = train_encoder_stage(&bundle, &pairs, &valid, cfg)?;
                transport = (Some(initial), Some(transport_loss(&out.last, &pairs, cfg)?));
                out
            } else {
                let pairs = build_inference_pairs(&bundle, &train, cfg, &cache, MatchingMode::PerSampleSet)?;
                train_encoder_kl(&bundle, &pairs, &train, &valid, cfg)?
            }
        }
    };
    logs.extend(outcome.logs);
    let (test_standardized, test_original) = evaluate(&outcome.best, &splits.test)?;
    Ok(FitOutcome {
        bundle: outcome.best,
        logs,
        test_standardized,
        test_original,
        best_valid_sse: outcome.best_valid_sse,
        best_epoch: outcome.best_epoch,
        transport_initial: transport.0,
        transport_final: transport.1,
    })
}
