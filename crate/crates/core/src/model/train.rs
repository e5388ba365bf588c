//! Mini-batch training with Adam and validation-based model selection.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{cross_entropy, total_loss, LossConfig};
use super::net::{forward_pair, forward_single, predict, AidNetParams, NetMode, PairBatch, Prediction};
use crate::dataset::{stack, Acquisition, Sample};
use crate::error::{Error, Result};
use crate::eval::{binary_accuracy, roc_auc};
use crate::volgrid::{adam_step, AdamState};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub loss: LossConfig,
    pub seed: u64,
    pub mode: NetMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            max_epochs: 100,
            batch_size: 2,
            loss: LossConfig::default(),
            seed: 0,
            mode: NetMode::Aid,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::InvalidArgument(format!("lr must be >= 0, got {}", self.lr)));
        }
        if self.max_epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidArgument("epochs and batch size must be >= 1".into()));
        }
        self.loss.validate()
    }
}

/// Per-epoch means over training batches.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub total_loss: f64,
    pub ce1: f64,
    pub ce2: f64,
    /// The contrastive term as it enters the total, i.e. already scaled by lambda.
    pub contrastive: f64,
    pub val_binary_accuracy: Option<f64>,
    pub val_auc: Option<f64>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation binary accuracy.
    pub best: AidNetParams,
    pub last: AidNetParams,
    /// 1-based.
    pub best_epoch: usize,
    pub log: Vec<EpochRecord>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepLosses {
    pub total: f64,
    pub ce1: f64,
    pub ce2: f64,
    /// Weighted by lambda.
    pub contrastive: f64,
}

/// Forward, backward and one Adam update on a batch of samples.
pub fn train_step(
    params: &mut AidNetParams,
    state: &mut AdamState,
    batch: &[&Sample],
    cfg: &TrainConfig,
) -> Result<StepLosses> {
    let bound = params.bind()?;
    let labels: Vec<usize> = batch.iter().map(|s| s.class).collect();
    let scan = stack(batch, Acquisition::Scan)?;
    let (loss, out) = if cfg.mode.is_dual() {
        let rescan = stack(batch, Acquisition::Rescan)?;
        let pair = PairBatch::new(scan, rescan, labels.clone(), labels)?;
        let out = forward_pair(&bound, &pair)?;
        let terms = total_loss(&out, &pair, &cfg.loss)?;
        let losses = StepLosses {
            total: terms.total.item()?,
            ce1: terms.ce1,
            ce2: terms.ce2,
            contrastive: cfg.loss.lambda * terms.contrastive,
        };
        (terms.total, losses)
    } else {
        let out = forward_single(&bound, &scan)?;
        let ce = cross_entropy(&out.logits, &labels, &cfg.loss)?;
        let v = ce.item()?;
        (
            ce,
            StepLosses {
                total: v,
                ce1: v,
                ..Default::default()
            },
        )
    };
    if !out.total.is_finite() {
        return Err(Error::NonFinite { op: "loss" });
    }
    loss.backward()?;
    adam_step(params.param_set_mut(), &bound.grads(), state)?;
    Ok(out)
}

/// Scan-only inference over `samples` in chunks of `batch_size`.
pub fn evaluate(params: &AidNetParams, samples: &[Sample], batch_size: usize) -> Result<Vec<Prediction>> {
    let refs: Vec<&Sample> = samples.iter().collect();
    let mut preds = Vec::with_capacity(samples.len());
    for chunk in refs.chunks(batch_size.max(1)) {
        preds.extend(predict(params, &stack(chunk, Acquisition::Scan)?)?);
    }
    Ok(preds)
}

fn validation_scores(params: &AidNetParams, val: &[Sample], batch_size: usize) -> Result<(Option<f64>, Option<f64>)> {
    if val.is_empty() {
        return Ok((None, None));
    }
    let preds = evaluate(params, val, batch_size)?;
    let truth: Vec<usize> = val.iter().map(|s| s.class).collect();
    let classes: Vec<usize> = preds.iter().map(|p| p.class).collect();
    let scores: Vec<f64> = preds.iter().map(|p| p.binary_score).collect();
    let positive: Vec<bool> = val.iter().map(Sample::is_positive).collect();
    let auc = roc_auc(&scores, &positive).ok().map(|r| r.auc);
    Ok((binary_accuracy(&truth, &classes), auc))
}

/// Train from a fresh initialisation. `on_epoch` sees each record as soon as
/// it is complete. Without validation data the last epoch is kept as best.
pub fn train(
    train_set: &[Sample],
    val: &[Sample],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::MissingData("empty training set".into()));
    }
    let mut params = AidNetParams::init(cfg.mode.uses_sag(), cfg.seed)?;
    let mut state = AdamState::new(params.param_set(), cfg.lr);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_ba7c);
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    let mut log = Vec::with_capacity(cfg.max_epochs);
    let mut best: Option<(f64, usize, AidNetParams)> = None;
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut sums = StepLosses::default();
        let mut batches = 0usize;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch: Vec<&Sample> = idx.iter().map(|&i| &train_set[i]).collect();
            let step = train_step(&mut params, &mut state, &batch, cfg).map_err(|e| {
                if e.is_numeric() {
                    Error::NumericFailure { epoch, batch: b + 1 }
                } else {
                    e
                }
            })?;
            sums.total += step.total;
            sums.ce1 += step.ce1;
            sums.ce2 += step.ce2;
            sums.contrastive += step.contrastive;
            batches += 1;
        }
        let nb = batches as f64;
        let (val_acc, val_auc) = validation_scores(&params, val, cfg.batch_size.max(4))?;
        let record = EpochRecord {
            epoch,
            total_loss: sums.total / nb,
            ce1: sums.ce1 / nb,
            ce2: sums.ce2 / nb,
            contrastive: sums.contrastive / nb,
            val_binary_accuracy: val_acc,
            val_auc,
        };
        on_epoch(&record);
        log.push(record);

        let score = val_acc.unwrap_or(f64::NEG_INFINITY);
        let improves = match &best {
            None => true,
            Some((s, _, _)) => score > *s || (val.is_empty() && epoch == cfg.max_epochs),
        };
        if improves {
            best = Some((score, epoch, params.clone()));
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch ran");
    Ok(TrainOutcome {
        best,
        last: params,
        best_epoch,
        log,
    })
}

pub const LOG_HEADER: &str = "epoch,total_loss,ce1,ce2,contrastive,val_binary_accuracy";

/// The training log as CSV; a missing validation accuracy is left empty.
pub fn log_csv(log: &[EpochRecord]) -> String {
    let mut s = format!("{LOG_HEADER}\n");
    for r in log {
        let val = r.val_binary_accuracy.map(|v| v.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.total_loss, r.ce1, r.ce2, r.contrastive, val
        );
    }
    s
}
