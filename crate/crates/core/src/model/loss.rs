//! Training objective: cross-entropy on each path plus a weighted
//! contrastive term on the pair distance.

use super::net::{PairBatch, PairOutput, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::volgrid::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct LossConfig {
    /// Weight of the contrastive term.
    pub lambda: f64,
    /// Distance beyond which dissimilar pairs stop contributing.
    pub margin: f64,
    pub class_weights: Option<[f64; NUM_CLASSES]>,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            lambda: 0.001,
            margin: 1.0,
            class_weights: None,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be >= 0, got {}",
                self.lambda
            )));
        }
        if !(self.margin > 0.0 && self.margin.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "margin must be > 0, got {}",
                self.margin
            )));
        }
        if let Some(w) = self.class_weights {
            if w.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::InvalidArgument(format!("bad class weights {w:?}")));
            }
        }
        Ok(())
    }
}

/// Batch mean of `(1 - Y)/2 * D^2 + Y/2 * max(0, m - D)^2`.
pub fn contrastive_loss(distance: &Tensor, y: &[u8], margin: f64) -> Result<Tensor> {
    let n = distance.numel();
    if y.len() != n || distance.rank() != 1 {
        return Err(Error::shape(
            "contrastive_loss",
            format!("distance {:?} with {} pair labels", distance.shape(), y.len()),
        ));
    }
    if !(margin > 0.0) {
        return Err(Error::InvalidArgument(format!("margin must be > 0, got {margin}")));
    }
    let similar = Tensor::constant(&[n], y.iter().map(|&v| 0.5 * (1.0 - v as f64)).collect())?;
    let dissimilar = Tensor::constant(&[n], y.iter().map(|&v| 0.5 * v as f64).collect())?;
    let pull = distance.mul(distance)?.mul(&similar)?;
    let hinge = distance.scale(-1.0)?.add_scalar(margin)?.relu()?;
    let push = hinge.mul(&hinge)?.mul(&dissimilar)?;
    pull.add(&push)?.mean()
}

pub fn cross_entropy(logits: &Tensor, labels: &[usize], cfg: &LossConfig) -> Result<Tensor> {
    logits.cross_entropy(labels, cfg.class_weights.as_ref().map(|w| w.as_slice()))
}

/// `ce1 + ce2 + lambda * contrastive`.
pub fn combine_losses(ce1: &Tensor, ce2: &Tensor, contrastive: &Tensor, lambda: f64) -> Result<Tensor> {
    let ce = ce1.add(ce2)?;
    if lambda == 0.0 {
        return Ok(ce);
    }
    ce.add(&contrastive.scale(lambda)?)
}

/// The scalar loss plus the value of each term.
#[derive(Clone, Debug)]
pub struct LossTerms {
    pub total: Tensor,
    pub ce1: f64,
    pub ce2: f64,
    /// Unweighted contrastive value.
    pub contrastive: f64,
}

pub fn total_loss(out: &PairOutput, batch: &PairBatch, cfg: &LossConfig) -> Result<LossTerms> {
    let ce1 = cross_entropy(&out.first.logits, &batch.label_scan, cfg)?;
    let ce2 = cross_entropy(&out.second.logits, &batch.label_rescan, cfg)?;
    let con = contrastive_loss(&out.distance, &batch.similarity_y, cfg.margin)?;
    Ok(LossTerms {
        ce1: ce1.item()?,
        ce2: ce2.item()?,
        contrastive: con.item()?,
        total: combine_losses(&ce1, &ce2, &con, cfg.lambda)?,
    })
}
