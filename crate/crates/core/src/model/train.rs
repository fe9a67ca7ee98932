//! Deterministic SGD-with-momentum trainer for the feature head.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::afflabels::{derive_seed, sample_pairs, PairSet};
use crate::raster::Raster;
use crate::{Error, Result};

use super::head::{FeatureHeadParams, HeadConfig, HeadParams};
use super::loss::{check_eps, loss_grad, LossWeights};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    /// Per-partition cap applied when resampling pairs each epoch.
    pub pair_cap: usize,
    pub seed: u64,
    pub eps: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 0.01,
            momentum: 0.9,
            epochs: 200,
            pair_cap: 1024,
            seed: 0,
            eps: 1e-7,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::arg(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        if self.pair_cap == 0 {
            return Err(Error::arg("pair cap must be >= 1"));
        }
        check_eps(self.eps)
    }
}

/// Mean loss terms over the images visited in one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub total: f64,
    pub fg: f64,
    pub bg: f64,
    pub neg: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: FeatureHeadParams,
    pub trace: Vec<EpochLoss>,
}

impl TrainOutcome {
    /// `epoch,total,L_fg,L_bg,L_neg` rows with a header line.
    pub fn trace_csv(&self) -> String {
        let mut s = String::from("epoch,total,L_fg,L_bg,L_neg\n");
        for e in &self.trace {
            s.push_str(&format!("{},{},{},{},{}\n", e.epoch, e.total, e.fg, e.bg, e.neg));
        }
        s
    }
}

/// Trains from the seeded initialization.
///
/// Each epoch visits the images in a seeded shuffled order, resamples every image's
/// pairs with a seed derived from `(seed, epoch, image index)` and takes one
/// momentum step per image. Images with no pairs left are skipped.
pub fn train(
    dataset: &[(Raster, PairSet)],
    head: HeadConfig,
    cfg: &TrainConfig,
    weights: &LossWeights,
) -> Result<TrainOutcome> {
    if dataset.is_empty() {
        return Err(Error::arg("training needs at least one image"));
    }
    cfg.validate()?;
    let mut params = HeadParams::<f32>::init(head, cfg.seed)?;
    let mut velocity = HeadParams::<f32>::zeros(head)?;
    let mut trace = Vec::with_capacity(cfg.epochs);
    let (lr, mu) = (cfg.lr as f32, cfg.momentum as f32);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[cfg.seed, epoch as u64, u64::MAX]));
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 4];
        let mut visited = 0usize;
        for &idx in &order {
            let (image, pairs) = &dataset[idx];
            let sampled = sample_pairs(pairs, cfg.pair_cap, derive_seed(&[cfg.seed, epoch as u64, idx as u64]))?;
            if sampled.is_empty() {
                continue;
            }
            let (terms, grad) = loss_grad(&params, image, &sampled, weights, cfg.eps)?;
            if !terms.total.is_finite() || !grad.is_finite() {
                return Err(Error::Divergence { epoch, image: idx });
            }
            for ((p, v), g) in params.values_mut().zip(velocity.values_mut()).zip(grad.values()) {
                *v = mu * *v - lr * *g;
                *p += *v;
            }
            if !params.is_finite() {
                return Err(Error::Divergence { epoch, image: idx });
            }
            for (s, t) in sums.iter_mut().zip([terms.total, terms.fg, terms.bg, terms.neg]) {
                *s += t;
            }
            visited += 1;
        }
        let n = visited.max(1) as f64;
        trace.push(EpochLoss {
            epoch,
            total: sums[0] / n,
            fg: sums[1] / n,
            bg: sums[2] / n,
            neg: sums[3] / n,
        });
    }
    Ok(TrainOutcome { params, trace })
}
