//! Affinity model: feature head, pair loss, trainer and sparse affinity extraction.

pub mod head;
pub mod loss;
pub mod train;

use std::fmt::Debug;
use std::ops::AddAssign;

pub use head::{forward, ConvLayer, FeatureHeadParams, FeatureMap, HeadConfig, HeadParams};
pub use loss::{affinity, loss, loss_feature_grad, loss_grad, LossTerms, LossWeights};
pub use train::{train, EpochLoss, TrainConfig, TrainOutcome};

use crate::par::{self, Execution};
use crate::walk::SparseAffinity;
use crate::{Error, Result};

/// Float type the model can run in: `f32` for training, `f64` for gradient checks.
pub trait Scalar: num_traits::Float + num_traits::FromPrimitive + AddAssign + Debug + Send + Sync + 'static {}

impl<T> Scalar for T where T: num_traits::Float + num_traits::FromPrimitive + AddAssign + Debug + Send + Sync + 'static {}

/// All offsets `(dy, dx)` with `dy^2 + dx^2 < gamma^2`, including `(0, 0)`, sorted.
pub fn disk_offsets(gamma: f64) -> Vec<(isize, isize)> {
    let r = gamma.ceil() as isize;
    let mut out = Vec::new();
    for dy in -r..=r {
        for dx in -r..=r {
            if ((dy * dy + dx * dx) as f64) < gamma * gamma {
                out.push((dy, dx));
            }
        }
    }
    out
}

pub fn sparse_affinity<T: Scalar>(feat: &FeatureMap<T>, gamma: f64) -> Result<SparseAffinity> {
    sparse_affinity_with(Execution::default(), feat, gamma)
}

/// Affinities between every cell and all cells closer than `gamma` (itself included).
pub fn sparse_affinity_with<T: Scalar>(exec: Execution, feat: &FeatureMap<T>, gamma: f64) -> Result<SparseAffinity> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::arg(format!("gamma must be a positive finite radius, got {gamma}")));
    }
    let (w, h) = (feat.width, feat.height);
    let offsets = disk_offsets(gamma);
    let rows = par::map_range(exec, w * h, |i| {
        let (y, x) = ((i / w) as isize, (i % w) as isize);
        let mut cols = Vec::with_capacity(offsets.len());
        let mut vals = Vec::with_capacity(offsets.len());
        for &(dy, dx) in &offsets {
            let (ny, nx) = (y + dy, x + dx);
            if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                continue;
            }
            let j = ny as usize * w + nx as usize;
            let v = if i == j {
                1.0
            } else {
                // underflow is floored to keep entries strictly positive
                ((-loss::l1_distance(feat.cell(i), feat.cell(j))).exp() as f32).max(f32::MIN_POSITIVE)
            };
            cols.push(j as u32);
            vals.push(v);
        }
        (cols, vals)
    });
    let mut offsets_out = Vec::with_capacity(w * h + 1);
    offsets_out.push(0usize);
    let mut cols = Vec::new();
    let mut vals = Vec::new();
    for (c, v) in rows {
        cols.extend(c);
        vals.extend(v);
        offsets_out.push(cols.len());
    }
    SparseAffinity::from_csr(w, h, offsets_out, cols, vals)
}
