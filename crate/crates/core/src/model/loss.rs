//! Pair affinity and the three-term affinity loss.

use crate::afflabels::{Pair, PairSet};
use crate::raster::Raster;
use crate::{Error, Result};

use super::head::{backward, forward_trace, FeatureMap, HeadParams};
use super::Scalar;

/// Weights of the foreground, background and negative terms. `1/a + 1/b + 1/c = 1`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    a: f64,
    b: f64,
    c: f64,
}

impl LossWeights {
    pub fn new(a: f64, b: f64, c: f64) -> Result<Self> {
        if !(a > 0.0 && b > 0.0 && c > 0.0) || !(a.is_finite() && b.is_finite() && c.is_finite()) {
            return Err(Error::arg(format!("loss weights must be positive, got ({a}, {b}, {c})")));
        }
        let sum = 1.0 / a + 1.0 / b + 1.0 / c;
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::arg(format!(
                "loss weights ({a}, {b}, {c}) violate 1/a + 1/b + 1/c = 1 (sum {sum})"
            )));
        }
        Ok(LossWeights { a, b, c })
    }

    /// (6, 2, 3): background positives weighted heaviest.
    pub fn background_heavy() -> Self {
        LossWeights { a: 6.0, b: 2.0, c: 3.0 }
    }

    /// (4, 4, 2): foreground and background positives weighted equally.
    pub fn balanced() -> Self {
        LossWeights { a: 4.0, b: 4.0, c: 2.0 }
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    pub fn c(&self) -> f64 {
        self.c
    }
}

impl Default for LossWeights {
    fn default() -> Self {
        Self::background_heavy()
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms {
    pub total: f64,
    pub fg: f64,
    pub bg: f64,
    pub neg: f64,
}

pub fn l1_distance<T: Scalar>(fi: &[T], fj: &[T]) -> f64 {
    fi.iter()
        .zip(fj)
        .map(|(a, b)| (*a - *b).abs().to_f64().unwrap_or(f64::NAN))
        .sum()
}

/// `exp(-||fi - fj||_1)`.
pub fn affinity<T: Scalar>(fi: &[T], fj: &[T]) -> Result<f64> {
    if fi.len() != fj.len() {
        return Err(Error::arg(format!("feature depths differ: {} vs {}", fi.len(), fj.len())));
    }
    Ok((-l1_distance(fi, fj)).exp())
}

pub fn check_eps(eps: f64) -> Result<()> {
    if !(eps > 0.0 && eps <= 1e-3) {
        return Err(Error::arg(format!("clamp eps must be in (0, 1e-3], got {eps}")));
    }
    Ok(())
}

fn check_pairs<T>(feat: &FeatureMap<T>, pairs: &PairSet) -> Result<()> {
    if (pairs.width, pairs.height) != (feat.width, feat.height) {
        return Err(Error::arg(format!(
            "pair grid {}x{} does not match feature grid {}x{}",
            pairs.width, pairs.height, feat.width, feat.height
        )));
    }
    let cells = (feat.width * feat.height) as u32;
    for part in pairs.partitions() {
        if let Some(p) = part.iter().find(|(i, j)| *i >= cells || *j >= cells) {
            return Err(Error::arg(format!("pair {p:?} outside a {cells}-cell grid")));
        }
    }
    if pairs.is_empty() {
        return Err(Error::arg("all pair partitions are empty"));
    }
    Ok(())
}

/// Loss terms and, when `grad` is given, `d total / d feature` accumulated into it
/// (cell-major, same layout as the feature map). Pairs are visited in partition
/// order then list order.
fn evaluate<T: Scalar>(
    feat: &FeatureMap<T>,
    pairs: &PairSet,
    w: &LossWeights,
    eps: f64,
    mut grad: Option<&mut [f64]>,
) -> Result<LossTerms> {
    check_eps(eps)?;
    check_pairs(feat, pairs)?;
    let d = feat.depth;
    let mut terms = [0.0f64; 3];
    let weights = [w.a, w.b, w.c];
    for (k, part) in pairs.partitions().into_iter().enumerate() {
        if part.is_empty() {
            continue;
        }
        let negative = k == 2;
        let inv_n = 1.0 / part.len() as f64;
        let mut sum = 0.0f64;
        for &(i, j) in part {
            let (fi, fj) = (feat.cell(i as usize), feat.cell(j as usize));
            let dist = l1_distance(fi, fj);
            let aff = (-dist).exp();
            let clamped = aff.clamp(eps, 1.0 - eps);
            sum += if negative { -(1.0 - clamped).ln() } else { -clamped.ln() };
            let Some(g) = grad.as_deref_mut() else { continue };
            if !(aff > eps && aff < 1.0 - eps) {
                continue;
            }
            // d/d(dist) of -ln W is 1; of -ln(1 - W) it is -W / (1 - W)
            let slope = if negative { -aff / (1.0 - aff) } else { 1.0 };
            let coef = slope * inv_n / weights[k];
            write_l1_grad(g, d, (i, j), fi, fj, coef);
        }
        terms[k] = sum * inv_n;
    }
    Ok(LossTerms {
        total: terms[0] / w.a + terms[1] / w.b + terms[2] / w.c,
        fg: terms[0],
        bg: terms[1],
        neg: terms[2],
    })
}

fn write_l1_grad<T: Scalar>(g: &mut [f64], d: usize, (i, j): Pair, fi: &[T], fj: &[T], coef: f64) {
    for k in 0..d {
        let diff = fi[k] - fj[k];
        let s = if diff > T::zero() {
            coef
        } else if diff < T::zero() {
            -coef
        } else {
            0.0
        };
        g[i as usize * d + k] += s;
        g[j as usize * d + k] -= s;
    }
}

/// Weighted clamped loss over the three partitions; empty partitions contribute 0.
pub fn loss<T: Scalar>(feat: &FeatureMap<T>, pairs: &PairSet, w: &LossWeights, eps: f64) -> Result<LossTerms> {
    evaluate(feat, pairs, w, eps, None)
}

/// Loss and `d total / d feature` (cell-major, 64-bit).
pub fn loss_feature_grad<T: Scalar>(
    feat: &FeatureMap<T>,
    pairs: &PairSet,
    w: &LossWeights,
    eps: f64,
) -> Result<(LossTerms, Vec<f64>)> {
    let mut g = vec![0.0f64; feat.data.len()];
    let terms = evaluate(feat, pairs, w, eps, Some(&mut g))?;
    Ok((terms, g))
}

/// Loss and its exact gradient with respect to every head parameter.
///
/// The L1 kernel uses `sign(0) = 0`; pairs whose affinity sits on or beyond a clamp
/// boundary contribute no gradient.
pub fn loss_grad<T: Scalar>(
    params: &HeadParams<T>,
    image: &Raster,
    pairs: &PairSet,
    w: &LossWeights,
    eps: f64,
) -> Result<(LossTerms, HeadParams<T>)> {
    let (feat, trace) = forward_trace(params, image)?;
    let (terms, g) = loss_feature_grad(&feat, pairs, w, eps)?;
    let g: Vec<T> = g.into_iter().map(|v| T::from_f64(v).unwrap_or_else(T::nan)).collect();
    Ok((terms, backward(params, &trace, &g)))
}
