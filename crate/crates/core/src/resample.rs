//! Plane resampling with center-aligned sampling.
//!
//! Output pixel `i` samples source coordinate `(i + 0.5) * in / out - 0.5`, clamped to
//! the source extent (the "align corners off" convention). Interpolation runs in f64.

use crate::raster::{Plane, ScoreStack};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Resample {
    Nearest,
    Bilinear,
}

struct Tap {
    lo: usize,
    hi: usize,
    t: f64,
}

fn bilinear_taps(src: usize, dst: usize) -> Vec<Tap> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let s = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = s.floor() as usize;
            let hi = (lo + 1).min(src - 1);
            Tap { lo, hi, t: s - lo as f64 }
        })
        .collect()
}

fn nearest_taps(src: usize, dst: usize) -> Vec<usize> {
    // floor((i + 0.5) * src / dst) in exact integer arithmetic
    (0..dst)
        .map(|i| (((2 * i + 1) * src) / (2 * dst)).min(src - 1))
        .collect()
}

pub fn resample(plane: &Plane, new_width: usize, new_height: usize, mode: Resample) -> Result<Plane> {
    if new_width == 0 || new_height == 0 {
        return Err(Error::arg(format!(
            "resample target must be >= 1x1, got {new_width}x{new_height}"
        )));
    }
    let (w, h) = (plane.width(), plane.height());
    if (w, h) == (new_width, new_height) {
        return Ok(plane.clone());
    }
    let src = plane.data();
    let mut out = Vec::with_capacity(new_width * new_height);
    match mode {
        Resample::Nearest => {
            let xs = nearest_taps(w, new_width);
            let ys = nearest_taps(h, new_height);
            for &y in &ys {
                out.extend(xs.iter().map(|&x| src[y * w + x]));
            }
        }
        Resample::Bilinear => {
            let xs = bilinear_taps(w, new_width);
            let ys = bilinear_taps(h, new_height);
            for ty in &ys {
                let r0 = &src[ty.lo * w..(ty.lo + 1) * w];
                let r1 = &src[ty.hi * w..(ty.hi + 1) * w];
                for tx in &xs {
                    let top = (1.0 - tx.t) * r0[tx.lo] as f64 + tx.t * r0[tx.hi] as f64;
                    let bot = (1.0 - tx.t) * r1[tx.lo] as f64 + tx.t * r1[tx.hi] as f64;
                    out.push(((1.0 - ty.t) * top + ty.t * bot) as f32);
                }
            }
        }
    }
    Plane::new(new_width, new_height, out)
}

/// Resamples every plane of a stack.
pub fn resample_stack(stack: &ScoreStack, new_width: usize, new_height: usize, mode: Resample) -> Result<ScoreStack> {
    let planes = (0..stack.num_classes())
        .map(|c| resample(&stack.plane_owned(c), new_width, new_height, mode))
        .collect::<Result<Vec<_>>>()?;
    ScoreStack::from_planes(stack.classes().to_vec(), planes)
}
