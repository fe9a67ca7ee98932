//! Seeded synthetic scenes: region layout, textured image and corrupted CAMs.
//!
//! Stands in for a trained classifier at desk scale. Each region of the ground
//! truth gets a random activation strength in `(0.1, 1] * ceiling`, so weak regions
//! fall under the background map while strong ones survive it.

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::afflabels::derive_seed;
use crate::cam::{normalize, ConfidenceVector};
use crate::palette::ClassPalette;
use crate::raster::{ClassId, LabelMap, Raster, ScoreStack};
use crate::{Error, Result};

use super::reduce_to_image_labels;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegionModel {
    /// Nearest-seed partition with this many seed points.
    Voronoi { seeds: usize },
    /// A base region overpainted by this many random rectangles.
    Rectangles { count: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    /// Uses the first `classes` palette entries.
    pub classes: usize,
    pub regions: RegionModel,
    /// Box-blur radius applied to the one-hot CAMs, in pixels.
    pub blur: usize,
    /// Amplitude of the uniform noise added after blurring.
    pub noise: f32,
    /// Upper bound on a region's activation strength.
    pub ceiling: f32,
    /// Amplitude of the per-pixel color noise in the image.
    pub texture: f32,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            seed: 0,
            width: 64,
            height: 64,
            classes: 3,
            regions: RegionModel::Voronoi { seeds: 10 },
            blur: 4,
            noise: 0.3,
            ceiling: 1.0,
            texture: 0.08,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self, palette: &ClassPalette) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::arg("synthetic scene dims must be >= 1"));
        }
        if self.classes == 0 || self.classes > palette.len() {
            return Err(Error::arg(format!(
                "class count {} outside 1..={}",
                self.classes,
                palette.len()
            )));
        }
        let n = match self.regions {
            RegionModel::Voronoi { seeds } => seeds,
            RegionModel::Rectangles { count } => count + 1,
        };
        if n == 0 {
            return Err(Error::arg("region model needs at least one region"));
        }
        for (name, v) in [("noise", self.noise), ("ceiling", self.ceiling), ("texture", self.texture)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::arg(format!("{name} must be finite and >= 0, got {v}")));
            }
        }
        if self.ceiling == 0.0 {
            return Err(Error::arg("ceiling must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthScene {
    pub image: Raster,
    pub gt: LabelMap,
    /// Per-class normalized scores.
    pub cams: ScoreStack,
    /// Mean of the top decile of each raw class plane.
    pub confidence: ConfidenceVector,
    pub image_labels: BTreeSet<ClassId>,
}

const BASE_COLORS: [[f32; 3]; 7] = [
    [0.80, 0.25, 0.25],
    [0.25, 0.65, 0.30],
    [0.25, 0.35, 0.80],
    [0.85, 0.80, 0.30],
    [0.60, 0.30, 0.75],
    [0.30, 0.80, 0.80],
    [0.50, 0.50, 0.50],
];

/// Region index per pixel and region count.
fn layout(spec: &SynthSpec, rng: &mut ChaCha8Rng) -> (Vec<usize>, usize) {
    let (w, h) = (spec.width, spec.height);
    match spec.regions {
        RegionModel::Voronoi { seeds } => {
            let pts: Vec<(f64, f64)> = (0..seeds)
                .map(|_| (rng.gen_range(0.0..w as f64), rng.gen_range(0.0..h as f64)))
                .collect();
            let mut region = Vec::with_capacity(w * h);
            for y in 0..h {
                for x in 0..w {
                    let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
                    let mut best = (f64::INFINITY, 0);
                    for (k, &(sx, sy)) in pts.iter().enumerate() {
                        let d = (px - sx).powi(2) + (py - sy).powi(2);
                        if d < best.0 {
                            best = (d, k);
                        }
                    }
                    region.push(best.1);
                }
            }
            (region, seeds)
        }
        RegionModel::Rectangles { count } => {
            let mut region = vec![0usize; w * h];
            for k in 1..=count {
                let rw = rng.gen_range(1..=w.max(2) / 2).min(w);
                let rh = rng.gen_range(1..=h.max(2) / 2).min(h);
                let x0 = rng.gen_range(0..=w - rw);
                let y0 = rng.gen_range(0..=h - rh);
                for y in y0..y0 + rh {
                    region[y * w + x0..y * w + x0 + rw].fill(k);
                }
            }
            (region, count + 1)
        }
    }
}

/// Mean over the `(2r+1)`-wide window clipped to the plane, separably.
fn box_blur(plane: &[f32], w: usize, h: usize, r: usize) -> Vec<f32> {
    if r == 0 {
        return plane.to_vec();
    }
    let pass = |src: &[f64], len: usize, stride: usize, lines: usize, step: usize| -> Vec<f64> {
        let mut out = vec![0.0; src.len()];
        let mut prefix = vec![0.0f64; len + 1];
        for line in 0..lines {
            let base = line * step;
            for i in 0..len {
                prefix[i + 1] = prefix[i] + src[base + i * stride];
            }
            for i in 0..len {
                let lo = i.saturating_sub(r);
                let hi = (i + r + 1).min(len);
                out[base + i * stride] = (prefix[hi] - prefix[lo]) / (hi - lo) as f64;
            }
        }
        out
    };
    let src: Vec<f64> = plane.iter().map(|&v| v as f64).collect();
    let rows = pass(&src, w, 1, h, w);
    let cols = pass(&rows, h, w, w, 1);
    cols.into_iter().map(|v| v as f32).collect()
}

fn top_decile_mean(plane: &[f32]) -> f32 {
    let mut v = plane.to_vec();
    v.sort_unstable_by(|a, b| b.total_cmp(a));
    let k = (v.len() / 10).max(1);
    let mean = v[..k].iter().map(|&x| x as f64).sum::<f64>() / k as f64;
    mean.clamp(0.0, 1.0) as f32
}

pub fn synthesize(spec: &SynthSpec, palette: &ClassPalette) -> Result<SynthScene> {
    spec.validate(palette)?;
    let (w, h, nc) = (spec.width, spec.height, spec.classes);
    let stream = |tag: u64| ChaCha8Rng::seed_from_u64(derive_seed(&[spec.seed, tag]));

    let mut rng = stream(1);
    let (region, nregions) = layout(spec, &mut rng);
    // regions cycle through a shuffled class order so every class shows up once
    // there are at least as many regions as classes
    let mut order: Vec<usize> = (0..nc).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), &mut rng);
    let region_class: Vec<usize> = (0..nregions).map(|k| order[k % nc]).collect();
    let strength: Vec<f32> = (0..nregions)
        .map(|_| spec.ceiling * (1.0 - rng.gen_range(0.0f32..0.9)))
        .collect();

    let codes: Vec<u8> = region.iter().map(|&k| region_class[k] as u8).collect();
    let gt = LabelMap::new(w, h, codes)?;

    let mut rng = stream(2);
    let colors: Vec<[f32; 3]> = (0..nc)
        .map(|c| {
            let base = BASE_COLORS[c % BASE_COLORS.len()];
            let jitter = if c < BASE_COLORS.len() { 0.0 } else { 0.2 };
            base.map(|v| (v + rng.gen_range(-jitter..=jitter)).clamp(0.0, 1.0))
        })
        .collect();
    let mut pixels = Vec::with_capacity(w * h * 3);
    for &k in &region {
        for ch in 0..3 {
            let t = if spec.texture > 0.0 {
                rng.gen_range(-spec.texture..=spec.texture)
            } else {
                0.0
            };
            let v = (colors[region_class[k]][ch] + t).clamp(0.0, 1.0);
            pixels.push((v * 255.0).round() as u8);
        }
    }
    let image = Raster::from_u8(w, h, 3, pixels)?;

    let mut rng = stream(3);
    let mut raw = Vec::with_capacity(nc * w * h);
    for c in 0..nc {
        let onehot: Vec<f32> = region
            .iter()
            .map(|&k| if region_class[k] == c { strength[k] } else { 0.0 })
            .collect();
        for v in box_blur(&onehot, w, h, spec.blur) {
            let n = if spec.noise > 0.0 {
                rng.gen_range(-spec.noise..=spec.noise)
            } else {
                0.0
            };
            raw.push((v + n).max(0.0));
        }
    }
    let names: Vec<String> = palette.names().into_iter().take(nc).collect();
    let raw = ScoreStack::new(w, h, names, raw)?;
    let confidence = ConfidenceVector::new(raw.planes().map(top_decile_mean).collect())?;
    let cams = normalize(&raw)?;
    let image_labels = reduce_to_image_labels(&gt, 0.0, palette.unknown())?;
    Ok(SynthScene {
        image,
        gt,
        cams,
        confidence,
        image_labels,
    })
}
