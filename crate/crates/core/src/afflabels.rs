//! Confident-region extraction and radius-limited pair enumeration.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::cam::{assign_labels, background_map, Alpha};
use crate::par::{self, Execution};
use crate::raster::{LabelMap, ScoreStack, BACKGROUND, NEUTRAL};
use crate::wcam::{Reader, Writer, EXT_PAIRS};
use crate::{Error, Result};

/// Unordered cell-index pair, always stored with `.0 < .1`.
pub type Pair = (u32, u32);

/// Background exponents for the two confidence passes; `fg` must not exceed `bg`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DualAlpha {
    fg: Alpha,
    bg: Alpha,
}

impl DualAlpha {
    pub fn new(fg: Alpha, bg: Alpha) -> Result<Self> {
        if !fg.le(bg) {
            return Err(Error::arg(format!(
                "alpha_fg ({fg}) must not exceed alpha_bg ({bg})"
            )));
        }
        Ok(DualAlpha { fg, bg })
    }

    pub fn fg(&self) -> Alpha {
        self.fg
    }

    pub fn bg(&self) -> Alpha {
        self.bg
    }
}

impl Default for DualAlpha {
    fn default() -> Self {
        DualAlpha {
            fg: Alpha::Finite(4.0),
            bg: Alpha::Finite(32.0),
        }
    }
}

/// Two-pass confident labelling.
///
/// The `fg` pass keeps pixels won by a class against the strong background map, the
/// `bg` pass keeps pixels won by the weak background map. Everything else is
/// [`NEUTRAL`]. Because `fg <= bg`, the `fg` background dominates pointwise and no
/// pixel is claimed by both passes.
pub fn confident_labels(stack: &ScoreStack, dual: DualAlpha) -> Result<LabelMap> {
    if !dual.fg.le(dual.bg) {
        return Err(Error::arg("alpha_fg must not exceed alpha_bg"));
    }
    let fg_pass = assign_labels(stack, &background_map(stack, dual.fg)?)?;
    let bg_pass = assign_labels(stack, &background_map(stack, dual.bg)?)?;
    let codes = fg_pass
        .codes()
        .iter()
        .zip(bg_pass.codes())
        .map(|(&f, &b)| {
            if f != BACKGROUND {
                f
            } else if b == BACKGROUND {
                BACKGROUND
            } else {
                NEUTRAL
            }
        })
        .collect();
    LabelMap::new(stack.width(), stack.height(), codes)
}

/// Radius-`gamma` pairs split by affinity label.
#[derive(Clone, Debug, PartialEq)]
pub struct PairSet {
    pub width: usize,
    pub height: usize,
    pub gamma: f64,
    /// Same class on both ends.
    pub fg_pos: Vec<Pair>,
    /// Background on both ends.
    pub bg_pos: Vec<Pair>,
    /// Different codes.
    pub neg: Vec<Pair>,
}

impl PairSet {
    pub fn len(&self) -> usize {
        self.fg_pos.len() + self.bg_pos.len() + self.neg.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn partitions(&self) -> [&[Pair]; 3] {
        [&self.fg_pos, &self.bg_pos, &self.neg]
    }

    /// Layout after the `EXT_PAIRS` header: `u32 width, u32 height, f64 gamma`, then for
    /// fg_pos, bg_pos and neg in that order a `u32 count` and `count x 2` u32 indices.
    pub fn encode(&self) -> Result<Vec<u8>> {
        let mut w = Writer::with_header(EXT_PAIRS);
        w.dim(self.width)?;
        w.dim(self.height)?;
        w.f64(self.gamma);
        for part in self.partitions() {
            w.dim(part.len())?;
            for &(i, j) in part {
                w.u32(i);
                w.u32(j);
            }
        }
        Ok(w.finish())
    }

    pub fn decode(bytes: &[u8]) -> Result<PairSet> {
        let (mut r, kind) = Reader::open(bytes)?;
        if kind != EXT_PAIRS {
            return Err(Error::format(5, format!("expected pair set, found kind {kind:#04x}")));
        }
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let gamma = r.f64()?;
        let cells = width * height;
        let mut parts: [Vec<Pair>; 3] = Default::default();
        for part in parts.iter_mut() {
            let count = r.u32()? as usize;
            let at = r.offset();
            let n = r.payload_len(&[count, 2], 4)?;
            let flat = r.u32s(n / 4)?;
            *part = flat.chunks_exact(2).map(|p| (p[0], p[1])).collect();
            if let Some(p) = part.iter().find(|(i, j)| i >= j || *j as usize >= cells) {
                return Err(Error::format(at, format!("invalid pair {p:?} for {cells} cells")));
            }
        }
        r.finish()?;
        let [fg_pos, bg_pos, neg] = parts;
        Ok(PairSet {
            width,
            height,
            gamma,
            fg_pos,
            bg_pos,
            neg,
        })
    }
}

/// Offsets `(dy, dx)` with `dy^2 + dx^2 < gamma^2` in the forward half-plane
/// (`dy > 0`, or `dy == 0 && dx > 0`), sorted by `(dy, dx)`.
pub fn forward_offsets(gamma: f64) -> Vec<(isize, isize)> {
    let r = gamma.ceil() as isize;
    let mut out = Vec::new();
    for dy in 0..=r {
        for dx in -r..=r {
            if dy == 0 && dx <= 0 {
                continue;
            }
            if ((dy * dy + dx * dx) as f64) < gamma * gamma {
                out.push((dy, dx));
            }
        }
    }
    out
}

pub fn enumerate_pairs(labels: &LabelMap, gamma: f64) -> Result<PairSet> {
    enumerate_pairs_with(Execution::default(), labels, gamma)
}

/// [`enumerate_pairs`] with an explicit execution strategy. Rows are processed
/// independently and concatenated in row-major order.
pub fn enumerate_pairs_with(exec: Execution, labels: &LabelMap, gamma: f64) -> Result<PairSet> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::arg(format!("gamma must be a positive finite radius, got {gamma}")));
    }
    let (w, h) = (labels.width(), labels.height());
    let offsets = forward_offsets(gamma);
    let codes = labels.codes();
    let rows = par::map_range(exec, h, |y| {
        let mut fg = Vec::new();
        let mut bg = Vec::new();
        let mut neg = Vec::new();
        for x in 0..w {
            let i = y * w + x;
            let ci = codes[i];
            if ci == NEUTRAL {
                continue;
            }
            for &(dy, dx) in &offsets {
                let (ny, nx) = (y as isize + dy, x as isize + dx);
                if ny >= h as isize || nx < 0 || nx >= w as isize {
                    continue;
                }
                let j = ny as usize * w + nx as usize;
                let cj = codes[j];
                if cj == NEUTRAL {
                    continue;
                }
                let pair = (i as u32, j as u32);
                if ci != cj {
                    neg.push(pair);
                } else if ci == BACKGROUND {
                    bg.push(pair);
                } else {
                    fg.push(pair);
                }
            }
        }
        (fg, bg, neg)
    });
    let mut out = PairSet {
        width: w,
        height: h,
        gamma,
        fg_pos: Vec::new(),
        bg_pos: Vec::new(),
        neg: Vec::new(),
    };
    for (fg, bg, neg) in rows {
        out.fg_pos.extend(fg);
        out.bg_pos.extend(bg);
        out.neg.extend(neg);
    }
    Ok(out)
}

/// Mixes several integers into one seed (splitmix64 finalizer chain).
pub fn derive_seed(parts: &[u64]) -> u64 {
    let mut h = 0x9E37_79B9_7F4A_7C15u64;
    for &p in parts {
        h ^= p.wrapping_add(0x9E37_79B9_7F4A_7C15).wrapping_add(h << 6).wrapping_add(h >> 2);
        h = (h ^ (h >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h = (h ^ (h >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        h ^= h >> 31;
    }
    h
}

/// Uniformly subsamples each partition to at most `cap` pairs, keeping original order.
pub fn sample_pairs(pairs: &PairSet, cap: usize, seed: u64) -> Result<PairSet> {
    if cap == 0 {
        return Err(Error::arg("pair cap must be >= 1"));
    }
    let pick = |part: &[Pair], tag: u64| -> Vec<Pair> {
        if part.len() <= cap {
            return part.to_vec();
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, tag]));
        let mut idx = index::sample(&mut rng, part.len(), cap).into_vec();
        idx.sort_unstable();
        idx.into_iter().map(|k| part[k]).collect()
    };
    Ok(PairSet {
        width: pairs.width,
        height: pairs.height,
        gamma: pairs.gamma,
        fg_pos: pick(&pairs.fg_pos, 0),
        bg_pos: pick(&pairs.bg_pos, 1),
        neg: pick(&pairs.neg, 2),
    })
}
