//! Score-map transformations: normalization, the background map, class
//! suppression/selection and argmax label assignment.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::raster::{ClassId, LabelMap, Plane, ScoreStack, BACKGROUND};
use crate::{Error, Result};

/// Exponent of the background map. `Infinity` disables the background.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Alpha {
    Finite(f64),
    Infinity,
}

impl Alpha {
    pub fn new(value: f64) -> Result<Self> {
        if value.is_infinite() && value > 0.0 {
            return Ok(Alpha::Infinity);
        }
        if !(value.is_finite() && value > 0.0) {
            return Err(Error::arg(format!("alpha must be > 0, got {value}")));
        }
        Ok(Alpha::Finite(value))
    }

    /// Numeric order with `Infinity` greatest.
    pub fn le(self, other: Alpha) -> bool {
        match (self, other) {
            (_, Alpha::Infinity) => true,
            (Alpha::Infinity, Alpha::Finite(_)) => false,
            (Alpha::Finite(a), Alpha::Finite(b)) => a <= b,
        }
    }
}

impl FromStr for Alpha {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s.eq_ignore_ascii_case("inf") || s.eq_ignore_ascii_case("infinity") {
            return Ok(Alpha::Infinity);
        }
        let v: f64 = s
            .parse()
            .map_err(|_| Error::arg(format!("alpha must be a positive number or `inf`, got {s:?}")))?;
        Alpha::new(v)
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Alpha::Finite(v) => write!(f, "{v}"),
            Alpha::Infinity => f.write_str("inf"),
        }
    }
}

/// Background score for a pixel whose strongest class score is `max_score` (in [0, 1]).
pub fn background_value(max_score: f64, alpha: Alpha) -> f64 {
    match alpha {
        Alpha::Finite(a) => (1.0 - max_score).powf(a),
        Alpha::Infinity => {
            if max_score > 0.0 {
                0.0
            } else {
                1.0
            }
        }
    }
}

/// Per-class classifier scores, each in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct ConfidenceVector(Vec<f32>);

impl ConfidenceVector {
    pub fn new(scores: Vec<f32>) -> Result<Self> {
        if let Some(v) = scores.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::arg(format!("confidence {v} outside [0, 1]")));
        }
        Ok(ConfidenceVector(scores))
    }

    pub fn scores(&self) -> &[f32] {
        &self.0
    }
}

/// Divides each class plane by its own maximum. All-zero planes stay zero.
pub fn normalize(stack: &ScoreStack) -> Result<ScoreStack> {
    let mut out = stack.clone();
    for c in 0..stack.num_classes() {
        let plane = out.plane_mut(c);
        if let Some(v) = plane.iter().find(|v| **v < 0.0) {
            return Err(Error::arg(format!("negative score {v} in class {c}")));
        }
        let max = plane.iter().cloned().fold(0.0f32, f32::max);
        if max > 0.0 {
            for v in plane.iter_mut() {
                *v /= max;
            }
        }
    }
    Ok(out)
}

fn check_normalized(stack: &ScoreStack) -> Result<()> {
    match stack.data().iter().position(|&v| v > 1.0) {
        Some(i) => Err(Error::arg(format!(
            "score stack is not normalized: value {} at flat index {i}",
            stack.data()[i]
        ))),
        None => Ok(()),
    }
}

/// Pointwise maximum over class planes.
pub fn max_plane(stack: &ScoreStack) -> Plane {
    let mut max = vec![0.0f32; stack.pixels()];
    for plane in stack.planes() {
        for (m, &v) in max.iter_mut().zip(plane) {
            *m = m.max(v);
        }
    }
    Plane::new(stack.width(), stack.height(), max).expect("dims come from a valid stack")
}

/// `(1 - max_c M_c)^alpha` per pixel.
pub fn background_map(stack: &ScoreStack, alpha: Alpha) -> Result<Plane> {
    check_normalized(stack)?;
    let mut plane = max_plane(stack);
    for v in plane.data_mut() {
        *v = background_value(*v as f64, alpha) as f32;
    }
    Ok(plane)
}

/// Zeroes every plane whose class is not in `present`.
pub fn suppress_absent(stack: &ScoreStack, present: &BTreeSet<ClassId>) -> Result<ScoreStack> {
    if let Some(c) = present.iter().find(|c| c.index() >= stack.num_classes()) {
        return Err(Error::arg(format!(
            "class id {} not in a {}-class stack",
            c.0,
            stack.num_classes()
        )));
    }
    let mut out = stack.clone();
    for c in 0..stack.num_classes() {
        if !present.contains(&ClassId(c as u8)) {
            out.plane_mut(c).fill(0.0);
        }
    }
    Ok(out)
}

/// Keeps classes whose confidence reaches `threshold`; returns the kept set too.
pub fn select_cams(
    stack: &ScoreStack,
    conf: &ConfidenceVector,
    threshold: f64,
) -> Result<(ScoreStack, BTreeSet<ClassId>)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::arg(format!("threshold {threshold} outside [0, 1]")));
    }
    if conf.0.len() != stack.num_classes() {
        return Err(Error::arg(format!(
            "{} confidences for {} classes",
            conf.0.len(),
            stack.num_classes()
        )));
    }
    let kept: BTreeSet<ClassId> = conf
        .0
        .iter()
        .enumerate()
        .filter(|(_, &s)| s as f64 >= threshold)
        .map(|(i, _)| ClassId(i as u8))
        .collect();
    Ok((suppress_absent(stack, &kept)?, kept))
}

/// Argmax over class planes and `bg`.
///
/// Ties go to the lowest class index, and any class beats the background on a tie,
/// so a pixel is [`BACKGROUND`] only when `bg` strictly exceeds every class score.
pub fn assign_labels(stack: &ScoreStack, bg: &Plane) -> Result<LabelMap> {
    if (bg.width(), bg.height()) != (stack.width(), stack.height()) {
        return Err(Error::arg(format!(
            "background plane {}x{} does not match stack {}x{}",
            bg.width(),
            bg.height(),
            stack.width(),
            stack.height()
        )));
    }
    let n = stack.pixels();
    let mut best = stack.plane(0).to_vec();
    let mut codes = vec![0u8; n];
    for c in 1..stack.num_classes() {
        for (i, &v) in stack.plane(c).iter().enumerate() {
            if v > best[i] {
                best[i] = v;
                codes[i] = c as u8;
            }
        }
    }
    for (i, &b) in bg.data().iter().enumerate() {
        if b > best[i] {
            codes[i] = BACKGROUND;
        }
    }
    LabelMap::new(stack.width(), stack.height(), codes)
}
