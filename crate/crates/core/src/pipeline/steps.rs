//! In-memory stage bodies shared by the file-based stages and the tests.

use std::collections::BTreeSet;

use crate::afflabels::{confident_labels, enumerate_pairs, DualAlpha, PairSet};
use crate::cam::{self, Alpha, ConfidenceVector};
use crate::model::{self, FeatureHeadParams, HeadConfig};
use crate::palette::ClassPalette;
use crate::raster::{ClassId, LabelMap, Plane, Raster, ScoreStack};
use crate::resample::{resample, resample_stack, Resample};
use crate::walk::{build_transition, propagate_stack, SparseAffinity, WalkConfig};
use crate::{Error, Result};

/// How absent classes are removed before anything else runs.
#[derive(Clone, Debug, PartialEq)]
pub enum ClassSelection {
    /// Image-level labels: every other class plane is zeroed.
    Present(BTreeSet<ClassId>),
    /// Classifier confidences compared against a threshold.
    Confidence(ConfidenceVector, f64),
}

/// Requires the stack's classes to be the leading entries of `palette`, so stack
/// indices and palette ids agree.
pub fn check_stack_classes(stack: &ScoreStack, palette: &ClassPalette) -> Result<()> {
    let names = palette.names();
    if stack.num_classes() > names.len() || stack.classes() != &names[..stack.num_classes()] {
        return Err(Error::Validation(format!(
            "score stack classes {:?} are not a prefix of the palette {:?}",
            stack.classes(),
            names
        )));
    }
    Ok(())
}

/// Normalizes, removes absent classes and computes the background map.
pub fn prepare_cams(raw: &ScoreStack, selection: &ClassSelection, alpha: Alpha) -> Result<(ScoreStack, Plane)> {
    let norm = cam::normalize(raw)?;
    let stack = match selection {
        ClassSelection::Present(set) => cam::suppress_absent(&norm, set)?,
        ClassSelection::Confidence(conf, t) => cam::select_cams(&norm, conf, *t)?.0,
    };
    let bg = cam::background_map(&stack, alpha)?;
    Ok((stack, bg))
}

/// Confident labels and training pairs on the feature grid of an image of the
/// stack's size.
pub fn affinity_pairs(stack: &ScoreStack, head: &HeadConfig, dual: DualAlpha, gamma: f64) -> Result<(LabelMap, PairSet)> {
    let (gw, gh) = head.grid_dims(stack.width(), stack.height());
    let grid = resample_stack(stack, gw, gh, Resample::Bilinear)?;
    let labels = confident_labels(&grid, dual)?;
    let pairs = enumerate_pairs(&labels, gamma)?;
    Ok((labels, pairs))
}

pub fn infer_affinity(params: &FeatureHeadParams, image: &Raster, gamma: f64) -> Result<SparseAffinity> {
    let feat = model::forward(params, image)?;
    model::sparse_affinity(&feat, gamma)
}

/// Random-walk refinement on the affinity grid, returned at the stack's resolution.
pub fn refine(stack: &ScoreStack, bg: &Plane, aff: &SparseAffinity, walk: &WalkConfig) -> Result<(ScoreStack, Plane)> {
    let (gw, gh) = (aff.width(), aff.height());
    let (w, h) = (stack.width(), stack.height());
    let t = build_transition(aff, walk.beta)?;
    let grid = resample_stack(stack, gw, gh, Resample::Bilinear)?;
    let grid_bg = resample(bg, gw, gh, Resample::Bilinear)?;
    let (walked, walked_bg) = propagate_stack(&t, &grid, &grid_bg, walk)?;
    Ok((
        resample_stack(&walked, w, h, Resample::Bilinear)?,
        resample(&walked_bg, w, h, Resample::Bilinear)?,
    ))
}
