//! Scene directories, tiling, image-level reduction, splits and synthetic scenes.

pub mod synth;
pub mod tile;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::raster::{ClassId, LabelMap, BACKGROUND};
use crate::{Error, Result};

pub use synth::{synthesize, RegionModel, SynthScene, SynthSpec};
pub use tile::{crop_stack, stitch, tile, Tile, TileGrid, DEFAULT_TILE};

/// Image suffixes recognized by [`scan`], in lookup order.
pub const IMAGE_SUFFIXES: [&str; 2] = ["_sat.jpg", "_sat.png"];
pub const MASK_SUFFIX: &str = "_mask.png";
pub const CAMS_SUFFIX: &str = "_cams.wcam";
pub const CLASSES_SUFFIX: &str = "_classes.txt";

/// One scene of a DeepGlobe-style directory.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SceneRecord {
    pub id: String,
    pub image: PathBuf,
    pub mask: Option<PathBuf>,
    pub cams: Option<PathBuf>,
    /// Class names from `<id>_classes.txt`, one per line.
    pub classes: Option<Vec<String>>,
}

/// Lists `<id>_sat.{jpg,png}` scenes under `root`, sorted by id.
///
/// Masks must match their image's dimensions. A mask without an image is logged
/// and skipped.
pub fn scan(root: &Path) -> Result<Vec<SceneRecord>> {
    let entries = std::fs::read_dir(root).map_err(|e| Error::path(root, e))?;
    let mut names = BTreeSet::new();
    for entry in entries {
        let entry = entry.map_err(|e| Error::path(root, e))?;
        if let Some(name) = entry.file_name().to_str() {
            names.insert(name.to_string());
        }
    }
    let mut records = Vec::new();
    let mut ids = BTreeSet::new();
    for name in &names {
        let Some((id, _)) = IMAGE_SUFFIXES
            .iter()
            .find_map(|s| name.strip_suffix(s).map(|id| (id, *s)))
        else {
            continue;
        };
        if !ids.insert(id.to_string()) {
            return Err(Error::Validation(format!("scene {id:?} has more than one image")));
        }
        let image = root.join(name);
        let mask = names
            .contains(&format!("{id}{MASK_SUFFIX}"))
            .then(|| root.join(format!("{id}{MASK_SUFFIX}")));
        if let Some(mask) = &mask {
            let dims = |p: &Path| image::image_dimensions(p).map_err(Error::from);
            let (a, b) = (dims(&image)?, dims(mask)?);
            if a != b {
                return Err(Error::Validation(format!(
                    "scene {id:?}: mask is {}x{} but image is {}x{}",
                    b.0, b.1, a.0, a.1
                )));
            }
        }
        let cams = names
            .contains(&format!("{id}{CAMS_SUFFIX}"))
            .then(|| root.join(format!("{id}{CAMS_SUFFIX}")));
        let classes = if names.contains(&format!("{id}{CLASSES_SUFFIX}")) {
            let path = root.join(format!("{id}{CLASSES_SUFFIX}"));
            let text = std::fs::read_to_string(&path).map_err(|e| Error::path(&path, e))?;
            Some(parse_class_list(&text))
        } else {
            None
        };
        records.push(SceneRecord {
            id: id.to_string(),
            image,
            mask,
            cams,
            classes,
        });
    }
    for name in &names {
        if let Some(id) = name.strip_suffix(MASK_SUFFIX) {
            if !ids.contains(id) {
                log::warn!("mask {name} has no matching image; skipped");
            }
        }
    }
    log::info!("found {} scenes under {}", records.len(), root.display());
    Ok(records)
}

pub fn parse_class_list(text: &str) -> Vec<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect()
}

/// Classes covering more than `min_fraction` of the mask. `unknown` is never included.
pub fn reduce_to_image_labels(mask: &LabelMap, min_fraction: f64, unknown: Option<ClassId>) -> Result<BTreeSet<ClassId>> {
    if !(0.0..1.0).contains(&min_fraction) {
        return Err(Error::arg(format!("min_fraction {min_fraction} outside [0, 1)")));
    }
    let mut counts = [0u64; BACKGROUND as usize];
    for &c in mask.codes() {
        if c < BACKGROUND {
            counts[c as usize] += 1;
        }
    }
    let total = mask.codes().len() as f64;
    Ok(counts
        .iter()
        .enumerate()
        .filter(|&(c, &n)| n > 0 && n as f64 / total > min_fraction && Some(ClassId(c as u8)) != unknown)
        .map(|(c, _)| ClassId(c as u8))
        .collect())
}

/// Seeded shuffle, then the first `train_count` items train and the rest validate.
pub fn split<T: Clone>(records: &[T], train_count: usize, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if train_count > records.len() {
        return Err(Error::arg(format!(
            "train count {train_count} exceeds {} records",
            records.len()
        )));
    }
    let mut order: Vec<usize> = (0..records.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let pick = |idx: &[usize]| idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>();
    Ok((pick(&order[..train_count]), pick(&order[train_count..])))
}
