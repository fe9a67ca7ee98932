//! File-based stages. Each stage reads the previous stage's directory, writes its
//! own artifacts and a `manifest.json`, and processes scenes in parallel with
//! results gathered in id order.

pub mod config;
pub mod manifest;
pub mod steps;

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use serde_json::{json, Map, Value};

use crate::afflabels::PairSet;
use crate::cam::ConfidenceVector;
use crate::dataset::{self, synth, tile::crop_stack, SceneRecord, SynthSpec};
use crate::eval::{self, ConfusionMatrix};
use crate::model::{self, FeatureHeadParams};
use crate::palette::{rgb_decode, rgb_encode, ClassPalette};
use crate::par::{self, Execution};
use crate::raster::{ClassId, LabelMap, Plane, Raster, ScoreStack};
use crate::walk::SparseAffinity;
use crate::wcam::{decode_stack, encode_stack};
use crate::{cam, Error, Result};

pub use config::PipelineConfig;
pub use manifest::{sha256_hex, MANIFEST};
pub use steps::{affinity_pairs, check_stack_classes, infer_affinity, prepare_cams, refine, ClassSelection};

use manifest::{SceneIo, Stage};

pub const CAMS: &str = "_cams.wcam";
pub const BG: &str = "_bg.wcam";
pub const CONF: &str = "_conf.json";
pub const AFFLABELS: &str = "_afflabels.png";
pub const PAIRS: &str = "_pairs.wcam";
pub const AFF: &str = "_aff.wcam";
pub const LABEL: &str = "_label.png";
pub const LABEL_RGB: &str = "_label_rgb.png";
pub const HEAD: &str = "head.wcam";
const BG_NAME: &str = "background";

/// Ids of files named `<id><suffix>` in `dir`, sorted.
pub fn ids_with_suffix(dir: &Path, suffix: &str) -> Result<Vec<String>> {
    let mut ids = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(|e| Error::path(dir, e))? {
        let entry = entry.map_err(|e| Error::path(dir, e))?;
        if let Some(id) = entry.file_name().to_str().and_then(|n| n.strip_suffix(suffix)) {
            ids.push(id.to_string());
        }
    }
    ids.sort();
    Ok(ids)
}

fn each<T: Send>(n: usize, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
    par::map_range(Execution::default(), n, f).into_iter().collect()
}

fn finish_scenes(mut stage: Stage, scenes: Vec<SceneIo>) -> Result<String> {
    for io in scenes {
        stage.absorb(io)?;
    }
    stage.finish()
}

fn bg_stack(bg: &Plane) -> Result<ScoreStack> {
    ScoreStack::new(bg.width(), bg.height(), vec![BG_NAME.into()], bg.data().to_vec())
}

fn read_stack(io: &mut SceneIo, role: &str, path: &Path) -> Result<ScoreStack> {
    decode_stack(&io.read(role, path)?).map_err(|e| at(path, e))
}

fn read_bg(io: &mut SceneIo, role: &str, path: &Path) -> Result<Plane> {
    let s = read_stack(io, role, path)?;
    if s.num_classes() != 1 {
        return Err(Error::Validation(format!("{} must hold one plane", path.display())));
    }
    Ok(s.plane_owned(0))
}

/// Prefixes format/validation errors with the offending file.
fn at(path: &Path, e: Error) -> Error {
    match e {
        Error::Format { offset, msg } => Error::Format {
            offset,
            msg: format!("{}: {msg}", path.display()),
        },
        Error::Validation(m) => Error::Validation(format!("{}: {m}", path.display())),
        other => other,
    }
}

/// Reads a label map: single-channel PNGs hold raw codes, RGB PNGs are palette colors.
pub fn load_labels(path: &Path, bytes: &[u8], palette: &ClassPalette) -> Result<LabelMap> {
    let img = image::load_from_memory(bytes).map_err(|e| at(path, e.into()))?;
    let labels = if img.color() == image::ColorType::L8 {
        let g = img.into_luma8();
        let (w, h) = g.dimensions();
        LabelMap::new(w as usize, h as usize, g.into_raw())?
    } else {
        let rgb = img.into_rgb8();
        let (w, h) = rgb.dimensions();
        let r = Raster::from_u8(w as usize, h as usize, 3, rgb.into_raw())?;
        rgb_decode(&r, palette, false).map_err(|e| Error::Validation(format!("{}: {e}", path.display())))?
    };
    labels.validate(palette.len()).map_err(|e| at(path, e))?;
    Ok(labels)
}

fn image_from_bytes(path: &Path, bytes: &[u8]) -> Result<Raster> {
    let img = image::load_from_memory(bytes).map_err(|e| at(path, e.into()))?.into_rgb8();
    let (w, h) = img.dimensions();
    Raster::from_u8(w as usize, h as usize, 3, img.into_raw())
}

fn names_to_ids(names: &[String], palette: &ClassPalette) -> Result<BTreeSet<ClassId>> {
    names
        .iter()
        .map(|n| palette.id_of(n).ok_or_else(|| Error::Validation(format!("unknown class name {n:?}"))))
        .collect()
}

fn confidence_json(stack: &ScoreStack, conf: &ConfidenceVector) -> Vec<u8> {
    let map: Map<String, Value> = stack
        .classes()
        .iter()
        .zip(conf.scores())
        .map(|(n, &s)| (n.clone(), json!(s as f64)))
        .collect();
    let mut text = serde_json::to_string_pretty(&Value::Object(map)).expect("plain map");
    text.push('\n');
    text.into_bytes()
}

fn parse_confidence(path: &Path, bytes: &[u8], stack: &ScoreStack) -> Result<ConfidenceVector> {
    let v: Value = serde_json::from_slice(bytes).map_err(|e| Error::format(0, format!("{}: {e}", path.display())))?;
    let scores = stack
        .classes()
        .iter()
        .map(|n| {
            v.get(n)
                .and_then(Value::as_f64)
                .map(|s| s as f32)
                .ok_or_else(|| Error::Validation(format!("{}: no confidence for {n:?}", path.display())))
        })
        .collect::<Result<Vec<_>>>()?;
    ConfidenceVector::new(scores)
}

/// Writes `count` synthetic scenes `scene_000, ...` with images, RGB masks, CAMs
/// and classifier confidences.
pub fn run_synth(out: &Path, count: usize, spec: &SynthSpec, palette: &ClassPalette) -> Result<String> {
    spec.validate(palette)?;
    let config = json!({
        "scenes": count,
        "seed": spec.seed,
        "width": spec.width,
        "height": spec.height,
        "classes": spec.classes,
        "regions": format!("{:?}", spec.regions),
        "blur": spec.blur,
        "noise": spec.noise as f64,
        "ceiling": spec.ceiling as f64,
        "texture": spec.texture as f64,
        "palette": palette.names(),
    });
    let stage = Stage::begin("synth", out, config)?;
    let scenes = each(count, |i| {
        let id = format!("scene_{i:03}");
        let s = synth::synthesize(
            &SynthSpec {
                seed: crate::afflabels::derive_seed(&[spec.seed, i as u64]),
                ..spec.clone()
            },
            palette,
        )?;
        let mut io = SceneIo::default();
        io.write(format!("{id}_sat.png"), s.image.encode_png()?);
        io.write(format!("{id}_mask.png"), rgb_encode(&s.gt, palette)?.encode_png()?);
        io.write(format!("{id}{CAMS}"), encode_stack(&s.cams)?);
        io.write(format!("{id}{CONF}"), confidence_json(&s.cams, &s.confidence));
        Ok(io)
    })?;
    finish_scenes(stage, scenes)
}

/// Per-patch tiles of every scene. Image-level labels are reduced per patch, or
/// per whole scene with `scene_labels`.
pub fn run_tile(data: &Path, out: &Path, size: usize, scene_labels: bool, min_fraction: f64, palette: &ClassPalette) -> Result<String> {
    let records = dataset::scan(data)?;
    let config = json!({ "size": size, "scene_labels": scene_labels, "min_fraction": min_fraction });
    let stage = Stage::begin("tile", out, config)?;
    let scenes = each(records.len(), |i| {
        let rec = &records[i];
        let mut io = SceneIo::default();
        let image = image_from_bytes(&rec.image, &io.read("data", &rec.image)?)?;
        let (grid, tiles) = dataset::tile(&image, size)?;
        let mask = match &rec.mask {
            Some(p) => Some(load_labels(p, &io.read("data", p)?, palette)?),
            None => None,
        };
        let cams = match &rec.cams {
            Some(p) => Some(read_stack(&mut io, "data", p)?),
            None => None,
        };
        let scene_set = match &mask {
            Some(m) if scene_labels => Some(dataset::reduce_to_image_labels(m, min_fraction, palette.unknown())?),
            _ => None,
        };
        for (t, patch) in grid.tiles.iter().zip(tiles) {
            let pid = format!("{}_r{:02}_c{:02}", rec.id, t.y / grid.size, t.x / grid.size);
            io.write(format!("{pid}_sat.png"), patch.encode_png()?);
            if let Some(m) = &mask {
                let pm = m.crop(t.x, t.y, t.width, t.height)?;
                io.write(format!("{pid}_mask.png"), rgb_encode(&pm, palette)?.encode_png()?);
                let set = match &scene_set {
                    Some(s) => s.clone(),
                    None => dataset::reduce_to_image_labels(&pm, min_fraction, palette.unknown())?,
                };
                let names: Vec<String> = set.iter().map(|c| palette.entries()[c.index()].name.clone()).collect();
                io.write(format!("{pid}{}", dataset::CLASSES_SUFFIX), format!("{}\n", names.join("\n")).into_bytes());
            }
            if let Some(c) = &cams {
                io.write(format!("{pid}{CAMS}"), encode_stack(&crop_stack(c, t)?)?);
            }
        }
        Ok(io)
    })?;
    finish_scenes(stage, scenes)
}

fn selection(rec: &SceneRecord, io: &mut SceneIo, stack: &ScoreStack, cfg: &PipelineConfig, palette: &ClassPalette) -> Result<ClassSelection> {
    if cfg.image_labels {
        if let Some(names) = &rec.classes {
            return Ok(ClassSelection::Present(names_to_ids(names, palette)?));
        }
        let Some(mask) = &rec.mask else {
            return Err(Error::Validation(format!("scene {:?} has no image-level labels or mask", rec.id)));
        };
        let m = load_labels(mask, &io.read("data", mask)?, palette)?;
        return Ok(ClassSelection::Present(dataset::reduce_to_image_labels(
            &m,
            cfg.min_fraction,
            palette.unknown(),
        )?));
    }
    let path = rec.image.with_file_name(format!("{}{CONF}", rec.id));
    let bytes = io.read("data", &path)?;
    Ok(ClassSelection::Confidence(parse_confidence(&path, &bytes, stack)?, cfg.threshold))
}

/// Normalized, class-filtered CAMs plus the background plane for `cfg.alpha`.
pub fn run_bg_cam(data: &Path, out: &Path, cfg: &PipelineConfig, palette: &ClassPalette) -> Result<String> {
    cfg.validate()?;
    let records: Vec<SceneRecord> = dataset::scan(data)?.into_iter().filter(|r| r.cams.is_some()).collect();
    if records.is_empty() {
        return Err(Error::Validation(format!("no scenes with CAMs under {}", data.display())));
    }
    let stage = Stage::begin("bg-cam", out, cfg.to_json())?;
    let scenes = each(records.len(), |i| {
        let rec = &records[i];
        let mut io = SceneIo::default();
        let raw = read_stack(&mut io, "data", rec.cams.as_ref().expect("filtered"))?;
        check_stack_classes(&raw, palette)?;
        let sel = selection(rec, &mut io, &raw, cfg, palette)?;
        let (stack, bg) = prepare_cams(&raw, &sel, cfg.alpha)?;
        io.write(format!("{}{CAMS}", rec.id), encode_stack(&stack)?);
        io.write(format!("{}{BG}", rec.id), encode_stack(&bg_stack(&bg)?)?);
        Ok(io)
    })?;
    finish_scenes(stage, scenes)
}

/// Confident labels and pair sets on the feature grid.
pub fn run_afflabels(cams_dir: &Path, out: &Path, cfg: &PipelineConfig) -> Result<String> {
    cfg.validate()?;
    let ids = ids_with_suffix(cams_dir, CAMS)?;
    let dual = cfg.dual_alpha()?;
    let stage = Stage::begin("afflabels", out, cfg.to_json())?;
    let scenes = each(ids.len(), |i| {
        let id = &ids[i];
        let mut io = SceneIo::default();
        let stack = read_stack(&mut io, "cams", &cams_dir.join(format!("{id}{CAMS}")))?;
        let (labels, pairs) = affinity_pairs(&stack, &cfg.head, dual, cfg.gamma)?;
        io.write(format!("{id}{AFFLABELS}"), labels.to_code_raster().encode_png()?);
        io.write(format!("{id}{PAIRS}"), pairs.encode()?);
        Ok(io)
    })?;
    finish_scenes(stage, scenes)
}

/// Trains the feature head on the scenes that have pairs (or a seeded subset).
pub fn run_train_aff(data: &Path, pairs_dir: &Path, out: &Path, cfg: &PipelineConfig) -> Result<String> {
    cfg.validate()?;
    let with_pairs: BTreeSet<String> = ids_with_suffix(pairs_dir, PAIRS)?.into_iter().collect();
    let records: Vec<SceneRecord> = dataset::scan(data)?
        .into_iter()
        .filter(|r| with_pairs.contains(&r.id))
        .collect();
    let n = cfg.train_count.unwrap_or(records.len());
    let (mut train, _) = dataset::split(&records, n, cfg.train.seed)?;
    train.sort_by(|a, b| a.id.cmp(&b.id));
    if train.is_empty() {
        return Err(Error::Validation("no training scenes with pairs".into()));
    }
    let mut stage = Stage::begin("train-aff", out, cfg.to_json())?;
    let loaded = each(train.len(), |i| {
        let rec = &train[i];
        let mut io = SceneIo::default();
        let image = image_from_bytes(&rec.image, &io.read("data", &rec.image)?)?;
        let path = pairs_dir.join(format!("{}{PAIRS}", rec.id));
        let pairs = PairSet::decode(&io.read("pairs", &path)?).map_err(|e| at(&path, e))?;
        Ok((io, (image, pairs)))
    })?;
    let mut dataset = Vec::with_capacity(loaded.len());
    for (io, item) in loaded {
        stage.absorb(io)?;
        dataset.push(item);
    }
    let outcome = model::train(&dataset, cfg.head, &cfg.train, &cfg.weights()?)?;
    let ids: Vec<&str> = train.iter().map(|r| r.id.as_str()).collect();
    stage.write("train_ids.txt", format!("{}\n", ids.join("\n")).as_bytes())?;
    stage.write(HEAD, &outcome.params.encode()?)?;
    stage.write("loss.csv", outcome.trace_csv().as_bytes())?;
    stage.finish()
}

/// Sparse affinity matrices from the trained head.
pub fn run_infer_aff(data: &Path, model_dir: &Path, out: &Path, cfg: &PipelineConfig) -> Result<String> {
    cfg.validate()?;
    let mut stage = Stage::begin("infer-aff", out, cfg.to_json())?;
    let head_path = model_dir.join(HEAD);
    let mut head_io = SceneIo::default();
    let params = FeatureHeadParams::decode(&head_io.read("model", &head_path)?).map_err(|e| at(&head_path, e))?;
    stage.absorb(head_io)?;
    let records = dataset::scan(data)?;
    let scenes = each(records.len(), |i| {
        let rec = &records[i];
        let mut io = SceneIo::default();
        let image = image_from_bytes(&rec.image, &io.read("data", &rec.image)?)?;
        let aff = infer_affinity(&params, &image, cfg.gamma)?;
        io.write(format!("{}{AFF}", rec.id), aff.encode()?);
        Ok(io)
    })?;
    finish_scenes(stage, scenes)
}

/// Random-walk refinement of the prepared CAMs and background planes.
pub fn run_propagate(cams_dir: &Path, aff_dir: &Path, out: &Path, cfg: &PipelineConfig) -> Result<String> {
    cfg.validate()?;
    let ids = ids_with_suffix(cams_dir, CAMS)?;
    let stage = Stage::begin("propagate", out, cfg.to_json())?;
    let scenes = each(ids.len(), |i| {
        let id = &ids[i];
        let mut io = SceneIo::default();
        let stack = read_stack(&mut io, "cams", &cams_dir.join(format!("{id}{CAMS}")))?;
        let bg = read_bg(&mut io, "cams", &cams_dir.join(format!("{id}{BG}")))?;
        let path = aff_dir.join(format!("{id}{AFF}"));
        let aff = SparseAffinity::decode(&io.read("affinity", &path)?).map_err(|e| at(&path, e))?;
        let (walked, walked_bg) = refine(&stack, &bg, &aff, &cfg.walk)?;
        io.write(format!("{id}{CAMS}"), encode_stack(&walked)?);
        io.write(format!("{id}{BG}"), encode_stack(&bg_stack(&walked_bg)?)?);
        Ok(io)
    })?;
    finish_scenes(stage, scenes)
}

/// Argmax labels from a directory of `<id>_cams.wcam` + `<id>_bg.wcam`.
pub fn run_labels(cams_dir: &Path, out: &Path, palette: &ClassPalette) -> Result<String> {
    let ids = ids_with_suffix(cams_dir, CAMS)?;
    let stage = Stage::begin("labels", out, json!({ "palette": palette.names() }))?;
    let scenes = each(ids.len(), |i| {
        let id = &ids[i];
        let mut io = SceneIo::default();
        let stack = read_stack(&mut io, "cams", &cams_dir.join(format!("{id}{CAMS}")))?;
        let bg = read_bg(&mut io, "cams", &cams_dir.join(format!("{id}{BG}")))?;
        let labels = cam::assign_labels(&stack, &bg)?;
        io.write(format!("{id}{LABEL}"), labels.to_code_raster().encode_png()?);
        io.write(format!("{id}{LABEL_RGB}"), rgb_encode(&labels, palette)?.encode_png()?);
        Ok(io)
    })?;
    finish_scenes(stage, scenes)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneScore {
    pub id: String,
    pub precision: Option<f64>,
    pub recall: f64,
    pub miou: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalSummary {
    pub total: ConfusionMatrix,
    pub scenes: Vec<SceneScore>,
}

impl EvalSummary {
    pub fn precision_recall(&self) -> (Option<f64>, f64) {
        eval::precision_recall(&self.total)
    }

    pub fn miou(&self) -> f64 {
        eval::miou(&self.total).1
    }
}

/// Scores `<id>_label.png` predictions against the data directory's masks.
/// Unknown ground truth is ignored.
pub fn run_eval(pred_dir: &Path, data: &Path, out: &Path, palette: &ClassPalette) -> Result<EvalSummary> {
    let ids: BTreeSet<String> = ids_with_suffix(pred_dir, LABEL)?.into_iter().collect();
    let records: Vec<SceneRecord> = dataset::scan(data)?.into_iter().filter(|r| ids.contains(&r.id)).collect();
    if records.len() != ids.len() {
        return Err(Error::Validation("some predictions have no matching scene".into()));
    }
    let ignore: BTreeSet<ClassId> = palette.unknown().into_iter().collect();
    let mut stage = Stage::begin("eval", out, json!({ "palette": palette.names() }))?;
    let per = each(records.len(), |i| {
        let rec = &records[i];
        let mut io = SceneIo::default();
        let path = pred_dir.join(format!("{}{LABEL}", rec.id));
        let pred = load_labels(&path, &io.read("pred", &path)?, palette)?;
        let mask = rec
            .mask
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("scene {:?} has no mask", rec.id)))?;
        let gt = load_labels(mask, &io.read("data", mask)?, palette)?;
        Ok((io, eval::confusion(&pred, &gt, palette.len(), &ignore)?))
    })?;
    let mut total = ConfusionMatrix::new(palette.len());
    let mut scenes = Vec::new();
    let mut csv = String::from("id,precision,recall,miou\n");
    for (rec, (io, cm)) in records.iter().zip(per) {
        stage.absorb(io)?;
        total.merge(&cm)?;
        let (p, r) = eval::precision_recall(&cm);
        let m = eval::miou(&cm).1;
        csv.push_str(&format!(
            "{},{},{r:.6},{m:.6}\n",
            rec.id,
            p.map_or_else(|| "n/a".into(), |p| format!("{p:.6}"))
        ));
        scenes.push(SceneScore {
            id: rec.id.clone(),
            precision: p,
            recall: r,
            miou: m,
        });
    }
    let names = palette.names();
    stage.write("metrics.csv", eval::report_csv(&total, &names).as_bytes())?;
    stage.write("metrics.txt", eval::report_table(&total, &names).as_bytes())?;
    stage.write("per_scene.csv", csv.as_bytes())?;
    stage.finish()?;
    Ok(EvalSummary { total, scenes })
}

/// Stage directory names under a pipeline output root, in run order.
pub const STAGES: [&str; 9] = [
    "bg-cam",
    "afflabels",
    "train-aff",
    "infer-aff",
    "propagate",
    "labels",
    "eval",
    "labels-cam",
    "eval-cam",
];

/// Runs every stage under `out/<stage>`; `labels-cam`/`eval-cam` score the CAMs
/// without the random walk. Returns the refined and unrefined evaluations.
pub fn run_pipeline(data: &Path, out: &Path, cfg: &PipelineConfig, palette: &ClassPalette) -> Result<(EvalSummary, EvalSummary)> {
    cfg.validate()?;
    let dir = |s: &str| -> PathBuf { out.join(s) };
    let mut hashes = Map::new();
    let mut note = |name: &str, h: String| {
        hashes.insert(name.to_string(), Value::String(h));
    };
    note("bg-cam", run_bg_cam(data, &dir("bg-cam"), cfg, palette)?);
    note("afflabels", run_afflabels(&dir("bg-cam"), &dir("afflabels"), cfg)?);
    note("train-aff", run_train_aff(data, &dir("afflabels"), &dir("train-aff"), cfg)?);
    note("infer-aff", run_infer_aff(data, &dir("train-aff"), &dir("infer-aff"), cfg)?);
    note("propagate", run_propagate(&dir("bg-cam"), &dir("infer-aff"), &dir("propagate"), cfg)?);
    note("labels", run_labels(&dir("propagate"), &dir("labels"), palette)?);
    let refined = run_eval(&dir("labels"), data, &dir("eval"), palette)?;
    note("eval", stage_hash(&dir("eval"))?);
    note("labels-cam", run_labels(&dir("bg-cam"), &dir("labels-cam"), palette)?);
    let raw = run_eval(&dir("labels-cam"), data, &dir("eval-cam"), palette)?;
    note("eval-cam", stage_hash(&dir("eval-cam"))?);
    let doc = json!({ "config": cfg.to_json(), "stages": hashes });
    let mut text = serde_json::to_string_pretty(&doc).map_err(|e| Error::Internal(e.to_string()))?;
    text.push('\n');
    let path = out.join(MANIFEST);
    std::fs::write(&path, text).map_err(|e| Error::path(&path, e))?;
    Ok((refined, raw))
}

fn stage_hash(dir: &Path) -> Result<String> {
    Ok(sha256_hex(&manifest::read(&dir.join(MANIFEST))?))
}
