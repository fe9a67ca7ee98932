use std::collections::BTreeMap;
use std::path::Path;

use affseg::dataset::{RegionModel, SynthSpec};
use affseg::palette::ClassPalette;
use affseg::pipeline::{self, PipelineConfig, MANIFEST};
use affseg::Error;

fn small_spec() -> SynthSpec {
    SynthSpec {
        width: 24,
        height: 20,
        regions: RegionModel::Voronoi { seeds: 5 },
        ..SynthSpec::default()
    }
}

fn quick_config() -> PipelineConfig {
    let mut cfg = PipelineConfig::default();
    cfg.apply_text("epochs = 3\nalpha = 8\ngamma = 3").unwrap();
    cfg
}

/// Every file under `dir` by relative path.
fn tree(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in std::fs::read_dir(&d).unwrap() {
            let p = entry.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                let rel = p.strip_prefix(dir).unwrap().to_string_lossy().into_owned();
                out.insert(rel, std::fs::read(&p).unwrap());
            }
        }
    }
    out
}

#[test]
fn pipeline_equals_the_manual_stage_chain() {
    let root = tempfile::tempdir().unwrap();
    let p = ClassPalette::deepglobe();
    let data = root.path().join("data");
    pipeline::run_synth(&data, 3, &small_spec(), &p).unwrap();
    let cfg = quick_config();

    let auto = root.path().join("auto");
    pipeline::run_pipeline(&data, &auto, &cfg, &p).unwrap();

    let m = root.path().join("manual");
    let d = |s: &str| m.join(s);
    pipeline::run_bg_cam(&data, &d("bg-cam"), &cfg, &p).unwrap();
    pipeline::run_afflabels(&d("bg-cam"), &d("afflabels"), &cfg).unwrap();
    pipeline::run_train_aff(&data, &d("afflabels"), &d("train-aff"), &cfg).unwrap();
    pipeline::run_infer_aff(&data, &d("train-aff"), &d("infer-aff"), &cfg).unwrap();
    pipeline::run_propagate(&d("bg-cam"), &d("infer-aff"), &d("propagate"), &cfg).unwrap();
    pipeline::run_labels(&d("propagate"), &d("labels"), &p).unwrap();
    pipeline::run_eval(&d("labels"), &data, &d("eval"), &p).unwrap();
    pipeline::run_labels(&d("bg-cam"), &d("labels-cam"), &p).unwrap();
    pipeline::run_eval(&d("labels-cam"), &data, &d("eval-cam"), &p).unwrap();

    let mut a = tree(&auto);
    assert!(a.remove(MANIFEST).is_some());
    assert_eq!(a, tree(&m));
    for stage in pipeline::STAGES {
        assert!(auto.join(stage).join(MANIFEST).is_file(), "{stage}");
    }
    let top = std::fs::read_to_string(auto.join(MANIFEST)).unwrap();
    assert!(top.contains("\"propagate\"") && top.contains("\"alpha\""));
}

#[test]
fn rerun_is_byte_identical() {
    let root = tempfile::tempdir().unwrap();
    let p = ClassPalette::deepglobe();
    let data = root.path().join("data");
    let h1 = pipeline::run_synth(&data, 2, &small_spec(), &p).unwrap();
    let h2 = pipeline::run_synth(&root.path().join("data2"), 2, &small_spec(), &p).unwrap();
    assert_eq!(h1, h2);
    let cfg = quick_config();
    pipeline::run_pipeline(&data, &root.path().join("a"), &cfg, &p).unwrap();
    pipeline::run_pipeline(&data, &root.path().join("b"), &cfg, &p).unwrap();
    assert_eq!(tree(&root.path().join("a")), tree(&root.path().join("b")));
}

#[test]
fn ground_truth_scores_perfectly() {
    let root = tempfile::tempdir().unwrap();
    let p = ClassPalette::deepglobe();
    let data = root.path().join("data");
    pipeline::run_synth(&data, 2, &small_spec(), &p).unwrap();
    let pred = root.path().join("pred");
    std::fs::create_dir_all(&pred).unwrap();
    for id in pipeline::ids_with_suffix(&data, "_mask.png").unwrap() {
        std::fs::copy(data.join(format!("{id}_mask.png")), pred.join(format!("{id}_label.png"))).unwrap();
    }
    let s = pipeline::run_eval(&pred, &data, &root.path().join("eval"), &p).unwrap();
    assert_eq!(s.precision_recall(), (Some(1.0), 1.0));
    assert_eq!(s.miou(), 1.0);
    assert_eq!(s.scenes.len(), 2);
    let csv = std::fs::read_to_string(root.path().join("eval/per_scene.csv")).unwrap();
    assert!(csv.starts_with("id,precision,recall,miou\nscene_000,1.000000,1.000000,1.000000"));
}

#[test]
fn confidence_selection_runs_without_image_labels() {
    let root = tempfile::tempdir().unwrap();
    let p = ClassPalette::deepglobe();
    let data = root.path().join("data");
    pipeline::run_synth(&data, 2, &small_spec(), &p).unwrap();
    let mut cfg = quick_config();
    cfg.image_labels = false;
    cfg.set("threshold", "1").unwrap();
    pipeline::run_bg_cam(&data, &root.path().join("bg"), &cfg, &p).unwrap();
    let manifest = std::fs::read_to_string(root.path().join("bg").join(MANIFEST)).unwrap();
    assert!(manifest.contains("data/scene_000_conf.json"));
    assert!(!manifest.contains("data/scene_000_mask.png"));
    // a threshold nobody reaches leaves every pixel to the background
    let out = root.path().join("labels");
    pipeline::run_labels(&root.path().join("bg"), &out, &p).unwrap();
    let img = image::open(out.join("scene_000_label.png")).unwrap().into_luma8();
    assert!(img.pixels().all(|px| px.0[0] == affseg::BACKGROUND));
}

#[test]
fn tiling_stage_writes_patches_with_class_lists() {
    let root = tempfile::tempdir().unwrap();
    let p = ClassPalette::deepglobe();
    let data = root.path().join("data");
    pipeline::run_synth(&data, 1, &small_spec(), &p).unwrap();
    let tiles = root.path().join("tiles");
    pipeline::run_tile(&data, &tiles, 10, false, 0.0, &p).unwrap();
    let ids = pipeline::ids_with_suffix(&tiles, "_sat.png").unwrap();
    // 24 x 20 at size 10: three columns (the last one clamped), two rows
    let expected: Vec<String> = (0..2)
        .flat_map(|r| (0..3).map(move |c| format!("scene_000_r{r:02}_c{c:02}")))
        .collect();
    assert_eq!(ids, expected);
    for id in &ids {
        for suffix in ["_mask.png", "_cams.wcam", "_classes.txt"] {
            assert!(tiles.join(format!("{id}{suffix}")).is_file(), "{id}{suffix}");
        }
    }
    // per-patch labels are a subset of the scene's
    let whole = root.path().join("whole");
    pipeline::run_tile(&data, &whole, 10, true, 0.0, &p).unwrap();
    let full: Vec<String> = std::fs::read_to_string(whole.join("scene_000_r00_c00_classes.txt"))
        .unwrap()
        .lines()
        .map(String::from)
        .collect();
    for id in &ids {
        let part = std::fs::read_to_string(tiles.join(format!("{id}_classes.txt"))).unwrap();
        assert!(part.lines().all(|n| full.iter().any(|f| f == n)));
    }
    // tiled scenes feed the later stages directly
    pipeline::run_bg_cam(&tiles, &root.path().join("bg"), &quick_config(), &p).unwrap();
}

#[test]
fn missing_inputs_are_io_errors() {
    let root = tempfile::tempdir().unwrap();
    let p = ClassPalette::deepglobe();
    let err = pipeline::run_bg_cam(&root.path().join("nope"), &root.path().join("o"), &quick_config(), &p).unwrap_err();
    assert!(matches!(err, Error::Path { .. } | Error::Io(_)), "{err:?}");
    let data = root.path().join("data");
    pipeline::run_synth(&data, 1, &small_spec(), &p).unwrap();
    let err = pipeline::run_infer_aff(&data, &root.path().join("no-model"), &root.path().join("o"), &quick_config()).unwrap_err();
    assert!(matches!(err, Error::Path { .. }), "{err:?}");
}
