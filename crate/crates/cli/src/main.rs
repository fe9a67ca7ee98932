use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use affseg::dataset::{RegionModel, SynthSpec};
use affseg::palette::ClassPalette;
use affseg::pipeline::{self, PipelineConfig};
use affseg::{eval, Error};

/// Dense segmentation labels from class activation maps and image-level labels.
#[derive(Parser, Debug)]
#[command(name = "affseg", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Flat `key = value` config file; flags below override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Class palette file (`name r g b` per line). Defaults to DeepGlobe.
    #[arg(long, global = true)]
    palette: Option<PathBuf>,

    /// Worker threads for scene-level parallelism.
    #[arg(long, global = true)]
    jobs: Option<usize>,

    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    knobs: Knobs,
}

/// Overrides for [`PipelineConfig`]; values use the config-file syntax.
#[derive(Args, Debug, Default)]
struct Knobs {
    /// Background exponent for propagation and final labels (`inf` disables it).
    #[arg(long, global = true)]
    alpha: Option<String>,
    #[arg(long, global = true)]
    alpha_fg: Option<String>,
    #[arg(long, global = true)]
    alpha_bg: Option<String>,
    /// Pair / affinity radius in feature-grid cells.
    #[arg(long, global = true)]
    gamma: Option<String>,
    #[arg(long, global = true)]
    loss_a: Option<String>,
    #[arg(long, global = true)]
    loss_b: Option<String>,
    #[arg(long, global = true)]
    loss_c: Option<String>,
    #[arg(long, global = true)]
    beta: Option<String>,
    #[arg(long, global = true)]
    iters: Option<String>,
    #[arg(long, global = true)]
    stride: Option<String>,
    #[arg(long, global = true)]
    depth: Option<String>,
    #[arg(long, global = true)]
    lr: Option<String>,
    #[arg(long, global = true)]
    momentum: Option<String>,
    #[arg(long, global = true)]
    epochs: Option<String>,
    #[arg(long, global = true)]
    pair_cap: Option<String>,
    #[arg(long, global = true)]
    eps: Option<String>,
    /// Seed for initialization, pair sampling and the train split.
    #[arg(long, global = true)]
    seed: Option<String>,
    /// Scenes used to train the affinity head (`all` by default).
    #[arg(long, global = true)]
    train_count: Option<String>,
    /// Confidence threshold for class selection without image-level labels.
    #[arg(long, global = true)]
    threshold: Option<String>,
    #[arg(long, global = true)]
    min_fraction: Option<String>,
    /// Select classes by classifier confidence instead of image-level labels.
    #[arg(long, global = true)]
    no_image_labels: bool,
}

impl Knobs {
    fn apply(&self, cfg: &mut PipelineConfig) -> affseg::Result<()> {
        let pairs = [
            ("alpha", &self.alpha),
            ("alpha_fg", &self.alpha_fg),
            ("alpha_bg", &self.alpha_bg),
            ("gamma", &self.gamma),
            ("loss_a", &self.loss_a),
            ("loss_b", &self.loss_b),
            ("loss_c", &self.loss_c),
            ("beta", &self.beta),
            ("iters", &self.iters),
            ("stride", &self.stride),
            ("depth", &self.depth),
            ("lr", &self.lr),
            ("momentum", &self.momentum),
            ("epochs", &self.epochs),
            ("pair_cap", &self.pair_cap),
            ("eps", &self.eps),
            ("seed", &self.seed),
            ("train_count", &self.train_count),
            ("threshold", &self.threshold),
            ("min_fraction", &self.min_fraction),
        ];
        for (key, value) in pairs {
            if let Some(v) = value {
                cfg.set(key, v)?;
            }
        }
        if self.no_image_labels {
            cfg.image_labels = false;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Layout {
    Voronoi,
    Rectangles,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a seeded synthetic dataset (images, masks, CAMs, confidences).
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 20)]
        scenes: usize,
        #[arg(long, default_value_t = 0)]
        synth_seed: u64,
        #[arg(long, default_value_t = 64)]
        width: usize,
        #[arg(long, default_value_t = 64)]
        height: usize,
        #[arg(long, default_value_t = 3)]
        classes: usize,
        #[arg(long, value_enum, default_value_t = Layout::Voronoi)]
        layout: Layout,
        /// Seed points (voronoi) or rectangles (rectangles) per scene.
        #[arg(long, default_value_t = 10)]
        regions: usize,
        #[arg(long, default_value_t = 4)]
        blur: usize,
        #[arg(long, default_value_t = 0.3)]
        noise: f32,
        #[arg(long, default_value_t = 1.0)]
        ceiling: f32,
        #[arg(long, default_value_t = 0.08)]
        texture: f32,
    },
    /// Cut scenes into fixed-size patches with per-patch image-level labels.
    Tile {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 306)]
        size: usize,
        /// Reduce image-level labels over the whole scene instead of each patch.
        #[arg(long)]
        scene_labels: bool,
    },
    /// Normalize and filter CAMs and compute the background map.
    BgCam {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Confident labels and training pairs on the feature grid.
    Afflabels {
        #[arg(long)]
        cams: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the affinity feature head.
    TrainAff {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        pairs: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compute sparse affinities with a trained head.
    InferAff {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Random-walk refinement of prepared CAMs.
    Propagate {
        #[arg(long)]
        cams: PathBuf,
        #[arg(long)]
        affinity: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Argmax label maps from CAMs and background planes.
    Labels {
        #[arg(long)]
        cams: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Precision, recall and mIoU of label maps against masks.
    Eval {
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every stage into subdirectories of `--out`.
    Pipeline {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Io(_) | Error::Path { .. } | Error::Image(_) => 2,
        Error::Divergence { .. } => 4,
        Error::Argument(_) | Error::Format { .. } | Error::Validation(_) | Error::Internal(_) => 3,
    }
}

fn load_config(cli: &Cli) -> affseg::Result<PipelineConfig> {
    let mut cfg = PipelineConfig::default();
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Path {
            path: path.clone(),
            source: e,
        })?;
        cfg.apply_text(&text)?;
    }
    cli.knobs.apply(&mut cfg)?;
    cfg.validate()?;
    Ok(cfg)
}

fn print_eval(label: &str, summary: &pipeline::EvalSummary, palette: &ClassPalette) {
    println!("{label}");
    print!("{}", eval::report_table(&summary.total, &palette.names()));
}

fn run(cli: &Cli, palette: &ClassPalette) -> affseg::Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth {
            out,
            scenes,
            synth_seed,
            width,
            height,
            classes,
            layout,
            regions,
            blur,
            noise,
            ceiling,
            texture,
        } => {
            let spec = SynthSpec {
                seed: *synth_seed,
                width: *width,
                height: *height,
                classes: *classes,
                regions: match layout {
                    Layout::Voronoi => RegionModel::Voronoi { seeds: *regions },
                    Layout::Rectangles => RegionModel::Rectangles { count: *regions },
                },
                blur: *blur,
                noise: *noise,
                ceiling: *ceiling,
                texture: *texture,
            };
            pipeline::run_synth(out, *scenes, &spec, palette)?;
        }
        Command::Tile {
            data,
            out,
            size,
            scene_labels,
        } => {
            pipeline::run_tile(data, out, *size, *scene_labels, cfg.min_fraction, palette)?;
        }
        Command::BgCam { data, out } => {
            pipeline::run_bg_cam(data, out, &cfg, palette)?;
        }
        Command::Afflabels { cams, out } => {
            pipeline::run_afflabels(cams, out, &cfg)?;
        }
        Command::TrainAff { data, pairs, out } => {
            pipeline::run_train_aff(data, pairs, out, &cfg)?;
        }
        Command::InferAff { data, model, out } => {
            pipeline::run_infer_aff(data, model, out, &cfg)?;
        }
        Command::Propagate { cams, affinity, out } => {
            pipeline::run_propagate(cams, affinity, out, &cfg)?;
        }
        Command::Labels { cams, out } => {
            pipeline::run_labels(cams, out, palette)?;
        }
        Command::Eval { pred, data, out } => {
            let summary = pipeline::run_eval(pred, data, out, palette)?;
            print_eval("labels", &summary, palette);
        }
        Command::Pipeline { data, out } => {
            let (refined, raw) = pipeline::run_pipeline(data, out, &cfg, palette)?;
            print_eval("after random walk", &refined, palette);
            print_eval("CAM argmax", &raw, palette);
        }
    }
    Ok(())
}

fn load_palette(path: Option<&Path>) -> affseg::Result<ClassPalette> {
    match path {
        Some(p) => ClassPalette::load(p),
        None => Ok(ClassPalette::deepglobe()),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return ExitCode::from(if usage { 1 } else { 0 });
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let jobs = cli
        .jobs
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    let result = load_palette(cli.palette.as_deref())
        .and_then(|palette| affseg::par::with_jobs(jobs, || run(&cli, &palette)).and_then(|r| r));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
