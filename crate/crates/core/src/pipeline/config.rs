//! Resolved run configuration and the flat `key = value` file format.

use serde_json::{json, Value};

use crate::afflabels::DualAlpha;
use crate::cam::Alpha;
use crate::model::{HeadConfig, LossWeights, TrainConfig};
use crate::walk::WalkConfig;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    /// Background exponent used for propagation and final labels.
    pub alpha: Alpha,
    pub alpha_fg: Alpha,
    pub alpha_bg: Alpha,
    pub gamma: f64,
    pub loss_a: f64,
    pub loss_b: f64,
    pub loss_c: f64,
    pub walk: WalkConfig,
    pub head: HeadConfig,
    pub train: TrainConfig,
    /// Number of scenes the affinity head trains on; `None` uses every scene.
    pub train_count: Option<usize>,
    /// Use ground-truth image-level labels; otherwise select classes by confidence.
    pub image_labels: bool,
    pub threshold: f64,
    pub min_fraction: f64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let dual = DualAlpha::default();
        let w = LossWeights::default();
        PipelineConfig {
            alpha: Alpha::Infinity,
            alpha_fg: dual.fg(),
            alpha_bg: dual.bg(),
            gamma: 5.0,
            loss_a: w.a(),
            loss_b: w.b(),
            loss_c: w.c(),
            walk: WalkConfig::default(),
            head: HeadConfig::default(),
            train: TrainConfig::default(),
            train_count: None,
            image_labels: true,
            threshold: 0.4,
            min_fraction: 0.0,
        }
    }
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::arg(format!("invalid value {value:?} for `{key}`")))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::arg(format!("invalid value {value:?} for `{key}`"))),
    }
}

impl PipelineConfig {
    pub const KEYS: [&'static str; 21] = [
        "alpha",
        "alpha_fg",
        "alpha_bg",
        "gamma",
        "loss_a",
        "loss_b",
        "loss_c",
        "beta",
        "iters",
        "stride",
        "depth",
        "lr",
        "momentum",
        "epochs",
        "pair_cap",
        "eps",
        "seed",
        "train_count",
        "image_labels",
        "threshold",
        "min_fraction",
    ];

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "alpha" => self.alpha = value.parse()?,
            "alpha_fg" => self.alpha_fg = value.parse()?,
            "alpha_bg" => self.alpha_bg = value.parse()?,
            "gamma" => self.gamma = num(key, value)?,
            "loss_a" => self.loss_a = num(key, value)?,
            "loss_b" => self.loss_b = num(key, value)?,
            "loss_c" => self.loss_c = num(key, value)?,
            "beta" => self.walk.beta = num(key, value)?,
            "iters" => self.walk.iterations = num(key, value)?,
            "stride" => self.head.stride = num(key, value)?,
            "depth" => self.head.depth = num(key, value)?,
            "lr" => self.train.lr = num(key, value)?,
            "momentum" => self.train.momentum = num(key, value)?,
            "epochs" => self.train.epochs = num(key, value)?,
            "pair_cap" => self.train.pair_cap = num(key, value)?,
            "eps" => self.train.eps = num(key, value)?,
            "seed" => self.train.seed = num(key, value)?,
            "train_count" => {
                self.train_count = match value.trim() {
                    "all" => None,
                    v => Some(num(key, v)?),
                }
            }
            "image_labels" => self.image_labels = boolean(key, value)?,
            "threshold" => self.threshold = num(key, value)?,
            "min_fraction" => self.min_fraction = num(key, value)?,
            _ => return Err(Error::arg(format!("unknown config key `{key}`"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; blank lines and `#` comments are skipped.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::arg(format!("config line {}: expected `key = value`", n + 1)))?;
            self.set(k.trim(), v.trim())
                .map_err(|e| Error::arg(format!("config line {}: {e}", n + 1)))?;
        }
        Ok(())
    }

    pub fn dual_alpha(&self) -> Result<DualAlpha> {
        DualAlpha::new(self.alpha_fg, self.alpha_bg)
    }

    pub fn weights(&self) -> Result<LossWeights> {
        LossWeights::new(self.loss_a, self.loss_b, self.loss_c)
    }

    pub fn validate(&self) -> Result<()> {
        self.dual_alpha()?;
        self.weights()?;
        self.walk.validate()?;
        self.head.validate()?;
        self.train.validate()?;
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::arg(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(0.0..=1.0).contains(&self.threshold) {
            return Err(Error::arg(format!("threshold {} outside [0, 1]", self.threshold)));
        }
        if !(0.0..1.0).contains(&self.min_fraction) {
            return Err(Error::arg(format!("min_fraction {} outside [0, 1)", self.min_fraction)));
        }
        Ok(())
    }

    /// Every key with its resolved value; object keys serialize sorted.
    pub fn to_json(&self) -> Value {
        json!({
            "alpha": self.alpha.to_string(),
            "alpha_fg": self.alpha_fg.to_string(),
            "alpha_bg": self.alpha_bg.to_string(),
            "gamma": self.gamma,
            "loss_a": self.loss_a,
            "loss_b": self.loss_b,
            "loss_c": self.loss_c,
            "beta": self.walk.beta,
            "iters": self.walk.iterations,
            "stride": self.head.stride,
            "depth": self.head.depth,
            "lr": self.train.lr,
            "momentum": self.train.momentum,
            "epochs": self.train.epochs,
            "pair_cap": self.train.pair_cap,
            "eps": self.train.eps,
            "seed": self.train.seed,
            "train_count": self.train_count.map_or_else(|| "all".to_string(), |n| n.to_string()),
            "image_labels": self.image_labels,
            "threshold": self.threshold,
            "min_fraction": self.min_fraction,
        })
    }
}
