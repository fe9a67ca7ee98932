//! Pixel-level precision/recall and IoU from a confusion matrix.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::raster::{ClassId, LabelMap, BACKGROUND};
use crate::{Error, Result};

/// Rows are ground-truth classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    /// Per ground-truth class: pixels predicted as BACKGROUND or NEUTRAL.
    unlabeled: Vec<u64>,
    ignored: u64,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            classes,
            counts: vec![0; classes * classes],
            unlabeled: vec![0; classes],
            ignored: 0,
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.classes + pred]
    }

    pub fn unlabeled(&self, gt: usize) -> u64 {
        self.unlabeled[gt]
    }

    pub fn ignored(&self) -> u64 {
        self.ignored
    }

    /// Pixels that entered the matrix or the unlabeled counters.
    pub fn counted(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.unlabeled.iter().sum::<u64>()
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::arg("cannot merge confusion matrices of different sizes"));
        }
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            *a += b;
        }
        for (a, b) in self.unlabeled.iter_mut().zip(&other.unlabeled) {
            *a += b;
        }
        self.ignored += other.ignored;
        Ok(())
    }

    fn diagonal(&self) -> u64 {
        (0..self.classes).map(|c| self.get(c, c)).sum()
    }
}

/// Tallies `pred` against `gt`, skipping pixels whose ground truth is in `ignore_gt`.
pub fn confusion(pred: &LabelMap, gt: &LabelMap, classes: usize, ignore_gt: &BTreeSet<ClassId>) -> Result<ConfusionMatrix> {
    if (pred.width(), pred.height()) != (gt.width(), gt.height()) {
        return Err(Error::arg(format!(
            "prediction {}x{} vs ground truth {}x{}",
            pred.width(),
            pred.height(),
            gt.width(),
            gt.height()
        )));
    }
    let mut cm = ConfusionMatrix::new(classes);
    for (i, (&p, &g)) in pred.codes().iter().zip(gt.codes()).enumerate() {
        if ignore_gt.contains(&ClassId(g)) {
            cm.ignored += 1;
            continue;
        }
        if g as usize >= classes {
            return Err(Error::Validation(format!("ground-truth code {g} at pixel {i} is not a class")));
        }
        if p >= BACKGROUND {
            cm.unlabeled[g as usize] += 1;
        } else if (p as usize) < classes {
            cm.counts[g as usize * classes + p as usize] += 1;
        } else {
            return Err(Error::Validation(format!("predicted code {p} at pixel {i} is not a class")));
        }
    }
    Ok(cm)
}

/// Micro-averaged `(precision, recall)`. Precision is `None` when nothing was
/// predicted as a class; recall is 0 when nothing was counted.
pub fn precision_recall(cm: &ConfusionMatrix) -> (Option<f64>, f64) {
    let tp = cm.diagonal() as f64;
    let predicted: u64 = cm.counts.iter().sum();
    let all = predicted + cm.unlabeled.iter().sum::<u64>();
    let precision = (predicted > 0).then(|| tp / predicted as f64);
    let recall = if all > 0 { tp / all as f64 } else { 0.0 };
    (precision, recall)
}

/// Per-class IoU (`None` for classes absent from both prediction and ground truth)
/// and their mean. The mean is 0 when every class is absent.
pub fn miou(cm: &ConfusionMatrix) -> (Vec<Option<f64>>, f64) {
    let n = cm.classes;
    let ratios: Vec<Option<(u64, u64)>> = (0..n)
        .map(|c| {
            let tp = cm.get(c, c);
            let fn_ = (0..n).map(|p| cm.get(c, p)).sum::<u64>() - tp + cm.unlabeled[c];
            let fp = (0..n).map(|g| cm.get(g, c)).sum::<u64>() - tp;
            let denom = tp + fp + fn_;
            (denom > 0).then_some((tp, denom))
        })
        .collect();
    let ious = ratios.iter().map(|r| r.map(|(a, b)| a as f64 / b as f64)).collect();
    let present: Vec<(u64, u64)> = ratios.into_iter().flatten().collect();
    let mean = if present.is_empty() {
        0.0
    } else {
        exact_mean(&present).unwrap_or_else(|| {
            present.iter().map(|&(a, b)| a as f64 / b as f64).sum::<f64>() / present.len() as f64
        })
    };
    (ious, mean)
}

fn gcd(mut a: u128, mut b: u128) -> u128 {
    while b != 0 {
        (a, b) = (b, a % b);
    }
    a
}

/// Mean of `a / b` fractions summed exactly, so the single final division is
/// correctly rounded. `None` when the reduced terms outgrow 53 bits.
fn exact_mean(fracs: &[(u64, u64)]) -> Option<f64> {
    let (mut num, mut den) = (0u128, 1u128);
    for &(a, b) in fracs {
        let (a, b) = (a as u128, b as u128);
        let l = den / gcd(den, b) * b;
        num = num.checked_mul(l / den)?.checked_add(a.checked_mul(l / b)?)?;
        den = l;
        let g = gcd(num, den);
        (num, den) = (num / g, den / g);
    }
    den = den.checked_mul(fracs.len() as u128)?;
    let g = gcd(num, den);
    (num, den) = (num / g, den / g);
    const LIMIT: u128 = 1 << 53;
    (num <= LIMIT && den <= LIMIT).then(|| num as f64 / den as f64)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".to_string(), |v| format!("{v:.6}"))
}

/// `metric,class,value` rows.
pub fn report_csv(cm: &ConfusionMatrix, names: &[String]) -> String {
    let (p, r) = precision_recall(cm);
    let (ious, mean) = miou(cm);
    let mut s = String::from("metric,class,value\n");
    let _ = writeln!(s, "precision,,{}", fmt_opt(p));
    let _ = writeln!(s, "recall,,{r:.6}");
    let _ = writeln!(s, "miou,,{mean:.6}");
    for (c, iou) in ious.iter().enumerate() {
        let name = names.get(c).map_or("?", String::as_str);
        let _ = writeln!(s, "iou,{name},{}", fmt_opt(*iou));
    }
    s
}

pub fn report_table(cm: &ConfusionMatrix, names: &[String]) -> String {
    let (p, r) = precision_recall(cm);
    let (ious, mean) = miou(cm);
    let width = names.iter().map(String::len).max().unwrap_or(0).max(9);
    let mut s = String::new();
    let _ = writeln!(s, "{:<width$}  {}", "precision", fmt_opt(p));
    let _ = writeln!(s, "{:<width$}  {r:.6}", "recall");
    let _ = writeln!(s, "{:<width$}  {mean:.6}", "mIoU");
    let _ = writeln!(s, "{:-<1$}", "", width + 10);
    for (c, iou) in ious.iter().enumerate() {
        let name = names.get(c).map_or("?", String::as_str);
        let _ = writeln!(s, "{name:<width$}  {}", fmt_opt(*iou));
    }
    s
}
