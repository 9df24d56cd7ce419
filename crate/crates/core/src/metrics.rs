//! Evaluation: pixel F1 on manipulated images, image-level sensitivity,
//! specificity and F1, AUC, Com-F1, threshold search and robustness sweeps.

use std::fmt::Write as _;
use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::perturb::Perturbation;
use crate::data::{make_batch, Sample};
use crate::error::{Error, Result};
use crate::model::Model;

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Prediction and ground truth for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoredSample {
    pub seg_map: Vec<f64>,
    pub image_score: f64,
    pub truth_mask: Vec<u8>,
    pub truth_label: u8,
}

impl ScoredSample {
    pub fn new(seg_map: Vec<f64>, image_score: f64, truth_mask: Vec<u8>, truth_label: u8) -> Result<Self> {
        if seg_map.len() != truth_mask.len() {
            return Err(Error::Input(format!(
                "prediction has {} pixels but the mask has {}",
                seg_map.len(),
                truth_mask.len()
            )));
        }
        if !(0.0..=1.0).contains(&image_score) || truth_label > 1 || truth_mask.iter().any(|&m| m > 1) {
            return Err(Error::Input("scores must lie in [0,1] and labels in {0,1}".into()));
        }
        Ok(Self {
            seg_map,
            image_score,
            truth_mask,
            truth_label,
        })
    }

    pub fn is_manipulated(&self) -> bool {
        self.truth_label == 1
    }
}

/// How pixel counts are combined across images.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PixelAggregation {
    /// One confusion matrix over all pixels of all manipulated images.
    #[default]
    Pooled,
    /// Per-image precision, recall and F1, averaged.
    PerImage,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PixelScores {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn scores(&self) -> PixelScores {
        let precision = ratio(self.tp, self.tp + self.fp);
        let recall = ratio(self.tp, self.tp + self.fn_);
        PixelScores {
            precision,
            recall,
            f1: harmonic(precision, recall),
        }
    }
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// `2ab/(a+b)`, zero when either argument is zero.
fn harmonic(a: f64, b: f64) -> f64 {
    if a <= 0.0 || b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

pub fn com_f1(pixel_f1: f64, image_f1: f64) -> f64 {
    harmonic(pixel_f1, image_f1)
}

pub fn pixel_confusion(seg_map: &[f64], truth: &[u8], threshold: f64) -> Confusion {
    let mut c = Confusion::default();
    for (&p, &t) in seg_map.iter().zip(truth) {
        match (p > threshold, t != 0) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    c
}

fn manipulated(samples: &[ScoredSample]) -> Result<Vec<&ScoredSample>> {
    let m: Vec<&ScoredSample> = samples.iter().filter(|s| s.is_manipulated()).collect();
    if m.is_empty() {
        return Err(Error::Evaluation("pixel F1 needs at least one manipulated image".into()));
    }
    Ok(m)
}

/// Pixel precision, recall and F1 over the manipulated samples; a pixel is
/// positive when its probability exceeds `threshold`.
pub fn pixel_f1(samples: &[ScoredSample], threshold: f64, aggregation: PixelAggregation) -> Result<PixelScores> {
    let m = manipulated(samples)?;
    let per: Vec<Confusion> = m
        .par_iter()
        .map(|s| pixel_confusion(&s.seg_map, &s.truth_mask, threshold))
        .collect();
    Ok(aggregate(&per, aggregation))
}

fn aggregate(per: &[Confusion], aggregation: PixelAggregation) -> PixelScores {
    match aggregation {
        PixelAggregation::Pooled => {
            let mut total = Confusion::default();
            for c in per {
                total.tp += c.tp;
                total.fp += c.fp;
                total.fn_ += c.fn_;
                total.tn += c.tn;
            }
            total.scores()
        }
        PixelAggregation::PerImage => {
            let n = per.len() as f64;
            let mut acc = PixelScores::default();
            for s in per.iter().map(Confusion::scores) {
                acc.precision += s.precision;
                acc.recall += s.recall;
                acc.f1 += s.f1;
            }
            PixelScores {
                precision: acc.precision / n,
                recall: acc.recall / n,
                f1: acc.f1 / n,
            }
        }
    }
}

/// Image-level rates; `None` when the class they are measured on is absent.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ImageScores {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
}

impl ImageScores {
    /// Harmonic mean of sensitivity and specificity.
    pub fn f1(&self) -> Result<f64> {
        match (self.sensitivity, self.specificity) {
            (Some(a), Some(b)) => Ok(harmonic(a, b)),
            _ => Err(Error::Evaluation(
                "image F1 needs both manipulated and authentic images".into(),
            )),
        }
    }
}

/// An image is called manipulated when its score exceeds `threshold`.
pub fn image_metrics(samples: &[ScoredSample], threshold: f64) -> ImageScores {
    let (mut pos, mut tp, mut neg, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for s in samples {
        let called = s.image_score > threshold;
        if s.is_manipulated() {
            pos += 1;
            tp += u64::from(called);
        } else {
            neg += 1;
            tn += u64::from(!called);
        }
    }
    ImageScores {
        sensitivity: (pos > 0).then(|| tp as f64 / pos as f64),
        specificity: (neg > 0).then(|| tn as f64 / neg as f64),
    }
}

/// Area under the ROC curve as the Mann-Whitney statistic, ties counted
/// half.
pub fn auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Input("scores and labels differ in length".into()));
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::Input("AUC scores must be finite".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l != 0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Evaluation("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    // average ranks (1-based) over tie groups
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let avg_rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            if labels[k] != 0 {
                rank_sum_pos += avg_rank;
            }
        }
        i = j + 1;
    }
    let (p, n) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * n))
}

/// `{0.01, 0.02, ..., 0.99}`.
pub fn default_grid() -> Vec<f64> {
    (1..=99).map(|i| f64::from(i) / 100.0).collect()
}

/// Threshold from `grid` maximising pixel F1; ties go to the lowest
/// threshold.
pub fn optimal_threshold_f1(
    samples: &[ScoredSample],
    grid: &[f64],
    aggregation: PixelAggregation,
) -> Result<(f64, PixelScores)> {
    if grid.is_empty() || grid.iter().any(|t| !(*t > 0.0 && *t < 1.0)) {
        return Err(Error::Config("threshold grid must be nonempty and inside (0,1)".into()));
    }
    let m = manipulated(samples)?;
    let mut sorted = grid.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();

    // per image, pixels are binned by how many grid thresholds they exceed
    let bins = sorted.len() + 1;
    let hists: Vec<(Vec<u64>, Vec<u64>)> = m
        .par_iter()
        .map(|s| {
            let mut pos = vec![0u64; bins];
            let mut neg = vec![0u64; bins];
            for (&p, &t) in s.seg_map.iter().zip(&s.truth_mask) {
                let k = sorted.partition_point(|&g| p > g);
                if t != 0 {
                    pos[k] += 1;
                } else {
                    neg[k] += 1;
                }
            }
            (pos, neg)
        })
        .collect();

    let mut best: Option<(f64, PixelScores)> = None;
    for (i, &t) in sorted.iter().enumerate() {
        let per: Vec<Confusion> = hists
            .iter()
            .map(|(pos, neg)| {
                let tp: u64 = pos[i + 1..].iter().sum();
                let fp: u64 = neg[i + 1..].iter().sum();
                let fn_: u64 = pos[..=i].iter().sum();
                let tn: u64 = neg[..=i].iter().sum();
                Confusion { tp, fp, fn_, tn }
            })
            .collect();
        let scores = aggregate(&per, aggregation);
        if best.is_none_or(|(_, b)| scores.f1 > b.f1) {
            best = Some((t, scores));
        }
    }
    Ok(best.expect("grid is nonempty"))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    #[default]
    Fixed,
    Optimal,
}

impl fmt::Display for ThresholdMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Fixed => "fixed",
            Self::Optimal => "optimal",
        })
    }
}

impl FromStr for ThresholdMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fixed" => Ok(Self::Fixed),
            "optimal" => Ok(Self::Optimal),
            _ => Err(Error::Config(format!("unknown threshold mode {s:?}, expected fixed or optimal"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub mode: ThresholdMode,
    /// Pixel threshold in fixed mode, image threshold in both modes.
    pub threshold: f64,
    pub aggregation: PixelAggregation,
    pub grid: Vec<f64>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            mode: ThresholdMode::Fixed,
            threshold: DEFAULT_THRESHOLD,
            aggregation: PixelAggregation::Pooled,
            grid: default_grid(),
        }
    }
}

impl EvalOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold >= 0.0 && self.threshold <= 1.0) {
            return Err(Error::Config(format!("threshold must be in [0,1], got {}", self.threshold)));
        }
        Ok(())
    }
}

/// Full evaluation of one test set. Undefined metrics are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub mode: ThresholdMode,
    pub pixel_threshold: f64,
    pub image_threshold: f64,
    pub manipulated: usize,
    pub authentic: usize,
    pub pixel_precision: f64,
    pub pixel_recall: f64,
    pub pixel_f1: f64,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub image_f1: Option<f64>,
    pub auc: Option<f64>,
    pub com_f1: Option<f64>,
}

/// Fails when there is no manipulated sample, since pixel metrics are
/// then undefined.
pub fn evaluate(samples: &[ScoredSample], options: &EvalOptions) -> Result<MetricsReport> {
    options.validate()?;
    let (pixel_threshold, pixel) = match options.mode {
        ThresholdMode::Fixed => (
            options.threshold,
            pixel_f1(samples, options.threshold, options.aggregation)?,
        ),
        ThresholdMode::Optimal => optimal_threshold_f1(samples, &options.grid, options.aggregation)?,
    };
    let image = image_metrics(samples, options.threshold);
    let image_f1 = image.f1().ok();
    let scores: Vec<f64> = samples.iter().map(|s| s.image_score).collect();
    let labels: Vec<u8> = samples.iter().map(|s| s.truth_label).collect();
    let manipulated = labels.iter().filter(|&&l| l == 1).count();
    Ok(MetricsReport {
        mode: options.mode,
        pixel_threshold,
        image_threshold: options.threshold,
        manipulated,
        authentic: samples.len() - manipulated,
        pixel_precision: pixel.precision,
        pixel_recall: pixel.recall,
        pixel_f1: pixel.f1,
        sensitivity: image.sensitivity,
        specificity: image.specificity,
        image_f1,
        auc: auc(&scores, &labels).ok(),
        com_f1: image_f1.map(|f| com_f1(pixel.f1, f)),
    })
}

fn fmt_value(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v}"))
}

impl MetricsReport {
    /// Named values in report order.
    pub fn metrics(&self) -> Vec<(&'static str, Option<f64>)> {
        vec![
            ("pixel_threshold", Some(self.pixel_threshold)),
            ("image_threshold", Some(self.image_threshold)),
            ("manipulated", Some(self.manipulated as f64)),
            ("authentic", Some(self.authentic as f64)),
            ("pixel_precision", Some(self.pixel_precision)),
            ("pixel_recall", Some(self.pixel_recall)),
            ("pixel_f1", Some(self.pixel_f1)),
            ("sensitivity", self.sensitivity),
            ("specificity", self.specificity),
            ("image_f1", self.image_f1),
            ("auc", self.auc),
            ("com_f1", self.com_f1),
        ]
    }

    /// One `testset,mode,metric,value` record per metric, with a header.
    pub fn to_csv(&self, testset: &str) -> String {
        let mut out = String::from("testset,mode,metric,value\n");
        for (name, value) in self.metrics() {
            let _ = writeln!(out, "{testset},{},{name},{}", self.mode, fmt_value(value));
        }
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "mode={} pixel_f1={:.4} sensitivity={} specificity={} image_f1={} auc={} com_f1={}",
            self.mode,
            self.pixel_f1,
            fmt_opt4(self.sensitivity),
            fmt_opt4(self.specificity),
            fmt_opt4(self.image_f1),
            fmt_opt4(self.auc),
            fmt_opt4(self.com_f1),
        )
    }
}

fn fmt_opt4(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".to_string(), |v| format!("{v:.4}"))
}

/// Runs the model over `samples` in chunks of `batch_size`. Chunks are
/// scored in parallel; results keep the input order.
pub fn score_samples(model: &Model, samples: &[Sample], batch_size: usize) -> Result<Vec<ScoredSample>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let chunks: Vec<Vec<ScoredSample>> = samples
        .par_chunks(batch_size)
        .map(|chunk| -> Result<Vec<ScoredSample>> {
            let (x, _) = make_batch(chunk)?;
            let pred = model.predict(&x)?;
            chunk
                .iter()
                .enumerate()
                .map(|(i, s)| {
                    ScoredSample::new(
                        pred.seg(i).to_vec(),
                        pred.image_score[i],
                        s.label.mask.as_slice().to_vec(),
                        s.label.image_label,
                    )
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(chunks.into_iter().flatten().collect())
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub level: f64,
    pub value: f64,
}

/// Pixel F1 at the fixed threshold after degrading every image at each
/// level. Labels are left untouched.
pub fn robustness_sweep(
    model: &Model,
    samples: &[Sample],
    levels: &[Perturbation],
    batch_size: usize,
) -> Result<Vec<CurvePoint>> {
    levels
        .iter()
        .map(|level| {
            let degraded = samples
                .par_iter()
                .map(|s| {
                    let mut d = s.clone();
                    d.image = level.apply(&s.image)?;
                    Ok(d)
                })
                .collect::<Result<Vec<Sample>>>()?;
            let scored = score_samples(model, &degraded, batch_size)?;
            let f1 = pixel_f1(&scored, DEFAULT_THRESHOLD, PixelAggregation::Pooled)?.f1;
            Ok(CurvePoint {
                level: level.level(),
                value: f1,
            })
        })
        .collect()
}

/// `level,value` lines.
pub fn curve_to_csv(points: &[CurvePoint]) -> String {
    let mut out = String::new();
    for p in points {
        let _ = writeln!(out, "{},{}", p.level, p.value);
    }
    out
}
