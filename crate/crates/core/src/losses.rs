//! Multi-scale supervision: pixel Dice, edge Dice, image BCE.
//!
//! Authentic samples (empty masks) only contribute the image-level term.

use mvss_tensor::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Clamp applied to probabilities before any logarithm.
pub const PROB_CLAMP: f64 = 1e-6;

/// Convex weights `(alpha, beta)`; the edge term gets `1 - alpha - beta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossWeights {
    pub alpha: f64,
    pub beta: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            alpha: 0.16,
            beta: 0.04,
        }
    }
}

impl LossWeights {
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let w = Self { alpha, beta };
        w.validate()?;
        Ok(w)
    }

    pub fn validate(&self) -> Result<()> {
        let open_unit = |v: f64| v > 0.0 && v < 1.0;
        if !open_unit(self.alpha) || !open_unit(self.beta) || self.alpha + self.beta >= 1.0 {
            return Err(Error::Config(format!(
                "loss weights need alpha, beta in (0, 1) with alpha + beta < 1, got ({}, {})",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    pub fn seg(&self) -> f64 {
        self.alpha
    }

    pub fn clf(&self) -> f64 {
        self.beta
    }

    pub fn edge(&self) -> f64 {
        1.0 - self.alpha - self.beta
    }
}

fn dice_terms(pred: &[f64], target: &[f64]) -> (f64, f64) {
    let mut overlap = 0.0;
    let mut norm = 0.0;
    for (&p, &y) in pred.iter().zip(target) {
        overlap += p * y;
        norm += p * p + y * y;
    }
    (overlap, norm)
}

/// `1 - 2·Σ p·y / (Σ p² + Σ y²)` for one sample.
pub fn dice_loss(pred: &[f64], target: &[f64]) -> Result<f64> {
    if pred.len() != target.len() {
        return Err(Error::Input(format!(
            "dice: prediction has {} elements, target {}",
            pred.len(),
            target.len()
        )));
    }
    if let Some(p) = pred.iter().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Input(format!("dice: prediction {p} outside [0, 1]")));
    }
    if !target.iter().any(|&y| y > 0.0) {
        return Err(Error::Contract(
            "dice loss is undefined for an empty (authentic) target".into(),
        ));
    }
    let (overlap, norm) = dice_terms(pred, target);
    Ok(1.0 - 2.0 * overlap / norm)
}

/// Dice loss on the stride-4 edge pair.
pub fn edge_loss(edge_pred: &[f64], edge_label: &[f64]) -> Result<f64> {
    dice_loss(edge_pred, edge_label)
}

/// Binary cross-entropy of a clamped image score.
pub fn clf_loss(score: f64, label: u8) -> f64 {
    let s = score.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
    if label > 0 {
        -s.ln()
    } else {
        -(1.0 - s).ln()
    }
}

/// Per-sample Dice over `[batch, ...]`; excluded samples yield 0 with zero gradient.
pub fn dice_per_sample<'t>(pred: Var<'t>, target: &Tensor, include: &[bool]) -> Var<'t> {
    let p = pred.value();
    assert_eq!(p.shape(), target.shape(), "dice: shape mismatch");
    let n = p.shape()[0];
    assert_eq!(include.len(), n, "dice: include mask length");
    let mut terms = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for b in 0..n {
        let (overlap, norm) = dice_terms(p.outer(b), target.outer(b));
        terms.push((overlap, norm));
        out.push(if include[b] && norm > 0.0 { 1.0 - 2.0 * overlap / norm } else { 0.0 });
    }
    let target = target.clone();
    let include = include.to_vec();
    pred.tape().op(Tensor::new(&[n], out), &[pred], move |grad, _| {
        let mut dp = Tensor::zeros(p.shape());
        for (b, &(overlap, norm)) in terms.iter().enumerate() {
            if !include[b] || norm <= 0.0 {
                continue;
            }
            let g = grad.data()[b];
            let scale = -2.0 * g / (norm * norm);
            for ((d, &pv), &y) in dp.outer_mut(b).iter_mut().zip(p.outer(b)).zip(target.outer(b)) {
                *d = scale * (y * norm - 2.0 * overlap * pv);
            }
        }
        vec![Some(dp)]
    })
}

/// Per-sample clamped BCE for scores `[batch]`.
pub fn clf_per_sample<'t>(score: Var<'t>, labels: &[u8]) -> Var<'t> {
    let s = score.value();
    assert_eq!(s.len(), labels.len(), "clf: label count mismatch");
    let out: Vec<f64> = s.data().iter().zip(labels).map(|(&v, &y)| clf_loss(v, y)).collect();
    let labels = labels.to_vec();
    let shape = s.shape().to_vec();
    score.tape().op(Tensor::new(&shape, out), &[score], move |grad, _| {
        let d = s
            .data()
            .iter()
            .zip(&labels)
            .zip(grad.data())
            .map(|((&v, &y), &g)| {
                if v < PROB_CLAMP || v > 1.0 - PROB_CLAMP {
                    0.0
                } else if y > 0 {
                    -g / v
                } else {
                    g / (1.0 - v)
                }
            })
            .collect();
        vec![Some(Tensor::new(&shape, d))]
    })
}

/// Ground truth for a batch.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchLabels {
    /// `[batch, 1, H, W]`, values in `{0, 1}`.
    pub masks: Tensor,
    /// `[batch, 1, H/4, W/4]`, values in `{0, 1}`.
    pub edges: Tensor,
    /// `max` of each mask.
    pub image_labels: Vec<u8>,
}

impl BatchLabels {
    pub fn new(masks: Tensor, edges: Tensor) -> Result<Self> {
        if masks.rank() != 4 || edges.rank() != 4 || masks.shape()[0] != edges.shape()[0] {
            return Err(Error::Input(format!(
                "label shapes {:?} / {:?} are not matching [batch, 1, h, w]",
                masks.shape(),
                edges.shape()
            )));
        }
        let image_labels = (0..masks.shape()[0])
            .map(|b| u8::from(masks.outer(b).iter().any(|&v| v > 0.0)))
            .collect();
        Ok(Self {
            masks,
            edges,
            image_labels,
        })
    }

    pub fn batch(&self) -> usize {
        self.image_labels.len()
    }

    pub fn manipulated(&self) -> Vec<bool> {
        self.image_labels.iter().map(|&y| y > 0).collect()
    }
}

/// Combined loss as a graph node plus its detached components.
pub struct LossBreakdown<'t> {
    pub total: Var<'t>,
    /// Mean pixel Dice over manipulated samples (`None` if there are none).
    pub seg: Option<f64>,
    pub edge: Option<f64>,
    /// Mean BCE over all samples.
    pub clf: f64,
}

impl LossBreakdown<'_> {
    pub fn value(&self) -> f64 {
        self.total.value().data()[0]
    }
}

/// Batch mean of `α·seg + β·clf + (1-α-β)·edge`, where authentic samples
/// keep only `β·clf`.
pub fn combined_loss<'t>(
    seg_map: Var<'t>,
    edge_map: Var<'t>,
    image_score: Var<'t>,
    labels: &BatchLabels,
    weights: LossWeights,
) -> Result<LossBreakdown<'t>> {
    weights.validate()?;
    let n = labels.batch();
    if seg_map.shape() != labels.masks.shape() || edge_map.shape() != labels.edges.shape() {
        return Err(Error::Input(format!(
            "prediction shapes {:?}/{:?} do not match labels {:?}/{:?}",
            seg_map.shape(),
            edge_map.shape(),
            labels.masks.shape(),
            labels.edges.shape()
        )));
    }
    if image_score.shape() != [n] {
        return Err(Error::Input("image score must hold one value per sample".into()));
    }
    let include = labels.manipulated();
    let inv_n = 1.0 / n as f64;

    let clf = clf_per_sample(image_score, &labels.image_labels);
    let clf_mean = clf.value().sum() * inv_n;
    let mut total = clf.weighted_sum(&vec![weights.clf() * inv_n; n]);

    let manipulated = include.iter().filter(|&&m| m).count();
    let (mut seg_mean, mut edge_mean) = (None, None);
    if manipulated > 0 {
        let seg = dice_per_sample(seg_map, &labels.masks, &include);
        let edge = dice_per_sample(edge_map, &labels.edges, &include);
        seg_mean = Some(seg.value().sum() / manipulated as f64);
        edge_mean = Some(edge.value().sum() / manipulated as f64);
        let mask_weights = |w: f64| -> Vec<f64> {
            include.iter().map(|&m| if m { w * inv_n } else { 0.0 }).collect()
        };
        let seg_term = seg.weighted_sum(&mask_weights(weights.seg()));
        let edge_term = edge.weighted_sum(&mask_weights(weights.edge()));
        total = seg_map.tape().add_all(&[total, seg_term, edge_term]);
    }
    Ok(LossBreakdown {
        total,
        seg: seg_mean,
        edge: edge_mean,
        clf: clf_mean,
    })
}

/// Detached per-sample combined loss for one prediction/label pair.
pub fn combined_loss_value(
    seg_map: &[f64],
    edge_map: &[f64],
    image_score: f64,
    mask: &[f64],
    edge_label: &[f64],
    weights: LossWeights,
) -> Result<f64> {
    weights.validate()?;
    let label = u8::from(mask.iter().any(|&v| v > 0.0));
    let clf = clf_loss(image_score, label);
    if label == 0 {
        return Ok(weights.clf() * clf);
    }
    let seg = dice_loss(seg_map, mask)?;
    let edge = edge_loss(edge_map, edge_label)?;
    Ok(weights.seg() * seg + weights.clf() * clf + weights.edge() * edge)
}
