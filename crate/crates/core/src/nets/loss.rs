use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::Vec3;

/// Chamfer distance and its gradient with respect to the predicted points.
#[derive(Debug, Clone, PartialEq)]
pub struct Chamfer {
    pub value: f64,
    pub grad: Vec<Vec3>,
}

fn nearest(p: Vec3, set: &[Vec3]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (i, q) in set.iter().enumerate() {
        let d = (p - *q).norm_squared();
        if d < best.1 {
            best = (i, d);
        }
    }
    best
}

/// Sum of squared nearest-neighbour distances in both directions (sums, not means).
pub fn chamfer_loss(pred: &[Vec3], gt: &[Vec3]) -> Result<Chamfer> {
    if pred.is_empty() || gt.is_empty() {
        return Err(Error::EmptyInput("chamfer of an empty cloud"));
    }
    let mut grad = vec![Vec3::ZERO; pred.len()];
    let mut to_pred = 0.0;
    for &x in gt {
        let (j, d) = nearest(x, pred);
        to_pred += d;
        grad[j] += (pred[j] - x) * 2.0;
    }
    let mut to_gt = 0.0;
    for (j, &p) in pred.iter().enumerate() {
        let (i, d) = nearest(p, gt);
        to_gt += d;
        grad[j] += (p - gt[i]) * 2.0;
    }
    Ok(Chamfer {
        value: to_pred + to_gt,
        grad,
    })
}

/// Chamfer value only.
pub fn chamfer_distance(a: &[Vec3], b: &[Vec3]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::EmptyInput("chamfer of an empty cloud"));
    }
    let one = |from: &[Vec3], to: &[Vec3]| from.iter().map(|&p| nearest(p, to).1).sum::<f64>();
    Ok(one(b, a) + one(a, b))
}

/// Mean two-class softmax cross-entropy over points; `logits` is `[n, 2]`.
///
/// Any nonzero label counts as the object class. Returns the loss and
/// d loss / d logits.
pub fn segmentation_loss(logits: &[f64], labels: &[u8]) -> Result<(f64, Vec<f64>)> {
    if logits.len() != 2 * labels.len() {
        return Err(Error::Shape(format!(
            "{} logits for {} labels (expected 2 per point)",
            logits.len(),
            labels.len()
        )));
    }
    if labels.is_empty() {
        return Err(Error::EmptyInput("segmentation loss over no points"));
    }
    let inv = 1.0 / labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (i, &l) in labels.iter().enumerate() {
        let (a, b) = (logits[2 * i], logits[2 * i + 1]);
        let m = a.max(b);
        let lse = m + ((a - m).exp() + (b - m).exp()).ln();
        let target = usize::from(l != 0);
        loss += lse - logits[2 * i + target];
        let pa = (a - lse).exp();
        let pb = (b - lse).exp();
        grad[2 * i] = (pa - f64::from(u8::from(target == 0))) * inv;
        grad[2 * i + 1] = (pb - f64::from(u8::from(target == 1))) * inv;
    }
    Ok((loss * inv, grad))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualLoss {
    pub value: f64,
    pub grad_t: Vec3,
    pub grad_s: Vec3,
}

/// `MSE(pred_t, t) + MSE(pred_s, s)`, each averaged over the three components.
pub fn residual_loss(pred_t: Vec3, pred_s: Vec3, target_t: Vec3, target_s: Vec3) -> ResidualLoss {
    let et = pred_t - target_t;
    let es = pred_s - target_s;
    ResidualLoss {
        value: (et.norm_squared() + es.norm_squared()) / 3.0,
        grad_t: et * (2.0 / 3.0),
        grad_s: es * (2.0 / 3.0),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda_seg: f64,
    pub lambda_rec: f64,
    pub lambda_rot: f64,
    pub lambda_res: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_seg: 0.001,
            lambda_rec: 1.0,
            lambda_rot: 0.001,
            lambda_res: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        let all = [self.lambda_seg, self.lambda_rec, self.lambda_rot, self.lambda_res];
        if all.iter().all(|w| w.is_finite() && *w >= 0.0) {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("loss weights must be >= 0, got {self:?}")))
        }
    }
}

/// The four loss terms of one instance; `rot` is the minimized rotation objective.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct LossParts {
    pub seg: f64,
    pub rec: f64,
    pub rot: f64,
    pub res: f64,
}

impl LossParts {
    pub fn add(&mut self, o: &LossParts) {
        self.seg += o.seg;
        self.rec += o.rec;
        self.rot += o.rot;
        self.res += o.res;
    }

    pub fn scaled(&self, s: f64) -> LossParts {
        LossParts {
            seg: self.seg * s,
            rec: self.rec * s,
            rot: self.rot * s,
            res: self.res * s,
        }
    }
}

pub fn total_loss(parts: &LossParts, w: &LossWeights) -> f64 {
    w.lambda_seg * parts.seg + w.lambda_rec * parts.rec + w.lambda_rot * parts.rot + w.lambda_res * parts.res
}
