use serde::{Deserialize, Serialize};

use super::MetricError;

/// Axis-aligned box with positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self, MetricError> {
        if ![x1, y1, x2, y2].iter().all(|v| v.is_finite()) {
            return Err(MetricError::NonFinite);
        }
        if !(x1 < x2 && y1 < y2) {
            return Err(MetricError::DegenerateBox);
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    pub fn area(&self) -> f64 {
        (self.x2 - self.x1) * (self.y2 - self.y1)
    }

    pub fn coords(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(d)?;
        Self::new(x1, y1, x2, y2).map_err(serde::de::Error::custom)
    }
}

pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let w = (a.x2.min(b.x2) - a.x1.max(b.x1)).max(0.0);
    let h = (a.y2.min(b.y2) - a.y1.max(b.y1)).max(0.0);
    let inter = w * h;
    inter / (a.area() + b.area() - inter)
}

/// Returns `(mIoU, acc)` where acc is the share of pairs with IoU at or above
/// `acc_threshold`.
pub fn iou_stats(preds: &[BBox], gts: &[BBox], acc_threshold: f64) -> Result<(f64, f64), MetricError> {
    if preds.len() != gts.len() {
        return Err(MetricError::LengthMismatch {
            left: preds.len(),
            right: gts.len(),
        });
    }
    if preds.is_empty() {
        return Err(MetricError::Empty);
    }
    let ious: Vec<f64> = preds.iter().zip(gts).map(|(p, g)| iou(p, g)).collect();
    let n = ious.len() as f64;
    let miou = ious.iter().sum::<f64>() / n;
    let acc = ious.iter().filter(|&&v| v >= acc_threshold).count() as f64 / n;
    Ok((miou, acc))
}
