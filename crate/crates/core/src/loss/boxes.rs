//! Plain-value box geometry used for matching costs and metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Normalized `(cx, cy, w, h)` box.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub cx: f64,
    pub cy: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn new(cx: f64, cy: f64, w: f64, h: f64) -> Self {
        Self { cx, cy, w, h }
    }

    pub fn from_slice(s: &[f64]) -> Self {
        Self::new(s[0], s[1], s[2], s[3])
    }

    pub fn from_corners(x1: f64, y1: f64, x2: f64, y2: f64) -> Self {
        Self::new((x1 + x2) / 2.0, (y1 + y2) / 2.0, x2 - x1, y2 - y1)
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    /// `(x1, y1, x2, y2)`.
    pub fn corners(&self) -> [f64; 4] {
        [self.cx - self.w / 2.0, self.cy - self.h / 2.0, self.cx + self.w / 2.0, self.cy + self.h / 2.0]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    fn check(&self) -> Result<()> {
        if !(self.w > 0.0 && self.h > 0.0) {
            return Err(Error::contract(format!("degenerate box {self:?}")));
        }
        Ok(())
    }
}

fn overlap(a: &BBox, b: &BBox) -> (f64, f64) {
    let (ca, cb) = (a.corners(), b.corners());
    let iw = (ca[2].min(cb[2]) - ca[0].max(cb[0])).max(0.0);
    let ih = (ca[3].min(cb[3]) - ca[1].max(cb[1])).max(0.0);
    let inter = iw * ih;
    (inter, a.area() + b.area() - inter)
}

pub fn iou(a: &BBox, b: &BBox) -> Result<f64> {
    a.check()?;
    b.check()?;
    let (inter, union) = overlap(a, b);
    Ok(inter / union)
}

/// IoU minus the fraction of the enclosing hull not covered by the union.
pub fn giou(a: &BBox, b: &BBox) -> Result<f64> {
    a.check()?;
    b.check()?;
    let (inter, union) = overlap(a, b);
    let (ca, cb) = (a.corners(), b.corners());
    let hull = (ca[2].max(cb[2]) - ca[0].min(cb[0])) * (ca[3].max(cb[3]) - ca[1].min(cb[1]));
    Ok(inter / union - (hull - union) / hull)
}
