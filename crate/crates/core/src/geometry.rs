//! Center-size boxes in normalized image coordinates.

use serde::{Deserialize, Serialize};

/// `(center-x, center-y, width, height)`, all relative to the image size.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 4]", into = "[f64; 4]")]
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

    pub fn to_array(self) -> [f64; 4] {
        [self.cx, self.cy, self.w, self.h]
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn left(&self) -> f64 {
        self.cx - 0.5 * self.w
    }

    pub fn right(&self) -> f64 {
        self.cx + 0.5 * self.w
    }

    pub fn top(&self) -> f64 {
        self.cy - 0.5 * self.h
    }

    pub fn bottom(&self) -> f64 {
        self.cy + 0.5 * self.h
    }

    pub fn is_valid(&self) -> bool {
        self.to_array().iter().all(|x| x.is_finite()) && self.w > 0.0 && self.h > 0.0
    }

    pub fn intersection(&self, other: &BBox) -> f64 {
        let iw = (self.right().min(other.right()) - self.left().max(other.left())).max(0.0);
        let ih = (self.bottom().min(other.bottom()) - self.top().max(other.top())).max(0.0);
        iw * ih
    }
}

impl From<[f64; 4]> for BBox {
    fn from(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

/// Intersection over union. Boxes with non-positive extent score 0.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    if !(a.w > 0.0 && a.h > 0.0 && b.w > 0.0 && b.h > 0.0) {
        return 0.0;
    }
    // Areas from corner extents, so identical boxes give inter == union.
    let corner_area = |b: &BBox| (b.right() - b.left()) * (b.bottom() - b.top());
    let inter = a.intersection(b);
    let union = corner_area(a) + corner_area(b) - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}
