//! Axis-aligned box arithmetic in pixel coordinates.
//!
//! Boxes are stored in corner format `(x1, y1, x2, y2)`. Construction through
//! [`BBox::new`] or [`BBox::from_xywh`] guarantees finite coordinates and a
//! strictly positive area, so none of the functions below can fail.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    pub y: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BBox {
    x1: f64,
    y1: f64,
    x2: f64,
    y2: f64,
}

impl BBox {
    pub fn new(x1: f64, y1: f64, x2: f64, y2: f64) -> Result<Self> {
        let bad = |reason| Error::InvalidBox {
            x1,
            y1,
            x2,
            y2,
            reason,
        };
        if !(x1.is_finite() && y1.is_finite() && x2.is_finite() && y2.is_finite()) {
            return Err(bad("non-finite coordinate"));
        }
        if x2 <= x1 || y2 <= y1 {
            return Err(bad("non-positive width or height"));
        }
        Ok(Self { x1, y1, x2, y2 })
    }

    /// Converts from `(x, y, width, height)` as used by COCO-style files.
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        if !(w > 0.0 && h > 0.0) {
            return Err(Error::InvalidBox {
                x1: x,
                y1: y,
                x2: x + w,
                y2: y + h,
                reason: "non-positive width or height",
            });
        }
        Self::new(x, y, x + w, y + h)
    }

    pub fn x1(&self) -> f64 {
        self.x1
    }
    pub fn y1(&self) -> f64 {
        self.y1
    }
    pub fn x2(&self) -> f64 {
        self.x2
    }
    pub fn y2(&self) -> f64 {
        self.y2
    }

    pub fn width(&self) -> f64 {
        self.x2 - self.x1
    }

    pub fn height(&self) -> f64 {
        self.y2 - self.y1
    }

    pub fn corners(&self) -> [f64; 4] {
        [self.x1, self.y1, self.x2, self.y2]
    }

    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x1, self.y1, self.width(), self.height()]
    }

    pub fn translate(&self, dx: f64, dy: f64) -> Result<Self> {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let [x1, y1, x2, y2] = <[f64; 4]>::deserialize(deserializer)?;
        BBox::new(x1, y1, x2, y2).map_err(serde::de::Error::custom)
    }
}

pub fn area(b: &BBox) -> f64 {
    b.width() * b.height()
}

pub fn intersection(a: &BBox, b: &BBox) -> f64 {
    let w = a.x2.min(b.x2) - a.x1.max(b.x1);
    let h = a.y2.min(b.y2) - a.y1.max(b.y1);
    if w > 0.0 && h > 0.0 {
        w * h
    } else {
        0.0
    }
}

/// Intersection over union. Symmetric bit-for-bit in its arguments.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection(a, b);
    if inter == 0.0 {
        return 0.0;
    }
    // area(a) + area(b) is commutative in IEEE arithmetic, so the result
    // does not depend on argument order.
    let union = area(a) + area(b) - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn center(b: &BBox) -> Point {
    Point {
        x: (b.x1 + b.x2) / 2.0,
        y: (b.y1 + b.y2) / 2.0,
    }
}

pub fn point_distance(p: Point, q: Point) -> f64 {
    let dx = p.x - q.x;
    let dy = p.y - q.y;
    (dx * dx + dy * dy).sqrt()
}

pub fn center_distance(a: &BBox, b: &BBox) -> f64 {
    point_distance(center(a), center(b))
}

/// True when the center of `cand` lies inside `gt`, edges included.
pub fn contains_center(gt: &BBox, cand: &BBox) -> bool {
    let c = center(cand);
    c.x >= gt.x1 && c.x <= gt.x2 && c.y >= gt.y1 && c.y <= gt.y2
}

/// Square root of the box area.
pub fn absolute_size(b: &BBox) -> f64 {
    area(b).sqrt()
}
