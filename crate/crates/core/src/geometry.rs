//! Axis-aligned bounding-box arithmetic.
//!
//! Boxes are stored in corner form with continuous pixel coordinates. The
//! `(x, y, width, height)` form used by detector outputs converts losslessly
//! for coordinates on a dyadic grid (integers, halves, quarters, ...), which
//! covers every annotation format this crate reads.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Area below which a box is [`SizeBucket::Small`] (32²).
pub const SMALL_AREA_LIMIT: f64 = 32.0 * 32.0;
/// Area below which a box is [`SizeBucket::Medium`] (64²).
///
/// Note this is 64², not the 96² used by the stock COCO tooling.
pub const MEDIUM_AREA_LIMIT: f64 = 64.0 * 64.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum GeometryError {
    #[error("non-finite coordinate in box ({0}, {1}, {2}, {3})")]
    NonFinite(f64, f64, f64, f64),
    #[error("inverted box: x_min={x_min} > x_max={x_max}")]
    InvertedX { x_min: f64, x_max: f64 },
    #[error("inverted box: y_min={y_min} > y_max={y_max}")]
    InvertedY { y_min: f64, y_max: f64 },
}

/// An axis-aligned rectangle in pixel coordinates.
///
/// Zero-area boxes are valid; negative extents are rejected by [`BBox::new`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self, GeometryError> {
        if !(x_min.is_finite() && y_min.is_finite() && x_max.is_finite() && y_max.is_finite()) {
            return Err(GeometryError::NonFinite(x_min, y_min, x_max, y_max));
        }
        if x_max < x_min {
            return Err(GeometryError::InvertedX { x_min, x_max });
        }
        if y_max < y_min {
            return Err(GeometryError::InvertedY { y_min, y_max });
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    }

    /// Builds a box from its top-left corner and extent.
    pub fn from_xywh(x: f64, y: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        Self::new(x, y, x + width, y + height)
    }

    /// Builds a box of the given extent centered on `(cx, cy)`.
    ///
    /// The far corner is computed as `min + extent`, so for dyadic inputs the
    /// resulting `width()`/`height()` equal the requested extent bit-exactly.
    pub fn from_center(cx: f64, cy: f64, width: f64, height: f64) -> Result<Self, GeometryError> {
        let x_min = cx - width / 2.0;
        let y_min = cy - height / 2.0;
        Self::new(x_min, y_min, x_min + width, y_min + height)
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn y_min(&self) -> f64 {
        self.y_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn y_max(&self) -> f64 {
        self.y_max
    }

    pub fn width(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn height(&self) -> f64 {
        self.y_max - self.y_min
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> (f64, f64) {
        (
            (self.x_min + self.x_max) / 2.0,
            (self.y_min + self.y_max) / 2.0,
        )
    }

    /// `[x, y, width, height]`.
    pub fn to_xywh(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.width(), self.height()]
    }

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// Clamps the box into `[0, width] × [0, height]`.
    pub fn clamp_to(&self, width: f64, height: f64) -> BBox {
        let cx = |v: f64| v.clamp(0.0, width);
        let cy = |v: f64| v.clamp(0.0, height);
        BBox {
            x_min: cx(self.x_min),
            y_min: cy(self.y_min),
            x_max: cx(self.x_max),
            y_max: cy(self.y_max),
        }
    }

    /// Smallest box containing both.
    pub fn union(&self, other: &BBox) -> BBox {
        BBox {
            x_min: self.x_min.min(other.x_min),
            y_min: self.y_min.min(other.y_min),
            x_max: self.x_max.max(other.x_max),
            y_max: self.y_max.max(other.y_max),
        }
    }

    pub fn contains_point(&self, x: f64, y: f64) -> bool {
        x >= self.x_min && x <= self.x_max && y >= self.y_min && y <= self.y_max
    }
}

impl TryFrom<[f64; 4]> for BBox {
    type Error = GeometryError;

    fn try_from(v: [f64; 4]) -> Result<Self, Self::Error> {
        BBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BBox> for [f64; 4] {
    fn from(b: BBox) -> Self {
        b.to_array()
    }
}

impl fmt::Display for BBox {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:.2},{:.2},{:.2},{:.2}",
            self.x_min, self.y_min, self.x_max, self.y_max
        )
    }
}

/// Overlap rectangle of two boxes, or `None` when their interiors are
/// disjoint. Boxes touching along an edge do not intersect.
pub fn intersect(a: &BBox, b: &BBox) -> Option<BBox> {
    let x_min = a.x_min.max(b.x_min);
    let y_min = a.y_min.max(b.y_min);
    let x_max = a.x_max.min(b.x_max);
    let y_max = a.y_max.min(b.y_max);
    if x_max > x_min && y_max > y_min {
        Some(BBox {
            x_min,
            y_min,
            x_max,
            y_max,
        })
    } else {
        None
    }
}

/// Area of the overlap rectangle, 0 when disjoint.
pub fn intersection_area(a: &BBox, b: &BBox) -> f64 {
    intersect(a, b).map_or(0.0, |r| r.area())
}

/// Intersection over union. Zero when the union has zero area.
pub fn iou(a: &BBox, b: &BBox) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    (inter / union).clamp(0.0, 1.0)
}

/// Box size as height plus width.
pub fn box_size(a: &BBox) -> f64 {
    a.height() + a.width()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeBucket {
    Small,
    Medium,
    Large,
}

impl SizeBucket {
    pub const ALL: [SizeBucket; 3] = [SizeBucket::Small, SizeBucket::Medium, SizeBucket::Large];

    pub fn of_area(area: f64) -> SizeBucket {
        if area < SMALL_AREA_LIMIT {
            SizeBucket::Small
        } else if area < MEDIUM_AREA_LIMIT {
            SizeBucket::Medium
        } else {
            SizeBucket::Large
        }
    }
}

/// Small below 32², medium in `[32², 64²)`, large from 64² up.
pub fn size_bucket(a: &BBox) -> SizeBucket {
    SizeBucket::of_area(a.area())
}
