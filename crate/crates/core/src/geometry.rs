//! Axis-aligned box arithmetic and the pairwise IoU gate shared by both metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// IoU threshold used when none is configured.
pub const DEFAULT_IOU_THRESHOLD: f64 = 0.5;

/// Corner-format box in pixel coordinates.
///
/// Construction rejects non-finite, negative and zero-area boxes, so every
/// value of this type has a strictly positive area.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "[f64; 4]", into = "[f64; 4]")]
pub struct BoundingBox {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
}

impl BoundingBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Result<Self> {
        let coords = [x_min, y_min, x_max, y_max];
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidBox(coords, "coordinates must be finite"));
        }
        if coords.iter().any(|&c| c < 0.0) {
            return Err(Error::InvalidBox(
                coords,
                "coordinates must be non-negative",
            ));
        }
        if x_min >= x_max || y_min >= y_max {
            return Err(Error::InvalidBox(coords, "box has zero or negative extent"));
        }
        Ok(Self {
            x_min,
            y_min,
            x_max,
            y_max,
        })
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

    pub fn to_array(&self) -> [f64; 4] {
        [self.x_min, self.y_min, self.x_max, self.y_max]
    }

    /// True when the box lies inside a `width` x `height` image.
    pub fn within(&self, width: f64, height: f64) -> bool {
        self.x_max <= width && self.y_max <= height
    }

    pub fn contains(&self, other: &BoundingBox) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
    }
}

impl TryFrom<[f64; 4]> for BoundingBox {
    type Error = Error;

    fn try_from(v: [f64; 4]) -> Result<Self> {
        BoundingBox::new(v[0], v[1], v[2], v[3])
    }
}

impl From<BoundingBox> for [f64; 4] {
    fn from(b: BoundingBox) -> Self {
        b.to_array()
    }
}

/// Smallest box enclosing a human and its paired object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UnionRegion {
    pub box_: BoundingBox,
}

pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f64 {
    let iw = (a.x_max.min(b.x_max) - a.x_min.max(b.x_min)).max(0.0);
    let ih = (a.y_max.min(b.y_max) - a.y_min.max(b.y_min)).max(0.0);
    let inter = iw * ih;
    if inter == 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

pub fn union_box(a: &BoundingBox, b: &BoundingBox) -> UnionRegion {
    UnionRegion {
        box_: BoundingBox {
            x_min: a.x_min.min(b.x_min),
            y_min: a.y_min.min(b.y_min),
            x_max: a.x_max.max(b.x_max),
            y_max: a.y_max.max(b.y_max),
        },
    }
}

/// Human-object box pair.
pub type BoxPair = (BoundingBox, BoundingBox);

/// Both the human IoU and the object IoU must reach `iou_threshold`.
pub fn spatial_match(pred: &BoxPair, gt: &BoxPair, iou_threshold: f64) -> bool {
    iou(&pred.0, &gt.0) >= iou_threshold && iou(&pred.1, &gt.1) >= iou_threshold
}

/// Overlap score of a pair match, the weaker of the two IoUs.
pub fn pair_overlap(pred: &BoxPair, gt: &BoxPair) -> f64 {
    iou(&pred.0, &gt.0).min(iou(&pred.1, &gt.1))
}
