//! Axis-aligned boxes and the detection/ground-truth records built on them.

use serde::de::{self, Deserializer, SeqAccess, Visitor};
use serde::ser::{SerializeTuple, Serializer};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Axis-aligned box in pixel coordinates, half-open on both axes:
/// a pixel `(x, y)` is inside when `x_min <= x < x_max` and
/// `y_min <= y < y_max`. A box tightly around pixel columns `3..=7`
/// therefore has `x_min = 3, x_max = 8`, and width equals pixel count.
///
/// Serializes as the 4-element array `[x_min, y_min, x_max, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BBox {
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
}

impl BBox {
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64) -> Self {
        BBox { x_min, y_min, x_max, y_max }
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
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// True when the box encloses no area at all.
    pub fn is_degenerate(&self) -> bool {
        !(self.x_max > self.x_min && self.y_max > self.y_min)
    }

    /// Overlap area with another box (zero when disjoint).
    pub fn intersection_area(&self, other: &BBox) -> f64 {
        let w = (self.x_max.min(other.x_max) - self.x_min.max(other.x_min)).max(0.0);
        let h = (self.y_max.min(other.y_max) - self.y_min.max(other.y_min)).max(0.0);
        w * h
    }

    /// Clamp all edges into the `[0, w] x [0, h]` image rectangle.
    pub fn clip(&self, w: f64, h: f64) -> BBox {
        BBox {
            x_min: self.x_min.clamp(0.0, w),
            y_min: self.y_min.clamp(0.0, h),
            x_max: self.x_max.clamp(0.0, w),
            y_max: self.y_max.clamp(0.0, h),
        }
    }
}

impl Serialize for BBox {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let mut t = serializer.serialize_tuple(4)?;
        t.serialize_element(&self.x_min)?;
        t.serialize_element(&self.y_min)?;
        t.serialize_element(&self.x_max)?;
        t.serialize_element(&self.y_max)?;
        t.end()
    }
}

impl<'de> Deserialize<'de> for BBox {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct BBoxVisitor;
        impl<'de> Visitor<'de> for BBoxVisitor {
            type Value = BBox;

            fn expecting(&self, f: &mut fmt::Formatter) -> fmt::Result {
                f.write_str("a [x_min, y_min, x_max, y_max] array")
            }

            fn visit_seq<A: SeqAccess<'de>>(self, mut seq: A) -> Result<BBox, A::Error> {
                let mut next = |i: usize| -> Result<f64, A::Error> {
                    seq.next_element()?
                        .ok_or_else(|| de::Error::invalid_length(i, &"4 coordinates"))
                };
                let b = BBox::new(next(0)?, next(1)?, next(2)?, next(3)?);
                if seq.next_element::<f64>()?.is_some() {
                    return Err(de::Error::invalid_length(5, &"4 coordinates"));
                }
                Ok(b)
            }
        }
        deserializer.deserialize_seq(BBoxVisitor)
    }
}

/// One predicted object: class name, confidence, box.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Detection {
    pub class: String,
    pub score: f64,
    #[serde(rename = "box")]
    pub bbox: BBox,
}

/// One annotated object in an image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub class: String,
    #[serde(rename = "box")]
    pub bbox: BBox,
}
