//! Spatio-temporal cuboids and the overlap algebra shared by every stage.
//!
//! A [`Cuboid`] is an axis-aligned image rectangle swept over an inclusive
//! range of frames. Spatial extents are continuous pixel coordinates; frame
//! spans count both endpoints, so `[f, f]` is one frame long.
//!
//! Three overlap measures are provided. [`spatial_iou`] ignores frames,
//! [`temporal_iou`] ignores the rectangle, and [`iou_3d`] is the ratio of
//! volumes where a volume is rectangle area times frame count. Disjoint or
//! touching inputs give exactly `0.0`.

use std::fmt;

use crate::error::{Error, Result};

/// Axis-aligned spatio-temporal box.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Cuboid {
    x_min: f64,
    y_min: f64,
    x_max: f64,
    y_max: f64,
    f_start: i64,
    f_end: i64,
}

impl Cuboid {
    /// Builds a cuboid, rejecting empty rectangles, reversed frame spans and
    /// non-finite coordinates.
    pub fn new(x_min: f64, y_min: f64, x_max: f64, y_max: f64, f_start: i64, f_end: i64) -> Result<Self> {
        if ![x_min, y_min, x_max, y_max].iter().all(|v| v.is_finite()) {
            return Err(Error::validation(format!(
                "cuboid has non-finite coordinates ({x_min}, {y_min}, {x_max}, {y_max})"
            )));
        }
        if !(x_min < x_max && y_min < y_max) {
            return Err(Error::validation(format!(
                "cuboid rectangle ({x_min}, {y_min}, {x_max}, {y_max}) is empty"
            )));
        }
        if f_start > f_end {
            return Err(Error::validation(format!(
                "cuboid frame span [{f_start}, {f_end}] is reversed"
            )));
        }
        Ok(Cuboid {
            x_min,
            y_min,
            x_max,
            y_max,
            f_start,
            f_end,
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

    pub fn f_start(&self) -> i64 {
        self.f_start
    }

    pub fn f_end(&self) -> i64 {
        self.f_end
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

    /// Number of frames covered, counting both endpoints.
    pub fn frame_count(&self) -> i64 {
        self.f_end - self.f_start + 1
    }

    pub fn volume(&self) -> f64 {
        self.area() * self.frame_count() as f64
    }

    pub fn center(&self) -> (f64, f64) {
        (
            0.5 * (self.x_min + self.x_max),
            0.5 * (self.y_min + self.y_max),
        )
    }

    /// Same rectangle over a different frame span.
    pub fn with_frames(&self, f_start: i64, f_end: i64) -> Result<Self> {
        Cuboid::new(self.x_min, self.y_min, self.x_max, self.y_max, f_start, f_end)
    }

    /// True when `other` lies entirely inside `self`.
    pub fn contains(&self, other: &Cuboid) -> bool {
        self.x_min <= other.x_min
            && self.y_min <= other.y_min
            && self.x_max >= other.x_max
            && self.y_max >= other.y_max
            && self.f_start <= other.f_start
            && self.f_end >= other.f_end
    }

    /// Bit-level equality of every bound, used for exact de-duplication.
    pub fn same_bounds(&self, other: &Cuboid) -> bool {
        self.bounds_key() == other.bounds_key()
    }

    /// Hashable key over the exact bounds.
    pub fn bounds_key(&self) -> [u64; 6] {
        [
            self.x_min.to_bits(),
            self.y_min.to_bits(),
            self.x_max.to_bits(),
            self.y_max.to_bits(),
            self.f_start as u64,
            self.f_end as u64,
        ]
    }
}

impl fmt::Display for Cuboid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {}, {}, [{}, {}])",
            self.x_min, self.y_min, self.x_max, self.y_max, self.f_start, self.f_end
        )
    }
}

fn overlap_len(a_min: f64, a_max: f64, b_min: f64, b_max: f64) -> f64 {
    (a_max.min(b_max) - a_min.max(b_min)).max(0.0)
}

fn intersection_area(a: &Cuboid, b: &Cuboid) -> f64 {
    overlap_len(a.x_min, a.x_max, b.x_min, b.x_max) * overlap_len(a.y_min, a.y_max, b.y_min, b.y_max)
}

fn intersection_frames(a: &Cuboid, b: &Cuboid) -> i64 {
    (a.f_end.min(b.f_end) - a.f_start.max(b.f_start) + 1).max(0)
}

/// Rectangle IoU, ignoring frames.
pub fn spatial_iou(a: &Cuboid, b: &Cuboid) -> f64 {
    let inter = intersection_area(a, b);
    if inter <= 0.0 {
        return 0.0;
    }
    let union = a.area() + b.area() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Frame-span IoU with inclusive endpoints.
pub fn temporal_iou(a: &Cuboid, b: &Cuboid) -> f64 {
    let inter = intersection_frames(a, b);
    if inter == 0 {
        return 0.0;
    }
    let union = a.frame_count() + b.frame_count() - inter;
    inter as f64 / union as f64
}

/// Volume IoU; volume is rectangle area times inclusive frame count.
pub fn iou_3d(a: &Cuboid, b: &Cuboid) -> f64 {
    let frames = intersection_frames(a, b);
    let area = intersection_area(a, b);
    if frames == 0 || area <= 0.0 {
        return 0.0;
    }
    let inter = area * frames as f64;
    let union = a.volume() + b.volume() - inter;
    (inter / union).clamp(0.0, 1.0)
}

/// Grows the shorter side symmetrically about the centre until the
/// rectangle is square. Frames are untouched and the result is not clipped
/// to the image, so it may extend past the frame border.
pub fn square_pad(c: &Cuboid) -> Cuboid {
    let side = c.width().max(c.height());
    let (cx, cy) = c.center();
    // A side within rounding of the longer one counts as already square.
    let slack = 1e-9 * side.max(1.0);
    let (x_min, x_max) = if c.width() < side - slack {
        (cx - 0.5 * side, cx + 0.5 * side)
    } else {
        (c.x_min, c.x_max)
    };
    let (y_min, y_max) = if c.height() < side - slack {
        (cy - 0.5 * side, cy + 0.5 * side)
    } else {
        (c.y_min, c.y_max)
    };
    Cuboid {
        x_min,
        y_min,
        x_max,
        y_max,
        ..*c
    }
}

/// Componentwise envelope of a nonempty set of cuboids.
pub fn bounding_cuboid<'a, I>(items: I) -> Result<Cuboid>
where
    I: IntoIterator<Item = &'a Cuboid>,
{
    let mut iter = items.into_iter();
    let first = *iter
        .next()
        .ok_or_else(|| Error::validation("bounding_cuboid called with no cuboids"))?;
    Ok(iter.fold(first, |acc, c| Cuboid {
        x_min: acc.x_min.min(c.x_min),
        y_min: acc.y_min.min(c.y_min),
        x_max: acc.x_max.max(c.x_max),
        y_max: acc.y_max.max(c.y_max),
        f_start: acc.f_start.min(c.f_start),
        f_end: acc.f_end.max(c.f_end),
    }))
}
