//! Classifier-side math: the training losses, applying a predicted temporal
//! refinement to a proposal, and the fixed-length frame sampling used to
//! feed a proposal to a clip classifier.
//!
//! Temporal quantities use the proposal mid-frame `f_a = (f_st + f_end) / 2`
//! and half-length `t = (f_end - f_st + 1) / 2`, kept continuous until the
//! final rounding to whole frames.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Cuboid;
use crate::ingest::ClassId;

/// Floor applied to `p_a` before taking the log in [`cross_entropy`].
pub const PROBABILITY_EPSILON: f64 = 1e-12;

/// Adam learning rate the reference classifier was trained with. Kept for
/// external trainers; nothing here optimizes.
pub const REFERENCE_LEARNING_RATE: f64 = 0.0005;

/// Number of frames a proposal is resampled to.
pub const CLIP_FRAMES: usize = 64;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossParams {
    /// Weight of the localization term.
    pub lambda: f64,
}

impl Default for LossParams {
    fn default() -> Self {
        LossParams { lambda: 0.25 }
    }
}

impl LossParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::config("loss.lambda must be non-negative"));
        }
        Ok(())
    }
}

/// `-ln(p_a)` with `p_a` floored at [`PROBABILITY_EPSILON`].
pub fn cross_entropy(probs: &[f64], class: ClassId) -> Result<f64> {
    let p = probs.get(class.0).copied().ok_or_else(|| {
        Error::validation(format!(
            "class {class} out of range for {} probabilities",
            probs.len()
        ))
    })?;
    Ok(-p.max(PROBABILITY_EPSILON).ln())
}

pub fn smooth_l1(x: f64) -> f64 {
    let a = x.abs();
    if a < 1.0 {
        0.5 * x * x
    } else {
        a - 0.5
    }
}

/// Smooth-L1 distance between predicted and target `(start, end)` offsets.
pub fn localization_loss(v: (f64, f64), r: (f64, f64)) -> f64 {
    smooth_l1(r.0 - v.0) + smooth_l1(r.1 - v.1)
}

/// Classification loss plus `λ ·` localization loss for action classes.
/// The localization term is skipped for the non-action class, and `target`
/// may then be `None`.
pub fn full_loss(
    probs: &[f64],
    class: ClassId,
    v: (f64, f64),
    target: Option<(f64, f64)>,
    params: &LossParams,
) -> Result<f64> {
    let cls = cross_entropy(probs, class)?;
    if !class.is_action() {
        return Ok(cls);
    }
    let r = target.ok_or_else(|| {
        Error::validation(format!("class {class} needs a regression target"))
    })?;
    Ok(cls + params.lambda * localization_loss(v, r))
}

/// Mid-frame and half-length of a proposal's span.
pub fn temporal_frame(c: &Cuboid) -> (f64, f64) {
    let f_st = c.f_start() as f64;
    let f_end = c.f_end() as f64;
    (0.5 * (f_st + f_end), 0.5 * (f_end - f_st + 1.0))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Refined {
    pub cuboid: Cuboid,
    /// The refined bounds were degenerate and the input span was kept.
    pub fell_back: bool,
}

/// Moves the span to `f_a + v·t`, rounded to whole frames. When the rounded
/// bounds collapse to a single frame or invert, the input is returned with
/// `fell_back` set.
pub fn apply_refinement(p: &Cuboid, v: (f64, f64)) -> Refined {
    let (f_a, t) = temporal_frame(p);
    let start = (f_a + v.0 * t).round();
    let end = (f_a + v.1 * t).round();
    if !(start.is_finite() && end.is_finite()) || end <= start {
        return Refined {
            cuboid: *p,
            fell_back: true,
        };
    }
    match p.with_frames(start as i64, end as i64) {
        Ok(cuboid) => Refined {
            cuboid,
            fell_back: false,
        },
        Err(_) => Refined {
            cuboid: *p,
            fell_back: true,
        },
    }
}

/// `n` frame indices spread uniformly over `[f_st, f_end]`, repeating frames
/// when the span is shorter than `n`. With `n == 1` only `f_st` is returned.
pub fn sample_frames(f_st: i64, f_end: i64, n: usize) -> Result<Vec<i64>> {
    if f_st > f_end || n == 0 {
        return Err(Error::validation(format!(
            "cannot sample {n} frames from [{f_st}, {f_end}]"
        )));
    }
    if n == 1 {
        return Ok(vec![f_st]);
    }
    let span = (f_end - f_st) as f64;
    let last = (n - 1) as f64;
    Ok((0..n)
        .map(|i| f_st + (i as f64 * span / last).round() as i64)
        .collect())
}
