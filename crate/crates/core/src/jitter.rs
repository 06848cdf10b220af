//! Dense proposals by temporal jittering.
//!
//! Anchor frames are taken from each clustering proposal's span at a fixed
//! stride, and around every anchor a window of each configured half-width is
//! emitted with the parent's rectangle. The originals are kept verbatim.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ingest::VideoMeta;
use crate::proposal::{Proposal, Provenance};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JitterParams {
    /// Anchor stride in frames.
    pub stride: i64,
    /// Window half-widths; each window spans `[a - w, a + w]`.
    pub half_windows: Vec<i64>,
    pub clamp_to_video: bool,
    /// Generated windows shorter than this many frames are dropped.
    pub min_span: i64,
    /// Also anchor on the parent's last frame when the stride skips it.
    pub include_end_anchor: bool,
}

impl Default for JitterParams {
    fn default() -> Self {
        JitterParams {
            stride: 15,
            half_windows: vec![16, 32, 64, 128],
            clamp_to_video: true,
            min_span: 2,
            include_end_anchor: false,
        }
    }
}

impl JitterParams {
    pub fn validate(&self) -> Result<()> {
        if self.stride < 1 {
            return Err(Error::config("jitter.stride must be at least 1"));
        }
        if self.half_windows.is_empty() {
            return Err(Error::config("jitter.half_windows is empty"));
        }
        if self.half_windows[0] < 1 || self.half_windows.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::config(
                "jitter.half_windows must be positive and strictly increasing",
            ));
        }
        if self.min_span < 1 {
            return Err(Error::config("jitter.min_span must be at least 1"));
        }
        Ok(())
    }
}

/// `f_st, f_st + s, …` up to and including `f_end`; `f_end` itself appears
/// only when it falls on the stride.
pub fn anchors(f_st: i64, f_end: i64, stride: i64) -> Vec<i64> {
    if stride < 1 || f_st > f_end {
        return Vec::new();
    }
    (f_st..=f_end).step_by(stride as usize).collect()
}

/// Expands clustering proposals with temporally jittered windows.
///
/// Output order is each parent followed by its windows, anchor by anchor and
/// narrowest window first. Generated windows whose bounds exactly repeat an
/// earlier proposal of the same video are skipped. Generated ids are
/// `{parent_id}-a{anchor}-w{half_width}`.
pub fn jitter_proposals(input: &[Proposal], params: &JitterParams, video: &VideoMeta) -> Result<Vec<Proposal>> {
    params.validate()?;
    let mut out = Vec::with_capacity(input.len() * (1 + params.half_windows.len() * 4));
    let mut seen: HashSet<[u64; 6]> = input.iter().map(|p| p.cuboid.bounds_key()).collect();
    for parent in input {
        out.push(parent.clone());
        let (f_st, f_end) = (parent.cuboid.f_start(), parent.cuboid.f_end());
        let mut anchor_frames = anchors(f_st, f_end, params.stride);
        if params.include_end_anchor && anchor_frames.last() != Some(&f_end) {
            anchor_frames.push(f_end);
        }
        for &a in &anchor_frames {
            for &w in &params.half_windows {
                let (mut lo, mut hi) = (a - w, a + w);
                if params.clamp_to_video {
                    lo = lo.max(0);
                    hi = hi.min(video.last_frame());
                }
                if hi - lo + 1 < params.min_span {
                    continue;
                }
                let cuboid = parent.cuboid.with_frames(lo, hi)?;
                if !seen.insert(cuboid.bounds_key()) {
                    continue;
                }
                out.push(Proposal {
                    id: format!("{}-a{a}-w{w}", parent.id),
                    video_id: parent.video_id.clone(),
                    parent_id: Some(parent.id.clone()),
                    provenance: Provenance::Jittering,
                    cuboid,
                });
            }
        }
    }
    Ok(out)
}
