//! Class-wise greedy 3D non-maximum suppression.
//!
//! Two detections of the same class and video overlap when their temporal
//! IoU exceeds `temporal_iou_thresh` *and* their spatial IoU exceeds
//! `spatial_iou_thresh`. Classes and videos never suppress one another.

use std::cmp::Ordering;
use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{spatial_iou, temporal_iou, Cuboid};
use crate::ingest::{ClassId, LabelSet};
use crate::jsonl;

#[derive(Clone, Debug, PartialEq)]
pub struct ScoredDetection {
    pub video_id: String,
    pub proposal_id: String,
    pub action_class: ClassId,
    pub confidence: f64,
    pub cuboid: Cuboid,
    /// The classifier's refinement was degenerate and the proposal span kept.
    pub refinement_fell_back: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmsParams {
    pub temporal_iou_thresh: f64,
    pub spatial_iou_thresh: f64,
}

impl Default for NmsParams {
    fn default() -> Self {
        NmsParams {
            temporal_iou_thresh: 0.2,
            spatial_iou_thresh: 0.05,
        }
    }
}

impl NmsParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.temporal_iou_thresh) || !(0.0..=1.0).contains(&self.spatial_iou_thresh) {
            return Err(Error::config("nms thresholds must lie in [0, 1]"));
        }
        Ok(())
    }

    pub fn overlaps(&self, a: &Cuboid, b: &Cuboid) -> bool {
        temporal_iou(a, b) > self.temporal_iou_thresh && spatial_iou(a, b) > self.spatial_iou_thresh
    }
}

/// Confidence descending, proposal id ascending.
fn rank(a: &ScoredDetection, b: &ScoredDetection) -> Ordering {
    b.confidence
        .total_cmp(&a.confidence)
        .then_with(|| a.proposal_id.cmp(&b.proposal_id))
}

/// Keeps the most confident detection of each overlapping group, per video
/// and class. Output is ordered by video, class, then rank.
pub fn nms_3d(dets: &[ScoredDetection], params: &NmsParams) -> Vec<ScoredDetection> {
    let mut groups: BTreeMap<(&str, ClassId), Vec<&ScoredDetection>> = BTreeMap::new();
    for d in dets {
        groups.entry((d.video_id.as_str(), d.action_class)).or_default().push(d);
    }
    let mut out = Vec::with_capacity(dets.len());
    for mut group in groups.into_values() {
        group.sort_by(|a, b| rank(a, b));
        let mut kept: Vec<&ScoredDetection> = Vec::new();
        for d in group {
            if !kept.iter().any(|k| params.overlaps(&k.cuboid, &d.cuboid)) {
                kept.push(d);
            }
        }
        out.extend(kept.into_iter().cloned());
    }
    out
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FinalDetectionRecord {
    pub video_id: String,
    pub proposal_id: String,
    pub action_class: String,
    pub confidence: f64,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub f_start: i64,
    pub f_end: i64,
    pub refinement_fell_back: bool,
}

pub fn write_final_detections<'a, I>(path: &Path, dets: I, labels: &LabelSet) -> Result<()>
where
    I: IntoIterator<Item = &'a ScoredDetection>,
{
    let records: Vec<FinalDetectionRecord> = dets
        .into_iter()
        .map(|d| FinalDetectionRecord {
            video_id: d.video_id.clone(),
            proposal_id: d.proposal_id.clone(),
            action_class: labels.name(d.action_class).unwrap_or_default().to_string(),
            confidence: d.confidence,
            x_min: d.cuboid.x_min(),
            y_min: d.cuboid.y_min(),
            x_max: d.cuboid.x_max(),
            y_max: d.cuboid.y_max(),
            f_start: d.cuboid.f_start(),
            f_end: d.cuboid.f_end(),
            refinement_fell_back: d.refinement_fell_back,
        })
        .collect();
    jsonl::write_records(path, &records)
}

pub fn load_final_detections(path: &Path, labels: &LabelSet) -> Result<Vec<ScoredDetection>> {
    let mut out = Vec::new();
    for (line, r) in jsonl::read_records::<FinalDetectionRecord>(path)? {
        let ctx = |msg: String| Error::validation(format!("{}:{line}: {msg}", path.display()));
        let action_class = labels
            .class_of(&r.action_class)
            .ok_or_else(|| ctx(format!("unknown action_class {:?}", r.action_class)))?;
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(ctx(format!("confidence {} outside [0, 1]", r.confidence)));
        }
        let cuboid = Cuboid::new(r.x_min, r.y_min, r.x_max, r.y_max, r.f_start, r.f_end)
            .map_err(|e| ctx(e.to_string()))?;
        out.push(ScoredDetection {
            video_id: r.video_id,
            proposal_id: r.proposal_id,
            action_class,
            confidence: r.confidence,
            cuboid,
            refinement_fell_back: r.refinement_fell_back,
        });
    }
    Ok(out)
}
