//! Training designations for proposals and their temporal regression
//! targets.
//!
//! A proposal is compared with every ground-truth action of its video:
//!
//! * **positive**: the best spatial match (spatial IoU above
//!   `positive_spatial`) also has temporal IoU above `positive_temporal`;
//!   it takes that action's class and a regression target.
//! * **negative**: temporal IoU with every action is below
//!   `negative_temporal`. It is *hard* when some action overlaps it
//!   spatially above `hard_spatial` with temporal IoU strictly inside
//!   `(hard_temporal_min, negative_temporal)`, and *easy* otherwise.
//! * **discarded**: anything else, such as temporal IoU in `[0.2, 0.5]` or
//!   high temporal overlap with poor spatial overlap. These never reach the
//!   training set.

use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{spatial_iou, temporal_iou, Cuboid};
use crate::ingest::{ClassId, GroundTruthAction, LabelSet};
use crate::jsonl;
use crate::proposal::{Proposal, Provenance};
use crate::refine::temporal_frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelThresholds {
    pub positive_spatial: f64,
    pub positive_temporal: f64,
    pub negative_temporal: f64,
    pub hard_spatial: f64,
    pub hard_temporal_min: f64,
}

impl Default for LabelThresholds {
    fn default() -> Self {
        LabelThresholds {
            positive_spatial: 0.35,
            positive_temporal: 0.5,
            negative_temporal: 0.2,
            hard_spatial: 0.35,
            hard_temporal_min: 0.01,
        }
    }
}

impl LabelThresholds {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.positive_spatial,
            self.positive_temporal,
            self.negative_temporal,
            self.hard_spatial,
            self.hard_temporal_min,
        ];
        if all.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::config("labeling thresholds must lie in [0, 1]"));
        }
        if self.negative_temporal > self.positive_temporal {
            return Err(Error::config(
                "labeling.negative_temporal exceeds labeling.positive_temporal",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Designation {
    Positive(ClassId),
    EasyNegative,
    HardNegative,
    Discarded,
}

impl Designation {
    pub fn kind(&self) -> &'static str {
        match self {
            Designation::Positive(_) => "positive",
            Designation::EasyNegative => "easy_negative",
            Designation::HardNegative => "hard_negative",
            Designation::Discarded => "discarded",
        }
    }

    pub fn class(&self) -> Option<ClassId> {
        match self {
            Designation::Positive(c) => Some(*c),
            _ => None,
        }
    }
}

impl fmt::Display for Designation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.kind())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledProposal {
    pub proposal: Proposal,
    pub designation: Designation,
    /// Index of the matched action in the list passed to [`designate`].
    pub matched_gt: Option<usize>,
    /// `(r_st, r_end)`; present exactly for positives.
    pub regression_target: Option<(f64, f64)>,
}

/// Normalized offsets of the ground-truth bounds from the proposal's
/// mid-frame, in units of the proposal half-length.
pub fn regression_target(p: &Cuboid, gt: &Cuboid) -> (f64, f64) {
    let (f_a, t) = temporal_frame(p);
    (
        (gt.f_start() as f64 - f_a) / t,
        (gt.f_end() as f64 - f_a) / t,
    )
}

/// Assigns one designation to `p`. Among actions with spatial IoU above
/// `positive_spatial`, the best match has the highest temporal IoU, then the
/// highest spatial IoU, then the lowest index.
pub fn designate(p: &Proposal, gts: &[GroundTruthAction], th: &LabelThresholds) -> LabeledProposal {
    let overlaps: Vec<(f64, f64)> = gts
        .iter()
        .map(|g| (spatial_iou(&p.cuboid, &g.cuboid), temporal_iou(&p.cuboid, &g.cuboid)))
        .collect();

    let mut best: Option<usize> = None;
    for (i, &(s, t)) in overlaps.iter().enumerate() {
        if s <= th.positive_spatial {
            continue;
        }
        let better = match best {
            None => true,
            Some(b) => {
                let (bs, bt) = overlaps[b];
                t > bt || (t == bt && s > bs)
            }
        };
        if better {
            best = Some(i);
        }
    }

    if let Some(b) = best {
        if overlaps[b].1 > th.positive_temporal {
            let gt = &gts[b];
            return LabeledProposal {
                proposal: p.clone(),
                designation: Designation::Positive(gt.class),
                matched_gt: Some(b),
                regression_target: Some(regression_target(&p.cuboid, &gt.cuboid)),
            };
        }
    }

    let max_t = overlaps.iter().map(|o| o.1).fold(0.0, f64::max);
    let designation = if max_t < th.negative_temporal {
        let hard = overlaps.iter().any(|&(s, t)| {
            s > th.hard_spatial && t > th.hard_temporal_min && t < th.negative_temporal
        });
        if hard {
            Designation::HardNegative
        } else {
            Designation::EasyNegative
        }
    } else {
        Designation::Discarded
    };
    LabeledProposal {
        proposal: p.clone(),
        designation,
        matched_gt: None,
        regression_target: None,
    }
}

pub fn label_proposals(
    proposals: &[Proposal],
    gts: &[GroundTruthAction],
    th: &LabelThresholds,
) -> Vec<LabeledProposal> {
    proposals.iter().map(|p| designate(p, gts, th)).collect()
}

/// Positives, hard negatives, and the easy negatives that came straight from
/// clustering. Jittered easy negatives and discarded proposals are dropped.
pub fn select_training_set(labeled: &[LabeledProposal]) -> Vec<LabeledProposal> {
    labeled
        .iter()
        .filter(|l| match l.designation {
            Designation::Positive(_) | Designation::HardNegative => true,
            Designation::EasyNegative => l.proposal.provenance == Provenance::Clustering,
            Designation::Discarded => false,
        })
        .cloned()
        .collect()
}

/// Duplicates positives until every class matches the most frequent one.
///
/// Duplicates are appended after the input, class by class, cycling through
/// each class's instances in input order. With `strict`, every class of
/// `labels` must have at least one positive; otherwise classes without
/// positives are skipped.
pub fn balance_classes(
    set: &[LabeledProposal],
    labels: &LabelSet,
    strict: bool,
) -> Result<Vec<LabeledProposal>> {
    let mut by_class: BTreeMap<ClassId, Vec<&LabeledProposal>> = BTreeMap::new();
    for l in set {
        if let Designation::Positive(c) = l.designation {
            by_class.entry(c).or_default().push(l);
        }
    }
    if strict {
        let missing: Vec<&str> = labels
            .classes()
            .filter(|c| !by_class.contains_key(c))
            .filter_map(|c| labels.name(c))
            .collect();
        if !missing.is_empty() {
            return Err(Error::config(format!(
                "no positive proposals for: {}",
                missing.join(", ")
            )));
        }
    }
    let target = by_class.values().map(Vec::len).max().unwrap_or(0);
    let mut out = set.to_vec();
    for instances in by_class.values() {
        for i in 0..target - instances.len() {
            out.push(instances[i % instances.len()].clone());
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DesignationCounts {
    pub positive: usize,
    pub easy_negative: usize,
    pub hard_negative: usize,
    pub discarded: usize,
}

impl DesignationCounts {
    pub fn tally<'a, I: IntoIterator<Item = &'a LabeledProposal>>(items: I) -> Self {
        let mut c = DesignationCounts::default();
        for l in items {
            match l.designation {
                Designation::Positive(_) => c.positive += 1,
                Designation::EasyNegative => c.easy_negative += 1,
                Designation::HardNegative => c.hard_negative += 1,
                Designation::Discarded => c.discarded += 1,
            }
        }
        c
    }

    pub fn total(&self) -> usize {
        self.positive + self.easy_negative + self.hard_negative + self.discarded
    }
}

/// One line of the training manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestRecord {
    pub proposal_id: String,
    pub designation: String,
    pub class: Option<String>,
    pub r_st: Option<f64>,
    pub r_end: Option<f64>,
}

impl ManifestRecord {
    pub fn new(l: &LabeledProposal, labels: &LabelSet) -> Self {
        ManifestRecord {
            proposal_id: l.proposal.id.clone(),
            designation: l.designation.kind().to_string(),
            class: l
                .designation
                .class()
                .and_then(|c| labels.name(c))
                .map(str::to_string),
            r_st: l.regression_target.map(|r| r.0),
            r_end: l.regression_target.map(|r| r.1),
        }
    }
}

pub fn write_manifest<'a, I>(path: &Path, items: I, labels: &LabelSet) -> Result<()>
where
    I: IntoIterator<Item = &'a LabeledProposal>,
{
    let records: Vec<ManifestRecord> = items
        .into_iter()
        .map(|l| ManifestRecord::new(l, labels))
        .collect();
    jsonl::write_records(path, &records)
}
