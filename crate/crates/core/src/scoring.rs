//! Detection scoring: one-to-one matching, miss-rate versus false-alarm
//! curves, fixed-rate summaries, and proposal recall curves.
//!
//! Detections are matched to ground truth within each video and class by a
//! Hungarian assignment that maximizes the number of matched pairs first and
//! the summed temporal IoU second. A ground-truth action without a partner
//! is a miss; an unpaired detection is a false alarm. Sweeping the
//! confidence threshold traces `P_miss` against false alarms per minute.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{iou_3d, spatial_iou, temporal_iou, Cuboid};
use crate::ingest::{GroundTruthAction, LabelSet};
use crate::nms::ScoredDetection;
use crate::proposal::Proposal;

/// Operating rates (false alarms per minute) reported by default.
pub const DEFAULT_RATES: [f64; 6] = [0.01, 0.03, 0.1, 0.15, 0.2, 1.0];

/// When a detection may be paired with a ground-truth action.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MatchParams {
    pub temporal_iou_thresh: f64,
    /// `0` disables the spatial gate.
    pub spatial_iou_thresh: f64,
}

impl Default for MatchParams {
    fn default() -> Self {
        MatchParams {
            temporal_iou_thresh: 0.2,
            spatial_iou_thresh: 0.0,
        }
    }
}

impl MatchParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.temporal_iou_thresh) || !(0.0..=1.0).contains(&self.spatial_iou_thresh) {
            return Err(Error::config("matching thresholds must lie in [0, 1]"));
        }
        Ok(())
    }

    /// Temporal IoU of the pair when it is congruent.
    pub fn congruence(&self, det: &ScoredDetection, gt: &GroundTruthAction) -> Option<f64> {
        if det.video_id != gt.video_id || det.action_class != gt.class {
            return None;
        }
        let t = temporal_iou(&det.cuboid, &gt.cuboid);
        if t < self.temporal_iou_thresh {
            return None;
        }
        if self.spatial_iou_thresh > 0.0 && spatial_iou(&det.cuboid, &gt.cuboid) < self.spatial_iou_thresh {
            return None;
        }
        Some(t)
    }
}

/// Maximum-weight assignment on a dense `rows × cols` matrix. Returns the
/// column of every row, or `None` for rows left over when `rows > cols`.
///
/// Shortest augmenting path with potentials, `O(n² m)` for `n ≤ m`.
pub fn max_weight_assignment(weights: &[Vec<f64>]) -> Vec<Option<usize>> {
    let rows = weights.len();
    let cols = weights.first().map_or(0, Vec::len);
    if rows == 0 || cols == 0 {
        return vec![None; rows];
    }
    let transpose = rows > cols;
    let (n, m) = if transpose { (cols, rows) } else { (rows, cols) };
    let cost = |i: usize, j: usize| -> f64 {
        if transpose {
            -weights[j][i]
        } else {
            -weights[i][j]
        }
    };

    // 1-based, column 0 is a sentinel
    let mut u = vec![0.0f64; n + 1];
    let mut v = vec![0.0f64; m + 1];
    let mut p = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        p[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = p[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[p[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if p[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            p[j0] = p[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }

    let mut out = vec![None; rows];
    for j in 1..=m {
        if p[j] != 0 {
            let (r, c) = if transpose { (j - 1, p[j] - 1) } else { (p[j] - 1, j - 1) };
            out[r] = Some(c);
        }
    }
    out
}

/// One-to-one matching between detections and ground truth. Returns
/// `(detection index, ground-truth index)` pairs sorted by detection.
pub fn hungarian_match(
    dets: &[&ScoredDetection],
    gts: &[&GroundTruthAction],
    params: &MatchParams,
) -> Vec<(usize, usize)> {
    if dets.is_empty() || gts.is_empty() {
        return Vec::new();
    }
    let ious: Vec<Vec<Option<f64>>> = dets
        .iter()
        .map(|d| gts.iter().map(|g| params.congruence(d, g)).collect())
        .collect();
    // A matched pair is worth more than any achievable IoU sum, so the
    // optimum maximizes cardinality before overlap.
    let pair_bonus = dets.len().min(gts.len()) as f64 + 1.0;
    let weights: Vec<Vec<f64>> = ious
        .iter()
        .map(|row| row.iter().map(|c| c.map_or(0.0, |t| pair_bonus + t)).collect())
        .collect();
    max_weight_assignment(&weights)
        .into_iter()
        .enumerate()
        .filter_map(|(d, g)| g.filter(|&g| ious[d][g].is_some()).map(|g| (d, g)))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetPoint {
    pub rate_fa: f64,
    pub p_miss: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetCurve {
    pub class_label: String,
    pub points: Vec<DetPoint>,
}

/// Counts at one confidence threshold.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OperatingCounts {
    pub detections: usize,
    pub matched: usize,
    pub false_alarms: usize,
    pub missed: usize,
}

/// Matches `dets` against `gts` video by video.
pub fn operating_counts(dets: &[&ScoredDetection], gts: &[&GroundTruthAction], params: &MatchParams) -> OperatingCounts {
    let mut by_video: BTreeMap<&str, (Vec<&ScoredDetection>, Vec<&GroundTruthAction>)> = BTreeMap::new();
    for d in dets {
        by_video.entry(d.video_id.as_str()).or_default().0.push(d);
    }
    for g in gts {
        by_video.entry(g.video_id.as_str()).or_default().1.push(g);
    }
    let matched: usize = by_video
        .values()
        .map(|(d, g)| hungarian_match(d, g, params).len())
        .sum();
    OperatingCounts {
        detections: dets.len(),
        matched,
        false_alarms: dets.len() - matched,
        missed: gts.len() - matched,
    }
}

fn envelope(mut points: Vec<DetPoint>) -> Vec<DetPoint> {
    points.sort_by(|a, b| a.rate_fa.total_cmp(&b.rate_fa).then(a.p_miss.total_cmp(&b.p_miss)));
    let mut out: Vec<DetPoint> = Vec::with_capacity(points.len());
    for p in points {
        match out.last() {
            Some(last) if last.rate_fa == p.rate_fa => {}
            Some(last) => {
                let p_miss = p.p_miss.min(last.p_miss);
                out.push(DetPoint { p_miss, ..p });
            }
            None => out.push(p),
        }
    }
    out
}

/// Sweeps every distinct detection confidence, highest first, and emits one
/// operating point per threshold. With no detections the curve is the single
/// point `(0, 1)`. Fails when there is no ground truth or `video_minutes`
/// is not positive.
pub fn det_curve(
    dets: &[&ScoredDetection],
    gts: &[&GroundTruthAction],
    video_minutes: f64,
    params: &MatchParams,
    class_label: &str,
) -> Result<DetCurve> {
    if !(video_minutes.is_finite() && video_minutes > 0.0) {
        return Err(Error::validation(format!("video duration must be positive, got {video_minutes} minutes")));
    }
    if gts.is_empty() {
        return Err(Error::validation(format!("no ground truth for {class_label}")));
    }
    let mut sorted: Vec<&ScoredDetection> = dets.to_vec();
    sorted.sort_by(|a, b| b.confidence.total_cmp(&a.confidence));
    let mut points = Vec::new();
    let mut end = 0;
    while end < sorted.len() {
        let threshold = sorted[end].confidence;
        while end < sorted.len() && sorted[end].confidence >= threshold {
            end += 1;
        }
        let counts = operating_counts(&sorted[..end], gts, params);
        points.push(DetPoint {
            rate_fa: counts.false_alarms as f64 / video_minutes,
            p_miss: counts.missed as f64 / gts.len() as f64,
        });
    }
    if points.is_empty() {
        points.push(DetPoint {
            rate_fa: 0.0,
            p_miss: 1.0,
        });
    }
    Ok(DetCurve {
        class_label: class_label.to_string(),
        points: envelope(points),
    })
}

/// Step-interpolated `P_miss` at each requested rate: the miss rate of the
/// largest operating point not above the rate, or 1 when there is none.
pub fn mean_pmiss_at(curve: &DetCurve, rates: &[f64]) -> Vec<f64> {
    rates
        .iter()
        .map(|&r| {
            curve
                .points
                .iter()
                .take_while(|p| p.rate_fa <= r)
                .last()
                .map_or(1.0, |p| p.p_miss)
        })
        .collect()
}

/// Unweighted mean of the class curves on the union of their rates.
pub fn aggregate_curve(curves: &[DetCurve]) -> DetCurve {
    let mut grid: Vec<f64> = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.rate_fa))
        .collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let mut sums = vec![0.0; grid.len()];
    for c in curves {
        for (s, p) in sums.iter_mut().zip(mean_pmiss_at(c, &grid)) {
            *s += p;
        }
    }
    let n = curves.len().max(1) as f64;
    DetCurve {
        class_label: "aggregate".to_string(),
        points: envelope(
            grid.into_iter()
                .zip(sums)
                .map(|(rate_fa, s)| DetPoint { rate_fa, p_miss: s / n })
                .collect(),
        ),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: String,
    pub num_ground_truth: usize,
    pub num_detections: usize,
    pub p_miss_at: Vec<f64>,
    pub curve: Vec<DetPoint>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub p_miss_at: Vec<f64>,
    pub curve: Vec<DetPoint>,
}

/// Machine-readable scoring output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub rates: Vec<f64>,
    pub total_minutes: f64,
    pub classes: Vec<ClassReport>,
    /// Classes without ground truth, left out of the aggregate.
    pub omitted_classes: Vec<String>,
    pub aggregate: AggregateReport,
}

impl ScoreReport {
    /// Tab-separated summary: one row per class plus the aggregate, one
    /// column per requested rate.
    pub fn summary_table(&self) -> String {
        let mut s = String::from("class");
        for r in &self.rates {
            let _ = write!(s, "\t{r}");
        }
        s.push('\n');
        let rows = self
            .classes
            .iter()
            .map(|c| (c.class.as_str(), &c.p_miss_at))
            .chain(std::iter::once(("aggregate", &self.aggregate.p_miss_at)));
        for (name, values) in rows {
            s.push_str(name);
            for v in values {
                let _ = write!(s, "\t{v:.4}");
            }
            s.push('\n');
        }
        s
    }
}

/// Scores detections against ground truth class by class.
pub fn evaluate(
    dets: &[ScoredDetection],
    gts: &[GroundTruthAction],
    total_minutes: f64,
    labels: &LabelSet,
    params: &MatchParams,
    rates: &[f64],
) -> Result<ScoreReport> {
    if rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(Error::config("scoring rates must be non-negative"));
    }
    let mut classes = Vec::new();
    let mut omitted = Vec::new();
    let mut curves = Vec::new();
    for class in labels.classes() {
        let name = labels.name(class).unwrap_or_default();
        let class_dets: Vec<&ScoredDetection> = dets.iter().filter(|d| d.action_class == class).collect();
        let class_gts: Vec<&GroundTruthAction> = gts.iter().filter(|g| g.class == class).collect();
        if class_gts.is_empty() {
            if !class_dets.is_empty() {
                log::warn!("{name}: {} detections but no ground truth; omitted from aggregate", class_dets.len());
            }
            omitted.push(name.to_string());
            continue;
        }
        let curve = det_curve(&class_dets, &class_gts, total_minutes, params, name)?;
        classes.push(ClassReport {
            class: name.to_string(),
            num_ground_truth: class_gts.len(),
            num_detections: class_dets.len(),
            p_miss_at: mean_pmiss_at(&curve, rates),
            curve: curve.points.clone(),
        });
        curves.push(curve);
    }
    if curves.is_empty() {
        log::warn!("no class has ground truth; aggregate curve is empty");
    }
    let aggregate = aggregate_curve(&curves);
    let aggregate_at = if curves.is_empty() {
        vec![1.0; rates.len()]
    } else {
        mean_pmiss_at(&aggregate, rates)
    };
    Ok(ScoreReport {
        rates: rates.to_vec(),
        total_minutes,
        classes,
        omitted_classes: omitted,
        aggregate: AggregateReport {
            p_miss_at: aggregate_at,
            curve: aggregate.points,
        },
    })
}

/// Whitespace-separated `rate_fa p_miss` columns, readable by gnuplot.
pub fn curve_to_columns(curve: &DetCurve) -> String {
    let mut s = format!("# {}\n# rate_fa p_miss\n", curve.class_label);
    for p in &curve.points {
        let _ = writeln!(s, "{} {}", p.rate_fa, p.p_miss);
    }
    s
}

pub fn write_curve(path: &Path, curve: &DetCurve) -> Result<()> {
    std::fs::write(path, curve_to_columns(curve)).map_err(|e| Error::io(path, e))
}

/// Overlap measure for proposal recall.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IouMode {
    #[default]
    Volume3d,
    SpatialTimesTemporal,
}

impl IouMode {
    pub fn iou(self, a: &Cuboid, b: &Cuboid) -> f64 {
        match self {
            IouMode::Volume3d => iou_3d(a, b),
            IouMode::SpatialTimesTemporal => spatial_iou(a, b) * temporal_iou(a, b),
        }
    }
}

/// `0.1, 0.2, …, 0.9`.
pub fn default_recall_grid() -> Vec<f64> {
    (1..=9).map(|i| i as f64 / 10.0).collect()
}

/// Best class-agnostic overlap of each ground-truth action with any
/// proposal from the same video.
pub fn best_overlaps(proposals: &[Proposal], gts: &[GroundTruthAction], mode: IouMode) -> Vec<f64> {
    let mut by_video: BTreeMap<&str, Vec<&Proposal>> = BTreeMap::new();
    for p in proposals {
        by_video.entry(p.video_id.as_str()).or_default().push(p);
    }
    gts.iter()
        .map(|g| {
            by_video
                .get(g.video_id.as_str())
                .map_or(0.0, |ps| ps.iter().map(|p| mode.iou(&p.cuboid, &g.cuboid)).fold(0.0, f64::max))
        })
        .collect()
}

/// Fraction of ground-truth actions covered at IoU `≥ θ` for each `θ`.
pub fn recall_curve(proposals: &[Proposal], gts: &[GroundTruthAction], mode: IouMode, grid: &[f64]) -> Result<Vec<f64>> {
    if gts.is_empty() {
        return Err(Error::validation("recall needs at least one ground-truth action"));
    }
    let best = best_overlaps(proposals, gts, mode);
    Ok(grid
        .iter()
        .map(|&theta| best.iter().filter(|&&b| b >= theta).count() as f64 / best.len() as f64)
        .collect())
}
