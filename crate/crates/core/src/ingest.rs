//! Parsing and validation of the external inputs.
//!
//! Every input is a line-delimited JSON file with one flat object per line:
//!
//! | file | fields |
//! |------|--------|
//! | detections | `video_id, frame, object_class, x_min, y_min, x_max, y_max, confidence` |
//! | ground truth | `video_id, action_class, x_min, y_min, x_max, y_max, f_start, f_end` |
//! | scores | `proposal_id, class_scores, v_st, v_end` |
//! | video metadata | `video_id, num_frames, frame_rate, width, height` |
//!
//! Loaded collections are canonically sorted so that the line order of the
//! input never changes the result.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::Cuboid;
use crate::jsonl;

/// Action labels in the order used by classifier outputs, matching the
/// twelve DIVA activities.
pub const DIVA_LABELS: [&str; 12] = [
    "Vehicle_u_turn",
    "Vehicle_turning_left",
    "Vehicle_turning_right",
    "Closing_Trunk",
    "Open_Trunk",
    "Loading",
    "Unloading",
    "Transport_HeavyCarry",
    "Opening",
    "Closing",
    "Entering",
    "Exiting",
];

/// Tolerance on the sum of a classifier probability vector.
pub const PROBABILITY_SUM_TOLERANCE: f64 = 1e-6;

/// Index of an action class. `0` is the non-action class; action classes
/// are `1..=n` in [`LabelSet`] order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct ClassId(pub usize);

impl ClassId {
    pub const NON_ACTION: ClassId = ClassId(0);

    pub fn is_action(self) -> bool {
        self.0 >= 1
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The configured action vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LabelSet(Vec<String>);

impl Default for LabelSet {
    fn default() -> Self {
        LabelSet(DIVA_LABELS.iter().map(|s| s.to_string()).collect())
    }
}

impl LabelSet {
    pub fn new(labels: Vec<String>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::config("label set is empty"));
        }
        let unique: BTreeSet<&String> = labels.iter().collect();
        if unique.len() != labels.len() {
            return Err(Error::config("label set contains duplicates"));
        }
        Ok(LabelSet(labels))
    }

    /// Number of action classes, excluding the non-action class.
    pub fn num_classes(&self) -> usize {
        self.0.len()
    }

    /// Length of a classifier probability vector.
    pub fn num_outputs(&self) -> usize {
        self.0.len() + 1
    }

    pub fn class_of(&self, label: &str) -> Option<ClassId> {
        self.0.iter().position(|l| l == label).map(|i| ClassId(i + 1))
    }

    /// Name of an action class; `None` for the non-action class or an
    /// out-of-range index.
    pub fn name(&self, class: ClassId) -> Option<&str> {
        class
            .0
            .checked_sub(1)
            .and_then(|i| self.0.get(i))
            .map(String::as_str)
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        (1..=self.0.len()).map(ClassId)
    }

    pub fn labels(&self) -> &[String] {
        &self.0
    }
}

/// Ingest-time filtering.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestOptions {
    /// Detections below this confidence are dropped.
    pub confidence_floor: f64,
    /// Object classes kept for clustering.
    pub object_classes: Vec<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        IngestOptions {
            confidence_floor: 0.5,
            object_classes: vec!["person".to_string(), "vehicle".to_string()],
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMeta {
    pub video_id: String,
    pub num_frames: i64,
    pub frame_rate: f64,
    pub width: f64,
    pub height: f64,
}

impl VideoMeta {
    pub fn validate(&self) -> Result<()> {
        if self.video_id.is_empty() {
            return Err(Error::validation("video metadata with empty video_id"));
        }
        if self.num_frames <= 0 {
            return Err(Error::validation(format!(
                "video {}: num_frames must be positive, got {}",
                self.video_id, self.num_frames
            )));
        }
        for (name, v) in [
            ("frame_rate", self.frame_rate),
            ("width", self.width),
            ("height", self.height),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::validation(format!(
                    "video {}: {name} must be positive, got {v}",
                    self.video_id
                )));
            }
        }
        Ok(())
    }

    pub fn minutes(&self) -> f64 {
        self.num_frames as f64 / self.frame_rate / 60.0
    }

    pub fn last_frame(&self) -> i64 {
        self.num_frames - 1
    }

    fn contains_frame(&self, frame: i64) -> bool {
        (0..self.num_frames).contains(&frame)
    }
}

/// Video metadata keyed by video id.
pub type VideoCatalog = BTreeMap<String, VideoMeta>;

/// One detector hit. The box is stored as a single-frame cuboid.
#[derive(Clone, Debug, PartialEq)]
pub struct Detection {
    pub video_id: String,
    pub frame: i64,
    pub object_class: String,
    pub bbox: Cuboid,
    pub confidence: f64,
}

impl Detection {
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.video_id
            .cmp(&other.video_id)
            .then(self.frame.cmp(&other.frame))
            .then_with(|| self.object_class.cmp(&other.object_class))
            .then_with(|| cmp_rect(&self.bbox, &other.bbox))
            .then_with(|| self.confidence.total_cmp(&other.confidence))
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroundTruthAction {
    pub video_id: String,
    pub class: ClassId,
    pub cuboid: Cuboid,
}

impl GroundTruthAction {
    fn canonical_cmp(&self, other: &Self) -> Ordering {
        self.video_id
            .cmp(&other.video_id)
            .then(self.cuboid.f_start().cmp(&other.cuboid.f_start()))
            .then(self.cuboid.f_end().cmp(&other.cuboid.f_end()))
            .then(self.class.cmp(&other.class))
            .then_with(|| cmp_rect(&self.cuboid, &other.cuboid))
    }
}

/// Classifier output for one proposal.
#[derive(Clone, Debug, PartialEq)]
pub struct ScoreRecord {
    pub proposal_id: String,
    /// Probabilities indexed by [`ClassId`]; entry 0 is the non-action class.
    pub class_scores: Vec<f64>,
    /// Temporal refinement `(v_st, v_end)`.
    pub regression: (f64, f64),
}

impl ScoreRecord {
    /// Highest-probability class, lowest index on ties.
    pub fn argmax(&self) -> ClassId {
        let mut best = 0;
        for (i, p) in self.class_scores.iter().enumerate() {
            if *p > self.class_scores[best] {
                best = i;
            }
        }
        ClassId(best)
    }

    pub fn validate(&self, num_outputs: usize) -> Result<()> {
        if self.class_scores.len() != num_outputs {
            return Err(Error::validation(format!(
                "proposal {}: expected {num_outputs} class scores, got {}",
                self.proposal_id,
                self.class_scores.len()
            )));
        }
        if let Some(p) = self
            .class_scores
            .iter()
            .find(|p| !(p.is_finite() && (0.0..=1.0).contains(*p)))
        {
            return Err(Error::validation(format!(
                "proposal {}: class score {p} outside [0, 1]",
                self.proposal_id
            )));
        }
        let sum: f64 = self.class_scores.iter().sum();
        if (sum - 1.0).abs() > PROBABILITY_SUM_TOLERANCE {
            return Err(Error::validation(format!(
                "proposal {}: class scores sum to {sum}, expected 1",
                self.proposal_id
            )));
        }
        if !(self.regression.0.is_finite() && self.regression.1.is_finite()) {
            return Err(Error::validation(format!(
                "proposal {}: non-finite refinement values",
                self.proposal_id
            )));
        }
        Ok(())
    }
}

fn cmp_rect(a: &Cuboid, b: &Cuboid) -> Ordering {
    a.x_min()
        .total_cmp(&b.x_min())
        .then(a.y_min().total_cmp(&b.y_min()))
        .then(a.x_max().total_cmp(&b.x_max()))
        .then(a.y_max().total_cmp(&b.y_max()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionRecord {
    pub video_id: String,
    pub frame: i64,
    pub object_class: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub confidence: f64,
}

impl From<&Detection> for DetectionRecord {
    fn from(d: &Detection) -> Self {
        DetectionRecord {
            video_id: d.video_id.clone(),
            frame: d.frame,
            object_class: d.object_class.clone(),
            x_min: d.bbox.x_min(),
            y_min: d.bbox.y_min(),
            x_max: d.bbox.x_max(),
            y_max: d.bbox.y_max(),
            confidence: d.confidence,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GroundTruthRecord {
    pub video_id: String,
    pub action_class: String,
    pub x_min: f64,
    pub y_min: f64,
    pub x_max: f64,
    pub y_max: f64,
    pub f_start: i64,
    pub f_end: i64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScoreFileRecord {
    pub proposal_id: String,
    pub class_scores: Vec<f64>,
    pub v_st: f64,
    pub v_end: f64,
}

impl From<&ScoreRecord> for ScoreFileRecord {
    fn from(s: &ScoreRecord) -> Self {
        ScoreFileRecord {
            proposal_id: s.proposal_id.clone(),
            class_scores: s.class_scores.clone(),
            v_st: s.regression.0,
            v_end: s.regression.1,
        }
    }
}

fn at(path: &Path, line: usize, e: Error) -> Error {
    match e {
        Error::Validation(msg) => Error::validation(format!("{}:{line}: {msg}", path.display())),
        other => other,
    }
}

fn lookup<'a>(catalog: &'a VideoCatalog, video_id: &str) -> Result<&'a VideoMeta> {
    catalog
        .get(video_id)
        .ok_or_else(|| Error::validation(format!("unknown video_id {video_id:?} (not in metadata)")))
}

pub fn load_metadata(path: &Path) -> Result<VideoCatalog> {
    let mut catalog = VideoCatalog::new();
    for (line, meta) in jsonl::read_records::<VideoMeta>(path)? {
        meta.validate().map_err(|e| at(path, line, e))?;
        if catalog.contains_key(&meta.video_id) {
            return Err(at(
                path,
                line,
                Error::validation(format!("duplicate video_id {:?}", meta.video_id)),
            ));
        }
        catalog.insert(meta.video_id.clone(), meta);
    }
    Ok(catalog)
}

pub fn write_metadata(path: &Path, catalog: &VideoCatalog) -> Result<()> {
    jsonl::write_records(path, catalog.values())
}

/// Validates one detection line. `Ok(None)` means the record is valid but
/// filtered out by `opts`.
pub fn detection_from_record(
    r: DetectionRecord,
    catalog: &VideoCatalog,
    opts: &IngestOptions,
) -> Result<Option<Detection>> {
    let meta = lookup(catalog, &r.video_id)?;
    if !meta.contains_frame(r.frame) {
        return Err(Error::validation(format!(
            "detection in {} at frame {} is outside [0, {}]",
            r.video_id,
            r.frame,
            meta.last_frame()
        )));
    }
    if !(r.confidence.is_finite() && (0.0..=1.0).contains(&r.confidence)) {
        return Err(Error::validation(format!(
            "detection in {} at frame {} has confidence {} outside [0, 1]",
            r.video_id, r.frame, r.confidence
        )));
    }
    let bbox = Cuboid::new(r.x_min, r.y_min, r.x_max, r.y_max, r.frame, r.frame).map_err(|e| {
        Error::validation(format!("detection in {} at frame {}: {e}", r.video_id, r.frame))
    })?;
    if r.confidence < opts.confidence_floor || !opts.object_classes.contains(&r.object_class) {
        return Ok(None);
    }
    Ok(Some(Detection {
        video_id: r.video_id,
        frame: r.frame,
        object_class: r.object_class,
        bbox,
        confidence: r.confidence,
    }))
}

/// Loads detections grouped by video, each group sorted by frame.
pub fn load_detections(
    path: &Path,
    catalog: &VideoCatalog,
    opts: &IngestOptions,
) -> Result<BTreeMap<String, Vec<Detection>>> {
    let mut all = Vec::new();
    for (line, record) in jsonl::read_records::<DetectionRecord>(path)? {
        if let Some(det) = detection_from_record(record, catalog, opts).map_err(|e| at(path, line, e))? {
            all.push(det);
        }
    }
    all.sort_by(Detection::canonical_cmp);
    let mut grouped: BTreeMap<String, Vec<Detection>> = BTreeMap::new();
    for det in all {
        grouped.entry(det.video_id.clone()).or_default().push(det);
    }
    Ok(grouped)
}

pub fn write_detections<'a, I>(path: &Path, detections: I) -> Result<()>
where
    I: IntoIterator<Item = &'a Detection>,
{
    let records: Vec<DetectionRecord> = detections.into_iter().map(DetectionRecord::from).collect();
    jsonl::write_records(path, &records)
}

pub fn ground_truth_from_record(
    r: GroundTruthRecord,
    catalog: &VideoCatalog,
    labels: &LabelSet,
) -> Result<GroundTruthAction> {
    let meta = lookup(catalog, &r.video_id)?;
    let class = labels.class_of(&r.action_class).ok_or_else(|| {
        Error::validation(format!(
            "unknown action_class {:?}; allowed: {}",
            r.action_class,
            labels.labels().join(", ")
        ))
    })?;
    let cuboid = Cuboid::new(r.x_min, r.y_min, r.x_max, r.y_max, r.f_start, r.f_end)
        .map_err(|e| Error::validation(format!("ground truth in {}: {e}", r.video_id)))?;
    if !(meta.contains_frame(r.f_start) && meta.contains_frame(r.f_end)) {
        return Err(Error::validation(format!(
            "ground truth in {} spans [{}, {}] outside [0, {}]",
            r.video_id,
            r.f_start,
            r.f_end,
            meta.last_frame()
        )));
    }
    Ok(GroundTruthAction {
        video_id: r.video_id,
        class,
        cuboid,
    })
}

pub fn ground_truth_to_record(gt: &GroundTruthAction, labels: &LabelSet) -> GroundTruthRecord {
    GroundTruthRecord {
        video_id: gt.video_id.clone(),
        action_class: labels.name(gt.class).unwrap_or_default().to_string(),
        x_min: gt.cuboid.x_min(),
        y_min: gt.cuboid.y_min(),
        x_max: gt.cuboid.x_max(),
        y_max: gt.cuboid.y_max(),
        f_start: gt.cuboid.f_start(),
        f_end: gt.cuboid.f_end(),
    }
}

/// Loads ground-truth actions grouped by video, canonically sorted.
pub fn load_ground_truth(
    path: &Path,
    catalog: &VideoCatalog,
    labels: &LabelSet,
) -> Result<BTreeMap<String, Vec<GroundTruthAction>>> {
    let mut all = Vec::new();
    for (line, record) in jsonl::read_records::<GroundTruthRecord>(path)? {
        all.push(ground_truth_from_record(record, catalog, labels).map_err(|e| at(path, line, e))?);
    }
    all.sort_by(GroundTruthAction::canonical_cmp);
    let mut grouped: BTreeMap<String, Vec<GroundTruthAction>> = BTreeMap::new();
    for gt in all {
        grouped.entry(gt.video_id.clone()).or_default().push(gt);
    }
    Ok(grouped)
}

pub fn write_ground_truth<'a, I>(path: &Path, gts: I, labels: &LabelSet) -> Result<()>
where
    I: IntoIterator<Item = &'a GroundTruthAction>,
{
    let records: Vec<GroundTruthRecord> = gts
        .into_iter()
        .map(|g| ground_truth_to_record(g, labels))
        .collect();
    jsonl::write_records(path, &records)
}

/// Loads classifier scores keyed by proposal id. `num_outputs` is the
/// required probability-vector length (action classes plus one).
pub fn load_scores(path: &Path, num_outputs: usize) -> Result<BTreeMap<String, ScoreRecord>> {
    let mut out = BTreeMap::new();
    for (line, r) in jsonl::read_records::<ScoreFileRecord>(path)? {
        let record = ScoreRecord {
            proposal_id: r.proposal_id,
            class_scores: r.class_scores,
            regression: (r.v_st, r.v_end),
        };
        record.validate(num_outputs).map_err(|e| at(path, line, e))?;
        if out.contains_key(&record.proposal_id) {
            return Err(at(
                path,
                line,
                Error::validation(format!("duplicate proposal_id {:?}", record.proposal_id)),
            ));
        }
        out.insert(record.proposal_id.clone(), record);
    }
    Ok(out)
}

pub fn write_scores<'a, I>(path: &Path, scores: I) -> Result<()>
where
    I: IntoIterator<Item = &'a ScoreRecord>,
{
    let records: Vec<ScoreFileRecord> = scores.into_iter().map(ScoreFileRecord::from).collect();
    jsonl::write_records(path, &records)
}
