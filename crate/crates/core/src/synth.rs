//! Synthetic surveillance fixtures.
//!
//! Each video holds a few actors (people or vehicles) that alternate between
//! travelling across the frame and dwelling in place. Actions happen while
//! an actor dwells: the actor sways slightly for the duration of the action
//! and the ground-truth cuboid is the envelope of its box over those frames.
//! The detector is simulated by sampling actor boxes every few frames, with
//! optional centre noise, dropped detections, and spurious boxes.
//!
//! [`oracle_scores`] plays the part of a perfect classifier so that the rest
//! of the pipeline can be exercised without a network.

use std::collections::BTreeMap;
use std::f64::consts::TAU;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{bounding_cuboid, spatial_iou, temporal_iou, Cuboid};
use crate::ingest::{ClassId, Detection, GroundTruthAction, LabelSet, ScoreRecord, VideoCatalog, VideoMeta};
use crate::labeling::{designate, Designation, LabelThresholds};
use crate::proposal::Proposal;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    /// Exact boxes on every sampled frame, nothing spurious.
    #[default]
    Clean,
    /// Jittered centres, missed detections, and false positives.
    Noisy,
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Scenario::Clean => "clean",
            Scenario::Noisy => "noisy",
        })
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "clean" => Ok(Scenario::Clean),
            "noisy" => Ok(Scenario::Noisy),
            other => Err(Error::config(format!("unknown scenario {other:?} (expected clean or noisy)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub num_videos: usize,
    pub num_frames: i64,
    pub frame_rate: f64,
    pub width: f64,
    pub height: f64,
    pub actors_per_video: usize,
    /// The detector runs on every `detection_stride`-th frame.
    pub detection_stride: i64,
    /// Standard deviation of the detected box centre, in pixels.
    pub position_noise: f64,
    /// Probability that an actor goes undetected on a sampled frame.
    pub miss_rate: f64,
    /// Probability of one spurious box per sampled frame.
    pub false_positive_rate: f64,
}

impl Default for SynthParams {
    fn default() -> Self {
        SynthParams::for_scenario(Scenario::Clean)
    }
}

impl SynthParams {
    pub fn for_scenario(scenario: Scenario) -> Self {
        let clean = SynthParams {
            num_videos: 10,
            num_frames: 1800,
            frame_rate: 30.0,
            width: 1280.0,
            height: 720.0,
            actors_per_video: 2,
            detection_stride: 3,
            position_noise: 0.0,
            miss_rate: 0.0,
            false_positive_rate: 0.0,
        };
        match scenario {
            Scenario::Clean => clean,
            Scenario::Noisy => SynthParams {
                position_noise: 6.0,
                miss_rate: 0.3,
                false_positive_rate: 0.15,
                ..clean
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_frames < 300 {
            return Err(Error::config("synth.num_frames must be at least 300"));
        }
        if self.detection_stride < 1 {
            return Err(Error::config("synth.detection_stride must be at least 1"));
        }
        if self.actors_per_video == 0 {
            return Err(Error::config("synth.actors_per_video must be at least 1"));
        }
        // Every actor's strip must fit the widest vehicle.
        if !(self.frame_rate > 0.0 && self.width / self.actors_per_video as f64 >= 240.0 && self.height >= 300.0) {
            return Err(Error::config("synth frame too small for the number of actors"));
        }
        for (name, p) in [("miss_rate", self.miss_rate), ("false_positive_rate", self.false_positive_rate)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(Error::config(format!("synth.{name} must lie in [0, 1]")));
            }
        }
        if !(self.position_noise.is_finite() && self.position_noise >= 0.0) {
            return Err(Error::config("synth.position_noise must be non-negative"));
        }
        Ok(())
    }
}

/// Generated inputs for the whole pipeline.
#[derive(Clone, Debug, PartialEq)]
pub struct Fixture {
    pub catalog: VideoCatalog,
    pub detections: BTreeMap<String, Vec<Detection>>,
    pub ground_truth: BTreeMap<String, Vec<GroundTruthAction>>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum ActorKind {
    Person,
    Vehicle,
}

impl ActorKind {
    fn object_class(self) -> &'static str {
        match self {
            ActorKind::Person => "person",
            ActorKind::Vehicle => "vehicle",
        }
    }
}

struct Actor {
    kind: ActorKind,
    half_w: f64,
    half_h: f64,
    /// Centre per frame; `None` before the actor enters.
    track: Vec<Option<(f64, f64)>>,
    /// Action spans with their classes.
    actions: Vec<(i64, i64, ClassId)>,
}

impl Actor {
    fn box_at(&self, f: i64) -> Option<(f64, f64, f64, f64)> {
        self.track[f as usize].map(|(x, y)| (x - self.half_w, y - self.half_h, x + self.half_w, y + self.half_h))
    }
}

/// A box centre that keeps the box inside the horizontal strip `[x0, x1)`.
fn random_point(rng: &mut ChaCha8Rng, p: &SynthParams, (x0, x1): (f64, f64), half_w: f64, half_h: f64) -> (f64, f64) {
    let margin = 10.0;
    (
        rng.random_range(x0 + half_w + margin..x1 - half_w - margin),
        rng.random_range(half_h + margin..p.height - half_h - margin),
    )
}

fn simulate_actor(rng: &mut ChaCha8Rng, p: &SynthParams, strip: (f64, f64), labels: &LabelSet) -> Actor {
    let kind = if rng.random_bool(0.6) {
        ActorKind::Person
    } else {
        ActorKind::Vehicle
    };
    let (half_w, half_h) = match kind {
        ActorKind::Person => (rng.random_range(15.0..25.0), rng.random_range(40.0..60.0)),
        ActorKind::Vehicle => (rng.random_range(70.0..100.0), rng.random_range(40.0..55.0)),
    };
    let n = p.num_frames;
    let mut track = vec![None; n as usize];
    let mut actions = Vec::new();
    let mut f = rng.random_range(0..150);
    let mut pos = random_point(rng, p, strip, half_w, half_h);
    let mut dwell_next = rng.random_bool(0.5);
    while f < n {
        if dwell_next {
            let action_len: i64 = rng.random_range(32..=256);
            let lead: i64 = rng.random_range(45..=120);
            let tail: i64 = rng.random_range(45..=120);
            let total = lead + action_len + tail;
            let start = f + lead;
            let end = start + action_len - 1;
            let with_action = f + total <= n;
            let amp_x = rng.random_range(4.0..12.0);
            let amp_y = rng.random_range(4.0..12.0);
            let period = rng.random_range(40.0..90.0);
            for g in f..(f + total).min(n) {
                let (mut x, mut y) = pos;
                if with_action && (start..=end).contains(&g) {
                    let phase = TAU * (g - start) as f64 / period;
                    x += amp_x * phase.sin();
                    y += amp_y * (0.5 * phase).sin();
                }
                track[g as usize] = Some((x, y));
            }
            if with_action {
                let class = ClassId(rng.random_range(1..=labels.num_classes()));
                actions.push((start, end, class));
            }
            f += total;
        } else {
            let target = random_point(rng, p, strip, half_w, half_h);
            let speed = rng.random_range(6.0..12.0);
            let dist = ((target.0 - pos.0).powi(2) + (target.1 - pos.1).powi(2)).sqrt();
            let steps = ((dist / speed).ceil() as i64).max(20);
            for s in 0..steps {
                let g = f + s;
                if g >= n {
                    break;
                }
                let a = (s + 1) as f64 / steps as f64;
                track[g as usize] = Some((pos.0 + a * (target.0 - pos.0), pos.1 + a * (target.1 - pos.1)));
            }
            pos = target;
            f += steps;
        }
        dwell_next = !dwell_next;
    }
    Actor {
        kind,
        half_w,
        half_h,
        track,
        actions,
    }
}

fn generate_video(rng: &mut ChaCha8Rng, video_id: &str, p: &SynthParams, labels: &LabelSet) -> Result<(Vec<Detection>, Vec<GroundTruthAction>)> {
    // Each actor roams its own vertical strip of the frame.
    let strip_w = p.width / p.actors_per_video as f64;
    let actors: Vec<Actor> = (0..p.actors_per_video)
        .map(|i| simulate_actor(rng, p, (i as f64 * strip_w, (i + 1) as f64 * strip_w), labels))
        .collect();
    let noise = Normal::new(0.0, p.position_noise.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::config(format!("synth.position_noise: {e}")))?;

    let mut gts = Vec::new();
    for actor in &actors {
        for &(start, end, class) in &actor.actions {
            let boxes = (start..=end)
                .filter_map(|g| actor.box_at(g))
                .map(|(x0, y0, x1, y1)| Cuboid::new(x0, y0, x1, y1, start, end))
                .collect::<Result<Vec<_>>>()?;
            gts.push(GroundTruthAction {
                video_id: video_id.to_string(),
                class,
                cuboid: bounding_cuboid(&boxes)?,
            });
        }
    }

    let mut dets = Vec::new();
    let mut frame = 0;
    while frame < p.num_frames {
        for actor in &actors {
            let Some((x0, y0, x1, y1)) = actor.box_at(frame) else {
                continue;
            };
            if p.miss_rate > 0.0 && rng.random_bool(p.miss_rate) {
                continue;
            }
            let (dx, dy) = if p.position_noise > 0.0 {
                (noise.sample(rng), noise.sample(rng))
            } else {
                (0.0, 0.0)
            };
            let confidence = if p.position_noise > 0.0 {
                rng.random_range(0.55..0.99)
            } else {
                0.95
            };
            dets.push(Detection {
                video_id: video_id.to_string(),
                frame,
                object_class: actor.kind.object_class().to_string(),
                bbox: Cuboid::new(x0 + dx, y0 + dy, x1 + dx, y1 + dy, frame, frame)?,
                confidence,
            });
        }
        if p.false_positive_rate > 0.0 && rng.random_bool(p.false_positive_rate) {
            let (half_w, half_h) = (rng.random_range(10.0..30.0), rng.random_range(20.0..60.0));
            let (x, y) = random_point(rng, p, (0.0, p.width), half_w, half_h);
            dets.push(Detection {
                video_id: video_id.to_string(),
                frame,
                object_class: "person".to_string(),
                bbox: Cuboid::new(x - half_w, y - half_h, x + half_w, y + half_h, frame, frame)?,
                confidence: rng.random_range(0.5..0.8),
            });
        }
        frame += p.detection_stride;
    }

    gts.sort_by(|a, b| {
        (a.cuboid.f_start(), a.cuboid.f_end(), a.class)
            .cmp(&(b.cuboid.f_start(), b.cuboid.f_end(), b.class))
            .then(a.cuboid.x_min().total_cmp(&b.cuboid.x_min()))
            .then(a.cuboid.y_min().total_cmp(&b.cuboid.y_min()))
    });
    Ok((dets, gts))
}

/// Generates a fixture; identical seeds and parameters give identical
/// fixtures. Video ids are `synth_000`, `synth_001`, ….
pub fn generate(seed: u64, params: &SynthParams, labels: &LabelSet) -> Result<Fixture> {
    params.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut fixture = Fixture {
        catalog: VideoCatalog::new(),
        detections: BTreeMap::new(),
        ground_truth: BTreeMap::new(),
    };
    for i in 0..params.num_videos {
        let video_id = format!("synth_{i:03}");
        let (dets, gts) = generate_video(&mut rng, &video_id, params, labels)?;
        fixture.catalog.insert(
            video_id.clone(),
            VideoMeta {
                video_id: video_id.clone(),
                num_frames: params.num_frames,
                frame_rate: params.frame_rate,
                width: params.width,
                height: params.height,
            },
        );
        if !dets.is_empty() {
            fixture.detections.insert(video_id.clone(), dets);
        }
        if !gts.is_empty() {
            fixture.ground_truth.insert(video_id, gts);
        }
    }
    Ok(fixture)
}

/// Scores a perfect classifier would produce. A proposal that designates
/// positive gets most of its mass on the matched class, ranked by overlap,
/// and the exact regression target as refinement; anything else is scored
/// as non-action.
pub fn oracle_scores(
    proposals: &[Proposal],
    gts: &[GroundTruthAction],
    labels: &LabelSet,
    thresholds: &LabelThresholds,
) -> Vec<ScoreRecord> {
    let k = labels.num_outputs();
    proposals
        .iter()
        .map(|p| {
            let labeled = designate(p, gts, thresholds);
            match (labeled.designation, labeled.matched_gt, labeled.regression_target) {
                (Designation::Positive(class), Some(g), Some(target)) => {
                    let gt = &gts[g].cuboid;
                    let quality = spatial_iou(&p.cuboid, gt) * temporal_iou(&p.cuboid, gt);
                    let top = 0.9 + 0.09 * quality;
                    let rest = (1.0 - top) / (k - 1) as f64;
                    let mut class_scores = vec![rest; k];
                    class_scores[class.0] = top;
                    ScoreRecord {
                        proposal_id: p.id.clone(),
                        class_scores,
                        regression: target,
                    }
                }
                _ => {
                    let top = 0.97;
                    let rest = (1.0 - top) / (k - 1) as f64;
                    let mut class_scores = vec![rest; k];
                    class_scores[0] = top;
                    ScoreRecord {
                        proposal_id: p.id.clone(),
                        class_scores,
                        regression: (0.0, 0.0),
                    }
                }
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthParams {
        SynthParams {
            num_videos: 2,
            num_frames: 600,
            ..SynthParams::default()
        }
    }

    #[test]
    fn same_seed_same_fixture() {
        let labels = LabelSet::default();
        let a = generate(7, &small(), &labels).unwrap();
        let b = generate(7, &small(), &labels).unwrap();
        assert_eq!(a, b);
        let c = generate(8, &small(), &labels).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn fixture_is_consistent() {
        let labels = LabelSet::default();
        let params = SynthParams {
            num_videos: 3,
            ..SynthParams::for_scenario(Scenario::Noisy)
        };
        let fx = generate(3, &params, &labels).unwrap();
        assert_eq!(fx.catalog.len(), 3);
        for (vid, dets) in &fx.detections {
            let meta = &fx.catalog[vid];
            for d in dets {
                assert!(d.frame >= 0 && d.frame < meta.num_frames);
                assert_eq!(d.frame % params.detection_stride, 0);
                assert!((0.0..=1.0).contains(&d.confidence));
            }
            assert!(dets.windows(2).all(|w| w[0].frame <= w[1].frame));
        }
        let total_gt: usize = fx.ground_truth.values().map(Vec::len).sum();
        assert!(total_gt > 0);
        for gts in fx.ground_truth.values() {
            for g in gts {
                assert!((32..=256).contains(&g.cuboid.frame_count()));
                assert!(g.class.is_action() && g.class.0 <= labels.num_classes());
            }
        }
    }

    #[test]
    fn oracle_scores_are_valid_probabilities() {
        let labels = LabelSet::default();
        let gt = GroundTruthAction {
            video_id: "v".into(),
            class: ClassId(5),
            cuboid: Cuboid::new(0.0, 0.0, 10.0, 10.0, 0, 63).unwrap(),
        };
        let hit = Proposal {
            id: "hit".into(),
            video_id: "v".into(),
            parent_id: None,
            provenance: crate::proposal::Provenance::Clustering,
            cuboid: gt.cuboid,
        };
        let miss = Proposal {
            id: "miss".into(),
            cuboid: Cuboid::new(100.0, 100.0, 110.0, 110.0, 500, 600).unwrap(),
            ..hit.clone()
        };
        let scores = oracle_scores(&[hit, miss], &[gt], &labels, &LabelThresholds::default());
        for s in &scores {
            s.validate(13).unwrap();
        }
        assert_eq!(scores[0].argmax(), ClassId(5));
        assert_eq!(scores[0].regression, (-0.984375, 0.984375));
        assert_eq!(scores[1].argmax(), ClassId(0));
    }

    #[test]
    fn scenario_parsing() {
        assert_eq!("noisy".parse::<Scenario>().unwrap(), Scenario::Noisy);
        assert!("foggy".parse::<Scenario>().is_err());
    }
}
