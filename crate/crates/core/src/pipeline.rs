//! Subcommand logic shared by the CLI and the tests. Each `cmd_*` reads its
//! inputs from the configured paths, writes its artifacts, and returns a
//! summary for printing.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::clustering::cluster_video;
use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::geometry::Cuboid;
use crate::ingest::{
    load_detections, load_ground_truth, load_metadata, load_scores, write_detections, write_ground_truth,
    write_metadata, write_scores, ClassId, Detection, GroundTruthAction, ScoreRecord, VideoCatalog,
    VideoMeta,
};
use crate::jitter::jitter_proposals;
use crate::jsonl;
use crate::labeling::{
    balance_classes, label_proposals, select_training_set, write_manifest, Designation, DesignationCounts,
    LabeledProposal,
};
use crate::nms::{load_final_detections, nms_3d, write_final_detections, ScoredDetection};
use crate::proposal::{load_proposals, write_proposals, Proposal, Provenance};
use crate::refine::{apply_refinement, cross_entropy, full_loss, localization_loss, LossParams};
use crate::scoring::{evaluate, recall_curve, write_curve, DetCurve, ScoreReport};
use crate::synth::{generate, oracle_scores, SynthParams};

fn lookup<'a>(catalog: &'a VideoCatalog, video_id: &str, what: &str) -> Result<&'a VideoMeta> {
    catalog
        .get(video_id)
        .ok_or_else(|| Error::validation(format!("{what} refers to video {video_id:?} missing from metadata")))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Clustering followed by jittering for one video.
pub fn propose_video(detections: &[Detection], video: &VideoMeta, cfg: &PipelineConfig) -> Result<Vec<Proposal>> {
    let parents = cluster_video(detections, video, &cfg.cluster)?;
    jitter_proposals(&parents, &cfg.jitter, video)
}

/// Proposals for every video in the catalog, in video id order. Videos are
/// processed on up to `jobs` threads; the result does not depend on `jobs`.
pub fn propose_all(
    catalog: &VideoCatalog,
    detections: &BTreeMap<String, Vec<Detection>>,
    cfg: &PipelineConfig,
    jobs: usize,
) -> Result<Vec<(String, Vec<Proposal>)>> {
    for video_id in detections.keys() {
        lookup(catalog, video_id, "detection")?;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(|e| Error::config(format!("cannot start {jobs} worker threads: {e}")))?;
    let videos: Vec<&VideoMeta> = catalog.values().collect();
    pool.install(|| {
        videos
            .par_iter()
            .map(|meta| {
                let dets = detections.get(&meta.video_id).map_or(&[][..], Vec::as_slice);
                propose_video(dets, meta, cfg).map(|p| (meta.video_id.clone(), p))
            })
            .collect()
    })
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct VideoProposalCount {
    pub video_id: String,
    pub clustering: usize,
    pub jittering: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ProposeSummary {
    pub output: PathBuf,
    pub videos: Vec<VideoProposalCount>,
}

impl fmt::Display for ProposeSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "video\tclustering\tjittering\ttotal")?;
        let (mut c, mut j) = (0, 0);
        for v in &self.videos {
            writeln!(f, "{}\t{}\t{}\t{}", v.video_id, v.clustering, v.jittering, v.clustering + v.jittering)?;
            c += v.clustering;
            j += v.jittering;
        }
        write!(f, "all\t{c}\t{j}\t{}", c + j)
    }
}

pub fn cmd_propose(cfg: &PipelineConfig, jobs: usize) -> Result<ProposeSummary> {
    let catalog = load_metadata(cfg.paths.metadata()?)?;
    let detections = load_detections(cfg.paths.detections()?, &catalog, &cfg.ingest)?;
    let per_video = propose_all(&catalog, &detections, cfg, jobs)?;
    let output = cfg.paths.proposals();
    write_proposals(&output, per_video.iter().flat_map(|(_, p)| p))?;
    let videos = per_video
        .iter()
        .map(|(video_id, props)| {
            let clustering = props.iter().filter(|p| p.provenance == Provenance::Clustering).count();
            VideoProposalCount {
                video_id: video_id.clone(),
                clustering,
                jittering: props.len() - clustering,
            }
        })
        .collect();
    Ok(ProposeSummary { output, videos })
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabelSummary {
    /// Every proposal, split by provenance.
    pub clustering: DesignationCounts,
    pub jittering: DesignationCounts,
    /// What the training set holds before balancing.
    pub training: DesignationCounts,
    /// Positives per class before and after balancing.
    pub positives_per_class: Vec<(String, usize, usize)>,
    pub manifest_len: usize,
}

impl fmt::Display for LabelSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "source\tpositive\thard_negative\teasy_negative\tdiscarded")?;
        for (name, c) in [
            ("clustering", self.clustering),
            ("jittering", self.jittering),
            ("training", self.training),
        ] {
            writeln!(f, "{name}\t{}\t{}\t{}\t{}", c.positive, c.hard_negative, c.easy_negative, c.discarded)?;
        }
        writeln!(f)?;
        writeln!(f, "class\tpositives\tbalanced")?;
        for (name, before, after) in &self.positives_per_class {
            writeln!(f, "{name}\t{before}\t{after}")?;
        }
        write!(f, "training manifest: {} entries", self.manifest_len)
    }
}

fn positives_by_class(set: &[LabeledProposal]) -> BTreeMap<ClassId, usize> {
    let mut m = BTreeMap::new();
    for l in set {
        if let Designation::Positive(c) = l.designation {
            *m.entry(c).or_default() += 1;
        }
    }
    m
}

/// Designates every proposal and writes `designations.jsonl` (all of them)
/// and `training_manifest.jsonl` (the selected, balanced training set).
pub fn cmd_label(cfg: &PipelineConfig) -> Result<LabelSummary> {
    let catalog = load_metadata(cfg.paths.metadata()?)?;
    let gts = load_ground_truth(cfg.paths.ground_truth()?, &catalog, &cfg.labels)?;
    let proposals = load_proposals(&cfg.paths.proposals())?;
    let mut labeled = Vec::new();
    for (video_id, props) in &proposals {
        lookup(&catalog, video_id, "proposal")?;
        let video_gts = gts.get(video_id).map_or(&[][..], Vec::as_slice);
        labeled.extend(label_proposals(props, video_gts, &cfg.labeling));
    }
    let training = select_training_set(&labeled);
    let manifest = if cfg.balance.enabled {
        balance_classes(&training, &cfg.labels, cfg.balance.strict)?
    } else {
        training.clone()
    };
    let out = &cfg.paths.output_dir;
    write_manifest(&out.join("designations.jsonl"), &labeled, &cfg.labels)?;
    write_manifest(&out.join("training_manifest.jsonl"), &manifest, &cfg.labels)?;

    let before = positives_by_class(&training);
    let after = positives_by_class(&manifest);
    Ok(LabelSummary {
        clustering: DesignationCounts::tally(labeled.iter().filter(|l| l.proposal.provenance == Provenance::Clustering)),
        jittering: DesignationCounts::tally(labeled.iter().filter(|l| l.proposal.provenance == Provenance::Jittering)),
        training: DesignationCounts::tally(&training),
        positives_per_class: cfg
            .labels
            .classes()
            .map(|c| {
                (
                    cfg.labels.name(c).unwrap_or_default().to_string(),
                    before.get(&c).copied().unwrap_or(0),
                    after.get(&c).copied().unwrap_or(0),
                )
            })
            .collect(),
        manifest_len: manifest.len(),
    })
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct FinalizeSummary {
    pub proposals: usize,
    /// Proposals with no line in the scores file; skipped.
    pub unscored: usize,
    /// Scored proposals whose best class is non-action.
    pub non_action: usize,
    pub refinement_fallbacks: usize,
    pub before_nms: usize,
    pub kept: usize,
}

impl fmt::Display for FinalizeSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "proposals {}, unscored {}, non-action {}, refinement fallbacks {}, candidates {}, after nms {}",
            self.proposals, self.unscored, self.non_action, self.refinement_fallbacks, self.before_nms, self.kept
        )
    }
}

/// Refines a proposal's span and keeps it inside the video. A span that no
/// longer fits falls back to the proposal's own frames.
pub fn refine_within(p: &Cuboid, v: (f64, f64), video: &VideoMeta) -> (Cuboid, bool) {
    let refined = apply_refinement(p, v);
    if refined.fell_back {
        return (*p, true);
    }
    let start = refined.cuboid.f_start().max(0);
    let end = refined.cuboid.f_end().min(video.last_frame());
    if end <= start {
        return (*p, true);
    }
    match p.with_frames(start, end) {
        Ok(c) => (c, false),
        Err(_) => (*p, true),
    }
}

/// Classes a scored proposal is emitted under: the argmax alone, or with a
/// floor every action class at or above it.
fn emitted_classes(score: &ScoreRecord, floor: Option<f64>) -> Vec<(ClassId, f64)> {
    match floor {
        None => {
            let best = score.argmax();
            if best.is_action() {
                vec![(best, score.class_scores[best.0])]
            } else {
                Vec::new()
            }
        }
        Some(floor) => score
            .class_scores
            .iter()
            .enumerate()
            .skip(1)
            .filter(|(_, p)| **p >= floor)
            .map(|(i, p)| (ClassId(i), *p))
            .collect(),
    }
}

/// Turns scored proposals into detections and suppresses duplicates.
pub fn finalize(
    proposals: &BTreeMap<String, Vec<Proposal>>,
    scores: &BTreeMap<String, ScoreRecord>,
    catalog: &VideoCatalog,
    cfg: &PipelineConfig,
) -> Result<(Vec<ScoredDetection>, FinalizeSummary)> {
    let known: BTreeSet<&str> = proposals.values().flatten().map(|p| p.id.as_str()).collect();
    if let Some(stray) = scores.keys().find(|id| !known.contains(id.as_str())) {
        return Err(Error::validation(format!("scores refer to unknown proposal_id {stray:?}")));
    }
    let mut summary = FinalizeSummary::default();
    let mut candidates = Vec::new();
    for (video_id, props) in proposals {
        let video = lookup(catalog, video_id, "proposal")?;
        for p in props {
            summary.proposals += 1;
            let Some(score) = scores.get(&p.id) else {
                summary.unscored += 1;
                continue;
            };
            let classes = emitted_classes(score, cfg.finalize.multi_label_floor);
            if classes.is_empty() {
                summary.non_action += 1;
                continue;
            }
            let (cuboid, fell_back) = refine_within(&p.cuboid, score.regression, video);
            if fell_back {
                summary.refinement_fallbacks += 1;
            }
            for (class, confidence) in classes {
                candidates.push(ScoredDetection {
                    video_id: video_id.clone(),
                    proposal_id: p.id.clone(),
                    action_class: class,
                    confidence,
                    cuboid,
                    refinement_fell_back: fell_back,
                });
            }
        }
    }
    if summary.unscored > 0 {
        log::warn!("{} proposals have no scores and were skipped", summary.unscored);
    }
    summary.before_nms = candidates.len();
    let kept = nms_3d(&candidates, &cfg.nms);
    summary.kept = kept.len();
    Ok((kept, summary))
}

pub fn cmd_finalize(cfg: &PipelineConfig) -> Result<FinalizeSummary> {
    let catalog = load_metadata(cfg.paths.metadata()?)?;
    let proposals = load_proposals(&cfg.paths.proposals())?;
    let scores = load_scores(cfg.paths.scores()?, cfg.labels.num_outputs())?;
    let (dets, summary) = finalize(&proposals, &scores, &catalog, cfg)?;
    write_final_detections(&cfg.paths.final_detections(), &dets, &cfg.labels)?;
    Ok(summary)
}

fn curve_file_name(label: &str) -> String {
    let safe: String = label
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '_' || c == '-' { c } else { '_' })
        .collect();
    format!("{safe}.dat")
}

/// Writes one gnuplot data file per curve in the report plus a script that
/// draws them on log-log axes.
pub fn export_curves(report: &ScoreReport, dir: &Path) -> Result<Vec<PathBuf>> {
    let curves_dir = dir.join("curves");
    std::fs::create_dir_all(&curves_dir).map_err(|e| Error::io(&curves_dir, e))?;
    let mut curves: Vec<DetCurve> = report
        .classes
        .iter()
        .map(|c| DetCurve {
            class_label: c.class.clone(),
            points: c.curve.clone(),
        })
        .collect();
    curves.push(DetCurve {
        class_label: "aggregate".to_string(),
        points: report.aggregate.curve.clone(),
    });
    let mut written = Vec::new();
    let mut script = String::from(
        "set logscale x\nset xlabel 'false alarms per minute'\nset ylabel 'P_miss'\nset yrange [0:1]\nset key outside\nplot \\\n",
    );
    for (i, curve) in curves.iter().enumerate() {
        let name = curve_file_name(&curve.class_label);
        let path = curves_dir.join(&name);
        write_curve(&path, curve)?;
        written.push(path);
        let sep = if i + 1 == curves.len() { "\n" } else { ", \\\n" };
        let _ = write!(
            script,
            "  'curves/{name}' using ($1 > 0 ? $1 : 1e-3):2 with steps title '{}'{sep}",
            curve.class_label
        );
    }
    let gp = dir.join("det_curves.gp");
    write_text(&gp, &script)?;
    written.push(gp);
    Ok(written)
}

/// Writes `score_report.json`, `score_summary.tsv`, and the curve exports.
pub fn cmd_score(cfg: &PipelineConfig) -> Result<ScoreReport> {
    let catalog = load_metadata(cfg.paths.metadata()?)?;
    let gts = load_ground_truth(cfg.paths.ground_truth()?, &catalog, &cfg.labels)?;
    let dets = load_final_detections(&cfg.paths.final_detections(), &cfg.labels)?;
    for d in &dets {
        lookup(&catalog, &d.video_id, "detection")?;
    }
    let total_minutes: f64 = catalog.values().map(VideoMeta::minutes).sum();
    let all_gts: Vec<GroundTruthAction> = gts.into_values().flatten().collect();
    let report = evaluate(&dets, &all_gts, total_minutes, &cfg.labels, &cfg.matching, &cfg.scoring.rates)?;
    let out = &cfg.paths.output_dir;
    let json = serde_json::to_string_pretty(&report).map_err(|e| Error::validation(e.to_string()))?;
    write_text(&out.join("score_report.json"), &(json + "\n"))?;
    write_text(&out.join("score_summary.tsv"), &report.summary_table())?;
    export_curves(&report, out)?;
    Ok(report)
}

/// Regenerates curve exports from a saved report.
pub fn cmd_plot(report_path: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let text = std::fs::read_to_string(report_path).map_err(|e| Error::io(report_path, e))?;
    let report: ScoreReport = serde_json::from_str(&text).map_err(|e| Error::Parse {
        path: report_path.to_path_buf(),
        line: e.line(),
        message: e.to_string(),
    })?;
    export_curves(&report, out)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecallSummary {
    pub grid: Vec<f64>,
    pub clustering: Vec<f64>,
    pub all: Vec<f64>,
}

impl RecallSummary {
    pub fn table(&self) -> String {
        let mut s = String::from("iou\tclustering\tclustering+jittering\n");
        for ((t, c), a) in self.grid.iter().zip(&self.clustering).zip(&self.all) {
            let _ = writeln!(s, "{t}\t{c:.4}\t{a:.4}");
        }
        s
    }
}

/// Recall of the clustering proposals alone and with the jittered ones.
pub fn recall_summary(
    proposals: &BTreeMap<String, Vec<Proposal>>,
    gts: &BTreeMap<String, Vec<GroundTruthAction>>,
    cfg: &PipelineConfig,
) -> Result<RecallSummary> {
    let all: Vec<Proposal> = proposals.values().flatten().cloned().collect();
    let clustering: Vec<Proposal> = all
        .iter()
        .filter(|p| p.provenance == Provenance::Clustering)
        .cloned()
        .collect();
    let gts: Vec<GroundTruthAction> = gts.values().flatten().cloned().collect();
    let grid = cfg.scoring.recall_grid.clone();
    Ok(RecallSummary {
        clustering: recall_curve(&clustering, &gts, cfg.scoring.recall_iou, &grid)?,
        all: recall_curve(&all, &gts, cfg.scoring.recall_iou, &grid)?,
        grid,
    })
}

/// Writes `recall.tsv`.
pub fn cmd_recall(cfg: &PipelineConfig) -> Result<RecallSummary> {
    let catalog = load_metadata(cfg.paths.metadata()?)?;
    let gts = load_ground_truth(cfg.paths.ground_truth()?, &catalog, &cfg.labels)?;
    let proposals = load_proposals(&cfg.paths.proposals())?;
    let summary = recall_summary(&proposals, &gts, cfg)?;
    write_text(&cfg.paths.output_dir.join("recall.tsv"), &summary.table())?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSummary {
    pub dir: PathBuf,
    pub config: PathBuf,
    pub videos: usize,
    pub detections: usize,
    pub ground_truth: usize,
    pub scored_proposals: usize,
}

impl fmt::Display for SynthSummary {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{} videos, {} detections, {} actions, {} scored proposals in {}\nrun the pipeline with --config {}",
            self.videos,
            self.detections,
            self.ground_truth,
            self.scored_proposals,
            self.dir.display(),
            self.config.display()
        )
    }
}

/// Writes a synthetic fixture into `dir`: `detections.jsonl`,
/// `ground_truth.jsonl`, `metadata.jsonl`, `oracle_scores.jsonl`, and a
/// `pipeline.toml` pointing at them with outputs under `dir/run`.
///
/// Oracle scores are computed on the proposals this configuration produces,
/// so the proposal ids line up with a later `propose` run.
pub fn cmd_synth(cfg: &PipelineConfig, params: &SynthParams, seed: u64, dir: &Path) -> Result<SynthSummary> {
    let fixture = generate(seed, params, &cfg.labels)?;
    // The saved config names files relative to itself; `run_cfg` is the same
    // config anchored at `dir` for use here.
    let mut saved = cfg.clone();
    saved.synth = params.clone();
    saved.paths.detections = Some("detections.jsonl".into());
    saved.paths.ground_truth = Some("ground_truth.jsonl".into());
    saved.paths.metadata = Some("metadata.jsonl".into());
    saved.paths.scores = Some("oracle_scores.jsonl".into());
    saved.paths.proposals = None;
    saved.paths.final_detections = None;
    saved.paths.output_dir = "run".into();
    let mut run_cfg = saved.clone();
    run_cfg.paths.resolve_against(dir);

    write_metadata(run_cfg.paths.metadata()?, &fixture.catalog)?;
    write_detections(run_cfg.paths.detections()?, fixture.detections.values().flatten())?;
    write_ground_truth(run_cfg.paths.ground_truth()?, fixture.ground_truth.values().flatten(), &cfg.labels)?;

    // Score what `propose` will see, after ingest filtering.
    let catalog = load_metadata(run_cfg.paths.metadata()?)?;
    let detections = load_detections(run_cfg.paths.detections()?, &catalog, &run_cfg.ingest)?;
    let per_video = propose_all(&catalog, &detections, &run_cfg, 1)?;
    let mut scores = Vec::new();
    for (video_id, props) in &per_video {
        let gts = fixture.ground_truth.get(video_id).map_or(&[][..], Vec::as_slice);
        scores.extend(oracle_scores(props, gts, &cfg.labels, &run_cfg.labeling));
    }
    write_scores(run_cfg.paths.scores()?, &scores)?;
    let config = dir.join("pipeline.toml");
    saved.save(&config)?;

    Ok(SynthSummary {
        dir: dir.to_path_buf(),
        config,
        videos: fixture.catalog.len(),
        detections: fixture.detections.values().map(Vec::len).sum(),
        ground_truth: fixture.ground_truth.values().map(Vec::len).sum(),
        scored_proposals: scores.len(),
    })
}

/// One loss evaluation request. `class` indexes `class_scores`, 0 being
/// the non-action class.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LossCase {
    pub class_scores: Vec<f64>,
    pub class: usize,
    #[serde(default)]
    pub v_st: f64,
    #[serde(default)]
    pub v_end: f64,
    #[serde(default)]
    pub r_st: Option<f64>,
    #[serde(default)]
    pub r_end: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossResult {
    pub cross_entropy: f64,
    pub localization: Option<f64>,
    pub loss: f64,
}

pub fn evaluate_loss(case: &LossCase, params: &LossParams) -> Result<LossResult> {
    let class = ClassId(case.class);
    let v = (case.v_st, case.v_end);
    let target = match (case.r_st, case.r_end) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => return Err(Error::validation("r_st and r_end must be given together")),
    };
    Ok(LossResult {
        cross_entropy: cross_entropy(&case.class_scores, class)?,
        localization: target
            .filter(|_| class.is_action())
            .map(|r| localization_loss(v, r)),
        loss: full_loss(&case.class_scores, class, v, target, params)?,
    })
}

/// Evaluates every case in `input` and writes one result per line.
pub fn cmd_loss_oracle(input: &Path, output: &Path, params: &LossParams) -> Result<usize> {
    let mut results = Vec::new();
    for (line, case) in jsonl::read_records::<LossCase>(input)? {
        results.push(
            evaluate_loss(&case, params)
                .map_err(|e| Error::validation(format!("{}:{line}: {e}", input.display())))?,
        );
    }
    jsonl::write_records(output, &results)?;
    Ok(results.len())
}

/// Mean `P_miss` of the aggregate curve at `rate`, when `rate` is one of
/// the report's rates.
pub fn aggregate_pmiss(report: &ScoreReport, rate: f64) -> Option<f64> {
    report
        .rates
        .iter()
        .position(|r| *r == rate)
        .map(|i| report.aggregate.p_miss_at[i])
}
