use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use tubelet_core::clustering::Linkage;
use tubelet_core::pipeline;
use tubelet_core::scoring::IouMode;
use tubelet_core::synth::{Scenario, SynthParams};
use tubelet_core::{Error, PipelineConfig, Result};

/// Spatio-temporal action proposals, labeling, and scoring.
///
/// Exit status is 0 on success, 1 for invalid input or configuration, and 2
/// when a file cannot be read or written.
#[derive(Debug, Parser)]
#[command(name = "tubelet", version)]
struct Cli {
    /// TOML configuration; every key has a default.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads for per-video work.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,

    /// Seed for the synthetic fixture generator.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,

    /// Output directory; overrides `paths.output_dir`.
    #[arg(long, global = true)]
    output: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Cluster detections into proposals and jitter them temporally.
    Propose(ProposeArgs),
    /// Designate proposals against ground truth and build the training set.
    Label(LabelArgs),
    /// Refine scored proposals, keep action classes, and apply 3D NMS.
    Finalize(FinalizeArgs),
    /// Score final detections: per-class and aggregate DET curves.
    Score(ScoreArgs),
    /// Recall of proposals against ground truth over an IoU grid.
    Recall(RecallArgs),
    /// Write a synthetic fixture with oracle classifier scores.
    Synth(SynthArgs),
    /// Evaluate classifier losses for externally supplied cases.
    LossOracle(LossOracleArgs),
    /// Export gnuplot data and a script from a saved score report.
    Plot(PlotArgs),
}

#[derive(Debug, Args)]
struct ProposeArgs {
    #[arg(long)]
    detections: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
    /// Where to write proposals.
    #[arg(long)]
    proposals: Option<PathBuf>,
    /// Detections below this confidence are dropped.
    #[arg(long)]
    confidence_floor: Option<f64>,
    #[arg(long, value_parser = parse_linkage)]
    linkage: Option<Linkage>,
    /// Clusters per frame of video.
    #[arg(long)]
    k_ratio: Option<f64>,
    /// Multiplier on the frame coordinate.
    #[arg(long)]
    temporal_scale: Option<f64>,
    #[arg(long)]
    min_cluster_size: Option<usize>,
    /// Jitter anchor stride in frames.
    #[arg(long)]
    stride: Option<i64>,
}

#[derive(Debug, Args)]
struct LabelArgs {
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long)]
    proposals: Option<PathBuf>,
    #[arg(long)]
    positive_spatial: Option<f64>,
    #[arg(long)]
    positive_temporal: Option<f64>,
    #[arg(long)]
    negative_temporal: Option<f64>,
    #[arg(long)]
    hard_spatial: Option<f64>,
    #[arg(long)]
    hard_temporal_min: Option<f64>,
    /// Fail when a class has no positive proposal.
    #[arg(long)]
    strict_balance: bool,
    /// Write the training set without duplicating positives.
    #[arg(long)]
    no_balance: bool,
}

#[derive(Debug, Args)]
struct FinalizeArgs {
    #[arg(long)]
    scores: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long)]
    proposals: Option<PathBuf>,
    /// Where to write final detections.
    #[arg(long)]
    final_detections: Option<PathBuf>,
    #[arg(long)]
    nms_temporal: Option<f64>,
    #[arg(long)]
    nms_spatial: Option<f64>,
    /// Emit every action class scoring at least this much.
    #[arg(long)]
    multi_label_floor: Option<f64>,
}

#[derive(Debug, Args)]
struct ScoreArgs {
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long)]
    final_detections: Option<PathBuf>,
    /// Minimum temporal IoU for a detection to match ground truth.
    #[arg(long)]
    match_temporal: Option<f64>,
    /// Minimum spatial IoU for a match; 0 disables the spatial check.
    #[arg(long)]
    match_spatial: Option<f64>,
    /// False alarms per minute at which P_miss is reported.
    #[arg(long, value_delimiter = ',')]
    rates: Option<Vec<f64>>,
}

#[derive(Debug, Args)]
struct RecallArgs {
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long)]
    metadata: Option<PathBuf>,
    #[arg(long)]
    proposals: Option<PathBuf>,
    /// volume3d or spatial_times_temporal.
    #[arg(long, value_parser = parse_iou_mode)]
    iou: Option<IouMode>,
}

#[derive(Debug, Args)]
struct SynthArgs {
    /// clean or noisy.
    #[arg(long, default_value = "clean")]
    scenario: Scenario,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    actors: Option<usize>,
}

#[derive(Debug, Args)]
struct LossOracleArgs {
    /// JSONL cases: class_scores, class, v_st, v_end, r_st, r_end.
    #[arg(long)]
    input: PathBuf,
    /// Results file; defaults to `losses.jsonl` in the output directory.
    #[arg(long)]
    results: Option<PathBuf>,
    #[arg(long)]
    lambda: Option<f64>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    /// Report written by `score`; defaults to the one in the output directory.
    #[arg(long)]
    report: Option<PathBuf>,
}

fn parse_linkage(s: &str) -> std::result::Result<Linkage, String> {
    match s {
        "ward" => Ok(Linkage::Ward),
        "average" => Ok(Linkage::Average),
        "single" => Ok(Linkage::Single),
        "complete" => Ok(Linkage::Complete),
        _ => Err(format!("unknown linkage {s:?}; expected ward, average, single or complete")),
    }
}

fn parse_iou_mode(s: &str) -> std::result::Result<IouMode, String> {
    match s {
        "volume3d" => Ok(IouMode::Volume3d),
        "spatial_times_temporal" => Ok(IouMode::SpatialTimesTemporal),
        _ => Err(format!("unknown IoU mode {s:?}; expected volume3d or spatial_times_temporal")),
    }
}

/// Prints to stdout, ending with a newline. A closed pipe is not an error.
fn say(text: &str) {
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(text.as_bytes());
    if !text.ends_with('\n') {
        let _ = out.write_all(b"\n");
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(out) = cli.output.clone() {
        cfg.paths.output_dir = out;
    }
    if cli.jobs == 0 {
        return Err(Error::config("--jobs must be at least 1"));
    }

    match cli.command {
        Command::Propose(a) => {
            set_path(&mut cfg.paths.detections, a.detections);
            set_path(&mut cfg.paths.metadata, a.metadata);
            set_path(&mut cfg.paths.proposals, a.proposals);
            set(&mut cfg.ingest.confidence_floor, a.confidence_floor);
            set(&mut cfg.cluster.linkage, a.linkage);
            set(&mut cfg.cluster.k_ratio, a.k_ratio);
            set(&mut cfg.cluster.temporal_scale, a.temporal_scale);
            set(&mut cfg.cluster.min_cluster_size, a.min_cluster_size);
            set(&mut cfg.jitter.stride, a.stride);
            cfg.validate()?;
            let summary = pipeline::cmd_propose(&cfg, cli.jobs)?;
            say(&summary.to_string());
            log::info!("wrote {}", summary.output.display());
        }
        Command::Label(a) => {
            set_path(&mut cfg.paths.ground_truth, a.ground_truth);
            set_path(&mut cfg.paths.metadata, a.metadata);
            set_path(&mut cfg.paths.proposals, a.proposals);
            set(&mut cfg.labeling.positive_spatial, a.positive_spatial);
            set(&mut cfg.labeling.positive_temporal, a.positive_temporal);
            set(&mut cfg.labeling.negative_temporal, a.negative_temporal);
            set(&mut cfg.labeling.hard_spatial, a.hard_spatial);
            set(&mut cfg.labeling.hard_temporal_min, a.hard_temporal_min);
            cfg.balance.strict |= a.strict_balance;
            cfg.balance.enabled &= !a.no_balance;
            cfg.validate()?;
            say(&pipeline::cmd_label(&cfg)?.to_string());
        }
        Command::Finalize(a) => {
            set_path(&mut cfg.paths.scores, a.scores);
            set_path(&mut cfg.paths.metadata, a.metadata);
            set_path(&mut cfg.paths.proposals, a.proposals);
            set_path(&mut cfg.paths.final_detections, a.final_detections);
            set(&mut cfg.nms.temporal_iou_thresh, a.nms_temporal);
            set(&mut cfg.nms.spatial_iou_thresh, a.nms_spatial);
            if a.multi_label_floor.is_some() {
                cfg.finalize.multi_label_floor = a.multi_label_floor;
            }
            cfg.validate()?;
            say(&pipeline::cmd_finalize(&cfg)?.to_string());
        }
        Command::Score(a) => {
            set_path(&mut cfg.paths.ground_truth, a.ground_truth);
            set_path(&mut cfg.paths.metadata, a.metadata);
            set_path(&mut cfg.paths.final_detections, a.final_detections);
            set(&mut cfg.matching.temporal_iou_thresh, a.match_temporal);
            set(&mut cfg.matching.spatial_iou_thresh, a.match_spatial);
            set(&mut cfg.scoring.rates, a.rates);
            cfg.validate()?;
            say(&pipeline::cmd_score(&cfg)?.summary_table());
        }
        Command::Recall(a) => {
            set_path(&mut cfg.paths.ground_truth, a.ground_truth);
            set_path(&mut cfg.paths.metadata, a.metadata);
            set_path(&mut cfg.paths.proposals, a.proposals);
            set(&mut cfg.scoring.recall_iou, a.iou);
            cfg.validate()?;
            say(&pipeline::cmd_recall(&cfg)?.table());
        }
        Command::Synth(a) => {
            let mut params = SynthParams {
                num_videos: cfg.synth.num_videos,
                num_frames: cfg.synth.num_frames,
                actors_per_video: cfg.synth.actors_per_video,
                ..SynthParams::for_scenario(a.scenario)
            };
            set(&mut params.num_videos, a.videos);
            set(&mut params.actors_per_video, a.actors);
            params.validate()?;
            let dir = cfg.paths.output_dir.clone();
            say(&pipeline::cmd_synth(&cfg, &params, cli.seed, &dir)?.to_string());
        }
        Command::LossOracle(a) => {
            set(&mut cfg.loss.lambda, a.lambda);
            cfg.validate()?;
            let results = a
                .results
                .unwrap_or_else(|| cfg.paths.output_dir.join("losses.jsonl"));
            let n = pipeline::cmd_loss_oracle(&a.input, &results, &cfg.loss)?;
            say(&format!("{n} cases evaluated, results in {}", results.display()));
        }
        Command::Plot(a) => {
            let report = a
                .report
                .unwrap_or_else(|| cfg.paths.output_dir.join("score_report.json"));
            for path in pipeline::cmd_plot(&report, &cfg.paths.output_dir)? {
                say(&path.display().to_string());
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_io() { 2 } else { 1 })
        }
    }
}
