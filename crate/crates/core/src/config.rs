//! Pipeline configuration, read from TOML. Every section and field has a
//! default, so an empty file is a valid configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clustering::ClusterParams;
use crate::error::{Error, Result};
use crate::ingest::{IngestOptions, LabelSet};
use crate::jitter::JitterParams;
use crate::labeling::LabelThresholds;
use crate::nms::NmsParams;
use crate::refine::LossParams;
use crate::scoring::{default_recall_grid, IouMode, MatchParams, DEFAULT_RATES};
use crate::synth::SynthParams;

/// Input and output locations. Unset outputs default to fixed names inside
/// `output_dir`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub detections: Option<PathBuf>,
    pub ground_truth: Option<PathBuf>,
    pub metadata: Option<PathBuf>,
    pub scores: Option<PathBuf>,
    pub proposals: Option<PathBuf>,
    pub final_detections: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            detections: None,
            ground_truth: None,
            metadata: None,
            scores: None,
            proposals: None,
            final_detections: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

fn require<'a>(p: &'a Option<PathBuf>, key: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::config(format!("paths.{key} is not set")))
}

impl Paths {
    pub fn detections(&self) -> Result<&Path> {
        require(&self.detections, "detections")
    }

    pub fn ground_truth(&self) -> Result<&Path> {
        require(&self.ground_truth, "ground_truth")
    }

    pub fn metadata(&self) -> Result<&Path> {
        require(&self.metadata, "metadata")
    }

    pub fn scores(&self) -> Result<&Path> {
        require(&self.scores, "scores")
    }

    pub fn proposals(&self) -> PathBuf {
        self.proposals
            .clone()
            .unwrap_or_else(|| self.output_dir.join("proposals.jsonl"))
    }

    pub fn final_detections(&self) -> PathBuf {
        self.final_detections
            .clone()
            .unwrap_or_else(|| self.output_dir.join("detections.jsonl"))
    }

    /// Anchors relative paths at `base`.
    pub fn resolve_against(&mut self, base: &Path) {
        for p in [
            &mut self.detections,
            &mut self.ground_truth,
            &mut self.metadata,
            &mut self.scores,
            &mut self.proposals,
            &mut self.final_detections,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output_dir.is_relative() {
            self.output_dir = base.join(&self.output_dir);
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BalanceParams {
    pub enabled: bool,
    /// Fail when some class has no positive proposal.
    pub strict: bool,
}

impl Default for BalanceParams {
    fn default() -> Self {
        BalanceParams {
            enabled: true,
            strict: false,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FinalizeParams {
    /// When set, every action class scoring at least this much is emitted
    /// instead of the argmax class alone.
    pub multi_label_floor: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScoringParams {
    pub rates: Vec<f64>,
    pub recall_iou: IouMode,
    pub recall_grid: Vec<f64>,
}

impl Default for ScoringParams {
    fn default() -> Self {
        ScoringParams {
            rates: DEFAULT_RATES.to_vec(),
            recall_iou: IouMode::default(),
            recall_grid: default_recall_grid(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub labels: LabelSet,
    pub paths: Paths,
    pub ingest: IngestOptions,
    pub cluster: ClusterParams,
    pub jitter: JitterParams,
    pub labeling: LabelThresholds,
    pub balance: BalanceParams,
    pub loss: LossParams,
    pub finalize: FinalizeParams,
    pub nms: NmsParams,
    pub matching: MatchParams,
    pub scoring: ScoringParams,
    pub synth: SynthParams,
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::config(e.to_string()))
    }

    /// Reads a config file. Relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::config(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        if let Some(base) = path.parent() {
            cfg.paths.resolve_against(base);
        }
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn validate(&self) -> Result<()> {
        LabelSet::new(self.labels.labels().to_vec())?;
        self.cluster.validate()?;
        self.jitter.validate()?;
        self.labeling.validate()?;
        self.loss.validate()?;
        self.nms.validate()?;
        self.matching.validate()?;
        self.synth.validate()?;
        if !(0.0..=1.0).contains(&self.ingest.confidence_floor) {
            return Err(Error::config("ingest.confidence_floor must lie in [0, 1]"));
        }
        if let Some(floor) = self.finalize.multi_label_floor {
            if !(floor > 0.0 && floor <= 1.0) {
                return Err(Error::config("finalize.multi_label_floor must lie in (0, 1]"));
            }
        }
        if self.scoring.rates.is_empty() || self.scoring.rates.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
            return Err(Error::config("scoring.rates must be a nonempty list of non-negative rates"));
        }
        if self.scoring.recall_grid.iter().any(|t| !(0.0..=1.0).contains(t)) {
            return Err(Error::config("scoring.recall_grid values must lie in [0, 1]"));
        }
        Ok(())
    }
}
