//! Serialized run artifacts.
//!
//! A run record holds everything a single seeded run produced: the embedded
//! scenario config, ground truth, the raw scans, every monitoring node's
//! estimate stream, optional baseline streams, and the fused streams of each
//! processing node. Vectors are plain arrays and covariances are flattened
//! row-major.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::GaussianEstimate;
use crate::linalg::Vector;
use crate::scenario::{FusionMethod, NodeId, ScenarioConfig};

pub const RECORD_FORMAT: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub min: [f64; 2],
    pub max: [f64; 2],
}

impl Region {
    pub fn new(min: [f64; 2], max: [f64; 2]) -> Result<Self> {
        if !(min[0] < max[0] && min[1] < max[1]) {
            return Err(Error::config("region", "needs positive volume"));
        }
        Ok(Self { min, max })
    }

    pub fn volume(&self) -> f64 {
        (self.max[0] - self.min[0]) * (self.max[1] - self.min[1])
    }

    pub fn center(&self) -> [f64; 2] {
        [0.5 * (self.min[0] + self.max[0]), 0.5 * (self.min[1] + self.max[1])]
    }

    pub fn span(&self) -> [f64; 2] {
        [self.max[0] - self.min[0], self.max[1] - self.min[1]]
    }

    pub fn contains(&self, p: &[f64]) -> bool {
        (0..2).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }
}

/// One target's true states on its alive steps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthTrack {
    pub id: u64,
    /// Index of the first scan at which the target is alive.
    pub start_step: usize,
    pub states: Vec<Vec<f64>>,
}

impl TruthTrack {
    pub fn end_step(&self) -> usize {
        self.start_step + self.states.len()
    }

    pub fn state(&self, step: usize) -> Option<&[f64]> {
        step.checked_sub(self.start_step)
            .and_then(|i| self.states.get(i))
            .map(Vec::as_slice)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub steps: usize,
    pub targets: Vec<TruthTrack>,
}

impl GroundTruth {
    pub fn count(&self, step: usize) -> usize {
        self.targets.iter().filter(|t| t.state(step).is_some()).count()
    }

    pub fn counts(&self) -> Vec<usize> {
        (0..self.steps).map(|k| self.count(k)).collect()
    }
}

/// Unlabeled measurements of one node, one entry per scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanData {
    pub node: NodeId,
    /// Expected clutter count per scan used to generate the data.
    pub clutter_mean: f64,
    pub scans: Vec<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrackEstimate {
    pub track: u64,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl TrackEstimate {
    pub fn from_estimate(track: u64, est: &GaussianEstimate) -> Self {
        Self {
            track,
            mean: est.mean.iter().copied().collect(),
            cov: est.cov_row_major(),
        }
    }

    pub fn to_estimate(&self) -> Result<GaussianEstimate> {
        GaussianEstimate::from_slices(&self.mean, &self.cov)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStep {
    pub step: usize,
    pub time: f64,
    /// Estimated target count (multi-target mode).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub count: Option<usize>,
    pub estimates: Vec<TrackEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeStream {
    pub node: NodeId,
    /// `rbpf`, `rbmcda`, or `kf`.
    pub algorithm: String,
    pub steps: Vec<NodeStep>,
}

impl NodeStream {
    pub fn counts(&self) -> Option<Vec<usize>> {
        self.steps.iter().map(|s| s.count).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedEstimate {
    /// `node:track` of the lowest-numbered member; stable for as long as
    /// that member keeps its track.
    pub key: String,
    pub members: Vec<(NodeId, u64)>,
    /// False for singletons passed through unfused.
    pub fused: bool,
    pub weights: Vec<f64>,
    pub mean: Vec<f64>,
    pub cov: Vec<f64>,
}

impl FusedEstimate {
    pub fn to_estimate(&self) -> Result<GaussianEstimate> {
        GaussianEstimate::from_slices(&self.mean, &self.cov)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedStep {
    pub step: usize,
    pub time: f64,
    pub outputs: Vec<FusedEstimate>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusedStream {
    pub processor: NodeId,
    pub method: FusionMethod,
    pub steps: Vec<FusedStep>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub format: u32,
    pub seed: u64,
    pub config: ScenarioConfig,
    pub region: Region,
    pub times: Vec<f64>,
    pub truth: GroundTruth,
    pub scans: Vec<ScanData>,
    pub nodes: Vec<NodeStream>,
    #[serde(default)]
    pub baselines: Vec<NodeStream>,
    pub fused: Vec<FusedStream>,
}

impl RunRecord {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: Self = serde_json::from_str(text)?;
        if r.format != RECORD_FORMAT {
            return Err(Error::IncompatibleRecords(format!(
                "record format {} (expected {RECORD_FORMAT})",
                r.format
            )));
        }
        Ok(r)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::IncompatibleRecords(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn methods(&self) -> Vec<FusionMethod> {
        let mut m: Vec<FusionMethod> = self.fused.iter().map(|f| f.method).collect();
        m.sort();
        m.dedup();
        m
    }

    /// True when both records come from the same scenario (seed aside).
    pub fn same_scenario(&self, other: &RunRecord) -> bool {
        let mut a = self.config.clone();
        let mut b = other.config.clone();
        a.scenario.seed = 0;
        b.scenario.seed = 0;
        a == b
    }
}

pub(crate) fn to_vec(v: &Vector) -> Vec<f64> {
    v.iter().copied().collect()
}
