//! Scenario configuration, loaded from TOML.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{NodeProfile, Objective};
use crate::gaussian::{discretize_ct_model, ContinuousMotionModel, GaussianEstimate, MeasurementModel, MotionModel};
use crate::linalg::{Matrix, Vector};
use crate::rbmcda::{BirthDeathModel, CountEstimator};
use crate::rbpf::AssociationPrior;

pub type NodeId = u32;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub motion: MotionSection,
    pub measurement: MeasurementSection,
    #[serde(default)]
    pub region: RegionSection,
    #[serde(default)]
    pub clutter: ClutterSection,
    pub tracker: TrackerSection,
    pub fusion: FusionSection,
    pub nodes: Vec<NodeConfig>,
    pub processors: Vec<ProcessorConfig>,
    #[serde(default)]
    pub targets: Vec<TargetConfig>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    #[serde(default)]
    pub seed: u64,
    /// Also run a plain Kalman filter at every monitoring node, fed with
    /// every measurement.
    #[serde(default)]
    pub baseline_kf: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MotionSection {
    /// Turn rate `a` of the planar turn model.
    pub turn_rate: f64,
    /// Diffusion density `q` of the velocity noise (`Qc = q I₂`).
    pub diffusion: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementSection {
    /// Per-axis position noise variance (`R = r I₂`).
    pub noise_var: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RegionSection {
    /// `[[x_min, x_max], [y_min, y_max]]`. When absent the region is the
    /// truth bounding box padded by `padding` of its extent on each side.
    #[serde(default)]
    pub bounds: Option<[[f64; 2]; 2]>,
    #[serde(default = "default_padding")]
    pub padding: f64,
}

fn default_padding() -> f64 {
    0.2
}

impl Default for RegionSection {
    fn default() -> Self {
        Self {
            bounds: None,
            padding: default_padding(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClutterUnit {
    /// `clutter_density` is the expected clutter count per scan.
    #[default]
    PerScan,
    /// `clutter_density` is per unit area of the region.
    PerVolume,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClutterSection {
    #[serde(default)]
    pub unit: ClutterUnit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackerMode {
    /// One target known to exist; node trackers are single-target RBPFs.
    Single,
    /// Unknown, time-varying number of targets.
    Multi,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrackerSection {
    pub mode: TrackerMode,
    #[serde(default = "default_particles")]
    pub particles: usize,
    #[serde(default = "default_order")]
    pub order: usize,
    #[serde(default = "default_resample")]
    pub resample_threshold: f64,
    #[serde(default)]
    pub association_prior: AssociationPrior,
    /// Diagonal of the initial covariance (single-target mode).
    #[serde(default = "default_initial_cov")]
    pub initial_cov: Vec<f64>,
    #[serde(default)]
    pub birth: BirthSection,
    #[serde(default)]
    pub count_estimator: CountEstimator,
}

fn default_particles() -> usize {
    20
}
fn default_order() -> usize {
    1
}
fn default_resample() -> f64 {
    0.5
}
fn default_initial_cov() -> Vec<f64> {
    vec![0.1, 0.1, 1.0, 1.0]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BirthSection {
    pub probability: f64,
    pub lifetime_shape: f64,
    pub lifetime_scale: f64,
    /// Velocity variance of a newborn target before its first update.
    pub velocity_var: f64,
    pub max_targets: usize,
}

impl Default for BirthSection {
    fn default() -> Self {
        Self {
            probability: 0.01,
            lifetime_shape: 2.0,
            lifetime_scale: 0.5,
            velocity_var: 4.0,
            max_targets: 20,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    Ci,
    #[serde(rename = "modci")]
    ModifiedCi,
    Bci,
    Mbci,
}

impl FusionMethod {
    pub fn is_modified(self) -> bool {
        matches!(self, FusionMethod::ModifiedCi | FusionMethod::Mbci)
    }

    pub fn key(self) -> &'static str {
        match self {
            FusionMethod::Ci => "ci",
            FusionMethod::ModifiedCi => "modci",
            FusionMethod::Bci => "bci",
            FusionMethod::Mbci => "mbci",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [FusionMethod::Ci, FusionMethod::ModifiedCi, FusionMethod::Bci, FusionMethod::Mbci]
            .into_iter()
            .find(|m| m.key() == s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grouping {
    /// Every received estimate goes into one group (single-target mode).
    All,
    /// Agglomerative grouping on position distance.
    MinDistance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FusionSection {
    pub methods: Vec<FusionMethod>,
    pub grouping: Grouping,
    /// Association distance threshold; defaults to three measurement
    /// standard deviations.
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub objective: Objective,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NodeConfig {
    pub id: NodeId,
    pub p_detect: f64,
    pub clutter_density: f64,
    /// Growth parameter; defaults to `1 / (1 + dt)`.
    #[serde(default)]
    pub chi: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProcessorConfig {
    pub id: NodeId,
    pub inputs: Vec<NodeId>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TargetConfig {
    #[serde(default)]
    pub birth: f64,
    #[serde(default)]
    pub death: Option<f64>,
    /// `[x, y, vx, vy]` at the birth time.
    pub initial: [f64; 4],
}

fn field(name: &str) -> impl Fn(String) -> Error + '_ {
    move |reason| Error::config(name, reason)
}

impl ScenarioConfig {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::ConfigParse(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text).map_err(|e| match e {
            Error::ConfigParse(msg) => Error::ConfigParse(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let s = &self.scenario;
        if !(s.dt > 0.0 && s.dt.is_finite()) {
            return Err(Error::config("scenario.dt", format!("must be positive, got {}", s.dt)));
        }
        if !(s.duration >= s.dt && s.duration.is_finite()) {
            return Err(Error::config(
                "scenario.duration",
                format!("must be at least one step (dt = {}), got {}", s.dt, s.duration),
            ));
        }
        if s.baseline_kf && self.tracker.mode != TrackerMode::Single {
            return Err(Error::config("scenario.baseline_kf", "requires tracker.mode = \"single\""));
        }
        if !self.motion.turn_rate.is_finite() {
            return Err(Error::config("motion.turn_rate", "must be finite"));
        }
        if !(self.motion.diffusion >= 0.0 && self.motion.diffusion.is_finite()) {
            return Err(Error::config("motion.diffusion", "must be nonnegative"));
        }
        if !(self.measurement.noise_var > 0.0 && self.measurement.noise_var.is_finite()) {
            return Err(Error::config("measurement.noise_var", "must be positive"));
        }
        if let Some(b) = self.region.bounds {
            if !b.iter().all(|r| r[0].is_finite() && r[1].is_finite() && r[0] < r[1]) {
                return Err(Error::config("region.bounds", "each axis needs min < max (positive volume)"));
            }
        }
        if !(self.region.padding >= 0.0) {
            return Err(Error::config("region.padding", "must be nonnegative"));
        }
        self.validate_nodes()?;
        self.validate_tracker()?;
        self.validate_fusion()?;
        self.validate_targets()
    }

    fn validate_nodes(&self) -> Result<()> {
        if self.nodes.is_empty() {
            return Err(Error::config("nodes", "at least one monitoring node is required"));
        }
        let mut ids = BTreeSet::new();
        for (i, n) in self.nodes.iter().enumerate() {
            let name = format!("nodes[{i}]");
            if !ids.insert(n.id) {
                return Err(Error::config(format!("{name}.id"), format!("duplicate node id {}", n.id)));
            }
            NodeProfile::new(n.p_detect, self.chi_of(n), n.clutter_density)
                .map_err(|e| Error::config(name.clone(), e.to_string()))?;
        }
        for (i, p) in self.processors.iter().enumerate() {
            let name = format!("processors[{i}]");
            if !ids.insert(p.id) {
                return Err(Error::config(format!("{name}.id"), format!("duplicate node id {}", p.id)));
            }
            let inputs: BTreeSet<NodeId> = p.inputs.iter().copied().collect();
            if inputs.len() != p.inputs.len() {
                return Err(Error::config(format!("{name}.inputs"), "duplicate input"));
            }
            if inputs.len() < 2 {
                return Err(Error::config(format!("{name}.inputs"), "needs at least two monitoring nodes"));
            }
            if let Some(bad) = inputs.iter().find(|id| !self.nodes.iter().any(|n| n.id == **id)) {
                return Err(Error::config(
                    format!("{name}.inputs"),
                    format!("{bad} is not a monitoring node"),
                ));
            }
        }
        Ok(())
    }

    fn validate_tracker(&self) -> Result<()> {
        let t = &self.tracker;
        if t.particles == 0 {
            return Err(Error::config("tracker.particles", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&t.resample_threshold) {
            return Err(Error::config("tracker.resample_threshold", "must lie in [0, 1]"));
        }
        t.association_prior
            .validate()
            .map_err(|e| field("tracker.association_prior")(e.to_string()))?;
        if t.initial_cov.len() != 4 || !t.initial_cov.iter().all(|v| *v > 0.0 && v.is_finite()) {
            return Err(Error::config("tracker.initial_cov", "needs 4 positive diagonal entries"));
        }
        self.birth_death()
            .validate()
            .map_err(|e| field("tracker.birth")(e.to_string()))?;
        if !(t.birth.velocity_var > 0.0) {
            return Err(Error::config("tracker.birth.velocity_var", "must be positive"));
        }
        Ok(())
    }

    fn validate_fusion(&self) -> Result<()> {
        let f = &self.fusion;
        if f.methods.is_empty() {
            return Err(Error::config("fusion.methods", "at least one method is required"));
        }
        if let Some(th) = f.threshold {
            if !(th > 0.0 && th.is_finite()) {
                return Err(Error::config("fusion.threshold", "must be positive"));
            }
        }
        if f.grouping == Grouping::All && self.tracker.mode != TrackerMode::Single {
            return Err(Error::config("fusion.grouping", "\"all\" requires tracker.mode = \"single\""));
        }
        Ok(())
    }

    fn validate_targets(&self) -> Result<()> {
        let dt = self.scenario.dt;
        let duration = self.scenario.duration;
        let on_grid = |t: f64| ((t / dt) - (t / dt).round()).abs() <= 1e-6;
        for (i, t) in self.targets.iter().enumerate() {
            let name = format!("targets[{i}]");
            if !t.initial.iter().all(|v| v.is_finite()) {
                return Err(Error::config(format!("{name}.initial"), "must be finite"));
            }
            if !(t.birth >= 0.0 && t.birth < duration && on_grid(t.birth)) {
                return Err(Error::config(
                    format!("{name}.birth"),
                    format!("must be a multiple of dt in [0, duration), got {}", t.birth),
                ));
            }
            if let Some(d) = t.death {
                if !(d > t.birth && d <= duration && on_grid(d)) {
                    return Err(Error::config(
                        format!("{name}.death"),
                        format!("must be a multiple of dt in (birth, duration], got {d}"),
                    ));
                }
            }
        }
        if self.tracker.mode == TrackerMode::Single {
            let ok = self.targets.len() == 1
                && self.targets[0].birth == 0.0
                && self.targets[0].death.is_none_or(|d| (d - duration).abs() <= 1e-9);
            if !ok {
                return Err(Error::config(
                    "targets",
                    "single-target mode needs exactly one target alive for the whole run",
                ));
            }
        }
        Ok(())
    }

    fn chi_of(&self, node: &NodeConfig) -> f64 {
        node.chi.unwrap_or(1.0 / (1.0 + self.scenario.dt))
    }

    /// Number of scans.
    pub fn steps(&self) -> usize {
        (self.scenario.duration / self.scenario.dt).round() as usize
    }

    /// Time of scan `k` (scans start one step after t = 0).
    pub fn step_time(&self, k: usize) -> f64 {
        (k + 1) as f64 * self.scenario.dt
    }

    pub fn node(&self, id: NodeId) -> Option<&NodeConfig> {
        self.nodes.iter().find(|n| n.id == id)
    }

    pub fn profile(&self, node: &NodeConfig) -> NodeProfile {
        NodeProfile {
            p_detect: node.p_detect,
            chi: self.chi_of(node),
            clutter_density: node.clutter_density,
        }
    }

    pub fn threshold(&self) -> f64 {
        self.fusion
            .threshold
            .unwrap_or(3.0 * self.measurement.noise_var.sqrt())
    }

    pub fn continuous_motion(&self) -> ContinuousMotionModel {
        ContinuousMotionModel::planar_turn(self.motion.turn_rate, self.motion.diffusion)
    }

    pub fn motion_model(&self) -> Result<MotionModel> {
        discretize_ct_model(&self.continuous_motion(), self.scenario.dt)
    }

    pub fn measurement_model(&self) -> Result<MeasurementModel> {
        MeasurementModel::position(4, 2, self.measurement.noise_var)
    }

    pub fn birth_death(&self) -> BirthDeathModel {
        let b = &self.tracker.birth;
        BirthDeathModel {
            p_birth: b.probability,
            lifetime_shape: b.lifetime_shape,
            lifetime_scale: b.lifetime_scale,
            max_targets: b.max_targets,
        }
    }

    /// Prior of the single tracked target: its scheduled initial state with
    /// the configured diagonal covariance.
    pub fn initial_estimate(&self) -> Result<GaussianEstimate> {
        let target = self
            .targets
            .first()
            .ok_or_else(|| Error::config("targets", "no target to initialize from"))?;
        GaussianEstimate::new(
            Vector::from_row_slice(&target.initial),
            Matrix::from_diagonal(&Vector::from_row_slice(&self.tracker.initial_cov)),
        )
    }
}
