//! Configuration resolution: a JSON config file, command-line overrides, a
//! scale preset, and built-in defaults merge into one fully resolved run
//! description. Precedence, highest first: the `AOI_EDGE_OUT` environment
//! variable (output directory only), command-line flags, the config file,
//! the scale preset, built-in defaults.

use std::fmt;
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use aoi_edge::qlearning::ObservationMode;
use aoi_edge::sim::RngMode;
use aoi_edge::{EnvConfig, LearnerConfig, SensorParams};

/// Default fleet size.
const DEFAULT_SENSORS: usize = 3;
/// Default harvest probabilities of the first sensors; later sensors reuse
/// the middle value.
const DEFAULT_HARVEST: [f64; 3] = [0.04, 0.05, 0.06];
const DEFAULT_TX_SUCCESS: f64 = 0.15;
const DEFAULT_REQUEST: f64 = 0.15;
const DEFAULT_BATTERY: u32 = 15;
const DEFAULT_AOI_MAX: u32 = 127;
const DEFAULT_COST_WEIGHT: f64 = 1.0;
const DEFAULT_GAMMA: f64 = 0.99;
const DEFAULT_THETA: f64 = 0.001;
const DEFAULT_SEED: u64 = 1;
const DEFAULT_CURVE_POINTS: u32 = 100;

/// Experiment scale: `paper` runs the published schedules, `desk` the
/// shortened ones that finish on a workstation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Scale {
    Paper,
    #[default]
    Desk,
}

/// What kind of run is being resolved; decides the preset horizon and
/// episode count.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Workload {
    Solve,
    Train,
    Simulate,
    Coupled,
}

/// Which sensor-0 parameter a sweep varies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum SweepParam {
    /// Harvest probability.
    Lambda,
    /// Transmit success probability.
    Xi,
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Xi => "xi",
        }
    }
}

impl Scale {
    /// Preset (horizon, episodes) for a workload when the config is silent.
    fn run_shape(self, workload: Workload) -> (u64, u32) {
        match (self, workload) {
            // Solving needs no slots; the shape only seeds provenance.
            (_, Workload::Solve) => (1, 1),
            (Scale::Paper, Workload::Train) => (20_000_000, 1),
            (Scale::Paper, _) => (1_000_000, 200),
            (Scale::Desk, Workload::Train) => (2_000_000, 1),
            (Scale::Desk, Workload::Simulate) => (2_000_000, 10),
            (Scale::Desk, Workload::Coupled) => (100_000, 50),
        }
    }

    fn learner(self, gamma: f64, observation: ObservationMode, seed: u64) -> LearnerConfig {
        match self {
            Scale::Paper => LearnerConfig::standard(gamma, observation, seed),
            Scale::Desk => LearnerConfig::desk(gamma, observation, seed),
        }
    }
}

/// Per-sensor overrides in the config file; absent fields fall back to the
/// defaults.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SensorSpec {
    pub battery_capacity: Option<u32>,
    pub harvest_prob: Option<f64>,
    pub tx_success_prob: Option<f64>,
    pub request_prob: Option<f64>,
    pub aoi_max: Option<u32>,
    pub cost_weight: Option<f64>,
}

/// Learning-schedule overrides in the config file.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LearnerSpec {
    pub epsilon_floor: Option<f64>,
    pub epsilon_span: Option<f64>,
    pub epsilon_decay: Option<f64>,
    pub alpha_hi: Option<f64>,
    pub alpha_lo: Option<f64>,
    pub switch_slot: Option<u64>,
}

/// The config file: every field optional, unknown fields rejected.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FileConfig {
    /// Explicit per-sensor parameters; wins over `sensor_count`.
    pub sensors: Option<Vec<SensorSpec>>,
    /// Fleet of this many default sensors.
    pub sensor_count: Option<usize>,
    pub gamma: Option<f64>,
    pub theta: Option<f64>,
    pub horizon: Option<u64>,
    pub episodes: Option<u32>,
    pub seed: Option<u64>,
    pub observation: Option<ObservationMode>,
    pub rng_mode: Option<RngMode>,
    pub scale: Option<Scale>,
    pub limit: Option<u32>,
    pub policy: Option<String>,
    pub battery_threshold: Option<u32>,
    pub workers: Option<usize>,
    pub curve_points: Option<u32>,
    pub out: Option<PathBuf>,
    pub initial_battery: Option<u32>,
    pub initial_aoi: Option<u32>,
    pub initial_request: Option<bool>,
    pub initial_belief: Option<u32>,
    pub learner: Option<LearnerSpec>,
}

impl FileConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigErrors> {
        let file = File::open(path)
            .map_err(|e| ConfigErrors(vec![format!("config file {}: {e}", path.display())]))?;
        serde_json::from_reader(BufReader::new(file))
            .map_err(|e| ConfigErrors(vec![format!("config file {}: {e}", path.display())]))
    }
}

/// Command-line values that override the file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub scale: Option<Scale>,
    pub workers: Option<usize>,
    pub policy: Option<String>,
    pub battery_threshold: Option<u32>,
    pub limit: Option<u32>,
}

/// Every problem found while validating a config, itemized.
#[derive(Debug)]
pub struct ConfigErrors(pub Vec<String>);

impl fmt::Display for ConfigErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, line) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "config error: {line}")?;
        }
        Ok(())
    }
}

/// A fully resolved run. Serialized into every artifact's provenance.
#[derive(Debug, Clone, Serialize)]
pub struct Resolved {
    pub scale: Scale,
    pub gamma: f64,
    pub theta: f64,
    /// Per-slot command budget for coupled runs; 0 means "all sensors".
    pub limit: u32,
    pub policy: String,
    pub battery_threshold: u32,
    pub env: EnvConfig,
    pub learner: LearnerConfig,
    #[serde(skip)]
    pub out: PathBuf,
    #[serde(skip)]
    pub workers: Option<usize>,
}

impl Resolved {
    pub fn sensor_count(&self) -> usize {
        self.env.sensors.len()
    }
}

fn default_harvest(k: usize) -> f64 {
    *DEFAULT_HARVEST.get(k).unwrap_or(&DEFAULT_HARVEST[1])
}

fn build_sensor(k: usize, spec: &SensorSpec, errors: &mut Vec<String>) -> Option<SensorParams> {
    SensorParams::new(
        spec.battery_capacity.unwrap_or(DEFAULT_BATTERY),
        spec.harvest_prob.unwrap_or_else(|| default_harvest(k)),
        spec.tx_success_prob.unwrap_or(DEFAULT_TX_SUCCESS),
        spec.request_prob.unwrap_or(DEFAULT_REQUEST),
        spec.aoi_max.unwrap_or(DEFAULT_AOI_MAX),
        spec.cost_weight.unwrap_or(DEFAULT_COST_WEIGHT),
    )
    .map_err(|e| errors.push(format!("sensors[{k}]: {e}")))
    .ok()
}

/// Merges defaults, the file, and the command line into a [`Resolved`] run,
/// or the full list of problems found.
pub fn resolve(
    file: &FileConfig,
    overrides: &Overrides,
    workload: Workload,
) -> Result<Resolved, ConfigErrors> {
    let mut errors = Vec::new();

    let scale = overrides.scale.or(file.scale).unwrap_or_default();
    let gamma = file.gamma.unwrap_or(DEFAULT_GAMMA);
    if !(0.0..1.0).contains(&gamma) {
        errors.push(format!("gamma out of [0,1): {gamma}"));
    }
    let theta = file.theta.unwrap_or(DEFAULT_THETA);
    if !(theta > 0.0 && theta.is_finite()) {
        errors.push(format!("theta must be positive: {theta}"));
    }

    let default_specs;
    let specs: &[SensorSpec] = match (&file.sensors, file.sensor_count) {
        (Some(specs), _) => {
            if specs.is_empty() {
                errors.push("sensors must not be empty".into());
            }
            if file.sensor_count.is_some_and(|n| n != specs.len()) {
                errors.push(format!(
                    "sensor_count {} disagrees with the {} listed sensors",
                    file.sensor_count.unwrap_or(0),
                    specs.len()
                ));
            }
            specs
        }
        (None, count) => {
            let count = count.unwrap_or(DEFAULT_SENSORS);
            if count == 0 {
                errors.push("sensor_count must be at least 1".into());
            }
            default_specs = vec![SensorSpec::default(); count];
            &default_specs
        }
    };
    let sensors: Vec<SensorParams> = specs
        .iter()
        .enumerate()
        .filter_map(|(k, spec)| build_sensor(k, spec, &mut errors))
        .collect();

    let (preset_horizon, preset_episodes) = scale.run_shape(workload);
    let horizon = file.horizon.unwrap_or(preset_horizon);
    if horizon == 0 {
        errors.push("horizon must be at least 1".into());
    }
    let episodes = file.episodes.unwrap_or(preset_episodes);
    if episodes == 0 {
        errors.push("episodes must be at least 1".into());
    }
    let seed = overrides.seed.or(file.seed).unwrap_or(DEFAULT_SEED);

    let mut env = EnvConfig::new(sensors, horizon.max(1), episodes.max(1), seed);
    env.observation = file.observation.unwrap_or_default();
    if let Some(mode) = file.rng_mode {
        env.rng_mode = mode;
    }
    env.initial_battery = file.initial_battery;
    env.initial_aoi = file.initial_aoi.unwrap_or(1);
    env.initial_request = file.initial_request;
    env.initial_belief = file.initial_belief;
    env.curve_points = file.curve_points.unwrap_or(DEFAULT_CURVE_POINTS);

    let mut learner = scale.learner(gamma.clamp(0.0, 1.0 - f64::EPSILON), env.observation, seed);
    if let Some(spec) = &file.learner {
        if let Some(x) = spec.epsilon_floor {
            learner.epsilon_floor = x;
        }
        if let Some(x) = spec.epsilon_span {
            learner.epsilon_span = x;
        }
        if let Some(x) = spec.epsilon_decay {
            learner.epsilon_decay = x;
        }
        if let Some(x) = spec.alpha_hi {
            learner.alpha_hi = x;
        }
        if let Some(x) = spec.alpha_lo {
            learner.alpha_lo = x;
        }
        if let Some(x) = spec.switch_slot {
            learner.switch_slot = x;
        }
    }

    let policy = overrides
        .policy
        .clone()
        .or_else(|| file.policy.clone())
        .unwrap_or_else(|| "via".into());
    let known = [
        "via",
        "greedy",
        "greedy-threshold",
        "random",
        "all",
        "truncation",
    ];
    if !known.contains(&policy.as_str()) {
        errors.push(format!(
            "unknown policy {policy:?}; expected one of {known:?}"
        ));
    }
    let battery_threshold = overrides
        .battery_threshold
        .or(file.battery_threshold)
        .unwrap_or(1);
    let limit = overrides.limit.or(file.limit).unwrap_or(0);
    if limit as usize > env.sensors.len() {
        errors.push(format!(
            "limit {limit} exceeds the {} sensors",
            env.sensors.len()
        ));
    }

    if errors.is_empty() {
        // Full-config checks the piecemeal ones above cannot see.
        if let Err(e) = env.validate() {
            errors.push(e.to_string());
        }
        if let Err(e) = learner.validate() {
            errors.push(format!("learner: {e}"));
        }
    }
    if !errors.is_empty() {
        return Err(ConfigErrors(errors));
    }

    let out = std::env::var_os("AOI_EDGE_OUT")
        .map(PathBuf::from)
        .or_else(|| overrides.out.clone())
        .or_else(|| file.out.clone())
        .unwrap_or_else(|| PathBuf::from("out"));

    Ok(Resolved {
        scale,
        gamma,
        theta,
        limit,
        policy,
        battery_threshold,
        env,
        learner,
        out,
        workers: overrides.workers.or(file.workers),
    })
}
