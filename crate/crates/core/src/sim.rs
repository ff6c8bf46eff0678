//! Seeded slot-level simulation of the edge node and its sensors.
//!
//! An [`Environment`] advances all sensors one slot at a time under a fixed
//! within-slot order: commands are applied, transmissions resolved, the
//! channel and harvest drawn, battery and AoI advanced, the slot's cost
//! charged, and the next slot's requests drawn. Any decision rule that
//! implements [`Policy`] can be hosted, and [`run_policy`] measures its
//! per-sensor and total average costs over seeded episodes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{self, CommandAction, SensorParams, SensorState};
use crate::qlearning::{observe, EdgeObservation, ObservationMode};
use crate::scalar::Real;
use crate::solver::PolicyTable;

/// How random draws are organized across sensors.
///
/// `PerSource` gives every (sensor, source) pair its own counter-based
/// stream and draws all of them every slot whether or not the value is
/// used, so policies compared under the same seed face identical
/// randomness (common random numbers). `Single` draws on demand from one
/// stream; draw order then depends on the actions taken.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RngMode {
    PerSource,
    Single,
}

/// Simulation configuration: the sensor fleet plus run shape and seeding.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig<R> {
    pub sensors: Vec<SensorParams<R>>,
    pub horizon: u64,
    pub episodes: u32,
    pub seed: u64,
    #[serde(default)]
    pub observation: ObservationMode,
    #[serde(default)]
    pub rng_mode: RngMode,
    /// Initial battery level; full when absent.
    #[serde(default)]
    pub initial_battery: Option<u32>,
    /// Initial AoI.
    #[serde(default = "default_initial_aoi")]
    pub initial_aoi: u32,
    /// Initial request flag; drawn from the request stream when absent.
    #[serde(default)]
    pub initial_request: Option<bool>,
    /// Battery belief before any update arrives in partial mode; full when
    /// absent.
    #[serde(default)]
    pub initial_belief: Option<u32>,
    /// Number of running-average checkpoints recorded per run; 0 disables
    /// the curve.
    #[serde(default)]
    pub curve_points: u32,
}

fn default_initial_aoi() -> u32 {
    1
}

impl Default for RngMode {
    fn default() -> Self {
        RngMode::PerSource
    }
}

impl<R: Real> EnvConfig<R> {
    pub fn new(sensors: Vec<SensorParams<R>>, horizon: u64, episodes: u32, seed: u64) -> Self {
        Self {
            sensors,
            horizon,
            episodes,
            seed,
            observation: ObservationMode::Exact,
            rng_mode: RngMode::PerSource,
            initial_battery: None,
            initial_aoi: 1,
            initial_request: None,
            initial_belief: None,
            curve_points: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.sensors.is_empty() {
            return Err(Error::InvalidParameter("no sensors configured".into()));
        }
        for params in &self.sensors {
            params.validate()?;
        }
        if self.horizon < 1 {
            return Err(Error::InvalidParameter("horizon must be at least 1".into()));
        }
        if self.episodes < 1 {
            return Err(Error::InvalidParameter(
                "episodes must be at least 1".into(),
            ));
        }
        for params in &self.sensors {
            if let Some(b) = self.initial_battery {
                if b > params.battery_capacity {
                    return Err(Error::InvalidParameter(format!(
                        "initial battery {b} exceeds capacity {}",
                        params.battery_capacity
                    )));
                }
            }
            if let Some(b) = self.initial_belief {
                if b > params.battery_capacity {
                    return Err(Error::InvalidParameter(format!(
                        "initial belief {b} exceeds capacity {}",
                        params.battery_capacity
                    )));
                }
            }
            if self.initial_aoi < 1 || self.initial_aoi > params.aoi_max {
                return Err(Error::InvalidParameter(format!(
                    "initial AoI {} outside 1..={}",
                    self.initial_aoi, params.aoi_max
                )));
            }
        }
        Ok(())
    }

    /// Initial battery belief in partial mode: configured or full.
    pub fn belief_start(&self, sensor: usize) -> u32 {
        self.initial_belief
            .unwrap_or(self.sensors[sensor].battery_capacity)
    }
}

/// Stochastic sources a sensor consumes, in per-slot draw order.
#[derive(Debug, Clone, Copy)]
enum Source {
    Channel = 0,
    Harvest = 1,
    Request = 2,
}

/// Stream id layout: the episode occupies the high bits; the low 16 bits
/// address one stream per (sensor, source) plus reserved ids for
/// policy-owned randomness. Keeps every stream of a run on one ChaCha key.
fn stream_id(episode: u32, low: u16) -> u64 {
    (u64::from(episode) << 16) | u64::from(low)
}

fn source_stream(sensor: usize, source: Source) -> u16 {
    let id = sensor * 3 + source as usize;
    assert!(id < 0x8000, "sensor count exceeds the stream id space");
    id as u16
}

/// A seeded stream for policy-owned randomness, disjoint from the
/// environment's streams of the same seed and episode.
pub fn policy_stream(seed: u64, episode: u32, sensor: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream_id(episode, 0x8000 | (sensor as u16 & 0x7fff)));
    rng
}

enum EnvRng {
    PerSource(Vec<ChaCha8Rng>),
    Single(ChaCha8Rng),
}

impl EnvRng {
    fn new(seed: u64, episode: u32, sensors: usize, mode: RngMode) -> Self {
        match mode {
            RngMode::PerSource => {
                let sources = [Source::Channel, Source::Harvest, Source::Request];
                let streams = (0..sensors)
                    .flat_map(|sensor| sources.into_iter().map(move |source| (sensor, source)))
                    .map(|(sensor, source)| {
                        let mut rng = ChaCha8Rng::seed_from_u64(seed);
                        rng.set_stream(stream_id(episode, source_stream(sensor, source)));
                        rng
                    })
                    .collect();
                EnvRng::PerSource(streams)
            }
            RngMode::Single => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(stream_id(episode, 0x7fff));
                EnvRng::Single(rng)
            }
        }
    }

    fn draw(&mut self, sensor: usize, source: Source) -> f64 {
        match self {
            EnvRng::PerSource(streams) => streams[source_stream(sensor, source) as usize].random(),
            EnvRng::Single(rng) => rng.random(),
        }
    }
}

/// One sensor's record of one simulated slot.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorSlotRecord<R> {
    pub request: bool,
    pub action: CommandAction,
    pub sensor_tx: bool,
    pub channel_success: bool,
    pub harvest: bool,
    pub battery_before: u32,
    pub aoi_after: u32,
    pub cost: R,
}

/// Record of one simulated slot across all sensors.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlotTrace<R> {
    pub slot: u64,
    pub sensors: Vec<SensorSlotRecord<R>>,
}

impl<R> SlotTrace<R> {
    pub fn empty(sensors: usize) -> Self {
        Self {
            slot: 0,
            sensors: Vec::with_capacity(sensors),
        }
    }
}

/// The simulated fleet: true sensor states advanced slot by slot.
pub struct Environment<R: Real> {
    sensors: Vec<SensorParams<R>>,
    states: Vec<SensorState>,
    rng: EnvRng,
    slot: u64,
}

impl<R: Real> Environment<R> {
    pub fn new(config: &EnvConfig<R>, episode: u32) -> Result<Self> {
        config.validate()?;
        let mut rng = EnvRng::new(config.seed, episode, config.sensors.len(), config.rng_mode);
        let states = config
            .sensors
            .iter()
            .enumerate()
            .map(|(k, params)| {
                let request = config
                    .initial_request
                    .unwrap_or_else(|| R::of(rng.draw(k, Source::Request)) < params.request_prob);
                SensorState::new(
                    config.initial_battery.unwrap_or(params.battery_capacity),
                    config.initial_aoi,
                    request,
                )
            })
            .collect();
        Ok(Self {
            sensors: config.sensors.clone(),
            states,
            rng,
            slot: 0,
        })
    }

    pub fn params(&self) -> &[SensorParams<R>] {
        &self.sensors
    }

    /// True sensor states at the start of the current slot.
    pub fn states(&self) -> &[SensorState] {
        &self.states
    }

    pub fn slot(&self) -> u64 {
        self.slot
    }

    /// Advances one slot, writing each sensor's record into `trace`.
    ///
    /// Within-slot order per sensor: the command is applied, the
    /// transmission resolved against the battery, the channel drawn, the
    /// harvest drawn, battery and AoI advanced, the cost charged on the
    /// post-slot AoI, and the next slot's request drawn.
    pub fn step_into(&mut self, actions: &[CommandAction], trace: &mut SlotTrace<R>) -> Result<()> {
        if actions.len() != self.sensors.len() {
            return Err(Error::ContractViolation(format!(
                "{} actions for {} sensors",
                actions.len(),
                self.sensors.len()
            )));
        }
        trace.slot = self.slot;
        trace.sensors.clear();
        for (k, (params, action)) in self.sensors.iter().zip(actions).enumerate() {
            let state = self.states[k];
            if action.is_command() && !state.request {
                return Err(Error::ContractViolation(format!(
                    "command issued to sensor {k} without a request at slot {}",
                    self.slot
                )));
            }
            let d = mdp::sensor_tx(*action, state.battery);
            let h = match &self.rng {
                EnvRng::PerSource(_) => {
                    let u = self.rng.draw(k, Source::Channel);
                    d && R::of(u) < params.tx_success_prob
                }
                EnvRng::Single(_) => {
                    d && R::of(self.rng.draw(k, Source::Channel)) < params.tx_success_prob
                }
            };
            let e = R::of(self.rng.draw(k, Source::Harvest)) < params.harvest_prob;
            let battery = mdp::battery_step(state.battery, e, d, params.battery_capacity)?;
            let aoi = mdp::aoi_step(state.aoi, h, params.aoi_max);
            let cost = mdp::immediate_cost(state.request, params.cost_weight, aoi);
            let request = R::of(self.rng.draw(k, Source::Request)) < params.request_prob;
            debug_assert_eq!(d, action.is_command() && state.battery >= 1);
            debug_assert!(!h || d);
            debug_assert!(battery <= params.battery_capacity);
            debug_assert!(aoi >= 1 && aoi <= params.aoi_max);
            trace.sensors.push(SensorSlotRecord {
                request: state.request,
                action: *action,
                sensor_tx: d,
                channel_success: h,
                harvest: e,
                battery_before: state.battery,
                aoi_after: aoi,
                cost,
            });
            self.states[k] = SensorState::new(battery, aoi, request);
        }
        self.slot += 1;
        Ok(())
    }

    /// Convenience wrapper over [`Environment::step_into`].
    pub fn step(&mut self, actions: &[CommandAction]) -> Result<SlotTrace<R>> {
        let mut trace = SlotTrace::empty(self.sensors.len());
        self.step_into(actions, &mut trace)?;
        Ok(trace)
    }
}

/// A per-slot decision rule over the edge node's observations.
pub trait Policy<R: Real> {
    /// Writes one action per sensor; `observations` carries the battery as
    /// the edge knows it, plus the exact AoI and request flag.
    fn decide(&mut self, observations: &[EdgeObservation], actions: &mut [CommandAction]);
}

impl<R: Real, P: Policy<R> + ?Sized> Policy<R> for Box<P> {
    fn decide(&mut self, observations: &[EdgeObservation], actions: &mut [CommandAction]) {
        (**self).decide(observations, actions);
    }
}

/// Commands every requested sensor.
#[derive(Debug, Clone, Copy, Default)]
pub struct GreedyPolicy;

impl<R: Real> Policy<R> for GreedyPolicy {
    fn decide(&mut self, observations: &[EdgeObservation], actions: &mut [CommandAction]) {
        for (obs, action) in observations.iter().zip(actions) {
            *action = if obs.request {
                CommandAction::Command
            } else {
                CommandAction::Cache
            };
        }
    }
}

/// Commands a requested sensor only when its observed battery reaches the
/// threshold. A threshold of 1 acts exactly like [`GreedyPolicy`].
#[derive(Debug, Clone, Copy)]
pub struct GreedyThresholdPolicy {
    pub threshold: u32,
}

impl<R: Real> Policy<R> for GreedyThresholdPolicy {
    fn decide(&mut self, observations: &[EdgeObservation], actions: &mut [CommandAction]) {
        for (obs, action) in observations.iter().zip(actions) {
            *action = if obs.request && obs.battery >= self.threshold {
                CommandAction::Command
            } else {
                CommandAction::Cache
            };
        }
    }
}

/// Flips a fair coin on every requested sensor.
pub struct RandomPolicy {
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(seed: u64, episode: u32) -> Self {
        Self {
            rng: policy_stream(seed, episode, 0x7fff),
        }
    }
}

impl<R: Real> Policy<R> for RandomPolicy {
    fn decide(&mut self, observations: &[EdgeObservation], actions: &mut [CommandAction]) {
        for (obs, action) in observations.iter().zip(actions) {
            *action = if obs.request && self.rng.random::<f64>() < 0.5 {
                CommandAction::Command
            } else {
                CommandAction::Cache
            };
        }
    }
}

/// Looks each sensor's observation up in a solved per-sensor policy table.
/// Under partial observation the lookup key is the edge's battery belief.
#[derive(Debug, Clone)]
pub struct TabularPolicy<R> {
    pub tables: Vec<PolicyTable<R>>,
}

impl<R: Real> TabularPolicy<R> {
    pub fn new(tables: Vec<PolicyTable<R>>) -> Self {
        Self { tables }
    }
}

impl<R: Real> Policy<R> for TabularPolicy<R> {
    fn decide(&mut self, observations: &[EdgeObservation], actions: &mut [CommandAction]) {
        for (k, (obs, action)) in observations.iter().zip(actions.iter_mut()).enumerate() {
            let table = &self.tables[k];
            let state = SensorState::new(obs.battery, obs.aoi, obs.request);
            *action = table.actions[table.space.index(state)];
        }
    }
}

/// Running-average cost curve sampled at checkpoint slots, averaged over
/// episodes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LearningCurve<R> {
    pub slots: Vec<u64>,
    /// One row per checkpoint: running average cost per sensor.
    pub per_sensor: Vec<Vec<R>>,
    /// Running average of the total cost per checkpoint.
    pub total: Vec<R>,
}

/// Cost summary of a simulation run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport<R> {
    pub episodes: u32,
    pub horizon: u64,
    /// Mean over episodes of each sensor's average cost per slot.
    pub per_sensor_mean: Vec<R>,
    pub per_sensor_stderr: Vec<R>,
    /// Mean over episodes of the total average cost per slot.
    pub total_mean: R,
    pub total_stderr: R,
    #[serde(skip_serializing_if = "Option::is_none", default = "Option::default")]
    pub curve: Option<LearningCurve<R>>,
}

/// Evenly spaced checkpoint slots ending at the horizon.
pub fn checkpoint_slots(horizon: u64, points: u32) -> Vec<u64> {
    if points == 0 || horizon == 0 {
        return Vec::new();
    }
    let points = u64::from(points).min(horizon);
    let mut slots: Vec<u64> = (1..=points).map(|i| i * horizon / points).collect();
    slots.dedup();
    slots
}

pub(crate) struct CostAccumulator<R> {
    sums: Vec<R>,
    checkpoints: Vec<u64>,
    next_checkpoint: usize,
    per_sensor_curve: Vec<Vec<R>>,
    total_curve: Vec<R>,
}

impl<R: Real> CostAccumulator<R> {
    pub(crate) fn new(sensors: usize, horizon: u64, curve_points: u32) -> Self {
        Self {
            sums: vec![R::zero(); sensors],
            checkpoints: checkpoint_slots(horizon, curve_points),
            next_checkpoint: 0,
            per_sensor_curve: Vec::new(),
            total_curve: Vec::new(),
        }
    }

    /// Records one finished slot; `slots_done` counts it.
    pub(crate) fn record(&mut self, trace: &SlotTrace<R>, slots_done: u64) {
        for (sum, rec) in self.sums.iter_mut().zip(&trace.sensors) {
            *sum = *sum + rec.cost;
        }
        if self.next_checkpoint < self.checkpoints.len()
            && slots_done == self.checkpoints[self.next_checkpoint]
        {
            let scale = R::of(slots_done as f64);
            let row: Vec<R> = self.sums.iter().map(|&s| s / scale).collect();
            self.total_curve.push(row.iter().copied().sum());
            self.per_sensor_curve.push(row);
            self.next_checkpoint += 1;
        }
    }

    pub(crate) fn finish(self, horizon: u64) -> EpisodeOutcome<R> {
        let scale = R::of(horizon as f64);
        let per_sensor: Vec<R> = self.sums.iter().map(|&s| s / scale).collect();
        let total = per_sensor.iter().copied().sum();
        EpisodeOutcome {
            per_sensor,
            total,
            checkpoints: self.checkpoints,
            per_sensor_curve: self.per_sensor_curve,
            total_curve: self.total_curve,
        }
    }
}

/// One episode's averages and (optional) running curve.
pub struct EpisodeOutcome<R> {
    pub per_sensor: Vec<R>,
    pub total: R,
    pub checkpoints: Vec<u64>,
    pub per_sensor_curve: Vec<Vec<R>>,
    pub total_curve: Vec<R>,
}

/// Mean and standard error over episodes, merged in episode order.
pub(crate) fn merge_episodes<R: Real>(
    outcomes: Vec<EpisodeOutcome<R>>,
    horizon: u64,
) -> CostReport<R> {
    let episodes = outcomes.len();
    let sensors = outcomes[0].per_sensor.len();
    let n = R::of(episodes as f64);
    let mut per_sensor_mean = vec![R::zero(); sensors];
    let mut total_mean = R::zero();
    for outcome in &outcomes {
        for (mean, &x) in per_sensor_mean.iter_mut().zip(&outcome.per_sensor) {
            *mean = *mean + x;
        }
        total_mean = total_mean + outcome.total;
    }
    for mean in &mut per_sensor_mean {
        *mean = *mean / n;
    }
    total_mean = total_mean / n;
    let stderr = |get: &dyn Fn(&EpisodeOutcome<R>) -> R, mean: R| -> R {
        if episodes < 2 {
            return R::zero();
        }
        let mut ss = R::zero();
        for outcome in &outcomes {
            let d = get(outcome) - mean;
            ss = ss + d * d;
        }
        (ss / R::of((episodes - 1) as f64)).sqrt() / n.sqrt()
    };
    let per_sensor_stderr = (0..sensors)
        .map(|k| stderr(&|o: &EpisodeOutcome<R>| o.per_sensor[k], per_sensor_mean[k]))
        .collect();
    let total_stderr = stderr(&|o: &EpisodeOutcome<R>| o.total, total_mean);
    let curve = if outcomes[0].checkpoints.is_empty() {
        None
    } else {
        let slots = outcomes[0].checkpoints.clone();
        let points = slots.len();
        let mut per_sensor = vec![vec![R::zero(); sensors]; points];
        let mut total = vec![R::zero(); points];
        for outcome in &outcomes {
            for (i, row) in outcome.per_sensor_curve.iter().enumerate() {
                for (acc, &x) in per_sensor[i].iter_mut().zip(row) {
                    *acc = *acc + x;
                }
                total[i] = total[i] + outcome.total_curve[i];
            }
        }
        for row in &mut per_sensor {
            for x in row {
                *x = *x / n;
            }
        }
        for x in &mut total {
            *x = *x / n;
        }
        Some(LearningCurve {
            slots,
            per_sensor,
            total,
        })
    };
    CostReport {
        episodes: episodes as u32,
        horizon,
        per_sensor_mean,
        per_sensor_stderr,
        total_mean,
        total_stderr,
        curve,
    }
}

fn run_episode<R: Real, P: Policy<R>>(
    config: &EnvConfig<R>,
    episode: u32,
    mut policy: P,
) -> Result<EpisodeOutcome<R>> {
    let mut env = Environment::new(config, episode)?;
    let sensors = config.sensors.len();
    let mut observations: Vec<EdgeObservation> = (0..sensors)
        .map(|k| {
            EdgeObservation::initial(config.observation, env.states()[k], config.belief_start(k))
        })
        .collect();
    let mut actions = vec![CommandAction::Cache; sensors];
    let mut trace = SlotTrace::empty(sensors);
    let mut acc = CostAccumulator::new(sensors, config.horizon, config.curve_points);
    for t in 0..config.horizon {
        policy.decide(&observations, &mut actions);
        env.step_into(&actions, &mut trace)?;
        for (k, obs) in observations.iter_mut().enumerate() {
            *obs = observe(
                config.observation,
                env.states()[k],
                Some(&trace.sensors[k]),
                obs,
            );
        }
        acc.record(&trace, t + 1);
    }
    Ok(acc.finish(config.horizon))
}

/// Runs `episodes` seeded episodes of the policy produced per episode by
/// `factory` and reports cost statistics. Episodes run independently and
/// merge in episode order, so the report does not depend on worker count.
pub fn run_policy<R, P, F>(config: &EnvConfig<R>, factory: F) -> Result<CostReport<R>>
where
    R: Real,
    P: Policy<R> + Send,
    F: Fn(u32) -> P + Sync,
{
    config.validate()?;
    let outcomes: Result<Vec<EpisodeOutcome<R>>> = if config.episodes > 1 {
        (0..config.episodes)
            .into_par_iter()
            .map(|episode| run_episode(config, episode, factory(episode)))
            .collect()
    } else {
        (0..config.episodes)
            .map(|episode| run_episode(config, episode, factory(episode)))
            .collect()
    };
    Ok(merge_episodes(outcomes?, config.horizon))
}
