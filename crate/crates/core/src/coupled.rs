//! Transmission-limited scheduling across several sensors: the product
//! process with a per-slot command budget, its exact solution for small
//! instances, and the largest-AoI truncation and greedy rules that scale
//! past the point where the product space is tractable.

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::kernel::{transition_distribution, TransitionKernel};
use crate::mdp::{transition_cost, CommandAction, SensorParams, SensorState, StateSpace};
use crate::qlearning::EdgeObservation;
use crate::scalar::Real;
use crate::sim::Policy;
use crate::solver::{solve_model, MdpModel, PolicyTable, RawSolution};

/// Joint state count above which the product process is refused.
pub const DEFAULT_STATE_CAP: usize = 1_000_000;

/// Sensor count above which the product process is refused (the action
/// tables grow as 3^K); per-slot rules have no such limit.
pub const MAX_COUPLED_SENSORS: usize = 12;

/// Flattened product of the per-sensor state spaces, with sensor 0 as the
/// most significant digit. Sensors whose requests arrive surely are kept on
/// their requesting slice, since no reachable joint state leaves it.
#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpace {
    sensors: Vec<StateSpace>,
    /// Per sensor: dense index -> full per-sensor index.
    active: Vec<Vec<u32>>,
    /// Per sensor: full per-sensor index -> dense index, if kept.
    local: Vec<Vec<Option<u32>>>,
    strides: Vec<usize>,
    len: usize,
}

impl SystemSpace {
    pub fn build<R: Real>(params: &[SensorParams<R>], cap: usize) -> Result<Self> {
        if params.is_empty() {
            return Err(Error::InvalidParameter("no sensors".into()));
        }
        if params.len() > MAX_COUPLED_SENSORS {
            return Err(Error::InstanceTooLarge(format!(
                "{} sensors exceed the coupled limit of {MAX_COUPLED_SENSORS}",
                params.len()
            )));
        }
        let mut sensors = Vec::new();
        let mut active = Vec::new();
        let mut local = Vec::new();
        for p in params {
            p.validate()?;
            let space = p.space();
            let sure = p.request_prob == R::one();
            let kept: Vec<u32> = (0..space.len())
                .filter(|&idx| !sure || space.request_of(idx))
                .map(|idx| idx as u32)
                .collect();
            let mut map = vec![None; space.len()];
            for (dense, &full) in kept.iter().enumerate() {
                map[full as usize] = Some(dense as u32);
            }
            sensors.push(space);
            active.push(kept);
            local.push(map);
        }
        let mut len = 1usize;
        for kept in &active {
            len = len
                .checked_mul(kept.len())
                .filter(|&n| n <= cap)
                .ok_or_else(|| {
                    Error::InstanceTooLarge(format!("product state space exceeds the cap of {cap}"))
                })?;
        }
        let k = params.len();
        let mut strides = vec![1usize; k];
        for i in (0..k.saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * active[i + 1].len();
        }
        Ok(Self {
            sensors,
            active,
            local,
            strides,
            len,
        })
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.len()
    }

    /// Dense per-sensor indices of a joint index, most significant first.
    pub fn decompose(&self, joint: usize, out: &mut SmallVec<[u32; 12]>) {
        debug_assert!(joint < self.len);
        out.clear();
        let mut rest = joint;
        for &stride in &self.strides {
            out.push((rest / stride) as u32);
            rest %= stride;
        }
    }

    pub fn compose(&self, locals: &[u32]) -> usize {
        debug_assert_eq!(locals.len(), self.strides.len());
        locals
            .iter()
            .zip(&self.strides)
            .map(|(&l, &s)| l as usize * s)
            .sum()
    }

    /// The component state of sensor `k` at dense index `dense`.
    pub fn state_of(&self, k: usize, dense: u32) -> SensorState {
        self.sensors[k].state(self.active[k][dense as usize] as usize)
    }

    /// Joint index of a vector of component states, if every component is
    /// on its kept slice.
    pub fn joint_of_states(&self, states: &[SensorState]) -> Option<usize> {
        debug_assert_eq!(states.len(), self.sensors.len());
        let mut joint = 0usize;
        for (k, &state) in states.iter().enumerate() {
            if !self.sensors[k].contains(state) {
                return None;
            }
            let dense = self.local[k][self.sensors[k].index(state)]?;
            joint += dense as usize * self.strides[k];
        }
        Some(joint)
    }

    fn full_index(&self, k: usize, dense: u32) -> usize {
        self.active[k][dense as usize] as usize
    }
}

/// The product process under a per-slot command budget, expressed as a
/// generic model: action index `i` of a joint state selects the `i`-th
/// admissible command mask for that state's request pattern, ordered by
/// command count and then by mask value (index 0 commands nobody).
pub struct CoupledModel<R> {
    space: SystemSpace,
    limit: u32,
    /// Admissible command masks per request mask.
    masks: Vec<Vec<u32>>,
    /// Request mask per joint state.
    rmasks: Vec<u32>,
    /// Per sensor, per dense index and action: successor dense index,
    /// probability, and this sensor's share of the transition cost.
    rows: Vec<Vec<SmallVec<[(u32, R, R); 8]>>>,
}

impl<R: Real> CoupledModel<R> {
    pub fn new(params: &[SensorParams<R>], limit: u32, cap: usize) -> Result<Self> {
        let space = SystemSpace::build(params, cap)?;
        let k = params.len();
        let kernels: Vec<TransitionKernel<R>> = params
            .iter()
            .map(TransitionKernel::build)
            .collect::<Result<_>>()?;
        let mut masks = Vec::with_capacity(1 << k);
        for rmask in 0..(1u32 << k) {
            let mut admissible: Vec<u32> = (0..(1u32 << k))
                .filter(|m| m & !rmask == 0 && m.count_ones() <= limit)
                .collect();
            admissible.sort_by_key(|m| (m.count_ones(), *m));
            masks.push(admissible);
        }
        let mut rows = Vec::with_capacity(k);
        for (sensor, kernel) in kernels.iter().enumerate() {
            let beta = params[sensor].cost_weight;
            let space_k = kernel.space();
            let mut sensor_rows = Vec::with_capacity(space.active[sensor].len() * 2);
            for &full in &space.active[sensor] {
                let requesting = space_k.request_of(full as usize);
                for action in CommandAction::ALL {
                    if action.is_command() && !requesting {
                        sensor_rows.push(SmallVec::new());
                        continue;
                    }
                    let row = kernel
                        .row(full as usize, action)
                        .iter()
                        .map(|&(next, p)| {
                            let dense = space.local[sensor][next as usize]
                                .expect("kernel left the kept slice");
                            let cost = if requesting {
                                beta * R::of(f64::from(space_k.aoi_of(next as usize)))
                            } else {
                                R::zero()
                            };
                            (dense, p, cost)
                        })
                        .collect();
                    sensor_rows.push(row);
                }
            }
            rows.push(sensor_rows);
        }
        let mut rmasks = vec![0u32; space.len()];
        let mut locals = SmallVec::new();
        for (joint, rmask) in rmasks.iter_mut().enumerate() {
            space.decompose(joint, &mut locals);
            for (sensor, &dense) in locals.iter().enumerate() {
                let full = space.full_index(sensor, dense);
                if space.sensors[sensor].request_of(full) {
                    *rmask |= 1 << sensor;
                }
            }
        }
        Ok(Self {
            space,
            limit,
            masks,
            rmasks,
            rows,
        })
    }

    pub fn space(&self) -> &SystemSpace {
        &self.space
    }

    pub fn limit(&self) -> u32 {
        self.limit
    }

    /// The command mask behind a (state, action index) pair.
    pub fn mask_of(&self, state: usize, action: usize) -> u32 {
        self.masks[self.rmasks[state] as usize][action]
    }
}

fn product_sum<R: Real>(
    rows: &[&[(u32, R, R)]],
    strides: &[usize],
    idx: usize,
    prob: R,
    cost: R,
    gamma: R,
    v: &[R],
) -> R {
    match rows.split_first() {
        None => prob * (cost + gamma * v[idx]),
        Some((head, tail)) => {
            let mut acc = R::zero();
            for &(next, p, c) in *head {
                acc = acc
                    + product_sum(
                        tail,
                        &strides[1..],
                        idx + next as usize * strides[0],
                        prob * p,
                        cost + c,
                        gamma,
                        v,
                    );
            }
            acc
        }
    }
}

impl<R: Real> MdpModel<R> for CoupledModel<R> {
    fn num_states(&self) -> usize {
        self.space.len()
    }

    fn num_actions(&self, state: usize) -> usize {
        self.masks[self.rmasks[state] as usize].len()
    }

    fn backup(&self, state: usize, action: usize, gamma: R, v: &[R]) -> R {
        let mask = self.mask_of(state, action);
        let mut locals: SmallVec<[u32; 12]> = SmallVec::new();
        self.space.decompose(state, &mut locals);
        let selected: SmallVec<[&[(u32, R, R)]; 12]> = locals
            .iter()
            .enumerate()
            .map(|(sensor, &dense)| {
                let bit = (mask >> sensor) & 1;
                let row = &self.rows[sensor][dense as usize * 2 + bit as usize];
                debug_assert!(!row.is_empty(), "inadmissible component action");
                row.as_slice()
            })
            .collect();
        product_sum(
            &selected,
            &self.space.strides,
            0,
            R::one(),
            R::zero(),
            gamma,
            v,
        )
    }
}

/// One successor of the product process.
#[derive(Debug, Clone, PartialEq)]
pub struct CoupledSuccessor<R> {
    pub states: Vec<SensorState>,
    pub prob: R,
    pub cost: R,
}

/// Product distribution of one joint transition, with the summed cost.
/// Errors when the command count exceeds `limit` or any commanded sensor
/// has no pending request.
pub fn coupled_kernel<R: Real>(
    states: &[SensorState],
    actions: &[CommandAction],
    params: &[SensorParams<R>],
    limit: u32,
) -> Result<Vec<CoupledSuccessor<R>>> {
    if states.len() != params.len() || actions.len() != params.len() {
        return Err(Error::InvalidParameter(
            "state, action, and parameter counts differ".into(),
        ));
    }
    let commands = actions.iter().filter(|a| a.is_command()).count();
    if commands as u32 > limit {
        return Err(Error::ContractViolation(format!(
            "{commands} commands exceed the per-slot budget of {limit}"
        )));
    }
    let mut joint = vec![CoupledSuccessor {
        states: Vec::new(),
        prob: R::one(),
        cost: R::zero(),
    }];
    for (k, param) in params.iter().enumerate() {
        let row = transition_distribution(param, states[k], actions[k])?;
        let mut grown = Vec::with_capacity(joint.len() * row.len());
        for partial in &joint {
            for succ in &row {
                let mut states_next = partial.states.clone();
                states_next.push(succ.state);
                grown.push(CoupledSuccessor {
                    states: states_next,
                    prob: partial.prob * succ.prob,
                    cost: partial.cost
                        + transition_cost(&states[k], &succ.state, param.cost_weight),
                });
            }
        }
        joint = grown;
    }
    Ok(joint)
}

/// Exact constrained solution over the product space.
#[derive(Debug, Clone)]
pub struct CoupledSolution<R> {
    pub space: SystemSpace,
    pub limit: u32,
    /// Joint values in flattening order.
    pub v: Vec<R>,
    /// Chosen command mask per joint state.
    pub masks: Vec<u32>,
    pub sweeps: usize,
}

impl<R: Real> CoupledSolution<R> {
    fn from_raw(model: &CoupledModel<R>, raw: RawSolution<R>) -> Self {
        let masks = raw
            .actions
            .iter()
            .enumerate()
            .map(|(s, &a)| model.mask_of(s, a as usize))
            .collect();
        Self {
            space: model.space.clone(),
            limit: model.limit,
            v: raw.v,
            masks,
            sweeps: raw.sweeps,
        }
    }

    pub fn policy(&self) -> CoupledTabularPolicy {
        CoupledTabularPolicy {
            space: self.space.clone(),
            masks: self.masks.clone(),
        }
    }
}

/// Solves the product process under a command budget of `limit` per slot
/// with the usual sweep machinery. Refuses instances whose flattened
/// product exceeds `cap` states.
pub fn coupled_via<R: Real>(
    params: &[SensorParams<R>],
    limit: u32,
    gamma: R,
    theta: R,
    cap: usize,
) -> Result<CoupledSolution<R>> {
    let model = CoupledModel::new(params, limit, cap)?;
    let raw = solve_model(&model, gamma, theta)?;
    Ok(CoupledSolution::from_raw(&model, raw))
}

/// Joint lookup policy produced by the constrained solver. Joint states
/// outside the solved slice (possible only before the first request of a
/// sure-request sensor) fall back to commanding nobody.
#[derive(Debug, Clone)]
pub struct CoupledTabularPolicy {
    space: SystemSpace,
    masks: Vec<u32>,
}

impl<R: Real> Policy<R> for CoupledTabularPolicy {
    fn decide(&mut self, observations: &[EdgeObservation], actions: &mut [CommandAction]) {
        let states: SmallVec<[SensorState; 12]> =
            observations.iter().map(|o| o.as_state()).collect();
        let mask = self
            .space
            .joint_of_states(&states)
            .map_or(0, |joint| self.masks[joint]);
        for (k, action) in actions.iter_mut().enumerate() {
            *action = if (mask >> k) & 1 == 1 {
                CommandAction::Command
            } else {
                CommandAction::Cache
            };
        }
    }
}

/// Keeps at most `limit` of the proposed commands, preferring larger AoI
/// and breaking ties toward the lower sensor index; the rest revert to
/// serving from the cache.
pub fn truncate_actions(actions: &mut [CommandAction], aois: &[u32], limit: usize) {
    debug_assert_eq!(actions.len(), aois.len());
    let mut proposed: SmallVec<[usize; 16]> = actions
        .iter()
        .enumerate()
        .filter(|(_, a)| a.is_command())
        .map(|(k, _)| k)
        .collect();
    if proposed.len() <= limit {
        return;
    }
    proposed.sort_by_key(|&k| (std::cmp::Reverse(aois[k]), k));
    for &k in &proposed[limit..] {
        actions[k] = CommandAction::Cache;
    }
}

/// Commands the requested sensors of largest AoI, up to `limit`, with the
/// same tie-break as truncation. Ignores batteries entirely.
pub fn constrained_greedy(requests: &[bool], aois: &[u32], limit: usize) -> Vec<CommandAction> {
    let mut actions: Vec<CommandAction> = requests
        .iter()
        .map(|&r| {
            if r {
                CommandAction::Command
            } else {
                CommandAction::Cache
            }
        })
        .collect();
    truncate_actions(&mut actions, aois, limit);
    actions
}

/// Unconstrained per-sensor policies post-processed by largest-AoI
/// truncation to respect the per-slot budget.
#[derive(Debug, Clone)]
pub struct TruncationPolicy<R> {
    tables: Vec<PolicyTable<R>>,
    limit: usize,
}

impl<R: Real> TruncationPolicy<R> {
    pub fn new(tables: Vec<PolicyTable<R>>, limit: usize) -> Self {
        Self { tables, limit }
    }
}

impl<R: Real> Policy<R> for TruncationPolicy<R> {
    fn decide(&mut self, observations: &[EdgeObservation], actions: &mut [CommandAction]) {
        debug_assert_eq!(observations.len(), self.tables.len());
        let mut aois: SmallVec<[u32; 16]> = SmallVec::new();
        for (k, obs) in observations.iter().enumerate() {
            let table = &self.tables[k];
            actions[k] = table.actions[table.space.index(obs.as_state())];
            aois.push(obs.aoi);
        }
        truncate_actions(actions, &aois, self.limit);
    }
}

/// Largest-AoI greedy scheduling under the per-slot budget.
#[derive(Debug, Clone)]
pub struct ConstrainedGreedyPolicy {
    pub limit: usize,
}

impl<R: Real> Policy<R> for ConstrainedGreedyPolicy {
    fn decide(&mut self, observations: &[EdgeObservation], actions: &mut [CommandAction]) {
        for (k, obs) in observations.iter().enumerate() {
            actions[k] = if obs.request {
                CommandAction::Command
            } else {
                CommandAction::Cache
            };
        }
        let aois: SmallVec<[u32; 16]> = observations.iter().map(|o| o.aoi).collect();
        truncate_actions(actions, &aois, self.limit);
    }
}
