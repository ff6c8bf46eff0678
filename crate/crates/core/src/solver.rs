//! Model-based planning: synchronous value iteration, greedy policy
//! extraction, exact policy evaluation, policy iteration, and a brute-force
//! optimal-policy oracle for tiny instances.
//!
//! Planners run against the [`MdpModel`] trait so the same machinery solves
//! a single sensor's process and the constrained multi-sensor product
//! process.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::TransitionKernel;
use crate::mdp::{CommandAction, SensorParams, StateSpace};
use crate::scalar::Real;

/// Hard cap on Bellman sweeps before giving up on convergence.
const MAX_SWEEPS: usize = 1_000_000;
/// Sup-norm tolerance of exact policy evaluation.
const EVAL_TOL: f64 = 1e-10;
/// State count above which sweeps fan out across threads.
const PARALLEL_MIN_STATES: usize = 8192;
/// Cap on the number of deterministic policies the brute-force oracle will
/// enumerate: 2^14.
const MAX_ORACLE_POLICIES: u64 = 16_384;

/// A finite MDP presented to the planners: densely indexed states, a dense
/// per-state list of admissible actions, and a Bellman backup. Action index
/// 0 must be the all-cache default, which is admissible in every state.
pub trait MdpModel<R: Real>: Sync {
    fn num_states(&self) -> usize;
    /// Number of admissible actions in `state`.
    fn num_actions(&self, state: usize) -> usize;
    /// Expected one-step cost plus discounted continuation of
    /// `(state, action)` under the value estimate `v`.
    fn backup(&self, state: usize, action: usize, gamma: R, v: &[R]) -> R;
}

/// Whether `challenger` beats `incumbent` by more than the tie band.
///
/// Exactly tied actions happen structurally (a command from an empty battery
/// has the same successor law as no command), and rounding spreads such ties
/// by a few ulps depending on summation order. The band treats those as ties
/// so the cheaper action wins; genuine action gaps sit orders of magnitude
/// above it.
pub fn improves<R: Real>(incumbent: R, challenger: R) -> bool {
    let band = R::of(1e-9).max(R::of(1e-11) * incumbent.abs());
    challenger < incumbent - band
}

/// Greedy action index for one state under the value estimate `v`, with the
/// tie band of [`improves`] favoring the lowest index.
fn greedy_action<R: Real, M: MdpModel<R> + ?Sized>(
    model: &M,
    state: usize,
    gamma: R,
    v: &[R],
) -> u32 {
    let mut best = model.backup(state, 0, gamma, v);
    let mut best_idx = 0u32;
    for action in 1..model.num_actions(state) {
        let q = model.backup(state, action, gamma, v);
        if improves(best, q) {
            best = q;
            best_idx = action as u32;
        }
    }
    best_idx
}

fn min_backup<R: Real, M: MdpModel<R> + ?Sized>(model: &M, state: usize, gamma: R, v: &[R]) -> R {
    let mut best = model.backup(state, 0, gamma, v);
    for action in 1..model.num_actions(state) {
        let q = model.backup(state, action, gamma, v);
        if q < best {
            best = q;
        }
    }
    best
}

fn check_discount<R: Real>(gamma: R) -> Result<()> {
    if gamma < R::zero() || gamma >= R::one() || !gamma.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "discount factor must lie in [0,1): {gamma}"
        )));
    }
    Ok(())
}

/// Value iteration output over a bare [`MdpModel`].
#[derive(Debug, Clone)]
pub struct RawSolution<R> {
    pub v: Vec<R>,
    /// Greedy action index per state, into the state's admissible list.
    pub actions: Vec<u32>,
    pub sweeps: usize,
    /// Sup-norm change of each sweep, in order.
    pub sweep_deltas: Vec<R>,
}

/// Synchronous value iteration from `v = 0` until a sweep moves less than
/// `theta` in sup norm, then greedy policy extraction from the final values.
pub fn solve_model<R: Real, M: MdpModel<R>>(
    model: &M,
    gamma: R,
    theta: R,
) -> Result<RawSolution<R>> {
    check_discount(gamma)?;
    if theta <= R::zero() || !theta.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "stopping threshold must be positive: {theta}"
        )));
    }
    let n = model.num_states();
    let mut v = vec![R::zero(); n];
    let mut v_next = vec![R::zero(); n];
    let mut sweep_deltas = Vec::new();
    let mut sweeps = 0;
    loop {
        sweeps += 1;
        if sweeps > MAX_SWEEPS {
            return Err(Error::NoConvergence {
                sweeps: MAX_SWEEPS,
                last_delta: sweep_deltas
                    .last()
                    .and_then(|d: &R| d.to_f64())
                    .unwrap_or(f64::NAN),
            });
        }
        let delta = if n >= PARALLEL_MIN_STATES {
            v_next
                .par_iter_mut()
                .enumerate()
                .map(|(s, slot)| {
                    let value = min_backup(model, s, gamma, &v);
                    let change = (value - v[s]).abs();
                    *slot = value;
                    change
                })
                .reduce(R::zero, |a, b| a.max(b))
        } else {
            let mut delta = R::zero();
            for (s, slot) in v_next.iter_mut().enumerate() {
                let value = min_backup(model, s, gamma, &v);
                delta = delta.max((value - v[s]).abs());
                *slot = value;
            }
            delta
        };
        std::mem::swap(&mut v, &mut v_next);
        sweep_deltas.push(delta);
        if delta < theta {
            break;
        }
    }
    let actions = if n >= PARALLEL_MIN_STATES {
        (0..n)
            .into_par_iter()
            .map(|s| greedy_action(model, s, gamma, &v))
            .collect()
    } else {
        (0..n).map(|s| greedy_action(model, s, gamma, &v)).collect()
    };
    Ok(RawSolution {
        v,
        actions,
        sweeps,
        sweep_deltas,
    })
}

/// Exact evaluation of a fixed policy by fixed-point iteration to the
/// sup-norm tolerance `EVAL_TOL`, optionally warm-started.
pub fn evaluate_model<R: Real, M: MdpModel<R>>(
    model: &M,
    actions: &[u32],
    gamma: R,
    warm_start: Option<Vec<R>>,
) -> Result<Vec<R>> {
    check_discount(gamma)?;
    let n = model.num_states();
    assert_eq!(actions.len(), n, "policy length does not match state count");
    for (s, &a) in actions.iter().enumerate() {
        if (a as usize) >= model.num_actions(s) {
            return Err(Error::ContractViolation(format!(
                "policy picks inadmissible action {a} in state {s}"
            )));
        }
    }
    let tol = R::of(EVAL_TOL);
    let mut v = warm_start.unwrap_or_else(|| vec![R::zero(); n]);
    assert_eq!(v.len(), n, "warm start length does not match state count");
    let mut v_next = vec![R::zero(); n];
    for _ in 0..MAX_SWEEPS {
        let mut delta = R::zero();
        for (s, slot) in v_next.iter_mut().enumerate() {
            let value = model.backup(s, actions[s] as usize, gamma, &v);
            delta = delta.max((value - v[s]).abs());
            *slot = value;
        }
        std::mem::swap(&mut v, &mut v_next);
        if delta < tol {
            return Ok(v);
        }
    }
    Err(Error::NoConvergence {
        sweeps: MAX_SWEEPS,
        last_delta: f64::NAN,
    })
}

/// Policy iteration from the all-cache policy: exact evaluation alternating
/// with greedy improvement until the policy is stable. Used as an
/// independent fixed-point oracle against value iteration.
pub fn policy_iteration_model<R: Real, M: MdpModel<R>>(
    model: &M,
    gamma: R,
) -> Result<RawSolution<R>> {
    let n = model.num_states();
    let mut actions = vec![0u32; n];
    let mut v = vec![R::zero(); n];
    let mut rounds = 0;
    loop {
        rounds += 1;
        if rounds > 10_000 {
            return Err(Error::NoConvergence {
                sweeps: rounds,
                last_delta: f64::NAN,
            });
        }
        v = evaluate_model(model, &actions, gamma, Some(v))?;
        let mut changed = false;
        for s in 0..n {
            let incumbent = model.backup(s, actions[s] as usize, gamma, &v);
            let mut best = incumbent;
            let mut best_idx = actions[s];
            for action in 0..model.num_actions(s) as u32 {
                if action == actions[s] {
                    continue;
                }
                let q = model.backup(s, action as usize, gamma, &v);
                if improves(best, q) {
                    best = q;
                    best_idx = action;
                }
            }
            if best_idx != actions[s] {
                actions[s] = best_idx;
                changed = true;
            }
        }
        if !changed {
            return Ok(RawSolution {
                v,
                actions,
                sweeps: rounds,
                sweep_deltas: Vec::new(),
            });
        }
    }
}

/// A single sensor's decision process as a planner model.
pub struct SensorModel<'a, R: Real> {
    kernel: &'a TransitionKernel<R>,
    /// Weighted next-slot AoI per landing state; charged when the
    /// transition leaves a state that carried a request.
    landing_cost: Vec<R>,
}

impl<'a, R: Real> SensorModel<'a, R> {
    pub fn new(kernel: &'a TransitionKernel<R>) -> Self {
        let space = kernel.space();
        let beta = kernel.params().cost_weight;
        let landing_cost = (0..space.len())
            .map(|i| beta * R::of(f64::from(space.aoi_of(i))))
            .collect();
        Self {
            kernel,
            landing_cost,
        }
    }

    pub fn kernel(&self) -> &TransitionKernel<R> {
        self.kernel
    }
}

impl<R: Real> MdpModel<R> for SensorModel<'_, R> {
    fn num_states(&self) -> usize {
        self.kernel.space().len()
    }

    fn num_actions(&self, state: usize) -> usize {
        self.kernel.actions(state).len()
    }

    fn backup(&self, state: usize, action: usize, gamma: R, v: &[R]) -> R {
        let row = self.kernel.row(state, CommandAction::from_index(action));
        let mut acc = R::zero();
        if self.kernel.space().request_of(state) {
            for &(next, prob) in row {
                acc = acc + prob * (self.landing_cost[next as usize] + gamma * v[next as usize]);
            }
        } else {
            for &(next, prob) in row {
                acc = acc + prob * gamma * v[next as usize];
            }
        }
        acc
    }
}

/// State-value table of one sensor's process.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ValueTable<R> {
    pub space: StateSpace,
    /// Values in flattening order.
    pub v: Vec<R>,
    pub gamma: R,
    /// Stopping threshold the values were computed under.
    pub theta: R,
}

impl<R: Real> ValueTable<R> {
    /// Upper bound `beta * aoi_max / (1 - gamma)` on any value.
    pub fn bound(params: &SensorParams<R>, gamma: R) -> R {
        params.cost_weight * R::of(f64::from(params.aoi_max)) / (R::one() - gamma)
    }
}

/// Exact action-value table derived from a value estimate. Inadmissible
/// pairs hold positive infinity.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QTableExact<R> {
    pub space: StateSpace,
    pub params: SensorParams<R>,
    pub gamma: R,
    /// Entries indexed by `state_index * 2 + action_index`.
    q: Vec<R>,
}

impl<R: Real> QTableExact<R> {
    /// Assembles a table from raw entries in `state * 2 + action` order.
    pub fn from_raw(space: StateSpace, params: SensorParams<R>, gamma: R, q: Vec<R>) -> Self {
        assert_eq!(q.len(), space.len() * 2, "entry count does not match space");
        Self {
            space,
            params,
            gamma,
            q,
        }
    }

    pub fn get(&self, state: usize, action: CommandAction) -> R {
        self.q[state * 2 + action.index()]
    }

    pub fn admissible(&self, state: usize, action: CommandAction) -> bool {
        !action.is_command() || self.space.request_of(state)
    }

    /// `q(s, command) - q(s, cache)` on request states, `None` elsewhere.
    pub fn delta_q(&self, state: usize) -> Option<R> {
        if self.space.request_of(state) {
            Some(self.get(state, CommandAction::Command) - self.get(state, CommandAction::Cache))
        } else {
            None
        }
    }
}

/// Provenance of a policy table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyMeta<R> {
    pub params: SensorParams<R>,
    pub gamma: R,
    pub solver: String,
    pub iterations: usize,
}

/// Deterministic per-state policy of one sensor's process.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyTable<R> {
    pub space: StateSpace,
    /// Actions in flattening order; cache on every no-request state.
    pub actions: Vec<CommandAction>,
    pub meta: PolicyMeta<R>,
}

impl<R: Real> PolicyTable<R> {
    /// The command region of the request slice: `(battery, aoi)` pairs whose
    /// request state is assigned the command action.
    pub fn command_region(&self) -> Vec<(u32, u32)> {
        let mut region = Vec::new();
        for (idx, action) in self.actions.iter().enumerate() {
            if action.is_command() && self.space.request_of(idx) {
                let state = self.space.state(idx);
                region.push((state.battery, state.aoi));
            }
        }
        region
    }
}

/// Everything value iteration produces in one pass.
#[derive(Debug, Clone)]
pub struct ViaSolution<R> {
    pub values: ValueTable<R>,
    pub q: QTableExact<R>,
    pub policy: PolicyTable<R>,
    pub sweeps: usize,
    pub sweep_deltas: Vec<R>,
}

/// Value iteration on one sensor's process: synchronous sweeps from zero
/// until the sup-norm change drops below `theta`, then greedy extraction.
pub fn value_iteration<R: Real>(
    kernel: &TransitionKernel<R>,
    gamma: R,
    theta: R,
) -> Result<ViaSolution<R>> {
    let model = SensorModel::new(kernel);
    let raw = solve_model(&model, gamma, theta)?;
    let values = ValueTable {
        space: kernel.space(),
        v: raw.v,
        gamma,
        theta,
    };
    let q = q_from_v(&values, kernel);
    let mut policy = extract_policy(&q);
    policy.meta.solver = "via".into();
    policy.meta.iterations = raw.sweeps;
    Ok(ViaSolution {
        values,
        q,
        policy,
        sweeps: raw.sweeps,
        sweep_deltas: raw.sweep_deltas,
    })
}

/// One-step lookahead turning a value table into exact action values.
pub fn q_from_v<R: Real>(values: &ValueTable<R>, kernel: &TransitionKernel<R>) -> QTableExact<R> {
    let space = kernel.space();
    assert_eq!(
        values.space, space,
        "value table space does not match kernel"
    );
    let model = SensorModel::new(kernel);
    let mut q = Vec::with_capacity(space.len() * 2);
    for s in 0..space.len() {
        q.push(model.backup(s, 0, values.gamma, &values.v));
        if space.request_of(s) {
            q.push(model.backup(s, 1, values.gamma, &values.v));
        } else {
            q.push(R::infinity());
        }
    }
    QTableExact {
        space,
        params: *kernel.params(),
        gamma: values.gamma,
        q,
    }
}

/// Greedy policy from exact action values; ties inside the band of
/// [`improves`] go to the cache action.
pub fn extract_policy<R: Real>(q: &QTableExact<R>) -> PolicyTable<R> {
    let mut actions = Vec::with_capacity(q.space.len());
    for s in 0..q.space.len() {
        let action = if q.space.request_of(s)
            && improves(
                q.get(s, CommandAction::Cache),
                q.get(s, CommandAction::Command),
            ) {
            CommandAction::Command
        } else {
            CommandAction::Cache
        };
        actions.push(action);
    }
    PolicyTable {
        space: q.space,
        actions,
        meta: PolicyMeta {
            params: q.params,
            gamma: q.gamma,
            solver: "greedy".into(),
            iterations: 0,
        },
    }
}

fn action_indices<R: Real>(
    actions: &[CommandAction],
    kernel: &TransitionKernel<R>,
) -> Result<Vec<u32>> {
    let space = kernel.space();
    assert_eq!(
        actions.len(),
        space.len(),
        "policy length does not match space"
    );
    actions
        .iter()
        .enumerate()
        .map(|(s, action)| {
            if action.is_command() && !space.request_of(s) {
                return Err(Error::ContractViolation(format!(
                    "policy commands on the no-request state {:?}",
                    space.state(s)
                )));
            }
            Ok(action.index() as u32)
        })
        .collect()
}

/// Exact value of a fixed admissible policy, to sup-norm tolerance 1e-10.
pub fn policy_evaluation<R: Real>(
    actions: &[CommandAction],
    kernel: &TransitionKernel<R>,
    gamma: R,
) -> Result<ValueTable<R>> {
    let model = SensorModel::new(kernel);
    let v = evaluate_model(&model, &action_indices(actions, kernel)?, gamma, None)?;
    Ok(ValueTable {
        space: kernel.space(),
        v,
        gamma,
        theta: R::of(EVAL_TOL),
    })
}

/// Exhaustive optimal-policy oracle: evaluates every deterministic
/// admissible policy, takes the componentwise minimum of their values, and
/// checks a single policy attains it. Guarded to at most 2^14 policies.
pub fn brute_force_optimal<R: Real>(
    kernel: &TransitionKernel<R>,
    gamma: R,
) -> Result<(PolicyTable<R>, ValueTable<R>)> {
    check_discount(gamma)?;
    let space = kernel.space();
    let request_states: Vec<usize> = (0..space.len()).filter(|&s| space.request_of(s)).collect();
    let policies: u64 = 1u64
        .checked_shl(request_states.len() as u32)
        .filter(|&n| n <= MAX_ORACLE_POLICIES)
        .ok_or_else(|| {
            Error::InstanceTooLarge(format!(
                "{} request states make 2^{} policies; the oracle enumerates at most {}",
                request_states.len(),
                request_states.len(),
                MAX_ORACLE_POLICIES
            ))
        })?;
    let model = SensorModel::new(kernel);
    let mut v_opt = vec![R::infinity(); space.len()];
    let mut actions = vec![0u32; space.len()];
    let mut warm = vec![R::zero(); space.len()];
    for mask in 0..policies {
        for (bit, &s) in request_states.iter().enumerate() {
            actions[s] = ((mask >> bit) & 1) as u32;
        }
        warm = evaluate_model(&model, &actions, gamma, Some(warm))?;
        for (opt, &val) in v_opt.iter_mut().zip(&warm) {
            if val < *opt {
                *opt = val;
            }
        }
    }
    let values = ValueTable {
        space,
        v: v_opt,
        gamma,
        theta: R::of(EVAL_TOL),
    };
    let q = q_from_v(&values, kernel);
    let mut policy = extract_policy(&q);
    policy.meta.solver = "brute-force".into();
    policy.meta.iterations = policies as usize;
    let check = policy_evaluation(&policy.actions, kernel, gamma)?;
    for (s, (&got, &opt)) in check.v.iter().zip(&values.v).enumerate() {
        let tol = R::of(1e-6) * (R::one() + opt.abs());
        if (got - opt).abs() > tol {
            return Err(Error::ContractViolation(format!(
                "no single policy attains the componentwise minimum at state {s}: {got} vs {opt}"
            )));
        }
    }
    Ok((policy, values))
}
