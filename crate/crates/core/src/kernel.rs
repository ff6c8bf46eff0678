//! Exact one-step transition law of a sensor's decision process.
//!
//! For a state `(b, aoi, r)` and an action, the next battery and AoI are
//! determined by the joint outcome of the harvest and channel Bernoulli
//! draws; the next request flag is an independent Bernoulli draw. A row of
//! the kernel therefore has at most eight successors.

use smallvec::SmallVec;

use crate::error::{Error, Result};
use crate::mdp::{CommandAction, SensorParams, SensorState, StateSpace};
use crate::scalar::Real;

/// One weighted successor of a `(state, action)` pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Successor<R> {
    pub state: SensorState,
    pub prob: R,
}

/// Successors of `(state, action)` before the request split: pairs of
/// `(battery, aoi)` with probabilities summing to one. Zero-probability
/// branches are dropped.
fn physical_successors<R: Real>(
    params: &SensorParams<R>,
    state: SensorState,
    action: CommandAction,
) -> SmallVec<[(u32, u32, R); 4]> {
    let lambda = params.harvest_prob;
    let xi = params.tx_success_prob;
    let capacity = params.battery_capacity;
    let aged = (state.aoi + 1).min(params.aoi_max);
    let mut out = SmallVec::new();
    let mut push = |battery: u32, aoi: u32, prob: R| {
        if prob > R::zero() {
            out.push((battery, aoi, prob));
        }
    };
    let transmits = crate::mdp::sensor_tx(action, state.battery);
    if !transmits {
        // No transmission: only the harvest matters, and a full battery
        // absorbs the harvested unit.
        if state.battery == capacity {
            push(capacity, aged, R::one());
        } else {
            push(state.battery + 1, aged, lambda);
            push(state.battery, aged, R::one() - lambda);
        }
    } else {
        // Transmission: harvest and channel outcomes are independent. A
        // successful harvest refills the unit spent on the transmission.
        let b = state.battery;
        push(b, 1, lambda * xi);
        push(b, aged, lambda * (R::one() - xi));
        push(b - 1, 1, (R::one() - lambda) * xi);
        push(b - 1, aged, (R::one() - lambda) * (R::one() - xi));
    }
    out
}

/// Full successor distribution of `(state, action)`, including the
/// independent Bernoulli split over the next request flag.
///
/// Commanding a sensor whose value is not requested is a contract error:
/// admissible policies never do it.
pub fn transition_distribution<R: Real>(
    params: &SensorParams<R>,
    state: SensorState,
    action: CommandAction,
) -> Result<SmallVec<[Successor<R>; 8]>> {
    if action.is_command() && !state.request {
        return Err(Error::ContractViolation(
            "command issued on a state without a request".into(),
        ));
    }
    let p = params.request_prob;
    let mut out = SmallVec::new();
    for (battery, aoi, prob) in physical_successors(params, state, action) {
        let requested = prob * p;
        if requested > R::zero() {
            out.push(Successor {
                state: SensorState::new(battery, aoi, true),
                prob: requested,
            });
        }
        let idle = prob * (R::one() - p);
        if idle > R::zero() {
            out.push(Successor {
                state: SensorState::new(battery, aoi, false),
                prob: idle,
            });
        }
    }
    Ok(out)
}

/// Actions admissible in a state: commanding requires a pending request.
pub fn admissible_actions(request: bool) -> &'static [CommandAction] {
    if request {
        &CommandAction::ALL
    } else {
        &[CommandAction::Cache]
    }
}

/// Dense per-action successor table over a sensor's state space.
#[derive(Debug, Clone)]
pub struct TransitionKernel<R> {
    params: SensorParams<R>,
    space: StateSpace,
    /// Rows indexed by `state_index * 2 + action_index`.
    rows: Vec<SmallVec<[(u32, R); 8]>>,
}

impl<R: Real> TransitionKernel<R> {
    /// Tabulates the transition law over admissible `(state, action)` pairs
    /// and checks each row is a probability distribution over in-domain
    /// states. Inadmissible pairs keep an empty row.
    pub fn build(params: &SensorParams<R>) -> Result<Self> {
        params.validate()?;
        let space = params.space();
        let mut rows = Vec::with_capacity(space.len() * 2);
        for state in space.states() {
            for action in CommandAction::ALL {
                if action.is_command() && !state.request {
                    rows.push(SmallVec::new());
                    continue;
                }
                let mut row: SmallVec<[(u32, R); 8]> = SmallVec::new();
                let mut total = R::zero();
                for succ in transition_distribution(params, state, action)? {
                    if !space.contains(succ.state) {
                        return Err(Error::NonStochastic(format!(
                            "successor {:?} of {state:?}/{action:?} leaves the state space",
                            succ.state
                        )));
                    }
                    row.push((space.index(succ.state) as u32, succ.prob));
                    total = total + succ.prob;
                }
                if (total - R::one()).abs() > R::row_sum_tolerance() {
                    return Err(Error::NonStochastic(format!(
                        "row for {state:?}/{action:?} sums to {total}"
                    )));
                }
                rows.push(row);
            }
        }
        Ok(Self {
            params: *params,
            space,
            rows,
        })
    }

    pub fn params(&self) -> &SensorParams<R> {
        &self.params
    }

    pub fn space(&self) -> StateSpace {
        self.space
    }

    /// Successors of `(state_index, action)` as `(next_index, prob)` pairs.
    pub fn row(&self, state_index: usize, action: CommandAction) -> &[(u32, R)] {
        let row = &self.rows[state_index * 2 + action.index()];
        debug_assert!(
            !row.is_empty(),
            "inadmissible pair queried: state {state_index}, action {action:?}"
        );
        row
    }

    /// Actions admissible in the state at `state_index`.
    pub fn actions(&self, state_index: usize) -> &'static [CommandAction] {
        admissible_actions(self.space.request_of(state_index))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn params(lambda: f64, xi: f64, p: f64) -> SensorParams<f64> {
        SensorParams::new(15, lambda, xi, p, 127, 1.0).unwrap()
    }

    fn physical(
        params: &SensorParams<f64>,
        state: SensorState,
        action: CommandAction,
    ) -> Vec<((u32, u32), f64)> {
        let mut rows: Vec<((u32, u32), f64)> = physical_successors(params, state, action)
            .into_iter()
            .map(|(b, a, p)| ((b, a), p))
            .collect();
        rows.sort_by_key(|(k, _)| *k);
        rows
    }

    #[test]
    fn cache_with_headroom_splits_on_harvest() {
        let p = params(0.3, 0.9, 0.15);
        let rows = physical(&p, SensorState::new(4, 10, true), CommandAction::Cache);
        assert_eq!(rows, vec![((4, 11), 0.7), ((5, 11), 0.3)]);
    }

    #[test]
    fn cache_at_full_battery_is_deterministic() {
        let p = params(0.3, 0.9, 0.15);
        let rows = physical(&p, SensorState::new(15, 10, true), CommandAction::Cache);
        assert_eq!(rows, vec![((15, 11), 1.0)]);
    }

    #[test]
    fn command_on_empty_battery_degenerates_to_harvest_only() {
        let p = params(0.3, 0.9, 0.15);
        let rows = physical(&p, SensorState::new(0, 10, true), CommandAction::Command);
        assert_eq!(rows, vec![((0, 11), 0.7), ((1, 11), 0.3)]);
    }

    #[test]
    fn command_with_energy_splits_four_ways() {
        let p = params(0.3, 0.9, 0.15);
        let rows = physical(&p, SensorState::new(4, 10, true), CommandAction::Command);
        let expected = vec![
            ((3, 1), 0.7 * 0.9),
            ((3, 11), 0.7 * 0.1),
            ((4, 1), 0.3 * 0.9),
            ((4, 11), 0.3 * 0.1),
        ];
        assert_eq!(rows.len(), expected.len());
        for ((key, prob), (ekey, eprob)) in rows.iter().zip(&expected) {
            assert_eq!(key, ekey);
            assert_abs_diff_eq!(prob, eprob, epsilon = 1e-15);
        }
    }

    #[test]
    fn aoi_saturates_in_successors() {
        let p = params(0.3, 0.9, 0.15);
        let rows = physical(&p, SensorState::new(15, 127, false), CommandAction::Cache);
        assert_eq!(rows, vec![((15, 127), 1.0)]);
    }

    #[test]
    fn degenerate_probabilities_drop_branches() {
        let p = params(1.0, 1.0, 1.0);
        let dist =
            transition_distribution(&p, SensorState::new(4, 10, true), CommandAction::Command)
                .unwrap();
        assert_eq!(dist.len(), 1);
        assert_eq!(dist[0].state, SensorState::new(4, 1, true));
        assert_eq!(dist[0].prob, 1.0);
    }

    #[test]
    fn command_without_request_is_a_contract_error() {
        let p = params(0.3, 0.9, 0.15);
        let err =
            transition_distribution(&p, SensorState::new(4, 10, false), CommandAction::Command);
        assert!(matches!(
            err,
            Err(crate::error::Error::ContractViolation(_))
        ));
    }

    #[test]
    fn request_split_multiplies_probabilities() {
        let p = params(0.3, 0.9, 0.15);
        let dist =
            transition_distribution(&p, SensorState::new(4, 10, false), CommandAction::Cache)
                .unwrap();
        let mut by_state: Vec<(SensorState, f64)> =
            dist.iter().map(|s| (s.state, s.prob)).collect();
        by_state.sort_by_key(|(s, _)| (s.battery, s.aoi, s.request));
        assert_eq!(by_state.len(), 4);
        assert_abs_diff_eq!(by_state[0].1, 0.7 * 0.85, epsilon = 1e-15);
        assert_abs_diff_eq!(by_state[1].1, 0.7 * 0.15, epsilon = 1e-15);
        assert_abs_diff_eq!(by_state[2].1, 0.3 * 0.85, epsilon = 1e-15);
        assert_abs_diff_eq!(by_state[3].1, 0.3 * 0.15, epsilon = 1e-15);
    }

    #[test]
    fn command_distributions_match_hand_computation() {
        let sorted = |params: &SensorParams<f64>, s: SensorState, a: CommandAction| {
            let mut d: Vec<((u32, u32, bool), f64)> = transition_distribution(params, s, a)
                .unwrap()
                .into_iter()
                .map(|x| ((x.state.battery, x.state.aoi, x.state.request), x.prob))
                .collect();
            d.sort_by(|(k, _), (l, _)| k.cmp(l));
            d
        };
        let p = SensorParams::new(15, 0.3, 0.9, 1.0, 8, 1.0).unwrap();
        let d = sorted(&p, SensorState::new(0, 3, true), CommandAction::Command);
        assert_eq!(d, vec![((0, 4, true), 0.7), ((1, 4, true), 0.3)]);

        let p = SensorParams::new(15, 0.2, 0.9, 1.0, 8, 1.0).unwrap();
        let d = sorted(&p, SensorState::new(2, 3, true), CommandAction::Command);
        assert_eq!(d.len(), 4);
        let expected = [
            ((1, 1, true), 0.72),
            ((1, 4, true), 0.08),
            ((2, 1, true), 0.18),
            ((2, 4, true), 0.02),
        ];
        for ((key, prob), (ekey, eprob)) in d.iter().zip(&expected) {
            assert_eq!(key, ekey);
            assert_abs_diff_eq!(prob, eprob, epsilon = 1e-15);
        }

        let p = SensorParams::new(15, 0.3, 0.9, 0.0, 8, 1.0).unwrap();
        let d = sorted(&p, SensorState::new(15, 2, false), CommandAction::Cache);
        assert_eq!(d, vec![((15, 3, false), 1.0)]);
    }

    #[test]
    fn kernel_rows_are_retrievable_by_index() {
        let p = params(0.3, 0.9, 0.15);
        let kernel = TransitionKernel::build(&p).unwrap();
        let space = kernel.space();
        let idx = space.index(SensorState::new(4, 10, true));
        let row = kernel.row(idx, CommandAction::Command);
        assert_eq!(row.len(), 8);
        let total: f64 = row.iter().map(|(_, p)| p).sum();
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn rows_are_stochastic_and_small(
            capacity in 1u32..5,
            aoi_max in 1u32..6,
            lambda in 0.0f64..=1.0,
            xi in 0.0f64..=1.0,
            p in 0.0f64..=1.0,
        ) {
            let params = SensorParams::new(capacity, lambda, xi, p, aoi_max, 1.0).unwrap();
            let kernel = TransitionKernel::build(&params).unwrap();
            let space = kernel.space();
            for idx in 0..space.len() {
                for &action in kernel.actions(idx) {
                    let row = kernel.row(idx, action);
                    prop_assert!(row.len() <= 8);
                    let total: f64 = row.iter().map(|(_, p)| p).sum();
                    prop_assert!((total - 1.0).abs() < 1e-12);
                    for &(next, prob) in row {
                        prop_assert!(prob > 0.0);
                        prop_assert!((next as usize) < space.len());
                    }
                }
            }
        }

        #[test]
        fn kernel_support_matches_step_functions(
            capacity in 1u32..5,
            aoi_max in 2u32..6,
            battery in 0u32..5,
            aoi in 1u32..6,
            command in any::<bool>(),
            harvest in any::<bool>(),
            success in any::<bool>(),
            request_next in any::<bool>(),
        ) {
            // Any jointly realizable draw of (harvest, channel) must land on
            // a successor the kernel assigns positive probability, when the
            // branch probabilities are themselves positive.
            let params = SensorParams::new(capacity, 0.5, 0.5, 0.5, aoi_max, 1.0).unwrap();
            let battery = battery.min(capacity);
            let aoi = aoi.min(aoi_max);
            let state = SensorState::new(battery, aoi, true);
            let action = if command { CommandAction::Command } else { CommandAction::Cache };
            let d = crate::mdp::sensor_tx(action, battery);
            let received = d && success;
            let next = SensorState::new(
                crate::mdp::battery_step(battery, harvest, d, capacity).unwrap(),
                crate::mdp::aoi_step(aoi, received, aoi_max),
                request_next,
            );
            let dist = transition_distribution(&params, state, action).unwrap();
            prop_assert!(dist.iter().any(|s| s.state == next));
        }
    }
}
