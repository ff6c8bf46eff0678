//! Structural checks on solved policies and values: threshold shape of the
//! command region, monotonicity of the value function in AoI and battery,
//! monotonicity of the action-value gap, and nesting of command regions
//! across parameter sweeps. Each check reports a witness on failure.

use crate::mdp::{CommandAction, SensorState};
use crate::scalar::Real;
use crate::solver::{PolicyTable, QTableExact, ValueTable};

/// Outcome of the command-region threshold check on the request slice.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdReport {
    /// Commanding at some AoI implies commanding at every larger AoI (same
    /// battery).
    pub aoi_monotone: bool,
    /// Commanding at some battery implies commanding at every larger
    /// battery (same AoI).
    pub battery_monotone: bool,
    pub aoi_witness: Option<(SensorState, SensorState)>,
    pub battery_witness: Option<(SensorState, SensorState)>,
}

impl ThresholdReport {
    pub fn holds(&self) -> bool {
        self.aoi_monotone && self.battery_monotone
    }
}

fn request_state(battery: u32, aoi: u32) -> SensorState {
    SensorState::new(battery, aoi, true)
}

fn commands<R: Real>(policy: &PolicyTable<R>, battery: u32, aoi: u32) -> bool {
    policy.actions[policy.space.index(request_state(battery, aoi))] == CommandAction::Command
}

/// Checks the command region of the request slice is threshold-shaped in
/// both AoI and battery.
pub fn check_threshold_structure<R: Real>(policy: &PolicyTable<R>) -> ThresholdReport {
    let space = policy.space;
    let mut report = ThresholdReport {
        aoi_monotone: true,
        battery_monotone: true,
        aoi_witness: None,
        battery_witness: None,
    };
    for b in 0..=space.battery_capacity {
        for aoi in 1..space.aoi_max {
            if report.aoi_monotone && commands(policy, b, aoi) && !commands(policy, b, aoi + 1) {
                report.aoi_monotone = false;
                report.aoi_witness = Some((request_state(b, aoi), request_state(b, aoi + 1)));
            }
        }
    }
    for aoi in 1..=space.aoi_max {
        for b in 0..space.battery_capacity {
            if report.battery_monotone && commands(policy, b, aoi) && !commands(policy, b + 1, aoi)
            {
                report.battery_monotone = false;
                report.battery_witness = Some((request_state(b, aoi), request_state(b + 1, aoi)));
            }
        }
    }
    report
}

/// Outcome of the value-monotonicity check.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueMonotonicityReport<R> {
    /// Values are non-decreasing in AoI on every (battery, request) slice.
    pub aoi_monotone: bool,
    /// Values are non-increasing in battery on every (AoI, request) slice.
    pub battery_monotone: bool,
    pub aoi_witness: Option<(SensorState, SensorState, R, R)>,
    pub battery_witness: Option<(SensorState, SensorState, R, R)>,
}

impl<R> ValueMonotonicityReport<R> {
    pub fn holds(&self) -> bool {
        self.aoi_monotone && self.battery_monotone
    }
}

/// Checks the value function is non-decreasing in AoI and non-increasing in
/// battery, per request slice, within `tol`.
pub fn check_value_monotonicity<R: Real>(
    values: &ValueTable<R>,
    tol: R,
) -> ValueMonotonicityReport<R> {
    let space = values.space;
    let mut report = ValueMonotonicityReport {
        aoi_monotone: true,
        battery_monotone: true,
        aoi_witness: None,
        battery_witness: None,
    };
    let value = |state: SensorState| values.v[space.index(state)];
    for request in [false, true] {
        for b in 0..=space.battery_capacity {
            for aoi in 1..space.aoi_max {
                let here = SensorState::new(b, aoi, request);
                let older = SensorState::new(b, aoi + 1, request);
                if report.aoi_monotone && value(here) > value(older) + tol {
                    report.aoi_monotone = false;
                    report.aoi_witness = Some((here, older, value(here), value(older)));
                }
            }
        }
        for aoi in 1..=space.aoi_max {
            for b in 0..space.battery_capacity {
                let here = SensorState::new(b, aoi, request);
                let fuller = SensorState::new(b + 1, aoi, request);
                if report.battery_monotone && value(here) < value(fuller) - tol {
                    report.battery_monotone = false;
                    report.battery_witness = Some((here, fuller, value(here), value(fuller)));
                }
            }
        }
    }
    report
}

/// Outcome of the action-value-gap monotonicity check.
#[derive(Debug, Clone, PartialEq)]
pub struct DeltaQReport<R> {
    /// The gap `q(s, command) - q(s, cache)` is non-increasing in AoI on
    /// every battery row of the request slice.
    pub monotone: bool,
    pub witness: Option<(SensorState, SensorState, R, R)>,
}

/// Checks the command-vs-cache action-value gap is non-increasing in AoI on
/// the request slice, within `tol`.
pub fn check_delta_q_monotone<R: Real>(q: &QTableExact<R>, tol: R) -> DeltaQReport<R> {
    let space = q.space;
    let mut report = DeltaQReport {
        monotone: true,
        witness: None,
    };
    let gap = |battery: u32, aoi: u32| {
        q.delta_q(space.index(SensorState::new(battery, aoi, true)))
            .expect("request slice")
    };
    for b in 0..=space.battery_capacity {
        for aoi in 1..space.aoi_max {
            if report.monotone && gap(b, aoi) < gap(b, aoi + 1) - tol {
                report.monotone = false;
                report.witness = Some((
                    request_state(b, aoi),
                    request_state(b, aoi + 1),
                    gap(b, aoi),
                    gap(b, aoi + 1),
                ));
            }
        }
    }
    report
}

/// Checks `inner`'s command region is contained in `outer`'s; returns the
/// first `(battery, aoi)` commanded by `inner` but not by `outer`.
pub fn region_subset<R: Real>(
    inner: &PolicyTable<R>,
    outer: &PolicyTable<R>,
) -> Result<(), (u32, u32)> {
    assert_eq!(
        inner.space, outer.space,
        "policies live on different spaces"
    );
    for &(battery, aoi) in &inner.command_region() {
        if !commands(outer, battery, aoi) {
            return Err((battery, aoi));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::TransitionKernel;
    use crate::mdp::{SensorParams, StateSpace};
    use crate::solver::{value_iteration, PolicyMeta};

    fn policy_from_fn(space: StateSpace, f: impl Fn(u32, u32) -> bool) -> PolicyTable<f64> {
        let params =
            SensorParams::new(space.battery_capacity, 0.5, 0.5, 0.5, space.aoi_max, 1.0).unwrap();
        let actions = (0..space.len())
            .map(|idx| {
                let s = space.state(idx);
                if s.request && f(s.battery, s.aoi) {
                    CommandAction::Command
                } else {
                    CommandAction::Cache
                }
            })
            .collect();
        PolicyTable {
            space,
            actions,
            meta: PolicyMeta {
                params,
                gamma: 0.9,
                solver: "test".into(),
                iterations: 0,
            },
        }
    }

    #[test]
    fn all_cache_policy_is_vacuously_threshold() {
        let policy = policy_from_fn(StateSpace::new(3, 8), |_, _| false);
        let report = check_threshold_structure(&policy);
        assert!(report.holds());
        assert!(report.aoi_witness.is_none());
    }

    #[test]
    fn aoi_violation_is_witnessed() {
        let policy = policy_from_fn(StateSpace::new(3, 8), |b, aoi| b == 2 && aoi == 5);
        let report = check_threshold_structure(&policy);
        assert!(!report.aoi_monotone);
        let (lo, hi) = report.aoi_witness.unwrap();
        assert_eq!((lo.battery, lo.aoi), (2, 5));
        assert_eq!((hi.battery, hi.aoi), (2, 6));
    }

    #[test]
    fn solved_policy_with_sure_channel_is_threshold_shaped() {
        let params = SensorParams::new(4, 0.04, 1.0, 0.5, 16, 1.0).unwrap();
        let kernel = TransitionKernel::build(&params).unwrap();
        let solution = value_iteration(&kernel, 0.99, 0.001).unwrap();
        assert!(check_threshold_structure(&solution.policy).holds());
    }

    #[test]
    fn constant_and_aoi_linear_values_pass_monotonicity() {
        let space = StateSpace::new(3, 8);
        let constant = ValueTable {
            space,
            v: vec![1.0; space.len()],
            gamma: 0.9,
            theta: 0.001,
        };
        assert!(check_value_monotonicity(&constant, 1e-9).holds());
        let linear = ValueTable {
            space,
            v: (0..space.len())
                .map(|i| f64::from(space.aoi_of(i)))
                .collect(),
            gamma: 0.9,
            theta: 0.001,
        };
        let report = check_value_monotonicity(&linear, 1e-9);
        assert!(report.aoi_monotone);
        assert!(report.battery_monotone);
    }

    #[test]
    fn battery_increasing_values_are_flagged() {
        let space = StateSpace::new(3, 8);
        let values = ValueTable {
            space,
            v: (0..space.len())
                .map(|i| f64::from(space.state(i).battery))
                .collect(),
            gamma: 0.9,
            theta: 0.001,
        };
        let report = check_value_monotonicity(&values, 1e-9);
        assert!(!report.battery_monotone);
        assert!(report.battery_witness.is_some());
    }

    #[test]
    fn converged_values_are_monotone() {
        let params = SensorParams::new(4, 0.3, 0.8, 0.5, 16, 1.0).unwrap();
        let kernel = TransitionKernel::build(&params).unwrap();
        let solution = value_iteration(&kernel, 0.99, 0.001).unwrap();
        assert!(check_value_monotonicity(&solution.values, 1e-9).holds());
    }

    #[test]
    fn gap_monotonicity_holds_on_sure_channel_solutions() {
        let params = SensorParams::new(4, 0.3, 1.0, 0.5, 16, 1.0).unwrap();
        let kernel = TransitionKernel::build(&params).unwrap();
        let solution = value_iteration(&kernel, 0.99, 0.001).unwrap();
        let report = check_delta_q_monotone(&solution.q, 1e-9);
        assert!(report.monotone, "witness: {:?}", report.witness);
    }

    #[test]
    fn synthetic_increasing_gap_is_flagged() {
        let space = StateSpace::new(1, 4);
        let params = SensorParams::new(1, 0.5, 1.0, 0.5, 4, 1.0).unwrap();
        let flat = QTableExact::from_raw(space, params, 0.9, vec![0.0; space.len() * 2]);
        assert!(check_delta_q_monotone(&flat, 1e-9).monotone);
        // A gap that grows in AoI on the request slice must be rejected.
        let grown: Vec<f64> = (0..space.len() * 2)
            .map(|i| {
                let s = i / 2;
                if i % 2 == 1 && space.request_of(s) {
                    f64::from(space.aoi_of(s))
                } else {
                    0.0
                }
            })
            .collect();
        let q = QTableExact::from_raw(space, params, 0.9, grown);
        let report = check_delta_q_monotone(&q, 1e-9);
        assert!(!report.monotone);
        assert!(report.witness.is_some());
    }

    #[test]
    fn region_nesting_reports_the_escaping_state() {
        let space = StateSpace::new(3, 8);
        let small = policy_from_fn(space, |b, aoi| b >= 2 && aoi >= 6);
        let large = policy_from_fn(space, |b, aoi| b >= 1 && aoi >= 4);
        assert!(region_subset(&small, &large).is_ok());
        assert_eq!(region_subset(&large, &small), Err((1, 4)));
    }
}
