//! Per-sensor domain types and the slot-level dynamics of the status-update
//! system: battery evolution, age-of-information evolution, the
//! battery-gated transmission rule, and the request-weighted immediate cost.
//!
//! One slot, in order: the edge node issues a command, the sensor transmits
//! if it has energy, the channel succeeds or fails, one unit of energy may
//! arrive, battery and AoI advance, and the cost of serving this slot's
//! request is charged on the *post-slot* AoI.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

/// Per-sensor constants.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorParams<R> {
    /// Battery size in units of energy; one transmission costs one unit.
    pub battery_capacity: u32,
    /// Probability of harvesting one unit of energy in a slot.
    pub harvest_prob: R,
    /// Probability that a sent update is received by the edge node.
    pub tx_success_prob: R,
    /// Probability that the sensor's value is requested in a slot.
    pub request_prob: R,
    /// Saturation cap for the age of information, in slots.
    pub aoi_max: u32,
    /// Weight of this sensor's staleness in the cost.
    pub cost_weight: R,
}

impl<R: Real> SensorParams<R> {
    pub fn new(
        battery_capacity: u32,
        harvest_prob: R,
        tx_success_prob: R,
        request_prob: R,
        aoi_max: u32,
        cost_weight: R,
    ) -> Result<Self> {
        let params = Self {
            battery_capacity,
            harvest_prob,
            tx_success_prob,
            request_prob,
            aoi_max,
            cost_weight,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |name: &str, p: R| -> Result<()> {
            if p < R::zero() || p > R::one() || !p.is_finite() {
                return Err(Error::InvalidParameter(format!("{name} out of [0,1]: {p}")));
            }
            Ok(())
        };
        unit("harvest_prob", self.harvest_prob)?;
        unit("tx_success_prob", self.tx_success_prob)?;
        unit("request_prob", self.request_prob)?;
        if self.battery_capacity < 1 {
            return Err(Error::InvalidParameter(
                "battery_capacity must be at least 1".into(),
            ));
        }
        if self.aoi_max < 1 {
            return Err(Error::InvalidParameter("aoi_max must be at least 1".into()));
        }
        if self.cost_weight < R::zero() || !self.cost_weight.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "cost_weight must be nonnegative: {}",
                self.cost_weight
            )));
        }
        Ok(())
    }

    /// State space of the sensor's decision process.
    pub fn space(&self) -> StateSpace {
        StateSpace::new(self.battery_capacity, self.aoi_max)
    }
}

/// Per-sensor decision-process state: battery level, age of information, and
/// whether the sensor's value is requested this slot.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SensorState {
    /// Battery level in `{0, ..., battery_capacity}`.
    pub battery: u32,
    /// Age of information in `{1, ..., aoi_max}`.
    pub aoi: u32,
    /// Whether the sensor's value is requested this slot.
    pub request: bool,
}

impl SensorState {
    pub fn new(battery: u32, aoi: u32, request: bool) -> Self {
        Self {
            battery,
            aoi,
            request,
        }
    }
}

/// The edge node's per-slot decision for one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[repr(u8)]
pub enum CommandAction {
    /// Serve the request (if any) from the cache.
    Cache = 0,
    /// Command the sensor to send a fresh status update.
    Command = 1,
}

impl CommandAction {
    pub const ALL: [CommandAction; 2] = [CommandAction::Cache, CommandAction::Command];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Self {
        match index {
            0 => CommandAction::Cache,
            1 => CommandAction::Command,
            _ => panic!("action index out of range: {index}"),
        }
    }

    pub fn is_command(self) -> bool {
        matches!(self, CommandAction::Command)
    }
}

/// Realized random events of one slot for one sensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotEvents {
    /// The sensor transmitted (command issued and battery non-empty).
    pub sensor_tx: bool,
    /// The transmitted update was received by the edge node.
    pub channel_success: bool,
    /// One unit of energy arrived.
    pub harvest: bool,
}

/// Whether the sensor transmits: it must be commanded and hold at least one
/// unit of energy.
pub fn sensor_tx(action: CommandAction, battery: u32) -> bool {
    action.is_command() && battery >= 1
}

/// Battery level at the start of the next slot: harvest in, transmission
/// out, capped at capacity.
///
/// Transmitting from an empty battery is a contract error: the transmission
/// rule [`sensor_tx`] can never produce it, so seeing it means the policy
/// layer is broken.
pub fn battery_step(battery: u32, harvest: bool, transmitted: bool, capacity: u32) -> Result<u32> {
    if transmitted && battery == 0 {
        return Err(Error::ContractViolation(
            "transmission from an empty battery".into(),
        ));
    }
    let next = battery + u32::from(harvest) - u32::from(transmitted);
    Ok(next.min(capacity))
}

/// Age of information at the start of the next slot: resets to one on a
/// received update, otherwise increments and saturates at `aoi_max`.
pub fn aoi_step(aoi: u32, received: bool, aoi_max: u32) -> u32 {
    if received {
        1
    } else {
        (aoi + 1).min(aoi_max)
    }
}

/// Cost charged for one slot: the post-slot AoI, weighted, and only when the
/// value was requested.
pub fn immediate_cost<R: Real>(requested: bool, cost_weight: R, aoi_next: u32) -> R {
    if requested {
        cost_weight * R::of(f64::from(aoi_next))
    } else {
        R::zero()
    }
}

/// Dense row-major enumeration of a sensor's states.
///
/// Index order is battery-major, then AoI, then the request flag:
/// `index = (battery * aoi_max + (aoi - 1)) * 2 + request`. The ordering is
/// part of every exported artifact and must stay stable.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StateSpace {
    pub battery_capacity: u32,
    pub aoi_max: u32,
}

impl StateSpace {
    pub fn new(battery_capacity: u32, aoi_max: u32) -> Self {
        Self {
            battery_capacity,
            aoi_max,
        }
    }

    /// Number of states: `(B + 1) * aoi_max * 2`.
    pub fn len(&self) -> usize {
        (self.battery_capacity as usize + 1) * self.aoi_max as usize * 2
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn contains(&self, state: SensorState) -> bool {
        state.battery <= self.battery_capacity && state.aoi >= 1 && state.aoi <= self.aoi_max
    }

    pub fn index(&self, state: SensorState) -> usize {
        debug_assert!(self.contains(state), "state outside space: {state:?}");
        ((state.battery * self.aoi_max + (state.aoi - 1)) * 2 + u32::from(state.request)) as usize
    }

    pub fn state(&self, index: usize) -> SensorState {
        debug_assert!(index < self.len(), "state index out of range: {index}");
        let index = index as u32;
        let request = index % 2 == 1;
        let rest = index / 2;
        SensorState {
            battery: rest / self.aoi_max,
            aoi: rest % self.aoi_max + 1,
            request,
        }
    }

    /// All states in index order.
    pub fn states(&self) -> impl Iterator<Item = SensorState> + '_ {
        (0..self.len()).map(move |i| self.state(i))
    }

    /// AoI component of a flattened index, avoiding a full decode.
    pub fn aoi_of(&self, index: usize) -> u32 {
        (index as u32 / 2) % self.aoi_max + 1
    }

    /// Request flag of a flattened index.
    pub fn request_of(&self, index: usize) -> bool {
        index % 2 == 1
    }
}

/// Cost of the transition `state -> next`: the next-slot AoI, weighted,
/// charged only when `state` carried a request.
pub fn transition_cost<R: Real>(state: &SensorState, next: &SensorState, cost_weight: R) -> R {
    immediate_cost(state.request, cost_weight, next.aoi)
}
