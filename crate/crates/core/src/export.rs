//! Artifact plumbing: JSON documents for policies, values, action-value
//! tables, and cost reports, plus the CSV grids, curves, and sweep tables
//! the experiments emit. Every artifact carries its build, seed, and
//! resolved configuration so a run can be reproduced from the file alone.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::Path;

use flate2::write::GzEncoder;
use flate2::Compression;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::coupled::{CoupledSolution, SystemSpace, DEFAULT_STATE_CAP};
use crate::error::{Error, Result};
use crate::mdp::{CommandAction, SensorParams, SensorState};
use crate::qlearning::QTableLearned;
use crate::scalar::Real;
use crate::sim::{CostReport, LearningCurve, SlotTrace};
use crate::solver::{PolicyMeta, PolicyTable, QTableExact, ValueTable};

/// Flattening order of per-sensor arrays in every artifact.
pub const INDEX_ORDER: &str = "b-major,Δ,r";
/// Flattening order of action-value arrays (the action is the fastest axis).
pub const Q_INDEX_ORDER: &str = "b-major,Δ,r,a";
/// Flattening order of joint arrays: sensor 0 most significant, each sensor
/// in [`INDEX_ORDER`], sure-request sensors restricted to their request
/// slice.
pub const COUPLED_INDEX_ORDER: &str = "sensor0-major;b-major,Δ,r;sure-request r=1 only";

/// Reproducibility stamp embedded in every artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Git-describable build of the binary that wrote the file.
    pub build: String,
    pub seed: u64,
    /// The fully resolved configuration the run executed.
    pub config: serde_json::Value,
}

impl Provenance {
    pub fn new(build: impl Into<String>, seed: u64, config: serde_json::Value) -> Self {
        Self {
            build: build.into(),
            seed,
            config,
        }
    }

    /// Single-line form used as the leading comment of CSV artifacts.
    fn comment(&self) -> String {
        format!(
            "# build={} seed={} config={}",
            self.build, self.seed, self.config
        )
    }
}

/// A solved policy and its value function in one document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PolicyArtifact<R> {
    pub provenance: Provenance,
    pub params: SensorParams<R>,
    pub gamma: R,
    /// Stopping threshold the values were computed under.
    pub theta: R,
    pub iterations: usize,
    pub solver: String,
    /// Values in flattening order.
    pub v: Vec<R>,
    /// Actions in flattening order, 0 for cache and 1 for command.
    pub policy: Vec<u8>,
    #[serde(rename = "index-order")]
    pub index_order: String,
}

impl<R: Real> PolicyArtifact<R> {
    pub fn new(values: &ValueTable<R>, policy: &PolicyTable<R>, provenance: Provenance) -> Self {
        assert_eq!(values.space, policy.space, "value and policy spaces differ");
        Self {
            provenance,
            params: policy.meta.params,
            gamma: policy.meta.gamma,
            theta: values.theta,
            iterations: policy.meta.iterations,
            solver: policy.meta.solver.clone(),
            v: values.v.clone(),
            policy: policy.actions.iter().map(|a| a.index() as u8).collect(),
            index_order: INDEX_ORDER.into(),
        }
    }

    /// Validates the document and rebuilds the two tables.
    pub fn into_tables(self) -> Result<(ValueTable<R>, PolicyTable<R>)> {
        if self.index_order != INDEX_ORDER {
            return Err(Error::MalformedArtifact(format!(
                "unknown index order {:?}",
                self.index_order
            )));
        }
        self.params.validate()?;
        let space = self.params.space();
        if self.v.len() != space.len() || self.policy.len() != space.len() {
            return Err(Error::MalformedArtifact(format!(
                "array lengths {}/{} do not match the {}-state space",
                self.v.len(),
                self.policy.len(),
                space.len()
            )));
        }
        let mut actions = Vec::with_capacity(space.len());
        for (idx, &cell) in self.policy.iter().enumerate() {
            if cell > 1 {
                return Err(Error::MalformedArtifact(format!(
                    "policy cell {cell} at index {idx} is not an action"
                )));
            }
            let action = CommandAction::from_index(cell as usize);
            if action.is_command() && !space.request_of(idx) {
                return Err(Error::MalformedArtifact(format!(
                    "command on the no-request state at index {idx}"
                )));
            }
            actions.push(action);
        }
        let values = ValueTable {
            space,
            v: self.v,
            gamma: self.gamma,
            theta: self.theta,
        };
        let policy = PolicyTable {
            space,
            actions,
            meta: PolicyMeta {
                params: self.params,
                gamma: self.gamma,
                solver: self.solver,
                iterations: self.iterations,
            },
        };
        Ok((values, policy))
    }
}

/// An action-value table, exact or learned. Cells of inadmissible pairs are
/// null; learned tables also carry per-pair visit counts.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct QTableArtifact<R> {
    pub provenance: Provenance,
    pub params: SensorParams<R>,
    pub gamma: R,
    pub q: Vec<Option<R>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub visits: Option<Vec<u64>>,
    #[serde(rename = "index-order")]
    pub index_order: String,
}

impl<R: Real> QTableArtifact<R> {
    pub fn from_exact(exact: &QTableExact<R>, provenance: Provenance) -> Self {
        let q = (0..exact.space.len() * 2)
            .map(|idx| {
                let action = CommandAction::from_index(idx % 2);
                exact
                    .admissible(idx / 2, action)
                    .then(|| exact.get(idx / 2, action))
            })
            .collect();
        Self {
            provenance,
            params: exact.params,
            gamma: exact.gamma,
            q,
            visits: None,
            index_order: Q_INDEX_ORDER.into(),
        }
    }

    pub fn from_learned(
        params: SensorParams<R>,
        gamma: R,
        table: &QTableLearned<R>,
        provenance: Provenance,
    ) -> Self {
        assert_eq!(table.space, params.space(), "table does not match params");
        let entries = table.space.len() * 2;
        Self {
            provenance,
            params,
            gamma,
            q: (0..entries)
                .map(|idx| Some(table.get(idx / 2, CommandAction::from_index(idx % 2))))
                .collect(),
            visits: Some(
                (0..entries)
                    .map(|idx| table.visits(idx / 2, CommandAction::from_index(idx % 2)))
                    .collect(),
            ),
            index_order: Q_INDEX_ORDER.into(),
        }
    }

    fn check(&self) -> Result<usize> {
        if self.index_order != Q_INDEX_ORDER {
            return Err(Error::MalformedArtifact(format!(
                "unknown index order {:?}",
                self.index_order
            )));
        }
        self.params.validate()?;
        let entries = self.params.space().len() * 2;
        if self.q.len() != entries {
            return Err(Error::MalformedArtifact(format!(
                "{} entries do not fill the {entries}-cell table",
                self.q.len()
            )));
        }
        Ok(entries)
    }

    /// Rebuilds an exact table, restoring infinity on inadmissible pairs.
    pub fn into_exact(self) -> Result<QTableExact<R>> {
        self.check()?;
        let space = self.params.space();
        let mut q = Vec::with_capacity(self.q.len());
        for (idx, cell) in self.q.iter().enumerate() {
            let admissible = idx % 2 == 0 || space.request_of(idx / 2);
            match cell {
                Some(x) if admissible => q.push(*x),
                None if !admissible => q.push(R::infinity()),
                _ => {
                    return Err(Error::MalformedArtifact(format!(
                        "cell {idx} disagrees with the admissibility pattern"
                    )))
                }
            }
        }
        Ok(QTableExact::from_raw(space, self.params, self.gamma, q))
    }

    /// Rebuilds a learned table; null cells become zero.
    pub fn into_learned(self) -> Result<QTableLearned<R>> {
        let entries = self.check()?;
        let visits = match self.visits {
            Some(v) if v.len() == entries => v,
            Some(v) => {
                return Err(Error::MalformedArtifact(format!(
                    "{} visit counts do not fill the {entries}-cell table",
                    v.len()
                )))
            }
            None => vec![0; entries],
        };
        let q = self.q.iter().map(|c| c.unwrap_or_else(R::zero)).collect();
        Ok(QTableLearned::from_raw(self.params.space(), q, visits))
    }
}

/// A solved joint schedule over the product space. Arrays are flattened with
/// sensor 0 as the most significant axis and [`INDEX_ORDER`] within each
/// sensor; sensors whose requests are sure keep only their request slice.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CoupledArtifact<R> {
    pub provenance: Provenance,
    pub params: Vec<SensorParams<R>>,
    pub gamma: R,
    pub theta: R,
    /// Per-slot command budget the schedule was solved under.
    pub limit: u32,
    pub iterations: usize,
    /// Joint values in flattening order.
    pub v: Vec<R>,
    /// Chosen command mask per joint state, bit `k` for sensor `k`.
    pub masks: Vec<u32>,
    #[serde(rename = "index-order")]
    pub index_order: String,
}

impl<R: Real> CoupledArtifact<R> {
    pub fn new(
        solution: &CoupledSolution<R>,
        params: &[SensorParams<R>],
        gamma: R,
        theta: R,
        provenance: Provenance,
    ) -> Self {
        Self {
            provenance,
            params: params.to_vec(),
            gamma,
            theta,
            limit: solution.limit,
            iterations: solution.sweeps,
            v: solution.v.clone(),
            masks: solution.masks.clone(),
            index_order: COUPLED_INDEX_ORDER.into(),
        }
    }

    /// Validates the document and rebuilds the joint solution.
    pub fn into_solution(self) -> Result<CoupledSolution<R>> {
        if self.index_order != COUPLED_INDEX_ORDER {
            return Err(Error::MalformedArtifact(format!(
                "unknown index order {:?}",
                self.index_order
            )));
        }
        let space = SystemSpace::build(&self.params, self.v.len().max(DEFAULT_STATE_CAP))?;
        if self.v.len() != space.len() || self.masks.len() != space.len() {
            return Err(Error::MalformedArtifact(format!(
                "array lengths {}/{} do not match the {}-state product",
                self.v.len(),
                self.masks.len(),
                space.len()
            )));
        }
        let sensors = space.sensor_count();
        let mut locals = SmallVec::new();
        for (joint, &mask) in self.masks.iter().enumerate() {
            if mask.count_ones() > self.limit || mask >> sensors != 0 {
                return Err(Error::MalformedArtifact(format!(
                    "mask {mask:#b} at index {joint} exceeds the budget"
                )));
            }
            space.decompose(joint, &mut locals);
            for (k, &dense) in locals.iter().enumerate() {
                if (mask >> k) & 1 == 1 && !space.state_of(k, dense).request {
                    return Err(Error::MalformedArtifact(format!(
                        "mask at index {joint} commands sensor {k} without a request"
                    )));
                }
            }
        }
        Ok(CoupledSolution {
            space,
            limit: self.limit,
            v: self.v,
            masks: self.masks,
            sweeps: self.iterations,
        })
    }
}

/// A cost report under its provenance. The report field is kept separate so
/// two runs can be compared by content regardless of how they were invoked.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReportArtifact<R> {
    pub provenance: Provenance,
    pub report: CostReport<R>,
}

/// One row of an experiment sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow<R> {
    pub m: u32,
    pub policy: String,
    pub mean_cost: R,
    pub std_error: R,
    pub episodes: u32,
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut writer = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut writer, value)?;
    writer.write_all(b"\n")?;
    writer.flush()?;
    Ok(())
}

pub fn load_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// `{:.16e}` of the value's f64 form: 17 significant digits, enough to
/// reproduce the bits on re-parse.
fn fmt_real<R: Real>(x: R) -> String {
    format!("{:.16e}", x.to_f64().expect("finite real"))
}

/// The request-slice command grid: one row per AoI from 1 to the cap, one
/// column per battery level, cells 0 or 1.
pub fn write_policy_grid<W: io::Write, R: Real>(
    mut w: W,
    policy: &PolicyTable<R>,
    provenance: &Provenance,
) -> Result<()> {
    writeln!(w, "{}", provenance.comment())?;
    let space = policy.space;
    let mut header = String::from("delta");
    for b in 0..=space.battery_capacity {
        header.push_str(&format!(",b{b}"));
    }
    writeln!(w, "{header}")?;
    for aoi in 1..=space.aoi_max {
        let mut row = aoi.to_string();
        for b in 0..=space.battery_capacity {
            let idx = space.index(SensorState::new(b, aoi, true));
            row.push_str(if policy.actions[idx].is_command() {
                ",1"
            } else {
                ",0"
            });
        }
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Checkpointed running averages: slot, one column per sensor, total.
pub fn write_learning_curve<W: io::Write, R: Real>(
    mut w: W,
    curve: &LearningCurve<R>,
    provenance: &Provenance,
) -> Result<()> {
    writeln!(w, "{}", provenance.comment())?;
    let sensors = curve.per_sensor.first().map_or(0, Vec::len);
    let mut header = String::from("slot");
    for k in 1..=sensors {
        header.push_str(&format!(",sensor{k}"));
    }
    header.push_str(",total");
    writeln!(w, "{header}")?;
    for (i, &slot) in curve.slots.iter().enumerate() {
        let mut row = slot.to_string();
        for &cost in &curve.per_sensor[i] {
            row.push(',');
            row.push_str(&fmt_real(cost));
        }
        row.push(',');
        row.push_str(&fmt_real(curve.total[i]));
        writeln!(w, "{row}")?;
    }
    Ok(())
}

/// Budget-sweep comparison table: (M, policy, mean cost, std error, episodes).
pub fn write_sweep_table<W: io::Write, R: Real>(
    mut w: W,
    rows: &[SweepRow<R>],
    provenance: &Provenance,
) -> Result<()> {
    writeln!(w, "{}", provenance.comment())?;
    writeln!(w, "m,policy,mean_cost,std_error,episodes")?;
    for row in rows {
        writeln!(
            w,
            "{},{},{},{},{}",
            row.m,
            row.policy,
            fmt_real(row.mean_cost),
            fmt_real(row.std_error),
            row.episodes
        )?;
    }
    Ok(())
}

/// Full per-slot trace, one row per (slot, sensor). Booleans are 0/1.
pub fn write_trace_csv<W: io::Write, R: Real>(
    mut w: W,
    traces: &[SlotTrace<R>],
    provenance: &Provenance,
) -> Result<()> {
    writeln!(w, "{}", provenance.comment())?;
    writeln!(
        w,
        "slot,sensor,request,action,sensor_tx,channel_success,harvest,battery_before,aoi_after,cost"
    )?;
    for trace in traces {
        for (k, rec) in trace.sensors.iter().enumerate() {
            writeln!(
                w,
                "{},{},{},{},{},{},{},{},{},{}",
                trace.slot,
                k,
                u8::from(rec.request),
                rec.action.index(),
                u8::from(rec.sensor_tx),
                u8::from(rec.channel_success),
                u8::from(rec.harvest),
                rec.battery_before,
                rec.aoi_after,
                fmt_real(rec.cost)
            )?;
        }
    }
    Ok(())
}

/// Gzip-compressed trace dump.
pub fn save_trace_gz<R: Real>(
    path: &Path,
    traces: &[SlotTrace<R>],
    provenance: &Provenance,
) -> Result<()> {
    let encoder = GzEncoder::new(BufWriter::new(File::create(path)?), Compression::default());
    let mut encoder = BufWriter::new(encoder);
    write_trace_csv(&mut encoder, traces, provenance)?;
    encoder
        .into_inner()
        .map_err(|e| Error::Io(e.into_error()))?
        .finish()?
        .flush()?;
    Ok(())
}
