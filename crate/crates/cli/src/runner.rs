//! Subcommand pipelines: solve, train, simulate, schedule under a budget,
//! sweep a parameter, export a policy. Every pipeline writes its artifacts
//! under the resolved output directory and prints a short summary line per
//! result.

use std::fmt;
use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use serde::Serialize;

use aoi_edge::coupled::{
    coupled_via, ConstrainedGreedyPolicy, TruncationPolicy, DEFAULT_STATE_CAP,
};
use aoi_edge::export::{
    save_json, save_trace_gz, write_learning_curve, write_policy_grid, write_sweep_table,
    CoupledArtifact, PolicyArtifact, Provenance, QTableArtifact, ReportArtifact, SweepRow,
};
use aoi_edge::qlearning::{observe, train, EdgeObservation};
use aoi_edge::sim::{
    run_policy, Environment, GreedyPolicy, GreedyThresholdPolicy, Policy, RandomPolicy,
    TabularPolicy,
};
use aoi_edge::solver::value_iteration;
use aoi_edge::structure::region_subset;
use aoi_edge::{CommandAction, CostReport, Error, PolicyTable, SensorParams, TransitionKernel};

use crate::config::{ConfigErrors, Resolved, SweepParam};

/// How many leading slots of episode 0 a trace dump records.
const TRACE_SLOTS: u64 = 100_000;

/// Anything that can end a run: an itemized config problem or a failure
/// from the pipelines themselves.
#[derive(Debug)]
pub enum Failure {
    Config(ConfigErrors),
    Run(Error),
}

impl Failure {
    /// Process exit status: 2 invalid config or input, 3 size guard,
    /// 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Failure::Config(_) => 2,
            Failure::Run(
                Error::InvalidParameter(_)
                | Error::ContractViolation(_)
                | Error::MalformedArtifact(_),
            ) => 2,
            Failure::Run(Error::InstanceTooLarge(_)) => 3,
            Failure::Run(Error::Io(_) | Error::Json(_)) => 4,
            Failure::Run(_) => 1,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(errors) => errors.fmt(f),
            Failure::Run(e) => write!(f, "error: {e}"),
        }
    }
}

impl From<ConfigErrors> for Failure {
    fn from(errors: ConfigErrors) -> Self {
        Failure::Config(errors)
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Run(e)
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Run(Error::Io(e))
    }
}

fn config_error(message: String) -> Failure {
    Failure::Config(ConfigErrors(vec![message]))
}

fn provenance(resolved: &Resolved) -> Provenance {
    Provenance::new(
        env!("BUILD_GIT_DESCRIBE"),
        resolved.env.seed,
        serde_json::to_value(resolved).expect("resolved config serializes"),
    )
}

fn prepare_out(resolved: &Resolved) -> Result<(), Failure> {
    fs::create_dir_all(&resolved.out)?;
    Ok(())
}

fn write_csv<F>(path: &PathBuf, write: F) -> Result<(), Failure>
where
    F: FnOnce(&mut BufWriter<File>) -> aoi_edge::Result<()>,
{
    let mut w = BufWriter::new(File::create(path)?);
    write(&mut w)?;
    w.flush()?;
    Ok(())
}

fn solve_sensor(
    resolved: &Resolved,
    k: usize,
) -> Result<aoi_edge::solver::ViaSolution<f64>, Error> {
    let kernel = TransitionKernel::build(&resolved.env.sensors[k])?;
    value_iteration(&kernel, resolved.gamma, resolved.theta)
}

fn solved_tables(resolved: &Resolved) -> Result<Vec<PolicyTable>, Error> {
    (0..resolved.sensor_count())
        .map(|k| Ok(solve_sensor(resolved, k)?.policy))
        .collect()
}

/// Solves every sensor's process and writes a policy document plus a
/// command-region grid per sensor.
pub fn solve_via(resolved: &Resolved) -> Result<(), Failure> {
    prepare_out(resolved)?;
    let prov = provenance(resolved);
    for k in 0..resolved.sensor_count() {
        let solution = solve_sensor(resolved, k)?;
        let n = k + 1;
        let policy_path = resolved.out.join(format!("policy-sensor{n}.json"));
        save_json(
            &policy_path,
            &PolicyArtifact::new(&solution.values, &solution.policy, prov.clone()),
        )?;
        let grid_path = resolved.out.join(format!("grid-sensor{n}.csv"));
        write_csv(&grid_path, |w| {
            write_policy_grid(w, &solution.policy, &prov)
        })?;
        let space = solution.policy.space;
        println!(
            "sensor {n}: {} sweeps, command region {} of {} request states -> {}",
            solution.sweeps,
            solution.policy.command_region().len(),
            (space.battery_capacity as usize + 1) * space.aoi_max as usize,
            policy_path.display()
        );
    }
    Ok(())
}

/// Trains Q-learning over the configured episodes and writes the learned
/// tables (episode 0), the running-average curve, and the cost report.
pub fn train_q(resolved: &Resolved) -> Result<(), Failure> {
    prepare_out(resolved)?;
    let prov = provenance(resolved);
    let outcome = train(&resolved.env, &resolved.learner)?;
    for (k, table) in outcome.tables[0].iter().enumerate() {
        let artifact = QTableArtifact::from_learned(
            resolved.env.sensors[k],
            resolved.gamma,
            table,
            prov.clone(),
        );
        save_json(
            &resolved.out.join(format!("qtable-sensor{}.json", k + 1)),
            &artifact,
        )?;
    }
    if let Some(curve) = &outcome.report.curve {
        write_csv(&resolved.out.join("learning-curve.csv"), |w| {
            write_learning_curve(w, curve, &prov)
        })?;
    }
    save_json(
        &resolved.out.join("train-report.json"),
        &ReportArtifact {
            provenance: prov,
            report: outcome.report.clone(),
        },
    )?;
    print_report("q-learning", &outcome.report);
    Ok(())
}

fn make_policy(
    resolved: &Resolved,
    tables: Option<&Vec<PolicyTable>>,
    episode: u32,
) -> Box<dyn Policy<f64> + Send> {
    match resolved.policy.as_str() {
        "via" => Box::new(TabularPolicy::new(
            tables.expect("tables solved for the via policy").clone(),
        )),
        "greedy" => Box::new(GreedyPolicy),
        "greedy-threshold" => Box::new(GreedyThresholdPolicy {
            threshold: resolved.battery_threshold,
        }),
        "random" => Box::new(RandomPolicy::new(resolved.env.seed, episode)),
        other => unreachable!("policy {other:?} passed resolution but is not simulable"),
    }
}

/// Simulates one policy and writes its cost report (plus the checkpointed
/// curve, and optionally a compressed trace of episode 0's first slots).
pub fn simulate(resolved: &Resolved, trace: bool) -> Result<(), Failure> {
    if matches!(resolved.policy.as_str(), "all" | "truncation") {
        return Err(config_error(format!(
            "policy {:?} needs the coupled subcommand; simulate knows via, greedy, greedy-threshold, and random",
            resolved.policy
        )));
    }
    prepare_out(resolved)?;
    let prov = provenance(resolved);
    let tables = if resolved.policy == "via" {
        Some(solved_tables(resolved)?)
    } else {
        None
    };
    let report = run_policy(&resolved.env, |episode| {
        make_policy(resolved, tables.as_ref(), episode)
    })?;
    let name = &resolved.policy;
    if let Some(curve) = &report.curve {
        write_csv(&resolved.out.join(format!("curve-{name}.csv")), |w| {
            write_learning_curve(w, curve, &prov)
        })?;
    }
    save_json(
        &resolved.out.join(format!("report-{name}.json")),
        &ReportArtifact {
            provenance: prov.clone(),
            report: report.clone(),
        },
    )?;
    if trace {
        dump_trace(resolved, tables.as_ref(), &prov)?;
    }
    print_report(name, &report);
    Ok(())
}

/// Replays episode 0 and records its leading slots as a compressed CSV.
/// Common random numbers make the replay identical to the reported run.
fn dump_trace(
    resolved: &Resolved,
    tables: Option<&Vec<PolicyTable>>,
    prov: &Provenance,
) -> Result<(), Failure> {
    let sensors = resolved.sensor_count();
    let mode = resolved.env.observation;
    let mut policy = make_policy(resolved, tables, 0);
    let mut env = Environment::new(&resolved.env, 0)?;
    let mut observations: Vec<EdgeObservation> = (0..sensors)
        .map(|k| EdgeObservation::initial(mode, env.states()[k], resolved.env.belief_start(k)))
        .collect();
    let mut actions = vec![CommandAction::Cache; sensors];
    let slots = resolved.env.horizon.min(TRACE_SLOTS);
    let mut traces = Vec::with_capacity(slots as usize);
    for _ in 0..slots {
        policy.decide(&observations, &mut actions);
        let trace = env.step(&actions)?;
        for k in 0..sensors {
            observations[k] = observe(
                mode,
                env.states()[k],
                Some(&trace.sensors[k]),
                &observations[k],
            );
        }
        traces.push(trace);
    }
    let path = resolved
        .out
        .join(format!("trace-{}.csv.gz", resolved.policy));
    save_trace_gz(&path, &traces, prov)?;
    println!(
        "trace: first {slots} slots of episode 0 -> {}",
        path.display()
    );
    Ok(())
}

/// Solves and simulates scheduling under a per-slot command budget,
/// comparing the joint optimum, the truncation policy, constrained greedy,
/// and the unconstrained lower bound across budgets.
pub fn coupled(resolved: &Resolved) -> Result<(), Failure> {
    prepare_out(resolved)?;
    let prov = provenance(resolved);
    let sensors = resolved.sensor_count() as u32;
    let budgets: Vec<u32> = if resolved.limit == 0 {
        (1..=sensors).collect()
    } else {
        vec![resolved.limit]
    };
    // `--policy truncation` skips the product solve, which is how budgets
    // on fleets beyond the product-space cap stay reachable.
    let solve_product = resolved.policy != "truncation";
    let tables = solved_tables(resolved)?;
    let mut rows: Vec<SweepRow<f64>> = Vec::new();
    let record = |rows: &mut Vec<SweepRow<f64>>,
                  m: u32,
                  name: &str,
                  report: &CostReport|
     -> Result<(), Failure> {
        save_json(
            &resolved.out.join(format!("report-{name}-M{m}.json")),
            &ReportArtifact {
                provenance: prov.clone(),
                report: report.clone(),
            },
        )?;
        println!(
            "M={m} {name}: total {:.6} +- {:.6}",
            report.total_mean, report.total_stderr
        );
        rows.push(SweepRow {
            m,
            policy: name.into(),
            mean_cost: report.total_mean,
            std_error: report.total_stderr,
            episodes: report.episodes,
        });
        Ok(())
    };
    for &m in &budgets {
        if solve_product {
            let solution = coupled_via(
                &resolved.env.sensors,
                m,
                resolved.gamma,
                resolved.theta,
                DEFAULT_STATE_CAP,
            )?;
            save_json(
                &resolved.out.join(format!("coupled-policy-M{m}.json")),
                &CoupledArtifact::new(
                    &solution,
                    &resolved.env.sensors,
                    resolved.gamma,
                    resolved.theta,
                    prov.clone(),
                ),
            )?;
            let report = run_policy(&resolved.env, |_| solution.policy())?;
            record(&mut rows, m, "coupled-optimal", &report)?;
        }
        let report = run_policy(&resolved.env, |_| {
            TruncationPolicy::new(tables.clone(), m as usize)
        })?;
        record(&mut rows, m, "truncation", &report)?;
        let report = run_policy(&resolved.env, |_| ConstrainedGreedyPolicy {
            limit: m as usize,
        })?;
        record(&mut rows, m, "constrained-greedy", &report)?;
        let report = run_policy(&resolved.env, |_| TabularPolicy::new(tables.clone()))?;
        record(&mut rows, m, "unconstrained", &report)?;
    }
    let sweep_path = resolved.out.join("msweep.csv");
    write_csv(&sweep_path, |w| write_sweep_table(w, &rows, &prov))?;
    println!("budget sweep -> {}", sweep_path.display());
    Ok(())
}

#[derive(Serialize)]
struct SweepPoint {
    value: f64,
    sweeps: usize,
    region_size: usize,
}

#[derive(Serialize)]
struct SweepSummary {
    provenance: Provenance,
    param: String,
    points: Vec<SweepPoint>,
    /// Each command region is contained in the next one, in given order.
    nested_increasing: bool,
    /// Each command region contains the next one.
    nested_decreasing: bool,
}

/// Solves sensor 0 across the given parameter values and reports how the
/// command regions nest.
pub fn sweep(resolved: &Resolved, param: SweepParam, tokens: &[String]) -> Result<(), Failure> {
    let mut errors = Vec::new();
    let mut values = Vec::new();
    for token in tokens {
        match token.parse::<f64>() {
            Ok(v) => values.push((token.as_str(), v)),
            Err(e) => errors.push(format!("--values {token:?}: {e}")),
        }
    }
    if tokens.is_empty() {
        errors.push("--values must name at least one value".into());
    }
    let base = resolved.env.sensors[0];
    let mut points = Vec::new();
    for &(token, value) in &values {
        let swapped = match param {
            SweepParam::Lambda => SensorParams::new(
                base.battery_capacity,
                value,
                base.tx_success_prob,
                base.request_prob,
                base.aoi_max,
                base.cost_weight,
            ),
            SweepParam::Xi => SensorParams::new(
                base.battery_capacity,
                base.harvest_prob,
                value,
                base.request_prob,
                base.aoi_max,
                base.cost_weight,
            ),
        };
        match swapped {
            Ok(params) => points.push((token, value, params)),
            Err(e) => errors.push(format!("--values {token}: {e}")),
        }
    }
    if !errors.is_empty() {
        return Err(ConfigErrors(errors).into());
    }
    prepare_out(resolved)?;
    let prov = provenance(resolved);
    let name = param.name();
    let mut solved = Vec::new();
    for &(token, value, params) in &points {
        let kernel = TransitionKernel::build(&params)?;
        let solution = value_iteration(&kernel, resolved.gamma, resolved.theta)?;
        save_json(
            &resolved.out.join(format!("policy-{name}-{token}.json")),
            &PolicyArtifact::new(&solution.values, &solution.policy, prov.clone()),
        )?;
        write_csv(
            &resolved.out.join(format!("grid-{name}-{token}.csv")),
            |w| write_policy_grid(w, &solution.policy, &prov),
        )?;
        println!(
            "{name}={token}: {} sweeps, command region {}",
            solution.sweeps,
            solution.policy.command_region().len()
        );
        solved.push((value, solution));
    }
    let nested_increasing = solved
        .windows(2)
        .all(|pair| region_subset(&pair[0].1.policy, &pair[1].1.policy).is_ok());
    let nested_decreasing = solved
        .windows(2)
        .all(|pair| region_subset(&pair[1].1.policy, &pair[0].1.policy).is_ok());
    let summary = SweepSummary {
        provenance: prov,
        param: name.into(),
        points: solved
            .iter()
            .map(|(value, solution)| SweepPoint {
                value: *value,
                sweeps: solution.sweeps,
                region_size: solution.policy.command_region().len(),
            })
            .collect(),
        nested_increasing,
        nested_decreasing,
    };
    let summary_path = resolved.out.join("sweep-summary.json");
    save_json(&summary_path, &summary)?;
    println!(
        "regions nest upward: {nested_increasing}; downward: {nested_decreasing} -> {}",
        summary_path.display()
    );
    Ok(())
}

/// Solves sensor 0 and exports the single policy document used by the
/// import round trip.
pub fn export_policy(resolved: &Resolved) -> Result<(), Failure> {
    prepare_out(resolved)?;
    let prov = provenance(resolved);
    let solution = solve_sensor(resolved, 0)?;
    let path = resolved.out.join("policy.json");
    save_json(
        &path,
        &PolicyArtifact::new(&solution.values, &solution.policy, prov),
    )?;
    println!("policy -> {}", path.display());
    Ok(())
}

fn print_report(name: &str, report: &CostReport) {
    let per_sensor: Vec<String> = report
        .per_sensor_mean
        .iter()
        .map(|c| format!("{c:.6}"))
        .collect();
    println!(
        "{name}: total {:.6} +- {:.6} over {} episodes x {} slots (per sensor: {})",
        report.total_mean,
        report.total_stderr,
        report.episodes,
        report.horizon,
        per_sensor.join(", ")
    );
}
