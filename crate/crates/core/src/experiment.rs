//! Monte-Carlo experiment driver: sweeps, paired seeds, row emission.
//!
//! Run `r` of every sweep point uses scenario seed `base_seed + r`, so OCF,
//! CF and LOCAL runs with the same configuration see identical placements.

use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cf::{self, Partition, PartitionSnapshot};
use crate::error::{Error, Result};
use crate::evaluator::{network_metrics, NetworkMetrics, StructureRef};
use crate::network::{generate_scenario, NetworkConfig, Scenario};
use crate::ocf::{self, OverlapSnapshot};
use crate::sensing::{Criterion, SensingParams, TableCache, UtilityTable};
use crate::trace::RunTrace;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Algorithm {
    #[serde(alias = "ocf")]
    Ocf,
    #[serde(alias = "cf")]
    Cf,
    #[serde(alias = "local")]
    Local,
}

impl Algorithm {
    pub fn as_str(self) -> &'static str {
        match self {
            Algorithm::Ocf => "OCF",
            Algorithm::Cf => "CF",
            Algorithm::Local => "LOCAL",
        }
    }
}

impl fmt::Display for Algorithm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    NSu,
    PSuW,
    ThetaSu,
}

impl SweepParam {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepParam::NSu => "n_su",
            SweepParam::PSuW => "p_su_w",
            SweepParam::ThetaSu => "theta_su",
        }
    }

    fn apply(self, base: &NetworkConfig, value: f64) -> Result<NetworkConfig> {
        let mut cfg = base.clone();
        let as_count = || {
            if value.fract() != 0.0 || value < 0.0 || value > u32::MAX as f64 {
                Err(Error::Config(format!(
                    "{} must be a whole number, got {value}",
                    self.as_str()
                )))
            } else {
                Ok(value as u32)
            }
        };
        match self {
            SweepParam::NSu => cfg.n_su = as_count()? as usize,
            SweepParam::PSuW => cfg.p_su_w = value,
            SweepParam::ThetaSu => cfg.theta_su = as_count()?,
        }
        Ok(cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sweep {
    pub param: SweepParam,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub network: NetworkConfig,
    pub sensing: SensingParams,
    pub criterion: Criterion,
    pub algorithm: Algorithm,
    pub runs: usize,
    pub base_seed: u64,
    pub sweep: Option<Sweep>,
    /// Bits per identity or distance field in signaling messages.
    pub tau: u64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            network: NetworkConfig::default(),
            sensing: SensingParams::default(),
            criterion: Criterion::SumError,
            algorithm: Algorithm::Ocf,
            runs: 100,
            base_seed: 0,
            sweep: None,
            tau: 1,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.runs == 0 {
            return Err(Error::Config("runs must be at least 1".into()));
        }
        if self.tau == 0 {
            return Err(Error::Config("tau must be positive".into()));
        }
        self.sensing.validate()?;
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(Error::Config("sweep has no values".into()));
            }
            if let Some(v) = sweep.values.iter().find(|v| !(**v > 0.0) || !v.is_finite()) {
                return Err(Error::Config(format!(
                    "sweep values must be positive, got {v}"
                )));
            }
        }
        for (_, cfg) in self.points()? {
            cfg.validate()?;
        }
        Ok(())
    }

    /// `(sweep value, network config)` per sweep point; a single point with
    /// no sweep value when there is no sweep.
    pub fn points(&self) -> Result<Vec<(Option<f64>, NetworkConfig)>> {
        match &self.sweep {
            None => Ok(vec![(None, self.network.clone())]),
            Some(s) => s
                .values
                .iter()
                .map(|&v| Ok((Some(v), s.param.apply(&self.network, v)?)))
                .collect(),
        }
    }
}

/// One CSV/JSON output row: one run at one sweep point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub sweep_param: Option<String>,
    pub sweep_value: Option<f64>,
    pub run: usize,
    pub seed: u64,
    pub algorithm: Algorithm,
    pub criterion: Criterion,
    pub mean_total_error: f64,
    pub mean_miss: f64,
    pub max_qf: f64,
    pub social_welfare_table: f64,
    pub social_welfare_realized: f64,
    pub mean_coalition_size: f64,
    pub power_util: f64,
    pub bandwidth_util: f64,
    pub report_count: usize,
    pub overhead_tau: u64,
    pub op_count: usize,
    pub convergence_bound: Option<u64>,
    /// Coalition size to number of SUs fusing a coalition of that size.
    pub coalition_size_histogram: std::collections::BTreeMap<usize, usize>,
}

pub const CSV_COLUMNS: [&str; 18] = [
    "sweep_param",
    "sweep_value",
    "run",
    "seed",
    "algorithm",
    "criterion",
    "mean_total_error",
    "mean_miss",
    "max_qf",
    "social_welfare_table",
    "social_welfare_realized",
    "mean_coalition_size",
    "power_util",
    "bandwidth_util",
    "report_count",
    "overhead_tau",
    "op_count",
    "convergence_bound",
];

/// Final structure of one run, for inspection and plotting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum StructureSnapshot {
    Overlap(OverlapSnapshot),
    Partition(PartitionSnapshot),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSnapshot {
    pub sweep_value: Option<f64>,
    pub algorithm: Algorithm,
    pub structure: StructureSnapshot,
}

/// Everything one run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub metrics: NetworkMetrics,
    pub trace: RunTrace,
    pub convergence_bound: Option<u64>,
    pub snapshot: StructureSnapshot,
}

/// Runs one algorithm on one scenario. LOCAL keeps every SU alone with the
/// single-SU threshold.
pub fn run_once(
    scenario: &Scenario,
    table: &UtilityTable,
    algorithm: Algorithm,
    seed: u64,
) -> Result<RunOutcome> {
    match algorithm {
        Algorithm::Ocf => {
            let run = ocf::run_formation(scenario, table, seed)?;
            let th = ocf::decide_thresholds_overlap(&run.structure, table);
            let metrics = network_metrics(
                StructureRef::Overlap(&run.structure),
                &th,
                table,
                &run.trace,
                scenario,
            )?;
            Ok(RunOutcome {
                metrics,
                snapshot: StructureSnapshot::Overlap(OverlapSnapshot::new(
                    &run.structure,
                    scenario,
                    table,
                )),
                trace: run.trace,
                convergence_bound: run.bound.map(|b| b.value()),
            })
        }
        Algorithm::Cf => {
            let run = cf::run_merge_formation(scenario, table, seed)?;
            partition_outcome(&run.partition, run.trace, scenario, table)
        }
        Algorithm::Local => {
            let singletons = Partition::from_coalitions(
                scenario.n_su(),
                &(0..scenario.n_su()).map(|i| vec![i]).collect::<Vec<_>>(),
            )?;
            partition_outcome(&singletons, RunTrace::new(), scenario, table)
        }
    }
}

fn partition_outcome(
    partition: &Partition,
    trace: RunTrace,
    scenario: &Scenario,
    table: &UtilityTable,
) -> Result<RunOutcome> {
    let th = cf::decide_thresholds_partition(partition, table);
    let metrics = network_metrics(
        StructureRef::Partition(partition),
        &th,
        table,
        &trace,
        scenario,
    )?;
    Ok(RunOutcome {
        metrics,
        trace,
        convergence_bound: None,
        snapshot: StructureSnapshot::Partition(PartitionSnapshot::new(partition, scenario, table)),
    })
}

/// Runs every (sweep point, run) pair, in parallel, returning rows in
/// (sweep point, run) order.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    run_experiment_with_snapshots(config).map(|(rows, _)| rows)
}

/// As [`run_experiment`], also returning the structure of the first run of
/// every sweep point.
pub fn run_experiment_with_snapshots(
    config: &ExperimentConfig,
) -> Result<(Vec<ResultRow>, Vec<PointSnapshot>)> {
    config.validate()?;
    let points = config.points()?;
    let n_max = points.iter().map(|(_, c)| c.n_su).max().unwrap_or(2).max(2);
    let table: Arc<UtilityTable> =
        TableCache::new().get(config.criterion, n_max, config.sensing)?;

    for (value, cfg) in &points {
        if cfg.max_reports() == 0 {
            warn!(
                "theta_su {} < theta0 {} at sweep value {value:?}: no SU can report, \
                 results are all-singleton",
                cfg.theta_su, cfg.theta0
            );
        }
    }

    let tasks: Vec<(usize, usize)> = (0..points.len())
        .flat_map(|p| (0..config.runs).map(move |r| (p, r)))
        .collect();
    let outcomes: Vec<(ResultRow, Option<PointSnapshot>)> = tasks
        .par_iter()
        .map(|&(p, r)| {
            let (value, cfg) = &points[p];
            let seed = config.base_seed.wrapping_add(r as u64);
            let scenario = generate_scenario(cfg, seed)?;
            let out = run_once(&scenario, &table, config.algorithm, seed)?;
            let row = make_row(config, *value, r, seed, &out);
            let snap = (r == 0).then_some(PointSnapshot {
                sweep_value: *value,
                algorithm: config.algorithm,
                structure: out.snapshot,
            });
            Ok((row, snap))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::with_capacity(outcomes.len());
    let mut snaps = Vec::new();
    for (row, snap) in outcomes {
        rows.push(row);
        snaps.extend(snap);
    }
    Ok((rows, snaps))
}

fn make_row(
    config: &ExperimentConfig,
    sweep_value: Option<f64>,
    run: usize,
    seed: u64,
    out: &RunOutcome,
) -> ResultRow {
    let m = &out.metrics;
    ResultRow {
        sweep_param: config.sweep.as_ref().map(|s| s.param.as_str().to_string()),
        sweep_value,
        run,
        seed,
        algorithm: config.algorithm,
        criterion: config.criterion,
        mean_total_error: m.mean_total_error,
        mean_miss: m.mean_miss,
        max_qf: m.max_qf.get(),
        social_welfare_table: m.social_welfare,
        social_welfare_realized: m.social_welfare_realized,
        mean_coalition_size: m.mean_coalition_size,
        power_util: m.power_utilization,
        bandwidth_util: m.bandwidth_utilization,
        report_count: m.report_count,
        overhead_tau: m.total_overhead_tau * config.tau,
        op_count: m.switch_or_merge_count,
        convergence_bound: out.convergence_bound,
        coalition_size_histogram: m.coalition_size_histogram.clone(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    Csv,
    Json,
}

/// Rounds to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if x == 0.0 || !x.is_finite() {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

fn fmt12(x: f64) -> String {
    round12(x).to_string()
}

impl ResultRow {
    /// The row with every real rounded to 12 significant digits.
    pub fn rounded(&self) -> ResultRow {
        ResultRow {
            sweep_value: self.sweep_value.map(round12),
            mean_total_error: round12(self.mean_total_error),
            mean_miss: round12(self.mean_miss),
            max_qf: round12(self.max_qf),
            social_welfare_table: round12(self.social_welfare_table),
            social_welfare_realized: round12(self.social_welfare_realized),
            mean_coalition_size: round12(self.mean_coalition_size),
            power_util: round12(self.power_util),
            bandwidth_util: round12(self.bandwidth_util),
            ..self.clone()
        }
    }

    fn csv_record(&self) -> Vec<String> {
        let opt = |v: Option<String>| v.unwrap_or_default();
        vec![
            opt(self.sweep_param.clone()),
            opt(self.sweep_value.map(fmt12)),
            self.run.to_string(),
            self.seed.to_string(),
            self.algorithm.to_string(),
            self.criterion.as_str().to_string(),
            fmt12(self.mean_total_error),
            fmt12(self.mean_miss),
            fmt12(self.max_qf),
            fmt12(self.social_welfare_table),
            fmt12(self.social_welfare_realized),
            fmt12(self.mean_coalition_size),
            fmt12(self.power_util),
            fmt12(self.bandwidth_util),
            self.report_count.to_string(),
            self.overhead_tau.to_string(),
            self.op_count.to_string(),
            opt(self.convergence_bound.map(|b| b.to_string())),
        ]
    }
}

/// Writes rows as CSV (fixed column order, with header) or as a JSON array.
pub fn write_rows<W: Write>(rows: &[ResultRow], format: OutputFormat, out: W) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::domain("no rows to emit"));
    }
    match format {
        OutputFormat::Csv => {
            let mut w = csv::Writer::from_writer(out);
            w.write_record(CSV_COLUMNS).map_err(csv_error)?;
            for row in rows {
                w.write_record(row.csv_record()).map_err(csv_error)?;
            }
            w.flush()?;
        }
        OutputFormat::Json => {
            let rounded: Vec<ResultRow> = rows.iter().map(ResultRow::rounded).collect();
            let mut out = out;
            serde_json::to_writer_pretty(&mut out, &rounded)?;
            out.write_all(b"\n")?;
            out.flush()?;
        }
    }
    Ok(())
}

fn csv_error(e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::Numeric(format!("csv: {other:?}")),
    }
}

pub fn emit(rows: &[ResultRow], format: OutputFormat, path: impl AsRef<Path>) -> Result<()> {
    if rows.is_empty() {
        return Err(Error::domain("no rows to emit"));
    }
    let file = File::create(path)?;
    write_rows(rows, format, BufWriter::new(file))
}
