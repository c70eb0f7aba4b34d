//! Realized sensing performance of a formed structure, plus welfare,
//! resource and overhead aggregates.
//!
//! SU `i` fuses the reports of every member of the coalition it heads
//! (`R_i` in the overlapping case, its block `C(i)` in a partition) with the
//! AND rule. Members may use different thresholds, so realized
//! probabilities need not match the per-size table.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::cf::Partition;
use crate::error::{Error, Result};
use crate::math::Probability;
use crate::network::{ResourceLedger, Scenario, SuId};
use crate::ocf::OverlapStructure;
use crate::sensing::{
    fused_and_false_alarm, fused_and_miss, local_false_alarm_prob, local_miss_prob, Criterion,
    SensingParams, UtilityTable,
};
use crate::trace::{EventKind, RunTrace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SuMetrics {
    pub qm: Probability,
    pub qf: Probability,
    /// `(qm + qf) / 2`, equal priors.
    pub total_error: f64,
}

impl SuMetrics {
    /// The SU's realized utility under `criterion`.
    pub fn utility(&self, criterion: Criterion) -> f64 {
        match criterion {
            Criterion::SumError => 2.0 - self.qm.get() - self.qf.get(),
            Criterion::ConstrainedMiss => 1.0 - self.qm.get(),
        }
    }
}

/// AND-rule fusion over `members` with their own thresholds.
pub fn realized_su_metrics(
    members: impl IntoIterator<Item = SuId>,
    thresholds: &[f64],
    params: &SensingParams,
) -> Result<SuMetrics> {
    let mut miss = Vec::new();
    let mut fa = Vec::new();
    for j in members {
        let lambda = *thresholds.get(j).ok_or(Error::MissingThreshold(j))?;
        if !lambda.is_finite() {
            return Err(Error::MissingThreshold(j));
        }
        miss.push(local_miss_prob(lambda, params)?);
        fa.push(local_false_alarm_prob(lambda, params)?);
    }
    let qm = fused_and_miss(&miss)?;
    let qf = fused_and_false_alarm(&fa)?;
    Ok(SuMetrics {
        qm,
        qf,
        total_error: 0.5 * (qm.get() + qf.get()),
    })
}

/// Either kind of formed structure.
#[derive(Debug, Clone, Copy)]
pub enum StructureRef<'a> {
    Overlap(&'a OverlapStructure),
    Partition(&'a Partition),
}

impl StructureRef<'_> {
    fn n_su(&self) -> usize {
        match self {
            StructureRef::Overlap(s) => s.n_su(),
            StructureRef::Partition(p) => p.n_su(),
        }
    }

    /// The SUs whose reports SU `i` fuses, itself included.
    fn fused_by(&self, i: SuId) -> Vec<SuId> {
        match self {
            StructureRef::Overlap(s) => s.coalition(i).iter().copied().collect(),
            StructureRef::Partition(p) => p.coalition_of(i).iter().copied().collect(),
        }
    }

    fn table_welfare(&self, table: &UtilityTable) -> f64 {
        match self {
            StructureRef::Overlap(s) => s.welfare(table),
            StructureRef::Partition(p) => p.welfare(table),
        }
    }

    fn report_count(&self) -> usize {
        match self {
            StructureRef::Overlap(s) => s.report_count(),
            StructureRef::Partition(p) => p.report_count(),
        }
    }

    fn ledger(&self, scenario: &Scenario) -> ResourceLedger {
        match self {
            StructureRef::Overlap(s) => s.ledger().clone(),
            StructureRef::Partition(p) => p.ledger(scenario),
        }
    }
}

/// Network-level aggregates. Error rates are per-SU means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkMetrics {
    pub mean_total_error: f64,
    pub mean_miss: f64,
    pub max_qf: Probability,
    /// Table welfare driving the game.
    pub social_welfare: f64,
    /// Sum of realized per-SU utilities.
    pub social_welfare_realized: f64,
    pub mean_coalition_size: f64,
    pub coalition_size_histogram: BTreeMap<usize, usize>,
    pub power_utilization: f64,
    pub bandwidth_utilization: f64,
    pub report_count: usize,
    pub total_overhead_tau: u64,
    pub switch_or_merge_count: usize,
    pub per_su: Vec<SuMetrics>,
}

pub fn network_metrics(
    structure: StructureRef<'_>,
    thresholds: &[f64],
    table: &UtilityTable,
    trace: &RunTrace,
    scenario: &Scenario,
) -> Result<NetworkMetrics> {
    let n = structure.n_su();
    if n == 0 {
        return Err(Error::domain("empty network"));
    }
    let criterion = table.criterion;
    let mut per_su = Vec::with_capacity(n);
    let mut histogram = BTreeMap::new();
    let mut size_sum = 0usize;
    for i in 0..n {
        let members = structure.fused_by(i);
        *histogram.entry(members.len()).or_insert(0) += 1;
        size_sum += members.len();
        per_su.push(realized_su_metrics(members, thresholds, &table.params)?);
    }
    let nf = n as f64;
    let ledger = structure.ledger(scenario);
    Ok(NetworkMetrics {
        mean_total_error: per_su.iter().map(|m| m.total_error).sum::<f64>() / nf,
        mean_miss: per_su.iter().map(|m| m.qm.get()).sum::<f64>() / nf,
        max_qf: per_su.iter().map(|m| m.qf).fold(Probability::ZERO, |a, b| {
            if b.get() > a.get() {
                b
            } else {
                a
            }
        }),
        social_welfare: structure.table_welfare(table),
        social_welfare_realized: per_su.iter().map(|m| m.utility(criterion)).sum(),
        mean_coalition_size: size_sum as f64 / nf,
        coalition_size_histogram: histogram,
        power_utilization: ledger.power_utilization(),
        bandwidth_utilization: ledger.bandwidth_utilization(),
        report_count: structure.report_count(),
        total_overhead_tau: trace.total_overhead_tau(),
        switch_or_merge_count: trace.count(EventKind::Switch) + trace.count(EventKind::Merge),
        per_su,
    })
}

/// The computable chain behind the final-versus-optimal welfare guarantee.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WelfareBoundReport {
    /// `Υ(CS_f) / (N·U(⌈Σ_{CS_0}|R_i| / N⌉))`.
    pub lhs_ratio: f64,
    /// `Σ_{CS_0} U(|R_i|) / (N·U(⌈Σ_{CS_0}|R_i| / N⌉))`.
    pub rhs_bound: f64,
    pub holds: bool,
}

pub fn welfare_bound_report(
    cs0: &OverlapStructure,
    csf: &OverlapStructure,
    table: &UtilityTable,
    n: usize,
) -> WelfareBoundReport {
    let mean_size = cs0.sum_size().div_ceil(n);
    let denom = n as f64 * table.u(mean_size);
    let lhs_ratio = csf.welfare(table) / denom;
    let rhs_bound = cs0.welfare(table) / denom;
    WelfareBoundReport {
        lhs_ratio,
        rhs_bound,
        holds: lhs_ratio >= rhs_bound,
    }
}

/// Largest SU count accepted by [`exhaustive_optimal_welfare`].
pub const EXHAUSTIVE_MAX_SU: usize = 6;

/// Highest overlapping welfare over every budget-feasible assignment of
/// report-to sets, by enumeration. Only for tiny networks.
pub fn exhaustive_optimal_welfare(scenario: &Scenario, table: &UtilityTable) -> Result<f64> {
    let n = scenario.n_su();
    if n > EXHAUSTIVE_MAX_SU {
        return Err(Error::domain(format!(
            "exhaustive search is limited to {EXHAUSTIVE_MAX_SU} SUs, got {n}"
        )));
    }
    let cfg = &scenario.config;
    // Per SU: every affordable subset of its neighbors, as a target list.
    let choices: Vec<Vec<Vec<SuId>>> = (0..n)
        .map(|i| {
            let nb = scenario.neighbors(i);
            (0u32..1 << nb.len())
                .map(|mask| {
                    (0..nb.len())
                        .filter(|b| mask >> b & 1 == 1)
                        .map(|b| nb[b])
                        .collect::<Vec<_>>()
                })
                .filter(|targets| {
                    let power = targets
                        .iter()
                        .fold(0.0, |acc, &j| acc + scenario.cost(i, j));
                    let ledger = ResourceLedger::new(1, cfg);
                    ledger.can_afford(0, power, (targets.len() as u32 * cfg.theta0) as i64)
                })
                .collect()
        })
        .collect();

    let mut sizes = vec![1usize; n];
    let mut best = f64::NEG_INFINITY;
    search(0, &choices, &mut sizes, table, &mut best);
    Ok(best)
}

fn search(
    i: usize,
    choices: &[Vec<Vec<SuId>>],
    sizes: &mut [usize],
    table: &UtilityTable,
    best: &mut f64,
) {
    if i == choices.len() {
        let w: f64 = sizes.iter().map(|&s| table.u(s)).sum();
        if w > *best {
            *best = w;
        }
        return;
    }
    for targets in &choices[i] {
        for &j in targets {
            sizes[j] += 1;
        }
        search(i + 1, choices, sizes, table, best);
        for &j in targets {
            sizes[j] -= 1;
        }
    }
}
