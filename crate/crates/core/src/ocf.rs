//! Overlapping coalition formation.
//!
//! Every SU `i` owns one coalition `R_i`: itself plus every SU that reports
//! to it. An SU joins coalition `R_j` by adding `j` to its report-to set
//! `S_i`, paying the report cost to `j` and one report's worth of slots.
//! Initialization fills each `S_i` greedily from the nearest neighbor
//! outwards; afterwards SUs perform switch operations (leave one coalition,
//! join a smaller one) until no SU has a profitable, affordable switch.

use std::collections::BTreeSet;

use log::debug;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ResourceLedger, Scenario, SuId};
use crate::sensing::{Criterion, UtilityTable};
use crate::trace::{EventKind, RunTrace};

/// Largest tolerated per-SU power drift between the incremental ledger and
/// a from-scratch recomputation, watts.
const LEDGER_DRIFT_TOL_W: f64 = 1e-9;

/// ChaCha stream for the visiting order, kept apart from the placement stream.
const SWITCH_ORDER_STREAM: u64 = 1;

/// The N overlapping coalitions, stored as report-to sets with the derived
/// report-from sets (coalitions) kept in sync.
#[derive(Debug, Clone, PartialEq)]
pub struct OverlapStructure {
    report_to: Vec<BTreeSet<SuId>>,
    report_from: Vec<BTreeSet<SuId>>,
    ledger: ResourceLedger,
}

impl OverlapStructure {
    /// Every SU alone in its own coalition.
    pub fn singletons(scenario: &Scenario) -> Self {
        let n = scenario.n_su();
        OverlapStructure {
            report_to: vec![BTreeSet::new(); n],
            report_from: (0..n).map(|i| BTreeSet::from([i])).collect(),
            ledger: ResourceLedger::new(n, &scenario.config),
        }
    }

    /// Builds a structure from explicit report-to sets, checking neighbor
    /// membership and both budgets.
    pub fn from_report_sets(scenario: &Scenario, report_to: Vec<Vec<SuId>>) -> Result<Self> {
        let n = scenario.n_su();
        if report_to.len() != n {
            return Err(Error::domain(format!(
                "expected {n} report-to sets, got {}",
                report_to.len()
            )));
        }
        let mut s = OverlapStructure::singletons(scenario);
        for (i, targets) in report_to.into_iter().enumerate() {
            for j in targets {
                if j >= n || !scenario.is_neighbor(i, j) {
                    return Err(Error::domain(format!("SU {j} is not a neighbor of SU {i}")));
                }
                if !s.report_to[i].insert(j) {
                    return Err(Error::domain(format!("SU {i} reports to {j} twice")));
                }
                s.report_from[j].insert(i);
            }
        }
        s.ledger = s.recomputed_ledger(scenario);
        if !s.ledger.within_budgets() {
            return Err(Error::domain("report-to sets exceed an SU budget"));
        }
        Ok(s)
    }

    pub fn n_su(&self) -> usize {
        self.report_to.len()
    }

    /// `S_i`: the SUs that `i` reports to.
    pub fn report_to(&self, i: SuId) -> &BTreeSet<SuId> {
        &self.report_to[i]
    }

    /// `R_i`: SU `i` and every SU reporting to it.
    pub fn coalition(&self, i: SuId) -> &BTreeSet<SuId> {
        &self.report_from[i]
    }

    #[inline]
    pub fn coalition_size(&self, i: SuId) -> usize {
        self.report_from[i].len()
    }

    pub fn ledger(&self) -> &ResourceLedger {
        &self.ledger
    }

    /// `Σ_i |R_i|`.
    pub fn sum_size(&self) -> usize {
        self.report_from.iter().map(BTreeSet::len).sum()
    }

    /// `Σ_i |S_i|`, the number of reports sent per sensing period.
    pub fn report_count(&self) -> usize {
        self.report_to.iter().map(BTreeSet::len).sum()
    }

    /// Social welfare `Σ_i U(|R_i|)`.
    pub fn welfare(&self, table: &UtilityTable) -> f64 {
        (0..self.n_su())
            .map(|i| table.u(self.coalition_size(i)))
            .sum()
    }

    /// Coalition ids containing SU `i`: its own plus every report target.
    pub fn memberships(&self, i: SuId) -> impl Iterator<Item = SuId> + '_ {
        std::iter::once(i).chain(self.report_to[i].iter().copied())
    }

    fn recomputed_ledger(&self, scenario: &Scenario) -> ResourceLedger {
        let sets: Vec<Vec<SuId>> = self
            .report_to
            .iter()
            .map(|s| s.iter().copied().collect())
            .collect();
        ResourceLedger::from_report_sets(
            scenario,
            sets.iter().enumerate().map(|(i, s)| (i, s.as_slice())),
        )
    }

    /// Replaces the incrementally maintained ledger by a from-scratch
    /// recomputation, failing if the two drifted apart.
    pub fn reconcile_ledger(&mut self, scenario: &Scenario) -> Result<()> {
        let fresh = self.recomputed_ledger(scenario);
        let drift = self.ledger.drift(&fresh);
        if drift > LEDGER_DRIFT_TOL_W {
            return Err(Error::Numeric(format!(
                "resource ledger drifted by {drift:e} W"
            )));
        }
        if !fresh.within_budgets() {
            return Err(Error::Numeric("an SU exceeds its reporting budget".into()));
        }
        self.ledger = fresh;
        Ok(())
    }

    fn join(&mut self, scenario: &Scenario, i: SuId, j: SuId) {
        self.report_to[i].insert(j);
        self.report_from[j].insert(i);
        self.ledger
            .apply(i, scenario.cost(i, j), scenario.config.theta0 as i64);
    }
}

/// SU `actor` leaves coalition `R_leave` and joins `R_join`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SwitchOp {
    pub actor: SuId,
    pub leave: SuId,
    pub join: SuId,
    /// Payoff change of the actor, `φ(|R_join|+1) - φ(|R_leave|)`.
    pub gain: f64,
    /// Extra power the actor spends, `c(actor, join) - c(actor, leave)`.
    pub power_delta_w: f64,
}

/// Greedy initialization: each SU joins its neighbors' coalitions nearest
/// first and stops at the first one it can no longer afford.
pub fn initialize_structure(
    scenario: &Scenario,
    table: &UtilityTable,
) -> Result<(OverlapStructure, RunTrace)> {
    let n = scenario.n_su();
    if table.n_max() < n {
        return Err(Error::domain(format!(
            "utility table covers sizes up to {}, network has {n} SUs",
            table.n_max()
        )));
    }
    let theta0 = scenario.config.theta0 as i64;
    let mut s = OverlapStructure::singletons(scenario);
    for i in 0..n {
        for &j in scenario.neighbors(i) {
            if !s.ledger.can_afford(i, scenario.cost(i, j), theta0) {
                break;
            }
            s.join(scenario, i, j);
        }
    }

    let mut trace = RunTrace::new();
    let overhead: u64 = (0..n).map(|i| 2 * (s.coalition_size(i) as u64 - 1)).sum();
    trace.push(EventKind::Init, overhead, s.welfare(table));
    Ok((s, trace))
}

/// All switch operations available to SU `i`. Bandwidth is unchanged by a
/// switch, so only the power budget is checked.
pub fn enumerate_switches(
    structure: &OverlapStructure,
    scenario: &Scenario,
    i: SuId,
    table: &UtilityTable,
) -> Vec<SwitchOp> {
    let mut ops = Vec::new();
    let current = &structure.report_to[i];
    for &x in current {
        let leave_payoff = table.phi(structure.coalition_size(x));
        let leave_cost = scenario.cost(i, x);
        for &y in scenario.neighbors(i) {
            if current.contains(&y) {
                continue;
            }
            let power_delta_w = scenario.cost(i, y) - leave_cost;
            if !structure.ledger.can_afford(i, power_delta_w, 0) {
                continue;
            }
            let gain = table.phi(structure.coalition_size(y) + 1) - leave_payoff;
            if gain > 0.0 {
                ops.push(SwitchOp {
                    actor: i,
                    leave: x,
                    join: y,
                    gain,
                    power_delta_w,
                });
            }
        }
    }
    ops
}

/// Highest gain first; ties go to the smaller joined coalition id, then the
/// smaller power increase, then the smaller left coalition id.
pub fn best_switch(ops: &[SwitchOp]) -> Option<SwitchOp> {
    ops.iter().copied().min_by(|a, b| {
        b.gain
            .total_cmp(&a.gain)
            .then(a.join.cmp(&b.join))
            .then(a.power_delta_w.total_cmp(&b.power_delta_w))
            .then(a.leave.cmp(&b.leave))
    })
}

/// Applies a switch after re-validating it against the current structure,
/// and appends the switch event to `trace`.
pub fn apply_switch(
    structure: &mut OverlapStructure,
    scenario: &Scenario,
    table: &UtilityTable,
    op: &SwitchOp,
    trace: &mut RunTrace,
) -> Result<()> {
    let SwitchOp {
        actor: i,
        leave: x,
        join: y,
        ..
    } = *op;
    let stale = |why: &str| Err(Error::StaleSwitch(format!("{op:?}: {why}")));
    if i >= structure.n_su() || x >= structure.n_su() || y >= structure.n_su() {
        return stale("id out of range");
    }
    if x == y || !structure.report_to[i].contains(&x) || structure.report_to[i].contains(&y) {
        return stale("membership changed");
    }
    if y == i || !scenario.is_neighbor(i, y) {
        return stale("join target is not a neighbor");
    }
    let power_delta_w = scenario.cost(i, y) - scenario.cost(i, x);
    if !structure.ledger.can_afford(i, power_delta_w, 0) {
        return stale("power budget");
    }
    let size_x = structure.coalition_size(x);
    let size_y = structure.coalition_size(y);
    let gain = table.phi(size_y + 1) - table.phi(size_x);
    if !(gain > 0.0) || gain != op.gain {
        return stale("coalition sizes changed");
    }

    let before = structure.welfare(table);
    structure.report_to[i].remove(&x);
    structure.report_from[x].remove(&i);
    structure.report_to[i].insert(y);
    structure.report_from[y].insert(i);
    structure.ledger.apply(i, power_delta_w, 0);
    let after = structure.welfare(table);
    if !(after > before) {
        return Err(Error::Numeric(format!(
            "welfare did not increase across {op:?}: {before} -> {after}"
        )));
    }
    trace.push(EventKind::Switch, 2 * (size_x + size_y - 1) as u64, after);
    Ok(())
}

/// True when no SU has any switch operation.
pub fn is_switch_stable(
    structure: &OverlapStructure,
    scenario: &Scenario,
    table: &UtilityTable,
) -> bool {
    (0..structure.n_su()).all(|i| enumerate_switches(structure, scenario, i, table).is_empty())
}

/// Upper bound on the number of switch operations from a given initial
/// structure: `⌈E/ε⌉` with `ε = 2U(N-1) - U(N) - U(N-2)`.
///
/// Two variants of `E` are computed: `Σ U(|N_i|) - Σ U(|R_i|)` exactly as
/// the bound is usually stated, and `Σ U(|N_i|+1) - Σ U(|R_i|)` which
/// accounts for `R_i` containing `i` itself. The larger bound is the one
/// enforced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceBound {
    pub epsilon: f64,
    pub gap_neighbors: f64,
    pub gap_neighbors_plus_self: f64,
    pub bound_neighbors: u64,
    pub bound_neighbors_plus_self: u64,
}

impl ConvergenceBound {
    pub fn value(&self) -> u64 {
        self.bound_neighbors.max(self.bound_neighbors_plus_self)
    }
}

pub fn convergence_bound(
    initial: &OverlapStructure,
    table: &UtilityTable,
    scenario: &Scenario,
) -> Result<ConvergenceBound> {
    let n = scenario.n_su();
    if n < 3 {
        return Err(Error::domain(format!(
            "convergence bound needs N >= 3, got {n}"
        )));
    }
    if table.n_max() < n {
        return Err(Error::domain("utility table does not reach N"));
    }
    let epsilon = 2.0 * table.u(n - 1) - table.u(n) - table.u(n - 2);
    let initial_welfare = initial.welfare(table);
    // U(0) is undefined; an isolated SU contributes nothing to the printed variant.
    let u_or_zero = |k: usize| if k == 0 { 0.0 } else { table.u(k) };
    let gap_neighbors = (0..n)
        .map(|i| u_or_zero(scenario.neighbors(i).len()))
        .sum::<f64>()
        - initial_welfare;
    let gap_neighbors_plus_self = (0..n)
        .map(|i| table.u(scenario.neighbors(i).len() + 1))
        .sum::<f64>()
        - initial_welfare;
    let ceil_ratio = |gap: f64| {
        if gap <= 0.0 {
            0
        } else {
            (gap / epsilon).ceil().min(u64::MAX as f64) as u64
        }
    };
    let b = ConvergenceBound {
        epsilon,
        gap_neighbors,
        gap_neighbors_plus_self,
        bound_neighbors: ceil_ratio(gap_neighbors),
        bound_neighbors_plus_self: ceil_ratio(gap_neighbors_plus_self),
    };
    debug!(
        "convergence bound: eps = {:e}, E = {:e} -> {}, E(+1) = {:e} -> {}",
        b.epsilon,
        b.gap_neighbors,
        b.bound_neighbors,
        b.gap_neighbors_plus_self,
        b.bound_neighbors_plus_self
    );
    Ok(b)
}

/// Result of one overlapping formation run.
#[derive(Debug, Clone)]
pub struct OverlapRun {
    pub initial: OverlapStructure,
    pub structure: OverlapStructure,
    pub trace: RunTrace,
    pub bound: Option<ConvergenceBound>,
    pub switches: usize,
    pub rounds: usize,
}

/// Greedy initialization followed by switch dynamics until a full round
/// passes without a switch. Each round visits the SUs in a fresh seeded
/// random order; a visited SU performs at most its single best switch.
pub fn run_formation(scenario: &Scenario, table: &UtilityTable, seed: u64) -> Result<OverlapRun> {
    let (initial, mut trace) = initialize_structure(scenario, table)?;
    let n = scenario.n_su();
    let bound = if n >= 3 {
        Some(convergence_bound(&initial, table, scenario)?)
    } else {
        None
    };

    let mut structure = initial.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(SWITCH_ORDER_STREAM);
    let mut order: Vec<SuId> = (0..n).collect();
    let mut switches = 0usize;
    let mut rounds = 0usize;
    loop {
        rounds += 1;
        order.shuffle(&mut rng);
        let mut switched = false;
        for &i in &order {
            let ops = enumerate_switches(&structure, scenario, i, table);
            let Some(op) = best_switch(&ops) else {
                continue;
            };
            apply_switch(&mut structure, scenario, table, &op, &mut trace)?;
            switches += 1;
            switched = true;
            if let Some(b) = bound {
                if switches as u64 > b.value() {
                    return Err(Error::BoundExceeded {
                        switches,
                        bound: b.value(),
                        trace: trace.dump(),
                    });
                }
            }
        }
        structure.reconcile_ledger(scenario)?;
        if !switched {
            break;
        }
    }

    Ok(OverlapRun {
        initial,
        structure,
        trace,
        bound,
        switches,
        rounds,
    })
}

/// Per-SU sensing thresholds from the optimal thresholds of every coalition
/// the SU belongs to: the mean under the sum-error criterion, the maximum
/// under the constrained-miss criterion.
pub fn decide_thresholds_overlap(structure: &OverlapStructure, table: &UtilityTable) -> Vec<f64> {
    (0..structure.n_su())
        .map(|i| {
            let lambdas = structure
                .memberships(i)
                .map(|j| table.lambda(structure.coalition_size(j)));
            match table.criterion {
                Criterion::SumError => {
                    let (sum, count) = lambdas.fold((0.0, 0usize), |(s, c), l| (s + l, c + 1));
                    sum / count as f64
                }
                Criterion::ConstrainedMiss => lambdas.fold(f64::NEG_INFINITY, f64::max),
            }
        })
        .collect()
}

/// One SU's entry in a structure dump.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSuRecord {
    pub id: SuId,
    pub position: (f64, f64),
    pub report_to: Vec<SuId>,
    pub coalition: Vec<SuId>,
    pub lambda: f64,
    pub used_power_w: f64,
    pub used_slots: u32,
}

/// JSON snapshot of a final overlapping structure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapSnapshot {
    pub criterion: Criterion,
    pub seed: u64,
    pub sus: Vec<OverlapSuRecord>,
}

impl OverlapSnapshot {
    pub fn new(structure: &OverlapStructure, scenario: &Scenario, table: &UtilityTable) -> Self {
        let lambdas = decide_thresholds_overlap(structure, table);
        let sus = (0..structure.n_su())
            .map(|i| OverlapSuRecord {
                id: i,
                position: scenario.positions[i],
                report_to: structure.report_to(i).iter().copied().collect(),
                coalition: structure.coalition(i).iter().copied().collect(),
                lambda: lambdas[i],
                used_power_w: structure.ledger.used_power_w[i],
                used_slots: structure.ledger.used_slots[i],
            })
            .collect();
        OverlapSnapshot {
            criterion: table.criterion,
            seed: scenario.seed,
            sus,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::NetworkConfig;
    use crate::sensing::SensingParams;

    fn table(criterion: Criterion, n_max: usize) -> UtilityTable {
        UtilityTable::build(criterion, n_max.max(2), SensingParams::default()).unwrap()
    }

    fn scenario(points: &[(f64, f64)], tweak: impl FnOnce(&mut NetworkConfig)) -> Scenario {
        let mut cfg = NetworkConfig {
            n_su: points.len(),
            ..NetworkConfig::default()
        };
        tweak(&mut cfg);
        Scenario::from_positions(cfg, 0, points.to_vec()).unwrap()
    }

    #[test]
    fn isolated_su_stays_alone() {
        let s = scenario(&[(0.0, 0.0), (9000.0, 9000.0)], |_| {});
        let t = table(Criterion::SumError, 2);
        let (cs, _) = initialize_structure(&s, &t).unwrap();
        assert!(cs.report_to(0).is_empty());
        assert_eq!(cs.coalition(0), &BTreeSet::from([0]));
    }

    #[test]
    fn single_slot_joins_nearest_only() {
        let pts = [(0.0, 0.0), (100.0, 0.0), (300.0, 0.0), (700.0, 0.0)];
        let s = scenario(&pts, |c| c.theta_su = c.theta0);
        let t = table(Criterion::SumError, 4);
        let (cs, _) = initialize_structure(&s, &t).unwrap();
        for i in 0..4 {
            assert_eq!(cs.report_to(i).len(), 1);
            assert_eq!(cs.report_to(i).iter().next(), Some(&s.neighbors(i)[0]));
        }
    }

    #[test]
    fn three_mutual_neighbors_form_full_coalitions() {
        let pts = [(0.0, 0.0), (1000.0, 0.0), (0.0, 1000.0)];
        let s = scenario(&pts, |_| {});
        let t = table(Criterion::SumError, 3);
        let (cs, trace) = initialize_structure(&s, &t).unwrap();
        for i in 0..3 {
            assert_eq!(cs.coalition_size(i), 3);
        }
        assert_eq!(trace.total_overhead_tau(), 12);
    }

    #[test]
    fn initialization_stops_at_first_unaffordable_neighbor() {
        let pts = [(0.0, 0.0), (1000.0, 0.0), (-1500.0, 0.0), (0.0, 1600.0)];
        let s = scenario(&pts, |c| c.p_su_w = 5e-3);
        let t = table(Criterion::SumError, 4);
        let (cs, _) = initialize_structure(&s, &t).unwrap();
        // costs from SU 0: 1e-3, 3.375e-3, 4.096e-3 -> prefix {1, 2}
        assert_eq!(cs.report_to(0), &BTreeSet::from([1, 2]));
    }

    #[test]
    fn initialization_does_not_skip_past_infeasible_neighbor() {
        // From SU 0: 1e-3 W to SU 1, then 1.331e-3 W to SU 2 does not fit in
        // 2e-3 W. SU 3 is farther still, so the prefix ends at SU 1.
        let pts = [(0.0, 0.0), (1000.0, 0.0), (1100.0, 0.0), (0.0, 1200.0)];
        let s = scenario(&pts, |c| c.p_su_w = 2e-3);
        let t = table(Criterion::SumError, 4);
        let (cs, _) = initialize_structure(&s, &t).unwrap();
        // nearest-first from SU 0: 1 (1e-3), 2 (1.331e-3 -> total 2.331e-3 > 2e-3) stop.
        assert_eq!(cs.report_to(0), &BTreeSet::from([1]));
    }

    /// A star: SU 0 reports to 1; 2..=5 all report to 1 as well, so |R_1| = 6.
    /// SU 6 sits next to SU 0 with nobody reporting to it.
    fn crowded_scenario() -> (Scenario, OverlapStructure) {
        let pts = [
            (0.0, 0.0),
            (500.0, 0.0),
            (500.0, 500.0),
            (1000.0, 0.0),
            (500.0, -500.0),
            (800.0, 300.0),
            (-500.0, 0.0),
        ];
        let s = scenario(&pts, |_| {});
        let cs = OverlapStructure::from_report_sets(
            &s,
            vec![vec![1], vec![], vec![1], vec![1], vec![1], vec![1], vec![]],
        )
        .unwrap();
        (s, cs)
    }

    #[test]
    fn switch_from_large_to_small_coalition_is_offered() {
        let (s, cs) = crowded_scenario();
        let t = table(Criterion::SumError, 7);
        assert_eq!(cs.coalition_size(1), 6);
        let ops = enumerate_switches(&cs, &s, 0, &t);
        let to6 = ops.iter().find(|o| o.join == 6).expect("switch to R_6");
        assert_eq!(to6.leave, 1);
        assert!((to6.gain - (t.phi(2) - t.phi(6))).abs() < 1e-15);
        assert!(!is_switch_stable(&cs, &s, &t));
    }

    #[test]
    fn equal_payoff_switch_is_not_offered() {
        // |R_x| = 3, |R_y| = 2: phi(3) > phi(3) is false.
        let pts = [
            (0.0, 0.0),
            (500.0, 0.0),
            (600.0, 200.0),
            (-500.0, 0.0),
            (-600.0, 200.0),
        ];
        let s = scenario(&pts, |_| {});
        let cs =
            OverlapStructure::from_report_sets(&s, vec![vec![1], vec![], vec![1], vec![], vec![3]])
                .unwrap();
        assert_eq!(cs.coalition_size(1), 3);
        assert_eq!(cs.coalition_size(3), 2);
        let t = table(Criterion::SumError, 5);
        assert!(enumerate_switches(&cs, &s, 0, &t)
            .iter()
            .all(|o| o.join != 3));
    }

    #[test]
    fn unaffordable_switch_is_not_offered() {
        // Budget 2e-3 W (radius ~1260 m). SU 0 already spends 1.729e-3 W on
        // SUs 1 and 2; replacing either by SU 6 at 1200 m costs 1.728e-3 W.
        let pts = [
            (0.0, 0.0),
            (1000.0, 0.0),
            (0.0, 900.0),
            (1000.0, 500.0),
            (1500.0, 0.0),
            (1000.0, -500.0),
            (-1200.0, 0.0),
        ];
        let s = scenario(&pts, |c| c.p_su_w = 2e-3);
        let cs = OverlapStructure::from_report_sets(
            &s,
            vec![
                vec![1, 2],
                vec![],
                vec![],
                vec![1],
                vec![1],
                vec![1],
                vec![],
            ],
        )
        .unwrap();
        assert!(s.is_neighbor(0, 6));
        let t = table(Criterion::SumError, 7);
        assert!(t.phi(2) > t.phi(5));
        let ops = enumerate_switches(&cs, &s, 0, &t);
        assert!(ops.iter().all(|o| o.join != 6), "{ops:?}");
    }

    #[test]
    fn apply_switch_accounts_overhead_and_welfare() {
        let (s, mut cs) = crowded_scenario();
        let t = table(Criterion::SumError, 7);
        let mut trace = RunTrace::new();
        let ops = enumerate_switches(&cs, &s, 0, &t);
        let op = *ops.iter().find(|o| o.join == 6).unwrap();
        let before = cs.welfare(&t);
        let sum_before = cs.sum_size();
        apply_switch(&mut cs, &s, &t, &op, &mut trace).unwrap();
        // |R_x| = 6, |R_y| = 1 -> 2(6 + 1 - 1) = 12
        assert_eq!(trace.total_overhead_tau(), 12);
        assert!((cs.welfare(&t) - before - op.gain).abs() < 1e-12);
        assert_eq!(cs.sum_size(), sum_before);
        assert!(matches!(
            apply_switch(&mut cs, &s, &t, &op, &mut trace),
            Err(Error::StaleSwitch(_))
        ));
    }

    #[test]
    fn switch_overhead_three_and_one() {
        let pts = [(0.0, 0.0), (500.0, 0.0), (500.0, 400.0), (-500.0, 0.0)];
        let s = scenario(&pts, |_| {});
        let mut cs =
            OverlapStructure::from_report_sets(&s, vec![vec![1], vec![], vec![1], vec![]]).unwrap();
        let t = table(Criterion::ConstrainedMiss, 4);
        let op = *enumerate_switches(&cs, &s, 0, &t)
            .iter()
            .find(|o| o.join == 3)
            .unwrap();
        let mut trace = RunTrace::new();
        apply_switch(&mut cs, &s, &t, &op, &mut trace).unwrap();
        assert_eq!(trace.total_overhead_tau(), 6);
    }

    #[test]
    fn best_switch_tie_breaks() {
        let mk = |leave, join, gain, power_delta_w| SwitchOp {
            actor: 0,
            leave,
            join,
            gain,
            power_delta_w,
        };
        let ops = [
            mk(1, 5, 0.2, 0.0),
            mk(2, 3, 0.2, 0.01),
            mk(4, 3, 0.2, 0.0),
            mk(1, 2, 0.1, 0.0),
        ];
        let best = best_switch(&ops).unwrap();
        assert_eq!((best.leave, best.join), (4, 3));
        assert!(best_switch(&[]).is_none());
    }

    #[test]
    fn stable_initial_structure_needs_no_switches() {
        let pts = [(0.0, 0.0), (1000.0, 0.0), (0.0, 1000.0)];
        let s = scenario(&pts, |_| {});
        let t = table(Criterion::SumError, 3);
        let run = run_formation(&s, &t, 1).unwrap();
        assert_eq!(run.switches, 0);
        assert_eq!(run.structure, run.initial);
        assert_eq!(run.bound.unwrap().value(), 0);
    }

    #[test]
    fn formation_is_deterministic_and_stable() {
        let cfg = NetworkConfig {
            n_su: 30,
            ..NetworkConfig::default()
        };
        let s = crate::network::generate_scenario(&cfg, 17).unwrap();
        let t = table(Criterion::SumError, 30);
        let a = run_formation(&s, &t, 5).unwrap();
        let b = run_formation(&s, &t, 5).unwrap();
        assert_eq!(a.structure, b.structure);
        assert_eq!(a.trace, b.trace);
        assert!(is_switch_stable(&a.structure, &s, &t));
        assert_eq!(a.structure.sum_size(), a.initial.sum_size());
        assert!(a.switches as u64 <= a.bound.unwrap().value());
    }

    #[test]
    fn bound_needs_three_sus() {
        let s = scenario(&[(0.0, 0.0), (10.0, 0.0)], |_| {});
        let t = table(Criterion::SumError, 2);
        let (cs, _) = initialize_structure(&s, &t).unwrap();
        assert!(convergence_bound(&cs, &t, &s).is_err());
    }

    #[test]
    fn epsilon_positive_at_ten() {
        let cfg = NetworkConfig {
            n_su: 10,
            ..NetworkConfig::default()
        };
        let s = crate::network::generate_scenario(&cfg, 2).unwrap();
        for c in [Criterion::SumError, Criterion::ConstrainedMiss] {
            let t = table(c, 10);
            let (cs, _) = initialize_structure(&s, &t).unwrap();
            assert!(convergence_bound(&cs, &t, &s).unwrap().epsilon > 0.0);
        }
    }

    #[test]
    fn singletons_without_neighbors_are_stable() {
        let s = scenario(&[(0.0, 0.0), (9000.0, 0.0), (0.0, 9000.0)], |_| {});
        let t = table(Criterion::SumError, 3);
        assert!(is_switch_stable(&OverlapStructure::singletons(&s), &s, &t));
    }

    #[test]
    fn thresholds_follow_membership() {
        let t = table(Criterion::ConstrainedMiss, 7);
        let (_, cs) = crowded_scenario();
        let l = decide_thresholds_overlap(&cs, &t);
        // SU 6: only its own singleton coalition
        assert_eq!(l[6], t.lambda(1));
        // SU 0 belongs to R_0 (size 1) and R_1 (size 6); max picks the smaller coalition
        assert_eq!(l[0], t.lambda(1));

        let t = table(Criterion::SumError, 7);
        let l = decide_thresholds_overlap(&cs, &t);
        assert!((l[0] - 0.5 * (t.lambda(1) + t.lambda(6))).abs() < 1e-15);
    }

    #[test]
    fn constrained_threshold_takes_smaller_coalition() {
        // SU 0 in coalitions of sizes 2 (its own) and 5 (R_1).
        let pts = [
            (0.0, 0.0),
            (500.0, 0.0),
            (500.0, 500.0),
            (1000.0, 0.0),
            (500.0, -500.0),
            (-500.0, 0.0),
        ];
        let s = scenario(&pts, |_| {});
        let cs = OverlapStructure::from_report_sets(
            &s,
            vec![vec![1], vec![], vec![1], vec![1], vec![1], vec![0]],
        )
        .unwrap();
        assert_eq!(cs.coalition_size(0), 2);
        assert_eq!(cs.coalition_size(1), 5);
        let t = table(Criterion::ConstrainedMiss, 6);
        assert_eq!(decide_thresholds_overlap(&cs, &t)[0], t.lambda(2));
    }

    #[test]
    fn snapshot_lists_every_su() {
        let (s, cs) = crowded_scenario();
        let t = table(Criterion::SumError, 7);
        let snap = OverlapSnapshot::new(&cs, &s, &t);
        assert_eq!(snap.sus.len(), 7);
        assert_eq!(snap.sus[1].coalition, vec![0, 1, 2, 3, 4, 5]);
        let json = serde_json::to_string(&snap).unwrap();
        let back: OverlapSnapshot = serde_json::from_str(&json).unwrap();
        assert_eq!(back, snap);
    }
}
