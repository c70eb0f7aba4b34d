//! Non-overlapping coalition formation by merging.
//!
//! The SUs start as singletons. Each coalition head keeps a tag per
//! neighboring head; a head with a live tag sends its whole coalition's
//! information to that head, which merges the two coalitions if every member
//! can afford to report to every other member. Failed tries kill the tag in
//! both directions and tags are never revived, so the process stops after at
//! most N² tries.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{ResourceLedger, Scenario, SuId, POWER_SLACK_W};
use crate::sensing::{Criterion, UtilityTable};
use crate::trace::{EventKind, RunTrace};

/// ChaCha stream used for picking tries.
const MERGE_STREAM: u64 = 2;

/// Disjoint coalitions covering every SU, keyed by head, plus the merge
/// tags between neighboring heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Partition {
    coalitions: BTreeMap<SuId, BTreeSet<SuId>>,
    head_of: Vec<SuId>,
    tags: BTreeMap<(SuId, SuId), bool>,
}

impl Partition {
    /// All singletons, with a live tag from every SU to each neighbor.
    pub fn singletons(scenario: &Scenario) -> Self {
        let n = scenario.n_su();
        let tags = (0..n)
            .flat_map(|i| scenario.neighbors(i).iter().map(move |&j| ((i, j), true)))
            .collect();
        Partition {
            coalitions: (0..n).map(|i| (i, BTreeSet::from([i]))).collect(),
            head_of: (0..n).collect(),
            tags,
        }
    }

    /// Builds a tag-free partition from explicit coalitions; the first
    /// member listed becomes the head.
    pub fn from_coalitions(n_su: usize, coalitions: &[Vec<SuId>]) -> Result<Self> {
        let mut head_of = vec![usize::MAX; n_su];
        let mut map = BTreeMap::new();
        for c in coalitions {
            let Some(&head) = c.first() else {
                return Err(Error::domain("empty coalition"));
            };
            for &k in c {
                if k >= n_su || head_of[k] != usize::MAX {
                    return Err(Error::domain(format!(
                        "SU {k} is out of range or listed twice"
                    )));
                }
                head_of[k] = head;
            }
            map.insert(head, c.iter().copied().collect());
        }
        if let Some(k) = head_of.iter().position(|&h| h == usize::MAX) {
            return Err(Error::domain(format!("SU {k} is in no coalition")));
        }
        Ok(Partition {
            coalitions: map,
            head_of,
            tags: BTreeMap::new(),
        })
    }

    pub fn n_su(&self) -> usize {
        self.head_of.len()
    }

    pub fn heads(&self) -> impl Iterator<Item = SuId> + '_ {
        self.coalitions.keys().copied()
    }

    pub fn head_of(&self, i: SuId) -> SuId {
        self.head_of[i]
    }

    /// Coalition headed by `head`.
    pub fn coalition(&self, head: SuId) -> Option<&BTreeSet<SuId>> {
        self.coalitions.get(&head)
    }

    /// Coalition containing SU `i`.
    pub fn coalition_of(&self, i: SuId) -> &BTreeSet<SuId> {
        &self.coalitions[&self.head_of[i]]
    }

    pub fn coalitions(&self) -> impl Iterator<Item = &BTreeSet<SuId>> {
        self.coalitions.values()
    }

    pub fn n_coalitions(&self) -> usize {
        self.coalitions.len()
    }

    /// Current value of the tag from head `i` toward head `j`, if any.
    pub fn tag(&self, i: SuId, j: SuId) -> Option<bool> {
        self.tags.get(&(i, j)).copied()
    }

    /// Live `(sender, receiver)` tags in ascending order.
    pub fn live_tags(&self) -> Vec<(SuId, SuId)> {
        self.tags
            .iter()
            .filter(|(_, &live)| live)
            .map(|(&k, _)| k)
            .collect()
    }

    /// `Σ_C |C|(|C|-1)`, the number of reports per sensing period.
    pub fn report_count(&self) -> usize {
        self.coalitions
            .values()
            .map(|c| c.len() * (c.len() - 1))
            .sum()
    }

    /// Social welfare `Σ_C |C|·U(|C|)`.
    pub fn welfare(&self, table: &UtilityTable) -> f64 {
        self.coalitions
            .values()
            .map(|c| c.len() as f64 * table.u(c.len()))
            .sum()
    }

    /// Resource usage when every member reports to every other member.
    pub fn ledger(&self, scenario: &Scenario) -> ResourceLedger {
        let sets: Vec<Vec<SuId>> = (0..self.n_su())
            .map(|i| {
                self.coalition_of(i)
                    .iter()
                    .copied()
                    .filter(|&k| k != i)
                    .collect()
            })
            .collect();
        ResourceLedger::from_report_sets(
            scenario,
            sets.iter().enumerate().map(|(i, s)| (i, s.as_slice())),
        )
    }

    /// Disjoint cover, heads inside their coalitions, tags only between
    /// current heads that are neighbors.
    pub fn check(&self, scenario: &Scenario) -> Result<()> {
        let mut seen = vec![false; self.n_su()];
        for (&head, c) in &self.coalitions {
            if !c.contains(&head) {
                return Err(Error::Numeric(format!("head {head} outside its coalition")));
            }
            for &k in c {
                if std::mem::replace(&mut seen[k], true) || self.head_of[k] != head {
                    return Err(Error::Numeric(format!("SU {k} is in two coalitions")));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Numeric("partition does not cover every SU".into()));
        }
        for &(i, j) in self.tags.keys() {
            if !self.coalitions.contains_key(&i)
                || !self.coalitions.contains_key(&j)
                || !scenario.is_neighbor(i, j)
            {
                return Err(Error::Numeric(format!("stale tag {i} -> {j}")));
            }
        }
        Ok(())
    }
}

/// Merge of the coalition headed by `src` into the one headed by `dst`;
/// `dst` heads the result.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MergeOp {
    pub src: SuId,
    pub dst: SuId,
}

/// Whether two disjoint coalitions may merge: every pair across the union
/// are neighbors, and every member can afford reporting to all others in
/// power and in slots.
pub fn merge_feasible(c1: &BTreeSet<SuId>, c2: &BTreeSet<SuId>, scenario: &Scenario) -> bool {
    let cfg = &scenario.config;
    let merged: Vec<SuId> = c1.union(c2).copied().collect();
    if (merged.len() as u64 - 1) * cfg.theta0 as u64 > cfg.theta_su as u64 {
        return false;
    }
    let mutual = c1
        .iter()
        .all(|&a| c2.iter().all(|&b| scenario.is_neighbor(a, b)));
    if !mutual {
        return false;
    }
    merged.iter().all(|&i| {
        let power: f64 = merged
            .iter()
            .filter(|&&j| j != i)
            .fold(0.0, |acc, &j| acc + scenario.cost(i, j));
        power <= cfg.p_su_w + POWER_SLACK_W
    })
}

/// Result of one merge formation run.
#[derive(Debug, Clone)]
pub struct MergeRun {
    pub partition: Partition,
    pub trace: RunTrace,
    pub merges: usize,
    pub attempts: usize,
}

/// Merge dynamics from all singletons until no head holds a live tag. Each
/// step picks a live `(sender, receiver)` tag uniformly at random.
pub fn run_merge_formation(
    scenario: &Scenario,
    table: &UtilityTable,
    seed: u64,
) -> Result<MergeRun> {
    let n = scenario.n_su();
    if table.n_max() < n {
        return Err(Error::domain(format!(
            "utility table covers sizes up to {}, network has {n} SUs",
            table.n_max()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(MERGE_STREAM);
    let mut p = Partition::singletons(scenario);
    let mut trace = RunTrace::new();
    let mut merges = 0usize;
    let mut attempts = 0usize;

    loop {
        let live = p.live_tags();
        if live.is_empty() {
            break;
        }
        let (i, j) = live[rng.gen_range(0..live.len())];
        attempts += 1;
        let c = &p.coalitions[&i];
        let c_prime = &p.coalitions[&j];
        let try_cost: u64 = c
            .iter()
            .map(|&k| 2 * scenario.neighbors(k).len() as u64 + 1)
            .sum();
        let welfare = p.welfare(table);
        trace.push(EventKind::Try, try_cost, welfare);

        if merge_feasible(c, c_prime, scenario) {
            let merge_cost = (2 * c_prime.len() as u64 - 1) * c.len() as u64;
            apply_merge(&mut p, MergeOp { src: i, dst: j });
            merges += 1;
            let after = p.welfare(table);
            if after < welfare {
                return Err(Error::Numeric(format!(
                    "welfare fell across merge {i} -> {j}: {welfare} -> {after}"
                )));
            }
            trace.push(EventKind::Merge, merge_cost, after);
        } else {
            p.tags.insert((i, j), false);
            p.tags.insert((j, i), false);
        }
        debug_assert!(p.check(scenario).is_ok());
    }

    p.check(scenario)?;
    if merges + 1 > n.max(1) || attempts > n * n {
        return Err(Error::Numeric(format!(
            "merge formation exceeded its limits: {merges} merges, {attempts} tries"
        )));
    }
    Ok(MergeRun {
        partition: p,
        trace,
        merges,
        attempts,
    })
}

fn apply_merge(p: &mut Partition, op: MergeOp) {
    let MergeOp { src, dst } = op;
    let moved = p.coalitions.remove(&src).unwrap_or_default();
    for &k in &moved {
        p.head_of[k] = dst;
    }
    p.coalitions.entry(dst).or_default().extend(moved);
    p.tags.retain(|&(a, b), _| a != src && b != src);
}

/// Every member of a coalition uses the optimal threshold for its size.
pub fn decide_thresholds_partition(partition: &Partition, table: &UtilityTable) -> Vec<f64> {
    (0..partition.n_su())
        .map(|i| table.lambda(partition.coalition_of(i).len()))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionCoalition {
    pub head: SuId,
    pub members: Vec<SuId>,
    pub lambda: f64,
}

/// JSON snapshot of a final partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionSnapshot {
    pub criterion: Criterion,
    pub seed: u64,
    pub positions: Vec<(f64, f64)>,
    pub coalitions: Vec<PartitionCoalition>,
    pub lambda: Vec<f64>,
}

impl PartitionSnapshot {
    pub fn new(partition: &Partition, scenario: &Scenario, table: &UtilityTable) -> Self {
        PartitionSnapshot {
            criterion: table.criterion,
            seed: scenario.seed,
            positions: scenario.positions.clone(),
            coalitions: partition
                .coalitions
                .iter()
                .map(|(&head, c)| PartitionCoalition {
                    head,
                    members: c.iter().copied().collect(),
                    lambda: table.lambda(c.len()),
                })
                .collect(),
            lambda: decide_thresholds_partition(partition, table),
        }
    }
}
