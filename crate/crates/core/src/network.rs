//! Network geometry, neighbor discovery and the reporting resource model.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Identifier of a secondary user, `0..n_su`.
pub type SuId = usize;

/// Budget slack applied to power comparisons, in watts.
pub const POWER_SLACK_W: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NetworkConfig {
    /// Number of SUs.
    pub n_su: usize,
    /// Side of the square deployment area, meters.
    pub side_m: f64,
    /// Distance from the PU to the area, meters.
    pub pu_distance_m: f64,
    /// Path-loss constant.
    pub kappa: f64,
    /// Path-loss exponent.
    pub mu: f64,
    /// Noise power, watts.
    pub noise_w: f64,
    /// Minimum received SNR of a report (linear).
    pub gamma0: f64,
    /// Time-frequency slots consumed by one report.
    pub theta0: u32,
    /// Reporting power budget per SU, watts.
    pub p_su_w: f64,
    /// Slot budget per SU.
    pub theta_su: u32,
}

impl Default for NetworkConfig {
    fn default() -> Self {
        NetworkConfig {
            n_su: 30,
            side_m: 10_000.0,
            pu_distance_m: 150_000.0,
            kappa: 1.0,
            mu: 3.0,
            noise_w: 1e-12,
            gamma0: 1.0,
            theta0: 1,
            p_su_w: 0.1,
            theta_su: 10,
        }
    }
}

impl NetworkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_su < 1 {
            return Err(Error::Config("n_su must be at least 1".into()));
        }
        let reals = [
            ("side_m", self.side_m),
            ("pu_distance_m", self.pu_distance_m),
            ("kappa", self.kappa),
            ("mu", self.mu),
            ("noise_w", self.noise_w),
            ("gamma0", self.gamma0),
            ("p_su_w", self.p_su_w),
        ];
        for (name, v) in reals {
            if !(v > 0.0) || v.is_nan() {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if self.theta0 == 0 {
            return Err(Error::Config("theta0 must be positive".into()));
        }
        if self.pu_distance_m < 10.0 * self.side_m {
            warn!(
                "PU distance {} m is not much larger than the area side {} m; \
                 the common-SNR model assumes it is",
                self.pu_distance_m, self.side_m
            );
        }
        Ok(())
    }

    /// Neighbor-discovery radius: the distance at which a report sent with
    /// the full budget `P_SU` still arrives at SNR `γ_0`.
    pub fn radius_m(&self) -> f64 {
        (self.kappa * self.p_su_w / (self.gamma0 * self.noise_w)).powf(1.0 / self.mu)
    }

    /// Power needed to deliver one report over `distance_m`.
    #[inline]
    pub fn cost_at(&self, distance_m: f64) -> f64 {
        self.gamma0 * self.noise_w * distance_m.powf(self.mu) / self.kappa
    }

    /// Largest number of reports the slot budget admits.
    pub fn max_reports(&self) -> usize {
        (self.theta_su / self.theta0) as usize
    }
}

/// A generated network: positions, pairwise distances and neighbor lists.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "ScenarioSnapshot", try_from = "ScenarioSnapshot")]
pub struct Scenario {
    pub config: NetworkConfig,
    pub seed: u64,
    pub positions: Vec<(f64, f64)>,
    dist: Vec<Vec<f64>>,
    neighbors: Vec<Vec<SuId>>,
    pub radius_m: f64,
}

/// The serialized form of a [`Scenario`]; everything else is derived.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScenarioSnapshot {
    pub seed: u64,
    pub config: NetworkConfig,
    pub positions: Vec<(f64, f64)>,
}

impl From<Scenario> for ScenarioSnapshot {
    fn from(s: Scenario) -> Self {
        ScenarioSnapshot {
            seed: s.seed,
            config: s.config,
            positions: s.positions,
        }
    }
}

impl TryFrom<ScenarioSnapshot> for Scenario {
    type Error = Error;

    fn try_from(s: ScenarioSnapshot) -> Result<Self> {
        Scenario::from_positions(s.config, s.seed, s.positions)
    }
}

/// Draws `n_su` positions uniformly on the square using ChaCha8 seeded with
/// `seed`, then derives distances and neighbor sets.
pub fn generate_scenario(config: &NetworkConfig, seed: u64) -> Result<Scenario> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let side = config.side_m;
    let positions = (0..config.n_su)
        .map(|_| (rng.gen::<f64>() * side, rng.gen::<f64>() * side))
        .collect();
    Scenario::from_positions(config.clone(), seed, positions)
}

impl Scenario {
    pub fn from_positions(
        config: NetworkConfig,
        seed: u64,
        positions: Vec<(f64, f64)>,
    ) -> Result<Self> {
        config.validate()?;
        if positions.len() != config.n_su {
            return Err(Error::Config(format!(
                "expected {} positions, got {}",
                config.n_su,
                positions.len()
            )));
        }
        let n = positions.len();
        let mut dist = vec![vec![0.0; n]; n];
        for i in 0..n {
            for j in (i + 1)..n {
                let (xi, yi) = positions[i];
                let (xj, yj) = positions[j];
                let d = (xi - xj).hypot(yi - yj);
                dist[i][j] = d;
                dist[j][i] = d;
            }
        }

        let radius_m = config.radius_m();
        let neighbors = (0..n)
            .map(|i| {
                let mut ns: Vec<SuId> = (0..n)
                    .filter(|&j| j != i && dist[i][j] <= radius_m)
                    .collect();
                // nearest first, ties by id
                ns.sort_by(|&a, &b| dist[i][a].total_cmp(&dist[i][b]).then(a.cmp(&b)));
                ns
            })
            .collect();

        Ok(Scenario {
            config,
            seed,
            positions,
            dist,
            neighbors,
            radius_m,
        })
    }

    pub fn n_su(&self) -> usize {
        self.positions.len()
    }

    #[inline]
    pub fn distance(&self, i: SuId, j: SuId) -> f64 {
        self.dist[i][j]
    }

    /// Neighbors of `i`, nearest first (ties broken by id).
    pub fn neighbors(&self, i: SuId) -> &[SuId] {
        &self.neighbors[i]
    }

    pub fn is_neighbor(&self, i: SuId, j: SuId) -> bool {
        i != j && self.dist[i][j] <= self.radius_m
    }

    /// Unchecked report cost in watts.
    #[inline]
    pub(crate) fn cost(&self, i: SuId, j: SuId) -> f64 {
        self.config.cost_at(self.dist[i][j])
    }

    /// Power SU `i` spends to deliver its report to SU `j`:
    /// `γ_0 σ_u² d_ij^μ / κ`.
    pub fn report_cost_w(&self, i: SuId, j: SuId) -> Result<f64> {
        let n = self.n_su();
        if i >= n || j >= n {
            return Err(Error::domain(format!(
                "SU id out of range: ({i}, {j}) with N = {n}"
            )));
        }
        if i == j {
            return Err(Error::domain(format!("SU {i} cannot report to itself")));
        }
        Ok(self.cost(i, j))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

/// Per-SU reporting resource usage against the power and slot budgets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResourceLedger {
    pub p_su_w: f64,
    pub theta_su: u32,
    pub used_power_w: Vec<f64>,
    pub used_slots: Vec<u32>,
}

impl ResourceLedger {
    pub fn new(n_su: usize, config: &NetworkConfig) -> Self {
        ResourceLedger {
            p_su_w: config.p_su_w,
            theta_su: config.theta_su,
            used_power_w: vec![0.0; n_su],
            used_slots: vec![0; n_su],
        }
    }

    /// Recomputes usage from scratch for the given report-to sets.
    pub fn from_report_sets<'a, I>(scenario: &Scenario, report_to: I) -> Self
    where
        I: IntoIterator<Item = (SuId, &'a [SuId])>,
    {
        let mut ledger = ResourceLedger::new(scenario.n_su(), &scenario.config);
        let theta0 = scenario.config.theta0;
        for (i, targets) in report_to {
            ledger.used_power_w[i] = targets
                .iter()
                .fold(0.0, |acc, &j| acc + scenario.cost(i, j));
            ledger.used_slots[i] = targets.len() as u32 * theta0;
        }
        ledger
    }

    /// Whether SU `i` stays within both budgets after the given change.
    /// Negative deltas are refunds.
    pub fn can_afford(&self, i: SuId, extra_power_w: f64, extra_slots: i64) -> bool {
        let power = self.used_power_w[i] + extra_power_w;
        let slots = self.used_slots[i] as i64 + extra_slots;
        power <= self.p_su_w + POWER_SLACK_W && (0..=self.theta_su as i64).contains(&slots)
    }

    pub fn remaining_power_w(&self, i: SuId) -> f64 {
        self.p_su_w - self.used_power_w[i]
    }

    pub(crate) fn apply(&mut self, i: SuId, power_w: f64, slots: i64) {
        self.used_power_w[i] = (self.used_power_w[i] + power_w).max(0.0);
        self.used_slots[i] = (self.used_slots[i] as i64 + slots) as u32;
    }

    /// Largest per-SU power discrepancy against another ledger, or infinity
    /// when slot counts differ.
    pub fn drift(&self, other: &ResourceLedger) -> f64 {
        if self.used_slots != other.used_slots {
            return f64::INFINITY;
        }
        self.used_power_w
            .iter()
            .zip(&other.used_power_w)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Checks every SU against both budgets.
    pub fn within_budgets(&self) -> bool {
        self.used_power_w
            .iter()
            .all(|&p| (0.0..=self.p_su_w + POWER_SLACK_W).contains(&p))
            && self.used_slots.iter().all(|&s| s <= self.theta_su)
    }

    /// Mean fraction of the power budget in use.
    pub fn power_utilization(&self) -> f64 {
        mean(self.used_power_w.iter().map(|p| (p / self.p_su_w).min(1.0)))
    }

    /// Mean fraction of the slot budget in use.
    pub fn bandwidth_utilization(&self) -> f64 {
        if self.theta_su == 0 {
            return 0.0;
        }
        mean(
            self.used_slots
                .iter()
                .map(|&s| s as f64 / self.theta_su as f64),
        )
    }
}

fn mean(values: impl ExactSizeIterator<Item = f64>) -> f64 {
    let n = values.len();
    if n == 0 {
        0.0
    } else {
        values.sum::<f64>() / n as f64
    }
}
