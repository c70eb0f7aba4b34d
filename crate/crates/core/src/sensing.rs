//! Sensing mathematics: energy-detector error probabilities, AND-rule
//! fusion, the optimal common threshold of a coalition under each criterion,
//! and the per-size utility table the formation games are played on.
//!
//! Every coalition utility depends only on the coalition size `n`. With the
//! AND rule and a common threshold `λ`, a coalition of size `n` has
//! `Q_f = A(λ)^n` and `Q_m = 1 - B(λ)^n`, where `A(λ) = Q((λ-1)√N_s)` is the
//! local false-alarm probability and `B(λ) = Q((λ/(1+γ)-1)√N_s)` the local
//! detection probability.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{self, q, Probability, Tolerance};

/// Detector and fusion parameters shared by every SU.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensingParams {
    /// Linear average received SNR at the SUs.
    pub gamma: f64,
    /// Number of samples per sensing period.
    pub n_samples: u32,
    /// Cap on the fused false-alarm probability (constrained criterion only).
    pub alpha: f64,
}

impl Default for SensingParams {
    fn default() -> Self {
        SensingParams {
            gamma: 10f64.powf(-15.0 / 10.0),
            n_samples: 10_000,
            alpha: 0.1,
        }
    }
}

impl SensingParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::Config(format!(
                "gamma must be positive, got {}",
                self.gamma
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::Config("n_samples must be at least 1".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(Error::Config(format!(
                "alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }

    #[inline]
    fn sqrt_ns(&self) -> f64 {
        (self.n_samples as f64).sqrt()
    }
}

/// Which sensing objective the coalition utility captures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Criterion {
    /// Minimize `Q_m + Q_f`; utility `2 - min(Q_m + Q_f)`.
    SumError,
    /// Minimize `Q_m` subject to `Q_f <= α`; utility `1 - min Q_m`.
    ConstrainedMiss,
}

impl Criterion {
    pub fn as_str(self) -> &'static str {
        match self {
            Criterion::SumError => "SUM_ERROR",
            Criterion::ConstrainedMiss => "CONSTRAINED_MISS",
        }
    }

    /// Upper limit of the utility range.
    pub fn utility_ceiling(self) -> f64 {
        match self {
            Criterion::SumError => 2.0,
            Criterion::ConstrainedMiss => 1.0,
        }
    }
}

impl std::fmt::Display for Criterion {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

fn check_threshold(lambda: f64) -> Result<()> {
    if lambda > 0.0 && lambda.is_finite() {
        Ok(())
    } else {
        Err(Error::domain(format!(
            "threshold must be positive, got {lambda}"
        )))
    }
}

/// Local detection probability `1 - P_m(λ)`.
#[inline]
pub(crate) fn detection(lambda: f64, params: &SensingParams) -> f64 {
    q((lambda / (1.0 + params.gamma) - 1.0) * params.sqrt_ns())
}

#[inline]
pub(crate) fn false_alarm(lambda: f64, params: &SensingParams) -> f64 {
    q((lambda - 1.0) * params.sqrt_ns())
}

/// Missed-detection probability of a single energy detector with threshold
/// `lambda` (in units of the noise power).
pub fn local_miss_prob(lambda: f64, params: &SensingParams) -> Result<Probability> {
    check_threshold(lambda)?;
    Ok(Probability::saturating(1.0 - detection(lambda, params)))
}

/// False-alarm probability of a single energy detector.
pub fn local_false_alarm_prob(lambda: f64, params: &SensingParams) -> Result<Probability> {
    check_threshold(lambda)?;
    Ok(Probability::saturating(false_alarm(lambda, params)))
}

/// Product of probabilities, switching to log space when a factor is small
/// enough for the running product to underflow.
pub(crate) fn product(factors: impl Iterator<Item = f64> + Clone) -> f64 {
    if factors.clone().any(|p| p < 1e-300) {
        if factors.clone().any(|p| p == 0.0) {
            return 0.0;
        }
        factors.map(f64::ln).sum::<f64>().exp()
    } else {
        factors.product()
    }
}

/// Fused missed-detection probability under the AND rule:
/// `1 - Π (1 - P_m,j)`.
pub fn fused_and_miss(miss_probs: &[Probability]) -> Result<Probability> {
    if miss_probs.is_empty() {
        return Err(Error::domain("fused_and_miss needs at least one detector"));
    }
    let all_detect = product(miss_probs.iter().map(|p| 1.0 - p.get()));
    Ok(Probability::saturating(1.0 - all_detect))
}

/// Fused false-alarm probability under the AND rule: `Π P_f,j`.
pub fn fused_and_false_alarm(fa_probs: &[Probability]) -> Result<Probability> {
    if fa_probs.is_empty() {
        return Err(Error::domain(
            "fused_and_false_alarm needs at least one detector",
        ));
    }
    Ok(Probability::saturating(product(
        fa_probs.iter().map(|p| p.get()),
    )))
}

fn check_size(n: usize) -> Result<()> {
    if n == 0 {
        Err(Error::domain("coalition size must be at least 1"))
    } else {
        Ok(())
    }
}

/// `Q_f + Q_m - 1 = A(λ)^n - B(λ)^n` for a homogeneous coalition of size `n`.
pub fn sum_error_objective(lambda: f64, n: usize, params: &SensingParams) -> f64 {
    let n = n as i32;
    false_alarm(lambda, params).powi(n) - detection(lambda, params).powi(n)
}

/// Log form of the stationarity condition of [`sum_error_objective`]:
/// `(n-1) ln(A/B) + ln(1+γ) - (N_s/2)[(λ-1)² - (λ/(1+γ)-1)²]`.
/// Positive left of the optimum, negative right of it.
fn stationarity(lambda: f64, n: usize, params: &SensingParams) -> f64 {
    let g = params.gamma;
    let ns = params.n_samples as f64;
    let ratio_term = if n > 1 {
        (n - 1) as f64 * (false_alarm(lambda, params) / detection(lambda, params)).ln()
    } else {
        0.0
    };
    let a = lambda - 1.0;
    let b = lambda / (1.0 + g) - 1.0;
    ratio_term + (1.0 + g).ln() - 0.5 * ns * (a * a - b * b)
}

const ROOT_TOL: f64 = 1e-15;
const GOLDEN_TOL: f64 = 1e-12;

/// Upper end of the threshold search interval, `1 + γ - δ` with `δ = 1e-9 γ`.
fn lambda_a_upper(params: &SensingParams) -> f64 {
    1.0 + params.gamma - 1e-9 * params.gamma
}

/// Optimal common threshold for the sum-error criterion, found as the root
/// of the stationarity equation.
///
/// The search starts on `(1 + δ, 1 + γ - δ)`. Under the AND rule the optimum
/// drops below 1 once the coalition is large enough (around `n = 8` at the
/// default parameters), so the lower end is pushed down in steps of `γ`
/// until the equation changes sign. If it never does, the direct minimizer
/// is used instead.
pub fn lambda_a(n: usize, params: &SensingParams) -> Result<f64> {
    check_size(n)?;
    params.validate()?;
    let g = params.gamma;
    let hi = lambda_a_upper(params);
    let f = |l: f64| stationarity(l, n, params);
    let f_hi = f(hi);

    let mut lo = 1.0 + 1e-9 * g;
    let mut step = 1.0;
    loop {
        let f_lo = f(lo);
        if f_lo.is_finite() && f_hi.is_finite() && f_lo > 0.0 && f_hi < 0.0 {
            return math::find_root(f, lo, hi, Tolerance::new(ROOT_TOL)?);
        }
        let next = 1.0 - step * g;
        if next <= 0.0 || !f_lo.is_finite() {
            break;
        }
        lo = next;
        step *= 2.0;
    }

    warn!("stationarity equation not bracketed for n = {n}; falling back to direct minimization");
    lambda_a_by_minimization(n, params).map_err(|e| {
        Error::Numeric(format!(
            "lambda_a(n = {n}): no sign change down to λ = {lo}, f(hi = {hi}) = {f_hi}; \
             minimization fallback failed: {e}"
        ))
    })
}

/// Optimal sum-error threshold by golden-section minimization of
/// [`sum_error_objective`], without using the stationarity equation.
pub fn lambda_a_by_minimization(n: usize, params: &SensingParams) -> Result<f64> {
    check_size(n)?;
    params.validate()?;
    let g = params.gamma;
    let hi = lambda_a_upper(params);
    let mut lo = (1.0 - 3.0 * g).max(1e-9 * g);
    loop {
        let (x, _) = math::minimize_scalar(
            |l| sum_error_objective(l, n, params),
            lo,
            hi,
            Tolerance::new(GOLDEN_TOL)?,
        )?;
        // Minimum pinned to the lower end: the interval is too narrow.
        if x - lo < 1e-6 * g && lo > 1e-9 * g {
            lo = (lo - 3.0 * g).max(1e-9 * g);
            continue;
        }
        return Ok(x);
    }
}

/// Sum-error coalition utility `2 - min(Q_m + Q_f)` for size `n`.
pub fn f_a(n: usize, params: &SensingParams) -> Result<f64> {
    let lambda = lambda_a(n, params)?;
    Ok(1.0 - sum_error_objective(lambda, n, params))
}

/// Optimal threshold under the false-alarm cap: the smallest `λ` with
/// `A(λ)^n <= α`, i.e. `1 + Q⁻¹(α^{1/n}) / √N_s`.
pub fn lambda_b(n: usize, params: &SensingParams) -> Result<f64> {
    check_size(n)?;
    params.validate()?;
    let per_member = Probability::new(params.alpha.powf(1.0 / n as f64))?;
    Ok(1.0 + math::q_tail_inv(per_member)? / params.sqrt_ns())
}

/// Constrained-miss coalition utility `1 - min Q_m`:
/// `Q((Q⁻¹(α^{1/n}) - γ√N_s) / (1+γ))^n`.
pub fn f_b(n: usize, params: &SensingParams) -> Result<f64> {
    check_size(n)?;
    params.validate()?;
    let per_member = Probability::new(params.alpha.powf(1.0 / n as f64))?;
    let x = math::q_tail_inv(per_member)?;
    let z = (x - params.gamma * params.sqrt_ns()) / (1.0 + params.gamma);
    Ok(product(std::iter::repeat_n(q(z), n)))
}

/// Utility, member payoff and optimal threshold for every coalition size
/// `1..=n_max` under one criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UtilityTable {
    pub criterion: Criterion,
    pub params: SensingParams,
    /// `u[n-1] = U(n)`.
    u: Vec<f64>,
    /// `phi[n-2] = U(n) - U(n-1)` for `n >= 2`.
    phi: Vec<f64>,
    /// `lambda_opt[n-1]` is the optimal common threshold of a size-`n` coalition.
    lambda_opt: Vec<f64>,
}

impl UtilityTable {
    pub fn build(criterion: Criterion, n_max: usize, params: SensingParams) -> Result<Self> {
        if n_max < 2 {
            return Err(Error::Table {
                n: n_max,
                what: "n_max must be at least 2 so that member payoffs exist".into(),
            });
        }
        params.validate()?;

        let mut u = Vec::with_capacity(n_max);
        let mut lambda_opt = Vec::with_capacity(n_max);
        for n in 1..=n_max {
            let (lambda, utility) = match criterion {
                Criterion::SumError => {
                    let l = lambda_a(n, &params)?;
                    (l, 1.0 - sum_error_objective(l, n, &params))
                }
                Criterion::ConstrainedMiss => (lambda_b(n, &params)?, f_b(n, &params)?),
            };
            lambda_opt.push(lambda);
            u.push(utility);
        }
        let phi = u.windows(2).map(|w| w[1] - w[0]).collect();
        let table = UtilityTable {
            criterion,
            params,
            u,
            phi,
            lambda_opt,
        };
        table.validate()?;
        Ok(table)
    }

    /// Checks monotonicity, concavity, range and payoff convexity, naming
    /// the first size that breaks one of them.
    pub fn validate(&self) -> Result<()> {
        let n_max = self.u.len();
        let bad = |n: usize, what: String| Err(Error::Table { n, what });
        if n_max < 2 || self.phi.len() != n_max - 1 || self.lambda_opt.len() != n_max {
            return bad(n_max, "inconsistent table lengths".into());
        }
        let ceiling = self.criterion.utility_ceiling();
        for n in 1..=n_max {
            let un = self.u(n);
            if !(un > 0.0 && un < ceiling) {
                return bad(n, format!("U({n}) = {un} outside (0, {ceiling})"));
            }
        }
        for n in 2..=n_max {
            let phi = self.phi[n - 2];
            if phi != self.u(n) - self.u(n - 1) {
                return bad(n, "phi does not match the utility differences".into());
            }
            if !(phi > 0.0) {
                return bad(n, format!("U not strictly increasing: phi({n}) = {phi:e}"));
            }
        }
        for n in 3..=n_max {
            if !(self.phi[n - 2] < self.phi[n - 3]) {
                return bad(
                    n,
                    "U not strictly concave (phi not strictly decreasing)".into(),
                );
            }
        }
        for n in 3..n_max {
            // phi(n-1) - phi(n) > phi(n) - phi(n+1)
            let left = self.phi[n - 3] - self.phi[n - 2];
            let right = self.phi[n - 2] - self.phi[n - 1];
            if !(left > right) {
                return bad(n, format!("phi not strictly convex: {left:e} <= {right:e}"));
            }
        }
        Ok(())
    }

    pub fn n_max(&self) -> usize {
        self.u.len()
    }

    /// `U(n)` for `1 <= n <= n_max`. Panics outside that range.
    #[inline]
    pub fn u(&self, n: usize) -> f64 {
        self.u[n - 1]
    }

    /// Optimal common threshold of a size-`n` coalition.
    #[inline]
    pub fn lambda(&self, n: usize) -> f64 {
        self.lambda_opt[n - 1]
    }

    /// Unchecked member payoff, `n >= 2`.
    #[inline]
    pub(crate) fn phi(&self, n: usize) -> f64 {
        self.phi[n - 2]
    }

    pub fn utilities(&self) -> &[f64] {
        &self.u
    }

    pub fn payoffs(&self) -> &[f64] {
        &self.phi
    }

    pub fn thresholds(&self) -> &[f64] {
        &self.lambda_opt
    }

    pub fn member_payoff(&self, n: usize) -> Result<f64> {
        if n < 2 || n > self.n_max() {
            return Err(Error::domain(format!(
                "member payoff needs 2 <= n <= {}, got {n}",
                self.n_max()
            )));
        }
        Ok(self.phi(n))
    }

    /// What the coalition's own SU keeps after paying every member its
    /// marginal contribution.
    pub fn originator_payoff(&self, n: usize) -> Result<f64> {
        if n < 1 || n > self.n_max() {
            return Err(Error::domain(format!(
                "originator payoff needs 1 <= n <= {}, got {n}",
                self.n_max()
            )));
        }
        if n == 1 {
            return Ok(self.u(1));
        }
        Ok(self.u(n) - (n - 1) as f64 * self.phi(n))
    }

    pub fn key(&self) -> TableKey {
        TableKey::new(self.criterion, &self.params, self.n_max())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let table: UtilityTable = serde_json::from_str(s)?;
        table.validate()?;
        Ok(table)
    }
}

/// Cache key for a utility table. Reals are keyed by their bit patterns.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TableKey {
    pub criterion: Criterion,
    gamma_bits: u64,
    pub n_samples: u32,
    alpha_bits: u64,
    pub n_max: usize,
}

impl TableKey {
    pub fn new(criterion: Criterion, params: &SensingParams, n_max: usize) -> Self {
        TableKey {
            criterion,
            gamma_bits: params.gamma.to_bits(),
            n_samples: params.n_samples,
            alpha_bits: params.alpha.to_bits(),
            n_max,
        }
    }

    fn file_name(&self) -> String {
        format!(
            "utility-{}-g{:016x}-ns{}-a{:016x}-n{}.json",
            self.criterion.as_str().to_ascii_lowercase(),
            self.gamma_bits,
            self.n_samples,
            self.alpha_bits,
            self.n_max
        )
    }
}

/// Shared cache of utility tables, optionally persisted as JSON files.
#[derive(Debug, Default)]
pub struct TableCache {
    dir: Option<PathBuf>,
    tables: Mutex<HashMap<TableKey, Arc<UtilityTable>>>,
}

impl TableCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// A cache that reads and writes tables under `dir`.
    pub fn persistent(dir: impl AsRef<Path>) -> Self {
        TableCache {
            dir: Some(dir.as_ref().to_path_buf()),
            tables: Mutex::default(),
        }
    }

    pub fn get(
        &self,
        criterion: Criterion,
        n_max: usize,
        params: SensingParams,
    ) -> Result<Arc<UtilityTable>> {
        let key = TableKey::new(criterion, &params, n_max);
        if let Some(t) = self.tables.lock().expect("table cache poisoned").get(&key) {
            return Ok(Arc::clone(t));
        }

        let table = match self.load(&key) {
            Some(t) => t,
            None => {
                let t = UtilityTable::build(criterion, n_max, params)?;
                if let Some(dir) = &self.dir {
                    fs::create_dir_all(dir)?;
                    fs::write(dir.join(key.file_name()), t.to_json()?)?;
                }
                t
            }
        };
        let table = Arc::new(table);
        self.tables
            .lock()
            .expect("table cache poisoned")
            .insert(key, Arc::clone(&table));
        Ok(table)
    }

    fn load(&self, key: &TableKey) -> Option<UtilityTable> {
        let path = self.dir.as_ref()?.join(key.file_name());
        let text = fs::read_to_string(&path).ok()?;
        match UtilityTable::from_json(&text) {
            Ok(t) if t.key() == *key => Some(t),
            Ok(_) => None,
            Err(e) => {
                warn!("ignoring unreadable table cache {}: {e}", path.display());
                None
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn defaults() -> SensingParams {
        SensingParams::default()
    }

    fn p(v: f64) -> Probability {
        Probability::new(v).unwrap()
    }

    #[test]
    fn default_gamma_is_minus_15_db() {
        assert!((defaults().gamma - 0.031_622_776_601_683_79).abs() < 1e-15);
    }

    #[test]
    fn local_miss_examples() {
        let params = defaults();
        let m = local_miss_prob(1.0 + params.gamma, &params).unwrap().get();
        assert!((m - 0.5).abs() < 1e-15);
        let m = local_miss_prob(1.0157, &params).unwrap().get();
        assert!((m - 0.0608).abs() < 5e-3, "{m}");
        let m = local_miss_prob(1e-9, &params).unwrap().get();
        assert!(m < 1e-300);
        assert!(local_miss_prob(0.0, &params).is_err());
        assert!(local_miss_prob(-1.0, &params).is_err());
    }

    #[test]
    fn local_false_alarm_examples() {
        let params = defaults();
        assert_eq!(local_false_alarm_prob(1.0, &params).unwrap().get(), 0.5);
        let f = local_false_alarm_prob(1.012816, &params).unwrap().get();
        assert!((f - 0.1).abs() < 1e-3);
        assert_eq!(local_false_alarm_prob(2.0, &params).unwrap().get(), 0.0);
        assert!(local_false_alarm_prob(0.0, &params).is_err());
    }

    #[test]
    fn local_probabilities_are_monotone_in_threshold() {
        let params = defaults();
        let mut prev_m = 0.0;
        let mut prev_f = 1.0;
        for k in 0..200 {
            let l = 0.98 + k as f64 * 0.0003;
            let m = local_miss_prob(l, &params).unwrap().get();
            let f = local_false_alarm_prob(l, &params).unwrap().get();
            assert!(m >= prev_m && f <= prev_f);
            prev_m = m;
            prev_f = f;
        }
    }

    #[test]
    fn fusion_examples() {
        assert_eq!(fused_and_miss(&[p(0.0)]).unwrap().get(), 0.0);
        assert!((fused_and_miss(&[p(0.1), p(0.1)]).unwrap().get() - 0.19).abs() < 1e-15);
        assert!((fused_and_miss(&[p(0.2), p(0.3), p(0.5)]).unwrap().get() - 0.72).abs() < 1e-15);
        assert_eq!(fused_and_false_alarm(&[p(1.0)]).unwrap().get(), 1.0);
        assert!((fused_and_false_alarm(&[p(0.1), p(0.1)]).unwrap().get() - 0.01).abs() < 1e-17);
        assert!(
            (fused_and_false_alarm(&[p(0.5), p(0.2), p(0.1)])
                .unwrap()
                .get()
                - 0.01)
                .abs()
                < 1e-17
        );
        assert!(fused_and_miss(&[]).is_err());
        assert!(fused_and_false_alarm(&[]).is_err());
    }

    #[test]
    fn fusion_in_log_space_does_not_lose_tiny_products() {
        let tiny = vec![p(1e-200); 2];
        assert_eq!(fused_and_false_alarm(&tiny).unwrap().get(), 0.0);
        let mixed = [p(1e-301), p(1e10f64.recip())];
        let v = fused_and_false_alarm(&mixed).unwrap().get();
        assert!((v / 1e-311 - 1.0).abs() < 1e-9, "{v:e}");
    }

    #[test]
    fn lambda_a_examples() {
        let params = defaults();
        let l1 = lambda_a(1, &params).unwrap();
        assert!((l1 - 1.0157).abs() < 1e-3, "{l1}");
        let l2 = lambda_a(2, &params).unwrap();
        assert!(l1 > 1.0 && l1 < 1.0 + params.gamma);
        assert!(l2 > 1.0 && l2 < 1.0 + params.gamma);
        assert!(l1 != l2);
        assert!(f_a(2, &params).unwrap() > f_a(1, &params).unwrap());
    }

    #[test]
    fn lambda_a_leaves_the_unit_interval_for_large_coalitions() {
        let params = defaults();
        // Oracle: the direct minimizer lands below 1 as well.
        let direct = lambda_a_by_minimization(20, &params).unwrap();
        assert!(direct < 1.0, "{direct}");
        assert!((lambda_a(20, &params).unwrap() - direct).abs() < 1e-6);
    }

    #[test]
    fn lambda_a_rejects_empty_coalition() {
        assert!(lambda_a(0, &defaults()).is_err());
    }

    #[test]
    fn f_a_examples() {
        let params = defaults();
        let v = f_a(1, &params).unwrap();
        assert!((v - 1.881).abs() < 5e-3, "{v}");
        let mut prev = v;
        for n in 2..=50 {
            let cur = f_a(n, &params).unwrap();
            assert!(cur > prev && cur < 2.0);
            prev = cur;
        }
    }

    #[test]
    fn lambda_b_examples() {
        let params = defaults();
        assert!((lambda_b(1, &params).unwrap() - 1.012816).abs() < 1e-5);
        assert!((lambda_b(2, &params).unwrap() - 1.00478).abs() < 1e-4);
        let half = SensingParams {
            alpha: 0.5,
            ..params
        };
        assert!((lambda_b(1, &half).unwrap() - 1.0).abs() < 1e-15);
        assert!(lambda_b(3, &half).unwrap() < 1.0);
        for n in 1..50 {
            assert!(lambda_b(n + 1, &params).unwrap() < lambda_b(n, &params).unwrap());
        }
    }

    #[test]
    fn f_b_examples() {
        let params = defaults();
        let v = f_b(1, &params).unwrap();
        assert!((v - 0.9659).abs() < 1e-3, "{v}");
        let mut prev = v;
        for n in 2..=50 {
            let cur = f_b(n, &params).unwrap();
            assert!(cur > prev && cur < 1.0);
            prev = cur;
        }
    }

    #[test]
    fn f_b_matches_threshold_substitution() {
        let params = defaults();
        for n in 1..=10 {
            let l = lambda_b(n, &params).unwrap();
            let direct = detection(l, &params).powi(n as i32);
            assert!((f_b(n, &params).unwrap() - direct).abs() < 1e-12);
        }
    }

    #[test]
    fn build_table_examples() {
        let params = defaults();
        let t = UtilityTable::build(Criterion::ConstrainedMiss, 3, params).unwrap();
        for n in 1..=3 {
            assert_eq!(t.u(n), f_b(n, &params).unwrap());
        }
        assert!(t.u(1) < t.u(2) && t.u(2) < t.u(3));

        let t = UtilityTable::build(Criterion::SumError, 2, params).unwrap();
        let phi2 = t.member_payoff(2).unwrap();
        assert!(phi2 > 0.0);
        assert!((phi2 - (f_a(2, &params).unwrap() - f_a(1, &params).unwrap())).abs() < 1e-15);

        assert!(matches!(
            UtilityTable::build(Criterion::SumError, 1, params),
            Err(Error::Table { n: 1, .. })
        ));
    }

    #[test]
    fn table_validation_names_first_bad_size() {
        let mut t = UtilityTable::build(Criterion::ConstrainedMiss, 5, defaults()).unwrap();
        t.u[3] = t.u[2];
        t.phi = t.u.windows(2).map(|w| w[1] - w[0]).collect();
        match t.validate() {
            Err(Error::Table { n, .. }) => assert_eq!(n, 4),
            other => panic!("expected table error, got {other:?}"),
        }
    }

    #[test]
    fn payoff_examples() {
        let t = UtilityTable::build(Criterion::SumError, 50, defaults()).unwrap();
        assert_eq!(t.member_payoff(2).unwrap(), t.u(2) - t.u(1));
        assert!(t.member_payoff(3).unwrap() < t.member_payoff(2).unwrap());
        let d23 = t.member_payoff(2).unwrap() - t.member_payoff(3).unwrap();
        let d34 = t.member_payoff(3).unwrap() - t.member_payoff(4).unwrap();
        assert!(d23 > d34);
        assert!(t.member_payoff(1).is_err());
        assert!(t.member_payoff(51).is_err());

        assert_eq!(t.originator_payoff(1).unwrap(), t.u(1));
        assert!((t.originator_payoff(2).unwrap() - t.u(1)).abs() < 1e-15);
        assert!(t.originator_payoff(5).unwrap() > 0.0);
        assert!(t.originator_payoff(0).is_err());
        assert!(t.originator_payoff(51).is_err());
    }

    #[test]
    fn originator_payoff_positive_everywhere() {
        for criterion in [Criterion::SumError, Criterion::ConstrainedMiss] {
            let t = UtilityTable::build(criterion, 50, defaults()).unwrap();
            for n in 1..=50 {
                assert!(t.originator_payoff(n).unwrap() > 0.0, "{criterion} n = {n}");
            }
        }
    }

    #[test]
    fn table_json_round_trip() {
        let t = UtilityTable::build(Criterion::ConstrainedMiss, 8, defaults()).unwrap();
        let json = t.to_json().unwrap();
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        for field in ["criterion", "params", "u", "phi", "lambda_opt"] {
            assert!(v.get(field).is_some(), "missing {field}");
        }
        assert_eq!(v["criterion"], "CONSTRAINED_MISS");
        assert_eq!(UtilityTable::from_json(&json).unwrap(), t);
    }

    #[test]
    fn persistent_cache_reuses_files() {
        let dir = tempfile::tempdir().unwrap();
        let cache = TableCache::persistent(dir.path());
        let a = cache.get(Criterion::SumError, 6, defaults()).unwrap();
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
        let fresh = TableCache::persistent(dir.path());
        let b = fresh.get(Criterion::SumError, 6, defaults()).unwrap();
        assert_eq!(*a, *b);
        let c = fresh.get(Criterion::SumError, 7, defaults()).unwrap();
        assert_eq!(c.n_max(), 7);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn fusion_is_permutation_invariant(
                probs in proptest::collection::vec(0.0f64..=1.0, 1..8),
                seed in any::<u64>(),
            ) {
                use rand::seq::SliceRandom;
                use rand::SeedableRng;
                let ps: Vec<Probability> = probs.iter().map(|&v| p(v)).collect();
                let mut shuffled = ps.clone();
                shuffled.shuffle(&mut rand_chacha::ChaCha8Rng::seed_from_u64(seed));
                let m1 = fused_and_miss(&ps).unwrap().get();
                let m2 = fused_and_miss(&shuffled).unwrap().get();
                let f1 = fused_and_false_alarm(&ps).unwrap().get();
                let f2 = fused_and_false_alarm(&shuffled).unwrap().get();
                prop_assert!((m1 - m2).abs() < 1e-15);
                prop_assert!((f1 - f2).abs() < 1e-15);
            }
        }
    }
}
