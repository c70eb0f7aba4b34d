//! Scalar numerical primitives: Gaussian right-tail probability and its
//! inverse, a bisection root finder and a golden-section minimizer.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real number in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Probability(f64);

impl Probability {
    pub const ZERO: Probability = Probability(0.0);
    pub const ONE: Probability = Probability(1.0);

    pub fn new(value: f64) -> Result<Self> {
        if (0.0..=1.0).contains(&value) {
            Ok(Probability(value))
        } else {
            Err(Error::domain(format!("{value} is not a probability")))
        }
    }

    /// Clamps rounding excursions (e.g. `1 + 1e-17`) back into `[0, 1]`.
    pub(crate) fn saturating(value: f64) -> Self {
        debug_assert!(!value.is_nan());
        Probability(value.clamp(0.0, 1.0))
    }

    #[inline]
    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Probability {
    type Error = Error;

    fn try_from(value: f64) -> Result<Self> {
        Probability::new(value)
    }
}

impl From<Probability> for f64 {
    fn from(p: Probability) -> f64 {
        p.0
    }
}

/// Absolute tolerance on the abscissa.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerance(f64);

impl Tolerance {
    pub fn new(abs_tol: f64) -> Result<Self> {
        if abs_tol > 0.0 && abs_tol.is_finite() {
            Ok(Tolerance(abs_tol))
        } else {
            Err(Error::domain(format!(
                "tolerance must be positive, got {abs_tol}"
            )))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

const SQRT_2PI: f64 = 2.506_628_274_631_000_5;

/// Standard normal density.
#[inline]
pub(crate) fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Unchecked right-tail probability, `Q(x) = erfc(x / sqrt 2) / 2`.
#[inline]
pub(crate) fn q(x: f64) -> f64 {
    0.5 * libm::erfc(x / std::f64::consts::SQRT_2)
}

/// Right-tail probability of the standard normal distribution.
pub fn q_tail(x: f64) -> Result<Probability> {
    if !x.is_finite() {
        return Err(Error::domain(format!(
            "q_tail argument must be finite, got {x}"
        )));
    }
    Ok(Probability::saturating(q(x)))
}

/// Inverse of [`q_tail`]: returns `x` with `Q(x) = p`.
pub fn q_tail_inv(p: Probability) -> Result<f64> {
    let p = p.get();
    if !(p > 0.0 && p < 1.0) {
        return Err(Error::domain(format!(
            "q_tail_inv needs p in (0, 1), got {p}"
        )));
    }
    // Q^{-1}(p) = Phi^{-1}(1 - p) = -Phi^{-1}(p)
    let mut x = -acklam_inverse_cdf(p);
    for _ in 0..64 {
        let density = normal_pdf(x);
        if density == 0.0 {
            break;
        }
        let step = (q(x) - p) / density;
        x += step;
        if step.abs() < 1e-12 {
            break;
        }
    }
    Ok(x)
}

/// Acklam's rational approximation of the standard normal quantile
/// (relative error about 1.15e-9), used as the Newton starting point.
fn acklam_inverse_cdf(p: f64) -> f64 {
    const A: [f64; 6] = [
        -3.969_683_028_665_376e1,
        2.209_460_984_245_205e2,
        -2.759_285_104_469_687e2,
        1.383_577_518_672_69e2,
        -3.066_479_806_614_716e1,
        2.506_628_277_459_239,
    ];
    const B: [f64; 5] = [
        -5.447_609_879_822_406e1,
        1.615_858_368_580_409e2,
        -1.556_989_798_598_866e2,
        6.680_131_188_771_972e1,
        -1.328_068_155_288_572e1,
    ];
    const C: [f64; 6] = [
        -7.784_894_002_430_293e-3,
        -3.223_964_580_411_365e-1,
        -2.400_758_277_161_838,
        -2.549_732_539_343_734,
        4.374_664_141_464_968,
        2.938_163_982_698_783,
    ];
    const D: [f64; 4] = [
        7.784_695_709_041_462e-3,
        3.224_671_290_700_398e-1,
        2.445_134_137_142_996,
        3.754_408_661_907_416,
    ];
    const P_LOW: f64 = 0.02425;

    if p < P_LOW {
        let r = (-2.0 * p.ln()).sqrt();
        (((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    } else if p <= 1.0 - P_LOW {
        let r = p - 0.5;
        let s = r * r;
        (((((A[0] * s + A[1]) * s + A[2]) * s + A[3]) * s + A[4]) * s + A[5]) * r
            / (((((B[0] * s + B[1]) * s + B[2]) * s + B[3]) * s + B[4]) * s + 1.0)
    } else {
        let r = (-2.0 * (1.0 - p).ln()).sqrt();
        -(((((C[0] * r + C[1]) * r + C[2]) * r + C[3]) * r + C[4]) * r + C[5])
            / ((((D[0] * r + D[1]) * r + D[2]) * r + D[3]) * r + 1.0)
    }
}

/// Bisection root finder.
///
/// Requires `f(lo)` and `f(hi)` to differ in sign. Stops once the bracket is
/// no wider than `tol` (or cannot shrink further in floating point) and
/// returns its midpoint.
pub fn find_root<F>(f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<f64>
where
    F: Fn(f64) -> f64,
{
    if !(lo < hi) {
        return Err(Error::domain(format!(
            "find_root needs lo < hi, got [{lo}, {hi}]"
        )));
    }
    let (mut lo, mut hi) = (lo, hi);
    let mut f_lo = f(lo);
    let f_hi = f(hi);
    if f_lo == 0.0 {
        return Ok(lo);
    }
    if f_hi == 0.0 {
        return Ok(hi);
    }
    if f_lo.is_nan() || f_hi.is_nan() || f_lo.signum() == f_hi.signum() {
        return Err(Error::Bracket { lo, hi, f_lo, f_hi });
    }

    while hi - lo > tol.get() {
        let mid = lo + 0.5 * (hi - lo);
        if mid <= lo || mid >= hi {
            break;
        }
        let f_mid = f(mid);
        if f_mid == 0.0 {
            return Ok(mid);
        }
        if f_mid.is_nan() {
            return Err(Error::Numeric(format!("objective is NaN at {mid}")));
        }
        if f_mid.signum() == f_lo.signum() {
            lo = mid;
            f_lo = f_mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo + 0.5 * (hi - lo))
}

const COARSE_SCAN_INTERVALS: usize = 256;

/// Minimizes `f` on `[lo, hi]`: a 256-interval coarse scan picks the bracket,
/// golden-section search refines it. Returns `(argmin, min)`.
pub fn minimize_scalar<F>(f: F, lo: f64, hi: f64, tol: Tolerance) -> Result<(f64, f64)>
where
    F: Fn(f64) -> f64,
{
    if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
        return Err(Error::domain(format!(
            "minimize_scalar needs finite lo < hi, got [{lo}, {hi}]"
        )));
    }

    let width = hi - lo;
    let grid = |k: usize| {
        if k == COARSE_SCAN_INTERVALS {
            hi
        } else {
            lo + width * k as f64 / COARSE_SCAN_INTERVALS as f64
        }
    };
    let mut best_k = 0;
    let mut best_f = f64::INFINITY;
    for k in 0..=COARSE_SCAN_INTERVALS {
        let v = f(grid(k));
        if v < best_f {
            best_f = v;
            best_k = k;
        }
    }
    if !best_f.is_finite() {
        return Err(Error::Numeric(
            "objective is not finite on the scan grid".into(),
        ));
    }

    let mut a = grid(best_k.saturating_sub(1));
    let mut b = grid((best_k + 1).min(COARSE_SCAN_INTERVALS));

    const INV_PHI: f64 = 0.618_033_988_749_894_9;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a) > tol.get() {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
        if c >= d {
            break;
        }
    }

    let mid = 0.5 * (a + b);
    let mut best = (mid, f(mid));
    for x in [a, b, grid(best_k)] {
        let v = f(x);
        if v < best.1 {
            best = (x, v);
        }
    }
    Ok(best)
}
