//! Concentration of sums of geometric random variables.
//!
//! `xi` is geometric on `{1, 2, ...}` with `P(xi = k) = (1-alpha)^(k-1)
//! alpha`, mean `1/alpha`. The module provides the explicit Chernoff-type
//! tail bounds with their closed-form constants, an exact negative-binomial
//! tail oracle (the sum of `n` geometrics is negative binomial, so tails
//! reduce to binomial sums), and the scaled deviation quantity `u_k` that
//! controls renewal-block counts in the local-continuity route.

use crate::stats::{ln_factorials, log_sum_exp};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConcError {
    #[error("alpha = {alpha} must lie in (0, 1)")]
    InvalidAlpha { alpha: f64 },
    #[error("k = {k} too small: need k >= {min} so that floor(k alpha / 2) >= 1")]
    KTooSmall { k: usize, min: usize },
}

/// The closed-form constants attached to a geometric parameter.
#[derive(Clone, Copy, Debug)]
pub struct GeomParams {
    pub alpha: f64,
    /// `(1-a)/a + 4((1-a)/a)^2`
    pub c1: f64,
    /// `ln((2-a) / (2(1-a)) min 2)`
    pub c2: f64,
    /// `a / (4(1-a)(4-3a)) min c2/4`
    pub c3: f64,
}

impl GeomParams {
    pub fn new(alpha: f64) -> Result<Self, ConcError> {
        if !(0.0 < alpha && alpha < 1.0) {
            return Err(ConcError::InvalidAlpha { alpha });
        }
        let q = (1.0 - alpha) / alpha;
        let c1 = q + 4.0 * q * q;
        let c2 = ((2.0 - alpha) / (2.0 * (1.0 - alpha))).min(2.0).ln();
        let c3 = (alpha / (4.0 * (1.0 - alpha) * (4.0 - 3.0 * alpha))).min(c2 / 4.0);
        Ok(GeomParams { alpha, c1, c2, c3 })
    }
}

/// Upper-tail bound: `P(S_n/n - 1/alpha > x) <= exp(-n (x^2/(2 C1) min
/// C2 x / 2))`.
pub fn chernoff_upper(alpha: f64, n: u64, x: f64) -> f64 {
    let p = GeomParams::new(alpha).expect("alpha in (0,1)");
    (-(n as f64) * (x * x / (2.0 * p.c1)).min(p.c2 * x / 2.0)).exp()
}

/// Lower-tail bound: `P(S_n/n - 1/alpha < -x) <= exp(-n (x^2/(2 C1) min
/// x / 2))`.
pub fn chernoff_lower(alpha: f64, n: u64, x: f64) -> f64 {
    let p = GeomParams::new(alpha).expect("alpha in (0,1)");
    (-(n as f64) * (x * x / (2.0 * p.c1)).min(x / 2.0)).exp()
}

/// `ln P(Bin(m, alpha) <= j_max)` via a stable log-sum.
fn ln_binom_cdf(m: u64, alpha: f64, j_max: u64) -> f64 {
    let lf = ln_factorials(m as usize);
    let la = alpha.ln();
    let lb = (1.0 - alpha).ln();
    let terms: Vec<f64> = (0..=j_max.min(m))
        .map(|j| {
            lf[m as usize] - lf[j as usize] - lf[(m - j) as usize]
                + j as f64 * la
                + (m - j) as f64 * lb
        })
        .collect();
    log_sum_exp(&terms)
}

/// Exact upper tail `P(S_n > threshold)` for the sum of `n` geometrics.
///
/// `S_n > m` iff the first `m` Bernoulli trials hold fewer than `n`
/// successes, so the tail is a binomial CDF.
pub fn exact_upper_tail(alpha: f64, n: u64, threshold: f64) -> f64 {
    assert!(n >= 1);
    if threshold < n as f64 {
        return 1.0; // S_n >= n always
    }
    let m = threshold.floor() as u64;
    ln_binom_cdf(m, alpha, n - 1).exp()
}

/// Exact lower tail `P(S_n < threshold)`.
pub fn exact_lower_tail(alpha: f64, n: u64, threshold: f64) -> f64 {
    assert!(n >= 1);
    // P(S_n <= m) with m the largest integer strictly below threshold
    let m = if threshold.fract() == 0.0 {
        threshold as i64 - 1
    } else {
        threshold.floor() as i64
    };
    if m < n as i64 {
        return 0.0;
    }
    1.0 - ln_binom_cdf(m as u64, alpha, n - 1).exp()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UkMode {
    /// Both tails from the exact negative-binomial oracle.
    Exact,
    /// Both tails from the Chernoff bounds.
    Chernoff,
    /// The asymptotic envelope `alpha exp(-k C3)`; valid up to an
    /// `exp(eps k)` factor for any `eps > 0` once `k` is large.
    Corollary,
}

/// The scaled deviation quantity with `n = floor(k alpha / 2)` variables
/// and deviation `k/2` from the mean:
/// `u_k = n P(|S_n - n/alpha| > k/2)`.
pub fn uk(alpha: f64, k: usize, mode: UkMode) -> Result<f64, ConcError> {
    let p = GeomParams::new(alpha)?;
    let n = (k as f64 * alpha / 2.0).floor() as u64;
    if n < 1 {
        return Err(ConcError::KTooSmall {
            k,
            min: (2.0 / alpha).ceil() as usize,
        });
    }
    let dev = k as f64 / 2.0;
    let mean = n as f64 / alpha;
    Ok(match mode {
        UkMode::Exact => {
            let up = exact_upper_tail(alpha, n, mean + dev);
            let lo = exact_lower_tail(alpha, n, mean - dev);
            n as f64 * (up + lo)
        }
        UkMode::Chernoff => {
            let x = dev / n as f64;
            n as f64 * (chernoff_upper(alpha, n, x) + chernoff_lower(alpha, n, x))
        }
        UkMode::Corollary => alpha * (-(k as f64) * p.c3).exp(),
    })
}
