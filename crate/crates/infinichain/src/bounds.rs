//! Assembles the theoretical d-bar bounds and the empirical estimate into
//! one comparable report.
//!
//! Bounds covered, per order `k`:
//!
//! - `b_summable`: `E|theta| (1 - alpha_k)` for summable continuity rates
//!   (the existential constant realized as a Monte Carlo mean with CI);
//! - `b_ell`: `E|theta| P(ell > k)` for renewal kernels;
//! - `b_theta`: the coalescence tail `P(theta < -k)` of the envelope
//!   detector;
//! - `b_achier`: the house-of-cards composition value `v_k` on the
//!   continuity sequence;
//! - `b_local`: `u_k + v_{floor(k alpha(2)/2)}` from a local-continuity
//!   description.
//!
//! Every empirical estimate is an upper bound on the d-bar distance (any
//! coupling upper-bounds the infimum), so a sound configuration must show
//! `dbar_hat <= bound + 3 sigma` for every applicable bound; the report's
//! verdict column says exactly that, comparing at three sigmas on both
//! sides.

use crate::cftp::{theta_ell, CftpConfig, CftpError, CoupledSimulator, Engine};
use crate::geom_conc::{uk, ConcError, UkMode};
use crate::house_of_cards::{vk_dp, HocError, HocSpec};
use crate::kernel::{AlphaSequence, Kernel, KernelError};
use crate::partition::{PartitionError, RangePartition};
use crate::runner;
use crate::stats;
use crate::stream::UniformStream;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum BoundsError {
    #[error("continuity rate is not summable")]
    NonSummable,
    #[error("divergence precondition failed: sum_k prod_i r_i converges")]
    DivergenceCheckFailed,
    #[error("not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Cftp(#[from] CftpError),
    #[error(transparent)]
    Hoc(#[from] HocError),
    #[error(transparent)]
    Conc(#[from] ConcError),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
}

/// Monte Carlo driver configuration for one report.
#[derive(Clone, Debug)]
pub struct DbarConfig {
    pub n_replicas: u64,
    /// Coupled window length per replica.
    pub horizon: u64,
    /// Replicas for the coalescence-time statistics.
    pub theta_replicas: u64,
    pub seed: u64,
    /// 0 = default rayon pool, 1 = sequential.
    pub workers: usize,
    /// Samples for the empirical `P^(k)` fallback.
    pub pk_samples: u64,
    pub cftp: CftpConfig,
    pub local_spec: Option<LocalContinuitySpec>,
}

impl Default for DbarConfig {
    fn default() -> Self {
        DbarConfig {
            n_replicas: 10_000,
            horizon: 1,
            theta_replicas: 10_000,
            seed: 1,
            workers: 0,
            pk_samples: 200_000,
            cftp: CftpConfig::default(),
            local_spec: None,
        }
    }
}

/// A pooled Bernoulli frequency with its errors.
#[derive(Clone, Copy, Debug)]
pub struct FreqEstimate {
    pub p_hat: f64,
    pub sigma: f64,
    pub wilson_half: f64,
    pub successes: u64,
    pub n: u64,
}

impl FreqEstimate {
    pub fn from_counts(successes: u64, n: u64) -> Self {
        let p_hat = if n == 0 {
            0.0
        } else {
            successes as f64 / n as f64
        };
        let (_, wilson_half) = stats::wilson_ci(successes, n, 3.0);
        FreqEstimate {
            p_hat,
            sigma: stats::bernoulli_sigma(p_hat, n),
            wilson_half,
            successes,
            n,
        }
    }
}

/// A theoretical bound value carrying its own Monte Carlo error (zero for
/// closed forms).
#[derive(Clone, Copy, Debug)]
pub enum BoundCell {
    Value { value: f64, sigma: f64 },
    NotApplicable,
}

impl BoundCell {
    pub fn value(&self) -> Option<f64> {
        match self {
            BoundCell::Value { value, .. } => Some(*value),
            BoundCell::NotApplicable => None,
        }
    }

    fn csv(&self) -> String {
        match self {
            BoundCell::Value { value, .. } => format!("{value}"),
            BoundCell::NotApplicable => "na".into(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Verdict {
    Ok,
    Violated,
    NotApplicable,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Verdict::Ok => write!(f, "ok"),
            Verdict::Violated => write!(f, "violated"),
            Verdict::NotApplicable => write!(f, "na"),
        }
    }
}

fn verdict(dbar: &FreqEstimate, bound: &BoundCell) -> Verdict {
    match bound {
        BoundCell::NotApplicable => Verdict::NotApplicable,
        BoundCell::Value { value, sigma } => {
            if dbar.p_hat - 3.0 * dbar.sigma > value + 3.0 * sigma {
                Verdict::Violated
            } else {
                Verdict::Ok
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Empirical d-bar estimate
// ---------------------------------------------------------------------------

/// Pooled disagreement frequencies of the coupled pair at every requested
/// order, sharing one stream per replica (coupling refinement holds across
/// `k` on identical seeds).
pub fn estimate_dbar_multi(
    kernel: &Arc<Kernel>,
    ks: &[usize],
    cfg: &DbarConfig,
) -> Result<Vec<FreqEstimate>, BoundsError> {
    let sim = CoupledSimulator::new(
        kernel.clone(),
        ks,
        cfg.pk_samples,
        cfg.seed ^ 0x706b_7365,
        &cfg.cftp,
    )?;
    let master = UniformStream::new(cfg.seed);
    let horizon = cfg.horizon.max(1);
    let per: Vec<Result<Vec<u32>, CftpError>> =
        runner::parallel_map(cfg.n_replicas, cfg.workers, |r| {
            let run = sim.run(&master.substream(r), horizon)?;
            Ok(run
                .per_k
                .iter()
                .map(|pk| pk.disagreements.len() as u32)
                .collect())
        });
    let mut totals = vec![0u64; ks.len()];
    for row in per {
        for (t, c) in totals.iter_mut().zip(row?) {
            *t += c as u64;
        }
    }
    let n = cfg.n_replicas * horizon;
    Ok(totals
        .into_iter()
        .map(|s| FreqEstimate::from_counts(s, n))
        .collect())
}

/// Single-order convenience wrapper.
pub fn estimate_dbar(
    kernel: &Arc<Kernel>,
    k: usize,
    cfg: &DbarConfig,
) -> Result<FreqEstimate, BoundsError> {
    Ok(estimate_dbar_multi(kernel, &[k], cfg)?[0])
}

// ---------------------------------------------------------------------------
// Coalescence-time statistics
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ThetaDetector {
    /// Envelope criterion on the kernel's natural partition.
    Prime,
    /// Block construction (needs `kstar`).
    Vwnn,
    /// Lookahead-depth criterion (renewal kernels only).
    Ell,
}

/// Monte Carlo sample of coalescence times for index 0.
pub struct ThetaSamples {
    pub thetas: Vec<i64>,
    pub detector: ThetaDetector,
}

impl ThetaSamples {
    pub fn collect(
        kernel: &Arc<Kernel>,
        detector: ThetaDetector,
        n: u64,
        seed: u64,
        workers: usize,
        cfg: &CftpConfig,
    ) -> Result<Self, BoundsError> {
        let master = UniformStream::new(seed);
        let thetas: Vec<i64> = match detector {
            ThetaDetector::Ell => {
                let rk = match kernel.as_ref() {
                    Kernel::Renewal(rk) => rk.clone(),
                    _ => {
                        return Err(BoundsError::NotApplicable(
                            "ell detector needs a renewal kernel".into(),
                        ))
                    }
                };
                let rows: Vec<Result<i64, CftpError>> = runner::parallel_map(n, workers, |r| {
                    Ok(theta_ell(&rk, &master.substream(r), cfg)?.theta0)
                });
                rows.into_iter().collect::<Result<_, _>>()?
            }
            ThetaDetector::Prime | ThetaDetector::Vwnn => {
                let partition = Arc::new(RangePartition::natural(kernel.clone())?);
                let engine = Engine::new(partition)?;
                let kstar = engine.alpha().kstar().ok_or_else(|| {
                    BoundsError::NotApplicable("alpha_k = 0 for all stored k".into())
                })?;
                if detector == ThetaDetector::Prime && engine.alpha().get(0) <= 0.0 {
                    return Err(BoundsError::NotApplicable(
                        "theta_prime needs weak non-nullness (alpha_0 > 0)".into(),
                    ));
                }
                let rows: Vec<Result<i64, CftpError>> = runner::parallel_map(n, workers, |r| {
                    let s = master.substream(r);
                    match detector {
                        ThetaDetector::Prime => Ok(engine.theta_prime(&s, cfg)?.theta0),
                        ThetaDetector::Vwnn => Ok(engine.theta_vwnn(&s, kstar, cfg)?.theta0),
                        ThetaDetector::Ell => unreachable!(),
                    }
                });
                rows.into_iter().collect::<Result<_, _>>()?
            }
        };
        Ok(ThetaSamples { thetas, detector })
    }

    /// `(mean |theta|, standard error)`.
    pub fn abs_mean(&self) -> (f64, f64) {
        let xs: Vec<f64> = self.thetas.iter().map(|&t| -t as f64).collect();
        stats::mean_se(&xs)
    }

    /// Empirical tail `P(theta < -k)`.
    pub fn tail(&self, k: usize) -> FreqEstimate {
        let hits = self.thetas.iter().filter(|&&t| t < -(k as i64)).count() as u64;
        FreqEstimate::from_counts(hits, self.thetas.len() as u64)
    }
}

/// `E|theta| (1 - alpha_k)`: the summable-continuity bound. Requires a
/// summable rate; the constant comes from the supplied coalescence sample.
pub fn bound_summable(
    alpha: &AlphaSequence,
    k: usize,
    thetas: &ThetaSamples,
) -> Result<BoundCell, BoundsError> {
    if !alpha.summable() {
        return Err(BoundsError::NonSummable);
    }
    let (mean, se) = thetas.abs_mean();
    let gap = 1.0 - alpha.get(k);
    Ok(BoundCell::Value {
        value: mean * gap,
        sigma: se * gap,
    })
}

/// Monte Carlo sample of the lookahead depth `ell` for renewal kernels.
pub fn ell_samples(
    kernel: &Arc<Kernel>,
    n: u64,
    seed: u64,
    workers: usize,
    cfg: &CftpConfig,
) -> Result<Vec<usize>, BoundsError> {
    let rk = match kernel.as_ref() {
        Kernel::Renewal(rk) => rk.clone(),
        _ => {
            return Err(BoundsError::NotApplicable(
                "ell is defined for renewal kernels".into(),
            ))
        }
    };
    let master = UniformStream::new(seed);
    let rows: Vec<Result<usize, CftpError>> = runner::parallel_map(n, workers, |r| {
        crate::cftp::ell_value(&rk, &master.substream(r), 0, cfg.window_cap)
    });
    Ok(rows.into_iter().collect::<Result<_, _>>()?)
}

/// `E|theta| P(ell > k)` from two independent replica sets.
pub fn bound_ell(thetas: &ThetaSamples, ells: &[usize], k: usize) -> BoundCell {
    let (t_mean, t_se) = thetas.abs_mean();
    let hits = ells.iter().filter(|&&e| e > k).count() as u64;
    let tail = FreqEstimate::from_counts(hits, ells.len() as u64);
    let value = t_mean * tail.p_hat;
    // independent sets: delta-method variance of the product
    let sigma = ((t_mean * tail.sigma).powi(2) + (tail.p_hat * t_se).powi(2)).sqrt();
    BoundCell::Value { value, sigma }
}

/// The coalescence-tail bound `P(theta < -k)` as a [`BoundCell`].
pub fn bound_theta_tail(thetas: &ThetaSamples, k: usize) -> BoundCell {
    let est = thetas.tail(k);
    BoundCell::Value {
        value: est.p_hat,
        sigma: est.sigma,
    }
}

// ---------------------------------------------------------------------------
// House-of-cards route
// ---------------------------------------------------------------------------

/// Whether `sum_k prod_{i<k} alpha_i` diverges (the precondition of the
/// composition bound), decided on the declared tail rule.
pub fn achier_applicable(alpha: &AlphaSequence) -> bool {
    // survival stabilizes for a tail of ones and vanishes geometrically for
    // a plateau below one
    let spec = match HocSpec::from_alpha_seq(alpha) {
        Ok(s) => s,
        Err(_) => return false,
    };
    spec.survival(alpha.len() + 2000) > 1e-9
}

/// `v_k` of the composition bound with climb probabilities `alpha_i`.
/// Delegates to the house-of-cards DP, bit for bit.
pub fn bound_achier(alpha: &AlphaSequence, k: usize) -> Result<f64, BoundsError> {
    if !achier_applicable(alpha) {
        return Err(BoundsError::NotApplicable(
            "sum_k prod_i alpha_i converges; composition bound void".into(),
        ));
    }
    let spec = HocSpec::from_alpha_seq(alpha)?;
    Ok(vk_dp(&spec, k)[k])
}

// ---------------------------------------------------------------------------
// Local continuity route
// ---------------------------------------------------------------------------

/// Integer lookback depth function for strong local continuity.
#[derive(Clone, Copy, Debug)]
pub enum EllRule {
    /// `ell(i) = slope * i + intercept`.
    Linear { slope: usize, intercept: usize },
}

impl EllRule {
    /// Generalized inverse `max{i : ell(i) <= k}`, 0 when the set is empty.
    pub fn inverse(&self, k: usize) -> usize {
        match self {
            EllRule::Linear { slope, intercept } => {
                if k < *intercept {
                    0
                } else {
                    (k - intercept) / slope.max(&1)
                }
            }
        }
    }
}

#[derive(Clone, Debug)]
pub enum LocalVariant {
    /// Strongly locally continuous: the kernel is pinned once the lookback
    /// past a 2 reaches depth `ell(i)`.
    Strong { ell: EllRule },
    /// Uniformly locally continuous with rate `alpha_bar_k`.
    Uniform { alpha_bar: AlphaSequence },
}

/// Description of a kernel that is locally continuous with respect to the
/// all-ones past.
#[derive(Clone, Debug)]
pub struct LocalContinuitySpec {
    pub variant: LocalVariant,
    pub alpha0: f64,
    pub alpha2: f64,
}

impl LocalContinuitySpec {
    /// The derived climb sequence: `r_0 = alpha_0` and a running max of
    /// the variant-specific rate.
    pub fn r_sequence(&self, kmax: usize) -> Vec<f64> {
        let mut out = Vec::with_capacity(kmax + 1);
        let mut cur = self.alpha0;
        out.push(cur);
        for k in 1..=kmax {
            let raw = match &self.variant {
                LocalVariant::Strong { ell } => {
                    1.0 - (1.0 - self.alpha2).powi(ell.inverse(k) as i32)
                }
                LocalVariant::Uniform { alpha_bar } => 1.0 - (1.0 - alpha_bar.get(k)) / self.alpha2,
            };
            cur = cur.max(raw);
            out.push(cur.clamp(0.0, 1.0));
        }
        out
    }

    /// Numeric divergence check for `sum_k prod_{i<k} r_i`.
    pub fn divergence_ok(&self, probe: usize) -> bool {
        let r = self.r_sequence(probe);
        let survival: f64 = r[..probe].iter().product();
        survival > 1e-9
    }
}

#[derive(Clone, Copy, Debug)]
pub struct LocalBound {
    pub u: f64,
    pub v: f64,
    pub total: f64,
}

/// `u_k + v_{floor(k alpha(2) / 2)}` on the derived climb sequence.
pub fn bound_local_continuity(
    spec: &LocalContinuitySpec,
    k: usize,
) -> Result<LocalBound, BoundsError> {
    if !spec.divergence_ok(4096) {
        return Err(BoundsError::DivergenceCheckFailed);
    }
    let u = uk(spec.alpha2, k, UkMode::Exact)?;
    let m = (k as f64 * spec.alpha2 / 2.0).floor() as usize;
    let r = spec.r_sequence(m + 1);
    let hoc = HocSpec::explicit(r)?;
    let v = vk_dp(&hoc, m)[m];
    Ok(LocalBound { u, v, total: u + v })
}

// ---------------------------------------------------------------------------
// Report
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct DbarRow {
    pub k: usize,
    pub dbar: FreqEstimate,
    pub b_summable: BoundCell,
    pub b_ell: BoundCell,
    pub b_theta: BoundCell,
    pub b_achier: BoundCell,
    pub b_local: BoundCell,
    pub verdicts: [Verdict; 5],
}

#[derive(Clone, Debug)]
pub struct DbarReport {
    pub kernel_id: String,
    pub rows: Vec<DbarRow>,
}

impl DbarReport {
    /// Any applicable bound violated beyond the combined 3-sigma slack.
    pub fn any_violation(&self) -> bool {
        self.rows
            .iter()
            .any(|r| r.verdicts.contains(&Verdict::Violated))
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "kernel,k,dbar_hat,dbar_ci,b_summable,b_ell,b_theta,b_achier,b_local,verdicts\n",
        );
        for r in &self.rows {
            let verdicts = format!(
                "summable={};ell={};theta={};achier={};local={}",
                r.verdicts[0], r.verdicts[1], r.verdicts[2], r.verdicts[3], r.verdicts[4]
            );
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.kernel_id,
                r.k,
                r.dbar.p_hat,
                r.dbar.wilson_half,
                r.b_summable.csv(),
                r.b_ell.csv(),
                r.b_theta.csv(),
                r.b_achier.csv(),
                r.b_local.csv(),
                verdicts
            ));
        }
        out
    }
}

/// Runs the full comparison: empirical d-bar estimate plus every
/// applicable theoretical bound, one row per requested `k`.
pub fn report(
    kernel: &Arc<Kernel>,
    kernel_id: &str,
    ks: &[usize],
    cfg: &DbarConfig,
) -> Result<DbarReport, BoundsError> {
    let alpha = kernel.alpha_seq(4096)?;
    let dbar = estimate_dbar_multi(kernel, ks, cfg)?;

    let weakly_non_null = alpha.get(0) > 0.0;
    let detector = if weakly_non_null {
        ThetaDetector::Prime
    } else {
        ThetaDetector::Vwnn
    };
    let thetas = ThetaSamples::collect(
        kernel,
        detector,
        cfg.theta_replicas,
        cfg.seed ^ 0x7468_6574,
        cfg.workers,
        &cfg.cftp,
    )?;

    let is_renewal = matches!(kernel.as_ref(), Kernel::Renewal(_));
    let (ell_thetas, ells) = if is_renewal {
        let t = ThetaSamples::collect(
            kernel,
            ThetaDetector::Ell,
            cfg.theta_replicas,
            cfg.seed ^ 0x656c_6c74,
            cfg.workers,
            &cfg.cftp,
        )?;
        let e = ell_samples(
            kernel,
            cfg.theta_replicas,
            cfg.seed ^ 0x656c_6c73,
            cfg.workers,
            &cfg.cftp,
        )?;
        (Some(t), Some(e))
    } else {
        (None, None)
    };

    let mut rows = Vec::with_capacity(ks.len());
    for (i, &k) in ks.iter().enumerate() {
        let b_summable = match bound_summable(&alpha, k, &thetas) {
            Ok(c) => c,
            Err(BoundsError::NonSummable) => BoundCell::NotApplicable,
            Err(e) => return Err(e),
        };
        let b_ell = match (&ell_thetas, &ells) {
            (Some(t), Some(e)) => bound_ell(t, e, k),
            _ => BoundCell::NotApplicable,
        };
        // a tail at or beyond the window cap is unobservable
        let b_theta = if (k as u64) < cfg.cftp.window_cap {
            bound_theta_tail(&thetas, k)
        } else {
            BoundCell::NotApplicable
        };
        let b_achier = match bound_achier(&alpha, k) {
            Ok(v) => BoundCell::Value {
                value: v,
                sigma: 0.0,
            },
            Err(BoundsError::NotApplicable(_)) => BoundCell::NotApplicable,
            Err(e) => return Err(e),
        };
        let b_local = match &cfg.local_spec {
            Some(spec) => match bound_local_continuity(spec, k) {
                Ok(lb) => BoundCell::Value {
                    value: lb.total,
                    sigma: 0.0,
                },
                Err(BoundsError::DivergenceCheckFailed) | Err(BoundsError::Conc(_)) => {
                    BoundCell::NotApplicable
                }
                Err(e) => return Err(e),
            },
            None => BoundCell::NotApplicable,
        };
        let verdicts = [
            verdict(&dbar[i], &b_summable),
            verdict(&dbar[i], &b_ell),
            verdict(&dbar[i], &b_theta),
            verdict(&dbar[i], &b_achier),
            verdict(&dbar[i], &b_local),
        ];
        rows.push(DbarRow {
            k,
            dbar: dbar[i],
            b_summable,
            b_ell,
            b_theta,
            b_achier,
            b_local,
            verdicts,
        });
    }
    Ok(DbarReport {
        kernel_id: kernel_id.to_string(),
        rows,
    })
}

/// Theory-only CSV in long format: `kernel,k,bound,value,applicable`.
pub fn theory_csv(
    kernel: &Arc<Kernel>,
    kernel_id: &str,
    ks: &[usize],
    cfg: &DbarConfig,
) -> Result<String, BoundsError> {
    let alpha = kernel.alpha_seq(4096)?;
    let detector = if alpha.get(0) > 0.0 {
        ThetaDetector::Prime
    } else {
        ThetaDetector::Vwnn
    };
    let thetas = ThetaSamples::collect(
        kernel,
        detector,
        cfg.theta_replicas,
        cfg.seed ^ 0x7468_6574,
        cfg.workers,
        &cfg.cftp,
    )?;
    let is_renewal = matches!(kernel.as_ref(), Kernel::Renewal(_));
    let (ell_thetas, ells) = if is_renewal {
        (
            Some(ThetaSamples::collect(
                kernel,
                ThetaDetector::Ell,
                cfg.theta_replicas,
                cfg.seed ^ 0x656c_6c74,
                cfg.workers,
                &cfg.cftp,
            )?),
            Some(ell_samples(
                kernel,
                cfg.theta_replicas,
                cfg.seed ^ 0x656c_6c73,
                cfg.workers,
                &cfg.cftp,
            )?),
        )
    } else {
        (None, None)
    };

    let mut out = String::from("kernel,k,bound,value,applicable\n");
    let mut push = |k: usize, name: &str, cell: &BoundCell| match cell {
        BoundCell::Value { value, .. } => {
            out.push_str(&format!("{kernel_id},{k},{name},{value},yes\n"))
        }
        BoundCell::NotApplicable => out.push_str(&format!("{kernel_id},{k},{name},,no\n")),
    };
    for &k in ks {
        let b_summable = match bound_summable(&alpha, k, &thetas) {
            Ok(c) => c,
            Err(_) => BoundCell::NotApplicable,
        };
        push(k, "summable", &b_summable);
        let b_ell = match (&ell_thetas, &ells) {
            (Some(t), Some(e)) => bound_ell(t, e, k),
            _ => BoundCell::NotApplicable,
        };
        push(k, "ell", &b_ell);
        let b_theta = if (k as u64) < cfg.cftp.window_cap {
            bound_theta_tail(&thetas, k)
        } else {
            BoundCell::NotApplicable
        };
        push(k, "theta", &b_theta);
        let b_achier = match bound_achier(&alpha, k) {
            Ok(v) => BoundCell::Value {
                value: v,
                sigma: 0.0,
            },
            Err(_) => BoundCell::NotApplicable,
        };
        push(k, "achier", &b_achier);
        let b_local = match &cfg.local_spec {
            Some(spec) => match bound_local_continuity(spec, k) {
                Ok(lb) => BoundCell::Value {
                    value: lb.total,
                    sigma: 0.0,
                },
                Err(_) => BoundCell::NotApplicable,
            },
            None => BoundCell::NotApplicable,
        };
        push(k, "local", &b_local);
    }
    Ok(out)
}
