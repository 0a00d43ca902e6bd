//! Coupling-from-the-past engine.
//!
//! Everything here runs on a counter-based uniform stream, so growing the
//! window backwards re-reads identical uniforms and detectors are stable
//! under window extension.
//!
//! The engine provides:
//!
//! - `apply_update`: the recursive sample construction from a fixed past;
//! - coalescence detectors: `theta_prime` (the envelope criterion on the
//!   canonical partition, the last-uniform-in-`I(2)` criterion on the
//!   renewal partition), `theta_vwnn` (the block construction for very
//!   weakly non-null kernels), and `theta_ell` (the lookahead depth
//!   criterion for renewal kernels);
//! - `reconstruct`: the value of the stationary chain at time 0 (and the
//!   window back to the coalescence time), cross-checked over probe pasts;
//! - `sample_window`: exact stationary samples over arbitrary windows by
//!   anchored construction with lazy backward deepening;
//! - `CoupledSimulator`: the coupled pair (chain, k-step approximation) on
//!   one shared stream, for any set of orders `k` at once.

use crate::kernel::{Kernel, Past, PastSource, Symbol};
use crate::markov_approx::{pk_auto, ApproxError};
use crate::partition::{
    truncate, PartitionError, PartitionKind, RangePartition, TruncatedPartition,
};
use crate::stream::UniformStream;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CftpError {
    #[error("coalescence not found within window cap {cap}")]
    WindowCapExceeded { cap: u64 },
    #[error("coalescence violation: {0}")]
    CoalescenceViolation(String),
    #[error("past too short: construction needs depth {needed}")]
    PastTooShort { needed: usize },
    #[error("detector not applicable: {0}")]
    NotApplicable(String),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Approx(Box<ApproxError>),
}

impl From<ApproxError> for CftpError {
    fn from(e: ApproxError) -> Self {
        CftpError::Approx(Box::new(e))
    }
}

#[derive(Clone, Copy, Debug)]
pub struct CftpConfig {
    /// Hard cap on how far back any detector scans.
    pub window_cap: u64,
    /// Number of random probe pasts used to validate coalescence (two
    /// constant pasts are always added).
    pub probes: usize,
}

impl Default for CftpConfig {
    fn default() -> Self {
        CftpConfig {
            window_cap: 1 << 20,
            probes: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DetectorMethod {
    ThetaPrime,
    VwnnWYQ,
    EllBased,
    RenewalLast2,
}

impl std::fmt::Display for DetectorMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DetectorMethod::ThetaPrime => write!(f, "theta_prime"),
            DetectorMethod::VwnnWYQ => write!(f, "vwnn_WYQ"),
            DetectorMethod::EllBased => write!(f, "ell_based"),
            DetectorMethod::RenewalLast2 => write!(f, "renewal_last2"),
        }
    }
}

/// A detected coalescence time for index 0.
#[derive(Clone, Copy, Debug)]
pub struct CoalescenceResult {
    pub theta0: i64,
    pub method: DetectorMethod,
    /// Deepest index examined during the search (as a positive depth).
    pub window_used: u64,
}

// ---------------------------------------------------------------------------
// Past views
// ---------------------------------------------------------------------------

/// Infinite probe pasts for coalescence validation.
#[derive(Clone, Debug)]
pub enum ProbePast {
    Constant(Symbol),
    Random {
        stream: UniformStream,
        alphabet: usize,
    },
}

impl ProbePast {
    fn at_lag_infinite(&self, lag: usize) -> Symbol {
        match self {
            ProbePast::Constant(s) => *s,
            ProbePast::Random { stream, alphabet } => {
                let u = stream.uniform(-(lag as i64));
                Symbol::from_index((u * *alphabet as f64) as usize)
            }
        }
    }
}

impl PastSource for ProbePast {
    fn at_lag(&self, lag: usize) -> Option<Symbol> {
        Some(self.at_lag_infinite(lag))
    }
}

#[derive(Clone, Copy)]
enum Base<'a> {
    None,
    Finite(&'a Past),
    Probe(&'a ProbePast),
}

/// A window of constructed symbols (`built[..upto]`) backed by an optional
/// deeper past.
struct View<'a> {
    built: &'a [Symbol],
    upto: usize,
    base: Base<'a>,
}

impl PastSource for View<'_> {
    fn at_lag(&self, lag: usize) -> Option<Symbol> {
        if lag == 0 {
            return None;
        }
        if lag <= self.upto {
            Some(self.built[self.upto - lag])
        } else {
            match self.base {
                Base::None => None,
                Base::Finite(p) => p.at_lag(lag - self.upto),
                Base::Probe(p) => Some(p.at_lag_infinite(lag - self.upto)),
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Recursive construction
// ---------------------------------------------------------------------------

/// Applies the update function recursively over times `m..=n` on the fixed
/// finite past, returning the constructed string. The last entry is the
/// sample at time `n`.
pub fn apply_update(
    partition: &RangePartition,
    past: &Past,
    stream: &UniformStream,
    m: i64,
    n: i64,
) -> Result<Vec<Symbol>, CftpError> {
    assert!(m <= n);
    let mut built = Vec::with_capacity((n - m + 1) as usize);
    for j in m..=n {
        let view = View {
            built: &built,
            upto: built.len(),
            base: Base::Finite(past),
        };
        match partition.locate(&view, stream.uniform(j)) {
            Ok(lk) => built.push(lk.symbol),
            Err(PartitionError::PastTooShort { needed }) => {
                return Err(CftpError::PastTooShort {
                    needed: needed - built.len(),
                })
            }
            Err(e) => return Err(e.into()),
        }
    }
    Ok(built)
}

fn propagate_probe(
    partition: &RangePartition,
    probe: &ProbePast,
    stream: &UniformStream,
    m: i64,
    n: i64,
) -> Result<Vec<Symbol>, CftpError> {
    let mut built = Vec::with_capacity((n - m + 1) as usize);
    for j in m..=n {
        let view = View {
            built: &built,
            upto: built.len(),
            base: Base::Probe(probe),
        };
        built.push(partition.locate(&view, stream.uniform(j))?.symbol);
    }
    Ok(built)
}

// ---------------------------------------------------------------------------
// Engine
// ---------------------------------------------------------------------------

/// A partition together with its precomputed continuity envelope; the unit
/// all detectors and samplers run on.
pub struct Engine {
    partition: Arc<RangePartition>,
    alpha: crate::kernel::AlphaSequence,
}

/// Depth guard for the precomputed envelope.
const ALPHA_KMAX: usize = 4096;

impl Engine {
    pub fn new(partition: Arc<RangePartition>) -> Result<Self, CftpError> {
        let alpha = partition
            .kernel()
            .alpha_seq(ALPHA_KMAX)
            .map_err(PartitionError::from)?;
        Ok(Engine { partition, alpha })
    }

    pub fn partition(&self) -> &Arc<RangePartition> {
        &self.partition
    }

    pub fn alpha(&self) -> &crate::kernel::AlphaSequence {
        &self.alpha
    }

    /// Largest `i <= start` from which the construction is past-independent
    /// through `cond_end`:
    ///
    /// - canonical: the envelope criterion `U_j <= alpha_{j-i}` for
    ///   `j = i..=cond_end` (so every lookup range stays inside the built
    ///   window);
    /// - renewal: `U_i` inside `I(2 | empty)`.
    ///
    /// Returns `(anchor, deepest_scanned)`.
    fn anchor_below(
        &self,
        stream: &UniformStream,
        cond_end: i64,
        start: i64,
        cap: u64,
    ) -> Result<(i64, u64), CftpError> {
        match self.partition.kind() {
            PartitionKind::Renewal => {
                let a2 = match self.partition.kernel().as_ref() {
                    Kernel::Renewal(rk) => rk.alpha_two(),
                    _ => unreachable!(),
                };
                let mut i = start;
                loop {
                    if stream.uniform(i) < a2 {
                        return Ok((i, (cond_end - i) as u64));
                    }
                    // the cap bounds search effort below the requested start
                    if (start - i) as u64 >= cap {
                        return Err(CftpError::WindowCapExceeded { cap });
                    }
                    i -= 1;
                }
            }
            PartitionKind::Canonical => {
                // candidate i is viable iff i <= min_{j in [i, cond_end]}
                // (j - d_j), d_j the envelope depth of U_j
                let mut bound = i64::MAX;
                let mut j = cond_end;
                loop {
                    match self.alpha.depth_above(stream.uniform(j)) {
                        Some(d) => bound = bound.min(j - d as i64),
                        None => bound = i64::MIN,
                    }
                    if j <= start && j <= bound {
                        return Ok((j, (cond_end - j) as u64));
                    }
                    if j <= start && (start - j) as u64 >= cap {
                        return Err(CftpError::WindowCapExceeded { cap });
                    }
                    j -= 1;
                }
            }
        }
    }

    /// The envelope coalescence time for index 0.
    ///
    /// Canonical partition: `max{i <= 0 : U_j <= alpha_{j-i} for all
    /// j in [i, 0]}`. Renewal partition: `max{i <= 0 : U_i in I(2|empty)}`.
    pub fn theta_prime(
        &self,
        stream: &UniformStream,
        cfg: &CftpConfig,
    ) -> Result<CoalescenceResult, CftpError> {
        let (theta0, window_used) = self.anchor_below(stream, 0, 0, cfg.window_cap)?;
        let method = match self.partition.kind() {
            PartitionKind::Canonical => DetectorMethod::ThetaPrime,
            PartitionKind::Renewal => DetectorMethod::RenewalLast2,
        };
        Ok(CoalescenceResult {
            theta0,
            method,
            window_used,
        })
    }

    /// The block-coalescence detector for very weakly non-null kernels.
    ///
    /// `kstar` is the smallest `k` with `alpha_k > 0`. Between markers
    /// (`U >= alpha_kstar`) the construction only looks back `kstar` steps;
    /// a block qualifies when propagating every length-`kstar` starting
    /// context through it merges the final `kstar` symbols.
    pub fn theta_vwnn(
        &self,
        stream: &UniformStream,
        kstar: usize,
        cfg: &CftpConfig,
    ) -> Result<CoalescenceResult, CftpError> {
        if self.partition.kind() != PartitionKind::Canonical {
            return Err(CftpError::NotApplicable(
                "vwnn detector runs on the canonical partition".into(),
            ));
        }
        let n = self.partition.kernel().alphabet();
        if (n as u128).pow(kstar as u32) > 256 {
            return Err(CftpError::NotApplicable(format!(
                "alphabet^kstar = {n}^{kstar} exceeds the enumeration cap 256"
            )));
        }
        let a_ks = self.alpha.get(kstar);
        if a_ks <= 1e-12 {
            return Err(CftpError::NotApplicable(format!(
                "alpha_{kstar} = 0; kstar must satisfy alpha_kstar > 0"
            )));
        }
        let cap = cfg.window_cap;

        if a_ks >= 1.0 - 1e-12 {
            // degenerate: the kernel is kstar-Markov under the envelope
            if kstar == 0 {
                return Ok(CoalescenceResult {
                    theta0: 0,
                    method: DetectorMethod::VwnnWYQ,
                    window_used: 0,
                });
            }
            let mut m = kstar as i64 + 1;
            while (m as u64) < cap {
                if self.e_member(stream, -m + 1, 0, kstar)? {
                    return Ok(CoalescenceResult {
                        theta0: -m + 1,
                        method: DetectorMethod::VwnnWYQ,
                        window_used: m as u64,
                    });
                }
                m += 1;
            }
            return Err(CftpError::WindowCapExceeded { cap });
        }

        // W/Y/Q loop
        let mut upper = 0i64;
        loop {
            let (w, _) = self.anchor_vwnn(stream, upper, kstar, cap)?;
            let mut y = w - 1;
            while stream.uniform(y) < a_ks {
                y -= 1;
                if (-y) as u64 >= cap {
                    return Err(CftpError::WindowCapExceeded { cap });
                }
            }
            let block_len = (w - 1 - y) as usize;
            if block_len > kstar && self.e_member(stream, y + 1, w - 1, kstar)? {
                return Ok(CoalescenceResult {
                    theta0: y,
                    method: DetectorMethod::VwnnWYQ,
                    window_used: (-y) as u64,
                });
            }
            upper = y;
            if (-upper) as u64 >= cap {
                return Err(CftpError::WindowCapExceeded { cap });
            }
        }
    }

    /// `sup{m <= upper : U_j < alpha_{j-m+kstar} for j = m..=upper}`.
    fn anchor_vwnn(
        &self,
        stream: &UniformStream,
        upper: i64,
        kstar: usize,
        cap: u64,
    ) -> Result<(i64, u64), CftpError> {
        let mut bound = i64::MAX;
        let mut j = upper;
        loop {
            match self.alpha.depth_above(stream.uniform(j)) {
                Some(d) => bound = bound.min(j - d as i64 + kstar as i64),
                None => bound = i64::MIN,
            }
            if j <= bound {
                return Ok((j, (upper - j) as u64));
            }
            if (upper - j) as u64 >= cap || (-j) as u64 >= cap {
                return Err(CftpError::WindowCapExceeded { cap });
            }
            j -= 1;
        }
    }

    /// Block membership test: does propagating every length-`kstar`
    /// starting context through `U_from..=U_to` merge the last `kstar`
    /// symbols?
    fn e_member(
        &self,
        stream: &UniformStream,
        from: i64,
        to: i64,
        kstar: usize,
    ) -> Result<bool, CftpError> {
        if kstar == 0 {
            return Ok(true);
        }
        let n = self.partition.kernel().alphabet();
        let count = (n as u64).pow(kstar as u32);
        let mut merged: Option<Vec<Symbol>> = None;
        for ci in 0..count {
            let mut built = crate::kernel::unpack_context(ci, kstar, n);
            for j in from..=to {
                let view = View {
                    built: &built,
                    upto: built.len(),
                    base: Base::None,
                };
                built.push(self.partition.locate(&view, stream.uniform(j))?.symbol);
            }
            let tail = built[built.len() - kstar..].to_vec();
            match &merged {
                None => merged = Some(tail),
                Some(prev) if *prev != tail => return Ok(false),
                _ => {}
            }
        }
        Ok(true)
    }

    /// Exact stationary sample over the fixed window `from..=to`.
    ///
    /// Anchors at a coalescence time below `from` and constructs forward;
    /// whenever a lookup reaches past the anchored history, a deeper anchor
    /// is found and the gap filled in (the already-built symbols are exact
    /// and unaffected).
    pub fn sample_window(
        &self,
        stream: &UniformStream,
        from: i64,
        to: i64,
        cfg: &CftpConfig,
    ) -> Result<Vec<Symbol>, CftpError> {
        assert!(from <= to);
        let (anchor, _) = self.anchor_below(stream, from, from, cfg.window_cap)?;
        let (buf, lo) = self.build_anchored(stream, anchor, to, cfg, None)?;
        let start = (from - lo) as usize;
        Ok(buf[start..].to_vec())
    }

    /// Builds times `anchor..=to` from scratch, deepening lazily. Returns
    /// `(buffer, lowest_time, ranges)` where `ranges[i]` is the lookup range
    /// used at time `anchor + i` (only recorded at `anchor` and above).
    fn build_anchored(
        &self,
        stream: &UniformStream,
        anchor: i64,
        to: i64,
        cfg: &CftpConfig,
        mut ranges: Option<&mut Vec<usize>>,
    ) -> Result<(Vec<Symbol>, i64), CftpError> {
        let mut buf: Vec<Symbol> = Vec::with_capacity((to - anchor + 1) as usize);
        let mut lo = anchor;
        for j in anchor..=to {
            loop {
                let upto = (j - lo) as usize;
                let view = View {
                    built: &buf,
                    upto,
                    base: Base::None,
                };
                match self.partition.locate(&view, stream.uniform(j)) {
                    Ok(lk) => {
                        buf.push(lk.symbol);
                        if let Some(r) = ranges.as_deref_mut() {
                            r.push(lk.range);
                        }
                        break;
                    }
                    Err(PartitionError::PastTooShort { .. }) => {
                        let (deeper, _) =
                            self.anchor_below(stream, lo - 1, lo - 1, cfg.window_cap)?;
                        let mut seg: Vec<Symbol> = Vec::with_capacity((lo - deeper) as usize);
                        for t in deeper..lo {
                            let v = View {
                                built: &seg,
                                upto: seg.len(),
                                base: Base::None,
                            };
                            // the anchor criterion guarantees these resolve
                            seg.push(self.partition.locate(&v, stream.uniform(t))?.symbol);
                        }
                        buf.splice(0..0, seg);
                        lo = deeper;
                        if (to - lo) as u64 >= cfg.window_cap {
                            return Err(CftpError::WindowCapExceeded {
                                cap: cfg.window_cap,
                            });
                        }
                    }
                    Err(e) => return Err(e.into()),
                }
            }
        }
        Ok((buf, lo))
    }

    /// The reconstruction over `[theta0, 0]`, validated across probe pasts.
    ///
    /// The value at time 0 must be identical for every probe (that is the
    /// definition of a coalescence time); a mismatch flags a detector bug
    /// as `CoalescenceViolation`. Returns the all-ones-probe window.
    pub fn reconstruct(
        &self,
        stream: &UniformStream,
        theta0: i64,
        cfg: &CftpConfig,
    ) -> Result<Vec<Symbol>, CftpError> {
        let n = self.partition.kernel().alphabet();
        let mut probes = vec![
            ProbePast::Constant(Symbol::from_index(0)),
            ProbePast::Constant(Symbol::from_index(n - 1)),
        ];
        for r in 0..cfg.probes {
            probes.push(ProbePast::Random {
                stream: stream.substream(0x9E0B_E500 + r as u64),
                alphabet: n,
            });
        }
        let mut reference: Option<Vec<Symbol>> = None;
        for probe in &probes {
            let built = propagate_probe(&self.partition, probe, stream, theta0, 0)?;
            match &reference {
                None => reference = Some(built),
                Some(rf) => {
                    if rf.last() != built.last() {
                        return Err(CftpError::CoalescenceViolation(format!(
                            "probe pasts disagree at time 0 from theta0 = {theta0}"
                        )));
                    }
                }
            }
        }
        Ok(reference.unwrap())
    }
}

// Convenience wrappers matching the one-shot call shape.

pub fn theta_prime(
    partition: &Arc<RangePartition>,
    stream: &UniformStream,
    cfg: &CftpConfig,
) -> Result<CoalescenceResult, CftpError> {
    Engine::new(partition.clone())?.theta_prime(stream, cfg)
}

pub fn sample_window(
    partition: &Arc<RangePartition>,
    stream: &UniformStream,
    from: i64,
    to: i64,
    cfg: &CftpConfig,
) -> Result<Vec<Symbol>, CftpError> {
    Engine::new(partition.clone())?.sample_window(stream, from, to, cfg)
}

pub fn reconstruct(
    partition: &Arc<RangePartition>,
    stream: &UniformStream,
    theta0: i64,
    cfg: &CftpConfig,
) -> Result<Vec<Symbol>, CftpError> {
    Engine::new(partition.clone())?.reconstruct(stream, theta0, cfg)
}

// ---------------------------------------------------------------------------
// The ell-based detector (renewal kernels)
// ---------------------------------------------------------------------------

/// Lookahead depth `ell(U_{-inf}^{i})`: the smallest `j` with
/// `U_i < A_j(U_{i-j}^{i-1})`.
///
/// For renewal kernels `A_j` is exact in closed form: it equals 1 as soon
/// as some `U_{i-l}`, `l <= j`, falls in `I(2|empty)` (the pinned positions
/// force a 2 within range), and the all-ones envelope
/// `1 - sup_{l,m >= j}|p_l - p_m|` otherwise.
pub fn ell_value(
    rk: &crate::kernel::RenewalKernel,
    stream: &UniformStream,
    i: i64,
    cap: u64,
) -> Result<usize, CftpError> {
    let a2 = rk.alpha_two();
    let u = stream.uniform(i);
    let mut j = 0usize;
    loop {
        // is some U_{i-l}, l in [1, j], inside I(2|empty)?
        if j > 0 && stream.uniform(i - j as i64) < a2 {
            return Ok(j);
        }
        if u < rk.alpha_closed(j) {
            return Ok(j);
        }
        j += 1;
        if j as u64 >= cap {
            return Err(CftpError::WindowCapExceeded { cap });
        }
    }
}

/// `theta0 = sup{j <= 0 : ell(U_{-inf}^{i}) <= i - j for i = j..=0}` for
/// renewal kernels.
pub fn theta_ell(
    rk: &crate::kernel::RenewalKernel,
    stream: &UniformStream,
    cfg: &CftpConfig,
) -> Result<CoalescenceResult, CftpError> {
    let cap = cfg.window_cap;
    let mut bound = i64::MAX;
    let mut i = 0i64;
    loop {
        let ell = ell_value(rk, stream, i, cap)? as i64;
        bound = bound.min(i - ell);
        if i <= bound {
            return Ok(CoalescenceResult {
                theta0: i,
                method: DetectorMethod::EllBased,
                window_used: (-i) as u64,
            });
        }
        if (-i) as u64 >= cap {
            return Err(CftpError::WindowCapExceeded { cap });
        }
        i -= 1;
    }
}

// ---------------------------------------------------------------------------
// Coupled simulation
// ---------------------------------------------------------------------------

/// Coupled sampler of the chain and its k-step approximations on a shared
/// stream (one truncated partition per requested `k`).
pub struct CoupledSimulator {
    engine: Engine,
    truncs: Vec<TruncatedPartition>,
    cfg: CftpConfig,
}

/// One coupled realization over a fixed window.
pub struct CoupledRun {
    /// First reported time (the window is `[window_start, 0]`).
    pub window_start: i64,
    /// The anchor (coalescence time) the construction started from.
    pub theta: i64,
    /// The chain, times `theta..=0`.
    pub x: Vec<Symbol>,
    /// Lookup range used at each step, times `theta..=0`.
    pub ranges: Vec<usize>,
    pub per_k: Vec<CoupledK>,
}

pub struct CoupledK {
    pub k: usize,
    /// The approximating chain, times `theta..=0`.
    pub xk: Vec<Symbol>,
    /// Times in `[window_start, 0]` where the coordinates differ.
    pub disagreements: Vec<i64>,
}

impl CoupledSimulator {
    /// `pk_samples`/`pk_seed` parameterize the empirical fallback table for
    /// kernels with no closed-form `P^(k)` at some requested `k`.
    pub fn new(
        kernel: Arc<Kernel>,
        ks: &[usize],
        pk_samples: u64,
        pk_seed: u64,
        cfg: &CftpConfig,
    ) -> Result<Self, CftpError> {
        let partition = Arc::new(RangePartition::natural(kernel.clone())?);
        let engine = Engine::new(partition.clone())?;
        let mut truncs = Vec::with_capacity(ks.len());
        for &k in ks {
            let pk = pk_auto(&kernel, k, pk_samples, pk_seed, cfg)?;
            truncs.push(truncate(partition.clone(), k, &pk)?);
        }
        Ok(CoupledSimulator {
            engine,
            truncs,
            cfg: *cfg,
        })
    }

    pub fn engine(&self) -> &Engine {
        &self.engine
    }

    pub fn ks(&self) -> Vec<usize> {
        self.truncs.iter().map(|t| t.k()).collect()
    }

    /// Runs the coupled pair over the window `[-(n_steps-1), 0]`.
    ///
    /// Both coordinates start from a shared anchor `theta` with the
    /// envelope condition holding through the window start, which makes
    /// every reported pair an exact sample of the coupled stationary laws.
    pub fn run(&self, stream: &UniformStream, n_steps: u64) -> Result<CoupledRun, CftpError> {
        assert!(n_steps >= 1);
        let m = -(n_steps as i64 - 1);
        let kmax = self.truncs.iter().map(|t| t.k()).max().unwrap_or(0);
        let (anchor, _) =
            self.engine
                .anchor_below(stream, m, m - kmax as i64, self.cfg.window_cap)?;
        let mut ranges = Vec::with_capacity((1 - anchor) as usize);
        let (buf, lo) =
            self.engine
                .build_anchored(stream, anchor, 0, &self.cfg, Some(&mut ranges))?;
        let off = (anchor - lo) as usize;
        let x: Vec<Symbol> = buf[off..].to_vec();

        let mut per_k = Vec::with_capacity(self.truncs.len());
        for tr in &self.truncs {
            let k = tr.k();
            let mut xk: Vec<Symbol> = Vec::with_capacity(x.len());
            let mut disagreements = Vec::new();
            for (idx, j) in (anchor..=0).enumerate() {
                let s = if idx < k {
                    // within the coalesced warm-up both coordinates agree
                    debug_assert!(ranges[idx] <= idx);
                    x[idx]
                } else {
                    let view = View {
                        built: &xk,
                        upto: idx,
                        base: Base::None,
                    };
                    tr.locate(&view, stream.uniform(j))?.symbol
                };
                xk.push(s);
                if j >= m && s != x[idx] {
                    disagreements.push(j);
                }
            }
            per_k.push(CoupledK {
                k,
                xk,
                disagreements,
            });
        }
        Ok(CoupledRun {
            window_start: m,
            theta: anchor,
            x,
            ranges,
            per_k,
        })
    }
}

/// A coupled realization of `(X, X^(k))` with its diagnostics.
pub struct CouplingTrace {
    pub k: usize,
    pub window_start: i64,
    pub theta: i64,
    /// Times `theta..=0`.
    pub x: Vec<Symbol>,
    pub xk: Vec<Symbol>,
    pub ranges: Vec<usize>,
    pub disagreements: Vec<i64>,
}

impl CouplingTrace {
    /// CSV rows `(seed, i, x, xk, range, disagree)` over the reported
    /// window `[window_start, 0]`.
    pub fn to_csv(&self, seed: u64) -> String {
        let mut out = String::from("seed,i,x,xk,range,disagree\n");
        for (idx, j) in (self.theta..=0).enumerate() {
            if j < self.window_start {
                continue;
            }
            let d = u8::from(self.x[idx] != self.xk[idx]);
            out.push_str(&format!(
                "{seed},{j},{},{},{},{d}\n",
                self.x[idx], self.xk[idx], self.ranges[idx]
            ));
        }
        out
    }
}

/// One coupled trace of `(X, X^(k))` over `[-(n_steps-1), 0]`.
pub fn coupled_sample(
    kernel: Arc<Kernel>,
    k: usize,
    stream: &UniformStream,
    n_steps: u64,
    pk_samples: u64,
    cfg: &CftpConfig,
) -> Result<CouplingTrace, CftpError> {
    let sim = CoupledSimulator::new(kernel, &[k], pk_samples, stream.seed() ^ 0x706b, cfg)?;
    let run = sim.run(stream, n_steps)?;
    let kpart = run.per_k.into_iter().next().unwrap();
    Ok(CouplingTrace {
        k,
        window_start: run.window_start,
        theta: run.theta,
        x: run.x,
        xk: kpart.xk,
        ranges: run.ranges,
        disagreements: kpart.disagreements,
    })
}
