//! Range partitions of `[0, 1)` and their k-step truncations.
//!
//! A range partition attaches to every past a partition of `[0, 1)` into
//! intervals labeled `(symbol, range)`, such that the level-`k` interval
//! lengths depend only on the length-`k` suffix of the past and the lengths
//! for a fixed symbol sum to the kernel probability. Two layouts are built:
//!
//! - the canonical partition, whose level-`k` lengths are the increments
//!   `alpha_k(a | suffix_k) - alpha_{k-1}(a | suffix_{k-1})` of the
//!   continuity quantities, and
//! - the renewal partition for the binary renewal kernel: all mass at
//!   range 0 except one level at range `t + 1`, where `t` is the time since
//!   the last symbol 2.
//!
//! Levels stack by increasing range. Inside a level, symbols are laid out in
//! increasing numeric order, with one exception pinned by the renewal
//! coalescence criterion: the renewal level 0 is `[0, alpha(2))` for
//! symbol 2 followed by `[alpha(2), alpha_0)` for symbol 1, so that
//! "the last uniform inside I(2|empty)" is a prefix-interval test.
//!
//! All interval comparisons are half-open: `u` belongs to `[lo, hi)`.

use crate::kernel::{
    context_count, pack_context, symbols, unpack_context, Kernel, KernelError, PastSource, Symbol,
};
use crate::markov_approx::PkTable;
use dashmap::DashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use thiserror::Error;

/// Numerical residue below which a continuous kernel's leak is clamped.
pub const RESIDUAL_TOL: f64 = 1e-9;
/// Tolerance for leftover nonnegativity in truncation.
pub const LEFTOVER_TOL: f64 = 1e-9;
/// Hard guard on range resolution depth inside a single lookup.
pub const MAX_RESOLVE_DEPTH: usize = 1 << 20;

#[derive(Debug, Error)]
pub enum PartitionError {
    #[error("past too short: lookup needs depth {needed}")]
    PastTooShort { needed: usize },
    #[error("u = {u} falls in the residual set of a continuous kernel (leak {leak:.3e})")]
    NoResidualMass { u: f64, leak: f64 },
    #[error("negative leftover {deficit:.3e} for symbol {symbol} in context {context}")]
    NegativeLeftover {
        context: String,
        symbol: u8,
        deficit: f64,
    },
    #[error("range resolution exceeded depth {depth}")]
    ResolutionExceeded { depth: usize },
    #[error("invalid kernel for this partition: {0}")]
    InvalidKernel(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
}

/// Joint (symbol, range) lookup result of the update and range functions.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Lookup {
    pub symbol: Symbol,
    pub range: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PartitionKind {
    Canonical,
    Renewal,
}

/// Lazily evaluated range partition with a shared per-context length cache.
///
/// Immutable after construction; the cache is concurrent-read with
/// synchronized insert, so one partition can serve many workers.
pub struct RangePartition {
    kernel: Arc<Kernel>,
    kind: PartitionKind,
    /// `(k, packed ctx) -> per-symbol alpha_k(a | ctx)` for the canonical
    /// layout.
    alpha_cache: DashMap<(usize, u64), Arc<Vec<f64>>>,
    clamped: AtomicU64,
}

impl RangePartition {
    /// The canonical partition, defined for every kernel family.
    pub fn canonical(kernel: Arc<Kernel>) -> Self {
        RangePartition {
            kernel,
            kind: PartitionKind::Canonical,
            alpha_cache: DashMap::new(),
            clamped: AtomicU64::new(0),
        }
    }

    /// The two-point renewal partition; requires a renewal kernel with
    /// positive range-0 mass for both symbols.
    pub fn renewal(kernel: Arc<Kernel>) -> Result<Self, PartitionError> {
        match kernel.as_ref() {
            Kernel::Renewal(rk) => {
                if rk.alpha_two() <= 0.0 || rk.alpha_one() <= 0.0 {
                    return Err(PartitionError::InvalidKernel(
                        "renewal partition needs alpha(1), alpha(2) > 0".into(),
                    ));
                }
            }
            _ => {
                return Err(PartitionError::InvalidKernel(
                    "renewal partition only applies to renewal kernels".into(),
                ))
            }
        }
        Ok(RangePartition {
            kernel,
            kind: PartitionKind::Renewal,
            alpha_cache: DashMap::new(),
            clamped: AtomicU64::new(0),
        })
    }

    /// Builds the natural partition for the kernel family: the renewal
    /// layout for renewal kernels, the canonical one otherwise.
    pub fn natural(kernel: Arc<Kernel>) -> Result<Self, PartitionError> {
        match kernel.as_ref() {
            Kernel::Renewal(_) => RangePartition::renewal(kernel),
            _ => Ok(RangePartition::canonical(kernel)),
        }
    }

    pub fn kernel(&self) -> &Arc<Kernel> {
        &self.kernel
    }

    pub fn kind(&self) -> PartitionKind {
        self.kind
    }

    /// How many tiny negative increments were clamped to zero so far.
    pub fn clamped_count(&self) -> u64 {
        self.clamped.load(Ordering::Relaxed)
    }

    fn alpha_row<S: PastSource + ?Sized>(
        &self,
        src: &S,
        k: usize,
    ) -> Result<Arc<Vec<f64>>, PartitionError> {
        let n = self.kernel.alphabet();
        // the packed cache key must stay collision-free
        if (n as u64).checked_pow(k as u32).is_none() {
            return Err(PartitionError::ResolutionExceeded { depth: k });
        }
        let ctx_idx = pack_context(src, k, n).ok_or(PartitionError::PastTooShort { needed: k })?;
        if let Some(row) = self.alpha_cache.get(&(k, ctx_idx)) {
            return Ok(row.clone());
        }
        let ctx = unpack_context(ctx_idx, k, n);
        let row = Arc::new(self.kernel.alpha_symbols(&ctx)?);
        self.alpha_cache.insert((k, ctx_idx), row.clone());
        Ok(row)
    }

    /// Per-symbol interval lengths of level `k`, in layout order.
    ///
    /// Needs the length-`k` suffix of `src`; errors with `PastTooShort`
    /// otherwise.
    pub fn level_layout<S: PastSource + ?Sized>(
        &self,
        src: &S,
        k: usize,
    ) -> Result<Vec<(Symbol, f64)>, PartitionError> {
        let n = self.kernel.alphabet();
        match self.kind {
            PartitionKind::Canonical => {
                let row = self.alpha_row(src, k)?;
                let prev: Arc<Vec<f64>> = if k == 0 {
                    Arc::new(vec![0.0; n])
                } else {
                    self.alpha_row(src, k - 1)?
                };
                Ok(symbols(n)
                    .map(|a| {
                        let inc = row[a.index()] - prev[a.index()];
                        if inc < 0.0 {
                            debug_assert!(inc > -1e-12, "alpha increment {inc}");
                            self.clamped.fetch_add(1, Ordering::Relaxed);
                            (a, 0.0)
                        } else {
                            (a, inc)
                        }
                    })
                    .collect())
            }
            PartitionKind::Renewal => {
                let rk = self.renewal_kernel();
                if k == 0 {
                    // pinned order: symbol 2 first, then symbol 1
                    return Ok(vec![
                        (Symbol::from_index(1), rk.alpha_two()),
                        (Symbol::from_index(0), rk.alpha_one()),
                    ]);
                }
                // nonzero only when the suffix pins t(past) = k - 1
                for lag in 1..k {
                    match src.at_lag(lag) {
                        Some(s) if s.value() == 2 => return Ok(vec![]),
                        Some(_) => {}
                        None => return Err(PartitionError::PastTooShort { needed: lag }),
                    }
                }
                match src.at_lag(k) {
                    Some(s) if s.value() == 2 => {
                        let t = k - 1;
                        let p = rk.p_at(t);
                        Ok(vec![
                            (Symbol::from_index(0), 1.0 - p - rk.alpha_one()),
                            (Symbol::from_index(1), p - rk.alpha_two()),
                        ])
                    }
                    Some(_) => Ok(vec![]),
                    None => Err(PartitionError::PastTooShort { needed: k }),
                }
            }
        }
    }

    fn renewal_kernel(&self) -> &crate::kernel::RenewalKernel {
        match self.kernel.as_ref() {
            Kernel::Renewal(rk) => rk,
            _ => unreachable!("renewal layout on non-renewal kernel"),
        }
    }

    /// Cumulative per-symbol mass of levels `0..=k`:
    /// `sum_{j<=k} |I_j(a | suffix_j)|`.
    pub fn cumulative_masses<S: PastSource + ?Sized>(
        &self,
        src: &S,
        k: usize,
    ) -> Result<Vec<f64>, PartitionError> {
        let n = self.kernel.alphabet();
        let mut cum = vec![0.0; n];
        for j in 0..=k {
            for (a, len) in self.level_layout(src, j)? {
                cum[a.index()] += len;
            }
        }
        Ok(cum)
    }

    /// The update/range lookup `(F(past, u), L(past, u))`.
    ///
    /// Deterministic, half-open. `PastTooShort(needed)` asks the CFTP
    /// driver to expose a deeper window.
    pub fn locate<S: PastSource + ?Sized>(
        &self,
        src: &S,
        u: f64,
    ) -> Result<Lookup, PartitionError> {
        debug_assert!((0.0..1.0).contains(&u));
        match self.kind {
            PartitionKind::Canonical => self.locate_canonical(src, u),
            PartitionKind::Renewal => self.locate_renewal(src, u),
        }
    }

    fn locate_canonical<S: PastSource + ?Sized>(
        &self,
        src: &S,
        u: f64,
    ) -> Result<Lookup, PartitionError> {
        let max_order = self.kernel.max_order();
        let mut base = 0.0f64;
        let mut k = 0usize;
        loop {
            let layout = self.level_layout(src, k)?;
            let level_top: f64 = base + layout.iter().map(|(_, l)| l).sum::<f64>();
            let is_last = max_order == Some(k);
            let top = if is_last {
                let leak = 1.0 - level_top;
                if leak > RESIDUAL_TOL {
                    return Err(PartitionError::NoResidualMass { u, leak });
                }
                1.0
            } else {
                level_top
            };
            if u < top {
                let mut acc = base;
                let last = layout.len() - 1;
                for (i, (a, len)) in layout.iter().enumerate() {
                    if u < acc + len || i == last {
                        return Ok(Lookup {
                            symbol: *a,
                            range: k,
                        });
                    }
                    acc += len;
                }
            }
            base = level_top;
            k += 1;
            if k > MAX_RESOLVE_DEPTH {
                return Err(PartitionError::ResolutionExceeded { depth: k });
            }
        }
    }

    fn locate_renewal<S: PastSource + ?Sized>(
        &self,
        src: &S,
        u: f64,
    ) -> Result<Lookup, PartitionError> {
        let rk = self.renewal_kernel();
        let a2 = rk.alpha_two();
        let a0 = a2 + rk.alpha_one();
        if u < a2 {
            return Ok(Lookup {
                symbol: Symbol::from_index(1),
                range: 0,
            });
        }
        if u < a0 {
            return Ok(Lookup {
                symbol: Symbol::from_index(0),
                range: 0,
            });
        }
        let t = match rk.age(src) {
            crate::kernel::AgeLookup::Found(t) => t,
            crate::kernel::AgeLookup::NeedDeeper(needed) => {
                return Err(PartitionError::PastTooShort { needed })
            }
        };
        let p = rk.p_at(t);
        let split = a0 + (1.0 - p - rk.alpha_one());
        let symbol = if u < split {
            Symbol::from_index(0)
        } else {
            Symbol::from_index(1)
        };
        Ok(Lookup {
            symbol,
            range: t + 1,
        })
    }
}

// ---------------------------------------------------------------------------
// Truncation
// ---------------------------------------------------------------------------

/// The k-step truncation: base levels `0..=k` plus per-context leftover
/// intervals `|I^(k)(a|ctx)| = P^(k)(a|ctx) - sum_{j<=k} |I_j(a|ctx_j)|`,
/// which carry range `k` in lookups.
pub struct TruncatedPartition {
    base: Arc<RangePartition>,
    k: usize,
    /// `leftover[ctx][a.index()]`, contexts packed as in [`pack_context`].
    leftover: Vec<Vec<f64>>,
    clamped: u64,
}

impl TruncatedPartition {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn base(&self) -> &Arc<RangePartition> {
        &self.base
    }

    pub fn clamped_count(&self) -> u64 {
        self.clamped
    }

    pub fn leftover_row(&self, ctx: u64) -> &[f64] {
        &self.leftover[ctx as usize]
    }

    /// Lookup against the truncated layout. Needs exactly the length-`k`
    /// suffix of `src`.
    pub fn locate<S: PastSource + ?Sized>(
        &self,
        src: &S,
        u: f64,
    ) -> Result<Lookup, PartitionError> {
        let n = self.base.kernel.alphabet();
        let mut acc = 0.0f64;
        for j in 0..=self.k {
            let layout = self.base.level_layout(src, j)?;
            for (a, len) in layout {
                if u < acc + len {
                    return Ok(Lookup {
                        symbol: a,
                        range: j,
                    });
                }
                acc += len;
            }
        }
        let ctx =
            pack_context(src, self.k, n).ok_or(PartitionError::PastTooShort { needed: self.k })?;
        let row = &self.leftover[ctx as usize];
        for a in symbols(n) {
            // last symbol is the catch-all for the fp top of the stack
            if u < acc + row[a.index()] || a.index() == n - 1 {
                return Ok(Lookup {
                    symbol: a,
                    range: self.k,
                });
            }
            acc += row[a.index()];
        }
        unreachable!()
    }
}

/// Builds the k-step truncated partition from a canonical k-step table.
///
/// Validates the leftover lengths against the partition's cumulative masses:
/// deficits beyond [`LEFTOVER_TOL`] signal an inconsistent `P^(k)` estimate
/// and abort; smaller ones are clamped to zero and counted.
pub fn truncate(
    base: Arc<RangePartition>,
    k: usize,
    pk: &PkTable,
) -> Result<TruncatedPartition, PartitionError> {
    let n = base.kernel.alphabet();
    if pk.k != k || pk.alphabet != n {
        return Err(PartitionError::InvalidKernel(format!(
            "pk table shape (k={}, n={}) does not match truncation (k={k}, n={n})",
            pk.k, pk.alphabet
        )));
    }
    let count = context_count(n, k)?;
    let mut leftover = Vec::with_capacity(count as usize);
    let mut clamped = 0u64;
    for ctx_idx in 0..count {
        let ctx = unpack_context(ctx_idx, k, n);
        let cum = base.cumulative_masses(&ctx.as_slice(), k)?;
        let row = pk.row(ctx_idx);
        let mut left = vec![0.0; n];
        for a in symbols(n) {
            let l = row[a.index()] - cum[a.index()];
            if l < -LEFTOVER_TOL {
                return Err(PartitionError::NegativeLeftover {
                    context: ctx.iter().map(|s| s.to_string()).collect(),
                    symbol: a.value(),
                    deficit: -l,
                });
            }
            if l < 0.0 {
                clamped += 1;
                left[a.index()] = 0.0;
            } else {
                left[a.index()] = l;
            }
        }
        leftover.push(left);
    }
    Ok(TruncatedPartition {
        base,
        k,
        leftover,
        clamped,
    })
}

// ---------------------------------------------------------------------------
// Diagnostics
// ---------------------------------------------------------------------------

/// One violation of the cumulative-mass inequality.
#[derive(Clone, Debug)]
pub struct LemmaViolation {
    pub context: Vec<Symbol>,
    pub symbol: Symbol,
    pub k: usize,
    pub cumulative: f64,
    pub infimum: f64,
}

#[derive(Clone, Debug, Default)]
pub struct LemmaReport {
    pub checked: u64,
    pub violations: Vec<LemmaViolation>,
}

/// Checks `sum_{j<=k} |I_j(a | ctx_j)| <= inf_z P(a | ctx_k z)` for the
/// supplied contexts at every depth, with caller-provided level masses.
/// Report-only: violations are listed, never raised.
pub fn check_lemma_with<F>(
    level_masses: F,
    kernel: &Kernel,
    contexts: &[Vec<Symbol>],
    tol: f64,
) -> Result<LemmaReport, PartitionError>
where
    F: Fn(&[Symbol], usize) -> Result<Vec<f64>, PartitionError>,
{
    let n = kernel.alphabet();
    let mut report = LemmaReport::default();
    for ctx in contexts {
        let mut cum = vec![0.0; n];
        for k in 0..=ctx.len() {
            let suffix = &ctx[ctx.len() - k..];
            for (a, m) in level_masses(suffix, k)?.into_iter().enumerate() {
                cum[a] += m;
            }
            let inf = kernel.alpha_symbols(suffix)?;
            for a in symbols(n) {
                report.checked += 1;
                if cum[a.index()] > inf[a.index()] + tol {
                    report.violations.push(LemmaViolation {
                        context: suffix.to_vec(),
                        symbol: a,
                        k,
                        cumulative: cum[a.index()],
                        infimum: inf[a.index()],
                    });
                }
            }
        }
    }
    Ok(report)
}

impl RangePartition {
    /// [`check_lemma_with`] applied to this partition's own level masses.
    pub fn check_lemma_simple(
        &self,
        contexts: &[Vec<Symbol>],
        tol: f64,
    ) -> Result<LemmaReport, PartitionError> {
        check_lemma_with(
            |suffix, k| {
                let n = self.kernel.alphabet();
                let mut row = vec![0.0; n];
                for (a, len) in self.level_layout(&suffix, k)? {
                    row[a.index()] += len;
                }
                Ok(row)
            },
            &self.kernel,
            contexts,
            tol,
        )
    }

    /// Debug dump: CSV rows `(context, symbol, range, length)` for every
    /// context up to `depth`. Contexts print in chronological order.
    pub fn dump_csv(&self, depth: usize) -> Result<String, PartitionError> {
        let n = self.kernel.alphabet();
        let mut out = String::from("context,symbol,range,length\n");
        for k in 0..=depth {
            let count = context_count(n, k)?;
            for ctx_idx in 0..count {
                let ctx = unpack_context(ctx_idx, k, n);
                let name: String = ctx.iter().map(|s| s.to_string()).collect();
                match self.level_layout(&ctx.as_slice(), k) {
                    Ok(layout) => {
                        for (a, len) in layout {
                            out.push_str(&format!("{name},{a},{k},{len}\n"));
                        }
                    }
                    Err(PartitionError::PastTooShort { .. }) => {}
                    Err(e) => return Err(e),
                }
            }
        }
        Ok(out)
    }
}
