//! The canonical k-step transition table `P^(k)` and its standalone
//! simulator.
//!
//! `P^(k)(a | ctx)` is the stationary conditional law of the next symbol
//! given the last `k`. Three provenances:
//!
//! - `Exact`: the kernel has finite order `<= k`, so the restriction is the
//!   table itself.
//! - `AgeDistribution`: renewal kernels. Contexts containing a 2 pin the
//!   value; the all-ones context averages the hazard against the stationary
//!   age distribution conditioned on age `>= k`.
//! - `Empirical`: conditional frequencies from a perfect (CFTP) sample,
//!   projected onto the feasible set (every row must dominate the range
//!   partition's cumulative masses, or truncation would reject it).

use crate::cftp::{self, CftpConfig, CftpError};
use crate::kernel::{
    context_count, pack_context, unpack_context, Kernel, KernelError, PastSource, Symbol,
};
use crate::partition::{PartitionError, RangePartition};
use crate::stats;
use crate::stream::UniformStream;
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ApproxError {
    #[error("kernel order {order} exceeds requested k = {k}")]
    OrderTooHigh { order: usize, k: usize },
    #[error("kernel family has no exact k-step table")]
    NoClosedForm,
    #[error("empirical table needs at least one sample")]
    NoSamples,
    #[error("bad table file: {0}")]
    BadTableFile(String),
    #[error(transparent)]
    Kernel(#[from] KernelError),
    #[error(transparent)]
    Partition(#[from] PartitionError),
    #[error(transparent)]
    Cftp(#[from] Box<CftpError>),
}

impl From<CftpError> for ApproxError {
    fn from(e: CftpError) -> Self {
        ApproxError::Cftp(Box::new(e))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Provenance {
    Exact,
    AgeDistribution,
    Empirical { n_samples: u64 },
}

impl std::fmt::Display for Provenance {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Provenance::Exact => write!(f, "exact"),
            Provenance::AgeDistribution => write!(f, "age_distribution"),
            Provenance::Empirical { n_samples } => write!(f, "empirical:{n_samples}"),
        }
    }
}

/// Canonical k-step transition table. Rows are indexed by packed contexts
/// (most recent symbol in the least significant digit) and sum to one.
#[derive(Clone, Debug)]
pub struct PkTable {
    pub k: usize,
    pub alphabet: usize,
    rows: Vec<Vec<f64>>,
    pub provenance: Provenance,
    /// Wilson CI half-width per row (empirical tables only).
    pub ci: Option<Vec<f64>>,
    /// Rows that were never observed and fell back to the feasible default.
    pub unseen: Option<Vec<bool>>,
}

impl PkTable {
    pub fn row(&self, ctx: u64) -> &[f64] {
        &self.rows[ctx as usize]
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Probability of `a` after the length-`k` suffix of `src`.
    pub fn prob<S: PastSource + ?Sized>(&self, src: &S, a: Symbol) -> Option<f64> {
        let ctx = pack_context(src, self.k, self.alphabet)?;
        Some(self.rows[ctx as usize][a.index()])
    }

    #[cfg(test)]
    pub(crate) fn corrupt_row_for_tests(&mut self, ctx: usize, delta: f64) {
        self.rows[ctx][0] += delta;
        self.rows[ctx][1] -= delta;
    }

    /// CSV export: `context,symbol,probability,provenance`, contexts in
    /// chronological order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("context,symbol,probability,provenance\n");
        for (ci, row) in self.rows.iter().enumerate() {
            let ctx = unpack_context(ci as u64, self.k, self.alphabet);
            let name: String = ctx.iter().map(|s| s.to_string()).collect();
            for (a, p) in row.iter().enumerate() {
                out.push_str(&format!("{name},{},{p},{}\n", a + 1, self.provenance));
            }
        }
        out
    }

    /// Inverse of [`PkTable::to_csv`]. Provenance is parsed best-effort.
    pub fn from_csv(text: &str, k: usize, alphabet: usize) -> Result<Self, ApproxError> {
        let count = context_count(alphabet, k).map_err(ApproxError::Kernel)? as usize;
        let mut rows = vec![vec![f64::NAN; alphabet]; count];
        let mut provenance = Provenance::Exact;
        for (i, line) in text.lines().enumerate() {
            if i == 0 || line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 4 {
                return Err(ApproxError::BadTableFile(format!("line {i}: {line}")));
            }
            let name = fields[0];
            if name.len() != k {
                return Err(ApproxError::BadTableFile(format!(
                    "line {i}: context `{name}` is not length {k}"
                )));
            }
            let mut ctx = 0u64;
            let mut mult = 1u64;
            for ch in name.chars().rev() {
                let d = ch
                    .to_digit(10)
                    .filter(|&d| d >= 1 && d as usize <= alphabet)
                    .ok_or_else(|| ApproxError::BadTableFile(format!("line {i}: {name}")))?;
                ctx += (d as u64 - 1) * mult;
                mult *= alphabet as u64;
            }
            let a: usize = fields[1]
                .parse()
                .map_err(|_| ApproxError::BadTableFile(format!("line {i}")))?;
            let p: f64 = fields[2]
                .parse()
                .map_err(|_| ApproxError::BadTableFile(format!("line {i}")))?;
            if fields[3].starts_with("age") {
                provenance = Provenance::AgeDistribution;
            } else if let Some(n) = fields[3].strip_prefix("empirical:") {
                provenance = Provenance::Empirical {
                    n_samples: n.parse().unwrap_or(0),
                };
            }
            rows[ctx as usize][a - 1] = p;
        }
        if rows.iter().flatten().any(|p| p.is_nan()) {
            return Err(ApproxError::BadTableFile("missing entries".into()));
        }
        Ok(PkTable {
            k,
            alphabet,
            rows,
            provenance,
            ci: None,
            unseen: None,
        })
    }
}

/// Exact table for kernels of finite order `<= k`.
pub fn pk_exact(kernel: &Arc<Kernel>, k: usize) -> Result<PkTable, ApproxError> {
    let order = kernel.max_order().ok_or(ApproxError::NoClosedForm)?;
    if order > k {
        return Err(ApproxError::OrderTooHigh { order, k });
    }
    let n = kernel.alphabet();
    let count = context_count(n, k).map_err(ApproxError::Kernel)?;
    let mut rows = Vec::with_capacity(count as usize);
    for ci in 0..count {
        let ctx = unpack_context(ci, k, n);
        // length k >= order, so the row is pinned
        rows.push(kernel.alpha_symbols(&ctx)?);
    }
    Ok(PkTable {
        k,
        alphabet: n,
        rows,
        provenance: Provenance::Exact,
        ci: None,
        unseen: None,
    })
}

// ---------------------------------------------------------------------------
// Renewal kernels: stationary age distribution
// ---------------------------------------------------------------------------

/// Stationary law of the time since the last symbol 2:
/// `pi_j` proportional to `prod_{i<j} (1 - p_i)`.
#[derive(Clone, Debug)]
pub struct AgeDistribution {
    pi: Vec<f64>,
}

impl AgeDistribution {
    /// Truncated once the unnormalized tail drops below `1e-12` of the
    /// total (geometric decay is guaranteed by the hazard bounds), then
    /// renormalized.
    pub fn new(rk: &crate::kernel::RenewalKernel) -> Self {
        let mut w = 1.0f64;
        let mut ws = Vec::new();
        let mut total = 0.0;
        loop {
            ws.push(w);
            total += w;
            w *= 1.0 - rk.p_at(ws.len() - 1);
            if w < 1e-12 * total && ws.len() > 4 {
                break;
            }
        }
        let pi = ws.iter().map(|x| x / total).collect();
        AgeDistribution { pi }
    }

    pub fn pi(&self) -> &[f64] {
        &self.pi
    }

    /// `P(X_0 = 2 | age >= k) = sum_{j>=k} pi_j p_j / sum_{j>=k} pi_j`,
    /// computed rebased at `k` so deep conditioning never underflows.
    pub fn hazard_given_age_at_least(rk: &crate::kernel::RenewalKernel, k: usize) -> f64 {
        let mut v = 1.0f64;
        let mut num = 0.0;
        let mut den = 0.0;
        let mut m = 0usize;
        loop {
            let p = rk.p_at(k + m);
            num += v * p;
            den += v;
            v *= 1.0 - p;
            m += 1;
            if v < 1e-15 && m > 4 {
                break;
            }
        }
        num / den
    }
}

/// Exact-in-closed-form table for renewal kernels.
///
/// Contexts containing a 2 pin the hazard; the all-ones context conditions
/// the age distribution on survival past `k`.
pub fn pk_renewal(kernel: &Arc<Kernel>, k: usize) -> Result<PkTable, ApproxError> {
    let rk = match kernel.as_ref() {
        Kernel::Renewal(rk) => rk,
        _ => return Err(ApproxError::NoClosedForm),
    };
    let count = context_count(2, k).map_err(ApproxError::Kernel)?;
    let mut rows = Vec::with_capacity(count as usize);
    for ci in 0..count {
        let ctx = unpack_context(ci, k, 2);
        let p2 = match rk.age(&ctx.as_slice()) {
            crate::kernel::AgeLookup::Found(t) => rk.p_at(t),
            crate::kernel::AgeLookup::NeedDeeper(_) => {
                AgeDistribution::hazard_given_age_at_least(rk, k)
            }
        };
        rows.push(vec![1.0 - p2, p2]);
    }
    Ok(PkTable {
        k,
        alphabet: 2,
        rows,
        provenance: Provenance::AgeDistribution,
        ci: None,
        unseen: None,
    })
}

// ---------------------------------------------------------------------------
// Empirical fallback
// ---------------------------------------------------------------------------

/// Conditional frequencies over a perfect stationary sample of length
/// `n_samples`, with Wilson confidence half-widths per row.
///
/// Rows are projected onto the feasible set `{row >= cumulative partition
/// masses, sum = 1}`: the projection leaves already-feasible estimates
/// untouched and guarantees nonnegative leftovers at truncation. Unseen
/// contexts take the feasible default (floor plus uniform excess) and are
/// flagged.
pub fn pk_empirical(
    kernel: &Arc<Kernel>,
    k: usize,
    n_samples: u64,
    seed: u64,
    cfg: &CftpConfig,
) -> Result<PkTable, ApproxError> {
    if n_samples == 0 {
        return Err(ApproxError::NoSamples);
    }
    let n = kernel.alphabet();
    let count = context_count(n, k).map_err(ApproxError::Kernel)? as usize;
    let partition = Arc::new(RangePartition::natural(kernel.clone())?);
    let stream = UniformStream::new(seed);
    let window = cftp::sample_window(&partition, &stream, -(n_samples as i64) - k as i64, 0, cfg)?;

    let mut counts = vec![vec![0u64; n]; count];
    for t in k..window.len() {
        let ctx = pack_context(&&window[t - k..t], k, n).unwrap() as usize;
        counts[ctx][window[t].index()] += 1;
    }

    let mut rows = Vec::with_capacity(count);
    let mut ci = Vec::with_capacity(count);
    let mut unseen = Vec::with_capacity(count);
    for (ctx_idx, c) in counts.iter().enumerate() {
        let total: u64 = c.iter().sum();
        let ctx = unpack_context(ctx_idx as u64, k, n);
        let floor = partition.cumulative_masses(&ctx.as_slice(), k)?;
        let head: f64 = 1.0 - floor.iter().sum::<f64>();
        let row = if total == 0 {
            unseen.push(true);
            ci.push(1.0);
            // feasible default: floor plus uniform excess
            floor.iter().map(|f| f + head / n as f64).collect()
        } else {
            unseen.push(false);
            let mut width = 0.0f64;
            let est: Vec<f64> = c
                .iter()
                .map(|&x| {
                    let (_, h) = stats::wilson_ci(x, total, 3.0);
                    width = width.max(h);
                    x as f64 / total as f64
                })
                .collect();
            ci.push(width);
            // feasibility projection: keep the excess above the floor
            // proportional to the estimated excess
            let pos: Vec<f64> = est
                .iter()
                .zip(&floor)
                .map(|(e, f)| (e - f).max(0.0))
                .collect();
            let pos_sum: f64 = pos.iter().sum();
            if pos_sum > 0.0 {
                floor
                    .iter()
                    .zip(&pos)
                    .map(|(f, p)| f + head * p / pos_sum)
                    .collect()
            } else {
                floor.iter().map(|f| f + head / n as f64).collect()
            }
        };
        rows.push(row);
    }
    Ok(PkTable {
        k,
        alphabet: n,
        rows,
        provenance: Provenance::Empirical { n_samples },
        ci: Some(ci),
        unseen: Some(unseen),
    })
}

/// Best available table: exact when the order fits, the age-distribution
/// closed form for renewal kernels, else the empirical fallback.
pub fn pk_auto(
    kernel: &Arc<Kernel>,
    k: usize,
    empirical_samples: u64,
    seed: u64,
    cfg: &CftpConfig,
) -> Result<PkTable, ApproxError> {
    match kernel.as_ref() {
        Kernel::Renewal(_) => pk_renewal(kernel, k),
        _ => {
            if kernel.max_order().is_some_and(|m| m <= k) {
                pk_exact(kernel, k)
            } else {
                pk_empirical(kernel, k, empirical_samples, seed, cfg)
            }
        }
    }
}

// ---------------------------------------------------------------------------
// Standalone k-order simulation
// ---------------------------------------------------------------------------

/// Simulates the k-order chain from `table`, discarding `burn_in` steps
/// after a uniform-random initial context.
pub fn simulate_markov(table: &PkTable, n: u64, seed: u64, burn_in: u64) -> Vec<Symbol> {
    let stream = UniformStream::new(seed);
    let nsym = table.alphabet;
    let mut ctx: Vec<Symbol> = (0..table.k)
        .map(|i| Symbol::from_index((stream.uniform(-(i as i64) - 1) * nsym as f64) as usize))
        .collect();
    let mut out = Vec::with_capacity(n as usize);
    for t in 0..burn_in + n {
        let u = stream.uniform(t as i64);
        let row = table.row(pack_context(&ctx.as_slice(), table.k, nsym).unwrap());
        let mut acc = 0.0;
        let mut sym = Symbol::from_index(nsym - 1);
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                sym = Symbol::from_index(a);
                break;
            }
        }
        ctx.push(sym);
        if ctx.len() > table.k {
            ctx.remove(0);
        }
        if t >= burn_in {
            out.push(sym);
        }
    }
    out
}
