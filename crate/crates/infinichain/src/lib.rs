//! Perfect simulation and bound verification for stationary chains of
//! infinite order.
//!
//! The crate couples a chain of infinite order with its canonical k-step
//! Markov approximation on a shared uniform stream via coupling from the
//! past, estimates the d-bar distance empirically, and evaluates the
//! explicit upper bounds (renewal, summable-continuity, house-of-cards and
//! geometric-concentration routes) so theory and simulation can be compared
//! on one CSV row.
//!
//! Module map:
//! - [`stream`]: counter-based reproducible uniforms indexed by integer time.
//! - [`kernel`]: alphabets, pasts, and the concrete kernel families
//!   (finite-order Markov, renewal, finite mixtures) with exact
//!   continuity-rate queries.
//! - [`partition`]: range partitions of `[0,1)`, their k-step truncations,
//!   and the joint (symbol, range) lookup.
//! - [`markov_approx`]: the canonical k-step transition table, exact or
//!   estimated, plus a standalone k-order simulator.
//! - [`cftp`]: coupling-from-the-past engine: coalescence detectors,
//!   reconstruction, stationary window sampling, coupled simulation.
//! - [`house_of_cards`]: return probabilities of house-of-cards chains and
//!   their explicit bound families.
//! - [`geom_conc`]: Chernoff bounds and exact negative-binomial tails for
//!   sums of geometric variables.
//! - [`bounds`]: assembles every theoretical bound and the empirical d-bar
//!   estimate into one report.
//! - [`runner`]: deterministic parallel Monte Carlo helpers.

pub mod bounds;
pub mod cftp;
pub mod geom_conc;
pub mod house_of_cards;
pub mod kernel;
pub mod markov_approx;
pub mod partition;
pub mod runner;
pub mod stats;
pub mod stream;
