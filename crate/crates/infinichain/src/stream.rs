//! Counter-based uniform streams.
//!
//! CFTP grows its window backwards and re-reads earlier uniforms, so `U_i`
//! must be a pure function of `(seed, i)`: extending the window can never
//! perturb a value that was already drawn. A stateful generator cannot give
//! that guarantee cheaply, hence the counter-based construction below
//! (splitmix64 finalizer over a Weyl sequence).

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

#[inline]
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(GOLDEN);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Reproducible i.i.d. uniforms indexed by integer time.
///
/// `uniform(i)` is deterministic in `(seed, i)` and lies in `[0, 1)`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct UniformStream {
    seed: u64,
}

impl UniformStream {
    pub fn new(seed: u64) -> Self {
        UniformStream { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// The uniform attached to integer time `i` (negative times allowed).
    #[inline]
    pub fn uniform(&self, i: i64) -> f64 {
        let z = mix(self.seed.wrapping_add((i as u64).wrapping_mul(GOLDEN)));
        // 53 high bits -> [0, 1)
        (z >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Derived stream for replica `idx`; independent-looking and stable.
    pub fn substream(&self, idx: u64) -> Self {
        UniformStream {
            seed: mix(self.seed ^ mix(idx ^ 0xA076_1D64_78BD_642F)),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rereads_are_identical() {
        let s = UniformStream::new(1);
        let a = s.uniform(-5);
        let b = s.uniform(-5);
        assert_eq!(a, b);
        assert!((0.0..1.0).contains(&a));
    }

    #[test]
    fn seeds_differ_at_zero() {
        let a = UniformStream::new(1).uniform(0);
        let b = UniformStream::new(2).uniform(0);
        assert_ne!(a, b);
    }

    #[test]
    fn substreams_differ() {
        let s = UniformStream::new(7);
        assert_ne!(s.substream(0).uniform(0), s.substream(1).uniform(0));
    }

    // Chi-square uniformity over 10^6 draws, 1000 bins, 1% level.
    #[test]
    fn chi_square_uniformity() {
        let s = UniformStream::new(0xC0FFEE);
        let bins = 1000usize;
        let n = 1_000_000i64;
        let mut counts = vec![0u64; bins];
        for i in -n / 2..n / 2 {
            let u = s.uniform(i);
            counts[(u * bins as f64) as usize] += 1;
        }
        let expect = n as f64 / bins as f64;
        let stat: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expect;
                d * d / expect
            })
            .sum();
        // Wilson-Hilferty 1% critical value for df = 999.
        let df = (bins - 1) as f64;
        let z = 2.326_347_874_040_841;
        let t = 1.0 - 2.0 / (9.0 * df) + z * (2.0 / (9.0 * df)).sqrt();
        let crit = df * t * t * t;
        assert!(stat < crit, "chi-square stat {stat} >= crit {crit}");
    }
}
