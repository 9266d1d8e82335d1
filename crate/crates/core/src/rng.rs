//! Deterministic random number generation.
//!
//! Everything stochastic in this crate draws from [`DetRng`], a SplitMix64
//! generator. Sub-streams are derived from a root seed plus a stream name so
//! that pipeline stages (corpus synthesis, VAE training, predictor training)
//! can be rerun independently without perturbing each other's draws.

/// SplitMix64 stream with a Box-Muller normal source.
#[derive(Debug, Clone)]
pub struct DetRng {
    state: u64,
    spare_normal: Option<f64>,
}

/// 64-bit FNV-1a, used only to fold stream names into seeds.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

fn splitmix_next(state: &mut u64) -> u64 {
    *state = state.wrapping_add(0x9e37_79b9_7f4a_7c15);
    let mut z = *state;
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

impl DetRng {
    pub fn new(seed: u64) -> Self {
        DetRng {
            state: seed,
            spare_normal: None,
        }
    }

    /// Derive a named sub-stream from a root seed. Distinct names give
    /// independent streams; the same (seed, name) pair always gives the
    /// same stream.
    pub fn stream(root_seed: u64, name: &str) -> Self {
        let mut s = root_seed ^ fnv1a(name.as_bytes());
        // burn one mix so adjacent seeds decorrelate
        let mixed = splitmix_next(&mut s);
        DetRng::new(mixed)
    }

    pub fn next_u64(&mut self) -> u64 {
        splitmix_next(&mut self.state)
    }

    /// Uniform in (0, 1].
    pub fn next_f64(&mut self) -> f64 {
        (((self.next_u64() >> 11) + 1) as f64) * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform in [lo, hi).
    pub fn uniform(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * (self.next_f64() - (1.0 / (1u64 << 53) as f64))
    }

    /// Uniform integer in [0, n). n must be positive.
    pub fn below(&mut self, n: usize) -> usize {
        assert!(n > 0, "below(0)");
        // 53-bit multiply-shift; bias is negligible for the small n used here
        ((self.next_u64() >> 11) as u128 * n as u128 >> 53) as usize
    }

    pub fn coin(&mut self, p: f64) -> bool {
        self.next_f64() <= p
    }

    /// Standard normal via Box-Muller; pairs are generated and the spare
    /// is cached, so draws come in a fixed order for a fixed seed.
    pub fn normal(&mut self) -> f64 {
        if let Some(z) = self.spare_normal.take() {
            return z;
        }
        let u1 = self.next_f64();
        let u2 = self.next_f64();
        let r = (-2.0 * u1.ln()).sqrt();
        let theta = 2.0 * std::f64::consts::PI * u2;
        self.spare_normal = Some(r * theta.sin());
        r * theta.cos()
    }

    /// Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, xs: &mut [T]) {
        for i in (1..xs.len()).rev() {
            let j = self.below(i + 1);
            xs.swap(i, j);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fixed_seed_reproduces() {
        let mut a = DetRng::new(7);
        let mut b = DetRng::new(7);
        for _ in 0..100 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn streams_differ_by_name() {
        let mut a = DetRng::stream(42, "prepare");
        let mut b = DetRng::stream(42, "vae");
        let xs: Vec<u64> = (0..8).map(|_| a.next_u64()).collect();
        let ys: Vec<u64> = (0..8).map(|_| b.next_u64()).collect();
        assert_ne!(xs, ys);
    }

    #[test]
    fn uniform_in_range() {
        let mut r = DetRng::new(1);
        for _ in 0..1000 {
            let x = r.next_f64();
            assert!(x > 0.0 && x <= 1.0);
            let y = r.uniform(-2.0, 3.0);
            assert!((-2.0..3.0).contains(&y));
        }
    }

    #[test]
    fn below_is_in_range_and_covers() {
        let mut r = DetRng::new(3);
        let mut seen = [false; 7];
        for _ in 0..1000 {
            seen[r.below(7)] = true;
        }
        assert!(seen.iter().all(|&s| s));
    }

    #[test]
    fn normal_moments() {
        // sample mean within 3 sigma / sqrt(N) of zero, variance near one
        let mut r = DetRng::new(11);
        let n = 100_000;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for _ in 0..n {
            let z = r.normal();
            sum += z;
            sumsq += z * z;
        }
        let mean = sum / n as f64;
        let var = sumsq / n as f64 - mean * mean;
        assert!(mean.abs() < 3.0 / (n as f64).sqrt(), "mean {mean}");
        assert!((var - 1.0).abs() < 0.02, "var {var}");
    }
}
