//! Versioned deterministic PRNG and the samplers built on it.
//!
//! Every random draw in the simulator flows through [`SplitMix64`], a 64-bit
//! counter-based generator with a published reference implementation, so a
//! fixed seed yields the same partition, selection sequence, and noise on any
//! platform (and is cheap to replicate in another language). Subsystem
//! streams are derived from the master seed with [`derive_seed`], which mixes
//! a string label and integer indices; adding a new stream never perturbs
//! existing ones.

/// SplitMix64 (Vigna's reference constants). State advances by a fixed odd
/// increment; each output is a bijective mix of the counter.
#[derive(Debug, Clone)]
pub struct SplitMix64 {
    state: u64,
}

const GOLDEN_GAMMA: u64 = 0x9E37_79B9_7F4A_7C15;

impl SplitMix64 {
    pub fn new(seed: u64) -> Self {
        SplitMix64 { state: seed }
    }

    pub fn next_u64(&mut self) -> u64 {
        self.state = self.state.wrapping_add(GOLDEN_GAMMA);
        mix64(self.state)
    }

    /// Uniform double in [0, 1) with 53 bits of precision.
    pub fn next_f64(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform double in (0, 1]; safe as a log argument.
    pub fn next_f64_open(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64)
    }

    /// Uniform integer in [0, n). Lemire multiply-shift; the residual bias of
    /// n / 2^64 is far below anything observable here.
    pub fn next_below(&mut self, n: usize) -> usize {
        debug_assert!(n > 0);
        (((self.next_u64() as u128) * (n as u128)) >> 64) as usize
    }

    /// Uniform double in [lo, hi).
    pub fn range_f64(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.next_f64()
    }

    /// Standard normal via Box-Muller (fixed consumption: two draws per call).
    pub fn gauss(&mut self) -> f64 {
        let u1 = self.next_f64_open();
        let u2 = self.next_f64();
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    }

    /// Gamma(alpha, 1) via Marsaglia-Tsang, with the boost transform for
    /// alpha < 1.
    pub fn gamma(&mut self, alpha: f64) -> f64 {
        debug_assert!(alpha > 0.0);
        if alpha < 1.0 {
            let boost = self.next_f64_open().powf(1.0 / alpha);
            return boost * self.gamma(alpha + 1.0);
        }
        let d = alpha - 1.0 / 3.0;
        let c = 1.0 / (9.0 * d).sqrt();
        loop {
            let x = self.gauss();
            let v = (1.0 + c * x).powi(3);
            if v <= 0.0 {
                continue;
            }
            let u = self.next_f64_open();
            if u < 1.0 - 0.0331 * x.powi(4) {
                return d * v;
            }
            if u.ln() < 0.5 * x * x + d * (1.0 - v + v.ln()) {
                return d * v;
            }
        }
    }

    /// Symmetric Dirichlet(alpha) over `k` coordinates via the gamma-ratio
    /// method.
    pub fn dirichlet(&mut self, alpha: f64, k: usize) -> Vec<f64> {
        let mut draws: Vec<f64> = (0..k).map(|_| self.gamma(alpha)).collect();
        let total: f64 = draws.iter().sum();
        if total <= 0.0 {
            // All-underflow corner; fall back to uniform.
            return vec![1.0 / k as f64; k];
        }
        for d in &mut draws {
            *d /= total;
        }
        draws
    }

    /// In-place Fisher-Yates shuffle.
    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        for i in (1..items.len()).rev() {
            let j = self.next_below(i + 1);
            items.swap(i, j);
        }
    }

    /// Uniform without-replacement sample of `k` indices from 0..n, returned
    /// sorted ascending.
    pub fn sample_indices(&mut self, n: usize, k: usize) -> Vec<usize> {
        debug_assert!(k <= n);
        let mut pool: Vec<usize> = (0..n).collect();
        for i in 0..k {
            let j = i + self.next_below(n - i);
            pool.swap(i, j);
        }
        let mut chosen = pool[..k].to_vec();
        chosen.sort_unstable();
        chosen
    }
}

fn mix64(z: u64) -> u64 {
    let mut z = z;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Derive a subsystem seed from the master seed, a stream label, and
/// optional indices (round, client, class, ...). FNV-1a folds the label,
/// then each word is absorbed through the SplitMix64 mixer.
pub fn derive_seed(master: u64, label: &str, indices: &[u64]) -> u64 {
    const FNV_OFFSET: u64 = 0xCBF2_9CE4_8422_2325;
    const FNV_PRIME: u64 = 0x0000_0100_0000_01B3;
    let mut h = FNV_OFFSET;
    for b in label.as_bytes() {
        h ^= *b as u64;
        h = h.wrapping_mul(FNV_PRIME);
    }
    let mut acc = mix64(master ^ h);
    for &ix in indices {
        acc = mix64(acc.wrapping_add(GOLDEN_GAMMA) ^ ix);
    }
    acc
}

/// Convenience: a generator for a derived stream.
pub fn stream(master: u64, label: &str, indices: &[u64]) -> SplitMix64 {
    SplitMix64::new(derive_seed(master, label, indices))
}
