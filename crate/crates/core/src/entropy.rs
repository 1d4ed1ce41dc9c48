//! Gaussian conditional with adaptive bin width.
//!
//! A latent element with mean `mu`, scale `sigma` and step `delta` is coded
//! as the integer `k = round((y - mu) / delta)`; its probability is the
//! Gaussian mass on `[(k - 1/2) delta, (k + 1/2) delta]` around the mean.
//! The alphabet is truncated at `+-A` and the outermost bins absorb the
//! tails.
//!
//! For coding, probabilities are quantized to a 16-bit cumulative table in
//! closed form: the entry below symbol `j` is `(j + A) + floor(F_j * R)`
//! where `F_j` is the folded Gaussian CDF at the bin's lower edge and
//! `R = 2^16 - (2A + 1)`. Every symbol therefore owns at least one count, the
//! table sums to exactly 2^16, and any single entry can be computed without
//! building the others.

use crate::error::{invalid, Error, Result};
use crate::tensor::{HyperLatent, SIGMA_FLOOR};

/// Probability precision of every coding table.
pub const PROB_BITS: u32 = 16;
pub const PROB_TOTAL: u32 = 1 << PROB_BITS;
/// Smallest probability an estimate may assume.
pub const PROB_FLOOR: f64 = 1.0 / PROB_TOTAL as f64;
/// Largest alphabet half-width for latent symbols.
pub const MAX_HALFWIDTH: i32 = 255;

/// Cumulative-frequency view consumed by the range coder.
///
/// `cumulative(min_symbol())` is 0, `cumulative(max_symbol() + 1)` is
/// [`PROB_TOTAL`], and the sequence is strictly increasing in between.
pub trait SymbolCdf {
    fn min_symbol(&self) -> i32;
    fn max_symbol(&self) -> i32;
    fn cumulative(&self, k: i32) -> u32;

    fn frequency(&self, k: i32) -> u32 {
        self.cumulative(k + 1) - self.cumulative(k)
    }
}

/// Upper tail of the standard normal, `P(X > x)`.
pub fn normal_upper_tail(x: f64) -> f64 {
    0.5 * libm::erfc(x * std::f64::consts::FRAC_1_SQRT_2)
}

/// Standard normal CDF.
pub fn normal_cdf(x: f64) -> f64 {
    normal_upper_tail(-x)
}

/// `min(255, ceil(8 sigma / delta) + 1)`.
pub fn alphabet_halfwidth(sigma: f32, delta: f32) -> i32 {
    let span = (8.0 * sigma / delta).ceil();
    if span >= (MAX_HALFWIDTH - 1) as f32 {
        MAX_HALFWIDTH
    } else {
        span as i32 + 1
    }
}

/// Coding distribution of a single latent element.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymbolModel {
    mu: f32,
    sigma: f32,
    delta: f32,
    halfwidth: i32,
    // delta / sigma in f64, the only ratio the probabilities depend on
    ratio: f64,
}

impl SymbolModel {
    /// `sigma` is raised to [`SIGMA_FLOOR`]; the alphabet half-width follows
    /// from `sigma / delta`.
    pub fn new(mu: f32, sigma: f32, delta: f32) -> Result<Self> {
        if !(delta.is_finite() && delta > 0.0) {
            return Err(invalid(format!("step must be positive, got {delta}")));
        }
        if !(mu.is_finite() && sigma.is_finite()) {
            return Err(invalid("mean and scale must be finite"));
        }
        let sigma = sigma.max(SIGMA_FLOOR);
        Ok(Self::from_parts(mu, sigma, delta, alphabet_halfwidth(sigma, delta)))
    }

    /// Same as [`new`](Self::new) but with an explicit half-width.
    pub fn with_halfwidth(mu: f32, sigma: f32, delta: f32, halfwidth: i32) -> Result<Self> {
        let base = Self::new(mu, sigma, delta)?;
        if halfwidth < 1 {
            return Err(invalid(format!("alphabet half-width must be >= 1, got {halfwidth}")));
        }
        if 2 * halfwidth + 1 >= PROB_TOTAL as i32 {
            return Err(invalid("alphabet too large for 16-bit tables"));
        }
        Ok(Self::from_parts(base.mu, base.sigma, delta, halfwidth))
    }

    pub(crate) fn from_parts(mu: f32, sigma: f32, delta: f32, halfwidth: i32) -> Self {
        Self {
            mu,
            sigma,
            delta,
            halfwidth,
            ratio: delta as f64 / sigma as f64,
        }
    }

    pub fn mu(&self) -> f32 {
        self.mu
    }

    pub fn sigma(&self) -> f32 {
        self.sigma
    }

    pub fn delta(&self) -> f32 {
        self.delta
    }

    pub fn halfwidth(&self) -> i32 {
        self.halfwidth
    }

    /// Nearest reconstruction index, rounding halves away from zero and
    /// folding outliers onto the tail symbols.
    pub fn quantize(&self, y: f32) -> i32 {
        let q = ((y - self.mu) / self.delta).round();
        q.clamp(-self.halfwidth as f32, self.halfwidth as f32) as i32
    }

    /// `mu + k * delta`.
    pub fn reconstruct(&self, k: i32) -> f32 {
        (k as f32) * self.delta + self.mu
    }

    /// Gaussian mass of bin `k` after tail folding.
    pub fn bin_probability(&self, k: i32) -> f64 {
        let a = self.halfwidth;
        let t = k.unsigned_abs() as i32;
        if t > a {
            return 0.0;
        }
        let r = self.ratio;
        if t == 0 {
            if a == 0 {
                return 1.0;
            }
            return 1.0 - 2.0 * normal_upper_tail(0.5 * r);
        }
        let lower = normal_upper_tail((t as f64 - 0.5) * r);
        if t == a {
            lower
        } else {
            lower - normal_upper_tail((t as f64 + 0.5) * r)
        }
    }

    /// Ideal code length of `k` in bits, floored at 2^-16 probability.
    pub fn estimate_bits(&self, k: i32) -> f64 {
        -self.bin_probability(k).max(PROB_FLOOR).log2()
    }

    fn span(&self) -> u32 {
        PROB_TOTAL - (2 * self.halfwidth as u32 + 1)
    }
}

impl SymbolCdf for SymbolModel {
    fn min_symbol(&self) -> i32 {
        -self.halfwidth
    }

    fn max_symbol(&self) -> i32 {
        self.halfwidth
    }

    fn cumulative(&self, j: i32) -> u32 {
        let a = self.halfwidth;
        debug_assert!((-a..=a + 1).contains(&j));
        if j <= -a {
            return 0;
        }
        if j > a {
            return PROB_TOTAL;
        }
        let span = self.span() as f64;
        let index = (j + a) as u32;
        if j <= 0 {
            // lower edge (j - 1/2) delta is negative: Phi = upper tail of its mirror
            let mass = normal_upper_tail((0.5 - j as f64) * self.ratio);
            index + (mass * span).floor() as u32
        } else {
            let tail = normal_upper_tail((j as f64 - 0.5) * self.ratio);
            index + self.span() - (tail * span).ceil() as u32
        }
    }
}

/// Materialized 16-bit cumulative table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CdfTable {
    min_symbol: i32,
    counts: Vec<u32>,
}

impl CdfTable {
    /// `counts[i]` is the cumulative frequency below `min_symbol + i`.
    pub fn new(min_symbol: i32, counts: Vec<u32>) -> Result<Self> {
        if counts.len() < 2 {
            return Err(Error::Format("cdf table needs at least one symbol".into()));
        }
        if counts[0] != 0 || *counts.last().unwrap() != PROB_TOTAL {
            return Err(Error::Format(format!(
                "cdf table must run from 0 to {PROB_TOTAL}"
            )));
        }
        if counts.windows(2).any(|p| p[1] <= p[0]) {
            return Err(Error::Format("cdf table is not strictly increasing".into()));
        }
        Ok(Self { min_symbol, counts })
    }

    /// Equal frequency for `size` symbols starting at `min_symbol`.
    pub fn uniform(min_symbol: i32, size: usize) -> Result<Self> {
        if size == 0 || size > PROB_TOTAL as usize {
            return Err(invalid(format!("uniform table size {size} out of range")));
        }
        let counts = (0..=size)
            .map(|i| ((i as u64 * PROB_TOTAL as u64) / size as u64) as u32)
            .collect();
        Self::new(min_symbol, counts)
    }

    /// Quantizes a probability vector with the same one-count floor as the
    /// Gaussian tables.
    pub fn from_probabilities(min_symbol: i32, probs: &[f64]) -> Result<Self> {
        let m = probs.len();
        if m == 0 || m >= PROB_TOTAL as usize {
            return Err(invalid(format!("cannot quantize {m} probabilities")));
        }
        if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return Err(invalid("probabilities must be finite and non-negative"));
        }
        let total: f64 = probs.iter().sum();
        if total <= 0.0 {
            return Err(invalid("probabilities sum to zero"));
        }
        let span = (PROB_TOTAL as usize - m) as f64;
        let mut counts = Vec::with_capacity(m + 1);
        let mut acc = 0.0;
        counts.push(0);
        for (i, p) in probs.iter().enumerate().take(m - 1) {
            acc += p / total;
            counts.push((i + 1) as u32 + (acc.min(1.0) * span).floor() as u32);
        }
        counts.push(PROB_TOTAL);
        Self::new(min_symbol, counts)
    }

    pub fn counts(&self) -> &[u32] {
        &self.counts
    }

    pub fn support(&self) -> usize {
        self.counts.len() - 1
    }

    /// Clamps `k` into the table's support.
    pub fn fold(&self, k: i32) -> i32 {
        k.clamp(self.min_symbol(), self.max_symbol())
    }

    pub fn probability(&self, k: i32) -> f64 {
        let k = self.fold(k);
        self.frequency(k) as f64 / PROB_TOTAL as f64
    }
}

impl SymbolCdf for CdfTable {
    fn min_symbol(&self) -> i32 {
        self.min_symbol
    }

    fn max_symbol(&self) -> i32 {
        self.min_symbol + self.counts.len() as i32 - 2
    }

    fn cumulative(&self, k: i32) -> u32 {
        self.counts[(k - self.min_symbol) as usize]
    }
}

/// Materializes the coding table of `m`.
pub fn build_cdf(m: &SymbolModel) -> CdfTable {
    let counts = (m.min_symbol()..=m.max_symbol() + 1)
        .map(|j| m.cumulative(j))
        .collect();
    CdfTable {
        min_symbol: m.min_symbol(),
        counts,
    }
}

/// Per-channel static tables for the hyper-latent.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct FactorizedModel {
    tables: Vec<CdfTable>,
}

impl FactorizedModel {
    pub fn new(tables: Vec<CdfTable>) -> Self {
        Self { tables }
    }

    pub fn channels(&self) -> usize {
        self.tables.len()
    }

    pub fn tables(&self) -> &[CdfTable] {
        &self.tables
    }

    pub fn table(&self, channel: usize) -> Option<&CdfTable> {
        self.tables.get(channel)
    }
}

/// Bits needed for the hyper-latent under its factorized model.
/// Out-of-support symbols are folded onto the nearest tail symbol.
pub fn factorized_z_bits(z: &HyperLatent) -> f64 {
    let plane = z.plane_len();
    if plane == 0 {
        return 0.0;
    }
    z.symbols()
        .chunks(plane)
        .zip(z.model().tables())
        .map(|(symbols, table)| {
            symbols
                .iter()
                .map(|&s| -table.probability(s).log2())
                .sum::<f64>()
        })
        .sum()
}
