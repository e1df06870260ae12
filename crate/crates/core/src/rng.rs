//! Reproducible random streams.
//!
//! A [`StreamKey`] is a master seed plus a short path of logical indices
//! (replicate, level, repetition, ...). Deriving a stream is a pure O(1)
//! function of the key: the seed and the first three path entries form the
//! ChaCha key, the fourth entry is the ChaCha stream id, and the path depth
//! selects a disjoint 2^60-block region of the counter. Distinct keys can
//! therefore never share keystream, and work split across threads draws
//! identical numbers as long as it is keyed by logical index.

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};

use crate::error::{Error, Result};

/// Maximum number of indices in a [`StreamKey`] path.
pub const MAX_PATH_DEPTH: usize = 4;

const INV_2_53: f64 = 1.0 / 9_007_199_254_740_992.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StreamKey {
    seed: u64,
    path: [u64; MAX_PATH_DEPTH],
    depth: usize,
}

impl StreamKey {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            path: [0; MAX_PATH_DEPTH],
            depth: 0,
        }
    }

    pub fn with_path(seed: u64, path: &[u64]) -> Result<Self> {
        path.iter()
            .try_fold(Self::new(seed), |key, &index| key.child(index))
    }

    pub fn child(&self, index: u64) -> Result<Self> {
        if self.depth == MAX_PATH_DEPTH {
            return Err(Error::PathTooLong {
                depth: self.depth + 1,
                max: MAX_PATH_DEPTH,
            });
        }
        let mut next = *self;
        next.path[self.depth] = index;
        next.depth += 1;
        Ok(next)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn path(&self) -> &[u64] {
        &self.path[..self.depth]
    }

    pub fn derive(&self) -> RngStream {
        let mut seed = [0u8; 32];
        seed[0..8].copy_from_slice(&self.seed.to_le_bytes());
        for (i, word) in self.path[..3].iter().enumerate() {
            seed[8 + 8 * i..16 + 8 * i].copy_from_slice(&word.to_le_bytes());
        }
        let mut core = ChaCha8Rng::from_seed(seed);
        core.set_stream(self.path[3]);
        core.set_word_pos((self.depth as u128) << 64);
        RngStream { core, spare: None }
    }
}

/// Derive the stream for `(seed, path)`.
pub fn derive(key: &StreamKey) -> RngStream {
    key.derive()
}

/// A single-owner deterministic random stream.
///
/// Cloning snapshots the full state, including the cached second normal
/// deviate of the polar method, so a clone replays the same draws.
#[derive(Debug, Clone)]
pub struct RngStream {
    core: ChaCha8Rng,
    spare: Option<f64>,
}

impl RngStream {
    pub fn from_seed(seed: u64) -> Self {
        StreamKey::new(seed).derive()
    }

    #[inline]
    pub fn next_u64(&mut self) -> u64 {
        self.core.next_u64()
    }

    /// Uniform on `[0, 1)` with 53 random bits.
    #[inline]
    pub fn uniform01(&mut self) -> f64 {
        (self.next_u64() >> 11) as f64 * INV_2_53
    }

    /// Uniform on `(0, 1]`; safe to take the logarithm of.
    #[inline]
    pub fn uniform_open01(&mut self) -> f64 {
        ((self.next_u64() >> 11) + 1) as f64 * INV_2_53
    }

    /// Standard normal deviate by the Marsaglia polar method.
    pub fn standard_normal(&mut self) -> f64 {
        if let Some(z) = self.spare.take() {
            return z;
        }
        loop {
            let u = 2.0 * self.uniform01() - 1.0;
            let v = 2.0 * self.uniform01() - 1.0;
            let s = u * u + v * v;
            if s > 0.0 && s < 1.0 {
                let scale = (-2.0 * s.ln() / s).sqrt();
                self.spare = Some(v * scale);
                return u * scale;
            }
        }
    }

    pub fn normal(&mut self, mean: f64, sd: f64) -> Result<f64> {
        if !(sd > 0.0) || !sd.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "normal standard deviation must be positive, got {sd}"
            )));
        }
        Ok(mean + sd * self.standard_normal())
    }

    pub fn uniform(&mut self, lo: f64, hi: f64) -> Result<f64> {
        if !(lo < hi) || !lo.is_finite() || !hi.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "uniform bounds must satisfy lo < hi, got [{lo}, {hi})"
            )));
        }
        Ok(self.uniform_in(lo, hi))
    }

    /// Unchecked `uniform`; callers guarantee `lo < hi`.
    #[inline]
    pub(crate) fn uniform_in(&mut self, lo: f64, hi: f64) -> f64 {
        let v = lo + (hi - lo) * self.uniform01();
        if v >= hi {
            hi.next_down()
        } else {
            v
        }
    }

    /// Level `ℓ` with `P(ℓ) = (1 - 2^-τ) 2^-τℓ`, sampled by inversion.
    ///
    /// `U = 1` maps to level 0. The result saturates at `u64::MAX`; the
    /// caller enforces its own cap.
    pub fn geometric_level(&mut self, tau: f64) -> u64 {
        let u = self.uniform_open01();
        let level = (u.ln() / (-tau * std::f64::consts::LN_2)).floor();
        if level >= u64::MAX as f64 {
            u64::MAX
        } else {
            level as u64
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let mut sab = 0.0;
        let mut saa = 0.0;
        let mut sbb = 0.0;
        for (x, y) in a.iter().zip(b) {
            sab += (x - ma) * (y - mb);
            saa += (x - ma) * (x - ma);
            sbb += (y - mb) * (y - mb);
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn same_key_replays_identically() {
        let key = StreamKey::with_path(42, &[3, 1, 4]).unwrap();
        let mut a = key.derive();
        let mut b = derive(&key);
        for _ in 0..1000 {
            assert_eq!(a.next_u64(), b.next_u64());
        }
    }

    #[test]
    fn clone_replays_normals_including_spare() {
        let mut a = RngStream::from_seed(9);
        a.standard_normal();
        let mut b = a.clone();
        for _ in 0..101 {
            assert_eq!(a.standard_normal().to_bits(), b.standard_normal().to_bits());
        }
    }

    #[test]
    fn depth_and_padding_do_not_collide() {
        let keys = [
            StreamKey::new(7),
            StreamKey::with_path(7, &[0]).unwrap(),
            StreamKey::with_path(7, &[0, 0]).unwrap(),
            StreamKey::with_path(7, &[0, 0, 0]).unwrap(),
            StreamKey::with_path(7, &[0, 0, 0, 0]).unwrap(),
            StreamKey::with_path(8, &[]).unwrap(),
        ];
        let firsts: Vec<u64> = keys.iter().map(|k| k.derive().next_u64()).collect();
        for i in 0..firsts.len() {
            for j in i + 1..firsts.len() {
                assert_ne!(firsts[i], firsts[j], "keys {i} and {j} collide");
            }
        }
    }

    #[test]
    fn path_longer_than_four_is_rejected() {
        let key = StreamKey::with_path(1, &[1, 2, 3, 4]).unwrap();
        assert!(matches!(key.child(5), Err(Error::PathTooLong { .. })));
        assert!(StreamKey::with_path(1, &[1, 2, 3, 4, 5]).is_err());
    }

    #[test]
    fn sibling_streams_are_uncorrelated() {
        let parent = StreamKey::with_path(2024, &[5]).unwrap();
        for (i, j) in [(0u64, 1u64), (1, 2), (0, 1000)] {
            let mut a = parent.child(i).unwrap().derive();
            let mut b = parent.child(j).unwrap().derive();
            let xs: Vec<f64> = (0..100_000).map(|_| a.uniform01()).collect();
            let ys: Vec<f64> = (0..100_000).map(|_| b.uniform01()).collect();
            let r = pearson(&xs, &ys);
            assert!(r.abs() < 0.01, "siblings {i},{j}: r = {r}");
        }
    }

    #[test]
    fn uniform_passes_chi_square_with_ten_buckets() {
        let mut s = RngStream::from_seed(11);
        let n = 100_000;
        let mut counts = [0usize; 10];
        for _ in 0..n {
            counts[(s.uniform01() * 10.0) as usize] += 1;
        }
        let expected = n as f64 / 10.0;
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - expected).powi(2) / expected)
            .sum();
        // chi-square with 9 dof: upper 0.001 quantile is 27.877
        assert!(chi2 < 27.877, "chi2 = {chi2}");
    }

    #[test]
    fn normal_moments_within_four_standard_errors() {
        let mut s = RngStream::from_seed(3);
        let n = 1_000_000;
        let (mean, sd) = (1.5, 2.0);
        let draws: Vec<f64> = (0..n).map(|_| s.normal(mean, sd).unwrap()).collect();
        let m = draws.iter().sum::<f64>() / n as f64;
        let v = draws.iter().map(|d| (d - m).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((m - mean).abs() < 4.0 * sd / (n as f64).sqrt());
        // Var of the sample variance for a normal is 2σ⁴/(n-1)
        let se_v = (2.0 * sd.powi(4) / (n - 1) as f64).sqrt();
        assert!((v - sd * sd).abs() < 4.0 * se_v, "var {v}");
    }

    #[test]
    fn uniform_range_respected() {
        let mut s = RngStream::from_seed(5);
        for _ in 0..100_000 {
            let u = s.uniform(-3.0, 3.0).unwrap();
            assert!((-3.0..3.0).contains(&u));
            let w = s.uniform_open01();
            assert!(w > 0.0 && w <= 1.0);
        }
    }

    #[test]
    fn bad_distribution_parameters() {
        let mut s = RngStream::from_seed(5);
        assert!(s.normal(0.0, 0.0).is_err());
        assert!(s.normal(0.0, -1.0).is_err());
        assert!(s.uniform(1.0, 1.0).is_err());
        assert!(s.uniform(2.0, 1.0).is_err());
    }

    #[test]
    fn geometric_level_frequencies_match_weights() {
        let tau = 1.5;
        let mut s = RngStream::from_seed(77);
        let n = 1_000_000;
        let mut counts = [0usize; 6];
        for _ in 0..n {
            let l = s.geometric_level(tau) as usize;
            if l < counts.len() {
                counts[l] += 1;
            }
        }
        for (l, &c) in counts.iter().enumerate() {
            let p = (1.0 - (-tau).exp2()) * (-tau * l as f64).exp2();
            let se = (p * (1.0 - p) / n as f64).sqrt();
            let freq = c as f64 / n as f64;
            assert!((freq - p).abs() < 4.0 * se, "level {l}: {freq} vs {p}");
        }
    }
}
