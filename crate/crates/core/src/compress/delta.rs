use serde::{Deserialize, Serialize};

use super::random_k::{random_k_compress, random_k_decompress};
use super::rank::{decompress, rank_compress, WarmStart};
use super::sign::scaled_sign;
use super::sketch::{sketch_compress, sketch_decompress};
use crate::error::{Error, Result};
use crate::tensor::{GradientMatrix, RngStream};

/// A single-worker compress-then-decompress map `C`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Compressor {
    Identity,
    /// One cold-started subspace-iteration step.
    Rank { rank: usize },
    RandomK { cf: f64 },
    Sketch { cf: f64 },
    /// The rescaled sign `(‖M‖₁/mn)·sign(M)`.
    Signum,
}

impl Compressor {
    pub fn is_randomized(&self) -> bool {
        !matches!(self, Compressor::Identity | Compressor::Signum)
    }

    pub fn apply(&self, m: &GradientMatrix, stream: RngStream) -> Result<GradientMatrix> {
        match *self {
            Compressor::Identity => Ok(m.clone()),
            Compressor::Rank { rank } => {
                let mut warm = WarmStart::new();
                Ok(decompress(&rank_compress(m, rank, &mut warm, stream)?))
            }
            Compressor::RandomK { cf } => {
                let msg = random_k_compress(m, cf, stream)?;
                random_k_decompress(&[msg], m.rows(), m.cols())
            }
            Compressor::Sketch { cf } => {
                let msg = sketch_compress(m, cf, stream)?;
                sketch_decompress(&[msg], cf, stream, m.rows(), m.cols())
            }
            Compressor::Signum => Ok(scaled_sign(m)),
        }
    }

    /// `E‖C(M) − M‖² / ‖M‖²`, averaged over `seeds` draws for randomized
    /// compressors.
    pub fn relative_error(&self, m: &GradientMatrix, seeds: usize, stream: RngStream) -> Result<f64> {
        let norm = m.squared_norm();
        if norm == 0.0 {
            return Err(Error::InvalidArgument("relative error of a zero matrix".into()));
        }
        let draws = if self.is_randomized() { seeds.max(1) } else { 1 };
        let mut total = 0.0;
        for s in 0..draws {
            total += self.apply(m, stream.child(s as u64))?.sub(m).squared_norm();
        }
        Ok(total / draws as f64 / norm)
    }
}

/// `δ̂ = 1 − max_M E‖C(M) − M‖²/‖M‖²` over the corpus.
///
/// Not clamped: a compressor that amplifies its input yields a negative value.
pub fn estimate_delta(
    compressor: &Compressor,
    corpus: &[GradientMatrix],
    seeds: usize,
    stream: RngStream,
) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::InvalidArgument("empty corpus".into()));
    }
    let mut worst: f64 = 0.0;
    for (i, m) in corpus.iter().enumerate() {
        if m.is_zero() {
            return Err(Error::InvalidArgument(format!("corpus entry {i} is the zero matrix")));
        }
        worst = worst.max(compressor.relative_error(m, seeds, stream.child(i as u64))?);
    }
    Ok(1.0 - worst)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sample_noise;

    fn corpus(count: usize, m: usize, n: usize, seed: u64) -> Vec<GradientMatrix> {
        (0..count).map(|i| sample_noise(m, n, RngStream::new(seed, i as u64))).collect()
    }

    #[test]
    fn identity_has_unit_delta() {
        let c = corpus(10, 4, 5, 1);
        assert_eq!(estimate_delta(&Compressor::Identity, &c, 100, RngStream::new(0, 0)).unwrap(), 1.0);
    }

    #[test]
    fn rank_on_low_rank_corpus_is_exact() {
        let s = RngStream::new(2, 0);
        let c: Vec<_> = (0..10)
            .map(|i| {
                let a = sample_noise(6, 2, s.derive(&[i, 0]));
                let b = sample_noise(9, 2, s.derive(&[i, 1]));
                a.matmul_t(&b)
            })
            .collect();
        let d = estimate_delta(&Compressor::Rank { rank: 2 }, &c, 1, RngStream::new(2, 1)).unwrap();
        assert!(d >= 1.0 - 1e-6, "{d}");
    }

    /// Exact `1 − max_M E‖C(M) − M‖²/‖M‖²` by enumerating every `b`-subset.
    fn random_k_delta_exact(corpus: &[GradientMatrix], b: usize) -> f64 {
        let d = corpus[0].len();
        let mut worst: f64 = 0.0;
        for m in corpus {
            let (mut total, mut count) = (0.0, 0u64);
            for mask in 0u32..(1 << d) {
                if mask.count_ones() as usize != b {
                    continue;
                }
                let kept: f64 = (0..d).filter(|i| mask >> i & 1 == 1).map(|i| m.as_slice()[i].powi(2)).sum();
                total += 1.0 - kept / m.squared_norm();
                count += 1;
            }
            worst = worst.max(total / count as f64);
        }
        1.0 - worst
    }

    #[test]
    fn random_k_delta_matches_sampling_fraction() {
        let c = corpus(10, 4, 4, 3);
        for cf in [0.25, 0.5, 0.75] {
            let exact = random_k_delta_exact(&c, sample_count_for(16, cf));
            assert!((exact - cf).abs() < 1e-12);
            let d = estimate_delta(&Compressor::RandomK { cf }, &c, 1000, RngStream::new(3, 1)).unwrap();
            assert!((d - exact).abs() <= 0.05, "cf {cf}: {d} vs {exact}");
        }
    }

    fn sample_count_for(len: usize, cf: f64) -> usize {
        crate::compress::sample_count(len, cf).unwrap()
    }

    #[test]
    fn zero_matrix_in_corpus_is_rejected() {
        let c = vec![GradientMatrix::zeros(2, 2)];
        assert!(estimate_delta(&Compressor::Identity, &c, 1, RngStream::new(0, 0)).is_err());
        assert!(estimate_delta(&Compressor::Identity, &[], 1, RngStream::new(0, 0)).is_err());
    }
}
