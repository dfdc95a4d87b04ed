//! Channel-influence factors: closed forms, Monte Carlo estimates and the
//! rank-energy diagnostic.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::channel::{transmit_effective, transmit_vector, Power};
use crate::compress::{decompress, RankFactors};
use crate::error::{Error, Result};
use crate::power::{kappa_from_factors, RankPowerAllocation};
use crate::tensor::{sample_noise, GradientMatrix, RngStream};

/// `λ = mn/P` for uncompressed over-the-air transmission; zero on a noiseless link.
pub fn lambda_zsgd(m: usize, n: usize, power: Power) -> Result<f64> {
    match power {
        Power::Infinite => Ok(0.0),
        Power::Finite(p) if p > 0.0 => Ok((m * n) as f64 / p),
        Power::Finite(p) => Err(Error::InvalidArgument(format!("power must be positive, got {p}"))),
    }
}

/// Upper bound `4/((m/r)·snr)·(1 + 1/((n/r)·snr))` on the rank-`r`
/// influence under the optimal allocation, with `snr = P/(mn)`.
pub fn lambda_laser_bound(m: usize, n: usize, r: usize, p: f64) -> Result<f64> {
    if !(p > 0.0) {
        return Err(Error::InvalidArgument(format!("power must be positive, got {p}")));
    }
    if r == 0 || r > m.min(n) {
        return Err(Error::InvalidArgument(format!("rank {r} outside 1..={}", m.min(n))));
    }
    let snr = p / (m * n) as f64;
    let (mr, nr) = (m as f64 / r as f64, n as f64 / r as f64);
    Ok(4.0 / (mr * snr) * (1.0 + 1.0 / (nr * snr)))
}

/// `P/(4r²) > 1`: the regime where low-rank transmission beats sending the
/// raw gradient for large layers.
pub fn snr_condition(p: f64, r: usize) -> bool {
    p / (4 * r * r) as f64 > 1.0
}

/// Analytic influence `Σ κ_i f_p(α_i, β_i) − 1` of rank factors sent with
/// the given allocation.
pub fn lambda_laser_analytic(factors: &RankFactors, alloc: &RankPowerAllocation) -> Result<f64> {
    let (m, n) = factors.shape();
    if alloc.rank() != factors.rank() {
        return Err(Error::InvalidArgument("allocation rank differs from factor rank".into()));
    }
    let kappas = kappa_from_factors(factors)?;
    Ok(alloc.objective(&kappas, m, n)? - 1.0)
}

/// What the squared distortion is divided by.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    /// `‖C‖²`, the transmitted (compressed) matrix.
    Transmitted,
    /// `‖g‖²`, the raw gradient.
    Gradient,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InfluenceReport {
    pub analytic: f64,
    pub empirical: f64,
    pub trials: usize,
    pub standard_error: f64,
    pub normalization: Normalization,
}

impl InfluenceReport {
    fn from_samples(analytic: f64, samples: &[f64], normalization: Normalization) -> Self {
        let t = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / t;
        let var = samples.iter().map(|s| (s - mean).powi(2)).sum::<f64>() / (t - 1.0).max(1.0);
        Self {
            analytic,
            empirical: mean,
            trials: samples.len(),
            standard_error: (var / t).sqrt(),
            normalization,
        }
    }

    /// Re-express a transmitted-normalized report relative to a gradient of
    /// squared norm `grad_sq`, given the transmitted squared norm `sent_sq`.
    pub fn renormalized(&self, sent_sq: f64, grad_sq: f64) -> Result<Self> {
        if self.normalization != Normalization::Transmitted {
            return Err(Error::InvalidArgument("report is already gradient-normalized".into()));
        }
        if !(grad_sq > 0.0) {
            return Err(Error::InvalidArgument("gradient norm must be positive".into()));
        }
        let s = sent_sq / grad_sq;
        Ok(Self {
            analytic: self.analytic * s,
            empirical: self.empirical * s,
            trials: self.trials,
            standard_error: self.standard_error * s,
            normalization: Normalization::Gradient,
        })
    }

    /// `|empirical − analytic|` in standard errors.
    pub fn z_score(&self) -> f64 {
        if self.standard_error == 0.0 {
            return if self.empirical == self.analytic { 0.0 } else { f64::INFINITY };
        }
        (self.empirical - self.analytic).abs() / self.standard_error
    }
}

fn trace_product(a: &GradientMatrix, b: &GradientMatrix) -> f64 {
    // tr(A·B) for square A, B of equal size.
    a.inner(&b.transpose())
}

/// Noisy copy of every factor column, column `i` of the left factor sent
/// with power `α_i` and column `i` of the right factor with `β_i`.
pub fn transmit_factors(f: &RankFactors, alloc: &RankPowerAllocation, stream: RngStream) -> Result<RankFactors> {
    let mut left = f.left().clone();
    let mut right = f.right().clone();
    for i in 0..f.rank() {
        let p = transmit_vector(&f.left().column(i), alloc.alphas[i], stream.derive(&[i as u64, 0]))?;
        let q = transmit_vector(&f.right().column(i), alloc.betas[i], stream.derive(&[i as u64, 1]))?;
        left.set_column(i, &p);
        right.set_column(i, &q);
    }
    RankFactors::new(left, right)
}

/// Squared reconstruction error `‖P̃Q̃ᵀ − PQᵀ‖²` from r×r Gram matrices only.
fn factor_error(clean: &RankFactors, noisy: &RankFactors) -> f64 {
    let (p, q) = (clean.left(), clean.right());
    let (pn, qn) = (noisy.left(), noisy.right());
    let nn = trace_product(&pn.t_matmul(pn), &qn.t_matmul(qn));
    let nc = trace_product(&p.t_matmul(pn), &qn.t_matmul(q));
    let cc = trace_product(&p.t_matmul(p), &q.t_matmul(q));
    (nn - 2.0 * nc + cc).max(0.0)
}

/// Monte Carlo influence of sending `factors` column-by-column with `alloc`,
/// normalized by the transmitted matrix's squared norm.
pub fn lambda_monte_carlo(
    factors: &RankFactors,
    alloc: &RankPowerAllocation,
    trials: usize,
    stream: RngStream,
) -> Result<InfluenceReport> {
    if trials < 2 {
        return Err(Error::InvalidArgument("at least two trials are needed".into()));
    }
    let analytic = lambda_laser_analytic(factors, alloc)?;
    let sent = decompress(factors).squared_norm();
    let samples = (0..trials)
        .into_par_iter()
        .map(|t| {
            let noisy = transmit_factors(factors, alloc, stream.child(t as u64))?;
            Ok(factor_error(factors, &noisy) / sent)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(InfluenceReport::from_samples(analytic, &samples, Normalization::Transmitted))
}

/// Reference implementation of [`lambda_monte_carlo`]'s per-trial error by
/// explicit re-multiplication.
pub fn factor_error_dense(clean: &RankFactors, noisy: &RankFactors) -> f64 {
    decompress(noisy).sub(&decompress(clean)).squared_norm()
}

/// Monte Carlo influence of the effective channel on a single random
/// `m×n` gradient sent with power `p`.
pub fn lambda_zsgd_monte_carlo(m: usize, n: usize, p: f64, trials: usize, stream: RngStream) -> Result<InfluenceReport> {
    if trials < 2 {
        return Err(Error::InvalidArgument("at least two trials are needed".into()));
    }
    let analytic = lambda_zsgd(m, n, Power::Finite(p))?;
    let g = sample_noise(m, n, stream.child(u64::MAX));
    let norm = g.squared_norm();
    let samples = (0..trials)
        .into_par_iter()
        .map(|t| {
            let y = transmit_effective(std::slice::from_ref(&g), p, stream.child(t as u64))?;
            Ok(y.sub(&g).squared_norm() / norm)
        })
        .collect::<Result<Vec<f64>>>()?;
    Ok(InfluenceReport::from_samples(analytic, &samples, Normalization::Gradient))
}

pub const ENERGY_TOLERANCE: f64 = 1e-8;
pub const ENERGY_MAX_ITERATIONS: usize = 500;

/// Fraction of `‖M‖²` captured by the `top_k` largest singular values.
///
/// Power iteration with deflation on the smaller Gram matrix. A component
/// counts as converged once its Rayleigh quotient moves by less than
/// [`ENERGY_TOLERANCE`] of the total energy between iterations.
pub fn rank_energy(m: &GradientMatrix, top_k: usize, stream: RngStream) -> Result<f64> {
    let min = m.rows().min(m.cols());
    if top_k == 0 || top_k > min {
        return Err(Error::InvalidArgument(format!("top_k {top_k} outside 1..={min}")));
    }
    let total = m.squared_norm();
    if total == 0.0 {
        return Ok(0.0);
    }
    let mut gram = if m.rows() <= m.cols() { m.matmul_t(m) } else { m.t_matmul(m) };
    let d = gram.rows();
    let mut captured = 0.0;
    for c in 0..top_k {
        let mut v = sample_noise(d, 1, stream.child(c as u64));
        let vn = v.frobenius_norm();
        v.scale_mut(1.0 / vn);
        let mut lambda = 0.0;
        let mut converged = false;
        for _ in 0..ENERGY_MAX_ITERATIONS {
            let w = gram.matmul(&v);
            let next = v.inner(&w);
            let wn = w.frobenius_norm();
            if wn == 0.0 {
                lambda = 0.0;
                converged = true;
                break;
            }
            v = w.scaled(1.0 / wn);
            if (next - lambda).abs() <= ENERGY_TOLERANCE * total {
                lambda = next;
                converged = true;
                break;
            }
            lambda = next;
        }
        if !converged {
            return Err(Error::NoConvergence {
                component: c,
                partial: captured / total,
            });
        }
        captured += lambda.max(0.0);
        gram.axpy(-lambda, &v.matmul_t(&v));
    }
    Ok((captured / total).min(1.0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compress::{rank_compress, WarmStart};
    use crate::power::{alloc_rank1, alloc_rankr};

    #[test]
    fn zsgd_examples() {
        assert_eq!(lambda_zsgd(16, 16, Power::Finite(256.0)).unwrap(), 1.0);
        assert_eq!(lambda_zsgd(8, 8, Power::Finite(128.0)).unwrap(), 0.5);
        assert_eq!(lambda_zsgd(8, 8, Power::Infinite).unwrap(), 0.0);
        assert!(lambda_zsgd(8, 8, Power::Finite(0.0)).is_err());
    }

    #[test]
    fn laser_bound_examples() {
        assert!((lambda_laser_bound(64, 64, 4, 4096.0).unwrap() - 0.265625).abs() < 1e-15);
        let (m, n, r, p) = (64, 96, 4, 5000.0);
        let ratio = lambda_laser_bound(m, n, r, p).unwrap() / lambda_zsgd(m, n, Power::Finite(p)).unwrap();
        let identity = 4.0 * r as f64 / m as f64 + 4.0 * (r * r) as f64 / p;
        assert!((ratio - identity).abs() < 1e-12);
        let full = lambda_laser_bound(8, 8, 8, 64.0).unwrap();
        assert!(full >= lambda_zsgd(8, 8, Power::Finite(64.0)).unwrap());
        assert!(lambda_laser_bound(8, 8, 9, 64.0).is_err());
    }

    #[test]
    fn snr_condition_examples() {
        assert!(snr_condition(65.0, 4));
        assert!(!snr_condition(64.0, 4));
        assert!(!snr_condition(1.0, 1));
    }

    fn rank1(m: usize, n: usize) -> RankFactors {
        let mut warm = WarmStart::new();
        let g = sample_noise(m, n, RngStream::new(4, 0));
        rank_compress(&g, 1, &mut warm, RngStream::new(4, 1)).unwrap()
    }

    #[test]
    fn monte_carlo_rank1_matches_analytic() {
        let f = rank1(10, 10);
        let alloc = alloc_rankr(10, 10, 100.0, &[1.0]).unwrap();
        let rep = lambda_monte_carlo(&f, &alloc, 10_000, RngStream::new(4, 2)).unwrap();
        assert!((rep.analytic - 0.44).abs() < 1e-12);
        assert!((rep.empirical / rep.analytic - 1.0).abs() < 0.05, "{rep:?}");
    }

    #[test]
    fn huge_power_gives_no_distortion() {
        let f = rank1(6, 7);
        let (a, b) = alloc_rank1(6, 7, 1e14).unwrap();
        let alloc = RankPowerAllocation { alphas: vec![a], betas: vec![b], total: 1e14 };
        let rep = lambda_monte_carlo(&f, &alloc, 200, RngStream::new(4, 3)).unwrap();
        assert!(rep.empirical < 1e-10);
    }

    #[test]
    fn gram_error_matches_dense() {
        let g = sample_noise(9, 13, RngStream::new(5, 0));
        let mut warm = WarmStart::new();
        let f = rank_compress(&g, 3, &mut warm, RngStream::new(5, 1)).unwrap();
        let alloc = alloc_rankr(9, 13, 50.0, &kappa_from_factors(&f).unwrap()).unwrap();
        for t in 0..10 {
            let noisy = transmit_factors(&f, &alloc, RngStream::new(5, 2 + t)).unwrap();
            let fast = factor_error(&f, &noisy);
            let dense = factor_error_dense(&f, &noisy);
            assert!((fast - dense).abs() <= 1e-9 * dense.max(1.0));
        }
    }

    #[test]
    fn renormalization_scales_by_norm_ratio() {
        let f = rank1(10, 10);
        let alloc = alloc_rankr(10, 10, 100.0, &[1.0]).unwrap();
        let rep = lambda_monte_carlo(&f, &alloc, 100, RngStream::new(1, 1)).unwrap();
        let g = rep.renormalized(2.0, 4.0).unwrap();
        assert_eq!(g.normalization, Normalization::Gradient);
        assert!((g.analytic - rep.analytic / 2.0).abs() < 1e-15);
        assert!(g.renormalized(1.0, 1.0).is_err());
    }

    #[test]
    fn rank_energy_examples() {
        let u: Vec<f64> = (0..5).map(|i| i as f64 + 1.0).collect();
        let v: Vec<f64> = (0..7).map(|i| 1.0 - i as f64 * 0.3).collect();
        let s = RngStream::new(6, 0);
        assert!((rank_energy(&GradientMatrix::outer(&u, &v), 1, s).unwrap() - 1.0).abs() < 1e-9);
        assert!((rank_energy(&GradientMatrix::identity(8), 4, s).unwrap() - 0.5).abs() < 1e-9);
        let r = sample_noise(16, 16, RngStream::new(6, 1));
        assert!((rank_energy(&r, 16, s).unwrap() - 1.0).abs() < 1e-6);
        assert!(rank_energy(&r, 17, s).is_err());
    }

    #[test]
    fn rank_energy_is_monotone() {
        let r = sample_noise(12, 20, RngStream::new(7, 0));
        let mut last = 0.0;
        for k in 1..=12 {
            let e = rank_energy(&r, k, RngStream::new(7, 1)).unwrap();
            assert!(e >= last - 1e-9, "k={k}: {e} < {last}");
            last = e;
        }
        assert!((last - 1.0).abs() < 1e-6);
    }
}
