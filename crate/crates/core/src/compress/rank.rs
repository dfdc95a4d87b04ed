//! Warm-started rank-`r` factorization by one subspace-iteration step.
//!
//! Factor convention: `decompress(f) = left · rightᵀ` where `left` (m×r) has
//! orthonormal columns and `right` (n×r) carries the magnitudes. Only one
//! factor needs orthogonal columns for the channel-influence identities, and
//! keeping the orthonormal factor on the left is what a single
//! multiply–orthonormalize–multiply step produces directly.

use crate::error::{Error, Result};
use crate::tensor::{orthonormalize_columns, sample_noise, GradientMatrix, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct RankFactors {
    left: GradientMatrix,
    right: GradientMatrix,
}

impl RankFactors {
    pub fn new(left: GradientMatrix, right: GradientMatrix) -> Result<Self> {
        if left.cols() != right.cols() || left.cols() == 0 {
            return Err(Error::InvalidShape(format!(
                "factor ranks differ or are zero: {} vs {}",
                left.cols(),
                right.cols()
            )));
        }
        Ok(Self { left, right })
    }

    pub fn zeros(m: usize, n: usize, r: usize) -> Self {
        Self {
            left: GradientMatrix::zeros(m, r),
            right: GradientMatrix::zeros(n, r),
        }
    }

    pub fn rank(&self) -> usize {
        self.left.cols()
    }

    /// Shape `(m, n)` of the reconstructed matrix.
    pub fn shape(&self) -> (usize, usize) {
        (self.left.rows(), self.right.rows())
    }

    pub fn left(&self) -> &GradientMatrix {
        &self.left
    }

    pub fn right(&self) -> &GradientMatrix {
        &self.right
    }

    pub fn is_zero(&self) -> bool {
        self.left.is_zero() || self.right.is_zero()
    }

    /// Squared Frobenius norm of `left · rightᵀ`. Exact when either factor
    /// has mutually orthogonal columns.
    pub fn squared_norm(&self) -> f64 {
        component_energies(self).iter().sum()
    }

    /// Number of scalars needed to send both factors.
    pub fn payload_len(&self) -> usize {
        self.left.len() + self.right.len()
    }
}

/// `‖p_i‖²·‖q_i‖²` for every component.
pub fn component_energies(f: &RankFactors) -> Vec<f64> {
    (0..f.rank())
        .map(|i| {
            let p = f.left.column(i);
            let q = f.right.column(i);
            crate::tensor::dot(&p, &p) * crate::tensor::dot(&q, &q)
        })
        .collect()
}

pub fn decompress(f: &RankFactors) -> GradientMatrix {
    f.left.matmul_t(&f.right)
}

/// Right subspace carried from one round to the next.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct WarmStart {
    q: Option<GradientMatrix>,
}

impl WarmStart {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_matrix(q: GradientMatrix) -> Self {
        Self { q: Some(q) }
    }

    pub fn is_present(&self) -> bool {
        self.q.is_some()
    }

    pub fn get(&self) -> Option<&GradientMatrix> {
        self.q.as_ref()
    }

    /// Warm-start basis for an `n x r` right factor, drawing a Gaussian one
    /// from `stream` when absent or of the wrong shape.
    pub fn basis(&self, n: usize, r: usize, stream: RngStream) -> GradientMatrix {
        match &self.q {
            Some(q) if q.shape() == (n, r) => q.clone(),
            _ => sample_noise(n, r, stream),
        }
    }

    /// Replace the stored basis with an orthonormalized copy of `q`.
    pub fn update(&mut self, q: &GradientMatrix, stream: RngStream) {
        let mut q = q.clone();
        orthonormalize_columns(&mut q, stream);
        self.q = Some(q);
    }
}

fn check_rank(m: &GradientMatrix, r: usize) -> Result<()> {
    let max = m.rows().min(m.cols());
    if r == 0 || r > max {
        return Err(Error::InvalidArgument(format!(
            "rank {r} outside 1..={max} for a {}x{} matrix",
            m.rows(),
            m.cols()
        )));
    }
    Ok(())
}

/// One warm-started subspace-iteration step:
/// `P = M·Q̂`, orthonormalize `P`, `Q = Mᵀ·P`, giving `M ≈ P·Qᵀ = P·Pᵀ·M`.
///
/// `stream` seeds the Gaussian start when `warm` is empty and any
/// replacement directions during orthonormalization. On return `warm` holds
/// the orthonormalized new right factor. A zero matrix yields zero factors
/// and leaves `warm` untouched.
pub fn rank_compress(m: &GradientMatrix, r: usize, warm: &mut WarmStart, stream: RngStream) -> Result<RankFactors> {
    check_rank(m, r)?;
    if m.is_zero() {
        return Ok(RankFactors::zeros(m.rows(), m.cols(), r));
    }
    let q_hat = warm.basis(m.cols(), r, stream.child(0));
    let mut p = m.matmul(&q_hat);
    orthonormalize_columns(&mut p, stream.child(1));
    let q = m.t_matmul(&p);
    warm.update(&q, stream.child(2));
    RankFactors::new(p, q)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sample_noise;

    #[test]
    fn exact_rank_one_is_recovered() {
        let p: Vec<f64> = (0..7).map(|i| 1.0 + i as f64).collect();
        let q: Vec<f64> = (0..5).map(|i| (i as f64 - 2.0) * 0.5 + 0.1).collect();
        let m = GradientMatrix::outer(&p, &q);
        let mut warm = WarmStart::new();
        let s = RngStream::new(1, 0);
        rank_compress(&m, 1, &mut warm, s).unwrap();
        let f = rank_compress(&m, 1, &mut warm, s.child(1)).unwrap();
        let err = decompress(&f).sub(&m).frobenius_norm() / m.frobenius_norm();
        assert!(err <= 1e-6, "{err}");
    }

    #[test]
    fn zero_matrix_gives_zero_factors() {
        let mut warm = WarmStart::new();
        let f = rank_compress(&GradientMatrix::zeros(4, 6), 2, &mut warm, RngStream::new(0, 0)).unwrap();
        assert!(f.is_zero());
        assert!(decompress(&f).is_zero());
        assert!(!warm.is_present());
    }

    #[test]
    fn rank_range_is_checked() {
        let m = GradientMatrix::identity(3);
        let mut warm = WarmStart::new();
        assert!(rank_compress(&m, 0, &mut warm, RngStream::new(0, 0)).is_err());
        assert!(rank_compress(&m, 4, &mut warm, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn decompress_examples() {
        let f = RankFactors::zeros(3, 2, 1);
        assert!(decompress(&f).is_zero());
        let f = RankFactors::new(
            GradientMatrix::from_vec(2, 1, vec![1.0, 0.0]).unwrap(),
            GradientMatrix::from_vec(2, 1, vec![0.0, 1.0]).unwrap(),
        )
        .unwrap();
        let d = decompress(&f);
        assert_eq!(d.as_slice(), &[0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn left_factor_is_orthonormal_and_residual_orthogonal() {
        let m = sample_noise(12, 20, RngStream::new(3, 0));
        let mut warm = WarmStart::new();
        let f = rank_compress(&m, 3, &mut warm, RngStream::new(3, 1)).unwrap();
        let gram = f.left().t_matmul(f.left());
        assert!(gram.sub(&GradientMatrix::identity(3)).frobenius_norm() < 1e-10);
        let approx = decompress(&f);
        let resid = m.sub(&approx);
        assert!(resid.inner(&approx).abs() <= 1e-6 * m.squared_norm());
        assert!((f.squared_norm() - approx.squared_norm()).abs() < 1e-9 * m.squared_norm());
        let wq = warm.get().unwrap();
        assert!(wq.t_matmul(wq).sub(&GradientMatrix::identity(3)).frobenius_norm() < 1e-10);
    }
}
