use crate::error::{Error, Result};
use crate::tensor::GradientMatrix;

/// Sign with `sign(0) = +1`.
#[inline]
pub fn sign(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SignMessage {
    rows: usize,
    cols: usize,
    signs: Vec<i8>,
}

impl SignMessage {
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn signs(&self) -> &[i8] {
        &self.signs
    }

    pub fn to_values(&self) -> Vec<f64> {
        self.signs.iter().map(|&s| s as f64).collect()
    }
}

pub fn signum_compress(m: &GradientMatrix) -> SignMessage {
    SignMessage {
        rows: m.rows(),
        cols: m.cols(),
        signs: m.as_slice().iter().map(|&v| sign(v) as i8).collect(),
    }
}

/// Majority vote: entrywise sign of the summed worker signs, ties to `+1`.
pub fn signum_aggregate(messages: &[SignMessage]) -> Result<GradientMatrix> {
    let first = messages
        .first()
        .ok_or_else(|| Error::InvalidArgument("no sign messages to aggregate".into()))?;
    let mut votes = vec![0i64; first.signs.len()];
    for msg in messages {
        if msg.shape() != first.shape() {
            return Err(Error::ShapeMismatch {
                expected: first.shape(),
                actual: msg.shape(),
            });
        }
        for (v, &s) in votes.iter_mut().zip(&msg.signs) {
            *v += s as i64;
        }
    }
    GradientMatrix::from_vec(first.rows, first.cols, votes.iter().map(|&v| sign(v as f64)).collect())
}

/// Scale-preserving sign compressor `(‖M‖₁ / mn) · sign(M)`.
///
/// Plain `sign(M)` is not homogeneous in `M`, so it has no contraction
/// constant; this rescaled form is the one used when signs are analysed as a
/// contractive compressor.
pub fn scaled_sign(m: &GradientMatrix) -> GradientMatrix {
    let l1: f64 = m.as_slice().iter().map(|v| v.abs()).sum();
    let scale = l1 / m.len() as f64;
    GradientMatrix::from_fn(m.rows(), m.cols(), |i, j| scale * sign(m.get(i, j)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn msg(values: &[f64]) -> SignMessage {
        signum_compress(&GradientMatrix::from_vec(1, values.len(), values.to_vec()).unwrap())
    }

    #[test]
    fn single_worker_is_sign() {
        let m = GradientMatrix::from_vec(2, 2, vec![0.3, -2.0, 0.0, -0.0]).unwrap();
        let agg = signum_aggregate(&[signum_compress(&m)]).unwrap();
        assert_eq!(agg.as_slice(), &[1.0, -1.0, 1.0, 1.0]);
    }

    #[test]
    fn majority_and_ties() {
        let agg = signum_aggregate(&[msg(&[1.0]), msg(&[2.0]), msg(&[-1.0])]).unwrap();
        assert_eq!(agg.as_slice(), &[1.0]);
        let tie = signum_aggregate(&[msg(&[1.0]), msg(&[-1.0])]).unwrap();
        assert_eq!(tie.as_slice(), &[1.0]);
        let neg = signum_aggregate(&[msg(&[-1.0]), msg(&[-1.0]), msg(&[3.0])]).unwrap();
        assert_eq!(neg.as_slice(), &[-1.0]);
    }

    #[test]
    fn entries_are_plus_minus_one() {
        let m = crate::tensor::sample_noise(5, 5, crate::tensor::RngStream::new(0, 0));
        assert!(signum_compress(&m).signs().iter().all(|&s| s == 1 || s == -1));
    }

    #[test]
    fn scaled_sign_is_contractive() {
        let m = GradientMatrix::from_vec(1, 3, vec![0.01, -5.0, 0.2]).unwrap();
        let c = scaled_sign(&m);
        assert!(c.sub(&m).frobenius_norm() <= m.frobenius_norm());
    }
}
