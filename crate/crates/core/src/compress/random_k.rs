use rand::seq::index;

use crate::error::{Error, Result};
use crate::tensor::{GradientMatrix, RngStream};

/// Number of retained entries for `len` coordinates at compression factor
/// `cf`: `round(len·cf)` (halves rounded up) clamped to `[1, len]`.
pub fn sample_count(len: usize, cf: f64) -> Result<usize> {
    check_factor(cf)?;
    let b = (len as f64 * cf + 0.5).floor() as usize;
    Ok(b.clamp(1, len.max(1)))
}

pub(crate) fn check_factor(cf: f64) -> Result<()> {
    if !(cf > 0.0 && cf <= 1.0) {
        return Err(Error::InvalidArgument(format!("compression factor {cf} outside (0, 1]")));
    }
    Ok(())
}

#[derive(Clone, Debug, PartialEq)]
pub struct RandomKMessage {
    pub indices: Vec<usize>,
    pub values: Vec<f64>,
}

/// Sorted index set of `b` coordinates out of `len`, sampled without
/// replacement. Every worker passing the same `shared` stream gets the same
/// set.
pub fn random_k_indices(len: usize, b: usize, shared: RngStream) -> Vec<usize> {
    let mut idx = index::sample(&mut shared.rng(), len, b).into_vec();
    idx.sort_unstable();
    idx
}

pub fn random_k_compress(m: &GradientMatrix, cf: f64, shared: RngStream) -> Result<RandomKMessage> {
    let b = sample_count(m.len(), cf)?;
    let indices = random_k_indices(m.len(), b, shared);
    let values = indices.iter().map(|&i| m.as_slice()[i]).collect();
    Ok(RandomKMessage { indices, values })
}

/// Scatter of the worker-averaged values; every unsampled entry is zero.
pub fn random_k_decompress(messages: &[RandomKMessage], m: usize, n: usize) -> Result<GradientMatrix> {
    let first = messages
        .first()
        .ok_or_else(|| Error::InvalidArgument("no messages to aggregate".into()))?;
    if messages
        .iter()
        .any(|msg| msg.indices != first.indices || msg.values.len() != first.indices.len())
    {
        return Err(Error::InvalidArgument("workers sampled different index sets".into()));
    }
    let k = messages.len() as f64;
    let mut avg = vec![0.0; first.values.len()];
    for msg in messages {
        for (a, v) in avg.iter_mut().zip(&msg.values) {
            *a += v;
        }
    }
    avg.iter_mut().for_each(|a| *a /= k);
    scatter(&first.indices, &avg, m, n)
}

pub(crate) fn scatter(indices: &[usize], values: &[f64], m: usize, n: usize) -> Result<GradientMatrix> {
    let mut out = GradientMatrix::zeros(m, n);
    for (&i, v) in indices.iter().zip(values) {
        if i >= m * n {
            return Err(Error::InvalidArgument(format!("index {i} outside a {m}x{n} matrix")));
        }
        out.as_mut_slice()[i] = *v;
    }
    Ok(out)
}
