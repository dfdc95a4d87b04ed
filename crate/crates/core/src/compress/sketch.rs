//! Count-mean sketch: every coordinate is hashed to one of `b` buckets with a
//! random sign, buckets accumulate signed values, and each coordinate is
//! estimated as its sign times its bucket.

use rand::Rng;

use super::random_k::sample_count;
use crate::error::{Error, Result};
use crate::tensor::{GradientMatrix, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct SketchMessage {
    pub buckets: Vec<f64>,
}

impl SketchMessage {
    pub fn len(&self) -> usize {
        self.buckets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buckets.is_empty()
    }
}

/// Bucket and sign assignment shared by every worker.
#[derive(Clone, Debug, PartialEq)]
pub struct SketchLayout {
    buckets: usize,
    index: Vec<usize>,
    sign: Vec<f64>,
}

impl SketchLayout {
    /// Draws `len` bucket indices in `[0, b)` followed by `len` signs from a
    /// single generator keyed by `shared`.
    pub fn new(len: usize, cf: f64, shared: RngStream) -> Result<Self> {
        let buckets = sample_count(len, cf)?;
        let mut rng = shared.rng();
        let index = (0..len).map(|_| rng.random_range(0..buckets)).collect();
        let sign = (0..len)
            .map(|_| if rng.random::<bool>() { 1.0 } else { -1.0 })
            .collect();
        Ok(Self { buckets, index, sign })
    }

    pub fn from_parts(buckets: usize, index: Vec<usize>, sign: Vec<f64>) -> Result<Self> {
        if buckets == 0 || index.len() != sign.len() || index.iter().any(|&i| i >= buckets) {
            return Err(Error::InvalidArgument("inconsistent sketch layout".into()));
        }
        if sign.iter().any(|s| s.abs() != 1.0) {
            return Err(Error::InvalidArgument("sketch signs must be ±1".into()));
        }
        Ok(Self { buckets, index, sign })
    }

    pub fn buckets(&self) -> usize {
        self.buckets
    }

    pub fn len(&self) -> usize {
        self.index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.index.is_empty()
    }

    pub fn compress(&self, values: &[f64]) -> Result<SketchMessage> {
        if values.len() != self.index.len() {
            return Err(Error::InvalidArgument(format!(
                "layout covers {} coordinates, got {}",
                self.index.len(),
                values.len()
            )));
        }
        let mut buckets = vec![0.0; self.buckets];
        for ((&i, s), v) in self.index.iter().zip(&self.sign).zip(values) {
            buckets[i] += s * v;
        }
        Ok(SketchMessage { buckets })
    }

    /// Estimates every coordinate from already-aggregated buckets.
    pub fn decompress(&self, buckets: &[f64]) -> Result<Vec<f64>> {
        if buckets.len() != self.buckets {
            return Err(Error::InvalidArgument(format!(
                "expected {} buckets, got {}",
                self.buckets,
                buckets.len()
            )));
        }
        Ok(self.index.iter().zip(&self.sign).map(|(&i, s)| s * buckets[i]).collect())
    }
}

pub fn sketch_compress(m: &GradientMatrix, cf: f64, shared: RngStream) -> Result<SketchMessage> {
    SketchLayout::new(m.len(), cf, shared)?.compress(m.as_slice())
}

/// Averages the workers' buckets and unsketches them.
pub fn sketch_decompress(
    messages: &[SketchMessage],
    cf: f64,
    shared: RngStream,
    m: usize,
    n: usize,
) -> Result<GradientMatrix> {
    let layout = SketchLayout::new(m * n, cf, shared)?;
    if messages.is_empty() {
        return Err(Error::InvalidArgument("no messages to aggregate".into()));
    }
    let mut avg = vec![0.0; layout.buckets()];
    for msg in messages {
        if msg.len() != layout.buckets() {
            return Err(Error::InvalidArgument(format!(
                "bucket count {} does not match layout {}",
                msg.len(),
                layout.buckets()
            )));
        }
        for (a, v) in avg.iter_mut().zip(&msg.buckets) {
            *a += v;
        }
    }
    let k = messages.len() as f64;
    avg.iter_mut().for_each(|a| *a /= k);
    GradientMatrix::from_vec(m, n, layout.decompress(&avg)?)
}
