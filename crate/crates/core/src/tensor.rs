//! Dense matrix primitives and deterministic random streams.
//!
//! Everything the channel, compressors and training loop exchange is a
//! [`GradientMatrix`]: a row-major `m x n` block of `f64`. Multi-dimensional
//! parameter tensors are flattened with [`reshape_to_matrix`], which keeps the
//! leading dimension as rows.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense real matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl GradientMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidShape(format!("{rows}x{cols} has a zero dimension")));
        }
        if data.len() != rows * cols {
            return Err(Error::InvalidShape(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("matrix contains non-finite values".into()));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| if i == j { 1.0 } else { 0.0 })
    }

    /// Rank-one matrix `u vᵀ`.
    pub fn outer(u: &[f64], v: &[f64]) -> Self {
        Self::from_fn(u.len(), v.len(), |i, j| u[i] * v[j])
    }

    /// Matrix whose columns are the given vectors (all of equal length).
    pub fn from_columns(columns: &[Vec<f64>]) -> Self {
        let rows = columns.first().map_or(0, Vec::len);
        Self::from_fn(rows, columns.len(), |i, j| columns[j][i])
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn set_column(&mut self, j: usize, values: &[f64]) {
        debug_assert_eq!(values.len(), self.rows);
        for (i, v) in values.iter().enumerate() {
            self.set(i, j, *v);
        }
    }

    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.cols).map(|j| self.column(j)).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| *v == 0.0)
    }

    pub fn frobenius_norm(&self) -> f64 {
        frobenius_norm(self)
    }

    pub fn squared_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    /// Frobenius inner product `<self, other>`.
    pub fn inner(&self, other: &Self) -> f64 {
        debug_assert_eq!(self.shape(), other.shape());
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn ensure_shape(&self, shape: (usize, usize)) -> Result<()> {
        if self.shape() != shape {
            return Err(Error::ShapeMismatch {
                expected: shape,
                actual: self.shape(),
            });
        }
        Ok(())
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    pub fn scaled(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| v * s).collect(),
        }
    }

    pub fn scale_mut(&mut self, s: f64) {
        self.data.iter_mut().for_each(|v| *v *= s);
    }

    /// `self += a * other`
    pub fn axpy(&mut self, a: f64, other: &Self) {
        debug_assert_eq!(self.shape(), other.shape());
        for (x, y) in self.data.iter_mut().zip(&other.data) {
            *x += a * y;
        }
    }

    pub fn add(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(1.0, other);
        out
    }

    pub fn sub(&self, other: &Self) -> Self {
        let mut out = self.clone();
        out.axpy(-1.0, other);
        out
    }

    /// `self · other`
    pub fn matmul(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.rows, "matmul inner dimension");
        let mut out = Self::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · other`
    pub fn t_matmul(&self, other: &Self) -> Self {
        assert_eq!(self.rows, other.rows, "t_matmul inner dimension");
        let mut out = Self::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let a_row = self.row(k);
            let b_row = other.row(k);
            for (i, a) in a_row.iter().enumerate() {
                if *a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`
    pub fn matmul_t(&self, other: &Self) -> Self {
        assert_eq!(self.cols, other.cols, "matmul_t inner dimension");
        let mut out = Self::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = self.row(i);
            for j in 0..other.rows {
                out.data[i * other.rows + j] = dot(a_row, other.row(j));
            }
        }
        out
    }

    /// Entrywise mean of equally shaped matrices.
    pub fn mean_of(items: &[Self]) -> Result<Self> {
        let first = items
            .first()
            .ok_or_else(|| Error::InvalidArgument("mean of an empty set".into()))?;
        let mut acc = Self::zeros(first.rows, first.cols);
        for m in items {
            m.ensure_shape(first.shape())?;
            acc.axpy(1.0, m);
        }
        acc.scale_mut(1.0 / items.len() as f64);
        Ok(acc)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Flattens a parameter tensor shape into the `(m, n)` matrix it is
/// compressed as: the leading dimension stays, the rest is folded into
/// columns. 1-D shapes become column vectors.
pub fn reshape_to_matrix(shape: &[usize]) -> Result<(usize, usize)> {
    let (&m, rest) = shape
        .split_first()
        .ok_or_else(|| Error::InvalidShape("empty tensor shape".into()))?;
    if m == 0 || rest.contains(&0) {
        return Err(Error::InvalidShape(format!("{shape:?} has a zero dimension")));
    }
    Ok((m, rest.iter().product()))
}

pub fn frobenius_norm(m: &GradientMatrix) -> f64 {
    m.squared_norm().sqrt()
}

/// Distribution of the additive channel noise. Both variants have zero mean
/// and unit variance per entry.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseKind {
    #[default]
    Gaussian,
    /// Uniform on `[-sqrt(3), sqrt(3)]`.
    Uniform,
}

/// A labelled random stream.
///
/// The generator is ChaCha8 keyed by `seed` with `stream` selecting one of
/// 2⁶⁴ independent keystreams, so a stream's samples depend only on the pair
/// and never on how many other streams were consumed or in which order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct RngStream {
    pub seed: u64,
    pub stream: u64,
}

impl RngStream {
    pub fn new(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Derives a sub-stream, e.g. `base.child(worker).child(round)`.
    pub fn child(&self, label: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(label.wrapping_add(0x632b_e59b_d9b4_e019))),
        }
    }

    pub fn derive(&self, labels: &[u64]) -> Self {
        labels.iter().fold(*self, |s, l| s.child(*l))
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub fn fill_noise<R: Rng + ?Sized>(rng: &mut R, kind: NoiseKind, out: &mut [f64]) {
    match kind {
        NoiseKind::Gaussian => out.iter_mut().for_each(|v| *v = rng.sample(StandardNormal)),
        NoiseKind::Uniform => {
            let half_width = 3f64.sqrt();
            out.iter_mut()
                .for_each(|v| *v = rng.random_range(-half_width..half_width));
        }
    }
}

/// `m x n` matrix of i.i.d. standard normal entries drawn from `stream`.
pub fn sample_noise(m: usize, n: usize, stream: RngStream) -> GradientMatrix {
    sample_noise_with(m, n, stream, NoiseKind::Gaussian)
}

pub fn sample_noise_with(m: usize, n: usize, stream: RngStream, kind: NoiseKind) -> GradientMatrix {
    let mut out = GradientMatrix::zeros(m, n);
    fill_noise(&mut stream.rng(), kind, out.as_mut_slice());
    out
}

/// Column norm, relative to the norm before projection, below which a column
/// is treated as linearly dependent.
pub const ORTHO_TOLERANCE: f64 = 1e-12;

/// Modified Gram–Schmidt on the columns of `mat`, in place.
///
/// Columns that vanish after projection (relative norm below
/// [`ORTHO_TOLERANCE`]) are replaced by Gaussian directions from `stream` and
/// re-orthogonalized, so the result always has orthonormal columns. Each
/// column is projected twice, which keeps the Gram matrix within ~1e-15 of
/// the identity even for nearly dependent inputs.
pub fn orthonormalize_columns(mat: &mut GradientMatrix, stream: RngStream) {
    let (m, r) = mat.shape();
    assert!(r <= m, "cannot orthonormalize {r} columns in R^{m}");
    let mut cols = mat.columns();
    let mut rng = None;
    for j in 0..r {
        let mut attempts = 0;
        loop {
            let before = norm(&cols[j]);
            for _ in 0..2 {
                for i in 0..j {
                    let proj = dot(&cols[i], &cols[j]);
                    let (done, cur) = cols.split_at_mut(j);
                    for (c, q) in cur[0].iter_mut().zip(&done[i]) {
                        *c -= proj * q;
                    }
                }
            }
            let after = norm(&cols[j]);
            if before > 0.0 && after > ORTHO_TOLERANCE * before && after.is_finite() {
                cols[j].iter_mut().for_each(|c| *c /= after);
                break;
            }
            attempts += 1;
            assert!(attempts < 16, "failed to complete an orthonormal basis");
            let rng = rng.get_or_insert_with(|| stream.rng());
            fill_noise(rng, NoiseKind::Gaussian, &mut cols[j]);
        }
    }
    for (j, c) in cols.iter().enumerate() {
        mat.set_column(j, c);
    }
}
