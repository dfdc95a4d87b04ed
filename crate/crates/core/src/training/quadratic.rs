use crate::error::{Error, Result};
use crate::tensor::{sample_noise, GradientMatrix, RngStream};

/// `f(θ) = ½ Σ_j h_j (θ_j − θ*_j)²` over the entries of an m×n parameter,
/// with gradient oracle `∇f(θ) + σ·ξ`. The minimum value is zero.
#[derive(Clone, Debug, PartialEq)]
pub struct QuadraticTask {
    spectrum: GradientMatrix,
    optimum: GradientMatrix,
    sigma: f64,
}

impl QuadraticTask {
    pub fn new(spectrum: GradientMatrix, optimum: GradientMatrix, sigma: f64) -> Result<Self> {
        optimum.ensure_shape(spectrum.shape())?;
        if spectrum.as_slice().iter().any(|h| !(*h > 0.0)) {
            return Err(Error::InvalidArgument("curvatures must be positive".into()));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(Error::InvalidArgument(format!("noise scale must be nonnegative, got {sigma}")));
        }
        Ok(Self { spectrum, optimum, sigma })
    }

    /// Curvatures spaced geometrically in `[h_min, h_max]` (in row-major
    /// order) and a Gaussian optimum of rank `optimum_rank` (full when `None`)
    /// scaled to unit entry variance.
    pub fn generate(
        m: usize,
        n: usize,
        h_min: f64,
        h_max: f64,
        optimum_rank: Option<usize>,
        sigma: f64,
        stream: RngStream,
    ) -> Result<Self> {
        if !(h_min > 0.0 && h_max >= h_min) {
            return Err(Error::InvalidArgument(format!("invalid curvature range [{h_min}, {h_max}]")));
        }
        let d = m * n;
        let ratio = h_max / h_min;
        let spectrum = GradientMatrix::from_fn(m, n, |i, j| {
            let pos = if d > 1 { (i * n + j) as f64 / (d - 1) as f64 } else { 0.0 };
            h_min * ratio.powf(pos)
        });
        let optimum = match optimum_rank {
            None => sample_noise(m, n, stream.child(0)),
            Some(r) => {
                if r == 0 || r > m.min(n) {
                    return Err(Error::InvalidArgument(format!("optimum rank {r} outside 1..={}", m.min(n))));
                }
                let a = sample_noise(m, r, stream.child(1));
                let b = sample_noise(n, r, stream.child(2));
                a.matmul_t(&b).scaled(1.0 / (r as f64).sqrt())
            }
        };
        Self::new(spectrum, optimum, sigma)
    }

    pub fn shape(&self) -> (usize, usize) {
        self.optimum.shape()
    }

    pub fn optimum(&self) -> &GradientMatrix {
        &self.optimum
    }

    pub fn spectrum(&self) -> &GradientMatrix {
        &self.spectrum
    }

    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    pub fn max_curvature(&self) -> f64 {
        self.spectrum.as_slice().iter().copied().fold(0.0, f64::max)
    }

    pub fn loss(&self, theta: &GradientMatrix) -> Result<f64> {
        theta.ensure_shape(self.shape())?;
        Ok(0.5
            * theta
                .as_slice()
                .iter()
                .zip(self.optimum.as_slice())
                .zip(self.spectrum.as_slice())
                .map(|((t, o), h)| h * (t - o) * (t - o))
                .sum::<f64>())
    }

    pub fn true_gradient(&self, theta: &GradientMatrix) -> Result<GradientMatrix> {
        theta.ensure_shape(self.shape())?;
        let (m, n) = self.shape();
        let data = theta
            .as_slice()
            .iter()
            .zip(self.optimum.as_slice())
            .zip(self.spectrum.as_slice())
            .map(|((t, o), h)| h * (t - o))
            .collect();
        GradientMatrix::from_vec(m, n, data)
    }
}

pub fn quadratic_gradient(task: &QuadraticTask, theta: &GradientMatrix, stream: RngStream) -> Result<GradientMatrix> {
    let mut g = task.true_gradient(theta)?;
    if task.sigma > 0.0 {
        let (m, n) = task.shape();
        g.axpy(task.sigma, &sample_noise(m, n, stream));
    }
    Ok(g)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_task(sigma: f64) -> QuadraticTask {
        let opt = sample_noise(3, 4, RngStream::new(1, 0));
        QuadraticTask::new(GradientMatrix::from_fn(3, 4, |_, _| 1.0), opt, sigma).unwrap()
    }

    #[test]
    fn zero_gradient_at_optimum() {
        let t = identity_task(0.0);
        let g = quadratic_gradient(&t, t.optimum(), RngStream::new(0, 0)).unwrap();
        assert!(g.is_zero());
        assert_eq!(t.loss(t.optimum()).unwrap(), 0.0);
    }

    #[test]
    fn identity_curvature_gradient_is_displacement() {
        let t = identity_task(0.0);
        let delta = sample_noise(3, 4, RngStream::new(1, 1));
        let g = quadratic_gradient(&t, &t.optimum().add(&delta), RngStream::new(0, 0)).unwrap();
        assert!(g.sub(&delta).frobenius_norm() < 1e-12);
    }

    #[test]
    fn noisy_oracle_is_unbiased() {
        let t = identity_task(2.0);
        let theta = GradientMatrix::zeros(3, 4);
        let truth = t.true_gradient(&theta).unwrap();
        let trials = 10_000;
        let mut sum = GradientMatrix::zeros(3, 4);
        for i in 0..trials {
            sum.axpy(1.0, &quadratic_gradient(&t, &theta, RngStream::new(2, i)).unwrap());
        }
        let se = 2.0 / (trials as f64).sqrt();
        let mean = sum.scaled(1.0 / trials as f64);
        for (a, b) in mean.as_slice().iter().zip(truth.as_slice()) {
            assert!((a - b).abs() <= 3.0 * se + 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn generated_task_shapes_and_rank() {
        let t = QuadraticTask::generate(6, 8, 0.5, 2.0, Some(2), 0.0, RngStream::new(0, 0)).unwrap();
        assert_eq!(t.shape(), (6, 8));
        assert!((t.max_curvature() - 2.0).abs() < 1e-12);
        assert!(t.spectrum().as_slice().iter().all(|h| *h >= 0.5 - 1e-12));
        assert!(QuadraticTask::generate(6, 8, 0.0, 2.0, None, 0.0, RngStream::new(0, 0)).is_err());
        assert!(QuadraticTask::generate(6, 8, 1.0, 2.0, Some(7), 0.0, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn rejects_shape_mismatch() {
        let t = identity_task(0.0);
        assert!(t.loss(&GradientMatrix::zeros(4, 3)).is_err());
    }
}
