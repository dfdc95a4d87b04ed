//! The power-constrained additive-noise uplink.
//!
//! Workers transmit simultaneously and the receiver observes the sum of their
//! signals plus unit-variance noise. With every worker scaling its payload by
//! the common factor `a = sqrt(P_t) / max_j ‖x_j‖`, dividing the received
//! signal by `k·a` gives the effective channel
//!
//! ```text
//! y = (1/k) Σ x_i + (max_i ‖x_i‖ / (k·sqrt(P_t))) · Z
//! ```
//!
//! which is what [`superpose`] computes. Payload norms are assumed known at
//! the receiver through a free side channel.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{fill_noise, norm, GradientMatrix, NoiseKind, RngStream};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyKind {
    Constant,
    StepDecreasing,
    StepIncreasing,
    LinearDecreasing,
    LinearIncreasing,
}

impl std::str::FromStr for PolicyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "constant" => PolicyKind::Constant,
            "step-decreasing" => PolicyKind::StepDecreasing,
            "step-increasing" => PolicyKind::StepIncreasing,
            "linear-decreasing" => PolicyKind::LinearDecreasing,
            "linear-increasing" => PolicyKind::LinearIncreasing,
            other => return Err(Error::Config(format!("unknown power policy `{other}`"))),
        })
    }
}

/// Allocation of an average power budget over a horizon of rounds.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PowerPolicy {
    pub kind: PolicyKind,
    pub budget: f64,
    pub horizon: usize,
}

/// Step levels as multiples of the budget, in increasing order.
const STEP_LEVELS: [f64; 5] = [1.0 / 3.0, 2.0 / 3.0, 1.0, 4.0 / 3.0, 5.0 / 3.0];

impl PowerPolicy {
    pub fn new(kind: PolicyKind, budget: f64, horizon: usize) -> Result<Self> {
        if !(budget.is_finite() && budget >= 0.0) {
            return Err(Error::InvalidArgument(format!("power budget {budget} must be finite and >= 0")));
        }
        if horizon == 0 {
            return Err(Error::InvalidArgument("policy horizon must be positive".into()));
        }
        Ok(Self { kind, budget, horizon })
    }

    pub fn constant(budget: f64, horizon: usize) -> Result<Self> {
        Self::new(PolicyKind::Constant, budget, horizon)
    }

    /// Power available in round `t`.
    ///
    /// Step policies split the horizon into five phases at levels
    /// `P/3 .. 5P/3`. When the horizon is not a multiple of five the leftover
    /// rounds go to the lowest-level phases, which keeps the average at or
    /// below the budget. Linear policies interpolate between `P/3` and `5P/3`
    /// with both endpoints included; a one-round horizon gets `P`.
    pub fn power_at(&self, t: usize) -> Result<f64> {
        if t >= self.horizon {
            return Err(Error::RoundOutOfRange {
                round: t,
                horizon: self.horizon,
            });
        }
        let p = self.budget;
        let level = match self.kind {
            PolicyKind::Constant => 1.0,
            PolicyKind::StepIncreasing => STEP_LEVELS[step_phase(t, self.horizon)],
            PolicyKind::StepDecreasing => STEP_LEVELS[step_phase(self.horizon - 1 - t, self.horizon)],
            PolicyKind::LinearIncreasing | PolicyKind::LinearDecreasing => {
                if self.horizon == 1 {
                    1.0
                } else {
                    let mut frac = t as f64 / (self.horizon - 1) as f64;
                    if self.kind == PolicyKind::LinearDecreasing {
                        frac = 1.0 - frac;
                    }
                    1.0 / 3.0 + frac * 4.0 / 3.0
                }
            }
        };
        Ok(p * level)
    }

    /// Mean of `power_at` over the horizon.
    pub fn average(&self) -> f64 {
        (0..self.horizon)
            .map(|t| self.power_at(t).expect("t within horizon"))
            .sum::<f64>()
            / self.horizon as f64
    }
}

/// Phase index (0 = lowest level) of position `pos` counted from the
/// low-level end of an increasing schedule.
fn step_phase(pos: usize, horizon: usize) -> usize {
    let base = horizon / 5;
    let extra = horizon % 5;
    // phases 0..extra hold base + 1 rounds, the rest hold base rounds
    let long = extra * (base + 1);
    if pos < long {
        pos / (base + 1)
    } else {
        extra + (pos - long) / base
    }
}

/// Per-round transmit power. `Infinite` models a noiseless link.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Power {
    Finite(f64),
    Infinite,
}

impl Power {
    pub fn scaled(self, share: f64) -> Power {
        match self {
            Power::Finite(p) => Power::Finite(p * share),
            Power::Infinite => Power::Infinite,
        }
    }

    pub fn finite(self) -> Option<f64> {
        match self {
            Power::Finite(p) => Some(p),
            Power::Infinite => None,
        }
    }
}

/// Uplink configuration shared by all rounds of a run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChannelConfig {
    pub policy: PowerPolicy,
    pub workers: usize,
    pub infinite_power: bool,
    pub noise: NoiseKind,
}

impl ChannelConfig {
    pub fn new(policy: PowerPolicy, workers: usize, infinite_power: bool) -> Result<Self> {
        if workers == 0 {
            return Err(Error::InvalidArgument("at least one worker is required".into()));
        }
        Ok(Self {
            policy,
            workers,
            infinite_power,
            noise: NoiseKind::Gaussian,
        })
    }

    pub fn with_noise(mut self, noise: NoiseKind) -> Self {
        self.noise = noise;
        self
    }

    pub fn power_at(&self, t: usize) -> Result<Power> {
        if self.infinite_power {
            Ok(Power::Infinite)
        } else {
            Ok(Power::Finite(self.policy.power_at(t)?))
        }
    }

    /// Effective channel applied to one matrix per worker.
    pub fn transmit(&self, gradients: &[GradientMatrix], power: Power, stream: RngStream) -> Result<GradientMatrix> {
        transmit_matrices(gradients, power, self.noise, stream)
    }

    pub fn transmit_vectors(&self, payloads: &[&[f64]], power: Power, stream: RngStream) -> Result<Vec<f64>> {
        superpose(payloads, power, self.noise, stream)
    }
}

/// Common pre-scaling `sqrt(P_t) / max_j norms[j]`; zero when every payload
/// is zero.
pub fn optimal_scalar(norms: &[f64], power: f64) -> Result<f64> {
    if norms.is_empty() {
        return Err(Error::InvalidArgument("optimal scalar needs at least one norm".into()));
    }
    if norms.iter().any(|n| !(*n >= 0.0)) || !(power >= 0.0) {
        return Err(Error::InvalidArgument("norms and power must be nonnegative".into()));
    }
    let max = norms.iter().copied().fold(0.0, f64::max);
    Ok(if max == 0.0 { 0.0 } else { power.sqrt() / max })
}

/// Over-the-air average of equally long payloads with power `power` each.
pub fn superpose(payloads: &[&[f64]], power: Power, kind: NoiseKind, stream: RngStream) -> Result<Vec<f64>> {
    let k = payloads.len();
    let first = payloads
        .first()
        .ok_or_else(|| Error::InvalidArgument("channel needs at least one transmitter".into()))?;
    let d = first.len();
    if let Some(bad) = payloads.iter().find(|p| p.len() != d) {
        return Err(Error::ShapeMismatch {
            expected: (d, 1),
            actual: (bad.len(), 1),
        });
    }
    let mut out = vec![0.0; d];
    for p in payloads {
        for (o, v) in out.iter_mut().zip(p.iter()) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= k as f64);

    let max_norm = payloads.iter().map(|p| norm(p)).fold(0.0, f64::max);
    let p_t = match power {
        Power::Infinite => return Ok(out),
        _ if max_norm == 0.0 => return Ok(out),
        Power::Finite(p) if p > 0.0 && p.is_finite() => p,
        Power::Finite(p) => {
            return Err(Error::InvalidArgument(format!("cannot transmit a nonzero payload with power {p}")))
        }
    };
    let coeff = max_norm / (k as f64 * p_t.sqrt());
    let mut z = vec![0.0; d];
    fill_noise(&mut stream.rng(), kind, &mut z);
    for (o, zi) in out.iter_mut().zip(&z) {
        *o += coeff * zi;
    }
    Ok(out)
}

fn transmit_matrices(
    gradients: &[GradientMatrix],
    power: Power,
    kind: NoiseKind,
    stream: RngStream,
) -> Result<GradientMatrix> {
    let first = gradients
        .first()
        .ok_or_else(|| Error::InvalidArgument("channel needs at least one transmitter".into()))?;
    for g in gradients {
        g.ensure_shape(first.shape())?;
    }
    let payloads: Vec<&[f64]> = gradients.iter().map(|g| g.as_slice()).collect();
    let y = superpose(&payloads, power, kind, stream)?;
    Ok(GradientMatrix::from_vec(first.rows(), first.cols(), y).expect("shape preserved"))
}

/// Effective noisy channel for `k` worker gradients with round power `p_t`.
pub fn transmit_effective(gradients: &[GradientMatrix], p_t: f64, stream: RngStream) -> Result<GradientMatrix> {
    transmit_matrices(gradients, Power::Finite(p_t), NoiseKind::Gaussian, stream)
}

/// Single-transmitter channel for one factor column: `x + (‖x‖/sqrt(alpha))·z`.
pub fn transmit_vector(x: &[f64], alpha: f64, stream: RngStream) -> Result<Vec<f64>> {
    superpose(&[x], Power::Finite(alpha), NoiseKind::Gaussian, stream)
}

/// Raw multiple-access channel `Σ x_i + Z` with unit-variance noise.
pub fn transmit_raw(messages: &[&[f64]], stream: RngStream) -> Result<Vec<f64>> {
    let d = messages.first().map_or(0, |m| m.len());
    if messages.iter().any(|m| m.len() != d) {
        return Err(Error::InvalidArgument("messages differ in length".into()));
    }
    let mut y = vec![0.0; d];
    fill_noise(&mut stream.rng(), NoiseKind::Gaussian, &mut y);
    for m in messages {
        for (o, v) in y.iter_mut().zip(m.iter()) {
            *o += v;
        }
    }
    Ok(y)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::sample_noise;

    const KINDS: [PolicyKind; 5] = [
        PolicyKind::Constant,
        PolicyKind::StepDecreasing,
        PolicyKind::StepIncreasing,
        PolicyKind::LinearDecreasing,
        PolicyKind::LinearIncreasing,
    ];

    #[test]
    fn policy_examples() {
        let c = PowerPolicy::new(PolicyKind::Constant, 100.0, 10).unwrap();
        assert_eq!(c.power_at(7).unwrap(), 100.0);

        let li = PowerPolicy::new(PolicyKind::LinearIncreasing, 300.0, 2).unwrap();
        assert!((li.power_at(0).unwrap() - 100.0).abs() < 1e-9);
        assert!((li.power_at(1).unwrap() - 500.0).abs() < 1e-9);

        let sd = PowerPolicy::new(PolicyKind::StepDecreasing, 300.0, 5).unwrap();
        assert!((sd.power_at(0).unwrap() - 500.0).abs() < 1e-9);
        assert!((sd.power_at(4).unwrap() - 100.0).abs() < 1e-9);

        assert!(matches!(c.power_at(10), Err(Error::RoundOutOfRange { .. })));
    }

    #[test]
    fn step_levels_are_monotone_and_complete() {
        let inc = PowerPolicy::new(PolicyKind::StepIncreasing, 3.0, 10).unwrap();
        let levels: Vec<f64> = (0..10).map(|t| inc.power_at(t).unwrap()).collect();
        assert!(levels.windows(2).all(|w| w[0] <= w[1]));
        assert!((levels[0] - 1.0).abs() < 1e-12 && (levels[9] - 5.0).abs() < 1e-12);
        let dec = PowerPolicy::new(PolicyKind::StepDecreasing, 3.0, 12).unwrap();
        let levels: Vec<f64> = (0..12).map(|t| dec.power_at(t).unwrap()).collect();
        assert!(levels.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn every_policy_respects_average_constraint() {
        for kind in KINDS {
            for horizon in 1..=60 {
                let p = PowerPolicy::new(kind, 7.5, horizon).unwrap();
                let avg = p.average();
                assert!(avg <= 7.5 * (1.0 + 1e-9), "{kind:?} T={horizon}: {avg}");
                assert!((0..horizon).all(|t| p.power_at(t).unwrap() >= 0.0));
            }
        }
    }

    #[test]
    fn optimal_scalar_examples() {
        assert_eq!(optimal_scalar(&[2.0], 4.0).unwrap(), 1.0);
        assert_eq!(optimal_scalar(&[1.0, 3.0, 2.0], 9.0).unwrap(), 1.0);
        assert_eq!(optimal_scalar(&[0.0, 0.0], 9.0).unwrap(), 0.0);
        assert!(optimal_scalar(&[], 1.0).is_err());
        let norms = [0.5, 4.0, 2.5];
        let a = optimal_scalar(&norms, 3.0).unwrap();
        assert!(norms.iter().all(|n| (a * n).powi(2) <= 3.0 * (1.0 + 1e-12)));
    }

    #[test]
    fn infinite_power_is_exact_average() {
        let g: Vec<_> = (0..3).map(|i| sample_noise(4, 4, RngStream::new(1, i))).collect();
        let cfg = ChannelConfig::new(PowerPolicy::constant(1.0, 1).unwrap(), 3, true).unwrap();
        let y = cfg.transmit(&g, cfg.power_at(0).unwrap(), RngStream::new(0, 0)).unwrap();
        assert!(y.sub(&GradientMatrix::mean_of(&g).unwrap()).frobenius_norm() < 1e-15);
    }

    #[test]
    fn zero_gradient_is_silent() {
        let y = transmit_effective(&[GradientMatrix::zeros(3, 3)], 5.0, RngStream::new(0, 0)).unwrap();
        assert!(y.is_zero());
        assert_eq!(transmit_vector(&[0.0; 4], 2.0, RngStream::new(0, 1)).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn rejects_bad_inputs() {
        assert!(transmit_effective(&[], 1.0, RngStream::new(0, 0)).is_err());
        let a = GradientMatrix::zeros(2, 2);
        let b = GradientMatrix::zeros(2, 3);
        assert!(matches!(
            transmit_effective(&[a, b], 1.0, RngStream::new(0, 0)),
            Err(Error::ShapeMismatch { .. })
        ));
        assert!(transmit_vector(&[1.0], 0.0, RngStream::new(0, 0)).is_err());
        assert!(transmit_vector(&[1.0], -1.0, RngStream::new(0, 0)).is_err());
    }

    #[test]
    fn zsgd_influence_monte_carlo() {
        // k = 1, 16x16, P = 256 → snr = 1, E‖y − g‖²/‖g‖² = 1
        let g = sample_noise(16, 16, RngStream::new(5, 0));
        let base = RngStream::new(5, 1);
        let trials = 10_000;
        let mean = (0..trials)
            .map(|t| {
                let y = transmit_effective(std::slice::from_ref(&g), 256.0, base.child(t)).unwrap();
                y.sub(&g).squared_norm() / g.squared_norm()
            })
            .sum::<f64>()
            / trials as f64;
        assert!((mean - 1.0).abs() < 0.03, "{mean}");
    }

    #[test]
    fn transmit_vector_error_energy() {
        let x: Vec<f64> = (0..20).map(|i| (i as f64 * 0.37).sin()).collect();
        let alpha = 5.0;
        let expected = norm(&x).powi(2) * 20.0 / alpha;
        let base = RngStream::new(11, 0);
        let trials = 10_000;
        let mean = (0..trials)
            .map(|t| {
                let y = transmit_vector(&x, alpha, base.child(t)).unwrap();
                y.iter().zip(&x).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
            })
            .sum::<f64>()
            / trials as f64;
        assert!((mean / expected - 1.0).abs() < 0.03, "{mean} vs {expected}");
        let y = transmit_vector(&x, 1e30, base).unwrap();
        assert!(y.iter().zip(&x).all(|(a, b)| (a - b).abs() < 1e-12));
    }

    #[test]
    fn effective_channel_is_unbiased() {
        let g: Vec<_> = (0..3).map(|i| sample_noise(3, 2, RngStream::new(8, i))).collect();
        let avg = GradientMatrix::mean_of(&g).unwrap();
        let max_sq = g.iter().map(|m| m.squared_norm()).fold(0.0, f64::max);
        let p = 2.0;
        let trials = 10_000;
        let mut acc = GradientMatrix::zeros(3, 2);
        let base = RngStream::new(8, 100);
        for t in 0..trials {
            acc.axpy(1.0, &transmit_effective(&g, p, base.child(t)).unwrap());
        }
        acc.scale_mut(1.0 / trials as f64);
        let se = (max_sq / (9.0 * p) / trials as f64).sqrt();
        for (a, b) in acc.as_slice().iter().zip(avg.as_slice()) {
            assert!((a - b).abs() < 3.0 * se + 1e-12, "{a} vs {b} (se {se})");
        }
    }

    #[test]
    fn effective_form_equals_raw_channel() {
        let g: Vec<_> = (0..4).map(|i| sample_noise(5, 3, RngStream::new(2, i))).collect();
        let p = 3.0;
        let stream = RngStream::new(2, 99);
        let norms: Vec<f64> = g.iter().map(|m| m.frobenius_norm()).collect();
        let a = optimal_scalar(&norms, p).unwrap();
        let scaled: Vec<Vec<f64>> = g.iter().map(|m| m.scaled(a).into_vec()).collect();
        let refs: Vec<&[f64]> = scaled.iter().map(Vec::as_slice).collect();
        let raw = transmit_raw(&refs, stream).unwrap();
        let eff = transmit_effective(&g, p, stream).unwrap();
        for (r, e) in raw.iter().zip(eff.as_slice()) {
            assert!((r / (4.0 * a) - e).abs() < 1e-12);
        }
    }
}
