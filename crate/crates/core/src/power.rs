//! Power allocation across the components of a low-rank message and across
//! the layers of a model.

use serde::{Deserialize, Serialize};

use crate::compress::{component_energies, RankFactors};
use crate::error::{Error, Result};

/// Regularizer for components with zero energy.
pub const KAPPA_FLOOR: f64 = 1e-12;

/// Distortion multiplier `(1 + m/α)(1 + n/β)` of a rank-1 product whose left
/// and right vectors are sent with powers `α` and `β`.
pub fn f_p(alpha: f64, beta: f64, m: usize, n: usize) -> Result<f64> {
    if !(alpha > 0.0 && beta > 0.0) {
        return Err(Error::InvalidArgument(format!("powers must be positive, got α={alpha} β={beta}")));
    }
    Ok((1.0 + m as f64 / alpha) * (1.0 + n as f64 / beta))
}

/// Split of `p` between the left (`m`-dim) and right (`n`-dim) vector of a
/// rank-1 product minimizing `f_p`.
pub fn alloc_rank1(m: usize, n: usize, p: f64) -> Result<(f64, f64)> {
    if !(p > 0.0 && p.is_finite()) {
        return Err(Error::InvalidArgument(format!("power must be positive and finite, got {p}")));
    }
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    if m > n {
        let (a, b) = alloc_rank1(n, m, p)?;
        return Ok((b, a));
    }
    // sqrt(1+P/n)·(sqrt(1+P/m) − sqrt(1+P/n))/(1/m − 1/n), with the difference
    // of square roots rationalized so that m = n and m ≈ n need no special case.
    let sm = (1.0 + p / m as f64).sqrt();
    let sn = (1.0 + p / n as f64).sqrt();
    let alpha = sn * p / (sm + sn);
    Ok((alpha, p - alpha))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RankPowerAllocation {
    pub alphas: Vec<f64>,
    pub betas: Vec<f64>,
    pub total: f64,
}

impl RankPowerAllocation {
    pub fn rank(&self) -> usize {
        self.alphas.len()
    }

    /// `Σ κ_i f_p(α_i, β_i)`.
    pub fn objective(&self, kappas: &[f64], m: usize, n: usize) -> Result<f64> {
        let mut total = 0.0;
        for ((k, a), b) in kappas.iter().zip(&self.alphas).zip(&self.betas) {
            total += k * f_p(*a, *b, m, n)?;
        }
        Ok(total)
    }
}

fn check_kappas(kappas: &[f64]) -> Result<()> {
    if kappas.is_empty() || kappas.iter().any(|k| !(*k > 0.0) || !k.is_finite()) {
        return Err(Error::InvalidArgument("κ must be a nonempty list of positive reals".into()));
    }
    let sum: f64 = kappas.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("κ must sum to 1, got {sum}")));
    }
    Ok(())
}

/// Rank-`r` allocation: `P_i ∝ sqrt(κ_i)`, then the rank-1 split per component.
pub fn alloc_rankr(m: usize, n: usize, p: f64, kappas: &[f64]) -> Result<RankPowerAllocation> {
    check_kappas(kappas)?;
    let roots: f64 = kappas.iter().map(|k| k.sqrt()).sum();
    let mut alphas = Vec::with_capacity(kappas.len());
    let mut betas = Vec::with_capacity(kappas.len());
    for k in kappas {
        let (a, b) = alloc_rank1(m, n, p * k.sqrt() / roots)?;
        alphas.push(a);
        betas.push(b);
    }
    let total = alphas.iter().chain(&betas).sum();
    Ok(RankPowerAllocation { alphas, betas, total })
}

/// Normalize nonnegative component energies into `κ`, flooring zeros.
pub fn kappa_from_energies(energies: &[f64]) -> Result<Vec<f64>> {
    let sum: f64 = energies.iter().sum();
    if energies.is_empty() || !(sum > 0.0) || !sum.is_finite() {
        return Err(Error::InvalidArgument("κ is undefined for all-zero factors".into()));
    }
    let mut kappas: Vec<f64> = energies.iter().map(|e| (e / sum).max(KAPPA_FLOOR)).collect();
    let total: f64 = kappas.iter().sum();
    kappas.iter_mut().for_each(|k| *k /= total);
    Ok(kappas)
}

/// Share of the reconstructed energy carried by each component,
/// `κ_i ∝ ‖p_i‖²‖q_i‖²` (one factor has orthonormal columns, so this is the
/// squared column norm of the other).
pub fn kappa_from_factors(f: &RankFactors) -> Result<Vec<f64>> {
    kappa_from_energies(&component_energies(f))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LayerScheme {
    Uniform,
    GradNorm,
    CompressedNorm,
    /// `∝ sqrt(element count)`, used for sign messages.
    SqrtSize,
}

impl std::str::FromStr for LayerScheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "uniform" => Ok(Self::Uniform),
            "grad-norm" => Ok(Self::GradNorm),
            "compressed-norm" => Ok(Self::CompressedNorm),
            "sqrt-size" => Ok(Self::SqrtSize),
            _ => Err(Error::Config(format!("unknown layer scheme `{s}`"))),
        }
    }
}

/// One worker's view of one layer.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LayerStats {
    pub elements: usize,
    pub grad_norm: f64,
    pub compressed_norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerBudgetPlan {
    pub scheme: LayerScheme,
    /// Per-layer fraction of the round budget; sums to 1.
    pub fractions: Vec<f64>,
    pub powers: Vec<f64>,
}

impl LayerBudgetPlan {
    pub fn total(&self) -> f64 {
        self.powers.iter().sum()
    }
}

fn uniform(layers: usize) -> Vec<f64> {
    vec![1.0 / layers as f64; layers]
}

/// Server-side average of the workers' proposed layer fractions.
///
/// `stats[w][l]` is worker `w`'s statistic for layer `l`. A worker whose
/// statistics are all zero proposes a uniform split.
pub fn layer_fractions(scheme: LayerScheme, stats: &[Vec<LayerStats>]) -> Result<Vec<f64>> {
    let layers = stats.first().map_or(0, |s| s.len());
    if layers == 0 {
        return Err(Error::InvalidArgument("layer allocation needs at least one layer".into()));
    }
    if stats.iter().any(|s| s.len() != layers) {
        return Err(Error::InvalidArgument("workers report different layer counts".into()));
    }
    let mut avg = vec![0.0; layers];
    for worker in stats {
        let weights: Vec<f64> = worker
            .iter()
            .map(|s| match scheme {
                LayerScheme::Uniform => 1.0,
                LayerScheme::GradNorm => s.grad_norm,
                LayerScheme::CompressedNorm => s.compressed_norm,
                LayerScheme::SqrtSize => (s.elements as f64).sqrt(),
            })
            .collect();
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(Error::InvalidArgument("layer statistics must be finite and nonnegative".into()));
        }
        let sum: f64 = weights.iter().sum();
        let proposal = if sum > 0.0 {
            weights.iter().map(|w| w / sum).collect()
        } else {
            uniform(layers)
        };
        for (a, p) in avg.iter_mut().zip(proposal) {
            *a += p;
        }
    }
    let total: f64 = avg.iter().sum();
    avg.iter_mut().for_each(|a| *a /= total);
    Ok(avg)
}

pub fn layer_allocation(scheme: LayerScheme, stats: &[Vec<LayerStats>], p_t: f64) -> Result<LayerBudgetPlan> {
    if !(p_t >= 0.0) {
        return Err(Error::InvalidArgument(format!("round power must be nonnegative, got {p_t}")));
    }
    let fractions = layer_fractions(scheme, stats)?;
    let powers = fractions.iter().map(|f| f * p_t).collect();
    Ok(LayerBudgetPlan { scheme, fractions, powers })
}
