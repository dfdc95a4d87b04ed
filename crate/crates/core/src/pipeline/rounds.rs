//! One communication round per algorithm. Every round function receives the
//! workers' raw gradients and returns the update to hand to the optimizer.

use crate::channel::{ChannelConfig, Power};
use crate::compress::{random_k_indices, rank_compress, sample_count, sign, SketchLayout};
use crate::error::{Error, Result};
use crate::power::{alloc_rankr, kappa_from_factors, layer_fractions, LayerScheme, LayerStats};
use crate::tensor::{norm, orthonormalize_columns, GradientMatrix, RngStream};

use super::{AlgorithmKind, AlgorithmSpec, WorkerState};

/// Everything a round needs besides worker state and gradients.
#[derive(Clone, Copy, Debug)]
pub struct RoundContext<'a> {
    pub round: usize,
    pub lr: f64,
    pub power: Power,
    pub channel: &'a ChannelConfig,
    pub stream: RngStream,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RoundOutput {
    /// Update per layer, in gradient units (the optimizer multiplies by γ_t).
    pub update: Vec<GradientMatrix>,
    pub layer_power: Vec<f64>,
    /// Largest per-worker transmitted energy this round.
    pub energy: f64,
    /// Scalars each worker sent.
    pub values_sent: usize,
    /// Largest relative violation of `e_new + C_i = e_old + γ·g_i`.
    pub ef_error: f64,
}

/// Whether a layer is sent without compression.
pub(crate) fn is_vector(shape: (usize, usize)) -> bool {
    shape.0 == 1 || shape.1 == 1
}

/// Scalars one worker sends for one layer per round.
pub fn layer_volume(kind: AlgorithmKind, shape: (usize, usize)) -> Result<usize> {
    let (m, n) = shape;
    let d = m * n;
    Ok(match kind {
        AlgorithmKind::Zsgd | AlgorithmKind::Signum => d,
        _ if is_vector(shape) => d,
        AlgorithmKind::Laser { rank } => (m + n) * rank.min(m.min(n)),
        AlgorithmKind::RandomK { cf } | AlgorithmKind::Sketch { cf } => sample_count(d, cf)?,
    })
}

/// Superposes one payload per worker and accumulates each worker's
/// transmitted energy `P·‖x_i‖²/max_j‖x_j‖²`.
fn send(
    channel: &ChannelConfig,
    payloads: &[&[f64]],
    power: Power,
    stream: RngStream,
    energy: &mut [f64],
) -> Result<Vec<f64>> {
    let norms: Vec<f64> = payloads.iter().map(|p| norm(p)).collect();
    let max = norms.iter().copied().fold(0.0, f64::max);
    if max > 0.0 {
        for (e, n) in energy.iter_mut().zip(&norms) {
            *e += match power {
                Power::Finite(p) => p * (n / max).powi(2),
                Power::Infinite if *n > 0.0 => f64::INFINITY,
                Power::Infinite => 0.0,
            };
        }
    }
    channel.transmit_vectors(payloads, power, stream)
}

fn layer_powers(power: Power, fractions: &[f64]) -> Vec<Power> {
    fractions.iter().map(|f| power.scaled(*f)).collect()
}

fn power_value(p: Power) -> f64 {
    p.finite().unwrap_or(f64::INFINITY)
}

/// `M_i = e_i + γ·g_i` for every worker of one layer.
fn memories(workers: &[WorkerState], grads: &[Vec<GradientMatrix>], layer: usize, lr: f64, ef: bool) -> Vec<GradientMatrix> {
    workers
        .iter()
        .zip(grads)
        .map(|(w, g)| {
            let mut m = g[layer].scaled(lr);
            if ef {
                m.axpy(1.0, &w.error[layer]);
            }
            m
        })
        .collect()
}

/// Stores `e_i = M_i − C_i` and returns the identity violation.
fn update_memory(worker: &mut WorkerState, layer: usize, memory: &GradientMatrix, local: &GradientMatrix) -> f64 {
    let e_new = memory.sub(local);
    // e_new + C_i must reproduce M_i = e_old + γ·g_i.
    let err = e_new.add(local).sub(memory).frobenius_norm() / memory.frobenius_norm().max(f64::MIN_POSITIVE);
    debug_assert!(err <= 1e-12, "error-feedback identity violated by {err}");
    worker.error[layer] = e_new;
    err
}

fn check_inputs(workers: &[WorkerState], grads: &[Vec<GradientMatrix>]) -> Result<usize> {
    if workers.is_empty() || workers.len() != grads.len() {
        return Err(Error::InvalidArgument(format!(
            "{} workers but {} gradient sets",
            workers.len(),
            grads.len()
        )));
    }
    let layers = workers[0].error.len();
    for (w, g) in workers.iter().zip(grads) {
        if g.len() != layers {
            return Err(Error::InvalidArgument("gradient layer count differs from worker state".into()));
        }
        for (e, gl) in w.error.iter().zip(g) {
            gl.ensure_shape(e.shape())?;
        }
    }
    Ok(layers)
}

fn uncompressed_layer(
    ctx: &RoundContext,
    memories: &[GradientMatrix],
    power: Power,
    stream: RngStream,
    energy: &mut [f64],
) -> Result<GradientMatrix> {
    let payloads: Vec<&[f64]> = memories.iter().map(|m| m.as_slice()).collect();
    let y = send(ctx.channel, &payloads, power, stream, energy)?;
    let (m, n) = memories[0].shape();
    GradientMatrix::from_vec(m, n, y)
}

/// Uncompressed over-the-air SGD: each layer's gradients pass through the
/// effective channel with power ∝ gradient norm.
pub fn zsgd_round(ctx: &RoundContext, workers: &mut [WorkerState], grads: &[Vec<GradientMatrix>]) -> Result<RoundOutput> {
    let layers = check_inputs(workers, grads)?;
    let stats: Vec<Vec<LayerStats>> = grads
        .iter()
        .map(|g| {
            g.iter()
                .map(|l| LayerStats {
                    elements: l.len(),
                    grad_norm: l.frobenius_norm(),
                    compressed_norm: l.frobenius_norm(),
                })
                .collect()
        })
        .collect();
    let powers = layer_powers(ctx.power, &layer_fractions(LayerScheme::GradNorm, &stats)?);
    let mut energy = vec![0.0; workers.len()];
    let mut update = Vec::with_capacity(layers);
    let mut values_sent = 0;
    for l in 0..layers {
        let layer: Vec<GradientMatrix> = grads.iter().map(|g| g[l].clone()).collect();
        values_sent += layer[0].len();
        update.push(uncompressed_layer(ctx, &layer, powers[l], ctx.stream.derive(&[l as u64, 5]), &mut energy)?);
    }
    Ok(RoundOutput {
        update,
        layer_power: powers.into_iter().map(power_value).collect(),
        energy: energy.iter().copied().fold(0.0, f64::max),
        values_sent,
        ef_error: 0.0,
    })
}

/// Low-rank round. For every matrix layer:
///
/// 1. each worker runs a local rank-r step from the shared warm start to
///    report its component shares κ and compressed norm (noiseless side
///    channel); the server averages them and splits the layer's power
///    between components and factors;
/// 2. the workers' `M_i·Q̂` columns superpose with powers α_c; the server
///    orthonormalizes the received sum into `P̂` and broadcasts it;
/// 3. the workers' `M_iᵀ·P̂` columns superpose with powers β_c into `Y_q`;
///    the update is `P̂·Y_qᵀ` and each worker keeps `M_i − P̂·(M_iᵀP̂)ᵀ`.
pub fn laser_round(
    ctx: &RoundContext,
    spec: &AlgorithmSpec,
    workers: &mut [WorkerState],
    grads: &[Vec<GradientMatrix>],
) -> Result<RoundOutput> {
    let AlgorithmKind::Laser { rank } = spec.kind else {
        return Err(Error::InvalidArgument("laser_round needs a rank algorithm".into()));
    };
    let layers = check_inputs(workers, grads)?;
    let k = workers.len();
    let mut energy = vec![0.0; k];
    let mut ef_error: f64 = 0.0;
    let mut values_sent = 0;

    let mems: Vec<Vec<GradientMatrix>> = (0..layers)
        .map(|l| memories(workers, grads, l, ctx.lr, spec.error_feedback))
        .collect();

    // Local compression for the side-channel statistics.
    let mut stats = vec![Vec::with_capacity(layers); k];
    let mut kappas: Vec<Option<Vec<f64>>> = Vec::with_capacity(layers);
    for (l, mem) in mems.iter().enumerate() {
        let shape = mem[0].shape();
        if is_vector(shape) {
            for (s, m) in stats.iter_mut().zip(mem) {
                s.push(LayerStats { elements: m.len(), grad_norm: m.frobenius_norm(), compressed_norm: m.frobenius_norm() });
            }
            kappas.push(None);
            continue;
        }
        let r = rank.min(shape.0.min(shape.1));
        let shared = ctx.stream.derive(&[l as u64, 0]);
        let mut sum = vec![0.0; r];
        let mut contributors = 0;
        for (i, (w, m)) in workers.iter().zip(mem).enumerate() {
            let mut warm = w.warm[l].clone();
            let f = rank_compress(m, r, &mut warm, shared)?;
            let compressed = f.right().frobenius_norm();
            stats[i].push(LayerStats { elements: m.len(), grad_norm: m.frobenius_norm(), compressed_norm: compressed });
            if !f.is_zero() {
                for (s, kk) in sum.iter_mut().zip(kappa_from_factors(&f)?) {
                    *s += kk;
                }
                contributors += 1;
            }
        }
        kappas.push(Some(if contributors == 0 {
            vec![1.0 / r as f64; r]
        } else {
            let total: f64 = sum.iter().sum();
            sum.iter().map(|s| s / total).collect()
        }));
    }
    let powers = layer_powers(ctx.power, &layer_fractions(LayerScheme::CompressedNorm, &stats)?);

    let mut update = Vec::with_capacity(layers);
    for l in 0..layers {
        let mem = &mems[l];
        let shape = mem[0].shape();
        let s = ctx.stream.derive(&[l as u64, 1]);
        let Some(kappa) = &kappas[l] else {
            values_sent += shape.0 * shape.1;
            let y = uncompressed_layer(ctx, mem, powers[l], s.child(5), &mut energy)?;
            if spec.error_feedback {
                for (w, m) in workers.iter_mut().zip(mem) {
                    ef_error = ef_error.max(update_memory(w, l, m, m));
                }
            }
            update.push(y.scaled(1.0 / ctx.lr));
            continue;
        };
        let r = kappa.len();
        values_sent += (shape.0 + shape.1) * r;
        let (alphas, betas) = match powers[l] {
            Power::Infinite => (vec![Power::Infinite; r], vec![Power::Infinite; r]),
            Power::Finite(p) => {
                let alloc = alloc_rankr(shape.0, shape.1, p, kappa)?;
                debug_assert!(alloc.total <= p * (1.0 + 1e-9));
                (
                    alloc.alphas.into_iter().map(Power::Finite).collect(),
                    alloc.betas.into_iter().map(Power::Finite).collect(),
                )
            }
        };

        // Phase 1: left factors against the shared warm start.
        let q_hat = workers[0].warm[l].basis(shape.1, r, ctx.stream.derive(&[l as u64, 0]).child(0));
        let lefts: Vec<GradientMatrix> = mem.iter().map(|m| m.matmul(&q_hat)).collect();
        let mut p_hat = GradientMatrix::zeros(shape.0, r);
        for c in 0..r {
            let cols: Vec<Vec<f64>> = lefts.iter().map(|p| p.column(c)).collect();
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            let y = send(ctx.channel, &refs, alphas[c], s.derive(&[1, c as u64]), &mut energy)?;
            p_hat.set_column(c, &y);
        }
        orthonormalize_columns(&mut p_hat, s.child(2));

        // Phase 2: right factors against the broadcast left basis.
        let rights: Vec<GradientMatrix> = mem.iter().map(|m| m.t_matmul(&p_hat)).collect();
        let mut y_q = GradientMatrix::zeros(shape.1, r);
        for c in 0..r {
            let cols: Vec<Vec<f64>> = rights.iter().map(|q| q.column(c)).collect();
            let refs: Vec<&[f64]> = cols.iter().map(|c| c.as_slice()).collect();
            let y = send(ctx.channel, &refs, betas[c], s.derive(&[3, c as u64]), &mut energy)?;
            y_q.set_column(c, &y);
        }

        for ((w, m), q) in workers.iter_mut().zip(mem).zip(&rights) {
            if spec.error_feedback {
                let local = p_hat.matmul_t(q);
                ef_error = ef_error.max(update_memory(w, l, m, &local));
            }
            w.warm[l].update(&y_q, s.child(4));
        }
        update.push(p_hat.matmul_t(&y_q).scaled(1.0 / ctx.lr));
    }
    Ok(RoundOutput {
        update,
        layer_power: powers.into_iter().map(power_value).collect(),
        energy: energy.iter().copied().fold(0.0, f64::max),
        values_sent,
        ef_error,
    })
}

/// Random-K, Count-Mean Sketch and Signum rounds.
pub fn baseline_round(
    ctx: &RoundContext,
    spec: &AlgorithmSpec,
    workers: &mut [WorkerState],
    grads: &[Vec<GradientMatrix>],
) -> Result<RoundOutput> {
    let layers = check_inputs(workers, grads)?;
    let k = workers.len();
    let mut energy = vec![0.0; k];
    let mut ef_error: f64 = 0.0;
    let mut values_sent = 0;
    let mems: Vec<Vec<GradientMatrix>> = (0..layers)
        .map(|l| memories(workers, grads, l, ctx.lr, spec.error_feedback))
        .collect();

    enum Plan {
        Raw,
        Indices(Vec<usize>),
        Sketch(SketchLayout),
        Sign,
    }

    let mut plans = Vec::with_capacity(layers);
    let mut payloads: Vec<Vec<Vec<f64>>> = Vec::with_capacity(layers);
    for (l, mem) in mems.iter().enumerate() {
        let shape = mem[0].shape();
        let d = shape.0 * shape.1;
        let shared = ctx.stream.derive(&[l as u64, 0]);
        let plan = match spec.kind {
            AlgorithmKind::Signum => Plan::Sign,
            _ if is_vector(shape) => Plan::Raw,
            AlgorithmKind::RandomK { cf } => Plan::Indices(random_k_indices(d, sample_count(d, cf)?, shared)),
            AlgorithmKind::Sketch { cf } => Plan::Sketch(SketchLayout::new(d, cf, shared)?),
            _ => return Err(Error::InvalidArgument("baseline_round needs a baseline algorithm".into())),
        };
        let layer_payloads = mem
            .iter()
            .map(|m| {
                Ok(match &plan {
                    Plan::Raw => m.as_slice().to_vec(),
                    Plan::Indices(idx) => idx.iter().map(|&i| m.as_slice()[i]).collect(),
                    Plan::Sketch(layout) => layout.compress(m.as_slice())?.buckets,
                    Plan::Sign => m.as_slice().iter().map(|&v| sign(v)).collect(),
                })
            })
            .collect::<Result<Vec<Vec<f64>>>>()?;
        plans.push(plan);
        payloads.push(layer_payloads);
    }

    let stats: Vec<Vec<LayerStats>> = (0..k)
        .map(|w| {
            (0..layers)
                .map(|l| LayerStats {
                    elements: mems[l][w].len(),
                    grad_norm: mems[l][w].frobenius_norm(),
                    compressed_norm: norm(&payloads[l][w]),
                })
                .collect()
        })
        .collect();
    let scheme = if spec.kind == AlgorithmKind::Signum { LayerScheme::SqrtSize } else { LayerScheme::CompressedNorm };
    let powers = layer_powers(ctx.power, &layer_fractions(scheme, &stats)?);

    let mut update = Vec::with_capacity(layers);
    for l in 0..layers {
        let shape = mems[l][0].shape();
        let refs: Vec<&[f64]> = payloads[l].iter().map(|p| p.as_slice()).collect();
        values_sent += refs[0].len();
        let y = send(ctx.channel, &refs, powers[l], ctx.stream.derive(&[l as u64, 1]), &mut energy)?;
        let decode = |values: &[f64]| -> Result<GradientMatrix> {
            let data = match &plans[l] {
                Plan::Raw | Plan::Sign => values.to_vec(),
                Plan::Indices(idx) => {
                    let mut out = vec![0.0; shape.0 * shape.1];
                    for (&i, v) in idx.iter().zip(values) {
                        out[i] = *v;
                    }
                    out
                }
                Plan::Sketch(layout) => layout.decompress(values)?,
            };
            GradientMatrix::from_vec(shape.0, shape.1, data)
        };
        if spec.error_feedback {
            for w in 0..k {
                let local = decode(&payloads[l][w])?;
                ef_error = ef_error.max(update_memory(&mut workers[w], l, &mems[l][w], &local));
            }
        }
        update.push(match plans[l] {
            Plan::Sign => {
                let majority: Vec<f64> = y.iter().map(|&v| sign(v)).collect();
                GradientMatrix::from_vec(shape.0, shape.1, majority)?
            }
            _ => decode(&y)?.scaled(1.0 / ctx.lr),
        });
    }
    Ok(RoundOutput {
        update,
        layer_power: powers.into_iter().map(power_value).collect(),
        energy: energy.iter().copied().fold(0.0, f64::max),
        values_sent,
        ef_error,
    })
}
