mod rounds;

use std::sync::Arc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::compress::{check_factor, WarmStart};
use crate::error::{Error, Result};
use crate::harness::{load_mnist, ExperimentConfig, MnistData, TaskKind};
use crate::tensor::{GradientMatrix, RngStream};
use crate::training::{
    nn_forward_backward, optimizer_step, quadratic_gradient, OneLayerNN, OptimizerState, QuadraticTask, WorkerSet,
};

pub use rounds::{baseline_round, laser_round, layer_volume, zsgd_round, RoundContext, RoundOutput};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum AlgorithmKind {
    Laser { rank: usize },
    Zsgd,
    RandomK { cf: f64 },
    Sketch { cf: f64 },
    Signum,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSpec {
    pub kind: AlgorithmKind,
    pub error_feedback: bool,
}

impl AlgorithmSpec {
    /// Error feedback on for LASER and Random-K, off otherwise.
    pub fn new(kind: AlgorithmKind) -> Self {
        let error_feedback = matches!(kind, AlgorithmKind::Laser { .. } | AlgorithmKind::RandomK { .. });
        Self { kind, error_feedback }
    }

    pub fn with_error_feedback(mut self, on: bool) -> Self {
        self.error_feedback = on;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            AlgorithmKind::Laser { rank: 0 } => return Err(Error::Config("rank must be at least 1".into())),
            AlgorithmKind::RandomK { cf } | AlgorithmKind::Sketch { cf } => {
                check_factor(cf).map_err(|e| Error::Config(e.to_string()))?
            }
            AlgorithmKind::Signum if self.error_feedback => {
                return Err(Error::Config("signum does not support error feedback".into()))
            }
            AlgorithmKind::Zsgd if self.error_feedback => {
                return Err(Error::Config("zsgd sends uncompressed gradients; error feedback is meaningless".into()))
            }
            _ => {}
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self.kind {
            AlgorithmKind::Laser { .. } => "laser",
            AlgorithmKind::Zsgd => "zsgd",
            AlgorithmKind::RandomK { .. } => "random-k",
            AlgorithmKind::Sketch { .. } => "sketch",
            AlgorithmKind::Signum => "signum",
        }
    }
}

/// Error memories and warm starts of one worker, one entry per layer.
#[derive(Clone, Debug, PartialEq)]
pub struct WorkerState {
    pub id: usize,
    pub error: Vec<GradientMatrix>,
    pub warm: Vec<WarmStart>,
}

impl WorkerState {
    pub fn new(id: usize, shapes: &[(usize, usize)]) -> Self {
        Self {
            id,
            error: shapes.iter().map(|&(m, n)| GradientMatrix::zeros(m, n)).collect(),
            warm: vec![WarmStart::new(); shapes.len()],
        }
    }
}

/// Runs one round of `spec` and returns the update for the optimizer.
pub fn run_round(
    ctx: &RoundContext,
    spec: &AlgorithmSpec,
    workers: &mut [WorkerState],
    grads: &[Vec<GradientMatrix>],
) -> Result<RoundOutput> {
    match spec.kind {
        AlgorithmKind::Laser { .. } => laser_round(ctx, spec, workers, grads),
        AlgorithmKind::Zsgd => zsgd_round(ctx, workers, grads),
        _ => baseline_round(ctx, spec, workers, grads),
    }
}

/// Metrics of one round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub round: usize,
    pub loss: f64,
    pub eval: f64,
    #[serde(with = "nonfinite")]
    pub power: f64,
    pub wall_ms: u64,
}

/// Per-round bookkeeping beyond the headline metrics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RoundDiagnostics {
    pub round: usize,
    #[serde(with = "nonfinite_vec")]
    pub layer_power: Vec<f64>,
    #[serde(with = "nonfinite")]
    pub energy: f64,
    /// Cumulative scalars sent by one worker.
    pub data_volume: u64,
    /// Σ over workers and layers of ‖e_i‖².
    pub ef_residual: f64,
    pub ef_identity_error: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct RunOutput {
    pub records: Vec<RunRecord>,
    pub diagnostics: Vec<RoundDiagnostics>,
}

impl RunOutput {
    pub fn final_eval(&self) -> Option<f64> {
        self.records.last().map(|r| r.eval)
    }
}

/// JSON has no infinities; write them as strings.
mod nonfinite {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Num(f64),
        Text(String),
    }

    pub fn to_repr(v: f64) -> String {
        if v.is_nan() {
            "nan".into()
        } else if v > 0.0 {
            "inf".into()
        } else {
            "-inf".into()
        }
    }

    pub fn from_text<E: serde::de::Error>(s: &str) -> Result<f64, E> {
        match s {
            "inf" => Ok(f64::INFINITY),
            "-inf" => Ok(f64::NEG_INFINITY),
            "nan" => Ok(f64::NAN),
            _ => Err(E::custom(format!("invalid number `{s}`"))),
        }
    }

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_str(&to_repr(*v))
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Num(v) => Ok(v),
            Repr::Text(t) => from_text(&t),
        }
    }

    pub mod vec {
        use super::*;

        pub fn serialize<S: Serializer>(v: &[f64], s: S) -> Result<S::Ok, S::Error> {
            use serde::ser::SerializeSeq;
            let mut seq = s.serialize_seq(Some(v.len()))?;
            for x in v {
                if x.is_finite() {
                    seq.serialize_element(x)?;
                } else {
                    seq.serialize_element(&to_repr(*x))?;
                }
            }
            seq.end()
        }

        pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<f64>, D::Error> {
            Vec::<Repr>::deserialize(d)?
                .into_iter()
                .map(|r| match r {
                    Repr::Num(v) => Ok(v),
                    Repr::Text(t) => from_text(&t),
                })
                .collect()
        }
    }
}

use nonfinite::vec as nonfinite_vec;

/// A task bound to its data.
#[derive(Clone, Debug)]
pub enum TaskInstance {
    Quadratic(QuadraticTask),
    Mnist(Arc<MnistData>),
}

impl TaskInstance {
    pub fn from_config(config: &ExperimentConfig) -> Result<Self> {
        match config.task {
            TaskKind::Quadratic => {
                let q = &config.quadratic;
                let stream = RngStream::new(config.seed, streams::TASK);
                Ok(Self::Quadratic(QuadraticTask::generate(
                    q.m,
                    q.n,
                    q.h_min,
                    q.h_max,
                    q.optimum_rank,
                    q.sigma,
                    stream,
                )?))
            }
            TaskKind::Mnist => Ok(Self::Mnist(Arc::new(load_mnist(&config.mnist_path())?))),
        }
    }
}

mod streams {
    pub const TASK: u64 = 1;
    pub const INIT: u64 = 2;
    pub const DATA: u64 = 3;
    pub const ROUNDS: u64 = 4;
    pub const GRADIENT: u64 = 0;
    pub const CHANNEL: u64 = 1;
}

fn thread_count(config: &ExperimentConfig) -> Option<usize> {
    config.threads.or_else(|| std::env::var("LASER_THREADS").ok().and_then(|v| v.parse().ok()).filter(|&n| n > 0))
}

/// Full training run described by `config`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let task = TaskInstance::from_config(config)?;
    run_with_task(config, &task)
}

/// As [`run_experiment`] with an already-built task (lets callers share a
/// loaded dataset across runs).
pub fn run_with_task(config: &ExperimentConfig, task: &TaskInstance) -> Result<RunOutput> {
    let spec = config.algorithm.spec()?;
    config.optimizer.validate()?;
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_count(config) {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| match task {
        TaskInstance::Quadratic(q) => run_quadratic(config, &spec, q),
        TaskInstance::Mnist(data) => run_mnist(config, &spec, data),
    })
}

struct Loop<'a> {
    config: &'a ExperimentConfig,
    spec: &'a AlgorithmSpec,
    workers: Vec<WorkerState>,
    opt: OptimizerState,
    channel: crate::channel::ChannelConfig,
    horizon: usize,
    rounds_per_epoch: usize,
    volume: u64,
    start: Instant,
    out: RunOutput,
}

impl<'a> Loop<'a> {
    fn new(
        config: &'a ExperimentConfig,
        spec: &'a AlgorithmSpec,
        params: &[GradientMatrix],
        horizon: usize,
        rounds_per_epoch: usize,
    ) -> Result<Self> {
        let shapes: Vec<(usize, usize)> = params.iter().map(|p| p.shape()).collect();
        Ok(Self {
            config,
            spec,
            workers: (0..config.workers).map(|i| WorkerState::new(i, &shapes)).collect(),
            opt: OptimizerState::new(params),
            channel: config.channel(horizon)?,
            horizon,
            rounds_per_epoch,
            volume: 0,
            start: Instant::now(),
            out: RunOutput::default(),
        })
    }

    fn round_stream(&self, t: usize) -> RngStream {
        RngStream::new(self.config.seed, streams::ROUNDS).child(t as u64)
    }

    /// Communicates the workers' gradients and applies the optimizer step.
    fn step(&mut self, t: usize, params: &mut [GradientMatrix], grads: &[Vec<GradientMatrix>]) -> Result<(f64, RoundOutput)> {
        let lr = self.config.optimizer.lr_at(t, self.rounds_per_epoch, self.horizon);
        let power = self.channel.power_at(t)?;
        let ctx = RoundContext {
            round: t,
            lr,
            power,
            channel: &self.channel,
            stream: self.round_stream(t).child(streams::CHANNEL),
        };
        let out = run_round(&ctx, self.spec, &mut self.workers, grads)?;
        if let Some(p) = power.finite() {
            debug_assert!(out.energy <= p * (1.0 + 1e-9), "energy {} exceeds {p}", out.energy);
        }
        optimizer_step(&self.config.optimizer, &mut self.opt, params, &out.update, lr)?;
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument(format!("parameters diverged at round {t}")));
        }
        Ok((power.finite().unwrap_or(f64::INFINITY), out))
    }

    fn record(&mut self, t: usize, loss: f64, eval: f64, power: f64, out: &RoundOutput) {
        self.volume += out.values_sent as u64;
        let wall_ms = if self.config.wall_clock { self.start.elapsed().as_millis() as u64 } else { 0 };
        self.out.records.push(RunRecord { round: t, loss, eval, power, wall_ms });
        let ef_residual = self.workers.iter().flat_map(|w| w.error.iter()).map(|e| e.squared_norm()).sum();
        self.out.diagnostics.push(RoundDiagnostics {
            round: t,
            layer_power: out.layer_power.clone(),
            energy: out.energy,
            data_volume: self.volume,
            ef_residual,
            ef_identity_error: out.ef_error,
        });
    }
}

fn run_quadratic(config: &ExperimentConfig, spec: &AlgorithmSpec, task: &QuadraticTask) -> Result<RunOutput> {
    let (m, n) = task.shape();
    let mut params = vec![GradientMatrix::zeros(m, n)];
    let horizon = config.rounds;
    let mut lp = Loop::new(config, spec, &params, horizon, 1)?;
    for t in 0..horizon {
        let loss = task.loss(&params[0])?;
        let s = lp.round_stream(t).child(streams::GRADIENT);
        let theta = &params[0];
        let grads = (0..config.workers)
            .into_par_iter()
            .map(|w| Ok(vec![quadratic_gradient(task, theta, s.child(w as u64))?]))
            .collect::<Result<Vec<_>>>()?;
        let (power, out) = lp.step(t, &mut params, &grads)?;
        let eval = task.loss(&params[0])?;
        lp.record(t, loss, eval, power, &out);
    }
    Ok(lp.out)
}

fn run_mnist(config: &ExperimentConfig, spec: &AlgorithmSpec, data: &MnistData) -> Result<RunOutput> {
    let model = OneLayerNN::init(RngStream::new(config.seed, streams::INIT));
    let mut params = model.layers;
    let sets = WorkerSet::new(data.train.len(), config.workers, config.batch_size, RngStream::new(config.seed, streams::DATA))?;
    let rpe = sets.rounds_per_epoch();
    let horizon = config.epochs * rpe;
    let mut lp = Loop::new(config, spec, &params, horizon, rpe)?;
    let mut accuracy = OneLayerNN { layers: params.clone() }.accuracy(&data.test);
    for epoch in 0..config.epochs {
        let shards = sets.shards(epoch);
        for r in 0..rpe {
            let t = epoch * rpe + r;
            let model = OneLayerNN { layers: params };
            let results = (0..config.workers)
                .into_par_iter()
                .map(|w| nn_forward_backward(&model, &data.train, sets.minibatch(&shards, w, r)))
                .collect::<Result<Vec<_>>>()?;
            params = model.layers;
            let loss = results.iter().map(|(l, _)| l).sum::<f64>() / results.len() as f64;
            let grads: Vec<Vec<GradientMatrix>> = results.into_iter().map(|(_, g)| g).collect();
            let (power, out) = lp.step(t, &mut params, &grads)?;
            if r + 1 == rpe {
                accuracy = OneLayerNN { layers: params.clone() }.accuracy(&data.test);
            }
            lp.record(t, loss, accuracy, power, &out);
        }
    }
    Ok(lp.out)
}
