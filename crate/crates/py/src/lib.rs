use laser_core::channel::{transmit_effective, Power};
use laser_core::compress::Compressor;
use laser_core::harness::ExperimentConfig;
use laser_core::pipeline::RunRecord;
use laser_core::{influence, power, Error, GradientMatrix, RngStream};
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } | Error::Format { .. } | Error::NoConvergence { .. } => PyRuntimeError::new_err(e.to_string()),
        _ => PyValueError::new_err(e.to_string()),
    }
}

fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<GradientMatrix> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(PyValueError::new_err("ragged matrix rows"));
    }
    GradientMatrix::from_vec(r, c, rows.concat()).map_err(py_err)
}

fn to_rows(m: &GradientMatrix) -> Vec<Vec<f64>> {
    (0..m.rows()).map(|i| m.row(i).to_vec()).collect()
}

fn to_power(p: Option<f64>) -> Power {
    p.map_or(Power::Infinite, Power::Finite)
}

/// Closed-form rank-1 split `(α, β)` of a round budget.
#[pyfunction]
fn alloc_rank1(m: usize, n: usize, power: f64) -> PyResult<(f64, f64)> {
    power::alloc_rank1(m, n, power).map_err(py_err)
}

/// Rank-r split: `(alphas, betas, total)`.
#[pyfunction]
fn alloc_rankr(m: usize, n: usize, power: f64, kappas: Vec<f64>) -> PyResult<(Vec<f64>, Vec<f64>, f64)> {
    let a = power::alloc_rankr(m, n, power, &kappas).map_err(py_err)?;
    Ok((a.alphas, a.betas, a.total))
}

#[pyfunction]
fn f_p(alpha: f64, beta: f64, m: usize, n: usize) -> PyResult<f64> {
    power::f_p(alpha, beta, m, n).map_err(py_err)
}

/// `None` power means a noiseless link.
#[pyfunction]
#[pyo3(signature = (m, n, power=None))]
fn lambda_zsgd(m: usize, n: usize, power: Option<f64>) -> PyResult<f64> {
    influence::lambda_zsgd(m, n, to_power(power)).map_err(py_err)
}

#[pyfunction]
fn lambda_laser_bound(m: usize, n: usize, r: usize, power: f64) -> PyResult<f64> {
    influence::lambda_laser_bound(m, n, r, power).map_err(py_err)
}

#[pyfunction]
fn snr_condition(power: f64, r: usize) -> bool {
    influence::snr_condition(power, r)
}

/// `(empirical, standard_error, analytic)`.
#[pyfunction]
#[pyo3(signature = (m, n, power, trials, seed=0))]
fn lambda_zsgd_monte_carlo(m: usize, n: usize, power: f64, trials: usize, seed: u64) -> PyResult<(f64, f64, f64)> {
    let rep = influence::lambda_zsgd_monte_carlo(m, n, power, trials, RngStream::new(seed, 0)).map_err(py_err)?;
    Ok((rep.empirical, rep.standard_error, rep.analytic))
}

#[pyfunction]
#[pyo3(signature = (matrix, top_k, seed=0))]
fn rank_energy(matrix: Vec<Vec<f64>>, top_k: usize, seed: u64) -> PyResult<f64> {
    influence::rank_energy(&to_matrix(matrix)?, top_k, RngStream::new(seed, 0)).map_err(py_err)
}

/// Compress-then-decompress with one of
/// `identity`, `rank`, `random-k`, `sketch`, `signum`.
#[pyfunction]
#[pyo3(signature = (matrix, kind, rank=1, cf=0.5, seed=0))]
fn compress(matrix: Vec<Vec<f64>>, kind: &str, rank: usize, cf: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let c = match kind {
        "identity" => Compressor::Identity,
        "rank" => Compressor::Rank { rank },
        "random-k" => Compressor::RandomK { cf },
        "sketch" => Compressor::Sketch { cf },
        "signum" => Compressor::Signum,
        other => return Err(PyValueError::new_err(format!("unknown compressor {other:?}"))),
    };
    let out = c.apply(&to_matrix(matrix)?, RngStream::new(seed, 0)).map_err(py_err)?;
    Ok(to_rows(&out))
}

/// One use of the effective noisy channel over the workers' matrices.
#[pyfunction]
#[pyo3(signature = (matrices, power, seed=0))]
fn transmit(matrices: Vec<Vec<Vec<f64>>>, power: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    let grads = matrices.into_iter().map(to_matrix).collect::<PyResult<Vec<_>>>()?;
    let y = transmit_effective(&grads, power, RngStream::new(seed, 0)).map_err(py_err)?;
    Ok(to_rows(&y))
}

/// Default experiment config for `quadratic` or `mnist`, as TOML.
#[pyfunction]
#[pyo3(signature = (task="quadratic"))]
fn default_config(task: &str) -> PyResult<String> {
    let cfg = match task {
        "quadratic" => ExperimentConfig::quadratic(),
        "mnist" => ExperimentConfig::mnist(),
        other => return Err(PyValueError::new_err(format!("unknown task {other:?}"))),
    };
    cfg.to_toml().map_err(py_err)
}

#[pyclass(frozen, get_all, skip_from_py_object)]
#[derive(Clone)]
struct Record {
    round: usize,
    loss: f64,
    eval: f64,
    power: f64,
    wall_ms: u64,
}

#[pymethods]
impl Record {
    fn __repr__(&self) -> String {
        format!(
            "Record(round={}, loss={}, eval={}, power={}, wall_ms={})",
            self.round, self.loss, self.eval, self.power, self.wall_ms
        )
    }
}

impl From<&RunRecord> for Record {
    fn from(r: &RunRecord) -> Self {
        Self { round: r.round, loss: r.loss, eval: r.eval, power: r.power, wall_ms: r.wall_ms }
    }
}

/// Run a training experiment described by a TOML config; returns per-round records.
/// The GIL is released while training runs.
#[pyfunction]
fn run_experiment(py: Python<'_>, config: &str) -> PyResult<Vec<Record>> {
    let cfg = ExperimentConfig::from_toml(config).map_err(py_err)?;
    let out = py.detach(|| laser_core::pipeline::run_experiment(&cfg)).map_err(py_err)?;
    Ok(out.records.iter().map(Record::from).collect())
}

#[pymodule]
pub fn laser(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Record>()?;
    m.add_function(wrap_pyfunction!(alloc_rank1, m)?)?;
    m.add_function(wrap_pyfunction!(alloc_rankr, m)?)?;
    m.add_function(wrap_pyfunction!(f_p, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_zsgd, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_laser_bound, m)?)?;
    m.add_function(wrap_pyfunction!(snr_condition, m)?)?;
    m.add_function(wrap_pyfunction!(lambda_zsgd_monte_carlo, m)?)?;
    m.add_function(wrap_pyfunction!(rank_energy, m)?)?;
    m.add_function(wrap_pyfunction!(compress, m)?)?;
    m.add_function(wrap_pyfunction!(transmit, m)?)?;
    m.add_function(wrap_pyfunction!(default_config, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    Ok(())
}
