//! `laser` command line. Exit codes: 0 success, 2 usage or configuration
//! error, 3 runtime failure.

use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};

use super::{emit_diagnostics, emit_metrics, write_metrics, ExperimentConfig};
use crate::channel::Power;
use crate::compress::{rank_compress, WarmStart};
use crate::error::{Error, Result};
use crate::influence::{lambda_laser_analytic, lambda_laser_bound, lambda_monte_carlo, lambda_zsgd, lambda_zsgd_monte_carlo, rank_energy, snr_condition};
use crate::pipeline::{run_with_task, TaskInstance};
use crate::power::{alloc_rank1, alloc_rankr, f_p, kappa_from_factors};
use crate::tensor::{sample_noise, GradientMatrix, RngStream};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_RUNTIME: i32 = 3;

#[derive(Parser, Debug)]
#[command(name = "laser", version, about = "Distributed SGD over a power-constrained noisy channel")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum InfluenceAlgorithm {
    Laser,
    Zsgd,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run one experiment from a TOML config.
    Run {
        config: PathBuf,
        /// Metrics file; overrides the config's `output`. Stdout when neither is set.
        #[arg(long)]
        output: Option<PathBuf>,
        /// Per-round diagnostics (JSONL).
        #[arg(long)]
        diagnostics: Option<PathBuf>,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Channel influence factors: closed form, bound and optional Monte Carlo.
    Influence {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 1)]
        r: usize,
        #[arg(long)]
        power: f64,
        #[arg(long, default_value_t = 0)]
        trials: usize,
        #[arg(long, value_enum, default_value_t = InfluenceAlgorithm::Laser)]
        algorithm: InfluenceAlgorithm,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Power split between factors (and components for rank > 1).
    Alloc {
        #[arg(long)]
        m: usize,
        #[arg(long)]
        n: usize,
        #[arg(long)]
        power: f64,
        #[arg(long, default_value_t = 1)]
        rank: usize,
        /// Component shares κ; uniform when omitted.
        #[arg(long, value_delimiter = ',')]
        kappa: Option<Vec<f64>>,
    },
    /// Energy fraction in the top singular directions of a matrix file
    /// (one row per line, entries separated by spaces or commas).
    RankEnergy {
        file: PathBuf,
        #[arg(long = "top-k")]
        top_k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Repeat a run over several power budgets and report the final metrics.
    Sweep {
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        powers: Vec<f64>,
        #[arg(long)]
        threads: Option<usize>,
    },
}

/// Shortest representation, with float noise below 1e-12 relative removed.
fn num(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:?}");
    }
    let digits = 12 - v.abs().log10().ceil() as i32;
    if digits <= 0 {
        return format!("{v:?}");
    }
    let scale = 10f64.powi(digits.min(300));
    let rounded = (v * scale).round() / scale;
    format!("{:?}", if rounded.is_finite() { rounded } else { v })
}

fn io(e: std::io::Error) -> Error {
    Error::io("<stdout>", e)
}

/// Reads a dense matrix from text.
pub fn read_matrix(path: &Path) -> Result<GradientMatrix> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split(|c: char| c == ',' || c.is_whitespace())
            .filter(|s| !s.is_empty())
            .map(|s| s.parse::<f64>().map_err(|e| Error::format(path, format!("line {}: {e}", i + 1))))
            .collect::<Result<Vec<f64>>>()?;
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::format(path, format!("line {} has {} entries, expected {}", i + 1, row.len(), first.len())));
            }
        }
        rows.push(row);
    }
    let cols = rows.first().map_or(0, |r| r.len());
    if rows.is_empty() || cols == 0 {
        return Err(Error::format(path, "no matrix entries"));
    }
    GradientMatrix::from_vec(rows.len(), cols, rows.concat())
}

fn load_config(path: &Path, threads: Option<usize>) -> Result<ExperimentConfig> {
    if !path.is_file() {
        return Err(Error::Config(format!("config file {} not found", path.display())));
    }
    let mut cfg = ExperimentConfig::load(path)?;
    if threads.is_some() {
        cfg.threads = threads;
        cfg.validate()?;
    }
    Ok(cfg)
}

fn run(config: &Path, output: Option<PathBuf>, diagnostics: Option<PathBuf>, threads: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let mut cfg = load_config(config, threads)?;
    if output.is_some() {
        cfg.output = output;
    }
    let task = TaskInstance::from_config(&cfg)?;
    let result = run_with_task(&cfg, &task)?;
    match &cfg.output {
        Some(path) => emit_metrics(&result.records, path, cfg.metrics_format())?,
        None => write_metrics(&result.records, cfg.metrics_format(), out)?,
    }
    if let Some(path) = diagnostics {
        emit_diagnostics(&result.diagnostics, &path)?;
    }
    Ok(())
}

fn sweep_path(base: &Path, power: f64) -> PathBuf {
    let stem = base.file_stem().and_then(|s| s.to_str()).unwrap_or("metrics");
    let name = match base.extension().and_then(|e| e.to_str()) {
        Some(ext) => format!("{stem}-P{}.{ext}", num(power)),
        None => format!("{stem}-P{}", num(power)),
    };
    base.with_file_name(name)
}

fn sweep(config: &Path, powers: &[f64], threads: Option<usize>, out: &mut dyn Write) -> Result<()> {
    let base = load_config(config, threads)?;
    if powers.iter().any(|p| !(*p > 0.0) || !p.is_finite()) {
        return Err(Error::Config("sweep powers must be positive and finite".into()));
    }
    let task = TaskInstance::from_config(&base)?;
    writeln!(out, "power,final_loss,final_eval").map_err(io)?;
    for &p in powers {
        let mut cfg = base.clone();
        cfg.power.budget = p;
        cfg.power.infinite = false;
        let result = run_with_task(&cfg, &task)?;
        if let Some(path) = &base.output {
            emit_metrics(&result.records, &sweep_path(path, p), cfg.metrics_format())?;
        }
        let last = result.records.last().ok_or_else(|| Error::InvalidArgument("run produced no records".into()))?;
        writeln!(out, "{},{},{}", num(p), last.loss, last.eval).map_err(io)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn influence(m: usize, n: usize, r: usize, power: f64, trials: usize, algorithm: InfluenceAlgorithm, seed: u64, out: &mut dyn Write) -> Result<()> {
    if m == 0 || n == 0 {
        return Err(Error::InvalidArgument("dimensions must be positive".into()));
    }
    let stream = RngStream::new(seed, 0);
    let zsgd = lambda_zsgd(m, n, Power::Finite(power))?;
    match algorithm {
        InfluenceAlgorithm::Zsgd => {
            writeln!(out, "λ={}", num(zsgd)).map_err(io)?;
            if trials > 0 {
                let mc = lambda_zsgd_monte_carlo(m, n, power, trials, stream)?;
                writeln!(out, "monte-carlo λ={} ± {}", num(mc.empirical), num(mc.standard_error)).map_err(io)?;
            }
        }
        InfluenceAlgorithm::Laser => {
            let bound = lambda_laser_bound(m, n, r, power)?;
            let g = sample_noise(m, n, stream.child(0));
            let factors = rank_compress(&g, r, &mut WarmStart::new(), stream.child(1))?;
            let alloc = alloc_rankr(m, n, power, &kappa_from_factors(&factors)?)?;
            let analytic = lambda_laser_analytic(&factors, &alloc)?;
            writeln!(out, "λ={}", num(analytic)).map_err(io)?;
            writeln!(out, "bound={}", num(bound)).map_err(io)?;
            writeln!(out, "zsgd λ={}", num(zsgd)).map_err(io)?;
            writeln!(out, "ratio bound={} (4r/m + 4r²/P = {})", num(bound / zsgd), num(4.0 * r as f64 / m as f64 + 4.0 * (r * r) as f64 / power)).map_err(io)?;
            writeln!(out, "snr condition P/(4r²) > 1: {}", snr_condition(power, r)).map_err(io)?;
            if trials > 0 {
                let mc = lambda_monte_carlo(&factors, &alloc, trials, stream.child(2))?;
                writeln!(out, "monte-carlo λ={} ± {}", num(mc.empirical), num(mc.standard_error)).map_err(io)?;
            }
        }
    }
    Ok(())
}

fn alloc(m: usize, n: usize, power: f64, rank: usize, kappa: Option<Vec<f64>>, out: &mut dyn Write) -> Result<()> {
    if rank == 0 {
        return Err(Error::InvalidArgument("rank must be at least 1".into()));
    }
    if rank == 1 && kappa.is_none() {
        let (a, b) = alloc_rank1(m, n, power)?;
        writeln!(out, "α={} β={} f_p={}", num(a), num(b), num(f_p(a, b, m, n)?)).map_err(io)?;
        return Ok(());
    }
    let kappa = kappa.unwrap_or_else(|| vec![1.0 / rank as f64; rank]);
    if kappa.len() != rank {
        return Err(Error::InvalidArgument(format!("{} κ values for rank {rank}", kappa.len())));
    }
    let alloc = alloc_rankr(m, n, power, &kappa)?;
    for (i, ((k, a), b)) in kappa.iter().zip(&alloc.alphas).zip(&alloc.betas).enumerate() {
        writeln!(out, "component {i}: κ={} α={} β={}", num(*k), num(*a), num(*b)).map_err(io)?;
    }
    writeln!(out, "total={} objective={}", num(alloc.total), num(alloc.objective(&kappa, m, n)?)).map_err(io)?;
    Ok(())
}

fn dispatch(command: Command, out: &mut dyn Write) -> Result<()> {
    match command {
        Command::Run { config, output, diagnostics, threads } => run(&config, output, diagnostics, threads, out),
        Command::Influence { m, n, r, power, trials, algorithm, seed } => influence(m, n, r, power, trials, algorithm, seed, out),
        Command::Alloc { m, n, power, rank, kappa } => alloc(m, n, power, rank, kappa, out),
        Command::RankEnergy { file, top_k, seed } => {
            let matrix = read_matrix(&file)?;
            let energy = rank_energy(&matrix, top_k, RngStream::new(seed, 0))?;
            writeln!(out, "energy={}", num(energy)).map_err(io)
        }
        Command::Sweep { config, powers, threads } => sweep(&config, &powers, threads, out),
    }
}

/// Parses `argv` (program name first), runs the command and returns the exit code.
pub fn cli<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let parsed = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let text = e.render().to_string();
            let _ = if code == EXIT_OK { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(parsed.command, out) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            if e.is_config() {
                EXIT_CONFIG
            } else {
                EXIT_RUNTIME
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn call(args: &[&str]) -> (i32, String, String) {
        let (mut out, mut err) = (Vec::new(), Vec::new());
        let code = cli(std::iter::once("laser").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn alloc_square_splits_evenly() {
        let (code, out, _) = call(&["alloc", "--m", "10", "--n", "10", "--power", "100", "--rank", "1"]);
        assert_eq!(code, 0);
        assert!(out.starts_with("α=50.0 β=50.0"), "{out}");
    }

    #[test]
    fn zsgd_influence_is_inverse_snr() {
        let (code, out, _) = call(&["influence", "--m", "16", "--n", "16", "--power", "256", "--algorithm", "zsgd"]);
        assert_eq!(code, 0);
        assert_eq!(out.lines().next(), Some("λ=1.0"));
    }

    #[test]
    fn usage_and_config_errors_exit_2() {
        assert_eq!(call(&["frobnicate"]).0, 2);
        assert_eq!(call(&["alloc", "--m", "1", "--n", "1", "--power", "1", "--bogus"]).0, 2);
        let (code, _, err) = call(&["run", "missing.toml"]);
        assert_eq!(code, 2);
        assert_eq!(err.lines().count(), 1);
        assert_eq!(call(&["alloc", "--m", "4", "--n", "4", "--power", "-1"]).0, 2);
        assert_eq!(call(&["--help"]).0, 0);
    }

    #[test]
    fn number_format() {
        assert_eq!(num(50.00000000000001), "50.0");
        assert_eq!(num(0.1 + 0.2), "0.3");
        assert_eq!(num(1.5e-20), "1.5e-20");
        assert_eq!(num(f64::INFINITY), "inf");
    }
}
