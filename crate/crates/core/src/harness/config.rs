use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{ChannelConfig, PolicyKind, PowerPolicy};
use crate::error::{Error, Result};
use crate::pipeline::{AlgorithmKind, AlgorithmSpec};
use crate::tensor::NoiseKind;
use crate::training::OptimizerConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    Quadratic,
    Mnist,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricsFormat {
    Csv,
    Jsonl,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AlgorithmConfig {
    pub kind: String,
    #[serde(default = "default_rank")]
    pub rank: usize,
    #[serde(default = "default_cf")]
    pub cf: f64,
    /// Overrides the algorithm's default error-feedback setting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error_feedback: Option<bool>,
}

fn default_rank() -> usize {
    2
}

fn default_cf() -> f64 {
    0.1
}

impl Default for AlgorithmConfig {
    fn default() -> Self {
        Self {
            kind: "laser".into(),
            rank: default_rank(),
            cf: default_cf(),
            error_feedback: None,
        }
    }
}

impl AlgorithmConfig {
    pub fn spec(&self) -> Result<AlgorithmSpec> {
        let kind = match self.kind.as_str() {
            "laser" => AlgorithmKind::Laser { rank: self.rank },
            "zsgd" => AlgorithmKind::Zsgd,
            "random-k" => AlgorithmKind::RandomK { cf: self.cf },
            "sketch" | "sketching" => AlgorithmKind::Sketch { cf: self.cf },
            "signum" => AlgorithmKind::Signum,
            other => return Err(Error::Config(format!("unknown algorithm `{other}`"))),
        };
        let mut spec = AlgorithmSpec::new(kind);
        if let Some(ef) = self.error_feedback {
            spec = spec.with_error_feedback(ef);
        }
        spec.validate()?;
        Ok(spec)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PowerConfig {
    #[serde(default = "default_budget")]
    pub budget: f64,
    #[serde(default = "default_policy")]
    pub policy: PolicyKind,
    #[serde(default)]
    pub infinite: bool,
    #[serde(default = "default_noise")]
    pub noise: NoiseKind,
}

fn default_budget() -> f64 {
    1.0
}

fn default_policy() -> PolicyKind {
    PolicyKind::Constant
}

fn default_noise() -> NoiseKind {
    NoiseKind::Gaussian
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            budget: default_budget(),
            policy: default_policy(),
            infinite: false,
            noise: default_noise(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuadraticConfig {
    #[serde(default = "default_dim")]
    pub m: usize,
    #[serde(default = "default_dim")]
    pub n: usize,
    #[serde(default = "default_curvature")]
    pub h_min: f64,
    #[serde(default = "default_curvature")]
    pub h_max: f64,
    /// Rank of the optimum; full rank when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimum_rank: Option<usize>,
    #[serde(default)]
    pub sigma: f64,
}

fn default_dim() -> usize {
    16
}

fn default_curvature() -> f64 {
    1.0
}

impl Default for QuadraticConfig {
    fn default() -> Self {
        Self {
            m: default_dim(),
            n: default_dim(),
            h_min: default_curvature(),
            h_max: default_curvature(),
            optimum_rank: None,
            sigma: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Rounds for the quadratic task.
    #[serde(default = "default_rounds")]
    pub rounds: usize,
    /// Epochs for MNIST.
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(default = "default_true")]
    pub wall_clock: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub format: Option<MetricsFormat>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mnist_dir: Option<PathBuf>,
    #[serde(default)]
    pub algorithm: AlgorithmConfig,
    #[serde(default)]
    pub optimizer: OptimizerConfig,
    #[serde(default)]
    pub power: PowerConfig,
    #[serde(default)]
    pub quadratic: QuadraticConfig,
}

fn default_workers() -> usize {
    16
}

fn default_rounds() -> usize {
    1000
}

fn default_epochs() -> usize {
    50
}

fn default_batch() -> usize {
    128
}

fn default_true() -> bool {
    true
}

impl ExperimentConfig {
    /// MNIST defaults: 16 workers, 128 per worker, 50 epochs, SGD with
    /// momentum 0.9, lr 0.01, weight decay 1e-4, rank 2 / cf 0.1.
    pub fn mnist() -> Self {
        Self::new(TaskKind::Mnist)
    }

    pub fn quadratic() -> Self {
        let mut c = Self::new(TaskKind::Quadratic);
        c.optimizer = OptimizerConfig::sgd(0.5);
        c
    }

    fn new(task: TaskKind) -> Self {
        Self {
            task,
            seed: 0,
            workers: default_workers(),
            rounds: default_rounds(),
            epochs: default_epochs(),
            batch_size: default_batch(),
            wall_clock: true,
            threads: None,
            output: None,
            format: None,
            mnist_dir: None,
            algorithm: AlgorithmConfig::default(),
            optimizer: OptimizerConfig::default(),
            power: PowerConfig::default(),
            quadratic: QuadraticConfig::default(),
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.message().to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Parse and validate a config file. Relative paths inside it resolve
    /// against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        if let Some(dir) = &cfg.mnist_dir {
            if dir.is_relative() {
                cfg.mnist_dir = Some(base.join(dir));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be at least 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.threads == Some(0) {
            return Err(Error::Config("threads must be at least 1".into()));
        }
        match self.task {
            TaskKind::Quadratic => {
                if self.rounds == 0 {
                    return Err(Error::Config("rounds must be at least 1".into()));
                }
                let q = &self.quadratic;
                if q.m == 0 || q.n == 0 {
                    return Err(Error::Config("quadratic dimensions must be positive".into()));
                }
                if !(q.h_min > 0.0 && q.h_max >= q.h_min) {
                    return Err(Error::Config("quadratic curvatures need 0 < h_min <= h_max".into()));
                }
                if !(q.sigma >= 0.0) {
                    return Err(Error::Config("quadratic sigma must be nonnegative".into()));
                }
            }
            TaskKind::Mnist => {
                if self.epochs == 0 {
                    return Err(Error::Config("epochs must be at least 1".into()));
                }
                let dir = self.mnist_path();
                for name in super::mnist::FILES {
                    if !dir.join(name).is_file() {
                        return Err(Error::Config(format!("missing MNIST file {}", dir.join(name).display())));
                    }
                }
            }
        }
        self.algorithm.spec()?;
        self.optimizer.validate()?;
        if !self.power.infinite && !(self.power.budget > 0.0 && self.power.budget.is_finite()) {
            return Err(Error::Config(format!("power budget must be positive, got {}", self.power.budget)));
        }
        Ok(())
    }

    pub fn mnist_path(&self) -> PathBuf {
        self.mnist_dir.clone().unwrap_or_else(super::mnist::default_dir)
    }

    pub fn metrics_format(&self) -> MetricsFormat {
        self.format.unwrap_or_else(|| match self.output.as_ref().and_then(|p| p.extension()) {
            Some(ext) if ext == "jsonl" || ext == "json" => MetricsFormat::Jsonl,
            _ => MetricsFormat::Csv,
        })
    }

    pub fn channel(&self, horizon: usize) -> Result<ChannelConfig> {
        let budget = if self.power.infinite { self.power.budget.max(0.0) } else { self.power.budget };
        let policy = PowerPolicy::new(self.power.policy, budget, horizon)?;
        Ok(ChannelConfig::new(policy, self.workers, self.power.infinite)?.with_noise(self.power.noise))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
task = "quadratic"
seed = 7
workers = 4
rounds = 50

[algorithm]
kind = "laser"
rank = 3

[optimizer]
lr = 0.2
momentum = 0.5
schedule = { kind = "step-decay", factor = 0.1, epoch = 3 }

[power]
budget = 12.5
policy = "linear-increasing"

[quadratic]
m = 8
n = 12
optimum_rank = 2
"#;

    #[test]
    fn parses_and_round_trips() {
        let cfg = ExperimentConfig::from_toml(SAMPLE).unwrap();
        assert_eq!(cfg.workers, 4);
        assert_eq!(cfg.algorithm.spec().unwrap().kind, AlgorithmKind::Laser { rank: 3 });
        assert_eq!(cfg.power.policy, PolicyKind::LinearIncreasing);
        assert_eq!(cfg.quadratic.optimum_rank, Some(2));
        let again = ExperimentConfig::from_toml(&cfg.to_toml().unwrap()).unwrap();
        assert_eq!(again, cfg);
        cfg.validate().unwrap();
    }

    #[test]
    fn rejects_unknown_keys_and_bad_values() {
        assert!(ExperimentConfig::from_toml("task = \"quadratic\"\nbogus = 1").is_err());
        assert!(ExperimentConfig::from_toml("task = \"cifar\"").is_err());
        let mut cfg = ExperimentConfig::quadratic();
        cfg.algorithm.kind = "topk".into();
        assert!(cfg.validate().unwrap_err().is_config());
        let mut cfg = ExperimentConfig::quadratic();
        cfg.power.budget = 0.0;
        assert!(cfg.validate().is_err());
        cfg.power.infinite = true;
        assert!(cfg.validate().is_ok());
    }

    #[test]
    fn mnist_files_must_exist() {
        let mut cfg = ExperimentConfig::mnist();
        cfg.mnist_dir = Some(PathBuf::from("/nonexistent/mnist"));
        assert!(cfg.validate().unwrap_err().is_config());
    }

    #[test]
    fn format_follows_extension() {
        let mut cfg = ExperimentConfig::quadratic();
        assert_eq!(cfg.metrics_format(), MetricsFormat::Csv);
        cfg.output = Some("x/run.jsonl".into());
        assert_eq!(cfg.metrics_format(), MetricsFormat::Jsonl);
    }
}
