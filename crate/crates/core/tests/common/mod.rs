#![allow(dead_code)]

use laser_core::harness::ExperimentConfig;

/// Small noisy quadratic run shared by the integration suites.
pub fn quadratic(kind: &str, seed: u64, power: Option<f64>) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::quadratic();
    cfg.seed = seed;
    cfg.workers = 4;
    cfg.rounds = 500;
    cfg.wall_clock = false;
    cfg.algorithm.kind = kind.into();
    cfg.optimizer.lr = 0.02;
    // constant-step signSGD stalls on an oscillation floor that channel noise dithers away
    cfg.optimizer.schedule = laser_core::training::Schedule::Cosine;
    cfg.quadratic.m = 16;
    cfg.quadratic.n = 16;
    cfg.quadratic.optimum_rank = Some(2);
    cfg.quadratic.sigma = 0.1;
    match power {
        Some(p) => cfg.power.budget = p,
        None => cfg.power.infinite = true,
    }
    cfg
}

pub fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}
