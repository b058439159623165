//! Experiment configuration: one TOML file, every field defaulted.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dynamics::{grid_index, Scheme};
use crate::error::{Error, Result};
use crate::model::{BuiltinModel, ModelSpec};

fn config_err(field: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        field: field.to_string(),
        reason: reason.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Master seed; every random stream is derived from it.
    pub seed: u64,
    /// Reuse the same batch and noise streams for every κ (common random numbers).
    /// Changes standard errors of differences across κ, not expected values.
    pub crn: bool,
    /// Directory receiving CSV files and `summary.txt`.
    pub output: PathBuf,
    pub model: ModelSection,
    pub system: SystemSection,
    pub initial: InitialSection,
    pub experiment: ExperimentSection,
    pub lemmas: LemmaSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    /// `quadratic-saturating` or `quadratic-linear-test`.
    pub name: String,
    pub lambda: f64,
    pub amplitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSection {
    pub particles: usize,
    pub batch: usize,
    pub dimension: usize,
    pub sigma: f64,
    pub horizon: f64,
    pub substeps: usize,
    pub replicas: usize,
}

/// Independent Gaussian coordinates `N(mean, std²)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct InitialSection {
    pub mean: f64,
    pub std: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    /// Strictly decreasing step sizes; `simulate` uses the first one.
    pub kappas: Vec<f64>,
    /// Physical evaluation times. Empty means every multiple of the largest κ in `(0, T]`.
    pub eval_times: Vec<f64>,
    pub schemes: Vec<Scheme>,
    /// Random directions for the sliced distance when `dimension > 1`.
    pub directions: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LemmaSection {
    pub particles: usize,
    pub batch: usize,
    pub kappa: f64,
    pub time: f64,
    pub samples: usize,
    /// Interval index `k` of the binomial count check.
    pub count_interval: usize,
    /// Step size, horizon and replicas of the moment and Hölder runs.
    pub dynamics_kappa: f64,
    pub dynamics_horizon: f64,
    pub dynamics_replicas: usize,
    /// Largest lag, in steps of `dynamics_kappa`, in the Hölder regression.
    pub holder_max_lag: usize,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: 20240101,
            crn: false,
            output: PathBuf::from("out"),
            model: ModelSection::default(),
            system: SystemSection::default(),
            initial: InitialSection::default(),
            experiment: ExperimentSection::default(),
            lemmas: LemmaSection::default(),
        }
    }
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            name: "quadratic-saturating".into(),
            lambda: 1.0,
            amplitude: 0.4,
        }
    }
}

impl Default for SystemSection {
    fn default() -> Self {
        Self {
            particles: 16,
            batch: 2,
            dimension: 1,
            sigma: 0.5,
            horizon: 1.0,
            substeps: 1,
            replicas: 1000,
        }
    }
}

impl Default for InitialSection {
    fn default() -> Self {
        Self {
            mean: 0.0,
            std: 1.0,
        }
    }
}

impl Default for ExperimentSection {
    fn default() -> Self {
        Self {
            kappas: vec![0.1, 0.05, 0.025, 0.0125],
            eval_times: Vec::new(),
            schemes: vec![Scheme::Ips, Scheme::Rbm1, Scheme::Rbmr],
            directions: 64,
        }
    }
}

impl Default for LemmaSection {
    fn default() -> Self {
        Self {
            particles: 4,
            batch: 2,
            kappa: 0.1,
            time: 1.0,
            samples: 100_000,
            count_interval: 9,
            dynamics_kappa: 0.05,
            dynamics_horizon: 20.0,
            dynamics_replicas: 200,
            holder_max_lag: 10,
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| config_err("config", e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("configuration is always serializable")
    }

    /// SHA-256 of the canonical TOML rendering, as lowercase hex.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_toml().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn build_model(&self) -> Result<ModelSpec> {
        BuiltinModel::from_name(&self.model.name, self.model.lambda, self.model.amplitude)
            .map_err(|e| config_err("model.name", e.to_string()))?
            .build(self.system.dimension, self.system.sigma)
            .map_err(|e| config_err("model", e.to_string()))
    }

    /// Evaluation times, filling in the default grid when none are given.
    pub fn eval_times(&self) -> Vec<f64> {
        if !self.experiment.eval_times.is_empty() {
            return self.experiment.eval_times.clone();
        }
        let kappa = self
            .experiment
            .kappas
            .first()
            .copied()
            .unwrap_or(self.system.horizon);
        let steps = grid_index(self.system.horizon, kappa).unwrap_or(1);
        (1..=steps).map(|k| k as f64 * kappa).collect()
    }

    /// Statistical commands need standard errors, hence two replicas.
    pub fn require_replicas(&self) -> Result<()> {
        if self.system.replicas < 2 {
            return Err(config_err(
                "system.replicas",
                "need at least 2 replicas for standard errors",
            ));
        }
        Ok(())
    }

    /// Checks every invariant and names the offending field.
    pub fn validate(&self) -> Result<()> {
        let s = &self.system;
        if s.particles < 2 {
            return Err(config_err("system.particles", "need at least 2 particles"));
        }
        if s.batch < 2 || s.batch > s.particles {
            return Err(config_err("system.batch", "need 2 <= batch <= particles"));
        }
        if s.dimension == 0 {
            return Err(config_err("system.dimension", "must be at least 1"));
        }
        if !(s.sigma >= 0.0 && s.sigma.is_finite()) {
            return Err(config_err("system.sigma", "must be finite and >= 0"));
        }
        if !(s.horizon > 0.0 && s.horizon.is_finite()) {
            return Err(config_err("system.horizon", "must be positive"));
        }
        if s.substeps == 0 {
            return Err(config_err("system.substeps", "must be at least 1"));
        }
        if s.replicas == 0 {
            return Err(config_err("system.replicas", "need at least 1 replica"));
        }
        if !(self.initial.std >= 0.0
            && self.initial.std.is_finite()
            && self.initial.mean.is_finite())
        {
            return Err(config_err("initial", "mean must be finite and std >= 0"));
        }
        let e = &self.experiment;
        if e.kappas.is_empty() {
            return Err(config_err(
                "experiment.kappas",
                "need at least one step size",
            ));
        }
        if e.kappas.iter().any(|k| !(*k > 0.0)) {
            return Err(config_err(
                "experiment.kappas",
                "step sizes must be positive",
            ));
        }
        if e.kappas.windows(2).any(|w| !(w[1] < w[0])) {
            return Err(config_err(
                "experiment.kappas",
                "must be strictly decreasing",
            ));
        }
        for &k in &e.kappas {
            let steps = grid_index(s.horizon, k).map_err(|_| {
                config_err(
                    "experiment.kappas",
                    format!("kappa = {k} does not divide T = {}", s.horizon),
                )
            })?;
            if !(s.particles * steps).is_multiple_of(s.batch) {
                return Err(config_err(
                    "experiment.kappas",
                    format!("(N/p)·T/κ is not an integer for kappa = {k}"),
                ));
            }
        }
        for &t in &self.eval_times() {
            if !(t >= 0.0) || t > s.horizon * (1.0 + 1e-12) {
                return Err(config_err(
                    "experiment.eval_times",
                    format!("time {t} is outside [0, T]"),
                ));
            }
            for &k in &e.kappas {
                let steps = grid_index(t, k).map_err(|_| {
                    config_err(
                        "experiment.eval_times",
                        format!("time {t} is not a multiple of kappa = {k}"),
                    )
                })?;
                if !(s.particles * steps).is_multiple_of(s.batch) {
                    return Err(config_err(
                        "experiment.eval_times",
                        format!("pseudo-time of t = {t} is off the kappa = {k} grid"),
                    ));
                }
            }
        }
        if e.schemes.is_empty() {
            return Err(config_err("experiment.schemes", "need at least one scheme"));
        }
        if e.schemes.contains(&Scheme::Rbm1) && !s.particles.is_multiple_of(s.batch) {
            return Err(config_err(
                "system.batch",
                "rbm1 needs batch to divide particles",
            ));
        }
        if e.directions == 0 {
            return Err(config_err("experiment.directions", "must be at least 1"));
        }
        let l = &self.lemmas;
        if l.batch < 2 || l.batch > l.particles {
            return Err(config_err("lemmas.batch", "need 2 <= batch <= particles"));
        }
        if l.samples < 2 {
            return Err(config_err("lemmas.samples", "need at least 2 samples"));
        }
        let steps = grid_index(l.time, l.kappa)
            .map_err(|_| config_err("lemmas.kappa", "must divide lemmas.time"))?;
        if !(l.particles * steps).is_multiple_of(l.batch) {
            return Err(config_err("lemmas.batch", "(N/p)·t/κ must be an integer"));
        }
        let dyn_steps = grid_index(l.dynamics_horizon, l.dynamics_kappa).map_err(|_| {
            config_err(
                "lemmas.dynamics_kappa",
                "must divide lemmas.dynamics_horizon",
            )
        })?;
        if !(s.particles * dyn_steps).is_multiple_of(s.batch) {
            return Err(config_err(
                "lemmas.dynamics_kappa",
                "(N/p)·horizon/κ must be an integer for the moment and Hölder runs",
            ));
        }
        if l.dynamics_replicas < 2 {
            return Err(config_err(
                "lemmas.dynamics_replicas",
                "need at least 2 replicas",
            ));
        }
        if l.holder_max_lag < 2 || 2 * l.holder_max_lag > dyn_steps {
            return Err(config_err(
                "lemmas.holder_max_lag",
                "need 2 <= lag and 2·lag <= dynamics_horizon / dynamics_kappa",
            ));
        }
        self.build_model()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_and_validate() {
        let cfg = ExperimentConfig::default();
        cfg.validate().unwrap();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.hash(), cfg.hash());
        assert_eq!(cfg.hash().len(), 64);
    }

    #[test]
    fn partial_files_fill_defaults() {
        let cfg = ExperimentConfig::from_toml("seed = 3\n[system]\nparticles = 8\n").unwrap();
        assert_eq!(cfg.seed, 3);
        assert_eq!(cfg.system.particles, 8);
        assert_eq!(cfg.system.batch, 2);
    }

    #[test]
    fn validation_names_fields() {
        let field = |cfg: ExperimentConfig| match cfg.validate() {
            Err(Error::Config { field, .. }) => field,
            other => panic!("expected config error, got {other:?}"),
        };
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.kappas = vec![0.3, 0.1, 0.05];
        assert_eq!(field(cfg), "experiment.kappas");
        let mut cfg = ExperimentConfig::default();
        cfg.system.batch = 20;
        assert_eq!(field(cfg), "system.batch");
        let mut cfg = ExperimentConfig::default();
        cfg.system.replicas = 0;
        assert_eq!(field(cfg), "system.replicas");
        let mut cfg = ExperimentConfig::default();
        cfg.system.batch = 4;
        cfg.system.particles = 10;
        cfg.experiment.kappas = vec![0.1];
        cfg.experiment.eval_times = vec![1.0];
        cfg.experiment.schemes = vec![Scheme::Rbm1];
        assert_eq!(field(cfg), "system.batch");
        let mut cfg = ExperimentConfig::default();
        cfg.experiment.kappas = vec![0.05, 0.1];
        assert_eq!(field(cfg), "experiment.kappas");
        let mut cfg = ExperimentConfig::default();
        cfg.model.name = "nope".into();
        assert_eq!(field(cfg), "model.name");
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
    }

    #[test]
    fn default_eval_grid() {
        let cfg = ExperimentConfig::default();
        let t = cfg.eval_times();
        assert_eq!(t.len(), 10);
        assert!((t[9] - 1.0).abs() < 1e-12);
    }
}
