//! Replica-parallel experiments. Every function returns results in replica order, so
//! the output depends only on the configuration, never on the worker count.

use std::time::{Duration, Instant};

use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::coupling::{run_coupled, strong_error, PhysicalTime};
use crate::dynamics::{
    grid_index, run_trajectory, sample_batch, GaussianStream, Scheme, StepConfig, Stepper,
};
use crate::ensemble::ParticleEnsemble;
use crate::error::{Error, Result};
use crate::lemma_lab::{self, ClockLawReport, Comparison};
use crate::metrics::{
    fit_slope, linear_regression, moment_track, replica_displacement, wasserstein2_1d,
    wasserstein2_sliced, EmpiricalMarginal, MeanSe, SlopeFit,
};
use crate::model::ModelSpec;
use crate::rng::{self, Purpose};

use super::config::ExperimentConfig;

/// Stream-index offset separating the per-κ seeds from everything else.
const KAPPA_TAG: u64 = 0x006b_6170_7061;

/// Gaussian initial condition of `replica`; identical for every κ and scheme.
pub fn initial_ensemble(cfg: &ExperimentConfig, replica: u64) -> Result<ParticleEnsemble> {
    let n = cfg.system.particles * cfg.system.dimension;
    let mut rng = rng::stream(cfg.seed, replica, Purpose::Initial, 0);
    let positions = (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            cfg.initial.mean + cfg.initial.std * z
        })
        .collect();
    ParticleEnsemble::new(positions, cfg.system.dimension, replica)
}

/// Seed of the κ-sweep entry `index`: the master seed itself under common random
/// numbers, an independent derived seed otherwise.
pub fn kappa_seed(cfg: &ExperimentConfig, index: usize) -> u64 {
    if cfg.crn {
        cfg.seed
    } else {
        rng::derive_seed(cfg.seed, &[KAPPA_TAG, index as u64])
    }
}

/// Coupled statistics of one replica at every evaluation time.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicaCoupling {
    /// Squared deviation averaged over particles, per evaluation time.
    pub pooled: Vec<f64>,
    /// Squared deviation of particle 0, per evaluation time.
    pub first: Vec<f64>,
    /// Particle 0 of RBM-r at pseudo-time `(N/p)t`, `times × d`.
    pub first_rbmr: Vec<f64>,
    /// Particle 0 of IPS at time `t`, `times × d`.
    pub first_ips: Vec<f64>,
}

/// All coupled replicas at one step size.
#[derive(Debug, Clone, PartialEq)]
pub struct KappaSweep {
    pub kappa: f64,
    pub times: Vec<f64>,
    pub replicas: Vec<ReplicaCoupling>,
    pub wall_seconds: f64,
}

/// Runs `M` coupled RBM-r/IPS replicas for every κ of the configuration.
pub fn coupled_sweep(cfg: &ExperimentConfig) -> Result<Vec<KappaSweep>> {
    cfg.validate()?;
    cfg.require_replicas()?;
    let model = cfg.build_model()?;
    let times = cfg.eval_times();
    let s = &cfg.system;
    let d = s.dimension;
    cfg.experiment
        .kappas
        .iter()
        .enumerate()
        .map(|(ki, &kappa)| {
            let seed = kappa_seed(cfg, ki);
            let start = Instant::now();
            let replicas = (0..s.replicas as u64)
                .into_par_iter()
                .map(|r| {
                    let initial = initial_ensemble(cfg, r)?;
                    let run = run_coupled(
                        &model, &initial, s.batch, kappa, s.horizon, s.substeps, seed,
                    )?;
                    let sample = strong_error(&run, &times)?;
                    let mut out = ReplicaCoupling {
                        pooled: Vec::with_capacity(times.len()),
                        first: Vec::with_capacity(times.len()),
                        first_rbmr: Vec::with_capacity(times.len() * d),
                        first_ips: Vec::with_capacity(times.len() * d),
                    };
                    for (ti, &t) in times.iter().enumerate() {
                        let dev = &sample.deviations[ti];
                        out.pooled.push(MeanSe::from_slice(dev).mean);
                        out.first.push(dev[0]);
                        let (a, b) = run.aligned_particle(PhysicalTime(t), 0)?;
                        out.first_rbmr.extend_from_slice(a);
                        out.first_ips.extend_from_slice(b);
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(KappaSweep {
                kappa,
                times: times.clone(),
                replicas,
                wall_seconds: start.elapsed().as_secs_f64(),
            })
        })
        .collect()
}

/// Root-mean-square error with its delta-method standard error.
fn rms(values: &[f64]) -> (f64, f64) {
    let m = MeanSe::from_slice(values);
    let error = m.mean.max(0.0).sqrt();
    let se = if error > 0.0 {
        m.se / (2.0 * error)
    } else {
        0.0
    };
    (error, se)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeError {
    pub time: f64,
    pub error: f64,
    pub se: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KappaError {
    pub kappa: f64,
    /// `sup_t sqrt(E|X̃((N/p)t) − X(t)|²)` over the evaluation grid.
    pub error: f64,
    pub se: f64,
    pub sup_time: f64,
    pub per_time: Vec<TimeError>,
    pub wall_seconds: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum FitOutcome {
    Fitted(SlopeFit),
    /// The fit was refused; the string says why (e.g. `zero error`).
    Degenerate(String),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvergeResult {
    pub rows: Vec<KappaError>,
    pub fit: FitOutcome,
}

impl ConvergeResult {
    pub fn strictly_decreasing(&self) -> bool {
        self.rows.windows(2).all(|w| w[1].error < w[0].error)
    }
}

/// Pools squared deviations over particles and replicas and fits the log-log slope
/// of the sup-in-time error.
pub fn summarize_errors(sweeps: &[KappaSweep]) -> Result<ConvergeResult> {
    let rows: Vec<KappaError> = sweeps
        .iter()
        .map(|sw| {
            let per_time: Vec<TimeError> = sw
                .times
                .iter()
                .enumerate()
                .map(|(ti, &time)| {
                    let v: Vec<f64> = sw.replicas.iter().map(|r| r.pooled[ti]).collect();
                    let (error, se) = rms(&v);
                    TimeError { time, error, se }
                })
                .collect();
            let sup = per_time
                .iter()
                .fold(None::<&TimeError>, |best, p| match best {
                    Some(b) if b.error >= p.error => Some(b),
                    _ => Some(p),
                })
                .expect("at least one evaluation time");
            KappaError {
                kappa: sw.kappa,
                error: sup.error,
                se: sup.se,
                sup_time: sup.time,
                per_time: per_time.clone(),
                wall_seconds: sw.wall_seconds,
            }
        })
        .collect();
    let points: Vec<(f64, f64)> = rows.iter().map(|r| (r.kappa, r.error)).collect();
    let fit = match fit_slope(&points) {
        Ok(f) => FitOutcome::Fitted(f),
        Err(Error::DegenerateFit(why)) => FitOutcome::Degenerate(why),
        Err(e) => return Err(e),
    };
    Ok(ConvergeResult { rows, fit })
}

pub fn converge(cfg: &ExperimentConfig) -> Result<ConvergeResult> {
    if cfg.experiment.kappas.len() < 3 {
        return Err(Error::Config {
            field: "experiment.kappas".into(),
            reason: "converge needs at least three step sizes".into(),
        });
    }
    summarize_errors(&coupled_sweep(cfg)?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct W2Row {
    pub kappa: f64,
    pub time: f64,
    /// Empirical `W2` between the particle-0 samples of RBM-r and IPS.
    pub w2: f64,
    /// Coupled root-mean-square deviation of particle 0.
    pub coupled_error: f64,
    pub se: f64,
    /// `w2 ≤ coupled_error + 3·se`.
    pub dominated: bool,
}

/// Compares marginal `W2` with the coupled error at every κ and evaluation time.
/// One-dimensional samples use exact sorted matching; otherwise the sliced distance.
pub fn wasserstein_rows(
    sweeps: &[KappaSweep],
    d: usize,
    directions: usize,
    seed: u64,
) -> Result<Vec<W2Row>> {
    let mut rows = Vec::new();
    for sw in sweeps {
        for (ti, &time) in sw.times.iter().enumerate() {
            let take = |f: fn(&ReplicaCoupling) -> &Vec<f64>| -> Vec<f64> {
                sw.replicas
                    .iter()
                    .flat_map(|r| f(r)[ti * d..(ti + 1) * d].iter().copied())
                    .collect()
            };
            let a = EmpiricalMarginal::new(take(|r| &r.first_rbmr), d, "rbmr")?;
            let b = EmpiricalMarginal::new(take(|r| &r.first_ips), d, "ips")?;
            let w2 = if d == 1 {
                wasserstein2_1d(&a, &b)?
            } else {
                wasserstein2_sliced(&a, &b, directions, seed)?
            };
            let dev: Vec<f64> = sw.replicas.iter().map(|r| r.first[ti]).collect();
            let (coupled_error, se) = rms(&dev);
            rows.push(W2Row {
                kappa: sw.kappa,
                time,
                w2,
                coupled_error,
                se,
                dominated: w2 <= coupled_error + 3.0 * se,
            });
        }
    }
    Ok(rows)
}

pub fn wasserstein(cfg: &ExperimentConfig) -> Result<Vec<W2Row>> {
    let sweeps = coupled_sweep(cfg)?;
    wasserstein_rows(
        &sweeps,
        cfg.system.dimension,
        cfg.experiment.directions,
        cfg.seed,
    )
}

/// Snapshots of one scheme and replica at the physical evaluation times.
#[derive(Debug, Clone, PartialEq)]
pub struct SchemeTrajectory {
    pub scheme: Scheme,
    pub replica: u64,
    pub snapshots: Vec<ParticleEnsemble>,
}

fn scheme_index(scheme: Scheme) -> u64 {
    match scheme {
        Scheme::Ips => 0,
        Scheme::Rbm1 => 1,
        Scheme::Rbmr => 2,
    }
}

/// Runs `scheme` for `replicas` replicas and records at physical `times`. RBM-r is
/// recorded at pseudo-time `(N/p)t`; snapshot times are rewritten to physical time.
#[allow(clippy::too_many_arguments)]
pub fn scheme_trajectories(
    cfg: &ExperimentConfig,
    model: &ModelSpec,
    scheme: Scheme,
    kappa: f64,
    horizon: f64,
    replicas: usize,
    times: &[f64],
) -> Result<Vec<SchemeTrajectory>> {
    let s = &cfg.system;
    let config = StepConfig::new(kappa, s.substeps, horizon, scheme)?;
    let record: Vec<f64> = times
        .iter()
        .map(|&t| match scheme {
            Scheme::Rbmr => PhysicalTime(t).to_pseudo(s.particles, s.batch).0,
            _ => t,
        })
        .collect();
    let stream = scheme_index(scheme);
    (0..replicas as u64)
        .into_par_iter()
        .map(|r| {
            let initial = initial_ensemble(cfg, r)?;
            let mut batch_rng = rng::stream(cfg.seed, r, Purpose::Batches, stream);
            let mut noise = GaussianStream::new(rng::stream(cfg.seed, r, Purpose::Noise, stream));
            let mut snapshots = run_trajectory(
                model,
                &initial,
                &config,
                s.batch,
                &mut batch_rng,
                &mut noise,
                &record,
            )?;
            for (snap, &t) in snapshots.iter_mut().zip(times) {
                snap.time = t;
            }
            Ok(SchemeTrajectory {
                scheme,
                replica: r,
                snapshots,
            })
        })
        .collect()
}

/// Every configured scheme at the first κ, on the evaluation grid.
pub fn simulate(cfg: &ExperimentConfig) -> Result<Vec<SchemeTrajectory>> {
    cfg.validate()?;
    let model = cfg.build_model()?;
    let times = cfg.eval_times();
    let kappa = cfg.experiment.kappas[0];
    let mut out = Vec::new();
    for &scheme in &cfg.experiment.schemes {
        out.extend(scheme_trajectories(
            cfg,
            &model,
            scheme,
            kappa,
            cfg.system.horizon,
            cfg.system.replicas,
            &times,
        )?);
    }
    Ok(out)
}

/// Clock-law reports for `(N, p)` from the lemma section.
pub fn clock_law_rows(cfg: &ExperimentConfig, n: usize, p: usize) -> Result<Vec<ClockLawReport>> {
    let l = &cfg.lemmas;
    let seed = rng::derive_seed(cfg.seed, &[n as u64, p as u64]);
    let mut rows = lemma_lab::validate_geometric_clock(n, p, l.samples, seed)?;
    rows.extend(lemma_lab::validate_lln_variance(
        n, p, l.kappa, l.time, l.samples, seed,
    )?);
    rows.extend(lemma_lab::validate_binomial_counts(
        n,
        p,
        l.count_interval,
        l.samples,
        seed,
    )?);
    rows.push(lemma_lab::validate_clock_gap_integral(
        n,
        p,
        l.kappa,
        l.time,
        l.samples,
        seed,
        (0, 1),
    )?);
    Ok(rows)
}

/// Upper bound on `sup_t E|X_t|²` for a quadratic potential and a kernel bounded by
/// `a`: `max(E|X_0|², (σ²d + a²/λ)/λ)`.
pub fn moment_bound(cfg: &ExperimentConfig, model: &ModelSpec) -> f64 {
    let d = cfg.system.dimension as f64;
    let initial = d * (cfg.initial.mean.powi(2) + cfg.initial.std.powi(2));
    let lambda = model.lambda();
    let a = model.kernel_bound();
    let stationary = (model.sigma().powi(2) * d + a * a / lambda) / lambda;
    initial.max(stationary)
}

/// Sup-moment and final-half trend rows for one scheme's trajectories.
pub fn moment_rows(
    label: &str,
    trajectories: &[Vec<ParticleEnsemble>],
    bound: f64,
    n: usize,
    p: usize,
) -> Result<Vec<ClockLawReport>> {
    let series = moment_track(trajectories, 2)?;
    let worst = series
        .iter()
        .max_by(|a, b| (a.value - 3.0 * a.se).total_cmp(&(b.value - 3.0 * b.se)))
        .expect("non-empty series");
    let sup = ClockLawReport::new(
        &format!("moment_sup[{label}]"),
        n,
        p,
        worst.value,
        bound,
        worst.se,
        Comparison::UpperBoundWithin,
    );
    let snaps = trajectories[0].len();
    let half = snaps / 2;
    let ts: Vec<f64> = trajectories[0][half..].iter().map(|e| e.time).collect();
    let slopes: Vec<f64> = trajectories
        .iter()
        .map(|traj| {
            let ys: Vec<f64> = traj[half..]
                .iter()
                .map(|e| (0..e.len()).map(|i| e.squared_norm(i)).sum::<f64>() / e.len() as f64)
                .collect();
            linear_regression(&ts, &ys).0
        })
        .collect();
    let m = MeanSe::from_slice(&slopes);
    let trend = ClockLawReport::new(
        &format!("moment_trend[{label}]"),
        n,
        p,
        m.mean,
        0.0,
        m.se,
        Comparison::TwoSided,
    );
    Ok(vec![sup, trend])
}

/// Least squares of `y` on `(x, x²)` without intercept; returns the `x` coefficient.
fn linear_coefficient(xs: &[f64], ys: &[f64]) -> f64 {
    let (mut s11, mut s12, mut s22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (&x, &y) in xs.iter().zip(ys) {
        let x2 = x * x;
        s11 += x * x;
        s12 += x * x2;
        s22 += x2 * x2;
        b1 += x * y;
        b2 += x2 * y;
    }
    (s22 * b1 - s12 * b2) / (s11 * s22 - s12 * s12)
}

/// Per-replica mean squared displacement at lags `1..=max_lag` (in grid steps),
/// averaged over all start snapshots and particles.
fn lag_msd(traj: &[ParticleEnsemble], max_lag: usize) -> Vec<f64> {
    (1..=max_lag)
        .map(|m| {
            let starts = traj.len() - m;
            (0..starts)
                .map(|s| replica_displacement(&traj[s], &traj[s + m]))
                .sum::<f64>()
                / starts as f64
        })
        .collect()
}

/// Outcome of the regression `E|X(t+Δt) − X(t)|² ≈ α·Δt + β·Δt²`.
#[derive(Debug, Clone, PartialEq)]
pub struct HolderFit {
    /// Mean over replicas of the per-replica `α` fitted on lags `1..=L`.
    pub alpha: f64,
    /// Replica standard error of `alpha`.
    pub se_replica: f64,
    /// `|alpha − alpha fitted on lags 1..=L/2|`: sensitivity to the lag window.
    pub truncation: f64,
    /// `sqrt(se_replica² + truncation²)`.
    pub se: f64,
}

pub fn holder_fit(trajectories: &[Vec<ParticleEnsemble>], dt: f64, max_lag: usize) -> HolderFit {
    let lags: Vec<f64> = (1..=max_lag).map(|m| m as f64 * dt).collect();
    let half = max_lag / 2;
    let (full, short): (Vec<f64>, Vec<f64>) = trajectories
        .iter()
        .map(|traj| {
            let msd = lag_msd(traj, max_lag);
            (
                linear_coefficient(&lags, &msd),
                linear_coefficient(&lags[..half], &msd[..half]),
            )
        })
        .unzip();
    let m = MeanSe::from_slice(&full);
    let truncation = (m.mean - MeanSe::from_slice(&short).mean).abs();
    HolderFit {
        alpha: m.mean,
        se_replica: m.se,
        truncation,
        se: m.se.hypot(truncation),
    }
}

/// Hölder row: with noise, `α ≤ 3σ²d` (within 3 SE); without noise, `α = 0` at 3 SE.
pub fn holder_row(
    label: &str,
    fit: &HolderFit,
    sigma: f64,
    d: usize,
    n: usize,
    p: usize,
) -> ClockLawReport {
    let statistic = format!("holder_dt_coefficient[{label}]");
    if sigma > 0.0 {
        let bound = 3.0 * sigma * sigma * d as f64;
        ClockLawReport::new(
            &statistic,
            n,
            p,
            fit.alpha,
            bound,
            fit.se,
            Comparison::UpperBoundWithin,
        )
    } else {
        ClockLawReport::new(
            &statistic,
            n,
            p,
            fit.alpha,
            0.0,
            fit.se,
            Comparison::TwoSided,
        )
    }
}

/// Moment and Hölder rows for every configured scheme.
pub fn dynamics_rows(cfg: &ExperimentConfig) -> Result<Vec<ClockLawReport>> {
    let model = cfg.build_model()?;
    let l = &cfg.lemmas;
    let s = &cfg.system;
    let steps = grid_index(l.dynamics_horizon, l.dynamics_kappa)?;
    let times: Vec<f64> = (0..=steps).map(|k| k as f64 * l.dynamics_kappa).collect();
    let bound = moment_bound(cfg, &model);
    let mut rows = Vec::new();
    for &scheme in &cfg.experiment.schemes {
        let trajectories: Vec<Vec<ParticleEnsemble>> = scheme_trajectories(
            cfg,
            &model,
            scheme,
            l.dynamics_kappa,
            l.dynamics_horizon,
            l.dynamics_replicas,
            &times,
        )?
        .into_iter()
        .map(|t| t.snapshots)
        .collect();
        let label = scheme.as_str();
        rows.extend(moment_rows(
            label,
            &trajectories,
            bound,
            s.particles,
            s.batch,
        )?);
        let fit = holder_fit(&trajectories, l.dynamics_kappa, l.holder_max_lag);
        rows.push(holder_row(
            label,
            &fit,
            s.sigma,
            s.dimension,
            s.particles,
            s.batch,
        ));
    }
    Ok(rows)
}

/// Clock-law rows for the configured `(N, p)` and for `p = N`, then dynamics rows.
pub fn lemmas(cfg: &ExperimentConfig) -> Result<Vec<ClockLawReport>> {
    cfg.validate()?;
    let l = &cfg.lemmas;
    let mut rows = clock_law_rows(cfg, l.particles, l.batch)?;
    if l.batch != l.particles {
        rows.extend(clock_law_rows(cfg, l.particles, l.particles)?);
    }
    rows.extend(dynamics_rows(cfg)?);
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostRow {
    pub scheme: Scheme,
    pub n: usize,
    /// Wall-clock seconds per unit of physical time.
    pub seconds_per_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostFit {
    pub scheme: Scheme,
    /// Fitted exponent of `seconds_per_time ∝ N^exponent`.
    pub exponent: f64,
    pub r_squared: f64,
}

/// Seconds per physical time unit of one scheme: repeats a one-unit run until
/// `min_duration` has elapsed and divides by the repetition count.
fn time_scheme(
    model: &ModelSpec,
    initial: &ParticleEnsemble,
    scheme: Scheme,
    p: usize,
    kappa: f64,
    substeps: usize,
    min_duration: Duration,
) -> Result<f64> {
    let n = initial.len();
    let physical = grid_index(1.0, kappa)?;
    let intervals = match scheme {
        Scheme::Rbmr => n * physical / p,
        _ => physical,
    };
    let mut batch_rng = rng::stream(0, n as u64, Purpose::Batches, 0);
    let mut noise = GaussianStream::new(rng::stream(0, n as u64, Purpose::Noise, 0));
    let mut stepper = Stepper::new(model, kappa, substeps)?;
    let mut state = initial.clone();
    let start = Instant::now();
    let mut reps = 0usize;
    while reps == 0 || start.elapsed() < min_duration {
        state.clone_from(initial);
        for _ in 0..intervals {
            match scheme {
                Scheme::Ips => stepper.step_ips(&mut state, &mut noise)?,
                Scheme::Rbmr => {
                    let batch = sample_batch(n, p, &mut batch_rng)?;
                    stepper.step_rbmr(&mut state, &batch, &mut noise)?;
                }
                Scheme::Rbm1 => {
                    let partition = crate::dynamics::sample_partition(n, p, &mut batch_rng)?;
                    stepper.step_rbm1(&mut state, &partition, &mut noise)?;
                }
            }
        }
        reps += 1;
    }
    Ok(start.elapsed().as_secs_f64() / reps as f64)
}

/// Wall-clock cost per physical time unit of IPS and RBM-r across particle counts,
/// with fitted power-law exponents.
///
/// Each of `rounds` rounds times every `(scheme, N)` once; the minimum over rounds is
/// kept, so a slow phase of the machine does not bias one particle count.
pub fn cost_scaling(
    model: &ModelSpec,
    ns: &[usize],
    p: usize,
    kappa: f64,
    substeps: usize,
    min_duration: Duration,
    rounds: usize,
) -> Result<(Vec<CostRow>, Vec<CostFit>)> {
    let schemes = [Scheme::Ips, Scheme::Rbmr];
    let initials = ns
        .iter()
        .map(|&n| {
            let mut rng = rng::stream(1, n as u64, Purpose::Initial, 0);
            let positions = (0..n * model.dimension())
                .map(|_| StandardNormal.sample(&mut rng))
                .collect();
            ParticleEnsemble::new(positions, model.dimension(), 0)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut best = vec![f64::INFINITY; schemes.len() * ns.len()];
    for _ in 0..rounds.max(1) {
        for (si, &scheme) in schemes.iter().enumerate() {
            for (ni, initial) in initials.iter().enumerate() {
                let t = time_scheme(model, initial, scheme, p, kappa, substeps, min_duration)?;
                let slot = &mut best[si * ns.len() + ni];
                *slot = slot.min(t);
            }
        }
    }
    let mut rows = Vec::new();
    let mut fits = Vec::new();
    for (si, &scheme) in schemes.iter().enumerate() {
        let costs = &best[si * ns.len()..(si + 1) * ns.len()];
        for (&n, &cost) in ns.iter().zip(costs) {
            rows.push(CostRow {
                scheme,
                n,
                seconds_per_time: cost,
            });
        }
        let xs: Vec<f64> = ns.iter().map(|&n| (n as f64).ln()).collect();
        let ys: Vec<f64> = costs.iter().map(|c| c.ln()).collect();
        let (exponent, _, r_squared) = linear_regression(&xs, &ys);
        fits.push(CostFit {
            scheme,
            exponent,
            r_squared,
        });
    }
    Ok((rows, fits))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        let mut cfg = ExperimentConfig::default();
        cfg.system.particles = 4;
        cfg.system.replicas = 20;
        cfg.experiment.kappas = vec![0.5, 0.25, 0.125];
        cfg.lemmas.samples = 2000;
        cfg.lemmas.dynamics_horizon = 2.0;
        cfg.lemmas.dynamics_replicas = 10;
        cfg.lemmas.holder_max_lag = 4;
        cfg
    }

    #[test]
    fn linear_coefficient_recovers_quadratic() {
        let xs: Vec<f64> = (1..=6).map(|k| k as f64 * 0.1).collect();
        let ys: Vec<f64> = xs.iter().map(|x| 0.7 * x + 2.0 * x * x).collect();
        assert!((linear_coefficient(&xs, &ys) - 0.7).abs() < 1e-12);
    }

    #[test]
    fn moment_bound_example() {
        let mut cfg = ExperimentConfig::default();
        cfg.initial.std = 0.1;
        let model = cfg.build_model().unwrap();
        assert!((moment_bound(&cfg, &model) - 0.41).abs() < 1e-12);
    }

    #[test]
    fn sweep_is_reproducible_and_independent_of_threads() {
        let cfg = small();
        let one = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap();
        let three = rayon::ThreadPoolBuilder::new()
            .num_threads(3)
            .build()
            .unwrap();
        let a = one.install(|| summarize_errors(&coupled_sweep(&cfg).unwrap()).unwrap());
        let b = three.install(|| summarize_errors(&coupled_sweep(&cfg).unwrap()).unwrap());
        let strip = |r: &ConvergeResult| -> Vec<(f64, f64)> {
            r.rows.iter().map(|k| (k.error, k.se)).collect()
        };
        assert_eq!(strip(&a), strip(&b));
    }

    #[test]
    fn full_batch_is_degenerate() {
        let mut cfg = small();
        cfg.system.batch = 4;
        let r = converge(&cfg).unwrap();
        assert!(r.rows.iter().all(|k| k.error == 0.0));
        assert_eq!(r.fit, FitOutcome::Degenerate("zero error".into()));
        let w = wasserstein(&cfg).unwrap();
        assert!(w.iter().all(|row| row.w2 == 0.0 && row.dominated));
    }

    #[test]
    fn crn_changes_streams_not_shape() {
        let mut cfg = small();
        assert_ne!(kappa_seed(&cfg, 0), kappa_seed(&cfg, 1));
        cfg.crn = true;
        assert_eq!(kappa_seed(&cfg, 0), kappa_seed(&cfg, 1));
        assert_eq!(converge(&cfg).unwrap().rows.len(), 3);
    }

    #[test]
    fn lemmas_small_run() {
        let rows = lemmas(&small()).unwrap();
        let full: Vec<_> = rows.iter().filter(|r| r.p == r.n).collect();
        assert!(!full.is_empty());
        for r in full {
            assert!(r.pass, "{r:?}");
        }
        assert!(rows
            .iter()
            .any(|r| r.statistic == "holder_dt_coefficient[rbmr]"));
    }

    #[test]
    fn simulate_echoes_initial_state() {
        let mut cfg = small();
        cfg.experiment.eval_times = vec![0.0];
        let out = simulate(&cfg).unwrap();
        for traj in &out {
            let init = initial_ensemble(&cfg, traj.replica).unwrap();
            assert_eq!(traj.snapshots[0].positions(), init.positions());
        }
    }
}
