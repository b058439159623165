//! Wasserstein distances between empirical marginals, moment and displacement
//! statistics, and log-log slope fits.

use rand_distr::{Distribution, StandardNormal};

use crate::ensemble::ParticleEnsemble;
use crate::error::{param, Error, Result};
use crate::rng::{self, Purpose};

/// Neumaier-compensated running sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct CompensatedSum {
    sum: f64,
    comp: f64,
}

impl CompensatedSum {
    pub fn add(&mut self, v: f64) {
        let t = self.sum + v;
        if self.sum.abs() >= v.abs() {
            self.comp += (self.sum - t) + v;
        } else {
            self.comp += (v - t) + self.sum;
        }
        self.sum = t;
    }

    pub fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

impl FromIterator<f64> for CompensatedSum {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut s = Self::default();
        iter.into_iter().for_each(|v| s.add(v));
        s
    }
}

/// Sample mean and standard error of the mean.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeanSe {
    pub mean: f64,
    pub se: f64,
    pub count: usize,
}

impl MeanSe {
    pub fn from_slice(values: &[f64]) -> Self {
        let count = values.len();
        if count == 0 {
            return Self {
                mean: f64::NAN,
                se: f64::NAN,
                count,
            };
        }
        let mean = values.iter().copied().collect::<CompensatedSum>().value() / count as f64;
        let se = if count > 1 {
            let ss = values
                .iter()
                .map(|v| (v - mean) * (v - mean))
                .collect::<CompensatedSum>()
                .value();
            (ss / (count - 1) as f64 / count as f64).sqrt()
        } else {
            f64::NAN
        };
        Self { mean, se, count }
    }
}

/// Samples of one particle's position across replicas.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalMarginal {
    samples: Vec<f64>,
    d: usize,
    pub label: String,
}

impl EmpiricalMarginal {
    pub fn new(samples: Vec<f64>, d: usize, label: impl Into<String>) -> Result<Self> {
        if d == 0 || !samples.len().is_multiple_of(d) {
            return Err(param("samples", "length must be a positive multiple of d"));
        }
        if samples.len() / d < 2 {
            return Err(param("samples", "need at least two samples"));
        }
        if samples.iter().any(|v| !v.is_finite()) {
            return Err(param("samples", "all entries must be finite"));
        }
        Ok(Self {
            samples,
            d,
            label: label.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len() / self.d
    }
    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
    pub fn dimension(&self) -> usize {
        self.d
    }
    pub fn samples(&self) -> &[f64] {
        &self.samples
    }
}

fn sorted_w2_squared(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let s: CompensatedSum = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).collect();
    s.value() / a.len() as f64
}

/// Exact empirical `W2` in one dimension: matched order statistics.
pub fn wasserstein2_1d(a: &EmpiricalMarginal, b: &EmpiricalMarginal) -> Result<f64> {
    if a.d != 1 || b.d != 1 {
        return Err(param("d", "wasserstein2_1d needs one-dimensional samples"));
    }
    if a.len() != b.len() {
        return Err(param("samples", "sample counts differ"));
    }
    Ok(sorted_w2_squared(a.samples.clone(), b.samples.clone()).sqrt())
}

/// Sliced `W2`: root of the mean squared 1-D `W2` over random unit projections.
pub fn wasserstein2_sliced(
    a: &EmpiricalMarginal,
    b: &EmpiricalMarginal,
    directions: usize,
    seed: u64,
) -> Result<f64> {
    if a.d != b.d {
        return Err(param("d", "dimensions differ"));
    }
    if a.d < 2 {
        return Err(param(
            "d",
            "use wasserstein2_1d for one-dimensional samples",
        ));
    }
    if a.len() != b.len() {
        return Err(param("samples", "sample counts differ"));
    }
    if directions == 0 {
        return Err(param("directions", "must be positive"));
    }
    let d = a.d;
    let mut rng = rng::stream(seed, 0, Purpose::Directions, 0);
    let mut u = vec![0.0; d];
    let mut total = CompensatedSum::default();
    for _ in 0..directions {
        loop {
            u.iter_mut()
                .for_each(|v| *v = StandardNormal.sample(&mut rng));
            let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 1e-12 {
                u.iter_mut().for_each(|v| *v /= norm);
                break;
            }
        }
        let project = |s: &[f64]| -> Vec<f64> {
            s.chunks_exact(d)
                .map(|x| x.iter().zip(&u).map(|(p, q)| p * q).sum())
                .collect()
        };
        total.add(sorted_w2_squared(project(&a.samples), project(&b.samples)));
    }
    Ok((total.value() / directions as f64).sqrt())
}

/// Per-snapshot statistic with its Monte-Carlo standard error.
#[derive(Debug, Clone, PartialEq)]
pub struct SeriesPoint {
    pub time: f64,
    pub value: f64,
    pub se: f64,
}

/// `E|X^i|^q` per snapshot, averaged over particles and replicas.
///
/// `trajectories[r][s]` is snapshot `s` of replica `r`; all replicas share the
/// snapshot grid. The standard error treats replicas as the independent units.
pub fn moment_track(trajectories: &[Vec<ParticleEnsemble>], q: u32) -> Result<Vec<SeriesPoint>> {
    if q != 2 && q != 4 {
        return Err(param("q", "supported moments are 2 and 4"));
    }
    let snaps = check_grid(trajectories)?;
    Ok((0..snaps)
        .map(|s| {
            let per_replica: Vec<f64> = trajectories
                .iter()
                .map(|traj| {
                    let e = &traj[s];
                    let sum: CompensatedSum = (0..e.len())
                        .map(|i| e.squared_norm(i).powi(q as i32 / 2))
                        .collect();
                    sum.value() / e.len() as f64
                })
                .collect();
            let ms = MeanSe::from_slice(&per_replica);
            SeriesPoint {
                time: trajectories[0][s].time,
                value: ms.mean,
                se: ms.se,
            }
        })
        .collect())
}

fn check_grid(trajectories: &[Vec<ParticleEnsemble>]) -> Result<usize> {
    let first = trajectories
        .first()
        .ok_or_else(|| param("trajectories", "need at least one replica"))?;
    let snaps = first.len();
    if trajectories.iter().any(|t| t.len() != snaps) {
        return Err(Error::Contract(
            "replicas have different snapshot counts".into(),
        ));
    }
    Ok(snaps)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Displacement {
    pub dt: f64,
    pub msd: f64,
    pub se: f64,
}

/// Mean squared displacement `E|X(t₂) − X(t₁)|²` for each pair of snapshot indices,
/// pooled over particles, with replica-level standard errors.
pub fn holder_probe(
    trajectories: &[Vec<ParticleEnsemble>],
    pairs: &[(usize, usize)],
) -> Result<Vec<Displacement>> {
    let snaps = check_grid(trajectories)?;
    pairs
        .iter()
        .map(|&(s1, s2)| {
            if s1 >= snaps || s2 >= snaps {
                return Err(param("pairs", "snapshot index out of range"));
            }
            let per_replica: Vec<f64> = trajectories
                .iter()
                .map(|traj| replica_displacement(&traj[s1], &traj[s2]))
                .collect();
            let ms = MeanSe::from_slice(&per_replica);
            Ok(Displacement {
                dt: (trajectories[0][s2].time - trajectories[0][s1].time).abs(),
                msd: ms.mean,
                se: ms.se,
            })
        })
        .collect()
}

/// Squared displacement between two snapshots, averaged over particles.
pub fn replica_displacement(a: &ParticleEnsemble, b: &ParticleEnsemble) -> f64 {
    let s: CompensatedSum = a
        .positions()
        .iter()
        .zip(b.positions())
        .map(|(x, y)| (x - y) * (x - y))
        .collect();
    s.value() / a.len() as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub points: Vec<(f64, f64)>,
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

/// Least-squares fit of `log(error)` on `log(κ)`.
pub fn fit_slope(points: &[(f64, f64)]) -> Result<SlopeFit> {
    if points.len() < 3 {
        return Err(param("points", "need at least three points"));
    }
    if points.windows(2).any(|w| !(w[1].0 < w[0].0)) {
        return Err(param("points", "kappa must be strictly decreasing"));
    }
    if points.iter().any(|&(k, _)| !(k > 0.0)) {
        return Err(param("points", "kappa must be positive"));
    }
    if points.iter().all(|&(_, e)| e == 0.0) {
        return Err(Error::DegenerateFit("zero error".into()));
    }
    if let Some(&(k, e)) = points.iter().find(|&&(_, e)| !(e > 0.0)) {
        return Err(param(
            "points",
            format!("error at kappa = {k} is {e}; log undefined"),
        ));
    }
    let xs: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let (slope, intercept, r_squared) = linear_regression(&xs, &ys);
    Ok(SlopeFit {
        points: points.to_vec(),
        slope,
        intercept,
        r_squared,
    })
}

/// Ordinary least squares `y = a + b·x`; returns `(b, a, r²)`.
pub fn linear_regression(xs: &[f64], ys: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let syy: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let r2 = if syy == 0.0 { 1.0 } else { slope * sxy / syy };
    (slope, intercept, r2)
}
