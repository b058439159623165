//! Time steppers for the full interacting particle system (IPS), the random batch
//! method without replacement (RBM-1) and with replacement (RBM-r).
//!
//! Each `κ`-interval is integrated with `substeps` Euler–Maruyama steps of size
//! `h = κ/substeps`:
//!
//! ```text
//! x ← x + h·(−∇V(x) + F(x)) + σ√h·ξ
//! ```
//!
//! where `F` is the full pairwise force (IPS) or the in-batch force (RBM). Gaussian
//! draws are requested per particle, one block of `d·substeps` values per advancing
//! particle and interval, in ascending particle order. Particles that do not move
//! consume no noise, and `σ = 0` consumes none at all.

use std::fmt;
use std::str::FromStr;

use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::ensemble::ParticleEnsemble;
use crate::error::{param, Error, Result};
use crate::model::ModelSpec;
use crate::rng::below;

const GRID_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    Ips,
    Rbm1,
    Rbmr,
}

impl Scheme {
    pub fn as_str(self) -> &'static str {
        match self {
            Scheme::Ips => "ips",
            Scheme::Rbm1 => "rbm1",
            Scheme::Rbmr => "rbmr",
        }
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Scheme {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ips" => Ok(Scheme::Ips),
            "rbm1" => Ok(Scheme::Rbm1),
            "rbmr" => Ok(Scheme::Rbmr),
            other => Err(param("scheme", format!("unknown scheme `{other}`"))),
        }
    }
}

/// Returns `time / kappa` when it is an integer up to a relative tolerance of 1e-12.
pub fn grid_index(time: f64, kappa: f64) -> Result<usize> {
    if !(kappa > 0.0) || !(time >= 0.0) || !time.is_finite() {
        return Err(Error::OffGrid { time, kappa });
    }
    let ratio = time / kappa;
    let k = ratio.round();
    if (ratio - k).abs() <= GRID_TOL * k.max(1.0) {
        Ok(k as usize)
    } else {
        Err(Error::OffGrid { time, kappa })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepConfig {
    pub kappa: f64,
    pub substeps: usize,
    pub horizon: f64,
    pub scheme: Scheme,
}

impl StepConfig {
    pub fn new(kappa: f64, substeps: usize, horizon: f64, scheme: Scheme) -> Result<Self> {
        if !(kappa > 0.0) || !kappa.is_finite() {
            return Err(param("kappa", "must be positive"));
        }
        if substeps == 0 {
            return Err(param("substeps", "must be at least 1"));
        }
        if !(horizon > 0.0) {
            return Err(param("horizon", "must be positive"));
        }
        grid_index(horizon, kappa).map_err(|_| {
            param(
                "kappa",
                format!("kappa = {kappa} does not divide T = {horizon}"),
            )
        })?;
        Ok(Self {
            kappa,
            substeps,
            horizon,
            scheme,
        })
    }

    /// Number of `κ`-intervals over the physical horizon `T`.
    pub fn physical_intervals(&self) -> usize {
        grid_index(self.horizon, self.kappa).expect("validated at construction")
    }

    /// Intervals the scheme runs for: `T/κ` for IPS and RBM-1, `(N/p)·T/κ` for RBM-r.
    pub fn scheme_intervals(&self, n: usize, p: usize) -> Result<usize> {
        check_batch(n, p)?;
        let base = self.physical_intervals();
        match self.scheme {
            Scheme::Ips => Ok(base),
            Scheme::Rbm1 => {
                if !n.is_multiple_of(p) {
                    return Err(param("p", format!("p = {p} must divide N = {n} for rbm1")));
                }
                Ok(base)
            }
            Scheme::Rbmr => {
                if !(n * base).is_multiple_of(p) {
                    return Err(param("p", "(N/p)·T/κ must be an integer"));
                }
                Ok(n * base / p)
            }
        }
    }
}

fn check_batch(n: usize, p: usize) -> Result<()> {
    if p < 2 {
        return Err(param(
            "p",
            format!("batch size must be at least 2, got {p}"),
        ));
    }
    if p > n {
        return Err(param("p", format!("batch size {p} exceeds N = {n}")));
    }
    Ok(())
}

/// Sequence of random batches `C_0, C_1, …` (0-based particle indices, each batch sorted).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchSchedule {
    n: usize,
    p: usize,
    batches: Vec<Vec<usize>>,
}

impl BatchSchedule {
    pub fn new(n: usize, p: usize, batches: Vec<Vec<usize>>) -> Result<Self> {
        check_batch(n, p)?;
        for (k, b) in batches.iter().enumerate() {
            if b.len() != p {
                return Err(Error::Contract(format!(
                    "batch {k} has size {} != p",
                    b.len()
                )));
            }
            if b.windows(2).any(|w| w[0] >= w[1]) || b.iter().any(|&i| i >= n) {
                return Err(Error::Contract(format!(
                    "batch {k} must hold distinct sorted indices below N"
                )));
            }
        }
        Ok(Self { n, p, batches })
    }

    /// Draws `count` i.i.d. uniform `p`-subsets.
    pub fn sample<R: RngCore + ?Sized>(
        n: usize,
        p: usize,
        count: usize,
        rng: &mut R,
    ) -> Result<Self> {
        check_batch(n, p)?;
        let batches = (0..count)
            .map(|_| sample_batch(n, p, rng))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { n, p, batches })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn batches(&self) -> &[Vec<usize>] {
        &self.batches
    }
    pub fn len(&self) -> usize {
        self.batches.len()
    }
    pub fn is_empty(&self) -> bool {
        self.batches.is_empty()
    }

    /// Relabels particles: index `i` becomes `inverse[i]`.
    pub fn relabeled(&self, inverse: &[usize]) -> Self {
        let batches = self
            .batches
            .iter()
            .map(|b| {
                let mut nb: Vec<usize> = b.iter().map(|&i| inverse[i]).collect();
                nb.sort_unstable();
                nb
            })
            .collect();
        Self {
            batches,
            ..self.clone()
        }
    }
}

/// Uniform `p`-subset of `0..n`, sorted ascending.
///
/// Partial Fisher–Yates over a virtual identity array: exactly `p` words are drawn
/// and only the displaced entries are stored, so the cost is `O(p²)` regardless of `n`.
pub fn sample_batch<R: RngCore + ?Sized>(n: usize, p: usize, rng: &mut R) -> Result<Vec<usize>> {
    check_batch(n, p)?;
    let mut displaced: Vec<(usize, usize)> = Vec::with_capacity(p);
    let lookup = |d: &[(usize, usize)], k: usize| {
        d.iter().find(|(slot, _)| *slot == k).map_or(k, |&(_, v)| v)
    };
    let mut out = Vec::with_capacity(p);
    for k in 0..p {
        let r = k + below(rng, n - k);
        let at_r = lookup(&displaced, r);
        let at_k = lookup(&displaced, k);
        match displaced.iter_mut().find(|(slot, _)| *slot == r) {
            Some(entry) => entry.1 = at_k,
            None => displaced.push((r, at_k)),
        }
        out.push(at_r);
    }
    out.sort_unstable();
    Ok(out)
}

/// Uniform random partition of `0..n` into `n/p` batches of size `p`: full
/// Fisher–Yates permutation, chunked. Each batch is sorted.
pub fn sample_partition<R: RngCore + ?Sized>(
    n: usize,
    p: usize,
    rng: &mut R,
) -> Result<Vec<Vec<usize>>> {
    check_batch(n, p)?;
    if !n.is_multiple_of(p) {
        return Err(param("p", format!("p = {p} must divide N = {n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    for k in (1..n).rev() {
        let r = below(rng, k + 1);
        perm.swap(k, r);
    }
    Ok(perm
        .chunks(p)
        .map(|c| {
            let mut b = c.to_vec();
            b.sort_unstable();
            b
        })
        .collect())
}

/// In-batch interaction force on particle `i`:
/// `(1/(p−1)) Σ_{j∈C, j≠i} K(x^j − x^i)`, ascending `j`.
pub fn batch_force(
    model: &ModelSpec,
    positions: &[f64],
    batch: &[usize],
    i: usize,
) -> Result<Vec<f64>> {
    let d = model.dimension();
    let n = positions.len() / d;
    if batch.len() < 2 {
        return Err(param("batch", "needs at least two members"));
    }
    if !batch.contains(&i) {
        return Err(Error::Contract(format!("particle {i} is not in the batch")));
    }
    if batch.iter().any(|&j| j >= n) {
        return Err(Error::Contract("batch index out of range".into()));
    }
    let mut sorted = batch.to_vec();
    sorted.sort_unstable();
    let mut acc = vec![0.0; d];
    let mut diff = vec![0.0; d];
    accumulate_force(model, positions, &sorted, i, &mut diff, &mut acc);
    Ok(acc)
}

#[inline]
fn accumulate_force(
    model: &ModelSpec,
    positions: &[f64],
    members: &[usize],
    i: usize,
    diff: &mut [f64],
    acc: &mut [f64],
) {
    let d = diff.len();
    acc.fill(0.0);
    let xi = &positions[i * d..(i + 1) * d];
    for &j in members {
        if j == i {
            continue;
        }
        let xj = &positions[j * d..(j + 1) * d];
        for c in 0..d {
            diff[c] = xj[c] - xi[c];
        }
        model.kernel().accumulate(diff, acc);
    }
    let denom = (members.len() - 1) as f64;
    for a in acc.iter_mut() {
        *a /= denom;
    }
}

/// Supplies Gaussian increments, one block of `d·substeps` standard normals per call.
pub trait NoiseSource {
    fn next_block(&mut self, particle: usize, out: &mut [f64]);
}

/// A single sequential stream; blocks are handed out in call order.
#[derive(Debug, Clone)]
pub struct GaussianStream<R> {
    rng: R,
    draws: u64,
}

impl<R: RngCore> GaussianStream<R> {
    pub fn new(rng: R) -> Self {
        Self { rng, draws: 0 }
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }
}

impl<R: RngCore> NoiseSource for GaussianStream<R> {
    fn next_block(&mut self, _particle: usize, out: &mut [f64]) {
        for v in out.iter_mut() {
            *v = StandardNormal.sample(&mut self.rng);
        }
        self.draws += out.len() as u64;
    }
}

/// Euler–Maruyama integrator over one `κ`-interval, with reusable scratch buffers.
pub struct Stepper<'m> {
    model: &'m ModelSpec,
    kappa: f64,
    substeps: usize,
    h: f64,
    noise_scale: f64,
    everyone: Vec<usize>,
    drift: Vec<f64>,
    noise: Vec<f64>,
    grad: Vec<f64>,
    diff: Vec<f64>,
    force: Vec<f64>,
    slot_of: Vec<usize>,
}

impl<'m> Stepper<'m> {
    pub fn new(model: &'m ModelSpec, kappa: f64, substeps: usize) -> Result<Self> {
        if !(kappa > 0.0) {
            return Err(param("kappa", "must be positive"));
        }
        if substeps == 0 {
            return Err(param("substeps", "must be at least 1"));
        }
        let h = kappa / substeps as f64;
        let d = model.dimension();
        Ok(Self {
            model,
            kappa,
            substeps,
            h,
            noise_scale: model.sigma() * h.sqrt(),
            everyone: Vec::new(),
            drift: Vec::new(),
            noise: Vec::new(),
            grad: vec![0.0; d],
            diff: vec![0.0; d],
            force: vec![0.0; d],
            slot_of: Vec::new(),
        })
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn substeps(&self) -> usize {
        self.substeps
    }

    /// Gaussian values consumed per advancing particle and interval.
    pub fn block_len(&self) -> usize {
        if self.model.sigma() > 0.0 {
            self.model.dimension() * self.substeps
        } else {
            0
        }
    }

    fn check_ensemble(&self, ens: &ParticleEnsemble) -> Result<()> {
        if ens.dimension() != self.model.dimension() {
            return Err(Error::Contract(format!(
                "ensemble dimension {} != model dimension {}",
                ens.dimension(),
                self.model.dimension()
            )));
        }
        Ok(())
    }

    /// Advances every particle under the full `(1/(N−1))`-weighted force.
    pub fn step_ips(
        &mut self,
        ens: &mut ParticleEnsemble,
        noise: &mut dyn NoiseSource,
    ) -> Result<()> {
        self.check_ensemble(ens)?;
        let n = ens.len();
        if self.everyone.len() != n {
            self.everyone = (0..n).collect();
        }
        let everyone = std::mem::take(&mut self.everyone);
        let res = self.advance(ens, &everyone, &[&everyone], noise);
        self.everyone = everyone;
        res
    }

    /// Advances only the members of `batch` under the in-batch force; everyone else is
    /// left untouched.
    pub fn step_rbmr(
        &mut self,
        ens: &mut ParticleEnsemble,
        batch: &[usize],
        noise: &mut dyn NoiseSource,
    ) -> Result<()> {
        self.check_ensemble(ens)?;
        let n = ens.len();
        if batch.len() < 2
            || batch.windows(2).any(|w| w[0] >= w[1])
            || batch.iter().any(|&i| i >= n)
        {
            return Err(Error::Contract(
                "batch must hold at least two distinct sorted indices below N".into(),
            ));
        }
        self.advance(ens, batch, &[batch], noise)
    }

    /// Advances every particle under the force of its own batch in `partition`.
    pub fn step_rbm1(
        &mut self,
        ens: &mut ParticleEnsemble,
        partition: &[Vec<usize>],
        noise: &mut dyn NoiseSource,
    ) -> Result<()> {
        self.check_ensemble(ens)?;
        let n = ens.len();
        let mut seen = vec![false; n];
        for b in partition {
            if b.len() < 2 || b.windows(2).any(|w| w[0] >= w[1]) {
                return Err(Error::Contract(
                    "partition blocks must be sorted, size >= 2".into(),
                ));
            }
            for &i in b {
                if i >= n || std::mem::replace(&mut seen[i], true) {
                    return Err(Error::Contract(
                        "partition is not a partition of 0..N".into(),
                    ));
                }
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Contract("partition does not cover 0..N".into()));
        }
        if self.everyone.len() != n {
            self.everyone = (0..n).collect();
        }
        let groups: Vec<&[usize]> = partition.iter().map(Vec::as_slice).collect();
        let everyone = std::mem::take(&mut self.everyone);
        let res = self.advance(ens, &everyone, &groups, noise);
        self.everyone = everyone;
        res
    }

    /// `movers` is the sorted union of `groups`; each mover interacts within its group.
    fn advance(
        &mut self,
        ens: &mut ParticleEnsemble,
        movers: &[usize],
        groups: &[&[usize]],
        noise: &mut dyn NoiseSource,
    ) -> Result<()> {
        let d = self.model.dimension();
        let n = ens.len();
        let m = movers.len();
        let block = self.block_len();

        self.noise.resize(m * block, 0.0);
        if block > 0 {
            for (slot, &i) in movers.iter().enumerate() {
                noise.next_block(i, &mut self.noise[slot * block..(slot + 1) * block]);
            }
        }
        self.drift.resize(m * d, 0.0);
        self.slot_of.resize(n, usize::MAX);
        for (slot, &i) in movers.iter().enumerate() {
            self.slot_of[i] = slot;
        }

        let model = self.model;
        for s in 0..self.substeps {
            let positions = ens.positions();
            for group in groups {
                for &i in group.iter() {
                    let slot = self.slot_of[i];
                    accumulate_force(model, positions, group, i, &mut self.diff, &mut self.force);
                    model
                        .potential()
                        .gradient(&positions[i * d..(i + 1) * d], &mut self.grad);
                    let out = &mut self.drift[slot * d..(slot + 1) * d];
                    for ((o, f), g) in out.iter_mut().zip(&self.force).zip(&self.grad) {
                        *o = f - g;
                    }
                }
            }
            let positions = ens.positions_mut();
            for (slot, &i) in movers.iter().enumerate() {
                let x = &mut positions[i * d..(i + 1) * d];
                let drift = &self.drift[slot * d..(slot + 1) * d];
                if block > 0 {
                    let xi = &self.noise[slot * block + s * d..slot * block + (s + 1) * d];
                    for c in 0..d {
                        x[c] = x[c] + self.h * drift[c] + self.noise_scale * xi[c];
                    }
                } else {
                    for c in 0..d {
                        x[c] += self.h * drift[c];
                    }
                }
            }
        }

        ens.intervals += 1;
        ens.time = ens.intervals as f64 * self.kappa;
        for &i in movers {
            if ens.particle(i).iter().any(|v| !v.is_finite()) {
                return Err(Error::BlowUp {
                    replica: ens.replica,
                    time: ens.time,
                    particle: i,
                });
            }
        }
        Ok(())
    }
}

/// Runs `scheme` from `initial` and returns snapshots at `record_times`.
///
/// Record times are on the scheme's own clock: physical for IPS and RBM-1, pseudo-time
/// in `[0, (N/p)·T]` for RBM-r. Batches are drawn from `batch_rng` (one `p`-subset per
/// RBM-r interval, one partition per RBM-1 interval; IPS draws nothing).
pub fn run_trajectory(
    model: &ModelSpec,
    initial: &ParticleEnsemble,
    config: &StepConfig,
    p: usize,
    batch_rng: &mut dyn RngCore,
    noise: &mut dyn NoiseSource,
    record_times: &[f64],
) -> Result<Vec<ParticleEnsemble>> {
    if !model.has_bounded_kernel() {
        return Err(Error::Assumption(
            "simulation requires a bounded interaction kernel".into(),
        ));
    }
    let n = initial.len();
    let total = config.scheme_intervals(n, p)?;
    let record_idx = record_times
        .iter()
        .map(|&t| {
            let k = grid_index(t, config.kappa)?;
            if k > total {
                return Err(param(
                    "record_times",
                    format!("time {t} is past the horizon"),
                ));
            }
            Ok(k)
        })
        .collect::<Result<Vec<_>>>()?;
    let last = record_idx.iter().copied().max().unwrap_or(0);

    let mut snapshots: Vec<Option<ParticleEnsemble>> = vec![None; record_idx.len()];
    let mut state = initial.clone();
    state.intervals = 0;
    state.time = 0.0;
    let mut stepper = Stepper::new(model, config.kappa, config.substeps)?;

    let capture = |state: &ParticleEnsemble, k: usize, snaps: &mut [Option<ParticleEnsemble>]| {
        for (slot, &ri) in record_idx.iter().enumerate() {
            if ri == k {
                snaps[slot] = Some(state.clone());
            }
        }
    };
    capture(&state, 0, &mut snapshots);
    for k in 1..=last {
        match config.scheme {
            Scheme::Ips => stepper.step_ips(&mut state, noise)?,
            Scheme::Rbmr => {
                let batch = sample_batch(n, p, batch_rng)?;
                stepper.step_rbmr(&mut state, &batch, noise)?;
            }
            Scheme::Rbm1 => {
                let partition = sample_partition(n, p, batch_rng)?;
                stepper.step_rbm1(&mut state, &partition, noise)?;
            }
        }
        capture(&state, k, &mut snapshots);
    }
    Ok(snapshots
        .into_iter()
        .map(|s| s.expect("every record index visited"))
        .collect())
}
