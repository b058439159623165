//! Coupled construction of RBM-r and IPS through selection clocks.
//!
//! Each particle `i` owns a ledger of Gaussian blocks indexed by `n = 0, 1, …`. IPS
//! consumes block `n` of particle `i` on its `n`-th interval; RBM-r consumes block `n`
//! of particle `i` on the interval where `i` is selected for the `(n+1)`-th time,
//! `τ_n^i`. The intermediate system IPS′ is never stored: it is the view of IPS
//! through the clock of one index, checked by [`time_change_check`].

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::dynamics::{batch_force, grid_index, BatchSchedule, NoiseSource, Stepper};
use crate::ensemble::ParticleEnsemble;
use crate::error::{param, Error, Result};
use crate::model::{pairwise_force, ModelSpec};
use crate::rng::{self, Purpose};

/// Time on the IPS clock.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PhysicalTime(pub f64);

/// Time on the RBM-r clock.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct PseudoTime(pub f64);

impl PhysicalTime {
    /// The RBM-r time `(N/p)·t` at which RBM-r is compared with IPS at `t`.
    pub fn to_pseudo(self, n: usize, p: usize) -> PseudoTime {
        PseudoTime(self.0 * n as f64 / p as f64)
    }
}

/// Per-particle selection counts and selection intervals `τ_n^i`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClockState {
    stopping: Vec<Vec<usize>>,
}

impl ClockState {
    pub fn n(&self) -> usize {
        self.stopping.len()
    }

    /// Total number of times particle `i` was selected.
    pub fn selection_count(&self, i: usize) -> usize {
        self.stopping[i].len()
    }

    pub fn selection_counts(&self) -> Vec<usize> {
        self.stopping.iter().map(Vec::len).collect()
    }

    /// `τ_n^i`: interval index of the `(n+1)`-th selection of particle `i`.
    pub fn tau(&self, i: usize, n: usize) -> Option<usize> {
        self.stopping[i].get(n).copied()
    }

    pub fn stopping_times(&self, i: usize) -> &[usize] {
        &self.stopping[i]
    }

    /// Number of selections of `i` in intervals `0..=k`.
    pub fn count_through(&self, i: usize, k: usize) -> usize {
        self.stopping[i].partition_point(|&t| t <= k)
    }

    /// `n^i` on interval `k`: the largest `n` with `τ_n^i ≤ k`, or `-1` if none.
    pub fn selection_index(&self, i: usize, k: usize) -> i64 {
        self.count_through(i, k) as i64 - 1
    }

    /// `τ_{n^i}^i` on interval `k`, with the convention `τ_{-1}^i = 0`.
    pub fn last_selection(&self, i: usize, k: usize) -> usize {
        match self.count_through(i, k) {
            0 => 0,
            c => self.stopping[i][c - 1],
        }
    }
}

/// Single pass over the schedule: interval `k` is appended to the clock of every
/// member of `C_k`.
pub fn build_clock(schedule: &BatchSchedule) -> ClockState {
    let mut stopping = vec![Vec::new(); schedule.n()];
    for (k, batch) in schedule.batches().iter().enumerate() {
        for &i in batch {
            stopping[i].push(k);
        }
    }
    ClockState { stopping }
}

/// Lazily generated Gaussian blocks keyed by `(particle, index)`.
#[derive(Debug, Clone)]
pub struct IncrementLedger {
    block_len: usize,
    streams: Vec<ChaCha8Rng>,
    blocks: Vec<Vec<f64>>,
}

impl IncrementLedger {
    /// One independent stream per particle, derived from `(seed, replica, particle)`.
    pub fn new(seed: u64, replica: u64, n: usize, block_len: usize) -> Self {
        let seeds = (0..n as u64)
            .map(|i| rng::derive_seed(seed, &[replica, Purpose::Increments as u64, i]))
            .collect();
        Self::from_seeds(seeds, block_len)
    }

    pub fn from_seeds(seeds: Vec<u64>, block_len: usize) -> Self {
        let n = seeds.len();
        Self {
            block_len,
            streams: seeds.into_iter().map(ChaCha8Rng::seed_from_u64).collect(),
            blocks: vec![Vec::new(); n],
        }
    }

    pub fn block_len(&self) -> usize {
        self.block_len
    }

    /// Number of blocks generated so far for `particle`.
    pub fn generated(&self, particle: usize) -> usize {
        self.blocks[particle]
            .len()
            .checked_div(self.block_len)
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.iter().all(Vec::is_empty)
    }

    fn ensure(&mut self, particle: usize, index: usize) {
        let need = (index + 1) * self.block_len;
        let (buf, rng) = (&mut self.blocks[particle], &mut self.streams[particle]);
        while buf.len() < need {
            buf.push(StandardNormal.sample(rng));
        }
    }

    pub fn block(&self, particle: usize, index: usize) -> Option<&[f64]> {
        let b = self.block_len;
        self.blocks[particle].get(index * b..(index + 1) * b)
    }

    fn block_or_generate(&mut self, particle: usize, index: usize) -> &[f64] {
        self.ensure(particle, index);
        let b = self.block_len;
        &self.blocks[particle][index * b..(index + 1) * b]
    }
}

/// Hands out each particle's blocks in order `0, 1, 2, …`.
pub struct LedgerCursor<'a> {
    ledger: &'a mut IncrementLedger,
    next: Vec<usize>,
}

impl<'a> LedgerCursor<'a> {
    pub fn new(ledger: &'a mut IncrementLedger) -> Self {
        let n = ledger.blocks.len();
        Self {
            ledger,
            next: vec![0; n],
        }
    }

    pub fn consumed(&self) -> &[usize] {
        &self.next
    }
}

impl NoiseSource for LedgerCursor<'_> {
    fn next_block(&mut self, particle: usize, out: &mut [f64]) {
        let idx = self.next[particle];
        out.copy_from_slice(self.ledger.block_or_generate(particle, idx));
        self.next[particle] += 1;
    }
}

/// Serves block `index` for every particle: the noise of IPS′ seen through one clock.
struct ClockedView<'a> {
    ledger: &'a IncrementLedger,
    index: usize,
}

impl NoiseSource for ClockedView<'_> {
    fn next_block(&mut self, particle: usize, out: &mut [f64]) {
        let block = self
            .ledger
            .block(particle, self.index)
            .expect("IPS materialized every block the clocks reach");
        out.copy_from_slice(block);
    }
}

/// RBM-r and IPS trajectories driven by one batch schedule and one increment ledger.
#[derive(Debug, Clone)]
pub struct CoupledRun {
    model: ModelSpec,
    n: usize,
    p: usize,
    d: usize,
    kappa: f64,
    substeps: usize,
    horizon: f64,
    replica: u64,
    initial: ParticleEnsemble,
    schedule: BatchSchedule,
    clock: ClockState,
    ledger: IncrementLedger,
    /// Row `k` holds RBM-r positions after `k` intervals.
    rbmr: Vec<f64>,
    /// Row `n` holds IPS positions after `n` intervals.
    ips: Vec<f64>,
    rbmr_consumed: Vec<usize>,
}

impl CoupledRun {
    /// Simulates RBM-r over `schedule`, then IPS far enough to cover every clock.
    pub fn simulate(
        model: &ModelSpec,
        initial: &ParticleEnsemble,
        kappa: f64,
        horizon: f64,
        substeps: usize,
        schedule: BatchSchedule,
        mut ledger: IncrementLedger,
    ) -> Result<Self> {
        if !model.is_admissible() {
            return Err(Error::Assumption(
                "coupled runs need a model satisfying lambda > 2L with bounded K".into(),
            ));
        }
        let n = initial.len();
        let d = initial.dimension();
        if schedule.n() != n {
            return Err(Error::Contract(
                "schedule and ensemble disagree on N".into(),
            ));
        }
        let mut stepper = Stepper::new(model, kappa, substeps)?;
        if ledger.block_len() != stepper.block_len() {
            return Err(Error::Contract(format!(
                "ledger block length {} != stepper block length {}",
                ledger.block_len(),
                stepper.block_len()
            )));
        }
        let p = schedule.p();
        let physical = grid_index(horizon, kappa).map_err(|_| {
            param(
                "kappa",
                format!("kappa = {kappa} does not divide T = {horizon}"),
            )
        })?;
        let clock = build_clock(&schedule);
        let stride = n * d;

        let mut state = initial.clone();
        state.intervals = 0;
        state.time = 0.0;
        let mut rbmr = Vec::with_capacity((schedule.len() + 1) * stride);
        rbmr.extend_from_slice(state.positions());
        let rbmr_consumed = {
            let mut cursor = LedgerCursor::new(&mut ledger);
            for batch in schedule.batches() {
                stepper.step_rbmr(&mut state, batch, &mut cursor)?;
                rbmr.extend_from_slice(state.positions());
            }
            cursor.consumed().to_vec()
        };

        let ips_intervals = clock
            .selection_counts()
            .into_iter()
            .max()
            .unwrap_or(0)
            .max(physical);
        let mut state = initial.clone();
        state.intervals = 0;
        state.time = 0.0;
        let mut ips = Vec::with_capacity((ips_intervals + 1) * stride);
        ips.extend_from_slice(state.positions());
        {
            let mut cursor = LedgerCursor::new(&mut ledger);
            for _ in 0..ips_intervals {
                stepper.step_ips(&mut state, &mut cursor)?;
                ips.extend_from_slice(state.positions());
            }
        }

        Ok(Self {
            model: model.clone(),
            n,
            p,
            d,
            kappa,
            substeps,
            horizon,
            replica: initial.replica,
            initial: initial.clone(),
            schedule,
            clock,
            ledger,
            rbmr,
            ips,
            rbmr_consumed,
        })
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn p(&self) -> usize {
        self.p
    }
    pub fn kappa(&self) -> f64 {
        self.kappa
    }
    pub fn horizon(&self) -> f64 {
        self.horizon
    }
    pub fn replica(&self) -> u64 {
        self.replica
    }
    pub fn clock(&self) -> &ClockState {
        &self.clock
    }
    pub fn schedule(&self) -> &BatchSchedule {
        &self.schedule
    }
    pub fn ledger(&self) -> &IncrementLedger {
        &self.ledger
    }

    /// Blocks of each particle consumed by RBM-r.
    pub fn rbmr_consumed(&self) -> &[usize] {
        &self.rbmr_consumed
    }

    pub fn rbmr_intervals(&self) -> usize {
        self.schedule.len()
    }

    pub fn ips_intervals(&self) -> usize {
        self.ips.len() / (self.n * self.d) - 1
    }

    /// RBM-r positions after `k` intervals.
    pub fn rbmr_row(&self, k: usize) -> Option<&[f64]> {
        let s = self.n * self.d;
        self.rbmr.get(k * s..(k + 1) * s)
    }

    /// IPS positions after `n` intervals.
    pub fn ips_row(&self, n: usize) -> Option<&[f64]> {
        let s = self.n * self.d;
        self.ips.get(n * s..(n + 1) * s)
    }

    pub fn rbmr_at(&self, t: PseudoTime) -> Result<&[f64]> {
        let k = grid_index(t.0, self.kappa)?;
        self.rbmr_row(k)
            .ok_or_else(|| param("time", format!("pseudo-time {} is past the RBM-r run", t.0)))
    }

    pub fn ips_at(&self, t: PhysicalTime) -> Result<&[f64]> {
        let k = grid_index(t.0, self.kappa)?;
        self.ips_row(k)
            .ok_or_else(|| param("time", format!("time {} is past the IPS run", t.0)))
    }

    /// Particle-1 coordinates of RBM-r at `(N/p)t` and of IPS at `t`.
    pub fn aligned_particle(&self, t: PhysicalTime, i: usize) -> Result<(&[f64], &[f64])> {
        let d = self.d;
        let a = self.rbmr_at(t.to_pseudo(self.n, self.p))?;
        let b = self.ips_at(t)?;
        Ok((&a[i * d..(i + 1) * d], &b[i * d..(i + 1) * d]))
    }
}

/// Runs the coupled pair from one seed: schedule of `(N/p)·T/κ` batches from the
/// `(seed, replica, batches)` stream, increments from per-particle streams.
pub fn run_coupled(
    model: &ModelSpec,
    initial: &ParticleEnsemble,
    p: usize,
    kappa: f64,
    horizon: f64,
    substeps: usize,
    seed: u64,
) -> Result<CoupledRun> {
    let n = initial.len();
    let physical = grid_index(horizon, kappa).map_err(|_| {
        param(
            "kappa",
            format!("kappa = {kappa} does not divide T = {horizon}"),
        )
    })?;
    if p < 2 || p > n {
        return Err(param(
            "p",
            format!("need 2 <= p <= N, got p = {p}, N = {n}"),
        ));
    }
    if !(n * physical).is_multiple_of(p) {
        return Err(param("p", "(N/p)·T/κ must be an integer"));
    }
    let intervals = n * physical / p;
    let mut batch_rng = rng::stream(seed, initial.replica, Purpose::Batches, 0);
    let schedule = BatchSchedule::sample(n, p, intervals, &mut batch_rng)?;
    let block_len = if model.sigma() > 0.0 {
        model.dimension() * substeps
    } else {
        0
    };
    let ledger = IncrementLedger::new(seed, initial.replica, n, block_len);
    CoupledRun::simulate(model, initial, kappa, horizon, substeps, schedule, ledger)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrongErrorSample {
    pub replica: u64,
    pub times: Vec<f64>,
    /// `deviations[t][i] = |X̃^i((N/p)t) − X^i(t)|²`.
    pub deviations: Vec<Vec<f64>>,
}

pub fn strong_error(run: &CoupledRun, eval_times: &[f64]) -> Result<StrongErrorSample> {
    let d = run.d;
    let mut deviations = Vec::with_capacity(eval_times.len());
    for &t in eval_times {
        if t > run.horizon * (1.0 + 1e-12) {
            return Err(param(
                "eval_times",
                format!("time {t} is past T = {}", run.horizon),
            ));
        }
        let phys = PhysicalTime(t);
        let a = run.rbmr_at(phys.to_pseudo(run.n, run.p))?;
        let b = run.ips_at(phys)?;
        deviations.push(
            a.chunks_exact(d)
                .zip(b.chunks_exact(d))
                .map(|(x, y)| x.iter().zip(y).map(|(u, v)| (u - v) * (u - v)).sum())
                .collect(),
        );
    }
    Ok(StrongErrorSample {
        replica: run.replica,
        times: eval_times.to_vec(),
        deviations,
    })
}

/// Replays IPS′ for index `i` up to pseudo-interval `τ_n^i` and compares every
/// particle with IPS after `n` intervals, bit for bit.
pub fn time_change_check(run: &CoupledRun, i: usize, n: usize) -> Result<bool> {
    if i >= run.n {
        return Err(param("i", "particle index out of range"));
    }
    let tau = run.clock.tau(i, n).ok_or_else(|| {
        param(
            "n",
            format!("particle {i} has fewer than {} selections", n + 1),
        )
    })?;
    let mut ok = true;
    replay_view(run, i, tau, |sel, positions| {
        if sel == n {
            ok = run.ips_row(n) == Some(positions);
        }
    })?;
    Ok(ok)
}

/// Checks the time-change identity for every `(i, n)` of the run with one replay per
/// index. Returns the number of pairs checked and the failing pairs.
pub fn time_change_check_all(run: &CoupledRun) -> Result<(usize, Vec<(usize, usize)>)> {
    let mut checked = 0;
    let mut failures = Vec::new();
    for i in 0..run.n {
        let Some(&last) = run.clock.stopping_times(i).last() else {
            continue;
        };
        replay_view(run, i, last, |sel, positions| {
            checked += 1;
            if run.ips_row(sel) != Some(positions) {
                failures.push((i, sel));
            }
        })?;
    }
    Ok((checked, failures))
}

/// Advances the IPS′ copy indexed by `i` through pseudo-intervals `0..=through`, calling
/// `visit(n, positions)` at each `τ_n^i` before the copy moves.
fn replay_view(
    run: &CoupledRun,
    i: usize,
    through: usize,
    mut visit: impl FnMut(usize, &[f64]),
) -> Result<()> {
    let mut state = run.initial.clone();
    let mut stepper = Stepper::new(&run.model, run.kappa, run.substeps)?;
    let mut selections = 0;
    for (k, batch) in run.schedule.batches().iter().enumerate().take(through + 1) {
        if batch.binary_search(&i).is_err() {
            continue;
        }
        visit(selections, state.positions());
        let mut view = ClockedView {
            ledger: &run.ledger,
            index: selections,
        };
        if k < through {
            stepper.step_ips(&mut state, &mut view)?;
        }
        selections += 1;
    }
    Ok(())
}

/// Batch force minus full force on particle `i`.
pub fn batch_fluctuation(
    model: &ModelSpec,
    positions: &[f64],
    batch: &[usize],
    i: usize,
) -> Result<Vec<f64>> {
    let b = batch_force(model, positions, batch, i)?;
    let f = pairwise_force(model, positions, i)?;
    Ok(b.iter().zip(&f).map(|(x, y)| x - y).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn schedule(n: usize, p: usize, b: &[&[usize]]) -> BatchSchedule {
        BatchSchedule::new(n, p, b.iter().map(|v| v.to_vec()).collect()).unwrap()
    }

    #[test]
    fn clock_hand_trace() {
        // 1-based {1,2},{1,3},{2,3}.
        let c = build_clock(&schedule(3, 2, &[&[0, 1], &[0, 2], &[1, 2]]));
        assert_eq!(c.stopping_times(0), &[0, 1]);
        assert_eq!(c.stopping_times(1), &[0, 2]);
        assert_eq!(c.stopping_times(2), &[1, 2]);
        assert_eq!(c.selection_index(2, 0), -1);
        assert_eq!(c.selection_index(2, 1), 0);
        assert_eq!(c.last_selection(2, 0), 0);
        assert_eq!(c.last_selection(1, 1), 0);
        assert_eq!(c.last_selection(1, 2), 2);
    }

    #[test]
    fn full_batch_clock_is_identity() {
        let c = build_clock(&schedule(3, 3, &[&[0usize, 1, 2][..]; 5]));
        for i in 0..3 {
            assert_eq!(c.stopping_times(i), &[0, 1, 2, 3, 4]);
        }
    }

    #[test]
    fn never_selected_particle() {
        let c = build_clock(&schedule(4, 2, &[&[0, 1], &[0, 2]]));
        assert!(c.stopping_times(3).is_empty());
        assert_eq!(c.selection_count(3), 0);
    }

    #[test]
    fn fluctuation_examples() {
        let m = ModelSpec::quadratic_linear_test(1, 1.0, 0.0).unwrap();
        assert_eq!(
            batch_fluctuation(&m, &[0.0, 1.0, 2.0], &[0, 1], 0).unwrap(),
            vec![-0.5]
        );
        assert_eq!(
            batch_fluctuation(&m, &[0.0, 1.0, 2.0], &[0, 1, 2], 0).unwrap(),
            vec![0.0]
        );
    }

    #[test]
    fn ledger_is_order_independent() {
        let mut a = IncrementLedger::new(3, 0, 3, 4);
        let mut b = IncrementLedger::new(3, 0, 3, 4);
        a.ensure(0, 2);
        a.ensure(2, 1);
        b.ensure(2, 3);
        b.ensure(0, 0);
        b.ensure(0, 2);
        assert_eq!(a.block(0, 2), b.block(0, 2));
        assert_eq!(a.block(2, 1), b.block(2, 1));
        assert_eq!(a.generated(0), 3);
    }

    #[test]
    fn pseudo_time_scaling() {
        assert_eq!(PhysicalTime(0.5).to_pseudo(16, 2), PseudoTime(4.0));
    }
}
