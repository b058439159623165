//! Property tests over random ensembles, schedules and seeds.

use proptest::prelude::*;
use rbmr_core::coupling::{time_change_check_all, CoupledRun};
use rbmr_core::dynamics::{batch_force, BatchSchedule};
use rbmr_core::metrics::{wasserstein2_1d, EmpiricalMarginal};
use rbmr_core::model::pairwise_force;
use rbmr_core::rng::{derive_seed, stream, Purpose};
use rbmr_core::{run_coupled, IncrementLedger, ModelSpec, ParticleEnsemble};

/// All `p`-subsets of `0..n` containing `i`, each sorted.
fn batches_containing(n: usize, p: usize, i: usize) -> Vec<Vec<usize>> {
    fn rec(start: usize, n: usize, left: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if left == 0 {
            out.push(cur.clone());
            return;
        }
        for j in start..n {
            if n - j < left {
                break;
            }
            cur.push(j);
            rec(j + 1, n, left - 1, cur, out);
            cur.pop();
        }
    }
    let mut all = Vec::new();
    rec(0, n, p, &mut Vec::new(), &mut all);
    all.retain(|b| b.contains(&i));
    all
}

fn binomial(n: usize, k: usize) -> usize {
    (0..k).fold(1, |acc, j| acc * (n - j) / (j + 1))
}

fn positions(n: usize, d: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-3.0f64..3.0, n * d)
}

fn model(d: usize) -> ModelSpec {
    ModelSpec::quadratic_saturating(d, 1.0, 0.4, 0.5).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn batch_force_is_unbiased(
        (n, p, d, xs) in (2usize..=8, 1usize..=2)
            .prop_flat_map(|(n, d)| (Just(n), 2..=n, Just(d), positions(n, d))),
        i in 0usize..8,
    ) {
        let i = i % n;
        let m = model(d);
        let batches = batches_containing(n, p, i);
        prop_assert_eq!(batches.len(), binomial(n - 1, p - 1));
        let mut mean = vec![0.0; d];
        for b in &batches {
            for (acc, v) in mean.iter_mut().zip(batch_force(&m, &xs, b, i).unwrap()) {
                *acc += v / batches.len() as f64;
            }
        }
        let full = pairwise_force(&m, &xs, i).unwrap();
        for (a, b) in mean.iter().zip(&full) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }

    #[test]
    fn total_force_vanishes_for_odd_kernels(n in 2usize..12, xs in positions(12, 2)) {
        let m = model(2);
        let xs = &xs[..n * 2];
        let mut total = [0.0f64; 2];
        for i in 0..n {
            let f = pairwise_force(&m, xs, i).unwrap();
            total[0] += f[0];
            total[1] += f[1];
        }
        prop_assert!(total[0].abs() < 1e-12 && total[1].abs() < 1e-12);
    }

    #[test]
    fn pairwise_force_matches_naive_sum(n in 2usize..10, xs in positions(10, 1), i in 0usize..10) {
        let (xs, i) = (&xs[..n], i % n);
        let m = model(1);
        let mut acc = 0.0;
        for j in 0..n {
            if j != i {
                let r = xs[j] - xs[i];
                acc += 0.4 / (1.0 + r * r).sqrt() * r;
            }
        }
        acc /= (n - 1) as f64;
        prop_assert_eq!(pairwise_force(&m, xs, i).unwrap()[0], acc);
        let everyone: Vec<usize> = (0..n).collect();
        prop_assert_eq!(batch_force(&m, xs, &everyone, i).unwrap()[0], acc);
    }

    #[test]
    fn time_change_identity_holds(seed in any::<u64>(), n in 3usize..7) {
        let m = model(1);
        let mut rng = stream(seed, 0, Purpose::Initial, 0);
        let xs: Vec<f64> = (0..n).map(|_| rand::Rng::random_range(&mut rng, -1.0..1.0)).collect();
        let initial = ParticleEnsemble::new(xs, 1, 0).unwrap();
        let run = run_coupled(&m, &initial, 2, 0.1, 1.0, 2, seed).unwrap();
        let (checked, failures) = time_change_check_all(&run).unwrap();
        prop_assert!(checked > 0);
        prop_assert!(failures.is_empty(), "{:?}", failures);
    }

    #[test]
    fn w2_is_a_metric(
        a in prop::collection::vec(-5.0f64..5.0, 16),
        b in prop::collection::vec(-5.0f64..5.0, 16),
        c in prop::collection::vec(-5.0f64..5.0, 16),
    ) {
        let m = |v: &Vec<f64>| EmpiricalMarginal::new(v.clone(), 1, "").unwrap();
        let (ma, mb, mc) = (m(&a), m(&b), m(&c));
        prop_assert_eq!(wasserstein2_1d(&ma, &ma).unwrap(), 0.0);
        prop_assert_eq!(wasserstein2_1d(&ma, &mb).unwrap(), wasserstein2_1d(&mb, &ma).unwrap());
        let ab = wasserstein2_1d(&ma, &mb).unwrap();
        let bc = wasserstein2_1d(&mb, &mc).unwrap();
        let ac = wasserstein2_1d(&ma, &mc).unwrap();
        prop_assert!(ac <= ab + bc + 1e-12);
        let mut rev = a.clone();
        rev.reverse();
        prop_assert_eq!(wasserstein2_1d(&m(&rev), &mb).unwrap(), ab);
    }
}

/// Relabels a coupled run: new particle `i` is old particle `perm[i]`, with that
/// particle's increments and batch memberships.
fn relabeled_run(run_seed: u64, n: usize, perm: &[usize], xs: &[f64]) -> (CoupledRun, CoupledRun) {
    let m = model(1);
    let (kappa, horizon, substeps, p) = (0.1, 1.0, 2, 2);
    let initial = ParticleEnsemble::new(xs.to_vec(), 1, 0).unwrap();
    let intervals = n * 10 / p;
    let mut batch_rng = stream(run_seed, 0, Purpose::Batches, 0);
    let schedule = BatchSchedule::sample(n, p, intervals, &mut batch_rng).unwrap();
    let seeds: Vec<u64> = (0..n as u64)
        .map(|i| derive_seed(run_seed, &[0, Purpose::Increments as u64, i]))
        .collect();
    let base = CoupledRun::simulate(
        &m,
        &initial,
        kappa,
        horizon,
        substeps,
        schedule.clone(),
        IncrementLedger::from_seeds(seeds.clone(), substeps),
    )
    .unwrap();
    let mut inverse = vec![0; n];
    for (new, &old) in perm.iter().enumerate() {
        inverse[old] = new;
    }
    let permuted = CoupledRun::simulate(
        &m,
        &initial.permuted(perm),
        kappa,
        horizon,
        substeps,
        schedule.relabeled(&inverse),
        IncrementLedger::from_seeds(perm.iter().map(|&o| seeds[o]).collect(), substeps),
    )
    .unwrap();
    (base, permuted)
}

#[test]
fn relabeling_permutes_trajectories_exactly_for_three_particles() {
    let perm = [2, 0, 1];
    let (a, b) = relabeled_run(11, 3, &perm, &[0.3, -0.7, 1.1]);
    for k in 0..=a.rbmr_intervals() {
        let (ra, rb) = (a.rbmr_row(k).unwrap(), b.rbmr_row(k).unwrap());
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(rb[new], ra[old], "rbmr interval {k}");
        }
    }
    for k in 0..=a.ips_intervals().min(b.ips_intervals()) {
        let (ra, rb) = (a.ips_row(k).unwrap(), b.ips_row(k).unwrap());
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(rb[new], ra[old], "ips interval {k}");
        }
    }
}

#[test]
fn relabeling_permutes_trajectories_for_six_particles() {
    let perm = [3, 5, 0, 1, 4, 2];
    let xs = [0.3, -0.7, 1.1, -1.4, 0.05, 0.9];
    let (a, b) = relabeled_run(5, 6, &perm, &xs);
    for k in 0..=a.rbmr_intervals() {
        let (ra, rb) = (a.rbmr_row(k).unwrap(), b.rbmr_row(k).unwrap());
        for (new, &old) in perm.iter().enumerate() {
            assert!((rb[new] - ra[old]).abs() <= 1e-12, "rbmr interval {k}");
        }
    }
}

#[test]
fn coupled_runs_are_reproducible() {
    let m = model(1);
    let initial = ParticleEnsemble::new(vec![0.1, 0.5, -0.2, 0.8], 1, 3).unwrap();
    let a = run_coupled(&m, &initial, 2, 0.05, 1.0, 2, 9).unwrap();
    let b = run_coupled(&m, &initial, 2, 0.05, 1.0, 2, 9).unwrap();
    for k in 0..=a.rbmr_intervals() {
        assert_eq!(a.rbmr_row(k), b.rbmr_row(k));
    }
}
