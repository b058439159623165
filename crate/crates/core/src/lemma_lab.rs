//! Monte-Carlo validators for the laws of the selection clocks.
//!
//! Only batch schedules are simulated here: no particle dynamics. Samples are drawn in
//! fixed-size chunks, each from its own derived stream, so results do not depend on
//! the number of worker threads.

use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::dynamics::{grid_index, sample_batch};
use crate::error::{param, Result};
use crate::metrics::CompensatedSum;
use crate::rng::{self, Purpose};

const CHUNK: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Comparison {
    /// `|empirical − analytic| ≤ 3·SE`.
    TwoSided,
    /// `empirical ≤ analytic`.
    UpperBound,
    /// `empirical ≤ analytic + 3·SE`.
    UpperBoundWithin,
    /// Chi-square goodness of fit; `empirical` holds the p-value, pass iff `> analytic`.
    PValue,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClockLawReport {
    pub statistic: String,
    pub n: usize,
    pub p: usize,
    pub empirical: f64,
    pub analytic: f64,
    pub se: f64,
    pub comparison: Comparison,
    pub pass: bool,
}

impl ClockLawReport {
    pub fn new(
        statistic: &str,
        n: usize,
        p: usize,
        empirical: f64,
        analytic: f64,
        se: f64,
        comparison: Comparison,
    ) -> Self {
        let pass = match comparison {
            Comparison::TwoSided => (empirical - analytic).abs() <= 3.0 * se,
            Comparison::UpperBound => empirical <= analytic,
            Comparison::UpperBoundWithin => empirical <= analytic + 3.0 * se,
            Comparison::PValue => empirical > analytic,
        };
        Self {
            statistic: statistic.to_string(),
            n,
            p,
            empirical,
            analytic,
            se,
            comparison,
            pass,
        }
    }
}

fn check(n: usize, p: usize) -> Result<()> {
    if p < 2 || p > n {
        return Err(param(
            "p",
            format!("need 2 <= p <= N, got p = {p}, N = {n}"),
        ));
    }
    Ok(())
}

/// Draws `samples` values, chunk by chunk, each chunk from its own stream.
fn chunked<F>(samples: usize, seed: u64, tag: u64, draw: F) -> Vec<f64>
where
    F: Fn(&mut rand_chacha::ChaCha8Rng) -> f64 + Sync,
{
    let chunks = samples.div_ceil(CHUNK);
    (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng::stream(seed, tag, Purpose::Lemma, c as u64);
            let len = CHUNK.min(samples - c * CHUNK);
            (0..len).map(|_| draw(&mut rng)).collect::<Vec<_>>()
        })
        .collect::<Vec<_>>()
        .concat()
}

#[derive(Debug, Clone, Copy)]
struct Moments {
    mean: f64,
    var: f64,
    se_mean: f64,
    se_var: f64,
}

fn moments(v: &[f64]) -> Moments {
    let n = v.len() as f64;
    let mean = v.iter().copied().collect::<CompensatedSum>().value() / n;
    let m2 = v
        .iter()
        .map(|x| (x - mean).powi(2))
        .collect::<CompensatedSum>()
        .value()
        / n;
    let m4 = v
        .iter()
        .map(|x| (x - mean).powi(4))
        .collect::<CompensatedSum>()
        .value()
        / n;
    let var = m2 * n / (n - 1.0);
    Moments {
        mean,
        var,
        se_mean: (var / n).sqrt(),
        se_var: ((m4 - m2 * m2).max(0.0) / n).sqrt(),
    }
}

/// Number of intervals from one selection of particle 0 (exclusive) to the next
/// (inclusive); the first gap is counted from interval `-1`.
fn gap<R: rand::RngCore>(n: usize, p: usize, rng: &mut R) -> f64 {
    let mut g = 0usize;
    loop {
        g += 1;
        if sample_batch(n, p, rng).expect("validated").contains(&0) {
            return g as f64;
        }
    }
}

/// Gaps between selections of one particle are geometric with success probability
/// `p/N`: mean `N/p`, variance `N²/p² − N/p`. Also a chi-square test against the pmf
/// on the bins whose expected count is at least 5, plus a tail bin.
pub fn validate_geometric_clock(
    n: usize,
    p: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<ClockLawReport>> {
    check(n, p)?;
    if samples < 2 {
        return Err(param("samples", "need at least two samples"));
    }
    let gaps = chunked(samples, seed, 1, |rng| gap(n, p, rng));
    let m = moments(&gaps);
    let ratio = n as f64 / p as f64;
    let mut out = vec![
        ClockLawReport::new(
            "gap_mean",
            n,
            p,
            m.mean,
            ratio,
            m.se_mean,
            Comparison::TwoSided,
        ),
        ClockLawReport::new(
            "gap_variance",
            n,
            p,
            m.var,
            ratio * ratio - ratio,
            m.se_var,
            Comparison::TwoSided,
        ),
    ];
    let pval = geometric_chi_square(&gaps, p as f64 / n as f64);
    out.push(ClockLawReport::new(
        "gap_chi_square_pvalue",
        n,
        p,
        pval,
        1e-3,
        0.0,
        Comparison::PValue,
    ));
    Ok(out)
}

/// P-value of the chi-square goodness-of-fit test of `gaps` against Geometric(`q`)
/// on `{1, 2, …}`. Returns 1 when only one bin is possible (`q = 1`).
pub fn geometric_chi_square(gaps: &[f64], q: f64) -> f64 {
    let total = gaps.len() as f64;
    let mut expected = Vec::new();
    let mut mass = q;
    let mut tail = 1.0;
    while total * mass >= 5.0 && tail - mass > 0.0 {
        expected.push(total * mass);
        tail -= mass;
        mass *= 1.0 - q;
    }
    if tail * total < 5.0 || expected.is_empty() {
        // Fold the remainder into the last bin.
        if let Some(last) = expected.last_mut() {
            *last += tail * total;
        }
        tail = 0.0;
    }
    let bins = expected.len();
    if bins + usize::from(tail > 0.0) < 2 {
        return 1.0;
    }
    let mut observed = vec![0.0; bins + 1];
    for &g in gaps {
        let j = g as usize;
        let slot = if j <= bins {
            j - 1
        } else if tail > 0.0 {
            bins
        } else {
            bins - 1
        };
        observed[slot] += 1.0;
    }
    if tail > 0.0 {
        expected.push(tail * total);
    } else {
        observed.pop();
    }
    let chi2: f64 = observed
        .iter()
        .zip(&expected)
        .map(|(o, e)| (o - e) * (o - e) / e)
        .sum();
    let df = (expected.len() - 1) as f64;
    1.0 - ChiSquared::new(df).expect("df >= 1").cdf(chi2)
}

/// Interval index of the `(n_t+1)`-th selection of particle 0.
fn tau_at<R: rand::RngCore>(n: usize, p: usize, n_t: usize, rng: &mut R) -> usize {
    let mut seen = 0;
    let mut k = 0;
    loop {
        if sample_batch(n, p, rng).expect("validated").contains(&0) {
            if seen == n_t {
                return k;
            }
            seen += 1;
        }
        k += 1;
    }
}

/// Law of large numbers for the clock at `n_t = t/κ`.
///
/// Reports three rows:
/// * `lln_second_moment`: `E|κτ_{n_t} − (N/p)t|²` against `(N²/p² − N/p)κ²(t/κ + 1)`;
/// * `lln_second_moment_exact`: the same estimate against the exact value
///   `κ²[(t/κ + 1)(N²/p² − N/p) + (N/p − 1)²]`, which includes the squared offset of
///   `E[κτ_{n_t}] = (N/p)(t + κ) − κ` from `(N/p)t`;
/// * `lln_variance`: `Var(κτ_{n_t})` against `(N²/p² − N/p)κ²(t/κ + 1)`.
pub fn validate_lln_variance(
    n: usize,
    p: usize,
    kappa: f64,
    t: f64,
    samples: usize,
    seed: u64,
) -> Result<Vec<ClockLawReport>> {
    check(n, p)?;
    if samples < 2 {
        return Err(param("samples", "need at least two samples"));
    }
    let n_t = grid_index(t, kappa)
        .map_err(|_| param("kappa", format!("kappa = {kappa} does not divide t = {t}")))?;
    let ratio = n as f64 / p as f64;
    let target = ratio * n_t as f64;
    let taus = chunked(samples, seed, 2, |rng| tau_at(n, p, n_t, rng) as f64);
    let sq: Vec<f64> = taus
        .iter()
        .map(|&tau| kappa * kappa * (tau - target).powi(2))
        .collect();
    let m_sq = moments(&sq);
    let scaled: Vec<f64> = taus.iter().map(|&tau| kappa * tau).collect();
    let m_tau = moments(&scaled);

    let var_gap = ratio * ratio - ratio;
    let formula = var_gap * kappa * kappa * (n_t as f64 + 1.0);
    let exact = kappa * kappa * ((n_t as f64 + 1.0) * var_gap + (ratio - 1.0).powi(2));
    Ok(vec![
        ClockLawReport::new(
            "lln_second_moment",
            n,
            p,
            m_sq.mean,
            formula,
            m_sq.se_mean,
            Comparison::TwoSided,
        ),
        ClockLawReport::new(
            "lln_second_moment_exact",
            n,
            p,
            m_sq.mean,
            exact,
            m_sq.se_mean,
            Comparison::TwoSided,
        ),
        ClockLawReport::new(
            "lln_variance",
            n,
            p,
            m_tau.var,
            formula,
            m_tau.se_var,
            Comparison::TwoSided,
        ),
    ])
}

/// Selections of particle 0 in intervals `0..=k` are Binomial(`k+1`, `p/N`).
pub fn validate_binomial_counts(
    n: usize,
    p: usize,
    k: usize,
    samples: usize,
    seed: u64,
) -> Result<Vec<ClockLawReport>> {
    check(n, p)?;
    if samples < 2 {
        return Err(param("samples", "need at least two samples"));
    }
    let counts = chunked(samples, seed, 3, |rng| {
        (0..=k)
            .filter(|_| sample_batch(n, p, rng).expect("validated").contains(&0))
            .count() as f64
    });
    let m = moments(&counts);
    let q = p as f64 / n as f64;
    let trials = (k + 1) as f64;
    Ok(vec![
        ClockLawReport::new(
            "count_mean",
            n,
            p,
            m.mean,
            trials * q,
            m.se_mean,
            Comparison::TwoSided,
        ),
        ClockLawReport::new(
            "count_variance",
            n,
            p,
            m.var,
            trials * q * (1.0 - q),
            m.se_var,
            Comparison::TwoSided,
        ),
    ])
}

/// `∫₀^{(N/p)t} E|τ^i_{n^i(s)} − τ^j_{n^j(s)}|² ds` against `6(N/p)³ t (1 + 2t/κ)`.
///
/// The integrand is constant on each pseudo-interval `[kκ, (k+1)κ)`, so the integral is
/// the exact sum `κ Σ_k |…|²`. `τ_{-1} = 0` when a particle has not been selected yet.
pub fn validate_clock_gap_integral(
    n: usize,
    p: usize,
    kappa: f64,
    t: f64,
    samples: usize,
    seed: u64,
    (i, j): (usize, usize),
) -> Result<ClockLawReport> {
    check(n, p)?;
    if i >= n || j >= n {
        return Err(param("i", "particle index out of range"));
    }
    let n_t = grid_index(t, kappa)
        .map_err(|_| param("kappa", format!("kappa = {kappa} does not divide t = {t}")))?;
    if !(n * n_t).is_multiple_of(p) {
        return Err(param("p", "(N/p)·t/κ must be an integer"));
    }
    let intervals = n * n_t / p;
    let values = chunked(samples.max(2), seed, 4, |rng| {
        let (mut last_i, mut last_j) = (0usize, 0usize);
        let mut acc = 0.0;
        for k in 0..intervals {
            let b = sample_batch(n, p, rng).expect("validated");
            if b.contains(&i) {
                last_i = k;
            }
            if b.contains(&j) {
                last_j = k;
            }
            let d = last_i as f64 - last_j as f64;
            acc += d * d;
        }
        kappa * acc
    });
    let m = moments(&values);
    let ratio = n as f64 / p as f64;
    let bound = 6.0 * ratio.powi(3) * t * (1.0 + 2.0 * t / kappa);
    Ok(ClockLawReport::new(
        "gap_integral",
        n,
        p,
        m.mean,
        bound,
        m.se_mean,
        Comparison::UpperBound,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn geometric_examples() {
        for (n, p) in [(4, 2), (10, 2)] {
            let r = validate_geometric_clock(n, p, 100_000, 7).unwrap();
            assert!(r.iter().all(|x| x.pass), "{r:?}");
        }
        let r = validate_geometric_clock(4, 2, 10_000, 1).unwrap();
        assert_eq!(r[0].analytic, 2.0);
        assert_eq!(r[1].analytic, 2.0);
        let r = validate_geometric_clock(10, 2, 10_000, 1).unwrap();
        assert_eq!(r[0].analytic, 5.0);
        assert_eq!(r[1].analytic, 20.0);
    }

    #[test]
    fn geometric_full_batch_is_exact() {
        let r = validate_geometric_clock(5, 5, 10_000, 1).unwrap();
        assert_eq!(r[0].empirical, 1.0);
        assert_eq!(r[1].empirical, 0.0);
        assert_eq!(r[1].se, 0.0);
        assert!(r.iter().all(|x| x.pass));
    }

    #[test]
    fn lln_analytic_values() {
        let r = validate_lln_variance(4, 2, 0.1, 1.0, 1000, 1).unwrap();
        assert!((r[0].analytic - 0.22).abs() < 1e-12);
        assert!((r[1].analytic - 0.23).abs() < 1e-12);
        let r = validate_lln_variance(6, 3, 0.05, 0.5, 1000, 1).unwrap();
        assert!((r[0].analytic - 0.055).abs() < 1e-12);
        assert!(validate_lln_variance(4, 2, 0.3, 1.0, 1000, 1).is_err());
    }

    #[test]
    fn lln_exact_rows_pass() {
        let r = validate_lln_variance(4, 2, 0.1, 1.0, 100_000, 3).unwrap();
        assert!(r[1].pass, "{:?}", r[1]);
        assert!(r[2].pass, "{:?}", r[2]);
    }

    #[test]
    fn lln_full_batch_is_zero() {
        let r = validate_lln_variance(3, 3, 0.1, 1.0, 1000, 1).unwrap();
        for row in &r {
            assert_eq!(row.empirical, 0.0);
            assert_eq!(row.analytic, 0.0);
            assert!(row.pass);
        }
    }

    #[test]
    fn binomial_examples() {
        let r = validate_binomial_counts(4, 2, 9, 100_000, 5).unwrap();
        assert_eq!(r[0].analytic, 5.0);
        assert_eq!(r[1].analytic, 2.5);
        assert!(r.iter().all(|x| x.pass), "{r:?}");
        let r = validate_binomial_counts(10, 2, 49, 20_000, 5).unwrap();
        assert_eq!(r[0].analytic, 10.0);
        assert!((r[1].analytic - 8.0).abs() < 1e-12);
        let r = validate_binomial_counts(4, 4, 9, 1000, 5).unwrap();
        assert_eq!((r[0].empirical, r[1].empirical), (10.0, 0.0));
        assert!(r.iter().all(|x| x.pass));
    }

    #[test]
    fn gap_integral_examples() {
        let r = validate_clock_gap_integral(4, 2, 0.1, 1.0, 20_000, 1, (0, 1)).unwrap();
        assert_eq!(r.analytic, 1008.0);
        assert!(r.pass);
        let r = validate_clock_gap_integral(4, 4, 0.1, 1.0, 100, 1, (0, 1)).unwrap();
        assert_eq!(r.empirical, 0.0);
        let r = validate_clock_gap_integral(4, 2, 0.1, 1.0, 100, 1, (2, 2)).unwrap();
        assert_eq!(r.empirical, 0.0);
    }

    #[test]
    fn chunking_is_deterministic() {
        let a = validate_binomial_counts(8, 2, 5, 25_000, 9).unwrap();
        let b = validate_binomial_counts(8, 2, 5, 25_000, 9).unwrap();
        assert_eq!(a, b);
    }
}
