//! Confining potentials, interaction kernels and the constants the convergence
//! analysis depends on.
//!
//! A [`ModelSpec`] bundles `∇V`, `K` and the declared constants (strong convexity
//! `λ`, Lipschitz constant `L` of `K`, sup-norm bound of `K`, diffusion `σ`).
//! Admissible models satisfy `λ > 2L` with a bounded kernel; [`audit_assumptions`]
//! checks the declared constants against sampled estimates.

use std::fmt;
use std::sync::Arc;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{param, Error, Result};
use crate::rng::{self, Purpose};

pub type VectorField = Arc<dyn Fn(&[f64], &mut [f64]) + Send + Sync>;

/// Gradient of the external potential.
#[derive(Clone)]
pub enum Potential {
    /// `V(x) = ½λ|x|²`, `∇V(x) = λx`.
    Quadratic {
        lambda: f64,
    },
    /// `V ≡ const`. Not strongly convex; test use only.
    Flat,
    Custom(VectorField),
}

impl Potential {
    #[inline]
    pub fn gradient(&self, x: &[f64], out: &mut [f64]) {
        match self {
            Potential::Quadratic { lambda } => {
                for (o, xi) in out.iter_mut().zip(x) {
                    *o = lambda * xi;
                }
            }
            Potential::Flat => out.fill(0.0),
            Potential::Custom(f) => f(x, out),
        }
    }
}

impl fmt::Debug for Potential {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Potential::Quadratic { lambda } => write!(f, "Quadratic {{ lambda: {lambda} }}"),
            Potential::Flat => f.write_str("Flat"),
            Potential::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Pairwise interaction kernel `K: R^d → R^d`, evaluated at `x^j − x^i`.
#[derive(Clone)]
pub enum Kernel {
    Zero,
    /// `K(x) = a·x / √(1 + |x|²)`; bound and Lipschitz constant are both `a`.
    Saturating {
        amplitude: f64,
    },
    /// `K(x) = x`. Unbounded, only for hand-checkable force examples.
    Linear,
    Custom(VectorField),
}

impl Kernel {
    /// Accumulates `K(diff)` into `acc`.
    #[inline]
    pub fn accumulate(&self, diff: &[f64], acc: &mut [f64]) {
        match self {
            Kernel::Zero => {}
            Kernel::Saturating { amplitude } => {
                let r2: f64 = diff.iter().map(|v| v * v).sum();
                let scale = amplitude / (1.0 + r2).sqrt();
                for (a, v) in acc.iter_mut().zip(diff) {
                    *a += scale * v;
                }
            }
            Kernel::Linear => {
                for (a, v) in acc.iter_mut().zip(diff) {
                    *a += v;
                }
            }
            Kernel::Custom(f) => {
                let mut tmp = vec![0.0; diff.len()];
                f(diff, &mut tmp);
                for (a, v) in acc.iter_mut().zip(&tmp) {
                    *a += v;
                }
            }
        }
    }

    pub fn eval(&self, x: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        self.accumulate(x, out);
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Kernel::Zero)
    }
}

impl fmt::Debug for Kernel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Kernel::Zero => f.write_str("Zero"),
            Kernel::Saturating { amplitude } => {
                write!(f, "Saturating {{ amplitude: {amplitude} }}")
            }
            Kernel::Linear => f.write_str("Linear"),
            Kernel::Custom(_) => f.write_str("Custom(..)"),
        }
    }
}

/// Named models selectable from configuration files.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BuiltinModel {
    QuadraticSaturating { lambda: f64, amplitude: f64 },
    QuadraticLinearTest { lambda: f64 },
}

impl BuiltinModel {
    pub fn from_name(name: &str, lambda: f64, amplitude: f64) -> Result<Self> {
        match name {
            "quadratic-saturating" => Ok(Self::QuadraticSaturating { lambda, amplitude }),
            "quadratic-linear-test" => Ok(Self::QuadraticLinearTest { lambda }),
            other => Err(param("model.name", format!("unknown model `{other}`"))),
        }
    }

    pub fn build(self, dimension: usize, sigma: f64) -> Result<ModelSpec> {
        match self {
            Self::QuadraticSaturating { lambda, amplitude } => {
                ModelSpec::quadratic_saturating(dimension, lambda, amplitude, sigma)
            }
            Self::QuadraticLinearTest { lambda } => {
                ModelSpec::quadratic_linear_test(dimension, lambda, sigma)
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ModelSpec {
    dimension: usize,
    potential: Potential,
    kernel: Kernel,
    lambda: f64,
    lipschitz_k: f64,
    kernel_bound: f64,
    sigma: f64,
    admissible: bool,
}

impl ModelSpec {
    /// Builds a model and enforces `λ > 2L`, `λ > 0`, a finite kernel bound and `σ ≥ 0`.
    pub fn new(
        dimension: usize,
        potential: Potential,
        kernel: Kernel,
        lambda: f64,
        lipschitz_k: f64,
        kernel_bound: f64,
        sigma: f64,
    ) -> Result<Self> {
        let model = Self::unchecked(
            dimension,
            potential,
            kernel,
            lambda,
            lipschitz_k,
            kernel_bound,
            sigma,
        )?;
        if !(lambda > 0.0) {
            return Err(Error::Assumption(format!(
                "strong convexity constant must be positive, got {lambda}"
            )));
        }
        if !kernel_bound.is_finite() {
            return Err(Error::Assumption(
                "interaction kernel must be bounded".into(),
            ));
        }
        if !(lambda > 2.0 * lipschitz_k) {
            return Err(Error::Assumption(format!(
                "need lambda > 2L, got lambda = {lambda}, L = {lipschitz_k}"
            )));
        }
        Ok(Self {
            admissible: true,
            ..model
        })
    }

    /// Builds a model without the convergence assumptions. Only structural checks
    /// (`d ≥ 1`, `σ ≥ 0`, nonnegative constants) are applied and the model is
    /// marked non-admissible.
    pub fn unchecked(
        dimension: usize,
        potential: Potential,
        kernel: Kernel,
        lambda: f64,
        lipschitz_k: f64,
        kernel_bound: f64,
        sigma: f64,
    ) -> Result<Self> {
        if dimension == 0 {
            return Err(param("dimension", "must be at least 1"));
        }
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(param(
                "sigma",
                format!("must be finite and >= 0, got {sigma}"),
            ));
        }
        if !(lipschitz_k >= 0.0) || !(kernel_bound >= 0.0) || lambda.is_nan() {
            return Err(param("constants", "L and the kernel bound must be >= 0"));
        }
        Ok(Self {
            dimension,
            potential,
            kernel,
            lambda,
            lipschitz_k,
            kernel_bound,
            sigma,
            admissible: false,
        })
    }

    /// `V = ½λ|x|²`, `K(x) = a·x/√(1+|x|²)`, with `‖K‖∞ = L = a`.
    pub fn quadratic_saturating(
        dimension: usize,
        lambda: f64,
        amplitude: f64,
        sigma: f64,
    ) -> Result<Self> {
        if !(amplitude >= 0.0) {
            return Err(param("amplitude", "must be >= 0"));
        }
        Self::new(
            dimension,
            Potential::Quadratic { lambda },
            Kernel::Saturating { amplitude },
            lambda,
            amplitude,
            amplitude,
            sigma,
        )
    }

    /// Same family as [`Self::quadratic_saturating`] but skips the `λ > 2a` check, so
    /// the audit can be exercised on models that violate it.
    pub fn quadratic_saturating_unchecked(
        dimension: usize,
        lambda: f64,
        amplitude: f64,
        sigma: f64,
    ) -> Result<Self> {
        Self::unchecked(
            dimension,
            Potential::Quadratic { lambda },
            Kernel::Saturating { amplitude },
            lambda,
            amplitude,
            amplitude,
            sigma,
        )
    }

    /// `V = ½λ|x|²`, `K(x) = x`. Violates boundedness of `K`.
    pub fn quadratic_linear_test(dimension: usize, lambda: f64, sigma: f64) -> Result<Self> {
        Self::unchecked(
            dimension,
            Potential::Quadratic { lambda },
            Kernel::Linear,
            lambda,
            1.0,
            f64::INFINITY,
            sigma,
        )
    }

    /// `V = ½λ|x|²` with no interaction.
    pub fn quadratic_free(dimension: usize, lambda: f64, sigma: f64) -> Result<Self> {
        Self::new(
            dimension,
            Potential::Quadratic { lambda },
            Kernel::Zero,
            lambda,
            0.0,
            0.0,
            sigma,
        )
    }

    /// Pure Brownian motion: flat potential, no interaction. Test use only.
    pub fn brownian(dimension: usize, sigma: f64) -> Result<Self> {
        Self::unchecked(
            dimension,
            Potential::Flat,
            Kernel::Zero,
            0.0,
            0.0,
            0.0,
            sigma,
        )
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }
    pub fn potential(&self) -> &Potential {
        &self.potential
    }
    pub fn kernel(&self) -> &Kernel {
        &self.kernel
    }
    pub fn lambda(&self) -> f64 {
        self.lambda
    }
    pub fn lipschitz_k(&self) -> f64 {
        self.lipschitz_k
    }
    pub fn kernel_bound(&self) -> f64 {
        self.kernel_bound
    }
    pub fn sigma(&self) -> f64 {
        self.sigma
    }

    /// Whether the model was built with the convergence assumptions enforced.
    pub fn is_admissible(&self) -> bool {
        self.admissible
    }

    pub fn has_bounded_kernel(&self) -> bool {
        self.kernel_bound.is_finite()
    }

    pub fn with_sigma(&self, sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0) || !sigma.is_finite() {
            return Err(param(
                "sigma",
                format!("must be finite and >= 0, got {sigma}"),
            ));
        }
        Ok(Self {
            sigma,
            ..self.clone()
        })
    }
}

/// Interaction force on particle `i` from the whole ensemble:
/// `(1/(N−1)) Σ_{j≠i} K(x^j − x^i)`, summed in ascending `j`.
///
/// `positions` is the flat `N × d` coordinate array.
pub fn pairwise_force(model: &ModelSpec, positions: &[f64], i: usize) -> Result<Vec<f64>> {
    let d = model.dimension();
    if !positions.len().is_multiple_of(d) {
        return Err(param(
            "positions",
            "length is not a multiple of the dimension",
        ));
    }
    let n = positions.len() / d;
    if n < 2 {
        return Err(param("N", "pairwise force needs at least two particles"));
    }
    if i >= n {
        return Err(param("i", format!("index {i} out of range for N = {n}")));
    }
    let mut acc = vec![0.0; d];
    let mut diff = vec![0.0; d];
    let xi = &positions[i * d..(i + 1) * d];
    for j in (0..n).filter(|&j| j != i) {
        let xj = &positions[j * d..(j + 1) * d];
        for ((df, a), b) in diff.iter_mut().zip(xj).zip(xi) {
            *df = a - b;
        }
        model.kernel().accumulate(&diff, &mut acc);
    }
    let denom = (n - 1) as f64;
    for a in acc.iter_mut() {
        *a /= denom;
    }
    Ok(acc)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuditReport {
    pub lambda_hat: f64,
    pub lipschitz_hat: f64,
    pub kernel_bound_hat: f64,
    /// Declared constants satisfy `λ > 2L`.
    pub declared_ok: bool,
    /// Estimates are consistent with the declared constants.
    pub consistent: bool,
    /// Estimated constants satisfy `λ̂ > 2L̂`.
    pub estimated_ok: bool,
    pub pass: bool,
}

const AUDIT_TOL: f64 = 1e-9;

/// Sampled audit of the model constants.
///
/// Half of the pairs are independent uniform points in the cube `[−radius, radius]^d`,
/// the other half are close pairs `(x, x + δu)` with `δ = 10⁻³·radius`, which probe the
/// local Lipschitz constant. `λ̂` is the minimum monotonicity ratio of `∇V`, `L̂` the
/// maximum difference quotient of `K`, `‖K‖̂∞` the largest sampled `|K(x)|`.
/// `pass` requires declared `λ > 2L`, estimates consistent with the declarations
/// (`λ̂ ≥ λ`, `L̂ ≤ L`, `‖K‖̂∞ ≤ ‖K‖∞`, relative tolerance 1e-9) and `λ̂ > 2L̂`.
pub fn audit_assumptions(
    model: &ModelSpec,
    sample_count: usize,
    radius: f64,
    seed: u64,
) -> Result<AuditReport> {
    if sample_count < 2 {
        return Err(param("sample_count", "need at least 2 samples"));
    }
    if !(radius > 0.0) {
        return Err(param("radius", "must be positive"));
    }
    let d = model.dimension();
    let mut rng = rng::stream(seed, 0, Purpose::Audit, 0);
    let mut x = vec![0.0; d];
    let mut y = vec![0.0; d];
    let (mut gx, mut gy, mut kx, mut ky) = (vec![0.0; d], vec![0.0; d], vec![0.0; d], vec![0.0; d]);

    let mut lambda_hat = f64::INFINITY;
    let mut lipschitz_hat = 0.0_f64;
    let mut bound_hat = 0.0_f64;
    let close = radius * 1e-3;

    let check = |what: &'static str, input: &[f64], out: &[f64]| -> Result<()> {
        if out.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite {
                what,
                input: input.to_vec(),
            })
        }
    };

    for s in 0..sample_count {
        for v in x.iter_mut() {
            *v = rng.random_range(-radius..radius);
        }
        if s % 2 == 0 {
            for v in y.iter_mut() {
                *v = rng.random_range(-radius..radius);
            }
        } else {
            let mut u: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = u
                .iter()
                .map(|v| v * v)
                .sum::<f64>()
                .sqrt()
                .max(f64::MIN_POSITIVE);
            u.iter_mut().for_each(|v| *v /= norm);
            for ((yv, xv), uv) in y.iter_mut().zip(&x).zip(&u) {
                *yv = xv + close * uv;
            }
        }
        model.potential().gradient(&x, &mut gx);
        check("grad V", &x, &gx)?;
        model.potential().gradient(&y, &mut gy);
        check("grad V", &y, &gy)?;
        model.kernel().eval(&x, &mut kx);
        check("K", &x, &kx)?;
        model.kernel().eval(&y, &mut ky);
        check("K", &y, &ky)?;

        let dist2: f64 = x.iter().zip(&y).map(|(a, b)| (a - b) * (a - b)).sum();
        if dist2 == 0.0 {
            continue;
        }
        let mono: f64 = x
            .iter()
            .zip(&y)
            .zip(gx.iter().zip(&gy))
            .map(|((a, b), (ga, gb))| (a - b) * (ga - gb))
            .sum();
        lambda_hat = lambda_hat.min(mono / dist2);
        let kdiff: f64 = kx.iter().zip(&ky).map(|(a, b)| (a - b) * (a - b)).sum();
        lipschitz_hat = lipschitz_hat.max((kdiff / dist2).sqrt());
        let nx = kx.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = ky.iter().map(|v| v * v).sum::<f64>().sqrt();
        bound_hat = bound_hat.max(nx).max(ny);
    }

    let tol = |v: f64| AUDIT_TOL * v.abs().max(1.0);
    let declared_ok = model.lambda() > 2.0 * model.lipschitz_k() && model.has_bounded_kernel();
    let consistent = lambda_hat >= model.lambda() - tol(model.lambda())
        && lipschitz_hat <= model.lipschitz_k() + tol(model.lipschitz_k())
        && bound_hat <= model.kernel_bound() + tol(model.kernel_bound());
    let estimated_ok = lambda_hat > 2.0 * lipschitz_hat;
    Ok(AuditReport {
        lambda_hat,
        lipschitz_hat,
        kernel_bound_hat: bound_hat,
        declared_ok,
        consistent,
        estimated_ok,
        pass: declared_ok && consistent && estimated_ok,
    })
}
