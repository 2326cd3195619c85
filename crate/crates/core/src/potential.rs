//! Target potentials `V` for densities `p ∝ exp(-V)`.
//!
//! A potential exposes its value, per-coordinate partial derivatives and the
//! convexity constants `alpha ⪯ ∇²V ⪯ lip` together with a bound on the pure
//! third derivatives `|∂³V/∂x_i³|`. Potentials whose coordinate couplings are
//! purely quadratic additionally expose the mean-field conditional gradient
//! in closed form, which only depends on the coordinate means of the other
//! marginals.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `sup_t |d³/dt³ log cosh(t)| = 4 / (3√3)`, rounded up.
pub const LOGCOSH_THIRD_SUP: f64 = 0.7699;

/// Shared, immutable handle to a potential.
pub type SharedPotential = Arc<dyn Potential>;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Constants {
    /// Strong-convexity constant.
    pub alpha: f64,
    /// Smoothness constant.
    pub lip: f64,
    /// Bound on `|∂³V/∂x_i³|`.
    pub third_bound: f64,
}

impl Constants {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha > 0.0) {
            return Err(Error::Config(format!("alpha must be positive, got {}", self.alpha)));
        }
        if !(self.lip.is_finite() && self.lip >= self.alpha) {
            return Err(Error::Config(format!(
                "lip must satisfy alpha <= lip, got alpha = {}, lip = {}",
                self.alpha, self.lip
            )));
        }
        if !(self.third_bound.is_finite() && self.third_bound >= 0.0) {
            return Err(Error::Config(format!(
                "third_bound must be nonnegative, got {}",
                self.third_bound
            )));
        }
        Ok(())
    }
}

pub trait Potential: Send + Sync + fmt::Debug {
    fn dim(&self) -> usize;

    fn value(&self, x: &[f64]) -> f64;

    /// `∂_i V(x)`.
    fn partial(&self, i: usize, x: &[f64]) -> f64;

    fn gradient(&self, x: &[f64], out: &mut [f64]) {
        for (i, g) in out.iter_mut().enumerate() {
            *g = self.partial(i, x);
        }
    }

    fn constants(&self) -> Constants;

    /// `E_{x_{-i}} ∂_i V(.., x_i, ..)` when `∂_i V` is affine in `x_{-i}`.
    /// `other_means` holds the means of all coordinates except `i`, in order.
    fn conditional_mean_gradient(&self, _i: usize, _x_i: f64, _other_means: &[f64]) -> Option<f64> {
        None
    }

    /// `E_{x_{-i}} V(.., x_i, ..)` up to an additive constant independent of
    /// `x_i`, available under the same condition as
    /// [`Potential::conditional_mean_gradient`].
    fn conditional_mean_potential(&self, _i: usize, _x_i: f64, _other_means: &[f64]) -> Option<f64> {
        None
    }

    fn has_conditional_mean(&self) -> bool {
        false
    }

    fn family(&self) -> &'static str;

    /// Precision matrix and mean when the potential is exactly Gaussian.
    fn as_gaussian(&self) -> Option<(&[f64], &[f64])> {
        None
    }

    /// Stable identifier of the potential and its parameters.
    fn fingerprint(&self) -> String;

    /// Minimizer of `V`, by damped gradient descent until `‖∇V‖ < 1e-10`.
    fn minimizer(&self) -> Vec<f64> {
        let m = self.dim();
        let step = 1.0 / self.constants().lip;
        let mut x = vec![0.0; m];
        let mut g = vec![0.0; m];
        for _ in 0..1_000_000 {
            self.gradient(&x, &mut g);
            let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm < 1e-10 {
                break;
            }
            for (xi, gi) in x.iter_mut().zip(&g) {
                *xi -= step * gi;
            }
        }
        x
    }
}

fn check_point(m: usize, x: &[f64]) -> Result<()> {
    if x.len() != m {
        return Err(Error::Usage(format!("expected a point of length {m}, got {}", x.len())));
    }
    if let Some((i, v)) = x.iter().enumerate().find(|(_, v)| !v.is_finite()) {
        return Err(Error::Evaluation {
            coordinate: i,
            detail: format!("non-finite input {v}"),
        });
    }
    Ok(())
}

fn check_index(m: usize, i: usize) -> Result<()> {
    if i >= m {
        return Err(Error::Usage(format!("coordinate index {i} out of range for dimension {m}")));
    }
    Ok(())
}

/// Checked evaluation of `V(x)`.
pub fn eval_potential(spec: &dyn Potential, x: &[f64]) -> Result<f64> {
    check_point(spec.dim(), x)?;
    let v = spec.value(x);
    if !v.is_finite() {
        return Err(Error::Evaluation {
            coordinate: 0,
            detail: format!("potential value {v} is not finite"),
        });
    }
    Ok(v)
}

/// Checked evaluation of `∂_i V(x)`.
pub fn partial_derivative(spec: &dyn Potential, i: usize, x: &[f64]) -> Result<f64> {
    check_index(spec.dim(), i)?;
    check_point(spec.dim(), x)?;
    let v = spec.partial(i, x);
    if !v.is_finite() {
        return Err(Error::Evaluation {
            coordinate: i,
            detail: format!("partial derivative {v} is not finite"),
        });
    }
    Ok(v)
}

/// Checked closed-form mean-field conditional gradient.
pub fn conditional_mean_gradient(
    spec: &dyn Potential,
    i: usize,
    x_i: f64,
    other_means: &[f64],
) -> Result<f64> {
    let m = spec.dim();
    check_index(m, i)?;
    if other_means.len() + 1 != m {
        return Err(Error::Usage(format!(
            "expected {} other means, got {}",
            m - 1,
            other_means.len()
        )));
    }
    spec.conditional_mean_gradient(i, x_i, other_means)
        .ok_or_else(|| {
            Error::Unsupported(format!(
                "{} potential has no closed-form conditional mean gradient; \
                 use the exhaustive mean-field gradient or stochastic estimation",
                spec.family()
            ))
        })
}

/// Numerically stable `log cosh(t)`.
pub fn logcosh(t: f64) -> f64 {
    let a = t.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

/// Symmetric positive-definite matrix stored row-major, with its extreme
/// eigenvalues.
#[derive(Clone, Debug)]
struct SpdMatrix {
    dim: usize,
    data: Vec<f64>,
    min_eig: f64,
    max_eig: f64,
}

impl SpdMatrix {
    fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("dimension must be positive".into()));
        }
        if data.len() != dim * dim {
            return Err(Error::Config(format!(
                "precision matrix must have {} entries for dimension {dim}, got {}",
                dim * dim,
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::Config("precision matrix has non-finite entries".into()));
        }
        let (min_eig, max_eig) = symmetric_eigen_range(dim, &data)?;
        if min_eig <= 0.0 {
            return Err(Error::Config(format!(
                "precision matrix is not positive definite (smallest eigenvalue {min_eig})"
            )));
        }
        Ok(Self { dim, data, min_eig, max_eig })
    }

    #[inline]
    fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    #[inline]
    fn get(&self, i: usize, k: usize) -> f64 {
        self.data[i * self.dim + k]
    }
}

/// Smallest and largest eigenvalue of a symmetric row-major matrix; rejects
/// asymmetry beyond 1e-12.
pub fn symmetric_eigen_range(dim: usize, data: &[f64]) -> Result<(f64, f64)> {
    for i in 0..dim {
        for k in 0..i {
            let (a, b) = (data[i * dim + k], data[k * dim + i]);
            if (a - b).abs() > 1e-12 {
                return Err(Error::Config(format!(
                    "matrix is not symmetric: entry ({i},{k}) = {a} but ({k},{i}) = {b}"
                )));
            }
        }
    }
    let eig = SymmetricEigen::new(DMatrix::from_row_slice(dim, dim, data));
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    let max = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    Ok((min, max))
}

fn check_vector(name: &str, v: &[f64], dim: usize) -> Result<()> {
    if v.len() != dim {
        return Err(Error::Config(format!("{name} must have length {dim}, got {}", v.len())));
    }
    if v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Config(format!("{name} has non-finite entries")));
    }
    Ok(())
}

fn fnv1a(tag: &str, parts: &[&[f64]]) -> String {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |b: u8| {
        h ^= b as u64;
        h = h.wrapping_mul(0x100000001b3);
    };
    tag.bytes().for_each(&mut eat);
    for part in parts {
        for v in part.iter() {
            v.to_bits().to_le_bytes().into_iter().for_each(&mut eat);
        }
        eat(0xff);
    }
    format!("{tag}-{h:016x}")
}

/// `V(x) = ½ (x−μ)ᵀ A (x−μ)`.
#[derive(Clone, Debug)]
pub struct QuadraticPotential {
    precision: SpdMatrix,
    mean: Vec<f64>,
    constants: Constants,
}

impl QuadraticPotential {
    /// `precision` is row-major `m×m`.
    pub fn new(precision: Vec<f64>, mean: Vec<f64>) -> Result<Self> {
        let dim = mean.len();
        let precision = SpdMatrix::new(dim, precision)?;
        check_vector("mean", &mean, dim)?;
        let constants = Constants {
            alpha: precision.min_eig,
            lip: precision.max_eig,
            third_bound: 0.0,
        };
        Ok(Self { precision, mean, constants })
    }

    /// Replace the analytic constants, e.g. to audit user-claimed values.
    pub fn with_constants(mut self, constants: Constants) -> Result<Self> {
        constants.validate()?;
        self.constants = constants;
        Ok(self)
    }

    pub fn precision(&self) -> &[f64] {
        &self.precision.data
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    /// `Σ_{k≠i} A_ik (m_k − μ_k)` for the means of the other coordinates.
    fn cross_term(&self, i: usize, other_means: &[f64]) -> f64 {
        cross_term(&self.precision, &self.mean, i, other_means)
    }
}

fn cross_term(a: &SpdMatrix, mu: &[f64], i: usize, other_means: &[f64]) -> f64 {
    let mut s = 0.0;
    let others = (0..a.dim).filter(|&k| k != i);
    for (k, mean) in others.zip(other_means) {
        s += a.get(i, k) * (mean - mu[k]);
    }
    s
}

fn quadratic_value(a: &SpdMatrix, mu: &[f64], x: &[f64]) -> f64 {
    let mut s = 0.0;
    for i in 0..a.dim {
        let di = x[i] - mu[i];
        let row = a.row(i);
        let mut r = 0.0;
        for k in 0..a.dim {
            r += row[k] * (x[k] - mu[k]);
        }
        s += di * r;
    }
    0.5 * s
}

#[inline]
fn quadratic_partial(a: &SpdMatrix, mu: &[f64], i: usize, x: &[f64]) -> f64 {
    let row = a.row(i);
    let mut r = 0.0;
    for k in 0..a.dim {
        r += row[k] * (x[k] - mu[k]);
    }
    r
}

impl Potential for QuadraticPotential {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        quadratic_value(&self.precision, &self.mean, x)
    }

    #[inline]
    fn partial(&self, i: usize, x: &[f64]) -> f64 {
        quadratic_partial(&self.precision, &self.mean, i, x)
    }

    fn constants(&self) -> Constants {
        self.constants
    }

    fn conditional_mean_gradient(&self, i: usize, x_i: f64, other_means: &[f64]) -> Option<f64> {
        Some(self.precision.get(i, i) * (x_i - self.mean[i]) + self.cross_term(i, other_means))
    }

    fn conditional_mean_potential(&self, i: usize, x_i: f64, other_means: &[f64]) -> Option<f64> {
        let d = x_i - self.mean[i];
        Some(0.5 * self.precision.get(i, i) * d * d + d * self.cross_term(i, other_means))
    }

    fn has_conditional_mean(&self) -> bool {
        true
    }

    fn family(&self) -> &'static str {
        "quadratic"
    }

    fn as_gaussian(&self) -> Option<(&[f64], &[f64])> {
        Some((&self.precision.data, &self.mean))
    }

    fn fingerprint(&self) -> String {
        fnv1a("quadratic", &[&self.precision.data, &self.mean])
    }

    fn minimizer(&self) -> Vec<f64> {
        self.mean.clone()
    }
}

/// `V(x) = ½ (x−μ)ᵀ A (x−μ) + Σ_i c_i log cosh(x_i)` with `c_i ≥ 0`.
#[derive(Clone, Debug)]
pub struct PerturbedQuadraticPotential {
    precision: SpdMatrix,
    mean: Vec<f64>,
    weights: Vec<f64>,
    constants: Constants,
}

impl PerturbedQuadraticPotential {
    pub fn new(precision: Vec<f64>, mean: Vec<f64>, weights: Vec<f64>) -> Result<Self> {
        let dim = mean.len();
        let precision = SpdMatrix::new(dim, precision)?;
        check_vector("mean", &mean, dim)?;
        check_vector("weights", &weights, dim)?;
        if weights.iter().any(|&c| c < 0.0) {
            return Err(Error::Config("logcosh weights must be nonnegative".into()));
        }
        let c_max = weights.iter().copied().fold(0.0, f64::max);
        let constants = Constants {
            alpha: precision.min_eig,
            lip: precision.max_eig + c_max,
            third_bound: c_max * LOGCOSH_THIRD_SUP,
        };
        Ok(Self { precision, mean, weights, constants })
    }

    pub fn with_constants(mut self, constants: Constants) -> Result<Self> {
        constants.validate()?;
        self.constants = constants;
        Ok(self)
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }
}

impl Potential for PerturbedQuadraticPotential {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let q = quadratic_value(&self.precision, &self.mean, x);
        q + self.weights.iter().zip(x).map(|(c, t)| c * logcosh(*t)).sum::<f64>()
    }

    #[inline]
    fn partial(&self, i: usize, x: &[f64]) -> f64 {
        quadratic_partial(&self.precision, &self.mean, i, x) + self.weights[i] * x[i].tanh()
    }

    fn constants(&self) -> Constants {
        self.constants
    }

    fn conditional_mean_gradient(&self, i: usize, x_i: f64, other_means: &[f64]) -> Option<f64> {
        let base = self.precision.get(i, i) * (x_i - self.mean[i])
            + cross_term(&self.precision, &self.mean, i, other_means);
        Some(base + self.weights[i] * x_i.tanh())
    }

    fn conditional_mean_potential(&self, i: usize, x_i: f64, other_means: &[f64]) -> Option<f64> {
        let d = x_i - self.mean[i];
        let q = 0.5 * self.precision.get(i, i) * d * d
            + d * cross_term(&self.precision, &self.mean, i, other_means);
        Some(q + self.weights[i] * logcosh(x_i))
    }

    fn has_conditional_mean(&self) -> bool {
        true
    }

    fn family(&self) -> &'static str {
        "perturbed_quadratic"
    }

    fn fingerprint(&self) -> String {
        fnv1a("perturbed_quadratic", &[&self.precision.data, &self.mean, &self.weights])
    }
}

/// `V(x) = ½ (x−μ)ᵀ A (x−μ) + Σ_{k<l} w_kl log cosh(x_k − x_l)`.
///
/// The coupling is not affine in the other coordinates, so this family has no
/// closed-form conditional gradient and exercises the exhaustive and
/// quadrature paths.
#[derive(Clone, Debug)]
pub struct PairwiseLogcoshPotential {
    precision: SpdMatrix,
    mean: Vec<f64>,
    /// Symmetric, zero diagonal, row-major.
    coupling: Vec<f64>,
    constants: Constants,
}

impl PairwiseLogcoshPotential {
    pub fn new(precision: Vec<f64>, mean: Vec<f64>, coupling: Vec<f64>) -> Result<Self> {
        let dim = mean.len();
        let precision = SpdMatrix::new(dim, precision)?;
        check_vector("mean", &mean, dim)?;
        check_vector("coupling", &coupling, dim * dim)?;
        let mut laplacian = vec![0.0; dim * dim];
        let mut max_row = 0.0f64;
        for i in 0..dim {
            let mut row_sum = 0.0;
            for k in 0..dim {
                let w = coupling[i * dim + k];
                if (w - coupling[k * dim + i]).abs() > 1e-12 {
                    return Err(Error::Config("coupling matrix must be symmetric".into()));
                }
                if i == k && w != 0.0 {
                    return Err(Error::Config("coupling matrix must have a zero diagonal".into()));
                }
                if w < 0.0 {
                    return Err(Error::Config("coupling weights must be nonnegative".into()));
                }
                if i != k {
                    laplacian[i * dim + k] = -w;
                    row_sum += w;
                }
            }
            laplacian[i * dim + i] = row_sum;
            max_row = max_row.max(row_sum);
        }
        let (_, lap_max) = symmetric_eigen_range(dim, &laplacian)?;
        let constants = Constants {
            alpha: precision.min_eig,
            lip: precision.max_eig + lap_max.max(0.0),
            third_bound: max_row * LOGCOSH_THIRD_SUP,
        };
        Ok(Self { precision, mean, coupling, constants })
    }

    pub fn with_constants(mut self, constants: Constants) -> Result<Self> {
        constants.validate()?;
        self.constants = constants;
        Ok(self)
    }
}

impl Potential for PairwiseLogcoshPotential {
    fn dim(&self) -> usize {
        self.mean.len()
    }

    fn value(&self, x: &[f64]) -> f64 {
        let m = self.dim();
        let mut v = quadratic_value(&self.precision, &self.mean, x);
        for k in 0..m {
            for l in (k + 1)..m {
                let w = self.coupling[k * m + l];
                if w != 0.0 {
                    v += w * logcosh(x[k] - x[l]);
                }
            }
        }
        v
    }

    #[inline]
    fn partial(&self, i: usize, x: &[f64]) -> f64 {
        let m = self.dim();
        let mut g = quadratic_partial(&self.precision, &self.mean, i, x);
        let row = &self.coupling[i * m..(i + 1) * m];
        for (l, w) in row.iter().enumerate() {
            if *w != 0.0 {
                g += w * (x[i] - x[l]).tanh();
            }
        }
        g
    }

    fn constants(&self) -> Constants {
        self.constants
    }

    fn family(&self) -> &'static str {
        "pairwise_logcosh"
    }

    fn fingerprint(&self) -> String {
        fnv1a("pairwise_logcosh", &[&self.precision.data, &self.mean, &self.coupling])
    }
}

/// Serialized potential definition.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PotentialConfig {
    /// `quadratic`, `perturbed_quadratic` or `pairwise_logcosh`.
    pub family: String,
    /// Row-major precision matrix `A`.
    pub precision: Vec<f64>,
    pub mean: Vec<f64>,
    /// Per-coordinate logcosh weights (`perturbed_quadratic`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weights: Option<Vec<f64>>,
    /// Row-major pairwise weights (`pairwise_logcosh`).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coupling: Option<Vec<f64>>,
    /// Claimed constants overriding the analytic ones.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lip: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub third_bound: Option<f64>,
}

impl PotentialConfig {
    pub fn build(&self) -> Result<SharedPotential> {
        let overrides = |c: Constants| Constants {
            alpha: self.alpha.unwrap_or(c.alpha),
            lip: self.lip.unwrap_or(c.lip),
            third_bound: self.third_bound.unwrap_or(c.third_bound),
        };
        let has_override = self.alpha.is_some() || self.lip.is_some() || self.third_bound.is_some();
        match self.family.as_str() {
            "quadratic" => {
                let mut p = QuadraticPotential::new(self.precision.clone(), self.mean.clone())?;
                if has_override {
                    let c = overrides(p.constants());
                    p = p.with_constants(c)?;
                }
                Ok(Arc::new(p))
            }
            "perturbed_quadratic" => {
                let weights = self.weights.clone().ok_or_else(|| {
                    Error::Config("perturbed_quadratic requires `weights`".into())
                })?;
                let mut p = PerturbedQuadraticPotential::new(
                    self.precision.clone(),
                    self.mean.clone(),
                    weights,
                )?;
                if has_override {
                    let c = overrides(p.constants());
                    p = p.with_constants(c)?;
                }
                Ok(Arc::new(p))
            }
            "pairwise_logcosh" => {
                let coupling = self.coupling.clone().ok_or_else(|| {
                    Error::Config("pairwise_logcosh requires `coupling`".into())
                })?;
                let mut p = PairwiseLogcoshPotential::new(
                    self.precision.clone(),
                    self.mean.clone(),
                    coupling,
                )?;
                if has_override {
                    let c = overrides(p.constants());
                    p = p.with_constants(c)?;
                }
                Ok(Arc::new(p))
            }
            other => Err(Error::Config(format!("unknown potential family `{other}`"))),
        }
    }
}
