//! Wasserstein-2 distances between product empirical measures and against
//! one-dimensional reference marginals, plus gradient-moment diagnostics.
//!
//! Every product distance is assembled coordinate-wise: for product measures
//! `W2²(⊗μ_i, ⊗ν_i) = Σ_i W2²(μ_i, ν_i)`, and in one dimension the optimal
//! coupling of two equal-weight empirical measures pairs order statistics.

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::oracle::GridMarginal;
use crate::particles::{ParticleArray, ProductEmpirical};
use crate::potential::Potential;

fn sorted(v: &[f64]) -> Vec<f64> {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

fn mean_sq_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64
}

/// Squared 1-D W2 between equal-size empirical measures.
pub fn w2_sq_1d_empirical(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Usage(format!(
            "empirical measures must have equal sizes, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.is_empty() {
        return Err(Error::Usage("empirical measures must be non-empty".into()));
    }
    Ok(mean_sq_diff(&sorted(a), &sorted(b)))
}

pub fn w2_1d_empirical(a: &[f64], b: &[f64]) -> Result<f64> {
    w2_sq_1d_empirical(a, b).map(f64::sqrt)
}

/// Minimum over every permutation matching; at most 8 atoms.
pub fn w2_1d_bruteforce(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Usage("empirical measures must have equal sizes".into()));
    }
    let n = a.len();
    if n > 8 {
        return Err(Error::Scale(format!("brute-force matching limited to 8 atoms, got {n}")));
    }
    if n == 0 {
        return Err(Error::Usage("empirical measures must be non-empty".into()));
    }
    // Heap's algorithm over permutations of b's indices.
    let mut perm: Vec<usize> = (0..n).collect();
    let cost = |p: &[usize]| -> f64 {
        a.iter().zip(p).map(|(x, &k)| (x - b[k]) * (x - b[k])).sum::<f64>() / n as f64
    };
    let mut best = cost(&perm);
    let mut c = vec![0usize; n];
    let mut i = 1;
    while i < n {
        if c[i] < i {
            if i % 2 == 0 {
                perm.swap(0, i);
            } else {
                perm.swap(c[i], i);
            }
            best = best.min(cost(&perm));
            c[i] += 1;
            i = 1;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
    Ok(best.sqrt())
}

fn check_same_shape(x: &ProductEmpirical<'_>, y: &ProductEmpirical<'_>) -> Result<()> {
    if x.dim() != y.dim() || x.count() != y.count() {
        return Err(Error::Usage(format!(
            "shape mismatch: {}x{} vs {}x{}",
            x.dim(),
            x.count(),
            y.dim(),
            y.count()
        )));
    }
    Ok(())
}

/// Squared per-coordinate distances between two product empirical measures.
pub fn w2_sq_per_coordinate(x: &ProductEmpirical<'_>, y: &ProductEmpirical<'_>) -> Result<Vec<f64>> {
    check_same_shape(x, y)?;
    (0..x.dim())
        .map(|i| w2_sq_1d_empirical(x.marginal(i), y.marginal(i)))
        .collect()
}

pub fn w2_product_empirical(x: &ProductEmpirical<'_>, y: &ProductEmpirical<'_>) -> Result<f64> {
    Ok(w2_sq_per_coordinate(x, y)?.iter().sum::<f64>().sqrt())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    AnalyticGaussian,
    GridOracle,
    Empirical,
}

/// A one-dimensional reference distribution exposed through its quantile function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Marginal {
    Gaussian { mean: f64, variance: f64 },
    PointMass { at: f64 },
    /// Equal-weight atoms, stored sorted.
    Empirical { atoms: Vec<f64> },
    Grid(GridMarginal),
}

impl Marginal {
    pub fn empirical(atoms: &[f64]) -> Self {
        Marginal::Empirical { atoms: sorted(atoms) }
    }

    /// Inverse CDF at `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> Result<f64> {
        if !(u > 0.0 && u < 1.0) {
            return Err(Error::Reference(format!("quantile level {u} outside (0, 1)")));
        }
        let q = match self {
            Marginal::Gaussian { mean, variance } => {
                if *variance == 0.0 {
                    *mean
                } else {
                    Normal::new(*mean, variance.sqrt())
                        .map_err(|e| Error::Reference(e.to_string()))?
                        .inverse_cdf(u)
                }
            }
            Marginal::PointMass { at } => *at,
            Marginal::Empirical { atoms } => {
                let n = atoms.len();
                let k = ((u * n as f64).ceil() as usize).clamp(1, n);
                atoms[k - 1]
            }
            Marginal::Grid(g) => g.quantile(u),
        };
        if !q.is_finite() {
            return Err(Error::Reference(format!("quantile at {u} is not finite")));
        }
        Ok(q)
    }

    pub fn mean(&self) -> f64 {
        match self {
            Marginal::Gaussian { mean, .. } => *mean,
            Marginal::PointMass { at } => *at,
            Marginal::Empirical { atoms } => atoms.iter().sum::<f64>() / atoms.len() as f64,
            Marginal::Grid(g) => g.density().mean(),
        }
    }

    pub fn variance(&self) -> f64 {
        match self {
            Marginal::Gaussian { variance, .. } => *variance,
            Marginal::PointMass { .. } => 0.0,
            Marginal::Empirical { atoms } => {
                let mu = self.mean();
                atoms.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / atoms.len() as f64
            }
            Marginal::Grid(g) => g.density().variance(),
        }
    }
}

/// Product reference measure, one marginal per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceProduct {
    pub provenance: Provenance,
    pub marginals: Vec<Marginal>,
}

impl ReferenceProduct {
    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    /// Per-coordinate empirical quantiles of a particle array.
    pub fn from_particles(x: &ParticleArray) -> Self {
        Self {
            provenance: Provenance::Empirical,
            marginals: (0..x.dim()).map(|i| Marginal::empirical(x.row(i))).collect(),
        }
    }
}

/// `Σ_j (atom_(j) − Q((j−½)/N))² / N`.
pub fn w2_sq_empirical_vs_reference(atoms: &[f64], reference: &Marginal) -> Result<f64> {
    if atoms.is_empty() {
        return Err(Error::Usage("no atoms".into()));
    }
    let n = atoms.len() as f64;
    let s = sorted(atoms);
    let mut acc = 0.0;
    for (j, a) in s.iter().enumerate() {
        let q = reference.quantile((j as f64 + 0.5) / n)?;
        acc += (a - q) * (a - q);
    }
    Ok(acc / n)
}

/// Distance between an empirical measure and a continuous reference via the
/// midpoint-quantile coupling. Carries an `O(1/N)` discretization bias
/// relative to the exact integral.
pub fn w2_empirical_vs_reference(atoms: &[f64], reference: &Marginal) -> Result<f64> {
    w2_sq_empirical_vs_reference(atoms, reference).map(f64::sqrt)
}

pub fn w2_sq_to_reference_per_coordinate(
    x: &ProductEmpirical<'_>,
    reference: &ReferenceProduct,
) -> Result<Vec<f64>> {
    if x.dim() != reference.dim() {
        return Err(Error::Usage(format!(
            "dimension mismatch: particles have {} coordinates, reference has {}",
            x.dim(),
            reference.dim()
        )));
    }
    (0..x.dim())
        .map(|i| w2_sq_empirical_vs_reference(x.marginal(i), &reference.marginals[i]))
        .collect()
}

pub fn w2_to_reference(x: &ProductEmpirical<'_>, reference: &ReferenceProduct) -> Result<f64> {
    Ok(w2_sq_to_reference_per_coordinate(x, reference)?.iter().sum::<f64>().sqrt())
}

/// Exact `W2²` between equal-weight atoms and `N(mean, variance)`, integrating
/// `(atom_(j) − Q(u))²` over each quantile cell in closed form.
pub fn w2_sq_empirical_vs_gaussian(atoms: &[f64], mean: f64, variance: f64) -> Result<f64> {
    if atoms.is_empty() {
        return Err(Error::Usage("no atoms".into()));
    }
    if !(variance > 0.0 && variance.is_finite()) {
        return Err(Error::Reference(format!("variance must be positive, got {variance}")));
    }
    let std = Normal::standard();
    let sigma = variance.sqrt();
    let n = atoms.len();
    let s = sorted(atoms);
    // z φ(z) at a cell edge, zero at ±∞
    let edge = |k: usize| -> (f64, f64) {
        if k == 0 || k == n {
            (0.0, 0.0)
        } else {
            let z = std.inverse_cdf(k as f64 / n as f64);
            let phi = std.pdf(z);
            (phi, z * phi)
        }
    };
    let mut acc = 0.0;
    let mut lower = edge(0);
    for (j, y) in s.iter().enumerate() {
        let upper = edge(j + 1);
        let d = y - mean;
        // ∫ z dΦ = φ(a) − φ(b), ∫ z² dΦ = 1/N + aφ(a) − bφ(b)
        let first = lower.0 - upper.0;
        let second = 1.0 / n as f64 + lower.1 - upper.1;
        acc += d * d / n as f64 - 2.0 * d * sigma * first + variance * second;
        lower = upper;
    }
    Ok(acc.max(0.0))
}

/// W2 between two 1-D references by midpoint quadrature of `∫ (Q_a − Q_b)²`
/// over `levels` quantile levels.
pub fn w2_between_marginals(a: &Marginal, b: &Marginal, levels: usize) -> Result<f64> {
    let k = levels.max(1) as f64;
    let mut acc = 0.0;
    for l in 0..levels.max(1) {
        let u = (l as f64 + 0.5) / k;
        let d = a.quantile(u)? - b.quantile(u)?;
        acc += d * d;
    }
    Ok((acc / k).sqrt())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentDiagnostics {
    /// `‖(1/K) Σ ∇V(x_k)‖₂`.
    pub mean_grad_norm: f64,
    /// `(1/K) Σ ‖∇V(x_k)‖₂²`.
    pub mean_sq_grad: f64,
    /// Unbiased per-coordinate sample variances.
    pub coordinate_variances: Vec<f64>,
}

/// Gradient moments over samples stored as an `m×K` array (one column per sample).
pub fn grad_moment_check(spec: &dyn Potential, samples: &ParticleArray) -> Result<MomentDiagnostics> {
    let m = samples.dim();
    if m != spec.dim() {
        return Err(Error::Usage(format!(
            "samples have {m} coordinates, potential has {}",
            spec.dim()
        )));
    }
    let k = samples.count();
    let mut mean_grad = vec![0.0; m];
    let mut sq = 0.0;
    let mut x = vec![0.0; m];
    let mut g = vec![0.0; m];
    for j in 0..k {
        for (i, xi) in x.iter_mut().enumerate() {
            *xi = samples.get(i, j);
        }
        spec.gradient(&x, &mut g);
        for (mg, gi) in mean_grad.iter_mut().zip(&g) {
            *mg += gi;
        }
        sq += g.iter().map(|v| v * v).sum::<f64>();
    }
    let kf = k as f64;
    let mean_grad_norm = mean_grad.iter().map(|v| (v / kf) * (v / kf)).sum::<f64>().sqrt();
    let coordinate_variances = (0..m)
        .map(|i| {
            let row = samples.row(i);
            let mu = row.iter().sum::<f64>() / kf;
            row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / (kf - 1.0)
        })
        .collect();
    Ok(MomentDiagnostics {
        mean_grad_norm,
        mean_sq_grad: sq / kf,
        coordinate_variances,
    })
}
