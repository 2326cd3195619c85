//! Independent computation of the mean-field optimum `q*`.
//!
//! Quadratic potentials have a closed form: the optimum is a product of
//! Gaussians with means `μ_i` and variances `1/A_ii`. For everything else the
//! optimum is located numerically as the fixed point of the coordinate map
//! `q^i ← T_i(q^{-i}) ∝ exp(−V̄_i(·, q^{-i}))`, with every marginal stored as a
//! log density on a uniform grid and `V̄_i` computed by tensor trapezoid
//! quadrature over the other coordinates' grids.

use std::path::Path;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::{w2_between_marginals, Marginal, Provenance, ReferenceProduct};
use crate::particles::ParticleArray;
use crate::potential::Potential;
use crate::rng::{Role, RngStream};

pub const DEFAULT_GRID_POINTS: usize = 1025;
/// Grid half-width in units of `1/√α`.
pub const GRID_HALF_WIDTH: f64 = 8.0;
/// Largest boundary density accepted for a converged marginal.
pub const BOUNDARY_DENSITY_LIMIT: f64 = 1e-8;
/// Tensor quadrature is refused beyond this many potential evaluations per transform.
const TENSOR_BUDGET: f64 = 2_147_483_648.0;
/// Quadrature weights below this are skipped.
const WEIGHT_FLOOR: f64 = 1e-18;

/// Normalized density on a uniform grid, stored as a log density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridDensity {
    pub lo: f64,
    pub hi: f64,
    pub log_density: Vec<f64>,
}

impl GridDensity {
    /// Normalize `log_density` so the trapezoid integral of its exponential is 1.
    pub fn from_unnormalized(lo: f64, hi: f64, mut log_density: Vec<f64>) -> Result<Self> {
        let g = log_density.len();
        if g < 3 || !lo.is_finite() || !hi.is_finite() || hi <= lo {
            return Err(Error::DegenerateGrid(format!(
                "need at least 3 nodes on a finite interval, got {g} on [{lo}, {hi}]"
            )));
        }
        if log_density.iter().any(|v| v.is_nan() || *v == f64::INFINITY) {
            return Err(Error::DegenerateGrid("log density contains NaN or +inf".into()));
        }
        let max = log_density.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        if max == f64::NEG_INFINITY {
            return Err(Error::DegenerateGrid("log density is -inf at every node".into()));
        }
        let dx = (hi - lo) / (g - 1) as f64;
        let mut s = 0.0;
        for (k, l) in log_density.iter().enumerate() {
            let w = if k == 0 || k == g - 1 { 0.5 } else { 1.0 };
            s += w * (l - max).exp();
        }
        let log_z = max + (s * dx).ln();
        for l in log_density.iter_mut() {
            *l -= log_z;
        }
        Ok(Self { lo, hi, log_density })
    }

    pub fn len(&self) -> usize {
        self.log_density.len()
    }

    pub fn is_empty(&self) -> bool {
        self.log_density.is_empty()
    }

    pub fn dx(&self) -> f64 {
        (self.hi - self.lo) / (self.len() - 1) as f64
    }

    pub fn node(&self, g: usize) -> f64 {
        self.lo + g as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.len()).map(|g| self.node(g)).collect()
    }

    pub fn density(&self, g: usize) -> f64 {
        self.log_density[g].exp()
    }

    /// Trapezoid weight times density at every node; sums to 1.
    pub fn probabilities(&self) -> Vec<f64> {
        let (g, dx) = (self.len(), self.dx());
        (0..g)
            .map(|k| {
                let w = if k == 0 || k == g - 1 { 0.5 * dx } else { dx };
                w * self.density(k)
            })
            .collect()
    }

    pub fn integral(&self) -> f64 {
        self.probabilities().iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.probabilities().iter().enumerate().map(|(g, p)| p * self.node(g)).sum()
    }

    pub fn variance(&self) -> f64 {
        let mu = self.mean();
        self.probabilities()
            .iter()
            .enumerate()
            .map(|(g, p)| {
                let d = self.node(g) - mu;
                p * d * d
            })
            .sum()
    }

    pub fn boundary_density(&self) -> f64 {
        self.density(0).max(self.density(self.len() - 1))
    }
}

/// A grid density with its cumulative distribution, supporting quantiles.
///
/// The CDF at the nodes is accumulated with the endpoint-corrected trapezoid
/// rule and interpolated inside each cell by a cubic Hermite polynomial whose
/// slopes are the node densities. Cells where that cubic would not be monotone
/// fall back to the CDF of a linear density.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "GridDensity", into = "GridDensity")]
pub struct GridMarginal {
    density: GridDensity,
    cdf: Vec<f64>,
    /// Node densities scaled to CDF units per cell.
    slope: Vec<f64>,
    pdf: Vec<f64>,
    hermite: Vec<bool>,
}

impl TryFrom<GridDensity> for GridMarginal {
    type Error = Error;

    fn try_from(density: GridDensity) -> Result<Self> {
        GridMarginal::new(density)
    }
}

impl From<GridMarginal> for GridDensity {
    fn from(m: GridMarginal) -> Self {
        m.density
    }
}

impl GridMarginal {
    pub fn new(density: GridDensity) -> Result<Self> {
        let g = density.len();
        if g < 3 {
            return Err(Error::DegenerateGrid("need at least 3 nodes".into()));
        }
        let dx = density.dx();
        let pdf: Vec<f64> = (0..g).map(|k| density.density(k)).collect();
        let mut deriv = vec![0.0; g];
        deriv[0] = (-3.0 * pdf[0] + 4.0 * pdf[1] - pdf[2]) / (2.0 * dx);
        deriv[g - 1] = (3.0 * pdf[g - 1] - 4.0 * pdf[g - 2] + pdf[g - 3]) / (2.0 * dx);
        for k in 1..g - 1 {
            deriv[k] = (pdf[k + 1] - pdf[k - 1]) / (2.0 * dx);
        }
        let mut cell = vec![0.0; g - 1];
        let mut hermite = vec![true; g - 1];
        for k in 0..g - 1 {
            let trap = 0.5 * dx * (pdf[k] + pdf[k + 1]);
            let corrected = trap - dx * dx / 12.0 * (deriv[k + 1] - deriv[k]);
            if corrected > 0.5 * trap && corrected < 1.5 * trap {
                cell[k] = corrected;
            } else {
                cell[k] = trap;
                hermite[k] = false;
            }
        }
        let total: f64 = cell.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(Error::DegenerateGrid("density has no mass".into()));
        }
        let mut cdf = Vec::with_capacity(g);
        cdf.push(0.0);
        let mut acc = 0.0;
        for c in &cell {
            acc += c;
            cdf.push(acc / total);
        }
        cdf[g - 1] = 1.0;
        let slope: Vec<f64> = pdf.iter().map(|p| p * dx / total).collect();
        for k in 0..g - 1 {
            let delta = cdf[k + 1] - cdf[k];
            if hermite[k] {
                let a = slope[k] / delta;
                let b = slope[k + 1] / delta;
                hermite[k] = delta > 0.0 && a * a + b * b <= 9.0;
            }
        }
        Ok(Self { density, cdf, slope, pdf, hermite })
    }

    pub fn density(&self) -> &GridDensity {
        &self.density
    }

    /// CDF at the grid nodes.
    pub fn cdf_nodes(&self) -> &[f64] {
        &self.cdf
    }

    /// Inverse CDF for `u ∈ (0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let k = self.cdf.partition_point(|&c| c < u).clamp(1, self.cdf.len() - 1);
        let g = k - 1;
        let (f0, f1) = (self.cdf[g], self.cdf[g + 1]);
        let delta = f1 - f0;
        let x0 = self.density.node(g);
        let dx = self.density.dx();
        if delta <= 0.0 {
            return x0;
        }
        let target = ((u - f0) / delta).clamp(0.0, 1.0);
        let t = if self.hermite[g] {
            let (a, b) = (self.slope[g] / delta, self.slope[g + 1] / delta);
            invert_hermite(a, b, target)
        } else {
            invert_linear_density(self.pdf[g], self.pdf[g + 1], target)
        };
        x0 + t * dx
    }

    pub fn cdf(&self, x: f64) -> f64 {
        let d = &self.density;
        if x <= d.lo {
            return 0.0;
        }
        if x >= d.hi {
            return 1.0;
        }
        let pos = (x - d.lo) / d.dx();
        let g = (pos.floor() as usize).min(d.len() - 2);
        let t = pos - g as f64;
        let delta = self.cdf[g + 1] - self.cdf[g];
        let s = if self.hermite[g] {
            hermite_unit(self.slope[g] / delta, self.slope[g + 1] / delta, t)
        } else {
            linear_density_unit(self.pdf[g], self.pdf[g + 1], t)
        };
        self.cdf[g] + delta * s
    }
}

/// Unit Hermite cubic on `[0, 1]` from 0 to 1 with end slopes `a`, `b`.
fn hermite_unit(a: f64, b: f64, t: f64) -> f64 {
    let t2 = t * t;
    let t3 = t2 * t;
    a * (t3 - 2.0 * t2 + t) + (3.0 * t2 - 2.0 * t3) + b * (t3 - t2)
}

fn hermite_unit_deriv(a: f64, b: f64, t: f64) -> f64 {
    let t2 = t * t;
    a * (3.0 * t2 - 4.0 * t + 1.0) + (6.0 * t - 6.0 * t2) + b * (3.0 * t2 - 2.0 * t)
}

fn invert_hermite(a: f64, b: f64, target: f64) -> f64 {
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let mut t = target;
    for _ in 0..100 {
        let r = hermite_unit(a, b, t) - target;
        if r.abs() <= 1e-16 {
            break;
        }
        if r > 0.0 {
            hi = t;
        } else {
            lo = t;
        }
        let d = hermite_unit_deriv(a, b, t);
        let next = if d > 0.0 { t - r / d } else { f64::NAN };
        t = if next > lo && next < hi { next } else { 0.5 * (lo + hi) };
        if hi - lo < 1e-16 {
            break;
        }
    }
    t
}

/// Normalized CDF inside a cell of a linearly interpolated density.
fn linear_density_unit(f0: f64, f1: f64, t: f64) -> f64 {
    let mass = 0.5 * (f0 + f1);
    if mass <= 0.0 {
        return t;
    }
    (f0 * t + 0.5 * (f1 - f0) * t * t) / mass
}

fn invert_linear_density(f0: f64, f1: f64, target: f64) -> f64 {
    let mass = 0.5 * (f0 + f1);
    if mass <= 0.0 {
        return target;
    }
    // 0.5 (f1 − f0) t² + f0 t − target·mass = 0, stable root
    let c = target * mass;
    let disc = (f0 * f0 + 2.0 * (f1 - f0) * c).max(0.0);
    let denom = f0 + disc.sqrt();
    if denom <= 0.0 {
        return target;
    }
    (2.0 * c / denom).clamp(0.0, 1.0)
}

/// One grid density per coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridProduct {
    pub marginals: Vec<GridDensity>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GridInit {
    /// `N(center, 1/α)` per coordinate.
    Gaussian,
    /// Flat over the grid.
    Uniform,
    /// All mass at the node nearest the center.
    PointMass,
}

impl GridProduct {
    /// Grids `[c_i − 8/√α, c_i + 8/√α]` around the minimizer `c` of `V`.
    pub fn initial(spec: &dyn Potential, grid_points: usize, init: GridInit) -> Result<Self> {
        if grid_points < 3 {
            return Err(Error::DegenerateGrid("need at least 3 grid points".into()));
        }
        let alpha = spec.constants().alpha;
        let half = GRID_HALF_WIDTH / alpha.sqrt();
        let center = spec.minimizer();
        let marginals = center
            .iter()
            .map(|&c| {
                let (lo, hi) = (c - half, c + half);
                let dx = (hi - lo) / (grid_points - 1) as f64;
                let log: Vec<f64> = match init {
                    GridInit::Gaussian => (0..grid_points)
                        .map(|g| {
                            let d = lo + g as f64 * dx - c;
                            -0.5 * alpha * d * d
                        })
                        .collect(),
                    GridInit::Uniform => vec![0.0; grid_points],
                    GridInit::PointMass => {
                        let mid = grid_points / 2;
                        (0..grid_points)
                            .map(|g| if g == mid { 0.0 } else { f64::NEG_INFINITY })
                            .collect()
                    }
                };
                GridDensity::from_unnormalized(lo, hi, log)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { marginals })
    }

    pub fn dim(&self) -> usize {
        self.marginals.len()
    }

    pub fn to_reference(&self) -> Result<ReferenceProduct> {
        Ok(ReferenceProduct {
            provenance: Provenance::GridOracle,
            marginals: self
                .marginals
                .iter()
                .map(|d| GridMarginal::new(d.clone()).map(Marginal::Grid))
                .collect::<Result<_>>()?,
        })
    }
}

/// How `V̄_i` is evaluated on the grid.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VbarMethod {
    /// Tensor quadrature for `m ≤ 3`, closed-form separable expectation beyond.
    #[default]
    Auto,
    Tensor,
    /// Uses the potential's closed-form conditional mean potential.
    Separable,
}

/// `V̄_i` at the nodes of coordinate `i`'s grid, with the other coordinates
/// distributed as `product`'s marginals. Coordinate `i` of `product` only
/// supplies the grid.
pub fn vbar_on_grid(
    spec: &dyn Potential,
    i: usize,
    product: &GridProduct,
    method: VbarMethod,
) -> Result<Vec<f64>> {
    let m = spec.dim();
    if product.dim() != m {
        return Err(Error::Usage(format!(
            "grid product has {} coordinates, potential has {m}",
            product.dim()
        )));
    }
    if i >= m {
        return Err(Error::Usage(format!("coordinate index {i} out of range for dimension {m}")));
    }
    let use_tensor = match method {
        VbarMethod::Tensor => true,
        VbarMethod::Separable => false,
        VbarMethod::Auto => m <= 3 || !spec.has_conditional_mean(),
    };
    let nodes = product.marginals[i].nodes();
    if use_tensor {
        if m > 3 {
            return Err(Error::Scale(format!(
                "tensor quadrature over {} other coordinates is not supported (m = {m} > 3) \
                 and the potential is not separable",
                m - 1
            )));
        }
        tensor_vbar(spec, i, product, &nodes)
    } else {
        if !spec.has_conditional_mean() {
            return Err(Error::Unsupported(format!(
                "{} potential has no closed-form conditional mean potential",
                spec.family()
            )));
        }
        let means: Vec<f64> = (0..m).filter(|&k| k != i).map(|k| product.marginals[k].mean()).collect();
        nodes
            .iter()
            .map(|&x| {
                spec.conditional_mean_potential(i, x, &means)
                    .ok_or_else(|| Error::Unsupported("conditional mean potential unavailable".into()))
            })
            .collect()
    }
}

fn tensor_vbar(spec: &dyn Potential, i: usize, product: &GridProduct, nodes: &[f64]) -> Result<Vec<f64>> {
    let m = spec.dim();
    // (coordinate, kept nodes, kept weights)
    let others: Vec<(usize, Vec<f64>, Vec<f64>)> = (0..m)
        .filter(|&k| k != i)
        .map(|k| {
            let d = &product.marginals[k];
            let probs = d.probabilities();
            let (mut xs, mut ws) = (Vec::new(), Vec::new());
            for (g, p) in probs.iter().enumerate() {
                if *p > WEIGHT_FLOOR {
                    xs.push(d.node(g));
                    ws.push(*p);
                }
            }
            (k, xs, ws)
        })
        .collect();
    let cost = others.iter().map(|o| o.1.len() as f64).product::<f64>() * nodes.len() as f64;
    if cost > TENSOR_BUDGET {
        return Err(Error::Scale(format!(
            "tensor quadrature needs {cost:.3e} potential evaluations per transform; reduce the grid size"
        )));
    }
    let values: Vec<f64> = nodes
        .par_iter()
        .map(|&x| {
            let mut point = vec![0.0; m];
            point[i] = x;
            let mut idx = vec![0usize; others.len()];
            let mut acc = 0.0;
            loop {
                let mut w = 1.0;
                for (slot, (k, xs, ws)) in others.iter().enumerate() {
                    point[*k] = xs[idx[slot]];
                    w *= ws[idx[slot]];
                }
                acc += w * spec.value(&point);
                // odometer increment
                let mut slot = 0;
                loop {
                    if slot == others.len() {
                        return acc;
                    }
                    idx[slot] += 1;
                    if idx[slot] < others[slot].1.len() {
                        break;
                    }
                    idx[slot] = 0;
                    slot += 1;
                }
            }
        })
        .collect();
    if let Some(g) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::Evaluation {
            coordinate: i,
            detail: format!("non-finite approximate potential at grid node {g}"),
        });
    }
    Ok(values)
}

/// `T_i(q^{-i}) ∝ exp(−V̄_i(·, q^{-i}))` on coordinate `i`'s grid.
pub fn apply_transform(
    spec: &dyn Potential,
    i: usize,
    product: &GridProduct,
    method: VbarMethod,
) -> Result<GridDensity> {
    let vbar = vbar_on_grid(spec, i, product, method)?;
    let grid = &product.marginals[i];
    GridDensity::from_unnormalized(grid.lo, grid.hi, vbar.into_iter().map(|v| -v).collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixedPointOptions {
    /// Convergence threshold on the per-coordinate W2 change of one sweep.
    pub tol: f64,
    pub max_iter: usize,
    /// Weight of the new log density, in `(0, 1]`.
    pub damping: f64,
    pub method: VbarMethod,
    /// Quantile levels used for grid-to-grid W2.
    pub w2_levels: usize,
}

impl Default for FixedPointOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 500,
            damping: 1.0,
            method: VbarMethod::Auto,
            w2_levels: 4096,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    pub sweeps: usize,
    pub converged: bool,
    /// Largest per-coordinate W2 change per sweep.
    pub w2_trace: Vec<f64>,
    /// Largest sup-norm change of finite log densities per sweep.
    pub sup_log_trace: Vec<f64>,
    /// `W2(q^i, T_i(q^{-i}))` at the returned product.
    pub final_w2_residual: Vec<f64>,
    pub final_sup_log_residual: Vec<f64>,
}

impl ResidualReport {
    pub fn max_final_residual(&self) -> f64 {
        self.final_w2_residual.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FixedPoint {
    pub product: GridProduct,
    pub report: ResidualReport,
}

fn sup_log_change(a: &GridDensity, b: &GridDensity) -> f64 {
    a.log_density
        .iter()
        .zip(&b.log_density)
        .filter(|(x, y)| x.is_finite() && y.is_finite())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

fn grid_w2(a: &GridDensity, b: &GridDensity, levels: usize) -> Result<f64> {
    let ma = Marginal::Grid(GridMarginal::new(a.clone())?);
    let mb = Marginal::Grid(GridMarginal::new(b.clone())?);
    w2_between_marginals(&ma, &mb, levels)
}

/// Cyclic coordinate sweeps `q^i ← T_i(q^{-i})` until the largest W2 change
/// of a sweep drops below `tol`.
pub fn fixed_point_solve(
    spec: &dyn Potential,
    init: GridProduct,
    opts: &FixedPointOptions,
) -> Result<FixedPoint> {
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(Error::Config("fixed-point tolerance must be positive".into()));
    }
    if !(opts.damping > 0.0 && opts.damping <= 1.0) {
        return Err(Error::Config(format!("damping must lie in (0, 1], got {}", opts.damping)));
    }
    let m = spec.dim();
    let mut current = init;
    let mut w2_trace = Vec::new();
    let mut sup_log_trace = Vec::new();
    let mut converged = false;
    for _sweep in 0..opts.max_iter {
        let mut max_w2 = 0.0f64;
        let mut max_sup = 0.0f64;
        for i in 0..m {
            let target = apply_transform(spec, i, &current, opts.method)?;
            let old = &current.marginals[i];
            let next = if opts.damping < 1.0 {
                let mixed = old
                    .log_density
                    .iter()
                    .zip(&target.log_density)
                    .map(|(o, t)| {
                        if o.is_finite() {
                            (1.0 - opts.damping) * o + opts.damping * t
                        } else {
                            *t
                        }
                    })
                    .collect();
                GridDensity::from_unnormalized(old.lo, old.hi, mixed)?
            } else {
                target
            };
            let boundary = next.boundary_density();
            if boundary > BOUNDARY_DENSITY_LIMIT {
                return Err(Error::GridTooNarrow { coordinate: i, boundary_density: boundary });
            }
            max_w2 = max_w2.max(grid_w2(old, &next, opts.w2_levels)?);
            max_sup = max_sup.max(sup_log_change(old, &next));
            current.marginals[i] = next;
        }
        w2_trace.push(max_w2);
        sup_log_trace.push(max_sup);
        // T_1 ignores its argument when m = 1, so one sweep lands on the fixed point.
        if max_w2 < opts.tol || m == 1 {
            converged = true;
            break;
        }
    }
    if !converged {
        return Err(Error::NonConvergence {
            iterations: w2_trace.len(),
            last_residual: w2_trace.last().copied().unwrap_or(f64::NAN),
            residual_trace: w2_trace,
        });
    }
    let mut final_w2_residual = Vec::with_capacity(m);
    let mut final_sup_log_residual = Vec::with_capacity(m);
    for i in 0..m {
        let t = apply_transform(spec, i, &current, opts.method)?;
        final_w2_residual.push(grid_w2(&current.marginals[i], &t, opts.w2_levels)?);
        final_sup_log_residual.push(sup_log_change(&current.marginals[i], &t));
    }
    Ok(FixedPoint {
        product: current,
        report: ResidualReport {
            sweeps: w2_trace.len(),
            converged,
            w2_trace,
            sup_log_trace,
            final_w2_residual,
            final_sup_log_residual,
        },
    })
}

/// Whether point-mass and uniform initializations reach the same fixed point.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitSensitivity {
    /// Per-coordinate W2 between the two converged products.
    pub w2_between: Vec<f64>,
    pub agree: bool,
}

pub fn init_sensitivity(
    spec: &dyn Potential,
    grid_points: usize,
    opts: &FixedPointOptions,
    agreement_tol: f64,
) -> Result<InitSensitivity> {
    let a = fixed_point_solve(spec, GridProduct::initial(spec, grid_points, GridInit::PointMass)?, opts)?;
    let b = fixed_point_solve(spec, GridProduct::initial(spec, grid_points, GridInit::Uniform)?, opts)?;
    let w2_between = a
        .product
        .marginals
        .iter()
        .zip(&b.product.marginals)
        .map(|(x, y)| grid_w2(x, y, opts.w2_levels))
        .collect::<Result<Vec<_>>>()?;
    let agree = w2_between.iter().all(|&d| d < agreement_tol);
    Ok(InitSensitivity { w2_between, agree })
}

/// Closed-form optimum for a Gaussian target: marginal means `μ_i`, variances `1/A_ii`.
pub fn gaussian_mfvi_solution(spec: &dyn Potential) -> Result<ReferenceProduct> {
    let (precision, mean) = spec.as_gaussian().ok_or_else(|| {
        Error::Unsupported(format!("{} potential has no closed-form mean-field solution", spec.family()))
    })?;
    let m = mean.len();
    Ok(ReferenceProduct {
        provenance: Provenance::AnalyticGaussian,
        marginals: (0..m)
            .map(|i| Marginal::Gaussian {
                mean: mean[i],
                variance: 1.0 / precision[i * m + i],
            })
            .collect(),
    })
}

/// Inverse-CDF sampling of `K` independent draws, coordinate `i` from the
/// `(0, Reference, i)` substream.
pub fn sample_reference(reference: &ReferenceProduct, count: usize, seed: u64) -> Result<ParticleArray> {
    let streams = RngStream::new(seed);
    let mut data = Vec::with_capacity(reference.dim() * count);
    for (i, marginal) in reference.marginals.iter().enumerate() {
        let mut rng = streams.substream(0, Role::Reference, i as u64);
        for _ in 0..count {
            let u = ((rng.random::<u64>() >> 11) as f64 + 0.5) / (1u64 << 53) as f64;
            data.push(marginal.quantile(u)?);
        }
    }
    ParticleArray::from_rows(reference.dim(), count, data)
}

/// Serialized oracle: reference marginals plus how they were obtained.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleDocument {
    pub potential: String,
    pub family: String,
    pub reference: ReferenceProduct,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub residual: Option<ResidualReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init_sensitivity: Option<InitSensitivity>,
}

impl OracleDocument {
    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::io::BufWriter::new(std::fs::File::create(path)?);
        serde_json::to_writer_pretty(f, self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::io::BufReader::new(std::fs::File::open(path)?);
        Ok(serde_json::from_reader(f)?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::potential::{PerturbedQuadraticPotential, QuadraticPotential};
    use approx::assert_abs_diff_eq;

    fn gaussian_grid(mean: f64, var: f64, half: f64, g: usize) -> GridDensity {
        let (lo, hi) = (mean - half, mean + half);
        let dx = (hi - lo) / (g - 1) as f64;
        let log = (0..g)
            .map(|k| {
                let d = lo + k as f64 * dx - mean;
                -0.5 * d * d / var
            })
            .collect();
        GridDensity::from_unnormalized(lo, hi, log).unwrap()
    }

    #[test]
    fn normalization_and_moments() {
        let d = gaussian_grid(0.4, 0.5, 8.0, 1025);
        assert_abs_diff_eq!(d.integral(), 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(d.mean(), 0.4, epsilon = 1e-12);
        assert_abs_diff_eq!(d.variance(), 0.5, epsilon = 1e-12);
        assert!(d.boundary_density() < 1e-10);
    }

    #[test]
    fn grid_quantiles_match_gaussian() {
        let d = gaussian_grid(0.0, 1.0, 10.0, 1025);
        let m = GridMarginal::new(d).unwrap();
        let exact = Marginal::Gaussian { mean: 0.0, variance: 1.0 };
        for &u in &[0.01, 0.2, 0.5, 0.77, 0.999] {
            assert_abs_diff_eq!(m.quantile(u), exact.quantile(u).unwrap(), epsilon = 1e-7);
        }
        // deep in the tail the density is ~1e-5, so quantile error is CDF error magnified
        assert_abs_diff_eq!(m.quantile(1e-6), exact.quantile(1e-6).unwrap(), epsilon = 1e-6);
        let w2 = w2_between_marginals(&Marginal::Grid(m), &exact, 4096).unwrap();
        assert!(w2 < 1e-7, "{w2}");
    }

    #[test]
    fn quantile_inverts_cdf() {
        let m = GridMarginal::new(gaussian_grid(1.0, 0.3, 5.0, 257)).unwrap();
        for k in 1..100 {
            let u = k as f64 / 100.0;
            assert_abs_diff_eq!(m.cdf(m.quantile(u)), u, epsilon = 1e-12);
        }
    }

    #[test]
    fn point_mass_quantiles_stay_near_the_atom() {
        let lo = -1.0;
        let hi = 1.0;
        let g = 201;
        let log = (0..g).map(|k| if k == 100 { 0.0 } else { f64::NEG_INFINITY }).collect();
        let m = GridMarginal::new(GridDensity::from_unnormalized(lo, hi, log).unwrap()).unwrap();
        for &u in &[0.01, 0.5, 0.99] {
            assert!(m.quantile(u).abs() <= 0.01 + 1e-12);
        }
    }

    #[test]
    fn degenerate_log_density_rejected() {
        let err = GridDensity::from_unnormalized(0.0, 1.0, vec![f64::NEG_INFINITY; 5]).unwrap_err();
        assert!(matches!(err, Error::DegenerateGrid(_)));
    }

    #[test]
    fn one_dimensional_transform_is_the_target() {
        let p = QuadraticPotential::new(vec![4.0], vec![0.0]).unwrap();
        let init = GridProduct::initial(&p, 513, GridInit::Uniform).unwrap();
        let vbar = vbar_on_grid(&p, 0, &init, VbarMethod::Auto).unwrap();
        for (g, v) in vbar.iter().enumerate() {
            assert_eq!(*v, p.value(&[init.marginals[0].node(g)]));
        }
        let t = apply_transform(&p, 0, &init, VbarMethod::Auto).unwrap();
        assert_abs_diff_eq!(t.integral(), 1.0, epsilon = 1e-10);
        assert_abs_diff_eq!(t.mean(), 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t.variance(), 0.25, epsilon = 1e-10);
    }

    #[test]
    fn transform_matches_gaussian_conditional_form() {
        let p = QuadraticPotential::new(vec![2.0, 1.0, 1.0, 2.0], vec![0.0, 0.0]).unwrap();
        let mut prod = GridProduct::initial(&p, 1025, GridInit::Gaussian).unwrap();
        let half = GRID_HALF_WIDTH;
        prod.marginals[1] = gaussian_grid(0.4, 0.5, half, 1025);
        let t = apply_transform(&p, 0, &prod, VbarMethod::Tensor).unwrap();
        assert_abs_diff_eq!(t.mean(), -0.2, epsilon = 1e-6);
        assert_abs_diff_eq!(t.variance(), 0.5, epsilon = 1e-6);
        assert_abs_diff_eq!(t.integral(), 1.0, epsilon = 1e-10);
        let sep = apply_transform(&p, 0, &prod, VbarMethod::Separable).unwrap();
        assert_abs_diff_eq!(sep.mean(), t.mean(), epsilon = 1e-9);
    }

    #[test]
    fn vbar_of_centered_cross_term_is_quadratic() {
        let p = QuadraticPotential::new(vec![2.0, 1.0, 1.0, 2.0], vec![0.0, 0.0]).unwrap();
        let mut prod = GridProduct::initial(&p, 1025, GridInit::Gaussian).unwrap();
        prod.marginals[1] = gaussian_grid(0.0, 0.5, GRID_HALF_WIDTH, 1025);
        let vbar = vbar_on_grid(&p, 0, &prod, VbarMethod::Tensor).unwrap();
        let nodes = prod.marginals[0].nodes();
        // V̄₁(x) = x² + E[x₂²] = x² + 0.5
        let c = vbar[512] - nodes[512] * nodes[512];
        assert_abs_diff_eq!(c, 0.5, epsilon = 1e-8);
        for (x, v) in nodes.iter().zip(&vbar) {
            assert_abs_diff_eq!(v - x * x, c, epsilon = 1e-8);
        }
    }

    #[test]
    fn gaussian_fixed_point_matches_closed_form() {
        let p = QuadraticPotential::new(vec![2.0, 1.0, 1.0, 2.0], vec![1.0, -1.0]).unwrap();
        let init = GridProduct::initial(&p, DEFAULT_GRID_POINTS, GridInit::Gaussian).unwrap();
        let fp = fixed_point_solve(&p, init, &FixedPointOptions::default()).unwrap();
        assert!(fp.report.converged);
        assert!(fp.report.max_final_residual() < 1e-8);
        let exact = gaussian_mfvi_solution(&p).unwrap();
        for (i, d) in fp.product.marginals.iter().enumerate() {
            assert_abs_diff_eq!(d.mean(), [1.0, -1.0][i], epsilon = 1e-6);
            assert_abs_diff_eq!(d.variance(), 0.5, epsilon = 1e-6);
            let w2 = w2_between_marginals(
                &Marginal::Grid(GridMarginal::new(d.clone()).unwrap()),
                &exact.marginals[i],
                4096,
            )
            .unwrap();
            assert!(w2 < 1e-6, "coordinate {i}: {w2}");
        }
    }

    #[test]
    fn one_dimensional_fixed_point_in_one_sweep() {
        let p = PerturbedQuadraticPotential::new(vec![1.0], vec![0.5], vec![1.0]).unwrap();
        let init = GridProduct::initial(&p, 513, GridInit::PointMass).unwrap();
        let fp = fixed_point_solve(&p, init, &FixedPointOptions::default()).unwrap();
        assert_eq!(fp.report.sweeps, 1);
        assert!(fp.report.max_final_residual() < 1e-12);
    }

    #[test]
    fn narrow_grid_detected() {
        let p = QuadraticPotential::new(vec![1.0], vec![0.0]).unwrap();
        let narrow = GridProduct {
            marginals: vec![GridDensity::from_unnormalized(-1.0, 1.0, vec![0.0; 101]).unwrap()],
        };
        let err = fixed_point_solve(&p, narrow, &FixedPointOptions::default()).unwrap_err();
        assert!(matches!(err, Error::GridTooNarrow { .. }));
        assert_eq!(err.exit_code(), 4);
    }

    #[test]
    fn non_convergence_reports_trace() {
        let p = PerturbedQuadraticPotential::new(vec![2.0, 1.0, 1.0, 2.0], vec![1.0, -1.0], vec![1.0, 1.0])
            .unwrap();
        let init = GridProduct::initial(&p, 257, GridInit::Uniform).unwrap();
        let opts = FixedPointOptions { max_iter: 2, ..Default::default() };
        match fixed_point_solve(&p, init, &opts) {
            Err(Error::NonConvergence { iterations, residual_trace, .. }) => {
                assert_eq!(iterations, 2);
                assert_eq!(residual_trace.len(), 2);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn separable_only_beyond_three_coordinates() {
        let p = crate::potential::PairwiseLogcoshPotential::new(
            (0..16).map(|k| if k % 5 == 0 { 1.0 } else { 0.0 }).collect(),
            vec![0.0; 4],
            (0..16).map(|k| if k % 5 == 0 { 0.0 } else { 0.1 }).collect(),
        )
        .unwrap();
        let init = GridProduct::initial(&p, 33, GridInit::Gaussian).unwrap();
        assert!(matches!(vbar_on_grid(&p, 0, &init, VbarMethod::Auto), Err(Error::Scale(_))));
    }

    #[test]
    fn sample_reference_moments() {
        let r = ReferenceProduct {
            provenance: Provenance::AnalyticGaussian,
            marginals: vec![Marginal::Gaussian { mean: 1.0, variance: 0.5 }],
        };
        let s = sample_reference(&r, 100_000, 3).unwrap();
        let row = s.row(0);
        let mean = row.iter().sum::<f64>() / 1e5;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (1e5 - 1.0);
        assert_abs_diff_eq!(mean, 1.0, epsilon = 0.01);
        assert_abs_diff_eq!(var, 0.5, epsilon = 0.01);
        assert_eq!(s, sample_reference(&r, 100_000, 3).unwrap());
    }

    #[test]
    fn oracle_document_round_trip() {
        let p = PerturbedQuadraticPotential::new(vec![2.0], vec![0.0], vec![1.0]).unwrap();
        let fp = fixed_point_solve(
            &p,
            GridProduct::initial(&p, 129, GridInit::Gaussian).unwrap(),
            &FixedPointOptions::default(),
        )
        .unwrap();
        let doc = OracleDocument {
            potential: p.fingerprint(),
            family: p.family().into(),
            reference: fp.product.to_reference().unwrap(),
            residual: Some(fp.report),
            init_sensitivity: None,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("oracle.json");
        doc.save(&path).unwrap();
        assert_eq!(OracleDocument::load(&path).unwrap(), doc);
    }
}
