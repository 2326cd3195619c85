//! Sampling-based validation of a potential's claimed constants.
//!
//! Probe points are drawn as `c + (2/√α) z` with `c` the minimizer and `z`
//! standard normal, from the `Check` role of the seed's stream.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::metrics::{grad_moment_check, ReferenceProduct};
use crate::oracle::sample_reference;
use crate::potential::Potential;
use crate::rng::{Role, RngStream};

pub const CHECK_POINTS: usize = 1000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckItem {
    pub name: String,
    pub passed: bool,
    /// Worst observed value of the checked quantity.
    pub observed: f64,
    /// Bound it was compared against.
    pub bound: f64,
    pub detail: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CheckReport {
    pub items: Vec<CheckItem>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.items.iter().all(|c| c.passed)
    }

    pub fn item(&self, name: &str) -> Option<&CheckItem> {
        self.items.iter().find(|c| c.name == name)
    }
}

struct Probe {
    rng: ChaCha8Rng,
    center: Vec<f64>,
    spread: f64,
}

impl Probe {
    fn new(spec: &dyn Potential, seed: u64, row: u64) -> Self {
        Self {
            rng: RngStream::new(seed).substream(0, Role::Check, row),
            center: spec.minimizer(),
            spread: 2.0 / spec.constants().alpha.sqrt(),
        }
    }

    fn point(&mut self) -> Vec<f64> {
        let spread = self.spread;
        self.center
            .iter()
            .map(|c| c + spread * self.rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn direction(&mut self) -> Vec<f64> {
        let mut u: Vec<f64> = (0..self.center.len()).map(|_| self.rng.sample(StandardNormal)).collect();
        let norm = u.iter().map(|v| v * v).sum::<f64>().sqrt();
        u.iter_mut().for_each(|v| *v /= norm);
        u
    }
}

fn grad(spec: &dyn Potential, x: &[f64]) -> Vec<f64> {
    let mut g = vec![0.0; x.len()];
    spec.gradient(x, &mut g);
    g
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|a| a * a).sum::<f64>().sqrt()
}

/// `|∂_i V − central difference|` against `1e-6·(1+|∂_i V|)`, `δ = 1e-4`.
pub fn gradient_check(spec: &dyn Potential, seed: u64) -> CheckItem {
    let mut probe = Probe::new(spec, seed, 0);
    let delta = 1e-4;
    let mut worst = 0.0f64;
    for _ in 0..CHECK_POINTS {
        let x = probe.point();
        for i in 0..spec.dim() {
            let mut up = x.clone();
            let mut down = x.clone();
            up[i] += delta;
            down[i] -= delta;
            let fd = (spec.value(&up) - spec.value(&down)) / (2.0 * delta);
            let g = spec.partial(i, &x);
            worst = worst.max((g - fd).abs() / (1.0 + g.abs()));
        }
    }
    CheckItem {
        name: "gradient".into(),
        passed: worst <= 1e-6,
        observed: worst,
        bound: 1e-6,
        detail: "relative central-difference error of partial derivatives".into(),
    }
}

/// Directional curvature `uᵀ(∇V(x+δu) − ∇V(x))/δ` must lie in `[α, L]` up to `1e-3`.
pub fn convexity_check(spec: &dyn Potential, seed: u64) -> Vec<CheckItem> {
    let c = spec.constants();
    let mut probe = Probe::new(spec, seed, 1);
    let delta = 1e-5;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for _ in 0..CHECK_POINTS {
        let x = probe.point();
        let u = probe.direction();
        let shifted: Vec<f64> = x.iter().zip(&u).map(|(a, b)| a + delta * b).collect();
        let g0 = grad(spec, &x);
        let g1 = grad(spec, &shifted);
        let curv = u.iter().zip(g1.iter().zip(&g0)).map(|(ui, (a, b))| ui * (a - b)).sum::<f64>() / delta;
        lo = lo.min(curv);
        hi = hi.max(curv);
    }
    vec![
        CheckItem {
            name: "strong_convexity".into(),
            passed: lo >= c.alpha - 1e-3,
            observed: lo,
            bound: c.alpha,
            detail: format!("smallest directional curvature {lo:.6} vs alpha = {}", c.alpha),
        },
        CheckItem {
            name: "smoothness".into(),
            passed: hi <= c.lip + 1e-3,
            observed: hi,
            bound: c.lip,
            detail: format!("largest directional curvature {hi:.6} vs L = {}", c.lip),
        },
    ]
}

/// Second difference of `∂_i V` along `e_i` against the third-derivative bound.
pub fn third_derivative_check(spec: &dyn Potential, seed: u64) -> CheckItem {
    let bound = spec.constants().third_bound;
    let mut probe = Probe::new(spec, seed, 2);
    let delta = 1e-3;
    let mut worst = 0.0f64;
    for _ in 0..CHECK_POINTS {
        let x = probe.point();
        for i in 0..spec.dim() {
            let mut up = x.clone();
            let mut down = x.clone();
            up[i] += delta;
            down[i] -= delta;
            let d3 = (spec.partial(i, &up) - 2.0 * spec.partial(i, &x) + spec.partial(i, &down))
                / (delta * delta);
            worst = worst.max(d3.abs());
        }
    }
    CheckItem {
        name: "third_derivative".into(),
        passed: worst <= bound + 1e-3,
        observed: worst,
        bound,
        detail: format!("largest |d^3 V/dx_i^3| {worst:.6} vs bound {bound}"),
    }
}

/// Worst ratio `‖φ(x)−φ(y)‖ / ‖x−y‖` of the gradient map `φ(x) = x − h∇V(x)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ContractionOutcome {
    pub step_size: f64,
    pub factor: f64,
    pub violations: usize,
    pub worst_ratio: f64,
}

pub fn contraction_check_at(spec: &dyn Potential, h: f64, pairs: usize, seed: u64) -> ContractionOutcome {
    let alpha = spec.constants().alpha;
    let factor = 1.0 - alpha * h;
    let mut probe = Probe::new(spec, seed, 3);
    let phi = |x: &[f64]| -> Vec<f64> {
        let g = grad(spec, x);
        x.iter().zip(&g).map(|(a, b)| a - h * b).collect()
    };
    let mut violations = 0;
    let mut worst_ratio = 0.0f64;
    for _ in 0..pairs {
        let x = probe.point();
        let y = probe.point();
        let (px, py) = (phi(&x), phi(&y));
        let d_in = norm(&x.iter().zip(&y).map(|(a, b)| a - b).collect::<Vec<_>>());
        let d_out = norm(&px.iter().zip(&py).map(|(a, b)| a - b).collect::<Vec<_>>());
        if d_out > factor * d_in + 1e-12 {
            violations += 1;
        }
        if d_in > 0.0 {
            worst_ratio = worst_ratio.max(d_out / d_in);
        }
    }
    ContractionOutcome { step_size: h, factor, violations, worst_ratio }
}

/// Contraction of `φ` at `h = 1/(α+L)`.
pub fn contraction_check(spec: &dyn Potential, seed: u64) -> CheckItem {
    let c = spec.constants();
    let out = contraction_check_at(spec, 1.0 / (c.alpha + c.lip), CHECK_POINTS, seed);
    CheckItem {
        name: "contraction".into(),
        passed: out.violations == 0,
        observed: out.worst_ratio,
        bound: out.factor,
        detail: format!(
            "{} of {CHECK_POINTS} pairs exceed factor 1 - alpha*h = {:.6} at h = {:.6}",
            out.violations, out.factor, out.step_size
        ),
    }
}

/// Gradient moments under `samples` draws from the reference.
pub fn moment_checks(
    spec: &dyn Potential,
    reference: &ReferenceProduct,
    samples: usize,
    seed: u64,
) -> Result<Vec<CheckItem>> {
    let c = spec.constants();
    let m = spec.dim() as f64;
    let draws = sample_reference(reference, samples, seed)?;
    let d = grad_moment_check(spec, &draws)?;
    let sq_bound = m * c.lip * c.lip / c.alpha;
    let mean_bound = 4.0 * sq_bound.sqrt() / (samples as f64).sqrt();
    let mut items = vec![
        CheckItem {
            name: "mean_gradient".into(),
            passed: d.mean_grad_norm <= mean_bound,
            observed: d.mean_grad_norm,
            bound: mean_bound,
            detail: format!("||mean grad|| {:.3e} vs 4 sqrt(m L^2/alpha)/sqrt(K) = {mean_bound:.3e}", d.mean_grad_norm),
        },
        CheckItem {
            name: "mean_squared_gradient".into(),
            passed: d.mean_sq_grad <= sq_bound * 1.05,
            observed: d.mean_sq_grad,
            bound: sq_bound,
            detail: format!(
                "mean ||grad||^2 {:.6} vs m L^2/alpha = {sq_bound:.6} (margin {:.1}%)",
                d.mean_sq_grad,
                100.0 * (1.0 - d.mean_sq_grad / sq_bound)
            ),
        },
    ];
    for (i, v) in d.coordinate_variances.iter().enumerate() {
        let bound = 1.0 / c.alpha;
        items.push(CheckItem {
            name: format!("variance_{i}"),
            passed: *v <= bound * 1.05,
            observed: *v,
            bound,
            detail: format!(
                "variance {v:.6} vs 1/alpha = {bound:.6} (margin {:.1}%)",
                100.0 * (1.0 - v / bound)
            ),
        });
    }
    Ok(items)
}

/// All constant checks, plus moment checks when a reference is given.
pub fn run_checks(
    spec: &dyn Potential,
    reference: Option<&ReferenceProduct>,
    samples: usize,
    seed: u64,
) -> Result<CheckReport> {
    let mut items = vec![gradient_check(spec, seed)];
    items.extend(convexity_check(spec, seed));
    items.push(third_derivative_check(spec, seed));
    items.push(contraction_check(spec, seed));
    if let Some(r) = reference {
        items.extend(moment_checks(spec, r, samples, seed)?);
    }
    Ok(CheckReport { items })
}
