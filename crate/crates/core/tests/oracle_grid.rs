use approx::assert_abs_diff_eq;

use pavi::metrics::{w2_between_marginals, Marginal};
use pavi::oracle::{
    fixed_point_solve, gaussian_mfvi_solution, init_sensitivity, vbar_on_grid, FixedPointOptions,
    GridInit, GridProduct, VbarMethod, DEFAULT_GRID_POINTS,
};
use pavi::potential::{PerturbedQuadraticPotential, QuadraticPotential};

fn solve(p: &dyn pavi::Potential, g: usize, method: VbarMethod) -> pavi::ReferenceProduct {
    let init = GridProduct::initial(p, g, GridInit::Gaussian).unwrap();
    let opts = FixedPointOptions { method, ..Default::default() };
    let fp = fixed_point_solve(p, init, &opts).unwrap();
    assert!(fp.report.converged);
    fp.product.to_reference().unwrap()
}

#[test]
fn gaussian_grid_oracle_matches_closed_form() {
    let p = QuadraticPotential::new(vec![2.0, 1.0, 1.0, 2.0], vec![1.0, -1.0]).unwrap();
    let grid = solve(&p, DEFAULT_GRID_POINTS, VbarMethod::Tensor);
    let exact = gaussian_mfvi_solution(&p).unwrap();
    for (g, e) in grid.marginals.iter().zip(&exact.marginals) {
        assert_abs_diff_eq!(g.mean(), e.mean(), epsilon = 1e-6);
        assert_abs_diff_eq!(g.variance(), e.variance(), epsilon = 1e-6);
        assert!(w2_between_marginals(g, e, 4096).unwrap() < 1e-6);
    }
}

#[test]
fn tensor_and_separable_quadrature_agree() {
    let p = PerturbedQuadraticPotential::new(
        vec![2.0, 0.4, 0.1, 0.4, 1.8, 0.3, 0.1, 0.3, 2.2],
        vec![0.5, -0.3, 0.2],
        vec![1.0, 0.5, 1.5],
    )
    .unwrap();
    let g = 129;
    let product = GridProduct::initial(&p, g, GridInit::Gaussian).unwrap();
    for i in 0..3 {
        let a = vbar_on_grid(&p, i, &product, VbarMethod::Tensor).unwrap();
        let b = vbar_on_grid(&p, i, &product, VbarMethod::Separable).unwrap();
        // V̄ is only defined up to a constant
        let shift = a[g / 2] - b[g / 2];
        for (x, y) in a.iter().zip(&b) {
            assert_abs_diff_eq!(x - shift, *y, epsilon = 1e-8);
        }
    }
}

#[test]
fn refinement_changes_output_at_second_order() {
    let p = PerturbedQuadraticPotential::new(vec![2.0, 0.5, 0.5, 2.0], vec![0.4, -0.4], vec![1.0, 1.0]).unwrap();
    let coarse = solve(&p, 65, VbarMethod::Tensor);
    let mid = solve(&p, 129, VbarMethod::Tensor);
    let fine = solve(&p, 257, VbarMethod::Tensor);
    let d1: f64 = (0..2).map(|i| (coarse.marginals[i].variance() - mid.marginals[i].variance()).abs()).sum();
    let d2: f64 = (0..2).map(|i| (mid.marginals[i].variance() - fine.marginals[i].variance()).abs()).sum();
    // changes are bounded by O(G^-2); trapezoid sums of smooth decaying
    // densities usually converge much faster
    assert!(d1 <= (65.0f64).powi(-2) && d2 <= (129.0f64).powi(-2), "{d1} {d2}");
    assert!(d2 <= d1 / 3.0 + 1e-12, "{d1} {d2}");
}

#[test]
fn point_mass_and_uniform_starts_agree() {
    let p = PerturbedQuadraticPotential::new(vec![2.0, 0.7, 0.7, 2.0], vec![0.5, -0.5], vec![1.5, 0.5]).unwrap();
    let s = init_sensitivity(&p, 257, &FixedPointOptions::default(), 1e-6).unwrap();
    assert!(s.agree, "{:?}", s.w2_between);
}

#[test]
fn grid_marginal_quantiles_are_monotone() {
    let p = PerturbedQuadraticPotential::new(vec![2.0, 0.5, 0.5, 2.0], vec![0.0, 0.0], vec![3.0, 3.0]).unwrap();
    let r = solve(&p, 257, VbarMethod::Auto);
    let Marginal::Grid(m) = &r.marginals[0] else { panic!("expected a grid marginal") };
    let mut last = f64::NEG_INFINITY;
    for k in 1..1000 {
        let q = m.quantile(k as f64 / 1000.0);
        assert!(q >= last);
        last = q;
    }
}
