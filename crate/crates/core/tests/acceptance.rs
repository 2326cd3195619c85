//! Acceptance suite: one line per criterion, non-zero exit if any fails.

use std::path::Path;
use std::process::Command;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use pavi::dynamics::{
    exact_mean_field_grad, run, stochastic_grad, trailing_window, ExactPath, RunConfig, RunContext,
};
use pavi::harness::check::{contraction_check_at, moment_checks};
use pavi::harness::fit::rate_fit;
use pavi::harness::report::NullSink;
use pavi::harness::sweep::run_sweep;
use pavi::metrics::{
    w2_1d_bruteforce, w2_1d_empirical, w2_product_empirical, w2_sq_empirical_vs_gaussian,
    w2_sq_per_coordinate, Marginal,
};
use pavi::oracle::{
    fixed_point_solve, gaussian_mfvi_solution, sample_reference, FixedPointOptions, GridInit,
    GridProduct, DEFAULT_GRID_POINTS,
};
use pavi::particles::{InitSpec, ParticleArray};
use pavi::potential::{
    PairwiseLogcoshPotential, PerturbedQuadraticPotential, Potential, QuadraticPotential,
};
use pavi::rng::RngStream;
use pavi::{Algorithm, Schedule};

struct Outcome {
    passed: bool,
    detail: String,
}

type Criterion = fn() -> Outcome;

fn outcome(passed: bool, detail: String) -> Outcome {
    Outcome { passed, detail }
}

fn gaussian_target() -> QuadraticPotential {
    QuadraticPotential::new(vec![2.0, 1.0, 1.0, 2.0], vec![1.0, -1.0]).unwrap()
}

fn perturbed_target() -> PerturbedQuadraticPotential {
    PerturbedQuadraticPotential::new(vec![2.0, 0.5, 0.5, 2.0], vec![0.0, 0.0], vec![1.0, 1.0]).unwrap()
}

fn corollary_config(particles: usize, iterations: usize, seed: u64, metrics_every: usize) -> RunConfig {
    RunConfig {
        algorithm: Algorithm::Pavi,
        schedule: Schedule::Corollary,
        step_size: None,
        batch: None,
        iterations,
        particles,
        seed,
        metrics_every: Some(metrics_every),
        init: InitSpec::StandardNormal,
        checkpoint_every: None,
    }
}

fn random_atoms(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-5.0..5.0)).collect()
}

fn sorted_coupling_optimality() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst = 0.0f64;
    for _ in 0..500 {
        let n = rng.random_range(2..=6);
        let a = random_atoms(&mut rng, n);
        let b = random_atoms(&mut rng, n);
        let fast = w2_1d_empirical(&a, &b).unwrap();
        let brute = w2_1d_bruteforce(&a, &b).unwrap();
        worst = worst.max((fast - brute).abs());
    }
    outcome(worst <= 1e-12, format!("500 instances, max |sorted - brute force| = {worst:.2e}"))
}

fn w2_additivity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let m = rng.random_range(1..=5);
        let n = rng.random_range(2..=40);
        let x = ParticleArray::from_rows(m, n, random_atoms(&mut rng, m * n)).unwrap();
        let y = ParticleArray::from_rows(m, n, random_atoms(&mut rng, m * n)).unwrap();
        let total = w2_product_empirical(&x.empirical(), &y.empirical()).unwrap();
        let parts: f64 = (0..m)
            .map(|i| w2_1d_empirical(x.row(i), y.row(i)).unwrap().powi(2))
            .sum();
        let per = w2_sq_per_coordinate(&x.empirical(), &y.empirical()).unwrap().iter().sum::<f64>();
        worst = worst.max((total * total - parts).abs()).max((per - parts).abs());
    }
    outcome(worst <= 1e-12, format!("200 instances, max |W2^2 - sum of marginal W2^2| = {worst:.2e}"))
}

fn three_by_four() -> ParticleArray {
    ParticleArray::from_rows(
        3,
        4,
        vec![-1.2, 0.3, 0.9, 2.1, 0.5, -0.7, 1.4, -2.0, 0.0, 1.1, -0.4, 0.8],
    )
    .unwrap()
}

fn unbiasedness_targets() -> Vec<Box<dyn Potential>> {
    vec![
        Box::new(
            PairwiseLogcoshPotential::new(
                vec![2.0, 0.3, 0.0, 0.3, 2.0, 0.2, 0.0, 0.2, 2.0],
                vec![0.0; 3],
                vec![0.0, 1.0, 0.5, 1.0, 0.0, 0.8, 0.5, 0.8, 0.0],
            )
            .unwrap(),
        ),
        Box::new(
            PerturbedQuadraticPotential::new(
                vec![2.0, 0.3, 0.0, 0.3, 2.0, 0.2, 0.0, 0.2, 2.0],
                vec![0.5, -0.5, 0.0],
                vec![1.0, 0.5, 2.0],
            )
            .unwrap(),
        ),
    ]
}

fn resampled_grads(spec: &dyn Potential, x: &ParticleArray, batch: usize, i: usize, probe: f64, reps: u64, seed: u64) -> Vec<f64> {
    let streams = RngStream::new(seed);
    (0..reps)
        .map(|k| {
            let z = x.empirical().sample_product(batch, &streams, k).unwrap();
            stochastic_grad(spec, &z, i, probe).unwrap()
        })
        .collect()
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mu = v.iter().sum::<f64>() / n;
    (mu, v.iter().map(|a| (a - mu) * (a - mu)).sum::<f64>() / (n - 1.0))
}

fn stochastic_gradient_unbiasedness() -> Outcome {
    let x = three_by_four();
    let mut worst_z = 0.0f64;
    let mut checked = 0;
    for spec in unbiasedness_targets() {
        for i in 0..3 {
            for (p, &probe) in [-1.0, 0.25, 1.7].iter().enumerate() {
                let exact = exact_mean_field_grad(spec.as_ref(), &x, i, probe, ExactPath::Exhaustive).unwrap();
                let seed = 1000 + 10 * i as u64 + p as u64;
                let draws = resampled_grads(spec.as_ref(), &x, 1, i, probe, 100_000, seed);
                let (mu, var) = mean_var(&draws);
                let se = (var / draws.len() as f64).sqrt();
                let z = (mu - exact).abs() / se;
                if z > worst_z {
                    worst_z = z;
                }
                checked += 1;
            }
        }
    }
    outcome(
        worst_z <= 4.0,
        format!("{checked} (potential, i, probe) cases, 1e5 resamplings each, max |z| = {worst_z:.2}"),
    )
}

fn variance_scaling() -> Outcome {
    let x = three_by_four();
    let targets = unbiasedness_targets();
    let spec = targets[0].as_ref();
    let v1 = mean_var(&resampled_grads(spec, &x, 1, 0, 0.25, 100_000, 7)).1;
    let v16 = mean_var(&resampled_grads(spec, &x, 16, 0, 0.25, 100_000, 8)).1;
    let ratio = v1 / v16;
    outcome(
        (10.7..=24.0).contains(&ratio),
        format!("var(B=1)/var(B=16) = {ratio:.3} over 1e5 resamplings"),
    )
}

fn contraction_map() -> Outcome {
    let quad3 = QuadraticPotential::new(
        vec![3.0, 0.5, -0.4, 0.5, 2.0, 0.3, -0.4, 0.3, 1.5],
        vec![0.2, -0.1, 0.4],
    )
    .unwrap();
    let pert3 = PerturbedQuadraticPotential::new(
        vec![3.0, 0.5, -0.4, 0.5, 2.0, 0.3, -0.4, 0.3, 1.5],
        vec![0.2, -0.1, 0.4],
        vec![1.0, 2.0, 0.5],
    )
    .unwrap();
    let quad2 = gaussian_target();
    let pert2 = perturbed_target();
    let specs: [(&str, &dyn Potential); 4] = [
        ("quadratic 3-d", &quad3),
        ("perturbed 3-d", &pert3),
        ("quadratic 2-d", &quad2),
        ("perturbed 2-d", &pert2),
    ];
    let mut total = 0;
    let mut parts = Vec::new();
    for (name, spec) in specs {
        let c = spec.constants();
        let out = contraction_check_at(spec, 1.0 / (c.alpha + c.lip), 1000, 31);
        total += out.violations;
        parts.push(format!("{name}: worst ratio {:.4} vs {:.4}", out.worst_ratio, out.factor));
    }
    outcome(total == 0, format!("{total} violations over 4x1000 pairs ({})", parts.join("; ")))
}

fn gaussian_end_to_end() -> Outcome {
    let spec = gaussian_target();
    let reference = gaussian_mfvi_solution(&spec).unwrap();
    let seeds = 16;
    let mut steady = Vec::new();
    let mut averaged: Vec<(f64, f64)> = Vec::new();
    let mut h = 0.0;
    for s in 0..seeds {
        let cfg = corollary_config(2048, 4000, 1 + s, 1);
        let ctx = RunContext { reference: Some(&reference), ..Default::default() };
        let report = run(&spec, &cfg, ctx, &mut NullSink).unwrap();
        h = report.metadata.schedule.step_size;
        let series = report.w2_series();
        let values: Vec<f64> = series.iter().map(|p| p.1).collect();
        steady.push(trailing_window(&values).0);
        if averaged.is_empty() {
            averaged = series.iter().map(|p| (p.0, 0.0)).collect();
        }
        for (acc, p) in averaged.iter_mut().zip(&series) {
            acc.1 += p.1 / seeds as f64;
        }
    }
    let mean = steady.iter().sum::<f64>() / seeds as f64;
    let alpha = spec.constants().alpha;
    let bound = 1.0 - alpha * h / 8.0;
    let fit = rate_fit(&averaged).unwrap();
    let rate_ok = fit.rate.is_some_and(|r| r <= bound);
    outcome(
        mean <= 0.15 && rate_ok,
        format!(
            "N=2048, h={h:.5}, 16 seeds: steady-state W2 {mean:.4} (<= 0.15), rate {} (<= {bound:.5})",
            fit.rate.map_or("unavailable".to_string(), |r| format!("{r:.5}"))
        ),
    )
}

fn n_scaling() -> Outcome {
    let spec = gaussian_target();
    let reference = gaussian_mfvi_solution(&spec).unwrap();
    let base = corollary_config(64, 4000, 1, 10);
    let result = run_sweep(&spec, &base, &[64, 256, 1024, 4096], 16, &reference).unwrap();
    let levels: Vec<String> = result
        .points
        .iter()
        .map(|p| format!("N={}: {:.4}", p.particles, p.steady_state_mean))
        .collect();
    let slope = result.slope.slope;
    outcome(
        result.strictly_decreasing && (-0.6..=-0.15).contains(&slope),
        format!("{}; slope {slope:.3} in [-0.6, -0.15]", levels.join(", ")),
    )
}

fn oracle_agreement() -> Outcome {
    let spec = perturbed_target();
    let init = GridProduct::initial(&spec, DEFAULT_GRID_POINTS, GridInit::Gaussian).unwrap();
    let fp = fixed_point_solve(&spec, init, &FixedPointOptions::default()).unwrap();
    let residual = fp.report.max_final_residual();
    let reference = fp.product.to_reference().unwrap();
    let mut steady = Vec::new();
    for s in 0..16 {
        let cfg = corollary_config(2048, 2000, 1 + s, 10);
        let ctx = RunContext { reference: Some(&reference), ..Default::default() };
        let report = run(&spec, &cfg, ctx, &mut NullSink).unwrap();
        let values: Vec<f64> = report.w2_series().iter().map(|p| p.1).collect();
        steady.push(trailing_window(&values).0);
    }
    let mean = steady.iter().sum::<f64>() / steady.len() as f64;
    outcome(
        residual < 1e-8 && fp.report.converged && mean <= 0.1,
        format!("oracle residual {residual:.2e} after {} sweeps; PAVI N=2048 steady-state W2 {mean:.4} (<= 0.1)", fp.report.sweeps),
    )
}

fn moment_identities() -> Outcome {
    let pert = perturbed_target();
    let init = GridProduct::initial(&pert, DEFAULT_GRID_POINTS, GridInit::Gaussian).unwrap();
    let grid_ref = fixed_point_solve(&pert, init, &FixedPointOptions::default())
        .unwrap()
        .product
        .to_reference()
        .unwrap();
    let gauss = gaussian_target();
    let gauss_ref = gaussian_mfvi_solution(&gauss).unwrap();
    let mut failures = Vec::new();
    let mut count = 0;
    for (name, spec, reference) in [
        ("perturbed", &pert as &dyn Potential, &grid_ref),
        ("gaussian", &gauss as &dyn Potential, &gauss_ref),
    ] {
        for item in moment_checks(spec, reference, 100_000, 5).unwrap() {
            count += 1;
            if !item.passed {
                failures.push(format!("{name}/{}: {}", item.name, item.detail));
            }
        }
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            format!("{count} moment bounds hold with K=1e5 oracle samples")
        } else {
            failures.join("; ")
        },
    )
}

fn empirical_concentration() -> Outcome {
    let spec = gaussian_target();
    let reference = gaussian_mfvi_solution(&spec).unwrap();
    let m = 2.0;
    let mut normalized = Vec::new();
    for &n in &[64usize, 256, 1024, 4096] {
        let mut acc = 0.0;
        for s in 0..32u64 {
            let y = sample_reference(&reference, n, 9000 + s).unwrap();
            for (i, marginal) in reference.marginals.iter().enumerate() {
                let Marginal::Gaussian { mean, variance } = marginal else { unreachable!() };
                acc += w2_sq_empirical_vs_gaussian(y.row(i), *mean, *variance).unwrap();
            }
        }
        let w2sq = acc / 32.0;
        normalized.push(w2sq * n as f64 / (m * (n as f64).ln()));
    }
    let hi = normalized.iter().copied().fold(f64::MIN, f64::max);
    let lo = normalized.iter().copied().fold(f64::MAX, f64::min);
    outcome(
        hi / lo <= 4.0,
        format!(
            "W2^2 N/(m log N) = [{}], spread {:.3} (<= 4)",
            normalized.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", "),
            hi / lo
        ),
    )
}

fn write_config(dir: &Path, name: &str, body: &str) -> std::path::PathBuf {
    let p = dir.join(name);
    std::fs::write(&p, body).unwrap();
    p
}

fn guard_config(precision: &str, run: &str) -> String {
    format!(
        "[potential]\nfamily = \"quadratic\"\nprecision = {precision}\nmean = [0.0, 0.0]\n\n[run]\n{run}\n\n[reference]\nkind = \"none\"\n"
    )
}

fn guard_enforcement() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_pavi");
    // α = 1, L = 3: bounds 0.5 and B/36; α = 1, L = 2: bounds 2/3 and B/16
    let cases = [
        ("batch bound", "[3.0, 0.0, 0.0, 1.0]", "schedule = \"explicit\"\nstep_size = 0.05\nbatch = 1\nparticles = 8\niterations = 5", "0.027778"),
        ("convexity bound", "[3.0, 0.0, 0.0, 1.0]", "schedule = \"explicit\"\nstep_size = 0.6\nbatch = 100\nparticles = 8\niterations = 5", "0.500000"),
        ("zero step", "[3.0, 0.0, 0.0, 1.0]", "schedule = \"explicit\"\nstep_size = 0.0\nbatch = 1\nparticles = 8\niterations = 5", "0.027778"),
        ("N = 1", "[3.0, 0.0, 0.0, 1.0]", "schedule = \"explicit\"\nstep_size = 0.01\nbatch = 1\nparticles = 1\niterations = 5", "0.027778"),
        ("boundary equality", "[2.0, 0.0, 0.0, 1.0]", "schedule = \"explicit\"\nstep_size = 0.0625\nbatch = 1\nparticles = 8\niterations = 5", "0.062500"),
    ];
    let mut failures = Vec::new();
    for (k, (name, precision, run, needle)) in cases.iter().enumerate() {
        let cfg = write_config(dir.path(), &format!("guard{k}.toml"), &guard_config(precision, run));
        let out = Command::new(bin)
            .args(["run", "--config"])
            .arg(&cfg)
            .arg("--out")
            .arg(dir.path().join(format!("o{k}")))
            .output()
            .unwrap();
        let stderr = String::from_utf8_lossy(&out.stderr);
        let both = stderr.contains("2/(alpha+L)") && stderr.contains("B*alpha/(4L^2)") && stderr.contains(needle);
        if out.status.code() != Some(2) || !both {
            failures.push(format!("{name}: exit {:?}, stderr {stderr:?}", out.status.code()));
        }
    }
    // just inside the boundary is accepted
    let ok_cfg = write_config(
        dir.path(),
        "inside.toml",
        &guard_config("[2.0, 0.0, 0.0, 1.0]", "schedule = \"explicit\"\nstep_size = 0.0624\nbatch = 1\nparticles = 8\niterations = 5"),
    );
    let ok = Command::new(bin).args(["run", "--config"]).arg(&ok_cfg).arg("--out").arg(dir.path().join("inside")).output().unwrap();
    if ok.status.code() != Some(0) {
        failures.push(format!("h just below the bound rejected: {}", String::from_utf8_lossy(&ok.stderr)));
    }
    outcome(
        failures.is_empty(),
        if failures.is_empty() {
            "5 violating configs exit 2 with both bounds printed; h just below the bound runs".into()
        } else {
            failures.join("; ")
        },
    )
}

fn determinism_across_threads() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let bin = env!("CARGO_BIN_EXE_pavi");
    let cfg = write_config(
        dir.path(),
        "det.toml",
        "[potential]\nfamily = \"perturbed_quadratic\"\nprecision = [2.0, 0.5, 0.1, 0.5, 2.0, 0.3, 0.1, 0.3, 1.5]\nmean = [0.5, -0.5, 0.0]\nweights = [1.0, 1.0, 0.5]\n\n[run]\nparticles = 256\niterations = 300\nmetrics_every = 3\nseed = 99\n\n[reference]\nkind = \"oracle\"\n\n[oracle]\ngrid_points = 129\n",
    );
    let mut files = Vec::new();
    for threads in [1, 4, 8] {
        let out_dir = dir.path().join(format!("t{threads}"));
        let status = Command::new(bin)
            .args(["run", "--config"])
            .arg(&cfg)
            .args(["--threads", &threads.to_string(), "--out"])
            .arg(&out_dir)
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(false, format!("run failed: {}", String::from_utf8_lossy(&status.stderr)));
        }
        files.push(std::fs::read(out_dir.join("metrics.jsonl")).unwrap());
    }
    let same = files.windows(2).all(|w| w[0] == w[1]);
    outcome(
        same && !files[0].is_empty(),
        format!("metrics.jsonl ({} bytes) identical for 1, 4 and 8 threads: {same}", files[0].len()),
    )
}

fn main() {
    let criteria: [(&str, Criterion); 12] = [
        ("sorted-coupling optimality", sorted_coupling_optimality),
        ("W2 additivity", w2_additivity),
        ("stochastic-gradient unbiasedness", stochastic_gradient_unbiasedness),
        ("variance proportional to 1/B", variance_scaling),
        ("contraction map", contraction_map),
        ("Gaussian end-to-end", gaussian_end_to_end),
        ("N-scaling sweep", n_scaling),
        ("grid oracle agreement", oracle_agreement),
        ("moment identities", moment_identities),
        ("empirical-measure concentration", empirical_concentration),
        ("guard enforcement", guard_enforcement),
        ("determinism across thread counts", determinism_across_threads),
    ];
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let out = check();
        let tag = if out.passed { "PASS" } else { "FAIL" };
        if !out.passed {
            failed += 1;
        }
        println!(
            "acceptance {:>2} [{tag}] {name} ({:.1}s): {}",
            k + 1,
            start.elapsed().as_secs_f64(),
            out.detail
        );
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
