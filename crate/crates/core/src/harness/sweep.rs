//! Particle-count sweeps under the `N^{1/4}` schedule.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{run, trailing_window, RunConfig, RunContext, Schedule};
use crate::error::{Error, Result};
use crate::harness::fit::{loglog_slope, SlopeFit};
use crate::harness::report::NullSink;
use crate::metrics::ReferenceProduct;
use crate::potential::Potential;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub particles: usize,
    pub step_size: f64,
    pub batch: usize,
    /// Seed-averaged trailing-window W2.
    pub steady_state_mean: f64,
    /// Standard error of that average across seeds.
    pub steady_state_se: f64,
    /// Trailing-window W2 of each replication, in seed order.
    pub per_seed: Vec<f64>,
    /// Last recorded W2 of each replication, in seed order.
    pub final_w2: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepResult {
    pub points: Vec<SweepPoint>,
    /// Slope of `log W2` against `log N`.
    pub slope: SlopeFit,
    pub strictly_decreasing: bool,
}

/// Runs `replications` seeds (`base.seed`, `base.seed + 1`, ...) at every `N`
/// with the corollary schedule and fits the log-log slope of the
/// seed-averaged steady state.
pub fn run_sweep(
    spec: &dyn Potential,
    base: &RunConfig,
    particles: &[usize],
    replications: usize,
    reference: &ReferenceProduct,
) -> Result<SweepResult> {
    let mut ns = particles.to_vec();
    ns.sort_unstable();
    if ns.windows(2).any(|w| w[0] == w[1]) {
        return Err(Error::Config("sweep particle counts must be distinct".into()));
    }
    if ns.len() < 3 {
        return Err(Error::Config(format!(
            "sweep needs at least 3 distinct particle counts, got {}",
            ns.len()
        )));
    }
    if replications == 0 {
        return Err(Error::Config("sweep needs at least one replication".into()));
    }
    let jobs: Vec<(usize, usize)> = ns
        .iter()
        .flat_map(|&n| (0..replications).map(move |r| (n, r)))
        .collect();
    let outcomes = jobs
        .par_iter()
        .map(|&(n, r)| {
            let cfg = RunConfig {
                schedule: Schedule::Corollary,
                particles: n,
                seed: base.seed.wrapping_add(r as u64),
                checkpoint_every: None,
                ..base.clone()
            };
            let ctx = RunContext { reference: Some(reference), ..Default::default() };
            let report = run(spec, &cfg, ctx, &mut NullSink)?;
            let series: Vec<f64> = report.w2_series().into_iter().map(|p| p.1).collect();
            let (tail, _) = trailing_window(&series);
            Ok((report.metadata.schedule, tail, *series.last().unwrap_or(&f64::NAN)))
        })
        .collect::<Result<Vec<_>>>()?;

    let points: Vec<SweepPoint> = ns
        .iter()
        .enumerate()
        .map(|(k, &n)| {
            let chunk = &outcomes[k * replications..(k + 1) * replications];
            let per_seed: Vec<f64> = chunk.iter().map(|o| o.1).collect();
            let mean = per_seed.iter().sum::<f64>() / replications as f64;
            let se = if replications > 1 {
                let var = per_seed.iter().map(|v| (v - mean).powi(2)).sum::<f64>()
                    / (replications - 1) as f64;
                (var / replications as f64).sqrt()
            } else {
                0.0
            };
            SweepPoint {
                particles: n,
                step_size: chunk[0].0.step_size,
                batch: chunk[0].0.batch,
                steady_state_mean: mean,
                steady_state_se: se,
                per_seed,
                final_w2: chunk.iter().map(|o| o.2).collect(),
            }
        })
        .collect();
    let x: Vec<f64> = points.iter().map(|p| p.particles as f64).collect();
    let y: Vec<f64> = points.iter().map(|p| p.steady_state_mean).collect();
    let slope = loglog_slope(&x, &y)?;
    let strictly_decreasing = y.windows(2).all(|w| w[1] < w[0]);
    Ok(SweepResult { points, slope, strictly_decreasing })
}
