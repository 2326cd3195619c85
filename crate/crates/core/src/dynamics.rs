//! Particle updates for mean-field Langevin dynamics.
//!
//! One PAVI iteration draws `B` context columns from the product empirical
//! measure `q_X`, averages `∂_i V` over those contexts to estimate the
//! mean-field drift of row `i`, and moves every particle by an
//! Euler–Maruyama step:
//!
//! ```text
//! X'[i, j] = X[i, j] − h · (1/B) Σ_b ∂_i V(z_b with coordinate i set to X[i, j]) + √(2h) ξ[i, j]
//! ```
//!
//! The exact variant replaces the batch average by the full expectation over
//! `q_X^{-i}`. Random draws are addressed by `(seed, iteration, role, row)`:
//! contexts first, then one noise row per coordinate, so results do not
//! depend on how rows are scheduled across threads.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::harness::fit::rate_fit;
use crate::harness::report::{ConvergenceReport, Record, RecordSink, RunMetadata, Summary};
use crate::metrics::{w2_sq_to_reference_per_coordinate, ReferenceProduct};
use crate::particles::{init_particles, ContextBatch, InitSpec, ParticleArray, Snapshot};
use crate::potential::Potential;
use crate::rng::{Role, RngStream};

/// Largest `N^{m-1}` accepted by the exhaustive mean-field gradient.
pub const EXHAUSTIVE_LIMIT: f64 = 1e6;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Explicit,
    /// `h = 1/(L N^{1/4})`, `B = ⌈1/(Lh)⌉`.
    #[default]
    Corollary,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    /// Stochastic mean-field gradients from `B` product-measure contexts.
    #[default]
    Pavi,
    /// Exact mean-field gradients.
    Exact,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub algorithm: Algorithm,
    #[serde(default)]
    pub schedule: Schedule,
    /// Step size `h`; required for the explicit schedule.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub step_size: Option<f64>,
    /// Batch size `B`; required for the explicit schedule with PAVI.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch: Option<usize>,
    /// Number of iterations `T`.
    pub iterations: usize,
    /// Number of particles `N`.
    pub particles: usize,
    #[serde(default)]
    pub seed: u64,
    /// Recording cadence; defaults to `max(1, T/200)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub metrics_every: Option<usize>,
    #[serde(default)]
    pub init: InitSpec,
    /// Checkpoint cadence in iterations.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub checkpoint_every: Option<usize>,
}

impl RunConfig {
    pub fn metrics_every(&self) -> usize {
        self.metrics_every.unwrap_or((self.iterations / 200).max(1)).max(1)
    }
}

/// Both step-size bounds of the convergence guarantee.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GuardBounds {
    /// `2/(α+L)`.
    pub convexity_bound: f64,
    /// `Bα/(4L²)`; infinite for exact gradients.
    pub batch_bound: f64,
    pub satisfied: bool,
}

impl GuardBounds {
    pub fn new(alpha: f64, lip: f64, batch: Option<usize>, h: f64) -> Self {
        let convexity_bound = 2.0 / (alpha + lip);
        let batch_bound = match batch {
            Some(b) => b as f64 * alpha / (4.0 * lip * lip),
            None => f64::INFINITY,
        };
        let satisfied = h > 0.0 && h < convexity_bound && h < batch_bound;
        Self { convexity_bound, batch_bound, satisfied }
    }
}

/// Step size and batch in effect for a run.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResolvedSchedule {
    pub step_size: f64,
    pub batch: usize,
    pub guard: GuardBounds,
}

/// `(h, B) = (1/(L N^{1/4}), ⌈N^{1/4}⌉)`.
pub fn corollary_schedule(lip: f64, particles: usize) -> Result<(f64, usize)> {
    if !(lip > 0.0 && lip.is_finite()) {
        return Err(Error::Config(format!("L must be positive, got {lip}")));
    }
    if particles < 2 {
        return Err(Error::Config(format!("N >= 2 required, got N = {particles}")));
    }
    let root = (particles as f64).sqrt().sqrt();
    let h = 1.0 / (lip * root);
    // exact fourth powers must not round up past their root
    let r = root.round();
    let batch = if (r as u128).pow(4) == particles as u128 { r as usize } else { root.ceil() as usize };
    Ok((h, batch))
}

/// Checks `N ≥ 2`, and for the explicit schedule the step-size guard
/// `0 < h < min{2/(α+L), Bα/(4L²)}` with equality rejected.
pub fn validate_config(spec: &dyn Potential, cfg: &RunConfig) -> Result<ResolvedSchedule> {
    let c = spec.constants();
    c.validate()?;
    let too_few = |bounds: &str| {
        Error::Config(format!(
            "N >= 2 required (the convergence guarantee assumes at least two particles), got N = {}{bounds}",
            cfg.particles
        ))
    };
    if cfg.particles < 2 && cfg.schedule == Schedule::Corollary {
        return Err(too_few(""));
    }
    if cfg.algorithm == Algorithm::Exact && !spec.has_conditional_mean() {
        let terms = (cfg.particles as f64).powi(spec.dim() as i32 - 1);
        if terms > EXHAUSTIVE_LIMIT {
            return Err(Error::Scale(format!(
                "exact mean-field gradients need {terms:.3e} terms per evaluation (limit {EXHAUSTIVE_LIMIT:e}); use the pavi algorithm"
            )));
        }
    }
    let guard_batch = |b: usize| match cfg.algorithm {
        Algorithm::Pavi => Some(b),
        Algorithm::Exact => None,
    };
    match cfg.schedule {
        Schedule::Corollary => {
            let (h, batch) = corollary_schedule(c.lip, cfg.particles)?;
            Ok(ResolvedSchedule {
                step_size: h,
                batch,
                guard: GuardBounds::new(c.alpha, c.lip, guard_batch(batch), h),
            })
        }
        Schedule::Explicit => {
            let h = cfg
                .step_size
                .ok_or_else(|| Error::Config("explicit schedule requires `step_size`".into()))?;
            let batch = match (cfg.algorithm, cfg.batch) {
                (_, Some(0)) => return Err(Error::Config("batch size must be at least 1".into())),
                (_, Some(b)) => b,
                (Algorithm::Exact, None) => 1,
                (Algorithm::Pavi, None) => {
                    return Err(Error::Config("explicit schedule requires `batch`".into()))
                }
            };
            let guard = GuardBounds::new(c.alpha, c.lip, guard_batch(batch), h);
            let bounds = format!(
                "2/(alpha+L) = {:.6}, B*alpha/(4L^2) = {:.6} (alpha = {}, L = {}, B = {})",
                guard.convexity_bound, guard.batch_bound, c.alpha, c.lip, batch
            );
            if cfg.particles < 2 {
                return Err(too_few(&format!("; bounds: {bounds}")));
            }
            if !(h > 0.0 && h.is_finite()) {
                return Err(Error::Config(format!(
                    "step size h must be positive, got h = {h}; bounds: {bounds}"
                )));
            }
            if h >= guard.convexity_bound {
                return Err(Error::Config(format!(
                    "step size h = {h} violates h < 2/(alpha+L); bounds: {bounds}"
                )));
            }
            if h >= guard.batch_bound {
                return Err(Error::Config(format!(
                    "step size h = {h} violates h < B*alpha/(4L^2); bounds: {bounds}"
                )));
            }
            Ok(ResolvedSchedule { step_size: h, batch, guard })
        }
    }
}

/// `(1/B) Σ_b ∂_i V(z_b with coordinate i replaced by x)`.
pub fn stochastic_grad(spec: &dyn Potential, contexts: &ContextBatch, i: usize, x: f64) -> Result<f64> {
    if i >= spec.dim() || contexts.dim() != spec.dim() {
        return Err(Error::Usage(format!(
            "coordinate {i} or context dimension {} incompatible with dimension {}",
            contexts.dim(),
            spec.dim()
        )));
    }
    let mut point = vec![0.0; spec.dim()];
    let mut acc = 0.0;
    for b in 0..contexts.batch() {
        point.copy_from_slice(contexts.column(b));
        point[i] = x;
        acc += spec.partial(i, &point);
    }
    let g = acc / contexts.batch() as f64;
    if !g.is_finite() {
        return Err(Error::Evaluation {
            coordinate: i,
            detail: format!("stochastic gradient {g} at x = {x}"),
        });
    }
    Ok(g)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ExactPath {
    /// Closed form when available, otherwise exhaustive.
    #[default]
    Auto,
    Capability,
    Exhaustive,
}

/// `V̄_i'(x, q_X^{-i})`, the exact mean-field gradient under the product
/// empirical measure of the other rows.
pub fn exact_mean_field_grad(
    spec: &dyn Potential,
    particles: &ParticleArray,
    i: usize,
    x: f64,
    path: ExactPath,
) -> Result<f64> {
    let m = spec.dim();
    if i >= m || particles.dim() != m {
        return Err(Error::Usage(format!("coordinate {i} out of range for dimension {m}")));
    }
    let use_capability = match path {
        ExactPath::Capability => true,
        ExactPath::Exhaustive => false,
        ExactPath::Auto => spec.has_conditional_mean(),
    };
    if use_capability {
        let means = other_means(particles, i);
        return crate::potential::conditional_mean_gradient(spec, i, x, &means);
    }
    exhaustive_grad(spec, particles, i, x)
}

fn other_means(particles: &ParticleArray, i: usize) -> Vec<f64> {
    let all = particles.empirical().coordinate_means();
    all.into_iter().enumerate().filter(|(k, _)| *k != i).map(|(_, v)| v).collect()
}

fn exhaustive_grad(spec: &dyn Potential, particles: &ParticleArray, i: usize, x: f64) -> Result<f64> {
    let m = spec.dim();
    let n = particles.count();
    let terms = (n as f64).powi(m as i32 - 1);
    if terms > EXHAUSTIVE_LIMIT {
        return Err(Error::Scale(format!(
            "exhaustive mean-field gradient needs {terms:.3e} terms (limit {EXHAUSTIVE_LIMIT:e}); use the pavi algorithm"
        )));
    }
    let others: Vec<usize> = (0..m).filter(|&k| k != i).collect();
    let mut idx = vec![0usize; others.len()];
    let mut point = vec![0.0; m];
    point[i] = x;
    let mut acc = 0.0;
    let mut count = 0usize;
    'outer: loop {
        for (slot, &k) in others.iter().enumerate() {
            point[k] = particles.get(k, idx[slot]);
        }
        acc += spec.partial(i, &point);
        count += 1;
        let mut slot = 0;
        loop {
            if slot == others.len() {
                break 'outer;
            }
            idx[slot] += 1;
            if idx[slot] < n {
                break;
            }
            idx[slot] = 0;
            slot += 1;
        }
    }
    let g = acc / count as f64;
    if !g.is_finite() {
        return Err(Error::Evaluation {
            coordinate: i,
            detail: format!("exact mean-field gradient {g} at x = {x}"),
        });
    }
    Ok(g)
}

/// The `N(0, I_N)` noise row `ξ_n^{i,:}`.
pub fn noise_row(streams: &RngStream, iteration: u64, i: usize, count: usize) -> Vec<f64> {
    let mut rng = streams.substream(iteration, Role::Noise, i as u64);
    (0..count).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

#[doc(hidden)]
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum NoiseMode {
    #[default]
    Brownian,
    /// Drops the diffusion term; only for exposing the drift in tests.
    Zero,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct StepStats {
    /// Root mean square of the drift estimates over all entries.
    pub grad_rms: f64,
}

enum Drift<'a> {
    Contexts(&'a ContextBatch),
    Means(&'a [f64]),
    Exhaustive,
}

fn update_rows(
    spec: &dyn Potential,
    x: &ParticleArray,
    h: f64,
    streams: &RngStream,
    iteration: u64,
    drift: Drift<'_>,
    noise: NoiseMode,
) -> Result<(ParticleArray, StepStats)> {
    let (m, n) = (x.dim(), x.count());
    let mut out = vec![0.0; m * n];
    let scale = (2.0 * h).sqrt();
    let sq_sums: Vec<f64> = out
        .par_chunks_mut(n)
        .enumerate()
        .map(|(i, row_out)| -> Result<f64> {
            let row = x.row(i);
            let mut grad = vec![0.0; n];
            match &drift {
                Drift::Contexts(z) => {
                    let mut point = vec![0.0; m];
                    for b in 0..z.batch() {
                        point.copy_from_slice(z.column(b));
                        for (g, &xv) in grad.iter_mut().zip(row) {
                            point[i] = xv;
                            *g += spec.partial(i, &point);
                        }
                    }
                    let inv = z.batch() as f64;
                    grad.iter_mut().for_each(|g| *g /= inv);
                }
                Drift::Means(all_means) => {
                    let means: Vec<f64> = all_means
                        .iter()
                        .enumerate()
                        .filter(|(k, _)| *k != i)
                        .map(|(_, v)| *v)
                        .collect();
                    for (g, &xv) in grad.iter_mut().zip(row) {
                        *g = spec.conditional_mean_gradient(i, xv, &means).ok_or_else(|| {
                            Error::Unsupported("conditional mean gradient unavailable".into())
                        })?;
                    }
                }
                Drift::Exhaustive => {
                    for (g, &xv) in grad.iter_mut().zip(row) {
                        *g = exhaustive_grad(spec, x, i, xv)?;
                    }
                }
            }
            let xi = match noise {
                NoiseMode::Brownian => noise_row(streams, iteration, i, n),
                NoiseMode::Zero => vec![0.0; n],
            };
            let mut sq = 0.0;
            for j in 0..n {
                let v = row[j] - h * grad[j] + scale * xi[j];
                if !v.is_finite() {
                    return Err(Error::Divergence {
                        iteration: iteration as usize,
                        row: i,
                        particle: j,
                        last_good_iteration: iteration as usize,
                    });
                }
                row_out[j] = v;
                sq += grad[j] * grad[j];
            }
            Ok(sq)
        })
        .collect::<Result<Vec<f64>>>()?;
    let grad_rms = (sq_sums.iter().sum::<f64>() / (m * n) as f64).sqrt();
    Ok((ParticleArray::from_rows_unchecked(m, n, out), StepStats { grad_rms }))
}

/// One PAVI iteration `X_n → X_{n+1}`.
pub fn pavi_step(
    spec: &dyn Potential,
    x: &ParticleArray,
    h: f64,
    batch: usize,
    streams: &RngStream,
    iteration: u64,
) -> Result<ParticleArray> {
    pavi_step_with(spec, x, h, batch, streams, iteration, NoiseMode::Brownian).map(|r| r.0)
}

#[doc(hidden)]
pub fn pavi_step_with(
    spec: &dyn Potential,
    x: &ParticleArray,
    h: f64,
    batch: usize,
    streams: &RngStream,
    iteration: u64,
    noise: NoiseMode,
) -> Result<(ParticleArray, StepStats)> {
    check_step_shape(spec, x, h)?;
    let contexts = x.empirical().sample_product(batch, streams, iteration)?;
    update_rows(spec, x, h, streams, iteration, Drift::Contexts(&contexts), noise)
}

/// One exact-gradient iteration; shares the noise of [`pavi_step`] for the same address.
pub fn exact_step(
    spec: &dyn Potential,
    x: &ParticleArray,
    h: f64,
    streams: &RngStream,
    iteration: u64,
) -> Result<ParticleArray> {
    exact_step_with(spec, x, h, streams, iteration, NoiseMode::Brownian, ExactPath::Auto).map(|r| r.0)
}

#[doc(hidden)]
pub fn exact_step_with(
    spec: &dyn Potential,
    x: &ParticleArray,
    h: f64,
    streams: &RngStream,
    iteration: u64,
    noise: NoiseMode,
    path: ExactPath,
) -> Result<(ParticleArray, StepStats)> {
    check_step_shape(spec, x, h)?;
    let use_capability = match path {
        ExactPath::Capability => true,
        ExactPath::Exhaustive => false,
        ExactPath::Auto => spec.has_conditional_mean(),
    };
    if use_capability {
        if !spec.has_conditional_mean() {
            return Err(Error::Unsupported(format!(
                "{} potential has no closed-form conditional mean gradient",
                spec.family()
            )));
        }
        let means = x.empirical().coordinate_means();
        update_rows(spec, x, h, streams, iteration, Drift::Means(&means), noise)
    } else {
        update_rows(spec, x, h, streams, iteration, Drift::Exhaustive, noise)
    }
}

fn check_step_shape(spec: &dyn Potential, x: &ParticleArray, h: f64) -> Result<()> {
    if x.dim() != spec.dim() {
        return Err(Error::Usage(format!(
            "particles have {} coordinates, potential has {}",
            x.dim(),
            spec.dim()
        )));
    }
    if !(h > 0.0 && h.is_finite()) {
        return Err(Error::Config(format!("step size h must be positive, got {h}")));
    }
    Ok(())
}

/// Saved run state; resuming from it is bit-identical to an uninterrupted run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub potential: String,
    pub config: RunConfig,
    pub iteration: usize,
    /// Snapshot file name, relative to the checkpoint document.
    pub particles_file: String,
}

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
const CHECKPOINT_PARTICLES: &str = "checkpoint.bin";

impl Checkpoint {
    pub fn write(dir: &Path, potential: &str, config: &RunConfig, snapshot: &Snapshot) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join("checkpoint.bin.tmp");
        snapshot.write_binary(std::io::BufWriter::new(std::fs::File::create(&tmp)?))?;
        std::fs::rename(&tmp, dir.join(CHECKPOINT_PARTICLES))?;
        let doc = Checkpoint {
            potential: potential.to_string(),
            config: config.clone(),
            iteration: snapshot.iteration as usize,
            particles_file: CHECKPOINT_PARTICLES.into(),
        };
        std::fs::write(dir.join(CHECKPOINT_FILE), serde_json::to_vec_pretty(&doc)?)?;
        Ok(())
    }

    /// Reads a checkpoint document and its particle snapshot.
    pub fn load(path: &Path) -> Result<(Checkpoint, Snapshot)> {
        let doc: Checkpoint = serde_json::from_slice(&std::fs::read(path)?)?;
        let dir = path.parent().unwrap_or_else(|| Path::new("."));
        let snap = Snapshot::read_binary(std::io::BufReader::new(std::fs::File::open(
            dir.join(&doc.particles_file),
        )?))?;
        Ok((doc, snap))
    }
}

/// Optional inputs to [`run`].
#[derive(Default)]
pub struct RunContext<'a> {
    pub reference: Option<&'a ReferenceProduct>,
    pub checkpoint_dir: Option<PathBuf>,
    pub resume: Option<(Checkpoint, Snapshot)>,
}

fn record_at(
    iteration: usize,
    x: &ParticleArray,
    reference: Option<&ReferenceProduct>,
    stats: Option<StepStats>,
) -> Result<Record> {
    let q = x.empirical();
    let means = q.coordinate_means();
    let n = x.count() as f64;
    let variances = (0..x.dim())
        .map(|i| q.marginal(i).iter().map(|v| (v - means[i]) * (v - means[i])).sum::<f64>() / n)
        .collect();
    let (w2, w2_per_coordinate) = match reference {
        Some(r) => {
            let sq = w2_sq_to_reference_per_coordinate(&q, r)?;
            let total = sq.iter().sum::<f64>().sqrt();
            (Some(total), Some(sq.into_iter().map(f64::sqrt).collect()))
        }
        None => (None, None),
    };
    Ok(Record {
        iteration,
        w2,
        w2_per_coordinate,
        means,
        variances,
        grad_rms: stats.map(|s| s.grad_rms),
    })
}

/// Runs `T` iterations, recording the initial state and every
/// `metrics_every`-th iteration.
pub fn run(
    spec: &dyn Potential,
    cfg: &RunConfig,
    ctx: RunContext<'_>,
    sink: &mut dyn RecordSink,
) -> Result<ConvergenceReport> {
    let schedule = validate_config(spec, cfg)?;
    if let Some(r) = ctx.reference {
        if r.dim() != spec.dim() {
            return Err(Error::Config(format!(
                "reference has {} coordinates, potential has {}",
                r.dim(),
                spec.dim()
            )));
        }
    }
    let streams = RngStream::new(cfg.seed);
    let every = cfg.metrics_every();
    let fingerprint = spec.fingerprint();
    let (mut x, start) = match ctx.resume {
        Some((doc, snap)) => {
            if doc.potential != fingerprint {
                return Err(Error::Config("checkpoint was written for a different potential".into()));
            }
            let same = RunConfig { iterations: cfg.iterations, ..doc.config.clone() };
            if &same != cfg || snap.seed != cfg.seed {
                return Err(Error::Config("checkpoint run configuration does not match".into()));
            }
            if snap.iteration as usize > cfg.iterations {
                return Err(Error::Config("checkpoint is past the requested iteration count".into()));
            }
            (snap.particles, snap.iteration as usize)
        }
        None => (init_particles(spec.dim(), cfg.particles, &cfg.init, cfg.seed)?, 0),
    };
    if x.dim() != spec.dim() || x.count() != cfg.particles {
        return Err(Error::Config("initial particle array does not match the configuration".into()));
    }

    let clock = Instant::now();
    let mut records = Vec::new();
    let mut elapsed = Vec::new();
    if start == 0 {
        let r = record_at(0, &x, ctx.reference, None)?;
        sink.record(&r)?;
        records.push(r);
        elapsed.push(clock.elapsed().as_secs_f64());
    }
    for n in start..cfg.iterations {
        let stepped = match cfg.algorithm {
            Algorithm::Pavi => pavi_step_with(
                spec,
                &x,
                schedule.step_size,
                schedule.batch,
                &streams,
                n as u64,
                NoiseMode::Brownian,
            ),
            Algorithm::Exact => exact_step_with(
                spec,
                &x,
                schedule.step_size,
                &streams,
                n as u64,
                NoiseMode::Brownian,
                ExactPath::Auto,
            ),
        };
        let (next, stats) = stepped.map_err(|e| match e {
            Error::Divergence { iteration, row, particle, .. } => Error::Divergence {
                iteration,
                row,
                particle,
                last_good_iteration: last_checkpoint(cfg, n),
            },
            other => other,
        })?;
        x = next;
        let done = n + 1;
        if done % every == 0 {
            let r = record_at(done, &x, ctx.reference, Some(stats))?;
            sink.record(&r)?;
            records.push(r);
            elapsed.push(clock.elapsed().as_secs_f64());
        }
        if let (Some(dir), Some(k)) = (&ctx.checkpoint_dir, cfg.checkpoint_every) {
            if k > 0 && done % k == 0 {
                let snap = Snapshot { particles: x.clone(), seed: cfg.seed, iteration: done as u64 };
                Checkpoint::write(dir, &fingerprint, cfg, &snap)?;
            }
        }
    }

    let summary = summarize(&records);
    Ok(ConvergenceReport {
        metadata: RunMetadata {
            potential: fingerprint,
            family: spec.family().to_string(),
            config: cfg.clone(),
            schedule,
            seed: cfg.seed,
            code_version: env!("CARGO_PKG_VERSION").to_string(),
        },
        records,
        elapsed_s: elapsed,
        summary,
        final_particles: x,
    })
}

fn last_checkpoint(cfg: &RunConfig, failed_at: usize) -> usize {
    match cfg.checkpoint_every {
        Some(k) if k > 0 => failed_at / k * k,
        _ => failed_at,
    }
}

/// Trailing-window statistics over the W2 series, if one was recorded.
pub fn summarize(records: &[Record]) -> Summary {
    let series: Vec<(f64, f64)> = records
        .iter()
        .filter_map(|r| r.w2.map(|w| (r.iteration as f64, w)))
        .collect();
    if series.is_empty() {
        return Summary::default();
    }
    let values: Vec<f64> = series.iter().map(|p| p.1).collect();
    let (mean, se) = trailing_window(&values);
    let fit = if series.len() >= 10 { rate_fit(&series).ok() } else { None };
    Summary {
        final_w2: values.last().copied(),
        steady_state_mean: Some(mean),
        steady_state_se: Some(se),
        contraction_rate: fit.as_ref().and_then(|f| f.rate),
        steady_state_level: fit.map(|f| f.level),
    }
}

/// Mean and naive standard error of the trailing 25% of a series.
pub fn trailing_window(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    let k = n.div_ceil(4).max(1);
    let tail = &values[n - k..];
    let mean = tail.iter().sum::<f64>() / k as f64;
    if k < 2 {
        return (mean, 0.0);
    }
    let var = tail.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (k - 1) as f64;
    (mean, (var / k as f64).sqrt())
}
