//! Implementations of the `pavi` subcommands.

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::dynamics::{run, summarize, Checkpoint, RunContext, CHECKPOINT_FILE};
use crate::error::{Error, Result};
use crate::harness::check::{run_checks, CheckReport};
use crate::harness::config::{ExperimentConfig, OracleConfig, ReferenceKind};
use crate::harness::report::{ConvergenceReport, JsonlSink, Record, METRICS_FILE, SUMMARY_FILE};
use crate::harness::sweep::{run_sweep, SweepResult};
use crate::metrics::{w2_between_marginals, w2_sq_empirical_vs_reference, ReferenceProduct};
use crate::oracle::{
    fixed_point_solve, gaussian_mfvi_solution, init_sensitivity, GridInit, GridProduct, OracleDocument,
};
use crate::potential::{Potential, SharedPotential};

pub const ORACLE_FILE: &str = "oracle.json";
pub const SWEEP_FILE: &str = "sweep.json";
pub const CHECK_FILE: &str = "check.json";

/// Command-line overrides shared by all subcommands.
#[derive(Clone, Debug, Default)]
pub struct CommandOptions {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub resume: bool,
}

fn output_dir(cfg: &ExperimentConfig, opts: &CommandOptions) -> PathBuf {
    opts.out.clone().unwrap_or_else(|| cfg.output.dir.clone())
}

fn apply_overrides(cfg: &ExperimentConfig, opts: &CommandOptions) -> ExperimentConfig {
    let mut cfg = cfg.clone();
    if let Some(s) = opts.seed {
        cfg.run.seed = s;
    }
    cfg
}

/// Closed-form solution for quadratic potentials, grid fixed point otherwise.
pub fn compute_oracle(spec: &dyn Potential, oracle: &OracleConfig) -> Result<OracleDocument> {
    let (reference, residual) = if spec.as_gaussian().is_some() {
        (gaussian_mfvi_solution(spec)?, None)
    } else {
        let opts = oracle.fixed_point_options();
        let init = GridProduct::initial(spec, oracle.grid_points, GridInit::Gaussian)?;
        let fp = fixed_point_solve(spec, init, &opts)?;
        (fp.product.to_reference()?, Some(fp.report))
    };
    let init_sensitivity = if oracle.check_uniqueness && spec.as_gaussian().is_none() {
        let opts = oracle.fixed_point_options();
        Some(init_sensitivity(spec, oracle.grid_points, &opts, 1e-6)?)
    } else {
        None
    };
    Ok(OracleDocument {
        potential: spec.fingerprint(),
        family: spec.family().to_string(),
        reference,
        residual,
        init_sensitivity,
    })
}

/// The reference selected by the `[reference]` section.
pub fn resolve_reference(spec: &dyn Potential, cfg: &ExperimentConfig) -> Result<Option<ReferenceProduct>> {
    let loaded = |path: &Path| -> Result<ReferenceProduct> {
        let doc = OracleDocument::load(path)?;
        if doc.potential != spec.fingerprint() {
            return Err(Error::Reference(format!(
                "oracle document {} was computed for a different potential",
                path.display()
            )));
        }
        Ok(doc.reference)
    };
    match cfg.reference.kind {
        ReferenceKind::None => Ok(None),
        ReferenceKind::Analytic => gaussian_mfvi_solution(spec).map(Some),
        ReferenceKind::Oracle | ReferenceKind::Auto => match &cfg.reference.path {
            Some(p) => loaded(p).map(Some),
            None => compute_oracle(spec, &cfg.oracle).map(|d| Some(d.reference)),
        },
    }
}

fn read_records(path: &Path) -> Result<Vec<Record>> {
    let mut out = Vec::new();
    for line in BufReader::new(std::fs::File::open(path)?).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Runs the dynamics, streaming records to `metrics.jsonl` in the output directory.
pub fn cmd_run(cfg: &ExperimentConfig, opts: &CommandOptions) -> Result<ConvergenceReport> {
    let cfg = apply_overrides(cfg, opts);
    let spec: SharedPotential = cfg.potential.build()?;
    crate::dynamics::validate_config(spec.as_ref(), &cfg.run)?;
    let reference = resolve_reference(spec.as_ref(), &cfg)?;
    let dir = output_dir(&cfg, opts);
    std::fs::create_dir_all(&dir)?;
    let metrics = dir.join(METRICS_FILE);

    let mut prefix = Vec::new();
    let resume = if opts.resume {
        let (doc, snap) = Checkpoint::load(&dir.join(CHECKPOINT_FILE))?;
        let start = snap.iteration as usize;
        if metrics.exists() {
            prefix = read_records(&metrics)?
                .into_iter()
                .filter(|r| r.iteration <= start)
                .collect();
        }
        Some((doc, snap))
    } else {
        None
    };
    let mut sink = JsonlSink::create(&metrics)?;
    for r in &prefix {
        crate::harness::report::RecordSink::record(&mut sink, r)?;
    }
    let ctx = RunContext {
        reference: reference.as_ref(),
        checkpoint_dir: cfg.run.checkpoint_every.map(|_| dir.clone()),
        resume,
    };
    let mut report = run(spec.as_ref(), &cfg.run, ctx, &mut sink)?;
    if !prefix.is_empty() {
        let restored = prefix.len();
        prefix.append(&mut report.records);
        report.records = prefix;
        let mut elapsed = vec![0.0; restored];
        elapsed.append(&mut report.elapsed_s);
        report.elapsed_s = elapsed;
        report.summary = summarize(&report.records);
    }
    report.save_summary(&dir)?;
    Ok(report)
}

pub fn cmd_sweep(cfg: &ExperimentConfig, opts: &CommandOptions) -> Result<SweepResult> {
    let cfg = apply_overrides(cfg, opts);
    let sweep = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| Error::Config("sweep requires a [sweep] section".into()))?;
    let spec = cfg.potential.build()?;
    let reference = resolve_reference(spec.as_ref(), &cfg)?
        .ok_or_else(|| Error::Config("sweep requires a reference".into()))?;
    let result = run_sweep(spec.as_ref(), &cfg.run, &sweep.particles, sweep.replications, &reference)?;
    let dir = output_dir(&cfg, opts);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(SWEEP_FILE), serde_json::to_vec_pretty(&result)?)?;
    Ok(result)
}

pub fn cmd_oracle(cfg: &ExperimentConfig, opts: &CommandOptions) -> Result<OracleDocument> {
    let spec = cfg.potential.build()?;
    let doc = compute_oracle(spec.as_ref(), &cfg.oracle)?;
    let dir = output_dir(cfg, opts);
    std::fs::create_dir_all(&dir)?;
    doc.save(&dir.join(ORACLE_FILE))?;
    Ok(doc)
}

pub fn cmd_check(cfg: &ExperimentConfig, opts: &CommandOptions) -> Result<CheckReport> {
    let cfg = apply_overrides(cfg, opts);
    let spec = cfg.potential.build()?;
    let reference = resolve_reference(spec.as_ref(), &cfg)?;
    let report = run_checks(spec.as_ref(), reference.as_ref(), cfg.oracle.samples, cfg.run.seed)?;
    let dir = output_dir(&cfg, opts);
    std::fs::create_dir_all(&dir)?;
    std::fs::write(dir.join(CHECK_FILE), serde_json::to_vec_pretty(&report)?)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CompareReport {
    /// W2 between the final particle marginals and the other side, per coordinate.
    pub w2_per_coordinate: Vec<f64>,
    pub w2: f64,
    /// Difference of steady-state means when both sides are reports.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub steady_state_delta: Option<f64>,
}

fn gcd(a: usize, b: usize) -> usize {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Compares a run directory with another run directory or an oracle document.
pub fn cmd_compare(first: &Path, second: &Path) -> Result<CompareReport> {
    let a = ConvergenceReport::load(first)?;
    let atoms_a = ReferenceProduct::from_particles(&a.final_particles);
    let (sq, delta) = if second.is_dir() && second.join(SUMMARY_FILE).exists() {
        let b = ConvergenceReport::load(second)?;
        if b.final_particles.dim() != a.final_particles.dim() {
            return Err(Error::Usage("reports have different dimensions".into()));
        }
        let (na, nb) = (a.final_particles.count(), b.final_particles.count());
        // quantile levels on the common refinement make the coupling exact
        let levels = (na / gcd(na, nb)).saturating_mul(nb).min(10_000_000);
        let atoms_b = ReferenceProduct::from_particles(&b.final_particles);
        let sq = atoms_a
            .marginals
            .iter()
            .zip(&atoms_b.marginals)
            .map(|(x, y)| w2_between_marginals(x, y, levels).map(|d| d * d))
            .collect::<Result<Vec<_>>>()?;
        let delta = match (a.summary.steady_state_mean, b.summary.steady_state_mean) {
            (Some(x), Some(y)) => Some(x - y),
            _ => None,
        };
        (sq, delta)
    } else {
        let doc = OracleDocument::load(second)?;
        if doc.reference.dim() != a.final_particles.dim() {
            return Err(Error::Usage("report and oracle have different dimensions".into()));
        }
        let sq = (0..a.final_particles.dim())
            .map(|i| w2_sq_empirical_vs_reference(a.final_particles.row(i), &doc.reference.marginals[i]))
            .collect::<Result<Vec<_>>>()?;
        (sq, None)
    };
    Ok(CompareReport {
        w2: sq.iter().sum::<f64>().sqrt(),
        w2_per_coordinate: sq.into_iter().map(f64::sqrt).collect(),
        steady_state_delta: delta,
    })
}
