//! Convergence reports.
//!
//! A run writes `metrics.jsonl` (one [`Record`] per line) and
//! `summary.json`. Wall-clock timings live only in the summary so the
//! metrics file is byte-identical across thread counts.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dynamics::{ResolvedSchedule, RunConfig};
use crate::error::{Error, Result};
use crate::particles::{ParticleArray, Snapshot};

pub const METRICS_FILE: &str = "metrics.jsonl";
pub const SUMMARY_FILE: &str = "summary.json";
pub const PARTICLES_FILE: &str = "final_particles.csv";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub iteration: usize,
    /// Product W2 to the attached reference.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w2_per_coordinate: Option<Vec<f64>>,
    pub means: Vec<f64>,
    pub variances: Vec<f64>,
    /// RMS of the drift estimates used in the step that produced this state.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub grad_rms: Option<f64>,
}

pub trait RecordSink {
    fn record(&mut self, record: &Record) -> Result<()>;
}

impl RecordSink for Vec<Record> {
    fn record(&mut self, record: &Record) -> Result<()> {
        self.push(record.clone());
        Ok(())
    }
}

/// Discards records; the report still keeps its own copy.
pub struct NullSink;

impl RecordSink for NullSink {
    fn record(&mut self, _record: &Record) -> Result<()> {
        Ok(())
    }
}

/// Appends one JSON line per record and flushes after each.
pub struct JsonlSink<W: Write> {
    out: W,
}

impl JsonlSink<BufWriter<File>> {
    pub fn create(path: &Path) -> Result<Self> {
        Ok(Self { out: BufWriter::new(File::create(path)?) })
    }

    pub fn append(path: &Path) -> Result<Self> {
        let f = std::fs::OpenOptions::new().append(true).create(true).open(path)?;
        Ok(Self { out: BufWriter::new(f) })
    }
}

impl<W: Write> JsonlSink<W> {
    pub fn new(out: W) -> Self {
        Self { out }
    }
}

impl<W: Write> RecordSink for JsonlSink<W> {
    fn record(&mut self, record: &Record) -> Result<()> {
        serde_json::to_writer(&mut self.out, record)?;
        self.out.write_all(b"\n")?;
        self.out.flush()?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub potential: String,
    pub family: String,
    pub config: RunConfig,
    pub schedule: ResolvedSchedule,
    pub seed: u64,
    pub code_version: String,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub final_w2: Option<f64>,
    /// Mean of the trailing 25% of the W2 series.
    pub steady_state_mean: Option<f64>,
    pub steady_state_se: Option<f64>,
    pub contraction_rate: Option<f64>,
    pub steady_state_level: Option<f64>,
}

#[derive(Serialize, Deserialize)]
struct SummaryDocument {
    metadata: RunMetadata,
    summary: Summary,
    records: usize,
    elapsed_s: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub metadata: RunMetadata,
    pub records: Vec<Record>,
    /// Seconds since the start of the run, aligned with `records`.
    pub elapsed_s: Vec<f64>,
    pub summary: Summary,
    pub final_particles: ParticleArray,
}

impl ConvergenceReport {
    pub fn w2_series(&self) -> Vec<(f64, f64)> {
        self.records
            .iter()
            .filter_map(|r| r.w2.map(|w| (r.iteration as f64, w)))
            .collect()
    }

    /// Writes `metrics.jsonl`, `summary.json` and `final_particles.csv`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let mut sink = JsonlSink::create(&dir.join(METRICS_FILE))?;
        for r in &self.records {
            sink.record(r)?;
        }
        self.save_summary(dir)
    }

    /// Writes everything except the metrics lines, for runs that streamed them.
    pub fn save_summary(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let doc = SummaryDocument {
            metadata: self.metadata.clone(),
            summary: self.summary.clone(),
            records: self.records.len(),
            elapsed_s: self.elapsed_s.clone(),
        };
        std::fs::write(dir.join(SUMMARY_FILE), serde_json::to_vec_pretty(&doc)?)?;
        let snap = Snapshot {
            particles: self.final_particles.clone(),
            seed: self.metadata.seed,
            iteration: self.metadata.config.iterations as u64,
        };
        snap.write_csv(BufWriter::new(File::create(dir.join(PARTICLES_FILE))?))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let doc: SummaryDocument =
            serde_json::from_slice(&std::fs::read(dir.join(SUMMARY_FILE))?)?;
        let mut records = Vec::new();
        for line in BufReader::new(File::open(dir.join(METRICS_FILE))?).lines() {
            let line = line?;
            if !line.trim().is_empty() {
                records.push(serde_json::from_str(&line)?);
            }
        }
        if records.len() != doc.records {
            return Err(Error::Format(format!(
                "summary lists {} records but {} has {}",
                doc.records,
                METRICS_FILE,
                records.len()
            )));
        }
        let snap = Snapshot::read_csv(BufReader::new(File::open(dir.join(PARTICLES_FILE))?))?;
        Ok(Self {
            metadata: doc.metadata,
            records,
            elapsed_s: doc.elapsed_s,
            summary: doc.summary,
            final_particles: snap.particles,
        })
    }
}
