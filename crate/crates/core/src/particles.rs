//! The `m×N` particle state and its product empirical measure.
//!
//! Entry `(i, j)` is coordinate `i` of particle `j`. The product empirical
//! measure `q_X` is the product over coordinates of the row-wise empirical
//! measures; it has `N^m` atoms and is never materialized.

use std::io::{BufRead, BufReader, Read, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{Role, RngStream};

#[derive(Clone, Debug, PartialEq)]
pub struct ParticleArray {
    dim: usize,
    count: usize,
    data: Vec<f64>,
}

impl ParticleArray {
    /// `data` is row-major `m×N`.
    pub fn from_rows(dim: usize, count: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("particle dimension must be at least 1".into()));
        }
        if count < 2 {
            return Err(Error::Config(format!(
                "N >= 2 required (the convergence guarantee assumes at least two particles), got N = {count}"
            )));
        }
        if data.len() != dim * count {
            return Err(Error::Usage(format!(
                "expected {} values for a {dim}x{count} array, got {}",
                dim * count,
                data.len()
            )));
        }
        if let Some(k) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Evaluation {
                coordinate: k / count,
                detail: format!("non-finite particle value at particle {}", k % count),
            });
        }
        Ok(Self { dim, count, data })
    }

    pub(crate) fn from_rows_unchecked(dim: usize, count: usize, data: Vec<f64>) -> Self {
        debug_assert_eq!(data.len(), dim * count);
        Self { dim, count, data }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.count..(i + 1) * self.count]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.count + j]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.dim).map(|i| self.get(i, j)).collect()
    }

    pub fn empirical(&self) -> ProductEmpirical<'_> {
        ProductEmpirical { particles: self }
    }

    /// Apply the same particle permutation to every row.
    pub fn permute_particles(&self, perm: &[usize]) -> Result<Self> {
        if perm.len() != self.count {
            return Err(Error::Usage("permutation length must equal N".into()));
        }
        let mut data = Vec::with_capacity(self.data.len());
        for i in 0..self.dim {
            let row = self.row(i);
            data.extend(perm.iter().map(|&p| row[p]));
        }
        Ok(Self::from_rows_unchecked(self.dim, self.count, data))
    }
}

/// Initial particle layout.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitSpec {
    /// I.i.d. `N(0, 1)` entries.
    #[default]
    StandardNormal,
    /// Every particle at `at`.
    PointMass { at: Vec<f64> },
    /// Row-major `m×N` values.
    Explicit { values: Vec<f64> },
}

pub fn init_particles(dim: usize, count: usize, init: &InitSpec, seed: u64) -> Result<ParticleArray> {
    if count < 2 {
        return Err(Error::Config(format!(
            "N >= 2 required (the convergence guarantee assumes at least two particles), got N = {count}"
        )));
    }
    let data = match init {
        InitSpec::StandardNormal => {
            let streams = RngStream::new(seed);
            let mut data = Vec::with_capacity(dim * count);
            for i in 0..dim {
                let mut rng = streams.substream(0, Role::Init, i as u64);
                data.extend((0..count).map(|_| rng.sample::<f64, _>(StandardNormal)));
            }
            data
        }
        InitSpec::PointMass { at } => {
            if at.len() != dim {
                return Err(Error::Config(format!(
                    "point-mass location must have length {dim}, got {}",
                    at.len()
                )));
            }
            at.iter().flat_map(|&v| std::iter::repeat_n(v, count)).collect()
        }
        InitSpec::Explicit { values } => values.clone(),
    };
    ParticleArray::from_rows(dim, count, data)
}

/// Borrowed view of `q_X = q_X^1 ⊗ … ⊗ q_X^m`.
#[derive(Clone, Copy, Debug)]
pub struct ProductEmpirical<'a> {
    particles: &'a ParticleArray,
}

impl<'a> ProductEmpirical<'a> {
    pub fn dim(&self) -> usize {
        self.particles.dim
    }

    pub fn count(&self) -> usize {
        self.particles.count
    }

    pub fn particles(&self) -> &'a ParticleArray {
        self.particles
    }

    /// Atoms of `q_X^i`.
    pub fn marginal(&self, i: usize) -> &'a [f64] {
        self.particles.row(i)
    }

    /// Order statistics of row `i`.
    pub fn sorted_marginal(&self, i: usize) -> Result<Vec<f64>> {
        if i >= self.dim() {
            return Err(Error::Usage(format!(
                "coordinate index {i} out of range for dimension {}",
                self.dim()
            )));
        }
        let mut v = self.marginal(i).to_vec();
        v.sort_by(f64::total_cmp);
        Ok(v)
    }

    pub fn coordinate_means(&self) -> Vec<f64> {
        let n = self.count() as f64;
        (0..self.dim())
            .map(|i| self.marginal(i).iter().sum::<f64>() / n)
            .collect()
    }

    /// Atom indices for `batch` independent draws from `q_X`: entry `(i, b)`
    /// is a uniform index in `[N]` drawn from the `(iteration, Context, i)`
    /// substream.
    pub fn sample_product_indices(&self, batch: usize, streams: &RngStream, iteration: u64) -> Vec<usize> {
        let n = self.count();
        let mut idx = Vec::with_capacity(self.dim() * batch);
        for i in 0..self.dim() {
            let mut rng = streams.substream(iteration, Role::Context, i as u64);
            idx.extend((0..batch).map(|_| rng.random_range(0..n)));
        }
        idx
    }

    pub fn sample_product(&self, batch: usize, streams: &RngStream, iteration: u64) -> Result<ContextBatch> {
        if batch == 0 {
            return Err(Error::Usage("batch size must be at least 1".into()));
        }
        let m = self.dim();
        let idx = self.sample_product_indices(batch, streams, iteration);
        let mut columns = vec![0.0; m * batch];
        for i in 0..m {
            let row = self.marginal(i);
            for b in 0..batch {
                columns[b * m + i] = row[idx[i * batch + b]];
            }
        }
        Ok(ContextBatch { dim: m, batch, columns })
    }
}

/// `m×B` draws from a product measure, stored column by column.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextBatch {
    dim: usize,
    batch: usize,
    columns: Vec<f64>,
}

impl ContextBatch {
    /// Build from row-major `m×B` values.
    pub fn from_rows(dim: usize, batch: usize, rows: &[f64]) -> Result<Self> {
        if dim == 0 || batch == 0 || rows.len() != dim * batch {
            return Err(Error::Usage(format!("invalid context batch shape {dim}x{batch}")));
        }
        let mut columns = vec![0.0; dim * batch];
        for i in 0..dim {
            for b in 0..batch {
                columns[b * dim + i] = rows[i * batch + b];
            }
        }
        Ok(Self { dim, batch, columns })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn batch(&self) -> usize {
        self.batch
    }

    pub fn column(&self, b: usize) -> &[f64] {
        &self.columns[b * self.dim..(b + 1) * self.dim]
    }

    pub fn get(&self, i: usize, b: usize) -> f64 {
        self.columns[b * self.dim + i]
    }
}

/// Particle array plus the run coordinates it was taken at.
#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot {
    pub particles: ParticleArray,
    pub seed: u64,
    pub iteration: u64,
}

const BINARY_MAGIC: &[u8; 8] = b"PAVIPRT1";

impl Snapshot {
    /// Header line `m,N,seed,iteration` followed by one CSV line per row.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        let p = &self.particles;
        writeln!(w, "m,N,seed,iteration")?;
        writeln!(w, "{},{},{},{}", p.dim, p.count, self.seed, self.iteration)?;
        for i in 0..p.dim {
            let line = p.row(i).iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",");
            writeln!(w, "{line}")?;
        }
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut lines = BufReader::new(r).lines();
        let mut next = |what: &str| -> Result<String> {
            lines
                .next()
                .ok_or_else(|| Error::Format(format!("missing {what}")))?
                .map_err(Error::from)
        };
        let header = next("header")?;
        if header.trim() != "m,N,seed,iteration" {
            return Err(Error::Format(format!("unexpected header `{header}`")));
        }
        let meta: Vec<u64> = next("metadata")?
            .split(',')
            .map(|t| t.trim().parse::<u64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::Format(format!("bad metadata: {e}")))?;
        let [m, n, seed, iteration] = meta[..] else {
            return Err(Error::Format("metadata must have 4 fields".into()));
        };
        let (m, n) = (m as usize, n as usize);
        let mut data = Vec::with_capacity(m * n);
        for i in 0..m {
            let line = next(&format!("row {i}"))?;
            let before = data.len();
            for tok in line.split(',') {
                data.push(
                    tok.trim()
                        .parse::<f64>()
                        .map_err(|e| Error::Format(format!("row {i}: {e}")))?,
                );
            }
            if data.len() - before != n {
                return Err(Error::Format(format!("row {i} has {} values, expected {n}", data.len() - before)));
            }
        }
        Ok(Self {
            particles: ParticleArray::from_rows(m, n, data)?,
            seed,
            iteration,
        })
    }

    /// Magic, then little-endian `u64` m, N, seed, iteration, then row-major `f64`s.
    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        let p = &self.particles;
        w.write_all(BINARY_MAGIC)?;
        for v in [p.dim as u64, p.count as u64, self.seed, self.iteration] {
            w.write_all(&v.to_le_bytes())?;
        }
        for v in &p.data {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != BINARY_MAGIC {
            return Err(Error::Format("not a particle snapshot".into()));
        }
        let mut word = [0u8; 8];
        let mut header = [0u64; 4];
        for h in header.iter_mut() {
            r.read_exact(&mut word)?;
            *h = u64::from_le_bytes(word);
        }
        let [m, n, seed, iteration] = header;
        let len = (m as usize)
            .checked_mul(n as usize)
            .ok_or_else(|| Error::Format("array size overflow".into()))?;
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            r.read_exact(&mut word)?;
            data.push(f64::from_le_bytes(word));
        }
        Ok(Self {
            particles: ParticleArray::from_rows(m as usize, n as usize, data)?,
            seed,
            iteration,
        })
    }
}
