//! Random walks over the cross-order block adjacency.

use std::io::{BufRead, Read, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::complex::{SimplexCounts, SimplexId};
use crate::error::{Error, Result};
use crate::nnkernel::Tensor;
use crate::operators::SparseOperator;

/// Upper bound for walk length and samples per start.
pub const MAX_WALK_PARAM: usize = 64;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct WalkConfig {
    /// Steps per walk; a trajectory holds `length + 1` simplices.
    pub length: usize,
    /// Walks per start.
    pub samples: usize,
    /// Block adjacency variant (1 or 2).
    pub variant: u8,
    pub biased: bool,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            length: 3,
            samples: 2,
            variant: 1,
            biased: false,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("length", self.length), ("samples", self.samples)] {
            if !(1..=MAX_WALK_PARAM).contains(&v) {
                return Err(Error::invalid(format!(
                    "walk {name} {v} outside [1, {MAX_WALK_PARAM}]"
                )));
            }
        }
        if !(1..=2).contains(&self.variant) {
            return Err(Error::invalid(format!(
                "walk variant must be 1 or 2, got {}",
                self.variant
            )));
        }
        Ok(())
    }

    pub fn positions(&self) -> usize {
        self.length + 1
    }
}

/// Sampled trajectories, stored row-major as `[start, sample, position]`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct WalkBatch {
    /// Global simplex index of each start (equal to the vertex index for
    /// 0-simplices).
    pub starts: Vec<usize>,
    pub samples: usize,
    pub length: usize,
    pub trajectories: Vec<u32>,
    pub anonymous: Vec<u16>,
}

impl WalkBatch {
    pub fn num_starts(&self) -> usize {
        self.starts.len()
    }

    pub fn positions(&self) -> usize {
        self.length + 1
    }

    /// Total number of transitions drawn.
    pub fn steps(&self) -> usize {
        self.starts.len() * self.samples * self.length
    }

    pub fn trajectory(&self, start: usize, sample: usize) -> &[u32] {
        let p = self.positions();
        let o = (start * self.samples + sample) * p;
        &self.trajectories[o..o + p]
    }

    pub fn labels(&self, start: usize, sample: usize) -> &[u16] {
        let p = self.positions();
        let o = (start * self.samples + sample) * p;
        &self.anonymous[o..o + p]
    }

    /// Binary dump: `b"SWLK"`, then `u32` version, starts, samples, length,
    /// then `u32` trajectories and `u16` labels, all little-endian.
    pub fn write_dump<W: Write>(&self, mut w: W) -> Result<()> {
        let mut buf = Vec::with_capacity(20 + self.trajectories.len() * 6);
        buf.extend_from_slice(DUMP_MAGIC);
        for v in [
            DUMP_VERSION,
            self.starts.len() as u32,
            self.samples as u32,
            self.length as u32,
        ] {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.trajectories {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        for v in &self.anonymous {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        w.flush()?;
        Ok(())
    }

    pub fn read_dump<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() < 20 || &bytes[..4] != DUMP_MAGIC {
            return Err(Error::invalid("not a walk dump (bad magic)"));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[4 + 4 * i..8 + 4 * i].try_into().unwrap());
        if word(0) != DUMP_VERSION {
            return Err(Error::invalid(format!(
                "unsupported walk dump version {}",
                word(0)
            )));
        }
        let (n, s, l) = (word(1) as usize, word(2) as usize, word(3) as usize);
        let cells = n * s * (l + 1);
        if bytes.len() != 20 + cells * 6 {
            return Err(Error::invalid(format!(
                "walk dump holds {} bytes, header implies {}",
                bytes.len(),
                20 + cells * 6
            )));
        }
        let body = &bytes[20..];
        let trajectories: Vec<u32> = body[..cells * 4]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let anonymous = body[cells * 4..]
            .chunks_exact(2)
            .map(|c| u16::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let starts = (0..n)
            .map(|i| trajectories.get(i * s * (l + 1)).map_or(0, |&v| v as usize))
            .collect();
        Ok(WalkBatch {
            starts,
            samples: s,
            length: l,
            trajectories,
            anonymous,
        })
    }

    /// One JSON object per walk.
    pub fn write_jsonl<W: Write>(&self, mut w: W) -> Result<()> {
        for (i, &start) in self.starts.iter().enumerate() {
            for s in 0..self.samples {
                let line = JsonWalk {
                    start,
                    sample: s,
                    trajectory: self.trajectory(i, s).to_vec(),
                    anonymous: self.labels(i, s).to_vec(),
                };
                serde_json::to_writer(&mut w, &line)?;
                w.write_all(b"\n")?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<JsonWalk>> {
        let mut out = Vec::new();
        for (no, line) in r.lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            out.push(serde_json::from_str(&line).map_err(|e| Error::Parse {
                source_name: "walks.jsonl".into(),
                line: no + 1,
                message: e.to_string(),
            })?);
        }
        Ok(out)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct JsonWalk {
    pub start: usize,
    pub sample: usize,
    pub trajectory: Vec<u32>,
    pub anonymous: Vec<u16>,
}

const DUMP_MAGIC: &[u8; 4] = b"SWLK";
const DUMP_VERSION: u32 = 1;

/// Outgoing transition probabilities of global simplex `s`.
///
/// Unbiased rows are uniform over the row support. Biased rows weight a
/// neighbor of order `k` by `1 / N_k`. An empty row yields an empty list.
pub fn transition_row(
    a: &SparseOperator,
    s: usize,
    biased: bool,
    counts: SimplexCounts,
) -> Vec<(usize, f64)> {
    let (cols, vals) = a.row(s);
    let support: Vec<usize> = cols
        .iter()
        .zip(vals)
        .filter(|(_, &v)| v != 0)
        .map(|(&c, _)| c)
        .collect();
    if support.is_empty() {
        return Vec::new();
    }
    if !biased {
        let p = 1.0 / support.len() as f64;
        return support.into_iter().map(|c| (c, p)).collect();
    }
    let alpha = |c: usize| 1.0 / counts.0[counts.order_of(c)] as f64;
    let z: f64 = support.iter().map(|&c| alpha(c)).sum();
    support.into_iter().map(|c| (c, alpha(c) / z)).collect()
}

/// Precomputed cumulative transition tables for one operator.
pub struct WalkSampler {
    offsets: Vec<usize>,
    targets: Vec<u32>,
    cumulative: Vec<f64>,
}

impl WalkSampler {
    pub fn new(a: &SparseOperator, counts: SimplexCounts, biased: bool) -> Result<Self> {
        if a.rows() != counts.total() || a.cols() != counts.total() {
            return Err(Error::shape(format!(
                "operator {:?} does not match {} simplices",
                a.shape(),
                counts.total()
            )));
        }
        if counts.total() > u32::MAX as usize {
            return Err(Error::invalid("too many simplices for 32-bit walk indices"));
        }
        let mut offsets = vec![0];
        let mut targets = Vec::new();
        let mut cumulative = Vec::new();
        for s in 0..a.rows() {
            let row = transition_row(a, s, biased, counts);
            let mut acc = 0.0;
            let last = row.len().saturating_sub(1);
            for (j, (c, p)) in row.into_iter().enumerate() {
                acc += p;
                targets.push(c as u32);
                cumulative.push(if j == last { 1.0 } else { acc });
            }
            offsets.push(targets.len());
        }
        Ok(WalkSampler {
            offsets,
            targets,
            cumulative,
        })
    }

    pub fn num_simplices(&self) -> usize {
        self.offsets.len() - 1
    }

    /// Bytes held by the transition tables.
    pub fn heap_bytes(&self) -> usize {
        self.offsets.len() * std::mem::size_of::<usize>()
            + self.targets.len() * std::mem::size_of::<u32>()
            + self.cumulative.len() * std::mem::size_of::<f64>()
    }

    /// One transition; dead ends stay in place.
    pub fn step<R: Rng + ?Sized>(&self, cur: usize, rng: &mut R) -> usize {
        let (lo, hi) = (self.offsets[cur], self.offsets[cur + 1]);
        if lo == hi {
            return cur;
        }
        let u: f64 = rng.random();
        let cum = &self.cumulative[lo..hi];
        let j = cum.partition_point(|&c| c <= u).min(hi - lo - 1);
        self.targets[lo + j] as usize
    }

    /// Fills `out` with a walk from `start`, using the stream for
    /// `(seed, start, sample)`.
    pub fn walk_into(&self, start: usize, seed: u64, sample: usize, out: &mut [u32]) {
        let mut rng = stream_rng(seed, start as u64, sample as u64);
        let mut cur = start;
        for slot in out.iter_mut() {
            *slot = cur as u32;
            cur = self.step(cur, &mut rng);
        }
    }

    pub fn walk(&self, start: usize, length: usize, seed: u64, sample: usize) -> Vec<u32> {
        let mut out = vec![0; length + 1];
        self.walk_into(start, seed, sample, &mut out);
        out
    }

    /// Empirical single-step frequencies from `start` over `draws` steps.
    pub fn step_frequencies(&self, start: usize, draws: usize, seed: u64) -> Vec<(usize, f64)> {
        let mut rng = stream_rng(seed, start as u64, u64::MAX);
        let mut hits = std::collections::BTreeMap::new();
        for _ in 0..draws {
            *hits.entry(self.step(start, &mut rng)).or_insert(0usize) += 1;
        }
        hits.into_iter()
            .map(|(k, v)| (k, v as f64 / draws as f64))
            .collect()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for a labelled component of a run.
pub fn derive_seed(seed: u64, tag: u64) -> u64 {
    splitmix64(splitmix64(seed) ^ tag)
}

fn stream_rng(seed: u64, start: u64, sample: u64) -> ChaCha8Rng {
    let s = splitmix64(splitmix64(splitmix64(seed) ^ start) ^ sample);
    ChaCha8Rng::seed_from_u64(s)
}

/// Samples `cfg.samples` walks from each start, in parallel. The result
/// depends only on the inputs, not on the thread count.
pub fn sample_walks(
    a: &SparseOperator,
    counts: SimplexCounts,
    starts: &[SimplexId],
    cfg: &WalkConfig,
) -> Result<WalkBatch> {
    cfg.validate()?;
    let sampler = WalkSampler::new(a, counts, cfg.biased)?;
    let globals = starts
        .iter()
        .map(|&s| {
            let g = counts.global(s);
            if s.order > 2 || s.index >= counts.0[s.order as usize] {
                Err(Error::invalid(format!("walk start {s} is not in the complex")))
            } else {
                Ok(g)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sample_from(&sampler, &globals, cfg))
}

/// Like [`sample_walks`] with a prebuilt sampler and global start indices.
pub fn sample_from(sampler: &WalkSampler, starts: &[usize], cfg: &WalkConfig) -> WalkBatch {
    let p = cfg.positions();
    let mut trajectories = vec![0u32; starts.len() * cfg.samples * p];
    let mut anonymous = vec![0u16; trajectories.len()];
    trajectories
        .par_chunks_mut(p)
        .zip(anonymous.par_chunks_mut(p))
        .enumerate()
        .for_each(|(c, (traj, anon))| {
            let (i, s) = (c / cfg.samples, c % cfg.samples);
            sampler.walk_into(starts[i], cfg.seed, s, traj);
            anonymize_into(traj, anon);
        });
    WalkBatch {
        starts: starts.to_vec(),
        samples: cfg.samples,
        length: cfg.length,
        trajectories,
        anonymous,
    }
}

/// First-occurrence labels counted from 1.
pub fn anonymize<T: Copy + PartialEq>(walk: &[T]) -> Vec<u16> {
    let mut out = vec![0; walk.len()];
    anonymize_into(walk, &mut out);
    out
}

fn anonymize_into<T: Copy + PartialEq>(walk: &[T], out: &mut [u16]) {
    // walks are short, a linear scan beats hashing
    let mut seen: Vec<T> = Vec::with_capacity(walk.len());
    for (o, &x) in out.iter_mut().zip(walk) {
        let label = match seen.iter().position(|&y| y == x) {
            Some(p) => p,
            None => {
                seen.push(x);
                seen.len() - 1
            }
        };
        *o = (label + 1) as u16;
    }
}

/// Gathers static simplex features along every walk.
///
/// `unified` is `[simplex, feature]`; the output is
/// `[start, sample, position, feature + 1]` with the anonymous label
/// divided by `length + 1` in the last channel.
pub fn gather_semantics(batch: &WalkBatch, unified: &Tensor<f32>) -> Result<Tensor<f32>> {
    unified.expect_rank("unified features", 2)?;
    let (rows, f) = (unified.shape()[0], unified.shape()[1]);
    let p = batch.positions();
    let scale = 1.0 / p as f32;
    let mut out = Vec::with_capacity(batch.trajectories.len() * (f + 1));
    for (&g, &a) in batch.trajectories.iter().zip(&batch.anonymous) {
        let g = g as usize;
        if g >= rows {
            return Err(Error::Internal(format!(
                "walk visits simplex {g}, features cover {rows}"
            )));
        }
        out.extend_from_slice(&unified.data()[g * f..(g + 1) * f]);
        out.push(a as f32 * scale);
    }
    Tensor::new(&[batch.num_starts(), batch.samples, p, f + 1], out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::complex::SimplicialComplex;
    use crate::operators::full_adjacency;

    fn tailed_triangle() -> SimplicialComplex {
        SimplicialComplex::from_edges(&[(1, 2), (1, 3), (2, 3), (2, 4)], true).unwrap()
    }

    #[test]
    fn transition_rows_on_fixture() {
        let c = tailed_triangle();
        let counts = c.counts();
        let e12 = counts.global(c.find(&[1, 2]).unwrap());
        let a1 = full_adjacency(&c, 1).unwrap();
        let row = transition_row(&a1, e12, false, counts);
        assert_eq!(row.len(), 6);
        assert!(row.iter().all(|&(_, p)| (p - 1.0 / 6.0).abs() < 1e-15));
        let a2 = full_adjacency(&c, 2).unwrap();
        let row = transition_row(&a2, e12, false, counts);
        assert_eq!(row.len(), 3);
        let biased = transition_row(&a1, e12, true, counts);
        let tri = counts.global(SimplexId::triangle(0));
        for (n, p) in biased {
            let want = if n == tri { 4.0 / 9.0 } else { 1.0 / 9.0 };
            assert!((p - want).abs() < 1e-12, "{n}: {p}");
        }
    }

    #[test]
    fn isolated_start_self_loops() {
        let c = SimplicialComplex::from_closure([0, 1, 2], [[1, 2]], []);
        let a = full_adjacency(&c, 1).unwrap();
        let cfg = WalkConfig {
            length: 5,
            samples: 3,
            ..Default::default()
        };
        let b = sample_walks(&a, c.counts(), &[SimplexId::vertex(0)], &cfg).unwrap();
        assert!(b.trajectories.iter().all(|&g| g == 0));
        assert!(b.anonymous.iter().all(|&l| l == 1));
    }

    #[test]
    fn anonymize_examples() {
        assert_eq!(anonymize(&['a', 'b', 'a', 'c']), vec![1, 2, 1, 3]);
        assert_eq!(anonymize(&[7, 7, 7]), vec![1, 1, 1]);
    }

    #[test]
    fn config_bounds() {
        let mut cfg = WalkConfig::default();
        assert!(cfg.validate().is_ok());
        cfg.length = 0;
        assert!(cfg.validate().is_err());
        cfg.length = 65;
        assert!(cfg.validate().is_err());
        cfg.length = 2;
        cfg.variant = 3;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dump_round_trip_and_size() {
        let c = tailed_triangle();
        let a = full_adjacency(&c, 1).unwrap();
        let cfg = WalkConfig {
            length: 1,
            samples: 1,
            ..Default::default()
        };
        let starts: Vec<_> = (0..4).map(SimplexId::vertex).collect();
        let b = sample_walks(&a, c.counts(), &starts, &cfg).unwrap();
        let mut buf = Vec::new();
        b.write_dump(&mut buf).unwrap();
        assert_eq!(buf.len(), 20 + 4 * 2 * 6);
        assert_eq!(WalkBatch::read_dump(&buf[..]).unwrap(), b);
        let mut j = Vec::new();
        b.write_jsonl(&mut j).unwrap();
        assert_eq!(WalkBatch::read_jsonl(&j[..]).unwrap().len(), 4);
    }

    #[test]
    fn gather_constant_walk() {
        let batch = WalkBatch {
            starts: vec![0],
            samples: 1,
            length: 2,
            trajectories: vec![0, 0, 0],
            anonymous: vec![1, 1, 1],
        };
        let u = Tensor::new(&[1, 2], vec![0.5, -1.0]).unwrap();
        let g = gather_semantics(&batch, &u).unwrap();
        assert_eq!(g.shape(), &[1, 1, 3, 3]);
        for p in 0..3 {
            assert_eq!(g.at(&[0, 0, p, 0]), 0.5);
            assert_eq!(g.at(&[0, 0, p, 2]), 1.0 / 3.0);
        }
    }
}
