//! Synthetic datasets, chronological splits, windows, missing-data masks
//! and evaluation metrics.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::ops::Range;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::complex::{read_points_csv, SimplicialComplex};
use crate::delaunay::delaunay;
use crate::error::{Error, Result};
use crate::features::{self, FeatureBundle};
use crate::nnkernel::Tensor;
use crate::operators::hodge_laplacian;
use crate::walks::derive_seed;

/// Parameters of the synthetic signal generator.
///
/// Each node carries `offset + amp * sin(2 pi t / period + phase)` plus a
/// diffusion-coupled AR(1) term `d_t = ar * (I - coupling * L0 / dmax) d_{t-1} + e_t`
/// with `e_t ~ N(0, noise^2)`, plus observation noise `N(0, (noise / 2)^2)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub steps: usize,
    pub features: usize,
    pub period: f64,
    pub ar: f64,
    pub coupling: f64,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            steps: 600,
            features: 1,
            period: 24.0,
            ar: 0.8,
            coupling: 0.5,
            noise: 0.05,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps < 100 {
            return Err(Error::invalid(format!(
                "need at least 100 steps, got {}",
                self.steps
            )));
        }
        if self.features == 0 {
            return Err(Error::invalid("need at least one feature"));
        }
        if !(self.period > 0.0)
            || !(self.noise >= 0.0)
            || !self.ar.is_finite()
            || !(0.0..=1.0).contains(&self.coupling)
        {
            return Err(Error::invalid(
                "period must be positive, noise non-negative, coupling in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Chronological split fractions.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Splits {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for Splits {
    fn default() -> Self {
        Splits {
            train: 0.7,
            val: 0.1,
            test: 0.2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

/// Per-feature min-max scaling to `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub min: Vec<f32>,
    pub max: Vec<f32>,
}

impl Scaler {
    /// Fits on `[node, time, feature]`.
    pub fn fit(x: &Tensor<f32>) -> Result<Self> {
        x.expect_rank("scaler input", 3)?;
        let f = x.shape()[2];
        let mut min = vec![f32::INFINITY; f];
        let mut max = vec![f32::NEG_INFINITY; f];
        for (i, &v) in x.data().iter().enumerate() {
            min[i % f] = min[i % f].min(v);
            max[i % f] = max[i % f].max(v);
        }
        if x.is_empty() {
            return Err(Error::invalid("cannot fit a scaler on no data"));
        }
        Ok(Scaler { min, max })
    }

    fn range(&self, k: usize) -> f32 {
        let r = self.max[k] - self.min[k];
        if r > 0.0 {
            r
        } else {
            1.0
        }
    }

    pub fn scale(&self, x: &Tensor<f32>) -> Tensor<f32> {
        self.apply(x, |v, k| (v - self.min[k]) / self.range(k))
    }

    pub fn unscale(&self, x: &Tensor<f32>) -> Tensor<f32> {
        self.apply(x, |v, k| v * self.range(k) + self.min[k])
    }

    fn apply(&self, x: &Tensor<f32>, op: impl Fn(f32, usize) -> f32) -> Tensor<f32> {
        let f = self.min.len();
        let data = x.data().iter().enumerate().map(|(i, &v)| op(v, i % f)).collect();
        Tensor::new(x.shape(), data).expect("same shape")
    }
}

/// Sidecar describing a dataset directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub t_total: usize,
    pub features: usize,
    pub nodes: usize,
    pub splits: Splits,
    pub seed: u64,
    pub generator: Option<SynthConfig>,
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub complex: SimplicialComplex,
    /// Planar coordinates per vertex position, when known.
    pub coords: Option<Vec<[f64; 2]>>,
    /// `[node, time, feature]`, unscaled.
    pub signal: Tensor<f32>,
    /// `[edge, feature]`
    pub edge_feats: Tensor<f32>,
    /// `[triangle, feature]`
    pub tri_feats: Tensor<f32>,
    pub splits: Splits,
    pub scaler: Scaler,
    pub manifest: Manifest,
}

/// Random points in the unit square, kept at least `0.1 / sqrt(n)` apart.
pub fn random_points(n: usize, seed: u64) -> Vec<[f64; 2]> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x706f_696e));
    let gap = 0.1 / (n.max(1) as f64).sqrt();
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
    while pts.len() < n {
        let p = [rng.random::<f64>(), rng.random::<f64>()];
        if pts.iter().all(|q| (p[0] - q[0]).hypot(p[1] - q[1]) >= gap) {
            pts.push(p);
        }
    }
    pts
}

/// Delaunay complex over `n` random points plus the points.
pub fn random_planar_complex(n: usize, seed: u64) -> Result<(SimplicialComplex, Vec<[f64; 2]>)> {
    let pts = random_points(n, seed);
    Ok((delaunay(&pts)?, pts))
}

/// Generates a signal on `complex`. Edge and triangle features are
/// lengths and areas when `coords` are given, zeros otherwise.
pub fn synth(complex: &SimplicialComplex, coords: Option<&[[f64; 2]]>, cfg: &SynthConfig) -> Result<Dataset> {
    cfg.validate()?;
    let n = complex.vertices().len();
    if n == 0 {
        return Err(Error::invalid("cannot generate a signal on an empty complex"));
    }
    let (t_n, f_n) = (cfg.steps, cfg.features);
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x7369_676e));
    let tau = std::f64::consts::TAU;
    let offset: Vec<f64> = (0..n * f_n).map(|_| rng.random_range(-0.5..0.5)).collect();
    let amp: Vec<f64> = (0..n * f_n).map(|_| rng.random_range(0.5..1.5)).collect();
    let phase: Vec<f64> = (0..n * f_n).map(|_| rng.random_range(0.0..tau)).collect();

    let lap = hodge_laplacian(complex, 0)?;
    let dmax = (0..n).map(|i| lap.get(i, i)).max().unwrap_or(0).max(1) as f64;
    let innov = Normal::new(0.0, cfg.noise.max(0.0)).map_err(|e| Error::invalid(e.to_string()))?;
    let obs = Normal::new(0.0, cfg.noise.max(0.0) / 2.0).map_err(|e| Error::invalid(e.to_string()))?;

    let mut d = vec![0f64; n * f_n];
    let mut out = vec![0f32; n * t_n * f_n];
    for t in 0..t_n {
        if t > 0 {
            let prev = d.clone();
            for i in 0..n {
                let (cols, vals) = lap.row(i);
                for k in 0..f_n {
                    let ld: f64 = cols
                        .iter()
                        .zip(vals)
                        .map(|(&j, &v)| v as f64 * prev[j * f_n + k])
                        .sum();
                    d[i * f_n + k] = cfg.ar * (prev[i * f_n + k] - cfg.coupling * ld / dmax);
                }
            }
        }
        for v in d.iter_mut() {
            *v += innov.sample(&mut rng);
        }
        for i in 0..n {
            for k in 0..f_n {
                let j = i * f_n + k;
                let s = offset[j] + amp[j] * (tau * t as f64 / cfg.period + phase[j] + 0.3 * k as f64).sin();
                out[(i * t_n + t) * f_n + k] = (s + d[j] + obs.sample(&mut rng)) as f32;
            }
        }
    }
    let signal = Tensor::new(&[n, t_n, f_n], out)?;
    let (edge_feats, tri_feats) = match coords {
        Some(c) => (
            features::edge_lengths(complex, c)?,
            features::triangle_areas(complex, c)?,
        ),
        None => (
            Tensor::zeros(&[complex.edges().len(), 1]),
            Tensor::zeros(&[complex.triangles().len(), 1]),
        ),
    };
    let manifest = Manifest {
        t_total: t_n,
        features: f_n,
        nodes: n,
        splits: Splits::default(),
        seed: cfg.seed,
        generator: Some(cfg.clone()),
    };
    Dataset::new(
        complex.clone(),
        coords.map(|c| c.to_vec()),
        signal,
        edge_feats,
        tri_feats,
        manifest,
    )
}

impl Dataset {
    pub fn new(
        complex: SimplicialComplex,
        coords: Option<Vec<[f64; 2]>>,
        signal: Tensor<f32>,
        edge_feats: Tensor<f32>,
        tri_feats: Tensor<f32>,
        manifest: Manifest,
    ) -> Result<Self> {
        let splits = manifest.splits;
        let bundle = FeatureBundle::new(signal, edge_feats, tri_feats)?;
        bundle.check_against(&complex)?;
        let s = splits;
        if [s.train, s.val, s.test].iter().any(|v| !(*v >= 0.0))
            || (s.train + s.val + s.test - 1.0).abs() > 1e-9
        {
            return Err(Error::invalid(
                "split fractions must be non-negative and sum to 1",
            ));
        }
        let FeatureBundle { node, edge, tri } = bundle;
        let mut ds = Dataset {
            complex,
            coords,
            signal: node,
            edge_feats: edge,
            tri_feats: tri,
            splits,
            scaler: Scaler {
                min: vec![],
                max: vec![],
            },
            manifest,
        };
        let train = slice_time(&ds.signal, ds.split_range(Split::Train))?;
        ds.scaler = Scaler::fit(&train)?;
        Ok(ds)
    }

    pub fn nodes(&self) -> usize {
        self.signal.shape()[0]
    }

    pub fn steps(&self) -> usize {
        self.signal.shape()[1]
    }

    pub fn features(&self) -> usize {
        self.signal.shape()[2]
    }

    /// Contiguous time range of a split.
    pub fn split_range(&self, s: Split) -> Range<usize> {
        let t = self.steps();
        let a = (self.splits.train * t as f64).round() as usize;
        let b = ((self.splits.train + self.splits.val) * t as f64).round() as usize;
        match s {
            Split::Train => 0..a.min(t),
            Split::Val => a.min(t)..b.min(t),
            Split::Test => b.min(t)..t,
        }
    }

    /// Min-max scaled signal of one split.
    pub fn scaled_split(&self, s: Split) -> Result<Tensor<f32>> {
        Ok(self.scaler.scale(&slice_time(&self.signal, self.split_range(s))?))
    }

    /// Scaled edge and triangle features (each divided by its maximum).
    pub fn static_features(&self) -> (Tensor<f32>, Tensor<f32>) {
        let norm = |t: &Tensor<f32>| {
            let m = t.data().iter().fold(0f32, |a, v| a.max(v.abs()));
            if m > 0.0 {
                t.map(|v| v / m)
            } else {
                t.clone()
            }
        };
        (norm(&self.edge_feats), norm(&self.tri_feats))
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        self.complex.save(&dir.join("complex.json"))?;
        features::write_node_csv(
            BufWriter::new(File::create(dir.join("nodes.csv"))?),
            &self.complex,
            &self.signal,
        )?;
        let edges: Vec<Vec<usize>> = self.complex.edges().iter().map(|e| e.to_vec()).collect();
        features::write_simplex_csv(
            BufWriter::new(File::create(dir.join("edges.csv"))?),
            &edges,
            &self.edge_feats,
        )?;
        let tris: Vec<Vec<usize>> = self.complex.triangles().iter().map(|e| e.to_vec()).collect();
        features::write_simplex_csv(
            BufWriter::new(File::create(dir.join("triangles.csv"))?),
            &tris,
            &self.tri_feats,
        )?;
        if let Some(coords) = &self.coords {
            let mut w = csv::Writer::from_writer(BufWriter::new(File::create(dir.join("points.csv"))?));
            let err = |e| crate::complex::io::csv_err(e, "points.csv");
            w.write_record(["id", "x", "y"]).map_err(err)?;
            for (v, p) in self.complex.vertices().iter().zip(coords) {
                w.write_record([v.to_string(), p[0].to_string(), p[1].to_string()])
                    .map_err(err)?;
            }
            w.flush()?;
        }
        let f = File::create(dir.join("manifest.json"))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &self.manifest)?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: Manifest = serde_json::from_reader(BufReader::new(open(&dir.join("manifest.json"))?))?;
        let complex = SimplicialComplex::load(&dir.join("complex.json"))?;
        let signal = features::read_node_csv(
            BufReader::new(open(&dir.join("nodes.csv"))?),
            &complex,
            "nodes.csv",
        )?;
        let edge = features::read_simplex_csv(
            BufReader::new(open(&dir.join("edges.csv"))?),
            &complex,
            1,
            "edges.csv",
        )?;
        let tri = features::read_simplex_csv(
            BufReader::new(open(&dir.join("triangles.csv"))?),
            &complex,
            2,
            "triangles.csv",
        )?;
        let pts_path = dir.join("points.csv");
        let coords = if pts_path.exists() {
            let recs = read_points_csv(BufReader::new(File::open(&pts_path)?), "points.csv")?;
            let mut coords = vec![[f64::NAN; 2]; complex.vertices().len()];
            for r in recs {
                if let Some(i) = complex.vertex_position(r.id) {
                    coords[i] = [r.x, r.y];
                }
            }
            Some(coords)
        } else {
            None
        };
        if signal.shape()[1] != manifest.t_total || signal.shape()[2] != manifest.features {
            return Err(Error::invalid(format!(
                "nodes.csv has shape {:?}, manifest says {} steps and {} features",
                signal.shape(),
                manifest.t_total,
                manifest.features
            )));
        }
        Dataset::new(complex, coords, signal, edge, tri, manifest)
    }
}

fn open(p: &Path) -> Result<File> {
    File::open(p).map_err(|e| Error::invalid(format!("cannot open {}: {e}", p.display())))
}

/// Time slice of `[node, time, feature]`.
pub fn slice_time(x: &Tensor<f32>, r: Range<usize>) -> Result<Tensor<f32>> {
    x.expect_rank("time slice input", 3)?;
    let (n, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if r.start > r.end || r.end > t {
        return Err(Error::shape(format!("time range {r:?} outside 0..{t}")));
    }
    let len = r.end - r.start;
    let mut out = Vec::with_capacity(n * len * f);
    for i in 0..n {
        out.extend_from_slice(&x.data()[(i * t + r.start) * f..(i * t + r.end) * f]);
    }
    Tensor::new(&[n, len, f], out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Forecast,
    Impute,
}

impl std::str::FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "forecast" => Ok(Task::Forecast),
            "impute" => Ok(Task::Impute),
            _ => Err(Error::invalid(format!("unknown task {s:?}"))),
        }
    }
}

/// One model input with its target. For imputation `target` is the clean
/// window and `mask` marks the missing cells (1 = missing).
#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    pub start: usize,
    pub input: Tensor<f32>,
    pub target: Tensor<f32>,
    pub mask: Option<Tensor<f32>>,
}

/// Start offsets of all stride-1 windows in a series of length `len`.
pub fn window_starts(len: usize, w: usize, h: usize, task: Task) -> Result<Range<usize>> {
    let span = match task {
        Task::Forecast => w + h,
        Task::Impute => w,
    };
    if w == 0 || span > len {
        return Err(Error::invalid(format!(
            "series of length {len} is too short for windows of {span} steps"
        )));
    }
    Ok(0..len - span + 1)
}

/// Cuts `series` (`[node, time, feature]`, one split) into windows.
/// Imputation needs `mask` over the same series.
pub fn window(
    series: &Tensor<f32>,
    w: usize,
    h: usize,
    task: Task,
    mask: Option<&Tensor<f32>>,
) -> Result<Vec<Window>> {
    let len = series.shape()[1];
    window_starts(len, w, h, task)?
        .map(|s| window_at(series, s, w, h, task, mask))
        .collect()
}

pub fn window_at(
    series: &Tensor<f32>,
    start: usize,
    w: usize,
    h: usize,
    task: Task,
    mask: Option<&Tensor<f32>>,
) -> Result<Window> {
    match task {
        Task::Forecast => Ok(Window {
            start,
            input: slice_time(series, start..start + w)?,
            target: slice_time(series, start + w..start + w + h)?,
            mask: None,
        }),
        Task::Impute => {
            let mask = mask.ok_or_else(|| Error::invalid("imputation windows need a mask"))?;
            if mask.shape() != series.shape() {
                return Err(Error::shape(format!(
                    "mask {:?} does not match series {:?}",
                    mask.shape(),
                    series.shape()
                )));
            }
            let target = slice_time(series, start..start + w)?;
            let m = slice_time(mask, start..start + w)?;
            let input = zero_fill(&target, &m);
            Ok(Window {
                start,
                input,
                target,
                mask: Some(m),
            })
        }
    }
}

fn zero_fill(x: &Tensor<f32>, mask: &Tensor<f32>) -> Tensor<f32> {
    let data = x
        .data()
        .iter()
        .zip(mask.data())
        .map(|(&v, &m)| if m != 0.0 { 0.0 } else { v })
        .collect();
    Tensor::new(x.shape(), data).expect("same shape")
}

/// Missing-data simulation: independent point dropouts plus sensor-failure
/// blocks that hide every feature of one node for a contiguous run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MaskSpec {
    pub point_rate: f64,
    /// Block-event probability per node per step.
    pub block_prob: f64,
    pub block_min: usize,
    pub block_max: usize,
    pub seed: u64,
}

impl Default for MaskSpec {
    fn default() -> Self {
        MaskSpec {
            point_rate: 0.05,
            block_prob: 0.0015,
            block_min: 12,
            block_max: 48,
            seed: 0,
        }
    }
}

impl MaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.point_rate) || !(0.0..=1.0).contains(&self.block_prob) {
            return Err(Error::invalid("mask rates must lie in [0, 1]"));
        }
        if self.block_min == 0 || self.block_min > self.block_max {
            return Err(Error::invalid("block lengths need 0 < min <= max"));
        }
        Ok(())
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        MaskSpec { seed, ..self.clone() }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockEvent {
    pub node: usize,
    pub start: usize,
    pub len: usize,
}

/// Mask (1 = missing) of the given block events, clipped to the series.
pub fn block_mask(shape: &[usize], events: &[BlockEvent]) -> Tensor<f32> {
    let mut m: Tensor<f32> = Tensor::zeros(shape);
    let (n, t, f) = (shape[0], shape[1], shape[2]);
    for e in events.iter().filter(|e| e.node < n) {
        for s in e.start..(e.start + e.len).min(t) {
            let o = (e.node * t + s) * f;
            m.data_mut()[o..o + f].iter_mut().for_each(|v| *v = 1.0);
        }
    }
    m
}

/// Samples a mask for `signal` (`[node, time, feature]`) and returns the
/// zero-filled signal with it. Each node draws from its own stream.
pub fn apply_mask(signal: &Tensor<f32>, spec: &MaskSpec) -> Result<(Tensor<f32>, Tensor<f32>)> {
    spec.validate()?;
    signal.expect_rank("masked signal", 3)?;
    let (n, t, f) = (signal.shape()[0], signal.shape()[1], signal.shape()[2]);
    let mut events = Vec::new();
    let mut mask: Tensor<f32> = Tensor::zeros(signal.shape());
    for i in 0..n {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, i as u64));
        for s in 0..t {
            for k in 0..f {
                if rng.random::<f64>() < spec.point_rate {
                    mask.data_mut()[(i * t + s) * f + k] = 1.0;
                }
            }
            if spec.block_prob > 0.0 && rng.random::<f64>() < spec.block_prob {
                let len = rng.random_range(spec.block_min..=spec.block_max);
                events.push(BlockEvent {
                    node: i,
                    start: s,
                    len,
                });
            }
        }
    }
    let blocks = block_mask(signal.shape(), &events);
    for (m, b) in mask.data_mut().iter_mut().zip(blocks.data()) {
        *m = m.max(*b);
    }
    Ok((zero_fill(signal, &mask), mask))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mae: f64,
    pub rmse: f64,
    /// Percent.
    pub mre: f64,
}

/// MAE, RMSE and MRE over the positions selected by `mask` (nonzero), or
/// all positions.
pub fn metrics(pred: &Tensor<f32>, target: &Tensor<f32>, mask: Option<&Tensor<f32>>) -> Result<Metrics> {
    MetricAcc::default().add(pred, target, mask)?.finish()
}

/// Streaming accumulator for [`metrics`] across many windows.
#[derive(Clone, Copy, Debug, Default)]
pub struct MetricAcc {
    n: f64,
    abs: f64,
    sq: f64,
    tgt: f64,
}

impl MetricAcc {
    pub fn add(
        mut self,
        pred: &Tensor<f32>,
        target: &Tensor<f32>,
        mask: Option<&Tensor<f32>>,
    ) -> Result<Self> {
        if pred.shape() != target.shape() || mask.is_some_and(|m| m.shape() != pred.shape()) {
            return Err(Error::shape("metric inputs differ in shape"));
        }
        for i in 0..pred.len() {
            if mask.is_some_and(|m| m.data()[i] == 0.0) {
                continue;
            }
            let (p, y) = (pred.data()[i] as f64, target.data()[i] as f64);
            let e = p - y;
            self.n += 1.0;
            self.abs += e.abs();
            self.sq += e * e;
            self.tgt += y.abs();
        }
        Ok(self)
    }

    pub fn finish(self) -> Result<Metrics> {
        if self.n == 0.0 {
            return Err(Error::EmptyMask);
        }
        if self.tgt == 0.0 {
            return Err(Error::Numeric("MRE is undefined: targets sum to zero".into()));
        }
        Ok(Metrics {
            mae: self.abs / self.n,
            rmse: (self.sq / self.n).sqrt(),
            mre: 100.0 * self.abs / self.tgt,
        })
    }
}

/// Repeats the last input step `h` times.
pub fn persistence(input: &Tensor<f32>, h: usize) -> Result<Tensor<f32>> {
    input.expect_rank("persistence input", 3)?;
    let (n, w, f) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    if w == 0 {
        return Err(Error::invalid("persistence needs at least one input step"));
    }
    Ok(Tensor::from_fn(&[n, h, f], |i| input.at(&[i[0], w - 1, i[2]])))
}

/// Per-node, per-feature mean over a reference series (`[node, time, feature]`).
pub fn node_means(series: &Tensor<f32>) -> Result<Tensor<f32>> {
    series.expect_rank("mean input", 3)?;
    let (n, t, f) = (series.shape()[0], series.shape()[1], series.shape()[2]);
    if t == 0 {
        return Err(Error::invalid("cannot average an empty series"));
    }
    let mut acc = vec![0f64; n * f];
    for i in 0..n {
        for s in 0..t {
            for k in 0..f {
                acc[i * f + k] += series.data()[(i * t + s) * f + k] as f64;
            }
        }
    }
    Tensor::new(&[n, f], acc.into_iter().map(|v| (v / t as f64) as f32).collect())
}

/// Mean-imputation baseline: every cell of a `[node, steps, feature]`
/// window is filled with that node's mean.
pub fn mean_fill(means: &Tensor<f32>, steps: usize) -> Tensor<f32> {
    let (n, f) = (means.shape()[0], means.shape()[1]);
    Tensor::from_fn(&[n, steps, f], |i| means.at(&[i[0], i[2]]))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t3(n: usize, t: usize, f: usize, v: &[f32]) -> Tensor<f32> {
        Tensor::new(&[n, t, f], v.to_vec()).unwrap()
    }

    #[test]
    fn forecast_window_count() {
        let s = Tensor::zeros(&[2, 25, 1]);
        assert_eq!(window(&s, 12, 12, Task::Forecast, None).unwrap().len(), 2);
        assert!(window(&s, 12, 14, Task::Forecast, None).is_err());
    }

    #[test]
    fn mask_extremes() {
        let s = Tensor::full(&[3, 20, 2], 1.0);
        let none = MaskSpec {
            point_rate: 0.0,
            block_prob: 0.0,
            ..Default::default()
        };
        let (x, m) = apply_mask(&s, &none).unwrap();
        assert_eq!(x, s);
        assert!(m.data().iter().all(|&v| v == 0.0));
        let all = MaskSpec {
            point_rate: 1.0,
            ..none
        };
        let (x, m) = apply_mask(&s, &all).unwrap();
        assert!(x.data().iter().all(|&v| v == 0.0));
        assert!(m.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn forced_block() {
        let m = block_mask(
            &[2, 30, 2],
            &[BlockEvent {
                node: 0,
                start: 10,
                len: 12,
            }],
        );
        for s in 0..30 {
            for k in 0..2 {
                assert_eq!(m.at(&[0, s, k]), if (10..22).contains(&s) { 1.0 } else { 0.0 });
                assert_eq!(m.at(&[1, s, k]), 0.0);
            }
        }
    }

    #[test]
    fn metric_examples() {
        let y = t3(1, 2, 1, &[10.0, 10.0]);
        let p = t3(1, 2, 1, &[13.0, 14.0]);
        let m = metrics(&p, &y, None).unwrap();
        assert!((m.mae - 3.5).abs() < 1e-12);
        assert!((m.rmse - 12.5f64.sqrt()).abs() < 1e-12);
        assert!((m.mre - 35.0).abs() < 1e-12);
        let z = metrics(&y, &y, None).unwrap();
        assert_eq!((z.mae, z.rmse, z.mre), (0.0, 0.0, 0.0));
        let sel = t3(1, 2, 1, &[1.0, 0.0]);
        let y1 = t3(1, 2, 1, &[4.0, 0.0]);
        let p1 = t3(1, 2, 1, &[6.0, 9.0]);
        let m = metrics(&p1, &y1, Some(&sel)).unwrap();
        assert_eq!((m.mae, m.rmse, m.mre), (2.0, 2.0, 50.0));
        assert!(matches!(
            metrics(&p1, &Tensor::zeros(&[1, 2, 1]), None),
            Err(Error::Numeric(_))
        ));
    }

    #[test]
    fn persistence_three_steps() {
        let x = t3(1, 3, 1, &[1.0, 5.0, 2.0]);
        assert_eq!(persistence(&x, 2).unwrap().data(), &[2.0, 2.0]);
    }

    #[test]
    fn exact_sinusoids_without_noise() {
        let c = SimplicialComplex::from_edges(&[(0, 1), (1, 2)], true).unwrap();
        let cfg = SynthConfig {
            steps: 120,
            noise: 0.0,
            coupling: 0.0,
            ..Default::default()
        };
        let ds = synth(&c, None, &cfg).unwrap();
        for i in 0..3 {
            for t in 0..96 {
                let a = ds.signal.at(&[i, t, 0]);
                let b = ds.signal.at(&[i, t + 24, 0]);
                assert!((a - b).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn splits_and_scaler() {
        let (c, pts) = random_planar_complex(6, 1).unwrap();
        let ds = synth(
            &c,
            Some(&pts),
            &SynthConfig {
                steps: 200,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(ds.split_range(Split::Train), 0..140);
        assert_eq!(ds.split_range(Split::Val), 140..160);
        assert_eq!(ds.split_range(Split::Test), 160..200);
        let tr = ds.scaled_split(Split::Train).unwrap();
        let lo = tr.data().iter().cloned().fold(f32::INFINITY, f32::min);
        let hi = tr.data().iter().cloned().fold(f32::NEG_INFINITY, f32::max);
        assert!(lo.abs() < 1e-6 && (hi - 1.0).abs() < 1e-6);
        let back = ds.scaler.unscale(&ds.scaler.scale(&ds.signal));
        assert!(back.max_abs_diff(&ds.signal) < 1e-5);
    }

    #[test]
    fn disk_round_trip() {
        let (c, pts) = random_planar_complex(5, 2).unwrap();
        let ds = synth(
            &c,
            Some(&pts),
            &SynthConfig {
                steps: 100,
                ..Default::default()
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        ds.save(dir.path()).unwrap();
        let back = Dataset::load(dir.path()).unwrap();
        assert!(back.signal.max_abs_diff(&ds.signal) < 1e-6);
        assert_eq!(back.complex, ds.complex);
        assert_eq!(back.manifest, ds.manifest);
    }
}
