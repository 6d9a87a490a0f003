//! The `stsimplex` command-line tool.
//!
//! Every command resolves its parameters from built-in defaults, then an
//! optional `--config` JSON file, then explicit flags, and writes the result
//! to `resolved_config.json` in its output directory. Passing that file back
//! with `--config` repeats the run.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::complex::{read_edge_list, read_points_csv, SimplicialComplex};
use crate::data::{random_planar_complex, synth, Dataset, MaskSpec, Split, SynthConfig, Task};
use crate::delaunay::delaunay_records;
use crate::error::{Error, Result};
use crate::model::{evaluate, impute_split, load_model, save_model, train, ModelConfig, TrainConfig};
use crate::nnkernel::LossKind;
use crate::operators::{boundary, full_adjacency, hodge_laplacian};
use crate::walks::{derive_seed, sample_from, transition_row, WalkConfig, WalkSampler};

const TAG_FREQ: u64 = 0x6672_6571;

#[derive(Debug, Parser)]
#[command(
    name = "stsimplex",
    version,
    about = "Simplicial complexes, cross-order walks and spatiotemporal models"
)]
pub struct Cli {
    /// Master seed; every random component derives its own stream from it.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads for walk sampling and batch evaluation.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
#[allow(clippy::large_enum_variant)]
pub enum Command {
    /// Build a complex from an edge list or a point set.
    Build(BuildArgs),
    /// Sample walks and report empirical step frequencies.
    Walk(WalkArgs),
    /// Generate a synthetic dataset.
    Synth(SynthArgs),
    /// Train a forecasting or imputation model and score it on the test split.
    Train(TrainArgs),
    /// Score a trained model against its task baseline.
    Eval(EvalArgs),
    /// Fill simulated gaps in a split with a trained imputation model.
    Impute(ImputeArgs),
    /// Measure walk-sampling throughput.
    Bench(BenchArgs),
    /// Write boundary matrices, Hodge Laplacians and block adjacencies as MatrixMarket files.
    ExportOperators(ExportArgs),
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputKind {
    #[default]
    Edges,
    Points,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Starts {
    /// Every vertex.
    #[default]
    Vertices,
    /// Every simplex of every order.
    All,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitArg {
    Train,
    Val,
    Test,
}

impl From<SplitArg> for Split {
    fn from(s: SplitArg) -> Self {
        match s {
            SplitArg::Train => Split::Train,
            SplitArg::Val => Split::Val,
            SplitArg::Test => Split::Test,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum TaskArg {
    Forecast,
    Impute,
}

impl From<TaskArg> for Task {
    fn from(t: TaskArg) -> Self {
        match t {
            TaskArg::Forecast => Task::Forecast,
            TaskArg::Impute => Task::Impute,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum LossArg {
    Mae,
    Mse,
}

impl From<LossArg> for LossKind {
    fn from(l: LossArg) -> Self {
        match l {
            LossArg::Mae => LossKind::Mae,
            LossArg::Mse => LossKind::Mse,
        }
    }
}

#[derive(Debug, Args)]
pub struct Common {
    /// JSON config file; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct WalkFlags {
    /// Steps per walk.
    #[arg(long)]
    pub length: Option<usize>,
    /// Walks per start.
    #[arg(long)]
    pub samples: Option<usize>,
    /// Block adjacency variant (1 or 2).
    #[arg(long)]
    pub variant: Option<u8>,
    /// Order-balanced transition probabilities.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub biased: Option<bool>,
    #[arg(long, value_enum)]
    pub starts: Option<Starts>,
}

#[derive(Debug, Args)]
pub struct MaskFlags {
    /// Independent per-cell missing rate.
    #[arg(long)]
    pub point_rate: Option<f64>,
    /// Block-failure probability per node per step.
    #[arg(long)]
    pub block_prob: Option<f64>,
    #[arg(long)]
    pub block_min: Option<usize>,
    #[arg(long)]
    pub block_max: Option<usize>,
}

impl MaskFlags {
    fn overlay(&self) -> Value {
        json!({
            "point_rate": self.point_rate,
            "block_prob": self.block_prob,
            "block_min": self.block_min,
            "block_max": self.block_max,
        })
    }
}

#[derive(Debug, Args)]
pub struct BuildArgs {
    #[command(flatten)]
    pub common: Common,
    /// Edge list (`i j` per line) or point CSV (`id,x,y`).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<InputKind>,
    /// Add every 3-clique of an edge list as a triangle.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub lift: Option<bool>,
}

#[derive(Debug, Args)]
pub struct WalkArgs {
    #[command(flatten)]
    pub common: Common,
    /// Complex JSON.
    #[arg(long)]
    pub complex: Option<PathBuf>,
    #[command(flatten)]
    pub walk: WalkFlags,
    /// Single-step draws per start for the frequency report (0 skips it).
    #[arg(long)]
    pub freq_draws: Option<usize>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub common: Common,
    /// Use this complex instead of a random planar one.
    #[arg(long)]
    pub complex: Option<PathBuf>,
    /// Vertices of the random planar complex.
    #[arg(long)]
    pub nodes: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub period: Option<f64>,
    #[arg(long)]
    pub noise: Option<f64>,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub common: Common,
    /// Dataset directory.
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long)]
    pub window: Option<usize>,
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub embed: Option<usize>,
    #[arg(long)]
    pub walk_length: Option<usize>,
    #[arg(long)]
    pub walk_samples: Option<usize>,
    #[arg(long)]
    pub walk_variant: Option<u8>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub walk_biased: Option<bool>,
    #[arg(long)]
    pub blocks: Option<usize>,
    /// Odd temporal kernel sizes, one per block.
    #[arg(long, value_delimiter = ',')]
    pub dw_kernels: Option<Vec<usize>>,
    #[arg(long)]
    pub diffusion_k: Option<usize>,
    #[arg(long)]
    pub adaptive_dim: Option<usize>,
    #[arg(long)]
    pub dropout: Option<f64>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_anonymous: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_adaptive: Option<bool>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_graph_norm: Option<bool>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub windows_per_epoch: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
    #[arg(long)]
    pub val_every: Option<usize>,
    #[arg(long, value_enum)]
    pub loss: Option<LossArg>,
    /// Sample walks once instead of every epoch.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub freeze_walks: Option<bool>,
    /// Disable dropout.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub deterministic: Option<bool>,
    #[command(flatten)]
    pub mask: MaskFlags,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Parameter file written by `train` (config sidecar alongside).
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub split: Option<SplitArg>,
    #[command(flatten)]
    pub mask: MaskFlags,
}

#[derive(Debug, Args)]
pub struct ImputeArgs {
    #[command(flatten)]
    pub eval: EvalArgs,
}

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub complex: Option<PathBuf>,
    #[command(flatten)]
    pub walk: WalkFlags,
    #[arg(long)]
    pub repetitions: Option<usize>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub complex: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BuildRun {
    pub input: Option<PathBuf>,
    pub kind: InputKind,
    pub lift: bool,
    pub out: PathBuf,
}

impl Default for BuildRun {
    fn default() -> Self {
        BuildRun {
            input: None,
            kind: InputKind::Edges,
            lift: true,
            out: PathBuf::from("out"),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkParams {
    pub length: usize,
    pub samples: usize,
    pub variant: u8,
    pub biased: bool,
    pub starts: Starts,
}

impl Default for WalkParams {
    fn default() -> Self {
        let w = WalkConfig::default();
        WalkParams {
            length: w.length,
            samples: w.samples,
            variant: w.variant,
            biased: w.biased,
            starts: Starts::Vertices,
        }
    }
}

impl WalkParams {
    fn config(&self, seed: u64) -> WalkConfig {
        WalkConfig {
            length: self.length,
            samples: self.samples,
            variant: self.variant,
            biased: self.biased,
            seed,
        }
    }
}

impl WalkFlags {
    fn overlay(&self) -> Value {
        json!({
            "length": self.length,
            "samples": self.samples,
            "variant": self.variant,
            "biased": self.biased,
            "starts": self.starts,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct WalkRun {
    pub complex: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub walk: WalkParams,
    pub freq_draws: usize,
}

impl Default for WalkRun {
    fn default() -> Self {
        WalkRun {
            complex: None,
            out: PathBuf::from("out"),
            seed: 0,
            walk: WalkParams::default(),
            freq_draws: 10_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthRun {
    pub complex: Option<PathBuf>,
    pub nodes: usize,
    pub out: PathBuf,
    pub seed: u64,
    pub synth: SynthConfig,
}

impl Default for SynthRun {
    fn default() -> Self {
        SynthRun {
            complex: None,
            nodes: 12,
            out: PathBuf::from("out"),
            seed: 0,
            synth: SynthConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainRun {
    pub data: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

impl Default for TrainRun {
    fn default() -> Self {
        TrainRun {
            data: None,
            out: PathBuf::from("out"),
            seed: 0,
            model: ModelConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalRun {
    pub data: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub split: Split,
    pub mask: MaskSpec,
}

impl Default for EvalRun {
    fn default() -> Self {
        EvalRun {
            data: None,
            model: None,
            out: PathBuf::from("out"),
            seed: 0,
            split: Split::Test,
            mask: MaskSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchRun {
    pub complex: Option<PathBuf>,
    pub out: PathBuf,
    pub seed: u64,
    pub walk: WalkParams,
    pub repetitions: usize,
}

impl Default for BenchRun {
    fn default() -> Self {
        BenchRun {
            complex: None,
            out: PathBuf::from("out"),
            seed: 0,
            walk: WalkParams::default(),
            repetitions: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExportRun {
    pub complex: Option<PathBuf>,
    pub out: PathBuf,
}

impl Default for ExportRun {
    fn default() -> Self {
        ExportRun {
            complex: None,
            out: PathBuf::from("out"),
        }
    }
}

/// Throughput report written by `bench` (schema in `schemas/bench.schema.json`).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub repetitions: usize,
    /// Wall time of each repetition, seconds.
    pub samples_s: Vec<f64>,
    pub median_s: f64,
    pub walks: usize,
    pub steps: usize,
    pub walks_per_second: f64,
    pub steps_per_second: f64,
    /// Transition tables plus one walk batch, bytes.
    pub peak_memory_bytes: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplexSummary {
    pub vertices: usize,
    pub edges: usize,
    pub triangles: usize,
}

impl ComplexSummary {
    pub fn of(c: &SimplicialComplex) -> Self {
        let [vertices, edges, triangles] = c.counts().0;
        ComplexSummary {
            vertices,
            edges,
            triangles,
        }
    }
}

/// Recursive merge; nulls in `b` leave `a` untouched.
fn merge(a: &mut Value, b: Value) {
    match (a, b) {
        (Value::Object(a), Value::Object(b)) => {
            for (k, v) in b {
                if v.is_null() {
                    continue;
                }
                match a.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        a.insert(k, v);
                    }
                }
            }
        }
        (a, b) => {
            if !b.is_null() {
                *a = b;
            }
        }
    }
}

fn resolve<T: Default + Serialize + DeserializeOwned>(file: Option<&Path>, overlay: Value) -> Result<T> {
    let mut v = serde_json::to_value(T::default())?;
    if let Some(p) = file {
        let f =
            File::open(p).map_err(|e| Error::invalid(format!("cannot open config {}: {e}", p.display())))?;
        let from_file: Value = serde_json::from_reader(BufReader::new(f))?;
        if !from_file.is_object() {
            return Err(Error::invalid(format!(
                "config {} is not a JSON object",
                p.display()
            )));
        }
        merge(&mut v, from_file);
    }
    merge(&mut v, overlay);
    Ok(serde_json::from_value(v)?)
}

fn required<'a>(p: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::invalid(format!("missing --{flag}")))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

fn prepare_out(out: &Path, command: &str, run: &impl Serialize, threads: Option<usize>) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut v = serde_json::to_value(run)?;
    if let Value::Object(m) = &mut v {
        m.insert("command".into(), json!(command));
        m.insert("threads".into(), json!(threads));
    }
    write_json(&out.join("resolved_config.json"), &v)
}

fn load_complex(p: &Path) -> Result<SimplicialComplex> {
    SimplicialComplex::load(p)
}

fn open(p: &Path) -> Result<File> {
    File::open(p).map_err(|e| Error::invalid(format!("cannot open {}: {e}", p.display())))
}

pub fn cmd_build(run: &BuildRun) -> Result<ComplexSummary> {
    let input = required(&run.input, "input")?;
    let name = input.display().to_string();
    let complex = match run.kind {
        InputKind::Edges => {
            let edges = read_edge_list(BufReader::new(open(input)?), &name)?;
            SimplicialComplex::from_edges(&edges, run.lift)?
        }
        InputKind::Points => delaunay_records(&read_points_csv(BufReader::new(open(input)?), &name)?)?,
    };
    complex.save(&run.out.join("complex.json"))?;
    let summary = ComplexSummary::of(&complex);
    write_json(&run.out.join("summary.json"), &summary)?;
    Ok(summary)
}

fn start_indices(c: &SimplicialComplex, starts: Starts) -> Vec<usize> {
    match starts {
        Starts::Vertices => (0..c.counts().0[0]).collect(),
        Starts::All => (0..c.counts().total()).collect(),
    }
}

#[derive(Debug, Serialize)]
struct FreqRow {
    start: usize,
    start_order: usize,
    neighbor: usize,
    neighbor_order: usize,
    empirical: f64,
    analytic: f64,
}

/// Samples walks into `walks.bin` and `walks.jsonl`; with `freq_draws > 0`
/// also writes `frequencies.csv` comparing empirical and exact transition
/// probabilities per start.
pub fn cmd_walk(run: &WalkRun) -> Result<()> {
    let complex = load_complex(required(&run.complex, "complex")?)?;
    let cfg = run.walk.config(run.seed);
    cfg.validate()?;
    let counts = complex.counts();
    let a = full_adjacency(&complex, cfg.variant)?;
    let sampler = WalkSampler::new(&a, counts, cfg.biased)?;
    let starts = start_indices(&complex, run.walk.starts);
    let batch = sample_from(&sampler, &starts, &cfg);
    batch.write_dump(BufWriter::new(File::create(run.out.join("walks.bin"))?))?;
    batch.write_jsonl(BufWriter::new(File::create(run.out.join("walks.jsonl"))?))?;
    if run.freq_draws > 0 {
        let fseed = derive_seed(run.seed, TAG_FREQ);
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(run.out.join("frequencies.csv"))?));
        for &s in &starts {
            let exact = transition_row(&a, s, cfg.biased, counts);
            let emp = sampler.step_frequencies(s, run.freq_draws, fseed);
            let mut targets: Vec<usize> = exact.iter().map(|p| p.0).chain(emp.iter().map(|p| p.0)).collect();
            targets.sort_unstable();
            targets.dedup();
            let lookup = |v: &[(usize, f64)], t| v.iter().find(|p| p.0 == t).map_or(0.0, |p| p.1);
            for t in targets {
                w.serialize(FreqRow {
                    start: s,
                    start_order: counts.order_of(s),
                    neighbor: t,
                    neighbor_order: counts.order_of(t),
                    empirical: lookup(&emp, t),
                    analytic: lookup(&exact, t),
                })
                .map_err(|e| crate::complex::io::csv_err(e, "frequencies.csv"))?;
            }
        }
        w.flush()?;
    }
    Ok(())
}

pub fn cmd_synth(run: &SynthRun) -> Result<ComplexSummary> {
    let cfg = SynthConfig {
        seed: run.seed,
        ..run.synth.clone()
    };
    let ds = match &run.complex {
        Some(p) => synth(&load_complex(p)?, None, &cfg)?,
        None => {
            let (c, pts) = random_planar_complex(run.nodes, derive_seed(run.seed, 0x706c_616e))?;
            synth(&c, Some(&pts), &cfg)?
        }
    };
    ds.save(&run.out)?;
    Ok(ComplexSummary::of(&ds.complex))
}

/// Trains, then writes `model.sprm` (+ `model.json`), `loss_curve.csv`,
/// `train_report.json` and test-split `metrics.json`.
pub fn cmd_train(run: &TrainRun) -> Result<crate::model::EvalReport> {
    let ds = Dataset::load(required(&run.data, "data")?)?;
    let model_cfg = ModelConfig {
        nodes: ds.nodes(),
        features: ds.features(),
        ..run.model.clone()
    };
    let (model, report) = train(&ds, model_cfg, &run.train)?;
    save_model(&model, &run.out.join("model.sprm"))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(run.out.join("loss_curve.csv"))?));
    for r in &report.curve {
        w.serialize(r)
            .map_err(|e| crate::complex::io::csv_err(e, "loss_curve.csv"))?;
    }
    w.flush()?;
    write_json(&run.out.join("train_report.json"), &report)?;
    let eval = evaluate(&model, &ds, Split::Test, &run.train.mask, run.seed)?;
    write_json(&run.out.join("metrics.json"), &eval)?;
    Ok(eval)
}

pub fn cmd_eval(run: &EvalRun) -> Result<crate::model::EvalReport> {
    let ds = Dataset::load(required(&run.data, "data")?)?;
    let model = load_model(required(&run.model, "model")?)?;
    let eval = evaluate(&model, &ds, run.split, &run.mask, run.seed)?;
    write_json(&run.out.join("metrics.json"), &eval)?;
    Ok(eval)
}

#[derive(Debug, Serialize)]
struct ImputedRow {
    node: usize,
    time: usize,
    feature: usize,
    missing: u8,
    truth: f32,
    imputed: f32,
}

/// Writes `imputed.csv` (one row per cell) and the matching `metrics.json`.
pub fn cmd_impute(run: &EvalRun) -> Result<crate::model::EvalReport> {
    let ds = Dataset::load(required(&run.data, "data")?)?;
    let model = load_model(required(&run.model, "model")?)?;
    let imp = impute_split(&model, &ds, run.split, &run.mask, run.seed)?;
    let [n, t, f] = [imp.truth.shape()[0], imp.truth.shape()[1], imp.truth.shape()[2]];
    let offset = ds.split_range(run.split).start;
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(run.out.join("imputed.csv"))?));
    for i in 0..n {
        for s in 0..t {
            for k in 0..f {
                let o = (i * t + s) * f + k;
                w.serialize(ImputedRow {
                    node: ds.complex.vertices()[i],
                    time: offset + s,
                    feature: k,
                    missing: (imp.mask.data()[o] != 0.0) as u8,
                    truth: imp.truth.data()[o],
                    imputed: imp.imputed.data()[o],
                })
                .map_err(|e| crate::complex::io::csv_err(e, "imputed.csv"))?;
            }
        }
    }
    w.flush()?;
    let eval = evaluate(&model, &ds, run.split, &run.mask, run.seed)?;
    write_json(&run.out.join("metrics.json"), &eval)?;
    Ok(eval)
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

pub fn cmd_bench(run: &BenchRun) -> Result<BenchReport> {
    if run.repetitions == 0 {
        return Err(Error::invalid("repetitions must be positive"));
    }
    let complex = load_complex(required(&run.complex, "complex")?)?;
    let cfg = run.walk.config(run.seed);
    cfg.validate()?;
    let a = full_adjacency(&complex, cfg.variant)?;
    let sampler = WalkSampler::new(&a, complex.counts(), cfg.biased)?;
    let starts = start_indices(&complex, run.walk.starts);
    let mut samples = Vec::with_capacity(run.repetitions);
    let mut walks = 0;
    let mut steps = 0;
    let mut batch_bytes = 0;
    for _ in 0..run.repetitions {
        let t0 = Instant::now();
        let batch = sample_from(&sampler, &starts, &cfg);
        samples.push(t0.elapsed().as_secs_f64());
        walks = batch.num_starts() * batch.samples;
        steps = batch.steps();
        batch_bytes = batch.trajectories.len() * 4 + batch.anonymous.len() * 2 + batch.starts.len() * 8;
    }
    let median_s = median(&samples);
    let rate = |n: usize| if median_s > 0.0 { n as f64 / median_s } else { 0.0 };
    let report = BenchReport {
        repetitions: run.repetitions,
        median_s,
        walks,
        steps,
        walks_per_second: rate(walks),
        steps_per_second: rate(steps),
        peak_memory_bytes: sampler.heap_bytes() + batch_bytes,
        samples_s: samples,
    };
    write_json(&run.out.join("bench.json"), &report)?;
    Ok(report)
}

/// Writes `B1`, `B2` (signed), `L0`..`L2` and the two block adjacencies.
pub fn cmd_export(run: &ExportRun) -> Result<Vec<PathBuf>> {
    let c = load_complex(required(&run.complex, "complex")?)?;
    let ops = [
        ("B1", boundary(&c, 1, true)?),
        ("B2", boundary(&c, 2, true)?),
        ("L0", hodge_laplacian(&c, 0)?),
        ("L1", hodge_laplacian(&c, 1)?),
        ("L2", hodge_laplacian(&c, 2)?),
        ("A_full_v1", full_adjacency(&c, 1)?),
        ("A_full_v2", full_adjacency(&c, 2)?),
    ];
    let mut written = Vec::new();
    for (name, op) in ops {
        let p = run.out.join(format!("{name}.mtx"));
        let mut w = BufWriter::new(File::create(&p)?);
        op.write_matrix_market(&mut w)?;
        w.flush()?;
        written.push(p);
    }
    Ok(written)
}

fn print_json(v: &impl Serialize) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn eval_overlay(a: &EvalArgs, seed: Option<u64>) -> Value {
    json!({
        "data": a.data,
        "model": a.model,
        "out": a.common.out,
        "seed": seed,
        "split": a.split.map(Split::from),
        "mask": a.mask.overlay(),
    })
}

fn train_overlay(a: &TrainArgs, seed: Option<u64>) -> Value {
    let ablation = json!({
        "no_anonymous": a.no_anonymous,
        "no_adaptive": a.no_adaptive,
        "no_graph_norm": a.no_graph_norm,
    });
    json!({
        "data": a.data,
        "out": a.common.out,
        "seed": seed,
        "model": {
            "task": a.task.map(Task::from),
            "window": a.window,
            "horizon": a.horizon,
            "embed": a.embed,
            "walk_length": a.walk_length,
            "walk_samples": a.walk_samples,
            "walk_variant": a.walk_variant,
            "walk_biased": a.walk_biased,
            "blocks": a.blocks,
            "dw_kernels": a.dw_kernels,
            "diffusion_k": a.diffusion_k,
            "adaptive_dim": a.adaptive_dim,
            "dropout": a.dropout,
            "ablation": ablation,
        },
        "train": {
            "epochs": a.epochs,
            "lr": a.lr,
            "batch_size": a.batch_size,
            "windows_per_epoch": a.windows_per_epoch,
            "patience": a.patience,
            "val_every": a.val_every,
            "loss": a.loss.map(LossKind::from),
            "freeze_walks": a.freeze_walks,
            "deterministic": a.deterministic,
            "mask": a.mask.overlay(),
        },
    })
}

/// Resolves and runs one command.
pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::invalid("--threads must be positive"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Internal(format!("thread pool: {e}")))?;
    }
    let seed = cli.seed;
    let threads = cli.threads;
    match cli.command {
        Command::Build(a) => {
            let run: BuildRun = resolve(
                a.common.config.as_deref(),
                json!({ "input": a.input, "kind": a.kind, "lift": a.lift, "out": a.common.out }),
            )?;
            prepare_out(&run.out, "build", &run, threads)?;
            print_json(&cmd_build(&run)?)
        }
        Command::Walk(a) => {
            let run: WalkRun = resolve(
                a.common.config.as_deref(),
                json!({
                    "complex": a.complex,
                    "out": a.common.out,
                    "seed": seed,
                    "walk": a.walk.overlay(),
                    "freq_draws": a.freq_draws,
                }),
            )?;
            prepare_out(&run.out, "walk", &run, threads)?;
            cmd_walk(&run)
        }
        Command::Synth(a) => {
            let run: SynthRun = resolve(
                a.common.config.as_deref(),
                json!({
                    "complex": a.complex,
                    "nodes": a.nodes,
                    "out": a.common.out,
                    "seed": seed,
                    "synth": { "steps": a.steps, "features": a.features, "period": a.period, "noise": a.noise },
                }),
            )?;
            let run = SynthRun {
                synth: SynthConfig {
                    seed: run.seed,
                    ..run.synth.clone()
                },
                ..run
            };
            prepare_out(&run.out, "synth", &run, threads)?;
            print_json(&cmd_synth(&run)?)
        }
        Command::Train(a) => {
            let mut run: TrainRun = resolve(a.common.config.as_deref(), train_overlay(&a, seed))?;
            if a.blocks.is_some() && a.dw_kernels.is_none() {
                let base = ModelConfig::default().dw_kernels;
                run.model.dw_kernels = (0..run.model.blocks).map(|b| base[b % base.len()]).collect();
            }
            run.train.seed = run.seed;
            if let Some(d) = &run.data {
                let m: crate::data::Manifest =
                    serde_json::from_reader(BufReader::new(open(&d.join("manifest.json"))?))?;
                run.model.nodes = m.nodes;
                run.model.features = m.features;
            }
            prepare_out(&run.out, "train", &run, threads)?;
            print_json(&cmd_train(&run)?)
        }
        Command::Eval(a) => {
            let run: EvalRun = resolve(a.common.config.as_deref(), eval_overlay(&a, seed))?;
            prepare_out(&run.out, "eval", &run, threads)?;
            print_json(&cmd_eval(&run)?)
        }
        Command::Impute(a) => {
            let run: EvalRun = resolve(a.eval.common.config.as_deref(), eval_overlay(&a.eval, seed))?;
            prepare_out(&run.out, "impute", &run, threads)?;
            print_json(&cmd_impute(&run)?)
        }
        Command::Bench(a) => {
            let run: BenchRun = resolve(
                a.common.config.as_deref(),
                json!({
                    "complex": a.complex,
                    "out": a.common.out,
                    "seed": seed,
                    "walk": a.walk.overlay(),
                    "repetitions": a.repetitions,
                }),
            )?;
            prepare_out(&run.out, "bench", &run, threads)?;
            print_json(&cmd_bench(&run)?)
        }
        Command::ExportOperators(a) => {
            let run: ExportRun = resolve(
                a.common.config.as_deref(),
                json!({ "complex": a.complex, "out": a.common.out }),
            )?;
            prepare_out(&run.out, "export-operators", &run, threads)?;
            for p in cmd_export(&run)? {
                println!("{}", p.display());
            }
            Ok(())
        }
    }
}
