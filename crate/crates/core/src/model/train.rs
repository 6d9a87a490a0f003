use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{forward, prepare_input, Model, ModelConfig, ParamVars};
use crate::data::{
    apply_mask, mean_fill, node_means, persistence, slice_time, window_at, window_starts, Dataset, MaskSpec,
    MetricAcc, Metrics, Split, Task, Window,
};
use crate::error::{Error, Result};
use crate::nnkernel::{read_params, write_params, LossKind, ParamStore, Tape, Tensor};
use crate::operators::full_adjacency;
use crate::walks::{derive_seed, sample_from, WalkBatch, WalkSampler};

const TAG_EVAL_WALKS: u64 = 0x6576_616c;
const TAG_EPOCH_WALKS: u64 = 0x7761_6c6b;
const TAG_SHUFFLE: u64 = 0x7368_7566;
const TAG_DROPOUT: u64 = 0x6472_6f70;
const TAG_TRAIN_MASK: u64 = 0x6d61_736b;
const TAG_PROBE_MASK: u64 = 0x7072_6f62;
const TAG_VAL_MASK: u64 = 0x7661_6c6d;
const TAG_TEST_MASK: u64 = 0x7465_7374;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub batch_size: usize,
    /// Training windows drawn per epoch (0 = all).
    pub windows_per_epoch: usize,
    /// Epochs between learning-rate decays.
    pub lr_step: usize,
    pub lr_gamma: f64,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Epochs between validation passes.
    pub val_every: usize,
    /// Validation windows per pass (evenly spaced; 0 = all).
    pub val_windows: usize,
    pub loss: LossKind,
    /// Reuse one walk sample for every epoch.
    pub freeze_walks: bool,
    /// Disable dropout.
    pub deterministic: bool,
    /// Global gradient-norm clip (0 = off).
    pub grad_clip: f64,
    pub mask: MaskSpec,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            lr: 3e-3,
            batch_size: 8,
            windows_per_epoch: 8,
            lr_step: 50,
            lr_gamma: 0.5,
            patience: 60,
            val_every: 10,
            val_windows: 16,
            loss: LossKind::Mae,
            freeze_walks: false,
            deterministic: false,
            grad_clip: 5.0,
            mask: MaskSpec::default(),
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.lr_step == 0 || self.val_every == 0 {
            return Err(Error::invalid(
                "epochs, batch_size, lr_step and val_every must be positive",
            ));
        }
        if !(self.lr > 0.0) || !(self.lr_gamma > 0.0) {
            return Err(Error::invalid("learning rate and decay must be positive"));
        }
        self.mask.validate()
    }

    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr * self.lr_gamma.powi((epoch / self.lr_step) as i32)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mae: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub best_epoch: Option<usize>,
    pub best_val_mae: Option<f64>,
    pub stopped_early: bool,
    /// MAE on a fixed set of scaled training windows before the first step.
    pub initial_train_mae: f64,
    /// Same windows, after training (best parameters).
    pub final_train_mae: f64,
    pub curve: Vec<EpochRecord>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub task: Task,
    pub split: Split,
    pub windows: usize,
    pub model: Metrics,
    pub baseline_name: String,
    pub baseline: Metrics,
}

/// Walk machinery shared by training and evaluation.
struct Context {
    sampler: WalkSampler,
    starts: Vec<usize>,
    edge: Tensor<f32>,
    tri: Tensor<f32>,
}

impl Context {
    fn new(ds: &Dataset, cfg: &ModelConfig) -> Result<Self> {
        if cfg.nodes != ds.nodes() || cfg.features != ds.features() {
            return Err(Error::invalid(format!(
                "model expects {} nodes and {} features, dataset has {} and {}",
                cfg.nodes,
                cfg.features,
                ds.nodes(),
                ds.features()
            )));
        }
        let a = full_adjacency(&ds.complex, cfg.walk_variant)?;
        let sampler = WalkSampler::new(&a, ds.complex.counts(), cfg.walk_biased)?;
        let (edge, tri) = ds.static_features();
        Ok(Context {
            sampler,
            starts: (0..ds.nodes()).collect(),
            edge,
            tri,
        })
    }

    fn walks(&self, cfg: &ModelConfig, seed: u64) -> WalkBatch {
        sample_from(&self.sampler, &self.starts, &cfg.walk_config(seed))
    }

    fn input(&self, cfg: &ModelConfig, w: &Window, walks: &WalkBatch) -> Result<Tensor<f32>> {
        prepare_input(cfg, &w.input, w.mask.as_ref(), &self.edge, &self.tri, walks)
    }
}

/// Windows of a (scaled) series; imputation masks are drawn over the whole
/// series with `mask`.
fn windows_of(
    series: &Tensor<f32>,
    cfg: &ModelConfig,
    mask: Option<&MaskSpec>,
    stride: usize,
) -> Result<Vec<Window>> {
    let m = match (cfg.task, mask) {
        (Task::Impute, Some(spec)) => Some(apply_mask(series, spec)?.1),
        (Task::Impute, None) => return Err(Error::invalid("imputation needs a mask spec")),
        _ => None,
    };
    window_starts(series.shape()[1], cfg.window, cfg.horizon, cfg.task)?
        .step_by(stride.max(1))
        .map(|s| window_at(series, s, cfg.window, cfg.horizon, cfg.task, m.as_ref()))
        .collect()
}

fn evenly(ws: Vec<Window>, k: usize) -> Vec<Window> {
    if k == 0 || ws.len() <= k {
        return ws;
    }
    let n = ws.len();
    let keep: Vec<usize> = (0..k).map(|i| i * n / k).collect();
    ws.into_iter()
        .enumerate()
        .filter(|(i, _)| keep.binary_search(i).is_ok())
        .map(|(_, w)| w)
        .collect()
}

fn loss_mask(w: &Window) -> Option<&Tensor<f32>> {
    w.mask.as_ref()
}

/// Mean absolute error of the model on scaled windows (masked cells only
/// for imputation).
fn scaled_mae(model: &Model, ctx: &Context, ws: &[Window], walks: &WalkBatch) -> Result<f64> {
    let preds = ws
        .par_iter()
        .map(|w| model.predict(&ctx.input(&model.config, w, walks)?))
        .collect::<Result<Vec<_>>>()?;
    let (mut n, mut sum) = (0usize, 0f64);
    for (w, p) in ws.iter().zip(&preds) {
        let m = loss_mask(w);
        if m.is_some_and(|m| m.sum_f64() == 0.0) {
            continue;
        }
        let cells = m.map_or(p.len() as f64, |m| m.sum_f64());
        let mae = crate::nnkernel::ops::masked_loss(p, &w.target, m, LossKind::Mae)?;
        sum += mae * cells;
        n += cells as usize;
    }
    if n == 0 {
        return Err(Error::EmptyMask);
    }
    Ok(sum / n as f64)
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(p: &ParamStore) -> Self {
        let z: Vec<Vec<f64>> = p.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        Adam {
            m: z.clone(),
            v: z,
            t: 0,
        }
    }

    fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (k, (_, p)) in params.iter_mut().enumerate() {
            for (i, x) in p.data_mut().iter_mut().enumerate() {
                let g = grads[k][i];
                let m = &mut self.m[k][i];
                let v = &mut self.v[k][i];
                *m = Self::B1 * *m + (1.0 - Self::B1) * g;
                *v = Self::B2 * *v + (1.0 - Self::B2) * g * g;
                let upd = lr * (*m / c1) / ((*v / c2).sqrt() + Self::EPS);
                *x = (*x as f64 - upd) as f32;
            }
        }
    }
}

/// Loss and parameter gradients for one window, in store order.
fn window_grad(
    model: &Model,
    xwalk: Tensor<f32>,
    w: &Window,
    kind: LossKind,
    dropout_seed: Option<u64>,
) -> Result<Option<(f64, Vec<Tensor<f32>>)>> {
    if w.mask.as_ref().is_some_and(|m| m.sum_f64() == 0.0) {
        return Ok(None);
    }
    let mut tape = Tape::<f32>::new();
    let x = tape.constant(xwalk);
    let pv = ParamVars::register(&mut tape, &model.params);
    let mut rng = dropout_seed.map(ChaCha8Rng::seed_from_u64);
    let y = forward(&mut tape, &model.config, &pv, x, rng.as_mut())?;
    let l = tape.loss(y, &w.target, loss_mask(w), kind)?;
    let loss = tape.value(l).data()[0] as f64;
    let mut g = tape.backward(l)?;
    let grads = model
        .params
        .names()
        .map(|n| {
            let v = pv.get(n)?;
            match g.take(v) {
                Some(t) => Ok(t),
                None => Ok(Tensor::zeros(model.params.require(n)?.shape())),
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Some((loss, grads)))
}

/// Trains a fresh model. Returns the best parameters seen on validation.
pub fn train(ds: &Dataset, cfg: ModelConfig, tc: &TrainConfig) -> Result<(Model, TrainReport)> {
    tc.validate()?;
    cfg.validate()?;
    let mut model = Model::new(cfg.clone(), tc.seed)?;
    let ctx = Context::new(ds, &cfg)?;
    let train_series = ds.scaled_split(Split::Train)?;
    let val_series = ds.scaled_split(Split::Val)?;
    let starts: Vec<usize> =
        window_starts(train_series.shape()[1], cfg.window, cfg.horizon, cfg.task)?.collect();

    let eval_walks = ctx.walks(&cfg, derive_seed(tc.seed, TAG_EVAL_WALKS));
    let probe_mask = tc.mask.with_seed(derive_seed(tc.seed, TAG_PROBE_MASK));
    let probe = evenly(
        windows_of(&train_series, &cfg, Some(&probe_mask), 1)?,
        tc.val_windows.max(16),
    );
    let val_mask = tc.mask.with_seed(derive_seed(tc.seed, TAG_VAL_MASK));
    let val = evenly(windows_of(&val_series, &cfg, Some(&val_mask), 1)?, tc.val_windows);

    let initial_train_mae = scaled_mae(&model, &ctx, &probe, &eval_walks)?;
    let mut adam = Adam::new(&model.params);
    let mut curve = Vec::with_capacity(tc.epochs);
    let mut best: Option<(usize, f64, ParamStore)> = None;
    let mut stopped_early = false;

    for epoch in 0..tc.epochs {
        let lr = tc.lr_at(epoch);
        let walks = if tc.freeze_walks {
            eval_walks.clone()
        } else {
            ctx.walks(
                &cfg,
                derive_seed(tc.seed, TAG_EPOCH_WALKS ^ ((epoch as u64 + 1) << 32)),
            )
        };
        let epoch_mask = match cfg.task {
            Task::Impute => Some(
                apply_mask(
                    &train_series,
                    &tc.mask
                        .with_seed(derive_seed(tc.seed, TAG_TRAIN_MASK ^ ((epoch as u64) << 32))),
                )?
                .1,
            ),
            Task::Forecast => None,
        };
        let mut order = starts.clone();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(
            tc.seed,
            TAG_SHUFFLE ^ ((epoch as u64) << 32),
        )));
        if tc.windows_per_epoch > 0 {
            order.truncate(tc.windows_per_epoch);
        }

        let (mut loss_sum, mut loss_n) = (0f64, 0usize);
        for (b, chunk) in order.chunks(tc.batch_size).enumerate() {
            let results = chunk
                .par_iter()
                .map(|&s| {
                    let w = window_at(
                        &train_series,
                        s,
                        cfg.window,
                        cfg.horizon,
                        cfg.task,
                        epoch_mask.as_ref(),
                    )?;
                    let xw = ctx.input(&cfg, &w, &walks)?;
                    let dseed = (!tc.deterministic)
                        .then(|| derive_seed(tc.seed, TAG_DROPOUT ^ ((epoch as u64) << 32) ^ s as u64));
                    window_grad(&model, xw, &w, tc.loss, dseed)
                })
                .collect::<Result<Vec<_>>>()?;
            let results: Vec<_> = results.into_iter().flatten().collect();
            if results.is_empty() {
                continue;
            }
            let mut total: Vec<Vec<f64>> = model.params.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
            let k = results.len() as f64;
            for (loss, grads) in &results {
                if !loss.is_finite() {
                    return Err(Error::Numeric(format!(
                        "non-finite training loss at epoch {epoch}, batch {b}"
                    )));
                }
                loss_sum += loss;
                loss_n += 1;
                for (acc, g) in total.iter_mut().zip(grads) {
                    for (a, v) in acc.iter_mut().zip(g.data()) {
                        *a += *v as f64 / k;
                    }
                }
            }
            let norm = total.iter().flatten().map(|g| g * g).sum::<f64>().sqrt();
            if !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite gradient at epoch {epoch}, batch {b}"
                )));
            }
            if tc.grad_clip > 0.0 && norm > tc.grad_clip {
                let s = tc.grad_clip / norm;
                total.iter_mut().flatten().for_each(|g| *g *= s);
            }
            adam.step(&mut model.params, &total, lr);
            if !model.params.all_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite parameters after epoch {epoch}, batch {b}"
                )));
            }
        }
        let train_loss = if loss_n > 0 {
            loss_sum / loss_n as f64
        } else {
            f64::NAN
        };

        let validate = (epoch + 1) % tc.val_every == 0 || epoch + 1 == tc.epochs;
        let val_mae = if validate && !val.is_empty() {
            Some(scaled_mae(&model, &ctx, &val, &eval_walks)?)
        } else {
            None
        };
        curve.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_mae,
        });
        if let Some(v) = val_mae {
            if !v.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite validation MAE at epoch {epoch}"
                )));
            }
            match &best {
                Some((_, b, _)) if v >= *b => {}
                _ => best = Some((epoch, v, model.params.clone())),
            }
            if let Some((be, _, _)) = &best {
                if epoch - be >= tc.patience {
                    stopped_early = true;
                    break;
                }
            }
        }
    }
    let (best_epoch, best_val_mae) = match best {
        Some((e, v, p)) => {
            model.params = p;
            (Some(e), Some(v))
        }
        None => (None, None),
    };
    let final_train_mae = scaled_mae(&model, &ctx, &probe, &eval_walks)?;
    let report = TrainReport {
        epochs_run: curve.len(),
        best_epoch,
        best_val_mae,
        stopped_early,
        initial_train_mae,
        final_train_mae,
        curve,
    };
    Ok((model, report))
}

/// Test-style evaluation on unscaled values against the task baseline:
/// persistence for forecasting, the training-split node mean for
/// imputation. Imputation windows do not overlap, so every masked cell
/// counts once.
pub fn evaluate(model: &Model, ds: &Dataset, split: Split, mask: &MaskSpec, seed: u64) -> Result<EvalReport> {
    let cfg = &model.config;
    let ctx = Context::new(ds, cfg)?;
    let walks = ctx.walks(cfg, derive_seed(seed, TAG_EVAL_WALKS));
    let series = ds.scaled_split(split)?;
    let spec = mask.with_seed(derive_seed(seed, TAG_TEST_MASK ^ split as u64));
    let stride = match cfg.task {
        Task::Forecast => 1,
        Task::Impute => cfg.window,
    };
    let ws = windows_of(&series, cfg, Some(&spec), stride)?;
    let preds = ws
        .par_iter()
        .map(|w| model.predict(&ctx.input(cfg, w, &walks)?))
        .collect::<Result<Vec<_>>>()?;
    let means = node_means(&slice_time(&ds.signal, ds.split_range(Split::Train))?)?;
    let (mut macc, mut bacc) = (MetricAcc::default(), MetricAcc::default());
    let mut used = 0;
    for (w, p) in ws.iter().zip(&preds) {
        let m = w.mask.as_ref();
        if m.is_some_and(|m| m.sum_f64() == 0.0) {
            continue;
        }
        used += 1;
        let target = ds.scaler.unscale(&w.target);
        macc = macc.add(&ds.scaler.unscale(p), &target, m)?;
        let base = match cfg.task {
            Task::Forecast => persistence(&ds.scaler.unscale(&w.input), cfg.horizon)?,
            Task::Impute => mean_fill(&means, cfg.window),
        };
        bacc = bacc.add(&base, &target, m)?;
    }
    Ok(EvalReport {
        task: cfg.task,
        split,
        windows: used,
        model: macc.finish()?,
        baseline_name: match cfg.task {
            Task::Forecast => "persistence".into(),
            Task::Impute => "mean".into(),
        },
        baseline: bacc.finish()?,
    })
}

/// A split with simulated gaps filled in by the model.
#[derive(Clone, Debug)]
pub struct Imputation {
    /// Unscaled ground truth, `[node, time, feature]`.
    pub truth: Tensor<f32>,
    /// 1 = hidden from the model.
    pub mask: Tensor<f32>,
    /// Truth on observed cells, model output on hidden ones.
    pub imputed: Tensor<f32>,
}

/// Masks `split` exactly as [`evaluate`] does and fills every hidden cell.
/// Non-overlapping windows tile the split; a last window aligned to the end
/// covers any remainder.
pub fn impute_split(
    model: &Model,
    ds: &Dataset,
    split: Split,
    mask: &MaskSpec,
    seed: u64,
) -> Result<Imputation> {
    let cfg = &model.config;
    if cfg.task != Task::Impute {
        return Err(Error::invalid("model was not trained for imputation"));
    }
    let ctx = Context::new(ds, cfg)?;
    let walks = ctx.walks(cfg, derive_seed(seed, TAG_EVAL_WALKS));
    let series = ds.scaled_split(split)?;
    let spec = mask.with_seed(derive_seed(seed, TAG_TEST_MASK ^ split as u64));
    let m = apply_mask(&series, &spec)?.1;
    let len = series.shape()[1];
    let mut starts: Vec<usize> = window_starts(len, cfg.window, cfg.horizon, Task::Impute)?
        .step_by(cfg.window)
        .collect();
    if len % cfg.window != 0 {
        starts.push(len - cfg.window);
    }
    let preds = starts
        .par_iter()
        .map(|&s| {
            let w = window_at(&series, s, cfg.window, cfg.horizon, Task::Impute, Some(&m))?;
            model.predict(&ctx.input(cfg, &w, &walks)?)
        })
        .collect::<Result<Vec<_>>>()?;
    let truth = ds.scaler.unscale(&series);
    let mut imputed = truth.clone();
    let (n, f) = (series.shape()[0], series.shape()[2]);
    for (&s, p) in starts.iter().zip(&preds) {
        let p = ds.scaler.unscale(p);
        for i in 0..n {
            for dt in 0..cfg.window {
                for k in 0..f {
                    let o = (i * len + s + dt) * f + k;
                    if m.data()[o] != 0.0 {
                        imputed.data_mut()[o] = p.data()[(i * cfg.window + dt) * f + k];
                    }
                }
            }
        }
    }
    Ok(Imputation {
        truth,
        mask: m,
        imputed,
    })
}

fn sidecar(path: &Path) -> PathBuf {
    path.with_extension("json")
}

/// Writes parameters to `path` and the config to `path` with a `.json`
/// extension.
pub fn save_model(model: &Model, path: &Path) -> Result<()> {
    write_params(BufWriter::new(File::create(path)?), &model.params)?;
    serde_json::to_writer_pretty(BufWriter::new(File::create(sidecar(path))?), &model.config)?;
    Ok(())
}

pub fn load_model(path: &Path) -> Result<Model> {
    let open =
        |p: &Path| File::open(p).map_err(|e| Error::invalid(format!("cannot open {}: {e}", p.display())));
    let params = read_params(BufReader::new(open(path)?))?;
    let config: ModelConfig = serde_json::from_reader(BufReader::new(open(&sidecar(path))?))?;
    Model::from_parts(config, params)
}
