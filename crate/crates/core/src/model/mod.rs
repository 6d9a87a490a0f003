//! The walk-based convolutional network.
//!
//! Input is the walk tensor `[node, time, channel, position, sample]`
//! built from one window. The stem compresses `(position, sample)` into an
//! embedding of width `D`; each block applies a per-lane temporal
//! convolution, a normalization, adaptive-adjacency diffusion fused with
//! the stem output through a sigmoid gate, a second normalization, and the
//! two grouped feed-forward stages, then adds the block input back.

mod train;

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::Task;
use crate::error::{Error, Result};
use crate::features::{expand, walk_tensor, FeatureBundle};
use crate::nnkernel::{NormKind, ParamStore, Real, Tape, Tensor, Var};
use crate::walks::{derive_seed, WalkBatch, WalkConfig};

pub use train::{
    evaluate, impute_split, load_model, save_model, train, EpochRecord, EvalReport, Imputation, TrainConfig,
    TrainReport,
};

/// Switches that remove one component each.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct Ablation {
    /// Drop the anonymous-label channel.
    pub no_anonymous: bool,
    /// Skip adaptive-adjacency diffusion and the gate.
    pub no_adaptive: bool,
    /// Replace graph-wise normalization by per-(node, time, channel)
    /// layer normalization over the embedding.
    pub no_graph_norm: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub task: Task,
    pub nodes: usize,
    /// Data features per node.
    pub features: usize,
    pub window: usize,
    pub horizon: usize,
    pub embed: usize,
    pub walk_length: usize,
    pub walk_samples: usize,
    pub walk_variant: u8,
    pub walk_biased: bool,
    pub blocks: usize,
    pub dw_kernels: Vec<usize>,
    pub diffusion_k: usize,
    /// Width of the node embeddings behind the adaptive adjacency.
    pub adaptive_dim: usize,
    pub dropout: f64,
    pub ffn_expansion: usize,
    /// Number of stem filters.
    pub stem_maps: usize,
    pub norm_eps: f64,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            task: Task::Forecast,
            nodes: 1,
            features: 1,
            window: 12,
            horizon: 12,
            embed: 16,
            walk_length: 3,
            walk_samples: 2,
            walk_variant: 1,
            walk_biased: false,
            blocks: 3,
            dw_kernels: vec![7, 5, 3],
            diffusion_k: 2,
            adaptive_dim: 8,
            dropout: 0.1,
            ffn_expansion: 2,
            stem_maps: 4,
            norm_eps: 1e-5,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("nodes", self.nodes),
            ("features", self.features),
            ("window", self.window),
            ("embed", self.embed),
            ("adaptive_dim", self.adaptive_dim),
            ("ffn_expansion", self.ffn_expansion),
            ("stem_maps", self.stem_maps),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return Err(Error::invalid(format!("model {name} must be positive")));
        }
        if self.task == Task::Forecast && self.horizon == 0 {
            return Err(Error::invalid("forecast horizon must be positive"));
        }
        if self.dw_kernels.len() != self.blocks {
            return Err(Error::invalid(format!(
                "{} temporal kernels for {} blocks",
                self.dw_kernels.len(),
                self.blocks
            )));
        }
        if let Some(k) = self.dw_kernels.iter().find(|&&k| k % 2 == 0) {
            return Err(Error::invalid(format!("temporal kernel size {k} is even")));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::invalid("dropout must lie in [0, 1)"));
        }
        if !(self.norm_eps > 0.0) {
            return Err(Error::invalid("norm eps must be positive"));
        }
        self.walk_config(0).validate()
    }

    pub fn walk_config(&self, seed: u64) -> WalkConfig {
        WalkConfig {
            length: self.walk_length,
            samples: self.walk_samples,
            variant: self.walk_variant,
            biased: self.walk_biased,
            seed,
        }
    }

    /// Width of the node signal fed to the walks (values, plus the mask
    /// for imputation).
    pub fn input_width(&self) -> usize {
        match self.task {
            Task::Forecast => self.features,
            Task::Impute => 2 * self.features,
        }
    }

    /// Channels of the walk tensor.
    pub fn channels(&self) -> usize {
        self.input_width() + usize::from(!self.ablation.no_anonymous)
    }

    pub fn out_steps(&self) -> usize {
        match self.task {
            Task::Forecast => self.horizon,
            Task::Impute => self.window,
        }
    }

    fn stem_positions(&self) -> usize {
        (self.walk_length + 1 - 2) / 2 + 1
    }

    pub fn walk_tensor_shape(&self) -> [usize; 5] {
        [
            self.nodes,
            self.window,
            self.channels(),
            self.walk_length + 1,
            self.walk_samples,
        ]
    }

    fn norm_kind(&self) -> NormKind {
        if self.ablation.no_graph_norm {
            NormKind::Local
        } else {
            NormKind::Graph
        }
    }
}

enum Init {
    Zeros,
    Ones,
    Uniform(f64),
}

fn param_specs(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, Init)> {
    let (n, c, d, r) = (cfg.nodes, cfg.channels(), cfg.embed, cfg.ffn_expansion);
    let (m, s, p) = (cfg.stem_maps, cfg.walk_samples, cfg.stem_positions());
    let fan = |k: usize| Init::Uniform(1.0 / (k as f64).sqrt());
    let mut v = vec![
        ("stem.kernel".to_string(), vec![m, 2, s], fan(2 * s)),
        ("stem.proj".into(), vec![m * p, d], fan(m * p)),
        ("stem.bias".into(), vec![d], Init::Zeros),
    ];
    if !cfg.ablation.no_adaptive {
        v.push(("adj.u".into(), vec![n, cfg.adaptive_dim], Init::Uniform(1.0)));
        v.push(("adj.v".into(), vec![n, cfg.adaptive_dim], Init::Uniform(1.0)));
    }
    for (b, &k) in cfg.dw_kernels.iter().enumerate() {
        let pre = format!("block{b}");
        v.push((format!("{pre}.dw"), vec![n, c, d, k], fan(k)));
        for norm in ["norm1", "norm2"] {
            v.push((format!("{pre}.{norm}.gain"), vec![d], Init::Ones));
            v.push((format!("{pre}.{norm}.bias"), vec![d], Init::Zeros));
        }
        if !cfg.ablation.no_adaptive {
            let scale = 1.0 / ((cfg.diffusion_k + 1) as f64 * (d as f64).sqrt());
            for hop in 0..=cfg.diffusion_k {
                v.push((format!("{pre}.diff.w{hop}"), vec![d, d], Init::Uniform(scale)));
            }
        }
        for (ffn, groups, lanes) in [("ffn1", c, d), ("ffn2", d, c)] {
            v.push((
                format!("{pre}.{ffn}.w1"),
                vec![groups, r * lanes, lanes],
                fan(lanes),
            ));
            v.push((format!("{pre}.{ffn}.b1"), vec![groups * r * lanes], Init::Zeros));
            v.push((
                format!("{pre}.{ffn}.w2"),
                vec![groups, lanes, r * lanes],
                fan(r * lanes),
            ));
            v.push((format!("{pre}.{ffn}.b2"), vec![groups * lanes], Init::Zeros));
        }
    }
    let out = cfg.out_steps() * cfg.features;
    v.push(("head.w".into(), vec![cfg.window * c * d, out], Init::Zeros));
    v.push(("head.b".into(), vec![out], Init::Zeros));
    v
}

/// Fresh parameters for `cfg`. The output head starts at zero.
pub fn init_params(cfg: &ModelConfig, seed: u64) -> Result<ParamStore> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0x696e_6974));
    let mut store = ParamStore::new();
    for (name, shape, init) in param_specs(cfg) {
        let t = match init {
            Init::Zeros => Tensor::zeros(&shape),
            Init::Ones => Tensor::full(&shape, 1.0),
            Init::Uniform(b) => Tensor::from_fn(&shape, |_| rng.random_range(-b..b) as f32),
        };
        store.insert(name, t);
    }
    Ok(store)
}

/// Checks that `params` has exactly the names and shapes `cfg` needs.
pub fn check_params(cfg: &ModelConfig, params: &ParamStore) -> Result<()> {
    let specs = param_specs(cfg);
    for (name, shape, _) in &specs {
        params.require(name)?.expect_shape(name, shape)?;
    }
    if params.len() != specs.len() {
        return Err(Error::invalid(format!(
            "checkpoint has {} parameters, config needs {}",
            params.len(),
            specs.len()
        )));
    }
    Ok(())
}

/// Parameters registered on a tape, by name.
pub struct ParamVars(HashMap<String, Var>);

impl ParamVars {
    pub fn register<T: Real>(tape: &mut Tape<T>, params: &ParamStore) -> Self {
        ParamVars(
            params
                .iter()
                .map(|(n, t)| (n.to_string(), tape.param(t.cast())))
                .collect(),
        )
    }

    /// Wraps variables already on a tape.
    pub fn from_vars(vars: impl IntoIterator<Item = (String, Var)>) -> Self {
        ParamVars(vars.into_iter().collect())
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.0
            .get(name)
            .copied()
            .ok_or_else(|| Error::Internal(format!("parameter {name} not registered")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.0.iter().map(|(k, &v)| (k.as_str(), v))
    }
}

/// Builds the walk tensor for one window.
///
/// `input` is `[node, window, features]` (zero-filled where missing),
/// `mask` marks missing cells for imputation. Edge and triangle features
/// are padded or truncated to the input width.
pub fn prepare_input(
    cfg: &ModelConfig,
    input: &Tensor<f32>,
    mask: Option<&Tensor<f32>>,
    edge: &Tensor<f32>,
    tri: &Tensor<f32>,
    walks: &WalkBatch,
) -> Result<Tensor<f32>> {
    input.expect_shape("model input", &[cfg.nodes, cfg.window, cfg.features])?;
    let node = match (cfg.task, mask) {
        (Task::Forecast, _) => input.clone(),
        (Task::Impute, Some(m)) => {
            m.expect_shape("model mask", input.shape())?;
            let f = cfg.features;
            Tensor::from_fn(&[cfg.nodes, cfg.window, 2 * f], |i| {
                let src = [i[0], i[1], i[2] % f];
                if i[2] < f {
                    if m.at(&src) != 0.0 {
                        0.0
                    } else {
                        input.at(&src)
                    }
                } else {
                    m.at(&src)
                }
            })
        }
        (Task::Impute, None) => return Err(Error::invalid("imputation needs a mask")),
    };
    if walks.length != cfg.walk_length || walks.samples != cfg.walk_samples {
        return Err(Error::shape(format!(
            "walks have length {} and {} samples, model expects {} and {}",
            walks.length, walks.samples, cfg.walk_length, cfg.walk_samples
        )));
    }
    let bundle = FeatureBundle::new(node, edge.clone(), tri.clone())?;
    let unified = expand(&bundle, cfg.window, cfg.input_width())?;
    let wt = walk_tensor(&unified, walks, cfg.nodes)?;
    if cfg.ablation.no_anonymous {
        drop_last_channel(&wt)
    } else {
        Ok(wt)
    }
}

fn drop_last_channel(wt: &Tensor<f32>) -> Result<Tensor<f32>> {
    let s = wt.shape();
    let (c, inner) = (s[2], s[3] * s[4]);
    let mut out = Vec::with_capacity(wt.len() / c * (c - 1));
    for chunk in wt.data().chunks(c * inner) {
        out.extend_from_slice(&chunk[..(c - 1) * inner]);
    }
    Tensor::new(&[s[0], s[1], c - 1, s[3], s[4]], out)
}

/// Stem: `[n, t, c, positions, samples]` to `[n, t, c, embed]`.
pub fn stem<T: Real>(tape: &mut Tape<T>, x: Var, kernel: Var, proj: Var, bias: Var) -> Result<Var> {
    let s = tape.value(x).shape().to_vec();
    if s.len() != 5 || s[3] < 2 {
        return Err(Error::shape(format!(
            "stem expects [node, time, channel, positions >= 2, samples], got {s:?}"
        )));
    }
    let conv = tape.conv2d(x, kernel, (2, 1))?;
    let cs = tape.value(conv).shape().to_vec();
    let rows = s[0] * s[1] * s[2];
    let flat = tape.reshape(conv, &[rows, cs[3] * cs[4] * cs[5]])?;
    let y = tape.matmul(flat, proj)?;
    let y = tape.add_bias(y, bias)?;
    let d = tape.value(y).shape()[1];
    tape.reshape(y, &[s[0], s[1], s[2], d])
}

/// `softmax_rows(relu(u v^T))`.
pub fn adaptive_adjacency<T: Real>(tape: &mut Tape<T>, u: Var, v: Var) -> Result<Var> {
    let vt = tape.permute(v, &[1, 0])?;
    let uv = tape.matmul(u, vt)?;
    let r = tape.relu(uv);
    tape.softmax_rows(r)
}

/// `sum_k A^k H W_k` for `H: [node, .., embed]`.
pub fn diffuse<T: Real>(tape: &mut Tape<T>, h: Var, a: Var, weights: &[Var]) -> Result<Var> {
    let shape = tape.value(h).shape().to_vec();
    let (n, d) = (shape[0], *shape.last().expect("rank"));
    let total: usize = shape.iter().product();
    let mut hop = tape.reshape(h, &[n, total / n])?;
    let mut z: Option<Var> = None;
    for (k, &w) in weights.iter().enumerate() {
        if k > 0 {
            hop = tape.matmul(a, hop)?;
        }
        let rows = tape.reshape(hop, &[total / d, d])?;
        let term = tape.matmul(rows, w)?;
        z = Some(match z {
            Some(acc) => tape.add(acc, term)?,
            None => term,
        });
    }
    let z = z.ok_or_else(|| Error::invalid("diffusion needs at least one weight"))?;
    tape.reshape(z, &shape)
}

/// `g * x + (1 - g) * z` with `g = sigmoid(x + z)`.
pub fn gate_fuse<T: Real>(tape: &mut Tape<T>, x: Var, z: Var) -> Result<Var> {
    tape.gate(x, z)
}

/// Two grouped pointwise layers with GELU between, over the last axis of
/// `x: [n, t, groups * lanes]`.
fn conv_ffn<T: Real>(tape: &mut Tape<T>, x: Var, p: &ParamVars, pre: &str) -> Result<Var> {
    let w1 = p.get(&format!("{pre}.w1"))?;
    let b1 = p.get(&format!("{pre}.b1"))?;
    let w2 = p.get(&format!("{pre}.w2"))?;
    let b2 = p.get(&format!("{pre}.b2"))?;
    let h = tape.grouped_pointwise(x, w1, Some(b1))?;
    let h = tape.gelu(h);
    tape.grouped_pointwise(h, w2, Some(b2))
}

fn dropout<T: Real>(tape: &mut Tape<T>, x: Var, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Result<Var> {
    match rng {
        Some(rng) if rate > 0.0 => {
            let keep = T::from_f64c(1.0 / (1.0 - rate));
            let shape = tape.value(x).shape().to_vec();
            let m = Tensor::from_fn(&shape, |_| {
                if rng.random::<f64>() < rate {
                    T::zero()
                } else {
                    keep
                }
            });
            tape.mul_const(x, m)
        }
        _ => Ok(x),
    }
}

/// Records the full network on `tape` and returns the prediction
/// `[node, out_steps, features]`. Dropout is active when `rng` is given.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    cfg: &ModelConfig,
    p: &ParamVars,
    xwalk: Var,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Result<Var> {
    tape.value(xwalk)
        .expect_shape("walk tensor", &cfg.walk_tensor_shape())?;
    let (n, w, c, d) = (cfg.nodes, cfg.window, cfg.channels(), cfg.embed);
    let xs = stem(
        tape,
        xwalk,
        p.get("stem.kernel")?,
        p.get("stem.proj")?,
        p.get("stem.bias")?,
    )?;
    let adj = if cfg.ablation.no_adaptive {
        None
    } else {
        Some(adaptive_adjacency(tape, p.get("adj.u")?, p.get("adj.v")?)?)
    };
    let kind = cfg.norm_kind();
    let mut x = xs;
    for b in 0..cfg.blocks {
        let pre = format!("block{b}");
        let norm = |tape: &mut Tape<T>, h: Var, which: &str| -> Result<Var> {
            let g = p.get(&format!("{pre}.{which}.gain"))?;
            let bb = p.get(&format!("{pre}.{which}.bias"))?;
            tape.layer_norm(h, g, bb, cfg.norm_eps, kind)
        };
        let h = tape.dwconv1d(x, p.get(&format!("{pre}.dw"))?)?;
        let h = norm(tape, h, "norm1")?;
        let h = match adj {
            Some(a) => {
                let ws = (0..=cfg.diffusion_k)
                    .map(|k| p.get(&format!("{pre}.diff.w{k}")))
                    .collect::<Result<Vec<_>>>()?;
                let z = diffuse(tape, h, a, &ws)?;
                gate_fuse(tape, xs, z)?
            }
            None => h,
        };
        let h = norm(tape, h, "norm2")?;

        let f = tape.reshape(h, &[n, w, c * d])?;
        let f = conv_ffn(tape, f, p, &format!("{pre}.ffn1"))?;
        let f = dropout(tape, f, cfg.dropout, rng.as_deref_mut())?;
        let f = tape.reshape(f, &[n, w, c, d])?;

        let f = tape.permute(f, &[0, 1, 3, 2])?;
        let f = tape.reshape(f, &[n, w, d * c])?;
        let f = conv_ffn(tape, f, p, &format!("{pre}.ffn2"))?;
        let f = dropout(tape, f, cfg.dropout, rng.as_deref_mut())?;
        let f = tape.reshape(f, &[n, w, d, c])?;
        let f = tape.permute(f, &[0, 1, 3, 2])?;
        x = tape.add(x, f)?;
    }
    let flat = tape.reshape(x, &[n, w * c * d])?;
    let y = tape.matmul(flat, p.get("head.w")?)?;
    let y = tape.add_bias(y, p.get("head.b")?)?;
    tape.reshape(y, &[n, cfg.out_steps(), cfg.features])
}

/// Configuration plus trained parameters.
#[derive(Clone, Debug)]
pub struct Model {
    pub config: ModelConfig,
    pub params: ParamStore,
}

impl Model {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore) -> Result<Self> {
        config.validate()?;
        check_params(&config, &params)?;
        Ok(Model { config, params })
    }

    /// Inference on a prepared walk tensor (no dropout).
    pub fn predict(&self, xwalk: &Tensor<f32>) -> Result<Tensor<f32>> {
        let mut tape = Tape::<f32>::new();
        let x = tape.constant(xwalk.clone());
        let p = ParamVars::register(&mut tape, &self.params);
        let y = forward(&mut tape, &self.config, &p, x, None)?;
        let out = tape.value(y).clone();
        if !out.all_finite() {
            return Err(Error::Numeric("model produced non-finite output".into()));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny(task: Task) -> ModelConfig {
        ModelConfig {
            task,
            nodes: 4,
            window: 5,
            horizon: 3,
            embed: 8,
            blocks: 2,
            dw_kernels: vec![3, 1],
            ..Default::default()
        }
    }

    #[test]
    fn zero_head_gives_zero_output() {
        let cfg = tiny(Task::Forecast);
        let m = Model::new(cfg.clone(), 1).unwrap();
        let x = Tensor::from_fn(&cfg.walk_tensor_shape(), |i| {
            (i.iter().sum::<usize>() % 5) as f32 * 0.1
        });
        let y = m.predict(&x).unwrap();
        assert_eq!(y.shape(), &[4, 3, 1]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stem_sums_two_positions() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::from_fn(&[1, 1, 1, 2, 1], |i| (i[3] + 1) as f64 * 1.5));
        let k = tape.constant(Tensor::full(&[1, 2, 1], 1.0));
        let p = tape.constant(Tensor::full(&[1, 1], 1.0));
        let b = tape.constant(Tensor::zeros(&[1]));
        let y = stem(&mut tape, x, k, p, b).unwrap();
        assert_eq!(tape.value(y).data(), &[4.5]);
    }

    #[test]
    fn adjacency_examples() {
        let mut tape = Tape::<f64>::new();
        let z = tape.constant(Tensor::zeros(&[3, 2]));
        let a = adaptive_adjacency(&mut tape, z, z).unwrap();
        assert!(tape
            .value(a)
            .data()
            .iter()
            .all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        let u = tape.constant(Tensor::new(&[2, 1], vec![1.0, -1.0]).unwrap());
        let a = adaptive_adjacency(&mut tape, u, u).unwrap();
        let e = std::f64::consts::E;
        let want = [e / (e + 1.0), 1.0 / (e + 1.0), 1.0 / (e + 1.0), e / (e + 1.0)];
        for (g, w) in tape.value(a).data().iter().zip(want) {
            assert!((g - w).abs() < 1e-12);
        }
    }

    #[test]
    fn diffusion_with_identity() {
        let mut tape = Tape::<f64>::new();
        let h0 = Tensor::from_fn(&[3, 2, 4], |i| (i[0] * 8 + i[1] * 4 + i[2]) as f64 - 5.0);
        let h = tape.constant(h0.clone());
        let a = tape.constant(Tensor::from_fn(&[3, 3], |i| if i[0] == i[1] { 1.0 } else { 0.0 }));
        let third = Tensor::from_fn(&[4, 4], |i| if i[0] == i[1] { 1.0 / 3.0 } else { 0.0 });
        let ws: Vec<Var> = (0..3).map(|_| tape.constant(third.clone())).collect();
        let z = diffuse(&mut tape, h, a, &ws).unwrap();
        assert!(tape.value(z).max_abs_diff(&h0) < 1e-12);
        let z0 = diffuse(&mut tape, h, a, &ws[..1]).unwrap();
        assert!(tape.value(z0).max_abs_diff(&h0.map(|v| v / 3.0)) < 1e-12);
    }

    #[test]
    fn gate_examples() {
        let mut tape = Tape::<f64>::new();
        let x = tape.constant(Tensor::scalar(2.0));
        let z = tape.constant(Tensor::scalar(-2.0));
        let o = gate_fuse(&mut tape, x, z).unwrap();
        assert_eq!(tape.value(o).data(), &[0.0]);
        let o = gate_fuse(&mut tape, x, x).unwrap();
        assert_eq!(tape.value(o).data(), &[2.0]);
    }

    #[test]
    fn config_validation() {
        let mut c = ModelConfig::default();
        assert!(c.validate().is_ok());
        c.dw_kernels = vec![7, 4, 3];
        assert!(c.validate().is_err());
        c.dw_kernels = vec![7, 5];
        assert!(c.validate().is_err());
    }

    #[test]
    fn impute_channels() {
        let mut c = tiny(Task::Impute);
        assert_eq!(c.channels(), 3);
        assert_eq!(c.out_steps(), 5);
        c.ablation.no_anonymous = true;
        assert_eq!(c.channels(), 2);
    }
}
