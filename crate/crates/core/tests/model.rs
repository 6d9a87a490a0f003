mod support;

use rand::seq::SliceRandom;
use stsimplex::data::Task;
use stsimplex::model::{forward, init_params, Ablation, Model, ModelConfig, ParamVars};
use stsimplex::nnkernel::{ParamStore, Tape};
use stsimplex::Tensor;
use support::{random_tensor, rng};

fn config(task: Task, nodes: usize, ablation: Ablation) -> ModelConfig {
    ModelConfig {
        task,
        nodes,
        features: 2,
        window: 5,
        horizon: 3,
        embed: 6,
        walk_length: 3,
        walk_samples: 2,
        blocks: 2,
        dw_kernels: vec![3, 5],
        adaptive_dim: 3,
        ablation,
        ..Default::default()
    }
}

/// Parameters with a random head, so the output depends on every block.
fn params(cfg: &ModelConfig, seed: u64) -> ParamStore {
    let mut p = init_params(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0xabc);
    for name in ["head.w", "head.b"] {
        let shape = p.get(name).unwrap().shape().to_vec();
        p.insert(name, random_tensor(&shape, &mut r, -0.5, 0.5).cast());
    }
    p
}

/// Moves row `i` of axis 0 to row `perm[i]`.
fn permute_rows<T: stsimplex::nnkernel::Real>(t: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let row = t.len() / t.shape()[0];
    let mut out = t.data().to_vec();
    for (i, &j) in perm.iter().enumerate() {
        out[j * row..(j + 1) * row].copy_from_slice(&t.data()[i * row..(i + 1) * row]);
    }
    Tensor::new(t.shape(), out).unwrap()
}

fn run(cfg: &ModelConfig, p: &ParamStore, x: &Tensor<f64>) -> Tensor<f64> {
    let mut tape = Tape::<f64>::new();
    let pv = ParamVars::register(&mut tape, p);
    let xv = tape.constant(x.clone());
    let y = forward(&mut tape, cfg, &pv, xv, None).unwrap();
    tape.value(y).clone()
}

#[test]
fn relabeling_nodes_permutes_the_output() {
    let ablations = [
        Ablation::default(),
        Ablation {
            no_adaptive: true,
            ..Default::default()
        },
        Ablation {
            no_graph_norm: true,
            ..Default::default()
        },
    ];
    for (case, (task, ablation)) in [Task::Forecast, Task::Impute]
        .into_iter()
        .flat_map(|t| ablations.map(|a| (t, a)))
        .enumerate()
    {
        let case = case as u64;
        let mut r = rng(100 + case);
        let n = 2 + (case as usize % 5);
        let cfg = config(task, n, ablation);
        let p = params(&cfg, case);
        let x = random_tensor(&cfg.walk_tensor_shape(), &mut r, -1.0, 1.0);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.shuffle(&mut r);

        let mut q = ParamStore::new();
        for (name, t) in p.iter() {
            let per_node = name.starts_with("adj.") || name.ends_with(".dw");
            q.insert(
                name,
                if per_node {
                    permute_rows(t, &perm)
                } else {
                    t.clone()
                },
            );
        }
        let want = permute_rows(&run(&cfg, &p, &x), &perm);
        let got = run(&cfg, &q, &permute_rows(&x, &perm));
        let diff = got.max_abs_diff(&want);
        assert!(
            diff < 1e-10,
            "case {case}: {task:?} {ablation:?} differs by {diff:e}"
        );
    }
}

#[test]
fn inference_is_bit_reproducible() {
    let cfg = config(Task::Forecast, 5, Ablation::default());
    let m = Model::from_parts(cfg.clone(), params(&cfg, 3)).unwrap();
    let x: Tensor<f32> = random_tensor(&cfg.walk_tensor_shape(), &mut rng(4), -1.0, 1.0).cast();
    let a = m.predict(&x).unwrap();
    let b = m.predict(&x).unwrap();
    assert_eq!(
        a.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
        b.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>()
    );
    assert!(a.data().iter().any(|&v| v != 0.0));
}

#[test]
fn wrong_walk_tensor_shape_is_rejected() {
    let cfg = config(Task::Forecast, 3, Ablation::default());
    let m = Model::new(cfg.clone(), 0).unwrap();
    let mut shape = cfg.walk_tensor_shape();
    shape[3] += 1;
    assert!(m.predict(&Tensor::zeros(&shape)).is_err());
}
