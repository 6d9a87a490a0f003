#![allow(dead_code)]

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stsimplex::nnkernel::{Tape, Var};
use stsimplex::{Result, SimplicialComplex, Tensor};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn tailed_triangle() -> SimplicialComplex {
    SimplicialComplex::from_edges(&[(1, 2), (1, 3), (2, 3), (2, 4)], true).unwrap()
}

/// Erdős–Rényi edge list on vertices `0..n`.
pub fn random_graph(n: usize, p: f64, r: &mut impl Rng) -> Vec<(usize, usize)> {
    let mut edges = Vec::new();
    for i in 0..n {
        for j in i + 1..n {
            if r.random::<f64>() < p {
                edges.push((i, j));
            }
        }
    }
    edges
}

/// Every vertex triple whose three edges are present.
pub fn brute_triangles(edges: &[(usize, usize)]) -> BTreeSet<[usize; 3]> {
    let set: BTreeSet<(usize, usize)> = edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    let verts: BTreeSet<usize> = edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    let v: Vec<usize> = verts.into_iter().collect();
    let mut out = BTreeSet::new();
    for i in 0..v.len() {
        for j in i + 1..v.len() {
            for k in j + 1..v.len() {
                let (a, b, c) = (v[i], v[j], v[k]);
                if set.contains(&(a, b)) && set.contains(&(a, c)) && set.contains(&(b, c)) {
                    out.insert([a, b, c]);
                }
            }
        }
    }
    out
}

/// Exact orientation of integer points: > 0 counter-clockwise.
pub fn orient(a: [i64; 2], b: [i64; 2], c: [i64; 2]) -> i128 {
    let (ax, ay) = ((b[0] - a[0]) as i128, (b[1] - a[1]) as i128);
    let (bx, by) = ((c[0] - a[0]) as i128, (c[1] - a[1]) as i128);
    ax * by - ay * bx
}

/// Exact in-circle determinant, sign-normalized so that > 0 means `d` is
/// strictly inside the circumcircle of `a, b, c`.
pub fn incircle(a: [i64; 2], b: [i64; 2], c: [i64; 2], d: [i64; 2]) -> i128 {
    let row = |p: [i64; 2]| {
        let (x, y) = ((p[0] - d[0]) as i128, (p[1] - d[1]) as i128);
        (x, y, x * x + y * y)
    };
    let (ax, ay, a2) = row(a);
    let (bx, by, b2) = row(b);
    let (cx, cy, c2) = row(c);
    let det = ax * (by * c2 - b2 * cy) - ay * (bx * c2 - b2 * cx) + a2 * (bx * cy - by * cx);
    det * orient(a, b, c).signum()
}

/// All empty-circumcircle triangles; `None` if four points are cocircular.
pub fn brute_delaunay(pts: &[[i64; 2]]) -> Option<BTreeSet<[usize; 3]>> {
    let n = pts.len();
    let mut out = BTreeSet::new();
    for i in 0..n {
        for j in i + 1..n {
            for k in j + 1..n {
                if orient(pts[i], pts[j], pts[k]) == 0 {
                    continue;
                }
                let mut empty = true;
                for (l, &q) in pts.iter().enumerate() {
                    if l == i || l == j || l == k {
                        continue;
                    }
                    let s = incircle(pts[i], pts[j], pts[k], q);
                    if s == 0 {
                        return None;
                    }
                    if s > 0 {
                        empty = false;
                        break;
                    }
                }
                if empty {
                    out.insert([i, j, k]);
                }
            }
        }
    }
    Some(out)
}

/// First-occurrence relabeling written independently of the library.
pub fn first_occurrence<T: std::hash::Hash + Eq + Copy>(walk: &[T]) -> Vec<u16> {
    let mut seen: HashMap<T, u16> = HashMap::new();
    walk.iter()
        .map(|x| {
            let next = seen.len() as u16 + 1;
            *seen.entry(*x).or_insert(next)
        })
        .collect()
}

pub fn random_tensor(shape: &[usize], r: &mut impl Rng, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| r.random_range(lo..hi))
}

/// Values bounded away from zero, for kinked functions.
pub fn away_from_zero(shape: &[usize], r: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| {
        let m = r.random_range(0.1..1.5);
        if r.random::<bool>() {
            m
        } else {
            -m
        }
    })
}

pub const FD_STEP: f64 = 1e-3;
/// Denominator floor of the relative error, so gradients near zero are
/// compared absolutely.
pub const FD_FLOOR: f64 = 1e-2;

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(FD_FLOOR)
}

/// Maximum relative error between tape gradients and central differences
/// of `sum(w * build(inputs))` for a fixed random weighting `w`.
pub fn gradcheck<F>(inputs: &[Tensor<f64>], seed: u64, build: F) -> f64
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let weights = std::cell::RefCell::new(None::<Tensor<f64>>);
    let objective = |vals: &[Tensor<f64>], grads: bool| -> (f64, Vec<Tensor<f64>>) {
        let mut tape = Tape::<f64>::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.param(t.clone())).collect();
        let y = build(&mut tape, &vars).expect("op under test failed");
        let w = weights
            .borrow_mut()
            .get_or_insert_with(|| random_tensor(tape.value(y).shape(), &mut rng(seed ^ 0xfeed), -1.0, 1.0))
            .clone();
        let yw = tape.mul_const(y, w).unwrap();
        let s = tape.sum(yw);
        let v = tape.value(s).data()[0];
        if !grads {
            return (v, Vec::new());
        }
        let mut g = tape.backward(s).unwrap();
        let gs = vars
            .iter()
            .zip(vals)
            .map(|(&x, t)| g.take(x).unwrap_or_else(|| Tensor::zeros(t.shape())))
            .collect();
        (v, gs)
    };
    let (_, analytic) = objective(inputs, true);
    let mut worst = 0f64;
    for (k, t) in inputs.iter().enumerate() {
        for i in 0..t.len() {
            let mut vals = inputs.to_vec();
            vals[k].data_mut()[i] = t.data()[i] + FD_STEP;
            let up = objective(&vals, false).0;
            vals[k].data_mut()[i] = t.data()[i] - FD_STEP;
            let down = objective(&vals, false).0;
            let numeric = (up - down) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(analytic[k].data()[i], numeric));
        }
    }
    worst
}
