//! Unified simplex feature tables and walk feature tensors.

use std::io::{Read, Write};

use crate::complex::io::csv_err;
use crate::complex::SimplicialComplex;
use crate::error::{Error, Result};
use crate::nnkernel::Tensor;
use crate::walks::WalkBatch;

/// Node signals plus static edge and triangle features.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureBundle {
    /// `[node, time, feature]`
    pub node: Tensor<f32>,
    /// `[edge, feature]`
    pub edge: Tensor<f32>,
    /// `[triangle, feature]`
    pub tri: Tensor<f32>,
}

impl FeatureBundle {
    pub fn new(node: Tensor<f32>, edge: Tensor<f32>, tri: Tensor<f32>) -> Result<Self> {
        node.expect_rank("node features", 3)?;
        edge.expect_rank("edge features", 2)?;
        tri.expect_rank("triangle features", 2)?;
        for (what, t) in [("node", &node), ("edge", &edge), ("triangle", &tri)] {
            if !t.all_finite() {
                return Err(Error::invalid(format!(
                    "{what} features contain non-finite values"
                )));
            }
        }
        Ok(FeatureBundle { node, edge, tri })
    }

    /// Checks the first-axis lengths against a complex.
    pub fn check_against(&self, c: &SimplicialComplex) -> Result<()> {
        let want = c.counts().0;
        let got = [self.node.shape()[0], self.edge.shape()[0], self.tri.shape()[0]];
        if want != got {
            return Err(Error::shape(format!(
                "features cover {got:?} simplices, complex has {want:?}"
            )));
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        self.node.shape()[1]
    }
}

/// Copies `src` (width `fs`) into `dst` (width `fd`), zero-padding or
/// truncating.
fn fit_row(src: &[f32], dst: &mut [f32]) {
    let n = src.len().min(dst.len());
    dst[..n].copy_from_slice(&src[..n]);
    dst[n..].iter_mut().for_each(|v| *v = 0.0);
}

/// Stacks vertex, edge and triangle rows into `[simplex, t, width]`.
/// Static rows are tiled over time; every block is zero-padded or truncated
/// to `width`.
pub fn expand(bundle: &FeatureBundle, t: usize, width: usize) -> Result<Tensor<f32>> {
    if width == 0 {
        return Err(Error::invalid("feature width must be positive"));
    }
    let node = &bundle.node;
    if node.shape()[1] != t {
        return Err(Error::shape(format!(
            "node features have {} steps, expected {t}",
            node.shape()[1]
        )));
    }
    let (n0, fn_) = (node.shape()[0], node.shape()[2]);
    let (n1, f1) = (bundle.edge.shape()[0], bundle.edge.shape()[1]);
    let (n2, f2) = (bundle.tri.shape()[0], bundle.tri.shape()[1]);
    let mut out = vec![0f32; (n0 + n1 + n2) * t * width];
    let mut rows = out.chunks_mut(width);
    for src in node.data().chunks(fn_.max(1)).take(n0 * t) {
        fit_row(if fn_ == 0 { &[] } else { src }, rows.next().expect("row count"));
    }
    for (data, f) in [(&bundle.edge, f1), (&bundle.tri, f2)] {
        let count = data.shape()[0];
        for i in 0..count {
            let src = &data.data()[i * f..(i + 1) * f];
            for _ in 0..t {
                fit_row(src, rows.next().expect("row count"));
            }
        }
    }
    Tensor::new(&[n0 + n1 + n2, t, width], out)
}

/// Gathers `[node, time, width + 1, length + 1, samples]` from a unified
/// table `[simplex, time, width]`. The last channel carries the anonymous
/// label divided by `length + 1`. Every vertex must start exactly one batch
/// row.
pub fn walk_tensor(unified: &Tensor<f32>, batch: &WalkBatch, nodes: usize) -> Result<Tensor<f32>> {
    unified.expect_rank("unified features", 3)?;
    let (rows, t, f) = (unified.shape()[0], unified.shape()[1], unified.shape()[2]);
    let mut row_of = vec![usize::MAX; nodes];
    for (i, &s) in batch.starts.iter().enumerate() {
        if s >= nodes {
            return Err(Error::invalid(format!("walk start {s} is not a vertex")));
        }
        if row_of[s] != usize::MAX {
            return Err(Error::invalid(format!(
                "vertex {s} starts more than one walk row"
            )));
        }
        row_of[s] = i;
    }
    if let Some(v) = row_of.iter().position(|&r| r == usize::MAX) {
        return Err(Error::invalid(format!("no walks start at vertex {v}")));
    }
    if let Some(&g) = batch.trajectories.iter().find(|&&g| g as usize >= rows) {
        return Err(Error::Internal(format!(
            "walk visits simplex {g}, features cover {rows}"
        )));
    }
    let (p, s_n) = (batch.positions(), batch.samples);
    let scale = 1.0 / p as f32;
    let ud = unified.data();
    let mut out = Vec::with_capacity(nodes * t * (f + 1) * p * s_n);
    for &row in &row_of {
        for ti in 0..t {
            for c in 0..=f {
                for l in 0..p {
                    for s in 0..s_n {
                        if c < f {
                            let g = batch.trajectory(row, s)[l] as usize;
                            out.push(ud[(g * t + ti) * f + c]);
                        } else {
                            out.push(batch.labels(row, s)[l] as f32 * scale);
                        }
                    }
                }
            }
        }
    }
    Tensor::new(&[nodes, t, f + 1, p, s_n], out)
}

/// Euclidean edge lengths, `[edge, 1]`.
pub fn edge_lengths(c: &SimplicialComplex, coords: &[[f64; 2]]) -> Result<Tensor<f32>> {
    let pos = |v| position(c, coords, v);
    let data = c
        .edges()
        .iter()
        .map(|&[a, b]| {
            let (p, q) = (pos(a)?, pos(b)?);
            Ok(((p[0] - q[0]).hypot(p[1] - q[1])) as f32)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(&[data.len(), 1], data)
}

/// Unsigned triangle areas, `[triangle, 1]`.
pub fn triangle_areas(c: &SimplicialComplex, coords: &[[f64; 2]]) -> Result<Tensor<f32>> {
    let pos = |v| position(c, coords, v);
    let data = c
        .triangles()
        .iter()
        .map(|&[a, b, d]| {
            let (p, q, r) = (pos(a)?, pos(b)?, pos(d)?);
            let cross = (q[0] - p[0]) * (r[1] - p[1]) - (q[1] - p[1]) * (r[0] - p[0]);
            Ok((0.5 * cross.abs()) as f32)
        })
        .collect::<Result<Vec<_>>>()?;
    Tensor::new(&[data.len(), 1], data)
}

fn position(c: &SimplicialComplex, coords: &[[f64; 2]], v: usize) -> Result<[f64; 2]> {
    c.vertex_position(v)
        .and_then(|i| coords.get(i).copied())
        .ok_or_else(|| Error::invalid(format!("no coordinates for vertex {v}")))
}

/// Writes `time,node,f0,..` rows; `node` is the vertex label.
pub fn write_node_csv<W: Write>(w: W, c: &SimplicialComplex, node: &Tensor<f32>) -> Result<()> {
    node.expect_rank("node features", 3)?;
    let (n, t, f) = (node.shape()[0], node.shape()[1], node.shape()[2]);
    let mut wr = csv::Writer::from_writer(w);
    let mut header = vec!["time".to_string(), "node".to_string()];
    header.extend((0..f).map(|k| format!("f{k}")));
    wr.write_record(&header).map_err(|e| csv_err(e, "node csv"))?;
    for ti in 0..t {
        for (i, &v) in c.vertices().iter().enumerate().take(n) {
            let mut rec = vec![ti.to_string(), v.to_string()];
            rec.extend((0..f).map(|k| node.at(&[i, ti, k]).to_string()));
            wr.write_record(&rec).map_err(|e| csv_err(e, "node csv"))?;
        }
    }
    wr.flush()?;
    Ok(())
}

/// Writes `u,v,f0,..` (edges) or `u,v,w,f0,..` (triangles).
pub fn write_simplex_csv<W: Write>(w: W, simplices: &[Vec<usize>], feats: &Tensor<f32>) -> Result<()> {
    feats.expect_rank("simplex features", 2)?;
    let (rows, f) = (feats.shape()[0], feats.shape()[1]);
    if rows != simplices.len() {
        return Err(Error::shape(format!(
            "{rows} feature rows for {} simplices",
            simplices.len()
        )));
    }
    let arity = simplices.first().map_or(2, |s| s.len());
    let mut wr = csv::Writer::from_writer(w);
    let mut header: Vec<String> = ["u", "v", "w"][..arity].iter().map(|s| s.to_string()).collect();
    header.extend((0..f).map(|k| format!("f{k}")));
    wr.write_record(&header).map_err(|e| csv_err(e, "simplex csv"))?;
    for (i, s) in simplices.iter().enumerate() {
        let mut rec: Vec<String> = s.iter().map(|v| v.to_string()).collect();
        rec.extend(feats.data()[i * f..(i + 1) * f].iter().map(|v| v.to_string()));
        wr.write_record(&rec).map_err(|e| csv_err(e, "simplex csv"))?;
    }
    wr.flush()?;
    Ok(())
}

struct CsvTable {
    keys: Vec<Vec<usize>>,
    values: Vec<Vec<f32>>,
    width: usize,
}

fn read_table<R: Read>(r: R, key_cols: &[&str], source: &str) -> Result<CsvTable> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let headers = rdr.headers().map_err(|e| csv_err(e, source))?.clone();
    let bad_header = |msg: String| Error::Parse {
        source_name: source.to_string(),
        line: 1,
        message: msg,
    };
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < key_cols.len() || names[..key_cols.len()] != *key_cols {
        return Err(bad_header(format!(
            "header must start with {}",
            key_cols.join(",")
        )));
    }
    let width = names.len() - key_cols.len();
    for (k, name) in names[key_cols.len()..].iter().enumerate() {
        if *name != format!("f{k}") {
            return Err(bad_header(format!(
                "feature column {k} is named {name:?}, expected f{k}"
            )));
        }
    }
    let mut keys = Vec::new();
    let mut values = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| csv_err(e, source))?;
        let line = rec.position().map_or(0, |p| p.line() as usize);
        let err = |message: String| Error::Parse {
            source_name: source.to_string(),
            line,
            message,
        };
        let key = rec
            .iter()
            .take(key_cols.len())
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| err(format!("{s:?} is not a non-negative integer")))
            })
            .collect::<Result<Vec<_>>>()?;
        let vals = rec
            .iter()
            .skip(key_cols.len())
            .map(|s| match s.parse::<f32>() {
                Ok(v) if v.is_finite() => Ok(v),
                _ => Err(err(format!("{s:?} is not a finite number"))),
            })
            .collect::<Result<Vec<_>>>()?;
        keys.push(key);
        values.push(vals);
    }
    Ok(CsvTable { keys, values, width })
}

/// Reads `time,node,f0,..` into `[node, time, feature]`, ordered by the
/// complex's vertex list. Every (time, vertex) pair must appear once.
pub fn read_node_csv<R: Read>(r: R, c: &SimplicialComplex, source: &str) -> Result<Tensor<f32>> {
    let tab = read_table(r, &["time", "node"], source)?;
    let n = c.vertices().len();
    let t = tab.keys.iter().map(|k| k[0] + 1).max().unwrap_or(0);
    let f = tab.width;
    let mut out = vec![0f32; n * t * f];
    let mut seen = vec![false; n * t];
    for (k, vals) in tab.keys.iter().zip(&tab.values) {
        let i = c
            .vertex_position(k[1])
            .ok_or_else(|| Error::invalid(format!("{source}: node {} is not in the complex", k[1])))?;
        let cell = i * t + k[0];
        if std::mem::replace(&mut seen[cell], true) {
            return Err(Error::invalid(format!(
                "{source}: duplicate row for time {} node {}",
                k[0], k[1]
            )));
        }
        out[cell * f..(cell + 1) * f].copy_from_slice(vals);
    }
    if let Some(cell) = seen.iter().position(|s| !s) {
        return Err(Error::invalid(format!(
            "{source}: missing row for time {} node {}",
            cell % t,
            c.vertices()[cell / t]
        )));
    }
    Tensor::new(&[n, t, f], out)
}

/// Reads edge (`u,v,..`) or triangle (`u,v,w,..`) features into rows
/// ordered like the complex. Missing simplices get zero rows.
pub fn read_simplex_csv<R: Read>(
    r: R,
    c: &SimplicialComplex,
    order: usize,
    source: &str,
) -> Result<Tensor<f32>> {
    let cols: &[&str] = match order {
        1 => &["u", "v"],
        2 => &["u", "v", "w"],
        k => return Err(Error::InvalidOrder(k)),
    };
    let tab = read_table(r, cols, source)?;
    let rows = c.len_of(order);
    let f = tab.width;
    let mut out = vec![0f32; rows * f];
    for (k, vals) in tab.keys.iter().zip(&tab.values) {
        let id = c
            .find(k)
            .filter(|id| id.order as usize == order)
            .ok_or_else(|| Error::invalid(format!("{source}: simplex {k:?} is not in the complex")))?;
        out[id.index * f..(id.index + 1) * f].copy_from_slice(vals);
    }
    Tensor::new(&[rows, f], out)
}
