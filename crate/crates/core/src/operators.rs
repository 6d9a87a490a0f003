//! Sparse topological operators over a [`SimplicialComplex`].
//!
//! All operators here are integer valued, so they are stored with `i64`
//! entries and every product is exact.

use std::io::Write;

use serde::Serialize;

use crate::complex::{Relation, SimplexId, SimplicialComplex};
use crate::error::{Error, Result};

/// What a matrix axis indexes.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Domain {
    Order(u8),
    /// Global numbering over all orders (vertices, then edges, then triangles).
    Mixed,
}

/// Row-compressed sparse integer matrix.
///
/// Invariants: no stored zeros, no duplicate coordinates, column indices
/// ascending within each row.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SparseOperator {
    rows: usize,
    cols: usize,
    row_domain: Domain,
    col_domain: Domain,
    indptr: Vec<usize>,
    indices: Vec<usize>,
    values: Vec<i64>,
}

impl SparseOperator {
    /// Assembles a matrix from coordinate triplets, summing duplicates and
    /// dropping zeros.
    pub fn from_triplets(
        rows: usize,
        cols: usize,
        domains: (Domain, Domain),
        triplets: impl IntoIterator<Item = (usize, usize, i64)>,
    ) -> Result<Self> {
        let mut t: Vec<(usize, usize, i64)> = triplets.into_iter().collect();
        if let Some(&(r, c, _)) = t.iter().find(|&&(r, c, _)| r >= rows || c >= cols) {
            return Err(Error::shape(format!(
                "entry ({r}, {c}) outside a {rows}x{cols} matrix"
            )));
        }
        t.sort_unstable_by_key(|&(r, c, _)| (r, c));
        let mut merged: Vec<(usize, usize, i64)> = Vec::with_capacity(t.len());
        for (r, c, v) in t {
            match merged.last_mut() {
                Some(last) if last.0 == r && last.1 == c => last.2 += v,
                _ => merged.push((r, c, v)),
            }
        }
        merged.retain(|&(_, _, v)| v != 0);

        let mut indptr = vec![0; rows + 1];
        for &(r, _, _) in &merged {
            indptr[r + 1] += 1;
        }
        for r in 0..rows {
            indptr[r + 1] += indptr[r];
        }
        Ok(SparseOperator {
            rows,
            cols,
            row_domain: domains.0,
            col_domain: domains.1,
            indptr,
            indices: merged.iter().map(|e| e.1).collect(),
            values: merged.iter().map(|e| e.2).collect(),
        })
    }

    pub fn zeros(rows: usize, cols: usize, domains: (Domain, Domain)) -> Self {
        Self::from_triplets(rows, cols, domains, []).expect("empty matrix")
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn domains(&self) -> (Domain, Domain) {
        (self.row_domain, self.col_domain)
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    /// Column indices and values of row `r`, columns ascending.
    pub fn row(&self, r: usize) -> (&[usize], &[i64]) {
        let span = self.indptr[r]..self.indptr[r + 1];
        (&self.indices[span.clone()], &self.values[span])
    }

    pub fn get(&self, r: usize, c: usize) -> i64 {
        let (cols, vals) = self.row(r);
        cols.binary_search(&c).map(|k| vals[k]).unwrap_or(0)
    }

    /// `(row, col, value)` triplets in row-major order.
    pub fn triplets(&self) -> impl Iterator<Item = (usize, usize, i64)> + '_ {
        (0..self.rows).flat_map(move |r| {
            let (cols, vals) = self.row(r);
            cols.iter().zip(vals).map(move |(&c, &v)| (r, c, v))
        })
    }

    pub fn transpose(&self) -> Self {
        Self::from_triplets(
            self.cols,
            self.rows,
            (self.col_domain, self.row_domain),
            self.triplets().map(|(r, c, v)| (c, r, v)),
        )
        .expect("transpose stays in bounds")
    }

    pub fn abs(&self) -> Self {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = v.abs());
        out
    }

    pub fn matmul(&self, rhs: &SparseOperator) -> Result<Self> {
        if self.cols != rhs.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut trip = Vec::new();
        for r in 0..self.rows {
            let (cols, vals) = self.row(r);
            for (&k, &a) in cols.iter().zip(vals) {
                let (rc, rv) = rhs.row(k);
                trip.extend(rc.iter().zip(rv).map(|(&c, &b)| (r, c, a * b)));
            }
        }
        Self::from_triplets(self.rows, rhs.cols, (self.row_domain, rhs.col_domain), trip)
    }

    pub fn add(&self, rhs: &SparseOperator) -> Result<Self> {
        if self.shape() != rhs.shape() {
            return Err(Error::shape(format!(
                "cannot add {:?} and {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        Self::from_triplets(
            self.rows,
            self.cols,
            self.domains(),
            self.triplets().chain(rhs.triplets()),
        )
    }

    pub fn is_symmetric(&self) -> bool {
        self.rows == self.cols && self.triplets().all(|(r, c, v)| self.get(c, r) == v)
    }

    pub fn to_dense(&self) -> Vec<Vec<i64>> {
        let mut d = vec![vec![0; self.cols]; self.rows];
        for (r, c, v) in self.triplets() {
            d[r][c] = v;
        }
        d
    }

    /// Writes MatrixMarket coordinate format (1-based indices).
    pub fn write_matrix_market(&self, mut w: impl Write) -> std::io::Result<()> {
        writeln!(w, "%%MatrixMarket matrix coordinate integer general")?;
        writeln!(w, "% rows: {:?}, cols: {:?}", self.row_domain, self.col_domain)?;
        writeln!(w, "{} {} {}", self.rows, self.cols, self.nnz())?;
        for (r, c, v) in self.triplets() {
            writeln!(w, "{} {} {}", r + 1, c + 1, v)?;
        }
        Ok(())
    }
}

/// Oriented boundary matrix `B_k` (`N_{k-1} x N_k`), or its absolute value.
///
/// Face `i` of a simplex with ascending vertices gets sign `(-1)^i`, so the
/// boundary of edge `{i, j}` is `j - i`.
pub fn boundary(c: &SimplicialComplex, k: usize, signed: bool) -> Result<SparseOperator> {
    let sign = |i: usize| -> i64 {
        if signed && i % 2 == 1 {
            -1
        } else {
            1
        }
    };
    let mut trip = Vec::new();
    match k {
        1 => {
            for (col, e) in c.edges().iter().enumerate() {
                // face i drops vertex i
                for (i, &v) in e.iter().rev().enumerate() {
                    let row = c.vertex_position(v).ok_or_else(|| missing(&[v]))?;
                    trip.push((row, col, sign(i)));
                }
            }
        }
        2 => {
            for (col, t) in c.triangles().iter().enumerate() {
                let faces = [[t[1], t[2]], [t[0], t[2]], [t[0], t[1]]];
                for (i, f) in faces.into_iter().enumerate() {
                    let row = c.edge_position(f).ok_or_else(|| missing(&f))?;
                    trip.push((row, col, sign(i)));
                }
            }
        }
        other => return Err(Error::InvalidOrder(other)),
    }
    SparseOperator::from_triplets(
        c.len_of(k - 1),
        c.len_of(k),
        (Domain::Order(k as u8 - 1), Domain::Order(k as u8)),
        trip,
    )
}

fn missing(face: &[usize]) -> Error {
    Error::Internal(format!("face {face:?} missing from complex"))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum AdjacencyKind {
    Up,
    Low,
    Either,
}

impl std::str::FromStr for AdjacencyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "up" => Ok(AdjacencyKind::Up),
            "low" => Ok(AdjacencyKind::Low),
            "either" => Ok(AdjacencyKind::Either),
            other => Err(Error::invalid(format!("unknown adjacency kind {other:?}"))),
        }
    }
}

/// Symmetric 0/1 same-order adjacency `A_k^up`, `A_k^low` or `A_k`.
pub fn adjacency(c: &SimplicialComplex, k: usize, kind: AdjacencyKind) -> Result<SparseOperator> {
    if k > 2 {
        return Err(Error::InvalidOrder(k));
    }
    let relations: &[Relation] = match kind {
        AdjacencyKind::Up => &[Relation::Upper],
        AdjacencyKind::Low => &[Relation::Lower],
        AdjacencyKind::Either => &[Relation::Upper, Relation::Lower],
    };
    let n = c.len_of(k);
    let mut trip = Vec::new();
    for i in 0..n {
        let s = SimplexId::new(k, i)?;
        let mut nb: Vec<usize> = Vec::new();
        for &rel in relations {
            nb.extend(c.neighbors(s, rel)?.into_iter().map(|t| t.index));
        }
        nb.sort_unstable();
        nb.dedup();
        trip.extend(nb.into_iter().map(|j| (i, j, 1)));
    }
    let d = Domain::Order(k as u8);
    SparseOperator::from_triplets(n, n, (d, d), trip)
}

/// Hodge Laplacian `L_k = B_k^T B_k + B_{k+1} B_{k+1}^T`, with `B_0` and
/// `B_3` taken as zero.
pub fn hodge_laplacian(c: &SimplicialComplex, k: usize) -> Result<SparseOperator> {
    let n = c.len_of(k);
    let d = Domain::Order(k as u8);
    let mut l = match k {
        0..=2 => SparseOperator::zeros(n, n, (d, d)),
        other => return Err(Error::InvalidOrder(other)),
    };
    if k >= 1 {
        let b = boundary(c, k, true)?;
        l = l.add(&b.transpose().matmul(&b)?)?;
    }
    if k < 2 {
        let b = boundary(c, k + 1, true)?;
        l = l.add(&b.matmul(&b.transpose())?)?;
    }
    l.row_domain = d;
    l.col_domain = d;
    Ok(l)
}

/// Cross-order block adjacency over the global simplex numbering.
///
/// Variant 1 has `A_0, A_1, A_2` on the diagonal blocks and unsigned
/// boundary blocks off the diagonal; variant 2 keeps only the boundary
/// blocks.
pub fn full_adjacency(c: &SimplicialComplex, variant: u8) -> Result<SparseOperator> {
    if !(1..=2).contains(&variant) {
        return Err(Error::invalid(format!(
            "full adjacency variant must be 1 or 2, got {variant}"
        )));
    }
    let counts = c.counts();
    let total = counts.total();
    let mut trip = Vec::new();
    for k in 1..=2 {
        let b = boundary(c, k, false)?;
        let (ro, co) = (counts.offset(k - 1), counts.offset(k));
        for (r, col, v) in b.triplets() {
            trip.push((ro + r, co + col, v));
            trip.push((co + col, ro + r, v));
        }
    }
    if variant == 1 {
        for k in 0..=2 {
            let a = adjacency(c, k, AdjacencyKind::Either)?;
            let o = counts.offset(k);
            trip.extend(a.triplets().map(|(r, col, v)| (o + r, o + col, v)));
        }
    }
    SparseOperator::from_triplets(total, total, (Domain::Mixed, Domain::Mixed), trip)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tailed_triangle() -> SimplicialComplex {
        SimplicialComplex::from_edges(&[(1, 2), (1, 3), (2, 3), (2, 4)], true).unwrap()
    }

    #[test]
    fn triangle_boundary_column() {
        let b2 = boundary(&tailed_triangle(), 2, true).unwrap();
        assert_eq!(b2.shape(), (4, 1));
        // edges 12, 13, 23, 24: d{1,2,3} = {2,3} - {1,3} + {1,2}
        let col: Vec<i64> = (0..4).map(|r| b2.get(r, 0)).collect();
        assert_eq!(col, vec![1, -1, 1, 0]);
    }

    #[test]
    fn edge_boundary_column() {
        let b1 = boundary(&tailed_triangle(), 1, true).unwrap();
        assert_eq!(b1.shape(), (4, 4));
        assert_eq!((b1.get(0, 0), b1.get(1, 0)), (-1, 1));
        let unsigned = boundary(&tailed_triangle(), 1, false).unwrap();
        assert!(unsigned.triplets().all(|(_, _, v)| v == 1));
        assert_eq!(unsigned, b1.abs());
    }

    #[test]
    fn boundary_of_empty_triangle_set() {
        let c = SimplicialComplex::from_edges(&[(0, 1), (1, 2)], true).unwrap();
        let b2 = boundary(&c, 2, true).unwrap();
        assert_eq!(b2.shape(), (2, 0));
        assert_eq!(b2.nnz(), 0);
        assert!(matches!(boundary(&c, 3, true), Err(Error::InvalidOrder(3))));
        assert!(matches!(boundary(&c, 0, true), Err(Error::InvalidOrder(0))));
    }

    #[test]
    fn chain_identity_on_tailed_triangle() {
        let c = tailed_triangle();
        let prod = boundary(&c, 1, true)
            .unwrap()
            .matmul(&boundary(&c, 2, true).unwrap())
            .unwrap();
        assert_eq!(prod.nnz(), 0);
    }

    #[test]
    fn edge_adjacencies() {
        let c = tailed_triangle();
        let up = adjacency(&c, 1, AdjacencyKind::Up).unwrap();
        let up_pairs: Vec<_> = up.triplets().filter(|t| t.0 < t.1).map(|t| (t.0, t.1)).collect();
        // 12-13, 12-23, 13-23
        assert_eq!(up_pairs, vec![(0, 1), (0, 2), (1, 2)]);

        let either = adjacency(&c, 1, AdjacencyKind::Either).unwrap();
        let pairs: Vec<_> = either
            .triplets()
            .filter(|t| t.0 < t.1)
            .map(|t| (t.0, t.1))
            .collect();
        // everything except 13-24
        assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)]);
        assert!(either.is_symmetric());

        let a2 = adjacency(&c, 2, AdjacencyKind::Either).unwrap();
        assert_eq!(a2.shape(), (1, 1));
        assert_eq!(a2.nnz(), 0);
    }

    #[test]
    fn laplacians_on_tailed_triangle() {
        let c = tailed_triangle();
        let l0 = hodge_laplacian(&c, 0).unwrap();
        assert_eq!(
            l0.to_dense(),
            vec![
                vec![2, -1, -1, 0],
                vec![-1, 3, -1, -1],
                vec![-1, -1, 2, 0],
                vec![0, -1, 0, 1],
            ]
        );
        assert_eq!(hodge_laplacian(&c, 2).unwrap().to_dense(), vec![vec![3]]);
        assert!(hodge_laplacian(&c, 1).unwrap().is_symmetric());
        assert!(matches!(hodge_laplacian(&c, 3), Err(Error::InvalidOrder(3))));
    }

    #[test]
    fn full_adjacency_rows_of_edge_12() {
        let c = tailed_triangle();
        let e12 = c.counts().global(SimplexId::edge(0));
        let a1 = full_adjacency(&c, 1).unwrap();
        assert_eq!(a1.shape(), (9, 9));
        assert_eq!(a1.row(e12).0, &[0, 1, 5, 6, 7, 8]);
        let a2 = full_adjacency(&c, 2).unwrap();
        assert_eq!(a2.row(e12).0, &[0, 1, 8]);
        for a in [&a1, &a2] {
            assert!(a.is_symmetric());
            assert!(a.triplets().all(|(r, c, v)| v == 1 && r != c));
        }
        assert!(full_adjacency(&c, 3).is_err());
    }

    #[test]
    fn matrix_market_is_one_based() {
        let b2 = boundary(&tailed_triangle(), 2, true).unwrap();
        let mut out = Vec::new();
        b2.write_matrix_market(&mut out).unwrap();
        let text = String::from_utf8(out).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[2], "4 1 3");
        assert_eq!(lines[3], "1 1 1");
        assert_eq!(lines[4], "2 1 -1");
    }

    #[test]
    fn triplets_merge_and_drop_zeros() {
        let d = (Domain::Mixed, Domain::Mixed);
        let m =
            SparseOperator::from_triplets(2, 2, d, [(0, 1, 2), (0, 1, -2), (1, 0, 1), (1, 0, 1)]).unwrap();
        assert_eq!(m.nnz(), 1);
        assert_eq!(m.get(1, 0), 2);
        assert!(SparseOperator::from_triplets(2, 2, d, [(2, 0, 1)]).is_err());
    }
}
