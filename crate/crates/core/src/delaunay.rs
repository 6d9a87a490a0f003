//! Planar Delaunay triangulation (incremental Bowyer-Watson).
//!
//! Coordinates are mapped exactly onto a common integer grid so that the
//! orientation and in-circle predicates can always fall back to exact
//! big-integer arithmetic when the floating-point filter is inconclusive.
//! The bounding super-triangle is placed far enough out (relative to the
//! largest possible circumcircle on that grid) that it never removes a
//! Delaunay triangle of the input, so the convex hull is always complete.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use num_bigint::BigInt;
use num_traits::{Float, Signed, Zero};

use crate::complex::{PointRecord, SimplicialComplex};
use crate::error::{Error, Result};

/// Delaunay complex of a point set; vertex ids are the point positions.
pub fn delaunay(points: &[[f64; 2]]) -> Result<SimplicialComplex> {
    let tris = delaunay_triangles(points)?;
    Ok(SimplicialComplex::from_closure(0..points.len(), [], tris))
}

/// Delaunay complex of id-tagged points; vertex ids are the record ids.
pub fn delaunay_records(records: &[PointRecord]) -> Result<SimplicialComplex> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id) {
            return Err(Error::invalid(format!("duplicate point id {}", r.id)));
        }
    }
    let points: Vec<[f64; 2]> = records.iter().map(|r| [r.x, r.y]).collect();
    let tris = delaunay_triangles(&points)?;
    let ids = |t: [usize; 3]| t.map(|i| records[i].id);
    Ok(SimplicialComplex::from_closure(
        records.iter().map(|r| r.id),
        [],
        tris.into_iter().map(ids),
    ))
}

/// Triangles (ascending point positions, sorted) of the Delaunay
/// triangulation. Cocircular configurations resolve to the lexicographically
/// smallest diagonal.
pub fn delaunay_triangles(points: &[[f64; 2]]) -> Result<Vec<[usize; 3]>> {
    let n = points.len();
    if n < 3 {
        return Err(Error::DegenerateGeometry(format!(
            "need at least 3 points, got {n}"
        )));
    }
    if let Some(p) = points.iter().find(|p| !p[0].is_finite() || !p[1].is_finite()) {
        return Err(Error::invalid(format!("non-finite coordinate {p:?}")));
    }
    let mut keys: Vec<(u64, u64, usize)> = points
        .iter()
        .enumerate()
        .map(|(i, p)| ((p[0] + 0.0).to_bits(), (p[1] + 0.0).to_bits(), i))
        .collect();
    keys.sort_unstable();
    if let Some(w) = keys.windows(2).find(|w| (w[0].0, w[0].1) == (w[1].0, w[1].1)) {
        return Err(Error::invalid(format!(
            "duplicate points at positions {} and {}",
            w[0].2.min(w[1].2),
            w[0].2.max(w[1].2)
        )));
    }

    let pred = Predicates::new(points);
    let (a, b) = (0, 1);
    if (2..n).all(|c| pred.orient(a, b, c) == Ordering::Equal) {
        return Err(Error::DegenerateGeometry("all points are collinear".into()));
    }

    let (s0, s1, s2) = (n, n + 1, n + 2);
    let mut tris: Vec<[usize; 3]> = vec![[s0, s1, s2]];
    for p in 0..n {
        let bad: Vec<usize> = (0..tris.len())
            .filter(|&t| {
                let [a, b, c] = tris[t];
                pred.incircle(a, b, c, p) == Ordering::Greater
            })
            .collect();
        if bad.is_empty() {
            return Err(Error::Internal(format!("point {p} lies in no circumcircle")));
        }
        let directed: HashSet<(usize, usize)> = bad
            .iter()
            .flat_map(|&t| {
                let [a, b, c] = tris[t];
                [(a, b), (b, c), (c, a)]
            })
            .collect();
        let mut cavity: Vec<(usize, usize)> = directed
            .iter()
            .copied()
            .filter(|&(a, b)| !directed.contains(&(b, a)))
            .collect();
        cavity.sort_unstable();
        for &t in bad.iter().rev() {
            tris.swap_remove(t);
        }
        tris.extend(cavity.into_iter().map(|(a, b)| [a, b, p]));
    }
    tris.retain(|t| t.iter().all(|&v| v < n));

    canonicalize_cocircular(&pred, &mut tris);

    let mut out: Vec<[usize; 3]> = tris
        .into_iter()
        .map(|mut t| {
            t.sort_unstable();
            t
        })
        .collect();
    out.sort_unstable();
    Ok(out)
}

/// Flips every interior edge whose two triangles are cocircular to the
/// lexicographically smaller diagonal. Each flip strictly decreases the
/// sorted edge multiset, so the loop terminates.
fn canonicalize_cocircular(pred: &Predicates, tris: &mut [[usize; 3]]) {
    loop {
        let mut by_edge: BTreeMap<[usize; 2], Vec<(usize, usize)>> = BTreeMap::new();
        for (ti, t) in tris.iter().enumerate() {
            for k in 0..3 {
                let (a, b, opp) = (t[k], t[(k + 1) % 3], t[(k + 2) % 3]);
                by_edge.entry([a.min(b), a.max(b)]).or_default().push((ti, opp));
            }
        }
        let flip = by_edge.iter().find_map(|(&[a, b], sides)| {
            let [(t1, o1), (t2, o2)] = sides.as_slice() else {
                return None;
            };
            let diag = [(*o1).min(*o2), (*o1).max(*o2)];
            if diag >= [a, b] {
                return None;
            }
            let [x, y, z] = tris[*t1];
            if pred.incircle(x, y, z, *o2) != Ordering::Equal {
                return None;
            }
            Some((*t1, *t2, a, b, *o1, *o2))
        });
        let Some((t1, t2, a, b, o1, o2)) = flip else {
            return;
        };
        tris[t1] = pred.ccw([o1, o2, a]);
        tris[t2] = pred.ccw([o1, o2, b]);
    }
}

struct Predicates {
    fp: Vec<[f64; 2]>,
    exact: Vec<[BigInt; 2]>,
    filter: bool,
}

impl Predicates {
    fn new(points: &[[f64; 2]]) -> Self {
        let decoded: Vec<[(BigInt, i32); 2]> = points.iter().map(|p| [decode(p[0]), decode(p[1])]).collect();
        let emin = decoded
            .iter()
            .flatten()
            .filter(|(m, _)| !m.is_zero())
            .map(|&(_, e)| e)
            .min()
            .unwrap_or(0);
        let mut exact: Vec<[BigInt; 2]> = decoded
            .into_iter()
            .map(|c| c.map(|(m, e)| m << ((e - emin) as usize)))
            .collect();

        // Any circumcircle of a non-degenerate triangle with integer
        // coordinates bounded by `c` stays within 25 c^3 of the origin.
        let c = exact
            .iter()
            .flatten()
            .map(|v| v.abs())
            .max()
            .unwrap_or_else(BigInt::zero)
            .max(BigInt::from(1));
        let bound: BigInt = BigInt::from(32) * &c * &c * &c + 32;
        let k = bound.bits() as i32;
        let m = BigInt::from(1) << (k as usize);
        let neg = -m.clone();
        exact.push([neg.clone(), neg.clone()]);
        exact.push([m.clone(), neg]);
        exact.push([BigInt::zero(), m]);

        let super_exp = k + emin;
        let filter = (-1000..1000).contains(&super_exp);
        let s = 2f64.powi(super_exp);
        let mut fp = points.to_vec();
        fp.extend([[-s, -s], [s, -s], [0.0, s]]);
        Predicates { fp, exact, filter }
    }

    fn ccw(&self, t: [usize; 3]) -> [usize; 3] {
        if self.orient(t[0], t[1], t[2]) == Ordering::Less {
            [t[0], t[2], t[1]]
        } else {
            t
        }
    }

    /// Sign of the orientation determinant; `Greater` means counterclockwise.
    fn orient(&self, a: usize, b: usize, c: usize) -> Ordering {
        if self.filter {
            let [pa, pb, pc] = [self.fp[a], self.fp[b], self.fp[c]];
            let left = (pa[0] - pc[0]) * (pb[1] - pc[1]);
            let right = (pa[1] - pc[1]) * (pb[0] - pc[0]);
            let det = left - right;
            let err = 1e-15 * (left.abs() + right.abs());
            if det.is_finite() && err.is_finite() && det.abs() > err {
                return det.partial_cmp(&0.0).unwrap_or(Ordering::Equal);
            }
        }
        let [pa, pb, pc] = [&self.exact[a], &self.exact[b], &self.exact[c]];
        let det = (&pa[0] - &pc[0]) * (&pb[1] - &pc[1]) - (&pa[1] - &pc[1]) * (&pb[0] - &pc[0]);
        det.sign_cmp()
    }

    /// Sign of the in-circle determinant for counterclockwise `a, b, c`;
    /// `Greater` means `d` is strictly inside the circumcircle.
    fn incircle(&self, a: usize, b: usize, c: usize, d: usize) -> Ordering {
        if self.filter {
            let [pa, pb, pc, pd] = [self.fp[a], self.fp[b], self.fp[c], self.fp[d]];
            let (adx, ady) = (pa[0] - pd[0], pa[1] - pd[1]);
            let (bdx, bdy) = (pb[0] - pd[0], pb[1] - pd[1]);
            let (cdx, cdy) = (pc[0] - pd[0], pc[1] - pd[1]);
            let (bdxcdy, cdxbdy) = (bdx * cdy, cdx * bdy);
            let (cdxady, adxcdy) = (cdx * ady, adx * cdy);
            let (adxbdy, bdxady) = (adx * bdy, bdx * ady);
            let alift = adx * adx + ady * ady;
            let blift = bdx * bdx + bdy * bdy;
            let clift = cdx * cdx + cdy * cdy;
            let det = alift * (bdxcdy - cdxbdy) + blift * (cdxady - adxcdy) + clift * (adxbdy - bdxady);
            let permanent = (bdxcdy.abs() + cdxbdy.abs()) * alift
                + (cdxady.abs() + adxcdy.abs()) * blift
                + (adxbdy.abs() + bdxady.abs()) * clift;
            let err = 4e-15 * permanent;
            if det.is_finite() && err.is_finite() && permanent > 1e-200 && det.abs() > err {
                return det.partial_cmp(&0.0).unwrap_or(Ordering::Equal);
            }
        }
        let [pa, pb, pc, pd] = [&self.exact[a], &self.exact[b], &self.exact[c], &self.exact[d]];
        let (adx, ady) = (&pa[0] - &pd[0], &pa[1] - &pd[1]);
        let (bdx, bdy) = (&pb[0] - &pd[0], &pb[1] - &pd[1]);
        let (cdx, cdy) = (&pc[0] - &pd[0], &pc[1] - &pd[1]);
        let alift = &adx * &adx + &ady * &ady;
        let blift = &bdx * &bdx + &bdy * &bdy;
        let clift = &cdx * &cdx + &cdy * &cdy;
        let det = alift * (&bdx * &cdy - &cdx * &bdy)
            + blift * (&cdx * &ady - &adx * &cdy)
            + clift * (&adx * &bdy - &bdx * &ady);
        det.sign_cmp()
    }
}

trait SignCmp {
    fn sign_cmp(&self) -> Ordering;
}

impl SignCmp for BigInt {
    fn sign_cmp(&self) -> Ordering {
        if self.is_positive() {
            Ordering::Greater
        } else if self.is_negative() {
            Ordering::Less
        } else {
            Ordering::Equal
        }
    }
}

/// Exact `(signed mantissa, exponent)` decomposition of a finite float.
fn decode(x: f64) -> (BigInt, i32) {
    let (mantissa, exp, sign) = Float::integer_decode(x);
    let m = BigInt::from(mantissa) * BigInt::from(sign);
    (m, exp as i32)
}
