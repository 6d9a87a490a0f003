//! 2-order simplicial complexes and their neighbourhood relations.
//!
//! Simplices are stored as sorted, duplicate-free lists per order. The
//! position of a simplex in its order's list is its canonical index, and the
//! ascending vertex order inside a simplex is its reference orientation.

pub(crate) mod io;

pub use io::{read_edge_list, read_points_csv, PointRecord};

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Vertex = usize;

/// Highest simplex order handled by the crate.
pub const MAX_ORDER: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct SimplexId {
    pub order: u8,
    pub index: usize,
}

impl SimplexId {
    pub fn new(order: usize, index: usize) -> Result<Self> {
        if order > MAX_ORDER {
            return Err(Error::InvalidOrder(order));
        }
        Ok(SimplexId {
            order: order as u8,
            index,
        })
    }

    pub const fn vertex(index: usize) -> Self {
        SimplexId { order: 0, index }
    }

    pub const fn edge(index: usize) -> Self {
        SimplexId { order: 1, index }
    }

    pub const fn triangle(index: usize) -> Self {
        SimplexId { order: 2, index }
    }
}

impl fmt::Display for SimplexId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}-simplex #{}", self.order, self.index)
    }
}

/// Number of simplices per order, `[N0, N1, N2]`.
///
/// Also defines the global simplex numbering used by the block operators:
/// vertices first, then edges, then triangles.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SimplexCounts(pub [usize; 3]);

impl SimplexCounts {
    pub fn total(&self) -> usize {
        self.0.iter().sum()
    }

    pub fn offset(&self, order: usize) -> usize {
        self.0[..order].iter().sum()
    }

    pub fn global(&self, id: SimplexId) -> usize {
        self.offset(id.order as usize) + id.index
    }

    /// Inverse of [`SimplexCounts::global`]. Indices past the end map to the
    /// last order.
    pub fn local(&self, global: usize) -> SimplexId {
        let [n0, n1, _] = self.0;
        if global < n0 {
            SimplexId::vertex(global)
        } else if global < n0 + n1 {
            SimplexId::edge(global - n0)
        } else {
            SimplexId::triangle(global - n0 - n1)
        }
    }

    pub fn order_of(&self, global: usize) -> usize {
        self.local(global).order as usize
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Relation {
    /// Faces one order down.
    Boundary,
    /// Cofaces one order up.
    Coboundary,
    /// Same order, sharing a common face.
    Lower,
    /// Same order, contained in a common coface.
    Upper,
}

impl FromStr for Relation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "boundary" => Ok(Relation::Boundary),
            "coboundary" => Ok(Relation::Coboundary),
            "lower" => Ok(Relation::Lower),
            "upper" => Ok(Relation::Upper),
            other => Err(Error::invalid(format!("unknown relation {other:?}"))),
        }
    }
}

/// A closure-invariant breach reported by [`SimplicialComplex::validate`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Violation {
    /// A face of `simplex` is missing from the complex.
    MissingFace { simplex: Vec<Vertex>, face: Vec<Vertex> },
    /// `simplex` appears more than once in its order's list.
    Duplicate { simplex: Vec<Vertex> },
    /// `simplex` is out of lexicographic order in its list.
    Unsorted { simplex: Vec<Vertex> },
    /// The vertices of `simplex` are not strictly increasing.
    NonCanonical { simplex: Vec<Vertex> },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::MissingFace { simplex, face } => {
                write!(f, "closure: face {face:?} of {simplex:?} is missing")
            }
            Violation::Duplicate { simplex } => write!(f, "duplicate simplex {simplex:?}"),
            Violation::Unsorted { simplex } => write!(f, "simplex {simplex:?} is out of order"),
            Violation::NonCanonical { simplex } => {
                write!(f, "simplex {simplex:?} vertices are not strictly increasing")
            }
        }
    }
}

/// On-disk JSON form: `{"vertices":[..], "edges":[[i,j]..], "triangles":[[i,j,k]..]}`.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ComplexFile {
    pub vertices: Vec<Vertex>,
    pub edges: Vec<[Vertex; 2]>,
    pub triangles: Vec<[Vertex; 3]>,
}

#[derive(Clone, Debug, Default)]
pub struct SimplicialComplex {
    vertices: Vec<Vertex>,
    edges: Vec<[Vertex; 2]>,
    triangles: Vec<[Vertex; 3]>,
    vertex_index: HashMap<Vertex, usize>,
    edge_index: HashMap<[Vertex; 2], usize>,
    triangle_index: HashMap<[Vertex; 3], usize>,
    // incidence: vertex -> edges, edge -> triangles (ascending indices)
    vertex_edges: Vec<Vec<usize>>,
    edge_triangles: Vec<Vec<usize>>,
}

impl PartialEq for SimplicialComplex {
    fn eq(&self, other: &Self) -> bool {
        self.vertices == other.vertices && self.edges == other.edges && self.triangles == other.triangles
    }
}

impl Eq for SimplicialComplex {}

impl SimplicialComplex {
    /// Builds a complex from an undirected edge list. With `lift`, every
    /// 3-clique of the graph becomes a triangle.
    pub fn from_edges(edges: &[(Vertex, Vertex)], lift: bool) -> Result<Self> {
        let mut canon = Vec::with_capacity(edges.len());
        for &(a, b) in edges {
            if a == b {
                return Err(Error::invalid(format!("self-loop on vertex {a}")));
            }
            canon.push([a.min(b), a.max(b)]);
        }
        canon.sort_unstable();
        canon.dedup();

        let mut vertices: Vec<Vertex> = canon.iter().flatten().copied().collect();
        vertices.sort_unstable();
        vertices.dedup();

        let triangles = if lift {
            clique_triangles(&canon)
        } else {
            Vec::new()
        };
        Ok(Self::from_parts_unchecked(vertices, canon, triangles))
    }

    /// Builds the closure of a triangle set together with extra vertices
    /// and edges.
    pub fn from_closure(
        vertices: impl IntoIterator<Item = Vertex>,
        edges: impl IntoIterator<Item = [Vertex; 2]>,
        triangles: impl IntoIterator<Item = [Vertex; 3]>,
    ) -> Self {
        let mut tris: Vec<[Vertex; 3]> = triangles
            .into_iter()
            .map(|mut t| {
                t.sort_unstable();
                t
            })
            .collect();
        tris.sort_unstable();
        tris.dedup();

        let mut es: Vec<[Vertex; 2]> = edges
            .into_iter()
            .map(|e| [e[0].min(e[1]), e[0].max(e[1])])
            .collect();
        for t in &tris {
            es.extend([[t[0], t[1]], [t[0], t[2]], [t[1], t[2]]]);
        }
        es.sort_unstable();
        es.dedup();

        let mut vs: Vec<Vertex> = vertices.into_iter().collect();
        vs.extend(es.iter().flatten().copied());
        vs.sort_unstable();
        vs.dedup();

        Self::from_parts_unchecked(vs, es, tris)
    }

    /// Builds a complex from explicit lists, rejecting any list that breaks
    /// the closure, ordering or uniqueness invariants.
    pub fn from_parts(
        vertices: Vec<Vertex>,
        edges: Vec<[Vertex; 2]>,
        triangles: Vec<[Vertex; 3]>,
    ) -> Result<Self> {
        let c = Self::from_parts_unchecked(vertices, edges, triangles);
        let violations = c.validate();
        if let Some(v) = violations.first() {
            return Err(Error::invalid(format!(
                "{} invariant violation(s), first: {v}",
                violations.len()
            )));
        }
        Ok(c)
    }

    /// Stores the lists as given. Lookups are only meaningful when
    /// [`validate`](Self::validate) reports no violations.
    pub fn from_parts_unchecked(
        vertices: Vec<Vertex>,
        edges: Vec<[Vertex; 2]>,
        triangles: Vec<[Vertex; 3]>,
    ) -> Self {
        let vertex_index: HashMap<_, _> = vertices.iter().enumerate().map(|(i, &v)| (v, i)).collect();
        let edge_index: HashMap<_, _> = edges.iter().enumerate().map(|(i, &e)| (e, i)).collect();
        let triangle_index: HashMap<_, _> = triangles.iter().enumerate().map(|(i, &t)| (t, i)).collect();

        let mut vertex_edges = vec![Vec::new(); vertices.len()];
        for (ei, e) in edges.iter().enumerate() {
            for v in e {
                if let Some(&vi) = vertex_index.get(v) {
                    vertex_edges[vi].push(ei);
                }
            }
        }
        let mut edge_triangles = vec![Vec::new(); edges.len()];
        for (ti, t) in triangles.iter().enumerate() {
            for e in triangle_faces(t) {
                if let Some(&ei) = edge_index.get(&e) {
                    edge_triangles[ei].push(ti);
                }
            }
        }

        SimplicialComplex {
            vertices,
            edges,
            triangles,
            vertex_index,
            edge_index,
            triangle_index,
            vertex_edges,
            edge_triangles,
        }
    }

    pub fn vertices(&self) -> &[Vertex] {
        &self.vertices
    }

    pub fn edges(&self) -> &[[Vertex; 2]] {
        &self.edges
    }

    pub fn triangles(&self) -> &[[Vertex; 3]] {
        &self.triangles
    }

    pub fn counts(&self) -> SimplexCounts {
        SimplexCounts([self.vertices.len(), self.edges.len(), self.triangles.len()])
    }

    pub fn len_of(&self, order: usize) -> usize {
        match order {
            0 => self.vertices.len(),
            1 => self.edges.len(),
            2 => self.triangles.len(),
            _ => 0,
        }
    }

    pub fn contains(&self, s: SimplexId) -> bool {
        s.index < self.len_of(s.order as usize)
    }

    /// Vertex ids of a simplex, ascending.
    pub fn simplex_vertices(&self, s: SimplexId) -> Result<Vec<Vertex>> {
        self.check(s)?;
        Ok(match s.order {
            0 => vec![self.vertices[s.index]],
            1 => self.edges[s.index].to_vec(),
            _ => self.triangles[s.index].to_vec(),
        })
    }

    /// Looks a simplex up by its vertex set (any order).
    pub fn find(&self, vertices: &[Vertex]) -> Option<SimplexId> {
        let mut v = vertices.to_vec();
        v.sort_unstable();
        match v.as_slice() {
            [a] => self.vertex_index.get(a).map(|&i| SimplexId::vertex(i)),
            [a, b] => self.edge_index.get(&[*a, *b]).map(|&i| SimplexId::edge(i)),
            [a, b, c] => self
                .triangle_index
                .get(&[*a, *b, *c])
                .map(|&i| SimplexId::triangle(i)),
            _ => None,
        }
    }

    pub fn vertex_position(&self, v: Vertex) -> Option<usize> {
        self.vertex_index.get(&v).copied()
    }

    pub fn edge_position(&self, e: [Vertex; 2]) -> Option<usize> {
        self.edge_index.get(&[e[0].min(e[1]), e[0].max(e[1])]).copied()
    }

    pub fn triangle_position(&self, mut t: [Vertex; 3]) -> Option<usize> {
        t.sort_unstable();
        self.triangle_index.get(&t).copied()
    }

    fn check(&self, s: SimplexId) -> Result<()> {
        if s.order as usize > MAX_ORDER {
            return Err(Error::InvalidOrder(s.order as usize));
        }
        if !self.contains(s) {
            return Err(Error::invalid(format!("{s} is not in the complex")));
        }
        Ok(())
    }

    /// The simplices related to `s`, ascending by index.
    pub fn neighbors(&self, s: SimplexId, relation: Relation) -> Result<Vec<SimplexId>> {
        self.check(s)?;
        let i = s.index;
        let mut out: Vec<usize> = match (relation, s.order) {
            (Relation::Boundary, 0) | (Relation::Coboundary, 2) => Vec::new(),
            (Relation::Boundary, 1) => self.edges[i].iter().map(|v| self.vertex_index[v]).collect(),
            (Relation::Boundary, _) => triangle_faces(&self.triangles[i])
                .iter()
                .map(|e| self.edge_index[e])
                .collect(),
            (Relation::Coboundary, 0) => self.vertex_edges[i].clone(),
            (Relation::Coboundary, _) => self.edge_triangles[i].clone(),
            (Relation::Lower, 0) | (Relation::Upper, 2) => Vec::new(),
            (Relation::Lower, 1) => self.edges[i]
                .iter()
                .flat_map(|v| self.vertex_edges[self.vertex_index[v]].iter().copied())
                .filter(|&e| e != i)
                .collect(),
            (Relation::Lower, _) => triangle_faces(&self.triangles[i])
                .iter()
                .flat_map(|e| self.edge_triangles[self.edge_index[e]].iter().copied())
                .filter(|&t| t != i)
                .collect(),
            (Relation::Upper, 0) => self.vertex_edges[i]
                .iter()
                .map(|&e| {
                    let [a, b] = self.edges[e];
                    let other = if self.vertex_index[&a] == i { b } else { a };
                    self.vertex_index[&other]
                })
                .collect(),
            (Relation::Upper, _) => self.edge_triangles[i]
                .iter()
                .flat_map(|&t| triangle_faces(&self.triangles[t]))
                .map(|e| self.edge_index[&e])
                .filter(|&e| e != i)
                .collect(),
        };
        out.sort_unstable();
        out.dedup();

        let order = match relation {
            Relation::Boundary => s.order.saturating_sub(1),
            Relation::Coboundary => (s.order + 1).min(MAX_ORDER as u8),
            Relation::Lower | Relation::Upper => s.order,
        };
        Ok(out.into_iter().map(|index| SimplexId { order, index }).collect())
    }

    /// Checks closure, lexicographic order, uniqueness and canonical vertex
    /// order. An empty result means the complex is valid.
    pub fn validate(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        check_list(&self.vertices, |v| vec![*v], &mut out);
        check_list(&self.edges, |e| e.to_vec(), &mut out);
        check_list(&self.triangles, |t| t.to_vec(), &mut out);

        for t in &self.triangles {
            for e in triangle_faces(t) {
                if !self.edge_index.contains_key(&e) {
                    out.push(Violation::MissingFace {
                        simplex: t.to_vec(),
                        face: e.to_vec(),
                    });
                }
            }
        }
        for e in &self.edges {
            for v in e {
                if !self.vertex_index.contains_key(v) {
                    out.push(Violation::MissingFace {
                        simplex: e.to_vec(),
                        face: vec![*v],
                    });
                }
            }
        }
        out
    }

    pub fn to_file(&self) -> ComplexFile {
        ComplexFile {
            vertices: self.vertices.clone(),
            edges: self.edges.clone(),
            triangles: self.triangles.clone(),
        }
    }

    pub fn from_file(file: ComplexFile) -> Result<Self> {
        Self::from_parts(file.vertices, file.edges, file.triangles)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

fn check_list<T: Ord + Copy>(list: &[T], verts: impl Fn(&T) -> Vec<Vertex>, out: &mut Vec<Violation>) {
    for (i, s) in list.iter().enumerate() {
        let vs = verts(s);
        if vs.windows(2).any(|w| w[0] >= w[1]) {
            out.push(Violation::NonCanonical { simplex: vs.clone() });
        }
        if i > 0 {
            let prev = &list[i - 1];
            if prev == s {
                out.push(Violation::Duplicate { simplex: vs });
            } else if prev > s {
                out.push(Violation::Unsorted { simplex: vs });
            }
        }
    }
}

/// The three edges of a canonical triangle, in lexicographic order.
fn triangle_faces(t: &[Vertex; 3]) -> [[Vertex; 2]; 3] {
    [[t[0], t[1]], [t[0], t[2]], [t[1], t[2]]]
}

/// All 3-cliques of a canonical, deduplicated edge list, sorted.
fn clique_triangles(edges: &[[Vertex; 2]]) -> Vec<[Vertex; 3]> {
    // forward adjacency: only neighbours with larger id, ascending
    let mut fwd: HashMap<Vertex, Vec<Vertex>> = HashMap::new();
    for &[a, b] in edges {
        fwd.entry(a).or_default().push(b);
    }
    let mut tris = Vec::new();
    for &[a, b] in edges {
        let (Some(na), Some(nb)) = (fwd.get(&a), fwd.get(&b)) else {
            continue;
        };
        // sorted merge of N+(a) and N+(b); every common c > b
        let (mut i, mut j) = (0, 0);
        while i < na.len() && j < nb.len() {
            match na[i].cmp(&nb[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    tris.push([a, b, na[i]]);
                    i += 1;
                    j += 1;
                }
            }
        }
    }
    tris.sort_unstable();
    tris
}
