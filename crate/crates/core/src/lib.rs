//! Spatiotemporal modeling on 2-order simplicial complexes.
//!
//! The crate is organised bottom-up:
//!
//! * [`complex`] and [`delaunay`] build simplicial complexes from edge lists
//!   (3-clique lifting) or planar point sets.
//! * [`operators`] derives boundary matrices, adjacencies, Hodge Laplacians and
//!   the two cross-order block adjacencies used for random walks.
//! * [`walks`] samples unbiased and order-biased walks and their anonymous
//!   encodings.
//! * [`features`] merges node, edge and triangle features into one simplex
//!   table and gathers walk tensors.
//! * [`nnkernel`] is a small dense tensor kernel with a reverse-mode tape.
//! * [`model`] is the convolutional walk network (stem, depthwise temporal
//!   convolution, gated adaptive diffusion, decoupled ConvFFNs).
//! * [`data`] generates synthetic datasets, windows, masks and metrics.
//! * [`cli`] wires everything to the `stsimplex` command-line tool.

// `!(x > 0.0)` style checks are meant to reject NaN as well.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod complex;
pub mod data;
pub mod delaunay;
pub mod error;
pub mod features;
pub mod model;
pub mod nnkernel;
pub mod operators;
pub mod walks;

pub use complex::{Relation, SimplexCounts, SimplexId, SimplicialComplex};
pub use error::{Error, Result};
pub use nnkernel::Tensor;
pub use operators::SparseOperator;
pub use walks::{WalkBatch, WalkConfig};
