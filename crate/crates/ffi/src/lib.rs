//! C interface to `stsimplex`.
//!
//! Objects cross the boundary as opaque handles created by `sts_*_new`/
//! `sts_*_load`-style constructors and released with the matching
//! `sts_*_free`. Every fallible call returns an [`StsStatus`]; on failure
//! [`sts_last_error`] copies a message for the calling thread.
//!
//! Array outputs follow one convention: the caller passes a buffer and its
//! capacity in elements, the call always writes the required length to
//! `*out_len`, and fails with `STS_BUFFER_TOO_SMALL` when the buffer is
//! short. Passing a null buffer with capacity 0 is a size query.

#![allow(clippy::missing_safety_doc)]

use std::cell::RefCell;
use std::ffi::{c_char, CStr};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use stsimplex::delaunay::delaunay;
use stsimplex::model::{load_model, Model};
use stsimplex::operators::{boundary, full_adjacency, hodge_laplacian};
use stsimplex::walks::{anonymize, sample_from, WalkConfig, WalkSampler};
use stsimplex::{Error, SimplicialComplex, SparseOperator, Tensor};

/// Result codes.
#[repr(C)]
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StsStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidInput = 2,
    Numeric = 3,
    Io = 4,
    Shape = 5,
    BufferTooSmall = 6,
    Internal = 7,
    Panic = 8,
}

/// Simplicial complex handle.
pub struct StsComplex(SimplicialComplex);

/// Sparse integer operator handle.
pub struct StsOperator(SparseOperator);

/// Trained model handle.
pub struct StsModel(Model);

thread_local! {
    static LAST_ERROR: RefCell<String> = const { RefCell::new(String::new()) };
}

fn set_error(msg: String) {
    LAST_ERROR.with(|e| *e.borrow_mut() = msg);
}

fn status_of(e: &Error) -> StsStatus {
    match e {
        Error::Numeric(_) => StsStatus::Numeric,
        Error::Io(_) => StsStatus::Io,
        Error::Shape(_) => StsStatus::Shape,
        Error::Internal(_) => StsStatus::Internal,
        _ => StsStatus::InvalidInput,
    }
}

/// Runs `f`, mapping errors and panics to status codes.
fn guard(f: impl FnOnce() -> Result<(), (StsStatus, String)>) -> StsStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => StsStatus::Ok,
        Ok(Err((code, msg))) => {
            set_error(msg);
            code
        }
        Err(_) => {
            set_error("panic inside stsimplex".into());
            StsStatus::Panic
        }
    }
}

fn lib(e: Error) -> (StsStatus, String) {
    (status_of(&e), e.to_string())
}

fn null(what: &str) -> (StsStatus, String) {
    (StsStatus::NullPointer, format!("{what} is null"))
}

unsafe fn as_ref<'a, T>(p: *const T, what: &str) -> Result<&'a T, (StsStatus, String)> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn slice<'a, T>(p: *const T, len: usize, what: &str) -> Result<&'a [T], (StsStatus, String)> {
    if len == 0 {
        return Ok(&[]);
    }
    if p.is_null() {
        return Err(null(what));
    }
    Ok(std::slice::from_raw_parts(p, len))
}

unsafe fn path<'a>(p: *const c_char) -> Result<&'a Path, (StsStatus, String)> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| (StsStatus::InvalidInput, "path is not UTF-8".to_string()))?;
    Ok(Path::new(s))
}

unsafe fn put<T>(out: *mut *mut T, v: T) -> Result<(), (StsStatus, String)> {
    if out.is_null() {
        return Err(null("output handle"));
    }
    *out = Box::into_raw(Box::new(v));
    Ok(())
}

/// Copies `src` into a caller buffer under the size-query convention.
unsafe fn copy_out<T: Copy>(
    src: &[T],
    dst: *mut T,
    cap: usize,
    out_len: *mut usize,
) -> Result<(), (StsStatus, String)> {
    if out_len.is_null() {
        return Err(null("out_len"));
    }
    *out_len = src.len();
    if cap < src.len() {
        return Err((
            StsStatus::BufferTooSmall,
            format!("buffer holds {cap} elements, {} needed", src.len()),
        ));
    }
    if !src.is_empty() {
        if dst.is_null() {
            return Err(null("output buffer"));
        }
        std::ptr::copy_nonoverlapping(src.as_ptr(), dst, src.len());
    }
    Ok(())
}

/// Copies the calling thread's last error message (NUL-terminated,
/// truncated to `cap`) and returns its full length in bytes.
#[no_mangle]
pub unsafe extern "C" fn sts_last_error(buf: *mut c_char, cap: usize) -> usize {
    LAST_ERROR.with(|e| {
        let msg = e.borrow();
        if !buf.is_null() && cap > 0 {
            let n = msg.len().min(cap - 1);
            std::ptr::copy_nonoverlapping(msg.as_ptr() as *const c_char, buf, n);
            *buf.add(n) = 0;
        }
        msg.len()
    })
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn sts_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr() as *const c_char
}

/// Builds a complex from `n_edges` vertex pairs (`2 * n_edges` ids).
/// With `lift`, every 3-clique becomes a triangle.
#[no_mangle]
pub unsafe extern "C" fn sts_complex_from_edges(
    pairs: *const u64,
    n_edges: usize,
    lift: bool,
    out: *mut *mut StsComplex,
) -> StsStatus {
    guard(|| {
        let ids = slice(pairs, 2 * n_edges, "pairs")?;
        let edges: Vec<(usize, usize)> = ids.chunks(2).map(|p| (p[0] as usize, p[1] as usize)).collect();
        let c = SimplicialComplex::from_edges(&edges, lift).map_err(lib)?;
        put(out, StsComplex(c))
    })
}

/// Delaunay complex of `n` points given as interleaved `x, y` pairs.
/// Vertex ids are the point positions.
#[no_mangle]
pub unsafe extern "C" fn sts_complex_from_points(
    xy: *const f64,
    n: usize,
    out: *mut *mut StsComplex,
) -> StsStatus {
    guard(|| {
        let xy = slice(xy, 2 * n, "xy")?;
        let pts: Vec<[f64; 2]> = xy.chunks(2).map(|p| [p[0], p[1]]).collect();
        let c = delaunay(&pts).map_err(lib)?;
        put(out, StsComplex(c))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sts_complex_load(path_utf8: *const c_char, out: *mut *mut StsComplex) -> StsStatus {
    guard(|| {
        let c = SimplicialComplex::load(path(path_utf8)?).map_err(lib)?;
        put(out, StsComplex(c))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sts_complex_save(c: *const StsComplex, path_utf8: *const c_char) -> StsStatus {
    guard(|| {
        let c = as_ref(c, "complex")?;
        c.0.save(path(path_utf8)?).map_err(lib)
    })
}

/// Writes the vertex, edge and triangle counts to `counts[0..3]`.
#[no_mangle]
pub unsafe extern "C" fn sts_complex_counts(c: *const StsComplex, counts: *mut usize) -> StsStatus {
    guard(|| {
        let c = as_ref(c, "complex")?;
        if counts.is_null() {
            return Err(null("counts"));
        }
        std::ptr::copy_nonoverlapping(c.0.counts().0.as_ptr(), counts, 3);
        Ok(())
    })
}

#[no_mangle]
pub unsafe extern "C" fn sts_complex_free(c: *mut StsComplex) {
    if !c.is_null() {
        drop(Box::from_raw(c));
    }
}

/// Boundary matrix from order `k` to `k - 1` (`k` is 1 or 2).
#[no_mangle]
pub unsafe extern "C" fn sts_operator_boundary(
    c: *const StsComplex,
    k: usize,
    signed_: bool,
    out: *mut *mut StsOperator,
) -> StsStatus {
    guard(|| {
        let c = as_ref(c, "complex")?;
        put(out, StsOperator(boundary(&c.0, k, signed_).map_err(lib)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sts_operator_hodge_laplacian(
    c: *const StsComplex,
    k: usize,
    out: *mut *mut StsOperator,
) -> StsStatus {
    guard(|| {
        let c = as_ref(c, "complex")?;
        put(out, StsOperator(hodge_laplacian(&c.0, k).map_err(lib)?))
    })
}

/// Cross-order block adjacency; `variant` 1 keeps same-order blocks, 2
/// keeps only boundary/coboundary blocks.
#[no_mangle]
pub unsafe extern "C" fn sts_operator_full_adjacency(
    c: *const StsComplex,
    variant: u8,
    out: *mut *mut StsOperator,
) -> StsStatus {
    guard(|| {
        let c = as_ref(c, "complex")?;
        put(out, StsOperator(full_adjacency(&c.0, variant).map_err(lib)?))
    })
}

#[no_mangle]
pub unsafe extern "C" fn sts_operator_shape(
    op: *const StsOperator,
    rows: *mut usize,
    cols: *mut usize,
    nnz: *mut usize,
) -> StsStatus {
    guard(|| {
        let op = as_ref(op, "operator")?;
        if rows.is_null() || cols.is_null() || nnz.is_null() {
            return Err(null("shape output"));
        }
        *rows = op.0.rows();
        *cols = op.0.cols();
        *nnz = op.0.nnz();
        Ok(())
    })
}

/// Copies the nonzeros in row-major order into three parallel arrays of
/// capacity `cap`.
#[no_mangle]
pub unsafe extern "C" fn sts_operator_triplets(
    op: *const StsOperator,
    rows: *mut usize,
    cols: *mut usize,
    vals: *mut i64,
    cap: usize,
    out_len: *mut usize,
) -> StsStatus {
    guard(|| {
        let op = as_ref(op, "operator")?;
        let (mut r, mut c, mut v) = (Vec::new(), Vec::new(), Vec::new());
        for (i, j, x) in op.0.triplets() {
            r.push(i);
            c.push(j);
            v.push(x);
        }
        copy_out(&r, rows, cap, out_len)?;
        copy_out(&c, cols, cap, out_len)?;
        copy_out(&v, vals, cap, out_len)
    })
}

#[no_mangle]
pub unsafe extern "C" fn sts_operator_free(op: *mut StsOperator) {
    if !op.is_null() {
        drop(Box::from_raw(op));
    }
}

/// Walk sampling parameters.
#[repr(C)]
#[derive(Clone, Copy, Debug)]
pub struct StsWalkConfig {
    pub length: usize,
    pub samples: usize,
    pub variant: u8,
    pub biased: bool,
    pub seed: u64,
}

/// Samples `samples` walks from every vertex. Trajectories hold global
/// simplex indices (vertices, then edges, then triangles) laid out as
/// `[vertex][sample][length + 1]`; `anonymous` has the same layout.
#[no_mangle]
pub unsafe extern "C" fn sts_sample_walks(
    c: *const StsComplex,
    cfg: StsWalkConfig,
    trajectories: *mut u32,
    anonymous: *mut u16,
    cap: usize,
    out_len: *mut usize,
) -> StsStatus {
    guard(|| {
        let c = as_ref(c, "complex")?;
        let wc = WalkConfig {
            length: cfg.length,
            samples: cfg.samples,
            variant: cfg.variant,
            biased: cfg.biased,
            seed: cfg.seed,
        };
        wc.validate().map_err(lib)?;
        let counts = c.0.counts();
        let need = counts.0[0] * cfg.samples * (cfg.length + 1);
        if cap < need {
            if out_len.is_null() {
                return Err(null("out_len"));
            }
            *out_len = need;
            return Err((
                StsStatus::BufferTooSmall,
                format!("buffer holds {cap} elements, {need} needed"),
            ));
        }
        let a = full_adjacency(&c.0, cfg.variant).map_err(lib)?;
        let sampler = WalkSampler::new(&a, counts, cfg.biased).map_err(lib)?;
        let starts: Vec<usize> = (0..counts.0[0]).collect();
        let batch = sample_from(&sampler, &starts, &wc);
        copy_out(&batch.trajectories, trajectories, cap, out_len)?;
        copy_out(&batch.anonymous, anonymous, cap, out_len)
    })
}

/// First-occurrence labels (from 1) of a walk of `len` ids.
#[no_mangle]
pub unsafe extern "C" fn sts_anonymize(walk: *const u32, len: usize, labels: *mut u16) -> StsStatus {
    guard(|| {
        let w = slice(walk, len, "walk")?;
        let l = anonymize(w);
        let mut n = 0;
        copy_out(&l, labels, len, &mut n)
    })
}

/// Loads a model saved by `stsimplex train` (parameters at `path`, config
/// in the `.json` sidecar).
#[no_mangle]
pub unsafe extern "C" fn sts_model_load(path_utf8: *const c_char, out: *mut *mut StsModel) -> StsStatus {
    guard(|| {
        let m = load_model(path(path_utf8)?).map_err(lib)?;
        put(out, StsModel(m))
    })
}

/// Input walk-tensor shape `[node, time, channel, position, sample]`.
#[no_mangle]
pub unsafe extern "C" fn sts_model_input_shape(m: *const StsModel, shape: *mut usize) -> StsStatus {
    guard(|| {
        let m = as_ref(m, "model")?;
        if shape.is_null() {
            return Err(null("shape"));
        }
        std::ptr::copy_nonoverlapping(m.0.config.walk_tensor_shape().as_ptr(), shape, 5);
        Ok(())
    })
}

/// Output shape `[node, step, feature]`.
#[no_mangle]
pub unsafe extern "C" fn sts_model_output_shape(m: *const StsModel, shape: *mut usize) -> StsStatus {
    guard(|| {
        let m = as_ref(m, "model")?;
        if shape.is_null() {
            return Err(null("shape"));
        }
        let c = &m.0.config;
        std::ptr::copy_nonoverlapping([c.nodes, c.out_steps(), c.features].as_ptr(), shape, 3);
        Ok(())
    })
}

/// Runs the model on a prepared walk tensor (row-major, shape from
/// [`sts_model_input_shape`]).
#[no_mangle]
pub unsafe extern "C" fn sts_model_predict(
    m: *const StsModel,
    input: *const f32,
    input_len: usize,
    output: *mut f32,
    cap: usize,
    out_len: *mut usize,
) -> StsStatus {
    guard(|| {
        let m = as_ref(m, "model")?;
        let shape = m.0.config.walk_tensor_shape();
        let x = slice(input, input_len, "input")?;
        let t = Tensor::new(&shape, x.to_vec()).map_err(lib)?;
        let y = m.0.predict(&t).map_err(lib)?;
        copy_out(y.data(), output, cap, out_len)
    })
}

#[no_mangle]
pub unsafe extern "C" fn sts_model_free(m: *mut StsModel) {
    if !m.is_null() {
        drop(Box::from_raw(m));
    }
}
