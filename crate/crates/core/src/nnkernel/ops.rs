//! Forward kernels (public) and their adjoints (crate-private, used by the
//! tape). Reductions accumulate in `f64`.

use super::{Real, Tensor};
use crate::error::{Error, Result};

fn f<T: Real>(v: T) -> f64 {
    v.to_f64c()
}

fn t<T: Real>(v: f64) -> T {
    T::from_f64c(v)
}

fn check_same<T: Real>(what: &str, a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "{what}: shapes {:?} and {:?} differ",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

fn zip_map<T: Real>(a: &Tensor<T>, b: &Tensor<T>, op: impl Fn(T, T) -> T) -> Tensor<T> {
    let data = a.data().iter().zip(b.data()).map(|(&x, &y)| op(x, y)).collect();
    Tensor::new(a.shape(), data).expect("same shape")
}

pub fn add<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same("add", a, b)?;
    Ok(zip_map(a, b, |x, y| x + y))
}

pub fn sub<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same("sub", a, b)?;
    Ok(zip_map(a, b, |x, y| x - y))
}

pub fn mul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    check_same("mul", a, b)?;
    Ok(zip_map(a, b, |x, y| x * y))
}

/// `x + b`, with `b` broadcast over the leading axes of `x`.
pub fn add_bias<T: Real>(x: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let n = b.len();
    if n == 0 || !x.len().is_multiple_of(n) || !x.shape().ends_with(b.shape()) {
        return Err(Error::shape(format!(
            "bias {:?} does not broadcast over {:?}",
            b.shape(),
            x.shape()
        )));
    }
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| v + b.data()[i % n])
        .collect();
    Tensor::new(x.shape(), data)
}

pub fn sigmoid_scalar<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Sigmoid-gated blend `z + sigmoid(x + z) * (x - z)`, evaluated in f64
/// and clamped to `[min(x, z), max(x, z)]` before rounding so the bound
/// survives any precision.
pub fn gate<T: Real>(x: &Tensor<T>, z: &Tensor<T>) -> Result<Tensor<T>> {
    check_same("gate", x, z)?;
    let data = x
        .data()
        .iter()
        .zip(z.data())
        .map(|(&a, &b)| {
            let (a, b) = (f(a), f(b));
            let g = sigmoid_scalar(a + b);
            t((b + g * (a - b)).clamp(a.min(b), a.max(b)))
        })
        .collect();
    Tensor::new(x.shape(), data)
}

/// Gradients of [`gate`] with respect to `x` and `z`.
pub(crate) fn gate_backward<T: Real>(x: &Tensor<T>, z: &Tensor<T>, g: &Tensor<T>) -> (Tensor<T>, Tensor<T>) {
    let n = x.len();
    let (mut gx, mut gz) = (Vec::with_capacity(n), Vec::with_capacity(n));
    for i in 0..n {
        let (a, b, up) = (f(x.data()[i]), f(z.data()[i]), f(g.data()[i]));
        let s = sigmoid_scalar(a + b);
        let ds = s * (1.0 - s) * (a - b);
        gx.push(t(up * (s + ds)));
        gz.push(t(up * (1.0 - s + ds)));
    }
    (
        Tensor::new(x.shape(), gx).expect("shape"),
        Tensor::new(x.shape(), gz).expect("shape"),
    )
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| v.max(T::zero()))
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;

/// `tanh` through one `exp`; libm's version dominates GELU otherwise.
fn fast_tanh<T: Real>(x: T) -> T {
    let lim = t::<T>(20.0);
    if x > lim {
        return T::one();
    }
    if x < -lim {
        return -T::one();
    }
    let e = (x + x).exp();
    (e - T::one()) / (e + T::one())
}

/// Tanh approximation of GELU.
pub fn gelu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let (c, a, half) = (t::<T>(GELU_C), t::<T>(GELU_A), t::<T>(0.5));
    x.map(|z| half * z * (T::one() + fast_tanh(c * (z + a * z * z * z))))
}

fn gelu_grad<T: Real>(z: T) -> T {
    let (c, a, half) = (t::<T>(GELU_C), t::<T>(GELU_A), t::<T>(0.5));
    let three = t::<T>(3.0);
    let th = fast_tanh(c * (z + a * z * z * z));
    half * (T::one() + th) + half * z * (T::one() - th * th) * c * (T::one() + three * a * z * z)
}

pub(crate) fn gelu_backward<T: Real>(x: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    zip_map(x, g, |v, gv| gelu_grad(v) * gv)
}

pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    a.expect_rank("matmul lhs", 2)?;
    b.expect_rank("matmul rhs", 2)?;
    let (m, k, n) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    if b.shape()[0] != k {
        return Err(Error::shape(format!("matmul {:?} x {:?}", a.shape(), b.shape())));
    }
    let ad = a.data();
    let bd: Vec<f64> = b.data().iter().map(|&v| f(v)).collect();
    let mut out = Vec::with_capacity(m * n);
    let mut acc = vec![0f64; n];
    for i in 0..m {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for p in 0..k {
            let av = f(ad[i * k + p]);
            if av == 0.0 {
                continue;
            }
            for (s, &bv) in acc.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *s += av * bv;
            }
        }
        out.extend(acc.iter().map(|&v| t::<T>(v)));
    }
    Tensor::new(&[m, n], out)
}

/// `g b^T` for `g: [m, n]`, `b: [k, n]`.
pub(crate) fn matmul_nt<T: Real>(g: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (m, n, k) = (g.shape()[0], g.shape()[1], b.shape()[0]);
    let bd: Vec<f64> = b.data().iter().map(|&v| f(v)).collect();
    let mut gr = vec![0f64; n];
    let mut out = Vec::with_capacity(m * k);
    for i in 0..m {
        for (d, &v) in gr.iter_mut().zip(&g.data()[i * n..(i + 1) * n]) {
            *d = f(v);
        }
        for p in 0..k {
            let br = &bd[p * n..(p + 1) * n];
            out.push(t(gr.iter().zip(br).map(|(&x, &y)| x * y).sum::<f64>()));
        }
    }
    Tensor::new(&[m, k], out).expect("shape")
}

/// `a^T g` for `a: [m, k]`, `g: [m, n]`.
pub(crate) fn matmul_tn<T: Real>(a: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let (m, k, n) = (a.shape()[0], a.shape()[1], g.shape()[1]);
    let (ad, gd) = (a.data(), g.data());
    let mut acc = vec![0f64; k * n];
    for i in 0..m {
        let gr = &gd[i * n..(i + 1) * n];
        for p in 0..k {
            let av = f(ad[i * k + p]);
            if av == 0.0 {
                continue;
            }
            for (s, &gv) in acc[p * n..(p + 1) * n].iter_mut().zip(gr) {
                *s += av * f(gv);
            }
        }
    }
    Tensor::new(&[k, n], acc.into_iter().map(t).collect()).expect("shape")
}

/// Valid 2-D cross-correlation over the last two axes of `x`.
///
/// `kernel` is `[maps, kh, kw]`; the output is `[lead.., maps, ho, wo]`
/// with `ho = (h - kh) / sh + 1` and likewise for `wo`.
pub fn conv2d<T: Real>(x: &Tensor<T>, kernel: &Tensor<T>, stride: (usize, usize)) -> Result<Tensor<T>> {
    let g = Conv2dGeom::new(x.shape(), kernel.shape(), stride)?;
    let (xd, kd) = (x.data(), kernel.data());
    let mut out = Vec::with_capacity(g.lead * g.maps * g.ho * g.wo);
    for l in 0..g.lead {
        let xs = &xd[l * g.h * g.w..(l + 1) * g.h * g.w];
        for m in 0..g.maps {
            let ks = &kd[m * g.kh * g.kw..(m + 1) * g.kh * g.kw];
            for i in 0..g.ho {
                for j in 0..g.wo {
                    let mut acc = 0f64;
                    for p in 0..g.kh {
                        let row = (i * g.sh + p) * g.w + j * g.sw;
                        for q in 0..g.kw {
                            acc += f(ks[p * g.kw + q]) * f(xs[row + q]);
                        }
                    }
                    out.push(t(acc));
                }
            }
        }
    }
    Tensor::new(&g.out_shape(x.shape()), out)
}

pub(crate) struct Conv2dGeom {
    lead: usize,
    h: usize,
    w: usize,
    maps: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ho: usize,
    wo: usize,
}

impl Conv2dGeom {
    pub(crate) fn new(xs: &[usize], ks: &[usize], stride: (usize, usize)) -> Result<Self> {
        if xs.len() < 2 || ks.len() != 3 {
            return Err(Error::shape(format!(
                "conv2d needs input rank >= 2 and kernel [maps, kh, kw], got {xs:?} and {ks:?}"
            )));
        }
        let (h, w) = (xs[xs.len() - 2], xs[xs.len() - 1]);
        let (maps, kh, kw) = (ks[0], ks[1], ks[2]);
        let (sh, sw) = stride;
        if sh == 0 || sw == 0 {
            return Err(Error::invalid("conv2d stride must be positive"));
        }
        if kh > h || kw > w || kh == 0 || kw == 0 {
            return Err(Error::shape(format!(
                "conv2d kernel {kh}x{kw} does not fit input {h}x{w}"
            )));
        }
        Ok(Conv2dGeom {
            lead: xs[..xs.len() - 2].iter().product(),
            h,
            w,
            maps,
            kh,
            kw,
            sh,
            sw,
            ho: (h - kh) / sh + 1,
            wo: (w - kw) / sw + 1,
        })
    }

    fn out_shape(&self, xs: &[usize]) -> Vec<usize> {
        let mut s = xs[..xs.len() - 2].to_vec();
        s.extend([self.maps, self.ho, self.wo]);
        s
    }
}

pub(crate) fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    stride: (usize, usize),
    g: &Tensor<T>,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>) {
    let geo = Conv2dGeom::new(x.shape(), kernel.shape(), stride).expect("checked in forward");
    let (xd, kd, gd) = (x.data(), kernel.data(), g.data());
    let mut gx = if need_x { vec![0f64; x.len()] } else { Vec::new() };
    let mut gk = vec![0f64; kernel.len()];
    let per_lead = geo.maps * geo.ho * geo.wo;
    for l in 0..geo.lead {
        let xoff = l * geo.h * geo.w;
        for m in 0..geo.maps {
            for i in 0..geo.ho {
                for j in 0..geo.wo {
                    let gv = f(gd[l * per_lead + (m * geo.ho + i) * geo.wo + j]);
                    if gv == 0.0 {
                        continue;
                    }
                    for p in 0..geo.kh {
                        let row = xoff + (i * geo.sh + p) * geo.w + j * geo.sw;
                        for q in 0..geo.kw {
                            let kidx = (m * geo.kh + p) * geo.kw + q;
                            gk[kidx] += gv * f(xd[row + q]);
                            if need_x {
                                gx[row + q] += gv * f(kd[kidx]);
                            }
                        }
                    }
                }
            }
        }
    }
    let gx = need_x.then(|| Tensor::new(x.shape(), gx.into_iter().map(t).collect()).expect("shape"));
    (
        gx,
        Tensor::new(kernel.shape(), gk.into_iter().map(t).collect()).expect("shape"),
    )
}

/// Depthwise 1-D convolution along axis 1 of `x: [nodes, time, lanes..]`
/// with zero "same" padding.
///
/// `kernels` is either `[lanes.., k]` (shared by all nodes) or
/// `[nodes, lanes.., k]` (one kernel per node and lane). `k` must be odd.
pub fn dwconv1d<T: Real>(x: &Tensor<T>, kernels: &Tensor<T>) -> Result<Tensor<T>> {
    let g = DwGeom::new(x.shape(), kernels.shape())?;
    let (xd, kd) = (x.data(), kernels.data());
    let mut out = vec![T::zero(); x.len()];
    let mut acc = vec![0f64; g.lanes];
    for n in 0..g.nodes {
        let kbase = if g.per_node { n * g.lanes * g.k } else { 0 };
        for ti in 0..g.time {
            acc.iter_mut().for_each(|v| *v = 0.0);
            for j in 0..g.k {
                let Some(src) = (ti + j).checked_sub(g.pad).filter(|&s| s < g.time) else {
                    continue;
                };
                let xrow = &xd[(n * g.time + src) * g.lanes..][..g.lanes];
                for (l, (a, &xv)) in acc.iter_mut().zip(xrow).enumerate() {
                    *a += f(kd[kbase + l * g.k + j]) * f(xv);
                }
            }
            let orow = &mut out[(n * g.time + ti) * g.lanes..][..g.lanes];
            for (o, &a) in orow.iter_mut().zip(&acc) {
                *o = t(a);
            }
        }
    }
    Tensor::new(x.shape(), out)
}

pub(crate) struct DwGeom {
    nodes: usize,
    time: usize,
    lanes: usize,
    k: usize,
    pad: usize,
    per_node: bool,
}

impl DwGeom {
    fn new(xs: &[usize], ks: &[usize]) -> Result<Self> {
        if xs.len() < 2 {
            return Err(Error::shape(format!("dwconv1d input {xs:?} has no time axis")));
        }
        let (nodes, time) = (xs[0], xs[1]);
        let lanes: usize = xs[2..].iter().product();
        let k = *ks.last().ok_or_else(|| Error::shape("empty dwconv1d kernel"))?;
        if k % 2 == 0 {
            return Err(Error::invalid(format!("dwconv1d kernel size {k} is even")));
        }
        let klen: usize = ks.iter().product();
        let per_node = if ks[..ks.len() - 1] == xs[2..] {
            false
        } else if ks.len() == xs.len() && ks[0] == nodes && ks[1..ks.len() - 1] == xs[2..] {
            true
        } else {
            return Err(Error::shape(format!(
                "dwconv1d kernel {ks:?} does not match input {xs:?}"
            )));
        };
        debug_assert_eq!(klen, if per_node { nodes * lanes * k } else { lanes * k });
        Ok(DwGeom {
            nodes,
            time,
            lanes,
            k,
            pad: (k - 1) / 2,
            per_node,
        })
    }
}

pub(crate) fn dwconv1d_backward<T: Real>(
    x: &Tensor<T>,
    kernels: &Tensor<T>,
    g: &Tensor<T>,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>) {
    let geo = DwGeom::new(x.shape(), kernels.shape()).expect("checked in forward");
    let (xd, kd, gd) = (x.data(), kernels.data(), g.data());
    let mut gx = if need_x { vec![0f64; x.len()] } else { Vec::new() };
    let mut gk = vec![0f64; kernels.len()];
    for n in 0..geo.nodes {
        let kbase = if geo.per_node { n * geo.lanes * geo.k } else { 0 };
        for ti in 0..geo.time {
            let grow = &gd[(n * geo.time + ti) * geo.lanes..][..geo.lanes];
            for j in 0..geo.k {
                let Some(src) = (ti + j).checked_sub(geo.pad).filter(|&s| s < geo.time) else {
                    continue;
                };
                let xo = (n * geo.time + src) * geo.lanes;
                for (l, &gv) in grow.iter().enumerate() {
                    let gv = f(gv);
                    let kidx = kbase + l * geo.k + j;
                    gk[kidx] += gv * f(xd[xo + l]);
                    if need_x {
                        gx[xo + l] += gv * f(kd[kidx]);
                    }
                }
            }
        }
    }
    let gx = need_x.then(|| Tensor::new(x.shape(), gx.into_iter().map(t).collect()).expect("shape"));
    (
        gx,
        Tensor::new(kernels.shape(), gk.into_iter().map(t).collect()).expect("shape"),
    )
}

/// Grouped 1x1 convolution over the last axis.
///
/// `weights` is `[groups, out_per_group, in_per_group]`; the last axis of
/// `x` must equal `groups * in_per_group`. Outputs of group `g` only read
/// inputs of group `g`.
pub fn grouped_pointwise<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let g = GroupGeom::new(x.shape(), weights.shape(), bias.map(|b| b.shape()))?;
    // weights transposed to [group, in, out] so the inner loop runs over
    // independent outputs
    let mut wt = vec![0f64; weights.len()];
    for grp in 0..g.groups {
        for o in 0..g.gout {
            for i in 0..g.gin {
                wt[(grp * g.gin + i) * g.gout + o] = f(weights.data()[(grp * g.gout + o) * g.gin + i]);
            }
        }
    }
    let b64: Vec<f64> = match bias {
        Some(b) => b.data().iter().map(|&v| f(v)).collect(),
        None => vec![0.0; g.cout()],
    };
    let xd = x.data();
    let mut out = Vec::with_capacity(g.rows * g.cout());
    let mut acc = vec![0f64; g.gout];
    for r in 0..g.rows {
        let xr = &xd[r * g.cin()..(r + 1) * g.cin()];
        for grp in 0..g.groups {
            acc.copy_from_slice(&b64[grp * g.gout..(grp + 1) * g.gout]);
            for i in 0..g.gin {
                let xv = f(xr[grp * g.gin + i]);
                let wrow = &wt[(grp * g.gin + i) * g.gout..][..g.gout];
                for (a, &w) in acc.iter_mut().zip(wrow) {
                    *a += w * xv;
                }
            }
            out.extend(acc.iter().map(|&v| t::<T>(v)));
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank >= 1") = g.cout();
    Tensor::new(&shape, out)
}

pub(crate) struct GroupGeom {
    rows: usize,
    groups: usize,
    gin: usize,
    gout: usize,
}

impl GroupGeom {
    fn new(xs: &[usize], ws: &[usize], bs: Option<&[usize]>) -> Result<Self> {
        let cin = *xs
            .last()
            .ok_or_else(|| Error::shape("grouped_pointwise on a scalar"))?;
        if ws.len() != 3 {
            return Err(Error::shape(format!(
                "grouped_pointwise weights must be [groups, out, in], got {ws:?}"
            )));
        }
        let (groups, gout, gin) = (ws[0], ws[1], ws[2]);
        if groups == 0 || cin % groups != 0 {
            return Err(Error::shape(format!(
                "{cin} input lanes are not divisible into {groups} groups"
            )));
        }
        if cin / groups != gin {
            return Err(Error::shape(format!(
                "weights expect {gin} lanes per group, input has {}",
                cin / groups
            )));
        }
        if let Some(bs) = bs {
            if bs != [groups * gout] {
                return Err(Error::shape(format!(
                    "bias {bs:?} does not match {} outputs",
                    groups * gout
                )));
            }
        }
        Ok(GroupGeom {
            rows: xs.iter().product::<usize>() / cin,
            groups,
            gin,
            gout,
        })
    }

    fn cin(&self) -> usize {
        self.groups * self.gin
    }

    fn cout(&self) -> usize {
        self.groups * self.gout
    }
}

pub(crate) fn grouped_pointwise_backward<T: Real>(
    x: &Tensor<T>,
    weights: &Tensor<T>,
    g: &Tensor<T>,
    need_x: bool,
) -> (Option<Tensor<T>>, Tensor<T>, Tensor<T>) {
    let geo = GroupGeom::new(x.shape(), weights.shape(), None).expect("checked in forward");
    let (cin, cout) = (geo.cin(), geo.cout());
    let wd: Vec<f64> = weights.data().iter().map(|&v| f(v)).collect();
    let mut gx = if need_x { vec![0f64; x.len()] } else { Vec::new() };
    let mut gw = vec![0f64; weights.len()];
    let mut gb = vec![0f64; cout];
    let mut xr = vec![0f64; cin];
    let mut gr = vec![0f64; cout];
    for r in 0..geo.rows {
        for (d, &v) in xr.iter_mut().zip(&x.data()[r * cin..(r + 1) * cin]) {
            *d = f(v);
        }
        for (d, &v) in gr.iter_mut().zip(&g.data()[r * cout..(r + 1) * cout]) {
            *d = f(v);
        }
        for (b, &v) in gb.iter_mut().zip(&gr) {
            *b += v;
        }
        for grp in 0..geo.groups {
            let xs = &xr[grp * geo.gin..(grp + 1) * geo.gin];
            for o in 0..geo.gout {
                let gv = gr[grp * geo.gout + o];
                if gv == 0.0 {
                    continue;
                }
                let wo = (grp * geo.gout + o) * geo.gin;
                for (w, &xv) in gw[wo..wo + geo.gin].iter_mut().zip(xs) {
                    *w += gv * xv;
                }
                if need_x {
                    let gxs = &mut gx[r * cin + grp * geo.gin..][..geo.gin];
                    for (d, &w) in gxs.iter_mut().zip(&wd[wo..wo + geo.gin]) {
                        *d += gv * w;
                    }
                }
            }
        }
    }
    let conv = |v: Vec<f64>| v.into_iter().map(t).collect::<Vec<T>>();
    let gx = need_x.then(|| Tensor::new(x.shape(), conv(gx)).expect("shape"));
    (
        gx,
        Tensor::new(weights.shape(), conv(gw)).expect("shape"),
        Tensor::new(&[geo.cout()], conv(gb)).expect("shape"),
    )
}

/// Which elements of a `[nodes, time, channel, embed]` tensor share
/// normalization statistics.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NormKind {
    /// One slice per (time, channel), normalized over (node, embed).
    Graph,
    /// One slice per (node, time, channel), normalized over embed.
    Local,
}

pub(crate) struct NormGeom {
    n: usize,
    tm: usize,
    c: usize,
    d: usize,
    kind: NormKind,
}

impl NormGeom {
    fn new(xs: &[usize], kind: NormKind) -> Result<Self> {
        if xs.len() != 4 {
            return Err(Error::shape(format!(
                "normalization expects [node, time, channel, embed], got {xs:?}"
            )));
        }
        Ok(NormGeom {
            n: xs[0],
            tm: xs[1],
            c: xs[2],
            d: xs[3],
            kind,
        })
    }

    fn slices(&self) -> usize {
        match self.kind {
            NormKind::Graph => self.tm * self.c,
            NormKind::Local => self.n * self.tm * self.c,
        }
    }

    fn group_size(&self) -> usize {
        match self.kind {
            NormKind::Graph => self.n * self.d,
            NormKind::Local => self.d,
        }
    }

    /// Slice id of each contiguous embed row `(n, t, c)`.
    fn slice_of_row(&self, row: usize) -> usize {
        match self.kind {
            NormKind::Graph => row % (self.tm * self.c),
            NormKind::Local => row,
        }
    }
}

/// Normalized values, per-slice inverse standard deviations.
pub(crate) struct NormStats<T> {
    pub xhat: Tensor<T>,
    pub rstd: Vec<f64>,
}

/// Layer normalization with per-embed affine `gain` and `bias` (`[embed]`).
/// Constant slices normalize to zero before the affine step.
pub fn layer_norm<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
    kind: NormKind,
) -> Result<Tensor<T>> {
    Ok(layer_norm_stats(x, gain, bias, eps, kind)?.0)
}

/// Graph-wise layer normalization: each (time, channel) slice is normalized
/// over the joint (node, embed) axes.
pub fn layernorm_graph<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
) -> Result<Tensor<T>> {
    layer_norm(x, gain, bias, eps, NormKind::Graph)
}

pub(crate) fn layer_norm_stats<T: Real>(
    x: &Tensor<T>,
    gain: &Tensor<T>,
    bias: &Tensor<T>,
    eps: f64,
    kind: NormKind,
) -> Result<(Tensor<T>, NormStats<T>)> {
    if eps <= 0.0 {
        return Err(Error::invalid("normalization eps must be positive"));
    }
    let geo = NormGeom::new(x.shape(), kind)?;
    gain.expect_shape("norm gain", &[geo.d])?;
    bias.expect_shape("norm bias", &[geo.d])?;
    let xd = x.data();
    let rows = geo.n * geo.tm * geo.c;
    let m = geo.group_size() as f64;
    let mut mean = vec![0f64; geo.slices()];
    for r in 0..rows {
        let s = geo.slice_of_row(r);
        mean[s] += xd[r * geo.d..(r + 1) * geo.d].iter().map(|&v| f(v)).sum::<f64>();
    }
    mean.iter_mut().for_each(|v| *v /= m);
    let mut var = vec![0f64; geo.slices()];
    for r in 0..rows {
        let s = geo.slice_of_row(r);
        var[s] += xd[r * geo.d..(r + 1) * geo.d]
            .iter()
            .map(|&v| (f(v) - mean[s]).powi(2))
            .sum::<f64>();
    }
    let rstd: Vec<f64> = var.iter().map(|v| 1.0 / (v / m + eps).sqrt()).collect();

    let (gd, bd) = (gain.data(), bias.data());
    let mut xhat = Vec::with_capacity(x.len());
    let mut out = Vec::with_capacity(x.len());
    for r in 0..rows {
        let s = geo.slice_of_row(r);
        for (j, &v) in xd[r * geo.d..(r + 1) * geo.d].iter().enumerate() {
            let h = (f(v) - mean[s]) * rstd[s];
            xhat.push(t::<T>(h));
            out.push(t::<T>(h * f(gd[j]) + f(bd[j])));
        }
    }
    Ok((
        Tensor::new(x.shape(), out)?,
        NormStats {
            xhat: Tensor::new(x.shape(), xhat)?,
            rstd,
        },
    ))
}

pub(crate) fn layer_norm_backward<T: Real>(
    stats: &NormStats<T>,
    gain: &Tensor<T>,
    g: &Tensor<T>,
    kind: NormKind,
) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
    let geo = NormGeom::new(g.shape(), kind).expect("checked in forward");
    let (hd, gd, gnd) = (stats.xhat.data(), g.data(), gain.data());
    let rows = geo.n * geo.tm * geo.c;
    let m = geo.group_size() as f64;
    let mut ggain = vec![0f64; geo.d];
    let mut gbias = vec![0f64; geo.d];
    let mut sum_g = vec![0f64; geo.slices()];
    let mut sum_gh = vec![0f64; geo.slices()];
    for r in 0..rows {
        let s = geo.slice_of_row(r);
        for j in 0..geo.d {
            let (gv, h) = (f(gd[r * geo.d + j]), f(hd[r * geo.d + j]));
            ggain[j] += gv * h;
            gbias[j] += gv;
            let gh = gv * f(gnd[j]);
            sum_g[s] += gh;
            sum_gh[s] += gh * h;
        }
    }
    let mut gx = Vec::with_capacity(g.len());
    for r in 0..rows {
        let s = geo.slice_of_row(r);
        for j in 0..geo.d {
            let (gv, h) = (f(gd[r * geo.d + j]), f(hd[r * geo.d + j]));
            let gh = gv * f(gnd[j]);
            gx.push(t::<T>(stats.rstd[s] / m * (m * gh - sum_g[s] - h * sum_gh[s])));
        }
    }
    let conv = |v: Vec<f64>| v.into_iter().map(t).collect::<Vec<T>>();
    (
        Tensor::new(g.shape(), gx).expect("shape"),
        Tensor::new(gain.shape(), conv(ggain)).expect("shape"),
        Tensor::new(gain.shape(), conv(gbias)).expect("shape"),
    )
}

/// Row-wise softmax of a matrix, stabilized by max subtraction.
pub fn softmax_rows<T: Real>(m: &Tensor<T>) -> Result<Tensor<T>> {
    m.expect_rank("softmax_rows", 2)?;
    let (r, c) = (m.shape()[0], m.shape()[1]);
    let mut out = Vec::with_capacity(m.len());
    for i in 0..r {
        let row = &m.data()[i * c..(i + 1) * c];
        let mx = row.iter().map(|&v| f(v)).fold(f64::NEG_INFINITY, f64::max);
        let e: Vec<f64> = row.iter().map(|&v| (f(v) - mx).exp()).collect();
        let z: f64 = e.iter().sum();
        out.extend(e.into_iter().map(|v| t::<T>(v / z)));
    }
    Tensor::new(m.shape(), out)
}

pub(crate) fn softmax_rows_backward<T: Real>(y: &Tensor<T>, g: &Tensor<T>) -> Tensor<T> {
    let c = y.shape()[1];
    let mut out = Vec::with_capacity(y.len());
    for (yr, gr) in y.data().chunks(c).zip(g.data().chunks(c)) {
        let dot: f64 = yr.iter().zip(gr).map(|(&a, &b)| f(a) * f(b)).sum();
        out.extend(yr.iter().zip(gr).map(|(&a, &b)| t::<T>(f(a) * (f(b) - dot))));
    }
    Tensor::new(y.shape(), out).expect("shape")
}

/// Reorders axes: output axis `i` is input axis `axes[i]`.
pub fn permute<T: Real>(x: &Tensor<T>, axes: &[usize]) -> Result<Tensor<T>> {
    let rank = x.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank
        || axes
            .iter()
            .any(|&a| a >= rank || std::mem::replace(&mut seen[a], true))
    {
        return Err(Error::shape(format!(
            "{axes:?} is not a permutation of {rank} axes"
        )));
    }
    let in_shape = x.shape();
    if rank >= 2 && axes[..rank - 2].iter().enumerate().all(|(i, &a)| a == i) && axes[rank - 2] == rank - 1 {
        return Ok(swap_last_two(x));
    }
    let mut in_strides = vec![1; rank];
    for a in (0..rank.saturating_sub(1)).rev() {
        in_strides[a] = in_strides[a + 1] * in_shape[a + 1];
    }
    let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut idx = vec![0; rank];
    let mut out = Vec::with_capacity(x.len());
    for _ in 0..x.len() {
        let off: usize = idx.iter().zip(&strides).map(|(i, s)| i * s).sum();
        out.push(x.data()[off]);
        for a in (0..rank).rev() {
            idx[a] += 1;
            if idx[a] < out_shape[a] {
                break;
            }
            idx[a] = 0;
        }
    }
    Tensor::new(&out_shape, out)
}

fn swap_last_two<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let s = x.shape();
    let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
    let mut out = Vec::with_capacity(x.len());
    for block in x.data().chunks(r * c) {
        for j in 0..c {
            out.extend((0..r).map(|i| block[i * c + j]));
        }
    }
    let mut shape = s.to_vec();
    let n = shape.len();
    shape.swap(n - 2, n - 1);
    Tensor::new(&shape, out).expect("same size")
}

pub(crate) fn inverse_axes(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    Mae,
    Mse,
}

/// Mean absolute or squared error over the positions where `mask` is
/// nonzero (all positions when `mask` is `None`).
pub fn masked_loss<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: Option<&Tensor<T>>,
    kind: LossKind,
) -> Result<f64> {
    check_same("loss", pred, target)?;
    if let Some(m) = mask {
        check_same("loss mask", pred, m)?;
    }
    let mut num = 0f64;
    let mut den = 0f64;
    for i in 0..pred.len() {
        let w = mask.map_or(1.0, |m| f(m.data()[i]));
        if w == 0.0 {
            continue;
        }
        let e = f(pred.data()[i]) - f(target.data()[i]);
        num += w * match kind {
            LossKind::Mae => e.abs(),
            LossKind::Mse => e * e,
        };
        den += w;
    }
    if den == 0.0 {
        return Err(Error::EmptyMask);
    }
    Ok(num / den)
}

pub(crate) fn masked_loss_backward<T: Real>(
    pred: &Tensor<T>,
    target: &Tensor<T>,
    mask: Option<&Tensor<T>>,
    kind: LossKind,
    g: f64,
) -> Tensor<T> {
    let den: f64 = mask.map_or(pred.len() as f64, |m| m.sum_f64());
    let data = (0..pred.len())
        .map(|i| {
            let w = mask.map_or(1.0, |m| f(m.data()[i]));
            let e = f(pred.data()[i]) - f(target.data()[i]);
            let d = match kind {
                LossKind::Mae => {
                    if e > 0.0 {
                        1.0
                    } else if e < 0.0 {
                        -1.0
                    } else {
                        0.0
                    }
                }
                LossKind::Mse => 2.0 * e,
            };
            t::<T>(g * w * d / den)
        })
        .collect();
    Tensor::new(pred.shape(), data).expect("shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tn(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::new(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn conv2d_hand_example() {
        let x = tn(&[2, 2], &[1.0, 2.0, 3.0, 4.0]);
        let k = tn(&[1, 2, 2], &[1.0, 0.0, 0.0, 1.0]);
        let y = conv2d(&x, &k, (1, 1)).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1]);
        assert_eq!(y.data(), &[5.0]);
    }

    #[test]
    fn conv2d_unit_kernel_is_identity() {
        let x = Tensor::from_fn(&[3, 4, 5], |i| (i[0] * 20 + i[1] * 5 + i[2]) as f64);
        let y = conv2d(&x, &tn(&[1, 1, 1], &[1.0]), (1, 1)).unwrap();
        assert_eq!(y.data(), x.data());
        assert_eq!(y.shape(), &[3, 1, 4, 5]);
    }

    #[test]
    fn conv2d_rejects_oversized_kernel() {
        let x = Tensor::<f64>::zeros(&[2, 2]);
        assert!(matches!(
            conv2d(&x, &Tensor::zeros(&[1, 3, 1]), (1, 1)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn conv2d_stride_output_size() {
        let x = Tensor::<f64>::zeros(&[4, 7, 3]);
        let y = conv2d(&x, &Tensor::zeros(&[2, 2, 3]), (2, 1)).unwrap();
        // floor((7 - 2) / 2) + 1 = 3
        assert_eq!(y.shape(), &[4, 2, 3, 1]);
    }

    #[test]
    fn dwconv_box_filter() {
        let x = tn(&[1, 4, 1], &[1.0, 2.0, 3.0, 4.0]);
        let k = tn(&[1, 3], &[1.0 / 3.0; 3]);
        let y = dwconv1d(&x, &k).unwrap();
        let want = [1.0, 2.0, 3.0, 7.0 / 3.0];
        for (a, b) in y.data().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn dwconv_delta_is_identity_and_even_kernel_fails() {
        let x = Tensor::from_fn(&[2, 5, 3], |i| (i[0] + 2 * i[1] + 7 * i[2]) as f64);
        let k = Tensor::from_fn(&[3, 5], |i| if i[1] == 2 { 1.0 } else { 0.0 });
        assert_eq!(dwconv1d(&x, &k).unwrap(), x);
        let per_node = Tensor::from_fn(&[2, 3, 5], |i| if i[2] == 2 { 1.0 } else { 0.0 });
        assert_eq!(dwconv1d(&x, &per_node).unwrap(), x);
        assert!(matches!(
            dwconv1d(&x, &Tensor::zeros(&[3, 4])),
            Err(Error::InvalidInput(_))
        ));
    }

    #[test]
    fn grouped_identity_and_bad_grouping() {
        let x = Tensor::from_fn(&[2, 4], |i| (i[0] * 4 + i[1]) as f64);
        let w = Tensor::full(&[4, 1, 1], 1.0);
        assert_eq!(grouped_pointwise(&x, &w, None).unwrap(), x);
        assert!(matches!(
            grouped_pointwise(&x, &Tensor::zeros(&[3, 1, 1]), None),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn layernorm_two_nodes() {
        // nodes carry 1 and 3: mean 2, variance 1
        let x = tn(&[2, 1, 1, 1], &[1.0, 3.0]);
        let eps = 1e-5;
        let y = layernorm_graph(&x, &tn(&[1], &[1.0]), &tn(&[1], &[0.0]), eps).unwrap();
        let s = 1.0 / (1.0 + eps).sqrt();
        assert!((y.data()[0] + s).abs() < 1e-12);
        assert!((y.data()[1] - s).abs() < 1e-12);
        let c = Tensor::full(&[3, 2, 1, 4], 7.0);
        let y = layernorm_graph(&c, &Tensor::full(&[4], 1.0), &Tensor::zeros(&[4]), eps).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn softmax_and_sigmoid_basics() {
        let y = softmax_rows(&Tensor::<f64>::zeros(&[1, 3])).unwrap();
        assert!(y.data().iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-15));
        assert_eq!(sigmoid_scalar(0.0f64), 0.5);
        let big = softmax_rows(&tn(&[1, 2], &[1000.0, 0.0])).unwrap();
        assert!(big.all_finite());
    }

    #[test]
    fn permute_swaps_axes() {
        let x = Tensor::from_fn(&[2, 3], |i| (i[0] * 3 + i[1]) as f64);
        let y = permute(&x, &[1, 0]).unwrap();
        assert_eq!(y.shape(), &[3, 2]);
        assert_eq!(y.at(&[2, 1]), x.at(&[1, 2]));
        assert!(permute(&x, &[0, 0]).is_err());
    }

    #[test]
    fn losses() {
        let p = tn(&[2], &[1.0, -1.0]);
        let z = tn(&[2], &[0.0, 0.0]);
        assert_eq!(masked_loss(&p, &p, None, LossKind::Mae).unwrap(), 0.0);
        assert_eq!(masked_loss(&p, &z, None, LossKind::Mae).unwrap(), 1.0);
        let r = tn(&[2], &[3.0, 100.0]);
        let m = tn(&[2], &[1.0, 0.0]);
        assert_eq!(masked_loss(&r, &z, Some(&m), LossKind::Mae).unwrap(), 3.0);
        assert!(matches!(
            masked_loss(&r, &z, Some(&z), LossKind::Mse),
            Err(Error::EmptyMask)
        ));
    }
}
