//! Forward and backward kernels for the network's layer primitives.
//!
//! Convolutions and the fully connected layer reduce through a
//! single-threaded GEMM, so results are reproducible run to run.
//! [`conv2d_direct`] is a plain window loop kept as a reference.

use super::{lit, Real, Tensor};
use crate::error::{Error, Result};

pub const KERNEL: usize = 3;
const TAPS: usize = KERNEL * KERNEL;
pub const BN_EPSILON: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Row and column stride of a matrix view.
#[derive(Clone, Copy)]
struct Layout {
    rs: usize,
    cs: usize,
}

impl Layout {
    fn rows(cols: usize) -> Self {
        Self { rs: cols, cs: 1 }
    }

    fn transposed_rows(cols: usize) -> Self {
        Self { rs: 1, cs: cols }
    }
}

fn extent(rows: usize, cols: usize, l: Layout) -> usize {
    if rows == 0 || cols == 0 {
        0
    } else {
        (rows - 1) * l.rs + (cols - 1) * l.cs + 1
    }
}

/// `c = a b + beta c` with `a: m x k`, `b: k x n`, `c: m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm<T: Real>(m: usize, k: usize, n: usize, a: &[T], la: Layout, b: &[T], lb: Layout, beta: T, c: &mut [T], lc: Layout) {
    assert!(a.len() >= extent(m, k, la) && b.len() >= extent(k, n, lb) && c.len() >= extent(m, n, lc));
    // SAFETY: the assertion above keeps every strided access inside the slices.
    unsafe { T::gemm_raw(m, k, n, a.as_ptr(), la.rs, la.cs, b.as_ptr(), lb.rs, lb.cs, beta, c.as_mut_ptr(), lc.rs, lc.cs) }
}

fn conv_shapes<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let (k, wc, kh, kw) = weight.dims4()?;
    if kh != KERNEL || kw != KERNEL {
        return Err(Error::shape(format!("convolution kernels must be 3x3, got {kh}x{kw}")));
    }
    if wc != c {
        return Err(Error::shape(format!(
            "input has {c} channels but the weight expects {wc}"
        )));
    }
    if bias.shape() != [k] {
        return Err(Error::shape(format!("bias shape {:?} != [{k}]", bias.shape())));
    }
    Ok((n, c, h, w, k))
}

/// Unfolds one `[C, H, W]` image into `[C*9, H*W]` patch rows (padding 1).
fn im2col<T: Real>(image: &[T], c: usize, h: usize, w: usize, col: &mut [T]) {
    let p = h * w;
    for ch in 0..c {
        let plane = &image[ch * p..(ch + 1) * p];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &mut col[(ch * TAPS + ky * KERNEL + kx) * p..][..p];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    let dst = &mut row[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        dst[x] = if sx < 0 || sx >= w as isize { T::zero() } else { src[sx as usize] };
                    }
                }
            }
        }
    }
}

fn col2im_add<T: Real>(col: &[T], c: usize, h: usize, w: usize, image: &mut [T]) {
    let p = h * w;
    for ch in 0..c {
        let plane = &mut image[ch * p..(ch + 1) * p];
        for ky in 0..KERNEL {
            for kx in 0..KERNEL {
                let row = &col[(ch * TAPS + ky * KERNEL + kx) * p..][..p];
                for y in 0..h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    for x in 0..w {
                        let sx = x as isize + kx as isize - 1;
                        if sx >= 0 && sx < w as isize {
                            let dst = &mut plane[sy as usize * w + sx as usize];
                            *dst = *dst + row[y * w + x];
                        }
                    }
                }
            }
        }
    }
}

/// 3x3 convolution, stride 1, zero padding 1, via im2col.
pub fn conv2d<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w, k) = conv_shapes(input, weight, bias)?;
    let p = h * w;
    let q = c * TAPS;
    let mut out = vec![T::zero(); n * k * p];
    let mut col = vec![T::zero(); q * p];
    for img in 0..n {
        im2col(&input.data()[img * c * p..(img + 1) * c * p], c, h, w, &mut col);
        let dst = &mut out[img * k * p..(img + 1) * k * p];
        gemm(k, q, p, weight.data(), Layout::rows(q), &col, Layout::rows(p), T::zero(), dst, Layout::rows(p));
        for (row, &b) in dst.chunks_exact_mut(p).zip(bias.data()) {
            row.iter_mut().for_each(|v| *v = *v + b);
        }
    }
    Tensor::new(vec![n, k, h, w], out)
}

/// Direct window iteration, summing taps in `(channel, ky, kx)` order.
pub fn conv2d_direct<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
) -> Result<Tensor<T>> {
    let (n, c, h, w, k) = conv_shapes(input, weight, bias)?;
    let x = input.data();
    let wt = weight.data();
    let mut out = Vec::with_capacity(n * k * h * w);
    for img in 0..n {
        for kk in 0..k {
            for y in 0..h {
                for xx in 0..w {
                    let mut acc = T::zero();
                    for ch in 0..c {
                        for ky in 0..KERNEL {
                            for kx in 0..KERNEL {
                                let sy = y as isize + ky as isize - 1;
                                let sx = xx as isize + kx as isize - 1;
                                let v = if sy < 0 || sx < 0 || sy >= h as isize || sx >= w as isize {
                                    T::zero()
                                } else {
                                    x[((img * c + ch) * h + sy as usize) * w + sx as usize]
                                };
                                acc = acc + wt[((kk * c + ch) * KERNEL + ky) * KERNEL + kx] * v;
                            }
                        }
                    }
                    out.push(acc + bias.data()[kk]);
                }
            }
        }
    }
    Tensor::new(vec![n, k, h, w], out)
}

pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    grad_out: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let (n, c, h, w) = input.dims4()?;
    let (k, _, _, _) = weight.dims4()?;
    let p = h * w;
    let q = c * TAPS;
    let mut d_in = vec![T::zero(); n * c * p];
    let mut d_w = vec![T::zero(); k * q];
    let mut d_b = vec![T::zero(); k];
    let mut col = vec![T::zero(); q * p];
    let mut d_col = vec![T::zero(); q * p];
    for img in 0..n {
        im2col(&input.data()[img * c * p..(img + 1) * c * p], c, h, w, &mut col);
        let g = &grad_out.data()[img * k * p..(img + 1) * k * p];
        for (db, row) in d_b.iter_mut().zip(g.chunks_exact(p)) {
            *db = *db + row.iter().fold(T::zero(), |a, &v| a + v);
        }
        // dW += G col^T, dcol = W^T G
        gemm(k, p, q, g, Layout::rows(p), &col, Layout::transposed_rows(p), T::one(), &mut d_w, Layout::rows(q));
        gemm(q, k, p, weight.data(), Layout::transposed_rows(q), g, Layout::rows(p), T::zero(), &mut d_col, Layout::rows(p));
        col2im_add(&d_col, c, h, w, &mut d_in[img * c * p..(img + 1) * c * p]);
    }
    Ok(ConvGrads {
        input: Tensor::new(input.shape().to_vec(), d_in)?,
        weight: Tensor::new(weight.shape().to_vec(), d_w)?,
        bias: Tensor::new(vec![k], d_b)?,
    })
}

/// Output extent of a 2x2, stride-2 ceil-mode pool.
pub fn pooled_extent(e: usize) -> usize {
    e.div_ceil(2)
}

/// 2x2 stride-2 max pooling in ceil mode. Returns the pooled tensor and, for
/// every output element, the flat input index of the first (row-major) maximum.
pub fn maxpool2d_ceil<T: Real>(input: &Tensor<T>) -> Result<(Tensor<T>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    let (oh, ow) = (pooled_extent(h), pooled_extent(w));
    let x = input.data();
    let mut out = Vec::with_capacity(n * c * oh * ow);
    let mut arg = Vec::with_capacity(n * c * oh * ow);
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best_i = base + 2 * oy * w + 2 * ox;
                let mut best = x[best_i];
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for xx in 2 * ox..(2 * ox + 2).min(w) {
                        let i = base + y * w + xx;
                        if x[i] > best {
                            best = x[i];
                            best_i = i;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    Ok((Tensor::new(vec![n, c, oh, ow], out)?, arg))
}

/// Smallest gap between a window's maximum and its runner-up. Used to keep
/// finite-difference checks away from the pooling kink. With `after_relu`,
/// windows whose maximum is zero are skipped: every element there is a
/// clamped ReLU output and stays zero under small perturbations.
pub fn maxpool_margin<T: Real>(input: &Tensor<T>, after_relu: bool) -> T {
    let Ok((n, c, h, w)) = input.dims4() else { return T::infinity() };
    let x = input.data();
    let mut margin = T::infinity();
    for plane in 0..n * c {
        let base = plane * h * w;
        for oy in 0..pooled_extent(h) {
            for ox in 0..pooled_extent(w) {
                let mut vals = Vec::with_capacity(4);
                for y in 2 * oy..(2 * oy + 2).min(h) {
                    for xx in 2 * ox..(2 * ox + 2).min(w) {
                        vals.push(x[base + y * w + xx]);
                    }
                }
                if vals.len() < 2 {
                    continue;
                }
                vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
                if after_relu && vals[0] <= T::zero() {
                    continue;
                }
                margin = margin.min(vals[0] - vals[1]);
            }
        }
    }
    margin
}

pub fn maxpool2d_backward<T: Real>(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor<T>,
) -> Result<Tensor<T>> {
    let mut d = vec![T::zero(); input_shape.iter().product()];
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] = d[i] + g;
    }
    Tensor::new(input_shape.to_vec(), d)
}

pub fn relu<T: Real>(input: &Tensor<T>) -> Tensor<T> {
    input.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Per-channel statistics layout of an `[N, C, ...]` tensor.
fn channel_layout<T: Real>(input: &Tensor<T>, gamma: &Tensor<T>) -> Result<(usize, usize, usize)> {
    let shape = input.shape();
    if shape.len() < 2 {
        return Err(Error::shape(format!("batch norm needs [N, C, ...], got {shape:?}")));
    }
    let (n, c) = (shape[0], shape[1]);
    if gamma.shape() != [c] {
        return Err(Error::shape(format!("gamma shape {:?} != [{c}]", gamma.shape())));
    }
    Ok((n, c, shape[2..].iter().product()))
}

pub struct BatchNormOut<T> {
    pub output: Tensor<T>,
    pub normalized: Vec<T>,
    pub inv_std: Vec<T>,
    pub mean: Vec<T>,
    /// Biased (population) variance of the batch.
    pub var: Vec<T>,
}

/// Batch normalization with batch statistics. Mean and variance are
/// accumulated in `(n, spatial)` ascending order.
pub fn batchnorm_train<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
) -> Result<BatchNormOut<T>> {
    let (n, c, s) = channel_layout(input, gamma)?;
    if n < 2 {
        return Err(Error::DegenerateBatch(format!(
            "training-mode batch norm needs at least 2 samples, got {n}"
        )));
    }
    let x = input.data();
    let m = lit::<T>((n * s) as f64);
    let eps = lit::<T>(BN_EPSILON);
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut acc = T::zero();
        for img in 0..n {
            for &v in &x[(img * c + ch) * s..][..s] {
                acc = acc + v;
            }
        }
        let mu = acc / m;
        let mut sq = T::zero();
        for img in 0..n {
            for &v in &x[(img * c + ch) * s..][..s] {
                sq = sq + (v - mu) * (v - mu);
            }
        }
        mean[ch] = mu;
        var[ch] = sq / m;
    }
    let inv_std: Vec<T> = var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (normalized, output) = normalize(x, n, c, s, &mean, &inv_std, gamma.data(), beta.data());
    Ok(BatchNormOut {
        output: Tensor::new(input.shape().to_vec(), output)?,
        normalized,
        inv_std,
        mean,
        var,
    })
}

/// Batch normalization with fixed (running) statistics.
pub fn batchnorm_eval<T: Real>(
    input: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    running_mean: &Tensor<T>,
    running_var: &Tensor<T>,
) -> Result<(Tensor<T>, Vec<T>, Vec<T>)> {
    let (n, c, s) = channel_layout(input, gamma)?;
    let eps = lit::<T>(BN_EPSILON);
    let inv_std: Vec<T> = running_var.data().iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
    let (normalized, output) =
        normalize(input.data(), n, c, s, running_mean.data(), &inv_std, gamma.data(), beta.data());
    Ok((Tensor::new(input.shape().to_vec(), output)?, normalized, inv_std))
}

#[allow(clippy::too_many_arguments)]
fn normalize<T: Real>(
    x: &[T],
    n: usize,
    c: usize,
    s: usize,
    mean: &[T],
    inv_std: &[T],
    gamma: &[T],
    beta: &[T],
) -> (Vec<T>, Vec<T>) {
    let mut normalized = vec![T::zero(); x.len()];
    let mut out = vec![T::zero(); x.len()];
    for img in 0..n {
        for ch in 0..c {
            let off = (img * c + ch) * s;
            for i in off..off + s {
                let xh = (x[i] - mean[ch]) * inv_std[ch];
                normalized[i] = xh;
                out[i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (normalized, out)
}

/// Exponential moving average update of running statistics. The variance
/// estimate uses the unbiased batch variance.
pub fn update_running_stats<T: Real>(
    running_mean: &mut Tensor<T>,
    running_var: &mut Tensor<T>,
    batch_mean: &[T],
    batch_var: &[T],
    count: usize,
) {
    let mom = lit::<T>(BN_MOMENTUM);
    let keep = T::one() - mom;
    let unbias = if count > 1 { lit::<T>(count as f64 / (count - 1) as f64) } else { T::one() };
    for (r, &m) in running_mean.data_mut().iter_mut().zip(batch_mean) {
        *r = keep * *r + mom * m;
    }
    for (r, &v) in running_var.data_mut().iter_mut().zip(batch_var) {
        *r = keep * *r + mom * v * unbias;
    }
}

pub struct BatchNormGrads<T> {
    pub input: Vec<T>,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
}

/// Gradients of batch normalization. With `batch_stats` the mean and variance
/// are functions of the input; otherwise they are constants.
pub fn batchnorm_backward<T: Real>(
    shape: &[usize],
    normalized: &[T],
    inv_std: &[T],
    gamma: &[T],
    grad_out: &[T],
    batch_stats: bool,
) -> BatchNormGrads<T> {
    let (n, c) = (shape[0], shape[1]);
    let s: usize = shape[2..].iter().product();
    let m = lit::<T>((n * s) as f64);
    let mut d_gamma = vec![T::zero(); c];
    let mut d_beta = vec![T::zero(); c];
    for img in 0..n {
        for ch in 0..c {
            let off = (img * c + ch) * s;
            for i in off..off + s {
                d_gamma[ch] = d_gamma[ch] + grad_out[i] * normalized[i];
                d_beta[ch] = d_beta[ch] + grad_out[i];
            }
        }
    }
    let mut d_in = vec![T::zero(); grad_out.len()];
    for img in 0..n {
        for ch in 0..c {
            let off = (img * c + ch) * s;
            let g = gamma[ch];
            let is = inv_std[ch];
            for i in off..off + s {
                d_in[i] = if batch_stats {
                    // d_gamma / d_beta are exactly the sums over dy*xhat and dy
                    g * is / m * (m * grad_out[i] - d_beta[ch] - normalized[i] * d_gamma[ch])
                } else {
                    g * is * grad_out[i]
                };
            }
        }
    }
    BatchNormGrads { input: d_in, gamma: d_gamma, beta: d_beta }
}

/// `input [N, D] x weight [D, E] + bias [E]`.
pub fn linear<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, bias: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, d) = input.dims2()?;
    let (wd, e) = weight.dims2()?;
    if wd != d {
        return Err(Error::shape(format!("input has {d} features but the weight expects {wd}")));
    }
    if bias.shape() != [e] {
        return Err(Error::shape(format!("bias shape {:?} != [{e}]", bias.shape())));
    }
    let mut out = vec![T::zero(); n * e];
    gemm(n, d, e, input.data(), Layout::rows(d), weight.data(), Layout::rows(e), T::zero(), &mut out, Layout::rows(e));
    for row in out.chunks_exact_mut(e) {
        for (o, &b) in row.iter_mut().zip(bias.data()) {
            *o = *o + b;
        }
    }
    Tensor::new(vec![n, e], out)
}

pub struct LinearGrads<T> {
    pub input: Vec<T>,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

pub fn linear_backward<T: Real>(input: &Tensor<T>, weight: &Tensor<T>, grad_out: &[T]) -> LinearGrads<T> {
    let (n, d) = (input.shape()[0], input.shape()[1]);
    let e = weight.shape()[1];
    let mut d_in = vec![T::zero(); n * d];
    let mut d_w = vec![T::zero(); d * e];
    let mut d_b = vec![T::zero(); e];
    gemm(n, e, d, grad_out, Layout::rows(e), weight.data(), Layout::transposed_rows(e), T::zero(), &mut d_in, Layout::rows(d));
    gemm(d, n, e, input.data(), Layout::transposed_rows(d), grad_out, Layout::rows(e), T::zero(), &mut d_w, Layout::rows(e));
    for g in grad_out.chunks_exact(e) {
        for (b, &gv) in d_b.iter_mut().zip(g) {
            *b = *b + gv;
        }
    }
    LinearGrads { input: d_in, weight: d_w, bias: d_b }
}

/// Per-channel maximum over the spatial axes of `[N, C, H, W]`, giving `[N, C]`.
pub fn spatial_max<T: Real>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = input.dims4()?;
    let s = h * w;
    let data = input
        .data()
        .chunks(s)
        .map(|plane| plane.iter().copied().fold(T::neg_infinity(), T::max))
        .collect();
    Tensor::new(vec![n, c], data)
}
