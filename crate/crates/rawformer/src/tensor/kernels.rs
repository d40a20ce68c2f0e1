//! Raw compute kernels behind the tape ops. Everything here is
//! deterministic under rayon: parallel units write disjoint regions and
//! reductions fold fixed chunks in index order.

use super::{gemm, Scalar, Tensor};
use rayon::prelude::*;

/// Convolution geometry. `pad` is symmetric zero padding.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvSpec {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(k: usize, stride: usize, pad: usize, groups: usize) -> Self {
        ConvSpec {
            kh: k,
            kw: k,
            stride,
            pad,
            groups,
        }
    }

    pub fn out_dim(&self, h: usize) -> usize {
        (h + 2 * self.pad - self.kh) / self.stride + 1
    }

    pub fn out_dims(&self, h: usize, w: usize) -> (usize, usize) {
        (
            (h + 2 * self.pad - self.kh) / self.stride + 1,
            (w + 2 * self.pad - self.kw) / self.stride + 1,
        )
    }
}

/// im2col for one image group: input (cg, h, w) -> columns (cg*kh*kw, l)
/// where l = hout*wout, scanning output positions row-major.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    x: &[T],
    cg: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    hout: usize,
    wout: usize,
    col: &mut [T],
) {
    let l = hout * wout;
    debug_assert_eq!(col.len(), cg * spec.kh * spec.kw * l);
    let s = spec.stride;
    let p = spec.pad as isize;
    for c in 0..cg {
        for ki in 0..spec.kh {
            for kj in 0..spec.kw {
                let row = ((c * spec.kh + ki) * spec.kw + kj) * l;
                for ho in 0..hout {
                    let yi = (ho * s) as isize - p + ki as isize;
                    let dst = &mut col[row + ho * wout..row + (ho + 1) * wout];
                    if yi < 0 || yi >= h as isize {
                        dst.fill(T::ZERO);
                        continue;
                    }
                    let src_row = &x[c * h * w + yi as usize * w..c * h * w + (yi as usize + 1) * w];
                    for (wo, d) in dst.iter_mut().enumerate() {
                        let xi = (wo * s) as isize - p + kj as isize;
                        *d = if xi < 0 || xi >= w as isize {
                            T::ZERO
                        } else {
                            src_row[xi as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of `im2col`, written as a gather over input positions so it is
/// race-free under row parallelism.
#[allow(clippy::too_many_arguments)]
fn col2im<T: Scalar>(
    col: &[T],
    cg: usize,
    h: usize,
    w: usize,
    spec: &ConvSpec,
    hout: usize,
    wout: usize,
    out: &mut [T],
) {
    let l = hout * wout;
    let s = spec.stride;
    let p = spec.pad as isize;
    for c in 0..cg {
        for yi in 0..h {
            for xi in 0..w {
                let mut acc = T::ZERO;
                for ki in 0..spec.kh {
                    let t = yi as isize + p - ki as isize;
                    if t < 0 || t % s as isize != 0 {
                        continue;
                    }
                    let ho = (t / s as isize) as usize;
                    if ho >= hout {
                        continue;
                    }
                    for kj in 0..spec.kw {
                        let u = xi as isize + p - kj as isize;
                        if u < 0 || u % s as isize != 0 {
                            continue;
                        }
                        let wo = (u / s as isize) as usize;
                        if wo >= wout {
                            continue;
                        }
                        acc += col[((c * spec.kh + ki) * spec.kw + kj) * l + ho * wout + wo];
                    }
                }
                out[(c * h + yi) * w + xi] = acc;
            }
        }
    }
}

fn is_depthwise(cin: usize, cout: usize, spec: &ConvSpec) -> bool {
    spec.groups == cin && cout == cin && spec.stride == 1 && spec.pad == spec.kh / 2 && spec.kh == spec.kw
}

/// conv2d forward. x (n, cin, h, w), w (cout, cin/g, kh, kw) -> (n, cout, hout, wout).
pub fn conv2d_fwd<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, spec: &ConvSpec) -> Tensor<T> {
    let (n, cin, h, wd) = x.dims4().expect("conv input must be 4-D");
    let (cout, cing, kh, kw) = w.dims4().expect("conv weight must be 4-D");
    debug_assert_eq!(cing, cin / spec.groups);
    debug_assert_eq!(kh, spec.kh);
    debug_assert_eq!(kw, spec.kw);
    let (hout, wout) = spec.out_dims(h, wd);
    let l = hout * wout;
    let mut y = Tensor::zeros(&[n, cout, hout, wout]);

    if is_depthwise(cin, cout, spec) {
        depthwise_fwd(x, w, &mut y);
        return y;
    }

    let coutg = cout / spec.groups;
    let xin = x.data();
    let wdat = w.data();
    let ydat = y.data_mut();
    let img_in = cin * h * wd;
    let img_out = cout * l;
    ydat.par_chunks_mut(img_out).enumerate().for_each(|(ni, yimg)| {
        let ximg = &xin[ni * img_in..(ni + 1) * img_in];
        let mut col = vec![T::ZERO; cing * kh * kw * l];
        for g in 0..spec.groups {
            im2col(
                &ximg[g * cing * h * wd..(g + 1) * cing * h * wd],
                cing, h, wd, spec, hout, wout, &mut col,
            );
            // (coutg x cing*k*k) . (cing*k*k x l)
            gemm(
                false, false,
                coutg, cing * kh * kw, l,
                T::ONE,
                &wdat[g * coutg * cing * kh * kw..(g + 1) * coutg * cing * kh * kw],
                &col,
                T::ZERO,
                &mut yimg[g * coutg * l..(g + 1) * coutg * l],
            );
        }
    });
    y
}

/// Gradient of conv2d w.r.t. its input.
pub fn conv2d_bwd_data<T: Scalar>(
    dy: &Tensor<T>,
    w: &Tensor<T>,
    spec: &ConvSpec,
    in_shape: &[usize],
) -> Tensor<T> {
    let (n, cout, hout, wout) = dy.dims4().expect("dy must be 4-D");
    let (cin, h, wd) = (in_shape[1], in_shape[2], in_shape[3]);
    let (_, cing, kh, kw) = w.dims4().unwrap();
    let l = hout * wout;
    let mut dx = Tensor::zeros(in_shape);

    if is_depthwise(cin, cout, spec) {
        depthwise_bwd_data(dy, w, &mut dx);
        return dx;
    }

    let coutg = cout / spec.groups;
    let wdat = w.data();
    let dydat = dy.data();
    let img_in = cin * h * wd;
    let img_out = cout * l;
    dx.data_mut()
        .par_chunks_mut(img_in)
        .enumerate()
        .for_each(|(ni, dximg)| {
            let dyimg = &dydat[ni * img_out..(ni + 1) * img_out];
            let mut col = vec![T::ZERO; cing * kh * kw * l];
            for g in 0..spec.groups {
                // col = W^T . dY : (cing*k*k x coutg) . (coutg x l)
                gemm(
                    true, false,
                    cing * kh * kw, coutg, l,
                    T::ONE,
                    &wdat[g * coutg * cing * kh * kw..(g + 1) * coutg * cing * kh * kw],
                    &dyimg[g * coutg * l..(g + 1) * coutg * l],
                    T::ZERO,
                    &mut col,
                );
                col2im(
                    &col,
                    cing, h, wd, spec, hout, wout,
                    &mut dximg[g * cing * h * wd..(g + 1) * cing * h * wd],
                );
            }
        });
    dx
}

/// Gradient of conv2d w.r.t. the filter. Per-image partials are reduced in
/// fixed index order.
pub fn conv2d_bwd_filter<T: Scalar>(
    x: &Tensor<T>,
    dy: &Tensor<T>,
    spec: &ConvSpec,
    w_shape: &[usize],
) -> Tensor<T> {
    let (n, cin, h, wd) = x.dims4().unwrap();
    let (_, cout, hout, wout) = dy.dims4().unwrap();
    let (cing, kh, kw) = (w_shape[1], w_shape[2], w_shape[3]);
    let l = hout * wout;
    let coutg = cout / spec.groups;

    if is_depthwise(cin, cout, spec) {
        return depthwise_bwd_filter(x, dy, w_shape);
    }

    let img_in = cin * h * wd;
    let img_out = cout * l;
    let per_image: Vec<Tensor<T>> = (0..n)
        .into_par_iter()
        .map(|ni| {
            let ximg = &x.data()[ni * img_in..(ni + 1) * img_in];
            let dyimg = &dy.data()[ni * img_out..(ni + 1) * img_out];
            let mut dw = Tensor::zeros(w_shape);
            let mut col = vec![T::ZERO; cing * kh * kw * l];
            for g in 0..spec.groups {
                im2col(
                    &ximg[g * cing * h * wd..(g + 1) * cing * h * wd],
                    cing, h, wd, spec, hout, wout, &mut col,
                );
                // dW = dY . col^T : (coutg x l) . (l x cing*k*k)
                gemm(
                    false, true,
                    coutg, l, cing * kh * kw,
                    T::ONE,
                    &dyimg[g * coutg * l..(g + 1) * coutg * l],
                    &col,
                    T::ONE,
                    &mut dw.data_mut()
                        [g * coutg * cing * kh * kw..(g + 1) * coutg * cing * kh * kw],
                );
            }
            dw
        })
        .collect();
    let mut dw = Tensor::zeros(w_shape);
    for part in per_image {
        for (d, s) in dw.data_mut().iter_mut().zip(part.data()) {
            *d += *s;
        }
    }
    dw
}

fn depthwise_fwd<T: Scalar>(x: &Tensor<T>, w: &Tensor<T>, y: &mut Tensor<T>) {
    let (n, c, h, wd) = x.dims4().unwrap();
    let k = w.shape()[2];
    let half = (k / 2) as isize;
    let xin = x.data();
    let wdat = w.data();
    y.data_mut()
        .par_chunks_mut(h * wd)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (ni, ci) = (idx / c, idx % c);
            let src = &xin[(ni * c + ci) * h * wd..(ni * c + ci + 1) * h * wd];
            let ker = &wdat[ci * k * k..(ci + 1) * k * k];
            for yo in 0..h {
                for xo in 0..wd {
                    let mut acc = T::ZERO;
                    for ki in 0..k {
                        let yi = yo as isize + ki as isize - half;
                        if yi < 0 || yi >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let xi = xo as isize + kj as isize - half;
                            if xi < 0 || xi >= wd as isize {
                                continue;
                            }
                            acc += ker[ki * k + kj] * src[yi as usize * wd + xi as usize];
                        }
                    }
                    plane[yo * wd + xo] = acc;
                }
            }
        });
    let _ = n;
}

fn depthwise_bwd_data<T: Scalar>(dy: &Tensor<T>, w: &Tensor<T>, dx: &mut Tensor<T>) {
    let (n, c, h, wd) = dy.dims4().unwrap();
    let k = w.shape()[2];
    let half = (k / 2) as isize;
    let dydat = dy.data();
    let wdat = w.data();
    dx.data_mut()
        .par_chunks_mut(h * wd)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (ni, ci) = (idx / c, idx % c);
            let src = &dydat[(ni * c + ci) * h * wd..(ni * c + ci + 1) * h * wd];
            let ker = &wdat[ci * k * k..(ci + 1) * k * k];
            // correlation with the flipped kernel
            for yo in 0..h {
                for xo in 0..wd {
                    let mut acc = T::ZERO;
                    for ki in 0..k {
                        let yi = yo as isize - (ki as isize - half);
                        if yi < 0 || yi >= h as isize {
                            continue;
                        }
                        for kj in 0..k {
                            let xi = xo as isize - (kj as isize - half);
                            if xi < 0 || xi >= wd as isize {
                                continue;
                            }
                            acc += ker[ki * k + kj] * src[yi as usize * wd + xi as usize];
                        }
                    }
                    plane[yo * wd + xo] = acc;
                }
            }
        });
    let _ = n;
}

fn depthwise_bwd_filter<T: Scalar>(x: &Tensor<T>, dy: &Tensor<T>, w_shape: &[usize]) -> Tensor<T> {
    let (n, c, h, wd) = x.dims4().unwrap();
    let k = w_shape[2];
    let half = (k / 2) as isize;
    // parallel over channels, serial over batch inside: disjoint dw rows
    let mut dw = Tensor::zeros(w_shape);
    dw.data_mut()
        .par_chunks_mut(k * k)
        .enumerate()
        .for_each(|(ci, ker)| {
            for ni in 0..n {
                let xs = &x.data()[(ni * c + ci) * h * wd..(ni * c + ci + 1) * h * wd];
                let gs = &dy.data()[(ni * c + ci) * h * wd..(ni * c + ci + 1) * h * wd];
                for ki in 0..k {
                    for kj in 0..k {
                        let mut acc = T::ZERO;
                        for yo in 0..h {
                            let yi = yo as isize + ki as isize - half;
                            if yi < 0 || yi >= h as isize {
                                continue;
                            }
                            for xo in 0..wd {
                                let xi = xo as isize + kj as isize - half;
                                if xi < 0 || xi >= wd as isize {
                                    continue;
                                }
                                acc += gs[yo * wd + xo] * xs[yi as usize * wd + xi as usize];
                            }
                        }
                        ker[ki * k + kj] += acc;
                    }
                }
            }
        });
    dw
}

/// Average pooling with kernel == stride.
pub fn avg_pool_fwd<T: Scalar>(x: &Tensor<T>, k: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4().unwrap();
    let (ho, wo) = (h / k, w / k);
    let inv = T::from_f64(1.0 / (k * k) as f64);
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    let xin = x.data();
    y.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(idx, plane)| {
            let src = &xin[idx * h * w..(idx + 1) * h * w];
            for yo in 0..ho {
                for xo in 0..wo {
                    let mut acc = T::ZERO;
                    for i in 0..k {
                        for j in 0..k {
                            acc += src[(yo * k + i) * w + xo * k + j];
                        }
                    }
                    plane[yo * wo + xo] = acc * inv;
                }
            }
        });
    y
}

pub fn avg_pool_bwd<T: Scalar>(dy: &Tensor<T>, k: usize, in_shape: &[usize]) -> Tensor<T> {
    let (_, _, ho, wo) = dy.dims4().unwrap();
    let (h, w) = (in_shape[2], in_shape[3]);
    let inv = T::from_f64(1.0 / (k * k) as f64);
    let mut dx = Tensor::zeros(in_shape);
    let g = dy.data();
    dx.data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(idx, plane)| {
            let src = &g[idx * ho * wo..(idx + 1) * ho * wo];
            for yo in 0..ho {
                for xo in 0..wo {
                    let v = src[yo * wo + xo] * inv;
                    for i in 0..k {
                        for j in 0..k {
                            plane[(yo * k + i) * w + xo * k + j] = v;
                        }
                    }
                }
            }
        });
    dx
}

/// Max pooling with kernel == stride; returns argmax indices for backward.
pub fn max_pool_fwd<T: Scalar>(x: &Tensor<T>, k: usize) -> (Tensor<T>, Vec<u32>) {
    let (n, c, h, w) = x.dims4().unwrap();
    let (ho, wo) = (h / k, w / k);
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = vec![0u32; n * c * ho * wo];
    let xin = x.data();
    y.data_mut()
        .par_chunks_mut(ho * wo)
        .zip(arg.par_chunks_mut(ho * wo))
        .enumerate()
        .for_each(|(idx, (plane, aplane))| {
            let src = &xin[idx * h * w..(idx + 1) * h * w];
            for yo in 0..ho {
                for xo in 0..wo {
                    let mut best = src[yo * k * w + xo * k];
                    let mut besti = (yo * k * w + xo * k) as u32;
                    for i in 0..k {
                        for j in 0..k {
                            let off = (yo * k + i) * w + xo * k + j;
                            if src[off] > best {
                                best = src[off];
                                besti = off as u32;
                            }
                        }
                    }
                    plane[yo * wo + xo] = best;
                    aplane[yo * wo + xo] = besti;
                }
            }
        });
    (y, arg)
}

pub fn max_pool_bwd<T: Scalar>(dy: &Tensor<T>, arg: &[u32], k: usize, in_shape: &[usize]) -> Tensor<T> {
    let (_, _, ho, wo) = dy.dims4().unwrap();
    let (h, w) = (in_shape[2], in_shape[3]);
    let mut dx = Tensor::zeros(in_shape);
    let g = dy.data();
    dx.data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(idx, plane)| {
            let gs = &g[idx * ho * wo..(idx + 1) * ho * wo];
            let args = &arg[idx * ho * wo..(idx + 1) * ho * wo];
            for (gi, &ai) in gs.iter().zip(args) {
                plane[ai as usize] += *gi;
            }
        });
    dx
}

/// Depth-to-space: (n, c*r^2, h, w) -> (n, c, h*r, w*r) with
/// out[n][c][r*h+i][r*w+j] = in[n][c*r^2 + i*r + j][h][w].
pub fn pixel_shuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let (n, c_in, h, w) = x.dims4().unwrap();
    let c = c_in / (r * r);
    let mut y = Tensor::zeros(&[n, c, h * r, w * r]);
    let xin = x.data();
    let (hw_out, w_out) = (h * r * w * r, w * r);
    y.data_mut()
        .par_chunks_mut(hw_out)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (ni, ci) = (idx / c, idx % c);
            for i in 0..r {
                for j in 0..r {
                    let src_plane = ((ni * c_in) + ci * r * r + i * r + j) * h * w;
                    for hh in 0..h {
                        for ww in 0..w {
                            plane[(hh * r + i) * w_out + ww * r + j] =
                                xin[src_plane + hh * w + ww];
                        }
                    }
                }
            }
        });
    y
}

/// Space-to-depth, exact inverse of `pixel_shuffle`.
pub fn pixel_unshuffle<T: Scalar>(x: &Tensor<T>, r: usize) -> Tensor<T> {
    let (n, c, hr, wr) = x.dims4().unwrap();
    let (h, w) = (hr / r, wr / r);
    let c_out = c * r * r;
    let mut y = Tensor::zeros(&[n, c_out, h, w]);
    let xin = x.data();
    y.data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(idx, plane)| {
            let (ni, co) = (idx / c_out, idx % c_out);
            let ci = co / (r * r);
            let i = (co % (r * r)) / r;
            let j = co % r;
            let src_plane = (ni * c + ci) * hr * wr;
            for hh in 0..h {
                for ww in 0..w {
                    plane[hh * w + ww] = xin[src_plane + (hh * r + i) * wr + ww * r + j];
                }
            }
        });
    y
}

/// In-place row softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(data: &mut [T], row: usize) {
    data.par_chunks_mut(row).for_each(|r| {
        let mut m = r[0];
        for &v in r.iter() {
            m = m.max_s(v);
        }
        let mut sum = T::ZERO;
        for v in r.iter_mut() {
            *v = (*v - m).exp_fast();
            sum += *v;
        }
        let inv = T::ONE / sum;
        for v in r.iter_mut() {
            *v *= inv;
        }
    });
}

/// Softmax backward given output y and upstream dy: dx = (dy - sum(dy*y)) * y.
pub fn softmax_rows_bwd<T: Scalar>(y: &[T], dy: &[T], row: usize, dx: &mut [T]) {
    dx.par_chunks_mut(row)
        .enumerate()
        .for_each(|(ri, dr)| {
            let yr = &y[ri * row..(ri + 1) * row];
            let gr = &dy[ri * row..(ri + 1) * row];
            let mut dot = T::ZERO;
            for i in 0..row {
                dot += yr[i] * gr[i];
            }
            for i in 0..row {
                dr[i] = (gr[i] - dot) * yr[i];
            }
        });
}

/// Bilinear resize (align_corners = true) of a (n, c, h, w) tensor.
pub fn resize_bilinear<T: Scalar>(x: &Tensor<T>, ho: usize, wo: usize) -> Tensor<T> {
    let (n, c, h, w) = x.dims4().unwrap();
    let mut y = Tensor::zeros(&[n, c, ho, wo]);
    let sy = if ho > 1 { (h - 1) as f64 / (ho - 1) as f64 } else { 0.0 };
    let sx = if wo > 1 { (w - 1) as f64 / (wo - 1) as f64 } else { 0.0 };
    let xin = x.data();
    y.data_mut()
        .par_chunks_mut(ho * wo)
        .enumerate()
        .for_each(|(idx, plane)| {
            let src = &xin[idx * h * w..(idx + 1) * h * w];
            for yo in 0..ho {
                let fy = yo as f64 * sy;
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let wy = T::from_f64(fy - y0 as f64);
                for xo in 0..wo {
                    let fx = xo as f64 * sx;
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let wx = T::from_f64(fx - x0 as f64);
                    let a = src[y0 * w + x0];
                    let b = src[y0 * w + x1];
                    let cc = src[y1 * w + x0];
                    let d = src[y1 * w + x1];
                    let top = a + (b - a) * wx;
                    let bot = cc + (d - cc) * wx;
                    plane[yo * wo + xo] = top + (bot - top) * wy;
                }
            }
        });
    let _ = (n, c);
    y
}

/// Adjoint of `resize_bilinear` (scatter of interpolation weights).
pub fn resize_bilinear_bwd<T: Scalar>(dy: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (n, c, ho, wo) = dy.dims4().unwrap();
    let mut dx = Tensor::zeros(&[n, c, h, w]);
    let sy = if ho > 1 { (h - 1) as f64 / (ho - 1) as f64 } else { 0.0 };
    let sx = if wo > 1 { (w - 1) as f64 / (wo - 1) as f64 } else { 0.0 };
    let g = dy.data();
    dx.data_mut()
        .par_chunks_mut(h * w)
        .enumerate()
        .for_each(|(idx, plane)| {
            let src = &g[idx * ho * wo..(idx + 1) * ho * wo];
            for yo in 0..ho {
                let fy = yo as f64 * sy;
                let y0 = fy.floor() as usize;
                let y1 = (y0 + 1).min(h - 1);
                let wy = fy - y0 as f64;
                for xo in 0..wo {
                    let fx = xo as f64 * sx;
                    let x0 = fx.floor() as usize;
                    let x1 = (x0 + 1).min(w - 1);
                    let wx = fx - x0 as f64;
                    let gv = src[yo * wo + xo];
                    plane[y0 * w + x0] += gv * T::from_f64((1.0 - wy) * (1.0 - wx));
                    plane[y0 * w + x1] += gv * T::from_f64((1.0 - wy) * wx);
                    plane[y1 * w + x0] += gv * T::from_f64(wy * (1.0 - wx));
                    plane[y1 * w + x1] += gv * T::from_f64(wy * wx);
                }
            }
        });
    let _ = (n, c);
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn naive_conv(
        x: &Tensor<f64>,
        w: &Tensor<f64>,
        spec: &ConvSpec,
    ) -> Tensor<f64> {
        let (n, cin, h, wd) = x.dims4().unwrap();
        let (cout, cing, kh, kw) = w.dims4().unwrap();
        let (ho, wo) = spec.out_dims(h, wd);
        let coutg = cout / spec.groups;
        let mut y = Tensor::zeros(&[n, cout, ho, wo]);
        for ni in 0..n {
            for oc in 0..cout {
                let g = oc / coutg;
                for yo in 0..ho {
                    for xo in 0..wo {
                        let mut acc = 0.0;
                        for icg in 0..cing {
                            let ic = g * cing + icg;
                            for ki in 0..kh {
                                let yi = (yo * spec.stride + ki) as isize - spec.pad as isize;
                                if yi < 0 || yi >= h as isize {
                                    continue;
                                }
                                for kj in 0..kw {
                                    let xi = (xo * spec.stride + kj) as isize - spec.pad as isize;
                                    if xi < 0 || xi >= wd as isize {
                                        continue;
                                    }
                                    acc += x.data()[((ni * cin + ic) * h + yi as usize) * wd + xi as usize]
                                        * w.data()[((oc * cing + icg) * kh + ki) * kw + kj];
                                }
                            }
                        }
                        y.data_mut()[((ni * cout + oc) * ho + yo) * wo + xo] = acc;
                    }
                }
            }
        }
        y
    }

    fn rnd(shape: &[usize], seed: u64) -> Tensor<f64> {
        let n: usize = shape.iter().product();
        let mut s = seed;
        let data: Vec<f64> = (0..n)
            .map(|_| {
                s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                ((s >> 33) as f64 / (1u64 << 31) as f64) - 1.0
            })
            .collect();
        Tensor::from_vec(shape, data).unwrap()
    }

    #[test]
    fn conv_matches_naive() {
        for &(cin, cout, k, s, p, g) in &[
            (3usize, 8usize, 3usize, 1usize, 1usize, 1usize),
            (4, 6, 3, 2, 1, 2),
            (8, 8, 3, 1, 1, 8), // depthwise fast path
            (5, 5, 5, 1, 2, 5),
            (6, 4, 1, 1, 0, 1),
            (4, 4, 3, 2, 1, 4), // strided depthwise takes general path
        ] {
            let spec = ConvSpec::new(k, s, p, g);
            let x = rnd(&[2, cin, 9, 7], 11 + cin as u64);
            let w = rnd(&[cout, cin / g, k, k], 97 + cout as u64);
            let got = conv2d_fwd(&x, &w, &spec);
            let want = naive_conv(&x, &w, &spec);
            assert_eq!(got.shape(), want.shape());
            for (a, b) in got.data().iter().zip(want.data()) {
                assert!((a - b).abs() < 1e-10, "cfg {cin},{cout},{k},{s},{p},{g}");
            }
        }
    }

    #[test]
    fn conv_backward_is_adjoint() {
        // <conv(x), u> == <x, conv_bwd_data(u)> and <w, conv_bwd_filter(x,u)>
        let spec = ConvSpec::new(3, 2, 1, 1);
        let x = rnd(&[1, 3, 8, 8], 5);
        let w = rnd(&[4, 3, 3, 3], 7);
        let y = conv2d_fwd(&x, &w, &spec);
        let u = rnd(y.shape(), 13);
        let lhs: f64 = y.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        let dx = conv2d_bwd_data(&u, &w, &spec, x.shape());
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-9);
        let dw = conv2d_bwd_filter(&x, &u, &spec, w.shape());
        let rhs2: f64 = w.data().iter().zip(dw.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs2).abs() < 1e-9);
    }

    #[test]
    fn shuffle_roundtrip_and_index_formula() {
        let x = rnd(&[2, 8, 3, 5], 3);
        let y = pixel_shuffle(&x, 2);
        assert_eq!(y.shape(), &[2, 2, 6, 10]);
        let back = pixel_unshuffle(&y, 2);
        assert_eq!(back, x);
        // brute-force index oracle
        let (n, c_in, h, w) = x.dims4().unwrap();
        let r = 2;
        let c = c_in / (r * r);
        for ni in 0..n {
            for ci in 0..c {
                for hh in 0..h {
                    for ww in 0..w {
                        for i in 0..r {
                            for j in 0..r {
                                let o = y.data()[((ni * c + ci) * (h * r) + hh * r + i) * (w * r)
                                    + ww * r
                                    + j];
                                let e = x.data()
                                    [((ni * c_in + ci * r * r + i * r + j) * h + hh) * w + ww];
                                assert_eq!(o, e);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let mut d: Vec<f32> = (0..60).map(|i| (i as f32 * 0.7).sin() * 5.0).collect();
        softmax_rows(&mut d, 12);
        for row in d.chunks(12) {
            let s: f32 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn pool_shapes_and_values() {
        let x = Tensor::from_vec(&[1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).unwrap();
        let a = avg_pool_fwd(&x, 2);
        assert_eq!(a.data(), &[2.5]);
        let (m, arg) = max_pool_fwd(&x, 2);
        assert_eq!(m.data(), &[4.0]);
        assert_eq!(arg, vec![3]);
    }

    #[test]
    fn bilinear_resize_adjoint() {
        let x = rnd(&[1, 2, 4, 4], 21);
        let y = resize_bilinear(&x, 7, 5);
        let u = rnd(y.shape(), 22);
        let lhs: f64 = y.data().iter().zip(u.data()).map(|(a, b)| a * b).sum();
        let dx = resize_bilinear_bwd(&u, 4, 4);
        let rhs: f64 = x.data().iter().zip(dx.data()).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }
}
