//! Forward and backward kernels over flat row-major buffers.
//!
//! These are the numeric bodies behind the graph operators. They take
//! explicit geometry and never allocate on the hot path beyond the output and
//! a per-call scratch buffer.

use super::Real;
use crate::error::{Error, Result};

/// Geometry of a 2-D convolution over an `[N, C, H, W]` input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Result<Self> {
        if input.len() != 4 || weight.len() != 4 {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: weight.to_vec(),
            });
        }
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        let (k, wc, kh, kw) = (weight[0], weight[1], weight[2], weight[3]);
        if wc != c {
            return Err(Error::Shape {
                op: "conv2d",
                lhs: input.to_vec(),
                rhs: weight.to_vec(),
            });
        }
        if stride == 0 {
            return Err(Error::invalid("conv2d: stride must be at least 1"));
        }
        if kh > h + 2 * pad || kw > w + 2 * pad {
            return Err(Error::invalid(format!(
                "conv2d: kernel {kh}x{kw} larger than padded input {}x{}",
                h + 2 * pad,
                w + 2 * pad
            )));
        }
        let oh = (h + 2 * pad - kh) / stride + 1;
        let ow = (w + 2 * pad - kw) / stride + 1;
        Ok(ConvGeom {
            n,
            c,
            h,
            w,
            k,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        })
    }

    pub fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    pub fn out_plane(&self) -> usize {
        self.oh * self.ow
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.pad == 0
    }

    pub fn output_shape(&self) -> Vec<usize> {
        vec![self.n, self.k, self.oh, self.ow]
    }
}

/// Valid output columns `[lo, hi)` for kernel column offset `j` with stride 1.
fn valid_range(len: usize, out: usize, offset: usize, pad: usize) -> (usize, usize) {
    let lo = pad.saturating_sub(offset).min(out);
    let hi = (len + pad).saturating_sub(offset).min(out).max(lo);
    (lo, hi)
}

/// Unfolds one `[C, H, W]` image into a `[C*kh*kw, oh*ow]` patch matrix.
pub fn im2col<T: Real>(img: &[T], g: &ConvGeom, cols: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        let src = &img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let drow = &mut dst[oy * g.ow..(oy + 1) * g.ow];
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        drow.fill(T::zero());
                        continue;
                    }
                    let srow = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = valid_range(g.w, g.ow, j, g.pad);
                        drow[..lo].fill(T::zero());
                        drow[hi..].fill(T::zero());
                        let start = lo + j - g.pad;
                        drow[lo..hi].copy_from_slice(&srow[start..start + (hi - lo)]);
                    } else {
                        for (ox, d) in drow.iter_mut().enumerate() {
                            let ix = (ox * g.stride + j) as isize - g.pad as isize;
                            *d = if ix >= 0 && ix < g.w as isize {
                                srow[ix as usize]
                            } else {
                                T::zero()
                            };
                        }
                    }
                }
            }
        }
    }
}

/// Folds a patch matrix back onto an image, accumulating overlaps.
pub fn col2im<T: Real>(cols: &[T], g: &ConvGeom, img: &mut [T]) {
    let plane = g.out_plane();
    for c in 0..g.c {
        let dst = &mut img[c * g.h * g.w..(c + 1) * g.h * g.w];
        for i in 0..g.kh {
            for j in 0..g.kw {
                let row = (c * g.kh + i) * g.kw + j;
                let src = &cols[row * plane..(row + 1) * plane];
                for oy in 0..g.oh {
                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let srow = &src[oy * g.ow..(oy + 1) * g.ow];
                    let drow = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if g.stride == 1 {
                        let (lo, hi) = valid_range(g.w, g.ow, j, g.pad);
                        let start = lo + j - g.pad;
                        for (d, &s) in drow[start..start + (hi - lo)].iter_mut().zip(&srow[lo..hi]) {
                            *d += s;
                        }
                    } else {
                        for (ox, &s) in srow.iter().enumerate() {
                            let ix = (ox * g.stride + j) as isize - g.pad as isize;
                            if ix >= 0 && ix < g.w as isize {
                                drow[ix as usize] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub fn conv2d_forward<T: Real>(input: &[T], weight: &[T], bias: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.out_plane();
    let patch = g.patch_len();
    let img_len = g.c * g.h * g.w;
    let mut out = vec![T::zero(); g.n * g.k * plane];
    let mut cols = if g.is_pointwise() {
        Vec::new()
    } else {
        vec![T::zero(); patch * plane]
    };
    for n in 0..g.n {
        let img = &input[n * img_len..(n + 1) * img_len];
        let dst = &mut out[n * g.k * plane..(n + 1) * g.k * plane];
        let b: &[T] = if g.is_pointwise() {
            img
        } else {
            im2col(img, g, &mut cols);
            &cols
        };
        T::gemm(false, false, g.k, plane, patch, weight, b, T::zero(), dst);
        for (k, row) in dst.chunks_exact_mut(plane).enumerate() {
            let bk = bias[k];
            row.iter_mut().for_each(|v| *v += bk);
        }
    }
    out
}

/// Gradients of a convolution. Each requested buffer is returned freshly
/// allocated; weight and bias gradients are summed over the batch in order.
pub fn conv2d_backward<T: Real>(
    input: &[T],
    weight: &[T],
    dout: &[T],
    g: &ConvGeom,
    need_input: bool,
    need_weight: bool,
    need_bias: bool,
) -> (Option<Vec<T>>, Option<Vec<T>>, Option<Vec<T>>) {
    let plane = g.out_plane();
    let patch = g.patch_len();
    let img_len = g.c * g.h * g.w;
    let mut din = need_input.then(|| vec![T::zero(); input.len()]);
    let mut dw = need_weight.then(|| vec![T::zero(); weight.len()]);
    let mut db = need_bias.then(|| vec![T::zero(); g.k]);
    let pointwise = g.is_pointwise();
    let mut cols = vec![T::zero(); if pointwise { 0 } else { patch * plane }];
    let mut dcols = vec![T::zero(); if pointwise || !need_input { 0 } else { patch * plane }];

    for n in 0..g.n {
        let img = &input[n * img_len..(n + 1) * img_len];
        let go = &dout[n * g.k * plane..(n + 1) * g.k * plane];
        if let Some(dw) = dw.as_mut() {
            let b: &[T] = if pointwise {
                img
            } else {
                im2col(img, g, &mut cols);
                &cols
            };
            T::gemm(false, true, g.k, patch, plane, go, b, T::one(), dw);
        }
        if let Some(db) = db.as_mut() {
            for (k, row) in go.chunks_exact(plane).enumerate() {
                db[k] += row.iter().copied().sum::<T>();
            }
        }
        if let Some(din) = din.as_mut() {
            let dimg = &mut din[n * img_len..(n + 1) * img_len];
            if pointwise {
                T::gemm(true, false, patch, plane, g.k, weight, go, T::one(), dimg);
            } else {
                T::gemm(true, false, patch, plane, g.k, weight, go, T::zero(), &mut dcols);
                col2im(&dcols, g, dimg);
            }
        }
    }
    (din, dw, db)
}

/// Geometry of a max-pool window over `[N, C, H, W]`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PoolGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub k: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

impl PoolGeom {
    pub fn new(input: &[usize], k: usize, stride: usize) -> Result<Self> {
        if input.len() != 4 {
            return Err(Error::Shape {
                op: "maxpool2d",
                lhs: input.to_vec(),
                rhs: vec![4],
            });
        }
        if k == 0 || stride == 0 {
            return Err(Error::invalid("maxpool2d: window and stride must be at least 1"));
        }
        let (n, c, h, w) = (input[0], input[1], input[2], input[3]);
        if h < k || w < k {
            return Err(Error::invalid(format!(
                "maxpool2d: window {k}x{k} larger than input {h}x{w}"
            )));
        }
        Ok(PoolGeom {
            n,
            c,
            h,
            w,
            k,
            stride,
            oh: (h - k) / stride + 1,
            ow: (w - k) / stride + 1,
        })
    }
}

/// Returns pooled values and, per output, the flat input index of the first
/// maximum in row-major window order.
pub fn maxpool_forward<T: Real>(input: &[T], g: &PoolGeom) -> (Vec<T>, Vec<usize>) {
    let planes = g.n * g.c;
    let mut out = Vec::with_capacity(planes * g.oh * g.ow);
    let mut arg = Vec::with_capacity(planes * g.oh * g.ow);
    for p in 0..planes {
        let base = p * g.h * g.w;
        for oy in 0..g.oh {
            for ox in 0..g.ow {
                let mut best_i = base + oy * g.stride * g.w + ox * g.stride;
                let mut best = input[best_i];
                for dy in 0..g.k {
                    let row = base + (oy * g.stride + dy) * g.w + ox * g.stride;
                    for dx in 0..g.k {
                        let v = input[row + dx];
                        if v > best {
                            best = v;
                            best_i = row + dx;
                        }
                    }
                }
                out.push(best);
                arg.push(best_i);
            }
        }
    }
    (out, arg)
}

pub fn maxpool_backward<T: Real>(dout: &[T], argmax: &[usize], input_len: usize) -> Vec<T> {
    let mut din = vec![T::zero(); input_len];
    for (&i, &g) in argmax.iter().zip(dout) {
        din[i] += g;
    }
    din
}

/// Source sampling positions along one axis for half-pixel bilinear resize.
#[derive(Debug, Clone)]
pub struct AxisMap {
    pub lo: Vec<usize>,
    pub hi: Vec<usize>,
    pub frac: Vec<f64>,
}

impl AxisMap {
    /// Maps `dst` output positions onto `src` input samples: position `d`
    /// samples `(d + 0.5) * src / dst - 0.5`, clamped to the valid range.
    pub fn new(src: usize, dst: usize) -> Self {
        Self::with_window(0.0, src as f64, src, dst)
    }

    /// Like [`AxisMap::new`] but sampling the sub-window `[start, start + extent)`
    /// of an axis of length `src`.
    pub fn with_window(start: f64, extent: f64, src: usize, dst: usize) -> Self {
        let mut lo = Vec::with_capacity(dst);
        let mut hi = Vec::with_capacity(dst);
        let mut frac = Vec::with_capacity(dst);
        let last = (src - 1) as f64;
        for d in 0..dst {
            let s = (start + (d as f64 + 0.5) * extent / dst as f64 - 0.5).clamp(0.0, last);
            let l = s.floor() as usize;
            let h = (l + 1).min(src - 1);
            lo.push(l);
            hi.push(h);
            frac.push(if h == l { 0.0 } else { s - l as f64 });
        }
        AxisMap { lo, hi, frac }
    }
}

/// Bilinear resampling of one `[h, w]` plane onto `[ys.len(), xs.len()]`.
pub fn resample_plane<T: Real>(src: &[T], w: usize, ys: &AxisMap, xs: &AxisMap, dst: &mut [T]) {
    let ow = xs.lo.len();
    let fx: Vec<T> = xs.frac.iter().map(|&f| T::from_f64(f)).collect();
    for (y, drow) in dst.chunks_exact_mut(ow).enumerate() {
        let fy = T::from_f64(ys.frac[y]);
        let r0 = &src[ys.lo[y] * w..ys.lo[y] * w + w];
        let r1 = &src[ys.hi[y] * w..ys.hi[y] * w + w];
        for (x, d) in drow.iter_mut().enumerate() {
            let (l, h) = (xs.lo[x], xs.hi[x]);
            let top = r0[l] + fx[x] * (r0[h] - r0[l]);
            let bot = r1[l] + fx[x] * (r1[h] - r1[l]);
            *d = top + fy * (bot - top);
        }
    }
}

/// Adjoint of [`resample_plane`].
pub fn resample_plane_backward<T: Real>(dout: &[T], w: usize, ys: &AxisMap, xs: &AxisMap, dsrc: &mut [T]) {
    let ow = xs.lo.len();
    let one = T::one();
    for (y, grow) in dout.chunks_exact(ow).enumerate() {
        let fy = T::from_f64(ys.frac[y]);
        let (r0, r1) = (ys.lo[y] * w, ys.hi[y] * w);
        for (x, &g) in grow.iter().enumerate() {
            let fx = T::from_f64(xs.frac[x]);
            let (l, h) = (xs.lo[x], xs.hi[x]);
            let gt = g * (one - fy);
            let gb = g * fy;
            dsrc[r0 + l] += gt * (one - fx);
            dsrc[r0 + h] += gt * fx;
            dsrc[r1 + l] += gb * (one - fx);
            dsrc[r1 + h] += gb * fx;
        }
    }
}

pub fn gap_forward<T: Real>(input: &[T], plane: usize) -> Vec<T> {
    let inv = T::from_f64(1.0 / plane as f64);
    input
        .chunks_exact(plane)
        .map(|p| p.iter().copied().sum::<T>() * inv)
        .collect()
}

pub fn gap_backward<T: Real>(dout: &[T], plane: usize) -> Vec<T> {
    let inv = T::from_f64(1.0 / plane as f64);
    let mut din = Vec::with_capacity(dout.len() * plane);
    for &g in dout {
        din.extend(std::iter::repeat_n(g * inv, plane));
    }
    din
}

/// `[N, D] x [D, M] + [M]`.
pub fn dense_forward<T: Real>(input: &[T], weight: &[T], bias: &[T], n: usize, d: usize, m: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(n * m);
    for _ in 0..n {
        out.extend_from_slice(bias);
    }
    T::gemm(false, false, n, m, d, input, weight, T::one(), &mut out);
    out
}

/// Row-wise softmax over the last axis of length `len`, max-shifted.
pub fn softmax_rows<T: Real>(input: &[T], len: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(input.len());
    for row in input.chunks_exact(len) {
        let mx = row.iter().copied().fold(row[0], T::max);
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - mx).exp();
            total += e;
            out.push(e);
        }
        out[start..].iter_mut().for_each(|e| *e = *e / total);
    }
    out
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    // Split on sign so neither branch exponentiates a large positive value.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct_conv(input: &[f64], weight: &[f64], bias: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.n * g.k * g.oh * g.ow];
        for n in 0..g.n {
            for k in 0..g.k {
                for oy in 0..g.oh {
                    for ox in 0..g.ow {
                        let mut s = bias[k];
                        for c in 0..g.c {
                            for i in 0..g.kh {
                                for j in 0..g.kw {
                                    let iy = (oy * g.stride + i) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + j) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    s += input[((n * g.c + c) * g.h + iy as usize) * g.w + ix as usize]
                                        * weight[((k * g.c + c) * g.kh + i) * g.kw + j];
                                }
                            }
                        }
                        out[((n * g.k + k) * g.oh + oy) * g.ow + ox] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_sum() {
        for &(stride, pad, kh) in &[(1, 1, 3), (2, 1, 3), (1, 0, 3), (2, 0, 2), (1, 2, 5), (1, 0, 1)] {
            let input: Vec<f64> = (0..2 * 3 * 7 * 6).map(|i| ((i * 37 % 23) as f64 - 11.0) / 7.0).collect();
            let weight: Vec<f64> = (0..4 * 3 * kh * kh).map(|i| ((i * 13 % 17) as f64 - 8.0) / 9.0).collect();
            let bias = [0.1, -0.2, 0.3, 0.0];
            let g = ConvGeom::new(&[2, 3, 7, 6], &[4, 3, kh, kh], stride, pad).unwrap();
            let got = conv2d_forward(&input, &weight, &bias, &g);
            let want = direct_conv(&input, &weight, &bias, &g);
            for (a, b) in got.iter().zip(&want) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad} k {kh}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        let g = ConvGeom::new(&[1, 2, 5, 4], &[1, 2, 3, 3], 1, 1).unwrap();
        let x: Vec<f64> = (0..40).map(|i| (i as f64 * 0.3).sin()).collect();
        let y: Vec<f64> = (0..g.patch_len() * g.out_plane()).map(|i| (i as f64 * 0.7).cos()).collect();
        let mut cols = vec![0.0; y.len()];
        im2col(&x, &g, &mut cols);
        let lhs: f64 = cols.iter().zip(&y).map(|(a, b)| a * b).sum();
        let mut back = vec![0.0; x.len()];
        col2im(&y, &g, &mut back);
        let rhs: f64 = back.iter().zip(&x).map(|(a, b)| a * b).sum();
        assert!((lhs - rhs).abs() < 1e-10);
    }

    #[test]
    fn conv_rejects_bad_geometry() {
        assert!(matches!(
            ConvGeom::new(&[1, 3, 4, 4], &[2, 2, 3, 3], 1, 1),
            Err(Error::Shape { .. })
        ));
        assert!(ConvGeom::new(&[1, 1, 2, 2], &[1, 1, 5, 5], 1, 1).is_err());
        assert!(ConvGeom::new(&[1, 1, 4, 4], &[1, 1, 3, 3], 0, 1).is_err());
    }

    #[test]
    fn maxpool_ties_go_to_first_in_scan_order() {
        let g = PoolGeom::new(&[1, 1, 2, 2], 2, 2).unwrap();
        let (out, arg) = maxpool_forward(&[5.0f64, 5.0, 5.0, 5.0], &g);
        assert_eq!(out, vec![5.0]);
        assert_eq!(arg, vec![0]);
        let (_, arg) = maxpool_forward(&[1.0f64, 7.0, 7.0, 2.0], &g);
        assert_eq!(arg, vec![1]);
    }

    #[test]
    fn axis_map_identity_when_sizes_match() {
        let m = AxisMap::new(5, 5);
        assert_eq!(m.lo, vec![0, 1, 2, 3, 4]);
        assert!(m.frac.iter().all(|&f| f == 0.0));
    }

    #[test]
    fn sigmoid_is_stable_at_extremes() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert!(sigmoid(-1000.0f64).is_finite());
        assert_eq!(sigmoid(1000.0f64), 1.0);
    }
}
