//! Raw loops over contiguous row-major buffers. No shape checking happens here.

use crate::real::Real;

/// `c[m×n] += a[m×k] · b[k×n]`
pub fn gemm_nn<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let c_row = &mut c[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let b_row = &b[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`
pub fn gemm_nt<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let b_row = &b[j * k..(j + 1) * k];
            c[i * n + j] += dot(a_row, b_row);
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`
pub fn gemm_tn<F: Real>(a: &[F], b: &[F], c: &mut [F], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let a_row = &a[i * k..(i + 1) * k];
        let b_row = &b[i * n..(i + 1) * n];
        for (p, &av) in a_row.iter().enumerate() {
            if av == F::zero() {
                continue;
            }
            let c_row = &mut c[p * n..(p + 1) * n];
            for (cv, &bv) in c_row.iter_mut().zip(b_row) {
                *cv += av * bv;
            }
        }
    }
}

#[inline]
pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    // Four accumulators let the compiler vectorize without reassociating.
    let mut acc = [F::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Geometry of a single-image 2-D convolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeom {
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(c_in: usize, h: usize, w: usize, kernel: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || kernel == 0 || h + 2 * pad < kernel || w + 2 * pad < kernel {
            return None;
        }
        let h_out = (h + 2 * pad - kernel) / stride + 1;
        let w_out = (w + 2 * pad - kernel) / stride + 1;
        Some(ConvGeom { c_in, h, w, kernel, stride, pad, h_out, w_out })
    }

    pub fn patch_len(&self) -> usize {
        self.c_in * self.kernel * self.kernel
    }

    pub fn positions(&self) -> usize {
        self.h_out * self.w_out
    }
}

/// Unfolds `x[c_in×h×w]` into `cols[patch_len × positions]`.
pub fn im2col<F: Real>(x: &[F], g: &ConvGeom) -> Vec<F> {
    let positions = g.positions();
    let mut cols = vec![F::zero(); g.patch_len() * positions];
    for c in 0..g.c_in {
        for kh in 0..g.kernel {
            for kw in 0..g.kernel {
                let row = (c * g.kernel + kh) * g.kernel + kw;
                let dst = &mut cols[row * positions..(row + 1) * positions];
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let src_row = &x[(c * g.h + ih as usize) * g.w..(c * g.h + ih as usize + 1) * g.w];
                    for ow in 0..g.w_out {
                        let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dst[oh * g.w_out + ow] = src_row[iw as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatters `cols` back onto an image, accumulating overlaps.
pub fn col2im<F: Real>(cols: &[F], g: &ConvGeom, dx: &mut [F]) {
    let positions = g.positions();
    for c in 0..g.c_in {
        for kh in 0..g.kernel {
            for kw in 0..g.kernel {
                let row = (c * g.kernel + kh) * g.kernel + kw;
                let src = &cols[row * positions..(row + 1) * positions];
                for oh in 0..g.h_out {
                    let ih = (oh * g.stride + kh) as isize - g.pad as isize;
                    if ih < 0 || ih >= g.h as isize {
                        continue;
                    }
                    let base = (c * g.h + ih as usize) * g.w;
                    for ow in 0..g.w_out {
                        let iw = (ow * g.stride + kw) as isize - g.pad as isize;
                        if iw >= 0 && iw < g.w as isize {
                            dx[base + iw as usize] += src[oh * g.w_out + ow];
                        }
                    }
                }
            }
        }
    }
}

/// Source taps for half-pixel bilinear resampling of one axis by an integer factor.
///
/// Entry `o` holds `(i0, i1, w1)` so that `out[o] = (1-w1)·in[i0] + w1·in[i1]`.
pub fn bilinear_taps(len_in: usize, factor: usize) -> Vec<(usize, usize, f64)> {
    (0..len_in * factor)
        .map(|o| {
            let src = ((o as f64 + 0.5) / factor as f64 - 0.5).clamp(0.0, (len_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(len_in - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Splits `shape` around `axis` into `(outer, len, inner)` element counts.
pub fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

/// Row-major strides.
pub fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// Permutes axes: output axis `i` is input axis `perm[i]`.
pub fn permute<F: Real>(x: &[F], shape: &[usize], perm: &[usize]) -> Vec<F> {
    let in_strides = strides(shape);
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let gather: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();
    let n = x.len();
    let mut out = Vec::with_capacity(n);
    let rank = out_shape.len();
    if rank == 0 {
        return x.to_vec();
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for _ in 0..n {
        out.push(x[src]);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += gather[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= gather[d] * out_shape[d];
            idx[d] = 0;
        }
    }
    out
}
