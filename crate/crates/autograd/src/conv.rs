//! im2col-based 2-D convolution kernels.

use crate::Scalar;

/// Static geometry of one convolution call.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub batch: usize,
    pub c_in: usize,
    pub h: usize,
    pub w: usize,
    pub c_out: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub h_out: usize,
    pub w_out: usize,
}

impl ConvGeom {
    pub fn new(input: &[usize], weight: &[usize], stride: usize, pad: usize) -> Self {
        assert_eq!(input.len(), 4, "conv2d input must be NCHW, got {input:?}");
        assert_eq!(weight.len(), 4, "conv2d weight must be OIHW, got {weight:?}");
        assert_eq!(input[1], weight[1], "conv2d channel mismatch: input {input:?}, weight {weight:?}");
        assert_eq!(weight[2], weight[3], "only square kernels are supported");
        assert!(stride >= 1);
        let k = weight[2];
        let h_out = (input[2] + 2 * pad - k) / stride + 1;
        let w_out = (input[3] + 2 * pad - k) / stride + 1;
        Self { batch: input[0], c_in: input[1], h: input[2], w: input[3], c_out: weight[0], k, stride, pad, h_out, w_out }
    }

    /// Rows of the column matrix (`c_in · k · k`).
    pub fn patch(&self) -> usize {
        self.c_in * self.k * self.k
    }

    /// Output pixels per image.
    pub fn plane(&self) -> usize {
        self.h_out * self.w_out
    }

}

fn is_pointwise(g: &ConvGeom) -> bool {
    g.k == 1 && g.stride == 1 && g.pad == 0
}

/// Valid output columns `[lo, hi)` for kernel column `kj` (input column
/// `ox * stride + kj - pad` inside the image).
fn valid_range(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride);
    let hi_in = (g.w + g.pad).saturating_sub(kj);
    let hi = hi_in.div_ceil(g.stride).min(g.w_out);
    (lo.min(hi), hi)
}

/// Unfold one CHW image into a `[c_in·k·k, h_out·w_out]` column matrix.
pub fn im2col<T: Scalar>(x: &[T], g: &ConvGeom, cols: &mut [T]) {
    let plane = g.plane();
    for c in 0..g.c_in {
        let src = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_range(g, kj);
                for oy in 0..g.h_out {
                    let seg = &mut dst[oy * g.w_out..(oy + 1) * g.w_out];
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        seg.fill(T::zero());
                        continue;
                    }
                    let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                    seg[..lo].fill(T::zero());
                    seg[hi..].fill(T::zero());
                    if lo == hi {
                        continue;
                    }
                    let base = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        seg[lo..hi].copy_from_slice(&src_row[base..base + hi - lo]);
                    } else {
                        for (n, d) in seg[lo..hi].iter_mut().enumerate() {
                            *d = src_row[base + n * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: fold a column matrix back, accumulating into the
/// CHW image `dx`.
pub fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let plane = g.plane();
    for c in 0..g.c_in {
        let dst = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (lo, hi) = valid_range(g, kj);
                for oy in 0..g.h_out {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                    if lo == hi {
                        continue;
                    }
                    let seg = &src[oy * g.w_out + lo..oy * g.w_out + hi];
                    let base = lo * g.stride + kj - g.pad;
                    for (n, &s) in seg.iter().enumerate() {
                        dst_row[base + n * g.stride] += s;
                    }
                }
            }
        }
    }
}

/// Forward convolution, one image at a time so the column buffer stays
/// cache-sized. Output is NCHW.
pub fn conv2d_forward<T: Scalar>(x: &[T], weight: &[T], bias: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let plane = g.plane();
    let img = g.c_in * g.h * g.w;
    let mut out = vec![T::zero(); g.batch * g.c_out * plane];
    let mut cols = if is_pointwise(g) { Vec::new() } else { vec![T::zero(); g.patch() * plane] };
    for b in 0..g.batch {
        let xb = &x[b * img..(b + 1) * img];
        let src: &[T] = if is_pointwise(g) {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        let ob = &mut out[b * g.c_out * plane..(b + 1) * g.c_out * plane];
        T::gemm(g.c_out, g.patch(), plane, weight, (g.patch() as isize, 1), src, (plane as isize, 1), ob, false);
        if let Some(bias) = bias {
            for (row, &bv) in ob.chunks_mut(plane).zip(bias) {
                for v in row {
                    *v += bv;
                }
            }
        }
    }
    out
}

/// `dL/dW` for output gradient `dy` (NCHW), re-unfolding the input.
pub fn conv2d_grad_weight<T: Scalar>(x: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.plane();
    let img = g.c_in * g.h * g.w;
    let mut dw = vec![T::zero(); g.c_out * g.patch()];
    let mut cols = if is_pointwise(g) { Vec::new() } else { vec![T::zero(); g.patch() * plane] };
    for b in 0..g.batch {
        let xb = &x[b * img..(b + 1) * img];
        let src: &[T] = if is_pointwise(g) {
            xb
        } else {
            im2col(xb, g, &mut cols);
            &cols
        };
        let dyb = &dy[b * g.c_out * plane..(b + 1) * g.c_out * plane];
        // [c_out, plane] x [plane, patch], columns stored as [patch, plane]
        T::gemm(g.c_out, plane, g.patch(), dyb, (plane as isize, 1), src, (1, plane as isize), &mut dw, b > 0);
    }
    dw
}

pub fn conv2d_grad_input<T: Scalar>(weight: &[T], dy: &[T], g: &ConvGeom) -> Vec<T> {
    let plane = g.plane();
    let img = g.c_in * g.h * g.w;
    let mut dx = vec![T::zero(); g.batch * img];
    let mut dcols = vec![T::zero(); g.patch() * plane];
    for b in 0..g.batch {
        let dyb = &dy[b * g.c_out * plane..(b + 1) * g.c_out * plane];
        let dxb = &mut dx[b * img..(b + 1) * img];
        // [patch, c_out] (weight transposed) x [c_out, plane]
        if is_pointwise(g) {
            T::gemm(g.patch(), g.c_out, plane, weight, (1, g.patch() as isize), dyb, (plane as isize, 1), dxb, false);
        } else {
            T::gemm(g.patch(), g.c_out, plane, weight, (1, g.patch() as isize), dyb, (plane as isize, 1), &mut dcols, false);
            col2im(&dcols, g, dxb);
        }
    }
    dx
}

#[cfg(test)]
mod tests {
    use super::*;

    fn direct(x: &[f64], w: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.batch * g.c_out * g.plane()];
        for b in 0..g.batch {
            for co in 0..g.c_out {
                for oy in 0..g.h_out {
                    for ox in 0..g.w_out {
                        let mut s = 0.0;
                        for c in 0..g.c_in {
                            for ki in 0..g.k {
                                for kj in 0..g.k {
                                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                    if iy < 0 || ix < 0 || iy >= g.h as isize || ix >= g.w as isize {
                                        continue;
                                    }
                                    s += x[((b * g.c_in + c) * g.h + iy as usize) * g.w + ix as usize]
                                        * w[((co * g.c_in + c) * g.k + ki) * g.k + kj];
                                }
                            }
                        }
                        out[((b * g.c_out + co) * g.h_out + oy) * g.w_out + ox] = s;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        for &(stride, pad, k) in &[(1, 1, 3), (2, 1, 3), (1, 0, 1), (2, 0, 3)] {
            let g = ConvGeom::new(&[2, 3, 7, 6], &[4, 3, k, k], stride, pad);
            let x: Vec<f64> = (0..2 * 3 * 7 * 6).map(|i| ((i * 37 % 11) as f64 - 5.0) / 3.0).collect();
            let w: Vec<f64> = (0..4 * 3 * k * k).map(|i| ((i * 13 % 7) as f64 - 3.0) / 5.0).collect();
            let out = conv2d_forward(&x, &w, None, &g);
            let expect = direct(&x, &w, &g);
            for (a, b) in out.iter().zip(&expect) {
                assert!((a - b).abs() < 1e-12, "stride {stride} pad {pad} k {k}");
            }
        }
    }

    #[test]
    fn col2im_is_adjoint_of_im2col() {
        for &(stride, pad, h) in &[(2, 1, 5), (1, 1, 4), (2, 0, 6), (1, 2, 3)] {
            let g = ConvGeom::new(&[1, 2, h, h + 1], &[1, 2, 3, 3], stride, pad);
            let x: Vec<f64> = (0..g.c_in * g.h * g.w).map(|i| (i as f64).sin()).collect();
            let c: Vec<f64> = (0..g.patch() * g.plane()).map(|i| (i as f64 * 0.7).cos()).collect();
            let mut cols = vec![f64::NAN; c.len()];
            im2col(&x, &g, &mut cols);
            let lhs: f64 = cols.iter().zip(&c).map(|(a, b)| a * b).sum();
            let mut back = vec![0.0; x.len()];
            col2im(&c, &g, &mut back);
            let rhs: f64 = x.iter().zip(&back).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-10, "stride {stride} pad {pad}");
        }
    }
}
