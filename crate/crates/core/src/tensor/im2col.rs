//! Convolution lowering: receptive fields unrolled into matrix columns.
//!
//! Row index of the lowered matrix is `(c * kh + i) * kw + j`; column index is
//! `(n * out_h + y) * out_w + x`.

use super::{Scalar, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvGeometry {
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub pad: usize,
}

impl ConvGeometry {
    pub fn square(kernel: usize, stride: usize, pad: usize) -> Self {
        ConvGeometry {
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            pad,
        }
    }

    /// Output `(height, width)` for an input of `(h, w)`.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((
            conv_output_size(h, self.kernel_h, self.stride, self.pad)?,
            conv_output_size(w, self.kernel_w, self.stride, self.pad)?,
        ))
    }
}

/// `(size + 2·pad − kernel) / stride + 1`, rejecting non-integral results.
pub fn conv_output_size(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 {
        return Err(Error::Config("kernel and stride must be positive".into()));
    }
    let padded = size + 2 * pad;
    if padded < kernel || !(padded - kernel).is_multiple_of(stride) {
        return Err(Error::Config(format!(
            "convolution of size {size} with kernel {kernel}, stride {stride}, pad {pad} \
             has no integral output size"
        )));
    }
    Ok((padded - kernel) / stride + 1)
}

/// Output columns `[lo, hi)` whose source column `x·stride + kj − pad` is in bounds.
fn valid_span(out: usize, size: usize, k: usize, stride: usize, pad: usize) -> (usize, usize) {
    // x·stride + k >= pad  and  x·stride + k − pad < size
    let lo = if k >= pad {
        0
    } else {
        (pad - k).div_ceil(stride)
    };
    let hi = if size + pad > k {
        ((size + pad - k - 1) / stride + 1).min(out)
    } else {
        0
    };
    (lo, hi.max(lo))
}

/// Unfold one `[C, H, W]` sample into rows of `dst`, writing columns
/// `col_offset..col_offset + Ho·Wo` of a matrix with `row_stride` columns.
/// Padding positions are left untouched, so `dst` must start zeroed.
#[allow(clippy::too_many_arguments)]
pub(crate) fn unfold_sample<T: Scalar>(
    src: &[T],
    (c, h, w): (usize, usize, usize),
    g: ConvGeometry,
    (oh, ow): (usize, usize),
    dst: &mut [T],
    row_stride: usize,
    col_offset: usize,
) {
    for ch in 0..c {
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (ch * g.kernel_h + ki) * g.kernel_w + kj;
                let dst_row = &mut dst[row * row_stride + col_offset..][..oh * ow];
                let (lo, hi) = valid_span(ow, w, kj, g.stride, g.pad);
                for y in 0..oh {
                    let sy = (y * g.stride + ki) as isize - g.pad as isize;
                    if sy < 0 || sy >= h as isize || lo >= hi {
                        continue;
                    }
                    let line = &plane[sy as usize * w..][..w];
                    let out = &mut dst_row[y * ow..][..ow];
                    let sx0 = lo * g.stride + kj - g.pad;
                    if g.stride == 1 {
                        out[lo..hi].copy_from_slice(&line[sx0..sx0 + (hi - lo)]);
                    } else {
                        for (i, o) in out[lo..hi].iter_mut().enumerate() {
                            *o = line[sx0 + i * g.stride];
                        }
                    }
                }
            }
        }
    }
}

/// Adjoint of [`unfold_sample`]: accumulate columns back into one sample.
#[allow(clippy::too_many_arguments)]
pub(crate) fn fold_sample<T: Scalar>(
    src: &[T],
    row_stride: usize,
    col_offset: usize,
    (c, h, w): (usize, usize, usize),
    g: ConvGeometry,
    (oh, ow): (usize, usize),
    dst: &mut [T],
) {
    for ch in 0..c {
        let plane = &mut dst[ch * h * w..(ch + 1) * h * w];
        for ki in 0..g.kernel_h {
            for kj in 0..g.kernel_w {
                let row = (ch * g.kernel_h + ki) * g.kernel_w + kj;
                let src_row = &src[row * row_stride + col_offset..][..oh * ow];
                let (lo, hi) = valid_span(ow, w, kj, g.stride, g.pad);
                for y in 0..oh {
                    let sy = (y * g.stride + ki) as isize - g.pad as isize;
                    if sy < 0 || sy >= h as isize || lo >= hi {
                        continue;
                    }
                    let line = &mut plane[sy as usize * w..][..w];
                    let inp = &src_row[y * ow..][..ow];
                    let sx0 = lo * g.stride + kj - g.pad;
                    for (i, &v) in inp[lo..hi].iter().enumerate() {
                        let idx = sx0 + i * g.stride;
                        line[idx] = line[idx] + v;
                    }
                }
            }
        }
    }
}

/// Lower `x: [N, C, H, W]` into `[C·kh·kw, N·Ho·Wo]`, zero-filling padding.
pub fn im2col<T: Scalar>(x: &Tensor<T>, g: ConvGeometry) -> Result<Tensor<T>> {
    let (n, c, h, w) = x.dims4("im2col")?;
    let (oh, ow) = g.output_hw(h, w)?;
    let rows = c * g.kernel_h * g.kernel_w;
    let cols = n * oh * ow;
    let mut out = vec![T::zero(); rows * cols];
    let sample = c * h * w;
    for b in 0..n {
        unfold_sample(
            &x.data()[b * sample..(b + 1) * sample],
            (c, h, w),
            g,
            (oh, ow),
            &mut out,
            cols,
            b * oh * ow,
        );
    }
    Tensor::from_vec(&[rows, cols], out)
}

/// Adjoint of [`im2col`]: scatter-add columns back into an `input_shape` image.
pub fn col2im<T: Scalar>(
    cols: &Tensor<T>,
    input_shape: [usize; 4],
    g: ConvGeometry,
) -> Result<Tensor<T>> {
    let [n, c, h, w] = input_shape;
    let (oh, ow) = g.output_hw(h, w)?;
    let rows = c * g.kernel_h * g.kernel_w;
    let ncols = n * oh * ow;
    if cols.shape() != [rows, ncols] {
        return Err(Error::dim(
            "col2im",
            format!(
                "expected columns [{rows}, {ncols}] for input {input_shape:?}, got {:?}",
                cols.shape()
            ),
        ));
    }
    let mut out = vec![T::zero(); n * c * h * w];
    let sample = c * h * w;
    for b in 0..n {
        fold_sample(
            cols.data(),
            ncols,
            b * oh * ow,
            (c, h, w),
            g,
            (oh, ow),
            &mut out[b * sample..(b + 1) * sample],
        );
    }
    Tensor::from_vec(&input_shape, out)
}
