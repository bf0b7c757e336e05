//! Dense row-major tensors and the primitives every layer is built from.
//!
//! Layout is NCHW for rank-4 activations and `[rows, cols]` for matrices.

mod im2col;
mod rng;
mod scalar;

pub use im2col::{col2im, conv_output_size, im2col, ConvGeometry};
pub(crate) use im2col::{fold_sample, unfold_sample};
pub use rng::{Rng, Stream};
pub use scalar::Scalar;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T: Scalar = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.len() > 4 {
            return Err(Error::dim(
                "tensor",
                format!("rank must be 1..=4, got shape {shape:?}"),
            ));
        }
        let len: usize = shape.iter().product();
        if len != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {shape:?} needs {len} values, got {}", data.len()),
            ));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = shape.iter().product();
        Tensor::from_vec(shape, vec![value; len]).expect("valid rank")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Same data under a new shape with equal element count.
    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Tensor::from_vec(shape, self.data)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| U::from_f64(v.to_f64().expect("finite float")))
                .collect(),
        }
    }

    /// `[N, C, H, W]` of a rank-4 tensor.
    pub fn dims4(&self, op: &'static str) -> Result<(usize, usize, usize, usize)> {
        match *self.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::dim(
                op,
                format!("expected rank-4 NCHW tensor, got shape {:?}", self.shape),
            )),
        }
    }

    pub fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match *self.shape.as_slice() {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(
                op,
                format!("expected rank-2 tensor, got shape {:?}", self.shape),
            )),
        }
    }

    /// Errors if any element is NaN or infinite.
    pub fn ensure_finite(&self, what: &str) -> Result<()> {
        if self.data.iter().all(|v| v.is_finite()) {
            Ok(())
        } else {
            Err(Error::NonFinite(what.to_string()))
        }
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "dot",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    /// Elementwise `self += other`.
    pub fn add_assign(&mut self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "add",
                format!("{:?} vs {:?}", self.shape, other.shape),
            ));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a = *a + b;
        }
        Ok(())
    }

    /// Matrix product of two rank-2 tensors.
    pub fn matmul(&self, other: &Self) -> Result<Self> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = other.dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!(
                    "inner dimensions differ: {:?} x {:?}",
                    self.shape, other.shape
                ),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        T::gemm(
            m,
            k,
            n,
            T::one(),
            &self.data,
            (k as isize, 1),
            &other.data,
            (n as isize, 1),
            T::zero(),
            &mut out,
            (n as isize, 1),
        );
        Tensor::from_vec(&[m, n], out)
    }

    /// Transpose of a rank-2 tensor.
    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_vec(&[c, r], out)
    }

    /// Channels `[start, start + count)` of a rank-4 tensor.
    pub fn slice_channels(&self, start: usize, count: usize) -> Result<Self> {
        let (n, c, h, w) = self.dims4("slice_channels")?;
        if start + count > c {
            return Err(Error::dim(
                "slice_channels",
                format!("channels {start}..{} out of {c}", start + count),
            ));
        }
        let plane = h * w;
        let mut out = Vec::with_capacity(n * count * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&self.data[base..base + count * plane]);
        }
        Tensor::from_vec(&[n, count, h, w], out)
    }
}

/// Concatenate rank-4 tensors along the channel axis, preserving order.
pub fn concat_channels<T: Scalar>(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::dim("concat_channels", "no parts"))?;
    let (n, _, h, w) = first.dims4("concat_channels")?;
    let mut total_c = 0;
    for p in parts {
        let (pn, pc, ph, pw) = p.dims4("concat_channels")?;
        if (pn, ph, pw) != (n, h, w) {
            return Err(Error::dim(
                "concat_channels",
                format!(
                    "part {:?} does not match N,H,W of {:?}",
                    p.shape, first.shape
                ),
            ));
        }
        total_c += pc;
    }
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total_c * plane);
    for b in 0..n {
        for p in parts {
            let pc = p.shape[1];
            let base = b * pc * plane;
            out.extend_from_slice(&p.data[base..base + pc * plane]);
        }
    }
    Tensor::from_vec(&[n, total_c, h, w], out)
}
