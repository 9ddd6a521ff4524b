//! Dense row-major tensors of `f64` and the mode-k tensor-matrix product.
//!
//! Every operation returns a freshly materialized, contiguous tensor. There
//! are no lazy strided views: `permute` copies, `reshape` relabels.

mod io;
mod rng;

use std::fmt;
use std::sync::atomic::{AtomicU64, Ordering};

pub use self::io::{read_ndt, write_ndt, NDT1_MAGIC, NDT1_VERSION};
pub use self::rng::Rng;
use crate::error::{Error, Result};

/// Dimensions of a tensor. Rank is at least one and every dimension is
/// positive.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::InvalidShape {
                dims: dims.to_vec(),
                reason: "rank must be at least 1",
            });
        }
        if dims.contains(&0) {
            return Err(Error::InvalidShape {
                dims: dims.to_vec(),
                reason: "every dimension must be at least 1",
            });
        }
        checked_product(dims).ok_or_else(|| Error::ShapeOverflow(dims.to_vec()))?;
        Ok(Self(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        // validated at construction
        self.0.iter().product()
    }

    /// Row-major strides, last axis fastest.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

pub(crate) fn checked_product(dims: &[usize]) -> Option<usize> {
    dims.iter().try_fold(1usize, |acc, &d| acc.checked_mul(d))
}

/// Counts multiply-adds performed by [`matmul_counted`].
///
/// One multiply-add is two FLOPs. The counter is atomic so a single counter
/// may be shared by forwards running on several threads.
#[derive(Debug, Default)]
pub struct FlopCounter {
    multiply_adds: AtomicU64,
}

impl FlopCounter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn multiply_adds(&self) -> u64 {
        self.multiply_adds.load(Ordering::Relaxed)
    }

    pub fn flops(&self) -> u64 {
        2 * self.multiply_adds()
    }

    fn add(&self, n: u64) {
        self.multiply_adds.fetch_add(n, Ordering::Relaxed);
    }
}

/// Dense N-D array in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

impl Tensor {
    pub fn from_vec(dims: &[usize], data: Vec<f64>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::InvalidArgument(format!(
                "shape {:?} needs {} elements, got {}",
                dims,
                shape.numel(),
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![0.0; shape.numel()];
        Ok(Self { shape, data })
    }

    pub fn full(dims: &[usize], value: f64) -> Result<Self> {
        let mut t = Self::zeros(dims)?;
        t.data.fill(value);
        Ok(t)
    }

    /// `n × n` identity matrix.
    pub fn eye(n: usize) -> Result<Self> {
        let mut t = Self::zeros(&[n, n])?;
        for i in 0..n {
            t.data[i * n + i] = 1.0;
        }
        Ok(t)
    }

    /// Elements i.i.d. uniform in `[lo, hi)`.
    pub fn rand_uniform(rng: &mut Rng, dims: &[usize], lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo >= hi {
            return Err(Error::InvalidArgument(format!(
                "uniform range requires lo < hi, got [{lo}, {hi})"
            )));
        }
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel()).map(|_| rng.uniform(lo, hi)).collect();
        Ok(Self { shape, data })
    }

    /// Elements i.i.d. standard normal.
    pub fn randn(rng: &mut Rng, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = (0..shape.numel()).map(|_| rng.normal()).collect();
        Ok(Self { shape, data })
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn rank(&self) -> usize {
        self.shape.rank()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.rank(), "index rank mismatch");
        index
            .iter()
            .zip(self.shape.strides())
            .zip(self.dims())
            .map(|((&i, s), &d)| {
                assert!(i < d, "index {i} out of bounds for dim {d}");
                i * s
            })
            .sum()
    }

    /// Element at a multi-index. Panics when out of bounds.
    pub fn get(&self, index: &[usize]) -> f64 {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: f64) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`. Always copies.
    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank {
            return Err(Error::InvalidPermutation(axes.to_vec()));
        }
        for &a in axes {
            if a >= rank || seen[a] {
                return Err(Error::InvalidPermutation(axes.to_vec()));
            }
            seen[a] = true;
        }
        let out_dims: Vec<usize> = axes.iter().map(|&a| self.dims()[a]).collect();
        if axes.iter().enumerate().all(|(i, &a)| i == a) {
            return Ok(self.clone());
        }

        let in_strides = self.shape.strides();
        let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
        let mut data = Vec::with_capacity(self.len());
        let mut index = vec![0usize; rank];
        let mut src = 0usize;
        let last = rank - 1;
        let inner = out_dims[last];
        let inner_stride = src_strides[last];
        loop {
            // innermost axis unrolled as a strided run
            for j in 0..inner {
                data.push(self.data[src + j * inner_stride]);
            }
            // odometer over the outer axes
            let mut ax = last;
            loop {
                if ax == 0 {
                    let shape = Shape::new(&out_dims)?;
                    return Ok(Self { shape, data });
                }
                ax -= 1;
                index[ax] += 1;
                src += src_strides[ax];
                if index[ax] < out_dims[ax] {
                    break;
                }
                src -= src_strides[ax] * out_dims[ax];
                index[ax] = 0;
            }
        }
    }

    /// Relabels the shape; the flat data is untouched.
    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        self.clone().into_reshape(dims)
    }

    pub fn into_reshape(self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.len() {
            return Err(Error::ReshapeMismatch {
                from: self.dims().to_vec(),
                to: dims.to_vec(),
                from_len: self.len(),
                to_len: shape.numel(),
            });
        }
        Ok(Self {
            shape,
            data: self.data,
        })
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Self> {
        if self.rank() != 2 {
            return Err(Error::InvalidArgument(format!(
                "transpose needs rank 2, got {:?}",
                self.dims()
            )));
        }
        self.permute(&[1, 0])
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Self, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        self.expect_same_shape(other)?;
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| v * s)
    }

    pub fn expect_same_shape(&self, other: &Self) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::ShapeMismatch {
                expected: self.dims().to_vec(),
                actual: other.dims().to_vec(),
            });
        }
        Ok(())
    }

    pub fn max_abs_diff(&self, other: &Self) -> Result<f64> {
        self.expect_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    /// Rows of the leading axis, gathered in the given order.
    pub fn gather_rows(&self, rows: &[usize]) -> Result<Self> {
        let n = self.dims()[0];
        let width = self.len() / n;
        let mut data = Vec::with_capacity(rows.len() * width);
        for &r in rows {
            if r >= n {
                return Err(Error::InvalidArgument(format!(
                    "row {r} out of range for leading dim {n}"
                )));
            }
            data.extend_from_slice(&self.data[r * width..(r + 1) * width]);
        }
        let mut dims = self.dims().to_vec();
        dims[0] = rows.len();
        Self::from_vec(&dims, data)
    }

    /// Sum over the leading axis of a rank-2 tensor, giving a vector of
    /// column sums.
    pub fn sum_rows(&self) -> Result<Self> {
        let (m, n) = self.as_matrix_dims()?;
        let mut out = vec![0.0; n];
        for row in self.data.chunks_exact(n).take(m) {
            for (o, v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
        Self::from_vec(&[n], out)
    }

    fn as_matrix_dims(&self) -> Result<(usize, usize)> {
        match *self.dims() {
            [m, n] => Ok((m, n)),
            _ => Err(Error::InvalidArgument(format!(
                "expected a rank-2 tensor, got shape {:?}",
                self.dims()
            ))),
        }
    }

    /// Adds `bias` to every row of a rank-2 tensor, in place.
    pub fn add_row_vector(&mut self, bias: &[f64]) -> Result<()> {
        let (_, n) = self.as_matrix_dims()?;
        if bias.len() != n {
            return Err(Error::ShapeMismatch {
                expected: vec![n],
                actual: vec![bias.len()],
            });
        }
        for row in self.data.chunks_exact_mut(n) {
            for (v, b) in row.iter_mut().zip(bias) {
                *v += b;
            }
        }
        Ok(())
    }
}

/// Plain matrix product `(m,k)·(k,n)`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    matmul_counted(a, b, None)
}

/// Matrix product that records `m·k·n` multiply-adds on `counter`.
pub fn matmul_counted(a: &Tensor, b: &Tensor, counter: Option<&FlopCounter>) -> Result<Tensor> {
    let (m, k) = a.as_matrix_dims()?;
    let (k2, n) = b.as_matrix_dims()?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            expected: vec![k, n],
            actual: vec![k2, n],
        });
    }
    let mut out = vec![0.0; m * n];
    for (a_row, out_row) in a.data.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (&av, b_row) in a_row.iter().zip(b.data.chunks_exact(n)) {
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o += av * bv;
            }
        }
    }
    if let Some(c) = counter {
        c.add(m as u64 * k as u64 * n as u64);
    }
    Tensor::from_vec(&[m, n], out)
}

/// Axis order that moves `axis` to the end, keeping the others in order.
pub(crate) fn axes_moving_to_last(rank: usize, axis: usize) -> Vec<usize> {
    (0..rank).filter(|&a| a != axis).chain([axis]).collect()
}

/// Inverse of [`axes_moving_to_last`].
pub(crate) fn axes_restoring_from_last(rank: usize, axis: usize) -> Vec<usize> {
    let mut axes: Vec<usize> = (0..rank - 1).collect();
    axes.insert(axis, rank - 1);
    axes
}

/// Mode-k product `t ×ₖ w` where axis 0 is the batch and feature mode `k`
/// (counted from 1) lives at axis `k`. Every mode-k fiber `f` becomes `fᵀw`.
pub fn mode_k_product(t: &Tensor, w: &Tensor, k: usize) -> Result<Tensor> {
    mode_k_affine(t, w, None, k, None)
}

/// `t ×ₖ w` followed by adding `bias` along the transformed axis.
///
/// Runs as permute → reshape to `(rows, D_k)` → matmul → reshape → inverse
/// permute.
pub fn mode_k_affine(
    t: &Tensor,
    w: &Tensor,
    bias: Option<&Tensor>,
    k: usize,
    counter: Option<&FlopCounter>,
) -> Result<Tensor> {
    let rank = t.rank();
    if k == 0 || k >= rank {
        return Err(Error::ModeOutOfRange { mode: k, rank });
    }
    let (d_k, h_k) = w.as_matrix_dims()?;
    if t.dims()[k] != d_k {
        return Err(Error::ShapeMismatch {
            expected: vec![d_k, h_k],
            actual: vec![t.dims()[k], h_k],
        });
    }

    let to_last = axes_moving_to_last(rank, k);
    let moved = t.permute(&to_last)?;
    let moved_dims = moved.dims().to_vec();
    let rows = moved.len() / d_k;

    let x_mat = moved.into_reshape(&[rows, d_k])?;
    let mut y_mat = matmul_counted(&x_mat, w, counter)?;
    if let Some(b) = bias {
        y_mat.add_row_vector(b.data())?;
    }

    let mut y_dims = moved_dims;
    *y_dims.last_mut().expect("rank >= 2") = h_k;
    y_mat
        .into_reshape(&y_dims)?
        .permute(&axes_restoring_from_last(rank, k))
}
