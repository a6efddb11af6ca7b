//! Small dense tensor containers used by the reference kernels.
//!
//! Weights are stored `C_out × h × k × C_in` with the input channel
//! innermost; activations are `height × width × channels`.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Mul};

use num_traits::Zero;
use serde::{Deserialize, Serialize};

/// Element type accepted by the reference kernels.
pub trait Scalar:
    Copy + Debug + Default + PartialEq + PartialOrd + Zero + Add<Output = Self> + Mul<Output = Self> + AddAssign + Send + Sync + 'static
{
}

impl Scalar for i32 {}
impl Scalar for i64 {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Four dimensional weight tensor, layout `[out, h, k, in]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor4<T> {
    dims: [usize; 4],
    data: Vec<T>,
}

impl<T: Scalar> Tensor4<T> {
    pub fn zeros(dims: [usize; 4]) -> Self {
        Self { dims, data: vec![T::zero(); dims.iter().product()] }
    }

    /// Wraps `data`; returns `None` when the length does not match `dims`.
    pub fn from_vec(dims: [usize; 4], data: Vec<T>) -> Option<Self> {
        (data.len() == dims.iter().product::<usize>()).then_some(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 4], mut f: impl FnMut([usize; 4]) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for o in 0..dims[0] {
            for y in 0..dims[1] {
                for x in 0..dims[2] {
                    for i in 0..dims[3] {
                        data.push(f([o, y, x, i]));
                    }
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn out_channels(&self) -> usize {
        self.dims[0]
    }

    pub fn in_channels(&self) -> usize {
        self.dims[3]
    }

    pub fn kernel(&self) -> (usize, usize) {
        (self.dims[1], self.dims[2])
    }

    #[inline]
    pub fn index(&self, idx: [usize; 4]) -> usize {
        ((idx[0] * self.dims[1] + idx[1]) * self.dims[2] + idx[2]) * self.dims[3] + idx[3]
    }

    #[inline]
    pub fn get(&self, idx: [usize; 4]) -> T {
        self.data[self.index(idx)]
    }

    #[inline]
    pub fn set(&mut self, idx: [usize; 4], v: T) {
        let i = self.index(idx);
        self.data[i] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn map<U: Scalar>(&self, f: impl Fn(T) -> U) -> Tensor4<U> {
        Tensor4 { dims: self.dims, data: self.data.iter().map(|&v| f(v)).collect() }
    }
}

/// Activation tensor, layout `[height, width, channels]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor3<T> {
    dims: [usize; 3],
    data: Vec<T>,
}

impl<T: Scalar> Tensor3<T> {
    pub fn zeros(dims: [usize; 3]) -> Self {
        Self { dims, data: vec![T::zero(); dims.iter().product()] }
    }

    pub fn from_vec(dims: [usize; 3], data: Vec<T>) -> Option<Self> {
        (data.len() == dims.iter().product::<usize>()).then_some(Self { dims, data })
    }

    pub fn from_fn(dims: [usize; 3], mut f: impl FnMut([usize; 3]) -> T) -> Self {
        let mut data = Vec::with_capacity(dims.iter().product());
        for y in 0..dims[0] {
            for x in 0..dims[1] {
                for c in 0..dims[2] {
                    data.push(f([y, x, c]));
                }
            }
        }
        Self { dims, data }
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn height(&self) -> usize {
        self.dims[0]
    }

    pub fn width(&self) -> usize {
        self.dims[1]
    }

    pub fn channels(&self) -> usize {
        self.dims[2]
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.data[(y * self.dims[1] + x) * self.dims[2] + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: T) {
        let i = (y * self.dims[1] + x) * self.dims[2] + c;
        self.data[i] = v;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    /// Copies rows `[start, end)` into a new tensor.
    pub fn rows(&self, start: usize, end: usize) -> Self {
        let row = self.dims[1] * self.dims[2];
        Self { dims: [end - start, self.dims[1], self.dims[2]], data: self.data[start * row..end * row].to_vec() }
    }

    /// Copies columns `[start, end)` into a new tensor.
    pub fn cols(&self, start: usize, end: usize) -> Self {
        Self::from_fn([self.dims[0], end - start, self.dims[2]], |[y, x, c]| self.get(y, start + x, c))
    }

    /// Copies channels `[start, end)` into a new tensor.
    pub fn channel_range(&self, start: usize, end: usize) -> Self {
        Self::from_fn([self.dims[0], self.dims[1], end - start], |[y, x, c]| self.get(y, x, start + c))
    }

    /// Writes `src` into this tensor with its origin at `(y0, x0, c0)`.
    pub fn paste(&mut self, src: &Self, y0: usize, x0: usize, c0: usize) {
        for y in 0..src.dims[0] {
            for x in 0..src.dims[1] {
                for c in 0..src.dims[2] {
                    self.set(y0 + y, x0 + x, c0 + c, src.get(y, x, c));
                }
            }
        }
    }
}

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Scalar> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self { rows, cols, data: vec![T::zero(); rows * cols] }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |r, c| self.get(c, r))
    }

    /// Plain triple loop product.
    pub fn matmul(&self, rhs: &Self) -> Self {
        assert_eq!(self.cols, rhs.rows, "inner dimensions");
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(i, k);
                for j in 0..rhs.cols {
                    let idx = i * out.cols + j;
                    out.data[idx] += a * rhs.get(k, j);
                }
            }
        }
        out
    }
}
