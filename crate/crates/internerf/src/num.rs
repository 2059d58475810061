//! Scalar abstraction: training runs in f32, gradient checks in f64.

use num_traits::Float;

/// Shorthand bound for everything the numeric kernels need.
pub trait Real: Float + std::fmt::Debug + std::iter::Sum + Send + Sync + 'static {
    fn lit(x: f64) -> Self;
    fn to_f64_lossy(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn lit(x: f64) -> Self {
        x as f32
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn lit(x: f64) -> Self {
        x
    }
    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self
    }
}

/// Row-major dense matrix of `rows * cols` scalars. The workhorse buffer for
/// tape node values: per-sample feature blocks live in rows.
#[derive(Clone, Debug, PartialEq)]
pub struct Buf<T> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<T>,
}

impl<T: Real> Buf<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Buf {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(rows * cols, data.len(), "buffer shape mismatch");
        Buf { rows, cols, data }
    }

    pub fn row_vec(data: Vec<T>) -> Self {
        Buf {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [T] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
}
