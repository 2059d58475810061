//! Dense affine layer: y = W x + b.

use crate::error::{Error, Result};
use crate::num::Real;
use crate::rng::CounterRng;

/// Weights are row-major with shape (out_dim, in_dim).
#[derive(Clone, Debug, PartialEq)]
pub struct LinearLayer<T> {
    pub out_dim: usize,
    pub in_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Real> LinearLayer<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        LinearLayer {
            out_dim,
            in_dim,
            weights: vec![T::zero(); out_dim * in_dim],
            bias: vec![T::zero(); out_dim],
        }
    }

    /// Uniform init in [-s, s] with s = 1/sqrt(in_dim); zero bias.
    pub fn init(out_dim: usize, in_dim: usize, rng: &mut CounterRng) -> Self {
        let s = 1.0 / (in_dim as f64).sqrt();
        let mut layer = Self::zeros(out_dim, in_dim);
        for w in &mut layer.weights {
            *w = T::lit(rng.uniform(-s, s));
        }
        layer
    }

    #[inline]
    pub fn weight_row(&self, o: usize) -> &[T] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (x, y) in a.iter().zip(b) {
        acc = acc + *x * *y;
    }
    acc
}

/// y = W x + b.
pub fn linear_apply<T: Real>(layer: &LinearLayer<T>, x: &[T]) -> Result<Vec<T>> {
    if x.len() != layer.in_dim {
        return Err(Error::Shape(format!(
            "linear layer expects input of width {}, got {}",
            layer.in_dim,
            x.len()
        )));
    }
    let mut y = Vec::with_capacity(layer.out_dim);
    for o in 0..layer.out_dim {
        y.push(dot(layer.weight_row(o), x) + layer.bias[o]);
    }
    Ok(y)
}
