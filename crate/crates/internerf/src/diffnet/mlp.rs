//! Geometry and appearance heads, evaluated point-wise.
//!
//! These are the plain (non-tape) forward passes. The batched tape ops must
//! stay bit-compatible with them; the mixing-degeneracy tests pin that down.

use crate::diffnet::activation::{softplus, Activation};
use crate::diffnet::layer::{linear_apply, LinearLayer};
use crate::error::Result;
use crate::num::Real;

/// Per-sample field prediction: nonnegative density and RGB in (0,1).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldOutput<T> {
    pub density: T,
    pub color: [T; 3],
}

/// Hidden stack with ReLU, then a scalar density head through softplus.
/// Returns the density and the last hidden activation (the bottleneck fed
/// to the appearance network).
pub fn geometry_mlp<T: Real>(
    hidden: &[LinearLayer<T>],
    head: &LinearLayer<T>,
    z: &[T],
) -> Result<(T, Vec<T>)> {
    let mut h = z.to_vec();
    for layer in hidden {
        h = linear_apply(layer, &h)?;
        for v in &mut h {
            *v = Activation::Relu.apply(*v);
        }
    }
    let raw = linear_apply(head, &h)?;
    Ok((softplus(raw[0]), h))
}

/// Hidden stack with ReLU over [bottleneck, encoded direction], then an RGB
/// head through sigmoid.
pub fn appearance_mlp<T: Real>(
    hidden: &[LinearLayer<T>],
    head: &LinearLayer<T>,
    bottleneck: &[T],
    d_enc: &[T],
) -> Result<[T; 3]> {
    let mut h: Vec<T> = bottleneck.iter().chain(d_enc.iter()).copied().collect();
    for layer in hidden {
        h = linear_apply(layer, &h)?;
        for v in &mut h {
            *v = Activation::Relu.apply(*v);
        }
    }
    let raw = linear_apply(head, &h)?;
    Ok([
        Activation::Sigmoid.apply(raw[0]),
        Activation::Sigmoid.apply(raw[1]),
        Activation::Sigmoid.apply(raw[2]),
    ])
}
