//! Element-wise activations and their derivatives.

use crate::num::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum Activation {
    Relu,
    Softplus,
    Sigmoid,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    x
                } else {
                    T::zero()
                }
            }
            Activation::Softplus => softplus(x),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given the pre-activation input `x` and the output `y`.
    #[inline]
    pub fn derivative<T: Real>(self, x: T, y: T) -> T {
        match self {
            Activation::Relu => {
                if x > T::zero() {
                    T::one()
                } else {
                    T::zero()
                }
            }
            Activation::Softplus => sigmoid(x),
            Activation::Sigmoid => y * (T::one() - y),
        }
    }
}

/// ln(1 + e^x), computed without overflow for large |x|.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    let zero = T::zero();
    let m = if x > zero { x } else { zero };
    m + ((x - m).exp() + (-m).exp()).ln()
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    let one = T::one();
    if x >= T::zero() {
        one / (one + (-x).exp())
    } else {
        let e = x.exp();
        e / (one + e)
    }
}

/// Element-wise application to a vector, per the activation's kind.
pub fn activation_apply<T: Real>(kind: Activation, x: &[T]) -> Vec<T> {
    x.iter().map(|&v| kind.apply(v)).collect()
}
