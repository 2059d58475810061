//! Frequency encoding of view directions.

use crate::error::{Error, Result};
use crate::num::Real;

/// Encode a unit direction as [sin(2^k d_j), cos(2^k d_j)] for k < degree,
/// j in {x, y, z}: per octave, three sines then three cosines. Output length
/// is 6 * degree.
pub fn dir_encode<T: Real>(d: [T; 3], degree: usize) -> Result<Vec<T>> {
    let norm = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if (norm - T::one()).abs() > T::lit(1e-6) {
        return Err(Error::Contract(format!(
            "dir_encode expects a unit direction, |d| = {norm:?}"
        )));
    }
    let mut out = Vec::with_capacity(6 * degree);
    let mut freq = T::one();
    for _ in 0..degree {
        for a in 0..3 {
            out.push((d[a] * freq).sin());
        }
        for a in 0..3 {
            out.push((d[a] * freq).cos());
        }
        freq = freq + freq;
    }
    Ok(out)
}

pub fn dir_encode_len(degree: usize) -> usize {
    6 * degree
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_x_degree_one() {
        let e = dir_encode([1.0f64, 0.0, 0.0], 1).unwrap();
        let expect = [1.0f64.sin(), 0.0, 0.0, 1.0f64.cos(), 1.0, 1.0];
        assert_eq!(e.len(), 6);
        for (a, b) in e.iter().zip(&expect) {
            assert_relative_eq!(a, b, epsilon = 1e-15);
        }
    }

    #[test]
    fn degree_zero_is_empty() {
        assert!(dir_encode([0.0f64, 0.0, 1.0], 0).unwrap().is_empty());
    }

    #[test]
    fn outputs_bounded_by_one() {
        let inv = 1.0 / 3.0f64.sqrt();
        let e = dir_encode([inv, inv, inv], 4).unwrap();
        assert_eq!(e.len(), 24);
        assert!(e.iter().all(|v| v.abs() <= 1.0));
    }

    #[test]
    fn non_unit_direction_rejected() {
        assert!(dir_encode([1.0f64, 1.0, 0.0], 2).is_err());
    }
}
