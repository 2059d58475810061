//! Layer-wise parameter mixing, evaluated point-wise.
//!
//! Instead of materializing blended weights per sample, every affine layer
//! runs once per corner parameter set and the four outputs are combined with
//! the bilinear coefficients; feature lookups blend the four gathered
//! feature vectors the same way. By linearity this equals a forward pass
//! through explicitly premixed parameters, which the tests exercise as the
//! second route. Corners with exactly zero weight are skipped, so one-hot
//! weights reproduce the unmixed forward pass bit for bit.

use crate::diffnet::activation::{sigmoid, softplus, Activation};
use crate::diffnet::layer::{dot, LinearLayer};
use crate::diffnet::mlp::FieldOutput;
use crate::diffnet::{dir_encode, dir_encode_len};
use crate::error::{Error, Result};
use crate::featgrid::{accumulate_level, lookup_level};
use crate::interp::params::ModelParams;
use crate::num::Real;

/// y = sum_k w_k (W_k x + b_k) over the four corner layers.
pub fn mixed_linear<T: Real>(
    layers: [&LinearLayer<T>; 4],
    weights: [T; 4],
    x: &[T],
) -> Result<Vec<T>> {
    let (out_dim, in_dim) = (layers[0].out_dim, layers[0].in_dim);
    for lay in &layers {
        if lay.out_dim != out_dim || lay.in_dim != in_dim {
            return Err(Error::Shape("corner layers must share a common shape".into()));
        }
    }
    if x.len() != in_dim {
        return Err(Error::Shape(format!(
            "mixed linear input width {} != layer in_dim {in_dim}",
            x.len()
        )));
    }
    let mut y = vec![T::zero(); out_dim];
    let mut first = true;
    for k in 0..4 {
        let wk = weights[k];
        if wk == T::zero() {
            continue;
        }
        let lay = layers[k];
        if first {
            for o in 0..out_dim {
                y[o] = wk * (dot(lay.weight_row(o), x) + lay.bias[o]);
            }
            first = false;
        } else {
            for o in 0..out_dim {
                y[o] = y[o] + wk * (dot(lay.weight_row(o), x) + lay.bias[o]);
            }
        }
    }
    Ok(y)
}

/// Feature lookup with hashed levels blended across the four corner sets and
/// dense levels taken unmixed from shared storage. Concatenation order
/// matches the plain encoder.
pub fn mixed_grid_encode<T: Real>(
    params: &ModelParams<T>,
    net: usize,
    weights: [T; 4],
    x: [T; 3],
) -> Result<Vec<T>> {
    let layout = &params.arch.layouts[net];
    let interp = params.arch.nets[net].interpolated;
    let f = layout.cfg.features;
    for (axis, v) in x.iter().enumerate() {
        if !(v.abs() <= T::one()) {
            return Err(Error::Contract(format!(
                "query point outside [-1,1]^3 on axis {axis}: {v:?}"
            )));
        }
    }
    let mut out = vec![T::zero(); layout.feature_len()];
    for l in 0..layout.cfg.levels {
        let lk = lookup_level(
            layout.resolutions[l],
            layout.dense[l],
            layout.cfg.table_size,
            x,
        );
        let dst = &mut out[l * f..(l + 1) * f];
        if layout.dense[l] || !interp {
            accumulate_level(params.level_table(net, 0, l), &lk, T::one(), dst);
        } else {
            for k in 0..4 {
                if weights[k] == T::zero() {
                    continue;
                }
                accumulate_level(params.level_table(net, k, l), &lk, weights[k], dst);
            }
        }
    }
    Ok(out)
}

fn mixed_or_shared_linear<T: Real>(
    params: &ModelParams<T>,
    net: usize,
    layer: usize,
    weights: [T; 4],
    x: &[T],
) -> Result<Vec<T>> {
    if params.arch.nets[net].interpolated {
        mixed_linear(
            [
                params.layer(net, Some(0), layer),
                params.layer(net, Some(1), layer),
                params.layer(net, Some(2), layer),
                params.layer(net, Some(3), layer),
            ],
            weights,
            x,
        )
    } else {
        crate::diffnet::linear_apply(params.layer(net, None, layer), x)
    }
}

/// Density-only forward pass of one network (mixing applied per layer to
/// pre-activation outputs).
pub fn mixed_density<T: Real>(
    params: &ModelParams<T>,
    net: usize,
    weights: [T; 4],
    x: [T; 3],
) -> Result<T> {
    let arch = &params.arch.nets[net];
    let mut h = mixed_grid_encode(params, net, weights, x)?;
    for layer in 0..arch.geom_hidden_layers {
        h = mixed_or_shared_linear(params, net, layer, weights, &h)?;
        for v in &mut h {
            *v = Activation::Relu.apply(*v);
        }
    }
    let raw = mixed_or_shared_linear(params, net, arch.density_head_idx(), weights, &h)?;
    Ok(softplus(raw[0]))
}

/// Full forward pass of the final network: density plus view-dependent RGB.
pub fn mixed_forward<T: Real>(
    params: &ModelParams<T>,
    net: usize,
    weights: [T; 4],
    x: [T; 3],
    d: [T; 3],
) -> Result<FieldOutput<T>> {
    let arch = &params.arch.nets[net];
    if !arch.has_appearance {
        return Err(Error::Shape(format!(
            "network {net} has no appearance head"
        )));
    }
    let mut h = mixed_grid_encode(params, net, weights, x)?;
    for layer in 0..arch.geom_hidden_layers {
        h = mixed_or_shared_linear(params, net, layer, weights, &h)?;
        for v in &mut h {
            *v = Activation::Relu.apply(*v);
        }
    }
    let raw = mixed_or_shared_linear(params, net, arch.density_head_idx(), weights, &h)?;
    let density = softplus(raw[0]);

    let d_enc = dir_encode(d, arch.dir_degree)?;
    debug_assert_eq!(d_enc.len(), dir_encode_len(arch.dir_degree));
    let mut a: Vec<T> = h.iter().chain(d_enc.iter()).copied().collect();
    let start = arch.appearance_start_idx();
    for layer in 0..arch.app_hidden_layers {
        a = mixed_or_shared_linear(params, net, start + layer, weights, &a)?;
        for v in &mut a {
            *v = Activation::Relu.apply(*v);
        }
    }
    let rgb = mixed_or_shared_linear(params, net, start + arch.app_hidden_layers, weights, &a)?;
    Ok(FieldOutput {
        density,
        color: [sigmoid(rgb[0]), sigmoid(rgb[1]), sigmoid(rgb[2])],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featgrid::GridConfig;
    use crate::interp::arch::{ModelArch, NetworkArch};
    use crate::interp::params::VertexSet;
    use crate::rng::CounterRng;
    use approx::assert_relative_eq;
    use std::sync::Arc;

    fn test_model(seed: u64) -> ModelParams<f32> {
        let prop = NetworkArch::proposal(GridConfig::new(2, 1 << 6, 1, 4, 8), 8, false);
        let fin = NetworkArch::fina(GridConfig::new(3, 1 << 6, 2, 4, 16), 8, 1, 8, 2, true);
        let arch = Arc::new(ModelArch::new(vec![prop.clone(), prop, fin]).unwrap());
        let shared = ModelParams::init_shared(&arch, seed);
        let mut params = ModelParams::new(arch.clone(), shared);
        for c in 0..4 {
            params.corners[c] = Some(ModelParams::init_vertex(&arch, seed, c as u32, 9));
        }
        params
    }

    /// Build a model whose corner sets are all replaced by an explicit
    /// premix of the original four.
    fn premixed_model(src: &ModelParams<f32>, w: [f32; 4]) -> ModelParams<f32> {
        let mut out = src.clone();
        let arch = src.arch.clone();
        for (n, net) in arch.nets.iter().enumerate() {
            if !net.interpolated {
                continue;
            }
            let mix_sets: Vec<&VertexSet<f32>> =
                (0..4).map(|c| src.corners[c].as_ref().unwrap()).collect();
            let dst = out.corners[0].as_mut().unwrap().nets[n].as_mut().unwrap();
            for (slot, table) in dst.hashed.iter_mut().enumerate() {
                for (e, v) in table.data.iter_mut().enumerate() {
                    *v = (0..4)
                        .map(|k| w[k] * mix_sets[k].nets[n].as_ref().unwrap().hashed[slot].data[e])
                        .sum();
                }
            }
            for (li, layer) in dst.mlp.layers.iter_mut().enumerate() {
                for (e, v) in layer.weights.iter_mut().enumerate() {
                    *v = (0..4)
                        .map(|k| {
                            w[k] * mix_sets[k].nets[n].as_ref().unwrap().mlp.layers[li].weights[e]
                        })
                        .sum();
                }
                for (e, v) in layer.bias.iter_mut().enumerate() {
                    *v = (0..4)
                        .map(|k| w[k] * mix_sets[k].nets[n].as_ref().unwrap().mlp.layers[li].bias[e])
                        .sum();
                }
            }
        }
        out
    }

    #[test]
    fn identical_corner_layers_collapse_to_plain_apply() {
        let mut rng = CounterRng::from_key(3, &[1]);
        let lay = LinearLayer::<f64>::init(4, 6, &mut rng);
        let x: Vec<f64> = (0..6).map(|_| rng.uniform(-1.0, 1.0)).collect();
        let y = mixed_linear([&lay, &lay, &lay, &lay], [0.1, 0.2, 0.3, 0.4], &x).unwrap();
        let direct = crate::diffnet::linear_apply(&lay, &x).unwrap();
        for (a, b) in y.iter().zip(&direct) {
            assert_relative_eq!(a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn one_hot_weights_bit_match_single_layer() {
        let mut rng = CounterRng::from_key(4, &[2]);
        let lays: Vec<LinearLayer<f32>> =
            (0..4).map(|_| LinearLayer::init(5, 3, &mut rng)).collect();
        let x: Vec<f32> = (0..3).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
        let y = mixed_linear(
            [&lays[0], &lays[1], &lays[2], &lays[3]],
            [1.0, 0.0, 0.0, 0.0],
            &x,
        )
        .unwrap();
        let direct = crate::diffnet::linear_apply(&lays[0], &x).unwrap();
        assert_eq!(y, direct);
    }

    #[test]
    fn output_mixing_equals_weight_mixing() {
        let mut rng = CounterRng::from_key(5, &[3]);
        for _ in 0..100 {
            let lays: Vec<LinearLayer<f32>> =
                (0..4).map(|_| LinearLayer::init(6, 5, &mut rng)).collect();
            let x: Vec<f32> = (0..5).map(|_| rng.uniform(-1.0, 1.0) as f32).collect();
            let raw = [
                rng.next_f32(),
                rng.next_f32(),
                rng.next_f32(),
                rng.next_f32(),
            ];
            let total: f32 = raw.iter().sum();
            let w = [raw[0] / total, raw[1] / total, raw[2] / total, raw[3] / total];
            let by_output =
                mixed_linear([&lays[0], &lays[1], &lays[2], &lays[3]], w, &x).unwrap();
            // explicit premixed layer
            let mut mixed = LinearLayer::<f32>::zeros(6, 5);
            for k in 0..4 {
                for (e, m) in mixed.weights.iter_mut().enumerate() {
                    *m += w[k] * lays[k].weights[e];
                }
                for (e, m) in mixed.bias.iter_mut().enumerate() {
                    *m += w[k] * lays[k].bias[e];
                }
            }
            let by_params = crate::diffnet::linear_apply(&mixed, &x).unwrap();
            for (a, b) in by_output.iter().zip(&by_params) {
                assert!((a - b).abs() < 1e-5, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn encode_identical_tables_match_single_set() {
        let params = test_model(8);
        // make all corners identical to corner 0
        let mut same = params.clone();
        let c0 = same.corners[0].clone();
        for c in 1..4 {
            same.corners[c] = c0.clone();
        }
        let x = [0.3f32, -0.4, 0.25];
        let mixed = mixed_grid_encode(&same, 2, [0.25; 4], x).unwrap();
        let one = mixed_grid_encode(&same, 2, [1.0, 0.0, 0.0, 0.0], x).unwrap();
        for (a, b) in mixed.iter().zip(&one) {
            assert_relative_eq!(a, b, epsilon = 1e-6);
        }
    }

    #[test]
    fn encode_constant_tables_average() {
        let mut params = test_model(9);
        let consts = [0.1f32, 0.2, 0.3, 0.4];
        for c in 0..4 {
            let nv = params.corners[c].as_mut().unwrap().nets[2].as_mut().unwrap();
            for t in &mut nv.hashed {
                for v in &mut t.data {
                    *v = consts[c];
                }
            }
        }
        let layout = params.arch.layouts[2].clone();
        let x = [0.11f32, 0.52, -0.73];
        let out = mixed_grid_encode(&params, 2, [0.25; 4], x).unwrap();
        let mean = consts.iter().sum::<f32>() / 4.0;
        for l in 0..layout.cfg.levels {
            if layout.dense[l] {
                continue;
            }
            for f in 0..layout.cfg.features {
                assert_relative_eq!(out[l * 2 + f], mean, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn forward_one_hot_matches_premixed_one_hot() {
        let params = test_model(10);
        let x = [0.2f32, -0.1, 0.6];
        let d = [0.0f32, 0.0, 1.0];
        let w = [0.0, 0.0, 1.0, 0.0];
        let by_output = mixed_forward(&params, 2, w, x, d).unwrap();
        let pre = premixed_model(&params, w);
        let by_params = mixed_forward(&pre, 2, [1.0, 0.0, 0.0, 0.0], x, d).unwrap();
        assert_eq!(by_output, by_params);
    }

    #[test]
    fn forward_equals_premixed_within_single_precision() {
        let params = test_model(11);
        let mut rng = CounterRng::from_key(6, &[4]);
        let mut worst = 0f32;
        for _ in 0..100 {
            let x = [
                rng.uniform(-0.99, 0.99) as f32,
                rng.uniform(-0.99, 0.99) as f32,
                rng.uniform(-0.99, 0.99) as f32,
            ];
            let d = {
                let v = [
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                    rng.uniform(-1.0, 1.0),
                ];
                let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
                [
                    (v[0] / n) as f32,
                    (v[1] / n) as f32,
                    (v[2] / n) as f32,
                ]
            };
            let u = rng.next_f32();
            let v = rng.next_f32();
            let w = [
                (1.0 - u) * (1.0 - v),
                u * (1.0 - v),
                (1.0 - u) * v,
                u * v,
            ];
            let by_output = mixed_forward(&params, 2, w, x, d).unwrap();
            let pre = premixed_model(&params, w);
            let by_params = mixed_forward(&pre, 2, [1.0, 0.0, 0.0, 0.0], x, d).unwrap();
            worst = worst.max((by_output.density - by_params.density).abs());
            for ch in 0..3 {
                worst = worst.max((by_output.color[ch] - by_params.color[ch]).abs());
            }
        }
        assert!(worst < 1e-5, "max abs diff {worst}");
    }
}
