//! Reverse-mode gradient tape over batched buffers.
//!
//! Ops are pushed eagerly: each push evaluates the forward result against a
//! parameter snapshot and records enough to replay the value and to
//! accumulate adjoints for every parameter buffer and every `input` node.
//! Rows of a buffer are samples; mixing weights ride along as op payload
//! (they are functions of camera origin, never differentiated).

use crate::diffnet::activation::Activation;
use crate::diffnet::layer::dot;
use crate::error::{Error, Result};
use crate::featgrid::{accumulate_level, lookup_level, scatter_level};
use crate::interp::params::{ModelGrads, ModelParams, ParamRef};
use crate::num::{Buf, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(pub usize);

#[derive(Clone, Debug)]
pub enum Op<T> {
    Constant(Buf<T>),
    Input(Buf<T>),
    /// y = W x + b rows, layer taken from `net`/`corner`/`layer`.
    Linear {
        net: u8,
        corner: Option<u8>,
        layer: u8,
        x: NodeId,
    },
    /// y_n = sum_k mixw[n,k] (W_k x_n + b_k) over the four resident corners.
    MixedLinear {
        net: u8,
        layer: u8,
        x: NodeId,
        mixw: Buf<T>,
    },
    Activation {
        kind: Activation,
        x: NodeId,
    },
    /// Multiresolution feature lookup; positions are rows of `pos`.
    Encode {
        net: u8,
        pos: NodeId,
        mixw: Option<Buf<T>>,
    },
    Concat {
        a: NodeId,
        b: NodeId,
    },
    /// Per-ray rendering weights w_i = T_i (1 - exp(-tau_i delta_i)).
    RenderWeights {
        tau: NodeId,
        bounds: Buf<T>,
    },
    /// C_r = sum_i w[r,i] c[r*S+i].
    WeightedColorSum {
        weights: NodeId,
        colors: NodeId,
    },
    MseLoss {
        pred: NodeId,
        target: Buf<T>,
        scale: T,
    },
    UnityLoss {
        weights: NodeId,
        scale: T,
    },
    /// Histogram under-estimation penalty against a detached final
    /// histogram.
    ProposalLoss {
        prop_w: NodeId,
        prop_bounds: Buf<T>,
        final_w: Buf<T>,
        final_bounds: Buf<T>,
        scale: T,
    },
    WeightedSum {
        parts: Vec<(NodeId, T)>,
    },
    ElemMul {
        a: NodeId,
        b: NodeId,
    },
    SumAll {
        x: NodeId,
    },
}

pub struct Tape<'a, T: Real> {
    params: &'a ModelParams<T>,
    ops: Vec<Op<T>>,
    values: Vec<Buf<T>>,
    grad: Vec<bool>,
}

/// Node adjoints produced by `backprop`. Interior slots are consumed during
/// the sweep; `Input` leaves keep theirs.
pub struct Adjoints<T>(Vec<Option<Buf<T>>>);

impl<T> Adjoints<T> {
    pub fn get(&self, id: NodeId) -> Option<&Buf<T>> {
        self.0.get(id.0).and_then(|o| o.as_ref())
    }
}

impl<'a, T: Real> Tape<'a, T> {
    pub fn new(params: &'a ModelParams<T>) -> Self {
        Tape {
            params,
            ops: Vec::new(),
            values: Vec::new(),
            grad: Vec::new(),
        }
    }

    pub fn params(&self) -> &ModelParams<T> {
        self.params
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Buf<T> {
        &self.values[id.0]
    }

    pub fn scalar(&self, id: NodeId) -> T {
        debug_assert_eq!(self.values[id.0].len(), 1);
        self.values[id.0].data[0]
    }

    fn push(&mut self, op: Op<T>, value: Buf<T>, grad: bool) -> NodeId {
        self.ops.push(op);
        self.values.push(value);
        self.grad.push(grad);
        NodeId(self.ops.len() - 1)
    }

    pub fn constant(&mut self, b: Buf<T>) -> NodeId {
        self.push(Op::Constant(b.clone()), b, false)
    }

    pub fn input(&mut self, b: Buf<T>) -> NodeId {
        self.push(Op::Input(b.clone()), b, true)
    }

    pub fn linear(
        &mut self,
        net: usize,
        corner: Option<usize>,
        layer: usize,
        x: NodeId,
    ) -> Result<NodeId> {
        let op = Op::Linear {
            net: net as u8,
            corner: corner.map(|c| c as u8),
            layer: layer as u8,
            x,
        };
        let value = eval_op(&op, &self.values, self.params)?;
        Ok(self.push(op, value, true))
    }

    pub fn mixed_linear(
        &mut self,
        net: usize,
        layer: usize,
        mixw: Buf<T>,
        x: NodeId,
    ) -> Result<NodeId> {
        if mixw.cols != 4 || mixw.rows != self.values[x.0].rows {
            return Err(Error::Shape(format!(
                "mix weights must be rows x 4 aligned with input rows ({} vs {})",
                mixw.rows, self.values[x.0].rows
            )));
        }
        let op = Op::MixedLinear {
            net: net as u8,
            layer: layer as u8,
            x,
            mixw,
        };
        let value = eval_op(&op, &self.values, self.params)?;
        Ok(self.push(op, value, true))
    }

    pub fn activation(&mut self, kind: Activation, x: NodeId) -> NodeId {
        let op = Op::Activation { kind, x };
        let value = eval_op(&op, &self.values, self.params).expect("activation is total");
        let grad = self.grad[x.0];
        self.push(op, value, grad)
    }

    pub fn encode(&mut self, net: usize, pos: NodeId, mixw: Option<Buf<T>>) -> Result<NodeId> {
        if let Some(w) = &mixw {
            if w.cols != 4 || w.rows != self.values[pos.0].rows {
                return Err(Error::Shape(
                    "encode mix weights must be rows x 4 aligned with positions".into(),
                ));
            }
        }
        if self.params.arch.nets[net].interpolated && mixw.is_none() {
            return Err(Error::Shape(
                "interpolated network requires mix weights for encoding".into(),
            ));
        }
        let op = Op::Encode {
            net: net as u8,
            pos,
            mixw,
        };
        let value = eval_op(&op, &self.values, self.params)?;
        Ok(self.push(op, value, true))
    }

    pub fn concat(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let op = Op::Concat { a, b };
        let value = eval_op(&op, &self.values, self.params)?;
        let grad = self.grad[a.0] || self.grad[b.0];
        Ok(self.push(op, value, grad))
    }

    pub fn render_weights(&mut self, tau: NodeId, bounds: Buf<T>) -> Result<NodeId> {
        let intervals = bounds.cols.saturating_sub(1);
        if bounds.rows * intervals != self.values[tau.0].len() {
            return Err(Error::Shape(format!(
                "render weights: {} densities vs {} rays x {} intervals",
                self.values[tau.0].len(),
                bounds.rows,
                intervals
            )));
        }
        let op = Op::RenderWeights { tau, bounds };
        let value = eval_op(&op, &self.values, self.params)?;
        let grad = self.grad[tau.0];
        Ok(self.push(op, value, grad))
    }

    pub fn weighted_color_sum(&mut self, weights: NodeId, colors: NodeId) -> Result<NodeId> {
        let op = Op::WeightedColorSum { weights, colors };
        let value = eval_op(&op, &self.values, self.params)?;
        let grad = self.grad[weights.0] || self.grad[colors.0];
        Ok(self.push(op, value, grad))
    }

    pub fn mse_loss(&mut self, pred: NodeId, target: Buf<T>, scale: T) -> Result<NodeId> {
        if target.rows != self.values[pred.0].rows || target.cols != self.values[pred.0].cols {
            return Err(Error::Shape("mse target shape mismatch".into()));
        }
        let op = Op::MseLoss {
            pred,
            target,
            scale,
        };
        let value = eval_op(&op, &self.values, self.params)?;
        let grad = self.grad[pred.0];
        Ok(self.push(op, value, grad))
    }

    pub fn unity_loss(&mut self, weights: NodeId, scale: T) -> Result<NodeId> {
        let op = Op::UnityLoss { weights, scale };
        let value = eval_op(&op, &self.values, self.params)?;
        let grad = self.grad[weights.0];
        Ok(self.push(op, value, grad))
    }

    pub fn proposal_loss(
        &mut self,
        prop_w: NodeId,
        prop_bounds: Buf<T>,
        final_w: Buf<T>,
        final_bounds: Buf<T>,
        scale: T,
    ) -> Result<NodeId> {
        let pw = &self.values[prop_w.0];
        if prop_bounds.rows != final_bounds.rows
            || pw.len() != prop_bounds.rows * (prop_bounds.cols - 1)
            || final_w.len() != final_bounds.rows * (final_bounds.cols - 1)
        {
            return Err(Error::Shape("proposal loss histogram shapes misaligned".into()));
        }
        let op = Op::ProposalLoss {
            prop_w,
            prop_bounds,
            final_w,
            final_bounds,
            scale,
        };
        let value = eval_op(&op, &self.values, self.params)?;
        let grad = self.grad[prop_w.0];
        Ok(self.push(op, value, grad))
    }

    pub fn weighted_sum(&mut self, parts: Vec<(NodeId, T)>) -> Result<NodeId> {
        for (id, _) in &parts {
            if self.values[id.0].len() != 1 {
                return Err(Error::Shape("weighted_sum expects scalar nodes".into()));
            }
        }
        let grad = parts.iter().any(|(id, _)| self.grad[id.0]);
        let op = Op::WeightedSum { parts };
        let value = eval_op(&op, &self.values, self.params)?;
        Ok(self.push(op, value, grad))
    }

    pub fn elem_mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let op = Op::ElemMul { a, b };
        let value = eval_op(&op, &self.values, self.params)?;
        let grad = self.grad[a.0] || self.grad[b.0];
        Ok(self.push(op, value, grad))
    }

    pub fn sum_all(&mut self, x: NodeId) -> NodeId {
        let op = Op::SumAll { x };
        let value = eval_op(&op, &self.values, self.params).expect("sum is total");
        let grad = self.grad[x.0];
        self.push(op, value, grad)
    }

    /// Re-execute every recorded op against the parameter snapshot and
    /// return the recomputed values (bit-identical to the recorded ones as
    /// long as the parameters have not moved).
    pub fn replay(&self) -> Result<Vec<Buf<T>>> {
        let mut values: Vec<Buf<T>> = Vec::with_capacity(self.ops.len());
        for op in &self.ops {
            let v = eval_op(op, &values, self.params)?;
            values.push(v);
        }
        Ok(values)
    }

    /// Reverse sweep from a scalar output. Parameter gradients accumulate
    /// into `grads`; input-node adjoints are returned.
    pub fn backprop(&self, out: NodeId, grads: &mut ModelGrads<T>) -> Result<Adjoints<T>> {
        if out.0 >= self.ops.len() {
            return Err(Error::Contract(format!(
                "backprop output node {} is not on the tape",
                out.0
            )));
        }
        if self.values[out.0].len() != 1 {
            return Err(Error::Contract(
                "backprop expects a scalar output node".into(),
            ));
        }
        let mut adj: Vec<Option<Buf<T>>> = vec![None; self.ops.len()];
        adj[out.0] = Some(Buf::from_vec(1, 1, vec![T::one()]));
        for i in (0..=out.0).rev() {
            if !self.grad[i] {
                adj[i] = None;
                continue;
            }
            let Some(up) = ({
                match &self.ops[i] {
                    Op::Input(_) | Op::Constant(_) => continue, // leaves keep adjoints
                    _ => adj[i].take(),
                }
            }) else {
                continue;
            };
            self.backward_op(i, &up, &mut adj, grads);
        }
        Ok(Adjoints(adj))
    }

    fn add_adj(adj: &mut [Option<Buf<T>>], id: NodeId, rows: usize, cols: usize) -> &mut Buf<T> {
        adj[id.0].get_or_insert_with(|| Buf::zeros(rows, cols))
    }

    fn backward_op(
        &self,
        i: usize,
        up: &Buf<T>,
        adj: &mut Vec<Option<Buf<T>>>,
        grads: &mut ModelGrads<T>,
    ) {
        match &self.ops[i] {
            Op::Constant(_) | Op::Input(_) => {}
            Op::Linear {
                net,
                corner,
                layer,
                x,
            } => {
                let xv = &self.values[x.0];
                let lay = self
                    .params
                    .layer(*net as usize, corner.map(|c| c as usize), *layer as usize);
                let (wref, bref) = match corner {
                    Some(c) => (
                        ParamRef::VertexWeight {
                            corner: *c,
                            net: *net,
                            layer: *layer,
                        },
                        ParamRef::VertexBias {
                            corner: *c,
                            net: *net,
                            layer: *layer,
                        },
                    ),
                    None => (
                        ParamRef::SharedWeight {
                            net: *net,
                            layer: *layer,
                        },
                        ParamRef::SharedBias {
                            net: *net,
                            layer: *layer,
                        },
                    ),
                };
                let (out_dim, in_dim) = (lay.out_dim, lay.in_dim);
                let track_x = self.grad[x.0];
                {
                    let gw = grads.accum(wref, out_dim * in_dim);
                    for n in 0..xv.rows {
                        let xr = xv.row(n);
                        let ur = up.row(n);
                        for o in 0..out_dim {
                            let u = ur[o];
                            if u == T::zero() {
                                continue;
                            }
                            let gw_row = &mut gw[o * in_dim..(o + 1) * in_dim];
                            for (g, xi) in gw_row.iter_mut().zip(xr) {
                                *g = *g + u * *xi;
                            }
                        }
                    }
                }
                {
                    let gb = grads.accum(bref, out_dim);
                    for n in 0..xv.rows {
                        let ur = up.row(n);
                        for o in 0..out_dim {
                            gb[o] = gb[o] + ur[o];
                        }
                    }
                }
                if track_x {
                    let gx = Self::add_adj(adj, *x, xv.rows, xv.cols);
                    for n in 0..xv.rows {
                        let ur = up.row(n);
                        let gxr = gx.row_mut(n);
                        for o in 0..out_dim {
                            let u = ur[o];
                            if u == T::zero() {
                                continue;
                            }
                            let wrow = lay.weight_row(o);
                            for (g, w) in gxr.iter_mut().zip(wrow) {
                                *g = *g + u * *w;
                            }
                        }
                    }
                }
            }
            Op::MixedLinear {
                net,
                layer,
                x,
                mixw,
            } => {
                let xv = &self.values[x.0];
                let track_x = self.grad[x.0];
                let lay0 = self.params.layer(*net as usize, Some(0), *layer as usize);
                let (out_dim, in_dim) = (lay0.out_dim, lay0.in_dim);
                for k in 0..4usize {
                    let any = (0..mixw.rows).any(|n| mixw.row(n)[k] != T::zero());
                    if !any {
                        continue;
                    }
                    let wref = ParamRef::VertexWeight {
                        corner: k as u8,
                        net: *net,
                        layer: *layer,
                    };
                    let bref = ParamRef::VertexBias {
                        corner: k as u8,
                        net: *net,
                        layer: *layer,
                    };
                    {
                        let gw = grads.accum(wref, out_dim * in_dim);
                        for n in 0..xv.rows {
                            let wk = mixw.row(n)[k];
                            if wk == T::zero() {
                                continue;
                            }
                            let xr = xv.row(n);
                            let ur = up.row(n);
                            for o in 0..out_dim {
                                let u = ur[o] * wk;
                                if u == T::zero() {
                                    continue;
                                }
                                let gw_row = &mut gw[o * in_dim..(o + 1) * in_dim];
                                for (g, xi) in gw_row.iter_mut().zip(xr) {
                                    *g = *g + u * *xi;
                                }
                            }
                        }
                    }
                    let gb = grads.accum(bref, out_dim);
                    for n in 0..xv.rows {
                        let wk = mixw.row(n)[k];
                        if wk == T::zero() {
                            continue;
                        }
                        let ur = up.row(n);
                        for o in 0..out_dim {
                            gb[o] = gb[o] + wk * ur[o];
                        }
                    }
                }
                if track_x {
                    let mut gx = Buf::zeros(xv.rows, xv.cols);
                    for n in 0..xv.rows {
                        let ur = up.row(n);
                        let gxr = gx.row_mut(n);
                        for k in 0..4usize {
                            let wk = mixw.row(n)[k];
                            if wk == T::zero() {
                                continue;
                            }
                            let lay = self.params.layer(*net as usize, Some(k), *layer as usize);
                            for o in 0..out_dim {
                                let u = ur[o] * wk;
                                if u == T::zero() {
                                    continue;
                                }
                                let wrow = lay.weight_row(o);
                                for (g, w) in gxr.iter_mut().zip(wrow) {
                                    *g = *g + u * *w;
                                }
                            }
                        }
                    }
                    let dst = Self::add_adj(adj, *x, xv.rows, xv.cols);
                    for (d, s) in dst.data.iter_mut().zip(&gx.data) {
                        *d = *d + *s;
                    }
                }
            }
            Op::Activation { kind, x } => {
                let xv = &self.values[x.0];
                let yv = &self.values[i];
                let gx = Self::add_adj(adj, *x, xv.rows, xv.cols);
                for ((g, (&xi, &yi)), &u) in gx
                    .data
                    .iter_mut()
                    .zip(xv.data.iter().zip(&yv.data))
                    .zip(&up.data)
                {
                    *g = *g + kind.derivative(xi, yi) * u;
                }
            }
            Op::Encode { net, pos, mixw } => {
                self.backward_encode(*net as usize, *pos, mixw.as_ref(), up, adj, grads);
            }
            Op::Concat { a, b } => {
                let av = &self.values[a.0];
                let bv = &self.values[b.0];
                if self.grad[a.0] {
                    let ga = Self::add_adj(adj, *a, av.rows, av.cols);
                    for n in 0..av.rows {
                        let ur = up.row(n);
                        let gr = ga.row_mut(n);
                        for c in 0..av.cols {
                            gr[c] = gr[c] + ur[c];
                        }
                    }
                }
                if self.grad[b.0] {
                    let gb = Self::add_adj(adj, *b, bv.rows, bv.cols);
                    for n in 0..bv.rows {
                        let ur = up.row(n);
                        let gr = gb.row_mut(n);
                        for c in 0..bv.cols {
                            gr[c] = gr[c] + ur[av.cols + c];
                        }
                    }
                }
            }
            Op::RenderWeights { tau, bounds } => {
                let tv = &self.values[tau.0];
                let rays = bounds.rows;
                let s = bounds.cols - 1;
                let gt = Self::add_adj(adj, *tau, tv.rows, tv.cols);
                let mut trans_after = vec![T::zero(); s];
                let mut weights = vec![T::zero(); s];
                for r in 0..rays {
                    let b = bounds.row(r);
                    let taus = &tv.data[r * s..(r + 1) * s];
                    let mut trans = T::one();
                    for idx in 0..s {
                        let delta = b[idx + 1] - b[idx];
                        let e = (-taus[idx] * delta).exp();
                        weights[idx] = trans * (T::one() - e);
                        trans = trans * e;
                        trans_after[idx] = trans;
                    }
                    let ur = &up.data[r * s..(r + 1) * s];
                    let mut suffix = T::zero();
                    for j in (0..s).rev() {
                        let delta = b[j + 1] - b[j];
                        let g = delta * (ur[j] * trans_after[j] - suffix);
                        gt.data[r * s + j] = gt.data[r * s + j] + g;
                        suffix = suffix + weights[j] * ur[j];
                    }
                }
            }
            Op::WeightedColorSum { weights, colors } => {
                let wv = &self.values[weights.0];
                let cv = &self.values[colors.0];
                let rays = wv.rows;
                let s = wv.cols;
                if self.grad[weights.0] {
                    let gw = Self::add_adj(adj, *weights, wv.rows, wv.cols);
                    for r in 0..rays {
                        let ur = up.row(r);
                        for idx in 0..s {
                            let cr = cv.row(r * s + idx);
                            let mut acc = T::zero();
                            for ch in 0..3 {
                                acc = acc + cr[ch] * ur[ch];
                            }
                            gw.data[r * s + idx] = gw.data[r * s + idx] + acc;
                        }
                    }
                }
                if self.grad[colors.0] {
                    let gc = Self::add_adj(adj, *colors, cv.rows, cv.cols);
                    for r in 0..rays {
                        let ur = up.row(r);
                        for idx in 0..s {
                            let w = wv.data[r * s + idx];
                            let gr = gc.row_mut(r * s + idx);
                            for ch in 0..3 {
                                gr[ch] = gr[ch] + w * ur[ch];
                            }
                        }
                    }
                }
            }
            Op::MseLoss {
                pred,
                target,
                scale,
            } => {
                let pv = &self.values[pred.0];
                let u = up.data[0];
                let gp = Self::add_adj(adj, *pred, pv.rows, pv.cols);
                let two = T::lit(2.0);
                for ((g, &p), &t) in gp.data.iter_mut().zip(&pv.data).zip(&target.data) {
                    *g = *g + two * *scale * (p - t) * u;
                }
            }
            Op::UnityLoss { weights, scale } => {
                let wv = &self.values[weights.0];
                let u = up.data[0];
                let gw = Self::add_adj(adj, *weights, wv.rows, wv.cols);
                let two = T::lit(2.0);
                for r in 0..wv.rows {
                    let total: T = wv.row(r).iter().copied().sum();
                    let g = two * *scale * (total - T::one()) * u;
                    for gi in gw.row_mut(r) {
                        *gi = *gi + g;
                    }
                }
            }
            Op::ProposalLoss {
                prop_w,
                prop_bounds,
                final_w,
                final_bounds,
                scale,
            } => {
                let pv = &self.values[prop_w.0];
                let u = up.data[0];
                let gp = Self::add_adj(adj, *prop_w, pv.rows, pv.cols);
                let sp = prop_bounds.cols - 1;
                let sf = final_bounds.cols - 1;
                let two = T::lit(2.0);
                for r in 0..prop_bounds.rows {
                    let pb = prop_bounds.row(r);
                    let fb = final_bounds.row(r);
                    let pw = &pv.data[r * sp..(r + 1) * sp];
                    let fw = &final_w.data[r * sf..(r + 1) * sf];
                    let mut j0 = 0usize;
                    for fi in 0..sf {
                        while j0 + 1 < sp && pb[j0 + 1] <= fb[fi] {
                            j0 += 1;
                        }
                        let mut bound = T::zero();
                        let mut j = j0;
                        while j < sp && pb[j] < fb[fi + 1] {
                            if pb[j + 1] > fb[fi] {
                                bound = bound + pw[j];
                            }
                            j += 1;
                        }
                        let deficit = fw[fi] - bound;
                        if deficit > T::zero() {
                            let g = -two * *scale * deficit * u;
                            let mut j = j0;
                            while j < sp && pb[j] < fb[fi + 1] {
                                if pb[j + 1] > fb[fi] {
                                    gp.data[r * sp + j] = gp.data[r * sp + j] + g;
                                }
                                j += 1;
                            }
                        }
                    }
                }
            }
            Op::WeightedSum { parts } => {
                let u = up.data[0];
                for (id, coef) in parts {
                    if !self.grad[id.0] {
                        continue;
                    }
                    let g = Self::add_adj(adj, *id, 1, 1);
                    g.data[0] = g.data[0] + *coef * u;
                }
            }
            Op::ElemMul { a, b } => {
                let av = self.values[a.0].clone();
                let bv = self.values[b.0].clone();
                if self.grad[a.0] {
                    let ga = Self::add_adj(adj, *a, av.rows, av.cols);
                    for ((g, &bi), &u) in ga.data.iter_mut().zip(&bv.data).zip(&up.data) {
                        *g = *g + bi * u;
                    }
                }
                if self.grad[b.0] {
                    let gb = Self::add_adj(adj, *b, bv.rows, bv.cols);
                    for ((g, &ai), &u) in gb.data.iter_mut().zip(&av.data).zip(&up.data) {
                        *g = *g + ai * u;
                    }
                }
            }
            Op::SumAll { x } => {
                let xv = &self.values[x.0];
                let u = up.data[0];
                let gx = Self::add_adj(adj, *x, xv.rows, xv.cols);
                for g in &mut gx.data {
                    *g = *g + u;
                }
            }
        }
    }

    fn backward_encode(
        &self,
        net: usize,
        pos: NodeId,
        mixw: Option<&Buf<T>>,
        up: &Buf<T>,
        adj: &mut Vec<Option<Buf<T>>>,
        grads: &mut ModelGrads<T>,
    ) {
        let arch = &self.params.arch;
        let layout = &arch.layouts[net];
        let interp = arch.nets[net].interpolated;
        let f = layout.cfg.features;
        let pv = &self.values[pos.0];
        let track_pos = self.grad[pos.0];
        let mut pos_grad = if track_pos {
            Some(Buf::zeros(pv.rows, pv.cols))
        } else {
            None
        };
        for l in 0..layout.cfg.levels {
            let shared_level = layout.dense[l] || !interp;
            // collect gradient buffers lazily per level
            for n in 0..pv.rows {
                let xr = pv.row(n);
                let x = [xr[0], xr[1], xr[2]];
                let lk = lookup_level(layout.resolutions[l], layout.dense[l], layout.cfg.table_size, x);
                let upstream = &up.row(n)[l * f..(l + 1) * f];
                if shared_level {
                    let r = ParamRef::SharedTable {
                        net: net as u8,
                        level: l as u8,
                    };
                    let len = self.params.buf(r).len();
                    scatter_level(grads.accum(r, len), f, &lk, T::one(), upstream);
                } else {
                    let mw = mixw.expect("interpolated encode carries mix weights");
                    for k in 0..4usize {
                        let wk = mw.row(n)[k];
                        if wk == T::zero() {
                            continue;
                        }
                        let r = ParamRef::VertexTable {
                            corner: k as u8,
                            net: net as u8,
                            level: l as u8,
                        };
                        let len = self.params.buf(r).len();
                        scatter_level(grads.accum(r, len), f, &lk, wk, upstream);
                    }
                }
                if let Some(pg) = &mut pos_grad {
                    // d(output)/d(position) through the trilinear weights
                    for c in 0..8usize {
                        let mut s = T::zero();
                        if shared_level {
                            let table = self.params.level_table(net, 0, l);
                            let base = lk.corners[c] as usize * f;
                            for (fi, &u) in upstream.iter().enumerate() {
                                s = s + table.data[base + fi] * u;
                            }
                        } else {
                            let mw = mixw.expect("interpolated encode carries mix weights");
                            for k in 0..4usize {
                                let wk = mw.row(n)[k];
                                if wk == T::zero() {
                                    continue;
                                }
                                let table = self.params.level_table(net, k, l);
                                let base = lk.corners[c] as usize * f;
                                for (fi, &u) in upstream.iter().enumerate() {
                                    s = s + wk * table.data[base + fi] * u;
                                }
                            }
                        }
                        let gr = pg.row_mut(n);
                        for axis in 0..3 {
                            gr[axis] = gr[axis] + lk.weight_dx(c, axis) * s;
                        }
                    }
                }
            }
        }
        if let Some(pg) = pos_grad {
            let dst = Self::add_adj(adj, pos, pv.rows, pv.cols);
            for (d, s) in dst.data.iter_mut().zip(&pg.data) {
                *d = *d + *s;
            }
        }
    }
}

/// Forward evaluation of one op against already-computed predecessor values.
fn eval_op<T: Real>(op: &Op<T>, values: &[Buf<T>], params: &ModelParams<T>) -> Result<Buf<T>> {
    Ok(match op {
        Op::Constant(b) | Op::Input(b) => b.clone(),
        Op::Linear {
            net,
            corner,
            layer,
            x,
        } => {
            let xv = &values[x.0];
            let lay = params.layer(*net as usize, corner.map(|c| c as usize), *layer as usize);
            if xv.cols != lay.in_dim {
                return Err(Error::Shape(format!(
                    "linear input width {} != layer in_dim {}",
                    xv.cols, lay.in_dim
                )));
            }
            let mut out = Buf::zeros(xv.rows, lay.out_dim);
            for n in 0..xv.rows {
                let xr = xv.row(n);
                let yr = out.row_mut(n);
                for o in 0..lay.out_dim {
                    yr[o] = dot(lay.weight_row(o), xr) + lay.bias[o];
                }
            }
            out
        }
        Op::MixedLinear {
            net,
            layer,
            x,
            mixw,
        } => {
            let xv = &values[x.0];
            let lay0 = params.layer(*net as usize, Some(0), *layer as usize);
            if xv.cols != lay0.in_dim {
                return Err(Error::Shape(format!(
                    "mixed linear input width {} != layer in_dim {}",
                    xv.cols, lay0.in_dim
                )));
            }
            let layers = [
                params.layer(*net as usize, Some(0), *layer as usize),
                params.layer(*net as usize, Some(1), *layer as usize),
                params.layer(*net as usize, Some(2), *layer as usize),
                params.layer(*net as usize, Some(3), *layer as usize),
            ];
            for lay in &layers {
                if lay.in_dim != lay0.in_dim || lay.out_dim != lay0.out_dim {
                    return Err(Error::Shape(
                        "corner layers must share a common shape".into(),
                    ));
                }
            }
            let mut out = Buf::zeros(xv.rows, lay0.out_dim);
            for n in 0..xv.rows {
                let xr = xv.row(n);
                let wr = mixw.row(n);
                let yr = out.row_mut(n);
                let mut first = true;
                for k in 0..4usize {
                    let wk = wr[k];
                    if wk == T::zero() {
                        continue;
                    }
                    let lay = layers[k];
                    if first {
                        for o in 0..lay.out_dim {
                            yr[o] = wk * (dot(lay.weight_row(o), xr) + lay.bias[o]);
                        }
                        first = false;
                    } else {
                        for o in 0..lay.out_dim {
                            yr[o] = yr[o] + wk * (dot(lay.weight_row(o), xr) + lay.bias[o]);
                        }
                    }
                }
            }
            out
        }
        Op::Activation { kind, x } => {
            let xv = &values[x.0];
            let mut out = xv.clone();
            for v in &mut out.data {
                *v = kind.apply(*v);
            }
            out
        }
        Op::Encode { net, pos, mixw } => {
            let net = *net as usize;
            let layout = &params.arch.layouts[net];
            let interp = params.arch.nets[net].interpolated;
            let f = layout.cfg.features;
            let pv = &values[pos.0];
            if pv.cols != 3 {
                return Err(Error::Shape("encode positions must have 3 columns".into()));
            }
            let mut out = Buf::zeros(pv.rows, layout.feature_len());
            for n in 0..pv.rows {
                let xr = pv.row(n);
                let x = [xr[0], xr[1], xr[2]];
                for (axis, v) in x.iter().enumerate() {
                    if !(v.abs() <= T::one()) {
                        return Err(Error::Contract(format!(
                            "encode position outside [-1,1]^3 on axis {axis}: {v:?}"
                        )));
                    }
                }
                let orow = out.row_mut(n);
                for l in 0..layout.cfg.levels {
                    let lk = lookup_level(
                        layout.resolutions[l],
                        layout.dense[l],
                        layout.cfg.table_size,
                        x,
                    );
                    let dst = &mut orow[l * f..(l + 1) * f];
                    if layout.dense[l] || !interp {
                        accumulate_level(params.level_table(net, 0, l), &lk, T::one(), dst);
                    } else {
                        let mw = mixw.as_ref().expect("checked at push");
                        let wr = mw.row(n);
                        for k in 0..4usize {
                            if wr[k] == T::zero() {
                                continue;
                            }
                            accumulate_level(params.level_table(net, k, l), &lk, wr[k], dst);
                        }
                    }
                }
            }
            out
        }
        Op::Concat { a, b } => {
            let av = &values[a.0];
            let bv = &values[b.0];
            if av.rows != bv.rows {
                return Err(Error::Shape("concat row mismatch".into()));
            }
            let mut out = Buf::zeros(av.rows, av.cols + bv.cols);
            for n in 0..av.rows {
                let r = out.row_mut(n);
                r[..av.cols].copy_from_slice(av.row(n));
                r[av.cols..].copy_from_slice(bv.row(n));
            }
            out
        }
        Op::RenderWeights { tau, bounds } => {
            let tv = &values[tau.0];
            let rays = bounds.rows;
            let s = bounds.cols - 1;
            let mut out = Buf::zeros(rays, s);
            for r in 0..rays {
                let b = bounds.row(r);
                let taus = &tv.data[r * s..(r + 1) * s];
                let wr = out.row_mut(r);
                let mut trans = T::one();
                for idx in 0..s {
                    let delta = b[idx + 1] - b[idx];
                    let e = (-taus[idx] * delta).exp();
                    wr[idx] = trans * (T::one() - e);
                    trans = trans * e;
                }
            }
            out
        }
        Op::WeightedColorSum { weights, colors } => {
            let wv = &values[weights.0];
            let cv = &values[colors.0];
            if cv.cols != 3 || cv.rows != wv.rows * wv.cols {
                return Err(Error::Shape(
                    "weighted color sum expects rays*samples x 3 colors".into(),
                ));
            }
            let s = wv.cols;
            let mut out = Buf::zeros(wv.rows, 3);
            for r in 0..wv.rows {
                let orow = out.row_mut(r);
                for idx in 0..s {
                    let w = wv.data[r * s + idx];
                    let cr = cv.row(r * s + idx);
                    for ch in 0..3 {
                        orow[ch] = orow[ch] + w * cr[ch];
                    }
                }
            }
            out
        }
        Op::MseLoss {
            pred,
            target,
            scale,
        } => {
            let pv = &values[pred.0];
            let mut acc = T::zero();
            for (&p, &t) in pv.data.iter().zip(&target.data) {
                let d = p - t;
                acc = acc + d * d;
            }
            Buf::from_vec(1, 1, vec![acc * *scale])
        }
        Op::UnityLoss { weights, scale } => {
            let wv = &values[weights.0];
            let mut acc = T::zero();
            for r in 0..wv.rows {
                let total: T = wv.row(r).iter().copied().sum();
                let d = total - T::one();
                acc = acc + d * d;
            }
            Buf::from_vec(1, 1, vec![acc * *scale])
        }
        Op::ProposalLoss {
            prop_w,
            prop_bounds,
            final_w,
            final_bounds,
            scale,
        } => {
            let pv = &values[prop_w.0];
            let sp = prop_bounds.cols - 1;
            let sf = final_bounds.cols - 1;
            let mut acc = T::zero();
            for r in 0..prop_bounds.rows {
                let pb = prop_bounds.row(r);
                let fb = final_bounds.row(r);
                let pw = &pv.data[r * sp..(r + 1) * sp];
                let fw = &final_w.data[r * sf..(r + 1) * sf];
                let mut j0 = 0usize;
                for fi in 0..sf {
                    while j0 + 1 < sp && pb[j0 + 1] <= fb[fi] {
                        j0 += 1;
                    }
                    let mut bound = T::zero();
                    let mut j = j0;
                    while j < sp && pb[j] < fb[fi + 1] {
                        if pb[j + 1] > fb[fi] {
                            bound = bound + pw[j];
                        }
                        j += 1;
                    }
                    let deficit = fw[fi] - bound;
                    if deficit > T::zero() {
                        acc = acc + deficit * deficit;
                    }
                }
            }
            Buf::from_vec(1, 1, vec![acc * *scale])
        }
        Op::WeightedSum { parts } => {
            let mut acc = T::zero();
            for (id, coef) in parts {
                acc = acc + *coef * values[id.0].data[0];
            }
            Buf::from_vec(1, 1, vec![acc])
        }
        Op::ElemMul { a, b } => {
            let av = &values[a.0];
            let bv = &values[b.0];
            if av.rows != bv.rows || av.cols != bv.cols {
                return Err(Error::Shape("elementwise product shape mismatch".into()));
            }
            let mut out = av.clone();
            for (o, &bi) in out.data.iter_mut().zip(&bv.data) {
                *o = *o * bi;
            }
            out
        }
        Op::SumAll { x } => {
            let xv = &values[x.0];
            let total: T = xv.data.iter().copied().sum();
            Buf::from_vec(1, 1, vec![total])
        }
    })
}
