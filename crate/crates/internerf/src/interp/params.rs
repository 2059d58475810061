//! Parameter storage, addressing, and gradient buffers.
//!
//! Every learnable buffer is addressed by a `ParamRef`. Shared buffers are
//! resident for the whole run; vertex buffers belong to the four corner
//! parameter sets of whichever grid cell is currently loaded.

use crate::diffnet::layer::LinearLayer;
use crate::featgrid::LevelTable;
use crate::interp::arch::ModelArch;
use crate::num::Real;
use crate::rng::{stream, CounterRng};
use std::collections::BTreeMap;
use std::sync::Arc;

/// Address of one parameter buffer. `corner` indexes the resident cell's
/// vertex slots (SW, SE, NW, NE); `level` is the grid level index; `layer`
/// indexes the flattened MLP layer list of the network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamRef {
    SharedTable { net: u8, level: u8 },
    SharedWeight { net: u8, layer: u8 },
    SharedBias { net: u8, layer: u8 },
    VertexTable { corner: u8, net: u8, level: u8 },
    VertexWeight { corner: u8, net: u8, layer: u8 },
    VertexBias { corner: u8, net: u8, layer: u8 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpParams<T> {
    pub layers: Vec<LinearLayer<T>>,
}

/// Shared slice of one network: all levels when the network itself is
/// shared, only the dense levels when it is interpolated.
#[derive(Clone, Debug, PartialEq)]
pub struct NetShared<T> {
    pub tables: Vec<Option<LevelTable<T>>>,
    pub mlp: Option<MlpParams<T>>,
}

/// Per-vertex slice of one interpolated network: hashed levels (in level
/// order) and the full MLP.
#[derive(Clone, Debug, PartialEq)]
pub struct NetVertex<T> {
    pub hashed: Vec<LevelTable<T>>,
    pub mlp: MlpParams<T>,
}

/// One parameter set, anchored at a parameter-grid vertex.
#[derive(Clone, Debug, PartialEq)]
pub struct VertexSet<T> {
    pub nets: Vec<Option<NetVertex<T>>>,
}

/// A full forward-capable snapshot: shared parameters plus (optionally) the
/// four vertex sets of the resident cell.
#[derive(Clone, Debug)]
pub struct ModelParams<T> {
    pub arch: Arc<ModelArch>,
    pub shared: Vec<NetShared<T>>,
    pub corners: [Option<VertexSet<T>>; 4],
}

impl<T: Real> ModelParams<T> {
    pub fn new(arch: Arc<ModelArch>, shared: Vec<NetShared<T>>) -> Self {
        ModelParams {
            arch,
            shared,
            corners: [None, None, None, None],
        }
    }

    /// Deterministic initialization of all shared buffers.
    pub fn init_shared(arch: &ModelArch, seed: u64) -> Vec<NetShared<T>> {
        arch.nets
            .iter()
            .enumerate()
            .map(|(n, net)| {
                let layout = &arch.layouts[n];
                let mut trng = CounterRng::from_key(seed, &[stream::INIT_SHARED, n as u64, 0]);
                let tables = (0..net.grid.levels)
                    .map(|l| {
                        let keep = !net.interpolated || layout.dense[l];
                        keep.then(|| {
                            let mut full = layout.zero_tables::<T>();
                            let lt = &mut full.levels[l];
                            for v in &mut lt.data {
                                *v = T::lit(trng.uniform(
                                    -crate::featgrid::TABLE_INIT_SCALE,
                                    crate::featgrid::TABLE_INIT_SCALE,
                                ));
                            }
                            full.levels.swap_remove(l)
                        })
                    })
                    .collect();
                let mlp = (!net.interpolated).then(|| MlpParams {
                    layers: net
                        .mlp_shapes(layout)
                        .iter()
                        .enumerate()
                        .map(|(li, &(o, i))| {
                            let mut rng = CounterRng::from_key(
                                seed,
                                &[stream::INIT_SHARED, n as u64, 1, li as u64],
                            );
                            LinearLayer::init(o, i, &mut rng)
                        })
                        .collect(),
                });
                NetShared { tables, mlp }
            })
            .collect()
    }

    /// Deterministic initialization of the vertex set anchored at (i, j).
    /// Depends only on (seed, i, j) so load order and grid traversal cannot
    /// change the values.
    pub fn init_vertex(arch: &ModelArch, seed: u64, i: u32, j: u32) -> VertexSet<T> {
        let nets = arch
            .nets
            .iter()
            .enumerate()
            .map(|(n, net)| {
                net.interpolated.then(|| {
                    let layout = &arch.layouts[n];
                    let mut trng = CounterRng::from_key(
                        seed,
                        &[stream::INIT_VERTEX, i as u64, j as u64, n as u64, 0],
                    );
                    let mut full = layout.zero_tables::<T>();
                    let mut hashed = Vec::new();
                    for l in (0..net.grid.levels).rev() {
                        if !layout.dense[l] {
                            hashed.push(full.levels.swap_remove(l));
                        }
                    }
                    hashed.reverse();
                    for t in &mut hashed {
                        for v in &mut t.data {
                            *v = T::lit(trng.uniform(
                                -crate::featgrid::TABLE_INIT_SCALE,
                                crate::featgrid::TABLE_INIT_SCALE,
                            ));
                        }
                    }
                    let layers = net
                        .mlp_shapes(layout)
                        .iter()
                        .enumerate()
                        .map(|(li, &(o, inw))| {
                            let mut rng = CounterRng::from_key(
                                seed,
                                &[
                                    stream::INIT_VERTEX,
                                    i as u64,
                                    j as u64,
                                    n as u64,
                                    1,
                                    li as u64,
                                ],
                            );
                            LinearLayer::init(o, inw, &mut rng)
                        })
                        .collect();
                    NetVertex {
                        hashed,
                        mlp: MlpParams { layers },
                    }
                })
            })
            .collect();
        VertexSet { nets }
    }

    fn vertex(&self, corner: u8, net: u8) -> &NetVertex<T> {
        self.corners[corner as usize]
            .as_ref()
            .expect("corner parameter set not resident")
            .nets[net as usize]
            .as_ref()
            .expect("network is not interpolated")
    }

    /// The table backing `level` of `net` for `corner` (hashed levels come
    /// from the vertex set, dense levels from shared storage).
    pub fn level_table(&self, net: usize, corner: usize, level: usize) -> &LevelTable<T> {
        let layout = &self.arch.layouts[net];
        if let Some(slot) = layout.hashed_slot(level) {
            if self.arch.nets[net].interpolated {
                return &self.vertex(corner as u8, net as u8).hashed[slot];
            }
        }
        self.shared[net].tables[level]
            .as_ref()
            .expect("shared level table missing")
    }

    pub fn layer(&self, net: usize, corner: Option<usize>, layer: usize) -> &LinearLayer<T> {
        match corner {
            Some(c) => &self.vertex(c as u8, net as u8).mlp.layers[layer],
            None => {
                &self.shared[net]
                    .mlp
                    .as_ref()
                    .expect("shared MLP missing")
                    .layers[layer]
            }
        }
    }

    pub fn buf(&self, r: ParamRef) -> &[T] {
        match r {
            ParamRef::SharedTable { net, level } => {
                &self.shared[net as usize].tables[level as usize]
                    .as_ref()
                    .expect("shared table missing")
                    .data
            }
            ParamRef::SharedWeight { net, layer } => {
                &self.layer(net as usize, None, layer as usize).weights
            }
            ParamRef::SharedBias { net, layer } => {
                &self.layer(net as usize, None, layer as usize).bias
            }
            ParamRef::VertexTable { corner, net, level } => {
                let slot = self.arch.layouts[net as usize]
                    .hashed_slot(level as usize)
                    .expect("vertex table ref on dense level");
                &self.vertex(corner, net).hashed[slot].data
            }
            ParamRef::VertexWeight { corner, net, layer } => {
                &self.vertex(corner, net).mlp.layers[layer as usize].weights
            }
            ParamRef::VertexBias { corner, net, layer } => {
                &self.vertex(corner, net).mlp.layers[layer as usize].bias
            }
        }
    }

    pub fn buf_mut(&mut self, r: ParamRef) -> &mut Vec<T> {
        match r {
            ParamRef::SharedTable { net, level } => {
                &mut self.shared[net as usize].tables[level as usize]
                    .as_mut()
                    .expect("shared table missing")
                    .data
            }
            ParamRef::SharedWeight { net, layer } => {
                &mut self.shared[net as usize]
                    .mlp
                    .as_mut()
                    .expect("shared MLP missing")
                    .layers[layer as usize]
                    .weights
            }
            ParamRef::SharedBias { net, layer } => {
                &mut self.shared[net as usize]
                    .mlp
                    .as_mut()
                    .expect("shared MLP missing")
                    .layers[layer as usize]
                    .bias
            }
            ParamRef::VertexTable { corner, net, level } => {
                let slot = self.arch.layouts[net as usize]
                    .hashed_slot(level as usize)
                    .expect("vertex table ref on dense level");
                &mut self.corners[corner as usize]
                    .as_mut()
                    .expect("corner not resident")
                    .nets[net as usize]
                    .as_mut()
                    .expect("network not interpolated")
                    .hashed[slot]
                    .data
            }
            ParamRef::VertexWeight { corner, net, layer } => {
                &mut self.corners[corner as usize]
                    .as_mut()
                    .expect("corner not resident")
                    .nets[net as usize]
                    .as_mut()
                    .expect("network not interpolated")
                    .mlp
                    .layers[layer as usize]
                    .weights
            }
            ParamRef::VertexBias { corner, net, layer } => {
                &mut self.corners[corner as usize]
                    .as_mut()
                    .expect("corner not resident")
                    .nets[net as usize]
                    .as_mut()
                    .expect("network not interpolated")
                    .mlp
                    .layers[layer as usize]
                    .bias
            }
        }
    }

    /// Enumerate every existing buffer in a canonical order: shared buffers
    /// (net-major), then resident corners 0..4.
    pub fn for_each_ref(&self, mut f: impl FnMut(ParamRef)) {
        for r in shared_refs(&self.arch) {
            f(r);
        }
        for c in 0..4u8 {
            if self.corners[c as usize].is_some() {
                for r in vertex_refs(&self.arch, c) {
                    f(r);
                }
            }
        }
    }
}

/// Canonical order of the shared buffers (also their on-disk order).
pub fn shared_refs(arch: &ModelArch) -> Vec<ParamRef> {
    let mut out = Vec::new();
    for (n, net) in arch.nets.iter().enumerate() {
        let layout = &arch.layouts[n];
        for l in 0..net.grid.levels {
            if !net.interpolated || layout.dense[l] {
                out.push(ParamRef::SharedTable {
                    net: n as u8,
                    level: l as u8,
                });
            }
        }
        if !net.interpolated {
            for li in 0..net.mlp_shapes(layout).len() {
                out.push(ParamRef::SharedWeight {
                    net: n as u8,
                    layer: li as u8,
                });
                out.push(ParamRef::SharedBias {
                    net: n as u8,
                    layer: li as u8,
                });
            }
        }
    }
    out
}

/// Canonical buffer order inside one vertex set (also its on-disk order).
pub fn vertex_refs(arch: &ModelArch, corner: u8) -> Vec<ParamRef> {
    let mut out = Vec::new();
    for (n, net) in arch.nets.iter().enumerate() {
        if !net.interpolated {
            continue;
        }
        let layout = &arch.layouts[n];
        for l in 0..net.grid.levels {
            if layout.hashed_slot(l).is_some() {
                out.push(ParamRef::VertexTable {
                    corner,
                    net: n as u8,
                    level: l as u8,
                });
            }
        }
        for li in 0..net.mlp_shapes(layout).len() {
            out.push(ParamRef::VertexWeight {
                corner,
                net: n as u8,
                layer: li as u8,
            });
            out.push(ParamRef::VertexBias {
                corner,
                net: n as u8,
                layer: li as u8,
            });
        }
    }
    out
}

/// Scalar count of the buffer a `ParamRef` addresses, derived from the
/// architecture alone.
pub fn ref_len(arch: &ModelArch, r: ParamRef) -> usize {
    match r {
        ParamRef::SharedTable { net, level } | ParamRef::VertexTable { net, level, .. } => {
            let layout = &arch.layouts[net as usize];
            layout.level_entries(level as usize) * layout.cfg.features
        }
        ParamRef::SharedWeight { net, layer } | ParamRef::VertexWeight { net, layer, .. } => {
            let shapes = arch.nets[net as usize].mlp_shapes(&arch.layouts[net as usize]);
            let (o, i) = shapes[layer as usize];
            o * i
        }
        ParamRef::SharedBias { net, layer } | ParamRef::VertexBias { net, layer, .. } => {
            let shapes = arch.nets[net as usize].mlp_shapes(&arch.layouts[net as usize]);
            shapes[layer as usize].0
        }
    }
}

/// Gradient accumulator mirroring `ModelParams` buffers. Buffers appear
/// lazily on first touch; folding and iteration follow `ParamRef` order, so
/// reductions are order-deterministic.
#[derive(Clone, Debug, Default)]
pub struct ModelGrads<T> {
    pub bufs: BTreeMap<ParamRef, Vec<T>>,
}

impl<T: Real> ModelGrads<T> {
    pub fn new() -> Self {
        ModelGrads {
            bufs: BTreeMap::new(),
        }
    }

    pub fn accum(&mut self, r: ParamRef, len: usize) -> &mut [T] {
        self.bufs.entry(r).or_insert_with(|| vec![T::zero(); len])
    }

    pub fn get(&self, r: ParamRef) -> Option<&[T]> {
        self.bufs.get(&r).map(|v| v.as_slice())
    }

    /// self += other, buffer-wise, in key order.
    pub fn fold(&mut self, other: ModelGrads<T>) {
        for (r, src) in other.bufs {
            match self.bufs.get_mut(&r) {
                Some(dst) => {
                    for (d, s) in dst.iter_mut().zip(&src) {
                        *d = *d + *s;
                    }
                }
                None => {
                    self.bufs.insert(r, src);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featgrid::GridConfig;
    use crate::interp::arch::NetworkArch;

    fn tiny_arch() -> ModelArch {
        let prop = NetworkArch::proposal(GridConfig::new(2, 1 << 6, 1, 4, 8), 8, false);
        let fin = NetworkArch::fina(GridConfig::new(3, 1 << 6, 2, 4, 16), 8, 1, 8, 2, true);
        ModelArch::new(vec![prop.clone(), prop, fin]).unwrap()
    }

    #[test]
    fn vertex_init_is_keyed_by_id_only() {
        let arch = tiny_arch();
        let a = ModelParams::<f32>::init_vertex(&arch, 7, 2, 3);
        let b = ModelParams::<f32>::init_vertex(&arch, 7, 2, 3);
        let c = ModelParams::<f32>::init_vertex(&arch, 7, 3, 2);
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn interpolated_net_splits_dense_and_hashed() {
        let arch = tiny_arch();
        let shared = ModelParams::<f32>::init_shared(&arch, 7);
        // final net is interpolated: dense level kept shared, no shared MLP
        let fin = &shared[2];
        let layout = &arch.layouts[2];
        for l in 0..3 {
            assert_eq!(fin.tables[l].is_some(), layout.dense[l]);
        }
        assert!(fin.mlp.is_none());
        // proposal nets are fully shared
        assert!(shared[0].tables.iter().all(|t| t.is_some()));
        assert!(shared[0].mlp.is_some());
        let vs = ModelParams::<f32>::init_vertex(&arch, 7, 0, 0);
        assert!(vs.nets[0].is_none());
        assert!(vs.nets[2].is_some());
        let nv = vs.nets[2].as_ref().unwrap();
        assert_eq!(nv.hashed.len(), layout.hashed_levels().len());
    }

    #[test]
    fn ref_enumeration_addresses_every_buffer() {
        let arch = std::sync::Arc::new(tiny_arch());
        let shared = ModelParams::<f32>::init_shared(&arch, 1);
        let mut params = ModelParams::new(arch.clone(), shared);
        for c in 0..4 {
            params.corners[c] = Some(ModelParams::<f32>::init_vertex(&arch, 1, c as u32, 0));
        }
        let mut count = 0;
        let mut refs = Vec::new();
        params.for_each_ref(|r| {
            count += 1;
            refs.push(r);
        });
        assert!(count > 0);
        for r in refs {
            assert!(!params.buf(r).is_empty() || matches!(r, ParamRef::SharedBias { .. }));
            // mutable access must resolve to the same buffer
            let len = params.buf(r).len();
            assert_eq!(params.buf_mut(r).len(), len);
        }
    }

    #[test]
    fn grads_fold_adds_in_place() {
        let mut a = ModelGrads::<f32>::new();
        let mut b = ModelGrads::<f32>::new();
        let r = ParamRef::SharedTable { net: 0, level: 0 };
        a.accum(r, 3)[0] = 1.0;
        b.accum(r, 3)[0] = 2.0;
        b.accum(ParamRef::SharedBias { net: 0, layer: 0 }, 2)[1] = 5.0;
        a.fold(b);
        assert_eq!(a.get(r).unwrap()[0], 3.0);
        assert_eq!(
            a.get(ParamRef::SharedBias { net: 0, layer: 0 }).unwrap()[1],
            5.0
        );
    }
}
