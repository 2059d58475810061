//! Out-of-core parameter store.
//!
//! One file pair per lattice vertex: `vertex_<i>_<j>.bin` holds the
//! parameter set, `vertex_<i>_<j>.opt` its optimizer moments. Neighboring
//! cells share edge vertices, so an update made while one cell is resident
//! is visible when the adjacent cell loads. At most one cell (four vertex
//! sets) is resident at a time; loads of vertices that have no file yet fall
//! back to the deterministic per-id initialization.
//!
//! All payloads carry an 8-byte header (magic "INRF", version 1 as
//! little-endian u32) followed by u32 descriptors and little-endian f32
//! streams.

use crate::error::{Error, Result};
use crate::featgrid::{read_tables, write_tables, LevelTable};
use crate::interp::arch::ModelArch;
use crate::interp::grid::{CellId, ParamGrid, VertexId};
use crate::interp::params::{
    ref_len, vertex_refs, MlpParams, ModelParams, NetVertex, VertexSet,
};
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

pub const MAGIC: &[u8; 4] = b"INRF";
pub const VERSION: u32 = 1;

/// Adam moments for one scope (a vertex set or the shared parameters),
/// aligned with the scope's canonical buffer order.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    /// Update count of this scope (drives bias correction).
    pub step: u32,
    pub moments: Vec<(Vec<f32>, Vec<f32>)>,
}

impl OptState {
    pub fn zeros(lens: &[usize]) -> Self {
        OptState {
            step: 0,
            moments: lens.iter().map(|&n| (vec![0.0; n], vec![0.0; n])).collect(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StoreMode {
    /// Swap vertex sets through files under the store root.
    Disk,
    /// Hold every vertex set in memory; files are only written on demand.
    InCore,
}

pub struct ParamStore {
    arch: Arc<ModelArch>,
    seed: u64,
    root: PathBuf,
    mode: StoreMode,
    in_core: BTreeMap<VertexId, (VertexSet<f32>, OptState)>,
    resident: Option<(CellId, [VertexId; 4])>,
}

impl ParamStore {
    pub fn new(root: impl Into<PathBuf>, arch: Arc<ModelArch>, seed: u64, mode: StoreMode) -> Result<Self> {
        let root = root.into();
        fs::create_dir_all(&root).map_err(|e| Error::io(&root, e))?;
        Ok(ParamStore {
            arch,
            seed,
            root,
            mode,
            in_core: BTreeMap::new(),
            resident: None,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn mode(&self) -> StoreMode {
        self.mode
    }

    pub fn resident(&self) -> Option<CellId> {
        self.resident.map(|(c, _)| c)
    }

    fn vertex_paths(&self, v: VertexId) -> (PathBuf, PathBuf) {
        vertex_paths_in(&self.root, v)
    }

    fn fetch_vertex(&mut self, v: VertexId) -> Result<(VertexSet<f32>, OptState)> {
        match self.mode {
            StoreMode::InCore => Ok(match self.in_core.remove(&v) {
                Some(entry) => entry,
                None => self.fresh_vertex(v),
            }),
            StoreMode::Disk => {
                let (bin, opt) = self.vertex_paths(v);
                if !bin.exists() {
                    return Ok(self.fresh_vertex(v));
                }
                let set = read_vertex_set(&bin, &self.arch, v)?;
                if !opt.exists() {
                    return Err(Error::Store(format!(
                        "vertex ({}, {}) has parameters but no optimizer state",
                        v.0, v.1
                    )));
                }
                let state = read_opt_state(&opt, &self.arch, v)?;
                Ok((set, state))
            }
        }
    }

    fn fresh_vertex(&self, v: VertexId) -> (VertexSet<f32>, OptState) {
        let set = ModelParams::<f32>::init_vertex(&self.arch, self.seed, v.0, v.1);
        let lens: Vec<usize> = vertex_refs(&self.arch, 0)
            .iter()
            .map(|&r| ref_len(&self.arch, r))
            .collect();
        (set, OptState::zeros(&lens))
    }

    /// Bring a cell's four vertex sets and their optimizer state into the
    /// caller's slots. Loading the already-resident cell is a no-op; loading
    /// a different cell while one is resident is a contract violation.
    pub fn load_cell(
        &mut self,
        grid: &ParamGrid,
        cell: CellId,
        params: &mut ModelParams<f32>,
        opts: &mut [Option<OptState>; 4],
    ) -> Result<()> {
        if let Some((current, _)) = self.resident {
            if current == cell {
                return Ok(());
            }
            return Err(Error::Contract(format!(
                "cell {current} is resident; unload it before loading {cell}"
            )));
        }
        let vertices = grid.cell_corners(cell);
        for (k, &v) in vertices.iter().enumerate() {
            let (set, state) = self.fetch_vertex(v)?;
            params.corners[k] = Some(set);
            opts[k] = Some(state);
        }
        self.resident = Some((cell, vertices));
        Ok(())
    }

    /// Write the resident cell back and release it.
    pub fn unload_cell(
        &mut self,
        params: &mut ModelParams<f32>,
        opts: &mut [Option<OptState>; 4],
    ) -> Result<()> {
        let (_, vertices) = self
            .resident
            .ok_or_else(|| Error::Contract("unload with no resident cell".into()))?;
        for (k, &v) in vertices.iter().enumerate() {
            let set = params.corners[k]
                .take()
                .ok_or_else(|| Error::Store(format!("corner {k} missing at unload")))?;
            let state = opts[k]
                .take()
                .ok_or_else(|| Error::Store(format!("corner {k} optimizer state missing")))?;
            match self.mode {
                StoreMode::InCore => {
                    self.in_core.insert(v, (set, state));
                }
                StoreMode::Disk => {
                    let (bin, opt) = self.vertex_paths(v);
                    write_vertex_set(&bin, &self.arch, &set)?;
                    write_opt_state(&opt, &state)?;
                }
            }
        }
        self.resident = None;
        Ok(())
    }

    /// Write every active vertex (resident, cached, or still untouched) into
    /// `dir` without evicting anything. Untouched vertices serialize their
    /// deterministic initialization, so snapshots agree across store modes.
    pub fn write_vertex_snapshot(
        &self,
        dir: &Path,
        grid: &ParamGrid,
        params: &ModelParams<f32>,
        opts: &[Option<OptState>; 4],
    ) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let resident = self.resident;
        for v in grid.active_vertices() {
            let (bin, opt) = vertex_paths_in(dir, v);
            if let Some((_, vertices)) = resident {
                if let Some(k) = vertices.iter().position(|&rv| rv == v) {
                    let set = params.corners[k]
                        .as_ref()
                        .ok_or_else(|| Error::Store(format!("corner {k} not resident")))?;
                    let state = opts[k]
                        .as_ref()
                        .ok_or_else(|| Error::Store(format!("corner {k} state not resident")))?;
                    write_vertex_set(&bin, &self.arch, set)?;
                    write_opt_state(&opt, state)?;
                    continue;
                }
            }
            match self.mode {
                StoreMode::InCore => {
                    let (set, state) = match self.in_core.get(&v) {
                        Some((s, o)) => (s.clone(), o.clone()),
                        None => self.fresh_vertex(v),
                    };
                    write_vertex_set(&bin, &self.arch, &set)?;
                    write_opt_state(&opt, &state)?;
                }
                StoreMode::Disk => {
                    let (src_bin, src_opt) = self.vertex_paths(v);
                    if src_bin.exists() {
                        if src_bin != bin {
                            fs::copy(&src_bin, &bin).map_err(|e| Error::io(&bin, e))?;
                            fs::copy(&src_opt, &opt).map_err(|e| Error::io(&opt, e))?;
                        }
                    } else {
                        let (set, state) = self.fresh_vertex(v);
                        write_vertex_set(&bin, &self.arch, &set)?;
                        write_opt_state(&opt, &state)?;
                    }
                }
            }
        }
        Ok(())
    }
}

pub fn vertex_paths_in(dir: &Path, v: VertexId) -> (PathBuf, PathBuf) {
    (
        dir.join(format!("vertex_{}_{}.bin", v.0, v.1)),
        dir.join(format!("vertex_{}_{}.opt", v.0, v.1)),
    )
}

fn write_header<W: Write>(w: &mut W) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())
}

fn check_header<R: Read>(r: &mut R, path: &Path) -> Result<()> {
    let mut magic = [0u8; 4];
    let mut ver = [0u8; 4];
    r.read_exact(&mut magic)
        .and_then(|_| r.read_exact(&mut ver))
        .map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::Store(format!("{}: bad magic", path.display())));
    }
    let version = u32::from_le_bytes(ver);
    if version != VERSION {
        return Err(Error::Store(format!(
            "{}: unsupported version {version}",
            path.display()
        )));
    }
    Ok(())
}

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn write_f32s<W: Write>(w: &mut W, data: &[f32]) -> std::io::Result<()> {
    for v in data {
        w.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_f32s<R: Read>(r: &mut R, n: usize) -> std::io::Result<Vec<f32>> {
    let mut out = vec![0f32; n];
    let mut b = [0u8; 4];
    for v in &mut out {
        r.read_exact(&mut b)?;
        *v = f32::from_le_bytes(b);
    }
    Ok(out)
}

fn write_mlp<W: Write>(w: &mut W, mlp: &MlpParams<f32>) -> std::io::Result<()> {
    write_u32(w, mlp.layers.len() as u32)?;
    for layer in &mlp.layers {
        write_u32(w, layer.out_dim as u32)?;
        write_u32(w, layer.in_dim as u32)?;
        write_f32s(w, &layer.weights)?;
        write_f32s(w, &layer.bias)?;
    }
    Ok(())
}

fn read_mlp<R: Read>(r: &mut R, expect: &[(usize, usize)], what: &str) -> Result<MlpParams<f32>> {
    let count = read_u32(r).map_err(|e| Error::Store(format!("{what}: {e}")))? as usize;
    if count != expect.len() {
        return Err(Error::Store(format!(
            "{what}: expected {} layers, file has {count}",
            expect.len()
        )));
    }
    let mut layers = Vec::with_capacity(count);
    for &(o, i) in expect {
        let fo = read_u32(r).map_err(|e| Error::Store(format!("{what}: {e}")))? as usize;
        let fi = read_u32(r).map_err(|e| Error::Store(format!("{what}: {e}")))? as usize;
        if fo != o || fi != i {
            return Err(Error::Store(format!(
                "{what}: layer shape ({fo}, {fi}) does not match expected ({o}, {i})"
            )));
        }
        let weights = read_f32s(r, o * i).map_err(|e| Error::Store(format!("{what}: {e}")))?;
        let bias = read_f32s(r, o).map_err(|e| Error::Store(format!("{what}: {e}")))?;
        layers.push(crate::diffnet::LinearLayer {
            out_dim: o,
            in_dim: i,
            weights,
            bias,
        });
    }
    Ok(MlpParams { layers })
}

pub fn write_vertex_set(path: &Path, arch: &ModelArch, set: &VertexSet<f32>) -> Result<()> {
    let mut out = Vec::new();
    write_header(&mut out).map_err(|e| Error::io(path, e))?;
    for (n, nv) in set.nets.iter().enumerate() {
        let Some(nv) = nv else { continue };
        debug_assert!(arch.nets[n].interpolated);
        write_tables(&mut out, &nv.hashed).map_err(|e| Error::io(path, e))?;
        write_mlp(&mut out, &nv.mlp).map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_vertex_set(path: &Path, arch: &ModelArch, v: VertexId) -> Result<VertexSet<f32>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    check_header(&mut r, path)?;
    let what = format!("vertex ({}, {})", v.0, v.1);
    let mut nets = Vec::with_capacity(arch.nets.len());
    for (n, net) in arch.nets.iter().enumerate() {
        if !net.interpolated {
            nets.push(None);
            continue;
        }
        let layout = &arch.layouts[n];
        let hashed = read_tables(&mut r).map_err(|e| Error::Store(format!("{what}: {e}")))?;
        let expect_hashed = layout.hashed_levels();
        if hashed.len() != expect_hashed.len() {
            return Err(Error::Store(format!(
                "{what}: expected {} hashed levels, file has {}",
                expect_hashed.len(),
                hashed.len()
            )));
        }
        for (slot, t) in hashed.iter().enumerate() {
            let level = expect_hashed[slot];
            if t.entries() != layout.level_entries(level) || t.features != layout.cfg.features {
                return Err(Error::Store(format!(
                    "{what}: level {level} table shape mismatch"
                )));
            }
        }
        let mlp = read_mlp(&mut r, &net.mlp_shapes(layout), &what)?;
        nets.push(Some(NetVertex { hashed, mlp }));
    }
    Ok(VertexSet { nets })
}

pub fn write_opt_state(path: &Path, state: &OptState) -> Result<()> {
    let mut out = Vec::new();
    write_header(&mut out).map_err(|e| Error::io(path, e))?;
    write_u32(&mut out, state.step).map_err(|e| Error::io(path, e))?;
    write_u32(&mut out, state.moments.len() as u32).map_err(|e| Error::io(path, e))?;
    for (m, v) in &state.moments {
        write_u32(&mut out, m.len() as u32).map_err(|e| Error::io(path, e))?;
        write_f32s(&mut out, m).map_err(|e| Error::io(path, e))?;
        write_f32s(&mut out, v).map_err(|e| Error::io(path, e))?;
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_opt_state(path: &Path, arch: &ModelArch, v: VertexId) -> Result<OptState> {
    let lens: Vec<usize> = vertex_refs(arch, 0)
        .iter()
        .map(|&r| ref_len(arch, r))
        .collect();
    read_opt_state_with_lens(path, &lens, &format!("vertex ({}, {})", v.0, v.1))
}

pub fn read_opt_state_with_lens(path: &Path, lens: &[usize], what: &str) -> Result<OptState> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    check_header(&mut r, path)?;
    let step = read_u32(&mut r).map_err(|e| Error::Store(format!("{what}: {e}")))?;
    let count = read_u32(&mut r).map_err(|e| Error::Store(format!("{what}: {e}")))? as usize;
    if count != lens.len() {
        return Err(Error::Store(format!(
            "{what}: expected {} moment buffers, file has {count}",
            lens.len()
        )));
    }
    let mut moments = Vec::with_capacity(count);
    for &len in lens {
        let flen = read_u32(&mut r).map_err(|e| Error::Store(format!("{what}: {e}")))? as usize;
        if flen != len {
            return Err(Error::Store(format!(
                "{what}: moment buffer length {flen} does not match {len}"
            )));
        }
        let m = read_f32s(&mut r, len).map_err(|e| Error::Store(format!("{what}: {e}")))?;
        let v2 = read_f32s(&mut r, len).map_err(|e| Error::Store(format!("{what}: {e}")))?;
        moments.push((m, v2));
    }
    Ok(OptState { step, moments })
}

/// Serialize the shared parameter slice (tables of every network plus the
/// MLPs of non-interpolated networks).
pub fn write_shared(path: &Path, arch: &ModelArch, shared: &[crate::interp::params::NetShared<f32>]) -> Result<()> {
    let mut out = Vec::new();
    write_header(&mut out).map_err(|e| Error::io(path, e))?;
    for (n, ns) in shared.iter().enumerate() {
        let present: Vec<LevelTable<f32>> = ns
            .tables
            .iter()
            .flatten()
            .cloned()
            .collect();
        write_tables(&mut out, &present).map_err(|e| Error::io(path, e))?;
        if !arch.nets[n].interpolated {
            let mlp = ns.mlp.as_ref().expect("shared net keeps its MLP");
            write_mlp(&mut out, mlp).map_err(|e| Error::io(path, e))?;
        }
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

pub fn read_shared(path: &Path, arch: &ModelArch) -> Result<Vec<crate::interp::params::NetShared<f32>>> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let mut r = bytes.as_slice();
    check_header(&mut r, path)?;
    let mut out = Vec::with_capacity(arch.nets.len());
    for (n, net) in arch.nets.iter().enumerate() {
        let layout = &arch.layouts[n];
        let present = read_tables(&mut r).map_err(|e| Error::Store(format!("shared: {e}")))?;
        let expected_levels: Vec<usize> = (0..net.grid.levels)
            .filter(|&l| !net.interpolated || layout.dense[l])
            .collect();
        if present.len() != expected_levels.len() {
            return Err(Error::Store(format!(
                "shared net {n}: expected {} stored levels, file has {}",
                expected_levels.len(),
                present.len()
            )));
        }
        let mut tables: Vec<Option<LevelTable<f32>>> = vec![None; net.grid.levels];
        for (t, &level) in present.into_iter().zip(&expected_levels) {
            if t.entries() != layout.level_entries(level) || t.features != layout.cfg.features {
                return Err(Error::Store(format!(
                    "shared net {n}: level {level} table shape mismatch"
                )));
            }
            tables[level] = Some(t);
        }
        let mlp = if net.interpolated {
            None
        } else {
            Some(read_mlp(&mut r, &net.mlp_shapes(layout), &format!("shared net {n}"))?)
        };
        out.push(crate::interp::params::NetShared { tables, mlp });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::featgrid::GridConfig;
    use crate::interp::arch::NetworkArch;
    use crate::interp::grid::build_param_grid;
    use crate::interp::params::shared_refs;
    use crate::rng::CounterRng;

    fn tiny_arch() -> Arc<ModelArch> {
        let prop = NetworkArch::proposal(GridConfig::new(2, 1 << 6, 1, 4, 8), 8, false);
        let fin = NetworkArch::fina(GridConfig::new(3, 1 << 6, 2, 4, 16), 8, 1, 8, 2, true);
        Arc::new(ModelArch::new(vec![prop.clone(), prop, fin]).unwrap())
    }

    fn two_cell_grid() -> ParamGrid {
        let mut origins = Vec::new();
        for k in 0..6 {
            origins.push([0.1 + 0.01 * k as f64, 0.5]);
            origins.push([0.9 - 0.01 * k as f64, 0.5]);
        }
        build_param_grid(&origins, 2, 1, 5).unwrap()
    }

    fn fresh_params(arch: &Arc<ModelArch>, seed: u64) -> ModelParams<f32> {
        let shared = ModelParams::init_shared(arch, seed);
        ModelParams::new(arch.clone(), shared)
    }

    #[test]
    fn unload_load_roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let arch = tiny_arch();
        let grid = two_cell_grid();
        let mut store = ParamStore::new(dir.path(), arch.clone(), 42, StoreMode::Disk).unwrap();
        let mut params = fresh_params(&arch, 42);
        let mut opts: [Option<OptState>; 4] = Default::default();
        store.load_cell(&grid, 0, &mut params, &mut opts).unwrap();
        // scribble on parameters and moments
        let mut rng = CounterRng::from_key(1, &[2]);
        for c in 0..4 {
            let nv = params.corners[c].as_mut().unwrap().nets[2].as_mut().unwrap();
            for t in &mut nv.hashed {
                for v in &mut t.data {
                    *v = rng.next_f32();
                }
            }
            let opt = opts[c].as_mut().unwrap();
            opt.step = 17;
            for (m, v) in &mut opt.moments {
                for x in m.iter_mut().chain(v.iter_mut()) {
                    *x = rng.next_f32();
                }
            }
        }
        let snapshot: Vec<_> = (0..4).map(|c| params.corners[c].clone().unwrap()).collect();
        let opt_snapshot: Vec<_> = (0..4).map(|c| opts[c].clone().unwrap()).collect();
        store.unload_cell(&mut params, &mut opts).unwrap();
        store.load_cell(&grid, 0, &mut params, &mut opts).unwrap();
        for c in 0..4 {
            assert_eq!(params.corners[c].as_ref().unwrap(), &snapshot[c]);
            assert_eq!(opts[c].as_ref().unwrap(), &opt_snapshot[c]);
        }
    }

    #[test]
    fn double_load_different_cell_is_contract_violation() {
        let dir = tempfile::tempdir().unwrap();
        let arch = tiny_arch();
        let grid = two_cell_grid();
        let mut store = ParamStore::new(dir.path(), arch.clone(), 1, StoreMode::Disk).unwrap();
        let mut params = fresh_params(&arch, 1);
        let mut opts: [Option<OptState>; 4] = Default::default();
        store.load_cell(&grid, 0, &mut params, &mut opts).unwrap();
        // same cell is idempotent
        store.load_cell(&grid, 0, &mut params, &mut opts).unwrap();
        let err = store.load_cell(&grid, 1, &mut params, &mut opts);
        assert!(matches!(err, Err(Error::Contract(_))));
    }

    #[test]
    fn shared_edge_vertices_propagate_updates() {
        let dir = tempfile::tempdir().unwrap();
        let arch = tiny_arch();
        let grid = two_cell_grid();
        // cells 0 and 1 share vertices (1, 0) and (1, 1): corner SE/NE of
        // cell 0 are corner SW/NW of cell 1.
        let mut store = ParamStore::new(dir.path(), arch.clone(), 7, StoreMode::Disk).unwrap();
        let mut params = fresh_params(&arch, 7);
        let mut opts: [Option<OptState>; 4] = Default::default();
        store.load_cell(&grid, 0, &mut params, &mut opts).unwrap();
        let marker = 123.456f32;
        params.corners[1].as_mut().unwrap().nets[2].as_mut().unwrap().hashed[0].data[0] = marker;
        store.unload_cell(&mut params, &mut opts).unwrap();
        store.load_cell(&grid, 1, &mut params, &mut opts).unwrap();
        let seen = params.corners[0].as_ref().unwrap().nets[2].as_ref().unwrap().hashed[0].data[0];
        assert_eq!(seen, marker);
    }

    #[test]
    fn fresh_store_initializes_deterministically() {
        let arch = tiny_arch();
        let grid = two_cell_grid();
        let mut sets = Vec::new();
        for seed_dir in 0..2 {
            let dir = tempfile::tempdir().unwrap();
            let mut store =
                ParamStore::new(dir.path(), arch.clone(), 11, StoreMode::Disk).unwrap();
            let mut params = fresh_params(&arch, 11);
            let mut opts: [Option<OptState>; 4] = Default::default();
            store.load_cell(&grid, 0, &mut params, &mut opts).unwrap();
            sets.push(params.corners[0].clone().unwrap());
            let _ = seed_dir;
        }
        assert_eq!(sets[0], sets[1]);
        // and it matches the direct per-id initialization
        let direct = ModelParams::<f32>::init_vertex(&arch, 11, 0, 0);
        assert_eq!(sets[0], direct);
    }

    #[test]
    fn shared_roundtrip_preserves_bits() {
        let dir = tempfile::tempdir().unwrap();
        let arch = tiny_arch();
        let shared = ModelParams::<f32>::init_shared(&arch, 3);
        let path = dir.path().join("shared.bin");
        write_shared(&path, &arch, &shared).unwrap();
        let back = read_shared(&path, &arch).unwrap();
        assert_eq!(back.len(), shared.len());
        for (a, b) in back.iter().zip(&shared) {
            assert_eq!(a, b);
        }
        // shared opt state round-trips through the same container
        let lens: Vec<usize> = shared_refs(&arch)
            .iter()
            .map(|&r| ref_len(&arch, r))
            .collect();
        let mut state = OptState::zeros(&lens);
        state.step = 99;
        state.moments[0].0[0] = 0.5;
        let opt_path = dir.path().join("shared.opt");
        write_opt_state(&opt_path, &state).unwrap();
        let back = read_opt_state_with_lens(&opt_path, &lens, "shared").unwrap();
        assert_eq!(back, state);
    }

    #[test]
    fn corrupt_file_is_reported_with_vertex_id() {
        let dir = tempfile::tempdir().unwrap();
        let arch = tiny_arch();
        let grid = two_cell_grid();
        let (bin, _) = vertex_paths_in(dir.path(), (0, 0));
        fs::write(&bin, b"XXXXgarbage").unwrap();
        let mut store = ParamStore::new(dir.path(), arch.clone(), 5, StoreMode::Disk).unwrap();
        let mut params = fresh_params(&arch, 5);
        let mut opts: [Option<OptState>; 4] = Default::default();
        let err = store.load_cell(&grid, 0, &mut params, &mut opts).unwrap_err();
        let msg = format!("{err}");
        assert!(msg.contains("bad magic"), "{msg}");
    }
}
