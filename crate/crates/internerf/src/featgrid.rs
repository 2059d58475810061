//! Multiresolution spatial feature encoder.
//!
//! Coarse levels store one entry per lattice point of a dense 3D grid;
//! fine levels back the same lattice with a fixed-size hash table. A query
//! point is trilinearly interpolated at every level and the per-level
//! features are concatenated. Gradients flow back to table entries by
//! scattering the trilinear weights.

use crate::error::{Error, Result};
use crate::num::Real;
use crate::rng::CounterRng;
use std::io::{Read, Write};

/// Odd primes for the coordinate-mixing hash. The first is Knuth's
/// multiplicative constant; the other two are the usual spatial-hash picks.
const HASH_PRIMES: [u32; 3] = [2_654_435_761, 805_459_861, 3_674_653_429];

/// Scale of the uniform init for table entries.
pub const TABLE_INIT_SCALE: f64 = 1e-4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub struct GridConfig {
    pub levels: usize,
    /// Hash bucket count for fine levels; must be a power of two.
    pub table_size: u32,
    /// Features per table entry.
    pub features: usize,
    pub base_resolution: u32,
    pub finest_resolution: u32,
    /// Levels with `resolution^3 <= dense_threshold` are stored densely.
    pub dense_threshold: u32,
}

impl GridConfig {
    pub fn new(
        levels: usize,
        table_size: u32,
        features: usize,
        base_resolution: u32,
        finest_resolution: u32,
    ) -> Self {
        GridConfig {
            levels,
            table_size,
            features,
            base_resolution,
            finest_resolution,
            dense_threshold: table_size,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.features == 0 {
            return Err(Error::Config("grid needs >= 1 level and >= 1 feature".into()));
        }
        if !self.table_size.is_power_of_two() {
            return Err(Error::Config(format!(
                "table_size {} is not a power of two",
                self.table_size
            )));
        }
        if self.base_resolution < 1 || self.base_resolution > self.finest_resolution {
            return Err(Error::Config(format!(
                "resolutions must satisfy 1 <= base ({}) <= finest ({})",
                self.base_resolution, self.finest_resolution
            )));
        }
        if self.levels == 1 && self.base_resolution != self.finest_resolution {
            return Err(Error::Contract(
                "a single level requires base_resolution == finest_resolution".into(),
            ));
        }
        Ok(())
    }
}

/// Geometric ladder of per-level lattice resolutions, endpoints pinned to the
/// configured base and finest values.
pub fn level_resolutions(cfg: &GridConfig) -> Result<Vec<u32>> {
    cfg.validate()?;
    let l = cfg.levels;
    if l == 1 {
        return Ok(vec![cfg.base_resolution]);
    }
    let base = cfg.base_resolution as f64;
    let finest = cfg.finest_resolution as f64;
    let growth = (finest / base).powf(1.0 / (l - 1) as f64);
    let mut out = Vec::with_capacity(l);
    let mut prev = 0u32;
    for i in 0..l {
        let r = if i == 0 {
            cfg.base_resolution
        } else if i == l - 1 {
            cfg.finest_resolution
        } else {
            (base * growth.powi(i as i32)).round() as u32
        };
        let r = r.max(prev); // guard against rounding making the ladder dip
        out.push(r);
        prev = r;
    }
    Ok(out)
}

/// Hash a lattice corner into `[0, table_size)`. `table_size` must be a
/// power of two.
#[inline]
pub fn hash_index(cell: [u32; 3], table_size: u32) -> u32 {
    debug_assert!(table_size.is_power_of_two());
    let h = cell[0]
        .wrapping_mul(HASH_PRIMES[0])
        ^ cell[1].wrapping_mul(HASH_PRIMES[1])
        ^ cell[2].wrapping_mul(HASH_PRIMES[2]);
    h & (table_size - 1)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LevelMode {
    Dense,
    Hashed,
}

/// One level's storage: `entries * features` scalars, entry-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LevelTable<T> {
    pub mode: LevelMode,
    pub resolution: u32,
    pub features: usize,
    pub data: Vec<T>,
}

impl<T: Real> LevelTable<T> {
    pub fn entries(&self) -> usize {
        self.data.len() / self.features
    }
}

/// All levels of one encoder.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureTables<T> {
    pub levels: Vec<LevelTable<T>>,
}

/// Precomputed per-level layout for a grid config: resolutions, storage
/// modes, and the mapping from level index to hashed-slot index.
#[derive(Clone, Debug)]
pub struct GridLayout {
    pub cfg: GridConfig,
    pub resolutions: Vec<u32>,
    pub dense: Vec<bool>,
}

impl GridLayout {
    pub fn new(cfg: GridConfig) -> Result<Self> {
        let resolutions = level_resolutions(&cfg)?;
        let dense = resolutions
            .iter()
            .map(|&r| (r as u64).pow(3) <= cfg.dense_threshold as u64)
            .collect();
        Ok(GridLayout {
            cfg,
            resolutions,
            dense,
        })
    }

    pub fn feature_len(&self) -> usize {
        self.cfg.levels * self.cfg.features
    }

    pub fn level_entries(&self, level: usize) -> usize {
        if self.dense[level] {
            (self.resolutions[level] as usize).pow(3)
        } else {
            self.cfg.table_size as usize
        }
    }

    /// Level indices stored in hash tables, in level order.
    pub fn hashed_levels(&self) -> Vec<usize> {
        (0..self.cfg.levels).filter(|&l| !self.dense[l]).collect()
    }

    /// Slot of `level` within the hashed-level list, if hashed.
    pub fn hashed_slot(&self, level: usize) -> Option<usize> {
        if self.dense.get(level).copied().unwrap_or(false) {
            return None;
        }
        Some(self.dense[..level].iter().filter(|d| !**d).count())
    }

    pub fn zero_tables<T: Real>(&self) -> FeatureTables<T> {
        FeatureTables {
            levels: (0..self.cfg.levels)
                .map(|l| LevelTable {
                    mode: if self.dense[l] {
                        LevelMode::Dense
                    } else {
                        LevelMode::Hashed
                    },
                    resolution: self.resolutions[l],
                    features: self.cfg.features,
                    data: vec![T::zero(); self.level_entries(l) * self.cfg.features],
                })
                .collect(),
        }
    }

    pub fn init_tables<T: Real>(&self, rng: &mut CounterRng) -> FeatureTables<T> {
        let mut tables = self.zero_tables();
        for level in &mut tables.levels {
            for v in &mut level.data {
                *v = T::lit(rng.uniform(-TABLE_INIT_SCALE, TABLE_INIT_SCALE));
            }
        }
        tables
    }
}

/// Corner indices and trilinear weights of one level's lookup.
#[derive(Clone, Copy, Debug)]
pub struct LevelLookup<T> {
    /// Entry index per corner (already dense- or hash-addressed).
    pub corners: [u32; 8],
    pub weights: [T; 8],
    /// Fractional in-cell position, for weight derivatives w.r.t. position.
    pub frac: [T; 3],
    /// d(frac)/d(scene x): (resolution - 1) / 2 for each axis.
    pub frac_scale: T,
}

impl<T: Real> LevelLookup<T> {
    /// d(weight of corner c)/d(scene x along `axis`).
    #[inline]
    pub fn weight_dx(&self, corner: usize, axis: usize) -> T {
        let mut g = self.frac_scale;
        for a in 0..3 {
            let bit = (corner >> a) & 1;
            let f = self.frac[a];
            if a == axis {
                g = if bit == 1 { g } else { -g };
            } else {
                g = g * if bit == 1 { f } else { T::one() - f };
            }
        }
        g
    }
}

#[inline]
fn check_in_box<T: Real>(x: [T; 3]) -> Result<()> {
    for (axis, v) in x.iter().enumerate() {
        if !(v.abs() <= T::one()) {
            return Err(Error::Contract(format!(
                "query point outside [-1,1]^3 on axis {axis}: {v:?}"
            )));
        }
    }
    Ok(())
}

/// Resolve one level's 8 surrounding entries and their trilinear weights.
///
/// The lattice has `resolution` points per axis spanning [-1, 1], so a dense
/// level owns exactly `resolution^3` entries and distinct lattice points map
/// to distinct entries.
pub fn lookup_level<T: Real>(
    resolution: u32,
    dense: bool,
    table_size: u32,
    x: [T; 3],
) -> LevelLookup<T> {
    let r = resolution;
    if r == 1 {
        return LevelLookup {
            corners: [0; 8],
            weights: [
                T::one(),
                T::zero(),
                T::zero(),
                T::zero(),
                T::zero(),
                T::zero(),
                T::zero(),
                T::zero(),
            ],
            frac: [T::zero(); 3],
            frac_scale: T::zero(),
        };
    }
    let half = T::lit(0.5);
    let scale = T::lit((r - 1) as f64) * half;
    let mut cell = [0u32; 3];
    let mut frac = [T::zero(); 3];
    for a in 0..3 {
        // map [-1,1] to [0, r-1]
        let u = (x[a] + T::one()) * scale;
        let max_cell = r - 2;
        let c = u.floor();
        let mut ci = if c < T::zero() {
            0
        } else {
            c.to_u32().unwrap_or(max_cell)
        };
        if ci > max_cell {
            ci = max_cell;
        }
        cell[a] = ci;
        frac[a] = u - T::lit(ci as f64);
    }
    let mut corners = [0u32; 8];
    let mut weights = [T::zero(); 8];
    for c in 0..8 {
        let mut w = T::one();
        let mut p = [0u32; 3];
        for a in 0..3 {
            let bit = ((c >> a) & 1) as u32;
            p[a] = cell[a] + bit;
            let f = frac[a];
            w = w * if bit == 1 { f } else { T::one() - f };
        }
        corners[c] = if dense {
            (p[2] * r + p[1]) * r + p[0]
        } else {
            hash_index(p, table_size)
        };
        weights[c] = w;
    }
    LevelLookup {
        corners,
        weights,
        frac,
        frac_scale: scale,
    }
}

/// Interpolate + concatenate across all levels. Output length is
/// `levels * features`.
pub fn grid_encode<T: Real>(
    tables: &FeatureTables<T>,
    layout: &GridLayout,
    x: [T; 3],
) -> Result<Vec<T>> {
    check_in_box(x)?;
    if tables.levels.len() != layout.cfg.levels {
        return Err(Error::Shape(format!(
            "tables have {} levels, config says {}",
            tables.levels.len(),
            layout.cfg.levels
        )));
    }
    let f = layout.cfg.features;
    let mut out = vec![T::zero(); layout.feature_len()];
    for (l, table) in tables.levels.iter().enumerate() {
        let lk = lookup_level(
            layout.resolutions[l],
            layout.dense[l],
            layout.cfg.table_size,
            x,
        );
        let dst = &mut out[l * f..(l + 1) * f];
        accumulate_level(table, &lk, T::one(), dst);
    }
    Ok(out)
}

/// dst += scale * (trilinear gather from `table`).
#[inline]
pub fn accumulate_level<T: Real>(
    table: &LevelTable<T>,
    lk: &LevelLookup<T>,
    scale: T,
    dst: &mut [T],
) {
    let f = table.features;
    for c in 0..8 {
        let w = lk.weights[c] * scale;
        if w == T::zero() {
            continue;
        }
        let base = lk.corners[c] as usize * f;
        let src = &table.data[base..base + f];
        for (d, s) in dst.iter_mut().zip(src) {
            *d = *d + w * *s;
        }
    }
}

/// Scatter `upstream` (length = features) back into a level's gradient
/// buffer: grad[corner] += scale * weight_c * upstream.
#[inline]
pub fn scatter_level<T: Real>(
    grad: &mut [T],
    features: usize,
    lk: &LevelLookup<T>,
    scale: T,
    upstream: &[T],
) {
    for c in 0..8 {
        let w = lk.weights[c] * scale;
        if w == T::zero() {
            continue;
        }
        let base = lk.corners[c] as usize * features;
        let dst = &mut grad[base..base + features];
        for (d, u) in dst.iter_mut().zip(upstream) {
            *d = *d + w * *u;
        }
    }
}

// --- serialization ------------------------------------------------------

fn write_u32<W: Write>(w: &mut W, v: u32) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn read_u32<R: Read>(r: &mut R) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Write a table list: descriptor (level count; per level mode, resolution,
/// entry count, features) followed by each level's entries as little-endian
/// f32.
pub fn write_tables<W: Write>(w: &mut W, tables: &[LevelTable<f32>]) -> std::io::Result<()> {
    write_u32(w, tables.len() as u32)?;
    for t in tables {
        write_u32(
            w,
            match t.mode {
                LevelMode::Dense => 0,
                LevelMode::Hashed => 1,
            },
        )?;
        write_u32(w, t.resolution)?;
        write_u32(w, t.entries() as u32)?;
        write_u32(w, t.features as u32)?;
    }
    for t in tables {
        for v in &t.data {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_tables<R: Read>(r: &mut R) -> std::io::Result<Vec<LevelTable<f32>>> {
    let count = read_u32(r)? as usize;
    let mut shapes = Vec::with_capacity(count);
    for _ in 0..count {
        let mode = match read_u32(r)? {
            0 => LevelMode::Dense,
            1 => LevelMode::Hashed,
            m => {
                return Err(std::io::Error::new(
                    std::io::ErrorKind::InvalidData,
                    format!("unknown level mode {m}"),
                ))
            }
        };
        let resolution = read_u32(r)?;
        let entries = read_u32(r)? as usize;
        let features = read_u32(r)? as usize;
        shapes.push((mode, resolution, entries, features));
    }
    let mut out = Vec::with_capacity(count);
    for (mode, resolution, entries, features) in shapes {
        let mut data = vec![0f32; entries * features];
        let mut b = [0u8; 4];
        for v in &mut data {
            r.read_exact(&mut b)?;
            *v = f32::from_le_bytes(b);
        }
        out.push(LevelTable {
            mode,
            resolution,
            features,
            data,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn small_cfg() -> GridConfig {
        GridConfig::new(3, 64, 2, 4, 16)
    }

    #[test]
    fn resolutions_paper_table_endpoints() {
        let cfg = GridConfig::new(10, 1 << 21, 4, 512, 8192);
        let res = level_resolutions(&cfg).unwrap();
        assert_eq!(res.len(), 10);
        assert_eq!(res[0], 512);
        assert_eq!(res[9], 8192);
        assert!(res.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn resolutions_single_level() {
        let cfg = GridConfig::new(1, 64, 2, 16, 16);
        assert_eq!(level_resolutions(&cfg).unwrap(), vec![16]);
    }

    #[test]
    fn resolutions_power_of_two_ladder() {
        let cfg = GridConfig::new(5, 64, 2, 16, 256);
        assert_eq!(level_resolutions(&cfg).unwrap(), vec![16, 32, 64, 128, 256]);
    }

    #[test]
    fn resolutions_single_level_mismatch_is_error() {
        let cfg = GridConfig::new(1, 64, 2, 16, 32);
        assert!(level_resolutions(&cfg).is_err());
    }

    #[test]
    fn hash_zero_cell_is_zero() {
        assert_eq!(hash_index([0, 0, 0], 1 << 10), 0);
    }

    #[test]
    fn hash_uniformity_chi_square() {
        use statrs::distribution::{ChiSquared, ContinuousCDF};
        let buckets = 1u32 << 10;
        let n = 100_000usize;
        let mut counts = vec![0u64; buckets as usize];
        let mut rng = CounterRng::from_key(99, &[1]);
        for _ in 0..n {
            let cell = [
                rng.next_u64() as u32 & 0xffff,
                rng.next_u64() as u32 & 0xffff,
                rng.next_u64() as u32 & 0xffff,
            ];
            counts[hash_index(cell, buckets) as usize] += 1;
        }
        let expected = n as f64 / buckets as f64;
        let chi2: f64 = counts
            .iter()
            .map(|&c| {
                let d = c as f64 - expected;
                d * d / expected
            })
            .sum();
        let dist = ChiSquared::new((buckets - 1) as f64).unwrap();
        let p = 1.0 - dist.cdf(chi2);
        assert!(p > 0.01, "chi2 = {chi2}, p = {p}");
    }

    #[test]
    fn dense_lattice_point_returns_entry() {
        let layout = GridLayout::new(small_cfg()).unwrap();
        assert!(layout.dense[0]);
        let mut rng = CounterRng::from_key(3, &[7]);
        let mut tables = layout.zero_tables::<f64>();
        for level in &mut tables.levels {
            for v in &mut level.data {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
        // lattice point (1, 2, 3) of level 0 (resolution 4)
        let r = layout.resolutions[0];
        let p = [1u32, 2, 3];
        let x = [
            -1.0 + 2.0 * p[0] as f64 / (r - 1) as f64,
            -1.0 + 2.0 * p[1] as f64 / (r - 1) as f64,
            -1.0 + 2.0 * p[2] as f64 / (r - 1) as f64,
        ];
        let out = grid_encode(&tables, &layout, x).unwrap();
        let idx = ((p[2] * r + p[1]) * r + p[0]) as usize * 2;
        let entry = &tables.levels[0].data[idx..idx + 2];
        assert_relative_eq!(out[0], entry[0], max_relative = 1e-12);
        assert_relative_eq!(out[1], entry[1], max_relative = 1e-12);
    }

    #[test]
    fn zero_tables_encode_to_zero() {
        let layout = GridLayout::new(small_cfg()).unwrap();
        let tables = layout.zero_tables::<f64>();
        let out = grid_encode(&tables, &layout, [0.3, -0.2, 0.9]).unwrap();
        assert_eq!(out.len(), 6);
        assert!(out.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn edge_midpoint_averages_adjacent_entries() {
        let layout = GridLayout::new(small_cfg()).unwrap();
        let mut rng = CounterRng::from_key(4, &[8]);
        let mut tables = layout.zero_tables::<f64>();
        for level in &mut tables.levels {
            for v in &mut level.data {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
        // midpoint of the x-edge between lattice points (0,1,1) and (1,1,1)
        // on level 0 (resolution 4).
        let r = layout.resolutions[0];
        let step = 2.0 / (r - 1) as f64;
        let x = [-1.0 + 0.5 * step, -1.0 + step, -1.0 + step];
        let out = grid_encode(&tables, &layout, x).unwrap();
        let ia = ((1 * r + 1) * r) as usize * 2;
        let ib = ((1 * r + 1) * r + 1) as usize * 2;
        let d = &tables.levels[0].data;
        assert_relative_eq!(out[0], 0.5 * (d[ia] + d[ib]), epsilon = 1e-12);
        assert_relative_eq!(out[1], 0.5 * (d[ia + 1] + d[ib + 1]), epsilon = 1e-12);
    }

    #[test]
    fn outside_box_is_contract_violation() {
        let layout = GridLayout::new(small_cfg()).unwrap();
        let tables = layout.zero_tables::<f64>();
        assert!(grid_encode(&tables, &layout, [1.5, 0.0, 0.0]).is_err());
        assert!(grid_encode(&tables, &layout, [0.0, f64::NAN, 0.0]).is_err());
    }

    #[test]
    fn scatter_weights_sum_to_one_per_level() {
        let layout = GridLayout::new(small_cfg()).unwrap();
        let mut rng = CounterRng::from_key(5, &[9]);
        for _ in 0..100 {
            let x = [
                rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 1.0),
                rng.uniform(-1.0, 1.0),
            ];
            for l in 0..layout.cfg.levels {
                let lk = lookup_level::<f64>(
                    layout.resolutions[l],
                    layout.dense[l],
                    layout.cfg.table_size,
                    x,
                );
                // scatter a unit upstream and check total mass
                let mut grad = vec![0.0f64; layout.level_entries(l)];
                for c in 0..8 {
                    grad[lk.corners[c] as usize] += lk.weights[c];
                }
                let total: f64 = grad.iter().sum();
                assert_relative_eq!(total, 1.0, epsilon = 1e-12);
                assert!(lk.weights.iter().all(|&w| w >= 0.0));
            }
        }
    }

    #[test]
    fn table_roundtrip_is_bit_exact() {
        let layout = GridLayout::new(small_cfg()).unwrap();
        let mut rng = CounterRng::from_key(6, &[10]);
        let tables = layout.init_tables::<f32>(&mut rng);
        let mut buf = Vec::new();
        write_tables(&mut buf, &tables.levels).unwrap();
        let back = read_tables(&mut buf.as_slice()).unwrap();
        assert_eq!(back.len(), tables.levels.len());
        for (a, b) in back.iter().zip(&tables.levels) {
            assert_eq!(a.mode, b.mode);
            assert_eq!(a.resolution, b.resolution);
            assert!(a.data.iter().zip(&b.data).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    proptest! {
        #[test]
        fn hash_always_in_range(x in any::<u32>(), y in any::<u32>(), z in any::<u32>(),
                                shift in 4u32..20) {
            let size = 1u32 << shift;
            prop_assert!(hash_index([x, y, z], size) < size);
        }

        #[test]
        fn trilinear_weights_convex(px in -1.0f64..1.0, py in -1.0f64..1.0, pz in -1.0f64..1.0,
                                    res in 2u32..64) {
            let lk = lookup_level::<f64>(res, true, 1 << 10, [px, py, pz]);
            let sum: f64 = lk.weights.iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-9);
            prop_assert!(lk.weights.iter().all(|&w| (-1e-12..=1.0 + 1e-12).contains(&w)));
        }
    }

    #[test]
    fn encode_is_locally_continuous() {
        let layout = GridLayout::new(small_cfg()).unwrap();
        let mut rng = CounterRng::from_key(11, &[2]);
        let mut tables = layout.zero_tables::<f64>();
        for level in &mut tables.levels {
            for v in &mut level.data {
                *v = rng.uniform(-1.0, 1.0);
            }
        }
        let x0 = [0.111, -0.222, 0.333];
        let base = grid_encode(&tables, &layout, x0).unwrap();
        let eps = 1e-6;
        let x1 = [x0[0] + eps, x0[1], x0[2]];
        let moved = grid_encode(&tables, &layout, x1).unwrap();
        for (a, b) in base.iter().zip(&moved) {
            // spread of entries is <= 2, finest scale factor is (16-1)/2
            assert!((a - b).abs() < 2.0 * 7.5 * eps * 8.0);
        }
    }
}
