//! Camera-space parameter grid.
//!
//! A 2D axis-aligned bounding box over all training-camera origins is split
//! into nx x ny cells (no partitioning along the vertical axis; cells extend
//! infinitely in z). Cells with enough cameras are active; cameras falling
//! in inactive cells are reassigned to the nearest active cell. Parameter
//! sets are anchored at lattice vertices, so adjacent cells share two of
//! their four corner sets and the interpolated parameter field is continuous
//! across cell boundaries.

use crate::error::{Error, Result};
use std::collections::BTreeSet;

pub type CellId = u32;
/// Lattice coordinates of a parameter-set anchor.
pub type VertexId = (u32, u32);

/// Four corner parameter-set ids (SW, SE, NW, NE) and their convex bilinear
/// coefficients for one camera origin.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MixWeights {
    pub vertices: [VertexId; 4],
    pub w: [f64; 4],
}

impl MixWeights {
    pub fn one_hot(vertices: [VertexId; 4], corner: usize) -> Self {
        let mut w = [0.0; 4];
        w[corner] = 1.0;
        MixWeights { vertices, w }
    }
}

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct ParamGrid {
    pub aabb_min: [f64; 2],
    pub aabb_max: [f64; 2],
    pub nx: u32,
    pub ny: u32,
    pub active_cells: BTreeSet<CellId>,
    /// Cell assignment per training camera (indices follow the dataset).
    pub camera_cells: Vec<CellId>,
}

impl ParamGrid {
    #[inline]
    pub fn cell_id(&self, i: u32, j: u32) -> CellId {
        j * self.nx + i
    }

    #[inline]
    pub fn cell_coords(&self, id: CellId) -> (u32, u32) {
        (id % self.nx, id / self.nx)
    }

    pub fn is_active(&self, id: CellId) -> bool {
        self.active_cells.contains(&id)
    }

    fn edge_x(&self, i: u32) -> f64 {
        let w = (self.aabb_max[0] - self.aabb_min[0]) / self.nx as f64;
        self.aabb_min[0] + i as f64 * w
    }

    fn edge_y(&self, j: u32) -> f64 {
        let h = (self.aabb_max[1] - self.aabb_min[1]) / self.ny as f64;
        self.aabb_min[1] + j as f64 * h
    }

    /// Closed rectangle of a cell. Both neighbors of an interior edge
    /// compute the identical edge coordinate.
    pub fn cell_bounds(&self, id: CellId) -> [f64; 4] {
        let (i, j) = self.cell_coords(id);
        [
            self.edge_x(i),
            self.edge_x(i + 1),
            self.edge_y(j),
            self.edge_y(j + 1),
        ]
    }

    pub fn cell_center(&self, id: CellId) -> [f64; 2] {
        let b = self.cell_bounds(id);
        [0.5 * (b[0] + b[1]), 0.5 * (b[2] + b[3])]
    }

    /// Corner vertex ids in (SW, SE, NW, NE) order.
    pub fn cell_corners(&self, id: CellId) -> [VertexId; 4] {
        let (i, j) = self.cell_coords(id);
        [(i, j), (i + 1, j), (i, j + 1), (i + 1, j + 1)]
    }

    /// All lattice vertices touched by at least one active cell.
    pub fn active_vertices(&self) -> BTreeSet<VertexId> {
        let mut out = BTreeSet::new();
        for &cell in &self.active_cells {
            for v in self.cell_corners(cell) {
                out.insert(v);
            }
        }
        out
    }

    /// Containing cell of a point inside the box. Points on a shared edge
    /// belong to the cell with the smaller linearized id.
    pub fn locate(&self, x: f64, y: f64) -> CellId {
        let pick = |v: f64, min: f64, extent: f64, n: u32| -> u32 {
            let t = (v - min) / (extent / n as f64);
            let f = t.floor();
            let mut idx = if f < 0.0 { 0 } else { f as u32 };
            // exact boundary: take the lower-index side
            if t == f && idx > 0 {
                idx -= 1;
            }
            idx.min(n - 1)
        };
        let i = pick(x, self.aabb_min[0], self.aabb_max[0] - self.aabb_min[0], self.nx);
        let j = pick(y, self.aabb_min[1], self.aabb_max[1] - self.aabb_min[1], self.ny);
        self.cell_id(i, j)
    }

    /// Chebyshev distance between two cells.
    pub fn chebyshev(&self, a: CellId, b: CellId) -> u32 {
        let (ai, aj) = self.cell_coords(a);
        let (bi, bj) = self.cell_coords(b);
        let dx = ai.abs_diff(bi);
        let dy = aj.abs_diff(bj);
        dx.max(dy)
    }

    /// Active cells within Chebyshev distance `k` of `home`, excluding home.
    pub fn neighbors_within(&self, home: CellId, k: u32) -> Vec<CellId> {
        self.active_cells
            .iter()
            .copied()
            .filter(|&c| c != home && self.chebyshev(home, c) <= k)
            .collect()
    }

    /// Nearest active cell by center-to-point distance; ties go to the
    /// smaller linearized id (BTreeSet iteration order).
    pub fn nearest_active(&self, p: [f64; 2]) -> Result<CellId> {
        let mut best: Option<(f64, CellId)> = None;
        for &cell in &self.active_cells {
            let c = self.cell_center(cell);
            let d2 = (c[0] - p[0]).powi(2) + (c[1] - p[1]).powi(2);
            if best.map_or(true, |(bd, _)| d2 < bd) {
                best = Some((d2, cell));
            }
        }
        best.map(|(_, c)| c)
            .ok_or_else(|| Error::Config("parameter grid has no active cells".into()))
    }

    /// Euclidean projection of a point onto the closed cell rectangle.
    pub fn project_origin_to_cell(&self, origin_xy: [f64; 2], cell: CellId) -> [f64; 2] {
        let b = self.cell_bounds(cell);
        [
            origin_xy[0].clamp(b[0], b[1]),
            origin_xy[1].clamp(b[2], b[3]),
        ]
    }

    /// Bilinear mixing weights of `origin_xy` with respect to `cell`'s four
    /// corner parameter sets. The origin must lie inside the cell or be
    /// projected into it first.
    pub fn mix_weights(&self, cell: CellId, origin_xy: [f64; 2]) -> Result<MixWeights> {
        if !self.is_active(cell) {
            return Err(Error::Contract(format!(
                "mix weights requested for inactive cell {cell}"
            )));
        }
        let b = self.cell_bounds(cell);
        let u = ((origin_xy[0] - b[0]) / (b[1] - b[0])).clamp(0.0, 1.0);
        let v = ((origin_xy[1] - b[2]) / (b[3] - b[2])).clamp(0.0, 1.0);
        Ok(MixWeights {
            vertices: self.cell_corners(cell),
            w: [
                (1.0 - u) * (1.0 - v),
                u * (1.0 - v),
                (1.0 - u) * v,
                u * v,
            ],
        })
    }

    /// Render-time lookup for an arbitrary origin: clamp into the bounding
    /// box, fall back to the nearest active cell, and project the origin
    /// into it before computing weights.
    pub fn locate_for_render(&self, origin_xy: [f64; 2]) -> Result<(CellId, MixWeights)> {
        let clamped = [
            origin_xy[0].clamp(self.aabb_min[0], self.aabb_max[0]),
            origin_xy[1].clamp(self.aabb_min[1], self.aabb_max[1]),
        ];
        let mut cell = self.locate(clamped[0], clamped[1]);
        if !self.is_active(cell) {
            cell = self.nearest_active(clamped)?;
        }
        let p = self.project_origin_to_cell(clamped, cell);
        let mw = self.mix_weights(cell, p)?;
        Ok((cell, mw))
    }
}

/// Build the parameter grid from training-camera origins.
pub fn build_param_grid(
    origins_xy: &[[f64; 2]],
    nx: u32,
    ny: u32,
    min_cameras: usize,
) -> Result<ParamGrid> {
    if origins_xy.is_empty() {
        return Err(Error::Config("parameter grid needs at least one camera".into()));
    }
    if nx < 1 || ny < 1 {
        return Err(Error::Config("grid must have at least 1x1 cells".into()));
    }
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for o in origins_xy {
        for a in 0..2 {
            lo[a] = lo[a].min(o[a]);
            hi[a] = hi[a].max(o[a]);
        }
    }
    for a in 0..2 {
        if hi[a] - lo[a] < 1e-9 {
            lo[a] -= 0.5;
            hi[a] += 0.5;
        }
    }
    let mut grid = ParamGrid {
        aabb_min: lo,
        aabb_max: hi,
        nx,
        ny,
        active_cells: BTreeSet::new(),
        camera_cells: Vec::with_capacity(origins_xy.len()),
    };
    let raw: Vec<CellId> = origins_xy.iter().map(|o| grid.locate(o[0], o[1])).collect();
    let mut counts = vec![0usize; (nx * ny) as usize];
    for &c in &raw {
        counts[c as usize] += 1;
    }
    grid.active_cells = counts
        .iter()
        .enumerate()
        .filter(|(_, &n)| n >= min_cameras)
        .map(|(c, _)| c as CellId)
        .collect();
    if grid.active_cells.is_empty() {
        return Err(Error::Config(format!(
            "no cell reaches min_cameras = {min_cameras}"
        )));
    }
    grid.camera_cells = raw
        .iter()
        .zip(origins_xy)
        .map(|(&c, o)| {
            if grid.is_active(c) {
                Ok(c)
            } else {
                grid.nearest_active(*o)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(grid)
}
