//! Model architecture: three networks (two proposal, one final), each a
//! multiresolution feature grid plus a small MLP stack. Per network, a flag
//! selects whether its parameters are spatially partitioned (anchored at
//! parameter-grid vertices and mixed by camera origin) or shared.
//!
//! For partitioned networks the dense coarse levels stay shared; only the
//! hash-backed fine levels and the MLP weights live in per-vertex sets.

use crate::error::Result;
use crate::featgrid::{GridConfig, GridLayout};

pub const NET_PROP1: usize = 0;
pub const NET_PROP2: usize = 1;
pub const NET_FINAL: usize = 2;

#[derive(Clone, Debug, serde::Serialize, serde::Deserialize)]
pub struct NetworkArch {
    pub grid: GridConfig,
    pub geom_hidden_layers: usize,
    pub geom_width: usize,
    /// 0 for density-only proposal networks.
    pub app_hidden_layers: usize,
    pub app_width: usize,
    pub dir_degree: usize,
    pub interpolated: bool,
    pub has_appearance: bool,
}

impl NetworkArch {
    pub fn proposal(grid: GridConfig, geom_width: usize, interpolated: bool) -> Self {
        NetworkArch {
            grid,
            geom_hidden_layers: 1,
            geom_width,
            app_hidden_layers: 0,
            app_width: 0,
            dir_degree: 0,
            interpolated,
            has_appearance: false,
        }
    }

    pub fn fina(
        grid: GridConfig,
        geom_width: usize,
        app_hidden_layers: usize,
        app_width: usize,
        dir_degree: usize,
        interpolated: bool,
    ) -> Self {
        NetworkArch {
            grid,
            geom_hidden_layers: 1,
            geom_width,
            app_hidden_layers,
            app_width,
            dir_degree,
            interpolated,
            has_appearance: true,
        }
    }

    /// Ordered (out, in) shapes of every linear layer: geometry hidden
    /// layers, density head, then (for the final network) appearance hidden
    /// layers and the RGB head.
    pub fn mlp_shapes(&self, layout: &GridLayout) -> Vec<(usize, usize)> {
        let mut shapes = Vec::new();
        let mut width = layout.feature_len();
        for _ in 0..self.geom_hidden_layers {
            shapes.push((self.geom_width, width));
            width = self.geom_width;
        }
        shapes.push((1, width)); // density head
        if self.has_appearance {
            let mut w = self.geom_width + 6 * self.dir_degree;
            for _ in 0..self.app_hidden_layers {
                shapes.push((self.app_width, w));
                w = self.app_width;
            }
            shapes.push((3, w)); // RGB head
        }
        shapes
    }

    pub fn density_head_idx(&self) -> usize {
        self.geom_hidden_layers
    }

    pub fn appearance_start_idx(&self) -> usize {
        self.geom_hidden_layers + 1
    }
}

#[derive(Clone, Debug)]
pub struct ModelArch {
    pub nets: Vec<NetworkArch>,
    pub layouts: Vec<GridLayout>,
}

impl ModelArch {
    pub fn new(nets: Vec<NetworkArch>) -> Result<Self> {
        let layouts = nets
            .iter()
            .map(|n| GridLayout::new(n.grid))
            .collect::<Result<Vec<_>>>()?;
        Ok(ModelArch { nets, layouts })
    }

    pub fn num_nets(&self) -> usize {
        self.nets.len()
    }

    pub fn any_interpolated(&self) -> bool {
        self.nets.iter().any(|n| n.interpolated)
    }
}
