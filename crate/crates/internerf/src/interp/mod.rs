//! Camera-centric parameter interpolation: the parameter grid, bilinear
//! mixing, vertex-anchored parameter sets, and the disk-backed store that
//! swaps cells in and out of memory.

pub mod arch;
pub mod grid;
pub mod mixed;
pub mod params;
pub mod store;

pub use arch::{ModelArch, NetworkArch, NET_FINAL, NET_PROP1, NET_PROP2};
pub use grid::{build_param_grid, CellId, MixWeights, ParamGrid, VertexId};
pub use mixed::{mixed_density, mixed_forward, mixed_grid_encode, mixed_linear};
pub use params::{ModelGrads, ModelParams, NetShared, NetVertex, ParamRef, VertexSet};
pub use store::{OptState, ParamStore, StoreMode};
