//! Differentiable primitives: layers, activations, encodings, the geometry
//! and appearance heads, and the reverse-mode tape that ties them together.

pub mod activation;
pub mod encoding;
pub mod layer;
pub mod mlp;
pub mod tape;

pub use activation::{activation_apply, sigmoid, softplus, Activation};
pub use encoding::{dir_encode, dir_encode_len};
pub use layer::{linear_apply, LinearLayer};
pub use mlp::{appearance_mlp, geometry_mlp};
pub use tape::{Adjoints, NodeId, Op, Tape};
