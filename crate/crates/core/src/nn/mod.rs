//! Feed-forward networks and the Adam optimizer.

mod adam;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use mlp::{dropout_mask, Mlp, MlpSpec, OutputTransform, POSITIVE_FLOOR};
