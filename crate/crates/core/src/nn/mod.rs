//! Feed-forward networks with hand-written backpropagation.
//!
//! Every learned function in the crate (representation, instruction network,
//! policy, critics) is an [`Mlp`]: dense layers, one hidden activation, linear
//! output. Inputs are batched row-major: one sample per row.

mod adam;
mod checkpoint;
mod gradcheck;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState, ScalarAdam};
pub use checkpoint::{read_mlp, write_mlp, MLP_FORMAT_VERSION};
pub use gradcheck::{grad_check, grad_check_with_floor, GradCheckReport, FD_STEP};
pub use mlp::{Activation, ForwardCache, Mlp, MlpGrads};

/// Hidden width used when a config does not name one.
pub const DEFAULT_HIDDEN_WIDTH: usize = 256;
pub const DEFAULT_HIDDEN_LAYERS: usize = 2;

/// Layer sizes for `input -> hidden x layers -> output`.
pub fn layer_sizes(input: usize, hidden: usize, hidden_layers: usize, output: usize) -> Vec<usize> {
    let mut sizes = Vec::with_capacity(hidden_layers + 2);
    sizes.push(input);
    sizes.extend(std::iter::repeat(hidden).take(hidden_layers));
    sizes.push(output);
    sizes
}
