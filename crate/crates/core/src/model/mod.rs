//! SO(2)-equivariant message passing network predicting Hamiltonian blocks.
//!
//! Node and edge embeddings are [`SphericalTensor`]s. Each of the `M` layers
//! runs a node-update block (messages, SO(2) transform, attention-weighted
//! sum over incoming edges, residual) and then an edge-update block (same
//! transform, residual on the edge). Linear heads read the coupled-basis
//! Hamiltonian blocks off the final node (on-site) and edge (hopping)
//! embeddings. Gradients come from a hand-written reverse pass.

mod blocks;
pub mod checkpoint;
mod loss;
mod network;
mod optim;
mod params;
mod so2;
pub mod synthetic;
mod tensor;

pub use blocks::{
    block_to_coupled, block_to_uncoupled, reconstruct_uncoupled, BasisMode, Block, BlockKey, BlockMatrix,
};
pub use loss::{loss, loss_from_sums, LossTerms, LossValue};
pub use network::{
    edge_update, forward, gaussian_features, init_embeddings, node_update, outputs_to_matrix, run_backward,
    run_forward, Halo, LocalEdge, LocalGraph, ModelInput, NoHalo, Outputs, Phase, Tape,
};
pub use optim::{Adam, Plateau};
pub use params::{HeadEntry, HeadLayout, LayerParams, MLinear, ModelConfig, ModelParams, So2Weights};
pub use so2::{so2_backward, so2_block, so2_forward, So2Cache};
pub use tensor::{create_messages, Frames, MessageBatch, SphericalTensor};

/// Values in one message: three embeddings of `(l_max+1)² × E`.
pub const fn message_values(l_max: usize, width: usize) -> usize {
    3 * (l_max + 1) * (l_max + 1) * width
}
