//! Denoiser network, reverse-mode differentiation and training.

pub mod dit;
pub mod graph;
pub mod params;
pub mod tensor;
pub mod train;

pub use dit::{encode_points, timestep_embedding, AttentionSource, Denoiser, DenoiserConfig, DenoiserOutput, Init};
pub use graph::{Gradients, Graph, Var};
pub use params::{AdamW, ParamStore};
pub use tensor::Tensor;
pub use train::{
    draw_example, example_gradients, loss_graph, loss_graph_with_mean, train_steps, AugmentPolicy, Example, LossRecord,
    TrainConfig, TrainState,
};
