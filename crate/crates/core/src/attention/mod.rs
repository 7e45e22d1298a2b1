//! Convolutional and attentional simplicial layers, multi-head composition,
//! readouts and checkpoints.

mod checkpoint;
mod config;
mod context;
mod layer;
mod model;
mod params;
mod readout;

pub use checkpoint::{load_checkpoint, save_checkpoint, Manifest, TensorEntry, FORMAT_VERSION};
pub use config::{parameter_count, GsanLayerConfig, HeadCombine, LaplacianKind, ModelFamily};
pub use context::{Adjacency, SimplicialContext, Support};
pub use layer::{
    assemble_attentional_laplacian, attention_coefficients, attentional_laplacians, gsan_joint_layer_forward,
    gsan_layer_forward, gsccn_layer_forward, layer_forward_tape, multi_head_combine, AttentionNode,
    AttentionalLaplacian, Diffusion, LayerOutput,
};
pub use model::{Model, ModelConfig, ModelForward};
pub use params::{attention_keys, init_layer, AttnKey, FilterIds, HeadLayout, LayerLayout, LayerParams};
pub use readout::{
    candidate_faces, gather_candidate_features, pool_bundle, Affine, Mlp, Pooling, ReadoutConfig, ReadoutInput,
    ReadoutLayout,
};

#[cfg(test)]
mod tests;
