//! Heavy and light transformer encoders with sparse-layer fusion.
//!
//! The heavy encoder runs on context and attribute separately; the tensor at
//! the configured fusion location of each mapped layer is extracted (and can
//! be cached). The light encoder runs on the concatenated pair and fuses the
//! extracted heavy activations into the matching layer at the same location.

mod checkpoint;
mod config;
mod forward;
mod params;
mod reps;

pub use checkpoint::{load_model, save_model};
pub use config::{
    layer_mapping, EaveConfig, EncoderConfig, FusionLocation, FusionMethod, LayerMapping,
    MlpInputMode,
};
pub use forward::{
    encode_heavy, encode_light, encode_light_plain, leaf_encoder, multi_head_attention, pad_mask,
    reps_to_nodes, AttnNodes, DropoutCtx, EncoderNodes, FusionLayerNodes, HeadNodes, LayerNodes,
    LightSideNodes, LightTrace, ModelNodes,
};
pub use params::{
    CrossAttnParams, EaveModel, EncoderParams, FusionLayerParams, HeadParams, LayerParams,
};
pub use reps::{HeavyReps, SegmentKind};

#[cfg(test)]
pub(crate) use config::tests::tiny_config;
