use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Architecture of one transformer encoder stack.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub num_layers: usize,
    pub hidden: usize,
    pub heads: usize,
    pub head_dim: usize,
    pub ffn_hidden: usize,
    pub vocab_size: usize,
    pub max_len: usize,
}

impl EncoderConfig {
    pub fn validate(&self, side: &str) -> Result<()> {
        if self.num_layers == 0
            || self.hidden == 0
            || self.heads == 0
            || self.head_dim == 0
            || self.ffn_hidden == 0
            || self.vocab_size == 0
            || self.max_len == 0
        {
            return Err(Error::Config(format!(
                "{side} encoder: all dimensions must be positive"
            )));
        }
        if self.heads * self.head_dim != self.hidden {
            return Err(Error::Config(format!(
                "{side} encoder: heads ({}) x head_dim ({}) must equal hidden ({})",
                self.heads, self.head_dim, self.hidden
            )));
        }
        Ok(())
    }
}

/// How heavy and light activations are combined at a fused layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionMethod {
    /// Linear interpolation with the fixed weight `alpha`.
    FixedAlpha,
    /// Linear interpolation with one trainable zero-initialized weight per layer.
    LearnedAlphaPerLayer,
    /// Cross-attention from light states to the projected heavy states, plus skip.
    CrossAttention,
}

/// Point inside a transformer layer where heavy activations are extracted and
/// fused into the light layer. Extraction and fusion always use the same point.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FusionLocation {
    /// After the attention pre-normalization, before self-attention.
    BeforeAttn,
    /// Immediately after self-attention, before its skip connection.
    AfterAttn,
    /// After the self-attention skip connection.
    AfterAttnSkip,
    /// After the MLP pre-normalization, before the MLP.
    BeforeMlp,
    /// Immediately after the MLP, before its skip connection.
    AfterMlp,
    /// After the MLP skip connection.
    AfterMlpSkip,
}

impl FusionLocation {
    pub const ALL: [FusionLocation; 6] = [
        FusionLocation::BeforeAttn,
        FusionLocation::AfterAttn,
        FusionLocation::AfterAttnSkip,
        FusionLocation::BeforeMlp,
        FusionLocation::AfterMlp,
        FusionLocation::AfterMlpSkip,
    ];
}

/// Assignment of a source heavy layer to each light layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LayerMapping {
    /// Every `L_heavy / L_light`-th heavy layer starting at the offset.
    EvenOffset(usize),
    /// The last heavy layer feeds every light layer.
    LastLayerOnly,
    /// The last `L_light` heavy layers in order.
    LastK,
    /// The first `L_light` heavy layers in order.
    FirstK,
}

/// Which tensor the light MLP consumes at the `AfterAttn` location:
/// the raw self-attention output (pre-fusion) or the fused, skip-added state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MlpInputMode {
    #[default]
    PreFusion,
    PostFusion,
}

/// Full architecture configuration of the dual-encoder extractor.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EaveConfig {
    pub heavy: EncoderConfig,
    pub light: EncoderConfig,
    /// Context sequence length (S_c); inputs are padded or truncated to it.
    pub context_len: usize,
    /// Attribute sequence length (S_a).
    pub attribute_len: usize,
    pub fusion_method: FusionMethod,
    #[serde(default = "default_fusion_location")]
    pub fusion_location: FusionLocation,
    pub layer_mapping: LayerMapping,
    /// Interpolation weight for `FixedAlpha`.
    pub alpha: f32,
    /// Heavy/light learning-rate ratio; 0 freezes the heavy encoder.
    pub beta: f32,
    #[serde(default)]
    pub mlp_input_mode: MlpInputMode,
}

fn default_fusion_location() -> FusionLocation {
    FusionLocation::AfterAttn
}

impl EaveConfig {
    pub fn validate(&self) -> Result<()> {
        self.heavy.validate("heavy")?;
        self.light.validate("light")?;
        if self.context_len == 0 || self.attribute_len == 0 {
            return Err(Error::Config(
                "context_len and attribute_len must be positive".into(),
            ));
        }
        let joint = self.context_len + self.attribute_len;
        if self.light.max_len < joint {
            return Err(Error::Config(format!(
                "light max_len {} is below context_len + attribute_len = {joint}",
                self.light.max_len
            )));
        }
        if self.heavy.max_len < self.context_len || self.heavy.max_len < self.attribute_len {
            return Err(Error::Config(format!(
                "heavy max_len {} is below the configured segment lengths",
                self.heavy.max_len
            )));
        }
        if matches!(self.fusion_method, FusionMethod::FixedAlpha)
            && !(0.0..=1.0).contains(&self.alpha)
        {
            return Err(Error::Config(format!(
                "fixed alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if self.beta < 0.0 {
            return Err(Error::Config(format!(
                "beta must be non-negative, got {}",
                self.beta
            )));
        }
        // Must resolve to exactly L_light in-range indices.
        let mapped = self.mapped_layers()?;
        debug_assert_eq!(mapped.len(), self.light.num_layers);
        Ok(())
    }

    /// Source heavy layer for each light layer, in light-layer order.
    pub fn mapped_layers(&self) -> Result<Vec<usize>> {
        layer_mapping(
            self.heavy.num_layers,
            self.light.num_layers,
            self.layer_mapping,
        )
    }

    pub fn joint_len(&self) -> usize {
        self.context_len + self.attribute_len
    }
}

/// Resolves a mapping scheme to one heavy-layer index per light layer.
pub fn layer_mapping(
    l_heavy: usize,
    l_light: usize,
    scheme: LayerMapping,
) -> Result<Vec<usize>> {
    if l_light == 0 || l_heavy == 0 {
        return Err(Error::Config("layer counts must be positive".into()));
    }
    match scheme {
        LayerMapping::EvenOffset(k) => {
            if l_heavy % l_light != 0 {
                return Err(Error::IndivisibleMapping { l_heavy, l_light });
            }
            let stride = l_heavy / l_light;
            if k >= stride {
                return Err(Error::Config(format!(
                    "even mapping offset {k} must be below the stride {stride}"
                )));
            }
            Ok((0..l_light).map(|l| k + l * stride).collect())
        }
        LayerMapping::LastLayerOnly => Ok(vec![l_heavy - 1; l_light]),
        LayerMapping::LastK => {
            if l_light > l_heavy {
                return Err(Error::Config(format!(
                    "last-k mapping needs at most {l_heavy} light layers, got {l_light}"
                )));
            }
            Ok((l_heavy - l_light..l_heavy).collect())
        }
        LayerMapping::FirstK => {
            if l_light > l_heavy {
                return Err(Error::Config(format!(
                    "first-k mapping needs at most {l_heavy} light layers, got {l_light}"
                )));
            }
            Ok((0..l_light).collect())
        }
    }
}
