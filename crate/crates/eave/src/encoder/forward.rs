use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::config::{EaveConfig, EncoderConfig, FusionLocation, FusionMethod, MlpInputMode};
use super::params::{
    CrossAttnParams, EaveModel, EncoderParams, FusionLayerParams, HeadParams, LayerParams,
};
use super::reps::{HeavyReps, SegmentKind};
use crate::data::PAD_ID;
use crate::error::{Error, Result};
use crate::tensor::{Graph, NodeId, Scalar, Tensor};

// ── graph-side parameter handles ────────────────────────────────────────

#[derive(Debug, Clone, Copy)]
pub struct AttnNodes {
    pub wq: NodeId,
    pub wk: NodeId,
    pub wv: NodeId,
    pub wo: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct LayerNodes {
    pub attn_norm: NodeId,
    pub attn: AttnNodes,
    pub mlp_norm: NodeId,
    pub w_up: NodeId,
    pub b_up: NodeId,
    pub w_down: NodeId,
    pub b_down: NodeId,
}

#[derive(Debug, Clone)]
pub struct EncoderNodes {
    pub token_embed: NodeId,
    pub pos_embed: NodeId,
    pub layers: Vec<LayerNodes>,
    pub final_norm: NodeId,
}

#[derive(Debug, Clone, Copy)]
pub struct FusionLayerNodes {
    pub adaptor: NodeId,
    pub alpha: Option<NodeId>,
    pub cross: Option<AttnNodes>,
}

#[derive(Debug, Clone, Copy)]
pub struct HeadNodes {
    pub w: NodeId,
    pub b: NodeId,
}

/// Everything the light pass needs: the light encoder, the per-layer fusion
/// parameters, and the tagging head.
#[derive(Debug, Clone)]
pub struct LightSideNodes {
    pub enc: EncoderNodes,
    pub fusion: Vec<FusionLayerNodes>,
    pub head: HeadNodes,
}

#[derive(Debug, Clone)]
pub struct ModelNodes {
    pub heavy: EncoderNodes,
    pub light: LightSideNodes,
}

fn leaf<T: Scalar>(g: &mut Graph<T>, t: &Tensor<T>, trainable: bool) -> NodeId {
    let mut c = t.detached();
    c.set_requires_grad(trainable);
    g.input(&c)
}

fn leaf_layer<T: Scalar>(g: &mut Graph<T>, l: &LayerParams<T>, trainable: bool) -> LayerNodes {
    LayerNodes {
        attn_norm: leaf(g, &l.attn_norm, trainable),
        attn: AttnNodes {
            wq: leaf(g, &l.wq, trainable),
            wk: leaf(g, &l.wk, trainable),
            wv: leaf(g, &l.wv, trainable),
            wo: leaf(g, &l.wo, trainable),
        },
        mlp_norm: leaf(g, &l.mlp_norm, trainable),
        w_up: leaf(g, &l.w_up, trainable),
        b_up: leaf(g, &l.b_up, trainable),
        w_down: leaf(g, &l.w_down, trainable),
        b_down: leaf(g, &l.b_down, trainable),
    }
}

pub fn leaf_encoder<T: Scalar>(
    g: &mut Graph<T>,
    enc: &EncoderParams<T>,
    trainable: bool,
) -> EncoderNodes {
    EncoderNodes {
        token_embed: leaf(g, &enc.token_embed, trainable),
        pos_embed: leaf(g, &enc.pos_embed, trainable),
        layers: enc
            .layers
            .iter()
            .map(|l| leaf_layer(g, l, trainable))
            .collect(),
        final_norm: leaf(g, &enc.final_norm, trainable),
    }
}

fn leaf_cross<T: Scalar>(g: &mut Graph<T>, c: &CrossAttnParams<T>, trainable: bool) -> AttnNodes {
    AttnNodes {
        wq: leaf(g, &c.wq, trainable),
        wk: leaf(g, &c.wk, trainable),
        wv: leaf(g, &c.wv, trainable),
        wo: leaf(g, &c.wo, trainable),
    }
}

fn leaf_fusion<T: Scalar>(
    g: &mut Graph<T>,
    f: &FusionLayerParams<T>,
    trainable: bool,
) -> FusionLayerNodes {
    FusionLayerNodes {
        adaptor: leaf(g, &f.adaptor, trainable),
        alpha: f.alpha.as_ref().map(|a| leaf(g, a, trainable)),
        cross: f.cross.as_ref().map(|c| leaf_cross(g, c, trainable)),
    }
}

fn leaf_head<T: Scalar>(g: &mut Graph<T>, h: &HeadParams<T>, trainable: bool) -> HeadNodes {
    HeadNodes {
        w: leaf(g, &h.w, trainable),
        b: leaf(g, &h.b, trainable),
    }
}

impl<T: Scalar> EaveModel<T> {
    /// Copies every parameter into the graph as leaves, in the same order as
    /// [`EaveModel::visit_params`].
    pub fn leaf_into(&self, g: &mut Graph<T>, trainable: bool) -> ModelNodes {
        let heavy = leaf_encoder(g, &self.heavy, trainable);
        let light = self.leaf_light_side(g, trainable);
        ModelNodes { heavy, light }
    }

    /// Leaves for the light encoder, fusion, and head only (enough when heavy
    /// activations come from a cache).
    pub fn leaf_light_side(&self, g: &mut Graph<T>, trainable: bool) -> LightSideNodes {
        LightSideNodes {
            enc: leaf_encoder(g, &self.light, trainable),
            fusion: self
                .fusion
                .iter()
                .map(|f| leaf_fusion(g, f, trainable))
                .collect(),
            head: leaf_head(g, &self.head, trainable),
        }
    }
}

impl ModelNodes {
    /// Node ids in the exact order of [`EaveModel::visit_params`].
    pub fn visit(&self, f: &mut dyn FnMut(NodeId)) {
        visit_encoder_nodes(&self.heavy, f);
        visit_encoder_nodes(&self.light.enc, f);
        for fl in &self.light.fusion {
            f(fl.adaptor);
            if let Some(a) = fl.alpha {
                f(a);
            }
            if let Some(c) = fl.cross {
                f(c.wq);
                f(c.wk);
                f(c.wv);
                f(c.wo);
            }
        }
        f(self.light.head.w);
        f(self.light.head.b);
    }
}

fn visit_encoder_nodes(enc: &EncoderNodes, f: &mut dyn FnMut(NodeId)) {
    f(enc.token_embed);
    f(enc.pos_embed);
    for l in &enc.layers {
        f(l.attn_norm);
        f(l.attn.wq);
        f(l.attn.wk);
        f(l.attn.wv);
        f(l.attn.wo);
        f(l.mlp_norm);
        f(l.w_up);
        f(l.b_up);
        f(l.w_down);
        f(l.b_down);
    }
    f(enc.final_norm);
}

// ── dropout ─────────────────────────────────────────────────────────────

/// Training-time dropout state; absent at inference.
pub struct DropoutCtx<'r> {
    pub rate: f64,
    pub rng: &'r mut ChaCha20Rng,
}

fn maybe_dropout<T: Scalar>(
    g: &mut Graph<T>,
    x: NodeId,
    ctx: &mut Option<DropoutCtx<'_>>,
) -> Result<NodeId> {
    match ctx {
        Some(d) if d.rate > 0.0 => {
            let keep: Vec<bool> = (0..g.value(x).numel())
                .map(|_| d.rng.gen::<f64>() >= d.rate)
                .collect();
            g.dropout(x, &keep, d.rate)
        }
        _ => Ok(x),
    }
}

// ── attention and layer blocks ──────────────────────────────────────────

/// Multi-head scaled dot-product attention with the padding mask applied to
/// keys. `q_src == kv_src` gives self-attention; distinct sources give the
/// cross-attention used by fusion.
pub fn multi_head_attention<T: Scalar>(
    g: &mut Graph<T>,
    q_src: NodeId,
    kv_src: NodeId,
    p: &AttnNodes,
    key_mask: &[bool],
    heads: usize,
    head_dim: usize,
) -> Result<NodeId> {
    if !key_mask.iter().any(|&m| m) {
        return Err(Error::EmptyAttentionMask);
    }
    let q = g.matmul(q_src, p.wq)?;
    let k = g.matmul(kv_src, p.wk)?;
    let v = g.matmul(kv_src, p.wv)?;
    let q_len = g.shape(q)[0];
    let kv_len = g.shape(k)[0];
    if key_mask.len() != kv_len {
        return Err(Error::ShapeMismatch {
            op: "attention_mask",
            left: vec![kv_len],
            right: vec![key_mask.len()],
        });
    }
    let mut full_mask = Vec::with_capacity(q_len * kv_len);
    for _ in 0..q_len {
        full_mask.extend_from_slice(key_mask);
    }
    let scale = T::from_f64(1.0 / (head_dim as f64).sqrt());
    let mut head_outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let qs = g.slice_cols(q, h * head_dim, head_dim)?;
        let ks = g.slice_cols(k, h * head_dim, head_dim)?;
        let vs = g.slice_cols(v, h * head_dim, head_dim)?;
        let scores = g.matmul_nt(qs, ks)?;
        let scaled = g.scale(scores, scale);
        let probs = g.softmax_rows(scaled, Some(&full_mask))?;
        head_outs.push(g.matmul(probs, vs)?);
    }
    let ctx = g.concat_cols(&head_outs)?;
    g.matmul(ctx, p.wo)
}

fn mlp_block<T: Scalar>(g: &mut Graph<T>, x: NodeId, l: &LayerNodes) -> Result<NodeId> {
    let up = g.matmul(x, l.w_up)?;
    let up = g.add_bias(up, l.b_up)?;
    let act = g.gelu(up);
    let down = g.matmul(act, l.w_down)?;
    g.add_bias(down, l.b_down)
}

/// One heavy layer: pre-norm attention and MLP, both with skip connections.
/// Also returns the tensor extracted at the configured fusion location.
#[allow(clippy::too_many_arguments)]
fn heavy_layer<T: Scalar>(
    g: &mut Graph<T>,
    x_prev: NodeId,
    l: &LayerNodes,
    mask: &[bool],
    heads: usize,
    head_dim: usize,
    loc: FusionLocation,
    dropout: &mut Option<DropoutCtx<'_>>,
) -> Result<(NodeId, NodeId)> {
    let n1 = g.rms_norm(x_prev, l.attn_norm)?;
    let y_attn = multi_head_attention(g, n1, n1, &l.attn, mask, heads, head_dim)?;
    let y_attn = maybe_dropout(g, y_attn, dropout)?;
    let y = g.add(y_attn, x_prev)?;
    let n2 = g.rms_norm(y, l.mlp_norm)?;
    let x_mlp = mlp_block(g, n2, l)?;
    let x_mlp = maybe_dropout(g, x_mlp, dropout)?;
    let x_next = g.add(x_mlp, y)?;
    let extracted = match loc {
        FusionLocation::BeforeAttn => n1,
        FusionLocation::AfterAttn => y_attn,
        FusionLocation::AfterAttnSkip => y,
        FusionLocation::BeforeMlp => n2,
        FusionLocation::AfterMlp => x_mlp,
        FusionLocation::AfterMlpSkip => x_next,
    };
    Ok((x_next, extracted))
}

fn embed_tokens<T: Scalar>(
    g: &mut Graph<T>,
    enc: &EncoderNodes,
    ids: &[u32],
    dropout: &mut Option<DropoutCtx<'_>>,
) -> Result<NodeId> {
    let token_ids: Vec<usize> = ids.iter().map(|&i| i as usize).collect();
    let tok = g.embedding(enc.token_embed, &token_ids)?;
    let pos_ids: Vec<usize> = (0..ids.len()).collect();
    let pos = g.embedding(enc.pos_embed, &pos_ids)?;
    let x = g.add(tok, pos)?;
    maybe_dropout(g, x, dropout)
}

/// Runs all heavy layers on one padded token sequence and returns the tensors
/// extracted at the fusion location, keyed by heavy layer index, for the
/// layers in `wanted`. Padding rows of each extracted tensor are zeroed.
#[allow(clippy::too_many_arguments)]
pub fn encode_heavy<T: Scalar>(
    g: &mut Graph<T>,
    enc: &EncoderNodes,
    cfg: &EncoderConfig,
    ids: &[u32],
    mask: &[bool],
    loc: FusionLocation,
    wanted: &BTreeSet<usize>,
    dropout: &mut Option<DropoutCtx<'_>>,
) -> Result<BTreeMap<usize, NodeId>> {
    if ids.len() > cfg.max_len {
        return Err(Error::SeqLen {
            what: "heavy encoder input",
            got: ids.len(),
            expected: cfg.max_len,
        });
    }
    if mask.len() != ids.len() {
        return Err(Error::ShapeMismatch {
            op: "encode_heavy",
            left: vec![ids.len()],
            right: vec![mask.len()],
        });
    }
    let mut x = embed_tokens(g, enc, ids, dropout)?;
    let mut out = BTreeMap::new();
    for (li, layer) in enc.layers.iter().enumerate() {
        let (next, extracted) =
            heavy_layer(g, x, layer, mask, cfg.heads, cfg.head_dim, loc, dropout)?;
        x = next;
        if wanted.contains(&li) {
            let zeroed = g.mask_rows(extracted, mask)?;
            out.insert(li, zeroed);
        }
    }
    Ok(out)
}

/// Applies the configured fusion function at one light layer.
///
/// The heavy context and attribute tensors are concatenated along the
/// sequence axis (row i of the result aligns with light token i), projected
/// by the per-layer adaptor, and combined with the light tensor `y`.
#[allow(clippy::too_many_arguments)]
fn fuse_one<T: Scalar>(
    g: &mut Graph<T>,
    fl: &FusionLayerNodes,
    method: FusionMethod,
    alpha: T,
    y: NodeId,
    heavy_c: NodeId,
    heavy_a: NodeId,
    key_mask: &[bool],
    heads: usize,
    head_dim: usize,
) -> Result<NodeId> {
    let heavy = g.concat_rows(heavy_c, heavy_a)?;
    if g.shape(heavy)[0] != g.shape(y)[0] {
        return Err(Error::ShapeMismatch {
            op: "fuse",
            left: g.shape(y).to_vec(),
            right: g.shape(heavy).to_vec(),
        });
    }
    let proj = g.matmul(heavy, fl.adaptor)?;
    match method {
        FusionMethod::FixedAlpha => g.lerp_const(y, proj, alpha),
        FusionMethod::LearnedAlphaPerLayer => {
            let a = fl.alpha.expect("learned-alpha fusion has an alpha node");
            g.lerp_node(y, proj, a)
        }
        FusionMethod::CrossAttention => {
            let cp = fl.cross.expect("cross-attention fusion has its parameters");
            let attended = multi_head_attention(g, y, proj, &cp, key_mask, heads, head_dim)?;
            g.add(attended, y)
        }
    }
}

/// Per-layer taps recorded during a light pass; used by tests probing the
/// fusion outputs directly.
#[derive(Debug, Clone, Default)]
pub struct LightTrace {
    pub fuse_outputs: Vec<NodeId>,
}

#[allow(clippy::too_many_arguments)]
fn light_layer<T: Scalar>(
    g: &mut Graph<T>,
    x_prev: NodeId,
    l: &LayerNodes,
    fl: &FusionLayerNodes,
    heavy_c: NodeId,
    heavy_a: NodeId,
    cfg: &EaveConfig,
    alpha: T,
    mask: &[bool],
    dropout: &mut Option<DropoutCtx<'_>>,
) -> Result<(NodeId, NodeId)> {
    let loc = cfg.fusion_location;
    let heads = cfg.light.heads;
    let head_dim = cfg.light.head_dim;
    let method = cfg.fusion_method;
    let mut tap = None;
    let mut fuse = |g: &mut Graph<T>, t: NodeId| -> Result<NodeId> {
        let f = fuse_one(g, fl, method, alpha, t, heavy_c, heavy_a, mask, heads, head_dim)?;
        tap = Some(f);
        Ok(f)
    };

    let mut n1 = g.rms_norm(x_prev, l.attn_norm)?;
    if loc == FusionLocation::BeforeAttn {
        n1 = fuse(g, n1)?;
    }
    let y_attn = multi_head_attention(g, n1, n1, &l.attn, mask, heads, head_dim)?;
    let y_attn = maybe_dropout(g, y_attn, dropout)?;
    let y_pre_skip = if loc == FusionLocation::AfterAttn {
        fuse(g, y_attn)?
    } else {
        y_attn
    };
    let mut y = g.add(y_pre_skip, x_prev)?;
    if loc == FusionLocation::AfterAttnSkip {
        y = fuse(g, y)?;
    }
    // At the default location the published update feeds the MLP the raw
    // attention output, not the fused state; post_fusion switches to the
    // fused state for symmetry with the heavy layer.
    let mlp_src = if loc == FusionLocation::AfterAttn
        && cfg.mlp_input_mode == MlpInputMode::PreFusion
    {
        y_attn
    } else {
        y
    };
    let mut n2 = g.rms_norm(mlp_src, l.mlp_norm)?;
    if loc == FusionLocation::BeforeMlp {
        n2 = fuse(g, n2)?;
    }
    let x_mlp = mlp_block(g, n2, l)?;
    let mut x_mlp = maybe_dropout(g, x_mlp, dropout)?;
    if loc == FusionLocation::AfterMlp {
        x_mlp = fuse(g, x_mlp)?;
    }
    let mut x_next = g.add(x_mlp, y)?;
    if loc == FusionLocation::AfterMlpSkip {
        x_next = fuse(g, x_next)?;
    }
    let tap = tap.expect("every light layer fuses exactly once");
    Ok((x_next, tap))
}

/// Runs the light encoder over the concatenated context and attribute tokens,
/// fusing the mapped heavy activations into every layer, and returns the
/// final normalized per-token states plus the per-layer fusion taps.
#[allow(clippy::too_many_arguments)]
pub fn encode_light<T: Scalar>(
    g: &mut Graph<T>,
    side: &LightSideNodes,
    cfg: &EaveConfig,
    ctx_ids: &[u32],
    attr_ids: &[u32],
    ctx_mask: &[bool],
    attr_mask: &[bool],
    heavy_ctx: &BTreeMap<usize, NodeId>,
    heavy_attr: &BTreeMap<usize, NodeId>,
    dropout: &mut Option<DropoutCtx<'_>>,
) -> Result<(NodeId, LightTrace)> {
    if ctx_ids.len() != cfg.context_len {
        return Err(Error::SeqLen {
            what: "light context segment",
            got: ctx_ids.len(),
            expected: cfg.context_len,
        });
    }
    if attr_ids.len() != cfg.attribute_len {
        return Err(Error::SeqLen {
            what: "light attribute segment",
            got: attr_ids.len(),
            expected: cfg.attribute_len,
        });
    }
    let mapping = cfg.mapped_layers()?;
    let alpha = T::from_f32(cfg.alpha);

    let mut ids = Vec::with_capacity(cfg.joint_len());
    ids.extend_from_slice(ctx_ids);
    ids.extend_from_slice(attr_ids);
    let mut mask = Vec::with_capacity(cfg.joint_len());
    mask.extend_from_slice(ctx_mask);
    mask.extend_from_slice(attr_mask);

    let mut x = embed_tokens(g, &side.enc, &ids, dropout)?;
    let mut trace = LightTrace::default();
    for (li, layer) in side.enc.layers.iter().enumerate() {
        let f_idx = mapping[li];
        let hc = *heavy_ctx
            .get(&f_idx)
            .ok_or(Error::MissingHeavyLayer { layer: f_idx })?;
        let ha = *heavy_attr
            .get(&f_idx)
            .ok_or(Error::MissingHeavyLayer { layer: f_idx })?;
        let (next, tap) = light_layer(
            g,
            x,
            layer,
            &side.fusion[li],
            hc,
            ha,
            cfg,
            alpha,
            &mask,
            dropout,
        )?;
        x = next;
        trace.fuse_outputs.push(tap);
    }
    let states = g.rms_norm(x, side.enc.final_norm)?;
    Ok((states, trace))
}

/// A plain light pass with the fusion machinery absent entirely; the
/// reference for the alpha = 0 degeneracy checks.
pub fn encode_light_plain<T: Scalar>(
    g: &mut Graph<T>,
    side: &LightSideNodes,
    cfg: &EaveConfig,
    ctx_ids: &[u32],
    attr_ids: &[u32],
    ctx_mask: &[bool],
    attr_mask: &[bool],
    dropout: &mut Option<DropoutCtx<'_>>,
) -> Result<NodeId> {
    let mut ids = Vec::with_capacity(cfg.joint_len());
    ids.extend_from_slice(ctx_ids);
    ids.extend_from_slice(attr_ids);
    let mut mask = Vec::with_capacity(cfg.joint_len());
    mask.extend_from_slice(ctx_mask);
    mask.extend_from_slice(attr_mask);
    let heads = cfg.light.heads;
    let head_dim = cfg.light.head_dim;

    let mut x = embed_tokens(g, &side.enc, &ids, dropout)?;
    for layer in &side.enc.layers {
        let n1 = g.rms_norm(x, layer.attn_norm)?;
        let y_attn = multi_head_attention(g, n1, n1, &layer.attn, &mask, heads, head_dim)?;
        let y_attn = maybe_dropout(g, y_attn, dropout)?;
        let y = g.add(y_attn, x)?;
        let mlp_src = if cfg.fusion_location == FusionLocation::AfterAttn
            && cfg.mlp_input_mode == MlpInputMode::PreFusion
        {
            y_attn
        } else {
            y
        };
        let n2 = g.rms_norm(mlp_src, layer.mlp_norm)?;
        let x_mlp = mlp_block(g, n2, layer)?;
        let x_mlp = maybe_dropout(g, x_mlp, dropout)?;
        x = g.add(x_mlp, y)?;
    }
    g.rms_norm(x, side.enc.final_norm)
}

/// Inserts cached heavy representations into a graph as constant leaves.
pub fn reps_to_nodes<T: Scalar>(
    g: &mut Graph<T>,
    reps: &HeavyReps,
) -> BTreeMap<usize, NodeId> {
    reps.per_layer
        .iter()
        .map(|(idx, t)| (*idx, g.input(&t.cast::<T>())))
        .collect()
}

/// Pad mask derived from padded token ids.
pub fn pad_mask(ids: &[u32]) -> Vec<bool> {
    ids.iter().map(|&t| t != PAD_ID).collect()
}

// ── detached convenience passes ─────────────────────────────────────────

impl EaveModel<f32> {
    /// Runs the heavy encoder on one padded token sequence and returns the
    /// detached per-layer representations for caching. Deterministic: two
    /// calls on identical tokens produce bit-identical results.
    pub fn heavy_encode(&self, tokens: &[u32], kind: SegmentKind) -> Result<HeavyReps> {
        let expected = match kind {
            SegmentKind::Context => self.config.context_len,
            SegmentKind::Attribute => self.config.attribute_len,
        };
        if tokens.len() != expected {
            return Err(Error::SeqLen {
                what: "heavy_encode input",
                got: tokens.len(),
                expected,
            });
        }
        let mask = pad_mask(tokens);
        let mut g = Graph::<f32>::new();
        let enc = leaf_encoder(&mut g, &self.heavy, false);
        let wanted: BTreeSet<usize> = self.config.mapped_layers()?.into_iter().collect();
        let map = encode_heavy(
            &mut g,
            &enc,
            &self.config.heavy,
            tokens,
            &mask,
            self.config.fusion_location,
            &wanted,
            &mut None,
        )?;
        let per_layer = map
            .into_iter()
            .map(|(idx, id)| (idx, g.value(id).detached()))
            .collect();
        Ok(HeavyReps {
            kind,
            fingerprint: self.fingerprint(),
            seq_len: tokens.len(),
            per_layer,
        })
    }

    /// Runs the light encoder against cached heavy representations and
    /// returns the final per-token states. Rejects stale caches by
    /// fingerprint.
    pub fn light_encode(
        &self,
        ctx_tokens: &[u32],
        attr_tokens: &[u32],
        reps_c: &HeavyReps,
        reps_a: &HeavyReps,
    ) -> Result<Tensor<f32>> {
        let fp = self.fingerprint();
        for reps in [reps_c, reps_a] {
            if reps.fingerprint != fp {
                return Err(Error::StaleCache {
                    cached: reps.fingerprint,
                    model: fp,
                });
            }
        }
        let mut g = Graph::<f32>::new();
        let side = self.leaf_light_side(&mut g, false);
        let hc = reps_to_nodes(&mut g, reps_c);
        let ha = reps_to_nodes(&mut g, reps_a);
        let (states, _) = encode_light(
            &mut g,
            &side,
            &self.config,
            ctx_tokens,
            attr_tokens,
            &pad_mask(ctx_tokens),
            &pad_mask(attr_tokens),
            &hc,
            &ha,
            &mut None,
        )?;
        Ok(g.value(states).detached())
    }
}
