use rand::Rng;
use rand_chacha::ChaCha20Rng;

use super::config::{EaveConfig, EncoderConfig, FusionMethod};
use crate::error::Result;
use crate::tensor::{Scalar, Tensor};

const INIT_STD: f64 = 0.02;

/// Truncated normal (|z| <= 2 std), the initialization used for every weight.
fn trunc_normal<T: Scalar>(rng: &mut ChaCha20Rng, shape: &[usize]) -> Tensor<T> {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        // Box-Muller from two uniforms.
        let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
        let u2: f64 = rng.gen_range(0.0..1.0);
        let z = (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        if z.abs() <= 2.0 {
            data.push(T::from_f64(z * INIT_STD));
        }
    }
    Tensor::new(data, shape).expect("shape/data agree by construction")
}

fn ones<T: Scalar>(n: usize) -> Tensor<T> {
    Tensor::new(vec![T::one(); n], &[n]).expect("shape/data agree")
}

#[derive(Debug, Clone)]
pub struct LayerParams<T> {
    pub attn_norm: Tensor<T>,
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
    pub mlp_norm: Tensor<T>,
    pub w_up: Tensor<T>,
    pub b_up: Tensor<T>,
    pub w_down: Tensor<T>,
    pub b_down: Tensor<T>,
}

impl<T: Scalar> LayerParams<T> {
    fn init(rng: &mut ChaCha20Rng, d: usize, d_ff: usize) -> Self {
        LayerParams {
            attn_norm: ones(d),
            wq: trunc_normal(rng, &[d, d]),
            wk: trunc_normal(rng, &[d, d]),
            wv: trunc_normal(rng, &[d, d]),
            wo: trunc_normal(rng, &[d, d]),
            mlp_norm: ones(d),
            w_up: trunc_normal(rng, &[d, d_ff]),
            b_up: Tensor::zeros(&[d_ff]),
            w_down: trunc_normal(rng, &[d_ff, d]),
            b_down: Tensor::zeros(&[d]),
        }
    }
}

#[derive(Debug, Clone)]
pub struct EncoderParams<T> {
    pub token_embed: Tensor<T>,
    pub pos_embed: Tensor<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_norm: Tensor<T>,
}

impl<T: Scalar> EncoderParams<T> {
    fn init(rng: &mut ChaCha20Rng, cfg: &EncoderConfig) -> Self {
        EncoderParams {
            token_embed: trunc_normal(rng, &[cfg.vocab_size, cfg.hidden]),
            pos_embed: trunc_normal(rng, &[cfg.max_len, cfg.hidden]),
            layers: (0..cfg.num_layers)
                .map(|_| LayerParams::init(rng, cfg.hidden, cfg.ffn_hidden))
                .collect(),
            final_norm: ones(cfg.hidden),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossAttnParams<T> {
    pub wq: Tensor<T>,
    pub wk: Tensor<T>,
    pub wv: Tensor<T>,
    pub wo: Tensor<T>,
}

/// Fusion parameters for one light layer: the heavy-to-light adaptor plus
/// whatever the configured fusion method needs.
#[derive(Debug, Clone)]
pub struct FusionLayerParams<T> {
    pub adaptor: Tensor<T>,
    /// Trainable interpolation weight, present only for learned-alpha fusion.
    /// Initialized to exactly zero.
    pub alpha: Option<Tensor<T>>,
    pub cross: Option<CrossAttnParams<T>>,
}

#[derive(Debug, Clone)]
pub struct HeadParams<T> {
    pub w: Tensor<T>,
    pub b: Tensor<T>,
}

/// The full model: both encoders, the per-layer fusion parameters, and the
/// tagging head.
#[derive(Debug, Clone)]
pub struct EaveModel<T> {
    pub config: EaveConfig,
    pub heavy: EncoderParams<T>,
    pub light: EncoderParams<T>,
    pub fusion: Vec<FusionLayerParams<T>>,
    pub head: HeadParams<T>,
}

impl EaveModel<f32> {
    pub fn init(config: EaveConfig, seed: u64) -> Result<Self> {
        Self::init_generic(config, seed)
    }
}

impl<T: Scalar> EaveModel<T> {
    pub fn init_generic(config: EaveConfig, seed: u64) -> Result<Self> {
        use rand::SeedableRng;
        config.validate()?;
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let heavy = EncoderParams::init(&mut rng, &config.heavy);
        let light = EncoderParams::init(&mut rng, &config.light);
        let d_h = config.heavy.hidden;
        let d_l = config.light.hidden;
        let fusion = (0..config.light.num_layers)
            .map(|_| FusionLayerParams {
                adaptor: trunc_normal(&mut rng, &[d_h, d_l]),
                alpha: match config.fusion_method {
                    FusionMethod::LearnedAlphaPerLayer => Some(Tensor::zeros(&[1])),
                    _ => None,
                },
                cross: match config.fusion_method {
                    FusionMethod::CrossAttention => Some(CrossAttnParams {
                        wq: trunc_normal(&mut rng, &[d_l, d_l]),
                        wk: trunc_normal(&mut rng, &[d_l, d_l]),
                        wv: trunc_normal(&mut rng, &[d_l, d_l]),
                        wo: trunc_normal(&mut rng, &[d_l, d_l]),
                    }),
                    _ => None,
                },
            })
            .collect();
        let head = HeadParams {
            w: trunc_normal(&mut rng, &[d_l, 3]),
            b: Tensor::zeros(&[3]),
        };
        Ok(EaveModel {
            config,
            heavy,
            light,
            fusion,
            head,
        })
    }

    pub fn cast<U: Scalar>(&self) -> EaveModel<U> {
        EaveModel {
            config: self.config.clone(),
            heavy: EncoderParams {
                token_embed: self.heavy.token_embed.cast(),
                pos_embed: self.heavy.pos_embed.cast(),
                layers: self
                    .heavy
                    .layers
                    .iter()
                    .map(|l| cast_layer(l))
                    .collect(),
                final_norm: self.heavy.final_norm.cast(),
            },
            light: EncoderParams {
                token_embed: self.light.token_embed.cast(),
                pos_embed: self.light.pos_embed.cast(),
                layers: self
                    .light
                    .layers
                    .iter()
                    .map(|l| cast_layer(l))
                    .collect(),
                final_norm: self.light.final_norm.cast(),
            },
            fusion: self
                .fusion
                .iter()
                .map(|f| FusionLayerParams {
                    adaptor: f.adaptor.cast(),
                    alpha: f.alpha.as_ref().map(|a| a.cast()),
                    cross: f.cross.as_ref().map(|c| CrossAttnParams {
                        wq: c.wq.cast(),
                        wk: c.wk.cast(),
                        wv: c.wv.cast(),
                        wo: c.wo.cast(),
                    }),
                })
                .collect(),
            head: HeadParams {
                w: self.head.w.cast(),
                b: self.head.b.cast(),
            },
        }
    }

    /// Visits every parameter with a stable name, in a fixed order. The
    /// optimizer relies on this order; the `heavy.` prefix marks the heavy
    /// learning-rate group.
    pub fn visit_params<'a>(&'a self, f: &mut dyn FnMut(String, &'a Tensor<T>)) {
        visit_encoder(&self.heavy, "heavy", &mut |name, t| f(name, t));
        visit_encoder(&self.light, "light", &mut |name, t| f(name, t));
        for (i, fl) in self.fusion.iter().enumerate() {
            f(format!("fusion.layer{i}.adaptor"), &fl.adaptor);
            if let Some(a) = &fl.alpha {
                f(format!("fusion.layer{i}.alpha"), a);
            }
            if let Some(c) = &fl.cross {
                f(format!("fusion.layer{i}.cross.wq"), &c.wq);
                f(format!("fusion.layer{i}.cross.wk"), &c.wk);
                f(format!("fusion.layer{i}.cross.wv"), &c.wv);
                f(format!("fusion.layer{i}.cross.wo"), &c.wo);
            }
        }
        f("head.w".into(), &self.head.w);
        f("head.b".into(), &self.head.b);
    }

    pub fn visit_params_mut(&mut self, f: &mut dyn FnMut(String, &mut Tensor<T>)) {
        visit_encoder_mut(&mut self.heavy, "heavy", f);
        visit_encoder_mut(&mut self.light, "light", f);
        for (i, fl) in self.fusion.iter_mut().enumerate() {
            f(format!("fusion.layer{i}.adaptor"), &mut fl.adaptor);
            if let Some(a) = &mut fl.alpha {
                f(format!("fusion.layer{i}.alpha"), a);
            }
            if let Some(c) = &mut fl.cross {
                f(format!("fusion.layer{i}.cross.wq"), &mut c.wq);
                f(format!("fusion.layer{i}.cross.wk"), &mut c.wk);
                f(format!("fusion.layer{i}.cross.wv"), &mut c.wv);
                f(format!("fusion.layer{i}.cross.wo"), &mut c.wo);
            }
        }
        f("head.w".into(), &mut self.head.w);
        f("head.b".into(), &mut self.head.b);
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.visit_params(&mut |name, _| names.push(name));
        names
    }

    /// Total scalar parameter count.
    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit_params(&mut |_, t| n += t.numel());
        n
    }

    /// Flattens every parameter into one vector, in visit order.
    pub fn flatten(&self) -> Vec<T> {
        let mut flat = Vec::with_capacity(self.param_count());
        self.visit_params(&mut |_, t| flat.extend_from_slice(t.data()));
        flat
    }

    /// Writes a flat vector (in visit order) back into the parameters.
    pub fn unflatten(&mut self, flat: &[T]) {
        let mut off = 0;
        self.visit_params_mut(&mut |_, t| {
            let n = t.numel();
            t.data_mut().copy_from_slice(&flat[off..off + n]);
            off += n;
        });
        assert_eq!(off, flat.len(), "flat parameter vector has wrong length");
    }
}

fn cast_layer<T: Scalar, U: Scalar>(l: &LayerParams<T>) -> LayerParams<U> {
    LayerParams {
        attn_norm: l.attn_norm.cast(),
        wq: l.wq.cast(),
        wk: l.wk.cast(),
        wv: l.wv.cast(),
        wo: l.wo.cast(),
        mlp_norm: l.mlp_norm.cast(),
        w_up: l.w_up.cast(),
        b_up: l.b_up.cast(),
        w_down: l.w_down.cast(),
        b_down: l.b_down.cast(),
    }
}

fn visit_encoder<'a, T: Scalar>(
    enc: &'a EncoderParams<T>,
    prefix: &str,
    f: &mut dyn FnMut(String, &'a Tensor<T>),
) {
    f(format!("{prefix}.token_embed"), &enc.token_embed);
    f(format!("{prefix}.pos_embed"), &enc.pos_embed);
    for (i, l) in enc.layers.iter().enumerate() {
        f(format!("{prefix}.layer{i}.attn_norm"), &l.attn_norm);
        f(format!("{prefix}.layer{i}.wq"), &l.wq);
        f(format!("{prefix}.layer{i}.wk"), &l.wk);
        f(format!("{prefix}.layer{i}.wv"), &l.wv);
        f(format!("{prefix}.layer{i}.wo"), &l.wo);
        f(format!("{prefix}.layer{i}.mlp_norm"), &l.mlp_norm);
        f(format!("{prefix}.layer{i}.w_up"), &l.w_up);
        f(format!("{prefix}.layer{i}.b_up"), &l.b_up);
        f(format!("{prefix}.layer{i}.w_down"), &l.w_down);
        f(format!("{prefix}.layer{i}.b_down"), &l.b_down);
    }
    f(format!("{prefix}.final_norm"), &enc.final_norm);
}

fn visit_encoder_mut<T: Scalar>(
    enc: &mut EncoderParams<T>,
    prefix: &str,
    f: &mut dyn FnMut(String, &mut Tensor<T>),
) {
    f(format!("{prefix}.token_embed"), &mut enc.token_embed);
    f(format!("{prefix}.pos_embed"), &mut enc.pos_embed);
    for (i, l) in enc.layers.iter_mut().enumerate() {
        f(format!("{prefix}.layer{i}.attn_norm"), &mut l.attn_norm);
        f(format!("{prefix}.layer{i}.wq"), &mut l.wq);
        f(format!("{prefix}.layer{i}.wk"), &mut l.wk);
        f(format!("{prefix}.layer{i}.wv"), &mut l.wv);
        f(format!("{prefix}.layer{i}.wo"), &mut l.wo);
        f(format!("{prefix}.layer{i}.mlp_norm"), &mut l.mlp_norm);
        f(format!("{prefix}.layer{i}.w_up"), &mut l.w_up);
        f(format!("{prefix}.layer{i}.b_up"), &mut l.b_up);
        f(format!("{prefix}.layer{i}.w_down"), &mut l.w_down);
        f(format!("{prefix}.layer{i}.b_down"), &mut l.b_down);
    }
    f(format!("{prefix}.final_norm"), &mut enc.final_norm);
}
