//! The RADAR network: gated graph-transformer messages within each relation,
//! adversarial aggregation across relations, and dot-product tag scoring.

mod forward;
mod infer;
mod io;
mod layer;

#[cfg(test)]
mod tests;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use forward::{
    adversarial_loss, full_graph_sample, predict_scores, tag_logits, total_loss, AdvTerms, AttentionRecord,
    ForwardOutput, NodeFeatures, TrainCtx,
};
pub use infer::{inductive_infer, Inductive, RepCache};
pub use io::{load_model, read_model_manifest, save_model, ModelManifest, TensorEntry, MODEL_MANIFEST};
pub(crate) use io::{read_matrix, write_matrix};

use crate::autodiff::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{RadarError, Result};
use crate::hetgraph::{NodeType, Relation};
use crate::real::Real;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregator {
    #[default]
    Aan,
    Concat,
    Attention,
}

/// Architecture and graph switches for the ablation variants. The relation
/// switches are kept with the model so that scoring sees the same graph as
/// training did.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelFlags {
    pub drop_r1: bool,
    pub drop_r3: bool,
    pub no_gated_residual: bool,
    pub mutual_attention: bool,
    pub aggregator: Aggregator,
    pub no_adv: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarConfig {
    pub d: usize,
    pub layers: usize,
    pub heads: usize,
    pub video_dim: usize,
    pub tag_dim: usize,
    pub n_tags: usize,
    pub flags: ModelFlags,
}

impl RadarConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 {
            return Err(RadarError::Invalid("layer count must be at least 1".into()));
        }
        if self.d == 0 || self.heads == 0 || self.d % self.heads != 0 {
            return Err(RadarError::Invalid(format!(
                "hidden width {} must be a positive multiple of the head count {}",
                self.d, self.heads
            )));
        }
        if self.video_dim == 0 || self.tag_dim == 0 {
            return Err(RadarError::Invalid("input dimensions must be positive".into()));
        }
        if self.flags.no_adv && self.flags.aggregator != Aggregator::Aan {
            return Err(RadarError::Invalid(
                "no_adv only applies to the adversarial aggregator".into(),
            ));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d / self.heads
    }
}

/// `x · W (+ b)`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Linear {
    pub w: ParamId,
    pub b: Option<ParamId>,
}

impl Linear {
    fn new<T: Real, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let w = store.glorot(format!("{name}.w"), fan_in, fan_out, rng);
        let b = bias.then(|| store.zeros(format!("{name}.b"), 1, fan_out));
        Self { w, b }
    }

    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, store: &ParamStore<T>, x: Var) -> Var {
        let w = tape.param(store, self.w);
        let y = tape.matmul(x, w);
        match self.b {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => y,
        }
    }
}

/// Per-relation transformer and gate weights of one layer.
#[derive(Clone, Debug, PartialEq)]
pub struct GgtParams {
    /// One `d_h × d_h` matrix per head.
    pub w_msg: Vec<ParamId>,
    pub w_att: Vec<ParamId>,
    pub gate_a: Linear,
    pub gate_b: Linear,
    pub residual: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub enum AggregatorParams {
    Aan {
        common: Linear,
        unique_r1: Linear,
        unique_r2: Linear,
        discriminator: Option<Linear>,
    },
    Concat {
        proj: Linear,
    },
    Attention {
        proj: Linear,
        query: ParamId,
    },
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    /// Indexed by [`type_slot`].
    pub q: [Linear; 2],
    pub k: [Linear; 2],
    pub v: [Linear; 2],
    /// Indexed by [`Relation::index`].
    pub ggt: [GgtParams; 3],
    pub aggregator: AggregatorParams,
}

pub fn type_slot(t: NodeType) -> usize {
    match t {
        NodeType::Video => 0,
        NodeType::Tag => 1,
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RadarModel<T> {
    pub config: RadarConfig,
    pub store: ParamStore<T>,
    pub video_in: Linear,
    pub tag_in: Linear,
    pub tag_embedding: ParamId,
    pub layers: Vec<LayerParams>,
    /// Gradient reversal strength on the common features ahead of the
    /// discriminator. Training uses 1, so the projector `C` receives
    /// `−λ ∂L_c` while the discriminator receives `+λ ∂L_c`. Setting −1
    /// turns the reversal into a plain identity, which makes the tape
    /// gradient the exact gradient of the scalar loss for finite-difference
    /// checks.
    pub grl_coefficient: f64,
}

impl<T: Real> RadarModel<T> {
    /// Glorot-initialised projections with zero biases; the learnable tag
    /// embedding table starts at zero.
    pub fn new<R: Rng + ?Sized>(config: RadarConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d;
        let dh = config.head_dim();
        let mut store = ParamStore::new();
        let s = &mut store;
        let video_in = Linear::new(s, "video_in", config.video_dim, d, true, rng);
        let tag_in = Linear::new(s, "tag_in", config.tag_dim, d, true, rng);
        let tag_embedding = s.zeros("tag_embedding", config.n_tags, d);
        let mut layers = Vec::with_capacity(config.layers);
        for l in 0..config.layers {
            let p = format!("layer{l}");
            let typed = |s: &mut ParamStore<T>, what: &str, rng: &mut R| {
                [
                    Linear::new(s, &format!("{p}.{what}.video"), d, d, true, rng),
                    Linear::new(s, &format!("{p}.{what}.tag"), d, d, true, rng),
                ]
            };
            let q = typed(s, "q", rng);
            let k = typed(s, "k", rng);
            let v = typed(s, "v", rng);
            let ggt = Relation::ALL.map(|r| {
                let rp = format!("{p}.{}", relation_key(r));
                GgtParams {
                    w_msg: (0..config.heads)
                        .map(|h| s.glorot(format!("{rp}.w_msg.{h}"), dh, dh, rng))
                        .collect(),
                    w_att: (0..config.heads)
                        .map(|h| s.glorot(format!("{rp}.w_att.{h}"), dh, dh, rng))
                        .collect(),
                    gate_a: Linear::new(s, &format!("{rp}.gate_a"), d, d, false, rng),
                    gate_b: Linear::new(s, &format!("{rp}.gate_b"), d, d, true, rng),
                    residual: Linear::new(s, &format!("{rp}.residual"), d, d, true, rng),
                }
            });
            let aggregator = match config.flags.aggregator {
                Aggregator::Aan => AggregatorParams::Aan {
                    common: Linear::new(s, &format!("{p}.aan.common"), d, d, true, rng),
                    unique_r1: Linear::new(s, &format!("{p}.aan.unique_r1"), d, d, true, rng),
                    unique_r2: Linear::new(s, &format!("{p}.aan.unique_r2"), d, d, true, rng),
                    discriminator: (!config.flags.no_adv)
                        .then(|| Linear::new(s, &format!("{p}.aan.discriminator"), d, 1, true, rng)),
                },
                Aggregator::Concat => AggregatorParams::Concat {
                    proj: Linear::new(s, &format!("{p}.concat"), 2 * d, d, true, rng),
                },
                Aggregator::Attention => AggregatorParams::Attention {
                    proj: Linear::new(s, &format!("{p}.attention.proj"), d, d, true, rng),
                    query: s.glorot(format!("{p}.attention.query"), d, 1, rng),
                },
            };
            layers.push(LayerParams {
                q,
                k,
                v,
                ggt,
                aggregator,
            });
        }
        Ok(Self {
            config,
            store,
            video_in,
            tag_in,
            tag_embedding,
            layers,
            grl_coefficient: 1.0,
        })
    }

    pub fn n_params(&self) -> usize {
        self.store.numel()
    }

    /// Same architecture and parameter values in another precision.
    pub fn cast<U: Real>(&self) -> RadarModel<U> {
        let mut store = ParamStore::new();
        for id in self.store.ids() {
            store.add(self.store.name(id).to_string(), self.store.get(id).cast());
        }
        RadarModel {
            config: self.config.clone(),
            store,
            video_in: self.video_in,
            tag_in: self.tag_in,
            tag_embedding: self.tag_embedding,
            layers: self.layers.clone(),
            grl_coefficient: self.grl_coefficient,
        }
    }

    /// Replaces every parameter value, matching by name and shape.
    pub fn load_values(&mut self, values: Vec<(String, Matrix<T>)>) -> Result<()> {
        if values.len() != self.store.len() {
            return Err(RadarError::DimensionMismatch {
                expected: self.store.len(),
                found: values.len(),
                context: "parameter count".into(),
            });
        }
        for (name, value) in values {
            let id = self
                .store
                .find(&name)
                .ok_or_else(|| RadarError::Invalid(format!("unknown parameter `{name}`")))?;
            let slot = self.store.get_mut(id);
            if slot.shape() != value.shape() {
                return Err(RadarError::Invalid(format!(
                    "parameter `{name}` has shape {:?}, expected {:?}",
                    value.shape(),
                    slot.shape()
                )));
            }
            *slot = value;
        }
        Ok(())
    }
}

pub fn relation_key(r: Relation) -> &'static str {
    match r {
        Relation::R1 => "r1",
        Relation::R2 => "r2",
        Relation::R3 => "r3",
    }
}
