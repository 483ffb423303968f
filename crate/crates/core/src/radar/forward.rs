use std::collections::HashMap;
use std::sync::Arc;

use rand::RngCore;

use super::layer::LayerSinks;
use super::RadarModel;
use crate::autodiff::{sigmoid, Matrix, Tape, Var};
use crate::corpus::{aggregate_frame_features, Corpus};
use crate::error::{RadarError, Result};
use crate::hetgraph::{Block, Frontier, HeteroGraph, LayeredSample, Relation};
use crate::real::Real;

/// Raw inputs of every graph node: mean frame features per video and word
/// embeddings per tag, in graph index order.
#[derive(Clone, Debug, PartialEq)]
pub struct NodeFeatures<T> {
    pub video: Matrix<T>,
    pub tag: Matrix<T>,
}

impl<T: Real> NodeFeatures<T> {
    pub fn from_corpus(corpus: &Corpus, graph: &HeteroGraph) -> Result<Self> {
        let by_id: HashMap<&str, usize> = corpus.videos.iter().enumerate().map(|(i, v)| (v.id.as_str(), i)).collect();
        let mut rows = Vec::with_capacity(graph.n_videos());
        for v in &graph.videos {
            let &i = by_id
                .get(v.id.as_str())
                .ok_or_else(|| RadarError::Invalid(format!("graph video `{}` missing from the corpus", v.id)))?;
            rows.push(to_real(&aggregate_frame_features(&corpus.videos[i])?));
        }
        let vocab = corpus.vocab_index();
        let mut tags = Vec::with_capacity(graph.n_tags());
        for t in &graph.tags {
            let &i = vocab
                .get(t.as_str())
                .ok_or_else(|| RadarError::Invalid(format!("graph tag `{t}` missing from the vocabulary")))?;
            tags.push(to_real(&corpus.vocab[i].word_embedding));
        }
        let video = if rows.is_empty() {
            Matrix::zeros(0, corpus.feature_dim())
        } else {
            Matrix::from_rows(&rows)
        };
        Ok(Self {
            video,
            tag: Matrix::from_rows(&tags),
        })
    }

    /// Appends one video's features, returning its row.
    pub fn push_video(&mut self, features: &[f32]) -> Result<usize> {
        if features.len() != self.video.cols() {
            return Err(RadarError::DimensionMismatch {
                expected: self.video.cols(),
                found: features.len(),
                context: "video feature".into(),
            });
        }
        let mut data = std::mem::replace(&mut self.video, Matrix::zeros(0, 0)).into_vec();
        data.extend(features.iter().map(|&x| T::of(x as f64)));
        let cols = features.len();
        self.video = Matrix::from_vec(data.len() / cols, cols, data);
        Ok(self.video.rows() - 1)
    }
}

pub(crate) fn to_real<T: Real>(xs: &[f32]) -> Vec<T> {
    xs.iter().map(|&x| T::of(x as f64)).collect()
}

/// Randomness and rates that only apply while training.
pub struct TrainCtx<'a> {
    pub rng: &'a mut dyn RngCore,
    pub feature_dropout: f64,
}

/// Discriminator losses of one layer.
#[derive(Clone, Copy, Debug)]
pub struct AdvTerms {
    pub l_u: Var,
    pub l_c: Var,
}

/// Attention weights of one softmax call, kept for inspection.
#[derive(Clone, Debug)]
pub struct AttentionRecord {
    pub layer: usize,
    pub head: usize,
    pub relations: Vec<Relation>,
    pub weights: Var,
    pub segments: Arc<[u32]>,
    pub n_segments: usize,
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    /// Final representations of the seed videos.
    pub video: Var,
    /// Final representations of the seed tags.
    pub tag: Var,
    pub adv: Vec<AdvTerms>,
    pub attention: Vec<AttentionRecord>,
    /// `(video, tag)` representations of frontier `l` at layer `l`.
    pub layer_reps: Vec<(Var, Var)>,
}

impl<T: Real> RadarModel<T> {
    /// `h⁰`: projected features for videos, projected word embedding plus
    /// learnable embedding for tags.
    pub fn input_reps(&self, tape: &mut Tape<T>, feats: &NodeFeatures<T>, frontier: &Frontier) -> (Var, Var) {
        let store = &self.store;
        let v = tape.constant(feats.video.gather_rows(&frontier.videos));
        let h_video = self.video_in.apply(tape, store, v);
        let t = tape.constant(feats.tag.gather_rows(&frontier.tags));
        let projected = self.tag_in.apply(tape, store, t);
        let table = tape.param(store, self.tag_embedding);
        let emb = tape.gather(table, frontier.tags.iter().copied().collect());
        let h_tag = tape.add(projected, emb);
        (h_video, h_tag)
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        sample: &LayeredSample,
        feats: &NodeFeatures<T>,
        mut train: Option<&mut TrainCtx<'_>>,
    ) -> Result<ForwardOutput> {
        if sample.layers() != self.config.layers {
            return Err(RadarError::DimensionMismatch {
                expected: self.config.layers,
                found: sample.layers(),
                context: "sampled layers".into(),
            });
        }
        let (mut hv, mut ht) = self.input_reps(tape, feats, &sample.frontiers[0]);
        let mut out = ForwardOutput {
            video: hv,
            tag: ht,
            adv: Vec::new(),
            attention: Vec::new(),
            layer_reps: vec![(hv, ht)],
        };
        for l in 0..self.config.layers {
            if let Some(ctx) = train.as_deref_mut() {
                hv = tape.dropout(hv, ctx.feature_dropout, &mut *ctx.rng);
                ht = tape.dropout(ht, ctx.feature_dropout, &mut *ctx.rng);
            }
            let upper = &sample.frontiers[l + 1];
            let (nv, nt) = self.layer_forward(
                l,
                tape,
                hv,
                ht,
                upper.videos.len(),
                upper.tags.len(),
                &sample.blocks[l],
                LayerSinks {
                    attention: &mut out.attention,
                    adv: &mut out.adv,
                },
            );
            hv = nv;
            ht = nt;
            out.layer_reps.push((hv, ht));
        }
        out.video = hv;
        out.tag = ht;
        Ok(out)
    }
}

/// Every node is a destination at every layer and every edge is used.
pub fn full_graph_sample(graph: &HeteroGraph, layers: usize) -> LayeredSample {
    let all = Frontier::new((0..graph.n_videos() as u32).collect(), (0..graph.n_tags() as u32).collect());
    let blocks = Relation::ALL.map(|r| {
        let (src, dst): (Vec<u32>, Vec<u32>) = graph.edges(r).pairs().unzip();
        Block {
            relation: r,
            src: src.into(),
            dst: dst.into(),
        }
    });
    LayeredSample {
        frontiers: vec![all; layers + 1],
        blocks: vec![blocks; layers],
    }
}

/// `h(v) · h(t)ᵀ` for every pair, before the sigmoid.
pub fn tag_logits<T: Real>(tape: &mut Tape<T>, video: Var, tag: Var) -> Var {
    tape.matmul_t(video, tag)
}

/// `ŝ = sigmoid(h(v) · h(t)ᵀ)`
pub fn predict_scores<T: Real>(video: &Matrix<T>, tag: &Matrix<T>) -> Matrix<T> {
    video.matmul_t(tag).map(sigmoid)
}

/// `Σ_l (L_u + λ L_c)`, or `None` without discriminators.
pub fn adversarial_loss<T: Real>(tape: &mut Tape<T>, adv: &[AdvTerms], lambda: T) -> Option<Var> {
    let mut total: Option<Var> = None;
    for a in adv {
        let weighted = tape.scale(a.l_c, lambda);
        let term = tape.add(a.l_u, weighted);
        total = Some(match total {
            Some(t) => tape.add(t, term),
            None => term,
        });
    }
    total
}

/// Tag BCE plus the scheduled adversarial terms.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, tag_bce: Var, adv: &[AdvTerms], lambda: T) -> Var {
    match adversarial_loss(tape, adv, lambda) {
        Some(a) => tape.add(tag_bce, a),
        None => tag_bce,
    }
}
