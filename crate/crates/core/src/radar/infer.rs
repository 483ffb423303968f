use std::sync::Arc;

use super::forward::{full_graph_sample, predict_scores, to_real, NodeFeatures};
use super::layer::LayerSinks;
use super::RadarModel;
use crate::autodiff::{Matrix, Tape};
use crate::corpus::{aggregate_frame_features, VideoRecord};
use crate::error::{RadarError, Result};
use crate::hetgraph::{Block, HeteroGraph, Relation};
use crate::real::Real;

/// Representations of every graph node after each layer, index 0 holding
/// `h⁰`.
#[derive(Clone, Debug, PartialEq)]
pub struct RepCache<T> {
    pub video: Vec<Matrix<T>>,
    pub tag: Vec<Matrix<T>>,
}

impl<T: Real> RepCache<T> {
    pub fn layers(&self) -> usize {
        self.video.len() - 1
    }

    pub fn final_tags(&self) -> &Matrix<T> {
        self.tag.last().expect("cache has layers")
    }

    pub fn final_videos(&self) -> &Matrix<T> {
        self.video.last().expect("cache has layers")
    }
}

/// Result of scoring one new video.
#[derive(Clone, Debug, PartialEq)]
pub struct Inductive<T> {
    /// Graph indices of the videos sending `r3` messages.
    pub sources: Vec<u32>,
    /// `h^l` of the new video for `l = 0..=L`.
    pub reps: Vec<Matrix<T>>,
    /// One score per graph tag.
    pub scores: Vec<T>,
}

impl<T: Real> RadarModel<T> {
    /// Full-graph evaluation-mode pass caching every layer.
    pub fn compute_cache(&self, graph: &HeteroGraph, feats: &NodeFeatures<T>) -> Result<RepCache<T>> {
        let sample = full_graph_sample(graph, self.config.layers);
        let mut tape = Tape::new();
        let out = self.forward(&mut tape, &sample, feats, None)?;
        let (video, tag) = out
            .layer_reps
            .iter()
            .map(|&(v, t)| (tape.value(v).clone(), tape.value(t).clone()))
            .unzip();
        Ok(RepCache { video, tag })
    }
}

/// Scores a video that is not part of the graph. Its `r3` sources are the
/// older videos of users its creator follows; representations are computed
/// from the cached layers of those sources, and neither the graph nor the
/// cache is modified.
pub fn inductive_infer<T: Real>(
    model: &RadarModel<T>,
    graph: &HeteroGraph,
    cache: &RepCache<T>,
    record: &VideoRecord,
) -> Result<Inductive<T>> {
    if cache.layers() != model.config.layers {
        return Err(RadarError::DimensionMismatch {
            expected: model.config.layers,
            found: cache.layers(),
            context: "cached layers".into(),
        });
    }
    let features = aggregate_frame_features(record)?;
    if features.len() != model.config.video_dim {
        return Err(RadarError::DimensionMismatch {
            expected: model.config.video_dim,
            found: features.len(),
            context: format!("features of video `{}`", record.id),
        });
    }
    let sources = graph.r3_sources_for(&record.user_id, record.timestamp, &record.id);
    let k = sources.len();
    let d = model.config.d;

    let mut tape = Tape::new();
    let x = tape.constant(Matrix::from_vec(1, features.len(), to_real(&features)));
    let h0 = model.video_in.apply(&mut tape, &model.store, x);
    let mut h = tape.value(h0).clone();
    let mut reps = vec![h.clone()];

    let src: Arc<[u32]> = (1..=k as u32).collect();
    let dst: Arc<[u32]> = vec![0u32; k].into();
    let empty: Arc<[u32]> = Arc::new([]);
    let blocks = Relation::ALL.map(|r| Block {
        relation: r,
        src: if r == Relation::R3 { src.clone() } else { empty.clone() },
        dst: if r == Relation::R3 { dst.clone() } else { empty.clone() },
    });
    for l in 0..model.config.layers {
        let mut tape = Tape::new();
        let mut rows = h.clone().into_vec();
        rows.extend_from_slice(cache.video[l].gather_rows(&sources).data());
        let hv = tape.constant(Matrix::from_vec(k + 1, d, rows));
        let ht = tape.constant(Matrix::zeros(0, d));
        let (mut attention, mut adv) = (Vec::new(), Vec::new());
        let (nv, _) = model.layer_forward(
            l,
            &mut tape,
            hv,
            ht,
            1,
            0,
            &blocks,
            LayerSinks {
                attention: &mut attention,
                adv: &mut adv,
            },
        );
        h = tape.value(nv).clone();
        reps.push(h.clone());
    }
    let scores = predict_scores(&h, cache.final_tags()).into_vec();
    Ok(Inductive { sources, reps, scores })
}
