//! Tag ontology construction: co-occurrence statistics, a subtopic
//! classifier trained on a few labeled pairs, and DAG assembly under entropy
//! ordering.

mod classifier;
mod dag;
mod stats;

use std::path::Path;

use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use classifier::{score_pairs, ClassifierOptions, ScoredPair, SubtopicClassifier};
pub use dag::{
    build_dag, entropy_order, load_ontology, save_ontology, select_thresholds, verify_dag, DagEdge,
    EdgeOrigin, OntologyDag, ThresholdSelection, Thresholds,
};
pub use stats::{compute_cooc_stats, CoocStats, PairFeatures, ENTROPY_SMOOTHING, PAIR_FEATURE_DIM};

use crate::corpus::{read_jsonl, write_jsonl, Corpus};
use crate::error::{RadarError, Result};

/// One line of `subtopic_labels.jsonl`: `label` is 1 when `v` is a subtopic
/// of `u`.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtopicLabel {
    pub u: String,
    pub v: String,
    pub label: u8,
}

pub fn load_labels(path: &Path) -> Result<Vec<SubtopicLabel>> {
    let labels: Vec<SubtopicLabel> = read_jsonl(path)?;
    if let Some(bad) = labels.iter().find(|l| l.label > 1) {
        return Err(RadarError::Invalid(format!(
            "label for ({}, {}) must be 0 or 1, got {}",
            bad.u, bad.v, bad.label
        )));
    }
    Ok(labels)
}

pub fn save_labels(labels: &[SubtopicLabel], path: &Path) -> Result<()> {
    write_jsonl(path, labels)
}

/// Draws `n` distinct ordered co-occurring pairs `(u, v)` uniformly.
pub fn sample_label_pairs<R: Rng + ?Sized>(stats: &CoocStats, n: usize, rng: &mut R) -> Vec<(usize, usize)> {
    let ordered: Vec<(usize, usize)> = stats
        .pairs()
        .flat_map(|(a, b, _)| [(a, b), (b, a)])
        .collect();
    let n = n.min(ordered.len());
    let mut picked: Vec<usize> = sample(rng, ordered.len(), n).into_vec();
    picked.sort_unstable();
    picked.into_iter().map(|i| ordered[i]).collect()
}

#[derive(Clone, Debug)]
pub struct OntologyOptions {
    pub precision_target: f64,
    pub recall_target: f64,
    pub classifier: ClassifierOptions,
}

impl Default for OntologyOptions {
    fn default() -> Self {
        Self {
            precision_target: 0.9,
            recall_target: 0.9,
            classifier: ClassifierOptions::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct OntologyBuild {
    pub stats: CoocStats,
    pub classifier: SubtopicClassifier,
    pub scored: Vec<ScoredPair>,
    pub selection: ThresholdSelection,
    pub dag: OntologyDag,
    pub labels_used: usize,
    pub labels_skipped: usize,
}

/// Runs statistics, classifier training, threshold selection and DAG
/// assembly. Labeled pairs that never co-occur in the training videos carry
/// no features and are skipped.
pub fn build_ontology(corpus: &Corpus, labels: &[SubtopicLabel], opts: &OntologyOptions) -> Result<OntologyBuild> {
    let stats = compute_cooc_stats(corpus)?;
    let entropies = stats.entropies();
    let mut features = Vec::new();
    let mut targets = Vec::new();
    let mut skipped = 0;
    for l in labels {
        let lookup = |t: &str| {
            stats.index_of(t).ok_or_else(|| RadarError::UnknownTag {
                video: "<labels>".into(),
                tag: t.to_string(),
            })
        };
        let (u, v) = (lookup(&l.u)?, lookup(&l.v)?);
        if u == v || stats.cooc(u, v) == 0 {
            skipped += 1;
            continue;
        }
        features.push(stats.pair_features_with(u, v, entropies[u], entropies[v]));
        targets.push(l.label == 1);
    }
    if skipped > 0 {
        log::warn!("{skipped} labeled pairs do not co-occur in the training videos and were skipped");
    }
    let classifier = SubtopicClassifier::train(&features, &targets, &opts.classifier)?;
    let labeled: Vec<(f64, bool)> = features
        .iter()
        .zip(&targets)
        .map(|(f, &y)| (classifier.score(f), y))
        .collect();
    let selection = select_thresholds(&labeled, opts.precision_target, opts.recall_target)?;
    let scored = score_pairs(&classifier, &stats);
    let dag = build_dag(stats.tags(), &scored, &entropies, selection.thresholds)?;
    Ok(OntologyBuild {
        stats,
        classifier,
        scored,
        selection,
        dag,
        labels_used: targets.len(),
        labels_skipped: skipped,
    })
}
