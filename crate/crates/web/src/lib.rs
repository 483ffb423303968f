//! Browser bindings for three small demonstrations. Every export returns a
//! JSON string so the page needs no extra glue.

use std::collections::HashSet;

use serde::Serialize;
use wasm_bindgen::prelude::*;

use radar_core::corpus::{split_corpus, Split};
use radar_core::eval::evaluate;
use radar_core::hetgraph::{build_graph, GraphOptions};
use radar_core::ontology::{build_ontology, OntologyOptions};
use radar_core::synthgen::{gen_synth, SynthConfig};
use radar_core::trainer::{lambda_schedule, TrainConfig, Trainer};
use radar_core::Result;

#[derive(Debug, Serialize)]
pub struct CurvePoint {
    pub p: f64,
    pub lambda: f64,
}

/// Adversarial weight over training progress.
pub fn lambda_curve(lambda0: f64, gamma: f64, points: usize) -> Result<Vec<CurvePoint>> {
    let n = points.max(2);
    (0..n)
        .map(|i| {
            let p = i as f64 / (n - 1) as f64;
            Ok(CurvePoint {
                p,
                lambda: lambda_schedule(p, lambda0, gamma)?,
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct FoundEdge {
    pub child: String,
    pub parent: String,
    pub score: f64,
    pub planted: bool,
}

#[derive(Debug, Serialize)]
pub struct Recovery {
    pub n_videos: usize,
    pub n_tags: usize,
    pub labels_used: usize,
    pub delta_r: f64,
    pub planted_edges: usize,
    pub found_edges: usize,
    /// Found edges whose parent is a planted ancestor of the child.
    pub precision: f64,
    /// Planted direct edges that were found.
    pub recall: f64,
    pub edges: Vec<FoundEdge>,
}

/// Plants an ontology in a synthetic corpus and rebuilds it from tag
/// co-occurrence plus a few labeled pairs.
pub fn recover_ontology(n_videos: usize, n_tags: usize, seed: u64) -> Result<Recovery> {
    let cfg = SynthConfig {
        n_videos,
        n_tags,
        n_users: (n_videos / 10).max(4),
        seed,
        ..SynthConfig::default()
    };
    let synth = gen_synth(&cfg)?;
    let corpus = split_corpus(synth.corpus, [0.8, 0.1, 0.1], seed, false)?;
    let built = build_ontology(&corpus, &synth.labels, &OntologyOptions::default())?;

    let truth = &synth.ontology;
    let planted: HashSet<(&str, &str)> = truth
        .edges
        .iter()
        .map(|e| (truth.tags[e.child].as_str(), truth.tags[e.parent].as_str()))
        .collect();
    let index = |t: &str| truth.tags.iter().position(|x| x == t);
    let is_ancestor = |child: &str, parent: &str| {
        let (Some(c), Some(p)) = (index(child), index(parent)) else {
            return false;
        };
        let mut stack = vec![c];
        let mut seen = HashSet::new();
        while let Some(n) = stack.pop() {
            for q in truth.parents_of(n) {
                if q == p {
                    return true;
                }
                if seen.insert(q) {
                    stack.push(q);
                }
            }
        }
        false
    };

    let dag = &built.dag;
    let edges: Vec<FoundEdge> = dag
        .edges
        .iter()
        .map(|e| {
            let (child, parent) = (dag.tags[e.child].clone(), dag.tags[e.parent].clone());
            FoundEdge {
                planted: planted.contains(&(child.as_str(), parent.as_str())),
                child,
                parent,
                score: e.score,
            }
        })
        .collect();
    let consistent = edges.iter().filter(|e| is_ancestor(&e.child, &e.parent)).count();
    let hits = edges.iter().filter(|e| e.planted).count();
    Ok(Recovery {
        n_videos: corpus.videos.len(),
        n_tags: dag.n_tags(),
        labels_used: built.labels_used,
        delta_r: built.selection.thresholds.delta_r,
        planted_edges: planted.len(),
        found_edges: edges.len(),
        precision: consistent as f64 / edges.len().max(1) as f64,
        recall: hits as f64 / planted.len().max(1) as f64,
        edges,
    })
}

#[derive(Debug, Serialize)]
pub struct SpreadComparison {
    pub p_imit: f64,
    pub full_map: f64,
    pub drop_r3_map: f64,
    pub imitated_fraction: f64,
}

/// Trains a small model with and without the follow relation on a synthetic
/// corpus and reports test mAP for both.
pub fn compare_spread(p_imit: f64, epochs: usize, seed: u64) -> Result<SpreadComparison> {
    let cfg = SynthConfig {
        n_videos: 400,
        n_tags: 30,
        n_users: 40,
        follow_density: 0.15,
        video_dim: 8,
        tag_dim: 8,
        p_imit,
        seed,
        ..SynthConfig::default()
    };
    let synth = gen_synth(&cfg)?;
    let imitated = synth
        .provenance
        .iter()
        .filter(|p| p.source.is_some())
        .count() as f64
        / synth.provenance.len() as f64;
    let mut corpus = split_corpus(synth.corpus, [0.7, 0.15, 0.15], seed, true)?;
    corpus.filter_training_min_tags();
    let (graph, _) = build_graph(&corpus, &synth.ontology, &GraphOptions::default())?;
    let run = |drop_r3: bool| -> Result<f64> {
        let config = TrainConfig {
            epochs,
            batch_size: 64,
            d: 16,
            learning_rate: 0.005,
            patience: 0,
            drop_r3,
            seed,
            ..TrainConfig::default()
        };
        let mut trainer = Trainer::<f32>::new(config, &corpus, &graph)?;
        trainer.train()?;
        let best = trainer.best_model();
        Ok(evaluate(&best, trainer.graph(), trainer.features(), &corpus, Split::Test)?.map)
    };
    Ok(SpreadComparison {
        p_imit,
        full_map: run(false)?,
        drop_r3_map: run(true)?,
        imitated_fraction: imitated,
    })
}

fn to_js<T: Serialize>(value: Result<T>) -> std::result::Result<String, JsError> {
    let value = value.map_err(|e| JsError::new(&e.to_string()))?;
    serde_json::to_string(&value).map_err(|e| JsError::new(&e.to_string()))
}

#[wasm_bindgen(js_name = lambdaCurve)]
pub fn lambda_curve_js(lambda0: f64, gamma: f64, points: usize) -> std::result::Result<String, JsError> {
    to_js(lambda_curve(lambda0, gamma, points))
}

#[wasm_bindgen(js_name = recoverOntology)]
pub fn recover_ontology_js(n_videos: usize, n_tags: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(recover_ontology(n_videos, n_tags, seed as u64))
}

#[wasm_bindgen(js_name = compareSpread)]
pub fn compare_spread_js(p_imit: f64, epochs: usize, seed: u32) -> std::result::Result<String, JsError> {
    to_js(compare_spread(p_imit, epochs, seed as u64))
}
