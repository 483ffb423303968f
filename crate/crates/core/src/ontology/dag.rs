use std::cmp::Ordering;
use std::collections::{HashMap, VecDeque};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::classifier::ScoredPair;
use crate::corpus::{read_jsonl, write_jsonl};
use crate::error::{RadarError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub delta_r: f64,
    pub epsilon_r: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdSelection {
    pub thresholds: Thresholds,
    pub warnings: Vec<String>,
}

/// How an edge entered the DAG.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeOrigin {
    /// Score at or above `delta_r`.
    Kept,
    /// Re-admitted for an isolated tag with score at or above `epsilon_r`.
    Relaxed,
    /// Isolated tag linked to the highest-entropy tag.
    Fallback,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DagEdge {
    pub child: usize,
    pub parent: usize,
    pub score: f64,
    pub origin: EdgeOrigin,
}

/// Tags plus child→parent subtopic edges. Tag indices follow `tags`.
#[derive(Clone, Debug, PartialEq)]
pub struct OntologyDag {
    pub tags: Vec<String>,
    pub edges: Vec<DagEdge>,
    pub entropy: Option<Vec<f64>>,
}

impl OntologyDag {
    pub fn n_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0; self.tags.len()];
        for e in &self.edges {
            deg[e.child] += 1;
            deg[e.parent] += 1;
        }
        deg
    }

    /// Fraction of tags touching at least one edge.
    pub fn coverage(&self) -> f64 {
        if self.tags.is_empty() {
            return 0.0;
        }
        self.degrees().iter().filter(|&&d| d > 0).count() as f64 / self.tags.len() as f64
    }

    pub fn parents_of(&self, child: usize) -> impl Iterator<Item = usize> + '_ {
        self.edges.iter().filter(move |e| e.child == child).map(|e| e.parent)
    }

    pub fn count_origin(&self, origin: EdgeOrigin) -> usize {
        self.edges.iter().filter(|e| e.origin == origin).count()
    }
}

fn precision_recall(sorted: &[(f64, bool)], n_pos: usize) -> Vec<(f64, f64, f64)> {
    // sorted by descending score; one entry per distinct threshold
    let mut out = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    for (i, &(s, l)) in sorted.iter().enumerate() {
        if l {
            tp += 1;
        } else {
            fp += 1;
        }
        if i + 1 < sorted.len() && sorted[i + 1].0 == s {
            continue;
        }
        let precision = tp as f64 / (tp + fp) as f64;
        let recall = if n_pos == 0 { 0.0 } else { tp as f64 / n_pos as f64 };
        out.push((s, precision, recall));
    }
    out
}

/// Picks `delta_r` (smallest threshold reaching the precision target) and
/// `epsilon_r` (largest threshold reaching the recall target) from scored
/// labeled pairs. A pair is predicted positive when `score >= threshold`.
pub fn select_thresholds(
    labeled: &[(f64, bool)],
    precision_target: f64,
    recall_target: f64,
) -> Result<ThresholdSelection> {
    if labeled.is_empty() {
        return Err(RadarError::Invalid("no labeled pairs to select thresholds from".into()));
    }
    if labeled.iter().any(|(s, _)| !s.is_finite()) {
        return Err(RadarError::Invalid("non-finite score among labeled pairs".into()));
    }
    let mut sorted = labeled.to_vec();
    sorted.sort_by(|a, b| b.0.total_cmp(&a.0));
    let n_pos = sorted.iter().filter(|p| p.1).count();
    let curve = precision_recall(&sorted, n_pos);

    let f1_best = curve
        .iter()
        .map(|&(t, p, r)| (t, if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 }))
        .fold(None::<(f64, f64)>, |best, (t, f)| match best {
            Some((_, bf)) if bf >= f => best,
            _ => Some((t, f)),
        })
        .map(|(t, _)| t)
        .expect("non-empty curve");

    let mut warnings = Vec::new();
    let delta = match curve
        .iter()
        .filter(|c| c.1 >= precision_target)
        .map(|c| c.0)
        .min_by(f64::total_cmp)
    {
        Some(t) => t,
        None => {
            warnings.push(format!(
                "precision target {precision_target} unattainable; using F1-optimal threshold {f1_best}"
            ));
            f1_best
        }
    };
    let mut epsilon = match curve
        .iter()
        .filter(|c| c.2 >= recall_target)
        .map(|c| c.0)
        .max_by(f64::total_cmp)
    {
        Some(t) => t,
        None => {
            warnings.push(format!(
                "recall target {recall_target} unattainable; using F1-optimal threshold {f1_best}"
            ));
            f1_best
        }
    };
    let delta = delta.clamp(0.0, 1.0);
    if epsilon > delta {
        warnings.push(format!("epsilon_r {epsilon} clamped to delta_r {delta}"));
        epsilon = delta;
    }
    let epsilon = epsilon.clamp(0.0, 1.0);
    for w in &warnings {
        log::warn!("{w}");
    }
    Ok(ThresholdSelection {
        thresholds: Thresholds {
            delta_r: delta,
            epsilon_r: epsilon,
        },
        warnings,
    })
}

/// Tags sorted by descending entropy, ties by ascending tag id.
pub fn entropy_order(tags: &[String], entropies: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..tags.len()).collect();
    order.sort_by(|&a, &b| {
        entropies[b]
            .total_cmp(&entropies[a])
            .then_with(|| tags[a].cmp(&tags[b]))
    });
    order
}

fn better(a: &ScoredPair, b: &ScoredPair) -> bool {
    match a.score.total_cmp(&b.score) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => (a.child, a.parent) < (b.child, b.parent),
    }
}

/// Assembles the subtopic DAG.
///
/// Edges scoring at least `delta_r` are kept when the parent precedes the
/// child in the entropy order. Tags left isolated are then visited from
/// lowest to highest entropy and each may re-admit its best order-respecting
/// edge scoring at least `epsilon_r`. Tags still isolated are linked under
/// the highest-entropy tag.
pub fn build_dag(
    tags: &[String],
    scored: &[ScoredPair],
    entropies: &[f64],
    thresholds: Thresholds,
) -> Result<OntologyDag> {
    let n = tags.len();
    if n == 0 {
        return Err(RadarError::Invalid("cannot build an ontology over zero tags".into()));
    }
    if entropies.len() != n {
        return Err(RadarError::DimensionMismatch {
            expected: n,
            found: entropies.len(),
            context: "tag entropies".into(),
        });
    }
    if let Some(p) = scored
        .iter()
        .find(|p| p.parent >= n || p.child >= n || p.parent == p.child)
    {
        return Err(RadarError::Invalid(format!(
            "scored pair ({}, {}) is not a pair of distinct known tags",
            p.parent, p.child
        )));
    }
    let order = entropy_order(tags, entropies);
    let mut rank = vec![0usize; n];
    for (r, &t) in order.iter().enumerate() {
        rank[t] = r;
    }
    let admissible = |p: &ScoredPair| rank[p.parent] < rank[p.child];

    let mut edges: Vec<DagEdge> = scored
        .iter()
        .filter(|p| p.score >= thresholds.delta_r && admissible(p))
        .map(|p| DagEdge {
            child: p.child,
            parent: p.parent,
            score: p.score,
            origin: EdgeOrigin::Kept,
        })
        .collect();
    let mut degree = vec![0usize; n];
    for e in &edges {
        degree[e.child] += 1;
        degree[e.parent] += 1;
    }

    let mut incident: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, p) in scored.iter().enumerate() {
        if p.score >= thresholds.epsilon_r && admissible(p) {
            incident[p.child].push(i);
            incident[p.parent].push(i);
        }
    }
    for &t in order.iter().rev() {
        if degree[t] > 0 {
            continue;
        }
        let mut best: Option<&ScoredPair> = None;
        for &i in &incident[t] {
            let p = &scored[i];
            if best.is_none_or(|b| better(p, b)) {
                best = Some(p);
            }
        }
        if let Some(p) = best {
            degree[p.child] += 1;
            degree[p.parent] += 1;
            edges.push(DagEdge {
                child: p.child,
                parent: p.parent,
                score: p.score,
                origin: EdgeOrigin::Relaxed,
            });
        }
    }

    if n > 1 {
        let top = order[0];
        let lookup: HashMap<(usize, usize), f64> =
            scored.iter().map(|p| ((p.child, p.parent), p.score)).collect();
        let fallback_score = |child: usize, parent: usize| {
            lookup
                .get(&(child, parent))
                .copied()
                .unwrap_or(thresholds.epsilon_r)
                .clamp(1e-6, 1.0 - 1e-6)
        };
        for &t in order.iter().rev() {
            if degree[t] > 0 {
                continue;
            }
            let (child, parent) = if t == top { (order[1], top) } else { (t, top) };
            degree[child] += 1;
            degree[parent] += 1;
            edges.push(DagEdge {
                child,
                parent,
                score: fallback_score(child, parent),
                origin: EdgeOrigin::Fallback,
            });
        }
    }

    Ok(OntologyDag {
        tags: tags.to_vec(),
        edges,
        entropy: Some(entropies.to_vec()),
    })
}

/// True iff the edge set admits a topological order.
pub fn verify_dag(dag: &OntologyDag) -> bool {
    let n = dag.tags.len();
    let mut indegree = vec![0usize; n];
    let mut out: Vec<Vec<usize>> = vec![Vec::new(); n];
    for e in &dag.edges {
        if e.child >= n || e.parent >= n {
            return false;
        }
        out[e.child].push(e.parent);
        indegree[e.parent] += 1;
    }
    let mut queue: VecDeque<usize> = (0..n).filter(|&i| indegree[i] == 0).collect();
    let mut visited = 0;
    while let Some(u) = queue.pop_front() {
        visited += 1;
        for &v in &out[u] {
            indegree[v] -= 1;
            if indegree[v] == 0 {
                queue.push_back(v);
            }
        }
    }
    visited == n
}

#[derive(Serialize, Deserialize)]
struct OntologyLine {
    child: String,
    parent: String,
    score: f32,
}

pub fn save_ontology(dag: &OntologyDag, path: &Path) -> Result<()> {
    write_jsonl(
        path,
        dag.edges.iter().map(|e| OntologyLine {
            child: dag.tags[e.child].clone(),
            parent: dag.tags[e.parent].clone(),
            score: e.score as f32,
        }),
    )
}

/// Reads `ontology.jsonl` over the given tag vocabulary. Entropies and edge
/// origins are not stored, so loaded edges are marked [`EdgeOrigin::Kept`].
pub fn load_ontology(path: &Path, tags: &[String]) -> Result<OntologyDag> {
    let index: HashMap<&str, usize> = tags.iter().enumerate().map(|(i, t)| (t.as_str(), i)).collect();
    let lookup = |t: &str| {
        index
            .get(t)
            .copied()
            .ok_or_else(|| RadarError::Invalid(format!("ontology references unknown tag `{t}`")))
    };
    let mut edges = Vec::new();
    for line in read_jsonl::<OntologyLine>(path)? {
        let child = lookup(&line.child)?;
        let parent = lookup(&line.parent)?;
        if child == parent {
            return Err(RadarError::Invalid(format!("self-loop on tag `{}`", line.child)));
        }
        edges.push(DagEdge {
            child,
            parent,
            score: line.score as f64,
            origin: EdgeOrigin::Kept,
        });
    }
    let dag = OntologyDag {
        tags: tags.to_vec(),
        edges,
        entropy: None,
    };
    if !verify_dag(&dag) {
        return Err(RadarError::Invalid(format!("{} contains a cycle", path.display())));
    }
    Ok(dag)
}
