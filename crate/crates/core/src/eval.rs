//! Ranking metrics and split evaluation.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::corpus::{Corpus, Split};
use crate::error::{RadarError, Result};
use crate::hetgraph::HeteroGraph;
use crate::radar::{inductive_infer, NodeFeatures, RadarModel, RepCache};
use crate::real::Real;

/// Candidate indices ordered by descending score, ties by ascending index.
/// NaN scores sort last.
pub fn rank(scores: &[f64]) -> Vec<u32> {
    let mut order: Vec<u32> = (0..scores.len() as u32).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (scores[a as usize], scores[b as usize]);
        match (x.is_nan(), y.is_nan()) {
            (true, true) => a.cmp(&b),
            (true, false) => std::cmp::Ordering::Greater,
            (false, true) => std::cmp::Ordering::Less,
            _ => y.partial_cmp(&x).expect("not NaN").then(a.cmp(&b)),
        }
    });
    order
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankingResult {
    pub video_id: String,
    pub ranking: Vec<u32>,
    pub ground_truth: BTreeSet<u32>,
}

impl RankingResult {
    pub fn from_scores(video_id: impl Into<String>, scores: &[f64], ground_truth: impl IntoIterator<Item = u32>) -> Self {
        Self {
            video_id: video_id.into(),
            ranking: rank(scores),
            ground_truth: ground_truth.into_iter().collect(),
        }
    }

    fn hits_in_top(&self, k: usize) -> usize {
        self.ranking.iter().take(k).filter(|t| self.ground_truth.contains(t)).count()
    }
}

/// `(1/|GT|) Σ_{relevant ranks k} hits@k / k`; `None` for empty ground truth.
pub fn average_precision(r: &RankingResult) -> Option<f64> {
    if r.ground_truth.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut total = 0.0;
    for (i, t) in r.ranking.iter().enumerate() {
        if r.ground_truth.contains(t) {
            hits += 1;
            total += hits as f64 / (i + 1) as f64;
        }
    }
    Some(total / r.ground_truth.len() as f64)
}

/// Hits in the top `k` over `k`, with `k` capped at the list length.
pub fn precision_at_k(r: &RankingResult, k: usize) -> Result<f64> {
    if k == 0 {
        return Err(RadarError::Invalid("k must be at least 1".into()));
    }
    let k = k.min(r.ranking.len());
    if k == 0 {
        return Ok(0.0);
    }
    Ok(r.hits_in_top(k) as f64 / k as f64)
}

/// Hits in the top `k` over `|GT|`; `None` for empty ground truth.
pub fn recall_at_k(r: &RankingResult, k: usize) -> Result<Option<f64>> {
    if k == 0 {
        return Err(RadarError::Invalid("k must be at least 1".into()));
    }
    if r.ground_truth.is_empty() {
        return Ok(None);
    }
    Ok(Some(r.hits_in_top(k.min(r.ranking.len())) as f64 / r.ground_truth.len() as f64))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VideoMetrics {
    pub video_id: String,
    #[serde(rename = "AP")]
    pub ap: f64,
    #[serde(rename = "P@1")]
    pub p1: f64,
    #[serde(rename = "P@3")]
    pub p3: f64,
    #[serde(rename = "R@5")]
    pub r5: f64,
    #[serde(rename = "R@10")]
    pub r10: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    #[serde(rename = "P@1")]
    pub p1: f64,
    #[serde(rename = "P@3")]
    pub p3: f64,
    #[serde(rename = "R@5")]
    pub r5: f64,
    #[serde(rename = "R@10")]
    pub r10: f64,
    pub n_videos: usize,
    /// Videos left out for having no ground truth among the candidates.
    pub skipped: Vec<String>,
    pub per_video: Vec<VideoMetrics>,
}

/// Macro averages over results with non-empty ground truth.
pub fn aggregate(results: &[RankingResult]) -> Result<MetricsReport> {
    let mut per_video = Vec::with_capacity(results.len());
    let mut skipped = Vec::new();
    for r in results {
        let Some(ap) = average_precision(r) else {
            log::warn!("video `{}` has no ground-truth tag among the candidates; skipped", r.video_id);
            skipped.push(r.video_id.clone());
            continue;
        };
        per_video.push(VideoMetrics {
            video_id: r.video_id.clone(),
            ap,
            p1: precision_at_k(r, 1)?,
            p3: precision_at_k(r, 3)?,
            r5: recall_at_k(r, 5)?.expect("non-empty"),
            r10: recall_at_k(r, 10)?.expect("non-empty"),
        });
    }
    if per_video.is_empty() {
        return Err(RadarError::Invalid("no video with ground truth to evaluate".into()));
    }
    let n = per_video.len() as f64;
    let mean = |f: fn(&VideoMetrics) -> f64| per_video.iter().map(f).sum::<f64>() / n;
    Ok(MetricsReport {
        map: mean(|m| m.ap),
        p1: mean(|m| m.p1),
        p3: mean(|m| m.p3),
        r5: mean(|m| m.r5),
        r10: mean(|m| m.r10),
        n_videos: per_video.len(),
        skipped,
        per_video,
    })
}

/// Area under the ROC curve via the rank-sum statistic, ties counting half.
pub fn roc_auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(RadarError::DimensionMismatch {
            expected: scores.len(),
            found: labels.len(),
            context: "labels".into(),
        });
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(RadarError::Invalid("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let mid = (i + j) as f64 / 2.0 + 1.0;
        rank_sum += (i..=j).filter(|&k| labels[order[k]]).count() as f64 * mid;
        i = j + 1;
    }
    Ok((rank_sum - (pos * (pos + 1)) as f64 / 2.0) / (pos * neg) as f64)
}

/// Score rows for `videos`: graph members read the cache, others go through
/// inductive inference.
pub fn score_videos<T: Real>(
    model: &RadarModel<T>,
    graph: &HeteroGraph,
    cache: &RepCache<T>,
    videos: &[&crate::corpus::VideoRecord],
) -> Result<Vec<Vec<f64>>> {
    let tags = cache.final_tags();
    videos
        .iter()
        .map(|v| match graph.video_index(&v.id) {
            Some(i) => {
                let h = cache.final_videos().gather_rows(&[i]);
                Ok(crate::radar::predict_scores(&h, tags).data().iter().map(|x| x.to_f64_lossy()).collect())
            }
            None => Ok(inductive_infer(model, graph, cache, v)?
                .scores
                .iter()
                .map(|x| x.to_f64_lossy())
                .collect()),
        })
        .collect()
}

/// Ranks every graph tag for each video of `split` and aggregates.
pub fn evaluate<T: Real>(
    model: &RadarModel<T>,
    graph: &HeteroGraph,
    feats: &NodeFeatures<T>,
    corpus: &Corpus,
    split: Split,
) -> Result<MetricsReport> {
    let cache = model.compute_cache(graph, feats)?;
    evaluate_cached(model, graph, &cache, corpus, split)
}

pub fn evaluate_cached<T: Real>(
    model: &RadarModel<T>,
    graph: &HeteroGraph,
    cache: &RepCache<T>,
    corpus: &Corpus,
    split: Split,
) -> Result<MetricsReport> {
    let videos: Vec<&crate::corpus::VideoRecord> = corpus.videos_in(split).collect();
    if videos.is_empty() {
        return Err(RadarError::Invalid(format!("split {split:?} is empty")));
    }
    let scores = score_videos(model, graph, cache, &videos)?;
    let results: Vec<RankingResult> = videos
        .iter()
        .zip(&scores)
        .map(|(v, s)| RankingResult::from_scores(v.id.clone(), s, v.tags.iter().filter_map(|t| graph.tag_index(t))))
        .collect();
    aggregate(&results)
}

/// Metric differences `a − b` keyed by metric name, for ablation tables.
pub fn compare(a: &MetricsReport, b: &MetricsReport) -> BTreeMap<&'static str, f64> {
    BTreeMap::from([
        ("mAP", a.map - b.map),
        ("P@1", a.p1 - b.p1),
        ("P@3", a.p3 - b.p3),
        ("R@5", a.r5 - b.r5),
        ("R@10", a.r10 - b.r10),
    ])
}
