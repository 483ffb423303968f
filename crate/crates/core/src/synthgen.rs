//! Synthetic corpora with a planted ontology and controllable imitation
//! between followers and the creators they follow.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::corpus::{save_corpus, write_jsonl, Corpus, FollowEdge, FrameFeatures, TagVocabEntry, VideoRecord};
use crate::error::{RadarError, Result};
use crate::ontology::{save_labels, save_ontology, DagEdge, EdgeOrigin, OntologyDag, SubtopicLabel};

pub const GROUND_TRUTH_FILE: &str = "ground_truth_ontology.jsonl";
pub const PROVENANCE_FILE: &str = "provenance.jsonl";
pub const LABELS_FILE: &str = "subtopic_labels.jsonl";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub n_users: usize,
    pub n_tags: usize,
    pub n_roots: usize,
    /// Deepest level below the roots.
    pub depth: usize,
    /// Maximum children per tag.
    pub branching: usize,
    /// Probability that a non-root tag gets a second parent.
    pub second_parent_prob: f64,
    pub n_videos: usize,
    pub p_imit: f64,
    pub tag_noise: f64,
    pub video_dim: usize,
    pub tag_dim: usize,
    /// Width of the latent component shared by visual and textual views.
    pub common_dim: usize,
    /// Scale of the view-specific components relative to the shared one.
    pub unique_scale: f64,
    /// Standard deviation of the noise added to each video's features.
    pub feature_noise: f64,
    /// Standard deviation of the noise added to word embeddings.
    pub embedding_noise: f64,
    /// Probability that a given user follows another given user.
    pub follow_density: f64,
    /// Probability that a fresh video's leaf comes from its creator's own
    /// subtree rather than the whole ontology.
    pub niche_affinity: f64,
    /// Number of labeled subtopic pairs to emit.
    pub n_labeled: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_users: 100,
            n_tags: 60,
            n_roots: 4,
            depth: 3,
            branching: 5,
            second_parent_prob: 0.1,
            n_videos: 1000,
            p_imit: 0.5,
            tag_noise: 0.1,
            video_dim: 16,
            tag_dim: 16,
            common_dim: 8,
            unique_scale: 1.0,
            feature_noise: 0.5,
            embedding_noise: 0.1,
            follow_density: 0.03,
            niche_affinity: 0.0,
            n_labeled: 200,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let probs = [
            ("p_imit", self.p_imit),
            ("tag_noise", self.tag_noise),
            ("second_parent_prob", self.second_parent_prob),
            ("follow_density", self.follow_density),
            ("niche_affinity", self.niche_affinity),
        ];
        for (name, p) in probs {
            if !(0.0..=1.0).contains(&p) {
                return Err(RadarError::Invalid(format!("{name} = {p} is not a probability")));
            }
        }
        if self.n_tags < 2 || self.n_users == 0 || self.n_videos == 0 {
            return Err(RadarError::Invalid("need at least 2 tags, 1 user and 1 video".into()));
        }
        if self.n_roots == 0 || self.n_roots >= self.n_tags || self.depth == 0 || self.branching == 0 {
            return Err(RadarError::Invalid("ontology shape needs roots, depth and branching".into()));
        }
        let mut capacity = 0usize;
        let mut level = self.n_roots;
        for _ in 0..self.depth {
            level = level.saturating_mul(self.branching);
            capacity = capacity.saturating_add(level);
        }
        if capacity < self.n_tags - self.n_roots {
            return Err(RadarError::Invalid(format!(
                "{} tags do not fit under {} roots with depth {} and branching {}",
                self.n_tags, self.n_roots, self.depth, self.branching
            )));
        }
        if self.video_dim == 0 || self.tag_dim == 0 || self.common_dim == 0 {
            return Err(RadarError::Invalid("feature dimensions must be positive".into()));
        }
        if self.feature_noise < 0.0 || self.embedding_noise < 0.0 || self.unique_scale < 0.0 {
            return Err(RadarError::Invalid("noise scales must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Origin {
    Fresh,
    Imitated,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub video_id: String,
    pub origin: Origin,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthOutput {
    pub corpus: Corpus,
    pub ontology: OntologyDag,
    pub provenance: Vec<Provenance>,
    pub labels: Vec<SubtopicLabel>,
    pub warnings: Vec<String>,
}

struct Planted {
    parents: Vec<Vec<usize>>,
    level: Vec<usize>,
    ancestors: Vec<BTreeSet<usize>>,
}

fn plant_ontology<R: Rng>(cfg: &SynthConfig, rng: &mut R) -> Planted {
    let n = cfg.n_tags;
    let mut parents = vec![Vec::new(); n];
    let mut level = vec![0usize; n];
    let mut children = vec![0usize; n];
    for t in cfg.n_roots..n {
        let open: Vec<usize> = (0..t)
            .filter(|&p| level[p] < cfg.depth && children[p] < cfg.branching)
            .collect();
        // breadth first: prefer the shallowest open level
        let shallowest = open.iter().map(|&p| level[p]).min().expect("capacity checked");
        let candidates: Vec<usize> = open.into_iter().filter(|&p| level[p] == shallowest).collect();
        let p = candidates[rng.random_range(0..candidates.len())];
        parents[t].push(p);
        children[p] += 1;
        level[t] = level[p] + 1;
        if rng.random::<f64>() < cfg.second_parent_prob {
            let others: Vec<usize> = (0..t).filter(|&q| q != p && level[q] <= level[p]).collect();
            if !others.is_empty() {
                let q = others[rng.random_range(0..others.len())];
                parents[t].push(q);
                children[q] += 1;
            }
        }
    }
    let mut ancestors = vec![BTreeSet::new(); n];
    for t in 0..n {
        // parents always have smaller indices
        let mut set = BTreeSet::new();
        for &p in &parents[t] {
            set.insert(p);
            set.extend(ancestors[p].iter().copied());
        }
        ancestors[t] = set;
    }
    Planted {
        parents,
        level,
        ancestors,
    }
}

fn gaussian<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| scale * rng.sample::<f64, _>(StandardNormal)).collect()
}

fn project(m: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    m.iter().map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum()).collect()
}

/// Generates a corpus whose fresh tag sets are a leaf plus its ancestors and
/// whose imitated tag sets copy an earlier video by a followed creator.
pub fn gen_synth(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut warnings = Vec::new();
    let planted = plant_ontology(cfg, &mut rng);
    let n = cfg.n_tags;
    let tag_names: Vec<String> = (0..n).map(|i| format!("tag{i:03}")).collect();

    // shared latent, inherited down the hierarchy, plus view-specific parts
    let k = cfg.common_dim;
    let mut common: Vec<Vec<f64>> = Vec::with_capacity(n);
    for t in 0..n {
        let own = gaussian(&mut rng, k, 1.0);
        let c = match planted.parents[t].first() {
            Some(&p) => common[p].iter().zip(&own).map(|(a, b)| 0.5 * a + b).collect(),
            None => own,
        };
        common.push(c);
    }
    let mix = |rng: &mut ChaCha8Rng, rows: usize| -> Vec<Vec<f64>> {
        (0..rows).map(|_| gaussian(rng, k, 1.0 / (k as f64).sqrt())).collect()
    };
    let a_visual = mix(&mut rng, cfg.video_dim);
    let a_text = mix(&mut rng, cfg.tag_dim);
    let visual: Vec<Vec<f64>> = (0..n)
        .map(|t| {
            let u = gaussian(&mut rng, cfg.video_dim, cfg.unique_scale);
            project(&a_visual, &common[t]).iter().zip(&u).map(|(a, b)| a + b).collect()
        })
        .collect();
    let vocab: Vec<TagVocabEntry> = (0..n)
        .map(|t| {
            let u = gaussian(&mut rng, cfg.tag_dim, cfg.unique_scale);
            let e = gaussian(&mut rng, cfg.tag_dim, cfg.embedding_noise);
            let emb = project(&a_text, &common[t])
                .iter()
                .zip(&u)
                .zip(&e)
                .map(|((a, b), c)| (a + b + c) as f32)
                .collect();
            TagVocabEntry {
                tag: tag_names[t].clone(),
                word_embedding: emb,
            }
        })
        .collect();

    let users: Vec<String> = (0..cfg.n_users).map(|i| format!("user{i:03}")).collect();
    let mut followees: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_users];
    let mut follows = Vec::new();
    for a in 0..cfg.n_users {
        for b in 0..cfg.n_users {
            if a != b && rng.random::<f64>() < cfg.follow_density {
                followees[a].push(b);
                follows.push(FollowEdge {
                    follower: users[a].clone(),
                    followee: users[b].clone(),
                });
            }
        }
    }
    if cfg.p_imit > 0.0 && follows.is_empty() {
        warnings.push("p_imit > 0 but the follow graph is empty; every video is fresh".to_string());
    }

    let has_children: Vec<bool> = {
        let mut h = vec![false; n];
        for ps in &planted.parents {
            for &p in ps {
                h[p] = true;
            }
        }
        h
    };
    let leaves: Vec<usize> = (0..n).filter(|&t| !has_children[t]).collect();
    // each user's niche is the leaf set under one top-level subtree
    let roots: Vec<usize> = (0..n).filter(|&t| planted.parents[t].is_empty()).collect();
    let root_leaves: Vec<Vec<usize>> = roots
        .iter()
        .map(|&r| leaves.iter().copied().filter(|&l| planted.ancestors[l].contains(&r) || l == r).collect())
        .collect();
    let niches: Vec<usize> = (0..cfg.n_users).map(|_| rng.random_range(0..roots.len())).collect();
    let mut leaf_cycle: Vec<usize> = Vec::new();
    let mut fresh_set = |rng: &mut ChaCha8Rng, anchor: Option<usize>| -> BTreeSet<usize> {
        let leaf = anchor.unwrap_or_else(|| {
            if leaf_cycle.is_empty() {
                leaf_cycle = leaves.clone();
                leaf_cycle.shuffle(rng);
            }
            leaf_cycle.pop().expect("refilled")
        });
        let mut set: BTreeSet<usize> = planted.ancestors[leaf].clone();
        set.insert(leaf);
        set
    };
    let add_noise = |rng: &mut ChaCha8Rng, set: &mut BTreeSet<usize>| {
        if rng.random::<f64>() < cfg.tag_noise {
            set.insert(rng.random_range(0..n));
        }
    };

    let mut tag_sets: Vec<BTreeSet<usize>> = Vec::with_capacity(cfg.n_videos);
    let mut creators: Vec<usize> = Vec::with_capacity(cfg.n_videos);
    let mut by_user: Vec<Vec<usize>> = vec![Vec::new(); cfg.n_users];
    let mut provenance = Vec::with_capacity(cfg.n_videos);
    let video_name = |i: usize| format!("vid{i:05}");
    for i in 0..cfg.n_videos {
        let creator = rng.random_range(0..cfg.n_users);
        let mut origin = Origin::Fresh;
        let mut source = None;
        let mut set = BTreeSet::new();
        if rng.random::<f64>() < cfg.p_imit {
            let pool: Vec<usize> = followees[creator].iter().flat_map(|&f| by_user[f].iter().copied()).collect();
            if !pool.is_empty() {
                let s = pool[rng.random_range(0..pool.len())];
                set = tag_sets[s].clone();
                let before = set.clone();
                set.retain(|_| rng.random::<f64>() >= cfg.tag_noise);
                if set.is_empty() {
                    set = before;
                }
                add_noise(&mut rng, &mut set);
                origin = Origin::Imitated;
                source = Some(video_name(s));
            }
        }
        if origin == Origin::Fresh {
            let niche = &root_leaves[niches[creator]];
            let anchor = (cfg.niche_affinity > 0.0 && rng.random::<f64>() < cfg.niche_affinity && !niche.is_empty())
                .then(|| niche[rng.random_range(0..niche.len())]);
            set = fresh_set(&mut rng, anchor);
            add_noise(&mut rng, &mut set);
        }
        while set.len() < 2 {
            set.insert(rng.random_range(0..n));
        }
        by_user[creator].push(i);
        creators.push(creator);
        tag_sets.push(set);
        provenance.push(Provenance {
            video_id: video_name(i),
            origin,
            source,
        });
    }
    let mut covered = vec![false; n];
    for s in &tag_sets {
        for &t in s {
            covered[t] = true;
        }
    }
    for t in 0..n {
        if covered[t] {
            continue;
        }
        let mut set = fresh_set(&mut rng, Some(t));
        while set.len() < 2 {
            set.insert(rng.random_range(0..n));
        }
        for &x in &set {
            covered[x] = true;
        }
        let i = tag_sets.len();
        let creator = rng.random_range(0..cfg.n_users);
        creators.push(creator);
        tag_sets.push(set);
        provenance.push(Provenance {
            video_id: video_name(i),
            origin: Origin::Fresh,
            source: None,
        });
    }
    if tag_sets.len() > cfg.n_videos {
        warnings.push(format!(
            "appended {} videos so every tag occurs",
            tag_sets.len() - cfg.n_videos
        ));
    }

    let videos: Vec<VideoRecord> = tag_sets
        .iter()
        .enumerate()
        .map(|(i, set)| {
            let noise = gaussian(&mut rng, cfg.video_dim, cfg.feature_noise);
            let m = set.len() as f64;
            let feature = (0..cfg.video_dim)
                .map(|j| (set.iter().map(|&t| visual[t][j]).sum::<f64>() / m + noise[j]) as f32)
                .collect();
            VideoRecord {
                id: video_name(i),
                user_id: users[creators[i]].clone(),
                timestamp: 1_600_000_000 + 60 * i as i64,
                tags: set.iter().map(|&t| tag_names[t].clone()).collect(),
                features: FrameFeatures::Aggregated(feature),
            }
        })
        .collect();
    let corpus = Corpus {
        videos,
        follows,
        vocab,
        splits: None,
    };
    corpus.validate()?;

    let ontology = OntologyDag {
        tags: tag_names.clone(),
        edges: (0..n)
            .flat_map(|t| {
                planted.parents[t].iter().map(move |&p| DagEdge {
                    child: t,
                    parent: p,
                    score: 1.0,
                    origin: EdgeOrigin::Kept,
                })
            })
            .collect(),
        entropy: None,
    };

    let labels = label_pairs(cfg, &corpus, &planted, &tag_names, &mut rng)?;
    for w in &warnings {
        log::warn!("{w}");
    }
    debug_assert!(planted.level.len() == n);
    Ok(SynthOutput {
        corpus,
        ontology,
        provenance,
        labels,
        warnings,
    })
}

/// Uniformly sampled co-occurring ordered pairs `(u, v)` labeled 1 when the
/// planted ontology makes `u` an ancestor of `v`.
fn label_pairs(
    cfg: &SynthConfig,
    corpus: &Corpus,
    planted: &Planted,
    names: &[String],
    rng: &mut ChaCha8Rng,
) -> Result<Vec<SubtopicLabel>> {
    let stats = crate::ontology::compute_cooc_stats(corpus)?;
    let pairs = crate::ontology::sample_label_pairs(&stats, cfg.n_labeled, rng);
    Ok(pairs
        .into_iter()
        .map(|(u, v)| SubtopicLabel {
            u: names[u].clone(),
            v: names[v].clone(),
            label: planted.ancestors[v].contains(&u) as u8,
        })
        .collect())
}

/// Writes the corpus files, the planted ontology, provenance and labels.
pub fn write_synth(out: &SynthOutput, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RadarError::io(dir, e))?;
    save_corpus(&out.corpus, dir)?;
    save_ontology(&out.ontology, &dir.join(GROUND_TRUTH_FILE))?;
    write_jsonl(&dir.join(PROVENANCE_FILE), &out.provenance)?;
    save_labels(&out.labels, &dir.join(LABELS_FILE))
}
