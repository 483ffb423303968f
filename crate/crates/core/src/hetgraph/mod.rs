//! The directed video-tag network and neighbor sampling over it.
//!
//! Three relations carry messages toward their destination:
//! `r1` tag→tag (child to parent), `r2` video→tag (has tag) and
//! `r3` video→video (an older video of a followed user to a newer video of
//! the follower).

mod io;
mod sample;

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};

pub use io::{load_graph, save_graph, GRAPH_MANIFEST};
pub use sample::{edge_dropout, full_neighborhood, sample_neighbors, sample_neighbors_masked, Block, Frontier, LayeredSample};

use crate::corpus::{Corpus, Split, VideoRecord};
use crate::error::{RadarError, Result};
use crate::ontology::OntologyDag;

/// Default maximum number of inbound `r3` edges per video.
pub const DEFAULT_R3_CAP: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeType {
    Video,
    Tag,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Relation {
    R1,
    R2,
    R3,
}

impl Relation {
    pub const ALL: [Relation; 3] = [Relation::R1, Relation::R2, Relation::R3];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Relation::R1 => "is_subtopic_of",
            Relation::R2 => "has_tag",
            Relation::R3 => "is_followed_by",
        }
    }

    pub fn source_type(self) -> NodeType {
        match self {
            Relation::R1 => NodeType::Tag,
            Relation::R2 | Relation::R3 => NodeType::Video,
        }
    }

    pub fn target_type(self) -> NodeType {
        match self {
            Relation::R1 | Relation::R2 => NodeType::Tag,
            Relation::R3 => NodeType::Video,
        }
    }

    /// Relations whose messages arrive at nodes of type `t`.
    pub fn inbound_to(t: NodeType) -> &'static [Relation] {
        match t {
            NodeType::Video => &[Relation::R3],
            NodeType::Tag => &[Relation::R1, Relation::R2],
        }
    }
}

/// Edges of one relation, indexed by destination. Sources of each
/// destination are stored in ascending order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct EdgeSet {
    offsets: Vec<usize>,
    sources: Vec<u32>,
}

impl EdgeSet {
    /// Builds from `(src, dst)` pairs; duplicates are removed.
    pub fn from_pairs(mut pairs: Vec<(u32, u32)>, n_dst: usize) -> Self {
        pairs.sort_unstable_by_key(|&(s, d)| (d, s));
        pairs.dedup();
        let mut offsets = vec![0usize; n_dst + 1];
        for &(_, d) in &pairs {
            offsets[d as usize + 1] += 1;
        }
        for i in 0..n_dst {
            offsets[i + 1] += offsets[i];
        }
        Self {
            offsets,
            sources: pairs.into_iter().map(|(s, _)| s).collect(),
        }
    }

    pub fn empty(n_dst: usize) -> Self {
        Self {
            offsets: vec![0; n_dst + 1],
            sources: Vec::new(),
        }
    }

    pub fn n_dst(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn inbound(&self, dst: usize) -> &[u32] {
        &self.sources[self.offsets[dst]..self.offsets[dst + 1]]
    }

    /// `(src, dst)` pairs ordered by destination then source.
    pub fn pairs(&self) -> impl Iterator<Item = (u32, u32)> + '_ {
        (0..self.n_dst()).flat_map(move |d| self.inbound(d).iter().map(move |&s| (s, d as u32)))
    }

    fn push_destination(&mut self, sources: &[u32]) {
        self.sources.extend_from_slice(sources);
        self.offsets.push(self.sources.len());
    }
}

/// Identity and metadata of a video node.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoNode {
    pub id: String,
    pub user_id: String,
    pub timestamp: i64,
}

impl VideoNode {
    fn age_key(&self) -> (i64, &str) {
        (self.timestamp, &self.id)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeteroGraph {
    pub videos: Vec<VideoNode>,
    pub tags: Vec<String>,
    video_index: HashMap<String, u32>,
    tag_index: HashMap<String, u32>,
    /// follower → followees, both sorted.
    pub followees: BTreeMap<String, Vec<String>>,
    /// Videos of each user in ascending age.
    user_videos: HashMap<String, Vec<u32>>,
    edges: [EdgeSet; 3],
    pub r3_cap: usize,
    /// Split of every corpus video, when the graph was built from a split
    /// corpus.
    pub splits: Option<BTreeMap<String, Split>>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct BuildReport {
    pub dropped_follows: usize,
    pub capped_destinations: usize,
}

impl HeteroGraph {
    pub fn n_videos(&self) -> usize {
        self.videos.len()
    }

    pub fn n_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn n_nodes(&self, t: NodeType) -> usize {
        match t {
            NodeType::Video => self.videos.len(),
            NodeType::Tag => self.tags.len(),
        }
    }

    pub fn video_index(&self, id: &str) -> Option<u32> {
        self.video_index.get(id).copied()
    }

    pub fn tag_index(&self, tag: &str) -> Option<u32> {
        self.tag_index.get(tag).copied()
    }

    pub fn edges(&self, r: Relation) -> &EdgeSet {
        &self.edges[r.index()]
    }

    /// Complete inbound neighbor list of `node` under `r`, ascending.
    pub fn full_inbound(&self, node: u32, r: Relation) -> Result<&[u32]> {
        let set = self.edges(r);
        if node as usize >= set.n_dst() {
            return Err(RadarError::Invalid(format!(
                "node {node} is not a {:?} node of this graph",
                r.target_type()
            )));
        }
        Ok(set.inbound(node as usize))
    }

    pub fn in_degree(&self, t: NodeType, node: u32) -> usize {
        Relation::inbound_to(t)
            .iter()
            .map(|&r| self.edges(r).inbound(node as usize).len())
            .sum()
    }

    /// A copy with the given relation's edges removed. Dropping `r3` also
    /// forgets the follow lists, so inserted videos get no `r3` edges either.
    pub fn without_relation(&self, r: Relation) -> HeteroGraph {
        let mut g = self.clone();
        g.edges[r.index()] = EdgeSet::empty(self.n_nodes(r.target_type()));
        if r == Relation::R3 {
            g.followees.clear();
        }
        g
    }

    /// Sources of `r3` edges into a not-yet-inserted video: videos of the
    /// users `user_id` follows that are older than `(timestamp, id)`, newest
    /// first up to the cap, returned in ascending index order.
    pub fn r3_sources_for(&self, user_id: &str, timestamp: i64, id: &str) -> Vec<u32> {
        self.r3_sources_counted(user_id, timestamp, id).0
    }

    fn r3_sources_counted(&self, user_id: &str, timestamp: i64, id: &str) -> (Vec<u32>, usize) {
        let Some(followees) = self.followees.get(user_id) else {
            return (Vec::new(), 0);
        };
        let key = (timestamp, id);
        let mut candidates: Vec<u32> = Vec::new();
        for a in followees {
            if let Some(vids) = self.user_videos.get(a) {
                let older = vids.partition_point(|&v| self.videos[v as usize].age_key() < key);
                candidates.extend_from_slice(&vids[..older]);
            }
        }
        let total = candidates.len();
        if candidates.len() > self.r3_cap {
            candidates.sort_unstable_by(|&a, &b| {
                self.videos[b as usize].age_key().cmp(&self.videos[a as usize].age_key())
            });
            candidates.truncate(self.r3_cap);
        }
        candidates.sort_unstable();
        (candidates, total)
    }

    /// Adds a new video node carrying only inbound `r3` edges. Existing
    /// nodes gain no inbound edges. Returns the new node's index.
    pub fn insert_video(&mut self, record: &VideoRecord) -> Result<u32> {
        if self.video_index.contains_key(&record.id) {
            return Err(RadarError::DuplicateId(record.id.clone()));
        }
        let sources = self.r3_sources_for(&record.user_id, record.timestamp, &record.id);
        let idx = self.videos.len() as u32;
        self.videos.push(VideoNode {
            id: record.id.clone(),
            user_id: record.user_id.clone(),
            timestamp: record.timestamp,
        });
        self.video_index.insert(record.id.clone(), idx);
        // user_videos is left alone so later insertions do not see this node
        // as an influencer.
        self.edges[Relation::R3.index()].push_destination(&sources);
        Ok(idx)
    }

    fn from_parts(
        videos: Vec<VideoNode>,
        tags: Vec<String>,
        followees: BTreeMap<String, Vec<String>>,
        edges: [EdgeSet; 3],
        r3_cap: usize,
        splits: Option<BTreeMap<String, Split>>,
    ) -> Result<Self> {
        let mut video_index = HashMap::with_capacity(videos.len());
        for (i, v) in videos.iter().enumerate() {
            if video_index.insert(v.id.clone(), i as u32).is_some() {
                return Err(RadarError::DuplicateId(v.id.clone()));
            }
        }
        let mut tag_index = HashMap::with_capacity(tags.len());
        for (i, t) in tags.iter().enumerate() {
            if tag_index.insert(t.clone(), i as u32).is_some() {
                return Err(RadarError::DuplicateId(t.clone()));
            }
        }
        let mut user_videos: HashMap<String, Vec<u32>> = HashMap::new();
        for (i, v) in videos.iter().enumerate() {
            user_videos.entry(v.user_id.clone()).or_default().push(i as u32);
        }
        for vids in user_videos.values_mut() {
            vids.sort_by(|&a, &b| videos[a as usize].age_key().cmp(&videos[b as usize].age_key()));
        }
        let graph = Self {
            videos,
            tags,
            video_index,
            tag_index,
            followees,
            user_videos,
            edges,
            r3_cap,
            splits,
        };
        graph.check()?;
        Ok(graph)
    }

    /// Structural invariants: type-correct endpoints, no self loops, r3 edges
    /// point forward in time, r1 acyclic.
    pub fn check(&self) -> Result<()> {
        for r in Relation::ALL {
            let set = self.edges(r);
            if set.n_dst() != self.n_nodes(r.target_type()) {
                return Err(RadarError::Invalid(format!("{} destination count mismatch", r.name())));
            }
            let n_src = self.n_nodes(r.source_type());
            for (s, d) in set.pairs() {
                if s as usize >= n_src {
                    return Err(RadarError::Invalid(format!("{} edge source {s} out of range", r.name())));
                }
                if r.source_type() == r.target_type() && s == d {
                    return Err(RadarError::Invalid(format!("{} self loop on {s}", r.name())));
                }
                if r == Relation::R3 && self.videos[s as usize].age_key() >= self.videos[d as usize].age_key() {
                    return Err(RadarError::Invalid(format!(
                        "r3 edge {} -> {} points backward in time",
                        self.videos[s as usize].id, self.videos[d as usize].id
                    )));
                }
            }
        }
        let dag = OntologyDag {
            tags: self.tags.clone(),
            edges: self
                .edges(Relation::R1)
                .pairs()
                .map(|(s, d)| crate::ontology::DagEdge {
                    child: s as usize,
                    parent: d as usize,
                    score: 1.0,
                    origin: crate::ontology::EdgeOrigin::Kept,
                })
                .collect(),
            entropy: None,
        };
        if !crate::ontology::verify_dag(&dag) {
            return Err(RadarError::Invalid("r1 edges contain a cycle".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct GraphOptions {
    pub r3_cap: usize,
}

impl Default for GraphOptions {
    fn default() -> Self {
        Self { r3_cap: DEFAULT_R3_CAP }
    }
}

/// Builds the network over the corpus' training videos (every video when the
/// corpus is unsplit). Held-out videos are left for inductive insertion.
pub fn build_graph(corpus: &Corpus, ontology: &OntologyDag, opts: &GraphOptions) -> Result<(HeteroGraph, BuildReport)> {
    let tags: Vec<String> = corpus.vocab.iter().map(|e| e.tag.clone()).collect();
    if ontology.tags.len() != tags.len() {
        let known: HashSet<&str> = ontology.tags.iter().map(String::as_str).collect();
        if let Some(t) = tags.iter().find(|t| !known.contains(t.as_str())) {
            return Err(RadarError::Invalid(format!("tag `{t}` is missing from the ontology")));
        }
    }
    let tag_pos: HashMap<&str, u32> = tags.iter().enumerate().map(|(i, t)| (t.as_str(), i as u32)).collect();
    let mut r1 = Vec::with_capacity(ontology.edges.len());
    for e in &ontology.edges {
        let map = |i: usize| {
            let name = &ontology.tags[i];
            tag_pos
                .get(name.as_str())
                .copied()
                .ok_or_else(|| RadarError::Invalid(format!("ontology tag `{name}` is not in the vocabulary")))
        };
        r1.push((map(e.child)?, map(e.parent)?));
    }

    let train = corpus.indices_in(Split::Train);
    let videos: Vec<VideoNode> = train
        .iter()
        .map(|&i| {
            let v = &corpus.videos[i];
            VideoNode {
                id: v.id.clone(),
                user_id: v.user_id.clone(),
                timestamp: v.timestamp,
            }
        })
        .collect();
    let mut r2 = Vec::new();
    for (vi, &ci) in train.iter().enumerate() {
        for t in &corpus.videos[ci].tags {
            let &ti = tag_pos.get(t.as_str()).ok_or_else(|| RadarError::UnknownTag {
                video: corpus.videos[ci].id.clone(),
                tag: t.clone(),
            })?;
            r2.push((vi as u32, ti));
        }
    }

    // Users are known through any corpus video, so follows among held-out
    // creators still feed inductive insertion.
    let users: HashSet<&str> = corpus.videos.iter().map(|v| v.user_id.as_str()).collect();
    let mut followees: BTreeMap<String, Vec<String>> = BTreeMap::new();
    let mut report = BuildReport::default();
    for f in &corpus.follows {
        if users.contains(f.follower.as_str()) && users.contains(f.followee.as_str()) {
            followees.entry(f.follower.clone()).or_default().push(f.followee.clone());
        } else {
            report.dropped_follows += 1;
        }
    }
    for list in followees.values_mut() {
        list.sort();
        list.dedup();
    }
    if report.dropped_follows > 0 {
        log::warn!("dropped {} follow edges referencing users without videos", report.dropped_follows);
    }

    let splits = corpus.splits.as_ref().map(|s| {
        corpus
            .videos
            .iter()
            .zip(s)
            .map(|(v, &sp)| (v.id.clone(), sp))
            .collect()
    });
    let n_videos = videos.len();
    let n_tags = tag_pos.len();
    let edges = [
        EdgeSet::from_pairs(r1, n_tags),
        EdgeSet::from_pairs(r2, n_tags),
        EdgeSet::empty(n_videos),
    ];
    let mut graph = HeteroGraph::from_parts(
        videos,
        tags,
        followees,
        edges,
        opts.r3_cap,
        splits,
    )?;

    let mut r3 = Vec::new();
    for b in 0..n_videos {
        let node = &graph.videos[b];
        let (sources, total) = graph.r3_sources_counted(&node.user_id, node.timestamp, &node.id);
        if total > sources.len() {
            report.capped_destinations += 1;
        }
        r3.extend(sources.into_iter().map(|a| (a, b as u32)));
    }
    graph.edges[Relation::R3.index()] = EdgeSet::from_pairs(r3, n_videos);
    graph.check()?;
    Ok((graph, report))
}

#[cfg(test)]
mod tests;
