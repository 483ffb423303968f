use std::collections::HashMap;
use std::sync::Arc;

use rand::seq::index::sample;
use rand::Rng;

use super::{HeteroGraph, NodeType, Relation};
use crate::error::{RadarError, Result};

/// Nodes whose representations are computed at one layer, by type. Indices
/// are graph node indices; positions in these lists are the local indices
/// used by [`Block`].
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Frontier {
    pub videos: Vec<u32>,
    pub tags: Vec<u32>,
}

impl Frontier {
    pub fn new(videos: Vec<u32>, tags: Vec<u32>) -> Self {
        Self { videos, tags }
    }

    pub fn nodes(&self, t: NodeType) -> &[u32] {
        match t {
            NodeType::Video => &self.videos,
            NodeType::Tag => &self.tags,
        }
    }

    fn nodes_mut(&mut self, t: NodeType) -> &mut Vec<u32> {
        match t {
            NodeType::Video => &mut self.videos,
            NodeType::Tag => &mut self.tags,
        }
    }

    pub fn len(&self, t: NodeType) -> usize {
        self.nodes(t).len()
    }
}

/// Edges of one relation feeding layer `l`: `src[i]` is a local index into
/// the layer `l − 1` frontier, `dst[i]` a local index into the layer `l`
/// frontier.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Block {
    pub relation: Relation,
    pub src: Arc<[u32]>,
    pub dst: Arc<[u32]>,
}

impl Block {
    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }
}

/// `frontiers[L]` holds the seeds and `frontiers[0]` the input nodes.
/// `blocks[l - 1][r]` carries relation `r` from layer `l − 1` to layer `l`.
/// Every frontier begins with the nodes of the frontier above it, in the
/// same order, so a node's previous-layer representation sits at the same
/// local index.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LayeredSample {
    pub frontiers: Vec<Frontier>,
    pub blocks: Vec<[Block; 3]>,
}

impl LayeredSample {
    pub fn layers(&self) -> usize {
        self.blocks.len()
    }

    pub fn seeds(&self) -> &Frontier {
        self.frontiers.last().expect("at least one frontier")
    }

    pub fn n_edges(&self) -> usize {
        self.blocks.iter().flatten().map(Block::len).sum()
    }
}

fn check_seeds(graph: &HeteroGraph, seeds: &Frontier) -> Result<()> {
    for t in [NodeType::Video, NodeType::Tag] {
        let mut seen = vec![false; graph.n_nodes(t)];
        for &n in seeds.nodes(t) {
            match seen.get_mut(n as usize) {
                None => return Err(RadarError::Invalid(format!("seed {t:?} node {n} not in graph"))),
                Some(true) => return Err(RadarError::Invalid(format!("seed {t:?} node {n} repeated"))),
                Some(s) => *s = true,
            }
        }
    }
    Ok(())
}

fn expand(
    graph: &HeteroGraph,
    seeds: &Frontier,
    layers: usize,
    mut pick: impl FnMut(Relation, u32, &[u32]) -> Vec<u32>,
) -> Result<LayeredSample> {
    check_seeds(graph, seeds)?;
    let mut frontiers = vec![seeds.clone()];
    let mut blocks = Vec::with_capacity(layers);
    for _ in 0..layers {
        let upper = frontiers.last().expect("non-empty");
        let mut lower = upper.clone();
        let mut position: [HashMap<u32, u32>; 2] = [
            lower.videos.iter().enumerate().map(|(i, &n)| (n, i as u32)).collect(),
            lower.tags.iter().enumerate().map(|(i, &n)| (n, i as u32)).collect(),
        ];
        let layer_blocks = Relation::ALL.map(|r| {
            let (mut src, mut dst) = (Vec::new(), Vec::new());
            let st = r.source_type();
            let slot = match st {
                NodeType::Video => 0,
                NodeType::Tag => 1,
            };
            for (dl, &dg) in upper.nodes(r.target_type()).iter().enumerate() {
                let inbound = graph.edges(r).inbound(dg as usize);
                for s in pick(r, dg, inbound) {
                    let next = position[slot].len() as u32;
                    let sl = *position[slot].entry(s).or_insert_with(|| {
                        lower.nodes_mut(st).push(s);
                        next
                    });
                    src.push(sl);
                    dst.push(dl as u32);
                }
            }
            Block {
                relation: r,
                src: src.into(),
                dst: dst.into(),
            }
        });
        blocks.push(layer_blocks);
        frontiers.push(lower);
    }
    frontiers.reverse();
    blocks.reverse();
    Ok(LayeredSample { frontiers, blocks })
}

/// Samples up to `fanout` distinct inbound neighbors per destination and
/// relation, uniformly without replacement, for `layers` hops.
pub fn sample_neighbors<R: Rng + ?Sized>(
    graph: &HeteroGraph,
    seeds: &Frontier,
    fanout: usize,
    layers: usize,
    rng: &mut R,
) -> Result<LayeredSample> {
    sample_neighbors_masked(graph, seeds, fanout, layers, rng, |_, _, _| false)
}

/// As [`sample_neighbors`], never drawing an edge `(relation, src, dst)`
/// for which `exclude` returns true.
pub fn sample_neighbors_masked<R: Rng + ?Sized>(
    graph: &HeteroGraph,
    seeds: &Frontier,
    fanout: usize,
    layers: usize,
    rng: &mut R,
    exclude: impl Fn(Relation, u32, u32) -> bool,
) -> Result<LayeredSample> {
    if fanout == 0 {
        return Err(RadarError::Invalid("fanout must be positive".into()));
    }
    let mut pool = Vec::new();
    expand(graph, seeds, layers, |r, dst, inbound| {
        pool.clear();
        pool.extend(inbound.iter().copied().filter(|&s| !exclude(r, s, dst)));
        if pool.len() <= fanout {
            return pool.clone();
        }
        let mut picked: Vec<u32> = sample(rng, pool.len(), fanout).into_iter().map(|i| pool[i]).collect();
        picked.sort_unstable();
        picked
    })
}

/// Every inbound edge for `layers` hops; deterministic.
pub fn full_neighborhood(graph: &HeteroGraph, seeds: &Frontier, layers: usize) -> Result<LayeredSample> {
    expand(graph, seeds, layers, |_, _, inbound| inbound.to_vec())
}

/// Removes each sampled edge independently with probability `rate`.
/// Frontiers are kept as they are.
pub fn edge_dropout<R: Rng + ?Sized>(sample: &LayeredSample, rate: f64, rng: &mut R) -> Result<LayeredSample> {
    if !(0.0..1.0).contains(&rate) {
        return Err(RadarError::Invalid(format!("edge dropout rate {rate} outside [0, 1)")));
    }
    if rate == 0.0 {
        return Ok(sample.clone());
    }
    let blocks = sample
        .blocks
        .iter()
        .map(|layer| {
            layer.clone().map(|b| {
                let (mut src, mut dst) = (Vec::new(), Vec::new());
                for (&s, &d) in b.src.iter().zip(b.dst.iter()) {
                    if rng.random::<f64>() >= rate {
                        src.push(s);
                        dst.push(d);
                    }
                }
                Block {
                    relation: b.relation,
                    src: src.into(),
                    dst: dst.into(),
                }
            })
        })
        .collect();
    Ok(LayeredSample {
        frontiers: sample.frontiers.clone(),
        blocks,
    })
}
