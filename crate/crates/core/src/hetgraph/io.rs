use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{EdgeSet, HeteroGraph, Relation, VideoNode};
use crate::corpus::Split;
use crate::error::{RadarError, Result};

pub const GRAPH_MANIFEST: &str = "manifest.json";
const NODES_FILE: &str = "nodes.json";
const FOLLOWS_FILE: &str = "followees.json";
const SPLITS_FILE: &str = "splits.json";

#[derive(Serialize, Deserialize)]
struct Manifest {
    n_videos: usize,
    n_tags: usize,
    relations: Vec<RelationEntry>,
    r3_cap: usize,
    /// Corpus directory the graph was built from, if known.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    corpus: Option<PathBuf>,
}

#[derive(Serialize, Deserialize)]
struct RelationEntry {
    name: String,
    file: String,
    edges: usize,
}

#[derive(Serialize, Deserialize)]
struct Nodes {
    videos: Vec<VideoNode>,
    tags: Vec<String>,
}

fn edge_file(r: Relation) -> &'static str {
    match r {
        Relation::R1 => "r1.bin",
        Relation::R2 => "r2.bin",
        Relation::R3 => "r3.bin",
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    fs::write(path, text).map_err(|e| RadarError::io(path, e))
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| RadarError::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

/// Writes the graph as a JSON manifest, node and follow tables, and one file
/// of little-endian `u32` `(src, dst)` pairs per relation.
pub fn save_graph(graph: &HeteroGraph, dir: &Path, corpus: Option<&Path>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RadarError::io(dir, e))?;
    let mut relations = Vec::new();
    for r in Relation::ALL {
        let set = graph.edges(r);
        let mut bytes = Vec::with_capacity(set.len() * 8);
        for (s, d) in set.pairs() {
            bytes.extend_from_slice(&s.to_le_bytes());
            bytes.extend_from_slice(&d.to_le_bytes());
        }
        let path = dir.join(edge_file(r));
        fs::write(&path, bytes).map_err(|e| RadarError::io(&path, e))?;
        relations.push(RelationEntry {
            name: r.name().to_string(),
            file: edge_file(r).to_string(),
            edges: set.len(),
        });
    }
    write_json(
        &dir.join(GRAPH_MANIFEST),
        &Manifest {
            n_videos: graph.n_videos(),
            n_tags: graph.n_tags(),
            relations,
            r3_cap: graph.r3_cap,
            corpus: corpus.map(Path::to_path_buf),
        },
    )?;
    write_json(
        &dir.join(NODES_FILE),
        &Nodes {
            videos: graph.videos.clone(),
            tags: graph.tags.clone(),
        },
    )?;
    write_json(&dir.join(FOLLOWS_FILE), &graph.followees)?;
    if let Some(splits) = &graph.splits {
        write_json(&dir.join(SPLITS_FILE), splits)?;
    }
    Ok(())
}

fn read_edges(path: &Path, n_src: usize, n_dst: usize) -> Result<EdgeSet> {
    let bytes = fs::read(path).map_err(|e| RadarError::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(RadarError::Invalid(format!("{} is not a list of u32 pairs", path.display())));
    }
    let mut pairs = Vec::with_capacity(bytes.len() / 8);
    for chunk in bytes.chunks_exact(8) {
        let s = u32::from_le_bytes(chunk[..4].try_into().expect("4 bytes"));
        let d = u32::from_le_bytes(chunk[4..].try_into().expect("4 bytes"));
        if s as usize >= n_src || d as usize >= n_dst {
            return Err(RadarError::Invalid(format!("{}: edge ({s}, {d}) out of range", path.display())));
        }
        pairs.push((s, d));
    }
    Ok(EdgeSet::from_pairs(pairs, n_dst))
}

/// Loads a graph written by [`save_graph`]; returns it with the recorded
/// corpus directory.
pub fn load_graph(dir: &Path) -> Result<(HeteroGraph, Option<PathBuf>)> {
    let manifest: Manifest = read_json(&dir.join(GRAPH_MANIFEST))?;
    let nodes: Nodes = read_json(&dir.join(NODES_FILE))?;
    if nodes.videos.len() != manifest.n_videos || nodes.tags.len() != manifest.n_tags {
        return Err(RadarError::Invalid("graph manifest disagrees with node table".into()));
    }
    let followees: BTreeMap<String, Vec<String>> = read_json(&dir.join(FOLLOWS_FILE))?;
    let splits_path = dir.join(SPLITS_FILE);
    let splits: Option<BTreeMap<String, Split>> = if splits_path.exists() {
        Some(read_json(&splits_path)?)
    } else {
        None
    };
    let (nv, nt) = (nodes.videos.len(), nodes.tags.len());
    let mut edges = Vec::with_capacity(3);
    for r in Relation::ALL {
        let count = |t| match t {
            super::NodeType::Video => nv,
            super::NodeType::Tag => nt,
        };
        let set = read_edges(&dir.join(edge_file(r)), count(r.source_type()), count(r.target_type()))?;
        edges.push(set);
    }
    let edges: [EdgeSet; 3] = edges.try_into().expect("three relations");
    let graph = HeteroGraph::from_parts(nodes.videos, nodes.tags, followees, edges, manifest.r3_cap, splits)?;
    Ok((graph, manifest.corpus))
}
