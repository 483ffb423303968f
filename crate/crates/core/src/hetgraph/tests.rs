use std::collections::HashSet;

use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::corpus::{FollowEdge, FrameFeatures, TagVocabEntry};
use crate::ontology::{DagEdge, EdgeOrigin};

fn video(id: &str, user: &str, ts: i64, tags: &[&str]) -> VideoRecord {
    VideoRecord {
        id: id.into(),
        user_id: user.into(),
        timestamp: ts,
        tags: tags.iter().map(|t| t.to_string()).collect(),
        features: FrameFeatures::Aggregated(vec![0.0, 1.0]),
    }
}

fn corpus(videos: Vec<VideoRecord>, follows: &[(&str, &str)], tags: &[&str]) -> Corpus {
    Corpus {
        videos,
        follows: follows
            .iter()
            .map(|&(a, b)| FollowEdge {
                follower: a.into(),
                followee: b.into(),
            })
            .collect(),
        vocab: tags
            .iter()
            .map(|t| TagVocabEntry {
                tag: t.to_string(),
                word_embedding: vec![0.0; 3],
            })
            .collect(),
        splits: None,
    }
}

fn flat(tags: &[&str]) -> OntologyDag {
    OntologyDag {
        tags: tags.iter().map(|t| t.to_string()).collect(),
        edges: Vec::new(),
        entropy: None,
    }
}

fn r3_ids(g: &HeteroGraph) -> Vec<(String, String)> {
    g.edges(Relation::R3)
        .pairs()
        .map(|(s, d)| (g.videos[s as usize].id.clone(), g.videos[d as usize].id.clone()))
        .collect()
}

#[test]
fn follow_inheritance_respects_time() {
    let c = corpus(
        vec![video("v1", "A", 1, &["x"]), video("v2", "A", 5, &["x"]), video("v3", "B", 3, &["x"])],
        &[("B", "A")],
        &["x"],
    );
    let (g, _) = build_graph(&c, &flat(&["x"]), &GraphOptions::default()).unwrap();
    assert_eq!(r3_ids(&g), vec![("v1".to_string(), "v3".to_string())]);
}

#[test]
fn equal_timestamps_break_ties_by_id() {
    let c = corpus(
        vec![video("a", "A", 1, &["x"]), video("b", "B", 1, &["x"]), video("c", "A", 1, &["x"])],
        &[("B", "A"), ("A", "B")],
        &["x"],
    );
    let (g, _) = build_graph(&c, &flat(&["x"]), &GraphOptions::default()).unwrap();
    assert_eq!(
        r3_ids(&g),
        vec![("a".to_string(), "b".to_string()), ("b".to_string(), "c".to_string())]
    );
}

#[test]
fn no_follows_no_r3_and_one_r2_per_annotation() {
    let c = corpus(vec![video("v", "A", 1, &["x", "y"]), video("w", "A", 2, &["y"])], &[], &["x", "y"]);
    let (g, _) = build_graph(&c, &flat(&["x", "y"]), &GraphOptions::default()).unwrap();
    assert!(g.edges(Relation::R3).is_empty());
    assert_eq!(g.edges(Relation::R2).len(), 3);
    let v = g.video_index("v").unwrap();
    let from_v = g.edges(Relation::R2).pairs().filter(|&(s, _)| s == v).count();
    assert_eq!(from_v, 2);
}

#[test]
fn own_videos_do_not_influence() {
    let c = corpus(vec![video("v1", "A", 1, &["x"]), video("v2", "A", 2, &["x"])], &[], &["x"]);
    let (g, _) = build_graph(&c, &flat(&["x"]), &GraphOptions::default()).unwrap();
    assert!(g.edges(Relation::R3).is_empty());
}

#[test]
fn follows_of_unknown_users_are_dropped() {
    let c = corpus(vec![video("v1", "A", 1, &["x"])], &[("Z", "A"), ("A", "Q")], &["x"]);
    let (g, report) = build_graph(&c, &flat(&["x"]), &GraphOptions::default()).unwrap();
    assert_eq!(report.dropped_follows, 2);
    assert!(g.followees.is_empty());
}

#[test]
fn r3_cap_keeps_newest() {
    let mut videos: Vec<_> = (0..10).map(|i| video(&format!("a{i}"), "A", i, &["x"])).collect();
    videos.push(video("b", "B", 100, &["x"]));
    let c = corpus(videos, &[("B", "A")], &["x"]);
    let (g, report) = build_graph(&c, &flat(&["x"]), &GraphOptions { r3_cap: 3 }).unwrap();
    let b = g.video_index("b").unwrap();
    let src: Vec<&str> = g
        .full_inbound(b, Relation::R3)
        .unwrap()
        .iter()
        .map(|&s| g.videos[s as usize].id.as_str())
        .collect();
    assert_eq!(src, vec!["a7", "a8", "a9"]);
    assert_eq!(report.capped_destinations, 1);
}

#[test]
fn ontology_edges_become_r1() {
    let tags = ["x", "y", "z"];
    let mut dag = flat(&tags);
    dag.edges.push(DagEdge { child: 0, parent: 1, score: 0.9, origin: EdgeOrigin::Kept });
    dag.edges.push(DagEdge { child: 2, parent: 1, score: 0.8, origin: EdgeOrigin::Kept });
    let c = corpus(vec![video("v", "A", 1, &["x", "z"])], &[], &tags);
    let (g, _) = build_graph(&c, &dag, &GraphOptions::default()).unwrap();
    assert_eq!(g.full_inbound(1, Relation::R1).unwrap(), &[0, 2]);
    assert!(build_graph(&c, &flat(&["x", "y"]), &GraphOptions::default()).is_err());
}

#[test]
fn held_out_videos_stay_out_of_the_graph() {
    let mut c = corpus(
        vec![video("v1", "A", 1, &["x"]), video("v2", "B", 2, &["x"])],
        &[("B", "A")],
        &["x"],
    );
    c.splits = Some(vec![Split::Train, Split::Test]);
    let (g, _) = build_graph(&c, &flat(&["x"]), &GraphOptions::default()).unwrap();
    assert_eq!(g.n_videos(), 1);
    assert_eq!(g.splits.as_ref().unwrap()["v2"], Split::Test);
    // the held-out video's creator keeps the follow edge for insertion
    assert_eq!(g.r3_sources_for("B", 2, "v2"), vec![0]);
}

fn star_graph(degree: usize) -> HeteroGraph {
    let mut videos: Vec<_> = (0..degree).map(|i| video(&format!("a{i:03}"), &format!("u{i}"), i as i64, &["x"])).collect();
    videos.push(video("hub", "H", 10_000, &["x"]));
    let users: Vec<String> = (0..degree).map(|i| format!("u{i}")).collect();
    let follows: Vec<(&str, &str)> = users.iter().map(|u| ("H", u.as_str())).collect();
    let c = corpus(videos, &follows, &["x"]);
    build_graph(&c, &flat(&["x"]), &GraphOptions { r3_cap: degree.max(1) }).unwrap().0
}

#[test]
fn full_inbound_lists() {
    let g = star_graph(3);
    let hub = g.video_index("hub").unwrap();
    assert_eq!(g.full_inbound(hub, Relation::R3).unwrap(), &[0, 1, 2]);
    assert_eq!(g.full_inbound(0, Relation::R2).unwrap().len(), 4);
    assert!(g.full_inbound(0, Relation::R3).unwrap().is_empty());
    assert!(g.full_inbound(99, Relation::R3).is_err());
    for v in 0..g.n_videos() as u32 {
        let total: usize = Relation::inbound_to(NodeType::Video)
            .iter()
            .map(|&r| g.full_inbound(v, r).unwrap().len())
            .sum();
        assert_eq!(total, g.in_degree(NodeType::Video, v));
    }
}

#[test]
fn insertion_adds_only_inbound_edges() {
    let mut g = star_graph(5);
    let before = g.clone();
    let idx = g.insert_video(&video("new", "H", 20_000, &[])).unwrap();
    assert_eq!(idx as usize, before.n_videos());
    assert_eq!(g.full_inbound(idx, Relation::R3).unwrap().len(), 5);
    for r in Relation::ALL {
        for d in 0..before.n_nodes(r.target_type()) as u32 {
            assert_eq!(g.full_inbound(d, r).unwrap(), before.full_inbound(d, r).unwrap());
        }
    }
    assert!(g.edges(Relation::R3).pairs().all(|(s, _)| s != idx));
    g.check().unwrap();
    assert!(g.insert_video(&video("new", "H", 1, &[])).is_err());
    let lonely = g.insert_video(&video("solo", "nobody", 1, &[])).unwrap();
    assert!(g.full_inbound(lonely, Relation::R3).unwrap().is_empty());
}

fn seeds_of(g: &HeteroGraph, video: &str) -> Frontier {
    Frontier::new(vec![g.video_index(video).unwrap()], Vec::new())
}

#[test]
fn fanout_caps_distinct_neighbors() {
    let g = star_graph(10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let s = sample_neighbors(&g, &seeds_of(&g, "hub"), 4, 1, &mut rng).unwrap();
    let block = &s.blocks[0][Relation::R3.index()];
    assert_eq!(block.len(), 4);
    let distinct: HashSet<u32> = block.src.iter().copied().collect();
    assert_eq!(distinct.len(), 4);

    let g = star_graph(2);
    let s = sample_neighbors(&g, &seeds_of(&g, "hub"), 4, 1, &mut rng).unwrap();
    assert_eq!(s.blocks[0][Relation::R3.index()].len(), 2);
}

#[test]
fn sampling_is_seeded() {
    let g = star_graph(100);
    let seeds = seeds_of(&g, "hub");
    let draw = |seed| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        sample_neighbors(&g, &seeds, 4, 2, &mut rng).unwrap()
    };
    assert_eq!(draw(5), draw(5));
    // P(two draws of 4 from 100 agree) = 1 / C(100, 4) ≈ 2.6e-7
    let same = (0..100u64).filter(|&k| draw(1000 + k) == draw(2000 + k)).count();
    assert_eq!(same, 0);
}

#[test]
fn samples_are_closed_under_layers() {
    let g = star_graph(30);
    let seeds = Frontier::new(vec![g.video_index("hub").unwrap(), 3], vec![0]);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for s in [
        sample_neighbors(&g, &seeds, 4, 3, &mut rng).unwrap(),
        full_neighborhood(&g, &seeds, 3).unwrap(),
    ] {
        assert_eq!(s.frontiers.len(), 4);
        assert_eq!(s.seeds(), &seeds);
        for l in 1..s.frontiers.len() {
            let (lower, upper) = (&s.frontiers[l - 1], &s.frontiers[l]);
            for t in [NodeType::Video, NodeType::Tag] {
                assert_eq!(&lower.nodes(t)[..upper.len(t)], upper.nodes(t));
            }
            for b in &s.blocks[l - 1] {
                assert!(b.src.iter().all(|&i| (i as usize) < lower.len(b.relation.source_type())));
                assert!(b.dst.iter().all(|&i| (i as usize) < upper.len(b.relation.target_type())));
            }
        }
    }
    assert!(sample_neighbors(&g, &Frontier::new(vec![999], vec![]), 4, 1, &mut rng).is_err());
    assert!(sample_neighbors(&g, &Frontier::new(vec![1, 1], vec![]), 4, 1, &mut rng).is_err());
}

#[test]
fn masked_sampling_skips_edges() {
    let g = star_graph(3);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let s = sample_neighbors_masked(&g, &Frontier::new(vec![], vec![0]), 4, 1, &mut rng, |r, src, _| {
        r == Relation::R2 && src < 2
    })
    .unwrap();
    let block = &s.blocks[0][Relation::R2.index()];
    let globals: Vec<u32> = block.src.iter().map(|&i| s.frontiers[0].videos[i as usize]).collect();
    assert!(globals.iter().all(|&v| v >= 2));
}

#[test]
fn edge_dropout_contract() {
    let g = star_graph(10_000);
    let seeds = seeds_of(&g, "hub");
    let full = full_neighborhood(&g, &seeds, 1).unwrap();
    assert_eq!(full.n_edges(), 10_000);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    assert_eq!(edge_dropout(&full, 0.0, &mut rng).unwrap(), full);
    let dropped = edge_dropout(&full, 0.2, &mut rng).unwrap();
    let kept = dropped.n_edges() as i64;
    assert!((kept - 8000).abs() <= 120, "kept {kept}");
    assert_eq!(dropped.frontiers, full.frontiers);
    assert!(edge_dropout(&full, 1.0, &mut rng).is_err());
    assert!(edge_dropout(&full, -0.1, &mut rng).is_err());
}

#[test]
fn without_relation_clears_one_edge_set() {
    let g = star_graph(4);
    let h = g.without_relation(Relation::R3);
    assert!(h.edges(Relation::R3).is_empty());
    assert_eq!(h.edges(Relation::R2), g.edges(Relation::R2));
    assert!(h.followees.is_empty());
}

#[test]
fn graph_round_trips_through_disk() {
    let mut c = corpus(
        vec![video("v1", "A", 1, &["x"]), video("v2", "A", 5, &["x", "y"]), video("v3", "B", 3, &["y"])],
        &[("B", "A")],
        &["x", "y"],
    );
    c.splits = Some(vec![Split::Train, Split::Train, Split::Train]);
    let mut dag = flat(&["x", "y"]);
    dag.edges.push(DagEdge { child: 0, parent: 1, score: 0.7, origin: EdgeOrigin::Kept });
    let (g, _) = build_graph(&c, &dag, &GraphOptions::default()).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_graph(&g, dir.path(), Some(Path::new("corpus"))).unwrap();
    let (back, corpus_dir) = load_graph(dir.path()).unwrap();
    assert_eq!(back, g);
    assert_eq!(corpus_dir.as_deref(), Some(Path::new("corpus")));
    let bytes = std::fs::read(dir.path().join("r3.bin")).unwrap();
    assert_eq!(bytes, [0, 0, 0, 0, 2, 0, 0, 0]);
}

use std::path::Path;

fn random_corpus() -> impl Strategy<Value = Corpus> {
    (
        prop::collection::vec((0usize..6, 0i64..20, prop::collection::btree_set(0usize..4, 1..4)), 1..30),
        prop::collection::vec((0usize..6, 0usize..6), 0..15),
    )
        .prop_map(|(vids, follows)| {
            let tags = ["t0", "t1", "t2", "t3"];
            let videos = vids
                .iter()
                .enumerate()
                .map(|(i, (u, ts, ts_tags))| {
                    let names: Vec<&str> = ts_tags.iter().map(|&t| tags[t]).collect();
                    video(&format!("v{i}"), &format!("u{u}"), *ts, &names)
                })
                .collect();
            let users: Vec<String> = (0..6).map(|u| format!("u{u}")).collect();
            let mut seen = HashSet::new();
            let pairs: Vec<(&str, &str)> = follows
                .iter()
                .filter(|(a, b)| a != b && seen.insert((*a, *b)))
                .map(|&(a, b)| (users[a].as_str(), users[b].as_str()))
                .collect();
            corpus(videos, &pairs, &tags)
        })
}

proptest! {
    #[test]
    fn r3_never_points_backward(c in random_corpus()) {
        let dag = flat(&["t0", "t1", "t2", "t3"]);
        let (g, _) = build_graph(&c, &dag, &GraphOptions { r3_cap: 4 }).unwrap();
        for (s, d) in g.edges(Relation::R3).pairs() {
            let (a, b) = (&g.videos[s as usize], &g.videos[d as usize]);
            prop_assert!((a.timestamp, &a.id) < (b.timestamp, &b.id));
            prop_assert_ne!(&a.user_id, &b.user_id);
        }
        let (again, _) = build_graph(&c, &dag, &GraphOptions { r3_cap: 4 }).unwrap();
        prop_assert_eq!(again, g);
    }
}
