use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::autodiff::{finite_diff_check, gelu, sigmoid, GradCheckOptions};
use crate::corpus::{Corpus, FollowEdge, FrameFeatures, TagVocabEntry, VideoRecord};
use crate::hetgraph::{build_graph, full_neighborhood, Frontier, GraphOptions, HeteroGraph, LayeredSample};
use crate::ontology::{DagEdge, EdgeOrigin, OntologyDag};

const DV: usize = 5;
const DT: usize = 4;

fn record(i: usize, user: usize, tags: Vec<String>, rng: &mut ChaCha8Rng) -> VideoRecord {
    VideoRecord {
        id: format!("v{i:03}"),
        user_id: format!("u{user}"),
        timestamp: i as i64,
        tags,
        features: FrameFeatures::Aggregated((0..DV).map(|_| rng.random_range(-1.0..1.0)).collect()),
    }
}

/// Random corpus and graph: tags form a forest (tag i's parent is i / 2),
/// users follow a few others.
fn toy(seed: u64, n_videos: usize, n_tags: usize, n_users: usize) -> (Corpus, HeteroGraph) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tags: Vec<String> = (0..n_tags).map(|i| format!("t{i:02}")).collect();
    let videos = (0..n_videos)
        .map(|i| {
            let mut set: Vec<String> = Vec::new();
            while set.len() < 2 {
                let t = tags[rng.random_range(0..n_tags)].clone();
                if !set.contains(&t) {
                    set.push(t);
                }
            }
            let user = rng.random_range(0..n_users);
            record(i, user, set, &mut rng)
        })
        .collect();
    let mut follows = Vec::new();
    let mut seen = HashSet::new();
    for _ in 0..n_users * 2 {
        let (a, b) = (rng.random_range(0..n_users), rng.random_range(0..n_users));
        if a != b && seen.insert((a, b)) {
            follows.push(FollowEdge {
                follower: format!("u{a}"),
                followee: format!("u{b}"),
            });
        }
    }
    let vocab = tags
        .iter()
        .map(|t| TagVocabEntry {
            tag: t.clone(),
            word_embedding: (0..DT).map(|_| rng.random_range(-1.0..1.0)).collect(),
        })
        .collect();
    let corpus = Corpus {
        videos,
        follows,
        vocab,
        splits: None,
    };
    corpus.validate().unwrap();
    let dag = OntologyDag {
        tags: tags.clone(),
        edges: (1..n_tags)
            .map(|i| DagEdge {
                child: i,
                parent: i / 2,
                score: 0.9,
                origin: EdgeOrigin::Kept,
            })
            .collect(),
        entropy: None,
    };
    let (graph, _) = build_graph(&corpus, &dag, &GraphOptions::default()).unwrap();
    (corpus, graph)
}

fn config(d: usize, layers: usize, flags: ModelFlags) -> RadarConfig {
    RadarConfig {
        d,
        layers,
        heads: 1,
        video_dim: DV,
        tag_dim: DT,
        n_tags: 0,
        flags,
    }
}

fn model_for(graph: &HeteroGraph, d: usize, layers: usize, flags: ModelFlags, seed: u64) -> RadarModel<f64> {
    let mut cfg = config(d, layers, flags);
    cfg.n_tags = graph.n_tags();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut m = RadarModel::new(cfg, &mut rng).unwrap();
    // move every parameter (biases and embeddings included) off its initial value
    for id in m.store.ids().collect::<Vec<_>>() {
        for x in m.store.get_mut(id).data_mut() {
            *x += rng.random_range(-0.3..0.3);
        }
    }
    m
}

fn all_seeds(graph: &HeteroGraph) -> Frontier {
    Frontier::new((0..graph.n_videos() as u32).collect(), (0..graph.n_tags() as u32).collect())
}

fn lin(m: &RadarModel<f64>, l: &Linear, x: &Matrix<f64>) -> Matrix<f64> {
    let mut y = x.matmul(m.store.get(l.w));
    if let Some(b) = l.b {
        let b = m.store.get(b).clone();
        for i in 0..y.rows() {
            for (o, &v) in y.row_mut(i).iter_mut().zip(b.data()) {
                *o += v;
            }
        }
    }
    y
}

#[test]
fn tag_inputs_reduce_to_projection_bias() {
    let (mut corpus, _) = toy(1, 6, 4, 3);
    for e in &mut corpus.vocab {
        e.word_embedding = vec![0.0; DT];
    }
    let (graph, _) = build_graph(
        &corpus,
        &OntologyDag {
            tags: corpus.vocab.iter().map(|e| e.tag.clone()).collect(),
            edges: vec![],
            entropy: None,
        },
        &GraphOptions::default(),
    )
    .unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut cfg = config(6, 1, ModelFlags::default());
    cfg.n_tags = graph.n_tags();
    let mut m: RadarModel<f64> = RadarModel::new(cfg, &mut rng).unwrap();
    let bias = m.tag_in.b.unwrap();
    *m.store.get_mut(bias) = Matrix::from_vec(1, 6, vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6]);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let mut tape = Tape::new();
    let (hv, ht) = m.input_reps(&mut tape, &feats, &all_seeds(&graph));
    assert_eq!(tape.shape(hv), (graph.n_videos(), 6));
    for i in 0..graph.n_tags() {
        assert_eq!(tape.value(ht).row(i), m.store.get(bias).row(0));
    }
}

#[test]
fn identical_frames_give_identical_inputs() {
    let (mut corpus, _) = toy(2, 4, 3, 2);
    corpus.videos[1].features = corpus.videos[0].features.clone();
    let flat = OntologyDag {
        tags: corpus.vocab.iter().map(|e| e.tag.clone()).collect(),
        edges: vec![],
        entropy: None,
    };
    let (graph, _) = build_graph(&corpus, &flat, &GraphOptions::default()).unwrap();
    let m = model_for(&graph, 4, 1, ModelFlags::default(), 0);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let mut tape = Tape::new();
    let (hv, _) = m.input_reps(&mut tape, &feats, &all_seeds(&graph));
    assert_eq!(tape.value(hv).row(0), tape.value(hv).row(1));
}

/// v0 (older) → v1 via r3; both videos carry tag t0.
fn three_node() -> (Corpus, HeteroGraph) {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let tags = vec!["t0".to_string()];
    let corpus = Corpus {
        videos: vec![record(0, 0, tags.clone(), &mut rng), record(1, 1, tags.clone(), &mut rng)],
        follows: vec![FollowEdge {
            follower: "u1".into(),
            followee: "u0".into(),
        }],
        vocab: vec![TagVocabEntry {
            tag: "t0".into(),
            word_embedding: vec![0.5, -0.25, 1.0, 0.0],
        }],
        splits: None,
    };
    let dag = OntologyDag {
        tags,
        edges: vec![],
        entropy: None,
    };
    let (graph, _) = build_graph(&corpus, &dag, &GraphOptions::default()).unwrap();
    (corpus, graph)
}

#[test]
fn one_layer_matches_dense_oracle() {
    let (corpus, graph) = three_node();
    let d = 4;
    let m = model_for(&graph, d, 1, ModelFlags::default(), 5);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let mut tape = Tape::new();
    let out = m
        .forward(&mut tape, &full_graph_sample(&graph, 1), &feats, None)
        .unwrap();

    let p = &m.layers[0];
    let h_v = lin(&m, &m.video_in, &feats.video);
    let mut h_t = lin(&m, &m.tag_in, &feats.tag);
    h_t.add_assign(m.store.get(m.tag_embedding));
    let gelu_m = |x: Matrix<f64>| x.map(gelu);
    let sig = |x: Matrix<f64>| x.map(sigmoid);
    let gate = |g: &GgtParams, h: &Matrix<f64>, o: &Matrix<f64>| {
        let z = sig(lin(&m, &g.gate_a, h).zip_map(&lin(&m, &g.gate_b, o), |a, b| a + b));
        let res = gelu_m(lin(&m, &g.residual, h));
        let out = z.zip_map(o, |z, o| z * o).zip_map(&z.zip_map(&res, |z, r| (1.0 - z) * r), |a, b| a + b);
        (out, z)
    };

    // videos
    let g3 = &p.ggt[Relation::R3.index()];
    let v0 = h_v.slice_rows(0, 1);
    let v1 = h_v.slice_rows(1, 2);
    let m_v0 = gelu_m(lin(&m, &g3.residual, &v0));
    let o_v1 = lin(&m, &p.v[0], &v0).matmul(m.store.get(g3.w_msg[0]));
    let (m_v1, z) = gate(g3, &v1, &o_v1);
    assert!(z.data().iter().all(|&z| z > 0.0 && z < 1.0));
    let got = tape.value(out.video);
    for (a, b) in got.row(0).iter().zip(m_v0.row(0)) {
        assert!((a - b).abs() < 1e-12);
    }
    for (a, b) in got.row(1).iter().zip(m_v1.row(0)) {
        assert!((a - b).abs() < 1e-12);
    }

    // tag: r2 attention over both videos, r1 empty
    let g2 = &p.ggt[Relation::R2.index()];
    let q = lin(&m, &p.q[1], &h_t).matmul(m.store.get(g2.w_att[0]));
    let k = lin(&m, &p.k[0], &h_v);
    let vals = lin(&m, &p.v[0], &h_v).matmul(m.store.get(g2.w_msg[0]));
    let logits: Vec<f64> = (0..2).map(|i| crate::autodiff::dot(q.row(0), k.row(i)) / (d as f64).sqrt()).collect();
    let mx = logits[0].max(logits[1]);
    let e: Vec<f64> = logits.iter().map(|x| (x - mx).exp()).collect();
    let alpha: Vec<f64> = e.iter().map(|x| x / (e[0] + e[1])).collect();
    let o = Matrix::from_vec(1, d, (0..d).map(|j| alpha[0] * vals.get(0, j) + alpha[1] * vals.get(1, j)).collect());
    let (m2, _) = gate(g2, &h_t, &o);
    let m1 = gelu_m(lin(&m, &p.ggt[Relation::R1.index()].residual, &h_t));
    let AggregatorParams::Aan { common, unique_r1, unique_r2, .. } = &p.aggregator else {
        unreachable!()
    };
    let (c1, c2) = (lin(&m, common, &m1), lin(&m, common, &m2));
    let (u1, u2) = (lin(&m, unique_r1, &m1), lin(&m, unique_r2, &m2));
    let expect: Vec<f64> = (0..d)
        .map(|j| 0.5 * (u1.get(0, j).max(u2.get(0, j)) + 0.5 * (c1.get(0, j) + c2.get(0, j))))
        .collect();
    for (a, b) in tape.value(out.tag).row(0).iter().zip(&expect) {
        assert!((a - b).abs() < 1e-12, "{a} vs {b}");
    }
}

#[test]
fn single_neighbor_gets_full_weight() {
    let (corpus, graph) = three_node();
    let m = model_for(&graph, 4, 1, ModelFlags::default(), 1);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let mut tape = Tape::new();
    let out = m.forward(&mut tape, &full_graph_sample(&graph, 1), &feats, None).unwrap();
    let r3 = out.attention.iter().find(|a| a.relations == [Relation::R3]).unwrap();
    assert_eq!(tape.value(r3.weights).data(), &[1.0]);
}

#[test]
fn zero_gate_weights_average_message_and_residual() {
    let (corpus, graph) = three_node();
    let d = 4;
    let mut m = model_for(&graph, d, 1, ModelFlags::default(), 2);
    let g3 = m.layers[0].ggt[Relation::R3.index()].clone();
    for id in [g3.gate_a.w, g3.gate_b.w, g3.gate_b.b.unwrap()] {
        let z = Matrix::zeros(m.store.get(id).rows(), m.store.get(id).cols());
        *m.store.get_mut(id) = z;
    }
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let mut tape = Tape::new();
    let out = m.forward(&mut tape, &full_graph_sample(&graph, 1), &feats, None).unwrap();
    let h_v = lin(&m, &m.video_in, &feats.video);
    let o = lin(&m, &m.layers[0].v[0], &h_v.slice_rows(0, 1)).matmul(m.store.get(g3.w_msg[0]));
    let res = lin(&m, &g3.residual, &h_v.slice_rows(1, 2)).map(gelu);
    for j in 0..d {
        let want = 0.5 * o.get(0, j) + 0.5 * res.get(0, j);
        assert!((tape.value(out.video).get(1, j) - want).abs() < 1e-12);
    }
}

#[test]
fn videos_without_r3_take_the_residual_branch() {
    let (corpus, graph) = toy(3, 12, 5, 4);
    let graph = graph.without_relation(Relation::R3);
    let m = model_for(&graph, 6, 1, ModelFlags::default(), 3);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let mut tape = Tape::new();
    let out = m.forward(&mut tape, &full_graph_sample(&graph, 1), &feats, None).unwrap();
    let h_v = lin(&m, &m.video_in, &feats.video);
    let want = lin(&m, &m.layers[0].ggt[Relation::R3.index()].residual, &h_v).map(gelu);
    assert_eq!(tape.value(out.video), &want);
}

#[test]
fn tag_without_r1_still_aggregates() {
    let (corpus, graph) = three_node();
    assert!(graph.edges(Relation::R1).is_empty());
    let m = model_for(&graph, 4, 1, ModelFlags::default(), 4);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let mut tape = Tape::new();
    let out = m.forward(&mut tape, &full_graph_sample(&graph, 1), &feats, None).unwrap();
    assert_eq!(tape.shape(out.tag), (1, 4));
    assert_eq!(out.adv.len(), 1);
    assert!(tape.value(out.tag).data().iter().all(|x| x.is_finite()));
}

#[test]
fn symmetric_messages_collapse_the_aggregator() {
    let (corpus, graph) = three_node();
    let mut m = model_for(&graph, 4, 1, ModelFlags::default(), 6);
    let p = m.layers[0].clone();
    let AggregatorParams::Aan { unique_r1, unique_r2, .. } = p.aggregator else {
        unreachable!()
    };
    let (w, b) = (m.store.get(unique_r1.w).clone(), m.store.get(unique_r1.b.unwrap()).clone());
    *m.store.get_mut(unique_r2.w) = w;
    *m.store.get_mut(unique_r2.b.unwrap()) = b;
    let r1 = &p.ggt[Relation::R1.index()];
    let r2 = &p.ggt[Relation::R2.index()];
    // make the r2 message equal to the r1 empty-neighborhood message
    let (pw, pb) = (m.store.get(r1.residual.w).clone(), m.store.get(r1.residual.b.unwrap()).clone());
    *m.store.get_mut(r2.residual.w) = pw;
    *m.store.get_mut(r2.residual.b.unwrap()) = pb;
    let graph = graph.without_relation(Relation::R2);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let mut tape = Tape::new();
    let out = m.forward(&mut tape, &full_graph_sample(&graph, 1), &feats, None).unwrap();
    let mut h_t = lin(&m, &m.tag_in, &feats.tag);
    h_t.add_assign(m.store.get(m.tag_embedding));
    let msg = lin(&m, &r1.residual, &h_t).map(gelu);
    let AggregatorParams::Aan { common, .. } = &m.layers[0].aggregator else {
        unreachable!()
    };
    let u = lin(&m, &unique_r1, &msg);
    let c = lin(&m, common, &msg);
    let want = u.zip_map(&c, |u, c| 0.5 * (u + c));
    for (a, b) in tape.value(out.tag).data().iter().zip(want.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

fn zero_discriminators(m: &mut RadarModel<f64>) {
    for l in 0..m.layers.len() {
        if let AggregatorParams::Aan { discriminator: Some(disc), .. } = m.layers[l].aggregator.clone() {
            for id in [disc.w, disc.b.unwrap()] {
                let s = m.store.get(id).shape();
                *m.store.get_mut(id) = Matrix::zeros(s.0, s.1);
            }
        }
    }
}

fn tag_targets(corpus: &Corpus, graph: &HeteroGraph) -> Matrix<f64> {
    let mut y = Matrix::zeros(graph.n_videos(), graph.n_tags());
    for v in &corpus.videos {
        if let Some(i) = graph.video_index(&v.id) {
            for t in &v.tags {
                y.set(i as usize, graph.tag_index(t).unwrap() as usize, 1.0);
            }
        }
    }
    y
}

#[test]
fn neutral_discriminator_gives_two_log_two_per_term() {
    let (corpus, graph) = toy(5, 20, 10, 6);
    let layers = 2;
    let mut m = model_for(&graph, 8, layers, ModelFlags::default(), 7);
    zero_discriminators(&mut m);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let mut tape = Tape::new();
    let out = m.forward(&mut tape, &full_graph_sample(&graph, layers), &feats, None).unwrap();
    let two_log_two = 2.0 * std::f64::consts::LN_2;
    for a in &out.adv {
        assert!((tape.scalar(a.l_u) - two_log_two).abs() < 1e-12);
        assert!((tape.scalar(a.l_c) - two_log_two).abs() < 1e-12);
    }
    let logits = tag_logits(&mut tape, out.video, out.tag);
    let bce = tape.bce_with_logits(logits, tag_targets(&corpus, &graph));
    let total = total_loss(&mut tape, bce, &out.adv, 0.0);
    let want = tape.scalar(bce) + layers as f64 * two_log_two;
    assert!((tape.scalar(total) - want).abs() < 1e-12);
}

#[test]
fn no_adv_loss_is_exactly_bce() {
    let (corpus, graph) = toy(6, 20, 10, 6);
    let flags = ModelFlags {
        no_adv: true,
        ..Default::default()
    };
    let m = model_for(&graph, 8, 2, flags, 8);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let mut tape = Tape::new();
    let out = m.forward(&mut tape, &full_graph_sample(&graph, 2), &feats, None).unwrap();
    assert!(out.adv.is_empty());
    let logits = tag_logits(&mut tape, out.video, out.tag);
    let bce = tape.bce_with_logits(logits, tag_targets(&corpus, &graph));
    let total = total_loss(&mut tape, bce, &out.adv, 0.5);
    assert_eq!(total, bce);
    assert!(m.store.names().iter().all(|n| !n.contains("discriminator")));
}

#[test]
fn conflicting_flags_are_rejected() {
    let flags = ModelFlags {
        no_adv: true,
        aggregator: Aggregator::Concat,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    assert!(RadarModel::<f64>::new(config(8, 2, flags), &mut rng).is_err());
    assert!(RadarModel::<f64>::new(config(8, 0, ModelFlags::default()), &mut rng).is_err());
    let mut c = config(8, 1, ModelFlags::default());
    c.heads = 3;
    assert!(RadarModel::<f64>::new(c, &mut rng).is_err());
}

#[test]
fn concat_aggregator_adds_one_projection_per_layer() {
    let d = 8;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let base_flags = ModelFlags {
        no_adv: true,
        ..Default::default()
    };
    let aan: RadarModel<f64> = RadarModel::new(config(d, 2, base_flags), &mut rng).unwrap();
    let concat: RadarModel<f64> = RadarModel::new(
        config(
            d,
            2,
            ModelFlags {
                aggregator: Aggregator::Concat,
                ..Default::default()
            },
        ),
        &mut rng,
    )
    .unwrap();
    let without_aggregator = |m: &RadarModel<f64>| {
        m.store
            .ids()
            .filter(|&id| !m.store.name(id).contains(".aan.") && !m.store.name(id).contains(".concat"))
            .map(|id| m.store.get(id).len())
            .sum::<usize>()
    };
    assert_eq!(without_aggregator(&aan), without_aggregator(&concat));
    assert_eq!(concat.n_params(), without_aggregator(&concat) + 2 * (2 * d * d + d));
}

#[test]
fn eval_forward_is_bit_identical() {
    let (corpus, graph) = toy(7, 20, 10, 6);
    let m = model_for(&graph, 8, 2, ModelFlags::default(), 9);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let run = || {
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &full_graph_sample(&graph, 2), &feats, None).unwrap();
        (tape.value(out.video).clone(), tape.value(out.tag).clone())
    };
    let (a, b) = (run(), run());
    assert!(a.0.data().iter().zip(b.0.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
    assert!(a.1.data().iter().zip(b.1.data()).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn sampled_forward_with_large_fanout_equals_full_graph() {
    let (corpus, graph) = toy(8, 40, 12, 8);
    let m = model_for(&graph, 8, 2, ModelFlags::default(), 10);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let mut tape = Tape::new();
    let full = m.forward(&mut tape, &full_graph_sample(&graph, 2), &feats, None).unwrap();
    let (fv, ft) = (tape.value(full.video).clone(), tape.value(full.tag).clone());
    let seeds = Frontier::new(vec![3, 17, 30], (0..graph.n_tags() as u32).collect());
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let sampled = crate::hetgraph::sample_neighbors(&graph, &seeds, 10_000, 2, &mut rng).unwrap();
    assert_eq!(sampled, full_neighborhood(&graph, &seeds, 2).unwrap());
    let mut tape = Tape::new();
    let out = m.forward(&mut tape, &sampled, &feats, None).unwrap();
    for (row, &v) in seeds.videos.iter().enumerate() {
        for (a, b) in tape.value(out.video).row(row).iter().zip(fv.row(v as usize)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
    for t in 0..graph.n_tags() {
        for (a, b) in tape.value(out.tag).row(t).iter().zip(ft.row(t)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn prediction_scores() {
    let v = Matrix::from_rows(&[vec![1.0f64, 0.0]]);
    let t = Matrix::from_rows(&[vec![0.0, 1.0], vec![1.0, 0.0]]);
    let s = predict_scores(&v, &t);
    assert_eq!(s.get(0, 0), 0.5);
    assert!((s.get(0, 1) - 0.7310585786300049).abs() < 1e-15);
    let big = predict_scores(&Matrix::from_rows(&[vec![3.0f64]]), &Matrix::from_rows(&[vec![-3.0], vec![3.0]]));
    assert!(big.data().iter().all(|&x| x > 0.0 && x <= 1.0));
}

fn attention_sums(tape: &Tape<f64>, rec: &AttentionRecord) -> Vec<f64> {
    let mut sums = vec![0.0; rec.n_segments];
    for (w, &s) in tape.value(rec.weights).data().iter().zip(rec.segments.iter()) {
        sums[s as usize] += w;
    }
    sums
}

#[test]
fn attention_is_normalized_per_relation_or_destination() {
    let (corpus, graph) = toy(9, 30, 8, 6);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    for mutual in [false, true] {
        let flags = ModelFlags {
            mutual_attention: mutual,
            ..Default::default()
        };
        let m = model_for(&graph, 8, 2, flags, 11);
        let mut tape = Tape::new();
        let out = m.forward(&mut tape, &full_graph_sample(&graph, 2), &feats, None).unwrap();
        for rec in &out.attention {
            assert_eq!(rec.relations.len() == 2, mutual && rec.relations.contains(&Relation::R1));
            let present: HashSet<u32> = rec.segments.iter().copied().collect();
            for (s, sum) in attention_sums(&tape, rec).into_iter().enumerate() {
                if present.contains(&(s as u32)) {
                    assert!((sum - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn multi_head_attention_runs_and_normalizes() {
    let (corpus, graph) = toy(10, 20, 6, 5);
    let mut cfg = config(8, 2, ModelFlags::default());
    cfg.heads = 2;
    cfg.n_tags = graph.n_tags();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let m: RadarModel<f64> = RadarModel::new(cfg, &mut rng).unwrap();
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let mut tape = Tape::new();
    let out = m.forward(&mut tape, &full_graph_sample(&graph, 2), &feats, None).unwrap();
    assert_eq!(tape.shape(out.tag), (graph.n_tags(), 8));
    assert!(out.attention.iter().any(|a| a.head == 1));
}

fn full_loss(m: &RadarModel<f64>, corpus: &Corpus, graph: &HeteroGraph, sample: &LayeredSample, lambda: f64, tape: &mut Tape<f64>) -> Var {
    let feats = NodeFeatures::from_corpus(corpus, graph).unwrap();
    let out = m.forward(tape, sample, &feats, None).unwrap();
    let logits = tag_logits(tape, out.video, out.tag);
    let bce = tape.bce_with_logits(logits, tag_targets(corpus, graph));
    total_loss(tape, bce, &out.adv, lambda)
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let (corpus, graph) = toy(12, 20, 10, 6);
    for aggregator in [Aggregator::Aan, Aggregator::Concat, Aggregator::Attention] {
        let flags = ModelFlags {
            aggregator,
            ..Default::default()
        };
        let mut m = model_for(&graph, 8, 2, flags, 12);
        m.grl_coefficient = -1.0;
        let sample = full_graph_sample(&graph, 2);
        let report = finite_diff_check(
            &m.store,
            |store, tape| {
                let mut mm = m.clone();
                mm.store = store.clone();
                full_loss(&mm, &corpus, &graph, &sample, 0.3, tape)
            },
            GradCheckOptions {
                max_entries_per_param: Some(6),
                ..Default::default()
            },
        )
        .unwrap();
        assert!(report.max_rel_err <= 1e-4, "{aggregator:?}: {report:?}");
    }
}

#[test]
fn common_projection_gradient_flips_with_lambda() {
    let (corpus, graph) = toy(13, 20, 10, 6);
    let m = model_for(&graph, 8, 2, ModelFlags::default(), 13);
    let sample = full_graph_sample(&graph, 2);
    let common_grad = |lambda: f64| {
        let mut tape = Tape::new();
        let loss = full_loss(&m, &corpus, &graph, &sample, lambda, &mut tape);
        let grads = tape.backward(loss);
        let AggregatorParams::Aan { common, .. } = &m.layers[0].aggregator else {
            unreachable!()
        };
        grads.for_store(&m.store)[common.w.index()].clone()
    };
    let base = common_grad(0.0);
    let plus = common_grad(0.25).zip_map(&base, |a, b| a - b);
    let minus = common_grad(-0.25).zip_map(&base, |a, b| a - b);
    assert!(plus.max_abs() > 1e-8);
    for (a, b) in plus.data().iter().zip(minus.data()) {
        assert!((a + b).abs() <= 1e-12 * (1.0 + a.abs()));
    }
}

#[test]
fn inductive_scores_match_full_recompute() {
    let (corpus, graph) = toy(14, 40, 10, 5);
    let m = model_for(&graph, 8, 2, ModelFlags::default(), 14);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let cache = m.compute_cache(&graph, &feats).unwrap();
    let before = cache.clone();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    for i in 0..5 {
        let rec = record(100 + i, i % 5, vec![], &mut rng);
        let ind = inductive_infer(&m, &graph, &cache, &rec).unwrap();
        let mut g2 = graph.clone();
        let idx = g2.insert_video(&rec).unwrap() as usize;
        assert_eq!(g2.full_inbound(idx as u32, Relation::R3).unwrap(), ind.sources.as_slice());
        let mut f2 = feats.clone();
        f2.push_video(&crate::corpus::aggregate_frame_features(&rec).unwrap()).unwrap();
        let full = m.compute_cache(&g2, &f2).unwrap();
        let want = predict_scores(&full.final_videos().slice_rows(idx, idx + 1), full.final_tags());
        for (a, b) in ind.scores.iter().zip(want.data()) {
            assert!((a - b).abs() <= 1e-9);
        }
        assert_eq!(cache, before);
    }
}

#[test]
fn model_and_cache_round_trip() {
    let (corpus, graph) = toy(8, 12, 5, 3);
    let model = model_for(&graph, 8, 2, ModelFlags::default(), 3);
    let feats = NodeFeatures::from_corpus(&corpus, &graph).unwrap();
    let cache = model.compute_cache(&graph, &feats).unwrap();
    let dir = tempfile::tempdir().unwrap();
    save_model(&model, dir.path(), Some(&cache)).unwrap();
    let (back, back_cache) = load_model::<f64>(dir.path()).unwrap();
    assert_eq!(back.store.values(), model.store.values());
    assert_eq!(back_cache.unwrap(), cache);
    assert!(load_model::<f32>(dir.path()).is_err());
}
