use std::sync::Arc;

use super::forward::{AdvTerms, AttentionRecord};
use super::{type_slot, AggregatorParams, GgtParams, LayerParams, RadarModel};
use crate::autodiff::{Matrix, Tape, Var};
use crate::hetgraph::{Block, NodeType, Relation};
use crate::real::Real;

/// Per-layer bookkeeping collected during a forward pass.
pub(crate) struct LayerSinks<'a> {
    pub attention: &'a mut Vec<AttentionRecord>,
    pub adv: &'a mut Vec<AdvTerms>,
}

/// Attention logits and projected values of one relation's edges, per head.
struct EdgeTerms {
    relation: Relation,
    dst: Arc<[u32]>,
    logits: Vec<Var>,
    values: Vec<Var>,
}

impl<T: Real> RadarModel<T> {
    /// One propagation step. `h_video` and `h_tag` hold representations of
    /// the lower frontier; the first `n_videos` / `n_tags` rows are the
    /// destinations. Returns the destinations' new representations.
    #[allow(clippy::too_many_arguments)]
    pub(crate) fn layer_forward(
        &self,
        l: usize,
        tape: &mut Tape<T>,
        h_video: Var,
        h_tag: Var,
        n_videos: usize,
        n_tags: usize,
        blocks: &[Block; 3],
        sinks: LayerSinks<'_>,
    ) -> (Var, Var) {
        let p = &self.layers[l];
        let store = &self.store;
        let lower = [h_video, h_tag];
        let targets = [tape.slice_rows(h_video, 0, n_videos), tape.slice_rows(h_tag, 0, n_tags)];
        let n_dst = [n_videos, n_tags];

        let mut q: [Option<Var>; 2] = [None, None];
        let mut kv: [Option<(Var, Var)>; 2] = [None, None];
        let mut terms: Vec<EdgeTerms> = Vec::new();
        for r in Relation::ALL {
            let b = &blocks[r.index()];
            if b.is_empty() {
                continue;
            }
            let (ts, ss) = (type_slot(r.target_type()), type_slot(r.source_type()));
            let q_t = *q[ts].get_or_insert_with(|| p.q[ts].apply(tape, store, targets[ts]));
            let (k_s, v_s) = *kv[ss].get_or_insert_with(|| {
                let k = p.k[ss].apply(tape, store, lower[ss]);
                let v = p.v[ss].apply(tape, store, lower[ss]);
                (k, v)
            });
            terms.push(self.edge_terms(tape, &p.ggt[r.index()], b, q_t, k_s, v_s));
        }

        let mut messages: [Option<Var>; 3] = [None, None, None];
        let mutual = self.config.flags.mutual_attention;
        let tag_terms: Vec<usize> = (0..terms.len())
            .filter(|&i| terms[i].relation.target_type() == NodeType::Tag)
            .collect();
        let mut alphas: Vec<Vec<Var>> = vec![Vec::new(); terms.len()];
        let joint = mutual && tag_terms.len() == 2;
        if joint {
            // one softmax per destination tag over the union of r1 and r2
            let (a, b) = (tag_terms[0], tag_terms[1]);
            let segments: Arc<[u32]> = terms[a].dst.iter().chain(terms[b].dst.iter()).copied().collect();
            let split = terms[a].dst.len();
            let total = segments.len();
            for h in 0..self.config.heads {
                let logits = tape.concat_rows(&[terms[a].logits[h], terms[b].logits[h]]);
                let w = tape.segment_softmax(logits, segments.clone(), n_tags);
                sinks.attention.push(AttentionRecord {
                    layer: l,
                    head: h,
                    relations: vec![terms[a].relation, terms[b].relation],
                    weights: w,
                    segments: segments.clone(),
                    n_segments: n_tags,
                });
                alphas[a].push(tape.slice_rows(w, 0, split));
                alphas[b].push(tape.slice_rows(w, split, total));
            }
        }
        for (i, t) in terms.iter().enumerate() {
            if joint && tag_terms.contains(&i) {
                continue;
            }
            let n = n_dst[type_slot(t.relation.target_type())];
            for h in 0..self.config.heads {
                let w = tape.segment_softmax(t.logits[h], t.dst.clone(), n);
                sinks.attention.push(AttentionRecord {
                    layer: l,
                    head: h,
                    relations: vec![t.relation],
                    weights: w,
                    segments: t.dst.clone(),
                    n_segments: n,
                });
                alphas[i].push(w);
            }
        }
        for (t, alpha) in terms.iter().zip(&alphas) {
            let n = n_dst[type_slot(t.relation.target_type())];
            let heads: Vec<Var> = t
                .values
                .iter()
                .zip(alpha)
                .map(|(&v, &a)| {
                    let weighted = tape.mul_col(v, a);
                    tape.scatter_add(weighted, t.dst.clone(), n)
                })
                .collect();
            let o = if heads.len() == 1 { heads[0] } else { tape.concat_cols(&heads) };
            messages[t.relation.index()] = Some(o);
        }

        let m = Relation::ALL.map(|r| {
            let ts = type_slot(r.target_type());
            let dst = &blocks[r.index()].dst;
            self.gated(tape, &p.ggt[r.index()], targets[ts], messages[r.index()], dst, n_dst[ts])
        });
        let video_out = m[Relation::R3.index()];
        let tag_out = self.aggregate(tape, p, m[Relation::R1.index()], m[Relation::R2.index()], n_tags, sinks.adv);
        (video_out, tag_out)
    }

    fn edge_terms(&self, tape: &mut Tape<T>, g: &GgtParams, b: &Block, q_t: Var, k_s: Var, v_s: Var) -> EdgeTerms {
        let store = &self.store;
        let dh = self.config.head_dim();
        let scale = T::of(1.0 / (dh as f64).sqrt());
        let q_e = tape.gather(q_t, b.dst.clone());
        let k_e = tape.gather(k_s, b.src.clone());
        let v_e = tape.gather(v_s, b.src.clone());
        let mut logits = Vec::with_capacity(self.config.heads);
        let mut values = Vec::with_capacity(self.config.heads);
        for h in 0..self.config.heads {
            let (qh, kh, vh) = if self.config.heads == 1 {
                (q_e, k_e, v_e)
            } else {
                let (a, z) = (h * dh, (h + 1) * dh);
                (tape.slice_cols(q_e, a, z), tape.slice_cols(k_e, a, z), tape.slice_cols(v_e, a, z))
            };
            let w_att = tape.param(store, g.w_att[h]);
            let w_msg = tape.param(store, g.w_msg[h]);
            let qw = tape.matmul(qh, w_att);
            let raw = tape.row_dot(qw, kh);
            logits.push(tape.scale(raw, scale));
            values.push(tape.matmul(vh, w_msg));
        }
        EdgeTerms {
            relation: b.relation,
            dst: b.dst.clone(),
            logits,
            values,
        }
    }

    /// `z ⊙ o + (1 − z) ⊙ GELU(P h + b)` for destinations with at least one
    /// inbound edge, the residual branch alone otherwise.
    fn gated(&self, tape: &mut Tape<T>, g: &GgtParams, h_t: Var, o: Option<Var>, dst: &[u32], n: usize) -> Var {
        let store = &self.store;
        let pre = g.residual.apply(tape, store, h_t);
        let res = tape.gelu(pre);
        let Some(o) = o else {
            return res;
        };
        if self.config.flags.no_gated_residual {
            return tape.add(o, res);
        }
        let a = g.gate_a.apply(tape, store, h_t);
        let b = g.gate_b.apply(tape, store, o);
        let zs = tape.add(a, b);
        let z = tape.sigmoid(zs);
        let diff = tape.sub(o, res);
        let gated = tape.mul(z, diff);
        let mut has = Matrix::zeros(n, 1);
        for &d in dst {
            has.set(d as usize, 0, T::one());
        }
        let has = tape.constant(has);
        let masked = tape.mul_col(gated, has);
        tape.add(res, masked)
    }

    fn aggregate(&self, tape: &mut Tape<T>, p: &LayerParams, m1: Var, m2: Var, n_tags: usize, adv: &mut Vec<AdvTerms>) -> Var {
        let store = &self.store;
        match &p.aggregator {
            AggregatorParams::Aan {
                common,
                unique_r1,
                unique_r2,
                discriminator,
            } => {
                let c1 = common.apply(tape, store, m1);
                let c2 = common.apply(tape, store, m2);
                let u1 = unique_r1.apply(tape, store, m1);
                let u2 = unique_r2.apply(tape, store, m2);
                if let (Some(disc), true) = (discriminator, n_tags > 0) {
                    let ones = Matrix::filled(n_tags, 1, T::one());
                    let zeros = Matrix::zeros(n_tags, 1);
                    let bce_pair = |tape: &mut Tape<T>, a: Var, b: Var| {
                        let da = disc.apply(tape, store, a);
                        let db = disc.apply(tape, store, b);
                        let la = tape.bce_with_logits(da, ones.clone());
                        let lb = tape.bce_with_logits(db, zeros.clone());
                        tape.add(la, lb)
                    };
                    let l_u = bce_pair(tape, u1, u2);
                    let k = T::of(self.grl_coefficient);
                    let r1 = tape.grad_reverse(c1, k);
                    let r2 = tape.grad_reverse(c2, k);
                    let l_c = bce_pair(tape, r1, r2);
                    adv.push(AdvTerms { l_u, l_c });
                }
                let u = tape.max(u1, u2);
                let c = tape.mean2(c1, c2);
                let s = tape.add(u, c);
                tape.scale(s, T::of(0.5))
            }
            AggregatorParams::Concat { proj } => {
                let x = tape.concat_cols(&[m1, m2]);
                proj.apply(tape, store, x)
            }
            AggregatorParams::Attention { proj, query } => {
                if n_tags == 0 {
                    return m1;
                }
                let q = tape.param(store, *query);
                let score = |tape: &mut Tape<T>, m: Var| {
                    let e = proj.apply(tape, store, m);
                    let e = tape.tanh(e);
                    tape.matmul(e, q)
                };
                let s1 = score(tape, m1);
                let s2 = score(tape, m2);
                let logits = tape.concat_rows(&[s1, s2]);
                let segments: Arc<[u32]> = (0..n_tags as u32).chain(0..n_tags as u32).collect();
                let beta = tape.segment_softmax(logits, segments, n_tags);
                let b1 = tape.slice_rows(beta, 0, n_tags);
                let b2 = tape.slice_rows(beta, n_tags, 2 * n_tags);
                let w1 = tape.mul_col(m1, b1);
                let w2 = tape.mul_col(m2, b2);
                tape.add(w1, w2)
            }
        }
    }
}
