use std::collections::{BTreeMap, HashMap};

use crate::corpus::{Corpus, Split};
use crate::error::{RadarError, Result};

/// Smoothing added to both entropies in the `log(H(u)/H(v))` feature.
pub const ENTROPY_SMOOTHING: f64 = 1e-6;

/// Number of hand-crafted pair features.
pub const PAIR_FEATURE_DIM: usize = 8;

/// Tag occurrence and co-occurrence counts over a set of videos.
///
/// Probabilities are relative to `n_videos`: `p(u) = occ(u) / n`,
/// `p(u, v) = cooc(u, v) / n`, `p(u | v) = cooc(u, v) / occ(v)`.
#[derive(Clone, Debug)]
pub struct CoocStats {
    n_videos: u64,
    tags: Vec<String>,
    index: HashMap<String, usize>,
    occ: Vec<u64>,
    cooc: BTreeMap<(u32, u32), u64>,
    neighbors: Vec<Vec<(u32, u64)>>,
}

/// `p(u|v), p(v|u), H(u), H(v), PMI, PKL, log(p(u|v)/p(v|u)), log(H(u)/H(v))`
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PairFeatures(pub [f64; PAIR_FEATURE_DIM]);

impl PairFeatures {
    pub fn as_array(&self) -> &[f64; PAIR_FEATURE_DIM] {
        &self.0
    }
}

/// Counts over the training split, or over every video when the corpus has
/// not been split.
pub fn compute_cooc_stats(corpus: &Corpus) -> Result<CoocStats> {
    let tags: Vec<String> = corpus.vocab.iter().map(|e| e.tag.clone()).collect();
    CoocStats::from_tag_sets(
        tags,
        corpus
            .videos_in(Split::Train)
            .map(|v| v.tags.as_slice()),
    )
}

impl CoocStats {
    pub fn from_tag_sets<'a>(
        tags: Vec<String>,
        sets: impl IntoIterator<Item = &'a [String]>,
    ) -> Result<Self> {
        let index: HashMap<String, usize> =
            tags.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        let mut occ = vec![0u64; tags.len()];
        let mut cooc: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        let mut n_videos = 0u64;
        let mut ids = Vec::new();
        for set in sets {
            n_videos += 1;
            ids.clear();
            for t in set {
                let &i = index
                    .get(t)
                    .ok_or_else(|| RadarError::Invalid(format!("tag `{t}` missing from vocabulary")))?;
                ids.push(i as u32);
            }
            ids.sort_unstable();
            ids.dedup();
            for (k, &a) in ids.iter().enumerate() {
                occ[a as usize] += 1;
                for &b in &ids[k + 1..] {
                    *cooc.entry((a, b)).or_default() += 1;
                }
            }
        }
        if n_videos == 0 {
            return Err(RadarError::Invalid("cannot compute tag statistics of an empty corpus".into()));
        }
        let mut neighbors = vec![Vec::new(); tags.len()];
        for (&(a, b), &c) in &cooc {
            neighbors[a as usize].push((b, c));
            neighbors[b as usize].push((a, c));
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        Ok(Self {
            n_videos,
            tags,
            index,
            occ,
            cooc,
            neighbors,
        })
    }

    pub fn n_videos(&self) -> u64 {
        self.n_videos
    }

    pub fn n_tags(&self) -> usize {
        self.tags.len()
    }

    pub fn tags(&self) -> &[String] {
        &self.tags
    }

    pub fn tag(&self, i: usize) -> &str {
        &self.tags[i]
    }

    pub fn index_of(&self, tag: &str) -> Option<usize> {
        self.index.get(tag).copied()
    }

    pub fn occ(&self, u: usize) -> u64 {
        self.occ[u]
    }

    /// Co-occurrence count; symmetric, and 0 for pairs that never co-occur
    /// or for `u == v`.
    pub fn cooc(&self, u: usize, v: usize) -> u64 {
        let key = if u < v { (u as u32, v as u32) } else { (v as u32, u as u32) };
        self.cooc.get(&key).copied().unwrap_or(0)
    }

    /// Unordered co-occurring pairs `(u, v, count)` with `u < v`, in
    /// ascending order.
    pub fn pairs(&self) -> impl Iterator<Item = (usize, usize, u64)> + '_ {
        self.cooc
            .iter()
            .map(|(&(a, b), &c)| (a as usize, b as usize, c))
    }

    pub fn n_pairs(&self) -> usize {
        self.cooc.len()
    }

    pub fn neighbors(&self, u: usize) -> &[(u32, u64)] {
        &self.neighbors[u]
    }

    pub fn p(&self, u: usize) -> f64 {
        self.occ[u] as f64 / self.n_videos as f64
    }

    pub fn p_joint(&self, u: usize, v: usize) -> f64 {
        self.cooc(u, v) as f64 / self.n_videos as f64
    }

    fn require_cooc(&self, u: usize, v: usize) -> Result<u64> {
        match self.cooc(u, v) {
            0 => Err(RadarError::Precondition(format!(
                "tags `{}` and `{}` never co-occur",
                self.tags[u], self.tags[v]
            ))),
            c => Ok(c),
        }
    }

    /// `log(p(u,v) / (p(u) p(v)))`
    pub fn pmi(&self, u: usize, v: usize) -> Result<f64> {
        self.require_cooc(u, v)?;
        Ok(self.pmi_unchecked(u, v))
    }

    fn pmi_unchecked(&self, u: usize, v: usize) -> f64 {
        // count form: p(u,v)/(p(u)p(v)) = cooc·n / (occ(u)·occ(v))
        let num = self.cooc(u, v) as f64 * self.n_videos as f64;
        let den = self.occ[u] as f64 * self.occ[v] as f64;
        (num / den).ln()
    }

    /// `p(u,v) · PMI(u,v)`
    pub fn pkl(&self, u: usize, v: usize) -> Result<f64> {
        self.require_cooc(u, v)?;
        Ok(self.p_joint(u, v) * self.pmi_unchecked(u, v))
    }

    /// Tag transfer probability `p(u | v) = cooc(u, v) / occ(v)`; `p(u|u)`
    /// is 1.
    pub fn transfer_prob(&self, u: usize, v: usize) -> Result<f64> {
        if self.occ[v] == 0 {
            return Err(RadarError::Precondition(format!(
                "tag `{}` never occurs",
                self.tags[v]
            )));
        }
        if u == v {
            return Ok(1.0);
        }
        Ok(self.cooc(u, v) as f64 / self.occ[v] as f64)
    }

    /// `H(u) = −Σ_w p(u|w) log p(u|w)` over co-occurring `w ≠ u`.
    pub fn entropy(&self, u: usize) -> f64 {
        -self.neighbors[u]
            .iter()
            .map(|&(w, c)| {
                let p = c as f64 / self.occ[w as usize] as f64;
                p * p.ln()
            })
            .sum::<f64>()
    }

    pub fn entropies(&self) -> Vec<f64> {
        (0..self.tags.len()).map(|u| self.entropy(u)).collect()
    }

    /// Feature vector `k(u, v)` for "v is a subtopic of u".
    pub fn pair_features(&self, u: usize, v: usize) -> Result<PairFeatures> {
        self.require_cooc(u, v)?;
        Ok(self.pair_features_with(u, v, self.entropy(u), self.entropy(v)))
    }

    /// As [`pair_features`](Self::pair_features) with precomputed entropies.
    pub fn pair_features_with(&self, u: usize, v: usize, h_u: f64, h_v: f64) -> PairFeatures {
        let c = self.cooc(u, v) as f64;
        let p_u_given_v = c / self.occ[v] as f64;
        let p_v_given_u = c / self.occ[u] as f64;
        let pmi = self.pmi_unchecked(u, v);
        let pkl = self.p_joint(u, v) * pmi;
        PairFeatures([
            p_u_given_v,
            p_v_given_u,
            h_u,
            h_v,
            pmi,
            pkl,
            (p_u_given_v / p_v_given_u).ln(),
            ((h_u + ENTROPY_SMOOTHING) / (h_v + ENTROPY_SMOOTHING)).ln(),
        ])
    }
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// V1={A,B}, V2={A,B,C}, V3={B,C}, V4={D}
    pub(crate) fn c0() -> CoocStats {
        let sets: Vec<Vec<String>> = [vec!["A", "B"], vec!["A", "B", "C"], vec!["B", "C"], vec!["D"]]
            .iter()
            .map(|s| s.iter().map(|t| t.to_string()).collect())
            .collect();
        CoocStats::from_tag_sets(
            ["A", "B", "C", "D"].iter().map(|t| t.to_string()).collect(),
            sets.iter().map(Vec::as_slice),
        )
        .unwrap()
    }
}

#[cfg(test)]
mod tests {
    use super::tests_support::c0;
    use super::*;

    const A: usize = 0;
    const B: usize = 1;
    const C: usize = 2;
    const D: usize = 3;

    #[test]
    fn counts_over_reference_corpus() {
        let s = c0();
        assert_eq!(s.n_videos(), 4);
        assert_eq!(s.occ(B), 3);
        assert_eq!(s.cooc(A, B), 2);
        assert_eq!(s.cooc(B, A), 2);
        assert_eq!(s.cooc(A, D), 0);
        assert_eq!(s.n_pairs(), 3);
        for (u, v, c) in s.pairs() {
            assert!(c <= s.occ(u).min(s.occ(v)));
        }
    }

    #[test]
    fn single_video_single_tag() {
        let tags = vec!["A".to_string()];
        let s = CoocStats::from_tag_sets(tags.clone(), [tags.as_slice()]).unwrap();
        assert_eq!(s.occ(0), 1);
        assert_eq!(s.n_pairs(), 0);
        assert!(CoocStats::from_tag_sets(tags, std::iter::empty()).is_err());
    }

    #[test]
    fn pmi_and_pkl() {
        let s = c0();
        assert!(s.pmi(A, C).unwrap().abs() < 1e-15);
        assert!((s.pmi(A, B).unwrap() - (4.0f64 / 3.0).ln()).abs() < 1e-15);
        assert!((s.pmi(A, B).unwrap() - 0.28768).abs() < 1e-5);
        assert_eq!(s.pkl(A, C).unwrap(), 0.0);
        assert!((s.pkl(A, B).unwrap() - 0.14384).abs() < 1e-5);
        assert!(s.pmi(A, D).is_err());
        assert!(s.pkl(A, D).is_err());
        for (u, v, _) in s.pairs() {
            assert_eq!(s.pkl(u, v).unwrap(), s.p_joint(u, v) * s.pmi(u, v).unwrap());
            assert_eq!(s.pmi(u, v).unwrap(), s.pmi(v, u).unwrap());
            assert_eq!(s.pkl(u, v).unwrap(), s.pkl(v, u).unwrap());
        }
    }

    #[test]
    fn transfer_probabilities() {
        let s = c0();
        assert_eq!(s.transfer_prob(B, C).unwrap(), 1.0);
        assert_eq!(s.transfer_prob(A, C).unwrap(), 0.5);
        assert_ne!(s.transfer_prob(C, B).unwrap(), s.transfer_prob(B, C).unwrap());
        for u in 0..4 {
            assert_eq!(s.transfer_prob(u, u).unwrap(), 1.0);
        }
        let tags = vec!["A".to_string(), "Z".to_string()];
        let only_a = vec!["A".to_string()];
        let s = CoocStats::from_tag_sets(tags, [only_a.as_slice()]).unwrap();
        assert!(s.transfer_prob(0, 1).is_err());
    }

    #[test]
    fn entropies() {
        let s = c0();
        assert!(s.entropy(B).abs() < 1e-15);
        let expected = -(2.0f64 / 3.0) * (2.0f64 / 3.0).ln() - 0.5 * 0.5f64.ln();
        assert!((s.entropy(A) - expected).abs() < 1e-15);
        assert!((s.entropy(A) - 0.61688).abs() < 1e-5);
        assert_eq!(s.entropy(D), 0.0);
    }

    #[test]
    fn pair_feature_layout() {
        let s = c0();
        let k = s.pair_features(A, B).unwrap();
        assert_eq!(k.as_array().len(), PAIR_FEATURE_DIM);
        assert!((k.0[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!(k.0.iter().all(|x| x.is_finite()));
        assert!(s.pair_features(A, D).is_err());

        // two tags that always appear together are symmetric
        let sets: Vec<Vec<String>> = vec![vec!["x".into(), "y".into()], vec!["x".into(), "y".into(), "z".into()]];
        let s = CoocStats::from_tag_sets(
            vec!["x".into(), "y".into(), "z".into()],
            sets.iter().map(Vec::as_slice),
        )
        .unwrap();
        let k = s.pair_features(0, 1).unwrap();
        assert_eq!(k.0[6], 0.0);
    }
}
