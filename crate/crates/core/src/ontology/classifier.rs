use serde::{Deserialize, Serialize};

use super::stats::{CoocStats, PairFeatures, PAIR_FEATURE_DIM};
use crate::autodiff::sigmoid;
use crate::error::{RadarError, Result};

/// Full-batch gradient descent settings for the subtopic classifier.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ClassifierOptions {
    pub iterations: usize,
    pub learning_rate: f64,
    pub l2: f64,
}

impl Default for ClassifierOptions {
    fn default() -> Self {
        Self {
            iterations: 3000,
            learning_rate: 0.5,
            l2: 1e-4,
        }
    }
}

/// Logistic regression over standardized pair features.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubtopicClassifier {
    pub weights: [f64; PAIR_FEATURE_DIM],
    pub bias: f64,
    pub mean: [f64; PAIR_FEATURE_DIM],
    pub std: [f64; PAIR_FEATURE_DIM],
}

/// A directed pair scored as "`child` is a subtopic of `parent`".
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoredPair {
    pub parent: usize,
    pub child: usize,
    pub score: f64,
}

impl SubtopicClassifier {
    /// Fits weights from zero by gradient descent on the mean log loss.
    /// The optimization is deterministic, so no seed is required.
    pub fn train(
        features: &[PairFeatures],
        labels: &[bool],
        opts: &ClassifierOptions,
    ) -> Result<Self> {
        if features.len() != labels.len() {
            return Err(RadarError::DimensionMismatch {
                expected: features.len(),
                found: labels.len(),
                context: "subtopic labels".into(),
            });
        }
        if features.len() < 2 {
            return Err(RadarError::Invalid("need at least 2 labeled pairs".into()));
        }
        let positives = labels.iter().filter(|&&l| l).count();
        if positives == 0 || positives == labels.len() {
            return Err(RadarError::Invalid(
                "labeled pairs must contain both classes".into(),
            ));
        }
        if let Some(bad) = features.iter().find(|f| f.0.iter().any(|x| !x.is_finite())) {
            return Err(RadarError::Invalid(format!("non-finite pair features {:?}", bad.0)));
        }

        let n = features.len() as f64;
        let mut mean = [0.0; PAIR_FEATURE_DIM];
        let mut std = [0.0; PAIR_FEATURE_DIM];
        for f in features {
            for j in 0..PAIR_FEATURE_DIM {
                mean[j] += f.0[j] / n;
            }
        }
        for f in features {
            for j in 0..PAIR_FEATURE_DIM {
                std[j] += (f.0[j] - mean[j]).powi(2) / n;
            }
        }
        for s in &mut std {
            *s = if *s > 1e-24 { s.sqrt() } else { 1.0 };
        }

        let mut model = Self {
            weights: [0.0; PAIR_FEATURE_DIM],
            bias: 0.0,
            mean,
            std,
        };
        let z: Vec<[f64; PAIR_FEATURE_DIM]> = features.iter().map(|f| model.standardize(f)).collect();
        let y: Vec<f64> = labels.iter().map(|&l| if l { 1.0 } else { 0.0 }).collect();
        for _ in 0..opts.iterations {
            let mut gw = [0.0; PAIR_FEATURE_DIM];
            let mut gb = 0.0;
            for (zi, &yi) in z.iter().zip(&y) {
                let err = sigmoid(model.logit_standardized(zi)) - yi;
                for j in 0..PAIR_FEATURE_DIM {
                    gw[j] += err * zi[j] / n;
                }
                gb += err / n;
            }
            for j in 0..PAIR_FEATURE_DIM {
                model.weights[j] -= opts.learning_rate * (gw[j] + opts.l2 * model.weights[j]);
            }
            model.bias -= opts.learning_rate * gb;
        }
        Ok(model)
    }

    pub fn standardize(&self, f: &PairFeatures) -> [f64; PAIR_FEATURE_DIM] {
        let mut z = [0.0; PAIR_FEATURE_DIM];
        for j in 0..PAIR_FEATURE_DIM {
            z[j] = (f.0[j] - self.mean[j]) / self.std[j];
        }
        z
    }

    pub fn logit_standardized(&self, z: &[f64; PAIR_FEATURE_DIM]) -> f64 {
        self.bias + z.iter().zip(&self.weights).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn logit(&self, f: &PairFeatures) -> f64 {
        self.logit_standardized(&self.standardize(f))
    }

    /// Confidence `r̂ ∈ (0, 1)`.
    pub fn score(&self, f: &PairFeatures) -> f64 {
        sigmoid(self.logit(f))
    }
}

/// Scores both orientations of every co-occurring pair.
pub fn score_pairs(classifier: &SubtopicClassifier, stats: &CoocStats) -> Vec<ScoredPair> {
    let h = stats.entropies();
    let mut out = Vec::with_capacity(2 * stats.n_pairs());
    for (a, b, _) in stats.pairs() {
        for (u, v) in [(a, b), (b, a)] {
            let f = stats.pair_features_with(u, v, h[u], h[v]);
            out.push(ScoredPair {
                parent: u,
                child: v,
                score: classifier.score(&f),
            });
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn feat(h_u: f64, h_v: f64) -> PairFeatures {
        let mut f = [0.0; PAIR_FEATURE_DIM];
        f[2] = h_u;
        f[3] = h_v;
        PairFeatures(f)
    }

    #[test]
    fn separable_set_is_fit_exactly() {
        let mut features = Vec::new();
        let mut labels = Vec::new();
        for i in 0..20 {
            for j in 0..20 {
                if i == j {
                    continue;
                }
                let (hu, hv) = (i as f64 * 0.1, j as f64 * 0.07 + 0.03);
                if (hu - hv).abs() < 0.05 {
                    continue;
                }
                features.push(feat(hu, hv));
                labels.push(hu > hv);
            }
        }
        let clf = SubtopicClassifier::train(&features, &labels, &ClassifierOptions::default()).unwrap();
        let correct = features
            .iter()
            .zip(&labels)
            .filter(|(f, &l)| (clf.score(f) > 0.5) == l)
            .count();
        assert_eq!(correct, labels.len());
    }

    #[test]
    fn degenerate_features_give_base_rate() {
        let features = vec![PairFeatures([0.0; PAIR_FEATURE_DIM]); 3];
        let clf = SubtopicClassifier::train(&features, &[true, false, true], &ClassifierOptions::default()).unwrap();
        assert_eq!(clf.weights, [0.0; PAIR_FEATURE_DIM]);
        let s = clf.score(&features[0]);
        assert_eq!(s, sigmoid(clf.bias));
        assert!((s - 2.0 / 3.0).abs() < 1e-6);
    }

    #[test]
    fn rejects_bad_label_sets() {
        let f = vec![feat(1.0, 0.0); 3];
        let opts = ClassifierOptions::default();
        assert!(SubtopicClassifier::train(&f, &[true, true, true], &opts).is_err());
        assert!(SubtopicClassifier::train(&f[..1], &[true], &opts).is_err());
        assert!(SubtopicClassifier::train(&f, &[true, false], &opts).is_err());
    }

    #[test]
    fn scores_lie_in_open_interval_and_follow_logit() {
        let features: Vec<_> = (0..10).map(|i| feat(i as f64, 5.0)).collect();
        let labels: Vec<_> = (0..10).map(|i| i >= 5).collect();
        let clf = SubtopicClassifier::train(&features, &labels, &ClassifierOptions::default()).unwrap();
        let mut pairs: Vec<(f64, f64)> = features.iter().map(|f| (clf.logit(f), clf.score(f))).collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        for w in pairs.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
        assert!(pairs.iter().all(|&(_, s)| s > 0.0 && s < 1.0));
    }

    #[test]
    fn ranking_survives_feature_rescaling() {
        let features: Vec<_> = (0..30)
            .map(|i| feat((i % 7) as f64 * 0.3, (i % 5) as f64 * 0.2 + 0.05))
            .collect();
        let labels: Vec<_> = features.iter().map(|f| f.0[2] > f.0[3]).collect();
        let opts = ClassifierOptions::default();
        let a = SubtopicClassifier::train(&features, &labels, &opts).unwrap();
        let scaled: Vec<_> = features
            .iter()
            .map(|f| {
                let mut g = f.0;
                for (j, x) in g.iter_mut().enumerate() {
                    *x = *x * (j as f64 + 2.0) + 3.0;
                }
                PairFeatures(g)
            })
            .collect();
        let b = SubtopicClassifier::train(&scaled, &labels, &opts).unwrap();
        let rank = |clf: &SubtopicClassifier, fs: &[PairFeatures]| {
            let mut idx: Vec<usize> = (0..fs.len()).collect();
            idx.sort_by(|&i, &j| clf.logit(&fs[i]).total_cmp(&clf.logit(&fs[j])).then(i.cmp(&j)));
            idx.iter().map(|&i| labels[i]).collect::<Vec<_>>()
        };
        assert_eq!(rank(&a, &features), rank(&b, &scaled));
    }

    #[test]
    fn both_orientations_are_scored() {
        let stats = super::super::stats::tests_support::c0();
        let features = vec![
            stats.pair_features(1, 0).unwrap(),
            stats.pair_features(0, 1).unwrap(),
            stats.pair_features(1, 2).unwrap(),
            stats.pair_features(2, 1).unwrap(),
        ];
        let clf =
            SubtopicClassifier::train(&features, &[true, false, true, false], &ClassifierOptions::default())
                .unwrap();
        let scored = score_pairs(&clf, &stats);
        assert_eq!(scored.len(), 2 * stats.n_pairs());
        assert!(scored.iter().all(|p| p.score > 0.0 && p.score < 1.0));
    }
}
