//! Annotated videos, follow edges and the tag vocabulary.
//!
//! On disk a corpus is a directory holding three JSON-lines files:
//! `videos.jsonl`, `follows.jsonl` and `tags.jsonl`.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{RadarError, Result};

pub const VIDEOS_FILE: &str = "videos.jsonl";
pub const FOLLOWS_FILE: &str = "follows.jsonl";
pub const TAGS_FILE: &str = "tags.jsonl";

/// Minimum number of tags a training-split video needs to be kept.
pub const MIN_TRAIN_TAGS: usize = 2;

/// Raw visual features of a video.
#[derive(Clone, Debug, PartialEq)]
pub enum FrameFeatures {
    Frames(Vec<Vec<f32>>),
    Aggregated(Vec<f32>),
}

impl FrameFeatures {
    pub fn dim(&self) -> Option<usize> {
        match self {
            FrameFeatures::Frames(frames) => frames.first().map(Vec::len),
            FrameFeatures::Aggregated(v) => Some(v.len()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVideo", into = "RawVideo")]
pub struct VideoRecord {
    pub id: String,
    pub user_id: String,
    pub timestamp: i64,
    pub tags: Vec<String>,
    pub features: FrameFeatures,
}

#[derive(Serialize, Deserialize)]
struct RawVideo {
    id: String,
    user_id: String,
    timestamp: i64,
    tags: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frames: Option<Vec<Vec<f32>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    feature: Option<Vec<f32>>,
}

impl TryFrom<RawVideo> for VideoRecord {
    type Error = String;

    fn try_from(raw: RawVideo) -> std::result::Result<Self, String> {
        let features = match (raw.frames, raw.feature) {
            (Some(frames), None) => FrameFeatures::Frames(frames),
            (None, Some(feature)) => FrameFeatures::Aggregated(feature),
            (Some(_), Some(_)) => return Err("both `frames` and `feature` given".into()),
            (None, None) => return Err("missing `frames` or `feature`".into()),
        };
        Ok(VideoRecord {
            id: raw.id,
            user_id: raw.user_id,
            timestamp: raw.timestamp,
            tags: raw.tags,
            features,
        })
    }
}

impl From<VideoRecord> for RawVideo {
    fn from(v: VideoRecord) -> Self {
        let (frames, feature) = match v.features {
            FrameFeatures::Frames(f) => (Some(f), None),
            FrameFeatures::Aggregated(f) => (None, Some(f)),
        };
        RawVideo {
            id: v.id,
            user_id: v.user_id,
            timestamp: v.timestamp,
            tags: v.tags,
            frames,
            feature,
        }
    }
}

impl VideoRecord {
    /// `(timestamp, id)`: the total order used to decide which of two videos
    /// is older.
    pub fn age_key(&self) -> (i64, &str) {
        (self.timestamp, &self.id)
    }
}

/// `follower` follows `followee`; equivalently `followee` is followed by
/// `follower`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FollowEdge {
    pub follower: String,
    pub followee: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TagVocabEntry {
    pub tag: String,
    #[serde(rename = "embedding")]
    pub word_embedding: Vec<f32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validate,
    Test,
}

impl std::str::FromStr for Split {
    type Err = RadarError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "validate" | "val" | "validation" => Ok(Split::Validate),
            "test" => Ok(Split::Test),
            other => Err(RadarError::Invalid(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Corpus {
    pub videos: Vec<VideoRecord>,
    pub follows: Vec<FollowEdge>,
    pub vocab: Vec<TagVocabEntry>,
    /// One entry per video once [`split_corpus`] has run.
    pub splits: Option<Vec<Split>>,
}

impl Corpus {
    /// Checks every invariant: unique ids, known tags, constant feature and
    /// embedding dimensions, and well-formed follow edges.
    pub fn validate(&self) -> Result<()> {
        let mut tags = HashSet::new();
        let mut emb_dim = None;
        for entry in &self.vocab {
            if !tags.insert(entry.tag.as_str()) {
                return Err(RadarError::DuplicateId(entry.tag.clone()));
            }
            check_dim(&mut emb_dim, entry.word_embedding.len(), || {
                format!("embedding of tag `{}`", entry.tag)
            })?;
        }
        let mut ids = HashSet::new();
        let mut feat_dim = None;
        for v in &self.videos {
            if !ids.insert(v.id.as_str()) {
                return Err(RadarError::DuplicateId(v.id.clone()));
            }
            let mut seen = HashSet::new();
            for t in &v.tags {
                if !tags.contains(t.as_str()) {
                    return Err(RadarError::UnknownTag {
                        video: v.id.clone(),
                        tag: t.clone(),
                    });
                }
                if !seen.insert(t.as_str()) {
                    return Err(RadarError::Invalid(format!(
                        "video `{}` lists tag `{t}` twice",
                        v.id
                    )));
                }
            }
            match &v.features {
                FrameFeatures::Frames(frames) => {
                    if frames.is_empty() {
                        return Err(RadarError::Invalid(format!(
                            "video `{}` has an empty frame sequence",
                            v.id
                        )));
                    }
                    for f in frames {
                        check_dim(&mut feat_dim, f.len(), || format!("frame of video `{}`", v.id))?;
                    }
                }
                FrameFeatures::Aggregated(f) => {
                    check_dim(&mut feat_dim, f.len(), || format!("feature of video `{}`", v.id))?;
                }
            }
        }
        let mut pairs = HashSet::new();
        for f in &self.follows {
            if f.follower == f.followee {
                return Err(RadarError::Invalid(format!("user `{}` follows itself", f.follower)));
            }
            if !pairs.insert((f.follower.as_str(), f.followee.as_str())) {
                return Err(RadarError::DuplicateId(format!(
                    "follow {} -> {}",
                    f.follower, f.followee
                )));
            }
        }
        if let Some(splits) = &self.splits {
            if splits.len() != self.videos.len() {
                return Err(RadarError::Invalid("split assignment length".into()));
            }
        }
        Ok(())
    }

    pub fn feature_dim(&self) -> usize {
        self.videos
            .iter()
            .find_map(|v| v.features.dim())
            .unwrap_or(0)
    }

    pub fn embedding_dim(&self) -> usize {
        self.vocab.first().map_or(0, |e| e.word_embedding.len())
    }

    pub fn split_of(&self, i: usize) -> Option<Split> {
        self.splits.as_ref().map(|s| s[i])
    }

    /// Indices of videos in `split`; every video when no split is assigned.
    pub fn indices_in(&self, split: Split) -> Vec<usize> {
        match &self.splits {
            Some(s) => (0..self.videos.len()).filter(|&i| s[i] == split).collect(),
            None => (0..self.videos.len()).collect(),
        }
    }

    pub fn videos_in(&self, split: Split) -> impl Iterator<Item = &VideoRecord> {
        self.indices_in(split).into_iter().map(move |i| &self.videos[i])
    }

    /// Drops training-split videos with fewer than [`MIN_TRAIN_TAGS`] tags.
    /// Validation and test videos are left untouched. Returns how many were
    /// dropped.
    pub fn filter_training_min_tags(&mut self) -> usize {
        let Some(splits) = self.splits.take() else {
            return 0;
        };
        let before = self.videos.len();
        let (videos, splits): (Vec<_>, Vec<_>) = std::mem::take(&mut self.videos)
            .into_iter()
            .zip(splits)
            .filter(|(v, s)| *s != Split::Train || v.tags.len() >= MIN_TRAIN_TAGS)
            .unzip();
        self.videos = videos;
        self.splits = Some(splits);
        before - self.videos.len()
    }

    /// A corpus holding only the videos of `split`, without split labels.
    pub fn subset(&self, split: Split) -> Corpus {
        Corpus {
            videos: self.videos_in(split).cloned().collect(),
            follows: self.follows.clone(),
            vocab: self.vocab.clone(),
            splits: None,
        }
    }

    pub fn vocab_index(&self) -> HashMap<&str, usize> {
        self.vocab
            .iter()
            .enumerate()
            .map(|(i, e)| (e.tag.as_str(), i))
            .collect()
    }
}

fn check_dim(slot: &mut Option<usize>, found: usize, context: impl Fn() -> String) -> Result<()> {
    match *slot {
        None => {
            *slot = Some(found);
            Ok(())
        }
        Some(expected) if expected == found => Ok(()),
        Some(expected) => Err(RadarError::DimensionMismatch {
            expected,
            found,
            context: context(),
        }),
    }
}

/// Element-wise mean over frames; an aggregated vector is returned as is.
pub fn aggregate_frame_features(record: &VideoRecord) -> Result<Vec<f32>> {
    match &record.features {
        FrameFeatures::Aggregated(v) => Ok(v.clone()),
        FrameFeatures::Frames(frames) => {
            let first = frames.first().ok_or_else(|| {
                RadarError::Invalid(format!("video `{}` has an empty frame sequence", record.id))
            })?;
            let dim = first.len();
            if let Some(bad) = frames.iter().find(|f| f.len() != dim) {
                return Err(RadarError::DimensionMismatch {
                    expected: dim,
                    found: bad.len(),
                    context: format!("frame of video `{}`", record.id),
                });
            }
            // sorted f64 accumulation makes the mean independent of frame order
            let mut column = Vec::with_capacity(frames.len());
            let mut acc = vec![0f64; dim];
            for (j, a) in acc.iter_mut().enumerate() {
                column.clear();
                column.extend(frames.iter().map(|f| f[j] as f64));
                column.sort_by(f64::total_cmp);
                *a = column.iter().sum();
            }
            let n = frames.len() as f64;
            Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
        }
    }
}

/// Assigns every video to train / validate / test.
///
/// Counts follow the largest-remainder rule so that they sum to the number of
/// videos. With `temporal` the oldest videos go to train and the newest to
/// test; otherwise assignment is a seeded shuffle.
pub fn split_corpus(mut corpus: Corpus, fractions: [f64; 3], seed: u64, temporal: bool) -> Result<Corpus> {
    if fractions.iter().any(|&f| !(f > 0.0) || !f.is_finite())
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(RadarError::Invalid(format!(
            "split fractions must be positive and sum to 1, got {fractions:?}"
        )));
    }
    let n = corpus.videos.len();
    let counts = apportion(n, &fractions);
    let mut order: Vec<usize> = (0..n).collect();
    if temporal {
        order.sort_by(|&a, &b| corpus.videos[a].age_key().cmp(&corpus.videos[b].age_key()));
    } else {
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    }
    let mut splits = vec![Split::Train; n];
    for (pos, &i) in order.iter().enumerate() {
        splits[i] = if pos < counts[0] {
            Split::Train
        } else if pos < counts[0] + counts[1] {
            Split::Validate
        } else {
            Split::Test
        };
    }
    corpus.splits = Some(splits);
    Ok(corpus)
}

fn apportion(n: usize, fractions: &[f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = fractions.iter().map(|f| f * n as f64).collect();
    let mut counts = [0usize; 3];
    for (c, e) in counts.iter_mut().zip(&exact) {
        *c = e.floor() as usize;
    }
    let mut rest = n - counts.iter().sum::<usize>();
    let mut by_remainder: Vec<usize> = (0..3).collect();
    by_remainder.sort_by(|&a, &b| {
        let ra = exact[a] - exact[a].floor();
        let rb = exact[b] - exact[b].floor();
        rb.total_cmp(&ra).then(a.cmp(&b))
    });
    for &k in by_remainder.iter().cycle() {
        if rest == 0 {
            break;
        }
        counts[k] += 1;
        rest -= 1;
    }
    counts
}

/// Reads one JSON value per non-blank line, reporting 1-based line numbers on
/// failure.
pub fn read_jsonl<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let file = fs::File::open(path).map_err(|e| RadarError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| RadarError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let value = serde_json::from_str(&line).map_err(|e| RadarError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        out.push(value);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: impl IntoIterator<Item = T>) -> Result<()> {
    let mut buf = Vec::new();
    for item in items {
        serde_json::to_writer(&mut buf, &item)?;
        buf.push(b'\n');
    }
    let mut file = fs::File::create(path).map_err(|e| RadarError::io(path, e))?;
    file.write_all(&buf).map_err(|e| RadarError::io(path, e))
}

pub struct CorpusPaths {
    pub videos: PathBuf,
    pub follows: PathBuf,
    pub tags: PathBuf,
}

impl CorpusPaths {
    pub fn in_dir(dir: &Path) -> Self {
        Self {
            videos: dir.join(VIDEOS_FILE),
            follows: dir.join(FOLLOWS_FILE),
            tags: dir.join(TAGS_FILE),
        }
    }
}

/// Loads and validates a corpus. A missing follows file is treated as empty.
pub fn load_corpus(paths: &CorpusPaths) -> Result<Corpus> {
    let videos = read_jsonl(&paths.videos)?;
    let follows = if paths.follows.exists() {
        read_jsonl(&paths.follows)?
    } else {
        Vec::new()
    };
    let vocab = read_jsonl(&paths.tags)?;
    let corpus = Corpus {
        videos,
        follows,
        vocab,
        splits: None,
    };
    corpus.validate()?;
    Ok(corpus)
}

pub fn load_corpus_dir(dir: &Path) -> Result<Corpus> {
    load_corpus(&CorpusPaths::in_dir(dir))
}

/// Writes the three corpus files into `dir`, creating it if needed.
pub fn save_corpus(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| RadarError::io(dir, e))?;
    let paths = CorpusPaths::in_dir(dir);
    write_jsonl(&paths.videos, &corpus.videos)?;
    write_jsonl(&paths.follows, &corpus.follows)?;
    write_jsonl(&paths.tags, &corpus.vocab)
}
