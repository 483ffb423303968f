use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use radar_core::corpus::{load_corpus_dir, read_jsonl, split_corpus, Corpus, Split, VideoRecord};
use radar_core::eval::evaluate_cached;
use radar_core::hetgraph::{build_graph, load_graph, save_graph, GraphOptions, HeteroGraph, DEFAULT_R3_CAP};
use radar_core::ontology::{build_ontology, load_labels, load_ontology, save_ontology, OntologyOptions};
use radar_core::radar::{inductive_infer, load_model, read_model_manifest, MODEL_MANIFEST};
use radar_core::synthgen::{gen_synth, write_synth, SynthConfig};
use radar_core::trainer::{Precision, TrainConfig, Trainer};
use radar_core::{RadarError, Real};

#[derive(Parser, Debug)]
#[command(name = "radar", version, about = "Micro-video tagging on a heterogeneous video-tag network")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic corpus with a planted ontology.
    Synth {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Learn is_subtopic_of relations from tag co-occurrence.
    BuildOntology {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value_t = 0.9)]
        precision: f64,
        #[arg(long, default_value_t = 0.9)]
        recall: f64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Build the video-tag network over the training videos.
    BuildGraph {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        ontology: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = DEFAULT_R3_CAP)]
        r3_cap: usize,
        #[command(flatten)]
        split: SplitArgs,
    },
    /// Train a model on a built graph.
    Train {
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed of the config file.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Score a split and write a metrics report.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        /// Defaults to the corpus the graph was built from.
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        report: PathBuf,
    },
    /// Tag one new video given as a JSON record.
    Infer {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        graph: PathBuf,
        #[arg(long)]
        video: PathBuf,
        #[arg(long, default_value_t = 10)]
        top_k: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Args, Debug)]
struct SplitArgs {
    /// Train, validate and test fractions.
    #[arg(long, value_delimiter = ',', num_args = 3, default_values_t = [0.8, 0.1, 0.1])]
    fractions: Vec<f64>,
    /// Oldest videos train, newest test.
    #[arg(long)]
    temporal: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(clap::ValueEnum, Clone, Copy, Debug)]
enum SplitName {
    Train,
    Validate,
    Test,
}

impl From<SplitName> for Split {
    fn from(s: SplitName) -> Self {
        match s {
            SplitName::Train => Split::Train,
            SplitName::Validate => Split::Validate,
            SplitName::Test => Split::Test,
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(if e.is_validation() { 1 } else { 2 })
        }
    }
}

type Result<T> = radar_core::Result<T>;

fn run(command: Command) -> Result<()> {
    match command {
        Command::Synth { config, out, seed } => synth(config.as_deref(), &out, seed),
        Command::BuildOntology {
            corpus,
            labels,
            precision,
            recall,
            out,
            split,
        } => {
            let corpus = load_split(&corpus, &split)?;
            let labels = load_labels(&labels)?;
            let opts = OntologyOptions {
                precision_target: precision,
                recall_target: recall,
                ..OntologyOptions::default()
            };
            let built = build_ontology(&corpus, &labels, &opts)?;
            log::info!(
                "{} labeled pairs, thresholds r={:.4} relax={:.4}, {} edges over {} tags",
                built.labels_used,
                built.selection.thresholds.delta_r,
                built.selection.thresholds.epsilon_r,
                built.dag.edges.len(),
                built.dag.n_tags()
            );
            ensure_parent(&out)?;
            save_ontology(&built.dag, &out)
        }
        Command::BuildGraph {
            corpus: dir,
            ontology,
            out,
            r3_cap,
            split,
        } => {
            let corpus = load_split(&dir, &split)?;
            let tags: Vec<String> = corpus.vocab.iter().map(|e| e.tag.clone()).collect();
            let dag = load_ontology(&ontology, &tags)?;
            let (graph, _) = build_graph(&corpus, &dag, &GraphOptions { r3_cap })?;
            log::info!(
                "graph: {} videos, {} tags, r1={} r2={} r3={}",
                graph.n_videos(),
                graph.n_tags(),
                graph.edges(radar_core::hetgraph::Relation::R1).len(),
                graph.edges(radar_core::hetgraph::Relation::R2).len(),
                graph.edges(radar_core::hetgraph::Relation::R3).len()
            );
            let dir = fs::canonicalize(&dir).map_err(|e| io_err(&dir, e))?;
            save_graph(&graph, &out, Some(&dir))
        }
        Command::Train {
            graph,
            corpus,
            config,
            out,
            seed,
        } => {
            let mut config: TrainConfig = match config {
                Some(path) => serde_json::from_str(&fs::read_to_string(&path).map_err(|e| io_err(&path, e))?)?,
                None => TrainConfig::default(),
            };
            if let Some(seed) = seed {
                config.seed = seed;
            }
            config.validate()?;
            let (graph, _) = load_graph(&graph)?;
            let corpus = corpus_for_graph(&corpus, &graph)?;
            match config.precision {
                Precision::F32 => train::<f32>(config, &corpus, &graph, &out),
                Precision::F64 => train::<f64>(config, &corpus, &graph, &out),
            }
        }
        Command::Eval {
            model,
            graph,
            corpus,
            split,
            report,
        } => {
            let (graph, stored) = load_graph(&graph)?;
            let dir = corpus
                .or(stored)
                .ok_or_else(|| RadarError::Invalid("the graph records no corpus; pass --corpus".into()))?;
            let corpus = corpus_for_graph(&dir, &graph)?;
            let model = model_dir(&model);
            let metrics = match read_model_manifest(&model)?.dtype.as_str() {
                "f64" => eval::<f64>(&model, &graph, &corpus, split.into())?,
                _ => eval::<f32>(&model, &graph, &corpus, split.into())?,
            };
            log::info!(
                "{} videos: mAP {:.4} P@1 {:.4} P@3 {:.4} R@5 {:.4} R@10 {:.4}",
                metrics.n_videos,
                metrics.map,
                metrics.p1,
                metrics.p3,
                metrics.r5,
                metrics.r10
            );
            write_file(&report, &serde_json::to_string_pretty(&metrics)?)
        }
        Command::Infer {
            model,
            graph,
            video,
            top_k,
            out,
        } => {
            if top_k == 0 {
                return Err(RadarError::Invalid("--top-k must be at least 1".into()));
            }
            let (graph, _) = load_graph(&graph)?;
            let record = read_video(&video)?;
            let model = model_dir(&model);
            let tagged = match read_model_manifest(&model)?.dtype.as_str() {
                "f64" => infer::<f64>(&model, &graph, &record, top_k)?,
                _ => infer::<f32>(&model, &graph, &record, top_k)?,
            };
            write_file(&out, &serde_json::to_string(&tagged)?)
        }
    }
}

fn synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> Result<()> {
    let mut cfg: SynthConfig = match config {
        Some(path) => serde_json::from_str(&fs::read_to_string(path).map_err(|e| io_err(path, e))?)?,
        None => SynthConfig::default(),
    };
    if let Some(seed) = seed {
        cfg.seed = seed;
    }
    let output = gen_synth(&cfg)?;
    for w in &output.warnings {
        log::warn!("{w}");
    }
    write_synth(&output, out)?;
    log::info!(
        "wrote {} videos, {} tags, {} follows to {}",
        output.corpus.videos.len(),
        output.corpus.vocab.len(),
        output.corpus.follows.len(),
        out.display()
    );
    Ok(())
}

fn load_split(dir: &Path, args: &SplitArgs) -> Result<Corpus> {
    let fractions: [f64; 3] = args
        .fractions
        .as_slice()
        .try_into()
        .map_err(|_| RadarError::Invalid("--fractions takes three values".into()))?;
    let mut corpus = split_corpus(load_corpus_dir(dir)?, fractions, args.seed, args.temporal)?;
    let dropped = corpus.filter_training_min_tags();
    if dropped > 0 {
        log::warn!("dropped {dropped} training videos with fewer than 2 tags");
    }
    Ok(corpus)
}

/// Loads the corpus and restores the split assignment stored with the graph.
/// Videos the graph never assigned (filtered at build time) are dropped.
fn corpus_for_graph(dir: &Path, graph: &HeteroGraph) -> Result<Corpus> {
    let mut corpus = load_corpus_dir(dir)?;
    let splits = graph
        .splits
        .as_ref()
        .ok_or_else(|| RadarError::Invalid("the graph carries no split assignment".into()))?;
    corpus.videos.retain(|v| splits.contains_key(&v.id));
    corpus.splits = Some(corpus.videos.iter().map(|v| splits[&v.id]).collect());
    Ok(corpus)
}

fn train<T: Real>(config: TrainConfig, corpus: &Corpus, graph: &HeteroGraph, out: &Path) -> Result<()> {
    let mut trainer = Trainer::<T>::new(config, corpus, graph)?;
    log::info!(
        "{} parameters, {} steps per epoch",
        trainer.model.n_params(),
        trainer.steps_per_epoch()
    );
    trainer.train()?;
    trainer.save_outputs(out)
}

/// Accepts either a model directory or a training output holding `model/`.
fn model_dir(path: &Path) -> PathBuf {
    let nested = path.join("model");
    if !path.join(MODEL_MANIFEST).exists() && nested.join(MODEL_MANIFEST).exists() {
        nested
    } else {
        path.to_path_buf()
    }
}

fn load_cached<T: Real>(
    dir: &Path,
) -> Result<(radar_core::radar::RadarModel<T>, radar_core::radar::RepCache<T>)> {
    let (model, cache) = load_model::<T>(dir)?;
    let cache = cache.ok_or_else(|| RadarError::Invalid(format!("{} holds no representation cache", dir.display())))?;
    Ok((model, cache))
}

fn eval<T: Real>(dir: &Path, graph: &HeteroGraph, corpus: &Corpus, split: Split) -> Result<radar_core::eval::MetricsReport> {
    let (model, cache) = load_cached::<T>(dir)?;
    let graph = radar_core::trainer::apply_variant(&model.config.flags, graph);
    evaluate_cached(&model, &graph, &cache, corpus, split)
}

#[derive(Serialize)]
struct TagScore {
    tag: String,
    score: f32,
}

#[derive(Serialize)]
struct Tagged {
    video_id: String,
    tags: Vec<TagScore>,
}

fn read_video(path: &Path) -> Result<VideoRecord> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    match serde_json::from_str(&text) {
        Ok(v) => Ok(v),
        Err(_) => {
            let mut all: Vec<VideoRecord> = read_jsonl(path)?;
            if all.len() != 1 {
                return Err(RadarError::Invalid(format!(
                    "{} must hold exactly one video record",
                    path.display()
                )));
            }
            Ok(all.remove(0))
        }
    }
}

fn infer<T: Real>(dir: &Path, graph: &HeteroGraph, record: &VideoRecord, top_k: usize) -> Result<Tagged> {
    let (model, cache) = load_cached::<T>(dir)?;
    let graph = radar_core::trainer::apply_variant(&model.config.flags, graph);
    let scores: Vec<f64> = if let Some(i) = graph.video_index(&record.id) {
        let h = cache.final_videos().gather_rows(&[i]);
        radar_core::radar::predict_scores(&h, cache.final_tags())
            .data()
            .iter()
            .map(|x| x.to_f64_lossy())
            .collect()
    } else {
        inductive_infer(&model, &graph, &cache, record)?
            .scores
            .iter()
            .map(|x| x.to_f64_lossy())
            .collect()
    };
    let tags = radar_core::eval::rank(&scores)
        .into_iter()
        .take(top_k)
        .map(|t| TagScore {
            tag: graph.tags[t as usize].clone(),
            score: scores[t as usize] as f32,
        })
        .collect();
    Ok(Tagged {
        video_id: record.id.clone(),
        tags,
    })
}

fn ensure_parent(path: &Path) -> Result<()> {
    match path.parent().filter(|p| !p.as_os_str().is_empty()) {
        Some(parent) => fs::create_dir_all(parent).map_err(|e| io_err(parent, e)),
        None => Ok(()),
    }
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    ensure_parent(path)?;
    fs::write(path, text).map_err(|e| io_err(path, e))
}

fn io_err(path: &Path, source: std::io::Error) -> RadarError {
    RadarError::Io {
        path: path.to_path_buf(),
        source,
    }
}
