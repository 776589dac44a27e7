//! `jobmatch`: command-line front end for corpus generation, fitting,
//! training, evaluation and retrieval.
//!
//! Default file locations live under the data directory, `./data` unless
//! `JOBMATCH_DATA_DIR` is set. Failures print `{"error": kind, "message": ...}`
//! to stderr; usage and config errors exit with 2, everything else with 1.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::json;

use jobmatch::corpus::{
    add_random_negatives, compute_stats, generate_synthetic_corpus, ingest_documents, read_pairs, split_dataset,
    write_documents, write_pairs, DatasetSplit, DocFormat, Document, Role,
};
use jobmatch::encoder::EncoderState;
use jobmatch::evalkit::{
    density_export, heatmap_export, render_table_csv, render_table_text, run_experiment_matrix, RunSpec, ScoredPair,
};
use jobmatch::linalg::cosine_similarity;
use jobmatch::pipeline::{Embedder, EncoderEmbedder, ExperimentConfig};
use jobmatch::retrieval::{index_build, topk_query, EmbeddingIndex};
use jobmatch::siamese::{train, Objective, SiameseModel};
use jobmatch::textprep::{split_sentences, Vocabulary};
use jobmatch::tfidf::TfidfModel;

const DATA_DIR_ENV: &str = "JOBMATCH_DATA_DIR";

#[derive(Parser)]
#[command(name = "jobmatch", version, about = "Resume-vacancy matching pipeline")]
struct Cli {
    /// Master seed; replaces the seed of the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment config (JSON). Defaults to the built-in desk-scale experiment.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic corpus from the config's corpus spec.
    GenData {
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Read documents (JSONL or TSV), deduplicate and write them as JSONL.
    Ingest {
        #[arg(long)]
        input: PathBuf,
        /// Input format; guessed from the extension when omitted.
        #[arg(long)]
        format: Option<DocFormat>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Split labeled pairs into train, validation and test.
    Split {
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long)]
        documents: Option<PathBuf>,
        /// Random negatives to add before splitting.
        #[arg(long, default_value_t = 0)]
        random_negatives: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fit the TF-IDF model on the training documents.
    FitTfidf {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Fine-tune the Siamese encoder.
    Train {
        #[arg(long, value_parser = parse_objective)]
        objective: Objective,
        #[command(flatten)]
        data: DataArgs,
        /// Output directory for the model, vocabulary and training report.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Run representation/head combinations and write reports and tables.
    Evaluate {
        /// Comma-separated runs such as `tfidf+cosine`; an empty list runs nothing.
        /// Defaults to the config's runs.
        #[arg(long)]
        runs: Option<String>,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Cosine score of one resume/vacancy pair.
    Score {
        #[arg(long)]
        resume_id: String,
        #[arg(long)]
        vacancy_id: String,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Top-k resumes for a vacancy.
    Topk {
        #[arg(long, required_unless_present = "query_text")]
        vacancy_id: Option<String>,
        #[arg(long, conflicts_with = "vacancy_id")]
        query_text: Option<String>,
        #[arg(long, default_value_t = 10)]
        k: usize,
        /// Load a prebuilt index instead of embedding all resumes.
        #[arg(long)]
        index: Option<PathBuf>,
        /// Write the index built for this query.
        #[arg(long)]
        save_index: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Sentence-by-sentence cosine matrix of a resume and a vacancy (CSV).
    Heatmap {
        #[arg(long)]
        resume_id: String,
        #[arg(long)]
        vacancy_id: String,
        #[arg(long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        embed: EmbedArgs,
    },
    /// Score histograms per label for one evaluated run (CSV).
    Density {
        #[arg(long)]
        run: String,
        /// Scores written by `evaluate`.
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    documents: Option<PathBuf>,
    #[arg(long)]
    split: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum EmbedderKind {
    Tfidf,
    Frozen,
    Classifier,
    Regressor,
}

#[derive(Args)]
struct EmbedArgs {
    #[arg(long, value_enum, default_value = "regressor")]
    embedder: EmbedderKind,
    /// Model file; defaults to the file `fit-tfidf` or `train` writes.
    #[arg(long)]
    model: Option<PathBuf>,
    /// Vocabulary of a trained model; defaults to the one `train` writes.
    #[arg(long)]
    vocab: Option<PathBuf>,
    #[command(flatten)]
    data: DataArgs,
}

fn parse_objective(s: &str) -> std::result::Result<Objective, String> {
    s.parse()
}

enum Failure {
    Usage(String),
    /// Inputs are well formed but lack what was asked for.
    NotFound(String),
    Core(jobmatch::Error),
}

impl From<jobmatch::Error> for Failure {
    fn from(e: jobmatch::Error) -> Self {
        Failure::Core(e)
    }
}

type Result<T> = std::result::Result<T, Failure>;

struct Context {
    data_dir: PathBuf,
    config: ExperimentConfig,
}

impl Context {
    fn path(&self, given: &Option<PathBuf>, default: &str) -> PathBuf {
        given.clone().unwrap_or_else(|| self.data_dir.join(default))
    }

    fn documents(&self, data: &DataArgs) -> Result<Vec<Document>> {
        let path = self.path(&data.documents, "documents.jsonl");
        Ok(ingest_documents(&path, DocFormat::Jsonl)?)
    }

    fn split(&self, data: &DataArgs) -> Result<DatasetSplit> {
        read_json(&self.path(&data.split, "split.json"))
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<T> {
    let raw = fs::read_to_string(path).map_err(|e| io_error(path, e))?;
    Ok(serde_json::from_str(&raw).map_err(jobmatch::Error::from)?)
}

fn io_error(path: &Path, e: std::io::Error) -> Failure {
    Failure::Core(jobmatch::Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn write_file(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|e| io_error(parent, e))?;
    }
    fs::write(path, contents).map_err(|e| io_error(path, e))
}

fn write_json<T: Serialize + ?Sized>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value).map_err(jobmatch::Error::from)?;
    s.push('\n');
    write_file(path, s)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| io_error(dir, e))
}

fn train_texts<'a>(docs: &'a [Document], split: &DatasetSplit) -> Vec<&'a str> {
    let by_id: HashMap<&str, &Document> = docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut ids: Vec<&str> = split
        .train
        .iter()
        .flat_map(|p| [p.resume_id.as_str(), p.vacancy_id.as_str()])
        .collect();
    ids.sort_unstable();
    ids.dedup();
    ids.into_iter().filter_map(|id| by_id.get(id).map(|d| d.text.as_str())).collect()
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let config = match &cli.config {
        Some(path) => ExperimentConfig::load(path).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))?,
        None => ExperimentConfig::desk_scale(0),
    };
    Ok(match cli.seed {
        Some(seed) => config.with_seed(seed),
        None => config,
    })
}

fn build_embedder(ctx: &Context, args: &EmbedArgs, docs: &[Document]) -> Result<Box<dyn Embedder>> {
    let pooling = ctx.config.training.pooling;
    match args.embedder {
        EmbedderKind::Tfidf => Ok(Box::new(TfidfModel::load(&ctx.path(&args.model, "tfidf.json"))?)),
        EmbedderKind::Frozen => {
            let split = ctx.split(&args.data)?;
            let vocab = Vocabulary::fit(train_texts(docs, &split), true, ctx.config.vocab_min_count);
            let cfg = ctx.config.encoder.config(vocab.len(), vocab.pad(), ctx.config.seeds().encoder);
            Ok(Box::new(EncoderEmbedder {
                state: EncoderState::init(cfg)?,
                vocab,
                pooling,
            }))
        }
        EmbedderKind::Classifier | EmbedderKind::Regressor => {
            let objective = if args.embedder == EmbedderKind::Classifier {
                Objective::Classification
            } else {
                Objective::Regression
            };
            let default = format!("model-{objective}.json");
            let (model, training) = SiameseModel::load(&ctx.path(&args.model, &default))?;
            Ok(Box::new(EncoderEmbedder {
                state: model.encoder,
                vocab: Vocabulary::load(&ctx.path(&args.vocab, "vocab.json"))?,
                pooling: training.map_or(pooling, |t| t.pooling),
            }))
        }
    }
}

fn find<'a>(docs: &'a [Document], id: &str) -> Result<&'a Document> {
    docs.iter()
        .find(|d| d.doc_id == id)
        .ok_or_else(|| Failure::NotFound(format!("no document with id {id:?}")))
}

fn parse_runs(s: &str) -> Result<Vec<RunSpec>> {
    s.split(',')
        .map(str::trim)
        .filter(|r| !r.is_empty())
        .map(|r| r.parse().map_err(Failure::Usage))
        .collect()
}

fn run(cli: Cli) -> Result<serde_json::Value> {
    let data_dir = std::env::var_os(DATA_DIR_ENV).map_or_else(|| PathBuf::from("data"), PathBuf::from);
    let config = load_config(&cli)?;
    let ctx = Context { data_dir, config };
    match &cli.command {
        Command::GenData { out_dir } => {
            let dir = out_dir.clone().unwrap_or_else(|| ctx.data_dir.clone());
            create_dir(&dir)?;
            let corpus = generate_synthetic_corpus(&ctx.config.corpus)?;
            write_documents(&dir.join("documents.jsonl"), &corpus.documents)?;
            write_pairs(&dir.join("pairs.jsonl"), &corpus.pairs)?;
            let stats = compute_stats(&corpus.documents, &corpus.pairs)?;
            write_json(&dir.join("corpus_stats.json"), &stats)?;
            ctx.config.save(&dir.join("config.json"))?;
            Ok(json!({
                "documents": corpus.documents.len(),
                "pairs": corpus.pairs.len(),
                "positives": corpus.pairs.iter().filter(|p| p.label == 1).count(),
                "out_dir": dir,
            }))
        }
        Command::Ingest { input, format, output } => {
            let format = match format {
                Some(f) => *f,
                None if input.extension().is_some_and(|e| e == "tsv") => DocFormat::Tsv,
                None => DocFormat::Jsonl,
            };
            let docs = ingest_documents(input, format)?;
            let out = ctx.path(output, "documents.jsonl");
            if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
                create_dir(parent)?;
            }
            write_documents(&out, &docs)?;
            Ok(json!({ "documents": docs.len(), "output": out }))
        }
        Command::Split {
            pairs,
            documents,
            random_negatives,
            output,
        } => {
            let mut pairs = read_pairs(&ctx.path(pairs, "pairs.jsonl"))?;
            let seeds = ctx.config.seeds();
            if *random_negatives > 0 {
                let docs = ingest_documents(&ctx.path(documents, "documents.jsonl"), DocFormat::Jsonl)?;
                pairs = add_random_negatives(&pairs, &docs, *random_negatives, seeds.split)?;
            }
            let split = split_dataset(&pairs, ctx.config.split, seeds.split)?;
            let out = ctx.path(output, "split.json");
            write_json(&out, &split)?;
            Ok(json!({
                "train": split.train.len(),
                "validation": split.validation.len(),
                "test": split.test.len(),
                "vacancies_shared_train_test": split.vacancies_shared_train_test(),
                "output": out,
            }))
        }
        Command::FitTfidf { data, output } => {
            let docs = ctx.documents(data)?;
            let split = ctx.split(data)?;
            let model = TfidfModel::fit_texts(train_texts(&docs, &split), ctx.config.tfidf_dim)?;
            let out = ctx.path(output, "tfidf.json");
            model.save(&out)?;
            Ok(json!({ "dim": model.dim(), "output": out }))
        }
        Command::Train { objective, data, out_dir } => {
            let dir = out_dir.clone().unwrap_or_else(|| ctx.data_dir.clone());
            create_dir(&dir)?;
            let docs = ctx.documents(data)?;
            let split = ctx.split(data)?;
            let seeds = ctx.config.seeds();
            let vocab = Vocabulary::fit(train_texts(&docs, &split), true, ctx.config.vocab_min_count);
            let encoder = EncoderState::init(ctx.config.encoder.config(vocab.len(), vocab.pad(), seeds.encoder))?;
            let model = SiameseModel::new(encoder, *objective, seeds.head);
            let train_seed = match objective {
                Objective::Classification => seeds.train_classifier,
                Objective::Regression => seeds.train_regressor,
            };
            let cfg = ctx.config.training.config(*objective, train_seed);
            let (model, report) = train(&split, &docs, &vocab, model, &cfg)?;
            let model_path = dir.join(format!("model-{objective}.json"));
            model.save(&model_path, Some(&cfg))?;
            vocab.save(&dir.join("vocab.json"))?;
            // Wall time is left out of the file so reruns give identical bytes.
            let mut stored = serde_json::to_value(&report).map_err(jobmatch::Error::from)?;
            if let Some(obj) = stored.as_object_mut() {
                obj.remove("wall_time_secs");
            }
            write_json(&dir.join(format!("training-{objective}.json")), &stored)?;
            Ok(json!({
                "model": model_path,
                "epoch_losses": report.epoch_losses,
                "validation_roc_auc": report.validation_roc_auc,
                "wall_time_secs": report.wall_time_secs,
            }))
        }
        Command::Evaluate { runs, data, out_dir } => {
            let mut config = ctx.config.clone();
            if let Some(r) = runs {
                config.runs = parse_runs(r)?;
            }
            let dir = out_dir.clone().unwrap_or_else(|| ctx.data_dir.join("reports"));
            create_dir(&dir)?;
            let (docs, split) = if config.runs.is_empty() {
                (Vec::new(), DatasetSplit { train: vec![], validation: vec![], test: vec![], seed: 0 })
            } else {
                (ctx.documents(data)?, ctx.split(data)?)
            };
            let outcome = run_experiment_matrix(&docs, &split, &config)?;
            let table = render_table_text(&outcome);
            write_json(&dir.join("report.json"), &json!({ "config": config, "outcome": outcome }))?;
            write_file(&dir.join("table.txt"), &table)?;
            write_file(&dir.join("table.csv"), render_table_csv(&outcome)?)?;
            let mut scores = String::new();
            for s in outcome.scored.iter().flatten() {
                scores.push_str(&serde_json::to_string(s).map_err(jobmatch::Error::from)?);
                scores.push('\n');
            }
            write_file(&dir.join("scores.jsonl"), scores)?;
            eprint!("{table}");
            Ok(json!({
                "runs": outcome.reports.len(),
                "failures": outcome.failures,
                "out_dir": dir,
            }))
        }
        Command::Score {
            resume_id,
            vacancy_id,
            embed,
        } => {
            let docs = ctx.documents(&embed.data)?;
            let embedder = build_embedder(&ctx, embed, &docs)?;
            let u = embedder.embed_document(find(&docs, resume_id)?)?;
            let v = embedder.embed_document(find(&docs, vacancy_id)?)?;
            let score = cosine_similarity(&u.vector, &v.vector)?;
            Ok(json!({ "resume_id": resume_id, "vacancy_id": vacancy_id, "score": score }))
        }
        Command::Topk {
            vacancy_id,
            query_text,
            k,
            index,
            save_index,
            embed,
        } => {
            let docs = ctx.documents(&embed.data)?;
            let embedder = build_embedder(&ctx, embed, &docs)?;
            let idx = match index {
                Some(path) => EmbeddingIndex::load(path)?,
                None => {
                    let resumes: Vec<Document> = docs.iter().filter(|d| d.role == Role::Resume).cloned().collect();
                    index_build(&resumes, embedder.as_ref())?
                }
            };
            if let Some(path) = save_index {
                idx.save(path)?;
            }
            let query = match (vacancy_id, query_text) {
                (Some(id), _) => embedder.embed_document(find(&docs, id)?)?,
                (None, Some(text)) => embedder.embed(text)?,
                (None, None) => return Err(Failure::Usage("--vacancy-id or --query-text is required".into())),
            };
            let hits = topk_query(&idx, &query, *k)?;
            Ok(json!(hits
                .into_iter()
                .map(|(id, score)| json!({ "doc_id": id, "score": score }))
                .collect::<Vec<_>>()))
        }
        Command::Heatmap {
            resume_id,
            vacancy_id,
            output,
            embed,
        } => {
            let docs = ctx.documents(&embed.data)?;
            let embedder = build_embedder(&ctx, embed, &docs)?;
            let left = split_sentences(&find(&docs, resume_id)?.text);
            let right = split_sentences(&find(&docs, vacancy_id)?.text);
            let heatmap = heatmap_export(&left, &right, |l, r| {
                cosine_similarity(&embedder.embed(l)?.vector, &embedder.embed(r)?.vector)
            })?;
            let out = ctx.path(output, "heatmap.csv");
            let mut buf = Vec::new();
            heatmap.write_csv(&mut buf)?;
            write_file(&out, buf)?;
            Ok(json!({ "rows": heatmap.rows.len(), "columns": heatmap.columns.len(), "output": out }))
        }
        Command::Density {
            run,
            scores,
            bins,
            output,
        } => {
            let path = ctx.path(scores, "reports/scores.jsonl");
            let raw = fs::read_to_string(&path).map_err(|e| io_error(&path, e))?;
            let mut scored = Vec::new();
            for line in raw.lines().filter(|l| !l.trim().is_empty()) {
                let s: ScoredPair = serde_json::from_str(line).map_err(jobmatch::Error::from)?;
                if &s.run_id == run {
                    scored.push(s);
                }
            }
            if scored.is_empty() {
                return Err(Failure::NotFound(format!("no scores for run {run:?} in {}", path.display())));
            }
            let density = density_export(&scored, *bins)?;
            let out = ctx.path(output, &format!("density-{}.csv", run.replace('+', "_")));
            let mut buf = Vec::new();
            density.write_csv(&mut buf)?;
            write_file(&out, buf)?;
            Ok(json!({ "samples": scored.len(), "bins": density.negative.len(), "output": out }))
        }
    }
}

fn fail(kind: &str, message: &str, code: u8) -> ExitCode {
    eprintln!("{}", json!({ "error": kind, "message": message }));
    ExitCode::from(code)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => return fail("usage", e.to_string().trim_end(), 2),
    };
    match run(cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(Failure::Usage(m)) => fail("usage", &m, 2),
        Err(Failure::NotFound(m)) => fail("not_found", &m, 1),
        Err(Failure::Core(e)) => fail(e.kind(), &e.to_string(), 1),
    }
}
