use jobmatch::corpus::{
    generate_synthetic_corpus, ingest_documents, split_dataset, write_documents, DatasetSplit, DocFormat, Document,
    Role, SyntheticCorpusSpec,
};
use jobmatch::embedding::PoolingStrategy;
use jobmatch::encoder::EncoderState;
use jobmatch::evalkit::{run_experiment_matrix, Head, Representation, RunSpec};
use jobmatch::pipeline::{EncoderEmbedder, ExperimentConfig};
use jobmatch::retrieval::{index_build, topk_query, EmbeddingIndex};
use jobmatch::siamese::{train, Objective, SiameseModel, TrainingConfig};
use jobmatch::textprep::Vocabulary;
use jobmatch::tfidf::TfidfModel;
use jobmatch::Error;

fn spec(seed: u64) -> SyntheticCorpusSpec {
    SyntheticCorpusSpec {
        n_vacancies: 40,
        resume_pool_size: 200,
        vocab_size_per_language: 128,
        n_latent_topics: 8,
        tokens_per_resume_mean: 16.0,
        tokens_per_vacancy_mean: 12.0,
        n_pairs: Some(400),
        ..SyntheticCorpusSpec::desk_scale(seed)
    }
}

fn small_config(seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::new(spec(seed), seed);
    c.encoder.embed_dim = 16;
    c.training.epochs = 1;
    c.forest.n_trees = 10;
    c.significance.bootstrap_resamples = 50;
    c
}

#[test]
fn generated_corpus_survives_a_file_roundtrip() {
    let corpus = generate_synthetic_corpus(&spec(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("docs.jsonl");
    write_documents(&path, &corpus.documents).unwrap();
    assert_eq!(ingest_documents(&path, DocFormat::Jsonl).unwrap(), corpus.documents);
}

#[test]
fn trained_model_checkpoint_reproduces_embeddings() {
    let corpus = generate_synthetic_corpus(&spec(2)).unwrap();
    let split = split_dataset(&corpus.pairs, Default::default(), 2).unwrap();
    let vocab = Vocabulary::fit(corpus.documents.iter().map(|d| d.text.as_str()), true, 1);
    let mut cfg = jobmatch::encoder::EncoderConfig::with_dims(vocab.len(), 16, 2, 2, 2);
    cfg.pad_id = vocab.pad();
    let model = SiameseModel::new(EncoderState::init(cfg).unwrap(), Objective::Classification, 2);
    let mut tc = TrainingConfig::new(Objective::Classification, 2);
    tc.epochs = 1;
    let (trained, report) = train(&split, &corpus.documents, &vocab, model, &tc).unwrap();
    assert!(trained.head.is_none() && trained.encoder.is_fine_tuned());
    assert!(report.epoch_losses.iter().all(|l| l.is_finite()));
    assert_eq!(report.optimizer_steps, split.train.len().div_ceil(tc.batch_size));

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    trained.save(&path, Some(&tc)).unwrap();
    let (back, back_cfg) = SiameseModel::load(&path).unwrap();
    assert_eq!(back_cfg, Some(tc));
    let text = &corpus.documents[0].text;
    let a = trained.embed(text, PoolingStrategy::MeanTokens, &vocab).unwrap();
    let b = back.embed(text, PoolingStrategy::MeanTokens, &vocab).unwrap();
    assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn tfidf_index_roundtrip_and_queries() {
    let corpus = generate_synthetic_corpus(&spec(3)).unwrap();
    let tfidf = TfidfModel::fit(&corpus.documents, 768).unwrap();
    let resumes: Vec<Document> = corpus.documents.iter().filter(|d| d.role == Role::Resume).cloned().collect();
    let index = index_build(&resumes, &tfidf).unwrap();
    assert_eq!(index.len(), resumes.len());

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("index.bin");
    index.save(&path).unwrap();
    let back = EmbeddingIndex::load(&path).unwrap();
    let query = tfidf.transform(&corpus.documents[0]);
    assert_eq!(topk_query(&back, &query, 7).unwrap(), topk_query(&index, &query, 7).unwrap());

    // The index order does not change results.
    let mut reversed = resumes.clone();
    reversed.reverse();
    let other = index_build(&reversed, &tfidf).unwrap();
    assert_eq!(topk_query(&other, &query, 25).unwrap(), topk_query(&index, &query, 25).unwrap());
}

#[test]
fn index_build_names_the_failing_document() {
    let vocab = Vocabulary::from_tokens(&["alpha", "beta"]);
    let mut cfg = jobmatch::encoder::EncoderConfig::with_dims(vocab.len(), 8, 1, 2, 0);
    cfg.pad_id = vocab.pad();
    let embedder = EncoderEmbedder {
        state: EncoderState::init(cfg).unwrap(),
        vocab,
        pooling: PoolingStrategy::MeanTokens,
    };
    let docs = vec![
        Document::new("r1", Role::Resume, "en", "alpha beta"),
        Document::new("r2", Role::Resume, "en", " ... "),
    ];
    match index_build(&docs, &embedder) {
        Err(Error::IndexBuild { doc_id, .. }) => assert_eq!(doc_id, "r2"),
        other => panic!("unexpected {other:?}"),
    }
}

#[test]
fn failing_runs_are_recorded_not_fatal() {
    let config = small_config(4);
    let corpus = generate_synthetic_corpus(&config.corpus).unwrap();
    let split = split_dataset(&corpus.pairs, config.split, 4).unwrap();
    // A test part with only positives leaves every metric undefined.
    let one_class = DatasetSplit {
        test: split.test.iter().filter(|p| p.label == 1).cloned().collect(),
        ..split.clone()
    };
    let mut c = config.clone();
    c.runs = vec![
        RunSpec::new(Representation::Tfidf, Head::Cosine),
        RunSpec::new(Representation::EncoderFrozen, Head::Forest),
    ];
    let outcome = run_experiment_matrix(&corpus.documents, &one_class, &c).unwrap();
    assert!(outcome.reports.is_empty());
    assert_eq!(outcome.failures.len(), 2);
    assert!(outcome.failures.iter().all(|f| f.error == "undefined_metric"));

    let outcome = run_experiment_matrix(&corpus.documents, &split, &c).unwrap();
    assert_eq!(outcome.reports.len(), 2);
    assert_eq!(outcome.scored[0].len(), split.test.len());
}

#[test]
fn significance_covers_the_comparison_groups() {
    let config = small_config(5);
    let out = jobmatch::pipeline::run_pipeline(&config).unwrap();
    let o = &out.outcome;
    assert_eq!(o.reports.len(), 8, "{:?}", o.failures);
    // 1 + 1 + 6 pairs, each tested on two units unless degenerate.
    assert_eq!(o.significance.len() + o.notes.iter().filter(|n| n.starts_with("t-test")).count(), 16);
    assert!(o.significance.iter().all(|s| (0.0..=1.0).contains(&s.p_value)));
    assert_eq!(o.training.len(), 2);
}

#[test]
fn config_file_roundtrip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("experiment.json");
    let c = ExperimentConfig::desk_scale(9);
    c.save(&path).unwrap();
    assert_eq!(ExperimentConfig::load(&path).unwrap(), c);
    std::fs::write(&path, r#"{"seed": 1}"#).unwrap();
    assert!(ExperimentConfig::load(&path).is_err());
}
