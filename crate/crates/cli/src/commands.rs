//! Subcommand implementations. Results go to stdout, diagnostics to stderr.

use std::collections::{BTreeSet, HashMap, HashSet};
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use coref_core::corpus::{parse_conll, write_conll_documents, CharVocab, Document, EmbeddingTable};
use coref_core::diffcore::Checkpoint;
use coref_core::encoder::WordEmbedder;
use coref_core::inference::{
    attention_report, ensemble_scores, predict_documents, predict_from_scores, render_attention, SidecarRecord,
};
use coref_core::metrics::{constituency_precision, ConstituencyPrecision, CorefCounts, CorefResults};
use coref_core::model::CorefModel;
use coref_core::pruner::{prune_spans, span_budget};
use coref_core::trainer::Trainer;

use crate::config::RunConfig;

const MODEL_FILE: &str = "model.ckpt";
const TRAINER_FILE: &str = "trainer.ckpt";
const LOG_FILE: &str = "train.log";
const RUN_CONFIG_SECTION: &str = "run/config";

pub struct TrainOverrides {
    pub seed: Option<u64>,
    pub max_epochs: Option<usize>,
    pub checkpoint_dir: Option<PathBuf>,
    pub resume: bool,
}

fn read_documents(path: &Path) -> Result<Vec<Document>> {
    let text = fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    parse_conll(&text).with_context(|| format!("cannot parse {}", path.display()))
}

fn load_embedder(config: &RunConfig) -> Result<Arc<WordEmbedder>> {
    let mut tables = Vec::with_capacity(config.paths.embeddings.len());
    for e in &config.paths.embeddings {
        let mut table = EmbeddingTable::load(&e.path, e.dim)
            .with_context(|| format!("cannot load embeddings {}", e.path.display()))?;
        table.set_lowercase_fallback(config.model.lowercase_fallback);
        tables.push(table);
    }
    Ok(Arc::new(WordEmbedder::new(tables)))
}

fn load_model(path: &Path, embedder: Arc<WordEmbedder>) -> Result<CorefModel> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("cannot read checkpoint {}", path.display()))?;
    CorefModel::from_checkpoint(&ckpt, embedder).with_context(|| format!("cannot restore model from {}", path.display()))
}

fn save_model(model: &CorefModel, config: &RunConfig, path: &Path) -> Result<()> {
    let mut ckpt = model.to_checkpoint()?;
    ckpt.insert_text(RUN_CONFIG_SECTION, config.to_toml())?;
    ckpt.save(path).with_context(|| format!("cannot write {}", path.display()))
}

pub fn train(config_path: &Path, overrides: TrainOverrides) -> Result<()> {
    let mut config = RunConfig::load(config_path)?;
    if let Some(seed) = overrides.seed {
        config.seed = seed;
    }
    if let Some(epochs) = overrides.max_epochs {
        config.train.max_epochs = epochs;
    }
    if let Some(dir) = overrides.checkpoint_dir {
        config.paths.checkpoint_dir = Some(dir);
    }
    config.validate()?;
    let train_path = config.paths.train.as_ref().context("the config needs paths.train")?;
    let train_docs = read_documents(train_path)?;
    if train_docs.is_empty() {
        bail!("{} contains no documents", train_path.display());
    }
    let dev_docs = match &config.paths.dev {
        Some(p) => read_documents(p)?,
        None => Vec::new(),
    };
    let dir = config.checkpoint_dir()?.to_path_buf();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    let embedder = load_embedder(&config)?;

    let state_path = dir.join(TRAINER_FILE);
    let mut trainer = if overrides.resume && state_path.is_file() {
        let ckpt = Checkpoint::load(&state_path).with_context(|| format!("cannot read {}", state_path.display()))?;
        let mut t = Trainer::from_checkpoint(&ckpt, embedder)?;
        t.config.max_epochs = config.train.max_epochs;
        eprintln!("resuming after epoch {}", t.epoch);
        t
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let vocab = CharVocab::build(&train_docs);
        let model = CorefModel::new(config.model.clone(), vocab, embedder, &mut rng)?;
        Trainer::new(model, config.train.clone(), config.seed)?
    };

    let log_path = dir.join(LOG_FILE);
    let mut log_file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&log_path)
        .with_context(|| format!("cannot open {}", log_path.display()))?;
    let mut write_error = None;
    let mut log = |record: &coref_core::trainer::LogRecord| {
        println!("{record}");
        if let Err(e) = writeln!(log_file, "{record}") {
            write_error.get_or_insert(e);
        }
    };
    while !trainer.is_finished() {
        trainer.train_epoch(&train_docs, &dev_docs, &mut log)?;
        trainer
            .to_checkpoint()?
            .save(&state_path)
            .with_context(|| format!("cannot write {}", state_path.display()))?;
        save_model(&trainer.best_model(), &config, &dir.join(MODEL_FILE))?;
    }
    if let Some(e) = write_error {
        return Err(e).with_context(|| format!("cannot write {}", log_path.display()));
    }
    match trainer.best_avg_f1 {
        Some(f1) => println!("best dev avg_f1={f1:.4}"),
        None => println!("training finished without dev evaluation"),
    }
    println!("model written to {}", dir.join(MODEL_FILE).display());
    Ok(())
}

fn member_paths(config: &RunConfig, flags: &[PathBuf]) -> Result<Vec<PathBuf>> {
    if !flags.is_empty() {
        return Ok(flags.to_vec());
    }
    if !config.ensemble.members.is_empty() {
        return Ok(config.ensemble.members.clone());
    }
    Ok(vec![config.checkpoint_dir()?.join(MODEL_FILE)])
}

pub fn predict(
    config_path: &Path,
    input: &Path,
    output: &Path,
    models: &[PathBuf],
    sidecar: Option<&Path>,
    with_attention: bool,
) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    let embedder = load_embedder(&config)?;
    let members = member_paths(&config, models)?
        .iter()
        .map(|p| load_model(p, embedder.clone()))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&CorefModel> = members.iter().collect();
    let docs = read_documents(input)?;
    let predictions = predict_documents(&refs, &docs)?;

    let body = write_conll_documents(docs.iter().zip(predictions.iter().map(|p| &p.clustering)))?;
    fs::write(output, body).with_context(|| format!("cannot write {}", output.display()))?;
    let sidecar_path = sidecar.map(Path::to_path_buf).unwrap_or_else(|| {
        let mut p = output.as_os_str().to_owned();
        p.push(".jsonl");
        PathBuf::from(p)
    });
    let mut lines = String::new();
    for (doc, p) in docs.iter().zip(&predictions) {
        lines.push_str(&SidecarRecord::new(doc, p, with_attention).to_line());
        lines.push('\n');
    }
    fs::write(&sidecar_path, lines).with_context(|| format!("cannot write {}", sidecar_path.display()))?;
    eprintln!(
        "predicted {} documents with {} model(s); sidecar at {}",
        docs.len(),
        members.len(),
        sidecar_path.display()
    );
    Ok(())
}

fn row(label: &str, results: &CorefResults) -> String {
    format!("{label:<24}{results}")
}

pub fn evaluate(gold_path: &Path, system_path: &Path) -> Result<()> {
    let gold = read_documents(gold_path)?;
    let system = read_documents(system_path)?;
    let system_by_key: HashMap<String, &Document> = system.iter().map(|d| (d.doc_key(), d)).collect();
    let gold_keys: BTreeSet<String> = gold.iter().map(Document::doc_key).collect();
    let system_keys: BTreeSet<String> = system_by_key.keys().cloned().collect();
    if gold_keys != system_keys {
        let missing: Vec<_> = gold_keys.difference(&system_keys).cloned().collect();
        let extra: Vec<_> = system_keys.difference(&gold_keys).cloned().collect();
        bail!(
            "document keys differ; missing from system: [{}]; not in gold: [{}]",
            missing.join(", "),
            extra.join(", ")
        );
    }
    println!("{}", CorefResults::header());
    let mut total = CorefCounts::default();
    for doc in &gold {
        let key = doc.doc_key();
        let counts = CorefCounts::score(&doc.gold, &system_by_key[&key].gold);
        println!("{}", row(&key, &counts.results()));
        total.add(&counts);
    }
    println!("{}", row("corpus (micro)", &total.results()));
    Ok(())
}

pub fn analyze(config_path: &Path, input: &Path, model_path: &Path, lambdas: &[f64]) -> Result<()> {
    let config = RunConfig::load(config_path)?;
    if lambdas.iter().any(|&l| l.is_nan() || l <= 0.0) {
        bail!("every λ in the sweep must be positive");
    }
    let model = load_model(model_path, load_embedder(&config)?)?;
    let docs = read_documents(input)?;
    let mut found = vec![0usize; lambdas.len()];
    let mut gold_total = 0usize;
    let mut precision = ConstituencyPrecision::Unavailable;
    let mut attention = String::new();
    for doc in &docs {
        let scores = ensemble_scores(&[&model], doc)?;
        let gold: HashSet<_> = doc.gold.mentions().collect();
        gold_total += gold.len();
        for (k, &lambda) in lambdas.iter().enumerate() {
            let kept = prune_spans(&scores.candidates, &scores.mention_scores, span_budget(lambda, doc.num_tokens()));
            found[k] += kept.iter().filter(|&&i| gold.contains(&scores.candidates[i])).count();
        }
        let accepted = scores.accepted_spans();
        precision.merge(&constituency_precision(
            &accepted,
            doc.constituents.as_deref(),
            model.config.max_span_width,
        ));
        let prediction = predict_from_scores(doc, scores);
        attention.push_str(&render_attention(&doc.doc_key(), &attention_report(doc, &prediction)));
    }

    println!("# mention recall by spans per word");
    println!("{:>8} {:>8}", "lambda", "recall");
    for (k, lambda) in lambdas.iter().enumerate() {
        let recall = if gold_total == 0 { 1.0 } else { found[k] as f64 / gold_total as f64 };
        println!("{lambda:>8.2} {:>8.4}", recall);
    }
    println!();
    println!("# constituency precision of accepted spans by width");
    match &precision {
        ConstituencyPrecision::Unavailable => println!("unavailable: input carries no parse annotation"),
        ConstituencyPrecision::ByWidth(counts) => {
            println!("{:>6} {:>9} {:>8} {:>10}", "width", "accepted", "matched", "precision");
            for (w, c) in counts.iter().enumerate() {
                let p = c.precision().map_or_else(|| "-".to_string(), |p| format!("{p:.4}"));
                println!("{:>6} {:>9} {:>8} {:>10}", w + 1, c.accepted, c.matched, p);
            }
        }
    }
    println!();
    println!("# head attention of predicted mentions");
    print!("{attention}");
    Ok(())
}
