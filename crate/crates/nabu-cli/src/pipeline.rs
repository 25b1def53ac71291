//! Subcommand implementations: corpus preparation, tokenizer training,
//! model training, generation, scoring, and reification dumps.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nabu_core::checkpoint;
use nabu_core::config::{RunConfig, SessionConfig};
use nabu_core::graph::{reify, PredicateNodes, ReifiedGraph};
use nabu_core::metrics;
use nabu_core::model;
use nabu_core::scalar::{Dtype, Scalar};
use nabu_core::tokenizer::{train_bpe, Vocabulary};
use nabu_core::training::{self, Example, TrainError};
use nabu_core::tensor::TensorError;
use nabu_core::LanguageTag;

use crate::corpus::{read_corpus, split_blocks, write_corpus, CorpusBlock};
use crate::error::CliError;
use crate::manifest::RunManifest;
use crate::synth;

fn lang_file(dir: &Path, lang: LanguageTag, suffix: &str) -> PathBuf {
    dir.join(format!("{}.{suffix}.nabu", lang.code().to_lowercase()))
}

/// Emits train/dev/test splits per language (k-fold carving for languages
/// without a test file) plus a merged shuffled train file for multi-language
/// tasks.
pub fn prepare(
    raw: Option<&Path>,
    synthetic: Option<usize>,
    out: &Path,
    cfg: &RunConfig,
) -> Result<RunManifest, CliError> {
    let seed = cfg.train.seed;
    let mut manifest = RunManifest::new("prepare", seed, cfg.to_text());
    fs::create_dir_all(out).map_err(CliError::io(out))?;

    let per_language: Vec<(LanguageTag, Vec<CorpusBlock>, Option<Vec<CorpusBlock>>)> =
        match (raw, synthetic) {
            (None, Some(count)) => synth::synthesize(&cfg.session.languages, count, seed)
                .into_iter()
                .map(|(lang, blocks)| (lang, blocks, None))
                .collect(),
            (Some(raw), None) => {
                let mut all = Vec::new();
                for &lang in &cfg.session.languages {
                    let path = lang_file(raw, lang, "raw");
                    if !path.exists() {
                        return Err(CliError::MissingLanguageData(lang));
                    }
                    manifest.record_input(&path)?;
                    let blocks = read_corpus(&path)?;
                    if blocks.is_empty() {
                        return Err(CliError::MissingLanguageData(lang));
                    }
                    let test_path = lang_file(raw, lang, "test");
                    let test = if test_path.exists() {
                        manifest.record_input(&test_path)?;
                        Some(read_corpus(&test_path)?)
                    } else {
                        None
                    };
                    all.push((lang, blocks, test));
                }
                all
            }
            _ => {
                return Err(CliError::Config(
                    "prepare needs exactly one of --raw or --synthetic".to_string(),
                ))
            }
        };

    let mut merged_train: Vec<CorpusBlock> = Vec::new();
    for (lang, blocks, given_test) in per_language {
        let has_test = given_test.is_some();
        let (train, dev, test) = split_blocks(blocks, cfg.k_fold, seed, has_test);
        let test = given_test.unwrap_or(test);

        for (suffix, subset) in [("train", &train), ("dev", &dev), ("test", &test)] {
            let path = lang_file(out, lang, suffix);
            write_corpus(&path, subset)?;
            manifest.record_output(&path)?;
        }
        merged_train.extend(train);
    }

    if cfg.session.languages.len() > 1 {
        synth::shuffle_blocks(&mut merged_train, seed);
        let path = out.join("merged.train.nabu");
        write_corpus(&path, &merged_train)?;
        manifest.record_output(&path)?;
    }
    Ok(manifest)
}

/// Trains the shared BPE vocabulary on corpus files (references plus label
/// feature tokens) and writes the vocabulary file.
pub fn train_tokenizer(
    corpus_files: &[PathBuf],
    vocab_size: usize,
    out: &Path,
    seed: u64,
) -> Result<RunManifest, CliError> {
    let mut manifest = RunManifest::new("train-tokenizer", seed, String::new());
    let mut lines: Vec<String> = Vec::new();
    for path in corpus_files {
        manifest.record_input(path)?;
        let blocks = read_corpus(path)?;
        lines.extend(synth::tokenizer_lines(&blocks));
    }
    let vocab = train_bpe(lines.iter().map(String::as_str), vocab_size)?;
    fs::write(out, vocab.to_text()).map_err(CliError::io(out))?;
    manifest.record_output(out)?;
    Ok(manifest)
}

pub fn load_vocab(path: &Path) -> Result<Vocabulary, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    Ok(Vocabulary::from_text(&text)?)
}

fn load_examples(
    data: &Path,
    languages: &[LanguageTag],
    vocab: &Vocabulary,
    mode: PredicateNodes,
) -> Result<Vec<(LanguageTag, Vec<Example>)>, CliError> {
    let mut per_language = Vec::new();
    for &lang in languages {
        let path = lang_file(data, lang, "train");
        if !path.exists() {
            return Err(CliError::MissingLanguageData(lang));
        }
        let blocks = read_corpus(&path)?;
        let mut examples = Vec::with_capacity(blocks.len());
        for block in &blocks {
            let text = block.text.as_ref().ok_or_else(|| CliError::Corpus {
                path: path.clone(),
                detail: "training block is missing its text= reference".to_string(),
            })?;
            let graph = reify(&block.triples, block.lang, mode)?;
            examples.push(Example::new(graph, vocab, text));
        }
        per_language.push((lang, examples));
    }
    Ok(per_language)
}

#[derive(Debug)]
pub struct TrainReport {
    pub epochs_run: usize,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub manifest: RunManifest,
}

/// Full training run: corpus assembly, epochs with CSV logging, per-epoch
/// atomic checkpointing (a divergent epoch keeps the last good file).
pub fn train(
    cfg: &RunConfig,
    data: &Path,
    vocab_path: &Path,
    out: &Path,
    log: &Path,
) -> Result<TrainReport, CliError> {
    match cfg.session.precision {
        Dtype::F32 => train_impl::<f32>(cfg, data, vocab_path, out, log),
        Dtype::F64 => train_impl::<f64>(cfg, data, vocab_path, out, log),
    }
}

fn train_impl<S: Scalar>(
    cfg: &RunConfig,
    data: &Path,
    vocab_path: &Path,
    out: &Path,
    log: &Path,
) -> Result<TrainReport, CliError> {
    cfg.validate()?;
    let session = &cfg.session;
    let vocab = load_vocab(vocab_path)?;
    if vocab.size() > session.model.vocab_size {
        return Err(CliError::Config(format!(
            "vocabulary has {} entries but the model is configured for {}",
            vocab.size(),
            session.model.vocab_size
        )));
    }

    let mut manifest = RunManifest::new("train", cfg.train.seed, cfg.to_text());
    manifest.record_input(vocab_path)?;
    for &lang in &session.languages {
        let path = lang_file(data, lang, "train");
        if path.exists() {
            manifest.record_input(&path)?;
        }
    }

    let per_language = load_examples(data, &session.languages, &vocab, session.model.predicate_nodes)?;
    let examples = training::build_corpus(per_language, &session.languages, cfg.train.seed)
        .map_err(CliError::from)?;

    let mut store = model::init_store::<S>(session, cfg.train.seed);
    let mut adam = nabu_core::params::AdamState::new();
    let mut log_text = String::from("epoch,mean_loss,token_acc,wall_seconds\n");
    let started = Instant::now();
    let mut epochs_run = 0usize;
    let mut final_metrics = None;

    for epoch in 0..cfg.train.epochs {
        let epoch_start = Instant::now();
        let metrics = match training::train_epoch(
            &examples, &mut store, &mut adam, &vocab, session, &cfg.train, epoch as u64,
        ) {
            Ok(m) => m,
            Err(TrainError::Tensor(TensorError::NonFiniteGradient)) => {
                // Keep the last epoch's checkpoint on disk and report.
                fs::write(log, &log_text).map_err(CliError::io(log))?;
                return Err(CliError::Diverged);
            }
            Err(other) => return Err(other.into()),
        };
        log_text.push_str(&format!(
            "{epoch},{:.6},{:.6},{:.3}\n",
            metrics.mean_loss,
            metrics.token_accuracy,
            epoch_start.elapsed().as_secs_f64()
        ));
        write_checkpoint(&store, session, out)?;
        epochs_run = epoch + 1;
        let stop = cfg
            .train
            .early_stop_loss
            .is_some_and(|limit| metrics.mean_loss < limit);
        final_metrics = Some(metrics);
        if stop {
            break;
        }
    }
    let _ = started;

    fs::write(log, &log_text).map_err(CliError::io(log))?;
    manifest.record_output(out)?;
    manifest.record_output(log)?;
    let final_metrics = final_metrics
        .ok_or_else(|| CliError::Config("epochs must be at least 1".to_string()))?;
    Ok(TrainReport {
        epochs_run,
        final_loss: final_metrics.mean_loss,
        final_accuracy: final_metrics.token_accuracy,
        manifest,
    })
}

/// Atomic checkpoint write: temp file in the same directory, then rename.
fn write_checkpoint<S: Scalar>(
    store: &nabu_core::params::ParameterStore<S>,
    session: &SessionConfig,
    out: &Path,
) -> Result<(), CliError> {
    let bytes = checkpoint::encode(store, session);
    let tmp = out.with_extension("ckpt.tmp");
    fs::write(&tmp, &bytes).map_err(CliError::io(&tmp))?;
    fs::rename(&tmp, out).map_err(CliError::io(out))?;
    Ok(())
}

/// Reads a checkpoint's embedded session and hands back the parsed config.
pub fn checkpoint_session(path: &Path) -> Result<SessionConfig, CliError> {
    let bytes = fs::read(path).map_err(CliError::io(path))?;
    let (config_text, _) = checkpoint::read_header(&bytes)?;
    Ok(SessionConfig::from_canonical_text(&config_text)?)
}

pub struct GenerateOpts {
    pub lang_override: Option<LanguageTag>,
    pub jsonl: bool,
    pub dump_attention: Option<PathBuf>,
}

/// Decodes every graph block of the input file, one output line per graph
/// in corpus order.
pub fn generate(
    ckpt: &Path,
    vocab_path: &Path,
    input: &Path,
    out: &Path,
    opts: &GenerateOpts,
) -> Result<RunManifest, CliError> {
    let session = checkpoint_session(ckpt)?;
    match session.precision {
        Dtype::F32 => generate_impl::<f32>(session, ckpt, vocab_path, input, out, opts),
        Dtype::F64 => generate_impl::<f64>(session, ckpt, vocab_path, input, out, opts),
    }
}

fn generate_impl<S: Scalar>(
    session: SessionConfig,
    ckpt: &Path,
    vocab_path: &Path,
    input: &Path,
    out: &Path,
    opts: &GenerateOpts,
) -> Result<RunManifest, CliError> {
    let bytes = fs::read(ckpt).map_err(CliError::io(ckpt))?;
    let store = checkpoint::decode::<S>(&bytes, &session)?;
    let vocab = load_vocab(vocab_path)?;
    let blocks = read_corpus(input)?;

    let mut manifest = RunManifest::new("generate", 0, session.canonical_text());
    manifest.record_input(ckpt)?;
    manifest.record_input(vocab_path)?;
    manifest.record_input(input)?;

    if let Some(dir) = &opts.dump_attention {
        fs::create_dir_all(dir).map_err(CliError::io(dir))?;
    }

    let mut lines = String::new();
    for (index, block) in blocks.iter().enumerate() {
        let lang = opts.lang_override.unwrap_or(block.lang);
        if !session.languages.contains(&lang) {
            return Err(CliError::GenerationRefused {
                requested: lang,
                available: session.languages.clone(),
            });
        }
        let graph = reify(&block.triples, lang, session.model.predicate_nodes)?;
        let generation = model::generate(&store, &vocab, &graph, &session)
            .map_err(CliError::from)?;

        if opts.jsonl {
            let copies: Vec<serde_json::Value> = generation
                .copies
                .iter()
                .map(|c| {
                    serde_json::json!({
                        "position": c.target_position,
                        "node": c.source_node,
                        "surface": c.substituted,
                    })
                })
                .collect();
            let record = serde_json::json!({
                "text": generation.text,
                "score": generation.score,
                "copies": copies,
            });
            lines.push_str(&record.to_string());
            lines.push('\n');
        } else {
            lines.push_str(&generation.text);
            lines.push('\n');
        }

        if let Some(dir) = &opts.dump_attention {
            if let Some(dump) = &generation.attention_dump {
                let path = dir.join(format!("graph_{index:04}.attention.txt"));
                fs::write(&path, dump).map_err(CliError::io(&path))?;
            }
        }
    }
    fs::write(out, lines).map_err(CliError::io(out))?;
    manifest.record_output(out)?;
    Ok(manifest)
}

fn read_lines(path: &Path) -> Result<Vec<String>, CliError> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    Ok(text.lines().map(|l| l.to_string()).collect())
}

/// Scores a hypothesis file against a reference file (one segment per line)
/// and writes the JSON report. The optional CSV adds per-segment scores.
pub fn score(
    hyp_path: &Path,
    ref_path: &Path,
    out: &Path,
    per_segment: Option<&Path>,
) -> Result<(metrics::ScoreReport, RunManifest), CliError> {
    let hypotheses = read_lines(hyp_path)?;
    let references: Vec<Vec<String>> = read_lines(ref_path)?
        .into_iter()
        .map(|line| vec![line])
        .collect();
    let report = metrics::score(&hypotheses, &references)?;

    let json = serde_json::json!({
        "bleu": report.bleu,
        "chrfpp": report.chrfpp,
        // Reserved: needs external linguistic resources, never reported as 0.
        "meteor": serde_json::Value::Null,
        "precisions": report.precisions,
        "brevity_penalty": report.brevity_penalty,
        "hypothesis_length": report.hypothesis_length,
        "reference_length": report.reference_length,
        "smoothing": report.smoothing,
        "segments": report.per_segment_bleu.len(),
    });
    fs::write(out, serde_json::to_string_pretty(&json).unwrap() + "\n")
        .map_err(CliError::io(out))?;

    if let Some(csv_path) = per_segment {
        let mut csv = String::from("segment,bleu,chrfpp\n");
        for (i, (b, c)) in report
            .per_segment_bleu
            .iter()
            .zip(report.per_segment_chrfpp.iter())
            .enumerate()
        {
            csv.push_str(&format!("{i},{b:.6},{c:.6}\n"));
        }
        fs::write(csv_path, csv).map_err(CliError::io(csv_path))?;
    }

    let mut manifest = RunManifest::new("score", 0, String::new());
    manifest.record_input(hyp_path)?;
    manifest.record_input(ref_path)?;
    manifest.record_output(out)?;
    Ok((report, manifest))
}

/// Deterministic reification dump of every block in the input file.
pub fn reify_dump(input: &Path, mode: PredicateNodes) -> Result<String, CliError> {
    let blocks = read_corpus(input)?;
    let mut out = String::new();
    for (i, block) in blocks.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        let graph: ReifiedGraph = reify(&block.triples, block.lang, mode)?;
        out.push_str(&graph.dump());
    }
    Ok(out)
}
