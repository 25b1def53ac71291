use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use nabu_cli::error::CliError;
use nabu_cli::manifest::{default_manifest_path, RunManifest};
use nabu_cli::pipeline::{self, GenerateOpts};
use nabu_core::config::RunConfig;
use nabu_core::graph::PredicateNodes;
use nabu_core::LanguageTag;

/// Multilingual graph-to-text verbalizer: prepares corpora, trains the
/// tokenizer and model, generates text, and scores it.
#[derive(Parser)]
#[command(name = "nabu", version, about)]
struct Cli {
    /// Master seed; overrides the config file's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run configuration file (flat key=value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Manifest output path (default: next to the primary output).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Split raw (or synthesized) corpora into train/dev/test files.
    Prepare {
        /// Directory with per-language raw files (`eng.raw.nabu`, ...).
        #[arg(long, conflicts_with = "synthetic")]
        raw: Option<PathBuf>,
        /// Generate this many synthetic graphs per language instead.
        #[arg(long)]
        synthetic: Option<usize>,
        /// Output directory for the split corpus files.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the shared BPE vocabulary on corpus files.
    TrainTokenizer {
        /// Corpus files to harvest text and labels from.
        #[arg(long, required = true, num_args = 1..)]
        corpus: Vec<PathBuf>,
        /// Total vocabulary budget (reserved tokens included).
        #[arg(long)]
        vocab_size: Option<usize>,
        /// Vocabulary file to write.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a model and write its checkpoint.
    Train {
        /// Directory produced by `prepare`.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Vocabulary file from `train-tokenizer`.
        #[arg(long)]
        vocab: PathBuf,
        /// Checkpoint file to write.
        #[arg(long)]
        out: PathBuf,
        /// Training log CSV (default: `<out>.log.csv`).
        #[arg(long)]
        log: Option<PathBuf>,
    },
    /// Decode graphs from a triple file into text.
    Generate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        vocab: PathBuf,
        /// Input triple file (graph blocks; `text=` lines are ignored).
        #[arg(long)]
        input: PathBuf,
        /// Output text file, one line per graph.
        #[arg(long)]
        out: PathBuf,
        /// Override the output language for every graph.
        #[arg(long)]
        lang: Option<String>,
        /// Emit JSON lines with text, score, and copy records.
        #[arg(long)]
        jsonl: bool,
        /// Write per-graph attention matrices into this directory.
        #[arg(long)]
        dump_attention: Option<PathBuf>,
    },
    /// Score hypotheses against references (BLEU and chrF++).
    Score {
        #[arg(long)]
        hypotheses: PathBuf,
        #[arg(long)]
        references: PathBuf,
        /// JSON report path.
        #[arg(long)]
        out: PathBuf,
        /// Also write a per-segment CSV here.
        #[arg(long)]
        per_segment: Option<PathBuf>,
    },
    /// Print the reified graph of every block in a triple file.
    Reify {
        #[arg(long)]
        input: PathBuf,
        /// Write the dump here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Share one node per predicate label (reproduces the ambiguous
        /// topology) instead of occurrence-indexed nodes.
        #[arg(long)]
        shared_predicates: bool,
    },
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut cfg = match &cli.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(CliError::io(path))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.train.seed = seed;
    }
    Ok(cfg)
}

fn data_dir(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os("NABU_DATA_DIR").map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("data"))
}

fn write_manifest(
    manifest: &RunManifest,
    explicit: Option<&Path>,
    primary_output: &Path,
) -> Result<(), CliError> {
    let path = explicit
        .map(Path::to_path_buf)
        .unwrap_or_else(|| default_manifest_path(primary_output));
    manifest.write(&path)
}

fn run(cli: Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Prepare {
            raw,
            synthetic,
            out,
        } => {
            let cfg = load_config(&cli)?;
            cfg.validate()?;
            let manifest = pipeline::prepare(raw.as_deref(), *synthetic, out, &cfg)?;
            write_manifest(&manifest, cli.manifest.as_deref(), &out.join("prepare"))?;
            println!(
                "prepared {} language(s) into {}",
                cfg.session.languages.len(),
                out.display()
            );
        }
        Command::TrainTokenizer {
            corpus,
            vocab_size,
            out,
        } => {
            let cfg = load_config(&cli)?;
            let size = vocab_size.unwrap_or(cfg.session.model.vocab_size);
            let manifest = pipeline::train_tokenizer(corpus, size, out, cfg.train.seed)?;
            write_manifest(&manifest, cli.manifest.as_deref(), out)?;
            println!("wrote vocabulary to {}", out.display());
        }
        Command::Train {
            data,
            vocab,
            out,
            log,
        } => {
            let cfg = load_config(&cli)?;
            let data = data_dir(data.clone());
            let log = log
                .clone()
                .unwrap_or_else(|| out.with_extension("log.csv"));
            let report = pipeline::train(&cfg, &data, vocab, out, &log)?;
            write_manifest(&report.manifest, cli.manifest.as_deref(), out)?;
            println!(
                "trained {} epoch(s): loss {:.4}, token accuracy {:.3}",
                report.epochs_run, report.final_loss, report.final_accuracy
            );
        }
        Command::Generate {
            checkpoint,
            vocab,
            input,
            out,
            lang,
            jsonl,
            dump_attention,
        } => {
            let lang_override = match lang {
                Some(code) => Some(LanguageTag::parse(code).ok_or_else(|| {
                    CliError::Config(format!("unknown language code `{code}`"))
                })?),
                None => None,
            };
            let opts = GenerateOpts {
                lang_override,
                jsonl: *jsonl,
                dump_attention: dump_attention.clone(),
            };
            let manifest = pipeline::generate(checkpoint, vocab, input, out, &opts)?;
            write_manifest(&manifest, cli.manifest.as_deref(), out)?;
            println!("wrote generations to {}", out.display());
        }
        Command::Score {
            hypotheses,
            references,
            out,
            per_segment,
        } => {
            let (report, manifest) =
                pipeline::score(hypotheses, references, out, per_segment.as_deref())?;
            write_manifest(&manifest, cli.manifest.as_deref(), out)?;
            println!("BLEU {:.2} chrF++ {:.2}", report.bleu, report.chrfpp);
        }
        Command::Reify {
            input,
            out,
            shared_predicates,
        } => {
            let mode = if *shared_predicates {
                PredicateNodes::Shared
            } else {
                PredicateNodes::OccurrenceIndexed
            };
            let dump = pipeline::reify_dump(input, mode)?;
            match out {
                Some(path) => {
                    std::fs::write(path, &dump).map_err(CliError::io(path))?;
                    let mut manifest = RunManifest::new("reify", 0, String::new());
                    manifest.record_input(input)?;
                    manifest.record_output(path)?;
                    write_manifest(&manifest, cli.manifest.as_deref(), path)?;
                }
                None => print!("{dump}"),
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
