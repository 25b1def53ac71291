//! The corpus file format and seeded k-fold splitting.
//!
//! A file is a sequence of blank-line-delimited blocks. Each block starts
//! with `lang=<CODE>`, holds one triple per line (`subject | predicate |
//! object`), and may end with a `text=<reference>` line carrying the target
//! sentence (training/dev/test files have it; generation inputs do not).

use std::fs;
use std::path::Path;

use nabu_core::graph::{parse_triples, Triple};
use nabu_core::LanguageTag;

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct CorpusBlock {
    pub lang: LanguageTag,
    pub triples: Vec<Triple>,
    pub text: Option<String>,
}

pub fn parse_corpus(source: &str, path: &Path) -> Result<Vec<CorpusBlock>, CliError> {
    let corpus_err = |line: usize, detail: &str| CliError::Corpus {
        path: path.to_path_buf(),
        detail: format!("line {line}: {detail}"),
    };

    let mut blocks = Vec::new();
    let mut lang: Option<LanguageTag> = None;
    let mut triple_lines: Vec<(usize, String)> = Vec::new();
    let mut text: Option<String> = None;
    let mut block_start = 0usize;

    let mut flush = |lang: &mut Option<LanguageTag>,
                     triple_lines: &mut Vec<(usize, String)>,
                     text: &mut Option<String>,
                     block_start: usize|
     -> Result<(), CliError> {
        if lang.is_none() && triple_lines.is_empty() && text.is_none() {
            return Ok(());
        }
        let lang = lang.take().ok_or_else(|| CliError::Corpus {
            path: path.to_path_buf(),
            detail: format!("line {}: block is missing its lang= header", block_start + 1),
        })?;
        let mut triples = Vec::new();
        for (line_no, line) in triple_lines.drain(..) {
            match parse_triples(&line) {
                Ok(mut t) => triples.append(&mut t),
                Err(_) => {
                    return Err(CliError::Corpus {
                        path: path.to_path_buf(),
                        detail: format!("line {}: malformed triple record", line_no + 1),
                    })
                }
            }
        }
        blocks.push(CorpusBlock {
            lang,
            triples,
            text: text.take(),
        });
        Ok(())
    };

    for (line_no, raw) in source.lines().enumerate() {
        let line = raw.trim_end();
        if line.trim().is_empty() {
            flush(&mut lang, &mut triple_lines, &mut text, block_start)?;
            block_start = line_no + 1;
            continue;
        }
        if let Some(code) = line.strip_prefix("lang=") {
            if lang.is_some() {
                return Err(corpus_err(line_no + 1, "duplicate lang= header in block"));
            }
            lang = Some(
                LanguageTag::parse(code.trim())
                    .ok_or_else(|| corpus_err(line_no + 1, "unknown language code"))?,
            );
        } else if let Some(reference) = line.strip_prefix("text=") {
            if text.is_some() {
                return Err(corpus_err(line_no + 1, "duplicate text= line in block"));
            }
            text = Some(reference.to_string());
        } else {
            if lang.is_none() {
                return Err(corpus_err(line_no + 1, "block is missing its lang= header"));
            }
            if text.is_some() {
                return Err(corpus_err(line_no + 1, "triple after the text= line"));
            }
            triple_lines.push((line_no, line.to_string()));
        }
    }
    flush(&mut lang, &mut triple_lines, &mut text, block_start)?;
    Ok(blocks)
}

pub fn read_corpus(path: &Path) -> Result<Vec<CorpusBlock>, CliError> {
    let source = fs::read_to_string(path).map_err(CliError::io(path))?;
    parse_corpus(&source, path)
}

pub fn format_corpus(blocks: &[CorpusBlock]) -> String {
    let mut out = String::new();
    for (i, block) in blocks.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push_str(&format!("lang={}\n", block.lang.code()));
        for t in &block.triples {
            out.push_str(&format!("{} | {} | {}\n", t.subject, t.predicate, t.object));
        }
        if let Some(text) = &block.text {
            out.push_str(&format!("text={text}\n"));
        }
    }
    out
}

pub fn write_corpus(path: &Path, blocks: &[CorpusBlock]) -> Result<(), CliError> {
    fs::write(path, format_corpus(blocks)).map_err(CliError::io(path))
}

/// Seeded k-fold assignment: a shuffled permutation dealt round-robin into
/// `k` folds, so fold sizes differ by at most one example.
pub fn fold_assignment(count: usize, k: usize, seed: u64) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..count).collect();
    order.shuffle(&mut nabu_core::rng::stream(seed, "k-fold", 0));
    let mut fold = vec![0usize; count];
    for (position, &index) in order.iter().enumerate() {
        fold[index] = position % k;
    }
    fold
}

/// Train/dev/test split. When `has_test` the held-out file already exists
/// and only a dev fold is carved; otherwise fold 0 is the test set and
/// fold 1 the dev set.
pub fn split_blocks(
    blocks: Vec<CorpusBlock>,
    k: usize,
    seed: u64,
    has_test: bool,
) -> (Vec<CorpusBlock>, Vec<CorpusBlock>, Vec<CorpusBlock>) {
    let folds = fold_assignment(blocks.len(), k.max(2), seed);
    let mut train = Vec::new();
    let mut dev = Vec::new();
    let mut test = Vec::new();
    for (block, fold) in blocks.into_iter().zip(folds) {
        if !has_test && fold == 0 {
            test.push(block);
        } else if fold == usize::from(!has_test) {
            dev.push(block);
        } else {
            train.push(block);
        }
    }
    (train, dev, test)
}
