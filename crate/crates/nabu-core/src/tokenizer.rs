//! BPE subword tokenizer shared across all target languages.
//!
//! Words are split on whitespace and each word becomes the symbol sequence
//! `[▁, c1, c2, ...]` with the boundary marker as a standalone symbol, so
//! merges can absorb it (`▁the`) exactly like any character. Training
//! greedily merges the most frequent adjacent pair until the target size is
//! reached or no pair occurs at least twice; ties break on the
//! lexicographically smallest merged string (then left part). Decoding is
//! total: unknown characters map to UNK.

use alloc::borrow::ToOwned;
use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

use crate::graph::LanguageTag;

pub const PAD: u32 = 0;
pub const BOS: u32 = 1;
pub const EOS: u32 = 2;
pub const UNK: u32 = 3;
pub const SEP: u32 = 4;

/// Named control tokens, in fixed id order, followed by the structural
/// word-boundary marker at id 8.
pub const SPECIALS: [&str; 8] = [
    "⟨PAD⟩", "⟨BOS⟩", "⟨EOS⟩", "⟨UNK⟩", "⟨SEP⟩", "⟨ENG⟩", "⟨GER⟩", "⟨RUS⟩",
];

pub const MARKER: &str = "▁";
pub const MARKER_ID: u32 = 8;

/// First id available to corpus-derived tokens.
pub const RESERVED: usize = SPECIALS.len() + 1;

pub fn lang_token_id(tag: LanguageTag) -> u32 {
    match tag {
        LanguageTag::Eng => 5,
        LanguageTag::Ger => 6,
        LanguageTag::Rus => 7,
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TokenizerError {
    /// The reserved tokens plus the corpus alphabet already exceed the
    /// requested vocabulary size.
    CorpusTooSmall { needed: usize, target: usize },
    /// The vocabulary file text is malformed.
    BadVocabFile(&'static str),
}

impl fmt::Display for TokenizerError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TokenizerError::CorpusTooSmall { needed, target } => write!(
                f,
                "corpus alphabet needs {needed} vocabulary slots but the target size is {target}"
            ),
            TokenizerError::BadVocabFile(what) => write!(f, "bad vocabulary file: {what}"),
        }
    }
}

impl core::error::Error for TokenizerError {}

/// Bidirectional id↔token map plus the ordered merge list.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: BTreeMap<String, u32>,
    merges: Vec<(String, String)>,
}

impl Vocabulary {
    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    fn from_parts(alphabet: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        tokens.push(MARKER.to_string());
        tokens.extend(alphabet);
        for (a, b) in &merges {
            tokens.push(alloc::format!("{a}{b}"));
        }
        let mut ids = BTreeMap::new();
        for (i, t) in tokens.iter().enumerate() {
            // Keep the lowest id when two merges produce the same string.
            ids.entry(t.clone()).or_insert(i as u32);
        }
        Vocabulary {
            tokens,
            ids,
            merges,
        }
    }

    /// Segments one whitespace-delimited word into symbol strings.
    fn word_symbols(&self, word: &str) -> Vec<String> {
        let mut symbols: Vec<String> = Vec::with_capacity(word.chars().count() + 1);
        symbols.push(MARKER.to_string());
        for ch in word.chars() {
            symbols.push(ch.to_string());
        }
        for (a, b) in &self.merges {
            let mut i = 0;
            while i + 1 < symbols.len() {
                if &symbols[i] == a && &symbols[i + 1] == b {
                    let merged = alloc::format!("{a}{b}");
                    symbols[i] = merged;
                    symbols.remove(i + 1);
                    // Greedy left-to-right: continue after the merged symbol.
                    i += 1;
                } else {
                    i += 1;
                }
            }
        }
        symbols
    }

    /// Encodes arbitrary UTF-8 text. Symbols outside the vocabulary (unknown
    /// characters) map to UNK.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for word in text.split_whitespace() {
            for symbol in self.word_symbols(word) {
                out.push(self.ids.get(&symbol).copied().unwrap_or(UNK));
            }
        }
        out
    }

    /// Inverse of `encode` for text whose characters are all in the
    /// alphabet (single-spaced). UNK decodes to the visible `⟨UNK⟩` marker
    /// so the copy mechanism can substitute it.
    pub fn decode(&self, ids: &[u32]) -> String {
        let mut joined = String::new();
        for &id in ids {
            if id == UNK {
                joined.push_str("⟨UNK⟩");
            } else if (id as usize) < self.tokens.len() {
                joined.push_str(&self.tokens[id as usize]);
            }
        }
        let with_spaces: String = joined
            .chars()
            .map(|c| if c == '▁' { ' ' } else { c })
            .collect();
        with_spaces.trim_start().to_owned()
    }

    /// Serializes to the order-sensitive text format:
    /// `[specials]`, `[alphabet]`, `[merges]` sections, one entry per line.
    pub fn to_text(&self) -> String {
        let mut out = String::from("[specials]\n");
        for t in &self.tokens[..RESERVED] {
            out.push_str(t);
            out.push('\n');
        }
        out.push_str("[alphabet]\n");
        let alphabet_end = self.tokens.len() - self.merges.len();
        for t in &self.tokens[RESERVED..alphabet_end] {
            out.push_str(t);
            out.push('\n');
        }
        out.push_str("[merges]\n");
        for (a, b) in &self.merges {
            out.push_str(a);
            out.push(' ');
            out.push_str(b);
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, TokenizerError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Specials,
            Alphabet,
            Merges,
        }
        let mut section = Section::None;
        let mut specials: Vec<String> = Vec::new();
        let mut alphabet: Vec<String> = Vec::new();
        let mut merges: Vec<(String, String)> = Vec::new();
        for line in text.lines() {
            match line {
                "[specials]" => section = Section::Specials,
                "[alphabet]" => section = Section::Alphabet,
                "[merges]" => section = Section::Merges,
                "" => continue,
                entry => match section {
                    Section::None => return Err(TokenizerError::BadVocabFile("entry before section header")),
                    Section::Specials => specials.push(entry.to_string()),
                    Section::Alphabet => alphabet.push(entry.to_string()),
                    Section::Merges => {
                        let (a, b) = entry
                            .split_once(' ')
                            .ok_or(TokenizerError::BadVocabFile("merge line needs two parts"))?;
                        merges.push((a.to_string(), b.to_string()));
                    }
                },
            }
        }
        let expected: Vec<String> = SPECIALS
            .iter()
            .map(|s| s.to_string())
            .chain(core::iter::once(MARKER.to_string()))
            .collect();
        if specials != expected {
            return Err(TokenizerError::BadVocabFile("specials section mismatch"));
        }
        Ok(Vocabulary::from_parts(alphabet, merges))
    }
}

/// Trains a BPE vocabulary on corpus lines.
///
/// `target_size` is the total vocabulary budget including the reserved
/// tokens and the corpus alphabet.
pub fn train_bpe<'a, I>(corpus: I, target_size: usize) -> Result<Vocabulary, TokenizerError>
where
    I: IntoIterator<Item = &'a str>,
{
    // Word-type frequency map (deterministic order).
    let mut word_freq: BTreeMap<String, u64> = BTreeMap::new();
    for line in corpus {
        for word in line.split_whitespace() {
            *word_freq.entry(word.to_string()).or_insert(0) += 1;
        }
    }

    let mut alphabet: Vec<String> = word_freq
        .keys()
        .flat_map(|w| w.chars())
        .map(|c| c.to_string())
        .collect();
    alphabet.sort_unstable();
    alphabet.dedup();

    let needed = RESERVED + alphabet.len();
    if needed > target_size {
        return Err(TokenizerError::CorpusTooSmall {
            needed,
            target: target_size,
        });
    }

    // Working symbol sequences, one per word type.
    let mut words: Vec<(Vec<String>, u64)> = word_freq
        .iter()
        .map(|(w, &f)| {
            let mut symbols = Vec::with_capacity(w.chars().count() + 1);
            symbols.push(MARKER.to_string());
            symbols.extend(w.chars().map(|c| c.to_string()));
            (symbols, f)
        })
        .collect();

    let mut merges: Vec<(String, String)> = Vec::new();
    while RESERVED + alphabet.len() + merges.len() < target_size {
        let mut pair_counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (symbols, freq) in &words {
            for window in symbols.windows(2) {
                *pair_counts
                    .entry((window[0].clone(), window[1].clone()))
                    .or_insert(0) += freq;
            }
        }
        // Highest frequency wins; ties break on the smallest merged string,
        // then the smallest left part.
        let best = pair_counts
            .iter()
            .filter(|(_, &c)| c >= 2)
            .map(|((a, b), &c)| (c, alloc::format!("{a}{b}"), a.clone(), b.clone()))
            .min_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));
        let Some((_, merged, a, b)) = best else {
            break;
        };
        for (symbols, _) in &mut words {
            let mut i = 0;
            while i + 1 < symbols.len() {
                if symbols[i] == a && symbols[i + 1] == b {
                    symbols[i] = merged.clone();
                    symbols.remove(i + 1);
                    i += 1;
                } else {
                    i += 1;
                }
            }
        }
        merges.push((a, b));
    }

    Ok(Vocabulary::from_parts(alphabet, merges))
}
