//! Corpus-level BLEU and chrF++.
//!
//! BLEU pools clipped n-gram counts (n = 1..4) across segments and applies
//! the brevity penalty `min(1, exp(1 − r/c))`; a zero precision with a
//! nonzero denominator is smoothed to 1e-9, and an order with no hypothesis
//! n-grams at all counts as precision 1 (nothing proposed, nothing wrong —
//! this keeps identical short corpora at 100). chrF++ averages precision and
//! recall over character n-grams (1..6, whitespace removed) plus word
//! n-grams (1..2) and takes the β = 2 F-score.

use alloc::string::{String, ToString};
use alloc::vec::Vec;
use core::fmt;

// Needed by the no_std build; std test builds resolve these inherently.
#[allow(unused_imports)]
use num_traits::Float;

pub const BLEU_SMOOTHING_EPSILON: f64 = 1e-9;
const CHRF_BETA: f64 = 2.0;
const CHAR_ORDERS: usize = 6;
const WORD_ORDERS: usize = 2;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum MetricsError {
    LengthMismatch { hypotheses: usize, references: usize },
    /// A segment has an empty reference set.
    NoReference { segment: usize },
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::LengthMismatch {
                hypotheses,
                references,
            } => write!(
                f,
                "hypothesis/reference count mismatch: {hypotheses} vs {references}"
            ),
            MetricsError::NoReference { segment } => {
                write!(f, "segment {segment} has no references")
            }
        }
    }
}

impl core::error::Error for MetricsError {}

/// Corpus scores plus the per-segment breakdown.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreReport {
    /// Corpus BLEU in [0, 100], pooled counts.
    pub bleu: f64,
    /// Corpus chrF++ in [0, 100], pooled counts.
    pub chrfpp: f64,
    /// Pooled modified n-gram precisions, n = 1..4.
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
    pub per_segment_bleu: Vec<f64>,
    pub per_segment_chrfpp: Vec<f64>,
    pub smoothing: &'static str,
}

/// Scores hypotheses against per-segment reference sets with both metrics.
pub fn score(hypotheses: &[String], references: &[Vec<String>]) -> Result<ScoreReport, MetricsError> {
    let bleu = bleu(hypotheses, references)?;
    let chrf = chrfpp(hypotheses, references)?;
    Ok(ScoreReport {
        bleu: bleu.score,
        chrfpp: chrf.score,
        precisions: bleu.precisions,
        brevity_penalty: bleu.brevity_penalty,
        hypothesis_length: bleu.hypothesis_length,
        reference_length: bleu.reference_length,
        per_segment_bleu: bleu.per_segment,
        per_segment_chrfpp: chrf.per_segment,
        smoothing: "add-epsilon-1e-9",
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BleuScore {
    pub score: f64,
    pub precisions: [f64; 4],
    pub brevity_penalty: f64,
    pub hypothesis_length: usize,
    pub reference_length: usize,
    pub per_segment: Vec<f64>,
}

/// Word tokenization for BLEU: punctuation detached, then whitespace split.
pub fn bleu_tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() * 2);
    for ch in text.chars() {
        if ch.is_alphanumeric() || ch.is_whitespace() {
            spaced.push(ch);
        } else {
            spaced.push(' ');
            spaced.push(ch);
            spaced.push(' ');
        }
    }
    spaced.split_whitespace().map(|w| w.to_string()).collect()
}

fn ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if tokens.len() < n {
        return Vec::new();
    }
    tokens.windows(n).map(|w| w.to_vec()).collect()
}

/// Counts each distinct n-gram of `grams` (linear scan; no hashing, so the
/// same code serves the naive recount oracle in the tests).
fn counted(grams: &[Vec<String>]) -> Vec<(Vec<String>, usize)> {
    let mut out: Vec<(Vec<String>, usize)> = Vec::new();
    for g in grams {
        match out.iter_mut().find(|(k, _)| k == g) {
            Some((_, c)) => *c += 1,
            None => out.push((g.clone(), 1)),
        }
    }
    out
}

struct SegmentBleuStats {
    matches: [usize; 4],
    totals: [usize; 4],
    hyp_len: usize,
    ref_len: usize,
}

fn segment_bleu_stats(hypothesis: &str, refs: &[String]) -> SegmentBleuStats {
    let hyp_tokens = bleu_tokenize(hypothesis);
    let ref_tokens: Vec<Vec<String>> = refs.iter().map(|r| bleu_tokenize(r)).collect();

    // Effective reference length: closest to the hypothesis length
    // (ties broken towards the shorter reference).
    let ref_len = ref_tokens
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| {
            let diff = (l as isize - hyp_tokens.len() as isize).abs();
            (diff, l)
        })
        .unwrap_or(0);

    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    for n in 1..=4 {
        let hyp_grams = counted(&ngrams(&hyp_tokens, n));
        totals[n - 1] = hyp_grams.iter().map(|(_, c)| c).sum();
        for (gram, count) in &hyp_grams {
            // Clip by the maximum count in any single reference.
            let max_ref = ref_tokens
                .iter()
                .map(|r| ngrams(r, n).iter().filter(|g| g == &gram).count())
                .max()
                .unwrap_or(0);
            matches[n - 1] += (*count).min(max_ref);
        }
    }
    SegmentBleuStats {
        matches,
        totals,
        hyp_len: hyp_tokens.len(),
        ref_len,
    }
}

fn bleu_from_stats(matches: &[usize; 4], totals: &[usize; 4], c: usize, r: usize) -> ([f64; 4], f64, f64) {
    let mut precisions = [0.0f64; 4];
    let mut log_sum = 0.0f64;
    for n in 0..4 {
        let p = if totals[n] == 0 {
            // No n-grams proposed at this order: vacuously precise.
            1.0
        } else if matches[n] == 0 {
            BLEU_SMOOTHING_EPSILON
        } else {
            matches[n] as f64 / totals[n] as f64
        };
        precisions[n] = p;
        log_sum += p.ln();
    }
    let bp = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let score = 100.0 * bp * (log_sum / 4.0).exp();
    (precisions, bp, score)
}

pub fn bleu(hypotheses: &[String], references: &[Vec<String>]) -> Result<BleuScore, MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let mut hyp_len = 0usize;
    let mut ref_len = 0usize;
    let mut per_segment = Vec::with_capacity(hypotheses.len());
    for (i, (hyp, refs)) in hypotheses.iter().zip(references.iter()).enumerate() {
        if refs.is_empty() {
            return Err(MetricsError::NoReference { segment: i });
        }
        let stats = segment_bleu_stats(hyp, refs);
        for n in 0..4 {
            matches[n] += stats.matches[n];
            totals[n] += stats.totals[n];
        }
        hyp_len += stats.hyp_len;
        ref_len += stats.ref_len;
        let (_, _, seg_score) =
            bleu_from_stats(&stats.matches, &stats.totals, stats.hyp_len, stats.ref_len);
        per_segment.push(seg_score);
    }
    let (precisions, bp, score) = bleu_from_stats(&matches, &totals, hyp_len, ref_len);
    Ok(BleuScore {
        score,
        precisions,
        brevity_penalty: bp,
        hypothesis_length: hyp_len,
        reference_length: ref_len,
        per_segment,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChrfScore {
    pub score: f64,
    pub per_segment: Vec<f64>,
}

/// Match/total statistics per n-gram order (6 character + 2 word orders).
#[derive(Clone, Default)]
struct ChrfStats {
    matches: [usize; CHAR_ORDERS + WORD_ORDERS],
    hyp_totals: [usize; CHAR_ORDERS + WORD_ORDERS],
    ref_totals: [usize; CHAR_ORDERS + WORD_ORDERS],
}

impl ChrfStats {
    fn add(&mut self, other: &ChrfStats) {
        for i in 0..CHAR_ORDERS + WORD_ORDERS {
            self.matches[i] += other.matches[i];
            self.hyp_totals[i] += other.hyp_totals[i];
            self.ref_totals[i] += other.ref_totals[i];
        }
    }

    fn f_score(&self) -> f64 {
        let mut precision_sum = 0.0;
        let mut recall_sum = 0.0;
        let mut included = 0usize;
        for i in 0..CHAR_ORDERS + WORD_ORDERS {
            if self.hyp_totals[i] == 0 && self.ref_totals[i] == 0 {
                continue;
            }
            included += 1;
            if self.hyp_totals[i] > 0 {
                precision_sum += self.matches[i] as f64 / self.hyp_totals[i] as f64;
            }
            if self.ref_totals[i] > 0 {
                recall_sum += self.matches[i] as f64 / self.ref_totals[i] as f64;
            }
        }
        if included == 0 {
            // Both sides empty at every order: identical (empty) strings.
            return 100.0;
        }
        let p = precision_sum / included as f64;
        let r = recall_sum / included as f64;
        let beta_sq = CHRF_BETA * CHRF_BETA;
        if p + r == 0.0 {
            return 0.0;
        }
        100.0 * (1.0 + beta_sq) * p * r / (beta_sq * p + r)
    }
}

fn char_ngrams(text: &str, n: usize) -> Vec<Vec<String>> {
    let chars: Vec<String> = text
        .chars()
        .filter(|c| !c.is_whitespace())
        .map(|c| c.to_string())
        .collect();
    ngrams(&chars, n)
}

fn word_ngrams(text: &str, n: usize) -> Vec<Vec<String>> {
    let words: Vec<String> = text.split_whitespace().map(|w| w.to_string()).collect();
    ngrams(&words, n)
}

fn chrf_pair_stats(hypothesis: &str, reference: &str) -> ChrfStats {
    let mut stats = ChrfStats::default();
    for order in 0..CHAR_ORDERS + WORD_ORDERS {
        let (hyp_grams, ref_grams) = if order < CHAR_ORDERS {
            (
                char_ngrams(hypothesis, order + 1),
                char_ngrams(reference, order + 1),
            )
        } else {
            (
                word_ngrams(hypothesis, order - CHAR_ORDERS + 1),
                word_ngrams(reference, order - CHAR_ORDERS + 1),
            )
        };
        stats.hyp_totals[order] = hyp_grams.len();
        stats.ref_totals[order] = ref_grams.len();
        let ref_counted = counted(&ref_grams);
        for (gram, count) in counted(&hyp_grams) {
            let in_ref = ref_counted
                .iter()
                .find(|(k, _)| k == &gram)
                .map_or(0, |(_, c)| *c);
            stats.matches[order] += count.min(in_ref);
        }
    }
    stats
}

pub fn chrfpp(hypotheses: &[String], references: &[Vec<String>]) -> Result<ChrfScore, MetricsError> {
    if hypotheses.len() != references.len() {
        return Err(MetricsError::LengthMismatch {
            hypotheses: hypotheses.len(),
            references: references.len(),
        });
    }
    let mut pooled = ChrfStats::default();
    let mut per_segment = Vec::with_capacity(hypotheses.len());
    for (i, (hyp, refs)) in hypotheses.iter().zip(references.iter()).enumerate() {
        if refs.is_empty() {
            return Err(MetricsError::NoReference { segment: i });
        }
        // Multi-reference: keep the best-scoring reference for this segment.
        let best = refs
            .iter()
            .map(|r| chrf_pair_stats(hyp, r))
            .max_by(|a, b| a.f_score().partial_cmp(&b.f_score()).unwrap())
            .unwrap();
        per_segment.push(best.f_score());
        pooled.add(&best);
    }
    Ok(ChrfScore {
        score: pooled.f_score(),
        per_segment,
    })
}
