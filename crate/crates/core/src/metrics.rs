//! BLEU with clipped n-gram precision and brevity penalty, and character
//! n-gram F-score.
//!
//! Orders with no candidate n-grams at all (candidates shorter than `n`)
//! are left out of the geometric mean and the remaining weights are
//! renormalized, so a short exact match still scores 1.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use crate::error::{Error, Result};

pub const DEFAULT_MAX_N: usize = 4;
pub const CHRF_MAX_N: usize = 6;
pub const CHRF_BETA: f64 = 2.0;

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub enum Smoothing {
    #[default]
    None,
    /// Adds `k` to matches and totals for orders 2 and above.
    AddK(f64),
}

fn ngram_counts<T: Eq + Hash>(tokens: &[T], n: usize) -> HashMap<&[T], usize> {
    let mut counts = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w).or_insert(0) += 1;
        }
    }
    counts
}

/// Clipped matches and total candidate n-grams of order `n`. Each
/// candidate n-gram is credited at most as often as it appears in any one
/// reference.
pub fn modified_ngram_precision<T: Eq + Hash>(
    candidate: &[T],
    references: &[Vec<T>],
    n: usize,
) -> (usize, usize) {
    if n == 0 {
        return (0, 0);
    }
    let cand = ngram_counts(candidate, n);
    let total = (candidate.len() + 1).saturating_sub(n);
    let refs: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
    let matches = cand
        .iter()
        .map(|(g, &c)| {
            let max_ref = refs.iter().map(|r| r.get(g).copied().unwrap_or(0)).max().unwrap_or(0);
            c.min(max_ref)
        })
        .sum();
    (matches, total)
}

/// Reference length closest to `c`; the shorter one wins a tie.
fn closest_ref_len<T>(c: usize, references: &[Vec<T>]) -> usize {
    references
        .iter()
        .map(Vec::len)
        .min_by_key(|&r| (r.abs_diff(c), r))
        .unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq)]
pub struct BleuReport {
    /// Modified precision per order, `matches / totals` (0 when no n-grams).
    pub precisions: Vec<f64>,
    pub matches: Vec<usize>,
    pub totals: Vec<usize>,
    pub brevity_penalty: f64,
    pub score: f64,
    pub candidate_length: usize,
    pub reference_length: usize,
    /// Set when the candidate (or every candidate) was empty.
    pub empty_candidate: bool,
    /// Per-sentence scores; a single entry for sentence BLEU.
    pub sentence_scores: Vec<f64>,
}

fn combine(
    matches: Vec<usize>,
    totals: Vec<usize>,
    c: usize,
    r: usize,
    smoothing: Smoothing,
) -> BleuReport {
    let precisions: Vec<f64> = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| if t == 0 { 0.0 } else { m as f64 / t as f64 })
        .collect();
    let brevity_penalty = if c == 0 {
        0.0
    } else if c < r {
        (1.0 - r as f64 / c as f64).exp()
    } else {
        1.0
    };
    let mut log_sum = 0.0;
    let mut orders = 0usize;
    let mut zero = c == 0;
    for (i, (&m, &t)) in matches.iter().zip(&totals).enumerate() {
        if t == 0 {
            continue;
        }
        let p = match smoothing {
            Smoothing::AddK(k) if i > 0 => (m as f64 + k) / (t as f64 + k),
            _ => m as f64 / t as f64,
        };
        if p == 0.0 {
            zero = true;
            break;
        }
        log_sum += p.ln();
        orders += 1;
    }
    let score = if zero || orders == 0 {
        0.0
    } else {
        (brevity_penalty * (log_sum / orders as f64).exp()).min(1.0)
    };
    BleuReport {
        precisions,
        matches,
        totals,
        brevity_penalty,
        score,
        candidate_length: c,
        reference_length: r,
        empty_candidate: c == 0,
        sentence_scores: vec![score],
    }
}

fn counts<T: Eq + Hash>(candidate: &[T], references: &[Vec<T>], max_n: usize) -> (Vec<usize>, Vec<usize>) {
    (1..=max_n)
        .map(|n| modified_ngram_precision(candidate, references, n))
        .unzip()
}

pub fn sentence_bleu<T: Eq + Hash>(
    candidate: &[T],
    references: &[Vec<T>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<BleuReport> {
    if references.is_empty() {
        return Err(Error::Contract("BLEU needs at least one reference".into()));
    }
    if max_n == 0 {
        return Err(Error::Config("BLEU max_n must be at least 1".into()));
    }
    let (matches, totals) = counts(candidate, references, max_n);
    let c = candidate.len();
    Ok(combine(matches, totals, c, closest_ref_len(c, references), smoothing))
}

/// Corpus BLEU from counts pooled over all sentences.
pub fn corpus_bleu<T: Eq + Hash>(
    candidates: &[Vec<T>],
    references: &[Vec<Vec<T>>],
    max_n: usize,
    smoothing: Smoothing,
) -> Result<BleuReport> {
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates but {} reference sets",
            candidates.len(),
            references.len()
        )));
    }
    if max_n == 0 {
        return Err(Error::Config("BLEU max_n must be at least 1".into()));
    }
    let mut matches = vec![0; max_n];
    let mut totals = vec![0; max_n];
    let (mut c, mut r) = (0, 0);
    let mut sentence_scores = Vec::with_capacity(candidates.len());
    for (cand, refs) in candidates.iter().zip(references) {
        if refs.is_empty() {
            return Err(Error::Contract("BLEU needs at least one reference".into()));
        }
        let (m, t) = counts(cand, refs, max_n);
        let rl = closest_ref_len(cand.len(), refs);
        for n in 0..max_n {
            matches[n] += m[n];
            totals[n] += t[n];
        }
        c += cand.len();
        r += rl;
        sentence_scores.push(combine(m, t, cand.len(), rl, smoothing).score);
    }
    let mut report = combine(matches, totals, c, r, smoothing);
    report.sentence_scores = sentence_scores;
    Ok(report)
}

/// Character n-gram match statistics for orders `1..=CHRF_MAX_N`:
/// `(matches, candidate total, reference total)` per order.
fn char_stats(candidate: &str, reference: &str) -> Vec<(usize, usize, usize)> {
    let cand: Vec<char> = candidate.chars().filter(|c| !c.is_whitespace()).collect();
    let refr: Vec<char> = reference.chars().filter(|c| !c.is_whitespace()).collect();
    (1..=CHRF_MAX_N)
        .map(|n| {
            let cc = ngram_counts(&cand, n);
            let rc = ngram_counts(&refr, n);
            let m = cc
                .iter()
                .map(|(g, &k)| k.min(rc.get(g).copied().unwrap_or(0)))
                .sum();
            (m, cand.len().saturating_sub(n - 1), refr.len().saturating_sub(n - 1))
        })
        .collect()
}

/// Averages precision and recall over orders present on both sides, then
/// takes F-beta.
fn chrf_from_stats(stats: &[(usize, usize, usize)], beta: f64) -> f64 {
    let mut p = 0.0;
    let mut r = 0.0;
    let mut orders = 0;
    for &(m, tc, tr) in stats {
        if tc == 0 || tr == 0 {
            continue;
        }
        p += m as f64 / tc as f64;
        r += m as f64 / tr as f64;
        orders += 1;
    }
    if orders == 0 {
        return 0.0;
    }
    p /= orders as f64;
    r /= orders as f64;
    let b2 = beta * beta;
    if p + r == 0.0 {
        0.0
    } else {
        (1.0 + b2) * p * r / (b2 * p + r)
    }
}

/// Character F-score over n-gram orders 1 to 6, whitespace ignored.
pub fn char_fscore(candidate: &str, reference: &str, beta: f64) -> f64 {
    chrf_from_stats(&char_stats(candidate, reference), beta)
}

/// chrF from n-gram statistics pooled over the corpus.
pub fn corpus_char_fscore(candidates: &[String], references: &[String], beta: f64) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::Contract(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut pooled = vec![(0, 0, 0); CHRF_MAX_N];
    for (c, r) in candidates.iter().zip(references) {
        for (acc, s) in pooled.iter_mut().zip(char_stats(c, r)) {
            acc.0 += s.0;
            acc.1 += s.1;
            acc.2 += s.2;
        }
    }
    Ok(chrf_from_stats(&pooled, beta))
}

/// Scores of a decoded test set.
#[derive(Clone, Debug, PartialEq)]
pub struct EvaluationReport {
    pub bleu: BleuReport,
    pub chrf: f64,
    pub sentence_chrf: Vec<f64>,
}

pub const REPORT_CSV_HEADER: &str = "sentence,bleu,chrf";
pub const HISTOGRAM_CSV_HEADER: &str = "bucket_start,bucket_end,count";

impl EvaluationReport {
    /// Corpus BLEU-4 without smoothing, pooled chrF, and per-sentence
    /// scores of tokenized candidates against single references.
    pub fn compute(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<Self> {
        let refs: Vec<Vec<Vec<String>>> = references.iter().map(|r| vec![r.clone()]).collect();
        let bleu = corpus_bleu(candidates, &refs, DEFAULT_MAX_N, Smoothing::None)?;
        let join = |v: &[Vec<String>]| v.iter().map(|s| s.join(" ")).collect::<Vec<_>>();
        let (cj, rj) = (join(candidates), join(references));
        let chrf = corpus_char_fscore(&cj, &rj, CHRF_BETA)?;
        let sentence_chrf = cj.iter().zip(&rj).map(|(c, r)| char_fscore(c, r, CHRF_BETA)).collect();
        Ok(EvaluationReport {
            bleu,
            chrf,
            sentence_chrf,
        })
    }

    /// Per-sentence rows, a blank line, then a `metric,value` summary.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(REPORT_CSV_HEADER);
        out.push('\n');
        for (i, (b, c)) in self.bleu.sentence_scores.iter().zip(&self.sentence_chrf).enumerate() {
            writeln!(out, "{},{b},{c}", i + 1).expect("writing to a String");
        }
        out.push_str("\nmetric,value\n");
        for (n, p) in self.bleu.precisions.iter().enumerate() {
            writeln!(out, "p{},{p}", n + 1).expect("writing to a String");
        }
        writeln!(out, "bp,{}", self.bleu.brevity_penalty).expect("writing to a String");
        writeln!(out, "bleu,{}", self.bleu.score).expect("writing to a String");
        writeln!(out, "chrf,{}", self.chrf).expect("writing to a String");
        out
    }

    /// Sentence-BLEU distribution in `buckets` equal bins over [0, 1].
    pub fn histogram(&self, buckets: usize) -> Vec<(f64, f64, usize)> {
        let buckets = buckets.max(1);
        let mut counts = vec![0; buckets];
        for &s in &self.bleu.sentence_scores {
            let k = ((s * buckets as f64) as usize).min(buckets - 1);
            counts[k] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(k, n)| (k as f64 / buckets as f64, (k + 1) as f64 / buckets as f64, n))
            .collect()
    }

    pub fn histogram_csv(&self, buckets: usize) -> String {
        let mut out = String::from(HISTOGRAM_CSV_HEADER);
        out.push('\n');
        for (a, b, n) in self.histogram(buckets) {
            writeln!(out, "{a},{b},{n}").expect("writing to a String");
        }
        out
    }

    /// Reads the summary block of [`to_csv`](Self::to_csv) output.
    pub fn parse_summary(text: &str) -> Result<HashMap<String, f64>> {
        let (_, summary) = text
            .split_once("\nmetric,value\n")
            .ok_or_else(|| Error::Integrity("report has no summary block".into()))?;
        summary
            .lines()
            .filter(|l| !l.is_empty())
            .map(|l| {
                let (k, v) = l
                    .split_once(',')
                    .ok_or_else(|| Error::Integrity(format!("bad summary row `{l}`")))?;
                let v = v.parse().map_err(|_| Error::Integrity(format!("bad summary row `{l}`")))?;
                Ok((k.to_string(), v))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    #[test]
    fn clipping_example() {
        assert_eq!(modified_ngram_precision(&toks("the the the"), &[toks("the cat")], 1), (1, 3));
    }

    #[test]
    fn identity_and_disjoint() {
        let x = toks("a b c d e");
        for n in 1..=5 {
            let (m, t) = modified_ngram_precision(&x, std::slice::from_ref(&x), n);
            assert_eq!(m, t);
        }
        assert_eq!(modified_ngram_precision(&x, &[toks("f g h")], 1).0, 0);
        assert_eq!(modified_ngram_precision(&x, std::slice::from_ref(&x), 6), (0, 0));
    }

    #[test]
    fn perfect_and_zero_scores() {
        let x = toks("ọ dị mma");
        assert_eq!(sentence_bleu(&x, std::slice::from_ref(&x), 4, Smoothing::None).unwrap().score, 1.0);
        assert_eq!(sentence_bleu(&x, &[toks("p q r")], 4, Smoothing::None).unwrap().score, 0.0);
    }

    #[test]
    fn brevity_penalty_on_prefix() {
        let r = sentence_bleu(&toks("a b"), &[toks("a b c d")], 4, Smoothing::None).unwrap();
        assert!((r.brevity_penalty - (-1f64).exp()).abs() < 1e-15);
        assert!((r.score - (-1f64).exp()).abs() < 1e-15);
    }

    #[test]
    fn empty_candidate_is_flagged() {
        let r = sentence_bleu::<String>(&[], &[toks("a")], 4, Smoothing::None).unwrap();
        assert!(r.empty_candidate);
        assert_eq!(r.score, 0.0);
        assert!(sentence_bleu(&toks("a"), &[], 4, Smoothing::None).is_err());
    }

    #[test]
    fn smoothing_rescues_missing_higher_orders() {
        let cand = toks("a b x c d");
        let refs = [toks("a b y c d")];
        assert_eq!(sentence_bleu(&cand, &refs, 4, Smoothing::None).unwrap().score, 0.0);
        let s = sentence_bleu(&cand, &refs, 4, Smoothing::AddK(1.0)).unwrap().score;
        // p1 = 4/5, p2 = 3/5, p3 = 1/4, p4 = 1/3 after add-one on n >= 2
        let expected = (0.8f64 * 0.6 * 0.25 * (1.0 / 3.0)).powf(0.25);
        assert!((s - expected).abs() < 1e-15);
    }

    #[test]
    fn corpus_checks() {
        let c = vec![toks("a b c"), toks("d e")];
        let r: Vec<Vec<Vec<String>>> = c.iter().map(|x| vec![x.clone()]).collect();
        assert_eq!(corpus_bleu(&c, &r, 4, Smoothing::None).unwrap().score, 1.0);
        assert!(matches!(corpus_bleu(&c, &r[..1], 4, Smoothing::None), Err(Error::Contract(_))));
        let one = corpus_bleu(&c[..1], &[vec![toks("a b d")]], 4, Smoothing::None).unwrap();
        let sent = sentence_bleu(&c[0], &[toks("a b d")], 4, Smoothing::None).unwrap();
        assert_eq!(one.score, sent.score);
    }

    #[test]
    fn chrf_examples() {
        assert_eq!(char_fscore("ụlọ akwụkwọ", "ụlọ akwụkwọ", 2.0), 1.0);
        assert_eq!(char_fscore("abc", "xyz", 2.0), 0.0);
        assert!((char_fscore("abc", "abd", 2.0) - 7.0 / 18.0).abs() < 1e-15);
    }

    #[test]
    fn report_layout() {
        let c = vec![toks("a b c d"), toks("x")];
        let r = vec![toks("a b c d"), toks("y")];
        let rep = EvaluationReport::compute(&c, &r).unwrap();
        let csv = rep.to_csv();
        let summary = EvaluationReport::parse_summary(&csv).unwrap();
        for k in ["p1", "p2", "p3", "p4", "bp", "bleu", "chrf"] {
            assert!(summary.contains_key(k), "{k}");
        }
        let h = rep.histogram(10);
        assert_eq!(h.iter().map(|b| b.2).sum::<usize>(), 2);
        assert_eq!((h[0].2, h[9].2), (1, 1));
    }
}
