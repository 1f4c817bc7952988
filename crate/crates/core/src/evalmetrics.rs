//! ROUGE-1/2/L and corpus BLEU-4 over token sequences.
//!
//! These are plain reimplementations: no stemming, no stopword removal,
//! F-measure with beta 1, BLEU without smoothing. Absolute values are not
//! comparable to the official scripts.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::hash::Hash;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct PrfScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl PrfScore {
    pub fn new(precision: f64, recall: f64) -> Self {
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        Self {
            precision,
            recall,
            f1,
        }
    }

    fn from_overlap(overlap: usize, cand: usize, reference: usize) -> Self {
        let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
        Self::new(ratio(overlap, cand), ratio(overlap, reference))
    }
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

/// Matches of candidate n-grams against the reference, each reference
/// n-gram usable as often as it occurs there.
fn clipped_overlap<T: Eq + Hash>(cand: &[T], reference: &[T], n: usize) -> (usize, usize, usize) {
    let c = ngram_counts(cand, n);
    let r = ngram_counts(reference, n);
    let overlap = c
        .iter()
        .map(|(g, &k)| k.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    (
        overlap,
        cand.len().saturating_sub(n - 1).min(cand.len()),
        reference.len().saturating_sub(n - 1).min(reference.len()),
    )
}

/// ROUGE-N. `n == 0` yields zeros.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> PrfScore {
    if n == 0 {
        return PrfScore::default();
    }
    let (overlap, c, r) = clipped_overlap(candidate, reference, n);
    PrfScore::from_overlap(overlap, c, r)
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: Eq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<T: Eq>(candidate: &[T], reference: &[T]) -> PrfScore {
    PrfScore::from_overlap(lcs_len(candidate, reference), candidate.len(), reference.len())
}

/// Corpus BLEU-4 with one reference per candidate. Zero as soon as any
/// n-gram order has no match.
pub fn bleu4<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<f64> {
    if candidates.len() != references.len() {
        return Err(Error::InvalidArgument(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    let mut matches = [0usize; 4];
    let mut totals = [0usize; 4];
    let (mut c_len, mut r_len) = (0usize, 0usize);
    for (c, r) in candidates.iter().zip(references) {
        c_len += c.len();
        r_len += r.len();
        for n in 1..=4 {
            let (o, ct, _) = clipped_overlap(c, r, n);
            matches[n - 1] += o;
            totals[n - 1] += ct;
        }
    }
    if c_len == 0 || matches.iter().any(|&m| m == 0) {
        return Ok(0.0);
    }
    let log_p: f64 = matches
        .iter()
        .zip(&totals)
        .map(|(&m, &t)| (m as f64 / t as f64).ln())
        .sum::<f64>()
        / 4.0;
    let bp = if c_len > r_len {
        1.0
    } else {
        (1.0 - r_len as f64 / c_len as f64).exp()
    };
    Ok(bp * log_p.exp())
}

/// Sentence-averaged ROUGE scores plus corpus BLEU-4.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalReport {
    pub rouge1: PrfScore,
    pub rouge2: PrfScore,
    pub rouge_l: PrfScore,
    pub bleu4: f64,
}

pub fn evaluate<T: Eq + Hash>(candidates: &[Vec<T>], references: &[Vec<T>]) -> Result<EvalReport> {
    let bleu = bleu4(candidates, references)?;
    if candidates.is_empty() {
        return Err(Error::EmptyInput("nothing to evaluate".into()));
    }
    let k = candidates.len() as f64;
    let mut sums = [[0.0; 3]; 3];
    for (c, r) in candidates.iter().zip(references) {
        for (acc, s) in sums.iter_mut().zip([rouge_n(c, r, 1), rouge_n(c, r, 2), rouge_l(c, r)]) {
            acc[0] += s.precision;
            acc[1] += s.recall;
            acc[2] += s.f1;
        }
    }
    let mean = |a: [f64; 3]| PrfScore {
        precision: a[0] / k,
        recall: a[1] / k,
        f1: a[2] / k,
    };
    Ok(EvalReport {
        rouge1: mean(sums[0]),
        rouge2: mean(sums[1]),
        rouge_l: mean(sums[2]),
        bleu4: bleu,
    })
}

impl EvalReport {
    /// `metric<TAB>precision<TAB>recall<TAB>f1` per ROUGE variant, then `BLEU-4<TAB>score`.
    pub fn to_report(&self) -> String {
        let mut out = String::new();
        for (name, s) in [
            ("ROUGE-1", self.rouge1),
            ("ROUGE-2", self.rouge2),
            ("ROUGE-L", self.rouge_l),
        ] {
            let _ = writeln!(out, "{name}\t{:.6}\t{:.6}\t{:.6}", s.precision, s.recall, s.f1);
        }
        let _ = writeln!(out, "BLEU-4\t{:.6}", self.bleu4);
        out
    }
}
