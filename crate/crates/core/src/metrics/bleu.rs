use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use super::{check_aligned, tokenize};
use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics of one or more sentences.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BleuStats {
    /// clipped n-gram matches, order 1..=4
    pub matches: [usize; MAX_ORDER],
    /// hypothesis n-gram counts, order 1..=4
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl std::ops::AddAssign for BleuStats {
    fn add_assign(&mut self, o: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += o.matches[n];
            self.totals[n] += o.totals[n];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct BleuScore {
    /// 0..=100
    pub score: f64,
    /// smoothed n-gram precisions as fractions
    pub precisions: [f64; MAX_ORDER],
    pub brevity_penalty: f64,
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuScore {
    pub fn from_score(score: f64) -> Self {
        Self { score, ..Default::default() }
    }
}

pub fn ngram_counts<T: std::hash::Hash + Eq + Clone>(tokens: &[T], n: usize) -> HashMap<Vec<T>, usize> {
    let mut counts = HashMap::new();
    if n == 0 || tokens.len() < n {
        return counts;
    }
    for w in tokens.windows(n) {
        *counts.entry(w.to_vec()).or_insert(0) += 1;
    }
    counts
}

/// Statistics of one tokenized hypothesis against its tokenized references.
pub fn bleu_stats(hyp: &[String], refs: &[Vec<String>]) -> BleuStats {
    let mut st = BleuStats { hyp_len: hyp.len(), ..Default::default() };
    // closest reference length, ties to the shorter
    st.ref_len = refs
        .iter()
        .map(|r| r.len())
        .min_by_key(|&l| ((l as i64 - hyp.len() as i64).abs(), l))
        .unwrap_or(0);
    for n in 1..=MAX_ORDER {
        let hc = ngram_counts(hyp, n);
        let mut max_ref: HashMap<&Vec<String>, usize> = HashMap::new();
        let ref_counts: Vec<_> = refs.iter().map(|r| ngram_counts(r, n)).collect();
        for rc in &ref_counts {
            for (g, &c) in rc {
                if hc.contains_key(g) {
                    let e = max_ref.entry(g).or_insert(0);
                    *e = (*e).max(c);
                }
            }
        }
        st.matches[n - 1] = hc.iter().map(|(g, &c)| c.min(max_ref.get(g).copied().unwrap_or(0))).sum();
        st.totals[n - 1] = hyp.len().saturating_sub(n - 1);
    }
    st
}

impl BleuStats {
    /// Orders with no hypothesis n-grams are left out of the geometric mean;
    /// zero-match orders are smoothed to 1 / (2^k * total) for the k-th one.
    pub fn score(&self) -> BleuScore {
        let mut precisions = [0.0; MAX_ORDER];
        let mut log_sum = 0.0;
        let mut orders = 0;
        let mut zeros = 0;
        for n in 0..MAX_ORDER {
            if self.totals[n] == 0 {
                continue;
            }
            let p = if self.matches[n] == 0 {
                zeros += 1;
                1.0 / (2f64.powi(zeros) * self.totals[n] as f64)
            } else {
                self.matches[n] as f64 / self.totals[n] as f64
            };
            precisions[n] = p;
            log_sum += p.ln();
            orders += 1;
        }
        let bp = if self.hyp_len == 0 {
            0.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp().min(1.0)
        };
        let score = if orders == 0 { 0.0 } else { 100.0 * bp * (log_sum / orders as f64).exp() };
        BleuScore { score: score.min(100.0), precisions, brevity_penalty: bp, hyp_len: self.hyp_len, ref_len: self.ref_len }
    }
}

/// Case-sensitive corpus BLEU over raw strings.
pub fn corpus_bleu<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[Vec<R>]) -> Result<BleuScore> {
    let h: Vec<Vec<String>> = hyps.iter().map(|s| tokenize(s.as_ref())).collect();
    let r: Vec<Vec<Vec<String>>> =
        refs.iter().map(|rs| rs.iter().map(|s| tokenize(s.as_ref())).collect()).collect();
    corpus_bleu_tokens(&h, &r)
}

pub fn corpus_bleu_tokens(hyps: &[Vec<String>], refs: &[Vec<Vec<String>>]) -> Result<BleuScore> {
    check_aligned("bleu", hyps.len(), refs.len())?;
    if hyps.is_empty() {
        return Err(Error::Invalid("bleu: empty corpus".into()));
    }
    if let Some(i) = refs.iter().position(|r| r.is_empty()) {
        return Err(Error::Invalid(format!("bleu: example {i} has no references")));
    }
    let mut total = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        total += bleu_stats(h, r);
    }
    Ok(total.score())
}
