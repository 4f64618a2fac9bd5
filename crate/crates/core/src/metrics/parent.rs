//! Table-grounded precision/recall with word-overlap entailment.
//!
//! Per example, with T the set of record tokens and
//! `w(g) = |{t in g : t in T}| / |g|`:
//!
//! * `prec_n = sum_g [min(Ch, Cr) + (Ch - min(Ch, Cr)) w(g)] / sum_g Ch`
//! * `rec_n  = sum_g min(Ch, Cr) w(g) / sum_g Cr w(g)`, with 0/0 = 1
//! * table recall: share of records whose value has a token LCS of at
//!   least half its length with the hypothesis
//!
//! Precision averages geometrically over the orders the hypothesis is long
//! enough for; recall over all four. A zero order is smoothed to
//! `1 / (2^k * count)` for the k-th zero, where count is the number of
//! hypothesis (precision) or reference (recall) n-grams of that order.
//! `R = sqrt(rec_ref * rec_table)` and F is their harmonic mean. With several
//! references the one giving the highest F is used.

use std::collections::{HashMap, HashSet};

use serde::{Deserialize, Serialize};

use super::bleu::{ngram_counts, MAX_ORDER};
use super::{check_aligned, tokenize};
use crate::error::{Error, Result};
use crate::types::StructuredInput;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ParentScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

fn f1(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

/// `(numerator, denominator, n-gram count)` per order.
fn smoothed_geo_mean(orders: &[(f64, f64, usize)], skip_empty: bool) -> f64 {
    let mut log_sum = 0.0;
    let mut used = 0;
    let mut zeros = 0;
    for &(num, den, count) in orders {
        let p = if den == 0.0 {
            if skip_empty {
                continue;
            }
            1.0
        } else if num == 0.0 {
            zeros += 1;
            1.0 / (2f64.powi(zeros) * count as f64)
        } else {
            num / den
        };
        log_sum += p.ln();
        used += 1;
    }
    if used == 0 {
        0.0
    } else {
        (log_sum / used as f64).exp()
    }
}

fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { prev[j + 1].max(cur[j]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

fn table_recall(hyp: &[String], records: &[(Vec<String>, Vec<String>)]) -> f64 {
    let values: Vec<&Vec<String>> = records.iter().map(|r| &r.1).filter(|v| !v.is_empty()).collect();
    if values.is_empty() {
        return 1.0;
    }
    let hit = values.iter().filter(|v| 2 * lcs_len(v, hyp) >= v.len()).count();
    hit as f64 / values.len() as f64
}

fn against_reference(hyp: &[String], reference: &[String], table: &HashSet<&String>, r_table: f64) -> ParentScore {
    let w = |g: &[String]| g.iter().filter(|t| table.contains(t)).count() as f64 / g.len() as f64;
    let mut prec = Vec::with_capacity(MAX_ORDER);
    let mut rec = Vec::with_capacity(MAX_ORDER);
    for n in 1..=MAX_ORDER {
        let ch = ngram_counts(hyp, n);
        let cr: HashMap<Vec<String>, usize> = ngram_counts(reference, n);
        let (mut num, mut den) = (0.0, 0.0);
        for (g, &c) in &ch {
            let m = c.min(cr.get(g).copied().unwrap_or(0));
            num += m as f64 + (c - m) as f64 * w(g);
            den += c as f64;
        }
        prec.push((num, den, hyp.len().saturating_sub(n - 1)));
        let (mut num, mut den) = (0.0, 0.0);
        for (g, &c) in &cr {
            let m = c.min(ch.get(g).copied().unwrap_or(0));
            let wg = w(g);
            num += m as f64 * wg;
            den += c as f64 * wg;
        }
        rec.push((num, den, reference.len().saturating_sub(n - 1)));
    }
    let p = smoothed_geo_mean(&prec, true);
    let r_ref = smoothed_geo_mean(&rec, false);
    let r = (r_ref * r_table).sqrt();
    ParentScore { precision: p, recall: r, f1: f1(p, r) }
}

/// One example over pre-tokenized text and (attribute, value) records.
pub fn parent_example(hyp: &[String], refs: &[Vec<String>], records: &[(Vec<String>, Vec<String>)]) -> ParentScore {
    let table: HashSet<&String> = records.iter().flat_map(|(k, v)| k.iter().chain(v)).collect();
    let r_table = table_recall(hyp, records);
    refs.iter()
        .map(|r| against_reference(hyp, r, &table, r_table))
        .fold(None, |best: Option<ParentScore>, s| match best {
            Some(b) if b.f1 >= s.f1 => Some(b),
            _ => Some(s),
        })
        .unwrap_or_default()
}

/// Corpus means of per-example precision, recall and F.
pub fn parent<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[Vec<R>], inputs: &[&StructuredInput]) -> Result<ParentScore> {
    check_aligned("parent", hyps.len(), refs.len())?;
    check_aligned("parent", hyps.len(), inputs.len())?;
    if hyps.is_empty() {
        return Err(Error::Invalid("parent: empty corpus".into()));
    }
    let mut sum = ParentScore::default();
    for ((h, rs), input) in hyps.iter().zip(refs).zip(inputs) {
        if rs.is_empty() {
            return Err(Error::Invalid("parent: example without references".into()));
        }
        let hyp = tokenize(h.as_ref());
        let refs: Vec<Vec<String>> = rs.iter().map(|r| tokenize(r.as_ref())).collect();
        let records: Vec<(Vec<String>, Vec<String>)> =
            input.records().iter().map(|(k, v)| (tokenize(k), tokenize(v))).collect();
        let s = parent_example(&hyp, &refs, &records);
        sum.precision += s.precision;
        sum.recall += s.recall;
        sum.f1 += s.f1;
    }
    let n = hyps.len() as f64;
    Ok(ParentScore { precision: sum.precision / n, recall: sum.recall / n, f1: sum.f1 / n })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        tokenize(s)
    }

    #[test]
    fn perfect_match() {
        let recs = vec![(toks("name"), toks("Kora Lumi")), (toks("area"), toks("centre"))];
        let s = parent_example(&toks("Kora Lumi centre"), &[toks("Kora Lumi centre")], &recs);
        assert_eq!((s.precision, s.recall, s.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn empty_hypothesis() {
        let recs = vec![(toks("name"), toks("Kora"))];
        let s = parent_example(&[], &[toks("Kora is here")], &recs);
        assert_eq!(s.precision, 0.0);
        assert_eq!(s.f1, 0.0);
    }

    #[test]
    fn lcs() {
        assert_eq!(lcs_len(&toks("a b c d"), &toks("x a c y d")), 3);
        assert_eq!(lcs_len(&[], &toks("a")), 0);
    }

    #[test]
    fn best_reference_wins() {
        let recs = vec![(toks("name"), toks("Kora"))];
        let one = parent_example(&toks("Kora sings"), &[toks("nothing here")], &recs);
        let two = parent_example(&toks("Kora sings"), &[toks("nothing here"), toks("Kora sings")], &recs);
        assert!(two.f1 > one.f1);
        assert_eq!(two.precision, 1.0);
    }
}
