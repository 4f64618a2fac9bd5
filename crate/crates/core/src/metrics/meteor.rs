//! Exact-match METEOR: lowercase unigram alignment, recall-weighted F-mean
//! and a fragmentation penalty. No stemming or synonyms.

use super::{check_aligned, tokenize};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MeteorAlignment {
    pub matches: usize,
    pub chunks: usize,
    pub score: f64,
}

/// Each hypothesis token, left to right, takes an unused equal reference
/// token, preferring the one right after the previous match.
fn align(hyp: &[String], reference: &[String]) -> Vec<Option<usize>> {
    let mut used = vec![false; reference.len()];
    let mut prev: Option<usize> = None;
    hyp.iter()
        .map(|t| {
            let next = prev.map(|p| p + 1).filter(|&j| j < reference.len() && !used[j] && &reference[j] == t);
            let j = next.or_else(|| (0..reference.len()).find(|&j| !used[j] && &reference[j] == t));
            if let Some(j) = j {
                used[j] = true;
                prev = Some(j);
            }
            j
        })
        .collect()
}

fn score_tokens(hyp: &[String], reference: &[String]) -> MeteorAlignment {
    let a = align(hyp, reference);
    let matched: Vec<(usize, usize)> = a.iter().enumerate().filter_map(|(i, j)| j.map(|j| (i, j))).collect();
    let m = matched.len();
    if m == 0 {
        return MeteorAlignment { matches: 0, chunks: 0, score: 0.0 };
    }
    let chunks = 1 + matched.windows(2).filter(|w| !(w[1].0 == w[0].0 + 1 && w[1].1 == w[0].1 + 1)).count();
    let p = m as f64 / hyp.len() as f64;
    let r = m as f64 / reference.len() as f64;
    let fmean = 10.0 * p * r / (r + 9.0 * p);
    let penalty = 0.5 * (chunks as f64 / m as f64).powi(3);
    MeteorAlignment { matches: m, chunks, score: fmean * (1.0 - penalty) }
}

/// Best alignment over the references.
pub fn meteor_sentence<R: AsRef<str>>(hyp: &str, refs: &[R]) -> MeteorAlignment {
    let h: Vec<String> = tokenize(&hyp.to_lowercase());
    refs.iter()
        .map(|r| score_tokens(&h, &tokenize(&r.as_ref().to_lowercase())))
        .fold(MeteorAlignment { matches: 0, chunks: 0, score: 0.0 }, |best, s| if s.score > best.score { s } else { best })
}

/// Mean sentence score.
pub fn meteor_lite<S: AsRef<str>, R: AsRef<str>>(hyps: &[S], refs: &[Vec<R>]) -> Result<f64> {
    check_aligned("meteor_lite", hyps.len(), refs.len())?;
    if hyps.is_empty() {
        return Err(Error::Invalid("meteor_lite: empty corpus".into()));
    }
    let total: f64 = hyps.iter().zip(refs).map(|(h, r)| meteor_sentence(h.as_ref(), r).score).sum();
    Ok(total / hyps.len() as f64)
}
