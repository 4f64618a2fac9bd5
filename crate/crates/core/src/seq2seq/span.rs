//! Span-corruption denoising: contiguous spans are replaced by sentinels in
//! the input and spelled out, sentinel-delimited, in the target.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{is_reserved, is_sentinel, sentinel, EOS, N_SENTINELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpanMaskSpec {
    pub corruption_rate: f64,
    pub mean_span_length: f64,
}

impl Default for SpanMaskSpec {
    fn default() -> Self {
        Self { corruption_rate: 0.15, mean_span_length: 3.0 }
    }
}

impl SpanMaskSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.corruption_rate > 0.0 && self.corruption_rate < 1.0) {
            return Err(Error::Invalid(format!("corruption_rate {} outside (0, 1)", self.corruption_rate)));
        }
        if !(self.mean_span_length >= 1.0) {
            return Err(Error::Invalid(format!("mean_span_length {} below 1", self.mean_span_length)));
        }
        Ok(())
    }
}

/// Builds (input, target) from explicit, sorted, non-overlapping
/// `(start, len)` spans.
pub fn corrupt_with_spans(ids: &[u32], spans: &[(usize, usize)]) -> Result<(Vec<u32>, Vec<u32>)> {
    if spans.len() > N_SENTINELS {
        return Err(Error::SentinelExhaustion(spans.len()));
    }
    let mut input = Vec::with_capacity(ids.len());
    let mut target = Vec::new();
    let mut pos = 0;
    for (k, &(start, len)) in spans.iter().enumerate() {
        if start < pos || len == 0 || start + len > ids.len() {
            return Err(Error::Invalid(format!("span ({start}, {len}) overlaps or is out of range")));
        }
        input.extend_from_slice(&ids[pos..start]);
        input.push(sentinel(k));
        target.push(sentinel(k));
        target.extend_from_slice(&ids[start..start + len]);
        pos = start + len;
    }
    input.extend_from_slice(&ids[pos..]);
    target.push(EOS);
    Ok((input, target))
}

/// Samples spans covering exactly `round(rate * n)` tokens (clamped to
/// `1..n`), with geometric lengths of the configured mean, then corrupts.
pub fn span_corrupt(ids: &[u32], spec: &SpanMaskSpec, seed: u64) -> Result<(Vec<u32>, Vec<u32>)> {
    spec.validate()?;
    let n = ids.len();
    if n < 2 {
        return Err(Error::Invalid("span corruption needs at least 2 tokens".into()));
    }
    if let Some(&id) = ids.iter().find(|&&id| is_reserved(id)) {
        return Err(Error::Invalid(format!("reserved id {id} in span-corruption input")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_noise = ((n as f64 * spec.corruption_rate).round() as usize).clamp(1, n - 1);

    let geo = Geometric::new(1.0 / spec.mean_span_length).expect("p in (0, 1]");
    let mut lengths = Vec::new();
    let mut covered = 0;
    while covered < n_noise {
        let len = ((geo.sample(&mut rng) + 1) as usize).min(n_noise - covered);
        lengths.push(len);
        covered += len;
    }
    // adjacent spans need at least one kept token between them
    let n_keep = n - n_noise;
    while lengths.len() > n_keep + 1 {
        let last = lengths.pop().expect("non-empty");
        *lengths.last_mut().expect("non-empty") += last;
    }
    if lengths.len() > N_SENTINELS {
        return Err(Error::SentinelExhaustion(lengths.len()));
    }
    lengths.shuffle(&mut rng);

    // gaps: leading, inner (>= 1), trailing
    let m = lengths.len();
    let mut gaps = vec![0usize; m + 1];
    for g in gaps.iter_mut().take(m).skip(1) {
        *g = 1;
    }
    for _ in 0..n_keep - (m - 1) {
        gaps[rng.gen_range(0..=m)] += 1;
    }
    let mut spans = Vec::with_capacity(m);
    let mut pos = gaps[0];
    for (k, &len) in lengths.iter().enumerate() {
        spans.push((pos, len));
        pos += len + gaps[k + 1];
    }
    corrupt_with_spans(ids, &spans)
}

/// Inverse of [`span_corrupt`]: substitutes each sentinel in `input` with
/// the tokens that follow the same sentinel in `target`.
pub fn splice(input: &[u32], target: &[u32]) -> Result<Vec<u32>> {
    let mut fills: Vec<&[u32]> = Vec::new();
    let mut i = 0;
    while i < target.len() && target[i] != EOS {
        if target[i] != sentinel(fills.len()) {
            return Err(Error::Invalid(format!("unexpected token {} in target", target[i])));
        }
        let start = i + 1;
        let mut end = start;
        while end < target.len() && target[end] != EOS && !is_sentinel(target[end]) {
            end += 1;
        }
        fills.push(&target[start..end]);
        i = end;
    }
    let mut out = Vec::with_capacity(input.len() + target.len());
    for &id in input {
        if is_sentinel(id) {
            let k = (id - sentinel(0)) as usize;
            let fill = fills.get(k).ok_or_else(|| Error::Invalid(format!("sentinel {k} missing from target")))?;
            out.extend_from_slice(fill);
        } else {
            out.push(id);
        }
    }
    Ok(out)
}
