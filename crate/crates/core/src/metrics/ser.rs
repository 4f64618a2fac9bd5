use serde::{Deserialize, Serialize};

use super::check_aligned;
use crate::error::{Error, Result};
use crate::types::{normalize_ws, Example, StructuredInput};

/// Slot values never checked against the hypothesis.
pub const DEFAULT_SER_EXCLUSIONS: [&str; 5] = ["?", "yes", "no", "none", ""];

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct SerScore {
    pub rate: f64,
    /// true where at least one checkable value is missing
    pub flags: Vec<bool>,
    pub skipped_slots: usize,
}

fn norm(s: &str) -> String {
    normalize_ws(&s.to_lowercase())
}

/// Share of examples whose hypothesis misses at least one slot value
/// (case-insensitive, whitespace-normalized substring match).
pub fn slot_error_rate<S: AsRef<str>>(examples: &[&Example], hyps: &[S], exclusions: &[&str]) -> Result<SerScore> {
    check_aligned("ser", hyps.len(), examples.len())?;
    if hyps.is_empty() {
        return Err(Error::Invalid("ser: empty corpus".into()));
    }
    let excluded: Vec<String> = exclusions.iter().map(|e| norm(e)).collect();
    let mut out = SerScore::default();
    for (ex, hyp) in examples.iter().zip(hyps) {
        let StructuredInput::Acts(acts) = &ex.input else {
            return Err(Error::NotApplicable(format!("slot error rate needs dialog acts, example {} has {}", ex.id, ex.input.kind())));
        };
        let h = norm(hyp.as_ref());
        let mut missing = false;
        for (_, value) in acts.iter().flat_map(|a| &a.slots) {
            let v = norm(value);
            if excluded.contains(&v) {
                out.skipped_slots += 1;
                continue;
            }
            if !h.contains(&v) {
                missing = true;
            }
        }
        out.flags.push(missing);
    }
    out.rate = out.flags.iter().filter(|&&f| f).count() as f64 / out.flags.len() as f64;
    Ok(out)
}
