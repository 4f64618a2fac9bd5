use std::fmt;
use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use d2t_core::ingest::{read_file, sniff_format};
use d2t_core::Example;
use serde::{Deserialize, Serialize};

/// A problem with the command line or its input files; exits with status 1.
#[derive(Debug)]
pub struct Usage(pub String);

impl fmt::Display for Usage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

pub fn usage<T>(msg: impl Into<String>) -> Result<T> {
    Err(Usage(msg.into()).into())
}

pub fn require_file(flag: &str, path: &Path) -> Result<()> {
    if !path.is_file() {
        return usage(format!("{flag}: file '{}' not found", path.display()));
    }
    Ok(())
}

/// Reads a dataset file in any supported format; any rejected line fails.
pub fn load_dataset(flag: &str, path: &Path) -> Result<Vec<Example>> {
    require_file(flag, path)?;
    let format = sniff_format(path).map_err(|e| Usage(format!("{flag}: {e}")))?;
    let (examples, report) = read_file(format, path)?;
    if let Some((line, msg)) = report.violations.first() {
        return usage(format!("{flag}: {}:{line}: {msg} ({} rejected lines)", path.display(), report.rejected));
    }
    if examples.is_empty() {
        return usage(format!("{flag}: {} contains no examples", path.display()));
    }
    Ok(examples)
}

/// Non-blank lines of a plain-text corpus.
pub fn load_text(flag: &str, path: &Path) -> Result<Vec<String>> {
    require_file(flag, path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(str::to_string).collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Prediction {
    pub id: String,
    pub text: String,
}

pub fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(p)?);
        out.push('\n');
    }
    fs::write(path, out).with_context(|| format!("writing {}", path.display()))
}

/// Predictions re-ordered to match `examples`; every example needs exactly one.
pub fn load_predictions(flag: &str, path: &Path, examples: &[Example]) -> Result<Vec<String>> {
    require_file(flag, path)?;
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut by_id = std::collections::HashMap::new();
    for (n, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
        let p: Prediction = serde_json::from_str(line)
            .map_err(|e| Usage(format!("{flag}: {}:{}: {e}", path.display(), n + 1)))?;
        if by_id.insert(p.id.clone(), p.text).is_some() {
            return usage(format!("{flag}: {}:{}: duplicate id '{}'", path.display(), n + 1, p.id));
        }
    }
    let mut hyps = Vec::with_capacity(examples.len());
    for ex in examples {
        match by_id.remove(&ex.id) {
            Some(t) => hyps.push(t),
            None => return usage(format!("{flag}: no prediction for example '{}'", ex.id)),
        }
    }
    if let Some(extra) = by_id.keys().min() {
        return usage(format!("{flag}: prediction '{extra}' has no matching example"));
    }
    Ok(hyps)
}
