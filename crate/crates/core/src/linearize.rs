//! Flattening of structured inputs into marker-delimited source strings.
//!
//! Grammar:
//!
//! ```text
//! triples: translate from Graph to Text: <S> s <P> p <O> o [<S> ...]
//! acts:    translate from MR to Text: <ACT> act <SLOT> key = value | <SLOT> key ...
//! table:   translate from Table to Text: <PAGE> t <SECTION> s <CELL> value <HEADER> header ...
//! ```
//!
//! Field text is whitespace-normalized and every `<` becomes `(`, so field
//! text can never produce a marker.

use serde::{Deserialize, Serialize};

use crate::types::{normalize_ws, Example, StructuredInput};

pub const MARKERS: [&str; 9] = ["<S>", "<P>", "<O>", "<ACT>", "<SLOT>", "<PAGE>", "<SECTION>", "<CELL>", "<HEADER>"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearizationConfig {
    pub include_task_prefix: bool,
    pub lowercase: bool,
}

impl Default for LinearizationConfig {
    fn default() -> Self {
        Self { include_task_prefix: true, lowercase: false }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// One (source, target) pair per reference.
    Train,
    /// One source per example with every reference attached.
    Eval,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Linearized {
    pub id: String,
    pub source: String,
    pub references: Vec<String>,
}

fn escape(s: &str) -> String {
    normalize_ws(&s.replace('<', "("))
}

pub fn normalize_entity(s: &str) -> String {
    escape(&s.replace('_', " "))
}

/// `birthPlace` -> `birth place`, `leader_name` -> `leader name`.
pub fn normalize_predicate(s: &str) -> String {
    let mut out = String::with_capacity(s.len() + 4);
    let mut prev_lower = false;
    for c in s.chars() {
        if c.is_uppercase() && prev_lower {
            out.push(' ');
        }
        prev_lower = c.is_lowercase();
        out.push(c);
    }
    normalize_entity(&out).to_lowercase()
}

fn normalize_key(s: &str) -> String {
    escape(&s.replace('=', "-"))
}

fn task_prefix(input: &StructuredInput) -> &'static str {
    match input {
        StructuredInput::Triples(_) => "translate from Graph to Text:",
        StructuredInput::Acts(_) => "translate from MR to Text:",
        StructuredInput::Table(_) => "translate from Table to Text:",
    }
}

pub fn linearize(input: &StructuredInput, cfg: &LinearizationConfig) -> String {
    let mut parts: Vec<String> = Vec::new();
    if cfg.include_task_prefix {
        parts.push(task_prefix(input).to_string());
    }
    let field = |s: String| if cfg.lowercase { s.to_lowercase() } else { s };
    match input {
        StructuredInput::Triples(ts) => {
            for t in ts {
                parts.push("<S>".into());
                parts.push(field(normalize_entity(&t.subject)));
                parts.push("<P>".into());
                parts.push(field(normalize_predicate(&t.predicate)));
                parts.push("<O>".into());
                parts.push(field(normalize_entity(&t.object)));
            }
        }
        StructuredInput::Acts(acts) => {
            for a in acts {
                parts.push("<ACT>".into());
                parts.push(field(escape(&a.act_type)));
                for (k, v) in &a.slots {
                    parts.push("<SLOT>".into());
                    parts.push(field(normalize_key(k)));
                    let v = escape(v);
                    if !v.is_empty() {
                        parts.push("=".into());
                        parts.push(field(v));
                    }
                }
            }
        }
        StructuredInput::Table(t) => {
            parts.push("<PAGE>".into());
            parts.push(field(escape(&t.page_title)));
            parts.push("<SECTION>".into());
            parts.push(field(escape(&t.section_title)));
            for c in &t.cells {
                parts.push("<CELL>".into());
                parts.push(field(escape(&c.value)));
                parts.push("<HEADER>".into());
                parts.push(field(escape(&c.header)));
            }
        }
    }
    parts.retain(|p| !p.is_empty());
    parts.join(" ")
}

pub fn linearize_corpus(examples: &[Example], cfg: &LinearizationConfig, mode: Mode) -> Vec<Linearized> {
    let mut out = Vec::new();
    for ex in examples {
        let source = linearize(&ex.input, cfg);
        let refs: Vec<String> = ex.references.iter().map(|r| normalize_ws(r)).collect();
        match mode {
            Mode::Train => out.extend(refs.into_iter().map(|r| Linearized {
                id: ex.id.clone(),
                source: source.clone(),
                references: vec![r],
            })),
            Mode::Eval => out.push(Linearized { id: ex.id.clone(), source, references: refs }),
        }
    }
    out
}
