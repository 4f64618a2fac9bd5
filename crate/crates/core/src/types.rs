//! Domain types shared by every stage of the pipeline.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::linearize::{normalize_entity, normalize_predicate};

/// Trim both ends and collapse internal whitespace runs to a single space.
pub fn normalize_ws(text: &str) -> String {
    text.split_whitespace().collect::<Vec<_>>().join(" ")
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triple {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl Triple {
    pub fn new(subject: impl Into<String>, predicate: impl Into<String>, object: impl Into<String>) -> Self {
        Self { subject: subject.into(), predicate: predicate.into(), object: object.into() }
    }
}

/// One system action with its ordered slot key/value pairs. Values may be
/// empty for request-style acts.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DialogAct {
    pub act_type: String,
    pub slots: Vec<(String, String)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HighlightedCell {
    pub row: usize,
    pub col: usize,
    pub header: String,
    pub value: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HighlightedTable {
    pub page_title: String,
    pub section_title: String,
    pub cells: Vec<HighlightedCell>,
}

/// The conditioning source of one example.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum StructuredInput {
    Triples(Vec<Triple>),
    Acts(Vec<DialogAct>),
    Table(HighlightedTable),
}

impl StructuredInput {
    /// Attribute/value records used by the table-grounded metrics:
    /// cells give (header, value), triples (predicate, object), slots (key, value).
    /// Subjects and table titles enter as records with an empty attribute.
    pub fn records(&self) -> Vec<(String, String)> {
        match self {
            StructuredInput::Triples(ts) => ts
                .iter()
                .flat_map(|t| {
                    [
                        (String::new(), normalize_entity(&t.subject)),
                        (normalize_predicate(&t.predicate), normalize_entity(&t.object)),
                    ]
                })
                .collect(),
            StructuredInput::Acts(acts) => acts
                .iter()
                .flat_map(|a| a.slots.iter().cloned())
                .collect(),
            StructuredInput::Table(t) => {
                let mut out = vec![
                    (String::new(), t.page_title.clone()),
                    (String::new(), t.section_title.clone()),
                ];
                out.extend(t.cells.iter().map(|c| (c.header.clone(), c.value.clone())));
                out
            }
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            StructuredInput::Triples(_) => "triples",
            StructuredInput::Acts(_) => "acts",
            StructuredInput::Table(_) => "table",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Subset {
    Seen,
    Unseen,
    Overlap,
    NonOverlap,
    Unsplit,
}

impl Subset {
    pub fn as_str(self) -> &'static str {
        match self {
            Subset::Seen => "seen",
            Subset::Unseen => "unseen",
            Subset::Overlap => "overlap",
            Subset::NonOverlap => "nonoverlap",
            Subset::Unsplit => "unsplit",
        }
    }
}

impl fmt::Display for Subset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub input: StructuredInput,
    pub references: Vec<String>,
    pub subset: Subset,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DatasetName {
    WebNLG,
    MultiWoz,
    ToTTo,
    Synthetic,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Dataset {
    pub name: DatasetName,
    pub train: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
}

impl Dataset {
    /// Ids that occur more than once within a split, per split name.
    pub fn duplicate_ids(&self) -> Vec<(String, String)> {
        let mut out = Vec::new();
        for (name, split) in [("train", &self.train), ("dev", &self.dev), ("test", &self.test)] {
            let mut seen = HashSet::new();
            for ex in split {
                if !seen.insert(ex.id.as_str()) {
                    out.push((name.to_string(), ex.id.clone()));
                }
            }
        }
        out
    }
}

fn blank(s: &str) -> bool {
    s.trim().is_empty()
}

/// Returns every violated invariant of `ex`; empty means valid.
pub fn validate_example(ex: &Example) -> Vec<String> {
    let mut v = Vec::new();
    if blank(&ex.id) {
        v.push("id empty".to_string());
    }
    if ex.references.is_empty() {
        v.push("references empty".to_string());
    }
    for (i, r) in ex.references.iter().enumerate() {
        if blank(r) {
            v.push(format!("reference {i} empty"));
        }
    }
    validate_input(&ex.input, &mut v);
    v
}

fn validate_input(input: &StructuredInput, v: &mut Vec<String>) {
    match input {
        StructuredInput::Triples(ts) => {
            if ts.is_empty() {
                v.push("triples empty".to_string());
            }
            for (i, t) in ts.iter().enumerate() {
                for (field, val) in [("subject", &t.subject), ("predicate", &t.predicate), ("object", &t.object)] {
                    if blank(val) {
                        v.push(format!("triple {i} {field} empty"));
                    }
                }
            }
        }
        StructuredInput::Acts(acts) => {
            if acts.is_empty() {
                v.push("acts empty".to_string());
            }
            for (i, a) in acts.iter().enumerate() {
                if blank(&a.act_type) {
                    v.push(format!("act {i} type empty"));
                }
                if a.slots.iter().any(|(k, _)| blank(k)) {
                    v.push("slot key empty".to_string());
                }
            }
        }
        StructuredInput::Table(t) => {
            if t.cells.is_empty() {
                v.push("cells empty".to_string());
            }
            let mut coords = HashSet::new();
            for c in &t.cells {
                if !coords.insert((c.row, c.col)) {
                    v.push(format!("duplicate cell coordinate ({},{})", c.row, c.col));
                }
            }
        }
    }
}
