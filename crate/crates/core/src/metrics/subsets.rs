use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{check_aligned, corpus_bleu, meteor_lite, parent, slot_error_rate, BleuScore, ParentScore, DEFAULT_SER_EXCLUSIONS};
use crate::error::{Error, Result};
use crate::types::{Example, StructuredInput, Subset};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSet {
    pub bleu: bool,
    pub parent: bool,
    pub ser: bool,
    pub meteor_lite: bool,
}

impl MetricSet {
    pub fn all() -> Self {
        Self { bleu: true, parent: true, ser: true, meteor_lite: true }
    }
}

impl FromStr for MetricSet {
    type Err = Error;

    /// Comma-separated names: bleu, parent, ser, meteor_lite (or meteor).
    fn from_str(s: &str) -> Result<Self> {
        let mut set = MetricSet::default();
        for name in s.split(',').map(str::trim).filter(|n| !n.is_empty()) {
            match name.to_ascii_lowercase().as_str() {
                "bleu" => set.bleu = true,
                "parent" => set.parent = true,
                "ser" => set.ser = true,
                "meteor" | "meteor_lite" | "meteor-lite" => set.meteor_lite = true,
                other => return Err(Error::Invalid(format!("unknown metric '{other}'"))),
            }
        }
        if set == MetricSet::default() {
            return Err(Error::Invalid("no metrics requested".into()));
        }
        Ok(set)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetMetrics {
    /// "overall" or a subset name
    pub subset: String,
    pub count: usize,
    pub bleu: Option<BleuScore>,
    pub parent: Option<ParentScore>,
    /// slot error rate in [0, 1]
    pub ser: Option<f64>,
    pub meteor_lite: Option<f64>,
}

impl SubsetMetrics {
    pub fn new(subset: impl Into<String>, count: usize) -> Self {
        Self { subset: subset.into(), count, bleu: None, parent: None, ser: None, meteor_lite: None }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    /// Overall first, then subsets in a fixed order.
    pub subsets: Vec<SubsetMetrics>,
    /// largest number of references any example carried
    pub max_references: usize,
}

impl MetricReport {
    pub fn get(&self, subset: &str) -> Option<&SubsetMetrics> {
        self.subsets.iter().find(|s| s.subset == subset)
    }
}

const ORDER: [Subset; 5] = [Subset::Seen, Subset::Unseen, Subset::Overlap, Subset::NonOverlap, Subset::Unsplit];

fn score_group<S: AsRef<str>>(name: &str, exs: &[&Example], hyps: &[S], which: MetricSet) -> Result<SubsetMetrics> {
    let refs: Vec<Vec<&str>> = exs.iter().map(|e| e.references.iter().map(String::as_str).collect()).collect();
    let mut m = SubsetMetrics::new(name, exs.len());
    if which.bleu {
        m.bleu = Some(corpus_bleu(hyps, &refs)?);
    }
    if which.parent {
        let inputs: Vec<&StructuredInput> = exs.iter().map(|e| &e.input).collect();
        m.parent = Some(parent(hyps, &refs, &inputs)?);
    }
    if which.ser {
        m.ser = Some(slot_error_rate(exs, hyps, &DEFAULT_SER_EXCLUSIONS)?.rate);
    }
    if which.meteor_lite {
        m.meteor_lite = Some(meteor_lite(hyps, &refs)?);
    }
    Ok(m)
}

/// Scores the whole corpus and each subset present. A corpus that is
/// entirely `Unsplit` reports only the overall group.
pub fn evaluate_subsets<S: AsRef<str>>(examples: &[Example], hyps: &[S], which: MetricSet) -> Result<MetricReport> {
    check_aligned("evaluate", hyps.len(), examples.len())?;
    if examples.is_empty() {
        return Err(Error::Invalid("evaluate: empty corpus".into()));
    }
    if which.ser {
        if let Some(ex) = examples.iter().find(|e| !matches!(e.input, StructuredInput::Acts(_))) {
            return Err(Error::NotApplicable(format!(
                "slot error rate needs dialog acts, example {} has {}",
                ex.id,
                ex.input.kind()
            )));
        }
    }
    let all: Vec<&Example> = examples.iter().collect();
    let mut subsets = vec![score_group("overall", &all, hyps, which)?];
    let present: Vec<Subset> = ORDER.iter().copied().filter(|s| examples.iter().any(|e| e.subset == *s)).collect();
    if present != [Subset::Unsplit] {
        for s in present {
            let (exs, hs): (Vec<&Example>, Vec<&str>) =
                examples.iter().zip(hyps).filter(|(e, _)| e.subset == s).map(|(e, h)| (e, h.as_ref())).unzip();
            subsets.push(score_group(s.as_str(), &exs, &hs, which)?);
        }
    }
    let max_references = examples.iter().map(|e| e.references.len()).max().unwrap_or(0);
    Ok(MetricReport { subsets, max_references })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::types::Triple;

    fn ex(id: &str, reference: &str, subset: Subset) -> Example {
        Example {
            id: id.into(),
            input: StructuredInput::Triples(vec![Triple::new("Kora", "homeCity", "Lumi")]),
            references: vec![reference.into()],
            subset,
        }
    }

    #[test]
    fn seen_perfect_unseen_empty() {
        let exs = vec![
            ex("1", "the home city of Kora is Lumi .", Subset::Seen),
            ex("2", "Lumi is where Kora lives .", Subset::Seen),
            ex("3", "Kora has Lumi as its home city .", Subset::Unseen),
            ex("4", "Kora 's home city is Lumi .", Subset::Unseen),
        ];
        let hyps = ["the home city of Kora is Lumi .", "Lumi is where Kora lives .", "", ""];
        let r = evaluate_subsets(&exs, &hyps, MetricSet { bleu: true, ..Default::default() }).unwrap();
        let b = |s: &str| r.get(s).unwrap().bleu.as_ref().unwrap().score;
        assert_eq!(b("seen"), 100.0);
        assert_eq!(b("unseen"), 0.0);
        assert!(b("overall") > 0.0 && b("overall") < 100.0);
        assert_eq!(r.subsets.iter().skip(1).map(|s| s.count).sum::<usize>(), r.get("overall").unwrap().count);
    }

    #[test]
    fn unsplit_reports_overall_only() {
        let exs = vec![ex("1", "a b", Subset::Unsplit), ex("2", "c d", Subset::Unsplit)];
        let r = evaluate_subsets(&exs, &["a b", "c"], MetricSet::from_str("bleu,meteor").unwrap()).unwrap();
        assert_eq!(r.subsets.len(), 1);
        assert_eq!(r.subsets[0].subset, "overall");
    }

    #[test]
    fn ser_on_triples_is_an_error() {
        let exs = vec![ex("1", "a", Subset::Seen)];
        assert!(matches!(
            evaluate_subsets(&exs, &["a"], MetricSet::from_str("ser").unwrap()),
            Err(Error::NotApplicable(_))
        ));
        assert!(MetricSet::from_str("rouge").is_err());
    }
}
