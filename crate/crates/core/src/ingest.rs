//! Line-delimited JSON ingestion for the three dataset formats, plus the
//! seeded synthetic triple-to-text generator.

use std::collections::HashSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::types::{
    validate_example, Dataset, DatasetName, DialogAct, Example, HighlightedCell, HighlightedTable,
    StructuredInput, Subset, Triple,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    WebNLG,
    MultiWoz,
    ToTTo,
}

impl Format {
    pub fn dataset_name(self) -> DatasetName {
        match self {
            Format::WebNLG => DatasetName::WebNLG,
            Format::MultiWoz => DatasetName::MultiWoz,
            Format::ToTTo => DatasetName::ToTTo,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "webnlg" => Ok(Format::WebNLG),
            "multiwoz" => Ok(Format::MultiWoz),
            "totto" => Ok(Format::ToTTo),
            other => Err(Error::Invalid(format!("unknown dataset format '{other}'"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::WebNLG => "webnlg",
            Format::MultiWoz => "multiwoz",
            Format::ToTTo => "totto",
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct IngestReport {
    pub file: String,
    pub parsed: usize,
    pub rejected: usize,
    /// (1-based line number, message)
    pub violations: Vec<(usize, String)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WebNlgTriple {
    subject: String,
    predicate: String,
    object: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct WebNlgLine {
    id: String,
    triples: Vec<WebNlgTriple>,
    references: Vec<String>,
    seen: bool,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MultiWozAct {
    act: String,
    slots: Vec<(String, String)>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct MultiWozLine {
    id: String,
    acts: Vec<MultiWozAct>,
    references: Vec<String>,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToTToCell {
    row: usize,
    col: usize,
    header: String,
    value: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ToTToLine {
    id: String,
    page_title: String,
    section_title: String,
    highlighted_cells: Vec<ToTToCell>,
    references: Vec<String>,
    overlap: bool,
}

fn decode_line(format: Format, line: &str) -> std::result::Result<Example, String> {
    let ex = match format {
        Format::WebNLG => {
            let l: WebNlgLine = serde_json::from_str(line).map_err(|e| format!("malformed line: {e}"))?;
            Example {
                id: l.id,
                input: StructuredInput::Triples(
                    l.triples.into_iter().map(|t| Triple::new(t.subject, t.predicate, t.object)).collect(),
                ),
                references: l.references,
                subset: if l.seen { Subset::Seen } else { Subset::Unseen },
            }
        }
        Format::MultiWoz => {
            let l: MultiWozLine = serde_json::from_str(line).map_err(|e| format!("malformed line: {e}"))?;
            Example {
                id: l.id,
                input: StructuredInput::Acts(
                    l.acts.into_iter().map(|a| DialogAct { act_type: a.act, slots: a.slots }).collect(),
                ),
                references: l.references,
                subset: Subset::Unsplit,
            }
        }
        Format::ToTTo => {
            let l: ToTToLine = serde_json::from_str(line).map_err(|e| format!("malformed line: {e}"))?;
            Example {
                id: l.id,
                input: StructuredInput::Table(HighlightedTable {
                    page_title: l.page_title,
                    section_title: l.section_title,
                    cells: l
                        .highlighted_cells
                        .into_iter()
                        .map(|c| HighlightedCell { row: c.row, col: c.col, header: c.header, value: c.value })
                        .collect(),
                }),
                references: l.references,
                subset: if l.overlap { Subset::Overlap } else { Subset::NonOverlap },
            }
        }
    };
    let violations = validate_example(&ex);
    if violations.is_empty() {
        Ok(ex)
    } else {
        Err(violations.join("; "))
    }
}

/// Parses JSONL lines of the given format. Invalid lines are skipped and
/// recorded; blank lines are ignored. Duplicate ids are rejected.
pub fn parse_lines<'a, I>(format: Format, lines: I) -> (Vec<Example>, IngestReport)
where
    I: IntoIterator<Item = &'a str>,
{
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    let mut ids = HashSet::new();
    for (i, line) in lines.into_iter().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        match decode_line(format, line) {
            Ok(ex) if !ids.contains(&ex.id) => {
                ids.insert(ex.id.clone());
                out.push(ex);
                report.parsed += 1;
            }
            Ok(ex) => {
                report.rejected += 1;
                report.violations.push((i + 1, format!("duplicate id {}", ex.id)));
            }
            Err(msg) => {
                report.rejected += 1;
                report.violations.push((i + 1, msg));
            }
        }
    }
    (out, report)
}

pub fn parse_webnlg<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> (Vec<Example>, IngestReport) {
    parse_lines(Format::WebNLG, lines)
}

pub fn parse_multiwoz<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> (Vec<Example>, IngestReport) {
    parse_lines(Format::MultiWoz, lines)
}

pub fn parse_totto<'a, I: IntoIterator<Item = &'a str>>(lines: I) -> (Vec<Example>, IngestReport) {
    parse_lines(Format::ToTTo, lines)
}

pub fn read_file(format: Format, path: &Path) -> Result<(Vec<Example>, IngestReport)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let (examples, mut report) = parse_lines(format, text.lines());
    report.file = path.display().to_string();
    Ok((examples, report))
}

/// Guesses the format from the first non-blank line's keys.
pub fn sniff_format(path: &Path) -> Result<Format> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let first = text
        .lines()
        .find(|l| !l.trim().is_empty())
        .ok_or_else(|| Error::Invalid(format!("{}: no records", path.display())))?;
    sniff_line(first).map_err(|e| match e {
        Error::Invalid(m) => Error::Invalid(format!("{}: {m}", path.display())),
        other => other,
    })
}

/// Format of a single JSONL record, judged by its keys.
pub fn sniff_line(line: &str) -> Result<Format> {
    let v: serde_json::Value =
        serde_json::from_str(line).map_err(|e| Error::Invalid(format!("line is not JSON: {e}")))?;
    if v.get("triples").is_some() {
        Ok(Format::WebNLG)
    } else if v.get("acts").is_some() {
        Ok(Format::MultiWoz)
    } else if v.get("highlighted_cells").is_some() {
        Ok(Format::ToTTo)
    } else {
        Err(Error::Invalid("cannot determine dataset format".into()))
    }
}

/// Canonical JSONL serialization of one example in the schema that matches
/// its input variant.
pub fn to_json_line(ex: &Example) -> String {
    let refs = ex.references.clone();
    let out = match &ex.input {
        StructuredInput::Triples(ts) => serde_json::to_string(&WebNlgLine {
            id: ex.id.clone(),
            triples: ts
                .iter()
                .map(|t| WebNlgTriple {
                    subject: t.subject.clone(),
                    predicate: t.predicate.clone(),
                    object: t.object.clone(),
                })
                .collect(),
            references: refs,
            seen: ex.subset != Subset::Unseen,
        }),
        StructuredInput::Acts(acts) => serde_json::to_string(&MultiWozLine {
            id: ex.id.clone(),
            acts: acts
                .iter()
                .map(|a| MultiWozAct { act: a.act_type.clone(), slots: a.slots.clone() })
                .collect(),
            references: refs,
        }),
        StructuredInput::Table(t) => serde_json::to_string(&ToTToLine {
            id: ex.id.clone(),
            page_title: t.page_title.clone(),
            section_title: t.section_title.clone(),
            highlighted_cells: t
                .cells
                .iter()
                .map(|c| ToTToCell { row: c.row, col: c.col, header: c.header.clone(), value: c.value.clone() })
                .collect(),
            references: refs,
            overlap: ex.subset != Subset::NonOverlap,
        }),
    };
    out.expect("example serialization cannot fail")
}

pub fn write_file(path: &Path, examples: &[Example]) -> Result<()> {
    let mut text = String::new();
    for ex in examples {
        text.push_str(&to_json_line(ex));
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Per-split file names used when a dataset is written to a directory.
pub fn split_paths(dir: &Path) -> [(String, PathBuf); 3] {
    ["train", "dev", "test"].map(|s| (s.to_string(), dir.join(format!("{s}.jsonl"))))
}

// ---------------------------------------------------------------------------
// Synthetic data

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub n_train: usize,
    pub n_dev: usize,
    pub n_test: usize,
    pub n_entities: usize,
    pub n_relations: usize,
    pub holdout_relations: usize,
    /// Share of test examples built around a held-out relation.
    pub unseen_test_fraction: f64,
    /// Triples per example are drawn uniformly from 1..=max_triples.
    pub max_triples: usize,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            seed: 0,
            n_train: 1000,
            n_dev: 100,
            n_test: 100,
            n_entities: 60,
            n_relations: 10,
            holdout_relations: 2,
            unseen_test_fraction: 0.5,
            max_triples: 2,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Invalid(format!("synthetic spec: {m}")));
        if self.n_train == 0 || self.n_dev == 0 || self.n_test == 0 {
            return bad("split sizes must be positive");
        }
        if self.n_entities < 2 {
            return bad("n_entities must be at least 2");
        }
        if self.n_relations == 0 || self.n_relations > MAX_RELATIONS {
            return bad(&format!("n_relations must be in 1..={MAX_RELATIONS}"));
        }
        if self.holdout_relations >= self.n_relations {
            return bad("holdout_relations must be smaller than n_relations");
        }
        if self.n_entities > MAX_ENTITIES {
            return bad(&format!("n_entities must be at most {MAX_ENTITIES}"));
        }
        if !(0.0..=1.0).contains(&self.unseen_test_fraction) {
            return bad("unseen_test_fraction must lie in [0, 1]");
        }
        if self.unseen_test_fraction > 0.0 && self.holdout_relations == 0 {
            return bad("unseen test examples need at least one held-out relation");
        }
        if self.max_triples == 0 {
            return bad("max_triples must be positive");
        }
        Ok(())
    }
}

const HEADS: [&str; 16] = [
    "birth", "home", "capital", "leader", "founding", "river", "music", "sister", "airport", "school",
    "mother", "harbor", "crop", "festival", "mascot", "anthem",
];
const TAILS: [&str; 8] = ["place", "city", "name", "club", "team", "language", "source", "country"];
const MAX_RELATIONS: usize = HEADS.len() * TAILS.len();

const ONSETS: [&str; 14] = ["b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z"];
const VOWELS: [&str; 5] = ["a", "e", "i", "o", "u"];
const MAX_ENTITIES: usize = 20_000;

/// Sentence frames; `{s}`, `{r}` and `{o}` are subject, relation words, object.
const FRAMES: [&str; 4] = [
    "the {r} of {s} is {o} .",
    "{s} has {o} as its {r} .",
    "{o} is the {r} of {s} .",
    "{s} 's {r} is {o} .",
];

#[derive(Debug, Clone)]
struct Relation {
    name: String,
    words: String,
    frame: usize,
}

/// Entity and relation inventories plus the per-relation templates, all
/// derived from `SyntheticSpec::seed`.
#[derive(Debug, Clone)]
pub struct SyntheticWorld {
    entities: Vec<String>,
    relations: Vec<Relation>,
    held_out: usize,
}

fn camel(head: &str, tail: &str) -> String {
    let mut t = tail.to_string();
    t[..1].make_ascii_uppercase();
    format!("{head}{t}")
}

impl SyntheticWorld {
    pub fn new(spec: &SyntheticSpec) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

        let mut names = HashSet::new();
        let mut entities = Vec::with_capacity(spec.n_entities);
        while entities.len() < spec.n_entities {
            let syllables = rng.gen_range(2..=3);
            let mut name = String::new();
            for _ in 0..syllables {
                name.push_str(ONSETS[rng.gen_range(0..ONSETS.len())]);
                name.push_str(VOWELS[rng.gen_range(0..VOWELS.len())]);
            }
            name[..1].make_ascii_uppercase();
            if names.insert(name.clone()) {
                entities.push(name);
            }
        }

        let mut pairs: Vec<(usize, usize)> =
            (0..HEADS.len()).flat_map(|h| (0..TAILS.len()).map(move |t| (h, t))).collect();
        pairs.shuffle(&mut rng);
        let mut used_heads = HashSet::new();
        let mut relations = Vec::with_capacity(spec.n_relations);
        // prefer distinct head words so relations are lexically distinguishable
        for pass in 0..2 {
            for &(h, t) in &pairs {
                if relations.len() == spec.n_relations {
                    break;
                }
                let name = camel(HEADS[h], TAILS[t]);
                if relations.iter().any(|r: &Relation| r.name == name) {
                    continue;
                }
                if pass == 0 && !used_heads.insert(h) {
                    continue;
                }
                relations.push(Relation {
                    name,
                    words: format!("{} {}", HEADS[h], TAILS[t]),
                    frame: rng.gen_range(0..FRAMES.len()),
                });
            }
        }
        Ok(Self { entities, relations, held_out: spec.holdout_relations })
    }

    pub fn relation_names(&self) -> Vec<&str> {
        self.relations.iter().map(|r| r.name.as_str()).collect()
    }

    /// The last `holdout_relations` relations never occur in train or dev.
    pub fn held_out_relations(&self) -> Vec<&str> {
        self.relations[self.relations.len() - self.held_out..].iter().map(|r| r.name.as_str()).collect()
    }

    fn seen_count(&self) -> usize {
        self.relations.len() - self.held_out
    }

    fn sentence(&self, rel: usize, s: &str, o: &str) -> String {
        let r = &self.relations[rel];
        FRAMES[r.frame].replace("{s}", s).replace("{o}", o).replace("{r}", &r.words)
    }

    fn triple(&self, rng: &mut ChaCha8Rng, rel: usize) -> (Triple, String) {
        let s = rng.gen_range(0..self.entities.len());
        let mut o = rng.gen_range(0..self.entities.len() - 1);
        if o >= s {
            o += 1;
        }
        let (s, o) = (&self.entities[s], &self.entities[o]);
        (Triple::new(s.clone(), self.relations[rel].name.clone(), o.clone()), self.sentence(rel, s, o))
    }

    fn example(&self, rng: &mut ChaCha8Rng, id: String, n_triples: usize, unseen: bool) -> Example {
        let seen = self.seen_count();
        let forced = if unseen { Some(rng.gen_range(0..n_triples)) } else { None };
        let mut triples = Vec::with_capacity(n_triples);
        let mut sentences = Vec::with_capacity(n_triples);
        for i in 0..n_triples {
            let rel = if forced == Some(i) {
                seen + rng.gen_range(0..self.held_out)
            } else {
                rng.gen_range(0..seen)
            };
            let (t, s) = self.triple(rng, rel);
            triples.push(t);
            sentences.push(s);
        }
        Example {
            id,
            input: StructuredInput::Triples(triples),
            references: vec![sentences.join(" ")],
            subset: if unseen { Subset::Unseen } else { Subset::Seen },
        }
    }

    /// Unlabelled documents over every relation, held-out ones included.
    /// A document states 2..=4 facts, each after the first reusing an entity
    /// already mentioned, then repeats a shuffled non-empty subset of them.
    pub fn text_corpus(&self, n_docs: usize, seed: u64) -> Vec<String> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed_7e47);
        let n_ent = self.entities.len();
        (0..n_docs)
            .map(|_| {
                let n = rng.gen_range(2..=4);
                let mut mentioned: Vec<usize> = Vec::new();
                let mut sentences = Vec::with_capacity(2 * n);
                for _ in 0..n {
                    let rel = rng.gen_range(0..self.relations.len());
                    let anchor = if mentioned.is_empty() {
                        rng.gen_range(0..n_ent)
                    } else {
                        mentioned[rng.gen_range(0..mentioned.len())]
                    };
                    let mut other = rng.gen_range(0..n_ent - 1);
                    if other >= anchor {
                        other += 1;
                    }
                    let (s, o) = if rng.gen_bool(0.5) { (anchor, other) } else { (other, anchor) };
                    mentioned.extend([s, o]);
                    sentences.push(self.sentence(rel, &self.entities[s], &self.entities[o]));
                }
                let mut recap = sentences.clone();
                recap.shuffle(&mut rng);
                recap.truncate(rng.gen_range(1..=n));
                sentences.extend(recap);
                sentences.join(" ")
            })
            .collect()
    }
}

/// Deterministic triple-to-text dataset. Test examples containing a
/// held-out relation are tagged `Unseen`, all others `Seen`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset> {
    let world = SyntheticWorld::new(spec)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed.wrapping_add(0x9e37_79b9_7f4a_7c15));
    let split = |name: &str, n: usize, n_unseen: usize, rng: &mut ChaCha8Rng| -> Vec<Example> {
        let mut unseen_flags: Vec<bool> = (0..n).map(|i| i < n_unseen).collect();
        unseen_flags.shuffle(rng);
        unseen_flags
            .into_iter()
            .enumerate()
            .map(|(i, unseen)| {
                let k = rng.gen_range(1..=spec.max_triples);
                world.example(rng, format!("{name}-{i:06}"), k, unseen)
            })
            .collect()
    };
    let n_unseen = (spec.n_test as f64 * spec.unseen_test_fraction).round() as usize;
    let train = split("train", spec.n_train, 0, &mut rng);
    let dev = split("dev", spec.n_dev, 0, &mut rng);
    let test = split("test", spec.n_test, n_unseen, &mut rng);
    Ok(Dataset { name: DatasetName::Synthetic, train, dev, test })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn webnlg_line() {
        let line = r#"{"id":"w1","triples":[{"subject":"A","predicate":"p","object":"B"}],"references":["r"],"seen":true}"#;
        let (ex, rep) = parse_webnlg([line]);
        assert_eq!(rep.parsed, 1);
        assert_eq!(ex[0].id, "w1");
        assert_eq!(ex[0].subset, Subset::Seen);
        match &ex[0].input {
            StructuredInput::Triples(ts) => assert_eq!(ts.len(), 1),
            _ => panic!("wrong variant"),
        }
    }

    #[test]
    fn webnlg_empty_triples_rejected() {
        let line = r#"{"id":"w1","triples":[],"references":["r"],"seen":false}"#;
        let (ex, rep) = parse_webnlg([line]);
        assert!(ex.is_empty());
        assert_eq!(rep.rejected, 1);
        assert_eq!(rep.violations[0].0, 1);
        assert!(rep.violations[0].1.contains("triples empty"));
    }

    #[test]
    fn counts_with_malformed_line() {
        let ok = |i: u32| {
            format!(r#"{{"id":"w{i}","triples":[{{"subject":"A","predicate":"p","object":"B"}}],"references":["r"],"seen":true}}"#)
        };
        let lines = [ok(1), ok(2), "{not json".to_string(), String::new(), ok(3)];
        let (ex, rep) = parse_webnlg(lines.iter().map(String::as_str));
        assert_eq!((rep.parsed, rep.rejected), (3, 1));
        assert_eq!(rep.violations[0].0, 3);
        assert_eq!(ex.iter().map(|e| e.id.as_str()).collect::<Vec<_>>(), ["w1", "w2", "w3"]);
    }

    #[test]
    fn multiwoz_lines() {
        let line = r#"{"id":"m1","acts":[{"act":"inform","slots":[["name","Alexander B&B"]]}],"references":["The Alexander B&B is nice."]}"#;
        let (ex, _) = parse_multiwoz([line]);
        match &ex[0].input {
            StructuredInput::Acts(a) => {
                assert_eq!(a.len(), 1);
                assert_eq!(a[0].slots, vec![("name".to_string(), "Alexander B&B".to_string())]);
            }
            _ => panic!("wrong variant"),
        }
        assert_eq!(ex[0].subset, Subset::Unsplit);

        let bye = r#"{"id":"m2","acts":[{"act":"bye","slots":[]}],"references":["Goodbye."]}"#;
        let (ex, rep) = parse_multiwoz([bye]);
        assert_eq!(rep.parsed, 1);
        match &ex[0].input {
            StructuredInput::Acts(a) => assert!(a[0].slots.is_empty()),
            _ => panic!("wrong variant"),
        }

        let bad = r#"{"id":"m3","acts":[{"act":"inform","slots":[["",""]]}],"references":["x"]}"#;
        let (_, rep) = parse_multiwoz([bad]);
        assert_eq!(rep.rejected, 1);
        assert!(rep.violations[0].1.contains("slot key empty"));
    }

    #[test]
    fn totto_lines() {
        let line = r#"{"id":"t1","page_title":"P","section_title":"S","highlighted_cells":[{"row":0,"col":0,"header":"Year","value":"1998"}],"references":["r"],"overlap":false}"#;
        let (ex, _) = parse_totto([line]);
        assert_eq!(ex[0].subset, Subset::NonOverlap);

        let dup = r#"{"id":"t2","page_title":"P","section_title":"S","highlighted_cells":[{"row":0,"col":0,"header":"a","value":"1"},{"row":0,"col":0,"header":"b","value":"2"}],"references":["r"],"overlap":true}"#;
        let (_, rep) = parse_totto([dup]);
        assert!(rep.violations[0].1.contains("duplicate cell coordinate"));

        let empty = r#"{"id":"t3","page_title":"P","section_title":"S","highlighted_cells":[],"references":["r"],"overlap":true}"#;
        let (_, rep) = parse_totto([empty]);
        assert!(rep.violations[0].1.contains("cells empty"));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let line = r#"{"id":"w1","triples":[{"subject":"A","predicate":"p","object":"B"}],"references":["r"],"seen":true}"#;
        let (ex, rep) = parse_webnlg([line, line]);
        assert_eq!(ex.len(), 1);
        assert_eq!(rep.rejected, 1);
    }

    #[test]
    fn synthetic_is_deterministic() {
        let spec = SyntheticSpec { seed: 7, ..Default::default() };
        let a = generate_synthetic(&spec).unwrap();
        let b = generate_synthetic(&spec).unwrap();
        let dump = |d: &Dataset| {
            [&d.train, &d.dev, &d.test]
                .iter()
                .flat_map(|s| s.iter().map(to_json_line))
                .collect::<Vec<_>>()
                .join("\n")
        };
        assert_eq!(dump(&a), dump(&b));
        let c = generate_synthetic(&SyntheticSpec { seed: 8, ..Default::default() }).unwrap();
        assert_ne!(dump(&a), dump(&c));
    }

    #[test]
    fn synthetic_holds_out_relations() {
        let spec = SyntheticSpec { seed: 3, n_relations: 10, holdout_relations: 2, ..Default::default() };
        let world = SyntheticWorld::new(&spec).unwrap();
        let held: HashSet<String> = world.held_out_relations().iter().map(|s| s.to_string()).collect();
        assert_eq!(held.len(), 2);
        let ds = generate_synthetic(&spec).unwrap();
        let mentions = |ex: &Example| match &ex.input {
            StructuredInput::Triples(ts) => ts.iter().any(|t| held.contains(&t.predicate)),
            _ => unreachable!(),
        };
        assert!(!ds.train.iter().chain(&ds.dev).any(mentions));
        for ex in &ds.test {
            assert_eq!(mentions(ex), ex.subset == Subset::Unseen);
        }
        assert!(ds.train.iter().chain(&ds.dev).chain(&ds.test).all(|e| validate_example(e).is_empty()));
    }

    #[test]
    fn synthetic_test_split_half_unseen() {
        let spec = SyntheticSpec { seed: 1, n_test: 100, unseen_test_fraction: 0.5, ..Default::default() };
        let ds = generate_synthetic(&spec).unwrap();
        let unseen = ds.test.iter().filter(|e| e.subset == Subset::Unseen).count();
        assert_eq!((100 - unseen, unseen), (50, 50));
    }

    #[test]
    fn synthetic_rejects_bad_spec() {
        let spec = SyntheticSpec { n_relations: 4, holdout_relations: 4, ..Default::default() };
        assert!(generate_synthetic(&spec).is_err());
        let spec = SyntheticSpec { n_train: 0, ..Default::default() };
        assert!(generate_synthetic(&spec).is_err());
    }
}
