//! Character-level byte-pair-encoding vocabulary with reserved control,
//! sentinel and linearization-marker tokens.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::linearize::MARKERS;

pub const PAD: u32 = 0;
pub const EOS: u32 = 1;
pub const UNK: u32 = 2;
pub const N_SENTINELS: usize = 100;
pub const FIRST_SENTINEL: u32 = 3;
pub const FIRST_MARKER: u32 = FIRST_SENTINEL + N_SENTINELS as u32;
pub const N_RESERVED: usize = FIRST_MARKER as usize + MARKERS.len();
pub const WORD_MARK: char = '\u{2581}';
pub const VOCAB_VERSION: u32 = 1;
pub const DEFAULT_VOCAB_SIZE: usize = 8000;

pub fn sentinel(k: usize) -> u32 {
    assert!(k < N_SENTINELS, "sentinel index {k} out of range");
    FIRST_SENTINEL + k as u32
}

pub fn is_reserved(id: u32) -> bool {
    (id as usize) < N_RESERVED
}

pub fn is_sentinel(id: u32) -> bool {
    (FIRST_SENTINEL..FIRST_MARKER).contains(&id)
}

fn reserved_pieces() -> Vec<String> {
    let mut v = vec!["<pad>".to_string(), "</s>".to_string(), "<unk>".to_string()];
    v.extend((0..N_SENTINELS).map(|k| format!("<X{k}>")));
    v.extend(MARKERS.iter().map(|m| m.to_string()));
    v
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct VocabFile {
    version: u32,
    vocab_size: usize,
    pieces: Vec<String>,
    merges: Vec<(String, String)>,
}

#[derive(Debug, Clone)]
pub struct Vocab {
    pieces: Vec<String>,
    merges: Vec<(String, String)>,
    index: HashMap<String, u32>,
    ranks: HashMap<(String, String), usize>,
}

impl PartialEq for Vocab {
    fn eq(&self, other: &Self) -> bool {
        self.pieces == other.pieces && self.merges == other.merges
    }
}

impl Eq for Vocab {}

enum Segment<'a> {
    Reserved(u32),
    Text(&'a str),
}

/// Length in bytes of a sentinel or marker starting at the head of `s`.
fn reserved_at(s: &str) -> Option<(u32, usize)> {
    if !s.starts_with('<') {
        return None;
    }
    for (i, m) in MARKERS.iter().enumerate() {
        if s.starts_with(m) {
            return Some((FIRST_MARKER + i as u32, m.len()));
        }
    }
    let rest = s.strip_prefix("<X")?;
    let digits = rest.bytes().take_while(|b| b.is_ascii_digit()).count();
    if digits == 0 || digits > 2 || !rest[digits..].starts_with('>') {
        return None;
    }
    if digits == 2 && rest.starts_with('0') {
        return None;
    }
    let k: usize = rest[..digits].parse().ok()?;
    Some((sentinel(k), 2 + digits + 1))
}

fn segments(text: &str) -> Vec<Segment<'_>> {
    let mut out = Vec::new();
    let mut start = 0;
    let mut i = 0;
    while i < text.len() {
        if let Some((id, len)) = reserved_at(&text[i..]) {
            if start < i {
                out.push(Segment::Text(&text[start..i]));
            }
            out.push(Segment::Reserved(id));
            i += len;
            start = i;
        } else {
            i += text[i..].chars().next().map_or(1, char::len_utf8);
        }
    }
    if start < text.len() {
        out.push(Segment::Text(&text[start..]));
    }
    out
}

fn word_symbols(word: &str) -> Vec<String> {
    std::iter::once(WORD_MARK.to_string()).chain(word.chars().map(String::from)).collect()
}

/// Merges every non-overlapping occurrence of (a, b), scanning left to right.
fn apply_merge(symbols: &mut Vec<String>, a: &str, b: &str) {
    let mut i = 0;
    while i + 1 < symbols.len() {
        if symbols[i] == a && symbols[i + 1] == b {
            let merged = format!("{a}{b}");
            symbols[i] = merged;
            symbols.remove(i + 1);
        }
        i += 1;
    }
}

/// Greedy BPE training. The most frequent adjacent pair is merged first;
/// ties go to the lexicographically smallest concatenation.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<Vocab> {
    if corpus.is_empty() {
        return Err(Error::Invalid("BPE corpus is empty".into()));
    }
    let mut word_counts: HashMap<String, usize> = HashMap::new();
    for text in corpus {
        for seg in segments(text.as_ref()) {
            if let Segment::Text(t) = seg {
                for w in t.split_whitespace() {
                    *word_counts.entry(w.to_string()).or_default() += 1;
                }
            }
        }
    }
    let mut alphabet: BTreeSet<char> = word_counts.keys().flat_map(|w| w.chars()).collect();
    alphabet.insert(WORD_MARK);

    let mut pieces = reserved_pieces();
    pieces.extend(alphabet.iter().map(|c| c.to_string()));
    if vocab_size < pieces.len() {
        return Err(Error::VocabTooSmall { requested: vocab_size, minimum: pieces.len() });
    }
    let mut known: std::collections::HashSet<String> = pieces.iter().cloned().collect();

    // sorted for a deterministic walk
    let mut words: Vec<(Vec<String>, usize)> = word_counts.into_iter().map(|(w, c)| (word_symbols(&w), c)).collect();
    words.sort();

    let mut merges = Vec::new();
    while pieces.len() < vocab_size {
        let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
        for (syms, c) in &words {
            for pair in syms.windows(2) {
                *counts.entry((pair[0].as_str(), pair[1].as_str())).or_default() += c;
            }
        }
        let best = counts
            .into_iter()
            .max_by(|(pa, ca), (pb, cb)| {
                ca.cmp(cb).then_with(|| {
                    let ka = (format!("{}{}", pa.0, pa.1), pa.0, pa.1);
                    let kb = (format!("{}{}", pb.0, pb.1), pb.0, pb.1);
                    kb.cmp(&ka)
                })
            })
            .map(|((a, b), _)| (a.to_string(), b.to_string()));
        let Some((a, b)) = best else {
            return Err(Error::VocabExhausted { requested: vocab_size, available: pieces.len() });
        };
        for (syms, _) in words.iter_mut() {
            apply_merge(syms, &a, &b);
        }
        let merged = format!("{a}{b}");
        if known.insert(merged.clone()) {
            pieces.push(merged);
        }
        merges.push((a, b));
    }
    Ok(Vocab::from_parts(pieces, merges))
}

impl Vocab {
    fn from_parts(pieces: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let index = pieces.iter().enumerate().map(|(i, p)| (p.clone(), i as u32)).collect();
        let ranks = merges.iter().enumerate().map(|(i, m)| (m.clone(), i)).collect();
        Self { pieces, merges, index, ranks }
    }

    pub fn len(&self) -> usize {
        self.pieces.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pieces.is_empty()
    }

    pub fn pieces(&self) -> &[String] {
        &self.pieces
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn id(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    fn encode_word(&self, word: &str, out: &mut Vec<u32>) {
        let mut syms = word_symbols(word);
        loop {
            let best = syms
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0].clone(), p[1].clone())).copied())
                .min();
            let Some(rank) = best else { break };
            let (a, b) = &self.merges[rank];
            apply_merge(&mut syms, a, b);
        }
        out.extend(syms.iter().map(|s| self.id(s).unwrap_or(UNK)));
    }

    /// Markers and sentinels match as whole units; everything else is split
    /// into words and segmented with the merge list. No EOS is appended.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for seg in segments(text) {
            match seg {
                Segment::Reserved(id) => out.push(id),
                Segment::Text(t) => {
                    for w in t.split_whitespace() {
                        self.encode_word(w, &mut out);
                    }
                }
            }
        }
        out
    }

    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut s = String::new();
        for &id in ids {
            let piece = self.piece(id).ok_or(Error::TokenOutOfRange(id))?;
            match id {
                PAD | EOS => {}
                _ if is_reserved(id) => {
                    s.push(' ');
                    s.push_str(piece);
                    s.push(' ');
                }
                _ => s.extend(piece.chars().map(|c| if c == WORD_MARK { ' ' } else { c })),
            }
        }
        Ok(crate::types::normalize_ws(&s))
    }

    fn to_file(&self) -> VocabFile {
        VocabFile {
            version: VOCAB_VERSION,
            vocab_size: self.pieces.len(),
            pieces: self.pieces.clone(),
            merges: self.merges.clone(),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("vocab serialization cannot fail")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let f: VocabFile =
            serde_json::from_str(text).map_err(|e| Error::Invalid(format!("vocab file: {e}")))?;
        if f.version != VOCAB_VERSION {
            return Err(Error::Invalid(format!("vocab file version {} unsupported", f.version)));
        }
        if f.vocab_size != f.pieces.len() {
            return Err(Error::Invalid("vocab file: vocab_size disagrees with pieces".into()));
        }
        if f.pieces.len() < N_RESERVED || f.pieces[..N_RESERVED] != reserved_pieces()[..] {
            return Err(Error::Invalid("vocab file: reserved tokens do not match version 1 layout".into()));
        }
        let unique: std::collections::HashSet<&String> = f.pieces.iter().collect();
        if unique.len() != f.pieces.len() {
            return Err(Error::Invalid("vocab file: duplicate pieces".into()));
        }
        Ok(Self::from_parts(f.pieces, f.merges))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.to_json().as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_layout() {
        let p = reserved_pieces();
        assert_eq!(p.len(), 112);
        assert_eq!(p[3], "<X0>");
        assert_eq!(p[102], "<X99>");
        assert_eq!(p[103], "<S>");
        assert_eq!(p[111], "<HEADER>");
    }

    #[test]
    fn hand_simulated_merges() {
        // "aaab aaab" -> words [▁ a a a b] x2
        // round 1: (a,a)=4 (▁,a)=2 (a,b)=2            -> merge a+a
        // round 2: [▁ aa a b]: (▁,aa)=2 (aa,a)=2 (a,b)=2 -> tie; "aaa" < "ab" < "▁aa"
        let base = N_RESERVED + 3; // a, b, ▁
        let v = train_bpe(&["aaab aaab"], base + 2).unwrap();
        assert_eq!(
            v.merges(),
            &[("a".to_string(), "a".to_string()), ("aa".to_string(), "a".to_string())]
        );
        assert_eq!(&v.pieces()[base..], &["aa".to_string(), "aaa".to_string()]);
        assert_eq!(v.pieces()[N_RESERVED..base], ["a", "b", "\u{2581}"]);
    }

    #[test]
    fn too_small() {
        match train_bpe(&["abc"], 100) {
            Err(Error::VocabTooSmall { minimum, .. }) => assert_eq!(minimum, N_RESERVED + 4),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn exhausted() {
        assert!(matches!(train_bpe(&["ab"], N_RESERVED + 10), Err(Error::VocabExhausted { .. })));
    }

    #[test]
    fn deterministic_training() {
        let corpus = ["the birth place of Kora is Lumi .", "Lumi has Kora as its home city ."];
        assert_eq!(train_bpe(&corpus, 160).unwrap(), train_bpe(&corpus, 160).unwrap());
        let permuted = ["Lumi  has Kora as its home city .", "the birth place of Kora\tis Lumi ."];
        assert_eq!(train_bpe(&corpus, 160).unwrap(), train_bpe(&permuted, 160).unwrap());
    }

    #[test]
    fn encode_decode_basics() {
        let v = train_bpe(&["a birth place", "a place"], 130).unwrap();
        assert!(v.encode("").is_empty());
        let a = v.id("\u{2581}a").expect("▁a merged");
        assert_eq!(v.encode("<S> a"), vec![103, a]);
        assert_eq!(v.decode(&[]).unwrap(), "");
        assert_eq!(v.decode(&[PAD, PAD]).unwrap(), "");
        assert_eq!(v.decode(&v.encode("birth place")).unwrap(), "birth place");
        assert_eq!(v.decode(&v.encode("<S> a <P> birth")).unwrap(), "<S> a <P> birth");
        assert!(matches!(v.decode(&[100_000]), Err(Error::TokenOutOfRange(100_000))));
    }

    #[test]
    fn sentinels_match_whole() {
        let v = train_bpe(&["x y"], N_RESERVED + 3).unwrap();
        assert_eq!(v.encode("<X0> x <X99>"), vec![3, v.id("\u{2581}").unwrap(), v.id("x").unwrap(), 102]);
        // not sentinels
        let ids = v.encode("<X100>");
        assert!(ids.iter().all(|&i| !is_sentinel(i)));
        assert!(v.encode("q").contains(&UNK));
    }

    #[test]
    fn file_round_trip() {
        let v = train_bpe(&["the birth place of Kora"], 140).unwrap();
        let back = Vocab::from_json(&v.to_json()).unwrap();
        assert_eq!(v, back);
        assert_eq!(v.hash(), back.hash());
        let bad = v.to_json().replace("\"version\":1", "\"version\":2");
        assert!(Vocab::from_json(&bad).is_err());
    }
}
