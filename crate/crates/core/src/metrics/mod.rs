//! Corpus-level generation metrics and per-subset aggregation.

mod bleu;
mod meteor;
mod parent;
mod ser;
mod subsets;

pub use bleu::{bleu_stats, corpus_bleu, corpus_bleu_tokens, ngram_counts, BleuScore, BleuStats, MAX_ORDER};
pub use meteor::{meteor_lite, meteor_sentence, MeteorAlignment};
pub use parent::{parent, parent_example, ParentScore};
pub use ser::{slot_error_rate, SerScore, DEFAULT_SER_EXCLUSIONS};
pub use subsets::{evaluate_subsets, MetricSet, MetricReport, SubsetMetrics};

use unicode_general_category::{get_general_category, GeneralCategory};

fn is_punctuation(c: char) -> bool {
    matches!(
        get_general_category(c),
        GeneralCategory::ConnectorPunctuation
            | GeneralCategory::DashPunctuation
            | GeneralCategory::OpenPunctuation
            | GeneralCategory::ClosePunctuation
            | GeneralCategory::InitialPunctuation
            | GeneralCategory::FinalPunctuation
            | GeneralCategory::OtherPunctuation
    )
}

/// Whitespace split after isolating every Unicode punctuation character.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut spaced = String::with_capacity(text.len() + 8);
    for c in text.chars() {
        if is_punctuation(c) {
            spaced.push(' ');
            spaced.push(c);
            spaced.push(' ');
        } else {
            spaced.push(c);
        }
    }
    spaced.split_whitespace().map(str::to_string).collect()
}

fn check_aligned(what: &str, a: usize, b: usize) -> crate::Result<()> {
    if a != b {
        return Err(crate::Error::Alignment(format!("{what}: {a} hypotheses vs {b} references")));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation() {
        assert_eq!(tokenize("Kora's home, (city)."), ["Kora", "'", "s", "home", ",", "(", "city", ")", "."]);
        assert_eq!(tokenize("  a\tb  "), ["a", "b"]);
        assert_eq!(tokenize("«x»"), ["«", "x", "»"]);
        assert!(tokenize("").is_empty());
    }
}
