//! Brute-force reference implementations and random instance generators
//! shared by the integration tests.
#![allow(dead_code)]

use d2t_core::metrics::{slot_error_rate, DEFAULT_SER_EXCLUSIONS};
use d2t_core::seq2seq::{log_softmax, StepModel};
use d2t_core::tokenizer::EOS;
use d2t_core::train::select_checkpoint;
use d2t_core::types::{DialogAct, Example, StructuredInput, Subset};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Toks = Vec<String>;

pub fn toks(s: &str) -> Toks {
    s.split_whitespace().map(str::to_string).collect()
}

pub fn random_sentence(rng: &mut ChaCha8Rng, vocab: &[&str], min: usize, max: usize) -> Toks {
    let n = rng.gen_range(min..=max);
    (0..n).map(|_| vocab[rng.gen_range(0..vocab.len())].to_string()).collect()
}

// ---------------------------------------------------------------------------
// BLEU

fn occurrences(seq: &[String], g: &[String]) -> usize {
    if g.len() > seq.len() {
        return 0;
    }
    (0..=seq.len() - g.len()).filter(|&i| &seq[i..i + g.len()] == g).count()
}

/// Corpus BLEU by linear scans over every n-gram position.
pub fn naive_bleu(hyps: &[Toks], refs: &[Vec<Toks>]) -> f64 {
    let mut matched = [0usize; 4];
    let mut total = [0usize; 4];
    let (mut hyp_len, mut ref_len) = (0usize, 0usize);
    for (h, rs) in hyps.iter().zip(refs) {
        hyp_len += h.len();
        let mut best = rs[0].len();
        for r in rs {
            let d = r.len().abs_diff(h.len());
            let bd = best.abs_diff(h.len());
            if d < bd || (d == bd && r.len() < best) {
                best = r.len();
            }
        }
        ref_len += best;
        for n in 1..=4 {
            if h.len() < n {
                continue;
            }
            let mut done: Vec<&[String]> = Vec::new();
            for i in 0..=h.len() - n {
                total[n - 1] += 1;
                let g = &h[i..i + n];
                if done.contains(&g) {
                    continue;
                }
                done.push(g);
                let in_hyp = occurrences(h, g);
                let in_ref = rs.iter().map(|r| occurrences(r, g)).max().unwrap();
                matched[n - 1] += in_hyp.min(in_ref);
            }
        }
    }
    let mut logs = Vec::new();
    let mut k = 0;
    for n in 0..4 {
        if total[n] == 0 {
            continue;
        }
        if matched[n] == 0 {
            k += 1;
            logs.push((1.0 / (2f64.powi(k) * total[n] as f64)).ln());
        } else {
            logs.push((matched[n] as f64 / total[n] as f64).ln());
        }
    }
    if logs.is_empty() || hyp_len == 0 {
        return 0.0;
    }
    let bp = if hyp_len >= ref_len { 1.0 } else { (1.0 - ref_len as f64 / hyp_len as f64).exp() };
    100.0 * bp * (logs.iter().sum::<f64>() / logs.len() as f64).exp()
}

// ---------------------------------------------------------------------------
// PARENT

/// Longest common subsequence by enumerating every subsequence of `v`.
fn lcs_brute(v: &[String], h: &[String]) -> usize {
    let is_subseq = |sub: &[&String]| {
        let mut it = h.iter();
        sub.iter().all(|s| it.any(|t| t == *s))
    };
    let mut best = 0;
    for mask in 0u32..(1 << v.len()) {
        let sub: Vec<&String> = (0..v.len()).filter(|i| mask >> i & 1 == 1).map(|i| &v[i]).collect();
        if sub.len() > best && is_subseq(&sub) {
            best = sub.len();
        }
    }
    best
}

fn geo(values: &[Option<(f64, f64, usize)>]) -> f64 {
    let mut logs = Vec::new();
    let mut k = 0;
    for &(num, den, count) in values.iter().flatten() {
        let p = if den == 0.0 {
            1.0
        } else if num == 0.0 {
            k += 1;
            1.0 / (2f64.powi(k) * count as f64)
        } else {
            num / den
        };
        logs.push(p.ln());
    }
    if logs.is_empty() {
        0.0
    } else {
        (logs.iter().sum::<f64>() / logs.len() as f64).exp()
    }
}

/// One example, summing per occurrence: the k-th occurrence of an n-gram
/// counts as matched when the other side holds at least k copies.
pub fn brute_parent(hyp: &[String], refs: &[Toks], records: &[(Toks, Toks)]) -> (f64, f64, f64) {
    let table: Vec<&String> = records.iter().flat_map(|(k, v)| k.iter().chain(v.iter())).collect();
    let w = |g: &[String]| g.iter().filter(|t| table.contains(t)).count() as f64 / g.len() as f64;
    let values: Vec<&Toks> = records.iter().map(|r| &r.1).filter(|v| !v.is_empty()).collect();
    let r_table = if values.is_empty() {
        1.0
    } else {
        values.iter().filter(|v| 2 * lcs_brute(v, hyp) >= v.len()).count() as f64 / values.len() as f64
    };
    let mut best: Option<(f64, f64, f64)> = None;
    for r in refs {
        let mut prec = Vec::new();
        let mut rec = Vec::new();
        for n in 1..=4 {
            if hyp.len() >= n {
                let (mut num, mut den) = (0.0, 0.0);
                for i in 0..=hyp.len() - n {
                    let g = &hyp[i..i + n];
                    let rank = occurrences(&hyp[..i + n], g);
                    num += if rank <= occurrences(r, g) { 1.0 } else { w(g) };
                    den += 1.0;
                }
                prec.push(Some((num, den, hyp.len() - n + 1)));
            } else {
                prec.push(None);
            }
            let (mut num, mut den) = (0.0, 0.0);
            if r.len() >= n {
                for i in 0..=r.len() - n {
                    let g = &r[i..i + n];
                    let rank = occurrences(&r[..i + n], g);
                    den += w(g);
                    if rank <= occurrences(hyp, g) {
                        num += w(g);
                    }
                }
            }
            rec.push(Some((num, den, r.len().saturating_sub(n - 1))));
        }
        let p = geo(&prec);
        let rr = (geo(&rec) * r_table).sqrt();
        let f = if p + rr == 0.0 { 0.0 } else { 2.0 * p * rr / (p + rr) };
        if best.map_or(true, |b| f > b.2) {
            best = Some((p, rr, f));
        }
    }
    best.unwrap()
}

pub struct ParentInstance {
    pub hyp: Toks,
    pub refs: Vec<Toks>,
    pub records: Vec<(Toks, Toks)>,
}

/// At most 6 tokens per table, reference and hypothesis.
pub fn random_parent_instance(rng: &mut ChaCha8Rng) -> ParentInstance {
    const V: [&str; 8] = ["a", "b", "c", "d", "e", "f", "g", "h"];
    let mut records = Vec::new();
    let mut budget = rng.gen_range(1..=6);
    while budget > 0 {
        let key_len = rng.gen_range(0..=budget.min(2));
        let val_len = rng.gen_range(1..=(budget - key_len).max(1)).min(budget - key_len);
        if val_len == 0 {
            break;
        }
        records.push((random_sentence(rng, &V, key_len, key_len), random_sentence(rng, &V, val_len, val_len)));
        budget -= key_len + val_len;
    }
    let n_refs = rng.gen_range(1..=2);
    ParentInstance {
        hyp: random_sentence(rng, &V, 0, 6),
        refs: (0..n_refs).map(|_| random_sentence(rng, &V, 1, 6)).collect(),
        records,
    }
}

// ---------------------------------------------------------------------------
// tokenizer

pub const ALPHABET: &str = "abcdefghijklmnopqrstuvwxyzABCDEFGHIJKLMNOPQRSTUVWXYZ0123456789.,'-()&/éüßø";

fn random_word(rng: &mut ChaCha8Rng, chars: &[char]) -> String {
    let n = rng.gen_range(1..=9);
    (0..n).map(|_| chars[rng.gen_range(0..chars.len())]).collect()
}

/// Single-spaced words over `ALPHABET`.
pub fn random_tokenizer_string(rng: &mut ChaCha8Rng) -> String {
    let chars: Vec<char> = ALPHABET.chars().collect();
    let n = rng.gen_range(1..=12);
    (0..n).map(|_| random_word(rng, &chars)).collect::<Vec<_>>().join(" ")
}

/// A vocabulary trained once on random text covering `ALPHABET`, plus a
/// generator seeded with `seed`.
pub fn alphabet_vocab(seed: u64) -> (d2t_core::tokenizer::Vocab, ChaCha8Rng) {
    static VOCAB: std::sync::OnceLock<d2t_core::tokenizer::Vocab> = std::sync::OnceLock::new();
    let vocab = VOCAB.get_or_init(|| {
        let mut rng = ChaCha8Rng::seed_from_u64(0xa1fa);
        let mut corpus: Vec<String> = (0..2000).map(|_| random_tokenizer_string(&mut rng)).collect();
        corpus.push(ALPHABET.chars().map(|c| format!("{c} ")).collect());
        d2t_core::tokenizer::train_bpe(&corpus, 600).unwrap()
    });
    (vocab.clone(), ChaCha8Rng::seed_from_u64(seed))
}

// ---------------------------------------------------------------------------
// structured inputs

pub mod strategies {
    use d2t_core::types::*;
    use proptest::prelude::*;

    /// Arbitrary text that stays non-empty after trimming.
    pub fn field() -> impl Strategy<Value = String> {
        "[ a-zA-Z0-9_<>=&é.'-]{0,6}[a-zA-Z0-9_<>=&é][ a-zA-Z0-9_<>=&é.'-]{0,6}"
    }

    pub fn maybe_empty() -> impl Strategy<Value = String> {
        prop_oneof![Just(String::new()), field()]
    }

    pub fn triples() -> impl Strategy<Value = StructuredInput> {
        prop::collection::vec((field(), field(), field()), 1..4)
            .prop_map(|ts| StructuredInput::Triples(ts.into_iter().map(|(s, p, o)| Triple::new(s, p, o)).collect()))
    }

    pub fn acts() -> impl Strategy<Value = StructuredInput> {
        prop::collection::vec((field(), prop::collection::vec((field(), maybe_empty()), 0..3)), 1..3).prop_map(|acts| {
            StructuredInput::Acts(acts.into_iter().map(|(act_type, slots)| DialogAct { act_type, slots }).collect())
        })
    }

    pub fn table() -> impl Strategy<Value = StructuredInput> {
        (maybe_empty(), maybe_empty(), prop::collection::btree_map((0usize..4, 0usize..4), (maybe_empty(), maybe_empty()), 1..4))
            .prop_map(|(page_title, section_title, cells)| {
                StructuredInput::Table(HighlightedTable {
                    page_title,
                    section_title,
                    cells: cells
                        .into_iter()
                        .map(|((row, col), (header, value))| HighlightedCell { row, col, header, value })
                        .collect(),
                })
            })
    }

    pub fn example(input: impl Strategy<Value = StructuredInput>, subsets: Vec<Subset>) -> impl Strategy<Value = Example> {
        (input, "[a-z0-9-]{1,8}", prop::collection::vec(field(), 1..3), prop::sample::select(subsets)).prop_map(
            |(input, id, references, subset)| Example { id, input, references, subset },
        )
    }
}

// ---------------------------------------------------------------------------
// training fixtures

pub mod fixtures {
    use d2t_core::ingest::{generate_synthetic, SyntheticSpec, SyntheticWorld};
    use d2t_core::linearize::{linearize_corpus, LinearizationConfig, Mode};
    use d2t_core::tokenizer::{train_bpe, Vocab};
    use d2t_core::train::DevSet;

    pub struct Task {
        pub vocab: Vocab,
        pub pairs: Vec<(Vec<u32>, Vec<u32>)>,
        pub dev: DevSet,
    }

    /// `n` synthetic training pairs; the dev set is the training set itself.
    pub fn memorization_task(n: usize, vocab_size: usize) -> Task {
        let spec = SyntheticSpec { n_train: n, n_dev: 1, n_test: 1, ..Default::default() };
        let ds = generate_synthetic(&spec).unwrap();
        let lin = linearize_corpus(&ds.train, &LinearizationConfig::default(), Mode::Train);
        let texts: Vec<&str> = lin.iter().flat_map(|l| [l.source.as_str(), l.references[0].as_str()]).collect();
        let vocab = train_bpe(&texts, vocab_size).unwrap();
        let pairs = lin.iter().map(|l| (vocab.encode(&l.source), vocab.encode(&l.references[0]))).collect();
        let dev = DevSet {
            sources: lin.iter().map(|l| vocab.encode(&l.source)).collect(),
            references: lin.iter().map(|l| l.references.clone()).collect(),
        };
        Task { vocab, pairs, dev }
    }

    /// Unlabelled synthetic documents encoded with their own vocabulary,
    /// at least `min_tokens` tokens in total.
    pub fn text_corpus(min_tokens: usize, vocab_size: usize) -> (Vocab, Vec<Vec<u32>>) {
        let world = SyntheticWorld::new(&SyntheticSpec::default()).unwrap();
        let mut n = 1000;
        loop {
            let texts = world.text_corpus(n, 7);
            let vocab = train_bpe(&texts, vocab_size).unwrap();
            let docs: Vec<Vec<u32>> = texts.iter().map(|t| vocab.encode(t)).collect();
            if docs.iter().map(Vec::len).sum::<usize>() >= min_tokens {
                return (vocab, docs);
            }
            n *= 2;
        }
    }
}

// ---------------------------------------------------------------------------
// slot error rate

pub fn mr(id: &str, slots: &[(&str, &str)]) -> Example {
    Example {
        id: id.into(),
        input: StructuredInput::Acts(vec![DialogAct {
            act_type: "inform".into(),
            slots: slots.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
        }]),
        references: vec!["r".into()],
        subset: Subset::Unsplit,
    }
}

pub fn perturb_case_and_space(rng: &mut ChaCha8Rng, s: &str) -> String {
    let mut out = String::new();
    for c in s.chars() {
        if c == ' ' {
            let n = rng.gen_range(1..=3);
            for _ in 0..n {
                out.push(if rng.gen_bool(0.3) { '\t' } else { ' ' });
            }
        } else if rng.gen_bool(0.5) {
            out.extend(c.to_uppercase());
        } else {
            out.extend(c.to_lowercase());
        }
    }
    out
}

pub fn ser_fuzz_violations(seed: u64, cases: usize) -> usize {
    const VALS: [&str; 8] = ["alexander b&b", "centre", "thai food", "cheap", "01223 525725", "kora lumi", "yes", "north side"];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut violations = 0;
    for i in 0..cases {
        let k = rng.gen_range(1..=3);
        let slots: Vec<(String, String)> =
            (0..k).map(|j| (format!("k{j}"), VALS[rng.gen_range(0..VALS.len())].to_string())).collect();
        let slot_refs: Vec<(&str, &str)> = slots.iter().map(|(a, b)| (a.as_str(), b.as_str())).collect();
        let ex = mr(&i.to_string(), &slot_refs);
        let m = rng.gen_range(0..=3);
        let hyp = (0..m).map(|_| VALS[rng.gen_range(0..VALS.len())]).collect::<Vec<_>>().join(" and ");
        let base = slot_error_rate(&[&ex], &[hyp.as_str()], &DEFAULT_SER_EXCLUSIONS).unwrap();
        let noisy = perturb_case_and_space(&mut rng, &hyp);
        let pert = slot_error_rate(&[&ex], &[noisy.as_str()], &DEFAULT_SER_EXCLUSIONS).unwrap();
        if base.flags != pert.flags {
            violations += 1;
        }
    }
    violations
}

// ---------------------------------------------------------------------------
// decoding

/// Next-token log-probs that depend on the whole prefix, for exhaustive search.
pub struct TableModel {
    pub vocab: usize,
    pub seed: u64,
}

impl TableModel {
    pub fn dist(&self, prefix: &[u32]) -> Vec<f64> {
        let mut h = self.seed;
        for &t in prefix {
            h = h.wrapping_mul(6364136223846793005).wrapping_add(t as u64 + 1442695040888963407);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(h);
        let logits: Vec<f64> = (0..self.vocab).map(|_| rng.gen_range(-2.0..2.0)).collect();
        log_softmax(ndarray::ArrayView1::from(&logits)).to_vec()
    }
}

impl StepModel for TableModel {
    type State = (Vec<u32>, Option<u32>);

    fn step(&self, states: &mut [Self::State]) -> Vec<Vec<f64>> {
        states
            .iter_mut()
            .map(|(prefix, pending)| {
                if let Some(t) = pending.take() {
                    prefix.push(t);
                }
                self.dist(prefix)
            })
            .collect()
    }

    fn push(&self, state: &mut Self::State, token: u32) {
        state.1 = Some(token);
    }
}

pub fn exhaustive_best(m: &TableModel, max_steps: usize) -> (Vec<u32>, f64) {
    let mut best: Option<(Vec<u32>, f64)> = None;
    let mut frontier = vec![(Vec::<u32>::new(), 0.0f64)];
    for _ in 0..max_steps {
        let mut next = Vec::new();
        for (prefix, score) in frontier {
            let lp = m.dist(&prefix);
            for (t, &l) in lp.iter().enumerate() {
                let s = score + l;
                if t as u32 == EOS {
                    let better = match &best {
                        None => true,
                        Some((bp, bs)) => s > *bs || (s == *bs && prefix < *bp),
                    };
                    if better {
                        best = Some((prefix.clone(), s));
                    }
                } else {
                    let mut q = prefix.clone();
                    q.push(t as u32);
                    next.push((q, s));
                }
            }
        }
        frontier = next;
    }
    best.expect("some sequence finishes")
}

// ---------------------------------------------------------------------------
// checkpoint selection

pub fn selection_mismatches(trials: usize, seed: u64) -> usize {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bad = 0;
    for _ in 0..trials {
        let n = rng.gen_range(1..=30);
        // coarse grid so ties are common
        let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(0..20) as f64 * 2.5).collect();
        let mut best = 0;
        for i in 1..n {
            if scores[i] > scores[best] {
                best = i;
            }
        }
        if select_checkpoint(&scores) != Some(best) {
            bad += 1;
        }
    }
    bad
}


// ---------------------------------------------------------------------------
// model checks

pub mod model {
    use d2t_core::seq2seq::*;
    use d2t_core::tokenizer::{EOS, PAD};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub fn random_ids(rng: &mut ChaCha8Rng, n: usize, vocab: usize) -> Vec<u32> {
        (0..n).map(|_| rng.gen_range(3..vocab as u32)).collect()
    }

    pub struct GradCheck {
        pub worst: f64,
        pub at: String,
        pub checked: usize,
    }

    /// Central differences against the analytic gradient on a Tiny f64 model.
    pub fn gradient_check() -> GradCheck {
        let cfg = ModelConfig::for_size(SizeTag::Tiny, 50, 16);
        let mut p: Params<f64> = init_params(&cfg, 11).unwrap();
        // break the symmetry of unit gains so their gradients are exercised
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (name, t) in p.names.iter().zip(p.tensors.iter_mut()) {
            if name.contains("ln") {
                t.mapv_inplace(|g| g + rng.gen_range(-0.3..0.3));
            }
        }
        let batch = Batch::from_pairs(&[(vec![5, 9, 17, 4, 33], vec![7, 12, 40])]).unwrap();
        let loss = |p: &Params<f64>| forward_loss(p, &cfg, &batch, None).unwrap().0;
        let (_, grads) = forward_loss(&p, &cfg, &batch, None).unwrap();
        let eps = 1e-4;
        let mut out = GradCheck { worst: 0.0, at: String::new(), checked: 0 };
        for ti in 0..p.tensors.len() {
            let (rows, cols) = p.tensors[ti].dim();
            let mut coords: Vec<(usize, usize)> = (0..16).map(|_| (rng.gen_range(0..rows), rng.gen_range(0..cols))).collect();
            if p.names[ti] == "shared.embed" {
                // rows that actually take part in the sequence
                for &id in &[5usize, 9, 7, 12, 40, PAD as usize, EOS as usize] {
                    coords.push((id, rng.gen_range(0..cols)));
                }
            }
            for (r, c) in coords {
                let orig = p.tensors[ti][[r, c]];
                p.tensors[ti][[r, c]] = orig + eps;
                let up = loss(&p);
                p.tensors[ti][[r, c]] = orig - eps;
                let down = loss(&p);
                p.tensors[ti][[r, c]] = orig;
                let numeric = (up - down) / (2.0 * eps);
                let analytic = grads.tensors[ti][[r, c]];
                let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                if rel > out.worst {
                    out.worst = rel;
                    out.at = format!("{}[{r},{c}] analytic {analytic:e} numeric {numeric:e}", p.names[ti]);
                }
                out.checked += 1;
            }
        }
        out
    }

    /// Trials in which editing decoder input j changed logits before j.
    pub fn causality_violations(trials: usize) -> usize {
        let cfg = ModelConfig::for_size(SizeTag::Tiny, 60, 16);
        let p: Params<f64> = init_params(&cfg, 4).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut bad = 0;
        for _ in 0..trials {
            let src = random_ids(&mut rng, 6, 60);
            let tgt = random_ids(&mut rng, 7, 60);
            let base = Batch::from_pairs(&[(src, tgt)]).unwrap();
            let logits = forward_logits(&p, &cfg, &base).unwrap();
            let j = rng.gen_range(1..base.dec_in.ncols());
            let mut changed = base.clone();
            changed.dec_in[[0, j]] = rng.gen_range(3..60);
            let logits2 = forward_logits(&p, &cfg, &changed).unwrap();
            if (0..j).any(|pos| logits.row(pos) != logits2.row(pos)) {
                bad += 1;
            }
        }
        bad
    }

    /// Trials in which padding, masked targets or a batch neighbour changed
    /// an example's loss or logits.
    pub fn padding_violations(trials: usize) -> usize {
        let cfg = ModelConfig::for_size(SizeTag::Tiny, 60, 24);
        let p: Params<f64> = init_params(&cfg, 5).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut bad = 0;
        for _ in 0..trials {
            let a = (random_ids(&mut rng, 4, 60), random_ids(&mut rng, 3, 60));
            let long = (random_ids(&mut rng, 11, 60), random_ids(&mut rng, 9, 60));
            let alone = Batch::from_pairs(&[a.clone()]).unwrap();
            let (loss_alone, _) = forward_loss(&p, &cfg, &alone, None).unwrap();

            let padded = Batch::from_pairs(&[a.clone(), long]).unwrap();
            let row0 = ndarray::s![0..1, ..];
            let mut single = Batch {
                enc_ids: padded.enc_ids.slice(row0).to_owned(),
                enc_mask: padded.enc_mask.slice(row0).to_owned(),
                dec_in: padded.dec_in.slice(row0).to_owned(),
                targets: padded.targets.slice(row0).to_owned(),
                loss_mask: padded.loss_mask.slice(row0).to_owned(),
            };
            let (loss_padded, _) = forward_loss(&p, &cfg, &single, None).unwrap();

            let t_len = single.targets.ncols();
            for j in 4..t_len {
                single.targets[[0, j]] = rng.gen_range(3..60);
            }
            let (loss_garbage, _) = forward_loss(&p, &cfg, &single, None).unwrap();

            let logits_pair = forward_logits(&p, &cfg, &padded).unwrap();
            let logits_single = forward_logits(&p, &cfg, &alone).unwrap();
            let leaked = (0..logits_single.nrows()).any(|pos| logits_pair.row(pos) != logits_single.row(pos));
            if loss_alone != loss_padded || loss_alone != loss_garbage || leaked {
                bad += 1;
            }
        }
        bad
    }
}
