use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use d2t_core::ingest::{self, generate_synthetic, split_paths, Format, SyntheticSpec, SyntheticWorld};
use d2t_core::linearize::{self as lin, linearize_corpus, Mode};
use d2t_core::metrics::{evaluate_subsets, MetricSet};
use d2t_core::report::{format_report, report_from_json, report_to_json, SystemReport};
use d2t_core::seq2seq::{beam_decode, greedy_decode_batch, ModelConfig, SpanMaskSpec};
use d2t_core::tokenizer::{train_bpe, Vocab};
use d2t_core::train::{self, load_checkpoint, save_checkpoint, DevSet, OptimizerKind, Start, TrainConfig, TrainMode};
use serde::Serialize;

use crate::data::{load_dataset, load_predictions, load_text, require_file, usage, write_predictions, Prediction, Usage};
use crate::manifest::{beside, Recorder};
use crate::*;

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

/// Provenance records the bare file name so outputs do not depend on the
/// working directory.
fn file_name(path: &Path) -> String {
    path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned())
}

fn manifest_path(out: &Path) -> PathBuf {
    beside(out, ".manifest.json")
}

fn load_vocab(path: &Path) -> Result<Vocab> {
    require_file("--vocab", path)?;
    Vocab::load(path).map_err(|e| Usage(format!("--vocab: {e}")).into())
}

fn train_config(a: &TrainArgs, mode: TrainMode) -> TrainConfig {
    TrainConfig {
        learning_rate: a.lr,
        batch_size: a.batch_size,
        max_steps: a.max_steps,
        optimizer: match a.optimizer {
            OptArg::Adam => OptimizerKind::Adam,
            OptArg::Sgd => OptimizerKind::Sgd,
        },
        ..TrainConfig::new(mode, a.seed)
    }
}

pub fn ingest(a: &IngestArgs) -> Result<()> {
    let rec = Recorder::start("ingest");
    require_file("--input", &a.input)?;
    let format = match a.format {
        FormatArg::Auto => ingest::sniff_format(&a.input).map_err(|e| Usage(format!("--input: {e}")))?,
        FormatArg::Webnlg => Format::WebNLG,
        FormatArg::Multiwoz => Format::MultiWoz,
        FormatArg::Totto => Format::ToTTo,
    };
    let (examples, report) = ingest::read_file(format, &a.input)?;
    eprintln!("{}: {} parsed, {} rejected", a.input.display(), report.parsed, report.rejected);
    if a.strict {
        if let Some((line, msg)) = report.violations.first() {
            return usage(format!("--input: {}:{line}: {msg}", a.input.display()));
        }
    }
    ingest::write_file(&a.common.out, &examples)?;
    write(&beside(&a.common.out, ".report.json"), &(serde_json::to_string_pretty(&report)? + "\n"))?;
    rec.finish(&manifest_path(&a.common.out), a, &[&a.input], None)
}

#[derive(Serialize)]
struct LinRow<'a> {
    id: &'a str,
    source: &'a str,
    references: &'a [String],
}

pub fn linearize(a: &LinearizeArgs) -> Result<()> {
    let rec = Recorder::start("linearize");
    let examples = load_dataset("--dataset", &a.dataset)?;
    let mode = match a.mode {
        LinMode::Train => Mode::Train,
        LinMode::Eval => Mode::Eval,
    };
    let rows = linearize_corpus(&examples, &a.lin.config(), mode);
    let mut out = String::new();
    for r in &rows {
        match a.format {
            LinFormat::Jsonl => {
                out.push_str(&serde_json::to_string(&LinRow { id: &r.id, source: &r.source, references: &r.references })?);
            }
            LinFormat::Tsv => {
                let mut cells = vec![r.id.clone(), r.source.clone()];
                cells.extend(r.references.iter().cloned());
                out.push_str(&cells.iter().map(|c| c.replace(['\t', '\n'], " ")).collect::<Vec<_>>().join("\t"));
            }
        }
        out.push('\n');
    }
    write(&a.common.out, &out)?;
    rec.finish(&manifest_path(&a.common.out), a, &[&a.dataset], None)
}

pub fn train_tokenizer(a: &TrainTokenizerArgs) -> Result<()> {
    let rec = Recorder::start("train-tokenizer");
    if a.dataset.is_empty() && a.text.is_empty() {
        return usage("train-tokenizer needs at least one --dataset or --text");
    }
    let mut corpus = Vec::new();
    for path in &a.dataset {
        let examples = load_dataset("--dataset", path)?;
        for ex in &examples {
            corpus.push(lin::linearize(&ex.input, &a.lin.config()));
            corpus.extend(ex.references.iter().cloned());
        }
    }
    for path in &a.text {
        corpus.extend(load_text("--text", path)?);
    }
    let vocab = train_bpe(&corpus, a.vocab_size)?;
    vocab.save(&a.common.out)?;
    eprintln!("vocab of {} pieces, hash {}", vocab.len(), vocab.hash());
    let inputs: Vec<&Path> = a.dataset.iter().chain(&a.text).map(PathBuf::as_path).collect();
    rec.finish(&manifest_path(&a.common.out), a, &inputs, None)
}

#[derive(Serialize)]
struct PretrainLog<'a> {
    losses: &'a [(usize, f32)],
}

pub fn pretrain(a: &PretrainArgs) -> Result<()> {
    let rec = Recorder::start("pretrain");
    let vocab = load_vocab(&a.vocab)?;
    let mut docs = Vec::new();
    for path in &a.text {
        docs.extend(load_text("--text", path)?.iter().map(|d| vocab.encode(d)));
    }
    let cfg = ModelConfig::for_size(a.size.into(), vocab.len(), a.max_len);
    let tcfg = train_config(&a.train, TrainMode::Pretrain);
    let name = a.text.iter().map(|p| file_name(p)).collect::<Vec<_>>().join(",");
    let out = train::pretrain(&docs, &cfg, &tcfg, &SpanMaskSpec::default(), Some(&vocab.hash()), &name)?;
    save_checkpoint(&out.checkpoint, &a.common.out)?;
    write(&beside(&a.common.out, ".log.json"), &(serde_json::to_string(&PretrainLog { losses: &out.losses })? + "\n"))?;
    if let Some(last) = out.losses.last() {
        eprintln!("pretrained {} steps, final batch loss {:.4}", tcfg.max_steps, last.1);
    }
    let inputs: Vec<&Path> = a.text.iter().map(PathBuf::as_path).chain([a.vocab.as_path()]).collect();
    rec.finish(&manifest_path(&a.common.out), a, &inputs, Some(a.train.seed))
}

#[derive(Serialize)]
struct FinetuneLog<'a> {
    /// (step, dev BLEU) per snapshot
    snapshots: Vec<(usize, Option<f64>)>,
    selected: usize,
    losses: &'a [(usize, f32)],
}

pub fn finetune(a: &FinetuneArgs) -> Result<()> {
    let rec = Recorder::start("finetune");
    let vocab = load_vocab(&a.vocab)?;
    let train_ex = load_dataset("--train-data", &a.train_data)?;
    let dev_ex = load_dataset("--dev-data", &a.dev_data)?;
    let lin = a.lin.config();
    let pairs = train::training_pairs(&train_ex, &lin, &vocab);
    let dev = DevSet::from_examples(&dev_ex, &lin, &vocab);
    let tcfg = TrainConfig { eval_every: a.eval_every, dev_max_len: a.dev_max_len, ..train_config(&a.train, TrainMode::Finetune) };
    let init = match &a.init {
        Some(path) => {
            require_file("--init", path)?;
            Some(load_checkpoint(path).map_err(|e| Usage(format!("--init: {e}")))?)
        }
        None => None,
    };
    let start = match &init {
        Some(c) => Start::Checkpoint(c),
        None => Start::Fresh(ModelConfig::for_size(a.size.into(), vocab.len(), a.max_len)),
    };
    let out = train::finetune(start, &pairs, &dev, &vocab, &tcfg, &file_name(&a.train_data))?;
    let best = out.best();
    save_checkpoint(best, &a.common.out)?;
    let log = FinetuneLog {
        snapshots: out.snapshots.iter().map(|s| (s.step, s.dev_bleu)).collect(),
        selected: out.selected,
        losses: &out.losses,
    };
    write(&beside(&a.common.out, ".log.json"), &(serde_json::to_string(&log)? + "\n"))?;
    eprintln!("selected step {} with dev BLEU {:.2}", best.step, best.dev_bleu.unwrap_or(0.0));
    let mut inputs = vec![a.train_data.as_path(), a.dev_data.as_path(), a.vocab.as_path()];
    inputs.extend(a.init.as_deref());
    rec.finish(&manifest_path(&a.common.out), a, &inputs, Some(a.train.seed))
}

pub fn predict(a: &PredictArgs) -> Result<()> {
    let rec = Recorder::start("predict");
    require_file("--checkpoint", &a.checkpoint)?;
    let ckpt = load_checkpoint(&a.checkpoint).map_err(|e| Usage(format!("--checkpoint: {e}")))?;
    let vocab = load_vocab(&a.vocab)?;
    if let Some(h) = &ckpt.provenance.vocab_hash {
        if *h != vocab.hash() {
            return Err(d2t_core::Error::VocabMismatch { checkpoint: h.clone(), data: vocab.hash() }.into());
        }
    }
    let examples = load_dataset("--dataset", &a.dataset)?;
    let max_len = a.max_len.unwrap_or(ckpt.cfg.max_len);
    if max_len == 0 || max_len > ckpt.cfg.max_len {
        return usage(format!("--max-len: {max_len} outside 1..={}", ckpt.cfg.max_len));
    }
    let sources: Vec<Vec<u32>> = examples.iter().map(|e| vocab.encode(&lin::linearize(&e.input, &a.lin.config()))).collect();
    if let Some((i, s)) = sources.iter().enumerate().find(|(_, s)| s.is_empty() || s.len() > ckpt.cfg.max_len) {
        return usage(format!("--dataset: example '{}' encodes to {} tokens, model accepts 1..={}", examples[i].id, s.len(), ckpt.cfg.max_len));
    }
    let outputs = if a.beam == 1 {
        greedy_decode_batch(&ckpt.params, &ckpt.cfg, &sources, max_len)
    } else {
        sources.iter().map(|s| beam_decode(&ckpt.params, &ckpt.cfg, s, a.beam as usize, max_len)).collect()
    };
    let preds = examples
        .iter()
        .zip(&outputs)
        .map(|(e, ids)| Ok(Prediction { id: e.id.clone(), text: vocab.decode(ids)? }))
        .collect::<Result<Vec<_>>>()?;
    write_predictions(&a.common.out, &preds)?;
    rec.finish(&manifest_path(&a.common.out), a, &[&a.checkpoint, &a.vocab, &a.dataset], None)
}

pub fn evaluate(a: &EvaluateArgs) -> Result<()> {
    let rec = Recorder::start("evaluate");
    let which: MetricSet = a.metrics.parse().map_err(|e| Usage(format!("--metrics: {e}")))?;
    let examples = load_dataset("--dataset", &a.dataset)?;
    let hyps = load_predictions("--pred", &a.pred, &examples)?;
    let report = evaluate_subsets(&examples, &hyps, which)?;
    let reports = [SystemReport { system: a.system.clone(), report }];
    write(&a.common.out, &(report_to_json(&reports)? + "\n"))?;
    print!("{}", format_report(&reports)?);
    rec.finish(&manifest_path(&a.common.out), a, &[&a.dataset, &a.pred], None)
}

/// Writes the combined JSON to `--out` and the table beside it as `.txt`.
pub fn report(a: &ReportArgs) -> Result<()> {
    let rec = Recorder::start("report");
    let mut all = Vec::new();
    for path in &a.input {
        require_file("--input", path)?;
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        all.extend(report_from_json(&text).map_err(|e| Usage(format!("--input: {}: {e}", path.display())))?);
    }
    let table = format_report(&all).map_err(|e| Usage(e.to_string()))?;
    write(&a.common.out, &(report_to_json(&all)? + "\n"))?;
    write(&beside(&a.common.out, ".txt"), &table)?;
    print!("{table}");
    let inputs: Vec<&Path> = a.input.iter().map(PathBuf::as_path).collect();
    rec.finish(&manifest_path(&a.common.out), a, &inputs, None)
}

pub fn synth(a: &SynthArgs) -> Result<()> {
    let rec = Recorder::start("synth");
    let spec = SyntheticSpec {
        seed: a.seed,
        n_train: a.n_train,
        n_dev: a.n_dev,
        n_test: a.n_test,
        n_entities: a.n_entities,
        n_relations: a.n_relations,
        holdout_relations: a.holdout_relations,
        unseen_test_fraction: a.unseen_fraction,
        max_triples: a.max_triples,
    };
    let dataset = generate_synthetic(&spec)?;
    let dir = &a.common.out;
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    for ((_, path), examples) in split_paths(dir).iter().zip([&dataset.train, &dataset.dev, &dataset.test]) {
        ingest::write_file(path, examples)?;
    }
    if a.text_docs > 0 {
        let docs = SyntheticWorld::new(&spec)?.text_corpus(a.text_docs, a.seed);
        write(&dir.join("text.txt"), &(docs.join("\n") + "\n"))?;
    }
    rec.finish(&dir.join("manifest.json"), a, &[], Some(a.seed))
}
