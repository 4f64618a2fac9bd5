//! Pretrained versus from-scratch fine-tuning on the synthetic triple task,
//! scored separately on test examples with seen and held-out relations.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::ingest::{generate_synthetic, SyntheticSpec, SyntheticWorld};
use crate::linearize::{linearize, linearize_corpus, LinearizationConfig, Mode};
use crate::metrics::{evaluate_subsets, MetricSet};
use crate::seq2seq::{greedy_decode_batch, ModelConfig, SizeTag, SpanMaskSpec};
use crate::tokenizer::{train_bpe, Vocab};
use crate::train::{finetune, pretrain, training_pairs, DevSet, ModelCheckpoint, Start, TrainConfig, TrainMode};
use crate::types::{Dataset, Subset};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferConfig {
    pub seed: u64,
    pub data: SyntheticSpec,
    pub vocab_size: usize,
    pub max_len: usize,
    pub pretrain_docs: usize,
    pub pretrain_steps: usize,
    pub finetune_steps: usize,
    pub eval_every: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub dev_max_len: usize,
    pub linearization: LinearizationConfig,
}

impl TransferConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            data: SyntheticSpec {
                seed,
                n_train: 5000,
                n_dev: 100,
                n_test: 200,
                n_entities: 60,
                n_relations: 10,
                holdout_relations: 2,
                unseen_test_fraction: 0.5,
                max_triples: 2,
            },
            vocab_size: 400,
            max_len: 64,
            pretrain_docs: 20_000,
            pretrain_steps: 1000,
            finetune_steps: 2000,
            eval_every: 250,
            batch_size: 8,
            learning_rate: 0.001,
            dev_max_len: 48,
            linearization: LinearizationConfig::default(),
        }
    }
}

/// Everything derived from the config before any model is trained.
pub struct TransferData {
    pub dataset: Dataset,
    pub vocab: Vocab,
    pub pretrain_corpus: Vec<Vec<u32>>,
    pub train_pairs: Vec<(Vec<u32>, Vec<u32>)>,
    pub dev: DevSet,
    pub test_sources: Vec<Vec<u32>>,
}

pub fn prepare(cfg: &TransferConfig) -> Result<TransferData> {
    let dataset = generate_synthetic(&cfg.data)?;
    let world = SyntheticWorld::new(&cfg.data)?;
    let texts = world.text_corpus(cfg.pretrain_docs, cfg.seed);
    let train = linearize_corpus(&dataset.train, &cfg.linearization, Mode::Train);
    let mut bpe_corpus: Vec<&str> = texts.iter().map(String::as_str).collect();
    bpe_corpus.extend(train.iter().map(|l| l.source.as_str()));
    bpe_corpus.extend(train.iter().map(|l| l.references[0].as_str()));
    let vocab = train_bpe(&bpe_corpus, cfg.vocab_size)?;
    let pretrain_corpus = texts.iter().map(|t| vocab.encode(t)).collect();
    let train_pairs = training_pairs(&dataset.train, &cfg.linearization, &vocab);
    let dev = DevSet::from_examples(&dataset.dev, &cfg.linearization, &vocab);
    let test_sources = dataset.test.iter().map(|e| vocab.encode(&linearize(&e.input, &cfg.linearization))).collect();
    Ok(TransferData { dataset, vocab, pretrain_corpus, train_pairs, dev, test_sources })
}

fn train_config(cfg: &TransferConfig, mode: TrainMode, steps: usize) -> TrainConfig {
    TrainConfig {
        learning_rate: cfg.learning_rate,
        batch_size: cfg.batch_size,
        max_steps: steps,
        eval_every: cfg.eval_every,
        dev_max_len: Some(cfg.dev_max_len),
        ..TrainConfig::new(mode, cfg.seed)
    }
}

pub fn model_config(cfg: &TransferConfig, data: &TransferData, size: SizeTag) -> ModelConfig {
    ModelConfig::for_size(size, data.vocab.len(), cfg.max_len)
}

pub fn pretrain_model(cfg: &TransferConfig, data: &TransferData, size: SizeTag) -> Result<ModelCheckpoint> {
    let tcfg = train_config(cfg, TrainMode::Pretrain, cfg.pretrain_steps);
    let out = pretrain(
        &data.pretrain_corpus,
        &model_config(cfg, data, size),
        &tcfg,
        &SpanMaskSpec::default(),
        Some(&data.vocab.hash()),
        "synthetic-text",
    )?;
    Ok(out.checkpoint)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunResult {
    pub selected_step: usize,
    pub dev_bleu: f64,
    pub overall: f64,
    pub seen: f64,
    pub unseen: f64,
}

/// Fine-tunes from `start`, keeps the best dev snapshot and scores the test split.
pub fn finetune_and_test(cfg: &TransferConfig, data: &TransferData, start: Start<'_>) -> Result<RunResult> {
    let tcfg = train_config(cfg, TrainMode::Finetune, cfg.finetune_steps);
    let out = finetune(start, &data.train_pairs, &data.dev, &data.vocab, &tcfg, "synthetic")?;
    let best = out.best();
    let outs = greedy_decode_batch(&best.params, &best.cfg, &data.test_sources, cfg.dev_max_len);
    let hyps = outs.iter().map(|ids| data.vocab.decode(ids)).collect::<Result<Vec<_>>>()?;
    let report = evaluate_subsets(&data.dataset.test, &hyps, MetricSet { bleu: true, ..Default::default() })?;
    let bleu = |s: Subset| report.get(s.as_str()).and_then(|m| m.bleu.as_ref()).map_or(0.0, |b| b.score);
    Ok(RunResult {
        selected_step: best.step,
        dev_bleu: best.dev_bleu.unwrap_or(0.0),
        overall: report.subsets[0].bleu.as_ref().map_or(0.0, |b| b.score),
        seen: bleu(Subset::Seen),
        unseen: bleu(Subset::Unseen),
    })
}
