//! Optimizer loops for span-corruption pretraining and supervised
//! fine-tuning, dev-BLEU checkpoint selection, and the checkpoint file.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::metrics::corpus_bleu;
use crate::seq2seq::{forward_loss, greedy_decode_batch, init_params, span_corrupt, Batch, ModelConfig, Params, SpanMaskSpec};
use crate::linearize::{linearize_corpus, LinearizationConfig, Mode};
use crate::tokenizer::Vocab;
use crate::types::Example;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TrainMode {
    Pretrain,
    Finetune,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(Error::Config(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_steps: usize,
    /// Steps between dev evaluations (fine-tuning only).
    pub eval_every: usize,
    pub seed: u64,
    pub mode: TrainMode,
    pub optimizer: OptimizerKind,
    /// Global gradient-norm cap.
    pub clip_norm: f64,
    /// Decoding length cap for dev evaluation; the model's max_len if unset.
    pub dev_max_len: Option<usize>,
}

pub const DEFAULT_LEARNING_RATE: f64 = 0.001;
pub const DEFAULT_EVAL_EVERY: usize = 100;

impl TrainConfig {
    pub fn new(mode: TrainMode, seed: u64) -> Self {
        Self {
            learning_rate: DEFAULT_LEARNING_RATE,
            batch_size: 16,
            max_steps: 5000,
            eval_every: DEFAULT_EVAL_EVERY,
            seed,
            mode,
            optimizer: OptimizerKind::Adam,
            clip_norm: 1.0,
            dev_max_len: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be finite and non-negative", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be positive".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be at least 1".into());
        }
        if self.mode == TrainMode::Finetune && self.max_steps < self.eval_every {
            return bad(format!("max_steps {} below eval_every {}", self.max_steps, self.eval_every));
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    /// Hash of the checkpoint fine-tuning started from.
    pub pretrained_from: Option<String>,
    pub dataset: String,
    pub train_config: TrainConfig,
    pub vocab_hash: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub cfg: ModelConfig,
    pub params: Params<f32>,
    pub step: usize,
    pub dev_bleu: Option<f64>,
    pub provenance: Provenance,
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

fn payload_bytes(p: &Params<f32>) -> Vec<u8> {
    let mut out = Vec::with_capacity(p.num_params() * 4);
    for t in &p.tensors {
        for v in t.iter() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

impl ModelCheckpoint {
    /// Hex SHA-256 over the config JSON and the parameter bytes.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.cfg).expect("config serializes"));
        h.update(payload_bytes(&self.params));
        hex(&h.finalize())
    }

    /// Bitwise parameter equality (distinguishes -0.0 and NaN payloads).
    pub fn params_bit_equal(&self, other: &Self) -> bool {
        self.params.names == other.params.names
            && self.params.tensors.len() == other.params.tensors.len()
            && self.params.tensors.iter().zip(&other.params.tensors).all(|(a, b)| {
                a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

// ---------------------------------------------------------------------------
// optimizer

struct Optimizer {
    kind: OptimizerKind,
    lr: f32,
    clip: f64,
    m: Option<Params<f32>>,
    v: Option<Params<f32>>,
    t: i32,
}

const BETA1: f32 = 0.9;
const BETA2: f32 = 0.999;
const ADAM_EPS: f32 = 1e-8;

impl Optimizer {
    fn new(tcfg: &TrainConfig) -> Self {
        Self { kind: tcfg.optimizer, lr: tcfg.learning_rate as f32, clip: tcfg.clip_norm, m: None, v: None, t: 0 }
    }

    fn step(&mut self, p: &mut Params<f32>, mut g: Params<f32>) {
        let norm = g.global_norm();
        if norm > self.clip {
            g.scale((self.clip / norm) as f32);
        }
        let lr = self.lr;
        match self.kind {
            OptimizerKind::Sgd => {
                for (w, gw) in p.tensors.iter_mut().zip(&g.tensors) {
                    ndarray::Zip::from(w).and(gw).for_each(|w, &gw| *w -= lr * gw);
                }
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let m = self.m.get_or_insert_with(|| p.zeros_like());
                let v = self.v.get_or_insert_with(|| p.zeros_like());
                let c1 = 1.0 - BETA1.powi(self.t);
                let c2 = 1.0 - BETA2.powi(self.t);
                for (((w, gw), mw), vw) in p.tensors.iter_mut().zip(&g.tensors).zip(&mut m.tensors).zip(&mut v.tensors) {
                    ndarray::Zip::from(w).and(gw).and(mw).and(vw).for_each(|w, &gw, m, v| {
                        *m = BETA1 * *m + (1.0 - BETA1) * gw;
                        *v = BETA2 * *v + (1.0 - BETA2) * gw * gw;
                        *w -= lr * (*m / c1) / ((*v / c2).sqrt() + ADAM_EPS);
                    });
                }
            }
        }
    }
}

// ---------------------------------------------------------------------------
// batching

/// Seeded per-epoch shuffles; within windows of 32 batches, examples are
/// sorted by length before being cut into batches, and the batches are then
/// shuffled.
struct Sampler {
    lengths: Vec<usize>,
    batch_size: usize,
    rng: ChaCha8Rng,
    queue: Vec<Vec<usize>>,
}

const BUCKET_WINDOW: usize = 32;

impl Sampler {
    fn new(lengths: Vec<usize>, batch_size: usize, seed: u64) -> Self {
        Self { lengths, batch_size, rng: ChaCha8Rng::seed_from_u64(seed), queue: Vec::new() }
    }

    fn refill(&mut self) {
        let mut order: Vec<usize> = (0..self.lengths.len()).collect();
        order.shuffle(&mut self.rng);
        let mut batches = Vec::new();
        for window in order.chunks(self.batch_size * BUCKET_WINDOW) {
            let mut w = window.to_vec();
            w.sort_by_key(|&i| self.lengths[i]);
            let mut chunked: Vec<Vec<usize>> = w.chunks(self.batch_size).map(<[usize]>::to_vec).collect();
            chunked.shuffle(&mut self.rng);
            batches.extend(chunked);
        }
        batches.reverse();
        self.queue = batches;
    }

    fn next_batch(&mut self) -> Vec<usize> {
        if self.queue.is_empty() {
            self.refill();
        }
        self.queue.pop().expect("refilled queue is non-empty")
    }
}

fn check_fits(cfg: &ModelConfig, src: &[u32], tgt_with_eos: usize, what: &str, i: usize) -> Result<()> {
    if src.is_empty() || src.len() > cfg.max_len || tgt_with_eos > cfg.max_len {
        return Err(Error::Invalid(format!(
            "{what} {i}: source length {} / target length {} outside 1..={}",
            src.len(),
            tgt_with_eos,
            cfg.max_len
        )));
    }
    Ok(())
}

fn train_step(
    p: &mut Params<f32>,
    cfg: &ModelConfig,
    opt: &mut Optimizer,
    pairs: &[(Vec<u32>, Vec<u32>)],
    dropout: &mut ChaCha8Rng,
    step: usize,
) -> Result<f32> {
    let batch = Batch::from_pairs(pairs)?;
    let rng = if cfg.dropout_rate > 0.0 { Some(dropout) } else { None };
    let (loss, grads) = forward_loss(p, cfg, &batch, rng).map_err(|e| match e {
        Error::NonFinite(_) => Error::Diverged { step },
        other => other,
    })?;
    opt.step(p, grads);
    Ok(loss)
}

// ---------------------------------------------------------------------------
// pretraining

#[derive(Debug, Clone)]
pub struct PretrainOutcome {
    pub checkpoint: ModelCheckpoint,
    /// (step, batch loss) for every update
    pub losses: Vec<(usize, f32)>,
}

/// Span-corruption pretraining from a fresh initialization. Documents longer
/// than `cfg.max_len` are truncated; documents shorter than 2 tokens are
/// ignored.
pub fn pretrain(
    corpus: &[Vec<u32>],
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    spec: &SpanMaskSpec,
    vocab_hash: Option<&str>,
    dataset: &str,
) -> Result<PretrainOutcome> {
    tcfg.validate()?;
    spec.validate()?;
    cfg.validate()?;
    let docs: Vec<&[u32]> =
        corpus.iter().filter(|d| d.len() >= 2).map(|d| &d[..d.len().min(cfg.max_len - 1)]).collect();
    if docs.is_empty() && tcfg.max_steps > 0 {
        return Err(Error::Invalid("pretraining corpus has no document of at least 2 tokens".into()));
    }
    if let Some(&bad) = docs.iter().flat_map(|d| d.iter()).find(|&&id| id as usize >= cfg.vocab_size) {
        return Err(Error::TokenOutOfRange(bad));
    }
    let mut params: Params<f32> = init_params(cfg, tcfg.seed)?;
    let mut opt = Optimizer::new(tcfg);
    let mut sampler = Sampler::new(docs.iter().map(|d| d.len()).collect(), tcfg.batch_size, tcfg.seed ^ 0xba7c);
    let mut dropout = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0xd409);
    let mut noise = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0x5a11);
    let mut losses = Vec::with_capacity(tcfg.max_steps);
    for step in 0..tcfg.max_steps {
        let idx = sampler.next_batch();
        let pairs = idx
            .iter()
            .map(|&i| span_corrupt(docs[i], spec, rand::Rng::gen(&mut noise)))
            .collect::<Result<Vec<_>>>()?;
        // span_corrupt already terminates targets with EOS
        let pairs: Vec<(Vec<u32>, Vec<u32>)> =
            pairs.into_iter().map(|(inp, mut tgt)| {
                tgt.pop();
                (inp, tgt)
            }).collect();
        let loss = train_step(&mut params, cfg, &mut opt, &pairs, &mut dropout, step)?;
        losses.push((step, loss));
    }
    let checkpoint = ModelCheckpoint {
        cfg: cfg.clone(),
        params,
        step: tcfg.max_steps,
        dev_bleu: None,
        provenance: Provenance {
            pretrained_from: None,
            dataset: dataset.to_string(),
            train_config: tcfg.clone(),
            vocab_hash: vocab_hash.map(str::to_string),
        },
    };
    Ok(PretrainOutcome { checkpoint, losses })
}

// ---------------------------------------------------------------------------
// fine-tuning

pub enum Start<'a> {
    Checkpoint(&'a ModelCheckpoint),
    Fresh(ModelConfig),
}

/// Dev examples: encoded sources with their reference strings.
#[derive(Debug, Clone, Default)]
pub struct DevSet {
    pub sources: Vec<Vec<u32>>,
    pub references: Vec<Vec<String>>,
}

impl DevSet {
    pub fn from_examples(examples: &[Example], lin: &LinearizationConfig, vocab: &Vocab) -> Self {
        let rows = linearize_corpus(examples, lin, Mode::Eval);
        Self {
            sources: rows.iter().map(|l| vocab.encode(&l.source)).collect(),
            references: rows.into_iter().map(|l| l.references).collect(),
        }
    }
}

/// One encoded (source, target) pair per reference.
pub fn training_pairs(examples: &[Example], lin: &LinearizationConfig, vocab: &Vocab) -> Vec<(Vec<u32>, Vec<u32>)> {
    linearize_corpus(examples, lin, Mode::Train)
        .iter()
        .map(|l| (vocab.encode(&l.source), vocab.encode(&l.references[0])))
        .collect()
}

#[derive(Debug, Clone)]
pub struct FinetuneOutcome {
    pub snapshots: Vec<ModelCheckpoint>,
    pub selected: usize,
    pub losses: Vec<(usize, f32)>,
}

impl FinetuneOutcome {
    pub fn best(&self) -> &ModelCheckpoint {
        &self.snapshots[self.selected]
    }
}

/// Index of the highest score; ties go to the earliest. NaN never wins.
pub fn select_checkpoint(scores: &[f64]) -> Option<usize> {
    let mut best: Option<usize> = None;
    for (i, &s) in scores.iter().enumerate() {
        if s.is_nan() {
            continue;
        }
        if best.map_or(true, |b| s > scores[b]) {
            best = Some(i);
        }
    }
    best.or(if scores.is_empty() { None } else { Some(0) })
}

/// Greedy-decodes the sources and scores them with corpus BLEU.
pub fn dev_bleu(params: &Params<f32>, cfg: &ModelConfig, vocab: &Vocab, dev: &DevSet, max_len: usize) -> Result<f64> {
    let outs = greedy_decode_batch(params, cfg, &dev.sources, max_len);
    let hyps = outs.iter().map(|ids| vocab.decode(ids)).collect::<Result<Vec<_>>>()?;
    Ok(corpus_bleu(&hyps, &dev.references)?.score)
}

/// Updates every parameter on (source, target) pairs (targets without EOS),
/// snapshotting and scoring on dev every `eval_every` steps.
pub fn finetune(
    start: Start<'_>,
    train: &[(Vec<u32>, Vec<u32>)],
    dev: &DevSet,
    vocab: &Vocab,
    tcfg: &TrainConfig,
    dataset: &str,
) -> Result<FinetuneOutcome> {
    tcfg.validate()?;
    let vocab_hash = vocab.hash();
    let (cfg, mut params, pretrained_from) = match start {
        Start::Checkpoint(c) => {
            let recorded = c.provenance.vocab_hash.clone().unwrap_or_default();
            if recorded != vocab_hash {
                return Err(Error::VocabMismatch { checkpoint: recorded, data: vocab_hash });
            }
            if !c.params.matches(&c.cfg) {
                return Err(Error::Config("checkpoint parameters do not match its config".into()));
            }
            (c.cfg.clone(), c.params.clone(), Some(c.hash()))
        }
        Start::Fresh(cfg) => {
            let p = init_params(&cfg, tcfg.seed)?;
            (cfg, p, None)
        }
    };
    if cfg.vocab_size != vocab.len() {
        return Err(Error::Config(format!("model vocab_size {} but vocab has {} pieces", cfg.vocab_size, vocab.len())));
    }
    if train.is_empty() {
        return Err(Error::Invalid("no training pairs".into()));
    }
    if dev.sources.is_empty() || dev.sources.len() != dev.references.len() {
        return Err(Error::Invalid("dev set empty or misaligned".into()));
    }
    for (i, (s, t)) in train.iter().enumerate() {
        check_fits(&cfg, s, t.len() + 1, "training pair", i)?;
    }
    for (i, s) in dev.sources.iter().enumerate() {
        check_fits(&cfg, s, 1, "dev example", i)?;
    }
    let max_id = vocab.len() as u32;
    if let Some(&bad) = train.iter().flat_map(|(s, t)| s.iter().chain(t)).find(|&&id| id >= max_id) {
        return Err(Error::TokenOutOfRange(bad));
    }
    let dev_len = tcfg.dev_max_len.unwrap_or(cfg.max_len).min(cfg.max_len);

    let provenance = Provenance {
        pretrained_from,
        dataset: dataset.to_string(),
        train_config: tcfg.clone(),
        vocab_hash: Some(vocab_hash),
    };
    let mut opt = Optimizer::new(tcfg);
    let mut sampler = Sampler::new(train.iter().map(|(s, t)| s.len() + t.len()).collect(), tcfg.batch_size, tcfg.seed ^ 0xba7c);
    let mut dropout = ChaCha8Rng::seed_from_u64(tcfg.seed ^ 0xd409);
    let mut snapshots = Vec::new();
    let mut losses = Vec::with_capacity(tcfg.max_steps);
    for step in 0..tcfg.max_steps {
        let idx = sampler.next_batch();
        let pairs: Vec<(Vec<u32>, Vec<u32>)> = idx.iter().map(|&i| train[i].clone()).collect();
        let loss = train_step(&mut params, &cfg, &mut opt, &pairs, &mut dropout, step)?;
        losses.push((step, loss));
        let done = step + 1;
        if done % tcfg.eval_every == 0 {
            let bleu = dev_bleu(&params, &cfg, vocab, dev, dev_len)?;
            snapshots.push(ModelCheckpoint {
                cfg: cfg.clone(),
                params: params.clone(),
                step: done,
                dev_bleu: Some(bleu),
                provenance: provenance.clone(),
            });
        }
    }
    let scores: Vec<f64> = snapshots.iter().map(|s| s.dev_bleu.unwrap_or(f64::NAN)).collect();
    let selected = select_checkpoint(&scores).ok_or_else(|| Error::Invalid("no snapshot was taken".into()))?;
    Ok(FinetuneOutcome { snapshots, selected, losses })
}

// ---------------------------------------------------------------------------
// checkpoint file

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"D2TF";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: [usize; 2],
    /// byte offset into the payload
    offset: usize,
}

#[derive(Serialize, Deserialize)]
struct Header {
    cfg: ModelConfig,
    step: usize,
    dev_bleu: Option<f64>,
    provenance: Provenance,
    tensors: Vec<TensorEntry>,
}

/// `D2TF`, u32 version, u32 header length, JSON header, little-endian f32
/// payload, then the SHA-256 of everything before it.
pub fn checkpoint_to_bytes(ckpt: &ModelCheckpoint) -> Vec<u8> {
    let mut offset = 0;
    let tensors = ckpt
        .params
        .names
        .iter()
        .zip(&ckpt.params.tensors)
        .map(|(name, t)| {
            let e = TensorEntry { name: name.clone(), shape: [t.nrows(), t.ncols()], offset };
            offset += t.len() * 4;
            e
        })
        .collect();
    let header = Header {
        cfg: ckpt.cfg.clone(),
        step: ckpt.step,
        dev_bleu: ckpt.dev_bleu,
        provenance: ckpt.provenance.clone(),
        tensors,
    };
    let header = serde_json::to_vec(&header).expect("header serializes");
    let payload = payload_bytes(&ckpt.params);
    let mut out = Vec::with_capacity(12 + header.len() + payload.len() + 32);
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    out.extend_from_slice(&(header.len() as u32).to_le_bytes());
    out.extend_from_slice(&header);
    out.extend_from_slice(&payload);
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    out
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<ModelCheckpoint> {
    if bytes.len() < 4 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(if bytes.len() < 4 && CHECKPOINT_MAGIC.starts_with(bytes) {
            Error::CheckpointTruncated("missing magic".into())
        } else {
            Error::CheckpointFormat("bad magic".into())
        });
    }
    if bytes.len() < 12 {
        return Err(Error::CheckpointTruncated("incomplete preamble".into()));
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
    if version != CHECKPOINT_VERSION {
        return Err(Error::CheckpointVersion { found: version, expected: CHECKPOINT_VERSION });
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
    if bytes.len() < 12 + header_len {
        return Err(Error::CheckpointTruncated("incomplete header".into()));
    }
    let header: Header = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| Error::CheckpointFormat(format!("header: {e}")))?;
    let payload_len: usize = header.tensors.iter().map(|t| t.shape[0] * t.shape[1] * 4).sum();
    let body_end = 12 + header_len + payload_len;
    if bytes.len() < body_end + 32 {
        return Err(Error::CheckpointTruncated(format!("{} bytes, expected {}", bytes.len(), body_end + 32)));
    }
    if bytes.len() > body_end + 32 {
        return Err(Error::CheckpointFormat("trailing bytes".into()));
    }
    if Sha256::digest(&bytes[..body_end])[..] != bytes[body_end..] {
        return Err(Error::CheckpointHash);
    }
    let payload = &bytes[12 + header_len..body_end];
    let mut names = Vec::with_capacity(header.tensors.len());
    let mut tensors = Vec::with_capacity(header.tensors.len());
    for t in &header.tensors {
        let n = t.shape[0] * t.shape[1];
        if t.offset + n * 4 > payload.len() {
            return Err(Error::CheckpointFormat(format!("tensor {} exceeds payload", t.name)));
        }
        let data: Vec<f32> = payload[t.offset..t.offset + n * 4]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
            .collect();
        names.push(t.name.clone());
        tensors.push(Array2::from_shape_vec((t.shape[0], t.shape[1]), data).expect("shape matches length"));
    }
    let params = Params { names, tensors };
    if !params.matches(&header.cfg) {
        return Err(Error::CheckpointFormat("tensor manifest does not match config".into()));
    }
    Ok(ModelCheckpoint { cfg: header.cfg, params, step: header.step, dev_bleu: header.dev_bleu, provenance: header.provenance })
}

pub fn save_checkpoint(ckpt: &ModelCheckpoint, path: &Path) -> Result<()> {
    let bytes = checkpoint_to_bytes(ckpt);
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelCheckpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    checkpoint_from_bytes(&bytes)
}
