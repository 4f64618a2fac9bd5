//! Greedy and beam decoding over an incremental (key/value cached) decoder.

use std::cmp::Ordering;

use ndarray::{s, Array1, Array2};

use super::config::{ModelConfig, Scalar};
use super::model::{attn_forward, embed, ffn_forward, gain, log_softmax, output_scale, rms_forward, softmax_row, AttnShape};
use super::params::{Layout, Params};
use crate::tokenizer::{EOS, PAD};

/// A next-token distribution that can be advanced one token at a time.
pub trait StepModel {
    type State: Clone;

    /// Feeds every state's pending token and returns next-token log-probs.
    fn step(&self, states: &mut [Self::State]) -> Vec<Vec<f64>>;

    /// Sets the token to be fed at the next `step`.
    fn push(&self, state: &mut Self::State, token: u32);
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated ids, EOS excluded.
    pub tokens: Vec<u32>,
    pub log_prob: f64,
    pub finished: bool,
}

fn argmax_lowest(scores: impl Iterator<Item = f64>) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (i, s) in scores.enumerate() {
        if s > best.1 || (i == 0 && best.1 == f64::NEG_INFINITY) {
            best = (i, s);
        }
    }
    best
}

/// Greedy search on every initial state in lockstep. Ties go to the lowest id.
pub fn greedy_search<M: StepModel>(model: &M, init: Vec<M::State>, max_steps: usize) -> Vec<Hypothesis> {
    let mut hyps: Vec<Hypothesis> =
        init.iter().map(|_| Hypothesis { tokens: Vec::new(), log_prob: 0.0, finished: false }).collect();
    let mut active: Vec<usize> = (0..init.len()).collect();
    let mut states = init;
    for _ in 0..max_steps {
        if active.is_empty() {
            break;
        }
        let lps = model.step(&mut states);
        let mut next_active = Vec::with_capacity(active.len());
        let mut next_states = Vec::with_capacity(active.len());
        for ((&h, mut st), lp) in active.iter().zip(states).zip(lps) {
            let base = hyps[h].log_prob;
            let (tok, score) = argmax_lowest(lp.iter().map(|&l| base + l));
            hyps[h].log_prob = score;
            if tok as u32 == EOS {
                hyps[h].finished = true;
            } else {
                hyps[h].tokens.push(tok as u32);
                model.push(&mut st, tok as u32);
                next_active.push(h);
                next_states.push(st);
            }
        }
        active = next_active;
        states = next_states;
    }
    hyps
}

fn better(a: (f64, &[u32]), b: (f64, &[u32])) -> Ordering {
    // descending score, then ascending sequence
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Length-unnormalized beam search. Hypotheses ending in EOS retire; the
/// best finished hypothesis wins, else the best unfinished one at the end.
pub fn beam_search<M: StepModel>(model: &M, init: M::State, width: usize, max_steps: usize) -> Hypothesis {
    assert!(width >= 1, "beam width must be at least 1");
    let mut live: Vec<(Vec<u32>, f64, M::State)> = vec![(Vec::new(), 0.0, init)];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_steps {
        let mut states: Vec<M::State> = live.iter().map(|l| l.2.clone()).collect();
        let lps = model.step(&mut states);
        let mut cands: Vec<(f64, usize, u32)> = Vec::with_capacity(live.len() * lps.first().map_or(0, Vec::len));
        for (i, lp) in lps.iter().enumerate() {
            cands.extend(lp.iter().enumerate().map(|(t, &l)| (live[i].1 + l, i, t as u32)));
        }
        let seq_of = |c: &(f64, usize, u32)| {
            let mut v = live[c.1].0.clone();
            v.push(c.2);
            v
        };
        let cmp = |a: &(f64, usize, u32), b: &(f64, usize, u32)| {
            b.0.total_cmp(&a.0).then_with(|| {
                let (pa, pb) = (&live[a.1].0, &live[b.1].0);
                pa.iter().chain(std::iter::once(&a.2)).cmp(pb.iter().chain(std::iter::once(&b.2)))
            })
        };
        if cands.len() > width {
            cands.select_nth_unstable_by(width - 1, cmp);
            cands.truncate(width);
        }
        cands.sort_by(cmp);
        let mut next = Vec::with_capacity(width);
        for c in &cands {
            let seq = seq_of(c);
            if c.2 == EOS {
                let mut tokens = seq;
                tokens.pop();
                finished.push(Hypothesis { tokens, log_prob: c.0, finished: true });
            } else {
                let mut st = states[c.1].clone();
                model.push(&mut st, c.2);
                next.push((seq, c.0, st));
            }
        }
        live = next;
        if live.is_empty() {
            break;
        }
        let best_live = live.iter().map(|l| l.1).fold(f64::NEG_INFINITY, f64::max);
        let best_done = finished.iter().map(|h| h.log_prob).fold(f64::NEG_INFINITY, f64::max);
        // scores never increase, so nothing live can overtake
        if best_done > best_live {
            break;
        }
    }
    if let Some(best) = finished.iter().min_by(|a, b| better((a.log_prob, &a.tokens), (b.log_prob, &b.tokens))) {
        return best.clone();
    }
    live.into_iter()
        .map(|(tokens, log_prob, _)| Hypothesis { tokens, log_prob, finished: false })
        .min_by(|a, b| better((a.log_prob, &a.tokens), (b.log_prob, &b.tokens)))
        .expect("beam holds at least one hypothesis")
}

// ---------------------------------------------------------------------------
// transformer stepper

#[derive(Debug, Clone)]
pub struct DecoderState<F> {
    src: usize,
    pos: usize,
    pending: u32,
    /// per layer, rows of d_model values for every fed position
    keys: Vec<Vec<F>>,
    values: Vec<Vec<F>>,
}

pub struct TransformerStepper<'a, F> {
    p: &'a Params<F>,
    cfg: &'a ModelConfig,
    lay: Layout,
    /// [source][layer] -> (keys, values), len x d
    cross: Vec<Vec<(Array2<F>, Array2<F>)>>,
}

fn encode_sources<F: Scalar>(p: &Params<F>, cfg: &ModelConfig, lay: &Layout, sources: &[Vec<u32>]) -> Vec<Array2<F>> {
    let b = sources.len();
    let s_len = sources.iter().map(Vec::len).max().unwrap_or(1).max(1);
    let mut ids = Array2::from_elem((b, s_len), PAD);
    let mut mask = Array2::from_elem((b, s_len), false);
    for (i, src) in sources.iter().enumerate() {
        for (j, &id) in src.iter().enumerate() {
            ids[[i, j]] = id;
            mask[[i, j]] = true;
        }
    }
    let shape = AttnShape { batch: b, tq: s_len, tk: s_len, heads: cfg.n_heads, key_mask: Some(mask.view()), causal: false };
    let mut x = embed(p, lay.embed, lay.enc_pos, &ids).x;
    for ix in &lay.enc {
        let (h1, _) = rms_forward(&x, gain(p, ix.ln_attn));
        let (a, _) = attn_forward(p, ix.attn, &h1, &h1, &shape);
        x += &a;
        let (h2, _) = rms_forward(&x, gain(p, ix.ln_ff));
        let (f, _) = ffn_forward(p, ix.ff_in, ix.ff_out, &h2);
        x += &f;
    }
    let (memory, _) = rms_forward(&x, gain(p, lay.enc_ln));
    sources
        .iter()
        .enumerate()
        .map(|(i, src)| memory.slice(s![i * s_len..i * s_len + src.len(), ..]).to_owned())
        .collect()
}

impl<'a, F: Scalar> TransformerStepper<'a, F> {
    /// Encodes the sources; each must be non-empty and within `max_len`.
    pub fn new(p: &'a Params<F>, cfg: &'a ModelConfig, sources: &[Vec<u32>]) -> Self {
        let lay = Layout::new(cfg);
        assert!(sources.iter().all(|s| !s.is_empty() && s.len() <= cfg.max_len), "source length out of range");
        let memories = encode_sources(p, cfg, &lay, sources);
        let cross = memories
            .iter()
            .map(|m| {
                lay.dec
                    .iter()
                    .map(|ix| (m.dot(&p.tensors[ix.cross_attn.k]), m.dot(&p.tensors[ix.cross_attn.v])))
                    .collect()
            })
            .collect();
        Self { p, cfg, lay, cross }
    }

    pub fn initial(&self, src: usize) -> DecoderState<F> {
        DecoderState {
            src,
            pos: 0,
            pending: PAD,
            keys: vec![Vec::new(); self.cfg.layers],
            values: vec![Vec::new(); self.cfg.layers],
        }
    }

    /// Largest number of decoding steps the position table supports.
    pub fn max_steps(&self) -> usize {
        self.cfg.max_len
    }

    fn attend(&self, q: Array1<F>, keys: &[F], values: &[F], n: usize) -> Array1<F> {
        let d = self.cfg.d_model;
        let dh = self.cfg.head_dim();
        let scale = F::lit(1.0 / (dh as f64).sqrt());
        let mut out = Array1::zeros(d);
        let mut scores = Array1::zeros(n);
        for h in 0..self.cfg.n_heads {
            let cols = h * dh..(h + 1) * dh;
            for t in 0..n {
                let k = &keys[t * d + cols.start..t * d + cols.end];
                scores[t] = q.slice(s![cols.clone()]).iter().zip(k).map(|(&a, &b)| a * b).sum();
            }
            softmax_row(&mut scores.view_mut(), |_| true, scale);
            for t in 0..n {
                let v = &values[t * d + cols.start..t * d + cols.end];
                let a = scores[t];
                for (o, &vv) in out.slice_mut(s![cols.clone()]).iter_mut().zip(v) {
                    *o += a * vv;
                }
            }
        }
        out
    }
}

impl<F: Scalar> StepModel for TransformerStepper<'_, F> {
    type State = DecoderState<F>;

    fn step(&self, states: &mut [DecoderState<F>]) -> Vec<Vec<f64>> {
        if states.is_empty() {
            return Vec::new();
        }
        let (p, lay, d) = (self.p, &self.lay, self.cfg.d_model);
        let w = states.len();
        let mut y = Array2::zeros((w, d));
        for (i, st) in states.iter().enumerate() {
            assert!(st.pos < self.cfg.max_len, "decoder position beyond max_len");
            let mut row = y.row_mut(i);
            row.assign(&p.tensors[lay.embed].row(st.pending as usize));
            row += &p.tensors[lay.dec_pos].row(st.pos);
        }
        let ones = Array1::from_elem(d, F::one());
        let (mut y, _) = rms_forward(&y, ones.view());
        for (l, ix) in lay.dec.iter().enumerate() {
            let (h1, _) = rms_forward(&y, gain(p, ix.ln_self));
            let q = h1.dot(&p.tensors[ix.self_attn.q]);
            let k = h1.dot(&p.tensors[ix.self_attn.k]);
            let v = h1.dot(&p.tensors[ix.self_attn.v]);
            let mut ctx = Array2::zeros((w, d));
            for (i, st) in states.iter_mut().enumerate() {
                st.keys[l].extend(k.row(i).iter());
                st.values[l].extend(v.row(i).iter());
                let n = st.pos + 1;
                ctx.row_mut(i).assign(&self.attend(q.row(i).to_owned(), &st.keys[l], &st.values[l], n));
            }
            y += &ctx.dot(&p.tensors[ix.self_attn.o]);

            let (h2, _) = rms_forward(&y, gain(p, ix.ln_cross));
            let q = h2.dot(&p.tensors[ix.cross_attn.q]);
            let mut ctx = Array2::zeros((w, d));
            for (i, st) in states.iter().enumerate() {
                let (ck, cv) = &self.cross[st.src][l];
                let (ks, vs) = (ck.as_slice().expect("contiguous"), cv.as_slice().expect("contiguous"));
                ctx.row_mut(i).assign(&self.attend(q.row(i).to_owned(), ks, vs, ck.nrows()));
            }
            y += &ctx.dot(&p.tensors[ix.cross_attn.o]);

            let (h3, _) = rms_forward(&y, gain(p, ix.ln_ff));
            let (f, _) = ffn_forward(p, ix.ff_in, ix.ff_out, &h3);
            y += &f;
        }
        let (mut z, _) = rms_forward(&y, gain(p, lay.dec_ln));
        z *= output_scale::<F>(self.cfg);
        let logits = z.dot(&p.tensors[lay.embed].t());
        for st in states.iter_mut() {
            st.pos += 1;
        }
        logits
            .rows()
            .into_iter()
            .map(|r| log_softmax(r.mapv(|x| x.to_f64().unwrap_or(f64::NAN)).view()).to_vec())
            .collect()
    }

    fn push(&self, state: &mut DecoderState<F>, token: u32) {
        state.pending = token;
    }
}

fn steps_for(cfg: &ModelConfig, max_len: usize) -> usize {
    max_len.min(cfg.max_len)
}

/// Greedy decoding of one source; the returned ids exclude EOS.
pub fn greedy_decode<F: Scalar>(p: &Params<F>, cfg: &ModelConfig, source: &[u32], max_len: usize) -> Vec<u32> {
    greedy_decode_batch(p, cfg, &[source.to_vec()], max_len).pop().expect("one output")
}

/// Greedy decoding of many sources in lockstep (results equal one-by-one decoding).
pub fn greedy_decode_batch<F: Scalar>(p: &Params<F>, cfg: &ModelConfig, sources: &[Vec<u32>], max_len: usize) -> Vec<Vec<u32>> {
    if sources.is_empty() {
        return Vec::new();
    }
    let stepper = TransformerStepper::new(p, cfg, sources);
    let init = (0..sources.len()).map(|i| stepper.initial(i)).collect();
    greedy_search(&stepper, init, steps_for(cfg, max_len)).into_iter().map(|h| h.tokens).collect()
}

pub fn beam_decode<F: Scalar>(p: &Params<F>, cfg: &ModelConfig, source: &[u32], width: usize, max_len: usize) -> Vec<u32> {
    beam_decode_hypothesis(p, cfg, source, width, max_len).tokens
}

pub fn beam_decode_hypothesis<F: Scalar>(
    p: &Params<F>,
    cfg: &ModelConfig,
    source: &[u32],
    width: usize,
    max_len: usize,
) -> Hypothesis {
    let stepper = TransformerStepper::new(p, cfg, &[source.to_vec()]);
    beam_search(&stepper, stepper.initial(0), width, steps_for(cfg, max_len))
}

pub fn greedy_decode_hypothesis<F: Scalar>(p: &Params<F>, cfg: &ModelConfig, source: &[u32], max_len: usize) -> Hypothesis {
    let stepper = TransformerStepper::new(p, cfg, &[source.to_vec()]);
    greedy_search(&stepper, vec![stepper.initial(0)], steps_for(cfg, max_len)).pop().expect("one hypothesis")
}
