//! Encoder-decoder forward pass, cross-entropy loss and hand-derived
//! backward pass.
//!
//! Blocks are pre-norm residual (RMS norm with a gain, no bias), attention
//! projections carry no bias, the feed-forward uses ReLU, positions are
//! learned absolute embeddings and the token embedding is shared by the
//! encoder input, decoder input and output projection. Decoder states are
//! scaled by `d_model^-1/2` before the tied projection.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::config::{ModelConfig, Scalar};
use super::params::{AttnIx, Layout, Params};
use crate::error::{Error, Result};
use crate::tokenizer::{EOS, PAD};

pub(crate) const RMS_EPS: f64 = 1e-6;

/// Padded encoder/decoder id matrices for one optimizer step.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    /// B x S source ids, PAD beyond each source.
    pub enc_ids: Array2<u32>,
    /// true for real source tokens.
    pub enc_mask: Array2<bool>,
    /// B x T decoder inputs: PAD (start) followed by the target shifted right.
    pub dec_in: Array2<u32>,
    /// B x T targets, EOS-terminated.
    pub targets: Array2<u32>,
    pub loss_mask: Array2<bool>,
}

impl Batch {
    /// Builds a batch from (source, target) id pairs. EOS is appended to each
    /// target here.
    pub fn from_pairs(pairs: &[(Vec<u32>, Vec<u32>)]) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Invalid("empty batch".into()));
        }
        let b = pairs.len();
        let s_len = pairs.iter().map(|p| p.0.len()).max().unwrap_or(0).max(1);
        let t_len = pairs.iter().map(|p| p.1.len() + 1).max().unwrap_or(1);
        let mut enc_ids = Array2::from_elem((b, s_len), PAD);
        let mut enc_mask = Array2::from_elem((b, s_len), false);
        let mut dec_in = Array2::from_elem((b, t_len), PAD);
        let mut targets = Array2::from_elem((b, t_len), PAD);
        let mut loss_mask = Array2::from_elem((b, t_len), false);
        for (i, (src, tgt)) in pairs.iter().enumerate() {
            if src.is_empty() {
                return Err(Error::Invalid(format!("batch element {i} has an empty source")));
            }
            for (j, &id) in src.iter().enumerate() {
                enc_ids[[i, j]] = id;
                enc_mask[[i, j]] = true;
            }
            for (j, &id) in tgt.iter().chain(std::iter::once(&EOS)).enumerate() {
                targets[[i, j]] = id;
                loss_mask[[i, j]] = true;
                if j + 1 < t_len {
                    dec_in[[i, j + 1]] = id;
                }
            }
        }
        Ok(Self { enc_ids, enc_mask, dec_in, targets, loss_mask })
    }

    pub fn size(&self) -> usize {
        self.enc_ids.nrows()
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let (b, s_len) = self.enc_ids.dim();
        let (b2, t_len) = self.dec_in.dim();
        if b == 0 || b != b2 || self.targets.dim() != (b, t_len) || self.loss_mask.dim() != (b, t_len) {
            return Err(Error::Invalid("batch tensors disagree in shape".into()));
        }
        if self.enc_mask.dim() != (b, s_len) {
            return Err(Error::Invalid("encoder mask shape mismatch".into()));
        }
        if s_len > cfg.max_len || t_len > cfg.max_len {
            return Err(Error::Invalid(format!(
                "sequence length {} exceeds max_len {}",
                s_len.max(t_len),
                cfg.max_len
            )));
        }
        let vocab = cfg.vocab_size as u32;
        for arr in [&self.enc_ids, &self.dec_in, &self.targets] {
            if let Some(&bad) = arr.iter().find(|&&id| id >= vocab) {
                return Err(Error::TokenOutOfRange(bad));
            }
        }
        if Zip::from(&self.enc_ids).and(&self.enc_mask).any(|&id, &m| !m && id != PAD) {
            return Err(Error::Invalid("encoder padding must use PAD".into()));
        }
        if self.enc_mask.rows().into_iter().any(|r| !r.iter().any(|&m| m)) {
            return Err(Error::Invalid("batch element without source tokens".into()));
        }
        if !self.loss_mask.iter().any(|&m| m) {
            return Err(Error::Invalid("loss mask selects no positions".into()));
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// building blocks

pub(crate) fn rms_forward<F: Scalar>(x: &Array2<F>, g: ArrayView1<F>) -> (Array2<F>, Vec<F>) {
    let d = F::lit(x.ncols() as f64);
    let eps = F::lit(RMS_EPS);
    let mut y = x.clone();
    let mut inv = Vec::with_capacity(x.nrows());
    for mut row in y.rows_mut() {
        let ms = row.iter().map(|&v| v * v).sum::<F>() / d;
        let r = F::one() / (ms + eps).sqrt();
        inv.push(r);
        Zip::from(&mut row).and(&g).for_each(|v, &gi| *v = *v * r * gi);
    }
    (y, inv)
}

fn rms_backward<F: Scalar>(dy: &Array2<F>, x: &Array2<F>, g: ArrayView1<F>, inv: &[F], dg: &mut Array2<F>) -> Array2<F> {
    let d = F::lit(x.ncols() as f64);
    let mut dx = Array2::zeros(x.raw_dim());
    let mut dg_row = dg.row_mut(0);
    for (i, ((dy_r, x_r), mut dx_r)) in dy.rows().into_iter().zip(x.rows()).zip(dx.rows_mut()).enumerate() {
        let r = inv[i];
        let mut dot = F::zero();
        for j in 0..x_r.len() {
            let xhat = x_r[j] * r;
            dg_row[j] += dy_r[j] * xhat;
            dot += dy_r[j] * g[j] * xhat;
        }
        let mean = dot / d;
        for j in 0..x_r.len() {
            let xhat = x_r[j] * r;
            dx_r[j] = r * (dy_r[j] * g[j] - xhat * mean);
        }
    }
    dx
}

fn dropout<F: Scalar>(x: &mut Array2<F>, rate: f64, rng: Option<&mut ChaCha8Rng>) -> Option<Array2<F>> {
    let rng = rng?;
    if rate <= 0.0 {
        return None;
    }
    let keep = 1.0 - rate;
    let scale = F::lit(1.0 / keep);
    let mask = Array2::from_shape_simple_fn(x.raw_dim(), || if rng.gen::<f64>() < keep { scale } else { F::zero() });
    *x *= &mask;
    Some(mask)
}

fn apply_mask<F: Scalar>(dx: &Array2<F>, mask: &Option<Array2<F>>) -> Array2<F> {
    match mask {
        Some(m) => dx * m,
        None => dx.clone(),
    }
}

/// dst += a^T b
fn acc_at_b<F: Scalar>(dst: &mut Array2<F>, a: ArrayView2<F>, b: ArrayView2<F>) {
    general_mat_mul(F::one(), &a.t(), &b, F::one(), dst);
}

pub(crate) struct AttnState<F> {
    q: Array2<F>,
    k: Array2<F>,
    v: Array2<F>,
    /// per (batch, head), Tq x Tk
    probs: Vec<Array2<F>>,
    ctx: Array2<F>,
}

pub(crate) struct AttnShape<'a> {
    pub batch: usize,
    pub tq: usize,
    pub tk: usize,
    pub heads: usize,
    pub key_mask: Option<ArrayView2<'a, bool>>,
    pub causal: bool,
}

impl AttnShape<'_> {
    fn allowed(&self, b: usize, i: usize, j: usize) -> bool {
        (!self.causal || j <= i) && self.key_mask.map_or(true, |m| m[[b, j]])
    }
}

pub(crate) fn attn_forward<F: Scalar>(
    p: &Params<F>,
    ix: AttnIx,
    q_in: &Array2<F>,
    kv_in: &Array2<F>,
    shape: &AttnShape,
) -> (Array2<F>, AttnState<F>) {
    let q = q_in.dot(&p.tensors[ix.q]);
    let k = kv_in.dot(&p.tensors[ix.k]);
    let v = kv_in.dot(&p.tensors[ix.v]);
    let d = q.ncols();
    let dh = d / shape.heads;
    let scale = F::lit(1.0 / (dh as f64).sqrt());
    let mut ctx = Array2::zeros((shape.batch * shape.tq, d));
    let mut probs = Vec::with_capacity(shape.batch * shape.heads);
    for b in 0..shape.batch {
        let (qr, kr) = (b * shape.tq..(b + 1) * shape.tq, b * shape.tk..(b + 1) * shape.tk);
        for h in 0..shape.heads {
            let cols = h * dh..(h + 1) * dh;
            let qh = q.slice(s![qr.clone(), cols.clone()]);
            let kh = k.slice(s![kr.clone(), cols.clone()]);
            let vh = v.slice(s![kr.clone(), cols.clone()]);
            let mut a = qh.dot(&kh.t());
            for (i, mut row) in a.rows_mut().into_iter().enumerate() {
                softmax_row(&mut row, |j| shape.allowed(b, i, j), scale);
            }
            ctx.slice_mut(s![qr.clone(), cols]).assign(&a.dot(&vh));
            probs.push(a);
        }
    }
    let out = ctx.dot(&p.tensors[ix.o]);
    (out, AttnState { q, k, v, probs, ctx })
}

/// In-place masked softmax of `scale * row`. Disallowed entries become 0.
pub(crate) fn softmax_row<F: Scalar>(row: &mut ndarray::ArrayViewMut1<F>, allowed: impl Fn(usize) -> bool, scale: F) {
    let mut max = F::neg_infinity();
    for (j, v) in row.iter().enumerate() {
        if allowed(j) {
            max = max.max(*v * scale);
        }
    }
    if max == F::neg_infinity() {
        row.fill(F::zero());
        return;
    }
    let mut sum = F::zero();
    for (j, v) in row.iter_mut().enumerate() {
        if allowed(j) {
            *v = (*v * scale - max).exp();
            sum += *v;
        } else {
            *v = F::zero();
        }
    }
    row.mapv_inplace(|v| v / sum);
}

/// Returns (d q_in, d kv_in); parameter gradients accumulate into `grads`.
fn attn_backward<F: Scalar>(
    p: &Params<F>,
    grads: &mut Params<F>,
    ix: AttnIx,
    dout: &Array2<F>,
    st: &AttnState<F>,
    q_in: &Array2<F>,
    kv_in: &Array2<F>,
    shape: &AttnShape,
) -> (Array2<F>, Array2<F>) {
    acc_at_b(&mut grads.tensors[ix.o], st.ctx.view(), dout.view());
    let dctx = dout.dot(&p.tensors[ix.o].t());
    let d = st.q.ncols();
    let dh = d / shape.heads;
    let scale = F::lit(1.0 / (dh as f64).sqrt());
    let mut dq = Array2::zeros(st.q.raw_dim());
    let mut dk = Array2::zeros(st.k.raw_dim());
    let mut dv = Array2::zeros(st.v.raw_dim());
    for b in 0..shape.batch {
        let (qr, kr) = (b * shape.tq..(b + 1) * shape.tq, b * shape.tk..(b + 1) * shape.tk);
        for h in 0..shape.heads {
            let cols = h * dh..(h + 1) * dh;
            let a = &st.probs[b * shape.heads + h];
            let dctx_h = dctx.slice(s![qr.clone(), cols.clone()]);
            let qh = st.q.slice(s![qr.clone(), cols.clone()]);
            let kh = st.k.slice(s![kr.clone(), cols.clone()]);
            let vh = st.v.slice(s![kr.clone(), cols.clone()]);
            let mut ds = dctx_h.dot(&vh.t());
            dv.slice_mut(s![kr.clone(), cols.clone()]).assign(&a.t().dot(&dctx_h));
            for (mut ds_r, a_r) in ds.rows_mut().into_iter().zip(a.rows()) {
                let dot: F = ds_r.iter().zip(a_r.iter()).map(|(&x, &y)| x * y).sum();
                Zip::from(&mut ds_r).and(&a_r).for_each(|x, &y| *x = y * (*x - dot) * scale);
            }
            dq.slice_mut(s![qr.clone(), cols.clone()]).assign(&ds.dot(&kh));
            dk.slice_mut(s![kr.clone(), cols]).assign(&ds.t().dot(&qh));
        }
    }
    acc_at_b(&mut grads.tensors[ix.q], q_in.view(), dq.view());
    acc_at_b(&mut grads.tensors[ix.k], kv_in.view(), dk.view());
    acc_at_b(&mut grads.tensors[ix.v], kv_in.view(), dv.view());
    let dq_in = dq.dot(&p.tensors[ix.q].t());
    let mut dkv_in = dk.dot(&p.tensors[ix.k].t());
    general_mat_mul(F::one(), &dv, &p.tensors[ix.v].t(), F::one(), &mut dkv_in);
    (dq_in, dkv_in)
}

pub(crate) fn ffn_forward<F: Scalar>(p: &Params<F>, w_in: usize, w_out: usize, h: &Array2<F>) -> (Array2<F>, Array2<F>) {
    let mut act = h.dot(&p.tensors[w_in]);
    act.mapv_inplace(|v| v.max(F::zero()));
    let out = act.dot(&p.tensors[w_out]);
    (out, act)
}

fn ffn_backward<F: Scalar>(
    p: &Params<F>,
    grads: &mut Params<F>,
    w_in: usize,
    w_out: usize,
    dout: &Array2<F>,
    h: &Array2<F>,
    act: &Array2<F>,
) -> Array2<F> {
    acc_at_b(&mut grads.tensors[w_out], act.view(), dout.view());
    let mut dpre = dout.dot(&p.tensors[w_out].t());
    Zip::from(&mut dpre).and(act).for_each(|g, &a| {
        if a <= F::zero() {
            *g = F::zero();
        }
    });
    acc_at_b(&mut grads.tensors[w_in], h.view(), dpre.view());
    dpre.dot(&p.tensors[w_in].t())
}

pub(crate) fn gain<F: Scalar>(p: &Params<F>, ix: usize) -> ArrayView1<'_, F> {
    p.tensors[ix].row(0)
}

/// Token plus position lookup, rescaled to unit RMS per row without a gain.
/// Returns the normalized rows along with the raw sums and inverse RMS for
/// the backward pass.
pub(crate) fn embed<F: Scalar>(p: &Params<F>, tok: usize, pos: usize, ids: &Array2<u32>) -> Embedded<F> {
    let (b, t) = ids.dim();
    let d = p.tensors[tok].ncols();
    let mut raw = Array2::zeros((b * t, d));
    for ((i, j), &id) in ids.indexed_iter() {
        let mut row = raw.row_mut(i * t + j);
        row.assign(&p.tensors[tok].row(id as usize));
        row += &p.tensors[pos].row(j);
    }
    let ones = Array1::from_elem(d, F::one());
    let (x, inv) = rms_forward(&raw, ones.view());
    Embedded { x, raw, inv }
}

pub(crate) struct Embedded<F> {
    pub x: Array2<F>,
    raw: Array2<F>,
    inv: Vec<F>,
}

fn embed_backward<F: Scalar>(grads: &mut Params<F>, tok: usize, pos: usize, ids: &Array2<u32>, e: &Embedded<F>, dx: &Array2<F>) {
    let t = ids.ncols();
    let d = dx.ncols();
    let ones = Array1::from_elem(d, F::one());
    let mut unused = Array2::zeros((1, d));
    let dx = rms_backward(dx, &e.raw, ones.view(), &e.inv, &mut unused);
    for ((i, j), &id) in ids.indexed_iter() {
        let g = dx.row(i * t + j);
        let mut row = grads.tensors[tok].row_mut(id as usize);
        row += &g;
        let mut prow = grads.tensors[pos].row_mut(j);
        prow += &g;
    }
}

// ---------------------------------------------------------------------------
// full model

struct EncLayerCache<F> {
    x_in: Array2<F>,
    h1: Array2<F>,
    inv1: Vec<F>,
    attn: AttnState<F>,
    drop1: Option<Array2<F>>,
    x_mid: Array2<F>,
    h2: Array2<F>,
    inv2: Vec<F>,
    act: Array2<F>,
    drop2: Option<Array2<F>>,
}

struct DecLayerCache<F> {
    y_in: Array2<F>,
    h1: Array2<F>,
    inv1: Vec<F>,
    self_attn: AttnState<F>,
    drop1: Option<Array2<F>>,
    y_mid1: Array2<F>,
    h2: Array2<F>,
    inv2: Vec<F>,
    cross_attn: AttnState<F>,
    drop2: Option<Array2<F>>,
    y_mid2: Array2<F>,
    h3: Array2<F>,
    inv3: Vec<F>,
    act: Array2<F>,
    drop3: Option<Array2<F>>,
}

struct Forward<F> {
    enc_emb: Embedded<F>,
    dec_emb: Embedded<F>,
    enc: Vec<EncLayerCache<F>>,
    enc_last: Array2<F>,
    enc_inv: Vec<F>,
    memory: Array2<F>,
    dec: Vec<DecLayerCache<F>>,
    dec_last: Array2<F>,
    dec_inv: Vec<F>,
    /// normalized, scaled decoder output (B*T x d)
    z: Array2<F>,
}

pub(crate) fn output_scale<F: Scalar>(cfg: &ModelConfig) -> F {
    F::lit(1.0 / (cfg.d_model as f64).sqrt())
}

fn run_forward<F: Scalar>(
    p: &Params<F>,
    cfg: &ModelConfig,
    batch: &Batch,
    mut rng: Option<&mut ChaCha8Rng>,
) -> Forward<F> {
    let lay = Layout::new(cfg);
    let (b, s_len) = batch.enc_ids.dim();
    let t_len = batch.dec_in.ncols();
    let rate = cfg.dropout_rate;

    let enc_shape =
        AttnShape { batch: b, tq: s_len, tk: s_len, heads: cfg.n_heads, key_mask: Some(batch.enc_mask.view()), causal: false };
    let enc_emb = embed(p, lay.embed, lay.enc_pos, &batch.enc_ids);
    let mut x = enc_emb.x.clone();
    let mut enc = Vec::with_capacity(cfg.layers);
    for ix in &lay.enc {
        let (h1, inv1) = rms_forward(&x, gain(p, ix.ln_attn));
        let (mut a, attn) = attn_forward(p, ix.attn, &h1, &h1, &enc_shape);
        let drop1 = dropout(&mut a, rate, rng.as_deref_mut());
        let x_mid = &x + &a;
        let (h2, inv2) = rms_forward(&x_mid, gain(p, ix.ln_ff));
        let (mut f, act) = ffn_forward(p, ix.ff_in, ix.ff_out, &h2);
        let drop2 = dropout(&mut f, rate, rng.as_deref_mut());
        let x_out = &x_mid + &f;
        enc.push(EncLayerCache { x_in: x, h1, inv1, attn, drop1, x_mid, h2, inv2, act, drop2 });
        x = x_out;
    }
    let (memory, enc_inv) = rms_forward(&x, gain(p, lay.enc_ln));
    let enc_last = x;

    let self_shape = AttnShape { batch: b, tq: t_len, tk: t_len, heads: cfg.n_heads, key_mask: None, causal: true };
    let cross_shape =
        AttnShape { batch: b, tq: t_len, tk: s_len, heads: cfg.n_heads, key_mask: Some(batch.enc_mask.view()), causal: false };
    let dec_emb = embed(p, lay.embed, lay.dec_pos, &batch.dec_in);
    let mut y = dec_emb.x.clone();
    let mut dec = Vec::with_capacity(cfg.layers);
    for ix in &lay.dec {
        let (h1, inv1) = rms_forward(&y, gain(p, ix.ln_self));
        let (mut a, self_attn) = attn_forward(p, ix.self_attn, &h1, &h1, &self_shape);
        let drop1 = dropout(&mut a, rate, rng.as_deref_mut());
        let y_mid1 = &y + &a;
        let (h2, inv2) = rms_forward(&y_mid1, gain(p, ix.ln_cross));
        let (mut c, cross_attn) = attn_forward(p, ix.cross_attn, &h2, &memory, &cross_shape);
        let drop2 = dropout(&mut c, rate, rng.as_deref_mut());
        let y_mid2 = &y_mid1 + &c;
        let (h3, inv3) = rms_forward(&y_mid2, gain(p, ix.ln_ff));
        let (mut f, act) = ffn_forward(p, ix.ff_in, ix.ff_out, &h3);
        let drop3 = dropout(&mut f, rate, rng.as_deref_mut());
        let y_out = &y_mid2 + &f;
        dec.push(DecLayerCache {
            y_in: y,
            h1,
            inv1,
            self_attn,
            drop1,
            y_mid1,
            h2,
            inv2,
            cross_attn,
            drop2,
            y_mid2,
            h3,
            inv3,
            act,
            drop3,
        });
        y = y_out;
    }
    let (mut z, dec_inv) = rms_forward(&y, gain(p, lay.dec_ln));
    z *= output_scale::<F>(cfg);
    Forward { enc_emb, enc, enc_last, enc_inv, memory, dec_emb, dec, dec_last: y, dec_inv, z }
}

/// Logits for every decoder position, B*T x V, rows ordered batch-major.
pub fn forward_logits<F: Scalar>(p: &Params<F>, cfg: &ModelConfig, batch: &Batch) -> Result<Array2<F>> {
    batch.validate(cfg)?;
    let fwd = run_forward(p, cfg, batch, None);
    let lay = Layout::new(cfg);
    Ok(fwd.z.dot(&p.tensors[lay.embed].t()))
}

/// Mean token cross-entropy over loss-masked positions and its gradient.
/// Dropout is applied only when `dropout_rng` is given.
pub fn forward_loss<F: Scalar>(
    p: &Params<F>,
    cfg: &ModelConfig,
    batch: &Batch,
    dropout_rng: Option<&mut ChaCha8Rng>,
) -> Result<(F, Params<F>)> {
    batch.validate(cfg)?;
    if !p.matches(cfg) {
        return Err(Error::Config("parameters do not match model config".into()));
    }
    if let Some(name) = p.first_non_finite() {
        return Err(Error::NonFinite(format!("parameter {name}")));
    }
    let lay = Layout::new(cfg);
    let fwd = run_forward(p, cfg, batch, dropout_rng);
    let (b, s_len) = batch.enc_ids.dim();
    let t_len = batch.dec_in.ncols();

    let rows: Vec<usize> = batch.loss_mask.iter().enumerate().filter(|(_, &m)| m).map(|(i, _)| i).collect();
    let targets: Vec<usize> = rows.iter().map(|&r| batch.targets[[r / t_len, r % t_len]] as usize).collect();
    let zsel = fwd.z.select(Axis(0), &rows);
    let emb = &p.tensors[lay.embed];
    let mut dlogits = zsel.dot(&emb.t());
    if dlogits.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let n = F::lit(rows.len() as f64);
    let mut loss = F::zero();
    for (mut row, &tgt) in dlogits.rows_mut().into_iter().zip(&targets) {
        let max = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let shifted_target = row[tgt] - max;
        row.mapv_inplace(|v| (v - max).exp());
        let sum: F = row.sum();
        loss += sum.ln() - shifted_target;
        row.mapv_inplace(|v| v / sum / n);
        row[tgt] -= F::one() / n;
    }
    let loss = loss / n;
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss".into()));
    }

    let mut grads = p.zeros_like();
    // tied output projection
    acc_at_b(&mut grads.tensors[lay.embed], dlogits.view(), zsel.view());
    let dzsel = dlogits.dot(emb);
    let mut dz = Array2::zeros(fwd.z.raw_dim());
    for (k, &r) in rows.iter().enumerate() {
        dz.row_mut(r).assign(&dzsel.row(k));
    }
    dz *= output_scale::<F>(cfg);
    let mut dy = rms_backward(&dz, &fwd.dec_last, gain(p, lay.dec_ln), &fwd.dec_inv, &mut grads.tensors[lay.dec_ln]);

    let self_shape = AttnShape { batch: b, tq: t_len, tk: t_len, heads: cfg.n_heads, key_mask: None, causal: true };
    let cross_shape =
        AttnShape { batch: b, tq: t_len, tk: s_len, heads: cfg.n_heads, key_mask: Some(batch.enc_mask.view()), causal: false };
    let mut dmemory = Array2::zeros(fwd.memory.raw_dim());
    for (ix, c) in lay.dec.iter().zip(&fwd.dec).rev() {
        let df = apply_mask(&dy, &c.drop3);
        let dh3 = ffn_backward(p, &mut grads, ix.ff_in, ix.ff_out, &df, &c.h3, &c.act);
        dy += &rms_backward(&dh3, &c.y_mid2, gain(p, ix.ln_ff), &c.inv3, &mut grads.tensors[ix.ln_ff]);

        let dc = apply_mask(&dy, &c.drop2);
        let (dh2, dmem) = attn_backward(p, &mut grads, ix.cross_attn, &dc, &c.cross_attn, &c.h2, &fwd.memory, &cross_shape);
        dmemory += &dmem;
        dy += &rms_backward(&dh2, &c.y_mid1, gain(p, ix.ln_cross), &c.inv2, &mut grads.tensors[ix.ln_cross]);

        let da = apply_mask(&dy, &c.drop1);
        let (dq, dkv) = attn_backward(p, &mut grads, ix.self_attn, &da, &c.self_attn, &c.h1, &c.h1, &self_shape);
        let dh1 = dq + dkv;
        dy += &rms_backward(&dh1, &c.y_in, gain(p, ix.ln_self), &c.inv1, &mut grads.tensors[ix.ln_self]);
    }
    embed_backward(&mut grads, lay.embed, lay.dec_pos, &batch.dec_in, &fwd.dec_emb, &dy);

    let enc_shape =
        AttnShape { batch: b, tq: s_len, tk: s_len, heads: cfg.n_heads, key_mask: Some(batch.enc_mask.view()), causal: false };
    let mut dx = rms_backward(&dmemory, &fwd.enc_last, gain(p, lay.enc_ln), &fwd.enc_inv, &mut grads.tensors[lay.enc_ln]);
    for (ix, c) in lay.enc.iter().zip(&fwd.enc).rev() {
        let df = apply_mask(&dx, &c.drop2);
        let dh2 = ffn_backward(p, &mut grads, ix.ff_in, ix.ff_out, &df, &c.h2, &c.act);
        dx += &rms_backward(&dh2, &c.x_mid, gain(p, ix.ln_ff), &c.inv2, &mut grads.tensors[ix.ln_ff]);

        let da = apply_mask(&dx, &c.drop1);
        let (dq, dkv) = attn_backward(p, &mut grads, ix.attn, &da, &c.attn, &c.h1, &c.h1, &enc_shape);
        let dh1 = dq + dkv;
        dx += &rms_backward(&dh1, &c.x_in, gain(p, ix.ln_attn), &c.inv1, &mut grads.tensors[ix.ln_attn]);
    }
    embed_backward(&mut grads, lay.embed, lay.enc_pos, &batch.enc_ids, &fwd.enc_emb, &dx);

    if let Some(name) = grads.first_non_finite() {
        return Err(Error::NonFinite(format!("gradient of {name}")));
    }
    Ok((loss, grads))
}

/// Log-softmax of one logits row, in f64.
pub fn log_softmax(row: ArrayView1<f64>) -> Array1<f64> {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let lse = row.iter().map(|&v| (v - max).exp()).sum::<f64>().ln() + max;
    row.mapv(|v| v - lse)
}
