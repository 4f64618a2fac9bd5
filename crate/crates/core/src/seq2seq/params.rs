use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use super::config::{ModelConfig, Scalar};
use crate::error::Result;

#[derive(Debug, Clone, Copy)]
pub struct AttnIx {
    pub q: usize,
    pub k: usize,
    pub v: usize,
    pub o: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct EncLayerIx {
    pub ln_attn: usize,
    pub attn: AttnIx,
    pub ln_ff: usize,
    pub ff_in: usize,
    pub ff_out: usize,
}

#[derive(Debug, Clone, Copy)]
pub struct DecLayerIx {
    pub ln_self: usize,
    pub self_attn: AttnIx,
    pub ln_cross: usize,
    pub cross_attn: AttnIx,
    pub ln_ff: usize,
    pub ff_in: usize,
    pub ff_out: usize,
}

/// Tensor indices into [`Params::tensors`], derived from the config.
#[derive(Debug, Clone)]
pub struct Layout {
    pub embed: usize,
    pub enc_pos: usize,
    pub dec_pos: usize,
    pub enc: Vec<EncLayerIx>,
    pub enc_ln: usize,
    pub dec: Vec<DecLayerIx>,
    pub dec_ln: usize,
    pub specs: Vec<(String, (usize, usize), Init)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Truncated normal with the given fan-in.
    Normal { fan_in: usize },
    Ones,
}

struct Builder {
    specs: Vec<(String, (usize, usize), Init)>,
}

impl Builder {
    fn add(&mut self, name: String, shape: (usize, usize), init: Init) -> usize {
        self.specs.push((name, shape, init));
        self.specs.len() - 1
    }

    fn weight(&mut self, name: String, rows: usize, cols: usize) -> usize {
        self.add(name, (rows, cols), Init::Normal { fan_in: rows })
    }

    fn gain(&mut self, name: String, d: usize) -> usize {
        self.add(name, (1, d), Init::Ones)
    }

    fn attn(&mut self, prefix: &str, d: usize) -> AttnIx {
        AttnIx {
            q: self.weight(format!("{prefix}.q"), d, d),
            k: self.weight(format!("{prefix}.k"), d, d),
            v: self.weight(format!("{prefix}.v"), d, d),
            o: self.weight(format!("{prefix}.o"), d, d),
        }
    }
}

impl Layout {
    pub fn new(cfg: &ModelConfig) -> Self {
        let (d, f) = (cfg.d_model, cfg.d_ff);
        let mut b = Builder { specs: Vec::new() };
        let embed = b.add("shared.embed".into(), (cfg.vocab_size, d), Init::Normal { fan_in: d });
        let enc_pos = b.add("encoder.pos".into(), (cfg.max_len, d), Init::Normal { fan_in: d });
        let dec_pos = b.add("decoder.pos".into(), (cfg.max_len, d), Init::Normal { fan_in: d });
        let enc = (0..cfg.layers)
            .map(|l| EncLayerIx {
                ln_attn: b.gain(format!("encoder.{l}.ln_attn"), d),
                attn: b.attn(&format!("encoder.{l}.attn"), d),
                ln_ff: b.gain(format!("encoder.{l}.ln_ff"), d),
                ff_in: b.weight(format!("encoder.{l}.ff.in"), d, f),
                ff_out: b.weight(format!("encoder.{l}.ff.out"), f, d),
            })
            .collect();
        let enc_ln = b.gain("encoder.final_ln".into(), d);
        let dec = (0..cfg.layers)
            .map(|l| DecLayerIx {
                ln_self: b.gain(format!("decoder.{l}.ln_self"), d),
                self_attn: b.attn(&format!("decoder.{l}.self"), d),
                ln_cross: b.gain(format!("decoder.{l}.ln_cross"), d),
                cross_attn: b.attn(&format!("decoder.{l}.cross"), d),
                ln_ff: b.gain(format!("decoder.{l}.ln_ff"), d),
                ff_in: b.weight(format!("decoder.{l}.ff.in"), d, f),
                ff_out: b.weight(format!("decoder.{l}.ff.out"), f, d),
            })
            .collect();
        let dec_ln = b.gain("decoder.final_ln".into(), d);
        Self { embed, enc_pos, dec_pos, enc, enc_ln, dec, dec_ln, specs: b.specs }
    }
}

/// Named parameter tensors in layout order. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct Params<F> {
    pub names: Vec<String>,
    pub tensors: Vec<Array2<F>>,
}

impl<F: Scalar> Params<F> {
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let layout = Layout::new(cfg);
        Self {
            names: layout.specs.iter().map(|s| s.0.clone()).collect(),
            tensors: layout.specs.iter().map(|s| Array2::zeros(s.1)).collect(),
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self { names: self.names.clone(), tensors: self.tensors.iter().map(|t| Array2::zeros(t.raw_dim())).collect() }
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn global_norm(&self) -> f64 {
        self.tensors
            .iter()
            .flat_map(|t| t.iter())
            .map(|x| {
                let v = x.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, by: F) {
        for t in &mut self.tensors {
            t.mapv_inplace(|x| x * by);
        }
    }

    /// Name of the first tensor holding a NaN or infinity.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.names
            .iter()
            .zip(&self.tensors)
            .find(|(_, t)| t.iter().any(|x| !x.is_finite()))
            .map(|(n, _)| n.as_str())
    }

    pub fn cast<G: Scalar>(&self) -> Params<G> {
        Params {
            names: self.names.clone(),
            tensors: self
                .tensors
                .iter()
                .map(|t| t.mapv(|x| G::from_f64(x.to_f64().expect("finite")).expect("castable")))
                .collect(),
        }
    }

    /// Checks names and shapes against the layout implied by `cfg`.
    pub fn matches(&self, cfg: &ModelConfig) -> bool {
        let layout = Layout::new(cfg);
        layout.specs.len() == self.tensors.len()
            && layout
                .specs
                .iter()
                .zip(self.names.iter().zip(&self.tensors))
                .all(|(s, (n, t))| &s.0 == n && t.dim() == s.1)
    }
}

fn truncated_normal(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            return z;
        }
    }
}

/// Weights ~ truncated normal (±2σ) with σ = 1/sqrt(fan_in); norm gains 1.
pub fn init_params<F: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<Params<F>> {
    cfg.validate()?;
    let layout = Layout::new(cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let tensors = layout
        .specs
        .iter()
        .map(|(_, shape, init)| match *init {
            Init::Ones => Array2::from_elem(*shape, F::one()),
            Init::Normal { fan_in } => {
                let std = 1.0 / (fan_in as f64).sqrt();
                Array2::from_shape_simple_fn(*shape, || F::lit(truncated_normal(&mut rng) * std))
            }
        })
        .collect();
    Ok(Params { names: layout.specs.iter().map(|s| s.0.clone()).collect(), tensors })
}
