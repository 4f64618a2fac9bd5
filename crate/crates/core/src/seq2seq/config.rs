use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use ndarray::{LinalgScalar, ScalarOperand};
use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floating-point type the model can run in. Training uses `f32`; the
/// gradient check runs the same code in `f64`.
pub trait Scalar:
    LinalgScalar
    + Float
    + ScalarOperand
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Debug
    + Default
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("literal fits")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SizeTag {
    Tiny,
    Small,
    Base,
}

impl std::str::FromStr for SizeTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tiny" => Ok(SizeTag::Tiny),
            "small" => Ok(SizeTag::Small),
            "base" => Ok(SizeTag::Base),
            other => Err(Error::Config(format!("unknown size '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Layers per stack (encoder and decoder each).
    pub layers: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab_size: usize,
    pub max_len: usize,
    pub dropout_rate: f64,
    pub size_tag: SizeTag,
}

pub const DEFAULT_MAX_LEN: usize = 128;

impl ModelConfig {
    /// Tiny 2L/64d, Small 4L/128d, Base 6L/256d; d_ff = 4 d_model.
    pub fn for_size(tag: SizeTag, vocab_size: usize, max_len: usize) -> Self {
        let (layers, d_model, n_heads) = match tag {
            SizeTag::Tiny => (2, 64, 4),
            SizeTag::Small => (4, 128, 4),
            SizeTag::Base => (6, 256, 8),
        };
        Self { layers, d_model, n_heads, d_ff: 4 * d_model, vocab_size, max_len, dropout_rate: 0.0, size_tag: tag }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |m: String| Err(Error::Config(m));
        if self.layers == 0 || self.d_model == 0 || self.n_heads == 0 || self.d_ff == 0 {
            return err("layers, d_model, n_heads and d_ff must be positive".into());
        }
        if self.d_model % self.n_heads != 0 {
            return err(format!("d_model {} not divisible by n_heads {}", self.d_model, self.n_heads));
        }
        if self.vocab_size < 2 || self.max_len < 2 {
            return err("vocab_size and max_len must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return err(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Closed-form parameter count.
    pub fn num_params(&self) -> usize {
        let (d, f, l) = (self.d_model, self.d_ff, self.layers);
        let embed = self.vocab_size * d + 2 * self.max_len * d;
        let enc = l * (4 * d * d + 2 * d * f + 2 * d) + d;
        let dec = l * (8 * d * d + 2 * d * f + 3 * d) + d;
        embed + enc + dec
    }
}
