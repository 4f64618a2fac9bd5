//! A small pre-norm transformer encoder-decoder with hand-written gradients.

pub mod config;
pub mod decode;
pub mod model;
pub mod params;
pub mod span;

pub use config::{ModelConfig, Scalar, SizeTag, DEFAULT_MAX_LEN};
pub use decode::{
    beam_decode, beam_decode_hypothesis, beam_search, greedy_decode, greedy_decode_batch, greedy_decode_hypothesis,
    greedy_search, Hypothesis, StepModel, TransformerStepper,
};
pub use model::{forward_logits, forward_loss, log_softmax, Batch};
pub use params::{init_params, Layout, Params};
pub use span::{corrupt_with_spans, span_corrupt, splice, SpanMaskSpec};
