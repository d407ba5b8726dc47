//! Textual-enhancement contrastive decoding on a small multimodal decoder-only transformer.
//!
//! The decoder ([`model`]) exposes per-layer attention probabilities and hidden states. At every
//! generated token, [`tver`] scores the heads of one layer by the ratio of their textual to visual
//! attention entropy, [`te_branch`] rebuilds that layer's attention output with low-ratio heads
//! zeroed and turns it into a second set of logits, and [`adaptive`] fuses both logit vectors
//! collaboratively or contrastively depending on their distance. [`baselines`] provides the
//! two-pass contrastive methods the approach is compared against, and [`bench`] measures them.

pub mod adaptive;
pub mod alloc;
pub mod baselines;
pub mod bench;
pub mod config;
pub mod decode;
pub mod error;
pub mod format;
pub mod layout;
pub mod linalg;
pub mod model;
pub mod prompt;
pub mod selftest;
pub mod sweep;
pub mod te_branch;
pub mod tver;
pub mod weights;

pub use adaptive::{Branch, DecodeParams, SamplingMode};
pub use config::ModelConfig;
pub use decode::{decode, DecodeOutput, DecodeRequest, EnhanceOptions, ForwardStats, Method, TraceRecord};
pub use error::{Error, Result};
pub use layout::TokenLayout;
pub use model::{forward_step, prefill, AttentionSnapshot, KVCache, StepOutput};
pub use prompt::{Prompt, PromptSpec, VisualSource};
pub use te_branch::{LogitsPair, TeHeadInput};
pub use tver::{EnhancementStrategy, EntropyMode, TverReport};
pub use weights::{load_or_init_model, ModelSource, ModelWeights};
