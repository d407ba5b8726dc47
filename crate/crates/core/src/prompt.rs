use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::layout::TokenLayout;
use crate::weights::ModelWeights;

/// Where the visual block's embeddings come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum VisualSource {
    /// Standard-normal vectors from a ChaCha8 stream.
    SeededRandom { seed: u64 },
    /// A JSON file holding an array of `n_visual` arrays of `d_model` floats.
    File { path: PathBuf },
    FileInline { embeddings: Vec<Vec<f32>> },
}

/// Prompt description as stored in a prompt file: text prefix, visual block, text suffix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PromptSpec {
    pub text_prefix: Vec<u32>,
    pub n_visual: usize,
    pub visual_source: VisualSource,
    pub text_suffix: Vec<u32>,
}

/// A prompt resolved to input embeddings and its token layout.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub embeddings: Vec<Vec<f32>>,
    pub layout: TokenLayout,
    pub n_prefix: usize,
    pub n_visual: usize,
}

impl Prompt {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }
}

impl PromptSpec {
    /// Prompt of `prefix` + `n_visual` + `suffix` tokens, text ids drawn from `1..vocab` and
    /// visual embeddings from `seed`.
    pub fn synthetic(vocab: usize, prefix: usize, n_visual: usize, suffix: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7465_7874);
        let mut ids = |n: usize| -> Vec<u32> {
            (0..n).map(|_| rng.random_range(1..vocab.max(2)) as u32).collect()
        };
        let text_prefix = ids(prefix);
        let text_suffix = ids(suffix);
        Self { text_prefix, n_visual, visual_source: VisualSource::SeededRandom { seed }, text_suffix }
    }

    /// 32 text + 64 visual + 8 text tokens.
    pub fn reference(vocab: usize) -> Self {
        Self::synthetic(vocab, 32, 64, 8, 1)
    }

    pub fn len(&self) -> usize {
        self.text_prefix.len() + self.n_visual + self.text_suffix.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&std::fs::read(path)?)?)
    }

    pub fn materialize(&self, weights: &ModelWeights) -> Result<Prompt> {
        let d = weights.config.d_model;
        let visual: Vec<Vec<f32>> = match &self.visual_source {
            VisualSource::SeededRandom { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(*seed);
                (0..self.n_visual)
                    .map(|_| (0..d).map(|_| rng.sample::<f32, _>(StandardNormal)).collect())
                    .collect()
            }
            VisualSource::File { path } => serde_json::from_slice(&std::fs::read(path)?)?,
            VisualSource::FileInline { embeddings } => embeddings.clone(),
        };
        if visual.len() != self.n_visual {
            return Err(Error::InvalidParam(format!(
                "prompt declares {} visual tokens but the source provides {}",
                self.n_visual,
                visual.len()
            )));
        }
        if let Some(bad) = visual.iter().find(|v| v.len() != d) {
            return Err(Error::LengthMismatch { left: d, right: bad.len() });
        }

        let mut embeddings = Vec::with_capacity(self.len());
        for &id in &self.text_prefix {
            embeddings.push(weights.embed_token(id)?.to_vec());
        }
        embeddings.extend(visual);
        for &id in &self.text_suffix {
            embeddings.push(weights.embed_token(id)?.to_vec());
        }
        if embeddings.is_empty() {
            return Err(Error::EmptyPrompt);
        }
        Ok(Prompt {
            embeddings,
            layout: TokenLayout::from_prompt(self.text_prefix.len(), self.n_visual, self.text_suffix.len()),
            n_prefix: self.text_prefix.len(),
            n_visual: self.n_visual,
        })
    }
}
