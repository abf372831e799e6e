//! Joint vision-language encoder interface.
//!
//! Text and images are mapped into one unit-norm embedding space of width
//! `d_emb`. Text is supplied as token-embedding sequences (width `d_tok`) so
//! that learnable fair tokens can be spliced into a prompt before encoding.

mod cache;
pub mod latent_png;
mod toy;

use std::path::{Path, PathBuf};

pub use cache::{cache_reference_features, FeatureCache};
pub use toy::{ToyEncoder, ToyEncoderSpec};

use crate::error::{Error, Result};
use crate::tokens::TokenSeq;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EncoderHandle {
    pub identifier: String,
    pub d_tok: usize,
    pub d_emb: usize,
    pub max_sequence_length: usize,
}

/// Instrumentation counters, exposed by encoders that keep them.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct CallCounts {
    pub text: usize,
    pub image: usize,
}

/// An image to be encoded: either an in-memory latent vector (synthetic
/// records) or a file on disk.
#[derive(Debug, Clone, PartialEq)]
pub enum ImageSource {
    Latent(Vec<f64>),
    File(PathBuf),
}

impl ImageSource {
    pub fn file(path: impl AsRef<Path>) -> Self {
        ImageSource::File(path.as_ref().to_path_buf())
    }

    /// Bytes that identify the image content (file bytes, or the latent's
    /// little-endian encoding).
    pub fn content_bytes(&self) -> Result<Vec<u8>> {
        match self {
            ImageSource::Latent(v) => Ok(crate::vector::to_le_bytes(v)),
            ImageSource::File(p) => std::fs::read(p).map_err(|e| Error::Ingestion {
                paths: vec![p.clone()],
                reason: e.to_string(),
            }),
        }
    }

    pub fn content_hash(&self) -> Result<String> {
        Ok(crate::seed::content_hash(&self.content_bytes()?))
    }

    pub fn describe(&self) -> String {
        match self {
            ImageSource::Latent(v) => format!("<latent d={}>", v.len()),
            ImageSource::File(p) => p.display().to_string(),
        }
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            ImageSource::File(p) => Some(p),
            ImageSource::Latent(_) => None,
        }
    }
}

pub trait JointEncoder: Send + Sync {
    fn handle(&self) -> &EncoderHandle;

    fn tokenize(&self, text: &str) -> Result<TokenSeq>;

    /// Unit-norm text embedding of a token sequence.
    fn encode_text(&self, tokens: &[Vec<f64>]) -> Result<Vec<f64>>;

    /// Unit-norm image embedding.
    fn encode_image(&self, image: &ImageSource) -> Result<Vec<f64>>;

    fn call_counts(&self) -> Option<CallCounts> {
        None
    }

    fn encode_prompt(&self, text: &str) -> Result<Vec<f64>> {
        let tokens = self.tokenize(text)?;
        self.encode_text(&tokens)
    }

    fn check_sequence(&self, tokens: &[Vec<f64>]) -> Result<()> {
        let h = self.handle();
        if tokens.len() > h.max_sequence_length {
            return Err(Error::SequenceLength {
                len: tokens.len(),
                max: h.max_sequence_length,
            });
        }
        if tokens.is_empty() {
            return Err(Error::Validation(
                "cannot encode an empty token sequence".into(),
            ));
        }
        if let Some(bad) = tokens.iter().position(|t| t.len() != h.d_tok) {
            return Err(Error::Validation(format!(
                "token {bad} has width {}, encoder expects {}",
                tokens[bad].len(),
                h.d_tok
            )));
        }
        Ok(())
    }
}

/// Encoders whose text path can be differentiated with respect to its input
/// token vectors. Only these can drive fair-token training.
pub trait DifferentiableTextEncoder: JointEncoder {
    /// Gradient of `<upstream, encode_text(tokens)>` with respect to every
    /// input token vector.
    fn encode_text_vjp(&self, tokens: &[Vec<f64>], upstream: &[f64]) -> Result<TokenSeq>;
}
