//! Deterministic, differentiable toy encoder.
//!
//! Text: `normalize(W · mean(tokens))` with `W` a seeded `d_emb x d_tok`
//! Gaussian map. Words map to seeded random token vectors unless the
//! vocabulary pins them. Images: the normalized latent vector attached to the
//! image (in memory, or decoded from a latent PNG).

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{
    latent_png, CallCounts, DifferentiableTextEncoder, EncoderHandle, ImageSource, JointEncoder,
};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tokens::TokenSeq;
use crate::vector::{dot, norm, normalized, ZERO_NORM};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToyEncoderSpec {
    pub seed: u64,
    pub d_tok: usize,
    pub d_emb: usize,
    #[serde(default = "default_max_len")]
    pub max_sequence_length: usize,
    /// Pinned word vectors; every other word gets a seeded random vector.
    #[serde(default)]
    pub vocabulary: BTreeMap<String, Vec<f64>>,
}

fn default_max_len() -> usize {
    77
}

impl Default for ToyEncoderSpec {
    fn default() -> Self {
        ToyEncoderSpec {
            seed: 0,
            d_tok: 32,
            d_emb: 32,
            max_sequence_length: default_max_len(),
            vocabulary: BTreeMap::new(),
        }
    }
}

impl ToyEncoderSpec {
    pub fn new(seed: u64, d_tok: usize, d_emb: usize) -> Self {
        ToyEncoderSpec {
            seed,
            d_tok,
            d_emb,
            ..Default::default()
        }
    }

    /// Row-major `d_emb x d_tok` projection.
    fn projection(&self) -> Vec<f64> {
        let mut rng = rng_for(self.seed, "toy/projection");
        let scale = 1.0 / (self.d_tok as f64).sqrt();
        (0..self.d_emb * self.d_tok)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect()
    }

    /// Pins `word` to the least-squares token vector whose projection is
    /// `target`, so that a prompt made only of this word embeds to
    /// `normalize(target)`.
    pub fn plant_word(&mut self, word: &str, target: &[f64]) -> Result<()> {
        if target.len() != self.d_emb {
            return Err(Error::Validation(format!(
                "planted target has width {}, expected {}",
                target.len(),
                self.d_emb
            )));
        }
        let w = DMatrix::from_row_slice(self.d_emb, self.d_tok, &self.projection());
        let svd = w.svd(true, true);
        let v = svd
            .solve(&DVector::from_column_slice(target), 1e-12)
            .map_err(|e| Error::Numeric(e.to_string()))?;
        self.vocabulary
            .insert(word.to_string(), v.iter().copied().collect());
        Ok(())
    }

    pub fn identifier(&self) -> String {
        let mut id = format!("toy-s{}-t{}-e{}", self.seed, self.d_tok, self.d_emb);
        if !self.vocabulary.is_empty() {
            let bytes = serde_json::to_vec(&self.vocabulary).expect("vocabulary serializes");
            id.push('-');
            id.push_str(&crate::seed::content_hash(&bytes)[..8]);
        }
        id
    }
}

pub struct ToyEncoder {
    spec: ToyEncoderSpec,
    handle: EncoderHandle,
    projection: Vec<f64>,
    text_calls: AtomicUsize,
    image_calls: AtomicUsize,
}

impl ToyEncoder {
    pub fn new(spec: ToyEncoderSpec) -> Result<Self> {
        if spec.d_tok == 0 || spec.d_emb == 0 || spec.max_sequence_length == 0 {
            return Err(Error::Config(
                "toy encoder dimensions must be positive".into(),
            ));
        }
        if let Some((w, v)) = spec.vocabulary.iter().find(|(_, v)| v.len() != spec.d_tok) {
            return Err(Error::Config(format!(
                "vocabulary word `{w}` has width {}, expected {}",
                v.len(),
                spec.d_tok
            )));
        }
        let handle = EncoderHandle {
            identifier: spec.identifier(),
            d_tok: spec.d_tok,
            d_emb: spec.d_emb,
            max_sequence_length: spec.max_sequence_length,
        };
        Ok(ToyEncoder {
            projection: spec.projection(),
            spec,
            handle,
            text_calls: AtomicUsize::new(0),
            image_calls: AtomicUsize::new(0),
        })
    }

    pub fn spec(&self) -> &ToyEncoderSpec {
        &self.spec
    }

    pub fn reset_counts(&self) {
        self.text_calls.store(0, Ordering::Relaxed);
        self.image_calls.store(0, Ordering::Relaxed);
    }

    pub fn word_vector(&self, word: &str) -> Vec<f64> {
        if let Some(v) = self.spec.vocabulary.get(word) {
            return v.clone();
        }
        let mut rng = rng_for(self.spec.seed, &format!("toy/word/{word}"));
        let scale = 1.0 / (self.spec.d_tok as f64).sqrt();
        (0..self.spec.d_tok)
            .map(|_| rng.sample::<f64, _>(StandardNormal) * scale)
            .collect()
    }

    /// `u = W · mean(tokens)`
    fn pre_norm(&self, tokens: &[Vec<f64>]) -> Vec<f64> {
        let d_tok = self.spec.d_tok;
        let mut mean = vec![0.0; d_tok];
        for t in tokens {
            for (m, x) in mean.iter_mut().zip(t) {
                *m += x;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        mean.iter_mut().for_each(|m| *m *= inv);
        self.projection
            .chunks(d_tok)
            .map(|row| dot(row, &mean))
            .collect()
    }
}

impl JointEncoder for ToyEncoder {
    fn handle(&self) -> &EncoderHandle {
        &self.handle
    }

    /// Whitespace tokenizer: one token per word.
    fn tokenize(&self, text: &str) -> Result<TokenSeq> {
        let words: Vec<&str> = text.split_whitespace().collect();
        if words.is_empty() {
            return Err(Error::Validation("cannot tokenize empty text".into()));
        }
        let tokens: TokenSeq = words.iter().map(|w| self.word_vector(w)).collect();
        if tokens.len() > self.handle.max_sequence_length {
            return Err(Error::SequenceLength {
                len: tokens.len(),
                max: self.handle.max_sequence_length,
            });
        }
        Ok(tokens)
    }

    fn encode_text(&self, tokens: &[Vec<f64>]) -> Result<Vec<f64>> {
        self.check_sequence(tokens)?;
        self.text_calls.fetch_add(1, Ordering::Relaxed);
        let u = self.pre_norm(tokens);
        if norm(&u) < ZERO_NORM {
            return Err(Error::Numeric("text embedding collapsed to zero".into()));
        }
        Ok(normalized(&u))
    }

    fn encode_image(&self, image: &ImageSource) -> Result<Vec<f64>> {
        let latent = match image {
            ImageSource::Latent(v) => v.clone(),
            ImageSource::File(p) => latent_png::read(p)?,
        };
        if latent.len() != self.spec.d_emb {
            return Err(Error::Ingestion {
                paths: image
                    .path()
                    .map(|p| vec![p.to_path_buf()])
                    .unwrap_or_default(),
                reason: format!(
                    "latent width {} does not match d_emb {}",
                    latent.len(),
                    self.spec.d_emb
                ),
            });
        }
        if norm(&latent) < ZERO_NORM {
            return Err(Error::Ingestion {
                paths: image
                    .path()
                    .map(|p| vec![p.to_path_buf()])
                    .unwrap_or_default(),
                reason: "image latent is all zeros".into(),
            });
        }
        self.image_calls.fetch_add(1, Ordering::Relaxed);
        Ok(normalized(&latent))
    }

    fn call_counts(&self) -> Option<CallCounts> {
        Some(CallCounts {
            text: self.text_calls.load(Ordering::Relaxed),
            image: self.image_calls.load(Ordering::Relaxed),
        })
    }
}

impl DifferentiableTextEncoder for ToyEncoder {
    fn encode_text_vjp(&self, tokens: &[Vec<f64>], upstream: &[f64]) -> Result<TokenSeq> {
        self.check_sequence(tokens)?;
        let u = self.pre_norm(tokens);
        let n = norm(&u);
        if n < ZERO_NORM {
            return Err(Error::Numeric("text embedding collapsed to zero".into()));
        }
        let e: Vec<f64> = u.iter().map(|x| x / n).collect();
        // d normalize(u) / du = (I - e e^T) / |u|
        let eg = dot(&e, upstream);
        let g_u: Vec<f64> = upstream
            .iter()
            .zip(&e)
            .map(|(g, ei)| (g - ei * eg) / n)
            .collect();
        let d_tok = self.spec.d_tok;
        let mut g_mean = vec![0.0; d_tok];
        for (row, gu) in self.projection.chunks(d_tok).zip(&g_u) {
            for (gm, w) in g_mean.iter_mut().zip(row) {
                *gm += gu * w;
            }
        }
        let inv = 1.0 / tokens.len() as f64;
        g_mean.iter_mut().for_each(|g| *g *= inv);
        Ok(vec![g_mean; tokens.len()])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn enc() -> ToyEncoder {
        ToyEncoder::new(ToyEncoderSpec::new(3, 6, 5)).unwrap()
    }

    #[test]
    fn tokenizer_is_one_token_per_word() {
        let e = enc();
        let toks = e.tokenize("a headshot of a person").unwrap();
        assert_eq!(toks.len(), 5);
        assert_eq!(toks[0], toks[3]);
        assert_eq!(toks, e.tokenize("a headshot of a person").unwrap());
        assert!(matches!(e.tokenize("   "), Err(Error::Validation(_))));
    }

    #[test]
    fn unseen_words_are_seeded() {
        let a = enc().word_vector("zyzzyva");
        let b = enc().word_vector("zyzzyva");
        assert_eq!(a, b);
        let other = ToyEncoder::new(ToyEncoderSpec::new(4, 6, 5)).unwrap();
        assert_ne!(a, other.word_vector("zyzzyva"));
    }

    #[test]
    fn text_embedding_is_unit_and_deterministic() {
        let e = enc();
        let t = e.tokenize("a headshot of a person").unwrap();
        let a = e.encode_text(&t).unwrap();
        assert!((norm(&a) - 1.0).abs() < 1e-12);
        assert_eq!(a, e.encode_text(&t).unwrap());
    }

    #[test]
    fn permuted_sequences_embed_identically() {
        // Reference implementation of mean-then-normalize, summed in both orders.
        let e = enc();
        let t = e.tokenize("a headshot of a person").unwrap();
        let mut r = t.clone();
        r.reverse();
        let a = e.encode_text(&t).unwrap();
        let b = e.encode_text(&r).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn over_length_sequence_rejected() {
        let mut spec = ToyEncoderSpec::new(3, 6, 5);
        spec.max_sequence_length = 3;
        let e = ToyEncoder::new(spec).unwrap();
        let toks = vec![vec![0.1; 6]; 4];
        assert!(matches!(
            e.encode_text(&toks),
            Err(Error::SequenceLength { len: 4, max: 3 })
        ));
        assert!(matches!(
            e.tokenize("one two three four"),
            Err(Error::SequenceLength { .. })
        ));
    }

    #[test]
    fn image_embedding_is_normalized_latent() {
        let e = enc();
        let v = vec![0.0, 3.0, 0.0, 4.0, 0.0];
        assert_eq!(
            e.encode_image(&ImageSource::Latent(v)).unwrap(),
            vec![0.0, 0.6, 0.0, 0.8, 0.0]
        );
        assert!(e.encode_image(&ImageSource::Latent(vec![0.0; 5])).is_err());
    }

    #[test]
    fn planted_word_embeds_to_target() {
        let mut spec = ToyEncoderSpec::new(1, 8, 5);
        let target = vec![0.0, 0.0, 1.0, 0.0, 0.0];
        spec.plant_word("glasses", &target).unwrap();
        let e = ToyEncoder::new(spec).unwrap();
        let got = e.encode_prompt("glasses").unwrap();
        for (a, b) in got.iter().zip(&target) {
            assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn counters_track_calls() {
        let e = enc();
        let t = e.tokenize("x y").unwrap();
        e.encode_text(&t).unwrap();
        e.encode_text(&t).unwrap();
        e.encode_image(&ImageSource::Latent(vec![1.0; 5])).unwrap();
        assert_eq!(e.call_counts(), Some(CallCounts { text: 2, image: 1 }));
        e.reset_counts();
        assert_eq!(e.call_counts(), Some(CallCounts::default()));
    }

    fn central_difference(
        e: &ToyEncoder,
        tokens: &[Vec<f64>],
        upstream: &[f64],
        k: usize,
        c: usize,
    ) -> f64 {
        let h = 1e-4;
        let mut plus = tokens.to_vec();
        plus[k][c] += h;
        let mut minus = tokens.to_vec();
        minus[k][c] -= h;
        (dot(upstream, &e.encode_text(&plus).unwrap())
            - dot(upstream, &e.encode_text(&minus).unwrap()))
            / (2.0 * h)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn unit_norm_on_random_inputs(
            toks in prop::collection::vec(prop::collection::vec(-3.0f64..3.0, 6), 1..10),
            latent in prop::collection::vec(-5.0f64..5.0, 5),
        ) {
            let e = enc();
            if let Ok(t) = e.encode_text(&toks) {
                prop_assert!((norm(&t) - 1.0).abs() < 1e-6);
            }
            if let Ok(i) = e.encode_image(&ImageSource::Latent(latent)) {
                prop_assert!((norm(&i) - 1.0).abs() < 1e-6);
            }
        }

        #[test]
        fn vjp_matches_finite_differences(
            toks in prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 6), 1..5),
            upstream in prop::collection::vec(-1.0f64..1.0, 5),
        ) {
            let e = enc();
            prop_assume!(norm(&e.pre_norm(&toks)) > 0.05);
            let grads = e.encode_text_vjp(&toks, &upstream).unwrap();
            for (k, row) in grads.iter().enumerate() {
                for (c, &an) in row.iter().enumerate() {
                    let fd = central_difference(&e, &toks, &upstream, k, c);
                    let scale = an.abs().max(fd.abs()).max(1e-3);
                    prop_assert!((an - fd).abs() / scale < 1e-4, "token {} coord {}: {} vs {}", k, c, an, fd);
                }
            }
        }
    }
}
