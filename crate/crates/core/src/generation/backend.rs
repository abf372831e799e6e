//! Diffusion backend interface, the negative-prompt guided step and a
//! deterministic stub backend.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use sha2::{Digest, Sha256};

use crate::encoders::{latent_png, JointEncoder};
use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tokens::TokenSeq;
use crate::vector::to_le_bytes;

/// Opaque spatial condition (depth map, edges, pose, ...) forwarded to
/// backends that accept one.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SpatialCondition {
    pub kind: String,
    pub data: Vec<u8>,
}

/// What the denoiser is conditioned on: the prompt's token sequence, its
/// pooled joint embedding and an optional spatial condition.
#[derive(Debug, Clone, PartialEq)]
pub struct Conditioning {
    pub tokens: TokenSeq,
    pub pooled: Vec<f64>,
    pub spatial: Option<SpatialCondition>,
}

impl Conditioning {
    pub fn from_tokens<E: JointEncoder + ?Sized>(encoder: &E, tokens: TokenSeq) -> Result<Self> {
        let pooled = encoder.encode_text(&tokens)?;
        Ok(Conditioning {
            tokens,
            pooled,
            spatial: None,
        })
    }

    /// Empty text gives the unconditional conditioning.
    pub fn from_text<E: JointEncoder + ?Sized>(encoder: &E, text: &str) -> Result<Self> {
        if text.trim().is_empty() {
            return Ok(Self::unconditional(encoder.handle().d_emb));
        }
        Self::from_tokens(encoder, encoder.tokenize(text)?)
    }

    pub fn unconditional(width: usize) -> Self {
        Conditioning {
            tokens: Vec::new(),
            pooled: vec![0.0; width],
            spatial: None,
        }
    }

    pub fn with_spatial(mut self, spatial: Option<SpatialCondition>) -> Self {
        self.spatial = spatial;
        self
    }

    fn digest_into(&self, h: &mut Sha256) {
        h.update((self.tokens.len() as u64).to_le_bytes());
        for t in &self.tokens {
            h.update(to_le_bytes(t));
        }
        h.update(to_le_bytes(&self.pooled));
        if let Some(s) = &self.spatial {
            h.update(s.kind.as_bytes());
            h.update(&s.data);
        }
    }
}

/// A decoded sample. Latent backends hand back the final latent; it is
/// stored as a latent PNG.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratedImage {
    pub latent: Vec<f64>,
}

impl GeneratedImage {
    pub fn png_bytes(&self) -> Result<Vec<u8>> {
        latent_png::encode(&self.latent)
    }
}

pub trait DiffusionBackend: Send + Sync {
    fn id(&self) -> &str;

    fn latent_dim(&self) -> usize;

    /// Timesteps visited by the sampler, in order.
    fn timesteps(&self) -> Vec<usize>;

    fn initial_latent(&self, seed: u64) -> Vec<f64>;

    /// One denoising evaluation `f(x, t, c)`.
    fn denoise(&self, x: &[f64], t: usize, c: &Conditioning) -> Result<Vec<f64>>;

    fn decode(&self, x: &[f64]) -> Result<GeneratedImage>;
}

/// `scale * (f(x,t,c_pos) - f(x,t,c_neg)) + f(x,t,c_neg)`.
pub fn guided_step<B: DiffusionBackend + ?Sized>(
    backend: &B,
    x: &[f64],
    t: usize,
    c_pos: &Conditioning,
    c_neg: &Conditioning,
    scale: f64,
) -> Result<Vec<f64>> {
    let ctx = |e: Error| Error::Backend(format!("{} at timestep {t}: {e}", backend.id()));
    let pos = backend.denoise(x, t, c_pos).map_err(ctx)?;
    let neg = backend.denoise(x, t, c_neg).map_err(ctx)?;
    if pos.len() != neg.len() {
        return Err(Error::Backend(format!(
            "{} returned outputs of different widths at timestep {t}",
            backend.id()
        )));
    }
    Ok(pos
        .iter()
        .zip(&neg)
        .map(|(a, b)| scale * (a - b) + b)
        .collect())
}

/// Runs the full sampling loop for one seed.
pub fn sample<B: DiffusionBackend + ?Sized>(
    backend: &B,
    c_pos: &Conditioning,
    c_neg: &Conditioning,
    scale: f64,
    seed: u64,
) -> Result<GeneratedImage> {
    let mut x = backend.initial_latent(seed);
    for t in backend.timesteps() {
        x = guided_step(backend, &x, t, c_pos, c_neg, scale)?;
    }
    backend.decode(&x)
}

/// Samples one batch; images come back in seed order.
pub fn sample_batch<B: DiffusionBackend + ?Sized>(
    backend: &B,
    c_pos: &Conditioning,
    c_neg: &Conditioning,
    scale: f64,
    seeds: &[u64],
) -> Result<Vec<GeneratedImage>> {
    seeds
        .par_iter()
        .map(|&s| sample(backend, c_pos, c_neg, scale, s))
        .collect()
}

/// Outputs of the stub land on this dyadic grid, so the guidance
/// arithmetic above is exact in `f64` for dyadic scales such as 7.5.
const GRID: f64 = 65536.0;
const CLAMP: f64 = 64.0;

fn quantize(v: f64) -> f64 {
    (v.clamp(-CLAMP, CLAMP) * GRID).round() / GRID
}

/// Deterministic stand-in for a latent diffusion model.
///
/// `f(x, t, c) = q((1 - rate) x + rate * pooled(c) + jitter * h(x, t, c))`
/// where `h` is a hash-derived vector in `[-1, 1]^d` and `q` snaps to a
/// 2^-16 grid. Under guidance the latent settles near
/// `scale * pooled(c_pos) - (scale - 1) * pooled(c_neg)`, so decoded images
/// carry the semantics of the conditioning.
#[derive(Debug, Clone)]
pub struct StubBackend {
    dim: usize,
    steps: usize,
    rate: f64,
    jitter: f64,
}

impl StubBackend {
    pub const ID: &'static str = "stub";

    pub fn new(dim: usize) -> Self {
        StubBackend {
            dim,
            steps: 50,
            rate: 0.25,
            jitter: 0.002,
        }
    }

    pub fn with_steps(mut self, steps: usize) -> Self {
        self.steps = steps;
        self
    }

    fn hash_vector(&self, x: &[f64], t: usize, c: &Conditioning) -> Vec<f64> {
        let mut h = Sha256::new();
        h.update((t as u64).to_le_bytes());
        h.update(to_le_bytes(x));
        c.digest_into(&mut h);
        let digest = h.finalize();
        let mut rng = ChaCha8Rng::from_seed(digest[..32].try_into().expect("32-byte digest"));
        (0..self.dim)
            .map(|_| rng.random_range(-1.0..=1.0))
            .collect()
    }
}

impl DiffusionBackend for StubBackend {
    fn id(&self) -> &str {
        Self::ID
    }

    fn latent_dim(&self) -> usize {
        self.dim
    }

    fn timesteps(&self) -> Vec<usize> {
        (0..self.steps).rev().collect()
    }

    fn initial_latent(&self, seed: u64) -> Vec<f64> {
        let mut rng = rng_for(seed, "stub/latent");
        (0..self.dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect()
    }

    fn denoise(&self, x: &[f64], t: usize, c: &Conditioning) -> Result<Vec<f64>> {
        if x.len() != self.dim {
            return Err(Error::Backend(format!(
                "latent width {} != {}",
                x.len(),
                self.dim
            )));
        }
        if c.pooled.len() != self.dim {
            return Err(Error::Backend(format!(
                "conditioning width {} != {}",
                c.pooled.len(),
                self.dim
            )));
        }
        let h = self.hash_vector(x, t, c);
        Ok(x.iter()
            .zip(&c.pooled)
            .zip(&h)
            .map(|((xi, ci), hi)| {
                quantize((1.0 - self.rate) * xi + self.rate * ci + self.jitter * hi)
            })
            .collect())
    }

    fn decode(&self, x: &[f64]) -> Result<GeneratedImage> {
        Ok(GeneratedImage { latent: x.to_vec() })
    }
}

/// Backends available in this build, by identifier.
pub fn backend_by_id(id: &str, latent_dim: usize) -> Result<Box<dyn DiffusionBackend>> {
    match id {
        StubBackend::ID => Ok(Box::new(StubBackend::new(latent_dim))),
        other => Err(Error::BackendUnavailable(format!(
            "`{other}` is not available in this build (available: {})",
            StubBackend::ID
        ))),
    }
}
