//! Fixtures shared by the criterion benches.

use inclusive_core::benchmark::synthetic_references;
use inclusive_core::encoders::{JointEncoder, ToyEncoder, ToyEncoderSpec};
use inclusive_core::training::Batch;
use inclusive_core::{AttributeSet, FairTokenTable, TokenSeq};

pub const PROMPT: &str = "a headshot of a person";

pub struct LossFixture {
    pub attr_set: AttributeSet,
    pub encoder: ToyEncoder,
    pub table: FairTokenTable,
    pub batch: Batch,
    pub base_tokens: TokenSeq,
    pub base_embedding: Vec<f64>,
}

/// `n` binary attributes, one full batch of `batch_size` features each.
pub fn loss_fixture(n: usize, batch_size: usize, d: usize) -> LossFixture {
    let attr_set = AttributeSet::binary(n, 3).expect("valid schema");
    let encoder = ToyEncoder::new(ToyEncoderSpec::new(1, d, d)).expect("valid encoder");
    let refs = synthetic_references(&attr_set, batch_size, d, 1);
    let mut batch = Batch::new(n);
    for (m, i, rec) in refs.iter() {
        batch.push(m, i, rec.feature.clone().expect("synthetic features"));
    }
    let mut table = FairTokenTable::zeros(&attr_set, d);
    for (k, p) in table.params_mut().iter_mut().enumerate() {
        *p = ((k * 37 % 101) as f64 - 50.0) / 500.0;
    }
    let base_tokens = encoder.tokenize(PROMPT).expect("tokenizes");
    let base_embedding = encoder.encode_text(&base_tokens).expect("encodes");
    LossFixture {
        attr_set,
        encoder,
        table,
        batch,
        base_tokens,
        base_embedding,
    }
}
