//! Prompt assembly and sampling.

pub mod backend;
pub mod job;
pub mod prompt;

pub use backend::{
    backend_by_id, guided_step, sample, sample_batch, Conditioning, DiffusionBackend,
    GeneratedImage, SpatialCondition, StubBackend,
};
pub use job::{
    generate, read_manifest, GenerationJob, GenerationRecord, ImageSink, ManifestRow, MemorySink,
    MethodTag, PromptPlan, RecordKey, RunDirectory, MANIFEST_FILE,
};
pub use prompt::{assemble_prompt, build_hard_prompt, hybrid_conditioning, HardPromptMode};
