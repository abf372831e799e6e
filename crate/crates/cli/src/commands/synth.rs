use std::path::PathBuf;

use inclusive_core::dataset::{write_synthetic_dataset, SyntheticSpec};
use inclusive_core::AttributeSet;

use crate::config::Settings;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    schema: PathBuf,

    #[arg(long, default_value_t = 20)]
    per_category: usize,

    /// Latent width; must match the encoder's image width
    #[arg(long)]
    dim: Option<usize>,
}

pub fn run(settings: &Settings, args: Args) -> anyhow::Result<()> {
    let attr_set = AttributeSet::load(&args.schema)?;
    let spec = SyntheticSpec {
        seed: settings.seed_for("synthetic"),
        dim: args.dim.unwrap_or(settings.file.encoder.d_emb),
        per_category: args.per_category,
        ..SyntheticSpec::default()
    };
    let out = settings.out_or("out/data");
    let manifest = write_synthetic_dataset(&out, &attr_set, &spec)?;
    manifest.save(&out.join("manifest.json"))?;
    println!("{} images in {}", manifest.entries().len(), out.display());
    Ok(())
}
