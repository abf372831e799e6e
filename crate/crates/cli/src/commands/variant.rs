use std::path::PathBuf;

use inclusive_core::dataset::{apply_variant, VariantSpec};
use inclusive_core::AttributeSet;

use super::DataSource;
use crate::config::Settings;

#[derive(clap::Args, Debug)]
pub struct Args {
    #[arg(long)]
    schema: PathBuf,

    #[command(flatten)]
    source: DataSource,

    /// Attribute whose images are filtered
    #[arg(long)]
    attribute: String,

    /// Built-in variant name (original, gender-biased, male-only) or a TOML file
    #[arg(long)]
    variant: String,

    /// Where to write the filtered manifest
    #[arg(long)]
    output: PathBuf,
}

pub fn run(_settings: &Settings, args: Args) -> anyhow::Result<()> {
    let attr_set = AttributeSet::load(&args.schema)?;
    let manifest = args.source.load(&attr_set)?;
    let spec = if VariantSpec::BUILTIN.contains(&args.variant.as_str()) {
        VariantSpec::builtin(&args.variant)?
    } else {
        VariantSpec::from_toml_str(&std::fs::read_to_string(&args.variant)?)?
    };
    let out = apply_variant(&manifest, &args.attribute, &spec)?;
    if let Some(parent) = args.output.parent() {
        std::fs::create_dir_all(parent)?;
    }
    out.save(&args.output)?;
    if let Some(a) = out.attribute(&args.attribute) {
        let counts: Vec<String> = a
            .categories
            .iter()
            .map(|c| format!("{} {}", c.name, c.images.len()))
            .collect();
        println!(
            "{}: {} -> {}",
            spec.name,
            counts.join(", "),
            args.output.display()
        );
    }
    Ok(())
}
