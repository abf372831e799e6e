use std::path::PathBuf;
use std::time::Instant;

use inclusive_core::encoders::{cache_reference_features, FeatureCache, JointEncoder};
use inclusive_core::training::{train, TrainingMode};
use inclusive_core::AttributeSet;

use super::{write_json, DataSource};
use crate::config::Settings;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Attribute schema (TOML)
    #[arg(long)]
    schema: PathBuf,

    #[command(flatten)]
    source: DataSource,

    /// Base prompt the tokens are trained against
    #[arg(long, default_value = "a headshot of a person")]
    prompt: String,

    #[arg(long)]
    epochs: Option<usize>,

    #[arg(long)]
    batch_size: Option<usize>,

    #[arg(long)]
    learning_rate: Option<f64>,

    #[arg(long)]
    lambda_sem: Option<f64>,

    /// Train each attribute on its own and concatenate the tables
    #[arg(long)]
    per_attribute: bool,

    /// Feature cache directory (default: <out>/feature-cache)
    #[arg(long)]
    cache: Option<PathBuf>,
}

pub fn run(settings: &Settings, args: Args) -> anyhow::Result<()> {
    let out = settings.out_or("out/train");
    let attr_set = AttributeSet::load(&args.schema)?;
    let manifest = args.source.load(&attr_set)?;
    let refs = manifest.reference_set(&attr_set)?;
    let encoder = settings.encoder()?;

    let mut config = settings.training();
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    if let Some(v) = args.batch_size {
        config.batch_size = v;
    }
    if let Some(v) = args.learning_rate {
        config.learning_rate = v;
    }
    if let Some(v) = args.lambda_sem {
        config.lambda_sem = v;
    }
    if args.per_attribute {
        config.mode = TrainingMode::PerAttribute;
    }
    config.validate()?;

    let cache_dir = args.cache.unwrap_or_else(|| out.join("feature-cache"));
    let cache = FeatureCache::open(&cache_dir, &encoder.handle().identifier)?;
    log::info!("encoding {} reference images", refs.len());
    let refs = cache_reference_features(&encoder, refs, Some(&cache))?;

    let start = Instant::now();
    let outcome = train(&attr_set, &refs, &args.prompt, &encoder, &config)?;
    let seconds = start.elapsed().as_secs_f64();

    std::fs::create_dir_all(&out)?;
    outcome.table.save(&out.join("tokens.fairtok"))?;
    outcome.trace.save_csv(&out.join("trace.csv"))?;
    let last = outcome.trace.rows.last().map(|r| r.report);
    write_json(
        &out.join("summary.json"),
        &serde_json::json!({
            "prompt": args.prompt,
            "encoder": encoder.handle().identifier,
            "schema_hash": attr_set.schema_hash(),
            "config": config,
            "epochs": outcome.trace.epochs(),
            "wall_seconds": seconds,
            "final": last,
        }),
    )?;

    println!("trained {} epochs in {seconds:.2}s", outcome.trace.epochs());
    if let Some(r) = last {
        let dir = r.l_dir.map_or("-".to_string(), |v| format!("{v:.6}"));
        println!(
            "final step: l_dir {dir}  l_cos {:.6}  l_sem {:.6}  l_total {:.6}",
            r.l_cos, r.l_sem, r.l_total
        );
    }
    println!("tokens: {}", out.join("tokens.fairtok").display());
    Ok(())
}
