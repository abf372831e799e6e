use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use inclusive_core::encoders::{ImageSource, JointEncoder};
use inclusive_core::evaluation::{
    extract_all, fit_gaussian, ingest_manual_labels, EncoderFeatures, GaussianStats,
    LabelClassifier, LabelPrompts, LabelRecord, LabelSource, MetricReport,
};
use inclusive_core::generation::{read_manifest, ManifestRow, MethodTag, MANIFEST_FILE};
use inclusive_core::{AttributeSet, Error};

use super::{write_json, DataSource};
use crate::config::Settings;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Run directory written by `generate`
    #[arg(long)]
    run: PathBuf,

    /// Attribute schema the images are labeled against
    #[arg(long)]
    schema: PathBuf,

    /// Manual label CSV (`path,<attr>...`, paths relative to the run);
    /// without it images are labeled by the zero-shot classifier
    #[arg(long)]
    labels: Option<PathBuf>,

    /// Reference feature statistics (JSON) for FID
    #[arg(long)]
    reference_stats: Option<PathBuf>,

    /// Only evaluate this method
    #[arg(long)]
    method: Option<MethodTag>,
}

pub const METRICS_DIR: &str = "metrics";

fn by_method(
    rows: Vec<ManifestRow>,
    only: Option<MethodTag>,
) -> BTreeMap<MethodTag, Vec<ManifestRow>> {
    let mut out: BTreeMap<MethodTag, Vec<ManifestRow>> = BTreeMap::new();
    for r in rows
        .into_iter()
        .filter(|r| only.is_none_or(|m| m == r.method))
    {
        out.entry(r.method).or_default().push(r);
    }
    out
}

fn manual_labels(
    path: &Path,
    attr_set: &AttributeSet,
    rows: &[ManifestRow],
) -> anyhow::Result<Vec<LabelRecord>> {
    let file = std::fs::File::open(path)?;
    let all: BTreeMap<String, LabelRecord> = ingest_manual_labels(file, attr_set)?
        .into_iter()
        .map(|r| (r.image.clone(), r))
        .collect();
    let mut gaps = Vec::new();
    let mut out = Vec::new();
    for row in rows {
        let key = row.path.display().to_string();
        match all.get(&key) {
            Some(r) => out.push(r.clone()),
            None => gaps.push(key),
        }
    }
    if !gaps.is_empty() {
        return Err(Error::Validation(format!(
            "{} has no labels for {} image(s):\n  {}",
            path.display(),
            gaps.len(),
            gaps.join("\n  ")
        ))
        .into());
    }
    Ok(out)
}

pub fn run(settings: &Settings, args: Args) -> anyhow::Result<()> {
    let attr_set = AttributeSet::load(&args.schema)?;
    let rows = read_manifest(&args.run.join(MANIFEST_FILE))?;
    let groups = by_method(rows, args.method);
    if groups.is_empty() {
        return Err(Error::Precondition(format!(
            "{} holds no generated images",
            args.run.display()
        ))
        .into());
    }
    let encoder = settings.encoder()?;
    let reference = args
        .reference_stats
        .as_deref()
        .map(GaussianStats::load)
        .transpose()?;
    let prompts = LabelPrompts::with_defaults(&attr_set);
    let classifier = match args.labels {
        None => Some(LabelClassifier::new(&attr_set, prompts.clone(), &encoder)?),
        Some(_) => None,
    };
    let out = settings
        .out
        .clone()
        .unwrap_or_else(|| args.run.clone())
        .join(METRICS_DIR);

    for (method, rows) in groups {
        let images: Vec<ImageSource> = rows
            .iter()
            .map(|r| ImageSource::File(args.run.join(&r.path)))
            .collect();
        let (labels, source) = match (&args.labels, &classifier) {
            (Some(p), _) => (manual_labels(p, &attr_set, &rows)?, LabelSource::Manual),
            (None, Some(clf)) => {
                let combos = clf.classify_all(&images, &encoder)?;
                let labels = rows
                    .iter()
                    .zip(combos)
                    .map(|(r, c)| LabelRecord {
                        image: r.path.display().to_string(),
                        combination: c,
                        source: LabelSource::Classifier,
                    })
                    .collect();
                (labels, LabelSource::Classifier)
            }
            (None, None) => unreachable!("classifier built when no labels are given"),
        };
        let mut report = MetricReport::from_labels(method.as_str(), &attr_set, &labels, source)?;
        if source == LabelSource::Classifier {
            report = report.with_label_prompts(prompts.clone());
        }
        if let Some(reference) = &reference {
            let features = extract_all(&EncoderFeatures(&encoder), &images)?;
            let generated =
                fit_gaussian(&features)?.with_extractor(encoder.handle().identifier.clone());
            report = report.with_fid(&generated, reference)?;
        }
        for w in &report.warnings {
            log::warn!("{method}: {w}");
        }
        write_json(&out.join(format!("{method}.json")), &report)?;
        print!(
            "{method}: {} images, KL {:.6} nats",
            report.sample_count, report.joint.kl_nats
        );
        for m in &report.marginals {
            print!(", {} {:.6}", m.attribute, m.kl_nats);
        }
        if let Some(f) = &report.fid {
            print!(", FID {:.4} (n = {})", f.value, f.generated_count);
        }
        println!();
    }
    Ok(())
}

#[derive(clap::Args, Debug)]
pub struct FitStatsArgs {
    /// Directory of PNG images, searched recursively
    #[arg(long, conflicts_with_all = ["schema", "data", "manifest"])]
    images: Option<PathBuf>,

    /// Schema for --data/--manifest
    #[arg(long, requires = "source")]
    schema: Option<PathBuf>,

    #[arg(long, group = "source")]
    data: Option<PathBuf>,

    #[arg(long, group = "source")]
    manifest: Option<PathBuf>,
}

fn pngs_under(dir: &Path, out: &mut BTreeSet<PathBuf>) -> std::io::Result<()> {
    for e in std::fs::read_dir(dir)? {
        let p = e?.path();
        if p.is_dir() {
            pngs_under(&p, out)?;
        } else if p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")) {
            out.insert(p);
        }
    }
    Ok(())
}

pub fn fit_stats(settings: &Settings, args: FitStatsArgs) -> anyhow::Result<()> {
    let images: Vec<ImageSource> = match (&args.images, &args.schema) {
        (Some(dir), _) => {
            let mut set = BTreeSet::new();
            pngs_under(dir, &mut set)?;
            set.into_iter().map(ImageSource::File).collect()
        }
        (None, Some(schema)) => {
            let attr_set = AttributeSet::load(schema)?;
            let source = DataSource {
                data: args.data.clone(),
                manifest: args.manifest.clone(),
            };
            source
                .load(&attr_set)?
                .reference_set(&attr_set)?
                .iter()
                .map(|(_, _, r)| r.source.clone())
                .collect()
        }
        (None, None) => {
            return Err(
                Error::Config("give --images or --schema with --data/--manifest".into()).into(),
            )
        }
    };
    let encoder = settings.encoder()?;
    let features = extract_all(&EncoderFeatures(&encoder), &images)?;
    let stats = fit_gaussian(&features)?.with_extractor(encoder.handle().identifier.clone());
    let out = settings.out_or("out").join("reference-stats.json");
    stats.save(&out)?;
    println!("{} images -> {}", stats.sample_count, out.display());
    Ok(())
}
