//! Generation jobs, records and run directories.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::backend::{sample_batch, Conditioning, DiffusionBackend, SpatialCondition};
use super::prompt::{assemble_prompt, build_hard_prompt, hybrid_conditioning, HardPromptMode};
use crate::encoders::JointEncoder;
use crate::error::{Error, Result};
use crate::schema::{AttributeSet, CategoryCombination};
use crate::seed::content_hash;
use crate::tokens::FairTokenTable;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MethodTag {
    #[serde(rename = "SD")]
    Sd,
    #[serde(rename = "HPS")]
    Hps,
    #[serde(rename = "HPSn")]
    Hpsn,
    #[serde(rename = "ITI-GEN")]
    ItiGen,
    #[serde(rename = "HYBRID")]
    Hybrid,
}

impl MethodTag {
    pub const ALL: [MethodTag; 5] = [
        MethodTag::Sd,
        MethodTag::Hps,
        MethodTag::Hpsn,
        MethodTag::ItiGen,
        MethodTag::Hybrid,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            MethodTag::Sd => "SD",
            MethodTag::Hps => "HPS",
            MethodTag::Hpsn => "HPSn",
            MethodTag::ItiGen => "ITI-GEN",
            MethodTag::Hybrid => "HYBRID",
        }
    }
}

impl fmt::Display for MethodTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for MethodTag {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        MethodTag::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::Validation(format!("unknown method `{s}`")))
    }
}

/// How the positive and negative conditioning of each combination is built.
#[derive(Debug, Clone)]
pub enum PromptPlan {
    /// The prompt as given; a single combination.
    Plain,
    HardPrompt {
        attributes: AttributeSet,
        mode: HardPromptMode,
    },
    FairTokens {
        attributes: AttributeSet,
        table: FairTokenTable,
    },
    /// Fair tokens for `itigen`, negative prompting for `hpsn`. Combinations
    /// range over the concatenation `itigen ++ hpsn`.
    Hybrid {
        itigen: AttributeSet,
        table: Option<FairTokenTable>,
        hpsn: AttributeSet,
    },
}

impl PromptPlan {
    pub fn method(&self) -> MethodTag {
        match self {
            PromptPlan::Plain => MethodTag::Sd,
            PromptPlan::HardPrompt {
                mode: HardPromptMode::Hps,
                ..
            } => MethodTag::Hps,
            PromptPlan::HardPrompt {
                mode: HardPromptMode::Hpsn,
                ..
            } => MethodTag::Hpsn,
            PromptPlan::FairTokens { .. } => MethodTag::ItiGen,
            PromptPlan::Hybrid { .. } => MethodTag::Hybrid,
        }
    }

    /// The attribute set whose combinations the job iterates over.
    pub fn attributes(&self) -> Result<AttributeSet> {
        match self {
            PromptPlan::Plain => Ok(AttributeSet::empty()),
            PromptPlan::HardPrompt { attributes, .. }
            | PromptPlan::FairTokens { attributes, .. } => Ok(attributes.clone()),
            PromptPlan::Hybrid { itigen, hpsn, .. } => itigen.concat(hpsn),
        }
    }

    /// `(positive, negative)` conditioning for one combination. The job's own
    /// negative prompt is joined with any negative text the plan produces.
    pub fn conditioning<E: JointEncoder + ?Sized>(
        &self,
        prompt: &str,
        negative_prompt: &str,
        combination: &CategoryCombination,
        encoder: &E,
    ) -> Result<(Conditioning, Conditioning)> {
        let join = |extra: &str| {
            [negative_prompt.trim(), extra.trim()]
                .into_iter()
                .filter(|s| !s.is_empty())
                .collect::<Vec<_>>()
                .join(", ")
        };
        let (pos, neg) = match self {
            PromptPlan::Plain => (Conditioning::from_text(encoder, prompt)?, join("")),
            PromptPlan::HardPrompt { attributes, mode } => {
                let (p, n) = build_hard_prompt(prompt, attributes, combination, *mode)?;
                (Conditioning::from_text(encoder, &p)?, join(&n))
            }
            PromptPlan::FairTokens { attributes, table } => {
                table.check_schema(attributes)?;
                attributes.check_combination(combination)?;
                let p = assemble_prompt(prompt, table, combination, encoder)?;
                (
                    Conditioning::from_tokens(encoder, p.assembled_tokens)?,
                    join(""),
                )
            }
            PromptPlan::Hybrid {
                itigen,
                table,
                hpsn,
            } => {
                let split = itigen.len().min(combination.0.len());
                let it = CategoryCombination(combination.0[..split].to_vec());
                let hp = CategoryCombination(combination.0[split..].to_vec());
                let (tokens, n) =
                    hybrid_conditioning(prompt, table.as_ref(), itigen, &it, hpsn, &hp, encoder)?;
                (Conditioning::from_tokens(encoder, tokens)?, join(&n))
            }
        };
        Ok((pos, Conditioning::from_text(encoder, &neg)?))
    }
}

fn default_scale() -> f64 {
    7.5
}

fn default_batch() -> usize {
    8
}

fn default_count() -> usize {
    1
}

fn default_backend() -> String {
    "stub".into()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationJob {
    pub id: String,
    #[serde(default = "default_backend")]
    pub backend: String,
    pub prompt: String,
    #[serde(default)]
    pub negative_prompt: String,
    #[serde(default = "default_scale")]
    pub guidance_scale: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_count")]
    pub images_per_combination: usize,
    #[serde(default = "default_batch")]
    pub batch_size: usize,
    #[serde(skip)]
    pub spatial: Option<SpatialCondition>,
}

impl GenerationJob {
    pub fn new(id: impl Into<String>, prompt: impl Into<String>) -> Self {
        GenerationJob {
            id: id.into(),
            backend: default_backend(),
            prompt: prompt.into(),
            negative_prompt: String::new(),
            guidance_scale: default_scale(),
            seed: 0,
            images_per_combination: default_count(),
            batch_size: default_batch(),
            spatial: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.guidance_scale.is_finite() && self.guidance_scale > 0.0) {
            return Err(Error::Validation(format!(
                "guidance_scale must be positive, got {}",
                self.guidance_scale
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Validation("batch_size must be at least 1".into()));
        }
        if self.images_per_combination == 0 {
            return Err(Error::Validation(
                "images_per_combination must be at least 1".into(),
            ));
        }
        if self.prompt.trim().is_empty() {
            return Err(Error::Validation("prompt is empty".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct RecordKey {
    pub method: MethodTag,
    pub combination_index: usize,
    pub seed_offset: u64,
}

impl RecordKey {
    pub fn relative_path(&self) -> PathBuf {
        PathBuf::from(self.method.as_str())
            .join(self.combination_index.to_string())
            .join(format!("{}.png", self.seed_offset))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenerationRecord {
    /// Where the image lives: a path relative to the run directory, or a
    /// `memory:` handle.
    pub image: String,
    /// sha256 of the encoded image.
    pub digest: String,
    pub combination: CategoryCombination,
    pub combination_index: usize,
    pub job_id: String,
    pub seed_offset: u64,
    pub seed: u64,
    pub method: MethodTag,
}

impl GenerationRecord {
    pub fn key(&self) -> RecordKey {
        RecordKey {
            method: self.method,
            combination_index: self.combination_index,
            seed_offset: self.seed_offset,
        }
    }
}

/// Destination for generated images. Stores are serialized by `generate`.
pub trait ImageSink {
    /// A record already produced by an earlier run, if any.
    fn completed(&self, key: &RecordKey) -> Option<GenerationRecord>;

    /// Persists the image and returns the record with its handle filled in.
    fn store(&mut self, record: GenerationRecord, png: &[u8]) -> Result<GenerationRecord>;
}

#[derive(Debug, Default)]
pub struct MemorySink {
    pub images: BTreeMap<RecordKey, (GenerationRecord, Vec<u8>)>,
}

impl ImageSink for MemorySink {
    fn completed(&self, key: &RecordKey) -> Option<GenerationRecord> {
        self.images.get(key).map(|(r, _)| r.clone())
    }

    fn store(&mut self, mut record: GenerationRecord, png: &[u8]) -> Result<GenerationRecord> {
        let key = record.key();
        record.image = format!("memory:{}", key.relative_path().display());
        self.images.insert(key, (record.clone(), png.to_vec()));
        Ok(record)
    }
}

pub const MANIFEST_FILE: &str = "manifest.tsv";
const MANIFEST_HEADER: &str = "method\tcombination\tseed\tpath";

/// One row of a run manifest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestRow {
    pub method: MethodTag,
    pub combination: CategoryCombination,
    pub seed: u64,
    pub path: PathBuf,
}

impl ManifestRow {
    /// Combination index and seed offset, recovered from the path layout.
    pub fn key(&self) -> Option<RecordKey> {
        let mut parts = self.path.iter().rev();
        let offset = parts.next()?.to_str()?.strip_suffix(".png")?.parse().ok()?;
        let ci = parts.next()?.to_str()?.parse().ok()?;
        Some(RecordKey {
            method: self.method,
            combination_index: ci,
            seed_offset: offset,
        })
    }
}

fn parse_combination(s: &str) -> Option<CategoryCombination> {
    let inner = s.strip_prefix('(')?.strip_suffix(')')?;
    if inner.is_empty() {
        return Some(CategoryCombination(Vec::new()));
    }
    inner
        .split(',')
        .map(|p| p.trim().parse().ok())
        .collect::<Option<Vec<_>>>()
        .map(CategoryCombination)
}

pub fn read_manifest(path: &Path) -> Result<Vec<ManifestRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate() {
        if n == 0 || line.trim().is_empty() {
            continue;
        }
        let bad = || {
            Error::Validation(format!(
                "{}:{}: malformed manifest row",
                path.display(),
                n + 1
            ))
        };
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(bad());
        }
        rows.push(ManifestRow {
            method: cols[0].parse().map_err(|_| bad())?,
            combination: parse_combination(cols[1]).ok_or_else(bad)?,
            seed: cols[2].parse().map_err(|_| bad())?,
            path: PathBuf::from(cols[3]),
        });
    }
    Ok(rows)
}

fn manifest_line(row: &ManifestRow) -> String {
    format!(
        "{}\t{}\t{}\t{}\n",
        row.method,
        row.combination,
        row.seed,
        row.path.display()
    )
}

/// A run directory: `<root>/<method>/<combination_index>/<seed_offset>.png`
/// plus `manifest.tsv`, appended per image and compacted on reopen.
/// Reopening a run resumes it.
#[derive(Debug)]
pub struct RunDirectory {
    root: PathBuf,
    done: BTreeMap<RecordKey, ManifestRow>,
}

impl RunDirectory {
    pub fn open(root: &Path) -> Result<Self> {
        std::fs::create_dir_all(root)?;
        let manifest = root.join(MANIFEST_FILE);
        let mut done = BTreeMap::new();
        if manifest.exists() {
            let rows = read_manifest(&manifest)?;
            let total = rows.len();
            for row in rows {
                if !root.join(&row.path).is_file() {
                    continue;
                }
                if let Some(key) = row.key() {
                    done.insert(key, row);
                }
            }
            // drop rows for deleted images and duplicates left by resumes
            if done.len() != total {
                let mut text = format!("{MANIFEST_HEADER}\n");
                for row in done.values() {
                    text.push_str(&manifest_line(row));
                }
                let tmp = manifest.with_extension("tsv.tmp");
                std::fs::write(&tmp, text)?;
                std::fs::rename(&tmp, &manifest)?;
            }
        } else {
            std::fs::write(&manifest, format!("{MANIFEST_HEADER}\n"))?;
        }
        Ok(RunDirectory {
            root: root.to_path_buf(),
            done,
        })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn rows(&self) -> impl Iterator<Item = &ManifestRow> {
        self.done.values()
    }
}

impl ImageSink for RunDirectory {
    fn completed(&self, key: &RecordKey) -> Option<GenerationRecord> {
        let row = self.done.get(key)?;
        let bytes = std::fs::read(self.root.join(&row.path)).ok()?;
        Some(GenerationRecord {
            image: row.path.display().to_string(),
            digest: content_hash(&bytes),
            combination: row.combination.clone(),
            combination_index: key.combination_index,
            job_id: String::new(),
            seed_offset: key.seed_offset,
            seed: row.seed,
            method: key.method,
        })
    }

    fn store(&mut self, mut record: GenerationRecord, png: &[u8]) -> Result<GenerationRecord> {
        let key = record.key();
        let rel = key.relative_path();
        let path = self.root.join(&rel);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        let tmp = path.with_extension("png.tmp");
        std::fs::write(&tmp, png)?;
        std::fs::rename(&tmp, &path)?;
        let row = ManifestRow {
            method: record.method,
            combination: record.combination.clone(),
            seed: record.seed,
            path: rel.clone(),
        };
        let mut f = OpenOptions::new()
            .append(true)
            .open(self.root.join(MANIFEST_FILE))?;
        f.write_all(manifest_line(&row).as_bytes())?;
        f.flush()?;
        self.done.insert(key, row);
        record.image = rel.display().to_string();
        Ok(record)
    }
}

/// Generates `images_per_combination` images for every combination of the
/// plan, in combination order, batched at `batch_size`. Image `k` of
/// combination `ci` uses seed offset `ci * count + k` and seed
/// `job.seed + offset`. Images already present in the sink are skipped.
pub fn generate<E, B, S>(
    job: &GenerationJob,
    plan: &PromptPlan,
    encoder: &E,
    backend: &B,
    sink: &mut S,
) -> Result<Vec<GenerationRecord>>
where
    E: JointEncoder + ?Sized,
    B: DiffusionBackend + ?Sized,
    S: ImageSink + ?Sized,
{
    job.validate()?;
    if backend.latent_dim() != encoder.handle().d_emb {
        return Err(Error::Config(format!(
            "backend `{}` expects width {}, encoder `{}` produces {}",
            backend.id(),
            backend.latent_dim(),
            encoder.handle().identifier,
            encoder.handle().d_emb
        )));
    }
    let attributes = plan.attributes()?;
    let method = plan.method();
    let count = job.images_per_combination;
    let mut records = Vec::with_capacity(count * attributes.joint_size());
    for (ci, combination) in attributes.enumerate_combinations().into_iter().enumerate() {
        let (pos, neg) =
            plan.conditioning(&job.prompt, &job.negative_prompt, &combination, encoder)?;
        let pos = pos.with_spatial(job.spatial.clone());
        let neg = neg.with_spatial(job.spatial.clone());
        let offsets: Vec<u64> = (0..count).map(|k| (ci * count + k) as u64).collect();
        for chunk in offsets.chunks(job.batch_size) {
            let mut pending = Vec::new();
            for &offset in chunk {
                let key = RecordKey {
                    method,
                    combination_index: ci,
                    seed_offset: offset,
                };
                match sink.completed(&key) {
                    Some(mut r) => {
                        r.job_id = job.id.clone();
                        records.push(r);
                    }
                    None => pending.push(offset),
                }
            }
            if pending.is_empty() {
                continue;
            }
            let seeds: Vec<u64> = pending.iter().map(|o| job.seed.wrapping_add(*o)).collect();
            let images = sample_batch(backend, &pos, &neg, job.guidance_scale, &seeds)?;
            for ((offset, seed), image) in pending.into_iter().zip(seeds).zip(images) {
                let png = image.png_bytes()?;
                let record = GenerationRecord {
                    image: String::new(),
                    digest: content_hash(&png),
                    combination: combination.clone(),
                    combination_index: ci,
                    job_id: job.id.clone(),
                    seed_offset: offset,
                    seed,
                    method,
                };
                records.push(sink.store(record, &png)?);
            }
        }
    }
    Ok(records)
}
