use std::path::{Path, PathBuf};

use anyhow::Context;
use inclusive_core::encoders::JointEncoder;
use inclusive_core::generation::{
    backend_by_id, generate, GenerationJob, HardPromptMode, MethodTag, PromptPlan, RunDirectory,
};
use inclusive_core::{AttributeSet, Error, FairTokenTable};
use serde::Deserialize;

use super::subset;
use crate::config::Settings;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Job file (TOML)
    #[arg(long)]
    job: PathBuf,
}

/// Job file layout. Paths are relative to the job file.
#[derive(Debug, Deserialize)]
pub struct JobFile {
    #[serde(flatten)]
    pub job: GenerationJob,
    pub method: MethodTag,
    pub schema: Option<PathBuf>,
    pub tokens: Option<PathBuf>,
    /// Attributes used by HPS, HPSn and ITI-GEN; empty means all.
    #[serde(default)]
    pub attributes: Vec<String>,
    #[serde(default)]
    pub itigen_attributes: Vec<String>,
    #[serde(default)]
    pub hpsn_attributes: Vec<String>,
}

impl JobFile {
    pub fn load(path: &Path) -> anyhow::Result<Self> {
        let text =
            std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let file: JobFile =
            toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(file)
    }

    fn resolve(base: &Path, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base.join(p)
        }
    }

    fn schema(&self, base: &Path) -> anyhow::Result<AttributeSet> {
        let p = self
            .schema
            .as_ref()
            .ok_or_else(|| Error::Config(format!("method {} needs `schema`", self.method)))?;
        Ok(AttributeSet::load(&Self::resolve(base, p))?)
    }

    fn table(
        &self,
        base: &Path,
        encoder_id: &str,
        names: &[&str],
    ) -> anyhow::Result<FairTokenTable> {
        let p = self
            .tokens
            .as_ref()
            .ok_or_else(|| Error::Config(format!("method {} needs `tokens`", self.method)))?;
        let table = FairTokenTable::load(&Self::resolve(base, p))?;
        if table.metadata.encoder_id != encoder_id {
            return Err(Error::Config(format!(
                "tokens were trained with encoder `{}`, the current encoder is `{encoder_id}`",
                table.metadata.encoder_id
            ))
            .into());
        }
        Ok(table.select(names)?)
    }

    pub fn plan(&self, base: &Path, encoder_id: &str) -> anyhow::Result<PromptPlan> {
        let names = |s: &AttributeSet| {
            s.attributes()
                .iter()
                .map(|a| a.name.clone())
                .collect::<Vec<_>>()
        };
        Ok(match self.method {
            MethodTag::Sd => PromptPlan::Plain,
            MethodTag::Hps | MethodTag::Hpsn => PromptPlan::HardPrompt {
                attributes: subset(&self.schema(base)?, &self.attributes)?,
                mode: if self.method == MethodTag::Hps {
                    HardPromptMode::Hps
                } else {
                    HardPromptMode::Hpsn
                },
            },
            MethodTag::ItiGen => {
                let attributes = subset(&self.schema(base)?, &self.attributes)?;
                let n = names(&attributes);
                let table = self.table(
                    base,
                    encoder_id,
                    &n.iter().map(String::as_str).collect::<Vec<_>>(),
                )?;
                PromptPlan::FairTokens { attributes, table }
            }
            MethodTag::Hybrid => {
                let schema = self.schema(base)?;
                let itigen = if self.itigen_attributes.is_empty() {
                    AttributeSet::empty()
                } else {
                    subset(&schema, &self.itigen_attributes)?
                };
                let hpsn = if self.hpsn_attributes.is_empty() {
                    AttributeSet::empty()
                } else {
                    subset(&schema, &self.hpsn_attributes)?
                };
                let table = if itigen.is_empty() {
                    None
                } else {
                    let n = names(&itigen);
                    Some(self.table(
                        base,
                        encoder_id,
                        &n.iter().map(String::as_str).collect::<Vec<_>>(),
                    )?)
                };
                PromptPlan::Hybrid {
                    itigen,
                    table,
                    hpsn,
                }
            }
        })
    }
}

pub fn run(settings: &Settings, args: Args) -> anyhow::Result<()> {
    let file = JobFile::load(&args.job)?;
    let base = args.job.parent().unwrap_or(Path::new("."));
    let mut job = file.job.clone();
    if settings.seed_overridden {
        job.seed = settings.seed_for("generate");
    }
    if let Some(b) = &settings.backend_id {
        job.backend = b.clone();
    }
    job.validate()?;

    let encoder = settings.encoder()?;
    let backend = backend_by_id(&job.backend, encoder.handle().d_emb)?;
    let plan = file.plan(base, &encoder.handle().identifier)?;
    let combinations = plan.attributes()?.joint_size();

    let out = settings.out_or("out/run");
    let mut run = RunDirectory::open(&out)?;
    let before = run.rows().count();
    log::info!(
        "{}: {combinations} combination(s) x {} images, {} batch(es) of {} per combination",
        plan.method(),
        job.images_per_combination,
        job.images_per_combination.div_ceil(job.batch_size),
        job.batch_size
    );
    let records = generate(&job, &plan, &encoder, backend.as_ref(), &mut run)?;
    let produced = run.rows().count() - before;
    println!(
        "{} records ({} new, {} already present) in {}",
        records.len(),
        produced,
        records.len() - produced,
        out.display()
    );
    Ok(())
}
