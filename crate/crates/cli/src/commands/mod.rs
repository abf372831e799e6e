pub mod benchmark;
pub mod evaluate;
pub mod generate;
pub mod report;
pub mod synth;
pub mod train;
pub mod variant;

use std::path::{Path, PathBuf};

use inclusive_core::dataset::DatasetManifest;
use inclusive_core::{AttributeSet, Error};

/// Where reference images come from: a folder tree or a saved manifest.
#[derive(clap::Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct DataSource {
    /// Dataset root laid out as <attribute>/<category>/*.png
    #[arg(long)]
    pub data: Option<PathBuf>,

    /// Dataset manifest JSON
    #[arg(long)]
    pub manifest: Option<PathBuf>,
}

impl DataSource {
    pub fn load(&self, attr_set: &AttributeSet) -> anyhow::Result<DatasetManifest> {
        match (&self.data, &self.manifest) {
            (Some(root), _) => Ok(DatasetManifest::scan(root, attr_set)?),
            (None, Some(p)) => Ok(DatasetManifest::load(p)?),
            (None, None) => unreachable!("clap enforces one source"),
        }
    }
}

/// The named attributes of `attr_set`, in the given order. An empty list
/// selects everything.
pub fn subset(attr_set: &AttributeSet, names: &[String]) -> anyhow::Result<AttributeSet> {
    if names.is_empty() {
        return Ok(attr_set.clone());
    }
    let specs = names
        .iter()
        .map(|n| {
            attr_set
                .attribute_index(n)
                .map(|m| attr_set.attribute(m).clone())
                .ok_or_else(|| Error::Config(format!("schema has no attribute `{n}`")))
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(AttributeSet::new(specs)?)
}

pub fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
