//! On-disk feature cache.
//!
//! Layout: `<root>/<encoder_id>/<content_hash>.feat` holds the raw
//! little-endian `f64` feature; `<root>/<encoder_id>/index.tsv` lists
//! `hash<TAB>path<TAB>d_emb`. Keys are content hashes, so renaming or
//! re-ordering a dataset keeps its cache warm.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::JointEncoder;
use crate::error::{Error, Result};
use crate::reference::ReferenceSet;
use crate::vector::{from_le_bytes, to_le_bytes};

#[derive(Debug, Clone)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn open(root: &Path, encoder_id: &str) -> Result<Self> {
        let dir = root.join(encoder_id);
        std::fs::create_dir_all(&dir)?;
        Ok(FeatureCache { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn record_path(&self, hash: &str) -> PathBuf {
        self.dir.join(format!("{hash}.feat"))
    }

    pub fn get(&self, hash: &str, d_emb: usize) -> Option<Vec<f64>> {
        let bytes = std::fs::read(self.record_path(hash)).ok()?;
        from_le_bytes(&bytes).filter(|v| v.len() == d_emb)
    }

    /// Writes one record atomically (temp file + rename) and appends its
    /// index line.
    pub fn put(&self, hash: &str, source: &str, feature: &[f64]) -> Result<()> {
        let tmp = self
            .dir
            .join(format!("{hash}.feat.{}.tmp", std::process::id()));
        std::fs::write(&tmp, to_le_bytes(feature))?;
        std::fs::rename(&tmp, self.record_path(hash))?;
        let line = format!("{hash}\t{source}\t{}\n", feature.len());
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(self.dir.join("index.tsv"))?
            .write_all(line.as_bytes())?;
        Ok(())
    }

    pub fn len(&self) -> usize {
        std::fs::read_dir(&self.dir)
            .map(|rd| {
                rd.filter_map(|e| e.ok())
                    .filter(|e| e.path().extension().is_some_and(|x| x == "feat"))
                    .count()
            })
            .unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Fills in the feature of every record, reading from `cache` where possible
/// and writing newly computed features back. Unreadable images are collected
/// and reported together after every other record has been processed.
pub fn cache_reference_features<E: JointEncoder + ?Sized>(
    encoder: &E,
    mut reference_set: ReferenceSet,
    cache: Option<&FeatureCache>,
) -> Result<ReferenceSet> {
    let d_emb = encoder.handle().d_emb;
    let records: Vec<_> = reference_set
        .iter_mut()
        .filter(|r| r.feature.is_none())
        .collect();
    let failures: Vec<(PathBuf, String)> = records
        .into_par_iter()
        .filter_map(|record| {
            let outcome = (|| -> Result<Vec<f64>> {
                let hash = match cache {
                    Some(_) => Some(record.source.content_hash()?),
                    None => None,
                };
                if let (Some(c), Some(h)) = (cache, hash.as_deref()) {
                    if let Some(f) = c.get(h, d_emb) {
                        return Ok(f);
                    }
                }
                let f = encoder.encode_image(&record.source)?;
                if let (Some(c), Some(h)) = (cache, hash.as_deref()) {
                    c.put(h, &record.source.describe(), &f)?;
                }
                Ok(f)
            })();
            match outcome {
                Ok(f) => {
                    record.feature = Some(f);
                    None
                }
                Err(e) => Some((
                    record
                        .source
                        .path()
                        .map(Path::to_path_buf)
                        .unwrap_or_else(|| PathBuf::from(record.source.describe())),
                    e.to_string(),
                )),
            }
        })
        .collect();
    if !failures.is_empty() {
        let reason = failures
            .iter()
            .map(|(_, r)| r.as_str())
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::Ingestion {
            paths: failures.into_iter().map(|(p, _)| p).collect(),
            reason,
        });
    }
    Ok(reference_set)
}
