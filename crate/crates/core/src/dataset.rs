//! Reference dataset manifests and bias-ablation variants.
//!
//! On disk a dataset is `<root>/<attribute>/<category>/<image>.png`, with an
//! optional `<root>/aux_labels.csv` (`path,<key>,...`, paths relative to the
//! root) carrying per-image auxiliary labels such as gender.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoders::{latent_png, ImageSource};
use crate::error::{Error, Result};
use crate::reference::{ImageRecord, ReferenceSet};
use crate::schema::AttributeSet;
use crate::seed::rng_for;
use crate::vector::normalized;

pub const AUX_LABEL_FILE: &str = "aux_labels.csv";

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ManifestImage {
    pub path: PathBuf,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub aux: BTreeMap<String, String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestCategory {
    pub name: String,
    pub images: Vec<ManifestImage>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestAttribute {
    pub name: String,
    pub categories: Vec<ManifestCategory>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub attributes: Vec<ManifestAttribute>,
    /// Variants applied so far, as `attribute:variant`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub variants: Vec<String>,
}

fn sorted_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    out.sort();
    Ok(out)
}

fn read_aux(root: &Path) -> Result<BTreeMap<PathBuf, BTreeMap<String, String>>> {
    let path = root.join(AUX_LABEL_FILE);
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let mut rdr = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(&path)
        .map_err(|e| Error::Ingestion {
            paths: vec![path.clone()],
            reason: e.to_string(),
        })?;
    let headers = rdr.headers()?.clone();
    if headers.get(0) != Some("path") {
        return Err(Error::Validation(format!(
            "{}: first column must be `path`",
            path.display()
        )));
    }
    for rec in rdr.records() {
        let rec = rec?;
        let labels = headers
            .iter()
            .zip(rec.iter())
            .skip(1)
            .filter(|(_, v)| !v.is_empty())
            .map(|(k, v)| (k.to_string(), v.to_string()))
            .collect();
        out.insert(PathBuf::from(&rec[0]), labels);
    }
    Ok(out)
}

impl DatasetManifest {
    /// Builds a manifest from the folder layout. Any mismatch against the
    /// schema is reported as one validation error listing every difference.
    pub fn scan(root: &Path, attr_set: &AttributeSet) -> Result<Self> {
        let aux = read_aux(root)?;
        let mut diff = Vec::new();
        let mut attributes = Vec::new();
        for a in attr_set.attributes() {
            let adir = root.join(&a.name);
            if !adir.is_dir() {
                diff.push(format!("missing attribute directory `{}`", a.name));
                continue;
            }
            let expected: BTreeSet<&str> = a.categories.iter().map(|c| c.name.as_str()).collect();
            let mut extra: Vec<String> = std::fs::read_dir(&adir)?
                .filter_map(|e| e.ok())
                .filter(|e| e.path().is_dir())
                .filter_map(|e| e.file_name().to_str().map(str::to_string))
                .filter(|n| !expected.contains(n.as_str()))
                .collect();
            extra.sort();
            for n in extra {
                diff.push(format!("unexpected category directory `{}/{n}`", a.name));
            }
            let mut categories = Vec::new();
            for c in &a.categories {
                let cdir = adir.join(&c.name);
                if !cdir.is_dir() {
                    diff.push(format!(
                        "missing category directory `{}/{}`",
                        a.name, c.name
                    ));
                    continue;
                }
                let images: Vec<ManifestImage> = sorted_pngs(&cdir)?
                    .into_iter()
                    .map(|p| {
                        let rel = p.strip_prefix(root).expect("under root").to_path_buf();
                        ManifestImage {
                            aux: aux.get(&rel).cloned().unwrap_or_default(),
                            path: rel,
                        }
                    })
                    .collect();
                if images.is_empty() {
                    diff.push(format!(
                        "category directory `{}/{}` holds no images",
                        a.name, c.name
                    ));
                }
                categories.push(ManifestCategory {
                    name: c.name.clone(),
                    images,
                });
            }
            attributes.push(ManifestAttribute {
                name: a.name.clone(),
                categories,
            });
        }
        if !diff.is_empty() {
            return Err(Error::Validation(format!(
                "dataset at {} does not match the schema:\n  {}",
                root.display(),
                diff.join("\n  ")
            )));
        }
        Ok(DatasetManifest {
            root: root.to_path_buf(),
            attributes,
            variants: Vec::new(),
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    /// Loads and checks that every listed file exists and no category lists
    /// a path twice.
    pub fn load(path: &Path) -> Result<Self> {
        let m: DatasetManifest = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let mut missing = Vec::new();
        for a in &self.attributes {
            for c in &a.categories {
                let mut seen = BTreeSet::new();
                for img in &c.images {
                    if !seen.insert(&img.path) {
                        return Err(Error::Validation(format!(
                            "`{}` listed twice under {}/{}",
                            img.path.display(),
                            a.name,
                            c.name
                        )));
                    }
                    let full = self.root.join(&img.path);
                    if !full.is_file() {
                        missing.push(full);
                    }
                }
            }
        }
        if !missing.is_empty() {
            return Err(Error::Ingestion {
                reason: format!("{} listed images do not exist", missing.len()),
                paths: missing,
            });
        }
        Ok(())
    }

    /// Differences between the manifest and a schema, one line each.
    pub fn schema_diff(&self, attr_set: &AttributeSet) -> Vec<String> {
        let mut diff = Vec::new();
        let have: BTreeMap<&str, &ManifestAttribute> = self
            .attributes
            .iter()
            .map(|a| (a.name.as_str(), a))
            .collect();
        for a in attr_set.attributes() {
            let Some(ma) = have.get(a.name.as_str()) else {
                diff.push(format!(
                    "schema attribute `{}` is not in the dataset",
                    a.name
                ));
                continue;
            };
            let mcats: BTreeMap<&str, &ManifestCategory> =
                ma.categories.iter().map(|c| (c.name.as_str(), c)).collect();
            for c in &a.categories {
                match mcats.get(c.name.as_str()) {
                    None => diff.push(format!(
                        "category `{}/{}` is not in the dataset",
                        a.name, c.name
                    )),
                    Some(mc) if mc.images.is_empty() => {
                        diff.push(format!("category `{}/{}` has no images", a.name, c.name))
                    }
                    Some(_) => {}
                }
            }
            for mc in &ma.categories {
                if a.category_index(&mc.name).is_none() {
                    diff.push(format!(
                        "dataset category `{}/{}` is not in the schema",
                        a.name, mc.name
                    ));
                }
            }
        }
        diff
    }

    /// Reference records in schema order. Fails with the schema diff when
    /// the two disagree.
    pub fn reference_set(&self, attr_set: &AttributeSet) -> Result<ReferenceSet> {
        let diff = self.schema_diff(attr_set);
        if !diff.is_empty() {
            return Err(Error::Validation(format!(
                "dataset does not match the schema:\n  {}",
                diff.join("\n  ")
            )));
        }
        let mut refs = ReferenceSet::new(attr_set);
        for (m, a) in attr_set.attributes().iter().enumerate() {
            let ma = self
                .attributes
                .iter()
                .find(|x| x.name == a.name)
                .expect("diff checked");
            for (i, c) in a.categories.iter().enumerate() {
                let mc = ma
                    .categories
                    .iter()
                    .find(|x| x.name == c.name)
                    .expect("diff checked");
                for img in &mc.images {
                    let mut rec = ImageRecord::new(ImageSource::File(self.root.join(&img.path)));
                    rec.labels = img.aux.clone();
                    refs.push(m, i, rec);
                }
            }
        }
        Ok(refs)
    }

    pub fn attribute(&self, name: &str) -> Option<&ManifestAttribute> {
        self.attributes.iter().find(|a| a.name == name)
    }

    /// Every `(attribute, category, path)` triple.
    pub fn entries(&self) -> BTreeSet<(String, String, PathBuf)> {
        self.attributes
            .iter()
            .flat_map(|a| {
                a.categories.iter().flat_map(move |c| {
                    c.images
                        .iter()
                        .map(move |i| (a.name.clone(), c.name.clone(), i.path.clone()))
                })
            })
            .collect()
    }
}

/// Keeps only images of `category` whose auxiliary label `key` is one of
/// `allowed`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryFilter {
    pub category: usize,
    pub key: String,
    pub allowed: BTreeSet<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VariantSpec {
    pub name: String,
    #[serde(default, rename = "filter")]
    pub filters: Vec<CategoryFilter>,
}

fn only(category: usize, value: &str) -> CategoryFilter {
    CategoryFilter {
        category,
        key: "gender".into(),
        allowed: [value.to_string()].into(),
    }
}

impl VariantSpec {
    pub const BUILTIN: [&'static str; 3] = ["original", "gender-biased", "male-only"];

    /// Built-in variants for a binary attribute whose category 0 is the
    /// negative one, using the `gender` auxiliary label.
    pub fn builtin(name: &str) -> Result<Self> {
        let filters = match name {
            "original" => vec![],
            "gender-biased" => vec![only(0, "female"), only(1, "male")],
            "male-only" => vec![only(0, "male"), only(1, "male")],
            other => {
                return Err(Error::Config(format!(
                    "unknown variant `{other}` (built-in: {})",
                    Self::BUILTIN.join(", ")
                )))
            }
        };
        Ok(VariantSpec {
            name: name.to_string(),
            filters,
        })
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }
}

/// Applies `spec` to the images of `attribute`, leaving other attributes
/// and all files untouched.
pub fn apply_variant(
    manifest: &DatasetManifest,
    attribute: &str,
    spec: &VariantSpec,
) -> Result<DatasetManifest> {
    let mut out = manifest.clone();
    let a = out
        .attributes
        .iter_mut()
        .find(|a| a.name == attribute)
        .ok_or_else(|| {
            Error::Validation(format!("attribute `{attribute}` is not in the dataset"))
        })?;
    let mut unlabeled = Vec::new();
    for f in &spec.filters {
        let count = a.categories.len();
        let c = a.categories.get_mut(f.category).ok_or_else(|| {
            Error::Validation(format!(
                "variant `{}` filters category {} but `{attribute}` has {}",
                spec.name, f.category, count
            ))
        })?;
        c.images.retain(|img| match img.aux.get(&f.key) {
            Some(v) => f.allowed.contains(v),
            None => {
                unlabeled.push(manifest.root.join(&img.path));
                false
            }
        });
    }
    if !unlabeled.is_empty() {
        return Err(Error::Precondition(format!(
            "variant `{}` needs auxiliary labels that {} images lack, e.g. {}",
            spec.name,
            unlabeled.len(),
            unlabeled[0].display()
        )));
    }
    if let Some(c) = a.categories.iter().find(|c| c.images.is_empty()) {
        return Err(Error::Precondition(format!(
            "variant `{}` leaves category `{attribute}/{}` empty",
            spec.name, c.name
        )));
    }
    out.variants.push(format!("{attribute}:{}", spec.name));
    Ok(out)
}

/// Settings for [`write_synthetic_dataset`].
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub seed: u64,
    pub dim: usize,
    pub per_category: usize,
    /// Auxiliary labels assigned round-robin: `(key, values)`.
    pub aux: Vec<(String, Vec<String>)>,
    /// Weight of the category direction in each image.
    pub signal: f64,
    /// Weight of each auxiliary value's direction.
    pub aux_signal: f64,
    pub noise: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            seed: 0,
            dim: 32,
            per_category: 20,
            aux: vec![("gender".into(), vec!["male".into(), "female".into()])],
            signal: 1.0,
            aux_signal: 0.5,
            noise: 0.1,
        }
    }
}

fn direction(seed: u64, label: &str, dim: usize) -> Vec<f64> {
    let mut rng = rng_for(seed, label);
    normalized(
        &(0..dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect::<Vec<_>>(),
    )
}

/// Writes latent-PNG images in the folder layout plus `aux_labels.csv`, and
/// returns the scanned manifest. Each image is the normalized sum of a
/// shared base direction, its category direction, its auxiliary label
/// directions and Gaussian noise.
pub fn write_synthetic_dataset(
    root: &Path,
    attr_set: &AttributeSet,
    spec: &SyntheticSpec,
) -> Result<DatasetManifest> {
    let base = direction(spec.seed, "synthetic/base", spec.dim);
    let mut aux_rows = Vec::new();
    for a in attr_set.attributes() {
        for (i, c) in a.categories.iter().enumerate() {
            let dir = direction(
                spec.seed,
                &format!("synthetic/{}/{}", a.name, c.name),
                spec.dim,
            );
            let mut rng = rng_for(spec.seed, &format!("synthetic/noise/{}/{}", a.name, c.name));
            for k in 0..spec.per_category {
                let mut v: Vec<f64> = base
                    .iter()
                    .zip(&dir)
                    .map(|(b, d)| b + spec.signal * d)
                    .collect();
                let mut labels = Vec::new();
                for (j, (key, values)) in spec.aux.iter().enumerate() {
                    let value = &values[(k + i + j) % values.len()];
                    let ad =
                        direction(spec.seed, &format!("synthetic/aux/{key}/{value}"), spec.dim);
                    for (x, d) in v.iter_mut().zip(&ad) {
                        *x += spec.aux_signal * d;
                    }
                    labels.push(value.clone());
                }
                for x in v.iter_mut() {
                    *x += spec.noise * rng.sample::<f64, _>(StandardNormal);
                }
                let rel = PathBuf::from(&a.name)
                    .join(&c.name)
                    .join(format!("{k:05}.png"));
                latent_png::write(&root.join(&rel), &normalized(&v))?;
                aux_rows.push((rel, labels));
            }
        }
    }
    if !spec.aux.is_empty() {
        let mut w = csv::Writer::from_path(root.join(AUX_LABEL_FILE))?;
        let mut header = vec!["path".to_string()];
        header.extend(spec.aux.iter().map(|(k, _)| k.clone()));
        w.write_record(&header)?;
        for (rel, labels) in aux_rows {
            let mut row = vec![rel.display().to_string()];
            row.extend(labels);
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    DatasetManifest::scan(root, attr_set)
}
