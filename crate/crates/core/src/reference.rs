//! Reference images grouped by (attribute, category).

use std::collections::BTreeMap;

use crate::encoders::ImageSource;
use crate::error::{Error, Result};
use crate::schema::AttributeSet;
use crate::vector::norm;

#[derive(Debug, Clone, PartialEq)]
pub struct ImageRecord {
    pub source: ImageSource,
    /// Cached unit-norm joint embedding.
    pub feature: Option<Vec<f64>>,
    /// Auxiliary labels (other attributes), e.g. `gender = "male"`.
    pub labels: BTreeMap<String, String>,
}

impl ImageRecord {
    pub fn new(source: ImageSource) -> Self {
        ImageRecord {
            source,
            feature: None,
            labels: BTreeMap::new(),
        }
    }

    pub fn with_feature(mut self, feature: Vec<f64>) -> Self {
        self.feature = Some(feature);
        self
    }
}

/// `records[m][i]` holds the reference images of category `i` of attribute `m`.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSet {
    names: Vec<(String, Vec<String>)>,
    records: Vec<Vec<Vec<ImageRecord>>>,
}

impl ReferenceSet {
    pub fn new(attr_set: &AttributeSet) -> Self {
        ReferenceSet {
            names: attr_set
                .attributes()
                .iter()
                .map(|a| {
                    (
                        a.name.clone(),
                        a.categories.iter().map(|c| c.name.clone()).collect(),
                    )
                })
                .collect(),
            records: attr_set
                .attributes()
                .iter()
                .map(|a| vec![Vec::new(); a.num_categories()])
                .collect(),
        }
    }

    pub fn push(&mut self, m: usize, i: usize, record: ImageRecord) {
        self.records[m][i].push(record);
    }

    pub fn records(&self, m: usize, i: usize) -> &[ImageRecord] {
        &self.records[m][i]
    }

    pub fn num_attributes(&self) -> usize {
        self.records.len()
    }

    pub fn num_categories(&self, m: usize) -> usize {
        self.records[m].len()
    }

    /// Image count of attribute `m` across its categories.
    pub fn attribute_len(&self, m: usize) -> usize {
        self.records[m].iter().map(Vec::len).sum()
    }

    pub fn len(&self) -> usize {
        (0..self.records.len()).map(|m| self.attribute_len(m)).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, &ImageRecord)> {
        self.records.iter().enumerate().flat_map(|(m, cats)| {
            cats.iter()
                .enumerate()
                .flat_map(move |(i, recs)| recs.iter().map(move |r| (m, i, r)))
        })
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ImageRecord> {
        self.records.iter_mut().flatten().flatten()
    }

    /// Every category of every attribute must have at least one image.
    pub fn check_nonempty(&self) -> Result<()> {
        for (m, cats) in self.records.iter().enumerate() {
            for (i, recs) in cats.iter().enumerate() {
                if recs.is_empty() {
                    return Err(Error::Precondition(format!(
                        "category `{}` of attribute `{}` has no reference images",
                        self.names[m].1[i], self.names[m].0
                    )));
                }
            }
        }
        Ok(())
    }

    /// Every record must carry a unit-norm feature.
    pub fn check_features(&self) -> Result<()> {
        for (m, i, r) in self.iter() {
            match &r.feature {
                None => {
                    return Err(Error::Precondition(format!(
                        "reference image {} ({}/{}) has no cached feature",
                        r.source.describe(),
                        self.names[m].0,
                        self.names[m].1[i]
                    )))
                }
                Some(f) if (norm(f) - 1.0).abs() > 1e-6 => {
                    return Err(Error::Validation(format!(
                        "cached feature of {} is not unit norm",
                        r.source.describe()
                    )))
                }
                Some(_) => {}
            }
        }
        Ok(())
    }

    /// Restriction to attribute `m`.
    pub fn single(&self, m: usize) -> ReferenceSet {
        ReferenceSet {
            names: vec![self.names[m].clone()],
            records: vec![self.records[m].clone()],
        }
    }

    pub fn category_name(&self, m: usize, i: usize) -> &str {
        &self.names[m].1[i]
    }

    pub fn attribute_name(&self, m: usize) -> &str {
        &self.names[m].0
    }
}
