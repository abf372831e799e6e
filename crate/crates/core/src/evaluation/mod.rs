//! Fairness and quality metrics.

pub mod classify;
pub mod distribution;
pub mod fid;
pub mod human;

use serde::{Deserialize, Serialize};

pub use classify::{
    classify, default_label_prompt, LabelClassifier, LabelPrompts, LabelRecord, LabelSource,
    DEFAULT_LABEL_TEMPLATE,
};
pub use distribution::{empirical_distribution, kl_to_uniform, marginal, EmpiricalDistribution};
pub use fid::{extract_all, fid, fit_gaussian, EncoderFeatures, FeatureExtractor, GaussianStats};
pub use human::{
    ingest_manual_labels, preference_tally, read_pairwise_choices, PairwiseChoice, PreferenceRate,
    PreferenceReport,
};

use crate::error::Result;
use crate::schema::AttributeSet;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DistributionEntry {
    pub attribute: String,
    pub counts: Vec<u64>,
    pub kl_nats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FidEntry {
    pub value: f64,
    pub extractor_id: String,
    pub generated_count: usize,
    pub reference_count: usize,
}

/// Everything `evaluate` reports for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method: String,
    pub schema_hash: String,
    pub label_source: LabelSource,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_prompts: Option<LabelPrompts>,
    pub sample_count: usize,
    /// Over the joint combination space.
    pub joint: DistributionEntry,
    pub marginals: Vec<DistributionEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<FidEntry>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl MetricReport {
    pub fn from_labels(
        method: impl Into<String>,
        attr_set: &AttributeSet,
        labels: &[LabelRecord],
        source: LabelSource,
    ) -> Result<Self> {
        let combos: Vec<_> = labels.iter().map(|l| l.combination.clone()).collect();
        let joint = empirical_distribution(&combos, attr_set)?;
        let mut marginals = Vec::new();
        for m in 0..attr_set.len() {
            let d = marginal(&combos, attr_set, m)?;
            marginals.push(DistributionEntry {
                attribute: attr_set.attribute(m).name.clone(),
                kl_nats: kl_to_uniform(&d)?,
                counts: d.counts,
            });
        }
        let names: Vec<&str> = attr_set
            .attributes()
            .iter()
            .map(|a| a.name.as_str())
            .collect();
        Ok(MetricReport {
            method: method.into(),
            schema_hash: attr_set.schema_hash(),
            label_source: source,
            label_prompts: None,
            sample_count: labels.len(),
            joint: DistributionEntry {
                attribute: names.join("x"),
                kl_nats: kl_to_uniform(&joint)?,
                counts: joint.counts,
            },
            marginals,
            fid: None,
            warnings: Vec::new(),
        })
    }

    pub fn with_label_prompts(mut self, prompts: LabelPrompts) -> Self {
        self.label_prompts = Some(prompts);
        self
    }

    /// Attaches an FID entry; warns when the two sides have different
    /// sample counts, since FID depends on the count.
    pub fn with_fid(
        mut self,
        generated: &GaussianStats,
        reference: &GaussianStats,
    ) -> Result<Self> {
        let value = fid(generated, reference)?;
        if generated.sample_count != reference.sample_count {
            self.warnings.push(format!(
                "FID compares {} generated against {} reference samples",
                generated.sample_count, reference.sample_count
            ));
        }
        if !reference.extractor_id.is_empty()
            && !generated.extractor_id.is_empty()
            && reference.extractor_id != generated.extractor_id
        {
            self.warnings.push(format!(
                "feature extractors differ: `{}` vs `{}`",
                generated.extractor_id, reference.extractor_id
            ));
        }
        self.fid = Some(FidEntry {
            value,
            extractor_id: generated.extractor_id.clone(),
            generated_count: generated.sample_count,
            reference_count: reference.sample_count,
        });
        Ok(self)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }
}
