//! Zero-shot per-attribute classification with label prompts.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{ImageSource, JointEncoder};
use crate::error::{Error, Result};
use crate::schema::{AttributeSet, CategoryCombination, CategorySpec};
use crate::vector::dot;

pub const DEFAULT_LABEL_TEMPLATE: &str = "a headshot of a person with {}";

pub fn default_label_prompt(category: &CategorySpec) -> String {
    DEFAULT_LABEL_TEMPLATE.replace("{}", &category.name)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSource {
    Classifier,
    Manual,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelRecord {
    pub image: String,
    pub combination: CategoryCombination,
    pub source: LabelSource,
}

/// Label prompt texts, `[attribute][category] -> prompts`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelPrompts(pub Vec<Vec<Vec<String>>>);

impl LabelPrompts {
    /// Prompts as written in the schema; a category without any is an error.
    pub fn from_schema(attr_set: &AttributeSet) -> Result<Self> {
        let mut out = Vec::new();
        for a in attr_set.attributes() {
            let mut per = Vec::new();
            for c in &a.categories {
                if c.label_prompts.is_empty() {
                    return Err(Error::Schema(format!(
                        "category `{}` of attribute `{}` has no label prompt",
                        c.name, a.name
                    )));
                }
                per.push(c.label_prompts.clone());
            }
            out.push(per);
        }
        Ok(LabelPrompts(out))
    }

    /// Schema prompts, with the default template for categories without any.
    pub fn with_defaults(attr_set: &AttributeSet) -> Self {
        LabelPrompts(
            attr_set
                .attributes()
                .iter()
                .map(|a| {
                    a.categories
                        .iter()
                        .map(|c| {
                            if c.label_prompts.is_empty() {
                                vec![default_label_prompt(c)]
                            } else {
                                c.label_prompts.clone()
                            }
                        })
                        .collect()
                })
                .collect(),
        )
    }
}

/// Encoded label prompts, ready to classify features.
#[derive(Debug, Clone)]
pub struct LabelClassifier {
    prompts: LabelPrompts,
    embeddings: Vec<Vec<Vec<Vec<f64>>>>,
}

impl LabelClassifier {
    pub fn new<E: JointEncoder + ?Sized>(
        attr_set: &AttributeSet,
        prompts: LabelPrompts,
        encoder: &E,
    ) -> Result<Self> {
        if prompts.0.len() != attr_set.len() {
            return Err(Error::Schema(format!(
                "label prompts cover {} attributes, schema has {}",
                prompts.0.len(),
                attr_set.len()
            )));
        }
        let mut embeddings = Vec::new();
        for (a, per) in attr_set.attributes().iter().zip(&prompts.0) {
            if per.len() != a.categories.len() {
                return Err(Error::Schema(format!(
                    "label prompts for `{}` cover {} categories, schema has {}",
                    a.name,
                    per.len(),
                    a.categories.len()
                )));
            }
            let mut cats = Vec::new();
            for (c, texts) in a.categories.iter().zip(per) {
                if texts.is_empty() {
                    return Err(Error::Schema(format!(
                        "category `{}` of attribute `{}` has no label prompt",
                        c.name, a.name
                    )));
                }
                cats.push(
                    texts
                        .iter()
                        .map(|t| encoder.encode_prompt(t))
                        .collect::<Result<Vec<_>>>()?,
                );
            }
            embeddings.push(cats);
        }
        Ok(LabelClassifier {
            prompts,
            embeddings,
        })
    }

    pub fn prompts(&self) -> &LabelPrompts {
        &self.prompts
    }

    /// Per attribute, the category with the highest mean inner product
    /// between `feature` and its prompt embeddings. Ties go to the lowest
    /// category index.
    pub fn classify_feature(&self, feature: &[f64]) -> CategoryCombination {
        CategoryCombination(
            self.embeddings
                .iter()
                .map(|cats| {
                    let mut best = 0;
                    let mut best_score = f64::NEG_INFINITY;
                    for (i, prompts) in cats.iter().enumerate() {
                        let score = prompts.iter().map(|p| dot(feature, p)).sum::<f64>()
                            / prompts.len() as f64;
                        if score > best_score {
                            best = i;
                            best_score = score;
                        }
                    }
                    best
                })
                .collect(),
        )
    }

    pub fn classify<E: JointEncoder + ?Sized>(
        &self,
        image: &ImageSource,
        encoder: &E,
    ) -> Result<CategoryCombination> {
        Ok(self.classify_feature(&encoder.encode_image(image)?))
    }

    /// Classifies many images in parallel; results keep input order.
    pub fn classify_all<E: JointEncoder + ?Sized>(
        &self,
        images: &[ImageSource],
        encoder: &E,
    ) -> Result<Vec<CategoryCombination>> {
        images
            .par_iter()
            .map(|img| self.classify(img, encoder))
            .collect()
    }
}

/// One-shot classification using the schema's label prompts.
pub fn classify<E: JointEncoder + ?Sized>(
    image: &ImageSource,
    attr_set: &AttributeSet,
    prompts: LabelPrompts,
    encoder: &E,
) -> Result<CategoryCombination> {
    LabelClassifier::new(attr_set, prompts, encoder)?.classify(image, encoder)
}
