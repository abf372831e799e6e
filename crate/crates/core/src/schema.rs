//! Attribute schemas and the joint category-combination space.
//!
//! Attribute order is declaration order. It fixes both the order in which
//! fair tokens are concatenated onto a prompt and the mixed-radix order in
//! which combinations are enumerated (attribute 0 is the most significant
//! digit).

use std::collections::BTreeSet;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default number of learnable token slots per category.
pub const DEFAULT_TOKENS_PER_CATEGORY: usize = 3;

/// How a category is expressed in a hard (text-only) prompt.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phrase {
    /// Appended after the prompt, e.g. `"with eyeglasses"`.
    Append(String),
    /// Replaces the last word (the subject) of the prompt, e.g. `"woman"`.
    Subject(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategorySpec {
    pub name: String,
    /// Affirmative phrase used by hard prompt search.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phrase: Option<Phrase>,
    /// Text placed in the negative prompt when this category is selected
    /// under negative prompting (e.g. `"eyeglasses"` for the "without" category).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub negation: Option<String>,
    /// Texts used by the zero-shot classifier for this category.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub label_prompts: Vec<String>,
}

impl CategorySpec {
    pub fn named(name: impl Into<String>) -> Self {
        CategorySpec {
            name: name.into(),
            phrase: None,
            negation: None,
            label_prompts: Vec::new(),
        }
    }

    pub fn with_phrase(mut self, phrase: Phrase) -> Self {
        self.phrase = Some(phrase);
        self
    }

    pub fn with_negation(mut self, negation: impl Into<String>) -> Self {
        self.negation = Some(negation.into());
        self
    }

    pub fn with_label_prompts<I, S>(mut self, prompts: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.label_prompts = prompts.into_iter().map(Into::into).collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttributeSpec {
    pub name: String,
    pub categories: Vec<CategorySpec>,
    #[serde(default = "default_q")]
    pub tokens_per_category: usize,
}

fn default_q() -> usize {
    DEFAULT_TOKENS_PER_CATEGORY
}

impl AttributeSpec {
    pub fn new(name: impl Into<String>, categories: Vec<CategorySpec>) -> Result<Self> {
        let spec = AttributeSpec {
            name: name.into(),
            categories,
            tokens_per_category: DEFAULT_TOKENS_PER_CATEGORY,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Attribute whose categories carry no hard-prompt phrases.
    pub fn plain(name: impl Into<String>, categories: &[&str]) -> Result<Self> {
        Self::new(
            name,
            categories.iter().map(|c| CategorySpec::named(*c)).collect(),
        )
    }

    pub fn with_tokens_per_category(mut self, q: usize) -> Result<Self> {
        self.tokens_per_category = q;
        self.validate()?;
        Ok(self)
    }

    pub fn num_categories(&self) -> usize {
        self.categories.len()
    }

    pub fn category_index(&self, name: &str) -> Option<usize> {
        self.categories.iter().position(|c| c.name == name)
    }

    fn validate(&self) -> Result<()> {
        if self.name.trim().is_empty() {
            return Err(Error::Schema("attribute name is empty".into()));
        }
        if self.categories.len() < 2 {
            return Err(Error::Schema(format!(
                "attribute `{}` needs at least 2 categories, has {}",
                self.name,
                self.categories.len()
            )));
        }
        if self.tokens_per_category == 0 {
            return Err(Error::Schema(format!(
                "attribute `{}`: tokens_per_category must be >= 1",
                self.name
            )));
        }
        let mut seen = BTreeSet::new();
        for c in &self.categories {
            if !seen.insert(c.name.as_str()) {
                return Err(Error::Schema(format!(
                    "attribute `{}` lists category `{}` twice",
                    self.name, c.name
                )));
            }
        }
        Ok(())
    }
}

/// One chosen category index per attribute.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct CategoryCombination(pub Vec<usize>);

impl CategoryCombination {
    pub fn indices(&self) -> &[usize] {
        &self.0
    }

    pub fn category(&self, attribute: usize) -> usize {
        self.0[attribute]
    }

    /// Concatenation of two combinations (used for hybrid joint spaces).
    pub fn concat(&self, other: &CategoryCombination) -> CategoryCombination {
        let mut v = self.0.clone();
        v.extend_from_slice(&other.0);
        CategoryCombination(v)
    }
}

impl fmt::Display for CategoryCombination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "(")?;
        for (k, i) in self.0.iter().enumerate() {
            if k > 0 {
                write!(f, ",")?;
            }
            write!(f, "{i}")?;
        }
        write!(f, ")")
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SchemaFile {
    #[serde(default, rename = "attribute")]
    attributes: Vec<AttributeSpec>,
}

/// The ordered set of attributes under consideration.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "SchemaFile", into = "SchemaFile")]
pub struct AttributeSet {
    attributes: Vec<AttributeSpec>,
}

impl TryFrom<SchemaFile> for AttributeSet {
    type Error = Error;

    fn try_from(file: SchemaFile) -> Result<Self> {
        AttributeSet::new(file.attributes)
    }
}

impl From<AttributeSet> for SchemaFile {
    fn from(set: AttributeSet) -> Self {
        SchemaFile {
            attributes: set.attributes,
        }
    }
}

impl AttributeSet {
    pub fn new(attributes: Vec<AttributeSpec>) -> Result<Self> {
        let mut names = BTreeSet::new();
        for a in &attributes {
            a.validate()?;
            if !names.insert(a.name.as_str()) {
                return Err(Error::Schema(format!(
                    "attribute `{}` declared twice",
                    a.name
                )));
            }
        }
        Ok(AttributeSet { attributes })
    }

    pub fn empty() -> Self {
        AttributeSet {
            attributes: Vec::new(),
        }
    }

    /// Binary attributes named `attr0..attrN` with categories `neg`/`pos`.
    pub fn binary(n: usize, tokens_per_category: usize) -> Result<Self> {
        let attrs = (0..n)
            .map(|k| {
                AttributeSpec::plain(format!("attr{k}"), &["neg", "pos"])
                    .and_then(|a| a.with_tokens_per_category(tokens_per_category))
            })
            .collect::<Result<Vec<_>>>()?;
        AttributeSet::new(attrs)
    }

    pub fn from_toml_str(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Schema(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Schema(format!("{}: {e}", path.display())))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("attribute sets always serialize")
    }

    /// Short stable fingerprint of the schema, recorded in artifacts.
    pub fn schema_hash(&self) -> String {
        crate::seed::content_hash(self.to_toml_string().as_bytes())[..16].to_string()
    }

    pub fn attributes(&self) -> &[AttributeSpec] {
        &self.attributes
    }

    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attribute(&self, m: usize) -> &AttributeSpec {
        &self.attributes[m]
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn radices(&self) -> Vec<usize> {
        self.attributes.iter().map(|a| a.num_categories()).collect()
    }

    /// Size of the joint combination space, `prod K_m` (1 for no attributes).
    pub fn joint_size(&self) -> usize {
        self.attributes.iter().map(|a| a.num_categories()).product()
    }

    /// Total appended token count, `sum q_m`.
    pub fn total_fair_tokens(&self) -> usize {
        self.attributes.iter().map(|a| a.tokens_per_category).sum()
    }

    /// Concatenation of two disjoint attribute sets.
    pub fn concat(&self, other: &AttributeSet) -> Result<AttributeSet> {
        let mut attrs = self.attributes.clone();
        attrs.extend(other.attributes.iter().cloned());
        AttributeSet::new(attrs)
    }

    /// Restriction to a single attribute.
    pub fn single(&self, m: usize) -> AttributeSet {
        AttributeSet {
            attributes: vec![self.attributes[m].clone()],
        }
    }

    pub fn enumerate_combinations(&self) -> Vec<CategoryCombination> {
        (0..self.joint_size())
            .map(|k| self.combination_at(k).expect("index below joint size"))
            .collect()
    }

    /// Mixed-radix position of `combination` in [`Self::enumerate_combinations`].
    pub fn combination_index(&self, combination: &CategoryCombination) -> Result<usize> {
        self.check_combination(combination)?;
        Ok(combination
            .0
            .iter()
            .zip(&self.attributes)
            .fold(0usize, |acc, (&i, a)| acc * a.num_categories() + i))
    }

    pub fn combination_at(&self, index: usize) -> Result<CategoryCombination> {
        if index >= self.joint_size() {
            return Err(Error::Schema(format!(
                "combination index {index} out of range (joint size {})",
                self.joint_size()
            )));
        }
        let mut rest = index;
        let mut out = vec![0; self.attributes.len()];
        for (slot, a) in out.iter_mut().zip(&self.attributes).rev() {
            *slot = rest % a.num_categories();
            rest /= a.num_categories();
        }
        Ok(CategoryCombination(out))
    }

    pub fn check_combination(&self, combination: &CategoryCombination) -> Result<()> {
        if combination.0.len() != self.attributes.len() {
            return Err(Error::Schema(format!(
                "combination {combination} has {} entries, schema has {} attributes",
                combination.0.len(),
                self.attributes.len()
            )));
        }
        for (&i, a) in combination.0.iter().zip(&self.attributes) {
            if i >= a.num_categories() {
                return Err(Error::Schema(format!(
                    "category index {i} out of range for attribute `{}` ({} categories)",
                    a.name,
                    a.num_categories()
                )));
            }
        }
        Ok(())
    }

    /// Combination from per-attribute category names.
    pub fn combination_from_names(&self, names: &[&str]) -> Result<CategoryCombination> {
        if names.len() != self.attributes.len() {
            return Err(Error::Schema(format!(
                "expected {} category names, got {}",
                self.attributes.len(),
                names.len()
            )));
        }
        names
            .iter()
            .zip(&self.attributes)
            .map(|(n, a)| {
                a.category_index(n).ok_or_else(|| {
                    Error::Schema(format!("attribute `{}` has no category `{n}`", a.name))
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(CategoryCombination)
    }

    /// Indices of every combination that selects category `i` of attribute `m`.
    pub fn combinations_with(&self, m: usize, i: usize) -> Vec<usize> {
        self.enumerate_combinations()
            .iter()
            .enumerate()
            .filter(|(_, c)| c.0[m] == i)
            .map(|(k, _)| k)
            .collect()
    }
}
