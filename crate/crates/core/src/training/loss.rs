//! Directional alignment, cosine fallback and semantic consistency losses.
//!
//! The value functions here are written independently of the analytic
//! gradient in [`total_loss_gradient`], which lets finite differences of the
//! former check the latter.

use serde::{Deserialize, Serialize};

use crate::encoders::{DifferentiableTextEncoder, JointEncoder};
use crate::error::{Error, Result};
use crate::schema::AttributeSet;
use crate::tokens::{FairTokenTable, InclusivePrompt, TokenSeq};
use crate::vector::{axpy, dot, mean, norm, normalized, sub, ZERO_NORM};

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub feature: Vec<f64>,
    pub category: usize,
}

/// Per attribute, the (feature, category) pairs drawn for one step.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Batch {
    pub per_attribute: Vec<Vec<BatchItem>>,
}

impl Batch {
    pub fn new(num_attributes: usize) -> Self {
        Batch {
            per_attribute: vec![Vec::new(); num_attributes],
        }
    }

    pub fn push(&mut self, m: usize, category: usize, feature: Vec<f64>) {
        self.per_attribute[m].push(BatchItem { feature, category });
    }

    pub fn len(&self) -> usize {
        self.per_attribute.iter().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Sample count per category of every attribute.
    pub fn counts(&self, attr_set: &AttributeSet) -> Vec<Vec<usize>> {
        attr_set
            .attributes()
            .iter()
            .enumerate()
            .map(|(m, a)| {
                let mut c = vec![0; a.num_categories()];
                for item in &self.per_attribute[m] {
                    c[item.category] += 1;
                }
                c
            })
            .collect()
    }

    /// True when every category of every attribute has a sample, i.e. when
    /// every image direction needed by the directional loss exists.
    pub fn covers_all_categories(&self, attr_set: &AttributeSet) -> bool {
        self.counts(attr_set).iter().flatten().all(|&n| n > 0)
    }

    pub fn composition(&self, attr_set: &AttributeSet) -> String {
        attr_set
            .attributes()
            .iter()
            .zip(self.counts(attr_set))
            .map(|(a, counts)| {
                let cats: Vec<String> = a
                    .categories
                    .iter()
                    .zip(counts)
                    .map(|(c, n)| format!("{}={n}", c.name))
                    .collect();
                format!("{}[{}]", a.name, cats.join(" "))
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SemanticReading {
    /// One hinge per attribute pair: the largest hinge over all prompts of
    /// either category.
    #[default]
    MaxOverPrompts,
    /// One hinge per prompt, summed.
    SumOverPrompts,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossSettings {
    pub lambda_sem: f64,
    pub delta_normalization: bool,
    pub semantic_reading: SemanticReading,
}

impl Default for LossSettings {
    fn default() -> Self {
        LossSettings {
            lambda_sem: 0.8,
            delta_normalization: true,
            semantic_reading: SemanticReading::MaxOverPrompts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    /// `None` when the batch lacks some category.
    pub l_dir: Option<f64>,
    pub l_cos: f64,
    pub l_sem: f64,
    pub l_total: f64,
    pub dir_defined: bool,
}

/// Encoded inclusive prompts for every combination, plus the encoded base
/// prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct PromptEmbeddings {
    /// Indexed by combination index.
    pub embeddings: Vec<Vec<f64>>,
    pub base: Vec<f64>,
    /// `members[m][i]`: combinations selecting category `i` of attribute `m`.
    members: Vec<Vec<Vec<usize>>>,
}

impl PromptEmbeddings {
    pub fn from_embeddings(
        attr_set: &AttributeSet,
        embeddings: Vec<Vec<f64>>,
        base: Vec<f64>,
    ) -> Self {
        assert_eq!(embeddings.len(), attr_set.joint_size());
        let members = attr_set
            .attributes()
            .iter()
            .enumerate()
            .map(|(m, a)| {
                (0..a.num_categories())
                    .map(|i| attr_set.combinations_with(m, i))
                    .collect()
            })
            .collect();
        PromptEmbeddings {
            embeddings,
            base,
            members,
        }
    }

    /// Encodes every inclusive prompt `base_tokens ++ fair tokens(c)`.
    pub fn encode<E: JointEncoder + ?Sized>(
        attr_set: &AttributeSet,
        table: &FairTokenTable,
        base_tokens: &TokenSeq,
        base_embedding: &[f64],
        encoder: &E,
    ) -> Result<Self> {
        let max = encoder.handle().max_sequence_length;
        let embeddings = attr_set
            .enumerate_combinations()
            .iter()
            .map(|c| {
                let p = InclusivePrompt::assemble(base_tokens.clone(), table, c, max)?;
                encoder.encode_text(&p.assembled_tokens)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self::from_embeddings(
            attr_set,
            embeddings,
            base_embedding.to_vec(),
        ))
    }

    pub fn members(&self, m: usize, i: usize) -> &[usize] {
        &self.members[m][i]
    }

    fn mean_of(&self, m: usize, i: usize) -> Vec<f64> {
        let width = self.base.len();
        mean(
            self.members[m][i]
                .iter()
                .map(|&c| self.embeddings[c].as_slice()),
            width,
        )
        .expect("every category appears in some combination")
    }
}

fn maybe_normalized(v: Vec<f64>, normalize: bool) -> Vec<f64> {
    if normalize {
        normalized(&v)
    } else {
        v
    }
}

/// Mean image feature of category `i` minus that of `j` (attribute `m`).
/// `None` when either category is absent from the batch.
pub fn delta_image(
    batch: &Batch,
    m: usize,
    i: usize,
    j: usize,
    normalize: bool,
) -> Option<Vec<f64>> {
    let items = &batch.per_attribute[m];
    let width = items.first()?.feature.len();
    let mean_i = mean(
        items
            .iter()
            .filter(|b| b.category == i)
            .map(|b| b.feature.as_slice()),
        width,
    )?;
    let mean_j = mean(
        items
            .iter()
            .filter(|b| b.category == j)
            .map(|b| b.feature.as_slice()),
        width,
    )?;
    Some(maybe_normalized(sub(&mean_i, &mean_j), normalize))
}

/// Mean embedding of prompts with category `i` minus those with category `j`.
pub fn delta_prompt(
    prompts: &PromptEmbeddings,
    m: usize,
    i: usize,
    j: usize,
    normalize: bool,
) -> Vec<f64> {
    maybe_normalized(
        sub(&prompts.mean_of(m, i), &prompts.mean_of(m, j)),
        normalize,
    )
}

fn category_pairs(k: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..k).flat_map(move |i| (i + 1..k).map(move |j| (i, j)))
}

pub fn directional_loss(
    batch: &Batch,
    prompts: &PromptEmbeddings,
    attr_set: &AttributeSet,
    settings: &LossSettings,
) -> Option<f64> {
    let mut total = 0.0;
    for (m, a) in attr_set.attributes().iter().enumerate() {
        for (i, j) in category_pairs(a.num_categories()) {
            let di = delta_image(batch, m, i, j, settings.delta_normalization)?;
            let dp = delta_prompt(prompts, m, i, j, settings.delta_normalization);
            total += 1.0 - dot(&di, &dp);
        }
    }
    Some(total)
}

/// Mean over batch images of the mean over matching prompts of
/// `1 - <feature, prompt>`. Zero for an empty batch.
pub fn cosine_fallback_loss(batch: &Batch, prompts: &PromptEmbeddings) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (m, items) in batch.per_attribute.iter().enumerate() {
        for item in items {
            let members = prompts.members(m, item.category);
            let per_image: f64 = members
                .iter()
                .map(|&c| 1.0 - dot(&item.feature, &prompts.embeddings[c]))
                .sum::<f64>()
                / members.len() as f64;
            sum += per_image;
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        sum / n as f64
    }
}

pub fn semantic_loss(
    prompts: &PromptEmbeddings,
    attr_set: &AttributeSet,
    settings: &LossSettings,
) -> f64 {
    let hinge =
        |c: usize| (settings.lambda_sem - dot(&prompts.embeddings[c], &prompts.base)).max(0.0);
    let mut total = 0.0;
    for (m, a) in attr_set.attributes().iter().enumerate() {
        for (i, j) in category_pairs(a.num_categories()) {
            let candidates = prompts.members(m, i).iter().chain(prompts.members(m, j));
            total += match settings.semantic_reading {
                SemanticReading::MaxOverPrompts => {
                    candidates.map(|&c| hinge(c)).fold(0.0, f64::max)
                }
                SemanticReading::SumOverPrompts => candidates.map(|&c| hinge(c)).sum(),
            };
        }
    }
    total
}

pub fn total_loss(
    batch: &Batch,
    prompts: &PromptEmbeddings,
    attr_set: &AttributeSet,
    settings: &LossSettings,
) -> LossReport {
    let l_dir = directional_loss(batch, prompts, attr_set, settings);
    let l_cos = cosine_fallback_loss(batch, prompts);
    let l_sem = semantic_loss(prompts, attr_set, settings);
    let l_total = match l_dir {
        Some(d) => d + l_sem,
        None => l_cos + l_sem,
    };
    LossReport {
        l_dir,
        l_cos,
        l_sem,
        l_total,
        dir_defined: l_dir.is_some(),
    }
}

/// Gradient of `l_total` with respect to each prompt embedding (indexed by
/// combination).
pub fn total_loss_gradient(
    batch: &Batch,
    prompts: &PromptEmbeddings,
    attr_set: &AttributeSet,
    settings: &LossSettings,
) -> Vec<Vec<f64>> {
    let width = prompts.base.len();
    let mut grad = vec![vec![0.0; width]; prompts.embeddings.len()];

    if batch.covers_all_categories(attr_set) {
        for (m, a) in attr_set.attributes().iter().enumerate() {
            for (i, j) in category_pairs(a.num_categories()) {
                let di = delta_image(batch, m, i, j, settings.delta_normalization)
                    .expect("batch covers all categories");
                let raw = sub(&prompts.mean_of(m, i), &prompts.mean_of(m, j));
                // d(-<di, dp>)/d(raw)
                let g_raw: Vec<f64> = if settings.delta_normalization {
                    let n = norm(&raw);
                    if n < ZERO_NORM {
                        continue;
                    }
                    let dp: Vec<f64> = raw.iter().map(|x| x / n).collect();
                    let proj = dot(&dp, &di);
                    di.iter()
                        .zip(&dp)
                        .map(|(a, b)| -(a - b * proj) / n)
                        .collect()
                } else {
                    di.iter().map(|x| -x).collect()
                };
                let (pi, pj) = (prompts.members(m, i), prompts.members(m, j));
                for &c in pi {
                    axpy(1.0 / pi.len() as f64, &g_raw, &mut grad[c]);
                }
                for &c in pj {
                    axpy(-1.0 / pj.len() as f64, &g_raw, &mut grad[c]);
                }
            }
        }
    } else {
        let n = batch.len();
        if n > 0 {
            for (m, items) in batch.per_attribute.iter().enumerate() {
                for item in items {
                    let members = prompts.members(m, item.category);
                    let w = -1.0 / (n as f64 * members.len() as f64);
                    for &c in members {
                        axpy(w, &item.feature, &mut grad[c]);
                    }
                }
            }
        }
    }

    let hinge = |c: usize| settings.lambda_sem - dot(&prompts.embeddings[c], &prompts.base);
    for (m, a) in attr_set.attributes().iter().enumerate() {
        for (i, j) in category_pairs(a.num_categories()) {
            let candidates = prompts.members(m, i).iter().chain(prompts.members(m, j));
            match settings.semantic_reading {
                SemanticReading::MaxOverPrompts => {
                    let mut best: Option<(usize, f64)> = None;
                    for &c in candidates {
                        let h = hinge(c);
                        if best.is_none_or(|(_, b)| h > b) {
                            best = Some((c, h));
                        }
                    }
                    if let Some((c, h)) = best {
                        if h > 0.0 {
                            axpy(-1.0, &prompts.base, &mut grad[c]);
                        }
                    }
                }
                SemanticReading::SumOverPrompts => {
                    for &c in candidates {
                        if hinge(c) > 0.0 {
                            axpy(-1.0, &prompts.base, &mut grad[c]);
                        }
                    }
                }
            }
        }
    }
    grad
}

/// Loss and its gradient with respect to the flat fair-token parameters.
pub fn loss_and_token_gradient<E: DifferentiableTextEncoder + ?Sized>(
    batch: &Batch,
    table: &FairTokenTable,
    attr_set: &AttributeSet,
    base_tokens: &TokenSeq,
    base_embedding: &[f64],
    encoder: &E,
    settings: &LossSettings,
) -> Result<(LossReport, Vec<f64>)> {
    let prompts = PromptEmbeddings::encode(attr_set, table, base_tokens, base_embedding, encoder)?;
    let report = total_loss(batch, &prompts, attr_set, settings);
    let g_embed = total_loss_gradient(batch, &prompts, attr_set, settings);
    let d_tok = table.d_tok();
    let max = encoder.handle().max_sequence_length;
    let mut grad = vec![0.0; table.params().len()];
    for (c, combination) in attr_set.enumerate_combinations().iter().enumerate() {
        if g_embed[c].iter().all(|&g| g == 0.0) {
            continue;
        }
        let p = InclusivePrompt::assemble(base_tokens.clone(), table, combination, max)?;
        let g_tokens = encoder.encode_text_vjp(&p.assembled_tokens, &g_embed[c])?;
        let mut pos = base_tokens.len();
        for (m, &i) in combination.indices().iter().enumerate() {
            for k in 0..table.tokens_per_category(m) {
                let off = table.offset(m, i) + k * d_tok;
                axpy(1.0, &g_tokens[pos], &mut grad[off..off + d_tok]);
                pos += 1;
            }
        }
    }
    if !grad.iter().all(|g| g.is_finite()) {
        return Err(Error::Numeric("non-finite fair-token gradient".into()));
    }
    Ok((report, grad))
}
