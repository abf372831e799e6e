//! Fair-token training.
//!
//! Each step draws, per attribute, a batch of reference features, encodes
//! every inclusive prompt of the joint combination space, and takes an Adam
//! step on the fair-token table. The directional loss drives the step when
//! the batch holds every category; otherwise the cosine loss takes over.
//! The semantic hinge is added in both cases.

mod adam;
pub mod loss;

use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use adam::Adam;
pub use loss::{
    cosine_fallback_loss, delta_image, delta_prompt, directional_loss, loss_and_token_gradient,
    semantic_loss, total_loss, total_loss_gradient, Batch, BatchItem, LossReport, LossSettings,
    PromptEmbeddings, SemanticReading,
};

use crate::encoders::DifferentiableTextEncoder;
use crate::error::{Error, Result};
use crate::reference::ReferenceSet;
use crate::schema::AttributeSet;
use crate::seed::rng_for;
use crate::tokens::FairTokenTable;
use crate::vector::norm;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepsPerEpoch {
    /// Run until the largest attribute is exhausted; smaller attributes
    /// contribute empty batches once they run out. Every image is visited
    /// exactly once per epoch.
    #[default]
    Longest,
    /// Stop when the smallest attribute is exhausted (tail images of larger
    /// attributes are skipped that epoch).
    Shortest,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Sampling {
    /// Interleave categories so each batch holds near-equal counts, when
    /// `batch_size >= K_m`; plain shuffling otherwise.
    #[default]
    Stratified,
    Shuffle,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum TrainingMode {
    /// One run over the full attribute set; prompts cover every combination.
    #[default]
    Joint,
    /// One run per attribute; tables are concatenated afterwards.
    PerAttribute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Images per attribute per step.
    pub batch_size: usize,
    pub learning_rate: f64,
    pub lambda_sem: f64,
    pub seed: u64,
    pub delta_normalization: bool,
    pub semantic_reading: SemanticReading,
    pub steps_per_epoch: StepsPerEpoch,
    pub sampling: Sampling,
    pub mode: TrainingMode,
    /// Fair-token init norm, relative to the mean base-token norm.
    pub init_scale: f64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            epochs: 30,
            batch_size: 8,
            learning_rate: 0.01,
            lambda_sem: 0.8,
            seed: 0,
            delta_normalization: true,
            semantic_reading: SemanticReading::MaxOverPrompts,
            steps_per_epoch: StepsPerEpoch::Longest,
            sampling: Sampling::Stratified,
            mode: TrainingMode::Joint,
            init_scale: 0.02,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs < 1 {
            return Err(Error::Validation("epochs must be >= 1".into()));
        }
        if self.batch_size < 2 {
            return Err(Error::Validation("batch_size must be >= 2".into()));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return Err(Error::Validation("learning_rate must be positive".into()));
        }
        if !(self.lambda_sem > 0.0 && self.lambda_sem <= 1.0) {
            return Err(Error::Validation(format!(
                "lambda_sem must lie in (0, 1], got {}",
                self.lambda_sem
            )));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(Error::Validation("init_scale must be positive".into()));
        }
        Ok(())
    }

    pub fn loss_settings(&self) -> LossSettings {
        LossSettings {
            lambda_sem: self.lambda_sem,
            delta_normalization: self.delta_normalization,
            semantic_reading: self.semantic_reading,
        }
    }

    pub fn config_hash(&self) -> String {
        let text = toml::to_string(self).expect("config serializes");
        crate::seed::content_hash(text.as_bytes())[..16].to_string()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub epoch: usize,
    pub step: usize,
    pub report: LossReport,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct LossTrace {
    pub rows: Vec<TraceRow>,
}

impl LossTrace {
    pub fn epochs(&self) -> usize {
        self.rows.iter().map(|r| r.epoch).max().unwrap_or(0)
    }

    /// Mean of the defined directional losses recorded in `epoch`.
    pub fn mean_dir(&self, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.epoch == epoch)
            .filter_map(|r| r.report.l_dir)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn mean_total(&self, epoch: usize) -> Option<f64> {
        let v: Vec<f64> = self
            .rows
            .iter()
            .filter(|r| r.epoch == epoch)
            .map(|r| r.report.l_total)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "epoch",
            "step",
            "l_dir",
            "l_cos",
            "l_sem",
            "l_total",
            "dir_defined",
        ])?;
        for r in &self.rows {
            out.write_record([
                r.epoch.to_string(),
                r.step.to_string(),
                r.report.l_dir.map(|d| d.to_string()).unwrap_or_default(),
                r.report.l_cos.to_string(),
                r.report.l_sem.to_string(),
                r.report.l_total.to_string(),
                r.report.dir_defined.to_string(),
            ])?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub table: FairTokenTable,
    pub trace: LossTrace,
    /// Text-encoder invocations per epoch, when the encoder counts them.
    pub text_encodings_per_epoch: Option<Vec<usize>>,
}

/// Per-epoch visiting order of one attribute's images, as (category, index).
fn epoch_order<R: Rng>(
    refs: &ReferenceSet,
    m: usize,
    config: &TrainingConfig,
    rng: &mut R,
) -> Vec<(usize, usize)> {
    let k = refs.num_categories(m);
    let mut per_cat: Vec<Vec<(usize, usize)>> = (0..k)
        .map(|i| (0..refs.records(m, i).len()).map(|r| (i, r)).collect())
        .collect();
    if config.sampling == Sampling::Stratified && config.batch_size >= k {
        for cat in per_cat.iter_mut() {
            cat.shuffle(rng);
        }
        let mut order = Vec::with_capacity(refs.attribute_len(m));
        let longest = per_cat.iter().map(Vec::len).max().unwrap_or(0);
        for r in 0..longest {
            for cat in &per_cat {
                if let Some(&x) = cat.get(r) {
                    order.push(x);
                }
            }
        }
        order
    } else {
        let mut order: Vec<(usize, usize)> = per_cat.into_iter().flatten().collect();
        order.shuffle(rng);
        order
    }
}

pub fn train<E: DifferentiableTextEncoder + ?Sized>(
    attr_set: &AttributeSet,
    refs: &ReferenceSet,
    prompt: &str,
    encoder: &E,
    config: &TrainingConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    match config.mode {
        TrainingMode::Joint => train_joint(attr_set, refs, prompt, encoder, config, "train"),
        TrainingMode::PerAttribute => {
            let mut tables = Vec::new();
            let mut trace = LossTrace::default();
            let mut per_epoch: Option<Vec<usize>> = None;
            for m in 0..attr_set.len() {
                let out = train_joint(
                    &attr_set.single(m),
                    &refs.single(m),
                    prompt,
                    encoder,
                    config,
                    &format!("train/attr{m}"),
                )?;
                tables.push(out.table);
                trace.rows.extend(out.trace.rows);
                if let Some(counts) = out.text_encodings_per_epoch {
                    let acc = per_epoch.get_or_insert_with(|| vec![0; counts.len()]);
                    acc.iter_mut().zip(counts).for_each(|(a, c)| *a += c);
                }
            }
            let mut table = FairTokenTable::concat(&tables)?;
            table.metadata.schema_hash = attr_set.schema_hash();
            Ok(TrainOutcome {
                table,
                trace,
                text_encodings_per_epoch: per_epoch,
            })
        }
    }
}

fn train_joint<E: DifferentiableTextEncoder + ?Sized>(
    attr_set: &AttributeSet,
    refs: &ReferenceSet,
    prompt: &str,
    encoder: &E,
    config: &TrainingConfig,
    seed_label: &str,
) -> Result<TrainOutcome> {
    if refs.num_attributes() != attr_set.len() {
        return Err(Error::Precondition(format!(
            "reference set covers {} attributes, schema has {}",
            refs.num_attributes(),
            attr_set.len()
        )));
    }
    refs.check_nonempty()?;
    refs.check_features()?;

    let handle = encoder.handle().clone();
    let base_tokens = encoder.tokenize(prompt)?;
    let len = base_tokens.len() + attr_set.total_fair_tokens();
    if len > handle.max_sequence_length {
        return Err(Error::SequenceLength {
            len,
            max: handle.max_sequence_length,
        });
    }
    let base_embedding = encoder.encode_text(&base_tokens)?;
    let typical_norm = base_tokens.iter().map(|t| norm(t)).sum::<f64>() / base_tokens.len() as f64;

    let mut rng = rng_for(config.seed, seed_label);
    let mut table = FairTokenTable::random_init(
        attr_set,
        handle.d_tok,
        config.init_scale * typical_norm,
        &mut rng,
    );
    table.metadata.prompt = prompt.to_string();
    table.metadata.encoder_id = handle.identifier.clone();
    table.metadata.config_hash = config.config_hash();
    table.metadata.schema_hash = attr_set.schema_hash();

    let settings = config.loss_settings();
    let mut adam = Adam::new(table.params().len(), config.learning_rate);
    let mut trace = LossTrace::default();
    let mut per_epoch = encoder
        .call_counts()
        .map(|_| Vec::with_capacity(config.epochs));
    let bs = config.batch_size;

    for epoch in 1..=config.epochs {
        let before = encoder.call_counts();
        let orders: Vec<Vec<(usize, usize)>> = (0..attr_set.len())
            .map(|m| epoch_order(refs, m, config, &mut rng))
            .collect();
        let chunks = orders.iter().map(|o| o.len().div_ceil(bs));
        let steps = match config.steps_per_epoch {
            StepsPerEpoch::Longest => chunks.max().unwrap_or(0),
            StepsPerEpoch::Shortest => chunks.min().unwrap_or(0),
        };
        for step in 0..steps {
            let mut batch = Batch::new(attr_set.len());
            for (m, order) in orders.iter().enumerate() {
                let lo = (step * bs).min(order.len());
                let hi = ((step + 1) * bs).min(order.len());
                for &(i, r) in &order[lo..hi] {
                    let f = refs.records(m, i)[r]
                        .feature
                        .clone()
                        .expect("features checked");
                    batch.push(m, i, f);
                }
            }
            let outcome = loss_and_token_gradient(
                &batch,
                &table,
                attr_set,
                &base_tokens,
                &base_embedding,
                encoder,
                &settings,
            );
            let (report, grad) = match outcome {
                Ok(ok) if ok.0.l_total.is_finite() => ok,
                Ok(_) | Err(Error::Numeric(_)) => {
                    return Err(Error::Numeric(format!(
                        "non-finite loss at epoch {epoch}, step {step}; batch composition: {}",
                        batch.composition(attr_set)
                    )))
                }
                Err(e) => return Err(e),
            };
            adam.step(table.params_mut(), &grad);
            trace.rows.push(TraceRow {
                epoch,
                step,
                report,
            });
        }
        if let (Some(acc), Some(b), Some(a)) = (per_epoch.as_mut(), before, encoder.call_counts()) {
            acc.push(a.text - b.text);
        }
    }
    if !table.is_finite() {
        return Err(Error::Numeric(
            "fair tokens diverged to non-finite values".into(),
        ));
    }
    Ok(TrainOutcome {
        table,
        trace,
        text_encodings_per_epoch: per_epoch,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoders::{ImageSource, JointEncoder, ToyEncoder, ToyEncoderSpec};
    use crate::reference::ImageRecord;

    fn toy_refs(attr_set: &AttributeSet, per_category: usize, d: usize) -> ReferenceSet {
        let mut refs = ReferenceSet::new(attr_set);
        for m in 0..attr_set.len() {
            for i in 0..attr_set.attribute(m).num_categories() {
                for k in 0..per_category {
                    let mut v = vec![0.05 * ((k % 3) as f64); d];
                    v[0] = 1.0;
                    v[1 + m] = if i == 0 { 0.5 } else { -0.5 };
                    let f = crate::vector::normalized(&v);
                    refs.push(
                        m,
                        i,
                        ImageRecord::new(ImageSource::Latent(v)).with_feature(f),
                    );
                }
            }
        }
        refs
    }

    #[test]
    fn zero_epochs_rejected() {
        let cfg = TrainingConfig {
            epochs: 0,
            ..Default::default()
        };
        assert!(matches!(cfg.validate(), Err(Error::Validation(_))));
        let cfg = TrainingConfig {
            lambda_sem: 1.5,
            ..Default::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn empty_category_is_named() {
        let s = AttributeSet::binary(1, 1).unwrap();
        let mut refs = ReferenceSet::new(&s);
        refs.push(
            0,
            0,
            ImageRecord::new(ImageSource::Latent(vec![1.0; 4])).with_feature(vec![0.5; 4]),
        );
        let enc = ToyEncoder::new(ToyEncoderSpec::new(0, 4, 4)).unwrap();
        match train(&s, &refs, "a person", &enc, &TrainingConfig::default()) {
            Err(Error::Precondition(msg)) => assert!(msg.contains("`pos`"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn each_epoch_visits_every_image_once() {
        let s = AttributeSet::new(vec![crate::schema::AttributeSpec::plain(
            "A",
            &["x", "y", "z"],
        )
        .unwrap()])
        .unwrap();
        let refs = toy_refs(&s, 7, 5);
        let cfg = TrainingConfig::default();
        let mut rng = rng_for(1, "t");
        let order = epoch_order(&refs, 0, &cfg, &mut rng);
        let mut sorted = order.clone();
        sorted.sort();
        let want: Vec<(usize, usize)> = (0..3).flat_map(|i| (0..7).map(move |r| (i, r))).collect();
        assert_eq!(sorted, want);
        // stratified: the first batch of 8 holds every category
        let first: std::collections::BTreeSet<usize> = order[..8].iter().map(|x| x.0).collect();
        assert_eq!(first.len(), 3);
    }

    #[test]
    fn same_seed_gives_identical_tables() {
        let s = AttributeSet::binary(2, 2).unwrap();
        let refs = toy_refs(&s, 6, 6);
        let enc = ToyEncoder::new(ToyEncoderSpec::new(5, 6, 6)).unwrap();
        let cfg = TrainingConfig {
            epochs: 3,
            batch_size: 4,
            seed: 11,
            ..Default::default()
        };
        let a = train(&s, &refs, "a headshot of a person", &enc, &cfg).unwrap();
        let b = train(&s, &refs, "a headshot of a person", &enc, &cfg).unwrap();
        assert_eq!(a.table.params(), b.table.params());
        assert_eq!(a.trace, b.trace);
        assert_eq!(a.trace.epochs(), 3);
        let other = train(
            &s,
            &refs,
            "a headshot of a person",
            &enc,
            &TrainingConfig { seed: 12, ..cfg },
        )
        .unwrap();
        assert_ne!(a.table.params(), other.table.params());
    }

    #[test]
    fn prompt_encodings_per_epoch_follow_joint_size() {
        let s = AttributeSet::binary(3, 1).unwrap();
        let refs = toy_refs(&s, 8, 6);
        let enc = ToyEncoder::new(ToyEncoderSpec::new(5, 6, 6)).unwrap();
        let cfg = TrainingConfig {
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let out = train(&s, &refs, "a person", &enc, &cfg).unwrap();
        // 16 images per attribute / batch 4 = 4 steps, 2^3 prompts per step
        assert_eq!(out.text_encodings_per_epoch, Some(vec![32, 32]));
        assert_eq!(enc.call_counts().unwrap().text, 1 + 64);
    }

    #[test]
    fn per_attribute_mode_concatenates_tables() {
        let s = AttributeSet::binary(2, 2).unwrap();
        let refs = toy_refs(&s, 4, 6);
        let enc = ToyEncoder::new(ToyEncoderSpec::new(5, 6, 6)).unwrap();
        let cfg = TrainingConfig {
            epochs: 2,
            batch_size: 4,
            mode: TrainingMode::PerAttribute,
            ..Default::default()
        };
        let out = train(&s, &refs, "a person", &enc, &cfg).unwrap();
        out.table.check_schema(&s).unwrap();
        // 2 attributes x 2 epochs x 2 steps
        assert_eq!(out.trace.rows.len(), 8);
    }

    #[test]
    fn trace_csv_has_one_row_per_step() {
        let s = AttributeSet::binary(1, 1).unwrap();
        let refs = toy_refs(&s, 4, 4);
        let enc = ToyEncoder::new(ToyEncoderSpec::new(5, 4, 4)).unwrap();
        let cfg = TrainingConfig {
            epochs: 2,
            batch_size: 4,
            ..Default::default()
        };
        let out = train(&s, &refs, "a person", &enc, &cfg).unwrap();
        let mut buf = Vec::new();
        out.trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            "epoch,step,l_dir,l_cos,l_sem,l_total,dir_defined"
        );
        assert_eq!(text.lines().count(), 1 + out.trace.rows.len());
        assert_eq!(enc.handle().d_tok, 4);
    }
}
