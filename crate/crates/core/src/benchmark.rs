//! Training-cost benchmark over the number of binary attributes.

use std::io::{Read, Write};
use std::time::Instant;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::encoders::{ImageSource, JointEncoder, ToyEncoder, ToyEncoderSpec};
use crate::error::{Error, Result};
use crate::reference::{ImageRecord, ReferenceSet};
use crate::schema::AttributeSet;
use crate::seed::rng_for;
use crate::training::{train, TrainingConfig};
use crate::vector::normalized;

/// Largest attribute count run without `force`.
pub const MAX_N_UNFORCED: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BenchmarkConfig {
    pub max_n: usize,
    pub images_per_attribute: usize,
    pub repetitions: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub d_tok: usize,
    pub d_emb: usize,
    pub seed: u64,
    pub force: bool,
}

impl Default for BenchmarkConfig {
    fn default() -> Self {
        BenchmarkConfig {
            max_n: 5,
            images_per_attribute: 400,
            repetitions: 3,
            epochs: 1,
            batch_size: 8,
            d_tok: 64,
            d_emb: 64,
            seed: 0,
            force: false,
        }
    }
}

impl BenchmarkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_n == 0 {
            return Err(Error::Config("max_n must be at least 1".into()));
        }
        if self.max_n > MAX_N_UNFORCED && !self.force {
            return Err(Error::Config(format!(
                "max_n = {} exceeds {MAX_N_UNFORCED}; the cost doubles per attribute, pass --force to run anyway",
                self.max_n
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.images_per_attribute < 2 {
            return Err(Error::Config(
                "images_per_attribute must be at least 2".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkRow {
    pub n: usize,
    pub repetitions: usize,
    pub mean_seconds: f64,
    pub encoder_calls_per_epoch: usize,
    pub prompt_set_size: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogLinearFit {
    /// `ln(time) ~ intercept + slope * n`.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

impl LogLinearFit {
    pub fn predict(&self, n: f64) -> f64 {
        (self.intercept + self.slope * n).exp()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub rows: Vec<BenchmarkRow>,
    pub fit: Option<LogLinearFit>,
}

/// Ordinary least squares of `ln(y)` on `x`. Needs two distinct `x` and
/// positive `y`.
pub fn fit_log_linear(points: &[(f64, f64)]) -> Option<LogLinearFit> {
    if points.len() < 2 || points.iter().any(|&(_, y)| y.is_nan() || y <= 0.0) {
        return None;
    }
    let n = points.len() as f64;
    let xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    let ys: Vec<f64> = points.iter().map(|p| p.1.ln()).collect();
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if sxx == 0.0 {
        return None;
    }
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = ys.iter().map(|y| (y - my) * (y - my)).sum();
    let ss_res: f64 = xs
        .iter()
        .zip(&ys)
        .map(|(x, y)| {
            let r = y - (intercept + slope * x);
            r * r
        })
        .sum();
    let r_squared = if ss_tot == 0.0 {
        1.0
    } else {
        1.0 - ss_res / ss_tot
    };
    Some(LogLinearFit {
        slope,
        intercept,
        r_squared,
    })
}

/// Synthetic reference features for `n` binary attributes: per attribute,
/// half the images lean one way along a seeded direction, half the other.
pub fn synthetic_references(
    attr_set: &AttributeSet,
    per_attribute: usize,
    d_emb: usize,
    seed: u64,
) -> ReferenceSet {
    let mut refs = ReferenceSet::new(attr_set);
    for (m, a) in attr_set.attributes().iter().enumerate() {
        let k = a.categories.len();
        let mut rng = rng_for(seed, &format!("benchmark/refs/{m}"));
        let dirs: Vec<Vec<f64>> = (0..k)
            .map(|_| {
                (0..d_emb)
                    .map(|_| rng.sample::<f64, _>(StandardNormal))
                    .collect()
            })
            .collect();
        for r in 0..per_attribute {
            let i = r % k;
            let v: Vec<f64> = dirs[i]
                .iter()
                .map(|x| x + 0.3 * rng.sample::<f64, _>(StandardNormal))
                .collect();
            let f = normalized(&v);
            refs.push(
                m,
                i,
                ImageRecord::new(ImageSource::Latent(f.clone())).with_feature(f),
            );
        }
    }
    refs
}

/// Trains with `n = 1..=max_n` binary attributes and records wall time and
/// text-encoder calls per epoch.
pub fn run_benchmark(config: &BenchmarkConfig) -> Result<BenchmarkReport> {
    config.validate()?;
    let prompt = "a headshot of a person";
    let mut rows = Vec::new();
    for n in 1..=config.max_n {
        let attr_set = AttributeSet::binary(n, 3)?;
        let refs = synthetic_references(
            &attr_set,
            config.images_per_attribute,
            config.d_emb,
            config.seed,
        );
        let train_config = TrainingConfig {
            epochs: config.epochs,
            batch_size: config.batch_size,
            seed: config.seed,
            ..TrainingConfig::default()
        };
        let mut total = 0.0;
        let mut calls = None;
        for _ in 0..config.repetitions {
            let encoder =
                ToyEncoder::new(ToyEncoderSpec::new(config.seed, config.d_tok, config.d_emb))?;
            let start = Instant::now();
            let out = train(&attr_set, &refs, prompt, &encoder, &train_config)?;
            total += start.elapsed().as_secs_f64();
            let per_epoch = out
                .text_encodings_per_epoch
                .and_then(|v| v.first().copied())
                .ok_or_else(|| {
                    Error::Precondition("benchmark encoder does not count calls".into())
                })?;
            debug_assert!(encoder.call_counts().is_some());
            calls = Some(per_epoch);
        }
        rows.push(BenchmarkRow {
            n,
            repetitions: config.repetitions,
            mean_seconds: total / config.repetitions as f64,
            encoder_calls_per_epoch: calls.unwrap_or(0),
            prompt_set_size: attr_set.joint_size(),
        });
    }
    let fit = fit_log_linear(
        &rows
            .iter()
            .map(|r| (r.n as f64, r.mean_seconds))
            .collect::<Vec<_>>(),
    );
    Ok(BenchmarkReport { rows, fit })
}

impl BenchmarkReport {
    pub fn from_rows(rows: Vec<BenchmarkRow>) -> Self {
        let fit = fit_log_linear(
            &rows
                .iter()
                .map(|r| (r.n as f64, r.mean_seconds))
                .collect::<Vec<_>>(),
        );
        BenchmarkReport { rows, fit }
    }

    /// Columns `n,repetitions,mean_seconds,encoder_calls_per_epoch,prompt_set_size`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(w);
        for r in &self.rows {
            w.serialize(r)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(r);
        let rows = rdr
            .deserialize()
            .collect::<std::result::Result<Vec<BenchmarkRow>, _>>()?;
        Ok(Self::from_rows(rows))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fit_recovers_exponential() {
        let pts: Vec<_> = (1..=5)
            .map(|n| (n as f64, 0.5 * (0.7 * n as f64).exp()))
            .collect();
        let f = fit_log_linear(&pts).unwrap();
        assert!((f.slope - 0.7).abs() < 1e-12);
        assert!((f.intercept - 0.5f64.ln()).abs() < 1e-12);
        assert!((f.r_squared - 1.0).abs() < 1e-12);
        assert!(fit_log_linear(&[(1.0, 1.0)]).is_none());
        assert!(fit_log_linear(&[(1.0, 1.0), (2.0, 0.0)]).is_none());
    }

    #[test]
    fn cost_guard() {
        let c = BenchmarkConfig {
            max_n: 9,
            ..Default::default()
        };
        assert!(matches!(c.validate(), Err(Error::Config(_))));
        assert!(BenchmarkConfig { force: true, ..c }.validate().is_ok());
    }

    #[test]
    fn small_run_doubles_calls() {
        let c = BenchmarkConfig {
            max_n: 3,
            images_per_attribute: 16,
            repetitions: 1,
            d_tok: 8,
            d_emb: 8,
            ..Default::default()
        };
        let r = run_benchmark(&c).unwrap();
        let calls: Vec<_> = r.rows.iter().map(|r| r.encoder_calls_per_epoch).collect();
        // 16 images per attribute in batches of 8: two steps per epoch
        assert_eq!(calls, vec![4, 8, 16]);
        assert_eq!(r.rows[2].prompt_set_size, 8);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let back = BenchmarkReport::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back.rows, r.rows);
    }
}
