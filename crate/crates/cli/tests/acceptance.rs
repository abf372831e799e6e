//! Acceptance checks, one test per criterion. Each prints a single
//! `criterion N: PASS|FAIL ...` line (visible with `--nocapture`) and
//! asserts at the stated tolerance. Values are checked against oracles
//! written here, independently of the library code under test.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use inclusive_core::benchmark::{run_benchmark, BenchmarkConfig};
use inclusive_core::encoders::{latent_png, ImageSource, JointEncoder, ToyEncoder, ToyEncoderSpec};
use inclusive_core::evaluation::{
    empirical_distribution, fid, kl_to_uniform, EmpiricalDistribution, GaussianStats,
    LabelClassifier, LabelPrompts,
};
use inclusive_core::generation::{
    backend_by_id, generate, guided_step, Conditioning, DiffusionBackend, GenerationJob,
    MemorySink, PromptPlan, StubBackend,
};
use inclusive_core::reference::{ImageRecord, ReferenceSet};
use inclusive_core::training::{
    loss_and_token_gradient, total_loss, train, Batch, LossSettings, PromptEmbeddings,
    SemanticReading, TrainingConfig,
};
use inclusive_core::{AttributeSet, AttributeSpec, CategorySpec, FairTokenTable, TokenSeq};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn verdict(n: usize, ok: bool, detail: String) {
    println!(
        "criterion {n}: {} {detail}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {n}: {detail}");
}

fn unit(v: &[f64]) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.iter().map(|x| x / n).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

// ---- 1. KL ----------------------------------------------------------------

fn kl_oracle(counts: &[u64]) -> f64 {
    let n: u64 = counts.iter().sum();
    let k = counts.len() as f64;
    counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n as f64;
            p * (p * k).ln()
        })
        .sum()
}

#[test]
#[allow(clippy::approx_constant)] // targets are the six-decimal reference values
fn criterion_1_kl_oracle() {
    let start = Instant::now();
    let cases: [(&[u64], f64, f64); 4] = [
        (&[25, 25, 25, 25], 0.0, 1e-12),
        (&[104, 0], 0.693147, 1e-6),
        (&[0, 52], 0.693147, 1e-6),
        (&[75, 25], 0.130812, 1e-6),
    ];
    let mut worst: f64 = 0.0;
    for (counts, want, tol) in cases {
        let got = kl_to_uniform(&EmpiricalDistribution::from_counts(counts.to_vec())).unwrap();
        let err = (got - want).abs().max((got - kl_oracle(counts)).abs());
        assert!(err <= tol, "{counts:?}: {got} vs {want}");
        worst = worst.max(err);
    }
    let elapsed = start.elapsed();
    verdict(
        1,
        elapsed < Duration::from_secs(1),
        format!("max error {worst:.1e}, {elapsed:.2?}"),
    );
}

// ---- 2. FID ---------------------------------------------------------------

fn random_spd(rng: &mut ChaCha8Rng, d: usize) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(d, d) * 0.05
}

/// Trace of the root of `A B` from the complex eigenvalues of the
/// non-symmetric product.
fn fid_oracle(ma: &[f64], sa: &DMatrix<f64>, mb: &[f64], sb: &DMatrix<f64>) -> f64 {
    let mean: f64 = ma.iter().zip(mb).map(|(a, b)| (a - b) * (a - b)).sum();
    let cross: f64 = (sa * sb)
        .complex_eigenvalues()
        .iter()
        .map(|l| l.sqrt().re)
        .sum();
    mean + sa.trace() + sb.trace() - 2.0 * cross
}

#[test]
fn criterion_2_fid_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let a = GaussianStats::from_parts(vec![0.3, -1.0, 2.0, 0.0], &random_spd(&mut rng, 4), 100);
    let identical = fid(&a, &a).unwrap();
    assert!(identical.abs() < 1e-6, "identical stats gave {identical}");

    let s0 = GaussianStats::from_parts(vec![0.0], &DMatrix::from_element(1, 1, 1.0), 100);
    let s1 = GaussianStats::from_parts(vec![1.0], &DMatrix::from_element(1, 1, 1.0), 100);
    let scalar = fid(&s0, &s1).unwrap();
    assert!((scalar - 1.0).abs() < 1e-9, "1-D closed form gave {scalar}");

    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let ma: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mb: Vec<f64> = (0..4).map(|_| rng.random_range(-1.0..1.0)).collect();
        let (sa, sb) = (random_spd(&mut rng, 4), random_spd(&mut rng, 4));
        let got = fid(
            &GaussianStats::from_parts(ma.clone(), &sa, 100),
            &GaussianStats::from_parts(mb.clone(), &sb, 100),
        )
        .unwrap();
        let want = fid_oracle(&ma, &sa, &mb, &sb);
        worst = worst.max((got - want).abs() / want.abs().max(1e-12));
    }
    let elapsed = start.elapsed();
    verdict(
        2,
        worst < 1e-6 && elapsed < Duration::from_secs(5),
        format!("identical {identical:.1e}, 1-D {scalar}, worst relative error over 100 SPD pairs {worst:.1e}, {elapsed:.2?}"),
    );
}

// ---- 3. gradients ---------------------------------------------------------

/// Every combination of `radices`, as category indices.
fn combinations(radices: &[usize]) -> Vec<Vec<usize>> {
    let mut out = vec![vec![]];
    for &k in radices {
        out = out
            .into_iter()
            .flat_map(|c| {
                (0..k).map(move |i| {
                    let mut c = c.clone();
                    c.push(i);
                    c
                })
            })
            .collect();
    }
    out
}

fn mean_of<'a>(vs: impl Iterator<Item = &'a Vec<f64>>) -> Vec<f64> {
    let vs: Vec<&Vec<f64>> = vs.collect();
    let mut m = vec![0.0; vs[0].len()];
    for v in &vs {
        for (a, b) in m.iter_mut().zip(v.iter()) {
            *a += b;
        }
    }
    m.iter().map(|x| x / vs.len() as f64).collect()
}

/// Full training loss written from the definitions: directional term when
/// every category of every attribute is in the batch, else the cosine
/// fallback; plus the semantic hinge.
fn loss_oracle(
    radices: &[usize],
    table: &FairTokenTable,
    base_tokens: &TokenSeq,
    encoder: &ToyEncoder,
    batch: &[Vec<(usize, Vec<f64>)>],
    settings: &LossSettings,
) -> f64 {
    let combos = combinations(radices);
    let emb: Vec<Vec<f64>> = combos
        .iter()
        .map(|c| {
            let mut toks = base_tokens.clone();
            for (m, &i) in c.iter().enumerate() {
                toks.extend(table.tokens(m, i).map(|t| t.to_vec()));
            }
            encoder.encode_text(&toks).unwrap()
        })
        .collect();
    let base = encoder.encode_text(base_tokens).unwrap();
    let norm_if = |v: Vec<f64>| {
        if settings.delta_normalization {
            unit(&v)
        } else {
            v
        }
    };
    let covered = radices
        .iter()
        .enumerate()
        .all(|(m, &k)| (0..k).all(|i| batch[m].iter().any(|(c, _)| *c == i)));

    let mut loss = 0.0;
    if covered {
        for (m, &k) in radices.iter().enumerate() {
            for i in 0..k {
                for j in i + 1..k {
                    let fi = mean_of(batch[m].iter().filter(|b| b.0 == i).map(|b| &b.1));
                    let fj = mean_of(batch[m].iter().filter(|b| b.0 == j).map(|b| &b.1));
                    let pi = mean_of(
                        combos
                            .iter()
                            .zip(&emb)
                            .filter(|(c, _)| c[m] == i)
                            .map(|(_, e)| e),
                    );
                    let pj = mean_of(
                        combos
                            .iter()
                            .zip(&emb)
                            .filter(|(c, _)| c[m] == j)
                            .map(|(_, e)| e),
                    );
                    let di = norm_if(fi.iter().zip(&fj).map(|(a, b)| a - b).collect());
                    let dp = norm_if(pi.iter().zip(&pj).map(|(a, b)| a - b).collect());
                    loss += 1.0 - dot(&di, &dp);
                }
            }
        }
    } else {
        let mut per_image = Vec::new();
        for (m, items) in batch.iter().enumerate() {
            for (i, f) in items {
                let terms: Vec<f64> = combos
                    .iter()
                    .zip(&emb)
                    .filter(|(c, _)| c[m] == *i)
                    .map(|(_, e)| 1.0 - dot(f, e))
                    .collect();
                per_image.push(terms.iter().sum::<f64>() / terms.len() as f64);
            }
        }
        loss += per_image.iter().sum::<f64>() / per_image.len() as f64;
    }
    for (m, &k) in radices.iter().enumerate() {
        for i in 0..k {
            for j in i + 1..k {
                let hinges = combos
                    .iter()
                    .zip(&emb)
                    .filter(|(c, _)| c[m] == i || c[m] == j)
                    .map(|(_, e)| (settings.lambda_sem - dot(e, &base)).max(0.0));
                loss += match settings.semantic_reading {
                    SemanticReading::MaxOverPrompts => hinges.fold(0.0, f64::max),
                    SemanticReading::SumOverPrompts => hinges.sum(),
                };
            }
        }
    }
    loss
}

fn schema(radices: &[usize], q: usize) -> AttributeSet {
    AttributeSet::new(
        radices
            .iter()
            .enumerate()
            .map(|(m, &k)| {
                let cats: Vec<String> = (0..k).map(|i| format!("c{i}")).collect();
                let cats: Vec<&str> = cats.iter().map(String::as_str).collect();
                AttributeSpec::plain(format!("a{m}"), &cats)
                    .and_then(|a| a.with_tokens_per_category(q))
                    .unwrap()
            })
            .collect(),
    )
    .unwrap()
}

struct GradCase {
    worst: f64,
    dir_defined: bool,
    loss_err: f64,
}

fn gradient_case(seed: u64, radices: &[usize], full: bool, settings: &LossSettings) -> GradCase {
    let (d_tok, d_emb, q) = (6, 5, 2);
    let attr_set = schema(radices, q);
    let encoder = ToyEncoder::new(ToyEncoderSpec::new(seed, d_tok, d_emb)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut table = FairTokenTable::random_init(&attr_set, d_tok, 0.5, &mut rng);
    let base_tokens = encoder.tokenize("a photo of a person").unwrap();
    let base_embedding = encoder.encode_text(&base_tokens).unwrap();

    // every category twice; the fallback batch drops the last category of
    // the last attribute
    let mut raw: Vec<Vec<(usize, Vec<f64>)>> = Vec::new();
    for (m, &k) in radices.iter().enumerate() {
        let mut items = Vec::new();
        for i in 0..k {
            if !full && m + 1 == radices.len() && i + 1 == k {
                continue;
            }
            for _ in 0..2 {
                let v: Vec<f64> = (0..d_emb).map(|_| rng.random_range(-1.0..1.0)).collect();
                items.push((i, unit(&v)));
            }
        }
        raw.push(items);
    }
    let mut batch = Batch::new(radices.len());
    for (m, items) in raw.iter().enumerate() {
        for (i, f) in items {
            batch.push(m, *i, f.clone());
        }
    }

    let (report, grad) = loss_and_token_gradient(
        &batch,
        &table,
        &attr_set,
        &base_tokens,
        &base_embedding,
        &encoder,
        settings,
    )
    .unwrap();
    let oracle =
        |t: &FairTokenTable| loss_oracle(radices, t, &base_tokens, &encoder, &raw, settings);
    let loss_err = (report.l_total - oracle(&table)).abs();

    let h = 1e-6;
    let mut worst: f64 = 0.0;
    for (p, &g) in grad.iter().enumerate() {
        let orig = table.params()[p];
        table.params_mut()[p] = orig + h;
        let up = oracle(&table);
        table.params_mut()[p] = orig - h;
        let down = oracle(&table);
        table.params_mut()[p] = orig;
        let fd = (up - down) / (2.0 * h);
        let scale = g.abs().max(fd.abs()).max(1e-3);
        worst = worst.max((g - fd).abs() / scale);
    }
    GradCase {
        worst,
        dir_defined: report.dir_defined,
        loss_err,
    }
}

#[test]
fn criterion_3_gradient_finite_differences() {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut worst_loss: f64 = 0.0;
    let mut cases = 0;
    for seed in 0..5u64 {
        for radices in [&[2][..], &[3], &[2, 2], &[2, 3], &[3, 3]] {
            for full in [true, false] {
                for reading in [
                    SemanticReading::MaxOverPrompts,
                    SemanticReading::SumOverPrompts,
                ] {
                    for delta_normalization in [true, false] {
                        let settings = LossSettings {
                            lambda_sem: 0.8,
                            delta_normalization,
                            semantic_reading: reading,
                        };
                        let c = gradient_case(seed, radices, full, &settings);
                        assert_eq!(c.dir_defined, full);
                        assert!(
                            c.worst < 1e-4,
                            "seed {seed} K {radices:?} full {full} {reading:?} norm {delta_normalization}: {:.2e}",
                            c.worst
                        );
                        worst = worst.max(c.worst);
                        worst_loss = worst_loss.max(c.loss_err);
                        cases += 1;
                    }
                }
            }
        }
    }
    let elapsed = start.elapsed();
    verdict(
        3,
        worst < 1e-4 && worst_loss < 1e-12 && elapsed < Duration::from_secs(30),
        format!("{cases} cases, worst relative error {worst:.1e}, loss value error {worst_loss:.1e}, {elapsed:.2?}"),
    );
}

// ---- 4. fallback gating ---------------------------------------------------

#[test]
fn criterion_4_fallback_gating() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let settings = LossSettings::default();
    let mut mismatches = 0;
    let mut fallbacks = 0;
    for _ in 0..1000 {
        let radices: Vec<usize> = (0..rng.random_range(1..=3))
            .map(|_| rng.random_range(2..=4))
            .collect();
        let attr_set = schema(&radices, 1);
        let d = 4;
        let emb: Vec<Vec<f64>> = (0..attr_set.joint_size())
            .map(|_| {
                unit(
                    &(0..d)
                        .map(|_| rng.random_range(-1.0..1.0))
                        .collect::<Vec<_>>(),
                )
            })
            .collect();
        let prompts =
            PromptEmbeddings::from_embeddings(&attr_set, emb, unit(&[1.0, 0.0, 0.0, 0.0]));
        let mut batch = Batch::new(radices.len());
        let mut seen = BTreeSet::new();
        for (m, &k) in radices.iter().enumerate() {
            for _ in 0..rng.random_range(1..=8) {
                let i = rng.random_range(0..k);
                seen.insert((m, i));
                batch.push(
                    m,
                    i,
                    unit(
                        &(0..d)
                            .map(|_| rng.random_range(-1.0..1.0))
                            .collect::<Vec<_>>(),
                    ),
                );
            }
        }
        let want = radices
            .iter()
            .enumerate()
            .all(|(m, &k)| (0..k).all(|i| seen.contains(&(m, i))));
        let got = total_loss(&batch, &prompts, &attr_set, &settings).dir_defined;
        if got != want {
            mismatches += 1;
        }
        if !want {
            fallbacks += 1;
        }
    }
    verdict(
        4,
        mismatches == 0,
        format!("1000 batches ({fallbacks} needing the fallback), {mismatches} mismatches"),
    );
}

// ---- 5. guidance ----------------------------------------------------------

#[test]
fn criterion_5_guidance_identities() {
    let start = Instant::now();
    let d = 8;
    let encoder = ToyEncoder::new(ToyEncoderSpec::new(5, d, d)).unwrap();
    let backend = StubBackend::new(d);
    let pos = Conditioning::from_text(&encoder, "a headshot of a woman").unwrap();
    let neg = Conditioning::from_text(&encoder, "man").unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut checks = 0;
    for trial in 0..200 {
        let x: Vec<f64> = (0..d).map(|_| rng.random_range(-3.0..3.0)).collect();
        let t = trial % 50;
        let a = backend.denoise(&x, t, &pos).unwrap();
        let b = backend.denoise(&x, t, &neg).unwrap();
        for scale in [7.5, 1.5, 4.5, 0.0, 12.25] {
            let g = guided_step(&backend, &x, t, &pos, &neg, scale).unwrap();
            let want: Vec<f64> = a.iter().zip(&b).map(|(a, b)| scale * (a - b) + b).collect();
            assert_eq!(g, want);
            assert_eq!(guided_step(&backend, &x, t, &pos, &pos, scale).unwrap(), a);
            checks += 2;
        }
        assert_eq!(guided_step(&backend, &x, t, &pos, &neg, 1.0).unwrap(), a);
        // guidance is affine in the scale
        let g1 = guided_step(&backend, &x, t, &pos, &neg, 1.5).unwrap();
        let g2 = guided_step(&backend, &x, t, &pos, &neg, 7.5).unwrap();
        let mid = guided_step(&backend, &x, t, &pos, &neg, 4.5).unwrap();
        let avg: Vec<f64> = g1.iter().zip(&g2).map(|(p, q)| (p + q) / 2.0).collect();
        assert_eq!(mid, avg);
        checks += 2;
    }
    let elapsed = start.elapsed();
    verdict(
        5,
        elapsed < Duration::from_secs(1),
        format!("{checks} exact identities, {elapsed:.2?}"),
    );
}

// ---- 6. end-to-end --------------------------------------------------------

#[test]
fn criterion_6_synthetic_round_trip() {
    const D: usize = 16;
    let start = Instant::now();
    let basis = |k: usize, s: f64| {
        let mut v = vec![0.0; D];
        v[k] = s;
        v
    };
    let mut spec = ToyEncoderSpec::new(6, D, D);
    spec.plant_word("person", &basis(0, 1.0)).unwrap();
    let names = [["old", "young"], ["female", "male"]];
    for (m, pair) in names.iter().enumerate() {
        spec.plant_word(pair[0], &basis(m + 1, -1.0)).unwrap();
        spec.plant_word(pair[1], &basis(m + 1, 1.0)).unwrap();
    }
    let encoder = ToyEncoder::new(spec).unwrap();
    let attr_set = AttributeSet::new(
        names
            .iter()
            .enumerate()
            .map(|(m, pair)| {
                AttributeSpec::new(
                    format!("attr{m}"),
                    pair.iter()
                        .map(|n| CategorySpec::named(*n).with_label_prompts([*n]))
                        .collect(),
                )
                .unwrap()
            })
            .collect(),
    )
    .unwrap();

    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let mut refs = ReferenceSet::new(&attr_set);
    for m in 0..2 {
        for i in 0..2 {
            for _ in 0..20 {
                let mut v = basis(0, 1.0);
                v[m + 1] = if i == 0 { -0.8 } else { 0.8 };
                for x in v.iter_mut() {
                    *x += rng.random_range(-0.05..0.05);
                }
                let f = unit(&v);
                refs.push(
                    m,
                    i,
                    ImageRecord::new(ImageSource::Latent(f.clone())).with_feature(f),
                );
            }
        }
    }
    let config = TrainingConfig {
        epochs: 30,
        seed: 6,
        ..TrainingConfig::default()
    };
    let out = train(&attr_set, &refs, "person", &encoder, &config).unwrap();

    let mut job = GenerationJob::new("round-trip", "person");
    job.images_per_combination = 16;
    let plan = PromptPlan::FairTokens {
        attributes: attr_set.clone(),
        table: out.table,
    };
    let mut sink = MemorySink::default();
    let records = generate(&job, &plan, &encoder, &StubBackend::new(D), &mut sink).unwrap();
    assert_eq!(records.len(), 64);

    let clf = LabelClassifier::new(
        &attr_set,
        LabelPrompts::from_schema(&attr_set).unwrap(),
        &encoder,
    )
    .unwrap();
    let labels: Vec<_> = sink
        .images
        .values()
        .map(|(_, png)| {
            let latent = latent_png::decode(png).unwrap();
            clf.classify(&ImageSource::Latent(latent), &encoder)
                .unwrap()
        })
        .collect();
    let dist = empirical_distribution(&labels, &attr_set).unwrap();
    let kl = kl_to_uniform(&dist).unwrap();
    let elapsed = start.elapsed();
    verdict(
        6,
        kl < 0.01 && dist.counts.iter().all(|&c| c > 0) && elapsed < Duration::from_secs(120),
        format!("counts {:?}, joint KL {kl:.6}, {elapsed:.2?}", dist.counts),
    );
}

// ---- 7. exponential cost --------------------------------------------------

#[test]
fn criterion_7_exponential_cost() {
    let start = Instant::now();
    let config = BenchmarkConfig::default();
    assert_eq!(
        (
            config.max_n,
            config.images_per_attribute,
            config.repetitions
        ),
        (5, 400, 3)
    );
    let report = run_benchmark(&config).unwrap();
    let calls: Vec<usize> = report
        .rows
        .iter()
        .map(|r| r.encoder_calls_per_epoch)
        .collect();
    let doubling = calls.windows(2).all(|w| w[1] == 2 * w[0]);

    // least squares of ln(seconds) on n, computed here
    let pts: Vec<(f64, f64)> = report
        .rows
        .iter()
        .map(|r| (r.n as f64, r.mean_seconds.ln()))
        .collect();
    let n = pts.len() as f64;
    let (mx, my) = (
        pts.iter().map(|p| p.0).sum::<f64>() / n,
        pts.iter().map(|p| p.1).sum::<f64>() / n,
    );
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let r2 = sxy * sxy / (sxx * syy);
    let slope = sxy / sxx;
    let fit = report.fit.expect("five timed rows");
    assert!((fit.r_squared - r2).abs() < 1e-9 && (fit.slope - slope).abs() < 1e-9);

    let elapsed = start.elapsed();
    verdict(
        7,
        doubling && r2 > 0.9 && elapsed < Duration::from_secs(600),
        format!(
            "calls/epoch {calls:?}, slope {slope:.3} (ln 2 = 0.693), R^2 {r2:.4}, {elapsed:.2?}"
        ),
    );
}

// ---- 8. bias-ablation variants -------------------------------------------

fn cli(args: &[&str]) -> std::process::Output {
    let out = Command::new(env!("CARGO_BIN_EXE_inclusive"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "inclusive {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

/// `(attribute, category, relative path)` of every PNG under `root`.
fn walk(root: &Path) -> BTreeSet<(String, String, PathBuf)> {
    let mut out = BTreeSet::new();
    for a in std::fs::read_dir(root)
        .unwrap()
        .flatten()
        .filter(|e| e.path().is_dir())
    {
        for c in std::fs::read_dir(a.path())
            .unwrap()
            .flatten()
            .filter(|e| e.path().is_dir())
        {
            for f in std::fs::read_dir(c.path()).unwrap().flatten() {
                if f.path().extension().is_some_and(|x| x == "png") {
                    let an = a.file_name().to_string_lossy().into_owned();
                    let cn = c.file_name().to_string_lossy().into_owned();
                    let rel = PathBuf::from(&an).join(&cn).join(f.file_name());
                    out.insert((an, cn, rel));
                }
            }
        }
    }
    out
}

fn manifest_entries(path: &Path) -> BTreeSet<(String, String, PathBuf)> {
    let v: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    let mut out = BTreeSet::new();
    for a in v["attributes"].as_array().unwrap() {
        let an = a["name"].as_str().unwrap();
        for c in a["categories"].as_array().unwrap() {
            let cn = c["name"].as_str().unwrap();
            for img in c["images"].as_array().unwrap() {
                out.insert((
                    an.to_string(),
                    cn.to_string(),
                    PathBuf::from(img["path"].as_str().unwrap()),
                ));
            }
        }
    }
    out
}

#[test]
fn criterion_8_variant_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let schema = dir.path().join("schema.toml");
    std::fs::write(
        &schema,
        "[[attribute]]\nname = \"Eyeglasses\"\ncategories = [{ name = \"without\" }, { name = \"with\" }]\n",
    )
    .unwrap();
    let data = dir.path().join("data");
    let (schema_s, data_s) = (schema.to_str().unwrap(), data.to_str().unwrap());
    cli(&[
        "--out",
        data_s,
        "synth-dataset",
        "--schema",
        schema_s,
        "--per-category",
        "30",
        "--dim",
        "8",
    ]);

    let mut gender = BTreeMap::new();
    let aux = std::fs::read_to_string(data.join("aux_labels.csv")).unwrap();
    let mut lines = aux.lines();
    assert_eq!(lines.next(), Some("path,gender"));
    for l in lines {
        let (p, g) = l.split_once(',').unwrap();
        gender.insert(PathBuf::from(p), g.to_string());
    }
    let everything = walk(&data);
    assert_eq!(everything.len(), 60);

    let mut summary = Vec::new();
    let mut all_ok = true;
    for (variant, keep) in [
        (
            "original",
            (|_: &str, _: &str| true) as fn(&str, &str) -> bool,
        ),
        ("gender-biased", |c, g| {
            (c == "without" && g == "female") || (c == "with" && g == "male")
        }),
        ("male-only", |_, g| g == "male"),
    ] {
        let out = dir.path().join(format!("{variant}.json"));
        cli(&[
            "make-variant",
            "--schema",
            schema_s,
            "--data",
            data_s,
            "--attribute",
            "Eyeglasses",
            "--variant",
            variant,
            "--output",
            out.to_str().unwrap(),
        ]);
        let want: BTreeSet<_> = everything
            .iter()
            .filter(|(_, c, p)| keep(c, &gender[p]))
            .cloned()
            .collect();
        let got = manifest_entries(&out);
        let ok = got == want && !want.is_empty();
        all_ok &= ok;
        let per_cat = |s: &BTreeSet<(String, String, PathBuf)>, c: &str| {
            s.iter().filter(|e| e.1 == c).count()
        };
        summary.push(format!(
            "{variant} without {} with {}{}",
            per_cat(&got, "without"),
            per_cat(&got, "with"),
            if ok { "" } else { " (differs from oracle)" }
        ));
    }
    verdict(8, all_ok, summary.join(", "));
}

// ---- 9. real-backend tier -------------------------------------------------

/// Needs a real text-to-image backend and CLIP; this build ships only the
/// stub backend and the toy encoder, so the check fails when run.
#[test]
#[ignore = "needs a GPU diffusion backend and CLIP, which this build does not include"]
fn criterion_9_real_backend_reproduction() {
    let available = backend_by_id("stable-diffusion-v1.4", 4 * 64 * 64).is_ok();
    verdict(
        9,
        available,
        "no real diffusion backend or CLIP encoder in this build; Eyeglasses KL and FID targets not measured"
            .to_string(),
    );
}
