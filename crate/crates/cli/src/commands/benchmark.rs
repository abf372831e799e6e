use inclusive_core::benchmark::{run_benchmark, BenchmarkReport};

use super::write_json;
use crate::config::Settings;
use crate::render;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Largest number of binary attributes
    #[arg(long)]
    max_n: Option<usize>,

    #[arg(long)]
    images_per_attribute: Option<usize>,

    #[arg(long)]
    repetitions: Option<usize>,

    #[arg(long)]
    epochs: Option<usize>,

    /// Allow more than 8 attributes
    #[arg(long)]
    force: bool,
}

pub fn run(settings: &Settings, args: Args) -> anyhow::Result<()> {
    let mut config = settings.file.benchmark.clone();
    if let Some(v) = args.max_n {
        config.max_n = v;
    }
    if let Some(v) = args.images_per_attribute {
        config.images_per_attribute = v;
    }
    if let Some(v) = args.repetitions {
        config.repetitions = v;
    }
    if let Some(v) = args.epochs {
        config.epochs = v;
    }
    config.force |= args.force;
    config.seed = settings.seed_for("benchmark");
    config.validate()?;

    let report = run_benchmark(&config)?;
    let out = settings.out_or("out/benchmark");
    std::fs::create_dir_all(&out)?;
    report.write_csv(std::fs::File::create(out.join("benchmark.csv"))?)?;
    write_json(&out.join("benchmark.json"), &report)?;
    std::fs::write(out.join("benchmark.svg"), render::benchmark_svg(&report))?;
    print!("{}", summary(&report));
    Ok(())
}

pub fn summary(report: &BenchmarkReport) -> String {
    let mut s = String::from("n  prompts  calls/epoch  mean_seconds\n");
    for r in &report.rows {
        s.push_str(&format!(
            "{:<2} {:>7}  {:>11}  {:.6}\n",
            r.n, r.prompt_set_size, r.encoder_calls_per_epoch, r.mean_seconds
        ));
    }
    if let Some(f) = report.fit {
        s.push_str(&format!(
            "ln(seconds) = {:.4} + {:.4} n, R^2 = {:.4} (ln 2 = {:.4})\n",
            f.intercept,
            f.slope,
            f.r_squared,
            std::f64::consts::LN_2
        ));
    }
    s
}
