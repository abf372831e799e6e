use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use inclusive_core::benchmark::BenchmarkReport;
use inclusive_core::encoders::latent_png;
use inclusive_core::evaluation::MetricReport;
use inclusive_core::generation::{read_manifest, MethodTag, MANIFEST_FILE};

use super::evaluate::METRICS_DIR;
use crate::config::Settings;
use crate::render;

#[derive(clap::Args, Debug)]
pub struct Args {
    /// Run directories to compare
    #[arg(required = true)]
    runs: Vec<PathBuf>,

    /// Benchmark CSV to plot
    #[arg(long)]
    benchmark: Option<PathBuf>,

    /// Images per combination shown in each grid
    #[arg(long, default_value_t = 8)]
    columns: usize,
}

const ABSENT: &str = "absent";

struct Column {
    label: String,
    report: Option<MetricReport>,
}

fn run_name(run: &Path) -> String {
    run.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| run.display().to_string())
}

fn columns(runs: &[PathBuf]) -> anyhow::Result<Vec<Column>> {
    let mut out = Vec::new();
    for run in runs {
        let mut methods: BTreeSet<MethodTag> = read_manifest(&run.join(MANIFEST_FILE))?
            .into_iter()
            .map(|r| r.method)
            .collect();
        let metrics = run.join(METRICS_DIR);
        for m in MethodTag::ALL {
            if metrics.join(format!("{m}.json")).is_file() {
                methods.insert(m);
            }
        }
        for m in methods {
            let path = metrics.join(format!("{m}.json"));
            let report = if path.is_file() {
                Some(MetricReport::from_json(&std::fs::read_to_string(&path)?)?)
            } else {
                None
            };
            out.push(Column {
                label: format!("{}/{m}", run_name(run)),
                report,
            });
        }
    }
    Ok(out)
}

fn metric_rows(cols: &[Column]) -> Vec<Vec<String>> {
    let attributes: BTreeSet<&str> = cols
        .iter()
        .filter_map(|c| c.report.as_ref())
        .flat_map(|r| r.marginals.iter().map(|m| m.attribute.as_str()))
        .collect();
    let cell = |c: &Column, f: &dyn Fn(&MetricReport) -> Option<String>| {
        c.report
            .as_ref()
            .and_then(f)
            .unwrap_or_else(|| ABSENT.to_string())
    };
    let mut rows = Vec::new();
    let mut push = |name: String, f: &dyn Fn(&MetricReport) -> Option<String>| {
        let mut row = vec![name];
        row.extend(cols.iter().map(|c| cell(c, f)));
        rows.push(row);
    };
    push("samples".into(), &|r| Some(r.sample_count.to_string()));
    push("labels".into(), &|r| {
        Some(format!("{:?}", r.label_source).to_lowercase())
    });
    push("KL joint (nats)".into(), &|r| {
        Some(format!("{:.4}", r.joint.kl_nats))
    });
    for a in attributes {
        push(format!("KL {a} (nats)"), &|r| {
            r.marginals
                .iter()
                .find(|m| m.attribute == a)
                .map(|m| format!("{:.4}", m.kl_nats))
        });
    }
    push("FID".into(), &|r| {
        r.fid.as_ref().map(|f| format!("{:.4}", f.value))
    });
    rows
}

fn write_grids(runs: &[PathBuf], out: &Path, columns: usize) -> anyhow::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for run in runs {
        let mut by_method: BTreeMap<MethodTag, BTreeMap<usize, Vec<PathBuf>>> = BTreeMap::new();
        for row in read_manifest(&run.join(MANIFEST_FILE))? {
            let Some(key) = row.key() else { continue };
            by_method
                .entry(row.method)
                .or_default()
                .entry(key.combination_index)
                .or_default()
                .push(row.path);
        }
        for (method, combos) in by_method {
            let mut rows = Vec::new();
            for (_, mut paths) in combos {
                paths.sort();
                paths.truncate(columns);
                rows.push(
                    paths
                        .iter()
                        .map(|p| latent_png::read(&run.join(p)))
                        .collect::<Result<Vec<_>, _>>()?,
                );
            }
            let path = out
                .join("grids")
                .join(format!("{}-{method}.png", run_name(run)));
            render::save_png(&render::latent_grid(&rows, 4), &path)?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn run(settings: &Settings, args: Args) -> anyhow::Result<()> {
    let out = settings.out_or("out/report");
    std::fs::create_dir_all(&out)?;
    let cols = columns(&args.runs)?;
    let mut header = vec!["metric".to_string()];
    header.extend(cols.iter().map(|c| c.label.clone()));
    let rows = metric_rows(&cols);

    let mut text = render::text_table(&header, &rows);
    let mut html = String::from("<!DOCTYPE html>\n<html><head><meta charset=\"utf-8\"><title>Run comparison</title></head><body>\n<h1>Run comparison</h1>\n");
    html.push_str(&render::html_table(&header, &rows));

    let grids = write_grids(&args.runs, &out, args.columns)?;
    if !grids.is_empty() {
        html.push_str("<h2>Samples</h2>\n<p>Rows are attribute combinations.</p>\n");
        for g in &grids {
            let rel = g.strip_prefix(&out).unwrap_or(g);
            html.push_str(&format!(
                "<figure><img src=\"{0}\" alt=\"{0}\"><figcaption>{0}</figcaption></figure>\n",
                rel.display()
            ));
        }
    }

    if let Some(csv) = &args.benchmark {
        let bench = BenchmarkReport::read_csv(std::fs::File::open(csv)?)?;
        std::fs::write(out.join("benchmark.svg"), render::benchmark_svg(&bench))?;
        let summary = super::benchmark::summary(&bench);
        text.push('\n');
        text.push_str(&summary);
        html.push_str(&format!(
            "<h2>Training cost</h2>\n<img src=\"benchmark.svg\" alt=\"benchmark\">\n<pre>{summary}</pre>\n"
        ));
    }
    html.push_str("</body></html>\n");

    std::fs::write(out.join("report.txt"), &text)?;
    std::fs::write(out.join("report.html"), html)?;
    print!("{text}");
    Ok(())
}
