//! Plain-text tables, HTML, image grids and SVG plots for reports.

use std::fmt::Write as _;
use std::path::Path;

use image::{GrayImage, Luma};
use inclusive_core::benchmark::BenchmarkReport;

/// Left-aligned text table; every row has the header's width.
pub fn text_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = header.iter().map(|h| h.len()).collect();
    for r in rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.len());
        }
    }
    let line = |cells: &[String]| {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .map(|(c, w)| format!("{c:<w$}"))
            .collect();
        parts.join("  ").trim_end().to_string() + "\n"
    };
    let mut s = line(header);
    s.push_str(&line(
        &widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>(),
    ));
    for r in rows {
        s.push_str(&line(r));
    }
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

pub fn html_table(header: &[String], rows: &[Vec<String>]) -> String {
    let mut s = String::from("<table>\n<tr>");
    for h in header {
        let _ = write!(s, "<th>{}</th>", escape(h));
    }
    s.push_str("</tr>\n");
    for r in rows {
        s.push_str("<tr>");
        for c in r {
            let _ = write!(s, "<td>{}</td>", escape(c));
        }
        s.push_str("</tr>\n");
    }
    s.push_str("</table>\n");
    s
}

/// Side of the square tile a latent of width `d` is folded into.
pub fn tile_side(d: usize) -> usize {
    (d as f64).sqrt().ceil() as usize
}

/// Folds a latent strip into a square grayscale tile, row-major, padding
/// with mid-gray. Values in `[-1, 1]` map to `[0, 255]`.
pub fn latent_tile(latent: &[f64], side: usize) -> GrayImage {
    GrayImage::from_fn(side as u32, side as u32, |x, y| {
        let v = latent
            .get(y as usize * side + x as usize)
            .copied()
            .unwrap_or(0.0);
        Luma([(((v.clamp(-1.0, 1.0) + 1.0) * 0.5) * 255.0).round() as u8])
    })
}

/// Grid with one row per entry of `rows` and one column per image; tiles
/// are upscaled by `scale` and separated by a one-pixel white border.
pub fn latent_grid(rows: &[Vec<Vec<f64>>], scale: u32) -> GrayImage {
    let d = rows.iter().flatten().map(Vec::len).max().unwrap_or(1);
    let side = tile_side(d) as u32;
    let cell = side * scale + 1;
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0).max(1) as u32;
    let mut img = GrayImage::from_pixel(
        cols * cell + 1,
        rows.len().max(1) as u32 * cell + 1,
        Luma([255]),
    );
    for (r, row) in rows.iter().enumerate() {
        for (c, latent) in row.iter().enumerate() {
            let tile = latent_tile(latent, side as usize);
            let (ox, oy) = (c as u32 * cell + 1, r as u32 * cell + 1);
            for y in 0..side * scale {
                for x in 0..side * scale {
                    img.put_pixel(ox + x, oy + y, *tile.get_pixel(x / scale, y / scale));
                }
            }
        }
    }
    img
}

pub fn save_png(img: &GrayImage, path: &Path) -> anyhow::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    img.save(path)?;
    Ok(())
}

/// Mean seconds against `n` on a log axis, with the fitted exponential.
pub fn benchmark_svg(report: &BenchmarkReport) -> String {
    let (w, h, pad) = (480.0, 320.0, 48.0);
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" font-family=\"sans-serif\" font-size=\"11\">\n"
    );
    let pts: Vec<(f64, f64)> = report
        .rows
        .iter()
        .filter(|r| r.mean_seconds > 0.0)
        .map(|r| (r.n as f64, r.mean_seconds.ln()))
        .collect();
    if pts.is_empty() {
        s.push_str("<text x=\"10\" y=\"20\">no timings</text>\n</svg>\n");
        return s;
    }
    let (mut x0, mut x1) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in &pts {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| pad + (x - x0) / (x1 - x0) * (w - 2.0 * pad);
    let py = |y: f64| h - pad - (y - y0) / (y1 - y0) * (h - 2.0 * pad);
    let _ = writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{}\" x2=\"{}\" y2=\"{}\" stroke=\"black\"/>",
        h - pad,
        w - pad,
        h - pad
    );
    let _ = writeln!(
        s,
        "<line x1=\"{pad}\" y1=\"{pad}\" x2=\"{pad}\" y2=\"{}\" stroke=\"black\"/>",
        h - pad
    );
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">number of attributes</text>",
        w / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        "<text x=\"14\" y=\"{}\" transform=\"rotate(-90 14 {})\" text-anchor=\"middle\">ln(seconds)</text>",
        h / 2.0,
        h / 2.0
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "<text x=\"{:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            px(r.n as f64),
            h - pad + 14.0,
            r.n
        );
    }
    if let Some(f) = report.fit {
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"steelblue\" stroke-dasharray=\"4 3\"/>",
            px(x0),
            py(f.intercept + f.slope * x0),
            px(x1),
            py(f.intercept + f.slope * x1)
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\">slope {:.3} (ln 2 = {:.3}), R^2 {:.3}</text>",
            pad + 8.0,
            pad - 12.0,
            f.slope,
            std::f64::consts::LN_2,
            f.r_squared
        );
    }
    for (x, y) in pts {
        let _ = writeln!(
            s,
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"black\"/>",
            px(x),
            py(y)
        );
    }
    s.push_str("</svg>\n");
    s
}
