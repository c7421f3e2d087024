//! Reconstruction results, SVG figures and fluctuation tables.
//!
//! Figures are hand-written SVG 1.1 with fixed styling and fixed number
//! formatting so identical inputs give identical bytes.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::analysis::{FluctuationReport, Half, HalfReport};
use crate::netcore::{mse, Point};
use crate::runstore::{open_run, Channel, EpochSnapshot, RunManifest};
use crate::shapegen::{ShapeDataset, ShapeKind};
use crate::{Error, Result};

const ORIGINAL_COLOR: &str = "#1f2937";
const RECON_COLOR: &str = "#e4572e";
const BAR_COLOR: &str = "#3b82f6";
const FRAME: f64 = 1.2;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReconstructionResult {
    pub shape: ShapeKind,
    pub learning_rate: f64,
    pub original: Vec<Point>,
    pub reconstructed: Vec<Point>,
    pub final_mse: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FigureSpec {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub width: u32,
    pub height: u32,
}

impl Default for FigureSpec {
    fn default() -> Self {
        Self {
            title: String::new(),
            x_label: "x".into(),
            y_label: "y".into(),
            width: 800,
            height: 600,
        }
    }
}

impl FigureSpec {
    pub fn titled(title: impl Into<String>) -> Self {
        Self {
            title: title.into(),
            ..Self::default()
        }
    }
}

/// Runs the last captured network over `dataset`.
pub fn reconstruct_from(
    manifest: &RunManifest,
    last: &EpochSnapshot,
    dataset: &ShapeDataset,
) -> Result<ReconstructionResult> {
    let cfg = &manifest.config;
    if dataset.kind != cfg.shape || dataset.seed != cfg.data_seed || dataset.count() != cfg.samples
    {
        return Err(Error::invalid(format!(
            "dataset ({}, seed {}, {} points) does not match run ({}, seed {}, {} points)",
            dataset.kind,
            dataset.seed,
            dataset.count(),
            cfg.shape,
            cfg.data_seed,
            cfg.samples
        )));
    }
    let net = last.to_network(&manifest.architecture)?;
    let reconstructed = net.reconstruct(&dataset.points)?;
    Ok(ReconstructionResult {
        shape: cfg.shape,
        learning_rate: cfg.learning_rate,
        final_mse: mse(&dataset.points, &reconstructed)?,
        original: dataset.points.clone(),
        reconstructed,
    })
}

pub fn reconstruct(run: &Path, dataset: &ShapeDataset) -> Result<ReconstructionResult> {
    let mut reader = open_run(run)?;
    if !reader.manifest().complete {
        return Err(Error::invalid(format!(
            "{} is not a complete run",
            run.display()
        )));
    }
    let last = reader.last()?;
    reconstruct_from(reader.manifest(), &last, dataset)
}

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

fn svg_open(out: &mut String, width: f64, height: f64) {
    let _ = write!(
        out,
        "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n\
         <svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" \
         width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" \
         font-family=\"sans-serif\">\n\
         <rect x=\"0\" y=\"0\" width=\"{w}\" height=\"{h}\" fill=\"#ffffff\"/>\n",
        w = width,
        h = height
    );
}

fn text(out: &mut String, x: f64, y: f64, size: u32, anchor: &str, extra: &str, body: &str) {
    let _ = writeln!(
        out,
        "<text x=\"{x:.2}\" y=\"{y:.2}\" font-size=\"{size}\" text-anchor=\"{anchor}\"{extra}>{}</text>",
        escape(body)
    );
}

/// Square plot region of one reconstruction panel.
struct Panel {
    left: f64,
    top: f64,
    size: f64,
}

impl Panel {
    /// Maps a data point in `[-1.2, 1.2]²` to canvas coordinates. Points
    /// outside the frame are clamped onto its border.
    fn map(&self, p: Point) -> (f64, f64) {
        let u = ((p[0] + FRAME) / (2.0 * FRAME)).clamp(0.0, 1.0);
        let v = ((p[1] + FRAME) / (2.0 * FRAME)).clamp(0.0, 1.0);
        (self.left + u * self.size, self.top + (1.0 - v) * self.size)
    }
}

fn scatter_panel(
    out: &mut String,
    panel: &Panel,
    result: &ReconstructionResult,
    spec: &FigureSpec,
) {
    let (l, t, s) = (panel.left, panel.top, panel.size);
    let _ = writeln!(
        out,
        "<rect class=\"frame\" x=\"{l:.2}\" y=\"{t:.2}\" width=\"{s:.2}\" height=\"{s:.2}\" \
         fill=\"none\" stroke=\"#9ca3af\" stroke-width=\"1\"/>"
    );
    for tick in [-1.0, 0.0, 1.0] {
        let (x, _) = panel.map([tick, 0.0]);
        let (_, y) = panel.map([0.0, tick]);
        let _ = writeln!(
            out,
            "<line x1=\"{x:.2}\" y1=\"{b:.2}\" x2=\"{x:.2}\" y2=\"{b2:.2}\" stroke=\"#9ca3af\"/>",
            b = t + s,
            b2 = t + s + 5.0
        );
        text(
            out,
            x,
            t + s + 18.0,
            11,
            "middle",
            "",
            &format!("{tick:.1}"),
        );
        let _ = writeln!(
            out,
            "<line x1=\"{a:.2}\" y1=\"{y:.2}\" x2=\"{l:.2}\" y2=\"{y:.2}\" stroke=\"#9ca3af\"/>",
            a = l - 5.0
        );
        text(out, l - 8.0, y + 4.0, 11, "end", "", &format!("{tick:.1}"));
    }
    text(
        out,
        l + s / 2.0,
        t + s + 34.0,
        12,
        "middle",
        "",
        &spec.x_label,
    );
    text(
        out,
        l - 34.0,
        t + s / 2.0,
        12,
        "middle",
        &format!(
            " transform=\"rotate(-90 {:.2} {:.2})\"",
            l - 34.0,
            t + s / 2.0
        ),
        &spec.y_label,
    );
    for &p in &result.original {
        let (x, y) = panel.map(p);
        let _ = writeln!(
            out,
            "<circle class=\"marker original\" cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"2.2\" fill=\"{ORIGINAL_COLOR}\"/>"
        );
    }
    for &p in &result.reconstructed {
        let (x, y) = panel.map(p);
        let _ = writeln!(
            out,
            "<rect class=\"marker reconstructed\" x=\"{:.2}\" y=\"{:.2}\" width=\"3.6\" height=\"3.6\" fill=\"{RECON_COLOR}\" fill-opacity=\"0.8\"/>",
            x - 1.8,
            y - 1.8
        );
    }
}

fn legend(out: &mut String, x: f64, y: f64) {
    let _ = writeln!(
        out,
        "<circle class=\"legend-swatch\" cx=\"{:.2}\" cy=\"{:.2}\" r=\"4\" fill=\"{ORIGINAL_COLOR}\"/>",
        x,
        y
    );
    text(out, x + 10.0, y + 4.0, 12, "start", "", "original");
    let _ = writeln!(
        out,
        "<rect class=\"legend-swatch\" x=\"{:.2}\" y=\"{:.2}\" width=\"8\" height=\"8\" fill=\"{RECON_COLOR}\"/>",
        x - 4.0,
        y + 16.0
    );
    text(out, x + 10.0, y + 24.0, 12, "start", "", "reconstructed");
}

/// Original points as dark circles, reconstruction as accent squares, on
/// equal-aspect axes spanning `[-1.2, 1.2]²`.
pub fn scatter_svg(result: &ReconstructionResult, spec: &FigureSpec) -> String {
    let (w, h) = (spec.width as f64, spec.height as f64);
    let size = (h - 120.0).min(w - 240.0).max(50.0);
    let panel = Panel {
        left: 80.0,
        top: 50.0,
        size,
    };
    let mut out = String::new();
    svg_open(&mut out, w, h);
    let title = if spec.title.is_empty() {
        format!("Reconstruction with learning rate {}", result.learning_rate)
    } else {
        spec.title.clone()
    };
    text(&mut out, w / 2.0, 28.0, 16, "middle", "", &title);
    scatter_panel(&mut out, &panel, result, spec);
    legend(&mut out, panel.left + size + 30.0, panel.top + 20.0);
    text(
        &mut out,
        panel.left + size + 30.0,
        panel.top + 70.0,
        12,
        "start",
        "",
        &format!("MSE {:.6}", result.final_mse),
    );
    out.push_str("</svg>\n");
    out
}

/// Reconstructions at several learning rates side by side.
pub fn scatter_comparison_svg(
    results: &[ReconstructionResult],
    spec: &FigureSpec,
) -> Result<String> {
    if results.is_empty() {
        return Err(Error::invalid(
            "comparison figure needs at least one result",
        ));
    }
    let k = results.len() as f64;
    let size = ((spec.width as f64 - 60.0) / k - 90.0)
        .min(spec.height as f64 - 150.0)
        .max(50.0);
    let w = 60.0 + k * (size + 90.0);
    let h = spec.height as f64;
    let mut out = String::new();
    svg_open(&mut out, w, h);
    text(&mut out, w / 2.0, 28.0, 16, "middle", "", &spec.title);
    for (i, r) in results.iter().enumerate() {
        let panel = Panel {
            left: 80.0 + i as f64 * (size + 90.0),
            top: 70.0,
            size,
        };
        text(
            &mut out,
            panel.left + size / 2.0,
            58.0,
            13,
            "middle",
            "",
            &format!("lr {} (MSE {:.6})", r.learning_rate, r.final_mse),
        );
        scatter_panel(&mut out, &panel, r, spec);
    }
    legend(&mut out, 80.0, h - 45.0);
    out.push_str("</svg>\n");
    Ok(out)
}

/// Bars for one half; heights are proportional to counts, each bar carries
/// its count in `data-count` and as a label.
fn hist_panel(out: &mut String, half: Half, rep: &HalfReport, left: f64, top: f64, w: f64, h: f64) {
    let counts = &rep.histogram.counts;
    let edges = &rep.histogram.edges;
    let max = counts.iter().copied().max().unwrap_or(0).max(1) as f64;
    let bw = w / counts.len() as f64;
    let _ = writeln!(out, "<g class=\"half\" id=\"{}\">", half.name());
    text(
        out,
        left + w / 2.0,
        top - 10.0,
        13,
        "middle",
        "",
        &format!(
            "{} ({} neurons, {} inactive, spread of spread {:.3e})",
            half.name(),
            rep.neuron_count,
            rep.inactive_count,
            rep.spread_of_spread
        ),
    );
    let _ = writeln!(
        out,
        "<line x1=\"{left:.2}\" y1=\"{b:.2}\" x2=\"{r:.2}\" y2=\"{b:.2}\" stroke=\"#374151\"/>",
        b = top + h,
        r = left + w
    );
    for (i, &c) in counts.iter().enumerate() {
        let bh = c as f64 / max * h;
        let x = left + i as f64 * bw;
        let _ = writeln!(
            out,
            "<rect class=\"bar\" data-count=\"{c}\" x=\"{x:.2}\" y=\"{:.2}\" width=\"{:.2}\" height=\"{bh:.2}\" fill=\"{BAR_COLOR}\" stroke=\"#ffffff\" stroke-width=\"0.5\"/>",
            top + h - bh,
            bw.max(0.5)
        );
        if c > 0 {
            text(
                out,
                x + bw / 2.0,
                top + h - bh - 3.0,
                9,
                "middle",
                " class=\"count\"",
                &c.to_string(),
            );
        }
    }
    // Tick labels at the outer edges and the midpoint.
    let n = edges.len() - 1;
    let ticks: Vec<usize> = if n == 1 {
        vec![0, 1]
    } else {
        vec![0, n / 2, n]
    };
    for i in ticks {
        let x = left + i as f64 * bw;
        text(
            out,
            x,
            top + h + 16.0,
            10,
            "middle",
            " class=\"tick\"",
            &format!("{:.2e}", edges[i]),
        );
    }
    text(
        out,
        left + w / 2.0,
        top + h + 34.0,
        11,
        "middle",
        "",
        "per-neuron spread",
    );
    out.push_str("</g>\n");
}

/// Side-by-side encoder/decoder histograms of one channel.
pub fn hist_svg(report: &FluctuationReport, channel: Channel, spec: &FigureSpec) -> Result<String> {
    hist_comparison_svg(&[report], channel, spec)
}

/// One row of encoder/decoder histograms per report (e.g. per learning rate).
pub fn hist_comparison_svg(
    reports: &[&FluctuationReport],
    channel: Channel,
    spec: &FigureSpec,
) -> Result<String> {
    if reports.is_empty() {
        return Err(Error::invalid("histogram figure needs at least one report"));
    }
    let w = spec.width as f64;
    let row_h = (spec.height as f64 - 40.0).max(200.0);
    let h = 40.0 + row_h * reports.len() as f64;
    let mut out = String::new();
    svg_open(&mut out, w, h);
    let title = if spec.title.is_empty() {
        format!("Fluctuations in {channel}")
    } else {
        spec.title.clone()
    };
    text(&mut out, w / 2.0, 26.0, 16, "middle", "", &title);
    let panel_w = (w - 120.0) / 2.0;
    for (r, rep) in reports.iter().enumerate() {
        let ch = rep.channel(channel)?;
        let top = 40.0 + r as f64 * row_h;
        let _ = writeln!(
            out,
            "<g class=\"row\" data-learning-rate=\"{}\">",
            rep.learning_rate
        );
        text(
            &mut out,
            18.0,
            top + row_h / 2.0,
            12,
            "middle",
            &format!(" transform=\"rotate(-90 18 {:.2})\"", top + row_h / 2.0),
            &format!("lr {}", rep.learning_rate),
        );
        for (k, half) in Half::BOTH.into_iter().enumerate() {
            let left = 50.0 + k as f64 * (panel_w + 40.0);
            hist_panel(
                &mut out,
                half,
                ch.half(half),
                left,
                top + 30.0,
                panel_w,
                row_h - 90.0,
            );
        }
        out.push_str("</g>\n");
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FluctuationTable {
    pub markdown: String,
    pub csv: String,
}

pub const TABLE_COLUMNS: [&str; 9] = [
    "channel",
    "half",
    "neurons",
    "inactive",
    "min_spread",
    "median_spread",
    "max_spread",
    "spread_of_spread",
    "epsilon",
];

/// Per (channel, half) summary. CSV values use shortest round-trip float
/// formatting so they parse back to exactly the report's values.
pub fn fluctuation_table(report: &FluctuationReport) -> FluctuationTable {
    let mut csv = TABLE_COLUMNS.join(",");
    csv.push('\n');
    let mut md = format!(
        "| {} |\n|{}\n",
        TABLE_COLUMNS.join(" | "),
        "---|".repeat(TABLE_COLUMNS.len())
    );
    for c in Channel::ALL {
        let Some(ch) = report.channels.get(&c) else {
            continue;
        };
        for half in Half::BOTH {
            let r = ch.half(half);
            let _ = writeln!(
                csv,
                "{},{},{},{},{},{},{},{},{}",
                c,
                half.name(),
                r.neuron_count,
                r.inactive_count,
                r.min_spread,
                r.median_spread,
                r.max_spread,
                r.spread_of_spread,
                report.epsilon
            );
            let _ = writeln!(
                md,
                "| {} | {} | {} | {} | {:.4e} | {:.4e} | {:.4e} | {:.4e} | {:.1e} |",
                c,
                half.name(),
                r.neuron_count,
                r.inactive_count,
                r.min_spread,
                r.median_spread,
                r.max_spread,
                r.spread_of_spread,
                report.epsilon
            );
        }
    }
    FluctuationTable { markdown: md, csv }
}
