//! Dependency-free SVG line charts for report output.

use crate::error::{Error, Result};
use std::fmt::Write as _;
use std::path::Path;

pub struct Series {
    pub label: String,
    pub ys: Vec<f64>,
}

const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

const W: f64 = 640.0;
const H: f64 = 420.0;
const ML: f64 = 62.0; // margins
const MR: f64 = 20.0;
const MT: f64 = 42.0;
const MB: f64 = 64.0;

/// Categorical-x line chart; one polyline per series.
pub fn line_chart(
    path: &Path,
    title: &str,
    x_labels: &[String],
    y_label: &str,
    series: &[Series],
) -> Result<()> {
    if x_labels.is_empty() || series.is_empty() {
        return Err(Error::InvalidConfig("empty chart".into()));
    }
    for s in series {
        if s.ys.len() != x_labels.len() {
            return Err(Error::InvalidConfig(format!(
                "series {} has {} points for {} x labels",
                s.label,
                s.ys.len(),
                x_labels.len()
            )));
        }
    }
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &y in &s.ys {
            if y.is_finite() {
                y_min = y_min.min(y);
                y_max = y_max.max(y);
            }
        }
    }
    if !y_min.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let pad = 0.06 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;

    let plot_w = W - ML - MR;
    let plot_h = H - MT - MB;
    let x_at = |i: usize| -> f64 {
        if x_labels.len() == 1 {
            ML + plot_w / 2.0
        } else {
            ML + plot_w * i as f64 / (x_labels.len() - 1) as f64
        }
    };
    let y_at = |v: f64| -> f64 { MT + plot_h * (1.0 - (v - y_min) / (y_max - y_min)) };

    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n\
         <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>\n",
        W / 2.0,
        escape(title)
    );

    // horizontal gridlines + y ticks
    for i in 0..=4 {
        let v = y_min + (y_max - y_min) * i as f64 / 4.0;
        let y = y_at(v);
        let _ = write!(
            svg,
            "<line x1=\"{ML}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{v:.3}</text>\n",
            W - MR,
            ML - 6.0,
            y + 4.0
        );
    }
    // axes
    let _ = write!(
        svg,
        "<line x1=\"{ML}\" y1=\"{MT}\" x2=\"{ML}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{ML}\" y1=\"{:.1}\" x2=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
        H - MB,
        H - MB,
        W - MR,
        H - MB
    );
    // x tick labels
    for (i, lab) in x_labels.iter().enumerate() {
        let x = x_at(i);
        let _ = writeln!(
            svg,
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            H - MB + 18.0,
            escape(lab)
        );
    }
    // y axis label
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        MT + plot_h / 2.0,
        MT + plot_h / 2.0,
        escape(y_label)
    );

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        let mut points = String::new();
        for (i, &y) in s.ys.iter().enumerate() {
            if y.is_finite() {
                let _ = write!(points, "{:.1},{:.1} ", x_at(i), y_at(y));
            }
        }
        let _ = writeln!(
            svg,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>",
            points.trim_end()
        );
        for (i, &y) in s.ys.iter().enumerate() {
            if y.is_finite() {
                let _ = writeln!(
                    svg,
                    "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>",
                    x_at(i),
                    y_at(y)
                );
            }
        }
        // legend row
        let ly = H - MB + 36.0 + 0.0;
        let lx = ML + 140.0 * si as f64;
        let _ = write!(
            svg,
            "<line x1=\"{lx:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" stroke-width=\"2\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>\n",
            lx + 22.0,
            lx + 27.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg).map_err(|e| Error::io(path, e))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
