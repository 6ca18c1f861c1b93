//! 2-D shaded-histogram scatter rendering to SVG.

use std::collections::BTreeMap;
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct ScatterSpec {
    pub x_field: String,
    pub y_field: String,
    pub x_label: String,
    pub y_label: String,
    pub x_range: (f64, f64),
    pub y_range: (f64, f64),
    /// Histogram resolution, columns x rows.
    pub bins: (usize, usize),
    /// When set, rows are grouped by this column and one SVG is rendered per
    /// class value.
    pub class_field: Option<String>,
}

impl ScatterSpec {
    pub fn new(x_field: &str, y_field: &str) -> Self {
        ScatterSpec {
            x_field: x_field.into(),
            y_field: y_field.into(),
            x_label: x_field.into(),
            y_label: y_field.into(),
            x_range: (0.0, 1.0),
            y_range: (0.0, 1.0),
            bins: (50, 50),
            class_field: None,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = |(lo, hi): (f64, f64)| lo.is_finite() && hi.is_finite() && hi > lo;
        if !ok(self.x_range) || !ok(self.y_range) || self.bins.0 == 0 || self.bins.1 == 0 {
            return Err(Error::InvalidConfig(
                "scatter ranges must be finite and bins positive".into(),
            ));
        }
        Ok(())
    }
}

/// Binned density of one class.
struct Density {
    counts: Vec<u64>,
    total: u64,
}

/// Renders one SVG per class value (a single `"all"` entry without a class
/// field). Rows with non-finite coordinates are dropped; finite coordinates
/// are clamped into range so each contributes to exactly one bin.
pub fn render_scatter(csv_path: &Path, spec: &ScatterSpec) -> Result<Vec<(String, String)>> {
    spec.validate()?;
    let mut reader = csv::Reader::from_path(csv_path)?;
    let headers = reader.headers()?.clone();
    let col = |name: &str| -> Result<usize> {
        headers.iter().position(|h| h == name).ok_or_else(|| {
            Error::InvalidInput(format!("column {name:?} missing from {}", csv_path.display()))
        })
    };
    let x_col = col(&spec.x_field)?;
    let y_col = col(&spec.y_field)?;
    let class_col = spec.class_field.as_deref().map(col).transpose()?;

    let (nx, ny) = spec.bins;
    let mut classes: BTreeMap<String, Density> = BTreeMap::new();
    if class_col.is_none() {
        classes.insert(
            "all".to_string(),
            Density {
                counts: vec![0; nx * ny],
                total: 0,
            },
        );
    }
    for row in reader.records() {
        let row = row?;
        let x: f64 = row
            .get(x_col)
            .and_then(|v| v.parse().ok())
            .unwrap_or(f64::NAN);
        let y: f64 = row
            .get(y_col)
            .and_then(|v| v.parse().ok())
            .unwrap_or(f64::NAN);
        if !x.is_finite() || !y.is_finite() {
            continue;
        }
        let class = match class_col {
            Some(c) => row.get(c).unwrap_or("?").to_string(),
            None => "all".to_string(),
        };
        let density = classes.entry(class).or_insert_with(|| Density {
            counts: vec![0; nx * ny],
            total: 0,
        });
        let bx = bin_of(x, spec.x_range, nx);
        let by = bin_of(y, spec.y_range, ny);
        density.counts[by * nx + bx] += 1;
        density.total += 1;
    }

    let palette = ["#d95f02", "#7570b3", "#1b9e77", "#e7298a", "#66a61e"];
    Ok(classes
        .into_iter()
        .enumerate()
        .map(|(i, (class, density))| {
            let svg = render_svg(spec, &density, palette[i % palette.len()], &class);
            (class, svg)
        })
        .collect())
}

fn bin_of(v: f64, (lo, hi): (f64, f64), n: usize) -> usize {
    let t = ((v - lo) / (hi - lo)).clamp(0.0, 1.0);
    ((t * n as f64) as usize).min(n - 1)
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN_LEFT: f64 = 70.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 60.0;

fn render_svg(spec: &ScatterSpec, density: &Density, color: &str, class: &str) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let (nx, ny) = spec.bins;
    let max_count = density.counts.iter().copied().max().unwrap_or(0);

    let mut svg = String::with_capacity(16 * 1024);
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"15\" \
         text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        escape(class)
    ));

    if max_count > 0 {
        let cell_w = plot_w / nx as f64;
        let cell_h = plot_h / ny as f64;
        for by in 0..ny {
            for bx in 0..nx {
                let count = density.counts[by * nx + bx];
                if count == 0 {
                    continue;
                }
                // y bins grow upward; SVG y grows downward.
                let x = MARGIN_LEFT + bx as f64 * cell_w;
                let y = MARGIN_TOP + plot_h - (by + 1) as f64 * cell_h;
                let opacity = 0.15 + 0.85 * (count as f64 / max_count as f64);
                svg.push_str(&format!(
                    "<rect x=\"{x:.2}\" y=\"{y:.2}\" width=\"{cell_w:.2}\" height=\"{cell_h:.2}\" \
                     fill=\"{color}\" fill-opacity=\"{opacity:.4}\"/>\n"
                ));
            }
        }
    }

    // Axes with min / mid / max ticks.
    let x0 = MARGIN_LEFT;
    let y0 = MARGIN_TOP + plot_h;
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{y0}\" x2=\"{:.1}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        x0 + plot_w
    ));
    svg.push_str(&format!(
        "<line x1=\"{x0}\" y1=\"{MARGIN_TOP}\" x2=\"{x0}\" y2=\"{y0}\" stroke=\"black\"/>\n"
    ));
    for (frac, value) in [
        (0.0, spec.x_range.0),
        (0.5, (spec.x_range.0 + spec.x_range.1) / 2.0),
        (1.0, spec.x_range.1),
    ] {
        let x = x0 + frac * plot_w;
        svg.push_str(&format!(
            "<line x1=\"{x:.1}\" y1=\"{y0}\" x2=\"{x:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n",
            y0 + 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{value:.3}</text>\n",
            y0 + 18.0
        ));
    }
    for (frac, value) in [
        (0.0, spec.y_range.0),
        (0.5, (spec.y_range.0 + spec.y_range.1) / 2.0),
        (1.0, spec.y_range.1),
    ] {
        let y = y0 - frac * plot_h;
        svg.push_str(&format!(
            "<line x1=\"{:.1}\" y1=\"{y:.1}\" x2=\"{x0}\" y2=\"{y:.1}\" stroke=\"black\"/>\n",
            x0 - 5.0
        ));
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{value:.3}</text>\n",
            x0 - 8.0,
            y + 4.0
        ));
    }
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">{}</text>\n",
        x0 + plot_w / 2.0,
        HEIGHT - 14.0,
        escape(&spec.x_label)
    ));
    svg.push_str(&format!(
        "<text x=\"18\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\" transform=\"rotate(-90 18 {:.1})\">{}</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0,
        escape(&spec.y_label)
    ));
    svg.push_str("</svg>\n");
    svg
}

pub(crate) fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
        .replace('\'', "&#39;")
}
