//! Standalone SVG line charts with axes, legend, and uncertainty bands.
//!
//! No raster dependencies: the output is a self-contained SVG document with
//! fixed-precision coordinates, so identical inputs produce identical bytes.

use std::fmt::Write;

/// One plotted series. `band` holds `(lower, upper)` per point when an
/// uncertainty region should be shaded (typically `mean +/- 1.96 se`).
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub band: Option<Vec<(f64, f64)>>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
            band: None,
        }
    }

    pub fn with_band(mut self, band: Vec<(f64, f64)>) -> Self {
        self.band = Some(band);
        self
    }
}

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 500.0;
const MARGIN_L: f64 = 70.0;
const MARGIN_R: f64 = 160.0;
const MARGIN_T: f64 = 40.0;
const MARGIN_B: f64 = 55.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

pub(crate) struct Scale {
    x_min: f64,
    x_max: f64,
    y_min: f64,
    y_max: f64,
}

impl Scale {
    pub(crate) fn x(&self, v: f64) -> f64 {
        let span = (self.x_max - self.x_min).max(1e-300);
        MARGIN_L + (v - self.x_min) / span * (WIDTH - MARGIN_L - MARGIN_R)
    }

    pub(crate) fn y(&self, v: f64) -> f64 {
        let span = (self.y_max - self.y_min).max(1e-300);
        HEIGHT - MARGIN_B - (v - self.y_min) / span * (HEIGHT - MARGIN_T - MARGIN_B)
    }
}

pub(crate) fn fit_scale(series: &[Series]) -> Scale {
    let mut x_min = f64::INFINITY;
    let mut x_max = f64::NEG_INFINITY;
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for (i, &(x, y)) in s.points.iter().enumerate() {
            if !x.is_finite() || !y.is_finite() {
                continue;
            }
            x_min = x_min.min(x);
            x_max = x_max.max(x);
            y_min = y_min.min(y);
            y_max = y_max.max(y);
            if let Some(band) = &s.band {
                let (lo, hi) = band[i];
                if lo.is_finite() && hi.is_finite() {
                    y_min = y_min.min(lo);
                    y_max = y_max.max(hi);
                }
            }
        }
    }
    if !x_min.is_finite() {
        (x_min, x_max, y_min, y_max) = (0.0, 1.0, 0.0, 1.0);
    }
    if x_min == x_max {
        x_max = x_min + 1.0;
    }
    if y_min == y_max {
        // A constant series still gets a visible horizontal line.
        y_min -= 1.0;
        y_max += 1.0;
    }
    Scale {
        x_min,
        x_max,
        y_min,
        y_max,
    }
}

/// Renders a line chart. Non-finite points are skipped with a warning on
/// stderr (lines are interrupted at the gap).
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let scale = fit_scale(series);
    let mut svg = String::new();
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    );
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"24\" font-family=\"sans-serif\" font-size=\"16\" \
         text-anchor=\"middle\">{}</text>\n",
        (MARGIN_L + WIDTH - MARGIN_R) / 2.0,
        escape(title)
    );

    // Axes.
    let x0 = MARGIN_L;
    let x1 = WIDTH - MARGIN_R;
    let y0 = HEIGHT - MARGIN_B;
    let y1 = MARGIN_T;
    let _ = write!(
        svg,
        "<line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x1:.1}\" y2=\"{y0:.1}\" stroke=\"black\"/>\n\
         <line x1=\"{x0:.1}\" y1=\"{y0:.1}\" x2=\"{x0:.1}\" y2=\"{y1:.1}\" stroke=\"black\"/>\n"
    );
    for i in 0..=5 {
        let fx = scale.x_min + (scale.x_max - scale.x_min) * i as f64 / 5.0;
        let fy = scale.y_min + (scale.y_max - scale.y_min) * i as f64 / 5.0;
        let px = scale.x(fx);
        let py = scale.y(fy);
        let _ = write!(
            svg,
            "<line x1=\"{px:.1}\" y1=\"{y0:.1}\" x2=\"{px:.1}\" y2=\"{:.1}\" stroke=\"black\"/>\n\
             <text x=\"{px:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"middle\">{}</text>\n",
            y0 + 5.0,
            y0 + 18.0,
            tick(fx)
        );
        let _ = write!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{x0:.1}\" y2=\"{py:.1}\" stroke=\"black\"/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"11\" \
             text-anchor=\"end\">{}</text>\n",
            x0 - 5.0,
            x0 - 8.0,
            py + 4.0,
            tick(fy)
        );
    }
    let _ = write!(
        svg,
        "<text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\">{}</text>\n",
        (x0 + x1) / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = write!(
        svg,
        "<text x=\"16\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"13\" \
         text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>\n",
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(y_label)
    );

    for (si, s) in series.iter().enumerate() {
        let color = PALETTE[si % PALETTE.len()];
        // Band polygon: upper edge forward, lower edge backward.
        if let Some(band) = &s.band {
            let mut poly = String::new();
            let mut back = Vec::new();
            for (&(x, _), &(lo, hi)) in s.points.iter().zip(band.iter()) {
                if !x.is_finite() || !lo.is_finite() || !hi.is_finite() {
                    warn_skip(&s.label, x);
                    continue;
                }
                let _ = write!(poly, "{:.2},{:.2} ", scale.x(x), scale.y(hi));
                back.push((scale.x(x), scale.y(lo)));
            }
            for (px, py) in back.into_iter().rev() {
                let _ = write!(poly, "{px:.2},{py:.2} ");
            }
            let _ = write!(
                svg,
                "<polygon points=\"{}\" fill=\"{color}\" opacity=\"0.18\" stroke=\"none\"/>\n",
                poly.trim_end()
            );
        }
        // Polyline segments, interrupted at skipped points.
        let dash = match si % 3 {
            0 => "",
            1 => " stroke-dasharray=\"7 3\"",
            _ => " stroke-dasharray=\"2 3\"",
        };
        let mut segment = String::new();
        let mut count = 0usize;
        let flush = |seg: &mut String, count: &mut usize, svg: &mut String| {
            if *count >= 1 {
                let _ = write!(
                    svg,
                    "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" \
                     stroke-width=\"1.8\"{dash}/>\n",
                    seg.trim_end()
                );
            }
            seg.clear();
            *count = 0;
        };
        for &(x, y) in &s.points {
            if !x.is_finite() || !y.is_finite() {
                warn_skip(&s.label, x);
                flush(&mut segment, &mut count, &mut svg);
                continue;
            }
            let _ = write!(segment, "{:.2},{:.2} ", scale.x(x), scale.y(y));
            count += 1;
        }
        flush(&mut segment, &mut count, &mut svg);

        // Legend entry.
        let ly = MARGIN_T + 18.0 * si as f64 + 10.0;
        let _ = write!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{ly:.1}\" x2=\"{:.1}\" y2=\"{ly:.1}\" stroke=\"{color}\" \
             stroke-width=\"2\"{dash}/>\n\
             <text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"12\">{}</text>\n",
            x1 + 10.0,
            x1 + 40.0,
            x1 + 46.0,
            ly + 4.0,
            escape(&s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn warn_skip(label: &str, x: f64) {
    eprintln!("chart: skipping non-finite point in series `{label}` near x = {x}");
}

fn tick(v: f64) -> String {
    if v == 0.0 {
        return "0".into();
    }
    let a = v.abs();
    if (0.01..10000.0).contains(&a) {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
