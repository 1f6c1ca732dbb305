//! Minimal deterministic SVG line charts. Same CSV in, same bytes out.

use std::fmt::Write as _;

pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    pub color: String,
    pub dashed: bool,
}

/// Filled region between an upper and a lower curve (interquartile bands).
#[derive(Debug, Clone)]
pub struct Band {
    pub upper: Vec<(f64, f64)>,
    pub lower: Vec<(f64, f64)>,
    pub color: String,
}

#[derive(Debug, Clone)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub bands: Vec<Band>,
    /// Fixed y range; data-driven when None.
    pub y_range: Option<(f64, f64)>,
}

impl Chart {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Chart {
        Chart {
            title: title.to_string(),
            x_label: x_label.to_string(),
            y_label: y_label.to_string(),
            series: Vec::new(),
            bands: Vec::new(),
            y_range: None,
        }
    }
}

fn fmt(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".to_string()
    } else {
        s.to_string()
    }
}

fn data_bounds(chart: &Chart) -> ((f64, f64), (f64, f64)) {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in &chart.series {
        for &(x, y) in &s.points {
            xs.push(x);
            ys.push(y);
        }
    }
    for b in &chart.bands {
        for &(x, y) in b.upper.iter().chain(&b.lower) {
            xs.push(x);
            ys.push(y);
        }
    }
    let (mut x0, mut x1) = xs
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (mut y0, mut y1) = ys
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if !x0.is_finite() {
        x0 = 0.0;
        x1 = 1.0;
    }
    if !y0.is_finite() {
        y0 = 0.0;
        y1 = 1.0;
    }
    if let Some((lo, hi)) = chart.y_range {
        y0 = lo;
        y1 = hi;
    }
    if x1 == x0 {
        x1 = x0 + 1.0;
    }
    if y1 == y0 {
        y1 = y0 + 1.0;
    }
    ((x0, x1), (y0, y1))
}

/// Renders the chart as a standalone SVG document.
pub fn render(chart: &Chart) -> String {
    let (width, height) = (640.0, 420.0);
    let (ml, mr, mt, mb) = (64.0, 150.0, 40.0, 52.0);
    let (pw, ph) = (width - ml - mr, height - mt - mb);
    let ((x0, x1), (y0, y1)) = data_bounds(chart);
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * pw;
    let py = |y: f64| mt + ph - (y - y0) / (y1 - y0) * ph;

    let mut out = String::new();
    let _ = writeln!(
        out,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\" viewBox=\"0 0 {width} {height}\">"
    );
    let _ = writeln!(out, "<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>");
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"22\" font-family=\"sans-serif\" font-size=\"15\" text-anchor=\"middle\">{}</text>",
        ml + pw / 2.0,
        chart.title
    );

    // axes and ticks
    let _ = writeln!(
        out,
        "<rect x=\"{ml}\" y=\"{mt}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#333\" stroke-width=\"1\"/>"
    );
    for i in 0..=4 {
        let fx = x0 + (x1 - x0) * i as f64 / 4.0;
        let fy = y0 + (y1 - y0) * i as f64 / 4.0;
        let gx = px(fx);
        let gy = py(fy);
        let _ = writeln!(
            out,
            "<line x1=\"{gx}\" y1=\"{}\" x2=\"{gx}\" y2=\"{}\" stroke=\"#ccc\" stroke-width=\"0.5\"/>",
            mt,
            mt + ph
        );
        let _ = writeln!(
            out,
            "<line x1=\"{ml}\" y1=\"{gy}\" x2=\"{}\" y2=\"{gy}\" stroke=\"#ccc\" stroke-width=\"0.5\"/>",
            ml + pw
        );
        let _ = writeln!(
            out,
            "<text x=\"{gx}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{}</text>",
            mt + ph + 16.0,
            fmt(fx)
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{}</text>",
            ml - 6.0,
            gy + 4.0,
            fmt(fy)
        );
    }
    let _ = writeln!(
        out,
        "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\">{}</text>",
        ml + pw / 2.0,
        height - 12.0,
        chart.x_label
    );
    let _ = writeln!(
        out,
        "<text x=\"16\" y=\"{}\" font-family=\"sans-serif\" font-size=\"12\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        mt + ph / 2.0,
        mt + ph / 2.0,
        chart.y_label
    );

    for band in &chart.bands {
        if band.upper.is_empty() {
            continue;
        }
        let mut d = String::new();
        for (i, &(x, y)) in band.upper.iter().enumerate() {
            let _ = write!(d, "{}{},{} ", if i == 0 { "" } else { "" }, fmt(px(x)), fmt(py(y)));
        }
        for &(x, y) in band.lower.iter().rev() {
            let _ = write!(d, "{},{} ", fmt(px(x)), fmt(py(y)));
        }
        let _ = writeln!(
            out,
            "<polygon points=\"{}\" fill=\"{}\" fill-opacity=\"0.2\" stroke=\"none\"/>",
            d.trim_end(),
            band.color
        );
    }

    for s in &chart.series {
        if s.points.is_empty() {
            continue;
        }
        if s.points.len() == 1 {
            let (x, y) = s.points[0];
            let _ = writeln!(
                out,
                "<circle cx=\"{}\" cy=\"{}\" r=\"3\" fill=\"{}\"/>",
                fmt(px(x)),
                fmt(py(y)),
                s.color
            );
            continue;
        }
        let mut d = String::new();
        for &(x, y) in &s.points {
            let _ = write!(d, "{},{} ", fmt(px(x)), fmt(py(y)));
        }
        let dash = if s.dashed { " stroke-dasharray=\"6 3\"" } else { "" };
        let _ = writeln!(
            out,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"{}/>",
            d.trim_end(),
            s.color,
            dash
        );
    }

    // legend
    for (i, s) in chart.series.iter().enumerate() {
        let ly = mt + 14.0 * i as f64 + 8.0;
        let lx = ml + pw + 10.0;
        let dash = if s.dashed { " stroke-dasharray=\"6 3\"" } else { "" };
        let _ = writeln!(
            out,
            "<line x1=\"{lx}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{}\" stroke-width=\"2\"{}/>",
            lx + 18.0,
            s.color,
            dash
        );
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\">{}</text>",
            lx + 23.0,
            ly + 4.0,
            s.label
        );
    }
    out.push_str("</svg>\n");
    out
}
