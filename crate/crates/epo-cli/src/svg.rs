//! Minimal static SVG line charts: mean lines with optional min-max bands.
//! Hand-rolled so chart output is a deterministic function of the data.

use std::fmt::Write;

pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: &'a [(f64, f64)],
    /// Optional (x, lo, hi) envelope rendered as a translucent band.
    pub band: Option<&'a [(f64, f64, f64)]>,
}

pub const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

const W: f64 = 800.0;
const H: f64 = 480.0;
const ML: f64 = 64.0;
const MR: f64 = 24.0;
const MT: f64 = 42.0;
const MB: f64 = 52.0;

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v.abs() >= 1000.0 || v.abs() < 0.01 {
        format!("{v:.1e}")
    } else {
        format!("{v:.2}")
    }
}

pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let mut xs: Vec<f64> = Vec::new();
    let mut ys: Vec<f64> = Vec::new();
    for s in series {
        for &(x, y) in s.points {
            xs.push(x);
            ys.push(y);
        }
        if let Some(band) = s.band {
            for &(x, lo, hi) in band {
                xs.push(x);
                ys.push(lo);
                ys.push(hi);
            }
        }
    }
    let mut out = String::new();
    write!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    )
    .unwrap();
    write!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    write!(
        out,
        r#"<text x="{:.1}" y="24" font-family="sans-serif" font-size="16" text-anchor="middle">{title}</text>"#,
        W / 2.0
    )
    .unwrap();

    if xs.is_empty() {
        write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="14" text-anchor="middle">no data</text></svg>"#,
            W / 2.0,
            H / 2.0
        )
        .unwrap();
        return out;
    }

    let (x_min, x_max) = bounds(&xs);
    let (mut y_min, mut y_max) = bounds(&ys);
    if (y_max - y_min).abs() < 1e-12 {
        y_min -= 1.0;
        y_max += 1.0;
    } else {
        let pad = (y_max - y_min) * 0.05;
        y_min -= pad;
        y_max += pad;
    }
    let x_span = (x_max - x_min).max(1e-12);
    let sx = move |x: f64| ML + (x - x_min) / x_span * (W - ML - MR);
    let sy = move |y: f64| H - MB - (y - y_min) / (y_max - y_min) * (H - MT - MB);

    // Axes, grid, ticks.
    for i in 0..=4 {
        let fx = x_min + x_span * i as f64 / 4.0;
        let px = sx(fx);
        write!(
            out,
            r##"<line x1="{px:.1}" y1="{MT}" x2="{px:.1}" y2="{:.1}" stroke="#dddddd"/>"##,
            H - MB
        )
        .unwrap();
        write!(
            out,
            r#"<text x="{px:.1}" y="{:.1}" font-family="sans-serif" font-size="11" text-anchor="middle">{}</text>"#,
            H - MB + 16.0,
            fmt_tick(fx)
        )
        .unwrap();
        let fy = y_min + (y_max - y_min) * i as f64 / 4.0;
        let py = sy(fy);
        write!(out, r##"<line x1="{ML}" y1="{py:.1}" x2="{:.1}" y2="{py:.1}" stroke="#dddddd"/>"##, W - MR)
            .unwrap();
        write!(
            out,
            r#"<text x="{:.1}" y="{py:.1}" font-family="sans-serif" font-size="11" text-anchor="end">{}</text>"#,
            ML - 6.0,
            fmt_tick(fy)
        )
        .unwrap();
    }
    write!(
        out,
        r#"<line x1="{ML}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black"/><line x1="{ML}" y1="{MT}" x2="{ML}" y2="{:.1}" stroke="black"/>"#,
        H - MB,
        W - MR,
        H - MB,
        H - MB
    )
    .unwrap();
    write!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle">{x_label}</text>"#,
        (ML + W - MR) / 2.0,
        H - 14.0
    )
    .unwrap();
    write!(
        out,
        r#"<text x="16" y="{:.1}" font-family="sans-serif" font-size="13" text-anchor="middle" transform="rotate(-90 16 {:.1})">{y_label}</text>"#,
        (MT + H - MB) / 2.0,
        (MT + H - MB) / 2.0
    )
    .unwrap();

    for s in series {
        if let Some(band) = s.band {
            if band.len() > 1 {
                let mut d = String::new();
                for (i, &(x, _, hi)) in band.iter().enumerate() {
                    let cmd = if i == 0 { 'M' } else { 'L' };
                    write!(d, "{cmd}{:.1},{:.1} ", sx(x), sy(hi)).unwrap();
                }
                for &(x, lo, _) in band.iter().rev() {
                    write!(d, "L{:.1},{:.1} ", sx(x), sy(lo)).unwrap();
                }
                d.push('Z');
                write!(out, r#"<path d="{d}" fill="{}" fill-opacity="0.15" stroke="none"/>"#, s.color)
                    .unwrap();
            }
        }
    }
    for s in series {
        if s.points.len() == 1 {
            let (x, y) = s.points[0];
            write!(out, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{}"/>"#, sx(x), sy(y), s.color)
                .unwrap();
        } else if !s.points.is_empty() {
            let pts: Vec<String> =
                s.points.iter().map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y))).collect();
            write!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1.8"/>"#,
                pts.join(" "),
                s.color
            )
            .unwrap();
        }
    }
    // Legend, top-right.
    for (i, s) in series.iter().enumerate() {
        let y = MT + 14.0 * i as f64 + 4.0;
        write!(
            out,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="{}" stroke-width="2"/>"#,
            W - MR - 130.0,
            W - MR - 106.0,
            s.color
        )
        .unwrap();
        write!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="11">{}</text>"#,
            W - MR - 100.0,
            y + 4.0,
            s.label
        )
        .unwrap();
    }
    out.push_str("</svg>");
    out
}

fn bounds(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_polyline_and_labels() {
        let points = [(0.0, 0.1), (5.0, 0.4), (10.0, 0.9)];
        let band = [(0.0, 0.05, 0.2), (5.0, 0.3, 0.5), (10.0, 0.8, 1.0)];
        let series = [Series { label: "mean", color: PALETTE[0], points: &points, band: Some(&band) }];
        let svg = line_chart("Success", "step", "rate", &series);
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("fill-opacity"));
        assert!(svg.contains("Success"));
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>"));
    }

    #[test]
    fn empty_chart_says_no_data() {
        let svg = line_chart("Empty", "x", "y", &[]);
        assert!(svg.contains("no data"));
    }

    #[test]
    fn chart_output_is_deterministic() {
        let points = [(0.0, 1.0), (1.0, 2.0)];
        let series = [Series { label: "a", color: "#000000", points: &points, band: None }];
        assert_eq!(
            line_chart("t", "x", "y", &series),
            line_chart("t", "x", "y", &series)
        );
    }
}
