//! Hand-written SVG line plots.

use std::fmt::Write as _;

use anyhow::{bail, Result};

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 130.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;

pub struct Series<'a> {
    pub name: &'a str,
    pub color: &'a str,
    pub values: Vec<f64>,
}

pub struct Plot<'a> {
    pub title: &'a str,
    pub y_label: &'a str,
    pub series: Vec<Series<'a>>,
    pub reference: Option<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

struct Frame {
    n: usize,
    y_max: f64,
}

impl Frame {
    fn x(&self, i: usize) -> f64 {
        let span = (self.n.max(2) - 1) as f64;
        LEFT + (WIDTH - LEFT - RIGHT) * i as f64 / span
    }

    fn y(&self, v: f64) -> f64 {
        let h = HEIGHT - TOP - BOTTOM;
        TOP + h * (1.0 - v / self.y_max)
    }
}

/// Renders the plot. Every series must be non-empty, finite and of equal length.
pub fn render(plot: &Plot) -> Result<String> {
    let Some(first) = plot.series.first() else {
        bail!("{}: nothing to plot", plot.title);
    };
    let n = first.values.len();
    if n == 0 {
        bail!("{}: series `{}` is empty", plot.title, first.name);
    }
    for s in &plot.series {
        if s.values.len() != n {
            bail!(
                "{}: series `{}` has {} points, expected {n}",
                plot.title,
                s.name,
                s.values.len()
            );
        }
        if let Some(i) = s.values.iter().position(|v| !v.is_finite()) {
            bail!(
                "{}: series `{}` is not finite at step {i}",
                plot.title,
                s.name
            );
        }
    }
    if let Some(r) = plot.reference {
        if !r.is_finite() {
            bail!("reference loss must be finite, got {r}");
        }
    }
    let data_max = plot
        .series
        .iter()
        .flat_map(|s| s.values.iter().copied())
        .chain(plot.reference)
        .fold(0.0f64, f64::max);
    let y_max = if data_max > 0.0 { data_max * 1.05 } else { 1.0 };
    let frame = Frame { n, y_max };

    let mut out = String::new();
    let _ = writeln!(out, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        out,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        WIDTH / 2.0,
        escape(plot.title)
    );

    let (x0, x1) = (frame.x(0), frame.x(n.max(2) - 1));
    let (y0, y1) = (frame.y(0.0), frame.y(y_max));
    let _ = writeln!(out, r#"<g class="axes" stroke="black" stroke-width="1">"#);
    let _ = writeln!(
        out,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x1:.2}" y2="{y0:.2}"/>"#
    );
    let _ = writeln!(
        out,
        r#"<line x1="{x0:.2}" y1="{y0:.2}" x2="{x0:.2}" y2="{y1:.2}"/>"#
    );
    let _ = writeln!(out, "</g>");

    let _ = writeln!(out, r#"<g class="ticks">"#);
    for k in 0..=TICKS {
        let v = y_max * k as f64 / TICKS as f64;
        let y = frame.y(v);
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{x0:.2}" y2="{y:.2}" stroke="black"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            x0 - 4.0,
            x0 - 6.0,
            y + 4.0,
            fmt_tick(v)
        );
        let step = ((n - 1) as f64 * k as f64 / TICKS as f64).round() as usize;
        let x = frame.x(step);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{y0:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/><text x="{x:.2}" y="{:.2}" text-anchor="middle">{step}</text>"#,
            y0 + 4.0,
            y0 + 18.0
        );
    }
    let _ = writeln!(out, "</g>");
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">step</text>"#,
        (x0 + x1) / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        (y0 + y1) / 2.0,
        (y0 + y1) / 2.0,
        escape(plot.y_label)
    );

    for (k, s) in plot.series.iter().enumerate() {
        let points: Vec<String> = s
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| format!("{:.2},{:.2}", frame.x(i), frame.y(*v)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="{}" stroke-width="1.5" points="{}"/>"#,
            escape(s.name),
            escape(s.color),
            points.join(" ")
        );
        let ly = TOP + 16.0 * k as f64 + 10.0;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="2"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 20.0,
            escape(s.color),
            lx + 26.0,
            ly + 4.0,
            escape(s.name)
        );
    }

    if let Some(r) = plot.reference {
        let y = frame.y(r);
        let _ = writeln!(
            out,
            r#"<line class="offline-loss" data-value="{r}" x1="{x0:.2}" y1="{y:.2}" x2="{x1:.2}" y2="{y:.2}" stroke="black" stroke-dasharray="6 4"/>"#
        );
        let ly = TOP + 16.0 * plot.series.len() as f64 + 10.0;
        let lx = WIDTH - RIGHT + 12.0;
        let _ = writeln!(
            out,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="black" stroke-dasharray="6 4"/><text x="{:.2}" y="{:.2}">offline</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0
        );
    }
    let _ = writeln!(out, "</svg>");
    Ok(out)
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 0.01 {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}
