use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

/// Fixed geometry of the stacked-trace plot. Scales are constant so plots of
/// different files are visually comparable.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PlotStyle {
    pub width: f64,
    /// Vertical space per trace, px.
    pub row_height: f64,
    /// Vertical scale, px per millivolt.
    pub px_per_mv: f64,
    pub margin_left: f64,
    pub margin_top: f64,
    pub margin_bottom: f64,
}

impl Default for PlotStyle {
    fn default() -> Self {
        PlotStyle { width: 900.0, row_height: 110.0, px_per_mv: 45.0, margin_left: 120.0, margin_top: 20.0, margin_bottom: 40.0 }
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// SVG with one polyline per trace, stacked top to bottom at fixed offsets.
/// X axis in samples, Y in millivolts (a 1 mV scale bar per row).
pub fn render_svg(traces: &[Vec<f32>], labels: &[String], style: &PlotStyle) -> Result<String> {
    if traces.is_empty() {
        return Err(Error::Parameter("plot needs at least one trace".into()));
    }
    let len = traces.iter().map(Vec::len).max().unwrap_or(0).max(2);
    let plot_w = style.width - style.margin_left - 20.0;
    let height = style.margin_top + style.row_height * traces.len() as f64 + style.margin_bottom;
    let x_of = |i: usize| style.margin_left + plot_w * i as f64 / (len - 1) as f64;
    let axis_y = style.margin_top + style.row_height * traces.len() as f64;

    let mut s = String::new();
    let w = &mut s;
    writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{:.0}" height="{:.0}" viewBox="0 0 {:.0} {:.0}">"#,
        style.width, height, style.width, height
    )
    .unwrap();
    writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#).unwrap();
    writeln!(
        w,
        r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        style.margin_left, axis_y, style.margin_left + plot_w, axis_y
    )
    .unwrap();
    let tick_step = if len > 200 { 100 } else { (len / 4).max(1) };
    for t in (0..len).step_by(tick_step) {
        let x = x_of(t);
        writeln!(w, r#"<line x1="{x:.2}" y1="{axis_y:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, axis_y + 5.0).unwrap();
        writeln!(
            w,
            r#"<text x="{x:.2}" y="{:.2}" font-size="11" text-anchor="middle">{t}</text>"#,
            axis_y + 18.0
        )
        .unwrap();
    }
    writeln!(
        w,
        r#"<text x="{:.2}" y="{:.2}" font-size="12" text-anchor="middle">sample</text>"#,
        style.margin_left + plot_w / 2.0,
        axis_y + 34.0
    )
    .unwrap();

    for (k, trace) in traces.iter().enumerate() {
        let base = style.margin_top + style.row_height * (k as f64 + 0.5);
        let label = labels.get(k).map(String::as_str).unwrap_or("");
        writeln!(w, r#"<text x="4" y="{:.2}" font-size="11">{}</text>"#, base + 4.0, escape(label)).unwrap();
        // 1 mV scale bar with its zero line
        let bar_x = style.margin_left - 10.0;
        writeln!(
            w,
            r#"<line x1="{bar_x:.2}" y1="{base:.2}" x2="{bar_x:.2}" y2="{:.2}" stroke="gray"/>"#,
            base - style.px_per_mv
        )
        .unwrap();
        writeln!(
            w,
            r#"<text x="{:.2}" y="{:.2}" font-size="9" text-anchor="end">1 mV</text>"#,
            bar_x - 3.0,
            base - style.px_per_mv / 2.0
        )
        .unwrap();
        writeln!(
            w,
            r##"<line x1="{:.2}" y1="{base:.2}" x2="{:.2}" y2="{base:.2}" stroke="#dddddd"/>"##,
            style.margin_left,
            style.margin_left + plot_w
        )
        .unwrap();
        let points: Vec<String> = trace
            .iter()
            .enumerate()
            .map(|(i, &v)| format!("{:.2},{:.2}", x_of(i), base - v as f64 * style.px_per_mv))
            .collect();
        writeln!(
            w,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="1.2" points="{}"/>"#,
            points.join(" ")
        )
        .unwrap();
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn emit_plot(traces: &[Vec<f32>], labels: &[String], path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, render_svg(traces, labels, &PlotStyle::default())?)?;
    Ok(())
}
