//! Self-contained SVG line charts of per-boundary metrics.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const PANEL_HEIGHT: f64 = 260.0;
const MARGIN_LEFT: f64 = 60.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 50.0;

#[derive(Clone, Debug)]
pub struct Panel {
    pub title: String,
    pub y_label: String,
    pub values: Vec<f64>,
    /// Dashed horizontal reference line.
    pub reference: Option<f64>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Stacks one panel per metric over a shared boundary axis.
pub fn render(labels: &[String], panels: &[Panel]) -> String {
    let height = PANEL_HEIGHT * panels.len().max(1) as f64;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{height}" viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (i, panel) in panels.iter().enumerate() {
        draw_panel(&mut svg, labels, panel, i as f64 * PANEL_HEIGHT);
    }
    svg.push_str("</svg>\n");
    svg
}

fn draw_panel(svg: &mut String, labels: &[String], panel: &Panel, top: f64) {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = PANEL_HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let (x0, y0) = (MARGIN_LEFT, top + MARGIN_TOP);

    let mut lo = panel.values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut hi = panel.values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if let Some(r) = panel.reference {
        lo = lo.min(r);
        hi = hi.max(r);
    }
    if !lo.is_finite() || !hi.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    lo = lo.min(0.0);
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let n = labels.len().max(1);
    let x_at = |i: usize| x0 + plot_w * (i as f64 + 0.5) / n as f64;
    let y_at = |v: f64| y0 + plot_h * (1.0 - (v - lo) / (hi - lo));

    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-size="13">{}</text>"#,
        x0 + plot_w / 2.0,
        top + 18.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{x0}" y="{y0}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let y = y_at(v);
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"##,
            x0 + plot_w,
            x0 - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" transform="rotate(-90 14 {:.2})" text-anchor="middle">{}</text>"#,
        y0 + plot_h / 2.0,
        y0 + plot_h / 2.0,
        escape(&panel.y_label)
    );
    for (i, label) in labels.iter().enumerate() {
        let _ = writeln!(
            svg,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end" transform="rotate(-35 {:.2} {:.2})">{}</text>"#,
            x_at(i),
            y0 + plot_h + 14.0,
            x_at(i),
            y0 + plot_h + 14.0,
            escape(label)
        );
    }
    if let Some(r) = panel.reference {
        let _ = writeln!(
            svg,
            r##"<line x1="{x0}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#c33" stroke-dasharray="5,4"/>"##,
            x0 + plot_w,
            y = y_at(r)
        );
    }
    let points: Vec<String> = panel
        .values
        .iter()
        .enumerate()
        .filter(|(_, v)| v.is_finite())
        .map(|(i, &v)| format!("{:.2},{:.2}", x_at(i), y_at(v)))
        .collect();
    let _ = writeln!(
        svg,
        r##"<polyline points="{}" fill="none" stroke="#1f5fa8" stroke-width="2"/>"##,
        points.join(" ")
    );
    for p in &points {
        let (cx, cy) = p.split_once(',').expect("formatted pair");
        let _ = writeln!(svg, r##"<circle cx="{cx}" cy="{cy}" r="3" fill="#1f5fa8"/>"##);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_one_polyline_per_panel() {
        let labels: Vec<String> = ["A", "B<", "C"].iter().map(|s| s.to_string()).collect();
        let svg = render(
            &labels,
            &[
                Panel {
                    title: "SSIM".into(),
                    y_label: "mean SSIM".into(),
                    values: vec![0.6, 0.3, 0.1],
                    reference: Some(0.2),
                },
                Panel {
                    title: "Runtime".into(),
                    y_label: "seconds".into(),
                    values: vec![1.0, 2.0, 3.0],
                    reference: None,
                },
            ],
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 6);
        assert!(svg.contains("B&lt;"));
        assert!(svg.contains("stroke-dasharray"));
    }
}
