//! Minimal line and scatter plots as standalone SVG.

use std::fmt::Write;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Style {
    Line,
    Scatter,
}

#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub style: Style,
}

#[derive(Debug, Clone, Default)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const COLORS: [&str; 5] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e"];
const W: f64 = 640.0;
const H: f64 = 420.0;
const M: f64 = 56.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

impl Plot {
    pub fn new(title: &str, x_label: &str, y_label: &str) -> Self {
        Self { title: title.into(), x_label: x_label.into(), y_label: y_label.into(), series: Vec::new() }
    }

    pub fn with(mut self, name: &str, points: Vec<(f64, f64)>, style: Style) -> Self {
        self.series.push(Series { name: name.into(), points, style });
        self
    }

    pub fn render(&self, comment: &str) -> String {
        let pts = self.series.iter().flat_map(|s| s.points.iter()).filter(|(x, y)| x.is_finite() && y.is_finite());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 <= 0.0 {
            x1 = x0 + 1.0;
        }
        if y1 - y0 <= 0.0 {
            y1 = y0 + 1.0;
        }
        let sx = |x: f64| M + (x - x0) / (x1 - x0) * (W - 2.0 * M);
        let sy = |y: f64| H - M - (y - y0) / (y1 - y0) * (H - 2.0 * M);
        let mut s = String::new();
        let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
        let _ = writeln!(s, "<!-- {} -->", escape(comment));
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<rect x="{M}" y="{M}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - 2.0 * M,
            H - 2.0 * M
        );
        let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, escape(&self.title));
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{}</text>"#, W / 2.0, H - 14.0, escape(&self.x_label));
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" font-size="12" transform="rotate(-90 16 {})">{}</text>"#,
            H / 2.0,
            H / 2.0,
            escape(&self.y_label)
        );
        for (v, anchor, x, y) in [
            (x0, "start", M, H - M + 16.0),
            (x1, "end", W - M, H - M + 16.0),
            (y0, "end", M - 4.0, H - M),
            (y1, "end", M - 4.0, M + 10.0),
        ] {
            let _ = writeln!(s, r#"<text x="{x}" y="{y}" text-anchor="{anchor}" font-size="10">{v:.4}</text>"#);
        }
        for (k, series) in self.series.iter().enumerate() {
            let color = COLORS[k % COLORS.len()];
            match series.style {
                Style::Line => {
                    let path: Vec<String> = series
                        .points
                        .iter()
                        .filter(|(x, y)| x.is_finite() && y.is_finite())
                        .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                        .collect();
                    let _ = writeln!(s, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
                }
                Style::Scatter => {
                    for &(x, y) in series.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()) {
                        let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="2" fill="{color}"/>"#, sx(x), sy(y));
                    }
                }
            }
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-size="11" fill="{color}">{}</text>"#,
                W - M - 150.0,
                M + 16.0 + 14.0 * k as f64,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_well_formed_document() {
        let p = Plot::new("a < b", "x", "y")
            .with("line", vec![(0.0, 0.0), (1.0, 2.0)], Style::Line)
            .with("dots", vec![(0.5, 1.0), (f64::NAN, 1.0)], Style::Scatter);
        let s = p.render("seed=1");
        assert!(s.starts_with("<svg") && s.ends_with("</svg>\n"));
        assert!(s.contains("a &lt; b"));
        assert_eq!(s.matches("<circle").count(), 1);
        assert!(s.contains("<polyline"));
    }

    #[test]
    fn empty_plot_still_renders() {
        let s = Plot::new("empty", "x", "y").render("");
        assert!(s.contains("</svg>"));
    }
}
