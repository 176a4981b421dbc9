//! Minimal SVG line plots: polylines plus a dashed reference level. No
//! plotting dependency, no timestamps, byte-stable output.

use std::fmt::Write as _;

pub struct LinePlot {
    title: String,
    width: f64,
    height: f64,
    series: Vec<Vec<(f64, f64)>>,
    reference: Option<f64>,
}

impl LinePlot {
    pub fn new(title: &str) -> Self {
        Self {
            title: title.to_string(),
            width: 720.0,
            height: 420.0,
            series: Vec::new(),
            reference: None,
        }
    }

    pub fn add_series(&mut self, points: Vec<(f64, f64)>) {
        if points.len() >= 2 {
            self.series.push(points);
        }
    }

    /// Horizontal dashed reference line at `y`.
    pub fn reference_level(&mut self, y: f64) {
        self.reference = Some(y);
    }

    pub fn render(&self) -> String {
        let margin = 50.0;
        let (w, h) = (self.width, self.height);
        let mut xs: Vec<f64> = Vec::new();
        let mut ys: Vec<f64> = Vec::new();
        for s in &self.series {
            for (x, y) in s {
                if x.is_finite() && y.is_finite() {
                    xs.push(*x);
                    ys.push(*y);
                }
            }
        }
        if let Some(r) = self.reference {
            ys.push(r);
        }
        let (x_min, x_max) = span(&xs);
        let (y_min, y_max) = span(&ys);
        let sx = |x: f64| margin + (x - x_min) / (x_max - x_min).max(1e-300) * (w - 2.0 * margin);
        let sy =
            |y: f64| h - margin - (y - y_min) / (y_max - y_min).max(1e-300) * (h - 2.0 * margin);

        let mut out = String::new();
        let _ = writeln!(
            out,
            "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {w} {h}\" width=\"{w}\" height=\"{h}\">"
        );
        let _ = writeln!(out, "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>");
        let _ = writeln!(
            out,
            "<text x=\"{}\" y=\"24\" font-family=\"monospace\" font-size=\"14\">{}</text>",
            margin, self.title
        );
        // Axes.
        let _ = writeln!(
            out,
            "<line x1=\"{m}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>",
            m = margin,
            y0 = h - margin,
            x1 = w - margin
        );
        let _ = writeln!(
            out,
            "<line x1=\"{m}\" y1=\"{m}\" x2=\"{m}\" y2=\"{y0}\" stroke=\"black\"/>",
            m = margin,
            y0 = h - margin
        );
        // Axis extent labels.
        for (v, x, y, anchor) in [
            (x_min, sx(x_min), h - margin + 16.0, "middle"),
            (x_max, sx(x_max), h - margin + 16.0, "middle"),
            (y_min, margin - 6.0, sy(y_min), "end"),
            (y_max, margin - 6.0, sy(y_max), "end"),
        ] {
            let _ = writeln!(
                out,
                "<text x=\"{x:.2}\" y=\"{y:.2}\" font-family=\"monospace\" font-size=\"11\" text-anchor=\"{anchor}\">{v:.4}</text>"
            );
        }
        if let Some(r) = self.reference {
            let y = sy(r);
            let _ = writeln!(
                out,
                "<line x1=\"{m}\" y1=\"{y:.3}\" x2=\"{x1}\" y2=\"{y:.3}\" stroke=\"crimson\" stroke-dasharray=\"6 4\"/>",
                m = margin,
                x1 = w - margin
            );
        }
        for (i, s) in self.series.iter().enumerate() {
            let shade = 40 + (i * 37) % 160;
            let mut points = String::new();
            for (x, y) in s {
                if x.is_finite() && y.is_finite() {
                    let _ = write!(points, "{:.3},{:.3} ", sx(*x), sy(*y));
                }
            }
            let _ = writeln!(
                out,
                "<polyline fill=\"none\" stroke=\"rgb({shade},{shade},200)\" stroke-width=\"1\" points=\"{}\"/>",
                points.trim_end()
            );
        }
        out.push_str("</svg>\n");
        out
    }
}

fn span(values: &[f64]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for v in values {
        lo = lo.min(*v);
        hi = hi.max(*v);
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_polyline_and_reference() {
        let mut p = LinePlot::new("rates");
        p.add_series(vec![(0.0, -1.0), (1.0, -0.9), (2.0, -1.1)]);
        p.reference_level(-0.5);
        let svg = p.render();
        assert!(svg.contains("<polyline"));
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.starts_with("<svg"));
    }
}
