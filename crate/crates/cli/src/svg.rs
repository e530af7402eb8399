//! Minimal line-chart SVG writer: one polyline per series, linear or log
//! axes, tick labels and a legend.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 64.0;
const COLORS: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf",
];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// Drawn as a reference curve: grey and dashed, no legend entry.
    pub reference: bool,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            label: label.into(),
            points,
            reference: false,
        }
    }

    pub fn reference(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series {
            reference: true,
            ..Series::new(label, points)
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub log_y: bool,
    pub series: Vec<Series>,
    /// Fixed data window `(x0, x1, y0, y1)`; otherwise fitted to the
    /// non-reference series.
    pub window: Option<(f64, f64, f64, f64)>,
}

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Axis {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            let v = if log { v.log10() } else { v };
            if v.is_finite() {
                lo = lo.min(v);
                hi = hi.max(v);
            }
        }
        if !lo.is_finite() {
            (lo, hi) = (0.0, 1.0);
        }
        if hi - lo < 1e-12 * (1.0 + lo.abs()) {
            lo -= 0.5;
            hi += 0.5;
        }
        let pad = 0.04 * (hi - lo);
        Axis {
            lo: lo - pad,
            hi: hi + pad,
            log,
        }
    }

    fn frac(&self, v: f64) -> f64 {
        let v = if self.log { v.log10() } else { v };
        (v - self.lo) / (self.hi - self.lo)
    }

    fn ticks(&self) -> Vec<(f64, String)> {
        if self.log {
            let (a, b) = (self.lo.ceil() as i32, self.hi.floor() as i32);
            let stride = ((b - a) / 6).max(1);
            return (a..=b)
                .step_by(stride as usize)
                .map(|k| (10f64.powi(k), format!("1e{k}")))
                .collect();
        }
        let raw = (self.hi - self.lo) / 5.0;
        let mag = 10f64.powf(raw.log10().floor());
        let step = [1.0, 2.0, 5.0, 10.0]
            .iter()
            .map(|m| m * mag)
            .find(|s| *s >= raw)
            .unwrap_or(10.0 * mag);
        let decimals = (-step.log10().floor()).max(0.0) as usize;
        let first = (self.lo / step).ceil() as i64;
        let last = (self.hi / step).floor() as i64;
        (first..=last)
            .map(|k| {
                let v = k as f64 * step;
                (v, format!("{v:.decimals$}"))
            })
            .collect()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}

impl Chart {
    pub fn render(&self) -> String {
        let data = || {
            self.series
                .iter()
                .filter(|s| !s.reference)
                .flat_map(|s| s.points.iter())
        };
        let (xa, ya) = match self.window {
            Some((x0, x1, y0, y1)) => (
                Axis::fit([x0, x1].into_iter(), self.log_x),
                Axis::fit([y0, y1].into_iter(), self.log_y),
            ),
            None => (
                Axis::fit(data().map(|p| p.0), self.log_x),
                Axis::fit(data().map(|p| p.1), self.log_y),
            ),
        };
        let px = |x: f64| MARGIN + xa.frac(x) * (WIDTH - 2.0 * MARGIN);
        let py = |y: f64| HEIGHT - MARGIN - ya.frac(y) * (HEIGHT - 2.0 * MARGIN);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(
            s,
            r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
        );
        let _ = writeln!(
            s,
            r#"<defs><clipPath id="plot"><rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}"/></clipPath></defs>"#,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
            WIDTH / 2.0,
            MARGIN / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            WIDTH - 2.0 * MARGIN,
            HEIGHT - 2.0 * MARGIN
        );
        for (v, label) in xa.ticks() {
            let x = px(v);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{y0}" x2="{x:.2}" y2="{y1}" stroke="black"/><text x="{x:.2}" y="{ty}" text-anchor="middle">{label}</text>"#,
                y0 = HEIGHT - MARGIN,
                y1 = HEIGHT - MARGIN + 5.0,
                ty = HEIGHT - MARGIN + 18.0
            );
        }
        for (v, label) in ya.ticks() {
            let y = py(v);
            let _ = writeln!(
                s,
                r#"<line x1="{x0}" y1="{y:.2}" x2="{MARGIN}" y2="{y:.2}" stroke="black"/><text x="{tx}" y="{ty:.2}" text-anchor="end">{label}</text>"#,
                x0 = MARGIN - 5.0,
                tx = MARGIN - 8.0,
                ty = y + 4.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            WIDTH / 2.0,
            HEIGHT - 16.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            HEIGHT / 2.0,
            HEIGHT / 2.0,
            escape(&self.y_label)
        );

        let mut color = 0;
        let mut legend = 0;
        for series in &self.series {
            let pts: Vec<String> = series
                .points
                .iter()
                .filter(|(x, y)| {
                    let ok = |v: f64, log: bool| v.is_finite() && (!log || v > 0.0);
                    ok(*x, self.log_x) && ok(*y, self.log_y)
                })
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let style = if series.reference {
                r##"stroke="#888888" stroke-dasharray="6 4""##.to_string()
            } else {
                let c = COLORS[color % COLORS.len()];
                color += 1;
                format!(r#"stroke="{c}""#)
            };
            let _ = writeln!(
                s,
                r#"<polyline clip-path="url(#plot)" fill="none" stroke-width="1.5" {style} points="{}"><title>{}</title></polyline>"#,
                pts.join(" "),
                escape(&series.label)
            );
            if !series.reference {
                let y = MARGIN + 16.0 + 16.0 * legend as f64;
                let x = WIDTH - MARGIN - 150.0;
                let _ = writeln!(
                    s,
                    r#"<line x1="{x}" y1="{y}" x2="{}" y2="{y}" {style} stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                    x + 20.0,
                    x + 26.0,
                    y + 4.0,
                    escape(&series.label)
                );
                legend += 1;
            }
        }
        s.push_str("</svg>\n");
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn polylines(svg: &str) -> Vec<usize> {
        svg.lines()
            .filter(|l| l.starts_with("<polyline"))
            .map(|l| {
                let start = l.find("points=\"").unwrap() + 8;
                let end = start + l[start..].find('"').unwrap();
                l[start..end].split_whitespace().count()
            })
            .collect()
    }

    #[test]
    fn every_point_is_plotted() {
        let chart = Chart {
            title: "t".into(),
            series: vec![
                Series::new("a", (0..50).map(|i| (i as f64, (i * i) as f64)).collect()),
                Series::reference("ref", vec![(0.0, 0.0), (49.0, 2401.0)]),
            ],
            ..Chart::default()
        };
        let svg = chart.render();
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(polylines(&svg), vec![50, 2]);
    }

    #[test]
    fn log_axes_drop_nonpositive_points() {
        let chart = Chart {
            log_x: true,
            log_y: true,
            series: vec![Series::new(
                "e",
                vec![(0.01, 1e-4), (0.02, 4e-4), (0.0, 1.0)],
            )],
            ..Chart::default()
        };
        assert_eq!(polylines(&chart.render()), vec![2]);
    }

    #[test]
    fn labels_are_escaped() {
        let chart = Chart {
            title: "a < b & c".into(),
            ..Chart::default()
        };
        assert!(chart.render().contains("a &lt; b &amp; c"));
    }

    #[test]
    fn linear_ticks_are_round() {
        let axis = Axis {
            lo: 0.0,
            hi: 1.0,
            log: false,
        };
        let labels: Vec<String> = axis.ticks().into_iter().map(|t| t.1).collect();
        assert_eq!(labels, ["0.0", "0.2", "0.4", "0.6", "0.8", "1.0"]);
    }
}
