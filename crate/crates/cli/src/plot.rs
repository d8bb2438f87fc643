//! Minimal SVG line charts for actual-vs-predicted series.

use std::fmt::Write;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 48.0;

pub struct Series<'a> {
    pub label: &'a str,
    pub values: &'a [f64],
    pub colour: &'a str,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Plots every series against its sample index. `description` lands in the
/// SVG `<desc>` element.
pub fn line_chart(title: &str, x_labels: (&str, &str), series: &[Series], description: &str) -> String {
    let finite = series.iter().flat_map(|s| s.values.iter().copied()).filter(|v| v.is_finite());
    let (lo, hi) = finite.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let (lo, hi) = if lo.is_finite() && hi > lo { (lo, hi) } else { (lo.min(0.0), lo.max(0.0) + 1.0) };
    let n = series.iter().map(|s| s.values.len()).max().unwrap_or(0);
    let x = |i: usize| MARGIN + (WIDTH - 2.0 * MARGIN) * i as f64 / (n.max(2) - 1) as f64;
    let y = |v: f64| HEIGHT - MARGIN - (HEIGHT - 2.0 * MARGIN) * (v - lo) / (hi - lo);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, "<desc>{}</desc>", escape(description));
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    let (x0, x1, y0, y1) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" stroke="black" fill="none" stroke-width="1"/>"#
    );
    for (v, yy) in [(hi, y0), (lo, y1)] {
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="10" text-anchor="end">{v:.1}</text>"#,
            x0 - 4.0,
            yy + 3.0
        );
    }
    for (label, xx, anchor) in [(x_labels.0, x0, "start"), (x_labels.1, x1, "end")] {
        let _ = writeln!(
            svg,
            r#"<text x="{xx}" y="{}" font-family="sans-serif" font-size="10" text-anchor="{anchor}">{}</text>"#,
            y1 + 14.0,
            escape(label)
        );
    }
    for (k, s) in series.iter().enumerate() {
        let mut points = String::new();
        for (i, &v) in s.values.iter().enumerate().filter(|(_, v)| v.is_finite()) {
            let _ = write!(points, "{:.2},{:.2} ", x(i), y(v));
        }
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{}" stroke-width="1"/>"#,
            points.trim_end(),
            s.colour
        );
        let ly = 20.0 + 14.0 * k as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{}" stroke-width="2"/><text x="{}" y="{}" font-family="sans-serif" font-size="11">{}</text>"#,
            x1 - 120.0,
            x1 - 100.0,
            s.colour,
            x1 - 95.0,
            ly + 4.0,
            escape(s.label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_one_polyline_per_series() {
        let a = [1.0, 2.0, 3.0];
        let b = [1.5, 2.5, f64::NAN];
        let svg = line_chart(
            "t <1>",
            ("start", "end"),
            &[
                Series { label: "actual", values: &a, colour: "black" },
                Series { label: "predicted", values: &b, colour: "red" },
            ],
            "desc & more",
        );
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("t &lt;1&gt;"));
        assert!(svg.contains("desc &amp; more"));
        assert!(!svg.contains("NaN"));
    }
}
