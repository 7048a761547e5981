//! Minimal static line charts.

use std::fmt::Write;

const WIDTH: f64 = 480.0;
const HEIGHT: f64 = 320.0;
const MARGIN: f64 = 48.0;

fn span(v: &[f64]) -> (f64, f64) {
    let (lo, hi) = v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| {
        (lo.min(x), hi.max(x))
    });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// `x` against `y` with the term name on the horizontal axis and `f(term)`
/// on the vertical axis.
pub fn line_chart(term: &str, x: &[f64], y: &[f64]) -> String {
    let (x0, x1) = span(x);
    let (y0, y1) = span(y);
    let px = |v: f64| MARGIN + (v - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |v: f64| HEIGHT - MARGIN - (v - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);
    let points: Vec<String> = x
        .iter()
        .zip(y)
        .map(|(&a, &b)| format!("{:.2},{:.2}", px(a), py(b)))
        .collect();
    let term = escape(term);

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let (left, right, top, bottom) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        out,
        r#"<path d="M{left},{top} L{left},{bottom} L{right},{bottom}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="black" stroke-width="1.5"/>"#,
        points.join(" ")
    );
    let label = |v: f64| format!("{v:.3}");
    let _ = writeln!(
        out,
        r#"<text x="{left}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
        bottom + 16.0,
        label(x0)
    );
    let _ = writeln!(
        out,
        r#"<text x="{right}" y="{}" font-size="11" text-anchor="middle">{}</text>"#,
        bottom + 16.0,
        label(x1)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{bottom}" font-size="11" text-anchor="end">{}</text>"#,
        left - 4.0,
        label(y0)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="11" text-anchor="end">{}</text>"#,
        left - 4.0,
        top + 4.0,
        label(y1)
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{term}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" font-size="13" text-anchor="middle" transform="rotate(-90 14 {})">f({term})</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_has_one_point_per_sample_and_labels() {
        let svg = line_chart("x1", &[0.0, 1.0, 2.0], &[1.0, 0.0, 1.0]);
        let points = svg.split("points=\"").nth(1).unwrap().split('"').next().unwrap();
        assert_eq!(points.split(' ').count(), 3);
        assert!(svg.contains(">x1</text>") && svg.contains(">f(x1)</text>"));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn flat_curve_does_not_divide_by_zero() {
        let svg = line_chart("a<b", &[1.0, 1.0], &[0.0, 0.0]);
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
        assert!(svg.contains("a&lt;b"));
    }
}
