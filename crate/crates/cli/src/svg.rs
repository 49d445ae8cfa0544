//! Minimal scatter-plot writer.

use std::fmt::Write;

pub const WIDTH: f64 = 800.0;
pub const HEIGHT: f64 = 600.0;
pub const RADIUS: f64 = 3.0;
const MARGIN: f64 = 40.0;
pub const PALETTE: [&str; 8] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
];

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Point {
    pub x: f64,
    pub y: f64,
    pub group: usize,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Maps `[lo, hi]` onto `[a, b]`; a degenerate range maps to the midpoint.
fn axis(lo: f64, hi: f64, a: f64, b: f64) -> impl Fn(f64) -> f64 {
    move |v| {
        if hi > lo {
            a + (v - lo) / (hi - lo) * (b - a)
        } else {
            (a + b) / 2.0
        }
    }
}

/// One circle per point, colored by `group % 8`. Non-finite points are
/// drawn at the plot center so the marker count always equals the input.
pub fn scatter(title: &str, points: &[Point]) -> String {
    let finite = points.iter().filter(|p| p.x.is_finite() && p.y.is_finite());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for p in finite {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    let sx = axis(x0, x1, MARGIN, WIDTH - MARGIN);
    // SVG y grows downward.
    let sy = axis(y0, y1, HEIGHT - MARGIN, MARGIN);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="16">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for p in points {
        let (cx, cy) = if p.x.is_finite() && p.y.is_finite() {
            (sx(p.x), sy(p.y))
        } else {
            (WIDTH / 2.0, HEIGHT / 2.0)
        };
        let _ = writeln!(
            s,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{RADIUS}" fill="{}" fill-opacity="0.7"/>"#,
            PALETTE[p.group % PALETTE.len()]
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_circle_per_point_inside_the_viewbox() {
        let pts: Vec<Point> = (0..20)
            .map(|i| Point {
                x: i as f64,
                y: (i * i) as f64,
                group: i,
            })
            .collect();
        let s = scatter("a < b & c", &pts);
        assert_eq!(s.matches("<circle").count(), 20);
        assert!(s.contains("a &lt; b &amp; c"));
        assert!(s.contains(r#"viewBox="0 0 800 600""#));
        assert!(s.contains(PALETTE[7]) && s.contains(PALETTE[0]));
        for c in s.lines().filter(|l| l.starts_with("<circle")) {
            let cx: f64 = c.split("cx=\"").nth(1).unwrap().split('"').next().unwrap().parse().unwrap();
            assert!((MARGIN..=WIDTH - MARGIN).contains(&cx));
        }
    }

    #[test]
    fn degenerate_and_non_finite_points_still_drawn() {
        let pts = [
            Point { x: 1.0, y: 1.0, group: 0 },
            Point { x: 1.0, y: 1.0, group: 1 },
            Point { x: f64::NAN, y: 0.0, group: 2 },
        ];
        let s = scatter("t", &pts);
        assert_eq!(s.matches("<circle").count(), 3);
        assert!(!s.contains("NaN"));
    }
}
