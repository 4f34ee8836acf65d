//! Static log-log scatter plots with optional fit lines.

use std::fmt::Write;

pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// `ln y = slope ln x + intercept`, drawn across the series' x range.
    pub fit: Option<(f64, f64)>,
}

const W: f64 = 640.0;
const H: f64 = 440.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

/// Decade-aligned range covering `vals` (already log10).
fn range(vals: impl Iterator<Item = f64>) -> Option<(f64, f64)> {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() || !hi.is_finite() {
        return None;
    }
    let (lo, hi) = (lo.floor(), hi.ceil());
    Some(if hi > lo { (lo, hi) } else { (lo, lo + 1.0) })
}

/// Renders the series; points with a non-positive coordinate are skipped.
pub fn loglog(title: &str, xlabel: &str, ylabel: &str, series: &[Series]) -> String {
    let finite = |&(x, y): &(f64, f64)| x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite();
    let pts = || series.iter().flat_map(|s| s.points.iter().copied().filter(finite));
    let (x0, x1) = range(pts().map(|p| p.0.log10())).unwrap_or((0.0, 1.0));
    let (y0, y1) = range(pts().map(|p| p.1.log10())).unwrap_or((0.0, 1.0));
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |lx: f64| LEFT + (lx - x0) / (x1 - x0) * pw;
    let sy = |ly: f64| TOP + (y1 - ly) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(s, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
    for d in x0 as i64..=x1 as i64 {
        let x = sx(d as f64);
        let _ = writeln!(s, r##"<line x1="{x:.1}" y1="{TOP}" x2="{x:.1}" y2="{:.1}" stroke="#ddd"/>"##, TOP + ph);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">1e{d}</text>"#, TOP + ph + 18.0);
    }
    for d in y0 as i64..=y1 as i64 {
        let y = sy(d as f64);
        let _ = writeln!(s, r##"<line x1="{LEFT}" y1="{y:.1}" x2="{:.1}" y2="{y:.1}" stroke="#ddd"/>"##, LEFT + pw);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">1e{d}</text>"#, LEFT - 6.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 16.0, escape(xlabel));
    let _ = writeln!(
        s,
        r#"<text transform="translate(20 {:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + ph / 2.0,
        escape(ylabel)
    );
    for (i, ser) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let own: Vec<(f64, f64)> = ser.points.iter().copied().filter(finite).collect();
        for (x, y) in &own {
            let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#, sx(x.log10()), sy(y.log10()));
        }
        if let (Some((slope, icpt)), Some((lo, hi))) = (ser.fit, range_raw(&own)) {
            let ly = |lx: f64| (slope * lx * std::f64::consts::LN_10 + icpt) / std::f64::consts::LN_10;
            let _ = writeln!(
                s,
                r#"<line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{color}" stroke-dasharray="5 3"/>"#,
                sx(lo),
                sy(ly(lo)),
                sx(hi),
                sy(ly(hi))
            );
        }
        let ly = TOP + 16.0 + 18.0 * i as f64;
        let lx = LEFT + pw + 12.0;
        let _ = writeln!(s, r#"<circle cx="{lx:.1}" cy="{:.1}" r="3.5" fill="{color}"/>"#, ly - 4.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 8.0, escape(&ser.label));
    }
    s.push_str("</svg>\n");
    s
}

/// log10 x range of the points themselves.
fn range_raw(pts: &[(f64, f64)]) -> Option<(f64, f64)> {
    let lo = pts.iter().map(|p| p.0.log10()).fold(f64::INFINITY, f64::min);
    let hi = pts.iter().map(|p| p.0.log10()).fold(f64::NEG_INFINITY, f64::max);
    (lo.is_finite() && hi.is_finite()).then_some((lo, hi))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_points_and_fit() {
        let s = Series {
            label: "a<b".into(),
            points: vec![(0.01, 1.0), (0.1, 10.0), (1.0, 100.0), (-1.0, 1.0)],
            fit: Some((1.0, 100f64.ln())),
        };
        let svg = loglog("t", "x", "y", &[s]);
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<circle").count(), 3 + 1);
        assert!(svg.contains("stroke-dasharray"));
        assert!(svg.contains("a&lt;b"));
    }

    #[test]
    fn empty_plot_is_still_valid() {
        let svg = loglog("t", "x", "y", &[]);
        assert!(svg.trim_end().ends_with("</svg>"));
    }
}
