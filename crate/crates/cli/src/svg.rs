//! A single SVG line chart: `n ↦ μ(TⁿA ∩ A)` against the `μ(A)²` line.

use recurlab::rational::to_f64;
use recurlab::Q;
use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

pub fn line_chart(title: &str, points: &[(i64, Q)], reference: &Q) -> String {
    let xs: Vec<f64> = points.iter().map(|(n, _)| *n as f64).collect();
    let ys: Vec<f64> = points.iter().map(|(_, v)| to_f64(v)).collect();
    let r = to_f64(reference);
    let (x0, x1) = bounds(&xs, 0.0);
    let (y0, y1) = bounds(&ys, r);
    let y0 = y0.min(0.0);
    let sx = |x: f64| PAD + (x - x0) / (x1 - x0) * (W - 2.0 * PAD);
    let sy = |y: f64| H - PAD - (y - y0) / (y1 - y0) * (H - 2.0 * PAD);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#);
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD
    );
    let _ = writeln!(s, r#"<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{:.2}" stroke="black"/>"#, H - PAD);
    let _ = writeln!(
        s,
        r#"<line x1="{PAD}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="red" stroke-dasharray="4 3"/>"#,
        sy(r),
        W - PAD,
        sy(r)
    );
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" fill="red">μ(A)²</text>"#, W - PAD + 4.0, sy(r) + 4.0);
    if !points.is_empty() {
        let mut path = String::new();
        for (x, y) in xs.iter().zip(&ys) {
            let _ = write!(path, "{:.2},{:.2} ", sx(*x), sy(*y));
        }
        let _ = writeln!(s, r#"<polyline fill="none" stroke="steelblue" stroke-width="1.5" points="{}"/>"#, path.trim_end());
    }
    let _ = writeln!(s, r#"<text x="{PAD}" y="{:.2}" font-family="sans-serif" font-size="11">n = {x0}</text>"#, H - PAD + 16.0);
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11" text-anchor="end">n = {x1}</text>"#, W - PAD, H - PAD + 16.0);
    s.push_str("</svg>\n");
    s
}

fn bounds(v: &[f64], extra: f64) -> (f64, f64) {
    let lo = v.iter().copied().fold(extra, f64::min);
    let hi = v.iter().copied().fold(extra, f64::max);
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 1.0, hi + 1.0)
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
