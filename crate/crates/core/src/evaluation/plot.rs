use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::signal;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 300.0;
const MARGIN: f64 = 40.0;

fn zscore(x: &[f64]) -> Vec<f64> {
    let m = signal::mean(x);
    let s = signal::std(x);
    if s > 0.0 {
        x.iter().map(|v| (v - m) / s).collect()
    } else {
        vec![0.0; x.len()]
    }
}

fn polyline(y: &[f64], fs: f64, t_max: f64, lo: f64, hi: f64, colour: &str) -> String {
    let mut pts = String::new();
    let span = (hi - lo).max(1e-12);
    for (i, v) in y.iter().enumerate() {
        let px = MARGIN + (i as f64 / fs) / t_max * (WIDTH - 2.0 * MARGIN);
        let py = HEIGHT - MARGIN - (v - lo) / span * (HEIGHT - 2.0 * MARGIN);
        let _ = write!(pts, "{px:.1},{py:.1} ");
    }
    format!(r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#, pts.trim_end())
}

/// Standardised predicted trend against ground-truth tonic EDA as an SVG line chart.
pub fn write_trend_svg(path: &Path, title: &str, predicted: &[f64], tonic: &[f64], fs: f64) -> Result<()> {
    let (p, g) = (zscore(predicted), zscore(tonic));
    let lo = p.iter().chain(&g).copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = p.iter().chain(&g).copied().fold(f64::NEG_INFINITY, f64::max).max(0.0);
    let t_max = (p.len().max(g.len()).max(2) - 1) as f64 / fs;
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<line x1="{MARGIN}" y1="{y}" x2="{x2}" y2="{y}" stroke="black"/>"#,
        y = HEIGHT - MARGIN,
        x2 = WIDTH - MARGIN
    );
    let _ = writeln!(
        svg,
        r#"<text x="{x}" y="{y}" font-family="sans-serif" font-size="11" text-anchor="end">{t_max:.0} s</text>"#,
        x = WIDTH - MARGIN,
        y = HEIGHT - MARGIN + 16.0
    );
    let _ = writeln!(svg, "{}", polyline(&g, fs, t_max, lo, hi, "#1f77b4"));
    let _ = writeln!(svg, "{}", polyline(&p, fs, t_max, lo, hi, "#d62728"));
    let _ = writeln!(
        svg,
        r##"<text x="{x}" y="24" font-family="sans-serif" font-size="12" fill="#1f77b4">tonic EDA</text>"##,
        x = WIDTH - 220.0
    );
    let _ = writeln!(
        svg,
        r##"<text x="{x}" y="24" font-family="sans-serif" font-size="12" fill="#d62728">predicted</text>"##,
        x = WIDTH - 120.0
    );
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
