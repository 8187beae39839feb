//! Self-contained SVG line charts; no rendering dependency.

use std::fmt::Write as _;

const WIDTH: f64 = 900.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 30.0;
const MARGIN_TOP: f64 = 50.0;
const MARGIN_BOTTOM: f64 = 60.0;
const PALETTE: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];
/// Series longer than this are strided down to keep files small.
const MAX_POINTS: usize = 2000;

pub struct Series<'a> {
    pub label: &'a str,
    pub values: Vec<f64>,
}

/// Nice round tick positions covering [lo, hi].
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).abs().max(1e-300);
    let raw_step = span / target as f64;
    let mag = 10f64.powf(raw_step.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| span / s <= target as f64 + 0.5)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() * step;
    let mut out = Vec::new();
    let mut v = first;
    while v <= hi + step * 1e-9 {
        out.push(if v.abs() < step * 1e-9 { 0.0 } else { v });
        v += step;
    }
    out
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        return "0".to_string();
    }
    let a = v.abs();
    if (1e-3..1e4).contains(&a) {
        let s = format!("{v:.4}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

/// Renders one line chart. `ts` is the shared abscissa.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, ts: &[f64], series: &[Series]) -> String {
    assert!(!ts.is_empty());
    let stride = (ts.len() / MAX_POINTS).max(1);

    let (mut y_min, mut y_max) = (f64::INFINITY, f64::NEG_INFINITY);
    for s in series {
        for &v in &s.values {
            y_min = y_min.min(v);
            y_max = y_max.max(v);
        }
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if (y_max - y_min).abs() < 1e-12 {
        y_min -= 0.5;
        y_max += 0.5;
    }
    let pad = 0.05 * (y_max - y_min);
    y_min -= pad;
    y_max += pad;
    let (x_min, x_max) = (ts[0], *ts.last().unwrap());
    let x_span = (x_max - x_min).max(1e-300);

    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_min) / x_span * plot_w;
    let sy = |y: f64| MARGIN_TOP + (y_max - y) / (y_max - y_min) * plot_h;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}">"#
    );
    let _ = write!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{:.1}" y="28" font-family="sans-serif" font-size="18" text-anchor="middle">{title}</text>"#,
        WIDTH / 2.0
    );

    // Grid and ticks.
    for tx in ticks(x_min, x_max, 8) {
        let x = sx(tx);
        let _ = write!(
            svg,
            r##"<line x1="{x:.2}" y1="{MARGIN_TOP}" x2="{x:.2}" y2="{:.2}" stroke="#dddddd" stroke-width="1"/><text x="{x:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="middle">{}</text>"##,
            MARGIN_TOP + plot_h,
            MARGIN_TOP + plot_h + 20.0,
            fmt_tick(tx)
        );
    }
    for ty in ticks(y_min, y_max, 7) {
        let y = sy(ty);
        let _ = write!(
            svg,
            r##"<line x1="{MARGIN_LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#dddddd" stroke-width="1"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="12" text-anchor="end">{}</text>"##,
            MARGIN_LEFT + plot_w,
            MARGIN_LEFT - 8.0,
            y + 4.0,
            fmt_tick(ty)
        );
    }
    // Axes.
    let _ = write!(
        svg,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w:.2}" height="{plot_h:.2}" fill="none" stroke="black" stroke-width="1"/>"#
    );
    let _ = write!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="14" text-anchor="middle">{x_label}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 14.0
    );
    let _ = write!(
        svg,
        r#"<text x="20" y="{:.1}" font-family="sans-serif" font-size="14" text-anchor="middle" transform="rotate(-90 20 {:.1})">{y_label}</text>"#,
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    );

    // Series.
    for (idx, s) in series.iter().enumerate() {
        let color = PALETTE[idx % PALETTE.len()];
        let mut path = String::new();
        for (k, (&t, &v)) in ts.iter().zip(&s.values).enumerate().step_by(stride) {
            let _ = k;
            let cmd = if path.is_empty() { 'M' } else { 'L' };
            let _ = write!(path, "{cmd}{:.2},{:.2}", sx(t), sy(v));
        }
        let _ = write!(
            svg,
            r#"<path d="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>"#
        );
        // Legend.
        let lx = MARGIN_LEFT + 14.0 + idx as f64 * 110.0;
        let ly = MARGIN_TOP + 16.0;
        let _ = write!(
            svg,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{color}" stroke-width="3"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="13">{}</text>"#,
            lx + 26.0,
            lx + 32.0,
            ly + 4.0,
            s.label
        );
    }
    svg.push_str("</svg>\n");
    svg
}
