//! Minimal SVG line charts with ±1σ bands.

use std::fmt::Write;

pub struct Series<'a> {
    pub label: &'a str,
    pub mean: &'a [f64],
    pub std: Option<&'a [f64]>,
}

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 32.0;
const BOTTOM: f64 = 40.0;
const COLOURS: [&str; 6] = ["#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b"];

fn range(series: &[Series<'_>]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for (k, &m) in s.mean.iter().enumerate() {
            let d = s.std.map_or(0.0, |sd| sd[k]);
            lo = lo.min(m - d);
            hi = hi.max(m + d);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 1.0, hi + 1.0);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

pub fn render(title: &str, y_label: &str, series: &[Series<'_>]) -> String {
    let steps = series.iter().map(|s| s.mean.len()).max().unwrap_or(0);
    let (y0, y1) = range(series);
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let x = |k: usize| LEFT + pw * k as f64 / (steps.max(2) - 1) as f64;
    let y = |v: f64| TOP + ph * (1.0 - (v - y0) / (y1 - y0));

    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(out, r#"<text x="{}" y="18" text-anchor="middle" font-size="13">{title}</text>"#, WIDTH / 2.0);
    let _ = writeln!(
        out,
        r#"<path d="M{LEFT} {TOP} V{} H{}" fill="none" stroke="black"/>"#,
        TOP + ph,
        LEFT + pw
    );
    for i in 0..=4 {
        let v = y0 + (y1 - y0) * i as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{yy:.2}" x2="{LEFT}" y2="{yy:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            yy + 4.0
        );
        let k = ((steps.max(1) - 1) as f64 * i as f64 / 4.0).round() as usize;
        let xx = x(k);
        let _ = writeln!(
            out,
            r#"<line x1="{xx:.2}" y1="{}" x2="{xx:.2}" y2="{}" stroke="black"/><text x="{xx:.2}" y="{}" text-anchor="middle">{k}</text>"#,
            TOP + ph,
            TOP + ph + 4.0,
            TOP + ph + 16.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">k</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 6.0
    );
    let _ = writeln!(
        out,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{y_label}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );

    for (i, s) in series.iter().enumerate() {
        let colour = COLOURS[i % COLOURS.len()];
        if let Some(sd) = s.std {
            let mut d = String::new();
            for (k, (&m, &e)) in s.mean.iter().zip(sd).enumerate() {
                let _ = write!(d, "{}{:.2} {:.2} ", if k == 0 { "M" } else { "L" }, x(k), y(m + e));
            }
            for (k, (&m, &e)) in s.mean.iter().zip(sd).enumerate().rev() {
                let _ = write!(d, "L{:.2} {:.2} ", x(k), y(m - e));
            }
            let _ = writeln!(out, r#"<path d="{}Z" fill="{colour}" fill-opacity="0.25" stroke="none"/>"#, d);
        }
        let points: Vec<String> = s
            .mean
            .iter()
            .enumerate()
            .map(|(k, &m)| format!("{:.2},{:.2}", x(k), y(m)))
            .collect();
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.2"/>"#,
            points.join(" ")
        );
        let ly = TOP + 14.0 * (i as f64 + 1.0);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{colour}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            LEFT + pw - 120.0,
            LEFT + pw - 100.0,
            LEFT + pw - 95.0,
            ly + 4.0,
            s.label
        );
    }
    out.push_str("</svg>\n");
    out
}
