//! Minimal SVG line plots of aggregate and difference curves.

use std::fmt::Write;

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 440.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 150.0;
const MARGIN_TOP: f64 = 36.0;
const MARGIN_BOTTOM: f64 = 48.0;
const PALETTE: [&str; 9] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f", "#17becf",
];

#[derive(Debug)]
struct Series {
    label: String,
    points: Vec<(f64, f64, f64)>,
}

fn parse(text: &str) -> Result<(Vec<Series>, bool), String> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (_, header) = lines.next().ok_or_else(|| "input CSV is empty".to_string())?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    let find = |name: &str| {
        cols.iter()
            .position(|c| c.eq_ignore_ascii_case(name))
            .ok_or_else(|| format!("header is missing column '{name}'"))
    };
    let strategy = find("strategy")?;
    let iteration = find("iteration")?;
    let mean = find("mean")?;
    let stderr = find("stderr")?;
    let reference = cols.iter().position(|c| c.eq_ignore_ascii_case("reference"));

    let mut series: Vec<Series> = Vec::new();
    for (lineno, line) in lines {
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != cols.len() {
            return Err(format!("line {}: expected {} fields, found {}", lineno + 1, cols.len(), fields.len()));
        }
        let num = |i: usize| {
            fields[i]
                .parse::<f64>()
                .map_err(|_| format!("line {}: '{}' is not a number", lineno + 1, fields[i]))
        };
        let (x, y, s) = (num(iteration)?, num(mean)?, num(stderr)?);
        if !(x.is_finite() && y.is_finite() && s.is_finite()) {
            return Err(format!("line {}: non-finite value", lineno + 1));
        }
        let label = match reference {
            Some(r) if !fields[r].is_empty() => format!("{} - {}", fields[strategy], fields[r]),
            _ => fields[strategy].to_string(),
        };
        match series.iter_mut().find(|s| s.label == label) {
            Some(existing) => existing.points.push((x, y, s)),
            None => series.push(Series {
                label,
                points: vec![(x, y, s)],
            }),
        }
    }
    if series.is_empty() {
        return Err("input CSV has no data rows".into());
    }
    for s in &mut series {
        s.points.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok((series, reference.is_some()))
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Renders a CSV with `strategy,iteration,mean,stderr` columns (and optionally
/// `reference`) as an SVG document with one line and error band per series.
pub fn render_svg(csv: &str, title: Option<&str>) -> Result<String, String> {
    let (series, is_difference) = parse(csv)?;
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x_lo, mut x_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut y_lo, mut y_hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y, s) in all {
        x_lo = x_lo.min(x);
        x_hi = x_hi.max(x);
        y_lo = y_lo.min(y - s);
        y_hi = y_hi.max(y + s);
    }
    if is_difference {
        y_lo = y_lo.min(0.0);
        y_hi = y_hi.max(0.0);
    }
    if x_hi <= x_lo {
        x_hi = x_lo + 1.0;
    }
    if y_hi - y_lo < 1e-12 {
        y_lo -= 0.5;
        y_hi += 0.5;
    }
    let pad = 0.05 * (y_hi - y_lo);
    let (y_lo, y_hi) = (y_lo - pad, y_hi + pad);
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let sx = |x: f64| MARGIN_LEFT + (x - x_lo) / (x_hi - x_lo) * plot_w;
    let sy = |y: f64| MARGIN_TOP + (y_hi - y) / (y_hi - y_lo) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let default_title = if is_difference { "Difference in normalised best value" } else { "Normalised best value" };
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        escape(title.unwrap_or(default_title))
    );
    let _ = writeln!(
        svg,
        r##"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##
    );
    for i in 0..=4 {
        let fy = y_lo + (y_hi - y_lo) * i as f64 / 4.0;
        let fx = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{:.3}</text>"#,
            MARGIN_LEFT - 6.0,
            sy(fy) + 4.0,
            fy
        );
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{:.0}</text>"#,
            sx(fx),
            MARGIN_TOP + plot_h + 16.0,
            fx
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">iteration</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 10.0
    );
    if is_difference {
        let _ = writeln!(
            svg,
            r##"<line class="zero" x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="#000" stroke-dasharray="4 3"/>"##,
            sx(x_lo),
            sy(0.0),
            sx(x_hi),
            sy(0.0)
        );
    }
    for (k, s) in series.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let upper = s.points.iter().map(|&(x, y, e)| format!("{:.2},{:.2}", sx(x), sy(y + e)));
        let lower = s.points.iter().rev().map(|&(x, y, e)| format!("{:.2},{:.2}", sx(x), sy(y - e)));
        let band: Vec<String> = upper.chain(lower).collect();
        let _ = writeln!(
            svg,
            r#"<polygon class="band" points="{}" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let line: Vec<String> = s.points.iter().map(|&(x, y, _)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-label="{}" points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#,
            escape(&s.label),
            line.join(" ")
        );
        let ly = MARGIN_TOP + 14.0 + 18.0 * k as f64;
        let lx = WIDTH - MARGIN_RIGHT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="{colour}" stroke-width="2"/>"#,
            ly - 4.0,
            lx + 18.0,
            ly - 4.0
        );
        let _ = writeln!(svg, r#"<text x="{:.1}" y="{ly:.1}">{}</text>"#, lx + 24.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}
