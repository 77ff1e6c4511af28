//! Static SVG line plots of the null-proportion posterior.
//!
//! The plotted series are also embedded verbatim in `<metadata>` so the
//! curves can be checked or redrawn without parsing path coordinates.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::Result;
use crate::io::write_text;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 30.0;
const BOTTOM: f64 = 60.0;

/// Namespace of the embedded data elements.
pub const DATA_NS: &str = "urn:tweedie-screen:plot-data";

#[derive(Debug, Clone)]
pub struct Series<'a> {
    pub name: &'a str,
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub dashed: bool,
}

/// Render one or more series on shared axes.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (mut x0, mut x1, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, 0.0f64);
    for s in series {
        for (&x, &y) in s.x.iter().zip(s.y) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            if y.is_finite() {
                y1 = y1.max(y);
            }
        }
    }
    if !x0.is_finite() || x1 <= x0 {
        x0 = 0.0;
        x1 = 1.0;
    }
    let y1 = nice_ceiling(if y1 > 0.0 { y1 } else { 1.0 });
    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| TOP + plot_h - y / y1 * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, "<title>{}</title>", escape(title));
    let _ = writeln!(svg, r#"<metadata><data xmlns="{DATA_NS}">"#);
    for s in series {
        let _ = write!(svg, r#"<series name="{}">"#, escape(s.name));
        for (x, y) in s.x.iter().zip(s.y) {
            let _ = write!(svg, "{x},{y};");
        }
        let _ = writeln!(svg, "</series>");
    }
    let _ = writeln!(svg, "</data></metadata>");
    let _ = writeln!(svg, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);

    // axes and ticks
    let _ = writeln!(
        svg,
        r#"<g stroke="black" stroke-width="1" fill="none"><path d="M{l},{t} V{b} H{r}"/></g>"#,
        l = LEFT,
        t = TOP,
        b = TOP + plot_h,
        r = LEFT + plot_w
    );
    let _ = writeln!(svg, r#"<g text-anchor="middle">"#);
    for i in 0..=5 {
        let x = x0 + (x1 - x0) * i as f64 / 5.0;
        let px = sx(x);
        let _ = writeln!(
            svg,
            r#"<line x1="{px:.2}" y1="{b}" x2="{px:.2}" y2="{b5}" stroke="black"/><text x="{px:.2}" y="{b18}">{}</text>"#,
            tick(x),
            b = TOP + plot_h,
            b5 = TOP + plot_h + 5.0,
            b18 = TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(svg, r#"<g text-anchor="end">"#);
    for i in 0..=4 {
        let y = y1 * i as f64 / 4.0;
        let py = sy(y);
        let _ = writeln!(
            svg,
            r#"<line x1="{l5}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="black"/><text x="{l8}" y="{py4:.2}">{}</text>"#,
            tick(y),
            l5 = LEFT - 5.0,
            l8 = LEFT - 8.0,
            py4 = py + 4.0
        );
    }
    let _ = writeln!(svg, "</g>");
    let _ = writeln!(
        svg,
        r#"<text class="x-label" x="{}" y="{}" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 18.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text class="y-label" x="18" y="{y}" text-anchor="middle" font-size="14" transform="rotate(-90 18 {y})">{}</text>"#,
        escape(y_label),
        y = TOP + plot_h / 2.0
    );
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(title)
    );

    for (k, s) in series.iter().enumerate() {
        let dash = if s.dashed { r#" stroke-dasharray="6,4""# } else { "" };
        let mut pts = String::new();
        for (&x, &y) in s.x.iter().zip(s.y) {
            if y.is_finite() {
                let _ = write!(pts, "{:.2},{:.2} ", sx(x), sy(y));
            }
        }
        let _ = writeln!(
            svg,
            r#"<polyline class="series" data-name="{}" fill="none" stroke="black" stroke-width="1.5"{dash} points="{}"/>"#,
            escape(s.name),
            pts.trim_end()
        );
        let ly = TOP + 14.0 + 18.0 * k as f64;
        let lx = LEFT + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="black" stroke-width="1.5"{dash}/><text x="{}" y="{}">{}</text>"#,
            lx + 30.0,
            lx + 36.0,
            ly + 4.0,
            escape(s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

pub fn write_plot(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    write_text(path, &line_plot(title, x_label, y_label, series))
}

fn nice_ceiling(v: f64) -> f64 {
    let mag = 10f64.powf(v.log10().floor());
    for m in [1.0, 2.0, 2.5, 5.0, 10.0] {
        if m * mag >= v {
            return m * mag;
        }
    }
    10.0 * mag
}

fn tick(v: f64) -> String {
    let r = (v * 1000.0).round() / 1000.0;
    (r + 0.0).to_string()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}
