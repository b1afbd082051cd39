//! Text output helpers: `%.17g` number formatting, CSV tables and minimal SVG.

use std::fmt::Write as _;

/// Format like C's `printf("%.17g", x)`.
pub fn fmt_g17(x: f64) -> String {
    fmt_g(x, 17)
}

/// Format like C's `%.{precision}g`.
pub fn fmt_g(x: f64, precision: usize) -> String {
    if x.is_nan() {
        return "nan".to_string();
    }
    if x.is_infinite() {
        return if x > 0.0 { "inf".to_string() } else { "-inf".to_string() };
    }
    let p = precision.max(1);
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".to_string() } else { "0".to_string() };
    }
    let sci = format!("{:.*e}", p - 1, x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent marker");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -4 || exp >= p as i32 {
        let m = strip_zeros(mantissa);
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{m}e{sign}{:02}", exp.abs())
    } else {
        let decimals = (p as i32 - 1 - exp) as usize;
        strip_zeros(&format!("{:.*}", decimals, x)).to_string()
    }
}

fn strip_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// Comma-separated table with a header row.
#[derive(Clone, Debug, Default)]
pub struct CsvTable {
    out: String,
    columns: usize,
}

impl CsvTable {
    pub fn new<S: AsRef<str>>(header: &[S]) -> Self {
        let out = header.iter().map(|h| h.as_ref()).collect::<Vec<_>>().join(",") + "\n";
        CsvTable { out, columns: header.len() }
    }

    /// Append a row of already formatted cells.
    pub fn row(&mut self, cells: &[String]) {
        debug_assert_eq!(cells.len(), self.columns, "row width");
        self.out.push_str(&cells.join(","));
        self.out.push('\n');
    }

    pub fn finish(self) -> String {
        self.out
    }
}

/// Minimal SVG document builder with a linear data-to-pixel map.
#[derive(Clone, Debug)]
pub struct Svg {
    width: f64,
    height: f64,
    x_range: (f64, f64),
    y_range: (f64, f64),
    body: String,
}

const MARGIN: f64 = 40.0;

impl Svg {
    pub fn new(width: f64, height: f64, x_range: (f64, f64), y_range: (f64, f64)) -> Self {
        let fix = |(lo, hi): (f64, f64)| if hi > lo { (lo, hi) } else { (lo - 1.0, lo + 1.0) };
        Svg {
            width,
            height,
            x_range: fix(x_range),
            y_range: fix(y_range),
            body: String::new(),
        }
    }

    pub fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x_range.0) / (self.x_range.1 - self.x_range.0) * (self.width - 2.0 * MARGIN)
    }

    pub fn py(&self, y: f64) -> f64 {
        self.height
            - MARGIN
            - (y - self.y_range.0) / (self.y_range.1 - self.y_range.0) * (self.height - 2.0 * MARGIN)
    }

    pub fn polyline(&mut self, points: &[(f64, f64)], stroke: &str) {
        let pts: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.3},{:.3}", self.px(x), self.py(y)))
            .collect();
        let _ = writeln!(
            self.body,
            r#"<polyline fill="none" stroke="{stroke}" stroke-width="1" points="{}"/>"#,
            pts.join(" ")
        );
    }

    pub fn circle(&mut self, x: f64, y: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{:.3}" cy="{:.3}" r="{r}" fill="{fill}"/>"#,
            self.px(x),
            self.py(y)
        );
    }

    pub fn line(&mut self, a: (f64, f64), b: (f64, f64), stroke: &str) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{:.3}" y1="{:.3}" x2="{:.3}" y2="{:.3}" stroke="{stroke}" stroke-width="1.5"/>"#,
            self.px(a.0),
            self.py(a.1),
            self.px(b.0),
            self.py(b.1)
        );
    }

    /// Axis-aligned data rectangle `[x0, x1] × [y0, y1]`.
    pub fn rect(&mut self, x0: f64, y0: f64, x1: f64, y1: f64, fill: &str) {
        let (px0, px1) = (self.px(x0), self.px(x1));
        let (py0, py1) = (self.py(y1), self.py(y0));
        let _ = writeln!(
            self.body,
            r#"<rect x="{:.3}" y="{:.3}" width="{:.3}" height="{:.3}" fill="{fill}"/>"#,
            px0,
            py0,
            px1 - px0,
            py1 - py0
        );
    }

    pub fn text(&mut self, x_px: f64, y_px: f64, content: &str) {
        let escaped = content.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = writeln!(
            self.body,
            r#"<text x="{x_px:.1}" y="{y_px:.1}" font-family="monospace" font-size="12">{escaped}</text>"#
        );
    }

    /// Visible part of the line `{z : w·z = level}` within the data window.
    pub fn clipped_line(&self, w: (f64, f64), level: f64) -> Option<((f64, f64), (f64, f64))> {
        let (x0, x1) = self.x_range;
        let (y0, y1) = self.y_range;
        let mut pts = Vec::new();
        if w.1.abs() > 1e-300 {
            for x in [x0, x1] {
                let y = (level - w.0 * x) / w.1;
                if (y0..=y1).contains(&y) {
                    pts.push((x, y));
                }
            }
        }
        if w.0.abs() > 1e-300 {
            for y in [y0, y1] {
                let x = (level - w.1 * y) / w.0;
                if (x0..=x1).contains(&x) {
                    pts.push((x, y));
                }
            }
        }
        if pts.len() < 2 {
            return None;
        }
        Some((pts[0], pts[pts.len() - 1]))
    }

    pub fn finish(self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
            self.width, self.height, self.width, self.height
        );
        let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let escaped = title.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;");
        let _ = writeln!(out, "<title>{escaped}</title>");
        let _ = writeln!(
            out,
            r#"<rect x="{MARGIN}" y="{MARGIN}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            self.width - 2.0 * MARGIN,
            self.height - 2.0 * MARGIN
        );
        out.push_str(&self.body);
        let _ = writeln!(
            out,
            r#"<text x="{MARGIN}" y="{:.1}" font-family="monospace" font-size="12">{escaped}</text>"#,
            MARGIN - 10.0
        );
        out.push_str("</svg>\n");
        out
    }
}
