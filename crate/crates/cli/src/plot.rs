//! Static SVG 1.1 charts. Every chart is written next to a CSV holding the
//! same numbers, so nothing downstream needs to parse these files.

use std::fmt::Write;

const W: f64 = 720.0;
const H: f64 = 440.0;
const LEFT: f64 = 170.0;
const RIGHT: f64 = 30.0;
const TOP: f64 = 50.0;
const BOTTOM: f64 = 60.0;
const POSITIVE: &str = "#d6604d";
const NEGATIVE: &str = "#4393c3";
const PALETTE: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn num(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 1e-3 && v.abs() < 1e4) {
        format!("{v:.3}")
    } else {
        format!("{v:.2e}")
    }
}

struct Canvas {
    body: String,
    x: (f64, f64),
    y: (f64, f64),
}

fn padded(lo: f64, hi: f64) -> (f64, f64) {
    let (lo, hi) = if lo.is_finite() && hi.is_finite() { (lo, hi) } else { (0.0, 1.0) };
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

impl Canvas {
    fn new(title: &str, x: (f64, f64), y: (f64, f64)) -> Self {
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<?xml version="1.0" encoding="UTF-8"?>
<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>
"#,
            W / 2.0,
            escape(title)
        );
        Canvas { body, x, y }
    }

    fn px(&self, v: f64) -> f64 {
        LEFT + (v - self.x.0) / (self.x.1 - self.x.0) * (W - LEFT - RIGHT)
    }

    fn py(&self, v: f64) -> f64 {
        H - BOTTOM - (v - self.y.0) / (self.y.1 - self.y.0) * (H - TOP - BOTTOM)
    }

    fn axes(&mut self, xlabel: &str, ylabel: &str, x_ticks: bool, y_ticks: bool) {
        let (x0, x1, y0, y1) = (LEFT, W - RIGHT, TOP, H - BOTTOM);
        let _ = writeln!(self.body, r#"<path d="M{x0} {y0} L{x0} {y1} L{x1} {y1}" fill="none" stroke="black"/>"#);
        for k in 0..=4 {
            let t = k as f64 / 4.0;
            if x_ticks {
                let v = self.x.0 + t * (self.x.1 - self.x.0);
                let p = self.px(v);
                let _ = writeln!(
                    self.body,
                    r#"<line x1="{p:.1}" y1="{y1}" x2="{p:.1}" y2="{}" stroke="black"/><text x="{p:.1}" y="{}" text-anchor="middle">{}</text>"#,
                    y1 + 4.0,
                    y1 + 16.0,
                    num(v)
                );
            }
            if y_ticks {
                let v = self.y.0 + t * (self.y.1 - self.y.0);
                let p = self.py(v);
                let _ = writeln!(
                    self.body,
                    r#"<line x1="{}" y1="{p:.1}" x2="{x0}" y2="{p:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                    x0 - 4.0,
                    x0 - 6.0,
                    p + 4.0,
                    num(v)
                );
            }
        }
        let _ = writeln!(
            self.body,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            (x0 + x1) / 2.0,
            H - 18.0,
            escape(xlabel)
        );
        let _ = writeln!(
            self.body,
            r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
            (y0 + y1) / 2.0,
            (y0 + y1) / 2.0,
            escape(ylabel)
        );
    }

    fn category_labels(&mut self, labels: &[String]) {
        for (i, l) in labels.iter().enumerate() {
            let p = self.py(i as f64);
            let _ = writeln!(
                self.body,
                r#"<text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 8.0,
                p + 4.0,
                escape(l)
            );
        }
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

/// Horizontal bars, first item on top.
pub fn hbar(title: &str, xlabel: &str, items: &[(String, f64)]) -> String {
    let lo = items.iter().map(|i| i.1).fold(0.0, f64::min);
    let hi = items.iter().map(|i| i.1).fold(0.0, f64::max);
    let n = items.len().max(1) as f64;
    let mut c = Canvas::new(title, padded(lo, hi), (n - 0.5, -0.5));
    c.axes(xlabel, "", true, false);
    let labels: Vec<String> = items.iter().map(|i| i.0.clone()).collect();
    c.category_labels(&labels);
    let band = (H - TOP - BOTTOM) / n * 0.7;
    for (i, (_, v)) in items.iter().enumerate() {
        let (a, b) = (c.px(0.0), c.px(*v));
        let y = c.py(i as f64) - band / 2.0;
        let color = if *v >= 0.0 { POSITIVE } else { NEGATIVE };
        let _ = writeln!(
            c.body,
            r#"<rect x="{:.1}" y="{y:.1}" width="{:.1}" height="{band:.1}" fill="{color}"/>"#,
            a.min(b),
            (b - a).abs()
        );
    }
    c.finish()
}

/// Vertical bars over integer positions starting at 1.
pub fn vbar(title: &str, xlabel: &str, ylabel: &str, values: &[f64]) -> String {
    let hi = values.iter().copied().fold(0.0, f64::max);
    let lo = values.iter().copied().fold(0.0, f64::min);
    let n = values.len().max(1) as f64;
    let mut c = Canvas::new(title, (0.5, n + 0.5), padded(lo, hi));
    c.axes(xlabel, ylabel, true, true);
    let band = (W - LEFT - RIGHT) / n * 0.7;
    for (i, &v) in values.iter().enumerate() {
        let x = c.px((i + 1) as f64) - band / 2.0;
        let (a, b) = (c.py(0.0), c.py(v));
        let _ = writeln!(
            c.body,
            r#"<rect x="{x:.1}" y="{:.1}" width="{band:.1}" height="{:.1}" fill="{NEGATIVE}"/>"#,
            a.min(b),
            (b - a).abs()
        );
    }
    c.finish()
}

/// Horizontal waterfall from `base` through each step to the final value.
pub fn waterfall(title: &str, base: f64, steps: &[(String, f64)]) -> String {
    let mut running = base;
    let mut lo = base;
    let mut hi = base;
    for (_, d) in steps {
        running += d;
        lo = lo.min(running);
        hi = hi.max(running);
    }
    let n = steps.len().max(1) as f64;
    let mut c = Canvas::new(title, padded(lo, hi), (n - 0.5, -0.5));
    c.axes("model output", "", true, false);
    let labels: Vec<String> = steps.iter().map(|s| s.0.clone()).collect();
    c.category_labels(&labels);
    let band = (H - TOP - BOTTOM) / n * 0.7;
    let mut start = base;
    for (i, (_, d)) in steps.iter().enumerate() {
        let (a, b) = (c.px(start), c.px(start + d));
        let y = c.py(i as f64) - band / 2.0;
        let color = if *d >= 0.0 { POSITIVE } else { NEGATIVE };
        let _ = writeln!(
            c.body,
            r#"<rect x="{:.1}" y="{y:.1}" width="{:.1}" height="{band:.1}" fill="{color}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            a.min(b),
            (b - a).abs().max(0.5),
            a.max(b) + 4.0,
            y + band / 2.0 + 4.0,
            num(*d)
        );
        start += d;
    }
    let base_x = c.px(base);
    let _ = writeln!(
        c.body,
        r#"<line x1="{base_x:.1}" y1="{TOP}" x2="{base_x:.1}" y2="{}" stroke="gray" stroke-dasharray="4 3"/>"#,
        H - BOTTOM
    );
    c.finish()
}

/// One polyline; `marker` draws a vertical guide at that x.
pub fn line(title: &str, xlabel: &str, ylabel: &str, xs: &[f64], ys: &[f64], marker: Option<f64>) -> String {
    let fold = |v: &[f64]| {
        v.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)))
    };
    let (x0, x1) = fold(xs);
    let (y0, y1) = fold(ys);
    let mut c = Canvas::new(title, padded(x0, x1), padded(y0, y1));
    c.axes(xlabel, ylabel, true, true);
    let mut d = String::new();
    for (i, (&x, &y)) in xs.iter().zip(ys).enumerate() {
        let _ = write!(d, "{}{:.1} {:.1} ", if i == 0 { "M" } else { "L" }, c.px(x), c.py(y));
    }
    let _ = writeln!(c.body, r#"<path d="{}" fill="none" stroke="{NEGATIVE}" stroke-width="2"/>"#, d.trim_end());
    if let Some(m) = marker {
        let p = c.px(m);
        let _ = writeln!(
            c.body,
            r#"<line x1="{p:.1}" y1="{TOP}" x2="{p:.1}" y2="{}" stroke="{POSITIVE}" stroke-dasharray="4 3"/><text x="{:.1}" y="{}" fill="{POSITIVE}">{}</text>"#,
            H - BOTTOM,
            p + 4.0,
            TOP + 12.0,
            num(m)
        );
    }
    c.finish()
}

pub struct Point {
    pub x: f64,
    pub y: f64,
    pub group: usize,
}

/// Scatter coloured by group index.
pub fn scatter(title: &str, xlabel: &str, ylabel: &str, points: &[Point], legend: &[String]) -> String {
    let fold = |f: fn(&Point) -> f64| {
        points.iter().map(f).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)))
    };
    let (x0, x1) = fold(|p| p.x);
    let (y0, y1) = fold(|p| p.y);
    let mut c = Canvas::new(title, padded(x0, x1), padded(y0, y1));
    c.axes(xlabel, ylabel, true, true);
    for p in points {
        let _ = writeln!(
            c.body,
            r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="{}" fill-opacity="0.7"/>"#,
            c.px(p.x),
            c.py(p.y),
            PALETTE[p.group % PALETTE.len()]
        );
    }
    for (i, name) in legend.iter().enumerate() {
        let y = TOP + 14.0 * i as f64;
        let _ = writeln!(
            c.body,
            r#"<circle cx="{}" cy="{y:.1}" r="4" fill="{}"/><text x="{}" y="{:.1}">{}</text>"#,
            W - RIGHT - 90.0,
            PALETTE[i % PALETTE.len()],
            W - RIGHT - 82.0,
            y + 4.0,
            escape(name)
        );
    }
    c.finish()
}

/// Beeswarm-style summary: one row per feature, x = attribution, colour
/// from low (blue) to high (red) feature value, deterministic jitter.
pub fn summary(title: &str, features: &[String], rows: &[(usize, f64, f64)]) -> String {
    let lo = rows.iter().map(|r| r.1).fold(f64::INFINITY, f64::min);
    let hi = rows.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let n = features.len().max(1) as f64;
    let mut c = Canvas::new(title, padded(lo, hi), (n - 0.5, -0.5));
    c.axes("attribution", "", true, false);
    c.category_labels(features);
    let mut counter = vec![0usize; features.len()];
    for &(f, phi, value) in rows {
        counter[f] += 1;
        // golden-ratio sequence keeps the jitter reproducible
        let jitter = ((counter[f] as f64 * 0.618_033_988_75).fract() - 0.5) * 0.6;
        let t = value.clamp(0.0, 1.0);
        let (r, b) = ((40.0 + 200.0 * t) as u8, (240.0 - 200.0 * t) as u8);
        let _ = writeln!(
            c.body,
            r#"<circle cx="{:.1}" cy="{:.1}" r="2.5" fill="rgb({r},60,{b})" fill-opacity="0.8"/>"#,
            c.px(phi),
            c.py(f as f64 + jitter)
        );
    }
    c.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn well_formed(svg: &str) {
        assert!(svg.starts_with("<?xml"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<svg").count(), 1);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn charts_render() {
        let items = vec![("a<b".to_string(), 0.5), ("c".to_string(), -0.2)];
        well_formed(&hbar("t", "x", &items));
        well_formed(&waterfall("t", 0.3, &items));
        well_formed(&vbar("t", "x", "y", &[3.0, 1.0, 0.5]));
        well_formed(&line("t", "x", "y", &[0.0, 1.0], &[0.2, 0.4], Some(0.5)));
        let pts = vec![Point { x: 0.0, y: 1.0, group: 0 }, Point { x: 1.0, y: 0.0, group: 1 }];
        well_formed(&scatter("t", "x", "y", &pts, &["g0".into(), "g1".into()]));
        well_formed(&summary("t", &["f".into()], &[(0, 0.1, 0.5), (0, -0.1, 0.2)]));
        assert!(hbar("t", "x", &items).contains("a&lt;b"));
    }

    #[test]
    fn degenerate_ranges_render() {
        well_formed(&line("t", "x", "y", &[1.0, 1.0], &[2.0, 2.0], None));
        well_formed(&hbar("t", "x", &[]));
    }
}
