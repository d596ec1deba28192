//! Minimal SVG line charts: polylines, shaded bands, linear or log y axes,
//! one or more panels side by side.

use std::fmt::Write as _;

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf",
];
const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN_L: f64 = 64.0;
const MARGIN_R: f64 = 16.0;
const MARGIN_T: f64 = 48.0;
const MARGIN_B: f64 = 44.0;

#[derive(Debug, Clone, Default)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
    /// `(x, lo, hi)` drawn as a translucent band under the line.
    pub band: Vec<(f64, f64, f64)>,
    pub dashed: bool,
}

#[derive(Debug, Clone, Default)]
pub struct Panel {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_y: bool,
    pub series: Vec<Series>,
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 1e4 || v.abs() < 1e-2 {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.3}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

fn nice_ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| span / s <= 6.0).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

struct Scale {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
    log_y: bool,
    left: f64,
    top: f64,
}

impl Scale {
    fn ty(&self, y: f64) -> f64 {
        if self.log_y {
            y.max(f64::MIN_POSITIVE).log10()
        } else {
            y
        }
    }

    fn px(&self, x: f64) -> f64 {
        let w = PANEL_W - MARGIN_L - MARGIN_R;
        self.left + MARGIN_L + (x - self.x0) / (self.x1 - self.x0) * w
    }

    fn py(&self, y: f64) -> f64 {
        let h = PANEL_H - MARGIN_T - MARGIN_B;
        self.top + MARGIN_T + h - (self.ty(y) - self.y0) / (self.y1 - self.y0) * h
    }
}

fn usable(log_y: bool, y: f64) -> bool {
    y.is_finite() && (!log_y || y > 0.0)
}

fn scale_for(panel: &Panel, left: f64) -> Scale {
    let mut xs = (f64::INFINITY, f64::NEG_INFINITY);
    let mut ys = (f64::INFINITY, f64::NEG_INFINITY);
    let mut see = |x: f64, y: f64| {
        if x.is_finite() && usable(panel.log_y, y) {
            xs = (xs.0.min(x), xs.1.max(x));
            let t = if panel.log_y { y.log10() } else { y };
            ys = (ys.0.min(t), ys.1.max(t));
        }
    };
    for s in &panel.series {
        for &(x, y) in &s.points {
            see(x, y);
        }
        for &(x, lo, hi) in &s.band {
            see(x, lo);
            see(x, hi);
        }
    }
    if !xs.0.is_finite() {
        xs = (0.0, 1.0);
        ys = (0.0, 1.0);
    }
    if xs.1 - xs.0 <= 0.0 {
        xs = (xs.0 - 0.5, xs.1 + 0.5);
    }
    if ys.1 - ys.0 <= 0.0 {
        let d = if ys.0 == 0.0 { 1.0 } else { 0.05 * ys.0.abs() };
        ys = (ys.0 - d, ys.1 + d);
    }
    let pad = 0.04 * (ys.1 - ys.0);
    let (y0, y1) = if panel.log_y {
        (ys.0.floor().min(ys.0 - pad), ys.1.ceil().max(ys.1 + pad))
    } else {
        (ys.0 - pad, ys.1 + pad)
    };
    Scale {
        x0: xs.0,
        x1: xs.1,
        y0,
        y1,
        log_y: panel.log_y,
        left,
        top: 0.0,
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn draw_panel(out: &mut String, panel: &Panel, left: f64) {
    let s = scale_for(panel, left);
    let (pl, pr) = (left + MARGIN_L, left + PANEL_W - MARGIN_R);
    let (pt, pb) = (MARGIN_T, PANEL_H - MARGIN_B);
    let _ = writeln!(
        out,
        r##"<rect x="{pl:.2}" y="{pt:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="#444"/>"##,
        pr - pl,
        pb - pt
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        left + PANEL_W / 2.0,
        escape(&panel.title)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{}</text>"#,
        (pl + pr) / 2.0,
        PANEL_H - 8.0,
        escape(&panel.x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11" transform="rotate(-90 {:.2} {:.2})">{}</text>"#,
        left + 14.0,
        (pt + pb) / 2.0,
        left + 14.0,
        (pt + pb) / 2.0,
        escape(&panel.y_label)
    );

    for x in nice_ticks(s.x0, s.x1) {
        let px = s.px(x);
        let _ = writeln!(
            out,
            r##"<line x1="{px:.2}" y1="{pb:.2}" x2="{px:.2}" y2="{:.2}" stroke="#444"/><text x="{px:.2}" y="{:.2}" text-anchor="middle" font-size="10">{}</text>"##,
            pb + 4.0,
            pb + 15.0,
            fmt_tick(x)
        );
    }
    let y_ticks: Vec<(f64, String)> = if s.log_y {
        (s.y0.ceil() as i32..=s.y1.floor() as i32).map(|e| (10f64.powi(e), format!("1e{e}"))).collect()
    } else {
        nice_ticks(s.y0, s.y1).into_iter().map(|y| (y, fmt_tick(y))).collect()
    };
    for (y, label) in y_ticks {
        let py = s.py(y);
        let _ = writeln!(
            out,
            r##"<line x1="{:.2}" y1="{py:.2}" x2="{pl:.2}" y2="{py:.2}" stroke="#444"/><line x1="{pl:.2}" y1="{py:.2}" x2="{pr:.2}" y2="{py:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end" font-size="10">{label}</text>"##,
            pl - 4.0,
            pl - 6.0,
            py + 3.0
        );
    }

    for (k, series) in panel.series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let band: Vec<_> = series
            .band
            .iter()
            .filter(|(x, lo, hi)| x.is_finite() && usable(s.log_y, *lo) && usable(s.log_y, *hi))
            .collect();
        if band.len() > 1 {
            let mut pts: Vec<String> = band.iter().map(|(x, _, hi)| format!("{:.2},{:.2}", s.px(*x), s.py(*hi))).collect();
            pts.extend(band.iter().rev().map(|(x, lo, _)| format!("{:.2},{:.2}", s.px(*x), s.py(*lo))));
            let _ = writeln!(
                out,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
                pts.join(" ")
            );
        }
        let pts: Vec<String> = series
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && usable(s.log_y, *y))
            .map(|(x, y)| format!("{:.2},{:.2}", s.px(*x), s.py(*y)))
            .collect();
        let dash = if series.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        if !pts.is_empty() {
            let _ = writeln!(
                out,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
                pts.join(" ")
            );
        }
        let ly = MARGIN_T + 14.0 + 14.0 * k as f64;
        let _ = writeln!(
            out,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"{dash}/><text x="{:.2}" y="{:.2}" font-size="10" text-anchor="end">{}</text>"#,
            pr - 22.0,
            ly - 3.0,
            pr - 6.0,
            ly - 3.0,
            pr - 26.0,
            ly,
            escape(&series.label)
        );
    }
}

/// Complete SVG document. `embedded` goes into the leading comment.
pub fn figure(panels: &[Panel], embedded: &str) -> String {
    let width = PANEL_W * panels.len().max(1) as f64;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{PANEL_H:.0}" viewBox="0 0 {width:.0} {PANEL_H:.0}" font-family="sans-serif">"#
    );
    let _ = write!(out, "<!--\n{}-->\n", crate::artifacts::escape_comment(embedded));
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    for (k, p) in panels.iter().enumerate() {
        draw_panel(&mut out, p, PANEL_W * k as f64);
    }
    out.push_str("</svg>\n");
    out
}
