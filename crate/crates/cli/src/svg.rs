//! Minimal static SVG charts: bars, lines and box plots.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

pub fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            c => out.push(c),
        }
    }
    out
}

struct Frame {
    body: String,
    y_max: f64,
}

impl Frame {
    fn new(title: &str, y_label: &str, y_max: f64) -> Self {
        let y_max = if y_max > 0.0 && y_max.is_finite() { y_max * 1.1 } else { 1.0 };
        let mut body = String::new();
        let _ = write!(
            body,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="{W}" height="{H}" fill="white"/>
<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>
<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>
"#,
            W / 2.0,
            escape(title),
            TOP + Self::plot_h() / 2.0,
            TOP + Self::plot_h() / 2.0,
            escape(y_label)
        );
        let mut f = Self { body, y_max };
        f.axes();
        f
    }

    fn plot_w() -> f64 {
        W - LEFT - RIGHT
    }

    fn plot_h() -> f64 {
        H - TOP - BOTTOM
    }

    fn y(&self, v: f64) -> f64 {
        TOP + Self::plot_h() * (1.0 - (v / self.y_max).clamp(0.0, 1.0))
    }

    fn axes(&mut self) {
        let base = TOP + Self::plot_h();
        let _ = writeln!(
            self.body,
            r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base}" stroke="black"/><line x1="{LEFT}" y1="{base}" x2="{}" y2="{base}" stroke="black"/>"#,
            W - RIGHT
        );
        for k in 0..=4 {
            let v = self.y_max * k as f64 / 4.0;
            let y = self.y(v);
            let _ = writeln!(
                self.body,
                r#"<line x1="{}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/><text x="{}" y="{:.1}" text-anchor="end">{}</text>"#,
                LEFT - 4.0,
                LEFT - 6.0,
                y + 4.0,
                fmt_tick(v)
            );
        }
    }

    fn x_label(&mut self, x: f64, text: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            TOP + Self::plot_h() + 18.0,
            escape(text)
        );
    }

    fn finish(mut self) -> String {
        self.body.push_str("</svg>\n");
        self.body
    }
}

fn fmt_tick(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v.abs() >= 0.01 && v.abs() < 1e4 {
        format!("{v:.3}")
    } else {
        format!("{v:.1e}")
    }
}

/// One bar per label.
pub fn bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let y_max = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let mut f = Frame::new(title, y_label, y_max);
    let slot = Frame::plot_w() / bars.len().max(1) as f64;
    for (k, (label, v)) in bars.iter().enumerate() {
        let x = LEFT + slot * k as f64 + slot * 0.15;
        let y = f.y(*v);
        let _ = writeln!(
            f.body,
            r#"<rect x="{x:.1}" y="{y:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
            slot * 0.7,
            TOP + Frame::plot_h() - y,
            PALETTE[k % PALETTE.len()]
        );
        f.x_label(x + slot * 0.35, label);
    }
    f.finish()
}

/// Named series over shared categorical x positions.
pub fn line_chart(title: &str, y_label: &str, xs: &[String], series: &[(String, Vec<f64>)]) -> String {
    let y_max = series.iter().flat_map(|s| s.1.iter().copied()).fold(0.0, f64::max);
    let mut f = Frame::new(title, y_label, y_max);
    let step = Frame::plot_w() / xs.len().max(1) as f64;
    let px = |k: usize| LEFT + step * (k as f64 + 0.5);
    for (k, x) in xs.iter().enumerate() {
        f.x_label(px(k), x);
    }
    for (s, (name, ys)) in series.iter().enumerate() {
        let colour = PALETTE[s % PALETTE.len()];
        let points: Vec<String> = ys.iter().enumerate().map(|(k, v)| format!("{:.1},{:.1}", px(k), f.y(*v))).collect();
        let _ = writeln!(f.body, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, points.join(" "));
        for (k, v) in ys.iter().enumerate() {
            let _ = writeln!(f.body, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="{colour}"/>"#, px(k), f.y(*v));
        }
        let ly = TOP + 14.0 * s as f64;
        let _ = writeln!(
            f.body,
            r#"<rect x="{:.1}" y="{ly:.1}" width="10" height="10" fill="{colour}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            W - RIGHT - 120.0,
            W - RIGHT - 105.0,
            ly + 9.0,
            escape(name)
        );
    }
    f.finish()
}

/// Five-number summary of `v` (min, q1, median, q3, max), linear quantiles.
pub fn five_numbers(v: &[f64]) -> Option<[f64; 5]> {
    if v.is_empty() {
        return None;
    }
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let q = |p: f64| {
        let pos = p * (s.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        s[lo] + (s[hi] - s[lo]) * (pos - lo as f64)
    };
    Some([s[0], q(0.25), q(0.5), q(0.75), s[s.len() - 1]])
}

/// One box (min/max whiskers) per group.
pub fn box_plot(title: &str, y_label: &str, groups: &[(String, Vec<f64>)]) -> String {
    let y_max = groups.iter().flat_map(|g| g.1.iter().copied()).fold(0.0, f64::max);
    let mut f = Frame::new(title, y_label, y_max);
    let slot = Frame::plot_w() / groups.len().max(1) as f64;
    for (k, (label, vals)) in groups.iter().enumerate() {
        let cx = LEFT + slot * (k as f64 + 0.5);
        f.x_label(cx, label);
        let Some([lo, q1, med, q3, hi]) = five_numbers(vals) else {
            continue;
        };
        let half = slot * 0.25;
        let colour = PALETTE[k % PALETTE.len()];
        let _ = writeln!(
            f.body,
            r#"<line x1="{cx:.1}" y1="{:.1}" x2="{cx:.1}" y2="{:.1}" stroke="black"/><rect x="{:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{colour}" fill-opacity="0.6" stroke="black"/><line x1="{:.1}" y1="{:.1}" x2="{:.1}" y2="{:.1}" stroke="black" stroke-width="2"/>"#,
            f.y(hi),
            f.y(lo),
            cx - half,
            f.y(q3),
            2.0 * half,
            (f.y(q1) - f.y(q3)).max(0.5),
            cx - half,
            f.y(med),
            cx + half,
            f.y(med)
        );
    }
    f.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn escapes_markup() {
        assert_eq!(escape("a<b & \"c\""), "a&lt;b &amp; &quot;c&quot;");
    }

    #[test]
    fn quartiles() {
        assert_eq!(five_numbers(&[4.0, 1.0, 3.0, 2.0, 5.0]), Some([1.0, 2.0, 3.0, 4.0, 5.0]));
        assert_eq!(five_numbers(&[]), None);
        assert_eq!(five_numbers(&[2.0]), Some([2.0; 5]));
    }

    #[test]
    fn charts_have_one_mark_per_item() {
        let bars = bar_chart("t", "mmd", &[("deg".into(), 0.1), ("avg".into(), 0.0)]);
        assert_eq!(bars.matches("<rect").count(), 3);
        let lines = line_chart("t", "y", &["1".into(), "2".into()], &[("a".into(), vec![0.1, 0.2])]);
        assert_eq!(lines.matches("<circle").count(), 2);
        assert!(bars.ends_with("</svg>\n"));
    }
}
