//! Minimal SVG writer plus the three chart shapes the sweeps emit.

use std::fmt::Write as _;

pub const NEUTRAL: &str = "#ffffff";

/// Accumulates SVG elements; `finish` wraps them in the root element.
#[derive(Debug, Clone)]
pub struct Svg {
    width: f64,
    height: f64,
    body: String,
}

impl Svg {
    pub fn new(width: f64, height: f64) -> Self {
        Self {
            width,
            height,
            body: String::new(),
        }
    }

    pub fn rect(&mut self, x: f64, y: f64, w: f64, h: f64, fill: &str, extra: &str) {
        let _ = writeln!(
            self.body,
            r#"<rect x="{x:.2}" y="{y:.2}" width="{w:.2}" height="{h:.2}" fill="{fill}"{sp}{extra}/>"#,
            sp = if extra.is_empty() { "" } else { " " }
        );
    }

    pub fn line(&mut self, x1: f64, y1: f64, x2: f64, y2: f64, stroke: &str, width: f64) {
        let _ = writeln!(
            self.body,
            r#"<line x1="{x1:.2}" y1="{y1:.2}" x2="{x2:.2}" y2="{y2:.2}" stroke="{stroke}" stroke-width="{width}"/>"#
        );
    }

    pub fn dashed_polyline(&mut self, points: &[(f64, f64)], stroke: &str, dashed: bool) {
        let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
        let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
        let _ = writeln!(
            self.body,
            r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"{dash}/>"#,
            pts.join(" ")
        );
    }

    pub fn circle(&mut self, cx: f64, cy: f64, r: f64, fill: &str) {
        let _ = writeln!(
            self.body,
            r#"<circle cx="{cx:.2}" cy="{cy:.2}" r="{r}" fill="{fill}"/>"#
        );
    }

    pub fn text(&mut self, x: f64, y: f64, size: f64, anchor: &str, content: &str) {
        let _ = writeln!(
            self.body,
            r#"<text x="{x:.2}" y="{y:.2}" font-size="{size}" font-family="sans-serif" text-anchor="{anchor}">{}</text>"#,
            escape(content)
        );
    }

    pub fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
             <rect width=\"100%\" height=\"100%\" fill=\"#fafafa\"/>\n{body}</svg>\n",
            w = self.width,
            h = self.height,
            body = self.body
        )
    }
}

pub fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Diverging blue/white/red colour for `value / scale`; exact zero is white.
pub fn signed_color(value: f64, scale: f64) -> String {
    if value == 0.0 || scale <= 0.0 || !value.is_finite() {
        return NEUTRAL.to_string();
    }
    let t = (value / scale).clamp(-1.0, 1.0);
    let fade = (255.0 * (1.0 - t.abs())).round() as u8;
    if t > 0.0 {
        format!("#ff{fade:02x}{fade:02x}")
    } else {
        format!("#{fade:02x}{fade:02x}ff")
    }
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

pub fn palette(i: usize) -> &'static str {
    PALETTE[i % PALETTE.len()]
}

/// Grouped bar chart: one group per label, one bar per series, with ±err whiskers.
pub fn bar_chart(
    title: &str,
    groups: &[String],
    series: &[String],
    values: &[Vec<(f64, f64)>],
) -> String {
    let (left, top, plot_h) = (60.0, 40.0, 260.0);
    let group_w = 30.0 + 22.0 * series.len() as f64;
    let width = left + group_w * groups.len().max(1) as f64 + 140.0;
    let height = top + plot_h + 90.0;
    let mut svg = Svg::new(width, height);
    svg.text(width / 2.0, 22.0, 14.0, "middle", title);

    let all = values.iter().flatten().flat_map(|&(m, e)| [m - e, m + e]);
    let (lo, hi) = span(all.chain([0.0]));
    let y_of = |v: f64| top + plot_h * (hi - v) / (hi - lo);
    axis(&mut svg, left, top, plot_h, lo, hi, group_w * groups.len() as f64);

    for (g, label) in groups.iter().enumerate() {
        let gx = left + g as f64 * group_w + 15.0;
        for (s, _) in series.iter().enumerate() {
            let Some(&(mean, err)) = values.get(g).and_then(|row| row.get(s)) else {
                continue;
            };
            if !mean.is_finite() {
                continue;
            }
            let x = gx + 22.0 * s as f64;
            let (y0, y1) = (y_of(0.0), y_of(mean));
            svg.rect(x, y0.min(y1), 18.0, (y0 - y1).abs(), palette(s), "");
            if err.is_finite() && err > 0.0 {
                svg.line(x + 9.0, y_of(mean - err), x + 9.0, y_of(mean + err), "#333", 1.0);
            }
        }
        svg.text(gx + 11.0 * series.len() as f64, top + plot_h + 18.0, 10.0, "middle", label);
    }
    legend(&mut svg, width - 130.0, top, series, &[]);
    svg.finish()
}

/// Heatmap of a value grid with row/column labels and the value printed in each cell.
pub fn grid_heatmap(
    title: &str,
    row_label: &str,
    col_label: &str,
    rows: &[String],
    cols: &[String],
    values: &[Vec<f64>],
) -> String {
    let cell = 44.0;
    let (left, top) = (70.0, 50.0);
    let width = left + cell * cols.len() as f64 + 20.0;
    let height = top + cell * rows.len() as f64 + 50.0;
    let mut svg = Svg::new(width, height);
    svg.text(width / 2.0, 22.0, 14.0, "middle", title);
    let scale = values
        .iter()
        .flatten()
        .filter(|v| v.is_finite())
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    for (r, name) in rows.iter().enumerate() {
        let y = top + r as f64 * cell;
        svg.text(left - 6.0, y + cell / 2.0 + 4.0, 11.0, "end", name);
        for (c, _) in cols.iter().enumerate() {
            let v = values.get(r).and_then(|row| row.get(c)).copied().unwrap_or(f64::NAN);
            let x = left + c as f64 * cell;
            svg.rect(x, y, cell, cell, &signed_color(v, scale), r##"stroke="#ccc""##);
            if v.is_finite() {
                svg.text(x + cell / 2.0, y + cell / 2.0 + 4.0, 9.0, "middle", &format!("{v:.3}"));
            }
        }
    }
    for (c, name) in cols.iter().enumerate() {
        svg.text(left + c as f64 * cell + cell / 2.0, top - 6.0, 11.0, "middle", name);
    }
    let bottom = top + cell * rows.len() as f64;
    svg.text(left + cell * cols.len() as f64 / 2.0, bottom + 30.0, 12.0, "middle", col_label);
    svg.text(14.0, top - 20.0, 12.0, "start", row_label);
    svg.finish()
}

pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
    pub dashed: bool,
}

/// Line chart of several series sharing x/y axes.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> String {
    let (left, top, plot_w, plot_h) = (60.0, 40.0, 420.0, 260.0);
    let width = left + plot_w + 200.0;
    let height = top + plot_h + 60.0;
    let mut svg = Svg::new(width, height);
    svg.text(width / 2.0, 22.0, 14.0, "middle", title);
    let pts = || series.iter().flat_map(|s| s.points.iter()).filter(|p| p.1.is_finite());
    let (x_lo, x_hi) = span(pts().map(|p| p.0));
    let (y_lo, y_hi) = span(pts().map(|p| p.1));
    let x_of = |x: f64| left + plot_w * (x - x_lo) / (x_hi - x_lo);
    let y_of = |y: f64| top + plot_h * (y_hi - y) / (y_hi - y_lo);
    axis(&mut svg, left, top, plot_h, y_lo, y_hi, plot_w);
    for i in 0..=4 {
        let x = x_lo + (x_hi - x_lo) * i as f64 / 4.0;
        svg.text(x_of(x), top + plot_h + 16.0, 10.0, "middle", &format!("{x:.2}"));
    }
    for (i, s) in series.iter().enumerate() {
        let colour = palette(i / 2);
        let p: Vec<(f64, f64)> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|&(x, y)| (x_of(x), y_of(y)))
            .collect();
        svg.dashed_polyline(&p, colour, s.dashed);
        for &(x, y) in &p {
            svg.circle(x, y, 2.5, colour);
        }
    }
    svg.text(left + plot_w / 2.0, top + plot_h + 40.0, 12.0, "middle", x_label);
    svg.text(8.0, top - 12.0, 12.0, "start", y_label);
    let names: Vec<String> = series.iter().map(|s| s.name.clone()).collect();
    let dashed: Vec<bool> = series.iter().map(|s| s.dashed).collect();
    legend(&mut svg, left + plot_w + 20.0, top, &names, &dashed);
    svg.finish()
}

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-9 {
        return (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo - pad, hi + pad)
}

fn axis(svg: &mut Svg, left: f64, top: f64, plot_h: f64, lo: f64, hi: f64, plot_w: f64) {
    svg.line(left, top, left, top + plot_h, "#333", 1.0);
    let y_of = |v: f64| top + plot_h * (hi - v) / (hi - lo);
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let y = y_of(v);
        svg.line(left - 4.0, y, left, y, "#333", 1.0);
        svg.text(left - 6.0, y + 3.0, 10.0, "end", &format!("{v:.2}"));
    }
    if lo < 0.0 && hi > 0.0 {
        svg.line(left, y_of(0.0), left + plot_w, y_of(0.0), "#999", 0.5);
    } else {
        svg.line(left, top + plot_h, left + plot_w, top + plot_h, "#333", 1.0);
    }
}

fn legend(svg: &mut Svg, x: f64, y: f64, names: &[String], dashed: &[bool]) {
    for (i, name) in names.iter().enumerate() {
        let yy = y + 16.0 * i as f64;
        let colour = if dashed.is_empty() { palette(i) } else { palette(i / 2) };
        if dashed.get(i).copied().unwrap_or(false) {
            svg.dashed_polyline(&[(x, yy - 4.0), (x + 12.0, yy - 4.0)], colour, true);
        } else {
            svg.rect(x, yy - 9.0, 12.0, 10.0, colour, "");
        }
        svg.text(x + 16.0, yy, 10.0, "start", name);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_is_neutral_and_sign_picks_hue() {
        assert_eq!(signed_color(0.0, 1.0), NEUTRAL);
        assert_eq!(signed_color(-0.0, 1.0), NEUTRAL);
        assert_eq!(signed_color(1.0, 1.0), "#ff0000");
        assert_eq!(signed_color(-2.0, 1.0), "#0000ff");
        assert_eq!(signed_color(0.5, 1.0), "#ff8080");
    }

    #[test]
    fn documents_are_well_formed() {
        let s = bar_chart("t<1>", &["a".into()], &["x".into(), "y".into()], &[vec![(0.1, 0.02), (-0.2, 0.0)]]);
        assert!(s.starts_with("<svg") && s.trim_end().ends_with("</svg>"));
        assert!(s.contains("t&lt;1&gt;"));
        let h = grid_heatmap("g", "h", "T", &["2".into()], &["1".into(), "2".into()], &[vec![0.1, f64::NAN]]);
        assert_eq!(h.matches("<rect").count(), 3);
        let l = line_chart(
            "l",
            "x",
            "y",
            &[Series { name: "a".into(), points: vec![(0.0, 1.0), (1.0, 1.0)], dashed: true }],
        );
        assert!(l.contains("stroke-dasharray"));
    }
}
