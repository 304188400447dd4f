//! Minimal SVG bar charts.

use std::fmt::Write as _;

use cooktf_core::eval::LongTailReport;
use cooktf_core::scene::TailPart;

use crate::pipeline::SweepRow;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 6] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// One group of bars per category, one bar per series. Missing values are
/// drawn as gaps. The value axis always includes zero.
pub fn grouped_bars(title: &str, y_label: &str, categories: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    let values = series.iter().flat_map(|(_, v)| v.iter().flatten().copied());
    let (mut lo, mut hi) = values.fold((0.0f64, 0.0f64), |(l, h), v| (l.min(v), h.max(v)));
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let pad = 0.05 * (hi - lo);
    lo -= if lo < 0.0 { pad } else { 0.0 };
    hi += pad;
    let plot_w = WIDTH - 2.0 * MARGIN;
    let plot_h = HEIGHT - 2.0 * MARGIN;
    let y = |v: f64| MARGIN + plot_h * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#, WIDTH / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.1}" transform="rotate(-90 16 {:.1})" text-anchor="middle">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r##"<line x1="{MARGIN}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="#ddd"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"##,
            WIDTH - MARGIN,
            y(v),
            y(v),
            MARGIN - 4.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(s, r#"<line x1="{MARGIN}" x2="{:.1}" y1="{:.1}" y2="{:.1}" stroke="black"/>"#, WIDTH - MARGIN, y(0.0), y(0.0));

    let n_cat = categories.len().max(1) as f64;
    let group_w = plot_w / n_cat;
    let bar_w = 0.8 * group_w / series.len().max(1) as f64;
    for (c, cat) in categories.iter().enumerate() {
        let x0 = MARGIN + group_w * c as f64 + 0.1 * group_w;
        for (k, (_, vals)) in series.iter().enumerate() {
            if let Some(v) = vals.get(c).copied().flatten() {
                let (top, bottom) = if v >= 0.0 { (y(v), y(0.0)) } else { (y(0.0), y(v)) };
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{top:.1}" width="{bar_w:.1}" height="{:.1}" fill="{}"/>"#,
                    x0 + bar_w * k as f64,
                    bottom - top,
                    COLORS[k % COLORS.len()]
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            MARGIN + group_w * (c as f64 + 0.5),
            HEIGHT - MARGIN + 16.0,
            escape(cat)
        );
    }
    for (k, (name, _)) in series.iter().enumerate() {
        let lx = MARGIN + 110.0 * k as f64;
        let ly = HEIGHT - 14.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{ly:.1}">{}</text>"#,
            ly - 9.0,
            COLORS[k % COLORS.len()],
            lx + 14.0,
            escape(name)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Per-partition mean-recall deltas, one series per K.
pub fn longtail_svg(report: &LongTailReport) -> String {
    let cats: Vec<String> = TailPart::ALL.iter().map(|p| p.as_str().to_string()).collect();
    let series: Vec<(String, Vec<Option<f64>>)> =
        report.delta.iter().map(|(k, d)| (format!("mR@{k}"), d.to_vec())).collect();
    grouped_bars("Mean recall change per partition", "delta mR", &cats, &series)
}

/// Mean recall per batch size, one series per K.
pub fn sweep_svg(rows: &[SweepRow]) -> String {
    let cats: Vec<String> = rows.iter().map(|r| format!("B={}", r.batch_size)).collect();
    let ks: Vec<usize> = rows.first().map(|r| r.mean_recall.keys().copied().collect()).unwrap_or_default();
    let series: Vec<(String, Vec<Option<f64>>)> = ks
        .iter()
        .map(|k| (format!("mR@{k}"), rows.iter().map(|r| r.mean_recall.get(k).copied().flatten()).collect()))
        .collect();
    grouped_bars("Mean recall by batch size", "mR", &cats, &series)
}
