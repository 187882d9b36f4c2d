//! Static horizontal bar charts.

use std::fmt::Write;

const ROW: f64 = 24.0;
const LABEL_W: f64 = 180.0;
const PLOT_W: f64 = 360.0;
const VALUE_W: f64 = 80.0;
const TOP: f64 = 40.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn value_text(v: f64) -> String {
    if v.is_nan() {
        "n/a".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.4}")
    }
}

/// One bar per entry, drawn from zero. Non-finite values get no bar. The axis
/// always includes zero and the given `range` if any.
pub fn bar_chart(title: &str, bars: &[(String, f64)], range: Option<(f64, f64)>) -> String {
    let finite = bars.iter().map(|(_, v)| *v).filter(|v| v.is_finite());
    let (mut lo, mut hi) = range.unwrap_or((0.0, 0.0));
    for v in finite {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    lo = lo.min(0.0);
    hi = hi.max(0.0);
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let x = |v: f64| LABEL_W + (v - lo) / (hi - lo) * PLOT_W;
    let width = LABEL_W + PLOT_W + VALUE_W;
    let height = TOP + ROW * bars.len() as f64 + 30.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" font-size="14" font-weight="bold">{}</text>"#, 8, escape(title));
    let zero = x(0.0);
    for (i, (label, v)) in bars.iter().enumerate() {
        let y = TOP + ROW * i as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
            LABEL_W - 6.0,
            y + 16.0,
            escape(label)
        );
        if v.is_finite() {
            let (a, b) = if *v >= 0.0 { (zero, x(*v)) } else { (x(*v), zero) };
            let fill = if *v >= 0.0 { "#4c72b0" } else { "#c44e52" };
            let _ = writeln!(
                s,
                r#"<rect x="{a:.1}" y="{:.1}" width="{:.1}" height="{:.1}" fill="{fill}"/>"#,
                y + 4.0,
                (b - a).max(0.5),
                ROW - 8.0
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}">{}</text>"#,
            LABEL_W + PLOT_W + 6.0,
            y + 16.0,
            value_text(*v)
        );
    }
    let axis_y = TOP + ROW * bars.len() as f64;
    let _ = writeln!(
        s,
        r##"<line x1="{zero:.1}" y1="{TOP:.1}" x2="{zero:.1}" y2="{axis_y:.1}" stroke="#333"/>"##
    );
    for v in [lo, 0.0, hi] {
        let _ = writeln!(
            s,
            r##"<text x="{:.1}" y="{:.1}" text-anchor="middle" fill="#555">{}</text>"##,
            x(v),
            axis_y + 16.0,
            value_text(v)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_rows_and_escapes() {
        let svg = bar_chart(
            "κ <per factor>",
            &[("a&b".into(), 0.5), ("neg".into(), -0.25), ("undef".into(), f64::NAN)],
            Some((-1.0, 1.0)),
        );
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("&lt;per factor&gt;"));
        assert!(svg.contains("a&amp;b"));
        assert_eq!(svg.matches("<rect").count(), 2);
        assert!(svg.contains("n/a"));
        assert_eq!(svg, bar_chart("κ <per factor>", &[("a&b".into(), 0.5), ("neg".into(), -0.25), ("undef".into(), f64::NAN)], Some((-1.0, 1.0))));
    }
}
