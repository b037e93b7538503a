use std::fmt::Write;

use crate::eval::metrics::MetricReport;
use crate::eval::pcj::PcjCurve;

fn value(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => format!("{x:.6}"),
        _ => "nan".into(),
    }
}

/// Long format, one `method,category,value` row per report column.
pub fn mpjpe_csv(stamp: &str, rows: &[(String, &MetricReport)]) -> String {
    let mut s = format!("# {stamp}\nmethod,category,value\n");
    for (method, report) in rows {
        for (col, v) in &report.columns {
            writeln!(s, "{method},{},{}", col.label(), value(*v)).expect("string write");
        }
    }
    s
}

/// `factor,body,fingers` with fractions in `[0, 1]`.
pub fn pcj_csv(stamp: &str, curve: &PcjCurve) -> String {
    let mut s = format!("# {stamp}\nfactor,body,fingers\n");
    for ((f, b), g) in curve.factors.iter().zip(&curve.body).zip(&curve.fingers) {
        writeln!(s, "{f:.2},{},{}", value(Some(*b)), value(Some(*g))).expect("string write");
    }
    s
}

/// Line plot of both PCJ curves in percent.
pub fn pcj_svg(stamp: &str, curve: &PcjCurve) -> String {
    let (w, h, m) = (640.0, 400.0, 50.0);
    let x = |f: f64| m + f * (w - 2.0 * m);
    let y = |v: f64| h - m - v * (h - 2.0 * m);
    let mut s = String::new();
    writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#).unwrap();
    writeln!(s, "<!-- {stamp} -->").unwrap();
    writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#).unwrap();
    writeln!(
        s,
        r#"<path d="M{:.1},{:.1} L{:.1},{:.1} L{:.1},{:.1}" fill="none" stroke="black"/>"#,
        x(0.0),
        y(1.0),
        x(0.0),
        y(0.0),
        x(1.0),
        y(0.0)
    )
    .unwrap();
    for t in 0..=4 {
        let v = t as f64 / 4.0;
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="end">{:.0}%</text>"#, x(0.0) - 6.0, y(v) + 4.0, v * 100.0).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="11" text-anchor="middle">{v:.2}</text>"#, x(v), y(0.0) + 16.0).unwrap();
    }
    writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12" text-anchor="middle">factor</text>"#, w / 2.0, h - 10.0).unwrap();
    for (values, colour, label, row) in [(&curve.body, "#1f77b4", "body", 0.0), (&curve.fingers, "#d62728", "fingers", 1.0)] {
        let pts: Vec<String> = curve
            .factors
            .iter()
            .zip(values.iter())
            .filter(|(_, v)| v.is_finite())
            .map(|(f, v)| format!("{:.1},{:.1}", x(*f), y(*v)))
            .collect();
        if !pts.is_empty() {
            writeln!(s, r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="2"/>"#, pts.join(" ")).unwrap();
        }
        let ly = m + 10.0 + 18.0 * row;
        writeln!(s, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="2"/>"#, w - 150.0, w - 120.0).unwrap();
        writeln!(s, r#"<text x="{:.1}" y="{:.1}" font-size="12">{label}</text>"#, w - 112.0, ly + 4.0).unwrap();
    }
    s.push_str("</svg>\n");
    s
}
