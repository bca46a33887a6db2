//! SVG box plots and a markdown summary of an evaluation.

use std::collections::BTreeSet;
use std::fmt::Write;

use vrmsi_core::metrics::{EvalReport, Metric};
use vrmsi_core::recon::Method;

const BOX_W: f64 = 56.0;
const SLOT_W: f64 = 110.0;
const LEFT: f64 = 70.0;
const TOP: f64 = 40.0;
const PLOT_H: f64 = 260.0;

pub fn methods_in(report: &EvalReport) -> Vec<Method> {
    report.records.iter().map(|r| r.method).collect::<BTreeSet<_>>().into_iter().collect()
}

fn title(metric: Metric) -> &'static str {
    match metric {
        Metric::Ssim => "SSIM",
        Metric::Psnr => "PSNR (dB)",
        Metric::Resi => "RESI",
    }
}

struct BoxStats {
    lo: f64,
    q1: f64,
    median: f64,
    q3: f64,
    hi: f64,
    outliers: Vec<f64>,
}

/// Tukey box: whiskers reach the furthest points within 1.5 IQR.
fn box_stats(report: &EvalReport, method: Method, metric: Metric) -> Option<BoxStats> {
    let s = report.summary(method, metric)?;
    let values = report.values(method, metric);
    let (fence_lo, fence_hi) = (s.q1 - 1.5 * s.iqr, s.q3 + 1.5 * s.iqr);
    let inside = values.iter().copied().filter(|v| (fence_lo..=fence_hi).contains(v));
    let lo = inside.clone().fold(f64::INFINITY, f64::min);
    let hi = inside.fold(f64::NEG_INFINITY, f64::max);
    Some(BoxStats {
        lo,
        q1: s.q1,
        median: s.median,
        q3: s.q3,
        hi,
        outliers: values.into_iter().filter(|v| !(fence_lo..=fence_hi).contains(v)).collect(),
    })
}

fn nice_range(lo: f64, hi: f64) -> (f64, f64) {
    if !(lo.is_finite() && hi.is_finite()) {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.05 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

/// One box per method present in the report. Methods without finite values
/// (PSNR of an exact reconstruction) get an empty, labelled slot.
pub fn box_plot_svg(report: &EvalReport, metric: Metric) -> String {
    let methods = methods_in(report);
    let stats: Vec<Option<BoxStats>> = methods.iter().map(|&m| box_stats(report, m, metric)).collect();
    let lo = stats.iter().flatten().map(|b| b.lo.min(b.outliers.iter().copied().fold(b.lo, f64::min))).fold(f64::INFINITY, f64::min);
    let hi = stats.iter().flatten().map(|b| b.hi.max(b.outliers.iter().copied().fold(b.hi, f64::max))).fold(f64::NEG_INFINITY, f64::max);
    let (ymin, ymax) = nice_range(lo, hi);
    let y = |v: f64| TOP + PLOT_H * (1.0 - (v - ymin) / (ymax - ymin));
    let width = LEFT + SLOT_W * methods.len().max(1) as f64 + 20.0;
    let height = TOP + PLOT_H + 50.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, title(metric));
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{}" stroke="black"/>"#, TOP + PLOT_H);
    for i in 0..=4 {
        let v = ymin + (ymax - ymin) * i as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{yy:.2}" x2="{LEFT}" y2="{yy:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            yy + 4.0,
            tick_label(v, ymax - ymin)
        );
    }
    for (i, (method, b)) in methods.iter().zip(&stats).enumerate() {
        let cx = LEFT + SLOT_W * (i as f64 + 0.5);
        let label = method.label();
        match b {
            None => {
                let _ = writeln!(
                    s,
                    r#"<g class="box empty" data-method="{label}"><text x="{cx}" y="{:.2}" text-anchor="middle" fill="gray">no finite values</text></g>"#,
                    TOP + PLOT_H / 2.0
                );
            }
            Some(b) => {
                let (x0, x1) = (cx - BOX_W / 2.0, cx + BOX_W / 2.0);
                let _ = writeln!(
                    s,
                    r#"<g class="box" data-method="{label}" data-q1="{}" data-median="{}" data-q3="{}">"#,
                    b.q1, b.median, b.q3
                );
                let _ = writeln!(
                    s,
                    r#"<line x1="{cx}" y1="{:.2}" x2="{cx}" y2="{:.2}" stroke="black"/><line x1="{cx}" y1="{:.2}" x2="{cx}" y2="{:.2}" stroke="black"/>"#,
                    y(b.hi),
                    y(b.q3),
                    y(b.q1),
                    y(b.lo)
                );
                for w in [b.lo, b.hi] {
                    let _ = writeln!(
                        s,
                        r#"<line x1="{}" y1="{:.2}" x2="{}" y2="{:.2}" stroke="black"/>"#,
                        cx - BOX_W / 4.0,
                        y(w),
                        cx + BOX_W / 4.0,
                        y(w)
                    );
                }
                let _ = writeln!(
                    s,
                    r##"<rect x="{x0}" y="{:.2}" width="{BOX_W}" height="{:.2}" fill="#cfe0f3" stroke="black"/>"##,
                    y(b.q3),
                    (y(b.q1) - y(b.q3)).max(0.0)
                );
                let _ = writeln!(
                    s,
                    r#"<line x1="{x0}" y1="{:.2}" x2="{x1}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
                    y(b.median),
                    y(b.median)
                );
                for &o in &b.outliers {
                    let _ = writeln!(s, r#"<circle cx="{cx}" cy="{:.2}" r="2.5" fill="none" stroke="black"/>"#, y(o));
                }
                s.push_str("</g>\n");
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{cx}" y="{:.2}" text-anchor="middle">{label}</text>"#,
            TOP + PLOT_H + 20.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick_label(v: f64, span: f64) -> String {
    let digits = if span > 0.0 { (2.0 - span.log10().floor()).clamp(0.0, 6.0) as usize } else { 3 };
    format!("{v:.digits$}")
}

fn fmt_p(p: f64) -> String {
    if p < 1e-3 {
        format!("{p:.2e}")
    } else {
        format!("{p:.4}")
    }
}

/// Medians and IQRs per method and metric, then pairwise two-sided
/// Mann-Whitney p-values.
pub fn summary_markdown(report: &EvalReport) -> String {
    let methods = methods_in(report);
    let mut s = String::from("# Evaluation summary\n\n");
    let slices = report
        .records
        .iter()
        .map(|r| (&r.subject, r.slice))
        .collect::<BTreeSet<_>>()
        .len();
    let _ = writeln!(s, "{slices} slices, {} methods.\n", methods.len());
    for metric in Metric::ALL {
        let _ = writeln!(s, "## {}\n", title(metric));
        s.push_str("| Method | n | Median | Q1 | Q3 | IQR |\n|---|---|---|---|---|---|\n");
        for &m in &methods {
            match report.summary(m, metric) {
                Some(x) => {
                    let _ = writeln!(
                        s,
                        "| {} | {} | {:.4} | {:.4} | {:.4} | {:.4} |",
                        m.label(),
                        x.n,
                        x.median,
                        x.q1,
                        x.q3,
                        x.iqr
                    );
                }
                None => {
                    let _ = writeln!(s, "| {} | 0 | - | - | - | - |", m.label());
                }
            }
        }
        let pairs: Vec<_> = report.comparisons.iter().filter(|c| c.metric == metric).collect();
        if !pairs.is_empty() {
            s.push_str("\n| A | B | U | p (two-sided) |\n|---|---|---|---|\n");
            for c in pairs {
                let _ = writeln!(s, "| {} | {} | {} | {} |", c.a.label(), c.b.label(), c.u, fmt_p(c.p_two_sided));
            }
        }
        s.push('\n');
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use vrmsi_core::metrics::EvalRecord;

    fn record(slice: usize, method: Method, ssim: f64, psnr: f64) -> EvalRecord {
        EvalRecord {
            subject: "sub-000".into(),
            slice,
            method,
            ssim,
            psnr_db: psnr,
            resi: Some(0.9 + 0.01 * slice as f64),
        }
    }

    #[test]
    fn outliers_outside_fences() {
        let recs = (0..9)
            .map(|i| record(i, Method::CrVr, 0.8 + 0.001 * i as f64, 30.0))
            .chain([record(9, Method::CrVr, 0.2, 30.0)])
            .collect();
        let report = EvalReport::from_records(recs).unwrap();
        let b = box_stats(&report, Method::CrVr, Metric::Ssim).unwrap();
        assert_eq!(b.outliers, vec![0.2]);
        assert!(b.lo > 0.79 && b.hi < 0.81);
        assert!(box_plot_svg(&report, Metric::Ssim).contains("<circle"));
    }

    #[test]
    fn markdown_lists_every_method() {
        let recs = (0..4)
            .flat_map(|i| [record(i, Method::Reference, 1.0, f64::INFINITY), record(i, Method::DlVr, 0.9, 35.0)])
            .collect();
        let md = summary_markdown(&EvalReport::from_records(recs).unwrap());
        assert!(md.contains("| REFERENCE | 4 | 1.0000"));
        assert!(md.contains("| REFERENCE | 0 | - |"));
        assert!(md.contains("| DL_VR | REFERENCE |") || md.contains("| REFERENCE | DL_VR |"));
    }
}
