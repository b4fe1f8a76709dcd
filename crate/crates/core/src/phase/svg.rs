//! Static SVG plots of a bone's source, conditioned series, fit and phase.

use std::fmt::Write as _;

use super::BonePhase;

const W: f64 = 900.0;
const PANEL_H: f64 = 160.0;
const PAD: f64 = 30.0;

fn polyline(out: &mut String, values: &[f64], top: f64, lo: f64, hi: f64, colour: &str) {
    let n = values.len().max(2) as f64 - 1.0;
    let span = (hi - lo).max(1e-12);
    let pts: Vec<String> = values
        .iter()
        .enumerate()
        .map(|(i, v)| {
            let x = PAD + (W - 2.0 * PAD) * i as f64 / n;
            let y = top + PANEL_H - (v - lo) / span * PANEL_H;
            format!("{x:.1},{y:.1}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{colour}" stroke-width="1.2" points="{}"/>"#,
        pts.join(" ")
    );
}

fn range(series: &[&[f64]]) -> (f64, f64) {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for s in series {
        for &v in *s {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    if !lo.is_finite() {
        return (-1.0, 1.0);
    }
    let m = 0.05 * (hi - lo).max(1e-9);
    (lo - m, hi + m)
}

pub fn phase_plot_svg(bone: &BonePhase, title: &str) -> String {
    let t = &bone.track;
    let fit: Vec<f64> = (0..t.len()).map(|i| t.a[i] * t.phi[i].sin() + t.b[i]).collect();
    let fx: Vec<f64> = t.feature.iter().map(|v| v[0]).collect();
    let fy: Vec<f64> = t.feature.iter().map(|v| v[1]).collect();
    let h = 3.0 * (PANEL_H + PAD) + PAD;
    let mut out = String::new();
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let panels: [(&str, Vec<(&[f64], &str)>); 3] = [
        ("source", vec![(&bone.source.values, "#333")]),
        ("conditioned and fit", vec![(&bone.conditioned.values, "#1f77b4"), (&fit, "#d62728")]),
        ("phase feature", vec![(&fx, "#2ca02c"), (&fy, "#9467bd")]),
    ];
    for (k, (label, lines)) in panels.iter().enumerate() {
        let top = PAD + k as f64 * (PANEL_H + PAD);
        let _ = writeln!(
            out,
            r##"<rect x="{PAD}" y="{top}" width="{}" height="{PANEL_H}" fill="none" stroke="#bbb"/>"##,
            W - 2.0 * PAD
        );
        let _ = writeln!(out, r#"<text x="{PAD}" y="{}">{title}: {label}</text>"#, top - 6.0);
        let all: Vec<&[f64]> = lines.iter().map(|(v, _)| *v).collect();
        let (lo, hi) = range(&all);
        for (v, c) in lines {
            polyline(&mut out, v, top, lo, hi, c);
        }
    }
    out.push_str("</svg>\n");
    out
}
