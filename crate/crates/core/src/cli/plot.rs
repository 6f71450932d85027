//! Static SVG figures: the stop/decide regions of one policy and the per-node
//! Monte Carlo results against their constraints.

use std::fmt::Write as _;

use crate::policy::PolicyTable;
use crate::simulate::SimulationSummary;

const CONTINUE: &str = "#eeeeee";
const STOP_H0: &str = "#4c72b0";
const STOP_H1: &str = "#dd8452";

fn header(out: &mut String, width: f64, height: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{width}" height="{height}" fill="white"/>"#);
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = (hi - lo).abs().max(f64::MIN_POSITIVE);
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag);
    let mut t = (lo / step).ceil() * step;
    let mut out = Vec::new();
    while t <= hi + 1e-9 * step {
        out.push(if t.abs() < 1e-12 * step { 0.0 } else { t });
        t += step;
    }
    out
}

fn label(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-2 || v.abs() >= 1e4) {
        format!("{v:.0e}")
    } else {
        let s = format!("{v:.4}");
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    }
}

/// Stop/decide regions of `policy` over time `n = 1..N` (x) and state (y).
pub fn policy_regions(policy: &PolicyTable) -> String {
    let (width, height) = (760.0, 480.0);
    let (left, right, top, bottom) = (60.0, 150.0, 30.0, 50.0);
    let pw = width - left - right;
    let ph = height - top - bottom;
    let grid = &policy.grid;
    let horizon = policy.horizon;
    let (lo, hi) = (grid.lower(), grid.upper());
    let h = grid.spacing();
    let x_of = |n: f64| left + (n - 0.5) / horizon as f64 * pw;
    let y_of = |s: f64| top + (hi + 0.5 * h - s) / (hi - lo + h) * ph;

    let mut out = String::new();
    header(&mut out, width, height);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="18" text-anchor="middle" font-size="14">Policy of node {}</text>"#,
        left + pw / 2.0,
        policy.node
    );
    let cell_w = pw / horizon as f64;
    for n in 1..=horizon {
        let step = policy.step(n);
        let class = |j: usize| match (step.stop[j], step.decide[j]) {
            (false, _) => CONTINUE,
            (true, false) => STOP_H0,
            (true, true) => STOP_H1,
        };
        let mut j = 0;
        while j < grid.len() {
            let c = class(j);
            let mut k = j;
            while k + 1 < grid.len() && class(k + 1) == c {
                k += 1;
            }
            let y_top = y_of(grid.value(k) + 0.5 * h);
            let y_bot = y_of(grid.value(j) - 0.5 * h);
            let _ = writeln!(
                out,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}"/>"#,
                x_of(n as f64) - cell_w / 2.0,
                y_top,
                cell_w,
                y_bot - y_top
            );
            j = k + 1;
        }
    }
    let _ = writeln!(
        out,
        r#"<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for t in ticks(1.0, horizon as f64) {
        let x = x_of(t);
        let _ = writeln!(
            out,
            r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
            top + ph,
            top + ph + 5.0,
            top + ph + 18.0,
            label(t)
        );
    }
    for t in ticks(lo, hi) {
        let y = y_of(t);
        let _ = writeln!(
            out,
            r#"<line x1="{}" y1="{y:.2}" x2="{left}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            left - 5.0,
            left - 8.0,
            y + 4.0,
            label(t)
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" text-anchor="middle">time n</text>"#,
        left + pw / 2.0,
        height - 12.0
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">state s</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (i, (fill, text)) in [(CONTINUE, "continue"), (STOP_H0, "stop, decide H0"), (STOP_H1, "stop, decide H1")]
        .iter()
        .enumerate()
    {
        let y = top + 10.0 + 22.0 * i as f64;
        let _ = writeln!(
            out,
            r#"<rect x="{}" y="{y}" width="14" height="14" fill="{fill}" stroke="black"/><text x="{}" y="{}">{text}</text>"#,
            left + pw + 12.0,
            left + pw + 32.0,
            y + 11.0
        );
    }
    out.push_str("</svg>\n");
    out
}

/// One panel per metric: per-node markers, the network average (dashed) and
/// the constraint (red) where one exists.
pub fn results_scatter(summary: &SimulationSummary, constraints: [Option<f64>; 5]) -> String {
    let names = ["α0", "α1", "β0 (MSE)", "β1 (MSE)", "ASN"];
    let value = |s: &crate::simulate::NodeSummary, m: usize| match m {
        0 => s.alpha[0],
        1 => s.alpha[1],
        2 => s.mse[0],
        3 => s.mse[1],
        _ => s.asn,
    };
    let (pw, ph) = (260.0, 220.0);
    let (left, top, gap) = (70.0, 40.0, 90.0);
    let width = left + 5.0 * (pw + gap);
    let height = top + ph + 60.0;
    let k = summary.nodes.len().max(1);

    let mut out = String::new();
    header(&mut out, width, height);
    for (m, name) in names.iter().enumerate() {
        let x0 = left + m as f64 * (pw + gap);
        let mut vals: Vec<f64> = summary.nodes.iter().map(|s| value(s, m)).collect();
        vals.push(value(&summary.network, m));
        if let Some(c) = constraints[m] {
            vals.push(c);
        }
        let mut lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
        let mut hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pad = 0.1 * (hi - lo).max(1e-3 * hi.abs()).max(1e-12);
        lo = (lo - pad).max(0.0);
        hi += pad;
        let y_of = |v: f64| top + (hi - v) / (hi - lo) * ph;
        let x_of = |node: f64| x0 + (node + 0.5) / k as f64 * pw;

        let _ = writeln!(
            out,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{name}</text>"#,
            x0 + pw / 2.0
        );
        let _ = writeln!(out, r#"<rect x="{x0}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);
        for t in ticks(lo, hi) {
            let y = y_of(t);
            let _ = writeln!(
                out,
                r#"<line x1="{}" y1="{y:.2}" x2="{x0}" y2="{y:.2}" stroke="black"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
                x0 - 5.0,
                x0 - 8.0,
                y + 4.0,
                label(t)
            );
        }
        if let Some(c) = constraints[m] {
            let y = y_of(c);
            let _ = writeln!(
                out,
                r#"<line x1="{x0}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="red" stroke-width="1.5"/>"#,
                x0 + pw
            );
        }
        let y = y_of(value(&summary.network, m));
        let _ = writeln!(
            out,
            r#"<line x1="{x0}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="black" stroke-dasharray="6 4"/>"#,
            x0 + pw
        );
        for (node, s) in summary.nodes.iter().enumerate() {
            let _ = writeln!(
                out,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="none" stroke="blue" stroke-width="1.5"/>"#,
                x_of(node as f64),
                y_of(value(s, m))
            );
        }
        let _ = writeln!(
            out,
            r#"<text x="{}" y="{}" text-anchor="middle">node</text>"#,
            x0 + pw / 2.0,
            top + ph + 22.0
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{left}" y="{}">blue circles: single nodes; dashed: network average; red: constraint. {} runs, seed {}</text>"#,
        height - 12.0,
        summary.runs,
        summary.seed
    );
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ticks_are_round_and_cover_the_range() {
        assert_eq!(ticks(-9.0, 9.0), vec![-5.0, 0.0, 5.0]);
        let t = ticks(1.0, 50.0);
        assert_eq!(t.first(), Some(&10.0));
        assert_eq!(t.last(), Some(&50.0));
    }
}
