//! Plain-text tables in the Worst / Mean / Best layout, scores ×100.

use std::fmt::Write;

use super::analysis::CrossCell;
use super::EvalReport;
use crate::alignment::Metric;

fn pct(x: f64) -> String {
    format!("{:.2}", x * 100.0)
}

pub fn render_reports(reports: &[EvalReport]) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "{:<6} {:>6} | {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7} | {:>5}",
        "mode", "acc", "Cos-W", "Cos-M", "Cos-B", "Sp-W", "Sp-M", "Sp-B", "n"
    );
    for r in reports {
        let acc = r.accuracy.map_or("-".to_owned(), pct);
        let cells = |m: Metric| {
            let w = r.metric(m);
            format!("{:>7} {:>7} {:>7}", pct(w.worst.mean), pct(w.mean.mean), pct(w.best.mean))
        };
        let _ = writeln!(
            s,
            "{:<6} {:>6} | {} | {} | {:>5}",
            r.mode.label(),
            acc,
            cells(Metric::CcCos),
            cells(Metric::CcSp),
            r.instances
        );
    }
    let _ = writeln!(s, "(standard errors ×100)");
    for r in reports {
        let se = |m: Metric| {
            let w = r.metric(m);
            format!("{} {} {}", pct(w.worst.se), pct(w.mean.se), pct(w.best.se))
        };
        let _ = writeln!(s, "{:<6} cos {} | sp {}", r.mode.label(), se(Metric::CcCos), se(Metric::CcSp));
    }
    s
}

pub fn render_cross(cells: &[CrossCell]) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "{:<10} {:<10} {:<5} {:>7} {:>8} {:>7} {:>8}", "source", "target", "mode", "Cos-M", "Δ%", "Sp-M", "Δ%");
    let d = |x: Option<f64>| x.map_or("-".to_owned(), |v| format!("{v:+.2}"));
    for c in cells {
        let _ = writeln!(
            s,
            "{:<10} {:<10} {:<5} {:>7} {:>8} {:>7} {:>8}",
            c.source,
            c.target,
            c.mode.label(),
            pct(c.cc_cos_mean),
            d(c.cc_cos_delta_pct),
            pct(c.cc_sp_mean),
            d(c.cc_sp_delta_pct)
        );
    }
    s
}
