//! Plain-text rendering of run reports.

use std::fmt::Write;

use crate::runner::{RunReport, Summary};

fn opt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.3}"))
}

fn line(label: &str, s: &Summary) -> String {
    format!(
        "{label:<24} {:>5} {:>5} {:>6} {:>8} {:>8} {:>6} {:>6} {:>6}",
        s.n_samples,
        s.n_failed,
        s.rejected,
        opt(s.min_ade),
        opt(s.min_fde),
        opt(s.miss_rate),
        opt(s.cr),
        opt(s.sd)
    )
}

/// One line per scenario and batch, plus a header.
pub fn render_text(report: &RunReport) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<24} {:>5} {:>5} {:>6} {:>8} {:>8} {:>6} {:>6} {:>6}",
        "scenario", "n", "fail", "rej", "minADE", "minFDE", "MR", "CR", "SD"
    );
    for s in &report.scenarios {
        let _ = writeln!(out, "{}", line(&s.id, &s.overall));
        if s.batches.len() > 1 {
            for b in &s.batches {
                let label = match b.timepoint {
                    Some(t) => format!("  t={t}"),
                    None => "  t=program".into(),
                };
                let _ = writeln!(out, "{}", line(&label, &b.summary));
            }
        }
    }
    out
}
