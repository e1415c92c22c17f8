//! Columnar data for plotting.

use std::fmt::Write as _;

use crate::verify::ConstraintReport;

/// Two CSV columns: time in seconds and the number of fingers in contact.
pub fn emit_plot_data(report: &ConstraintReport, dt: f64) -> String {
    let mut out = String::from("t,contact_count\n");
    for (k, c) in report.contact_count.iter().enumerate() {
        let _ = writeln!(out, "{:.2},{}", k as f64 * dt, c);
    }
    out
}
