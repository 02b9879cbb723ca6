use std::fmt::Write as _;
use std::io::Write;

use serde::Serialize;

use crate::error::Result;

/// Column order of the metrics CSV. `wall_ms` is last so that comparisons
/// across runs can drop it.
pub const CSV_COLUMNS: [&str; 10] = [
    "env_steps",
    "iteration",
    "mean_return",
    "mean_reward_per_step",
    "success_rate",
    "mean_steps",
    "grad_norm",
    "running_avg_sq_grad_norm",
    "stepsize",
    "wall_ms",
];

/// One evaluation point.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricsRow {
    pub env_steps: u64,
    pub iteration: u64,
    pub mean_return: f64,
    pub mean_reward_per_step: f64,
    pub success_rate: Option<f64>,
    pub mean_steps: Option<f64>,
    /// Norm of the last estimate (or of the exact gradient when tracked).
    pub grad_norm: f64,
    /// `(1/k) Σ_{j ≤ k} ‖g_j‖²` over the iterations so far.
    pub running_avg_sq_grad_norm: f64,
    pub stepsize: f64,
    pub wall_ms: u64,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl MetricsRow {
    pub fn csv_line(&self) -> String {
        let mut s = String::new();
        write!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            self.env_steps,
            self.iteration,
            self.mean_return,
            self.mean_reward_per_step,
            opt(self.success_rate),
            opt(self.mean_steps),
            self.grad_norm,
            self.running_avg_sq_grad_norm,
            self.stepsize,
            self.wall_ms
        )
        .expect("writing to a String cannot fail");
        s
    }
}

pub fn csv_header() -> String {
    CSV_COLUMNS.join(",")
}

/// Writes the header and rows.
pub fn write_csv<W: Write>(mut out: W, rows: &[MetricsRow]) -> Result<()> {
    writeln!(out, "{}", csv_header())?;
    for row in rows {
        writeln!(out, "{}", row.csv_line())?;
    }
    Ok(())
}

/// The CSV text with the wall-clock column removed from every line.
pub fn strip_wall_clock(csv: &str) -> String {
    csv.lines()
        .map(|line| line.rsplit_once(',').map_or(line, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}
