//! Point, trace and summary outputs of a solve.

use std::io::Write;

use mcpa_core::optimizer::{Metrics, SolveReport};
use nalgebra::Vector3;
use serde::Serialize;

use crate::error::IoResult;
use crate::json::{self, format_f64};

pub const POINTS_HEADER: [&str; 4] = ["track_id", "x", "y", "z"];
pub const REPORT_HEADER: [&str; 5] = ["iter", "cost", "lambda", "accepted", "wall_ms"];

/// Writes reconstructed points; tracks without a point are omitted.
pub fn write_points_csv<W: Write>(out: W, points: &[Option<Vector3<f64>>]) -> IoResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(POINTS_HEADER)?;
    for (k, x) in points.iter().enumerate() {
        if let Some(x) = x {
            w.write_record([k.to_string(), format_f64(x.x), format_f64(x.y), format_f64(x.z)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Writes the per-iteration trace. With `timing` off the wall-clock column
/// is zeroed so repeated runs produce identical bytes.
pub fn write_report_csv<W: Write>(out: W, report: &SolveReport, timing: bool) -> IoResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REPORT_HEADER)?;
    for r in &report.trace {
        let wall = if timing { r.wall_ms } else { 0.0 };
        w.write_record([
            r.iter.to_string(),
            format_f64(r.cost),
            format_f64(r.lambda),
            r.accepted.to_string(),
            format_f64(wall),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
pub struct MetricsSummary {
    pub eps_r: f64,
    pub eps_t: f64,
    pub eps_t_abs: f64,
    pub eps_x: Option<f64>,
    pub eps_p: Option<f64>,
    pub excluded_translations: usize,
}

impl From<&Metrics> for MetricsSummary {
    fn from(m: &Metrics) -> Self {
        Self {
            eps_r: m.eps_r,
            eps_t: m.eps_t,
            eps_t_abs: m.eps_t_abs,
            eps_x: m.eps_x,
            eps_p: m.eps_p,
            excluded_translations: m.excluded_translations,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SolveSummary {
    pub mode: String,
    pub poses: usize,
    pub tracks: usize,
    pub observations: usize,
    pub iterations: usize,
    pub accepted_steps: usize,
    pub initial_cost: f64,
    pub final_cost: f64,
    pub termination: String,
    pub wall_time_s: f64,
    pub hessian_bytes: usize,
    pub dense_hessian_bytes: usize,
    pub skipped_terms: usize,
    pub dropped_tracks: usize,
    /// Present when the problem carries ground truth.
    pub metrics: Option<MetricsSummary>,
}

impl SolveSummary {
    pub fn new(
        mode: &str,
        counts: (usize, usize, usize),
        report: &SolveReport,
        metrics: Option<&Metrics>,
        timing: bool,
    ) -> Self {
        let (poses, tracks, observations) = counts;
        Self {
            mode: mode.to_string(),
            poses,
            tracks,
            observations,
            iterations: report.iterations,
            accepted_steps: report.accepted_steps,
            initial_cost: report.initial_cost,
            final_cost: report.final_cost,
            termination: report.termination.name().to_string(),
            wall_time_s: if timing { report.wall_time } else { 0.0 },
            hessian_bytes: report.hessian_bytes,
            dense_hessian_bytes: report.dense_hessian_bytes,
            skipped_terms: report.skipped_terms,
            dropped_tracks: report.dropped_tracks,
            metrics: metrics.map(MetricsSummary::from),
        }
    }

    pub fn to_json(&self) -> IoResult<String> {
        json::to_string(self)
    }
}
