//! Synthetic comparison harness: one CSV row per (cell, trial, mode) and a
//! median summary per (cell, mode).

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::str::FromStr;
use std::time::Instant;

use mcpa_core::base_select::BaseStrategy;
use mcpa_core::optimizer::{error_metrics, gauge_align, gauge_align_points, select_all_bases, solve, Mode};
use mcpa_core::synth::{generate_problem, RigPreset, SynthSpec, TrajectoryKind};
use mcpa_core::{Pose64, Problem64};

use crate::error::{IoError, IoResult};
use crate::json::format_f64;

pub const BENCH_HEADER: [&str; 12] = [
    "cell",
    "trial",
    "mode",
    "poses",
    "points",
    "observations",
    "runtime_s",
    "hessian_bytes",
    "eps_r",
    "eps_t",
    "eps_x",
    "status",
];

pub const SUMMARY_HEADER: [&str; 11] = [
    "cell",
    "mode",
    "trials_ok",
    "poses",
    "points",
    "observations",
    "runtime_s",
    "hessian_bytes",
    "eps_r",
    "eps_t",
    "eps_x",
];

/// One grid point of the comparison.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BenchCell {
    pub poses: usize,
    pub points: usize,
    pub sigma_max: f64,
}

impl FromStr for BenchCell {
    type Err = String;

    /// `POSESxPOINTSxSIGMA`, e.g. `50x1000x4`.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let parts: Vec<&str> = s.split('x').collect();
        let [p, n, sg] = parts.as_slice() else {
            return Err(format!("cell {s:?} is not POSESxPOINTSxSIGMA"));
        };
        Ok(Self {
            poses: p.parse().map_err(|_| format!("invalid pose count {p:?}"))?,
            points: n.parse().map_err(|_| format!("invalid point count {n:?}"))?,
            sigma_max: sg.parse().map_err(|_| format!("invalid sigma {sg:?}"))?,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchSpec {
    pub cells: Vec<BenchCell>,
    pub modes: Vec<Mode>,
    pub trials: usize,
    pub seed_base: u64,
    pub rig_preset: RigPreset,
    pub trajectory: TrajectoryKind,
    pub max_iters: usize,
    pub base_strategy: BaseStrategy,
    /// When false, runtimes are reported as zero so output is reproducible.
    pub timing: bool,
}

impl Default for BenchSpec {
    fn default() -> Self {
        Self {
            cells: vec![BenchCell { poses: 50, points: 1000, sigma_max: 4.0 }],
            modes: vec![Mode::Mcpa, Mode::Mcpalr, Mode::BaselineBa],
            trials: 1,
            seed_base: 0,
            rig_preset: RigPreset::Forward,
            trajectory: TrajectoryKind::Linear,
            max_iters: 10,
            base_strategy: BaseStrategy::Roundness,
            timing: true,
        }
    }
}

impl BenchSpec {
    pub fn validate(&self) -> IoResult<()> {
        let bad = |m: &str| Err(IoError::parse("bench spec", m));
        if self.trials == 0 {
            return bad("trials must be at least 1");
        }
        if self.cells.is_empty() || self.modes.is_empty() {
            return bad("need at least one cell and one mode");
        }
        Ok(())
    }

    /// Seed of `(cell, trial)`; distinct cells never share a stream.
    pub fn trial_seed(&self, cell: usize, trial: usize) -> u64 {
        let mut z = self.seed_base ^ ((cell as u64) << 32) ^ trial as u64;
        // splitmix64 finalizer
        z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
        z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        z ^ (z >> 31)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub cell: usize,
    pub trial: usize,
    pub mode: Mode,
    pub poses: usize,
    /// Tracks that entered the solve.
    pub points: usize,
    pub observations: usize,
    pub runtime_s: Option<f64>,
    pub hessian_bytes: Option<usize>,
    pub eps_r: Option<f64>,
    pub eps_t: Option<f64>,
    pub eps_x: Option<f64>,
    /// `ok`, or the error that stopped this run.
    pub status: String,
}

impl BenchRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn record(&self) -> Vec<String> {
        let f = |x: Option<f64>| x.map(format_f64).unwrap_or_default();
        vec![
            self.cell.to_string(),
            self.trial.to_string(),
            self.mode.name().to_string(),
            self.poses.to_string(),
            self.points.to_string(),
            self.observations.to_string(),
            f(self.runtime_s),
            self.hessian_bytes.map(|b| b.to_string()).unwrap_or_default(),
            f(self.eps_r),
            f(self.eps_t),
            f(self.eps_x),
            self.status.clone(),
        ]
    }
}

fn run_mode(
    spec: &BenchSpec,
    base: &Problem64,
    gt_poses: &[Pose64],
    mode: Mode,
    row: &mut BenchRow,
) -> Result<(), String> {
    let mut problem = base.clone();
    problem.mode = mode;
    problem.settings.max_iters = spec.max_iters;
    if mode != Mode::BaselineBa {
        // Bases are chosen once at the initial poses, before the timed solve.
        select_all_bases(&mut problem.tracks, &problem.poses, spec.base_strategy).map_err(|e| e.to_string())?;
    }
    row.points = problem.tracks.len();
    row.observations = problem.observation_count();

    let start = Instant::now();
    let solution = solve(&problem).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed().as_secs_f64();

    let est = gauge_align(&solution.poses);
    let gt = gauge_align(gt_poses);
    let est_points = gauge_align_points(&solution.poses[0], &solution.points);
    let gt_points: Vec<_> = problem.tracks.iter().map(|t| t.world_hint).collect();
    let gt_points = gauge_align_points(&gt_poses[0], &gt_points);
    let m = error_metrics(&est, &gt, &est_points, &gt_points, &problem).map_err(|e| e.to_string())?;

    row.runtime_s = Some(if spec.timing { elapsed } else { 0.0 });
    row.hessian_bytes = Some(solution.report.hessian_bytes);
    row.eps_r = Some(m.eps_r);
    row.eps_t = Some(m.eps_t);
    row.eps_x = m.eps_x;
    Ok(())
}

/// Runs every (cell, trial, mode) combination, handing each row to `sink`
/// as soon as it is complete. Failures become rows with a non-`ok` status.
pub fn run_bench(spec: &BenchSpec, mut sink: impl FnMut(&BenchRow) -> IoResult<()>) -> IoResult<Vec<BenchRow>> {
    spec.validate()?;
    let mut rows = Vec::new();
    for (ci, cell) in spec.cells.iter().enumerate() {
        for trial in 0..spec.trials {
            let synth = SynthSpec {
                rig_preset: spec.rig_preset,
                trajectory: spec.trajectory,
                n_poses: cell.poses,
                n_points: cell.points,
                sigma_max: cell.sigma_max,
                seed: spec.trial_seed(ci, trial),
                ..SynthSpec::default()
            };
            let generated = generate_problem::<f64>(&synth);
            for &mode in &spec.modes {
                let mut row = BenchRow {
                    cell: ci,
                    trial,
                    mode,
                    poses: cell.poses,
                    points: 0,
                    observations: 0,
                    runtime_s: None,
                    hessian_bytes: None,
                    eps_r: None,
                    eps_t: None,
                    eps_x: None,
                    status: "ok".into(),
                };
                let outcome = match &generated {
                    Ok(g) => run_mode(spec, &g.problem, &g.gt_poses, mode, &mut row),
                    Err(e) => Err(format!("synthesis failed: {e}")),
                };
                if let Err(e) = outcome {
                    row.status = format!("error: {e}");
                    row.runtime_s = None;
                }
                sink(&row)?;
                rows.push(row);
            }
        }
    }
    Ok(rows)
}

/// CSV writer for [`BenchRow`]s, header included.
pub struct BenchWriter<W: Write> {
    inner: csv::Writer<W>,
}

impl<W: Write> BenchWriter<W> {
    pub fn new(out: W) -> IoResult<Self> {
        let mut inner = csv::Writer::from_writer(out);
        inner.write_record(BENCH_HEADER)?;
        Ok(Self { inner })
    }

    pub fn write(&mut self, row: &BenchRow) -> IoResult<()> {
        self.inner.write_record(row.record())?;
        self.inner.flush()?;
        Ok(())
    }
}

/// Parses a bench CSV back into rows.
pub fn read_bench_rows<R: Read>(input: R) -> IoResult<Vec<BenchRow>> {
    let mut reader = csv::Reader::from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    if header != BENCH_HEADER {
        return Err(IoError::parse("bench csv header", format!("unexpected columns {header:?}")));
    }
    let mut rows = Vec::new();
    for (k, rec) in reader.records().enumerate() {
        let rec = rec?;
        let ctx = format!("bench csv row {}", k + 1);
        let text = |i: usize| rec.get(i).unwrap_or("");
        let req = |i: usize| -> IoResult<usize> {
            text(i).parse().map_err(|_| IoError::parse(&ctx, format!("invalid {} {:?}", BENCH_HEADER[i], text(i))))
        };
        let opt = |i: usize| -> IoResult<Option<f64>> {
            match text(i) {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|_| IoError::parse(&ctx, format!("invalid {} {s:?}", BENCH_HEADER[i]))),
            }
        };
        let mode = Mode::parse(text(2)).ok_or_else(|| IoError::parse(&ctx, format!("unknown mode {:?}", text(2))))?;
        rows.push(BenchRow {
            cell: req(0)?,
            trial: req(1)?,
            mode,
            poses: req(3)?,
            points: req(4)?,
            observations: req(5)?,
            runtime_s: opt(6)?,
            hessian_bytes: if text(7).is_empty() { None } else { Some(req(7)?) },
            eps_r: opt(8)?,
            eps_t: opt(9)?,
            eps_x: opt(10)?,
            status: text(11).to_string(),
        });
    }
    Ok(rows)
}

/// Median of the finite values; the mean of the two middle values for even counts.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub cell: usize,
    pub mode: Mode,
    pub trials_ok: usize,
    pub poses: Option<f64>,
    pub points: Option<f64>,
    pub observations: Option<f64>,
    pub runtime_s: Option<f64>,
    pub hessian_bytes: Option<f64>,
    pub eps_r: Option<f64>,
    pub eps_t: Option<f64>,
    pub eps_x: Option<f64>,
}

/// Medians over successful trials, ordered by cell then mode (as first seen).
pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    let mut order: Vec<(usize, Mode)> = Vec::new();
    let mut groups: BTreeMap<usize, Vec<&BenchRow>> = BTreeMap::new();
    for r in rows {
        let key = (r.cell, r.mode);
        let idx = match order.iter().position(|k| *k == key) {
            Some(i) => i,
            None => {
                order.push(key);
                order.len() - 1
            }
        };
        if r.is_ok() {
            groups.entry(idx).or_default().push(r);
        }
    }
    let mut keyed: Vec<(usize, (usize, Mode))> = order.into_iter().enumerate().collect();
    keyed.sort_by_key(|(i, (cell, _))| (*cell, *i));
    keyed
        .into_iter()
        .map(|(idx, (cell, mode))| {
            let g = groups.get(&idx).map(Vec::as_slice).unwrap_or(&[]);
            let col = |f: &dyn Fn(&BenchRow) -> Option<f64>| median(&g.iter().filter_map(|r| f(r)).collect::<Vec<_>>());
            SummaryRow {
                cell,
                mode,
                trials_ok: g.len(),
                poses: col(&|r| Some(r.poses as f64)),
                points: col(&|r| Some(r.points as f64)),
                observations: col(&|r| Some(r.observations as f64)),
                runtime_s: col(&|r| r.runtime_s),
                hessian_bytes: col(&|r| r.hessian_bytes.map(|b| b as f64)),
                eps_r: col(&|r| r.eps_r),
                eps_t: col(&|r| r.eps_t),
                eps_x: col(&|r| r.eps_x),
            }
        })
        .collect()
}

pub fn write_summary_csv<W: Write>(out: W, summary: &[SummaryRow]) -> IoResult<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SUMMARY_HEADER)?;
    let f = |x: Option<f64>| x.map(format_f64).unwrap_or_default();
    for s in summary {
        w.write_record([
            s.cell.to_string(),
            s.mode.name().to_string(),
            s.trials_ok.to_string(),
            f(s.poses),
            f(s.points),
            f(s.observations),
            f(s.runtime_s),
            f(s.hessian_bytes),
            f(s.eps_r),
            f(s.eps_t),
            f(s.eps_x),
        ])?;
    }
    w.flush()?;
    Ok(())
}
