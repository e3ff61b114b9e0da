//! `mcpa`: synthesize, optimize and benchmark multi-camera pose adjustment.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use mcpa_core::base_select::BaseStrategy;
use mcpa_core::optimizer::{
    error_metrics, gauge_align, gauge_align_points, select_all_bases, solve, Mode, SelectionStats,
};
use mcpa_core::synth::{generate_problem, RigPreset, SynthSpec, TrajectoryKind};
use mcpa_core::triangulate::{triangulate_midpoint, triangulate_sot};
use mcpa_core::{Pose64, Problem64};
use mcpa_io::bench::{run_bench, summarize, write_summary_csv, BenchCell, BenchSpec, BenchWriter};
use mcpa_io::colmap::{import_colmap_text, ImportOptions};
use mcpa_io::output::{write_points_csv, write_report_csv, SolveSummary};
use mcpa_io::{read_poses, read_problem, read_rig, write_poses, write_problem, IoResult};
use nalgebra::{Matrix2, Vector3};

#[derive(Parser)]
#[command(name = "mcpa", version, about = "Pose-only pose adjustment for multi-camera rigs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic problem file.
    Synth(SynthArgs),
    /// Choose base observations for every track and write the problem back.
    SelectBases(SelectArgs),
    /// Refine poses with a pose-only mode or the baseline bundle adjustment.
    Optimize(OptimizeArgs),
    /// Reconstruct track points at given poses.
    Triangulate(TriangulateArgs),
    /// Run the synthetic comparison grid.
    Bench(BenchArgs),
    /// Convert a COLMAP text model into a problem file.
    ImportColmap(ImportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum PresetArg {
    Forward,
    Omni,
}

#[derive(Clone, Copy, ValueEnum)]
enum TrajectoryArg {
    Linear,
    Curve,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Mcpa,
    Mcpalr,
    Ba,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Roundness,
    MaxTheta,
    MaxDisparity,
    Random,
    First,
}

#[derive(Clone, Copy, ValueEnum)]
enum TriangulationArg {
    Sot,
    Midpoint,
}

impl From<PresetArg> for RigPreset {
    fn from(p: PresetArg) -> Self {
        match p {
            PresetArg::Forward => Self::Forward,
            PresetArg::Omni => Self::Omni,
        }
    }
}

impl From<TrajectoryArg> for TrajectoryKind {
    fn from(t: TrajectoryArg) -> Self {
        match t {
            TrajectoryArg::Linear => Self::Linear,
            TrajectoryArg::Curve => Self::Curve,
        }
    }
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Mcpa => Self::Mcpa,
            ModeArg::Mcpalr => Self::Mcpalr,
            ModeArg::Ba => Self::BaselineBa,
        }
    }
}

fn strategy(s: StrategyArg, seed: u64) -> BaseStrategy {
    match s {
        StrategyArg::Roundness => BaseStrategy::Roundness,
        StrategyArg::MaxTheta => BaseStrategy::MaxTheta,
        StrategyArg::MaxDisparity => BaseStrategy::MaxDisparity,
        StrategyArg::Random => BaseStrategy::Random { seed },
        StrategyArg::First => BaseStrategy::First,
    }
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, value_enum, default_value = "forward")]
    preset: PresetArg,
    #[arg(long, value_enum, default_value = "linear")]
    trajectory: TrajectoryArg,
    #[arg(long, default_value_t = 50)]
    poses: usize,
    #[arg(long, default_value_t = 1000)]
    points: usize,
    /// Upper bound of the per-observation pixel noise std.
    #[arg(long, default_value_t = 4.0)]
    sigma_max: f64,
    /// Initial rotation error, degrees.
    #[arg(long, default_value_t = 2.0)]
    rot_perturb: f64,
    /// Initial translation error, meters.
    #[arg(long, default_value_t = 0.5)]
    trans_perturb: f64,
    /// Linear trajectory spacing, meters.
    #[arg(long, default_value_t = 2.0)]
    step: f64,
    /// Curved trajectory radius, meters.
    #[arg(long, default_value_t = 100.0)]
    radius: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct SelectArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, value_enum, default_value = "roundness")]
    base_strategy: StrategyArg,
    /// Seed of the random strategy.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct OptimizeArgs {
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, value_enum, default_value = "mcpa")]
    mode: ModeArg,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    /// Seed of the random base strategy.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Strategy used when the problem has tracks without bases.
    #[arg(long, value_enum, default_value = "roundness")]
    base_strategy: StrategyArg,
    /// Per-iteration trace CSV.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Summary JSON (costs, Hessian size, metrics against ground truth).
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    poses_out: Option<PathBuf>,
    #[arg(long)]
    points_out: Option<PathBuf>,
    /// Write zeros for wall-clock fields so outputs are reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct TriangulateArgs {
    #[arg(long)]
    problem: PathBuf,
    /// Poses file; defaults to the problem's poses.
    #[arg(long)]
    poses: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "sot")]
    method: TriangulationArg,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct BenchArgs {
    /// Grid cell `POSESxPOINTSxSIGMA`; repeatable.
    #[arg(long = "cell", required = true)]
    cells: Vec<BenchCell>,
    #[arg(long, value_enum, value_delimiter = ',', default_value = "mcpa,mcpalr,ba")]
    modes: Vec<ModeArg>,
    #[arg(long, default_value_t = 1)]
    trials: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, value_enum, default_value = "forward")]
    preset: PresetArg,
    #[arg(long, value_enum, default_value = "linear")]
    trajectory: TrajectoryArg,
    #[arg(long, default_value_t = 10)]
    max_iters: usize,
    #[arg(long, value_enum, default_value = "roundness")]
    base_strategy: StrategyArg,
    /// Per-run rows.
    #[arg(long)]
    out: PathBuf,
    /// Median summary per cell and mode.
    #[arg(long)]
    summary: Option<PathBuf>,
    #[arg(long)]
    no_timing: bool,
}

#[derive(Args)]
struct ImportArgs {
    /// Directory with cameras.txt, images.txt and points3D.txt.
    #[arg(long)]
    dir: PathBuf,
    /// Lines of `IMAGE_ID POSE_ID CAMERA_ID`.
    #[arg(long)]
    rig_map: PathBuf,
    /// Rig description JSON (`{"cameras": [...]}`).
    #[arg(long)]
    rig: PathBuf,
    /// Isotropic pixel std assigned to every observation.
    #[arg(long, default_value_t = 1.0)]
    pixel_sigma: f64,
    #[arg(long)]
    out: PathBuf,
}

type CliResult<T> = Result<T, Box<dyn std::error::Error>>;

fn buffered(path: &Path) -> CliResult<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path)?))
}

fn run_synth(a: SynthArgs) -> CliResult<()> {
    let spec = SynthSpec {
        rig_preset: a.preset.into(),
        trajectory: a.trajectory.into(),
        n_poses: a.poses,
        n_points: a.points,
        sigma_max: a.sigma_max,
        rot_perturb: a.rot_perturb,
        trans_perturb: a.trans_perturb,
        seed: a.seed,
        step: a.step,
        radius: a.radius,
    };
    let s = generate_problem::<f64>(&spec)?;
    write_problem(&a.out, &s.problem, Some(&s.gt_poses))?;
    println!(
        "wrote {}: {} poses, {} tracks, {} observations",
        a.out.display(),
        s.problem.poses.len(),
        s.problem.tracks.len(),
        s.problem.observation_count()
    );
    Ok(())
}

fn report_selection(stats: &SelectionStats) {
    println!(
        "bases selected for {} tracks ({} without a valid pair, {} behind a base ray dropped)",
        stats.selected, stats.no_valid_pair, stats.behind_base
    );
}

fn run_select(a: SelectArgs) -> CliResult<()> {
    let mut loaded = read_problem(&a.problem)?;
    let p = &mut loaded.problem;
    let stats = select_all_bases(&mut p.tracks, &p.poses, strategy(a.base_strategy, a.seed))?;
    report_selection(&stats);
    write_problem(&a.out, p, loaded.gt_poses.as_deref())?;
    Ok(())
}

fn run_optimize(a: OptimizeArgs) -> CliResult<()> {
    let loaded = read_problem(&a.problem)?;
    let mut problem: Problem64 = loaded.problem;
    problem.mode = a.mode.into();
    problem.settings.max_iters = a.max_iters;
    if problem.mode != Mode::BaselineBa && problem.tracks.iter().any(|t| t.base.is_none()) {
        let poses = problem.poses.clone();
        let stats = select_all_bases(&mut problem.tracks, &poses, strategy(a.base_strategy, a.seed))?;
        report_selection(&stats);
    }
    let solution = solve(&problem)?;
    let timing = !a.no_timing;

    let metrics = match &loaded.gt_poses {
        Some(gt) => {
            let gt_points: Vec<Option<Vector3<f64>>> = problem.tracks.iter().map(|t| t.world_hint).collect();
            Some(error_metrics(
                &gauge_align(&solution.poses),
                &gauge_align(gt),
                &gauge_align_points(&solution.poses[0], &solution.points),
                &gauge_align_points(&gt[0], &gt_points),
                &problem,
            )?)
        }
        None => None,
    };

    let r = &solution.report;
    println!(
        "{}: {} iterations, cost {:.6e} -> {:.6e} ({}), hessian {} bytes",
        problem.mode.name(),
        r.iterations,
        r.initial_cost,
        r.final_cost,
        r.termination.name(),
        r.hessian_bytes
    );
    if let Some(m) = &metrics {
        println!("eps_r {:.6e} rad, eps_t {:.6e}, eps_x {:?}", m.eps_r, m.eps_t, m.eps_x);
    }

    if let Some(path) = &a.report {
        write_report_csv(buffered(path)?, r, timing)?;
    }
    if let Some(path) = &a.summary {
        let counts = (problem.poses.len(), problem.tracks.len(), problem.observation_count());
        let summary = SolveSummary::new(problem.mode.name(), counts, r, metrics.as_ref(), timing);
        fs::write(path, summary.to_json()?)?;
    }
    if let Some(path) = &a.poses_out {
        write_poses(path, &solution.poses)?;
    }
    if let Some(path) = &a.points_out {
        write_points_csv(buffered(path)?, &solution.points)?;
    }
    Ok(())
}

fn run_triangulate(a: TriangulateArgs) -> CliResult<()> {
    let loaded = read_problem(&a.problem)?;
    let poses: Vec<Pose64> = match &a.poses {
        Some(p) => read_poses(p)?,
        None => loaded.problem.poses.clone(),
    };
    if poses.len() != loaded.problem.poses.len() {
        return Err(format!("poses file has {} poses, problem has {}", poses.len(), loaded.problem.poses.len()).into());
    }
    let points: Vec<Option<Vector3<f64>>> = loaded
        .problem
        .tracks
        .iter()
        .map(|t| {
            let rays: Vec<_> = t.observations.iter().map(|o| (o, &poses[o.pose_id])).collect();
            match a.method {
                TriangulationArg::Sot => triangulate_sot(&rays).ok(),
                TriangulationArg::Midpoint => triangulate_midpoint(&rays).ok(),
            }
        })
        .collect();
    let ok = points.iter().filter(|p| p.is_some()).count();
    write_points_csv(buffered(&a.out)?, &points)?;
    println!("triangulated {ok} of {} tracks", points.len());
    Ok(())
}

fn run_bench_cmd(a: BenchArgs) -> CliResult<()> {
    let spec = BenchSpec {
        cells: a.cells,
        modes: a.modes.into_iter().map(Mode::from).collect(),
        trials: a.trials,
        seed_base: a.seed,
        rig_preset: a.preset.into(),
        trajectory: a.trajectory.into(),
        max_iters: a.max_iters,
        base_strategy: strategy(a.base_strategy, a.seed),
        timing: !a.no_timing,
    };
    let mut writer = BenchWriter::new(buffered(&a.out)?)?;
    let rows = run_bench(&spec, |row| -> IoResult<()> {
        eprintln!("cell {} trial {} {}: {}", row.cell, row.trial, row.mode.name(), row.status);
        writer.write(row)
    })?;
    let summary = summarize(&rows);
    if let Some(path) = &a.summary {
        write_summary_csv(buffered(path)?, &summary)?;
    }
    let failed = rows.iter().filter(|r| !r.is_ok()).count();
    println!("{} runs, {failed} failed", rows.len());
    Ok(())
}

fn run_import(a: ImportArgs) -> CliResult<()> {
    if !(a.pixel_sigma > 0.0) {
        return Err("--pixel-sigma must be positive".into());
    }
    let rig = read_rig(&a.rig)?;
    let options = ImportOptions { sigma_px: Matrix2::identity() * (a.pixel_sigma * a.pixel_sigma) };
    let model = import_colmap_text(&a.dir, &a.rig_map, rig, &options)?;
    write_problem(&a.out, &model.problem, None)?;
    println!(
        "imported {} poses, {} tracks ({} points with fewer than two observations skipped)",
        model.problem.poses.len(),
        model.problem.tracks.len(),
        model.skipped_points
    );
    Ok(())
}

/// Caps rayon's pool at `MCPA_THREADS` when set.
fn configure_threads() -> CliResult<()> {
    if let Ok(v) = std::env::var("MCPA_THREADS") {
        let n: usize = v.trim().parse().map_err(|_| format!("MCPA_THREADS must be a positive integer, got {v:?}"))?;
        if n == 0 {
            return Err("MCPA_THREADS must be at least 1".into());
        }
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = configure_threads().and_then(|()| match cli.command {
        Command::Synth(a) => run_synth(a),
        Command::SelectBases(a) => run_select(a),
        Command::Optimize(a) => run_optimize(a),
        Command::Triangulate(a) => run_triangulate(a),
        Command::Bench(a) => run_bench_cmd(a),
        Command::ImportColmap(a) => run_import(a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
