//! Orchestration: feedback synthesis, particle run and artifact export.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::binary::{
    policy_iteration, riccati_feedback, value_iteration, BinaryProblem, FeedbackMode, GridAxis, GridFeedback,
    SolveMethod, ValueGrid,
};
use crate::config::{ControlChoice, DpMethod, RunConfig};
use crate::control::ControlSource;
use crate::dsmc::{run_tpbb_partial, RecordOptions, RunRecord, TpbbSetup};
use crate::error::{Error, Result};

pub const RNG_NAME: &str = "ChaCha8Rng";

/// How the feedback was obtained.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DpSummary {
    pub method: DpMethod,
    pub digest: String,
    /// Sup-norm Bellman residual of the grid (0 for the closed form).
    pub residual: f64,
    pub iterations: usize,
    pub eval_sweeps: usize,
    pub source: String,
    pub seconds: f64,
}

#[derive(Debug)]
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub record: RunRecord,
    pub dp: Option<DpSummary>,
    pub files: Vec<PathBuf>,
}

/// Hex SHA-256 over everything the value grid depends on.
pub fn dp_digest(cfg: &RunConfig) -> String {
    #[derive(Serialize)]
    struct Key<'a> {
        kernels: &'a crate::kernels::KernelTriple,
        cost: crate::binary::CostParams,
        nodes: usize,
        n_controls: usize,
        tol: f64,
        max_iter: usize,
        max_eval_sweeps: usize,
        method: DpMethod,
        evaluation: crate::binary::PolicyEvaluation,
    }
    let key = Key {
        kernels: &cfg.kernels,
        cost: cfg.cost_params(),
        nodes: cfg.dp.nodes,
        n_controls: cfg.dp.n_controls,
        tol: cfg.dp.tol,
        max_iter: cfg.dp.max_iter,
        max_eval_sweeps: cfg.dp.max_eval_sweeps,
        method: cfg.dp.method,
        evaluation: cfg.dp.evaluation,
    };
    let text = toml::to_string(&key).expect("digest key serializes");
    hex::encode(Sha256::digest(text.as_bytes()))
}

pub fn binary_problem(cfg: &RunConfig) -> Result<BinaryProblem> {
    BinaryProblem::new(cfg.kernels, cfg.cost_params(), cfg.dp.n_controls)
}

/// Solve the binary problem on the configured grid.
pub fn synthesize_grid(cfg: &RunConfig) -> Result<(ValueGrid, DpSummary)> {
    let method = match cfg.dp.method.solve_method() {
        Some(m) => m,
        None => {
            return Err(Error::validation(
                "dp.method",
                "the closed-form riccati method has no value grid; use value_iter or policy_iter",
            ))
        }
    };
    let problem = binary_problem(cfg)?;
    let axis = GridAxis::unit(cfg.dp.nodes)?;
    let v0 = ValueGrid::zeros(axis, problem.cost, problem.kernels, cfg.dp.n_controls);
    let start = Instant::now();
    let sol = match method {
        SolveMethod::ValueIter => value_iteration(v0, &problem, &cfg.dp.solve_options())?,
        SolveMethod::PolicyIter => policy_iteration(v0, &problem, &cfg.dp.solve_options())?,
    }
    .require_converged()?;
    let summary = DpSummary {
        method: cfg.dp.method,
        digest: dp_digest(cfg),
        residual: sol.report.residual,
        iterations: sol.report.iterations,
        eval_sweeps: sol.report.eval_sweeps,
        source: "solved".into(),
        seconds: start.elapsed().as_secs_f64(),
    };
    Ok((sol.grid, summary))
}

fn load_checked(path: &Path, cfg: &RunConfig) -> Result<ValueGrid> {
    let grid = ValueGrid::load(path)?;
    let axis = GridAxis::unit(cfg.dp.nodes)?;
    grid.matches(&axis, &cfg.cost_params(), &cfg.kernels, cfg.dp.n_controls)
        .map_err(|reason| Error::validation("dp.grid_file", format!("{}: {reason}", path.display())))?;
    Ok(grid)
}

/// Grid from `dp.grid_file`, the cache, or a fresh solve (which is then cached).
pub fn load_or_synthesize(cfg: &RunConfig) -> Result<(ValueGrid, DpSummary)> {
    let digest = dp_digest(cfg);
    let from_file = |path: &Path, source: String| -> Result<(ValueGrid, DpSummary)> {
        let start = Instant::now();
        let grid = load_checked(path, cfg)?;
        let summary = DpSummary {
            method: cfg.dp.method,
            digest: digest.clone(),
            residual: grid.residual,
            iterations: 0,
            eval_sweeps: 0,
            source,
            seconds: start.elapsed().as_secs_f64(),
        };
        Ok((grid, summary))
    };
    if let Some(path) = &cfg.dp.grid_file {
        return from_file(path, format!("file {}", path.display()));
    }
    let cached = cfg
        .output
        .cache_dir
        .as_ref()
        .map(|d| d.join(format!("{digest}.kcvgrid")));
    if let Some(path) = cached.as_ref().filter(|p| p.exists()) {
        if let Ok(hit) = from_file(path, format!("cache {}", path.display())) {
            return Ok(hit);
        }
    }
    let (grid, summary) = synthesize_grid(cfg)?;
    if let Some(path) = cached {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::persist(dir, e))?;
        }
        // Write then rename so concurrent readers never see a partial file.
        let tmp = path.with_extension(format!("tmp{}", std::process::id()));
        grid.save(&tmp)?;
        fs::rename(&tmp, &path).map_err(|e| Error::persist(&path, e))?;
    }
    Ok((grid, summary))
}

/// The control source selected by the configuration.
pub fn build_control(cfg: &RunConfig) -> Result<(ControlSource, Option<DpSummary>)> {
    if cfg.control == ControlChoice::None {
        return Ok((ControlSource::None, None));
    }
    if cfg.dp.method == DpMethod::Riccati {
        let start = Instant::now();
        let f = riccati_feedback(&cfg.cost_params(), &cfg.kernels)?;
        let summary = DpSummary {
            method: DpMethod::Riccati,
            digest: dp_digest(cfg),
            residual: 0.0,
            iterations: f.iterations,
            eval_sweeps: 0,
            source: "closed form".into(),
            seconds: start.elapsed().as_secs_f64(),
        };
        return Ok((f.into(), Some(summary)));
    }
    let (grid, summary) = load_or_synthesize(cfg)?;
    let fb = GridFeedback::new(binary_problem(cfg)?, grid, cfg.dp.feedback)?;
    Ok((ControlSource::Grid(Arc::new(fb)), Some(summary)))
}

pub fn setup(cfg: &RunConfig, control: ControlSource) -> TpbbSetup {
    TpbbSetup {
        kernels: cfg.kernels,
        cost: cfg.cost_params(),
        scaling: cfg.scaling,
        populations: cfg.populations,
        control,
    }
}

pub fn record_options(cfg: &RunConfig) -> RecordOptions {
    let o = &cfg.output;
    RecordOptions {
        stride: o.stride,
        dx: o.dx,
        domain: o.domain,
        surface_points: o.surface_points,
        surface_leaders: o.surface_leaders,
    }
}

/// Run `f` on a pool with `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::validation("output.workers", e.to_string()))?;
    Ok(pool.install(f))
}

/// Synthesize (or load) the feedback, run the particle scheme and write
/// `density.csv`, `control_surface.csv`, `series.csv` and `metadata.toml`
/// to `cfg.output.dir`.
///
/// If a step fails, everything recorded so far is still written, the
/// metadata is marked partial, and the step error is returned.
pub fn run_experiment(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    with_workers(cfg.output.workers, || run_inner(cfg))?
}

fn run_inner(cfg: &RunConfig) -> Result<ExperimentOutcome> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).map_err(|e| Error::persist(&dir, e))?;

    let (control, dp) = build_control(cfg)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let start = Instant::now();
    let (record, failure) = run_tpbb_partial(&setup(cfg, control), &record_options(cfg), &mut rng);
    let record = record?;
    let run_seconds = start.elapsed().as_secs_f64();

    let files = write_csvs(&dir, &record)?;
    let mut digests = toml::Table::new();
    for f in &files {
        let bytes = fs::read(f).map_err(|e| Error::persist(f, e))?;
        let name = f
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default();
        digests.insert(name, hex::encode(Sha256::digest(&bytes)).into());
    }
    let meta = Metadata {
        version: env!("CARGO_PKG_VERSION"),
        rng: RNG_NAME,
        seed: cfg.seed,
        control: control_label(cfg),
        partial: failure.is_some(),
        error: failure.as_ref().map(ToString::to_string),
        steps_completed: record.trace.len(),
        timings: Timings {
            dp_seconds: dp.as_ref().map_or(0.0, |d| d.seconds),
            run_seconds,
        },
        dp: dp.clone(),
        outputs: digests,
        config: cfg.clone(),
    };
    let meta_path = dir.join("metadata.toml");
    let text = toml::to_string(&meta).map_err(|e| Error::validation("metadata", e.to_string()))?;
    fs::write(&meta_path, text).map_err(|e| Error::persist(&meta_path, e))?;

    if let Some(err) = failure {
        return Err(err);
    }
    let mut all = files;
    all.push(meta_path);
    Ok(ExperimentOutcome {
        out_dir: dir,
        record,
        dp,
        files: all,
    })
}

fn control_label(cfg: &RunConfig) -> String {
    match cfg.control {
        ControlChoice::None => "none".into(),
        ControlChoice::Dp => match cfg.dp.method {
            DpMethod::Riccati => "riccati".into(),
            _ => {
                let mode = match cfg.dp.feedback {
                    FeedbackMode::Argmin => "argmin",
                    FeedbackMode::PolicyTable => "policy_table",
                };
                format!("grid ({mode})")
            }
        },
    }
}

#[derive(Serialize)]
struct Timings {
    dp_seconds: f64,
    run_seconds: f64,
}

#[derive(Serialize)]
struct Metadata<'a> {
    version: &'a str,
    rng: &'a str,
    seed: u64,
    control: String,
    partial: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: Option<String>,
    steps_completed: usize,
    timings: Timings,
    #[serde(skip_serializing_if = "Option::is_none")]
    dp: Option<DpSummary>,
    outputs: toml::Table,
    config: RunConfig,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::io::BufWriter<fs::File>>> {
    let file = fs::File::create(path).map_err(|e| Error::persist(path, e))?;
    Ok(csv::Writer::from_writer(std::io::BufWriter::new(file)))
}

/// Write the three CSV artifacts of a run and return their paths.
pub fn write_csvs(dir: &Path, record: &RunRecord) -> Result<Vec<PathBuf>> {
    let density = dir.join("density.csv");
    let mut w = csv_writer(&density)?;
    w.write_record(["t", "bin_center", "density_F", "density_L"])?;
    for s in &record.snapshots {
        for i in 0..s.followers.bins() {
            w.serialize((s.t, s.followers.center(i), s.followers.heights[i], s.leaders.heights[i]))?;
        }
    }
    w.flush().map_err(|e| Error::persist(&density, e))?;

    let surface = dir.join("control_surface.csv");
    let mut w = csv_writer(&surface)?;
    w.write_record(["t", "y", "phi"])?;
    for s in &record.snapshots {
        for &(y, phi) in &s.surface {
            w.serialize((s.t, y, phi))?;
        }
    }
    w.flush().map_err(|e| Error::persist(&surface, e))?;

    let series = dir.join("series.csv");
    let mut w = csv_writer(&series)?;
    w.write_record(["t", "mean_F", "mean_L", "cost_accum"])?;
    let (f0, l0) = record.initial_means;
    w.serialize((0.0, f0, l0, 0.0))?;
    for st in &record.trace {
        w.serialize((st.t, st.mean_f, st.mean_l, st.cost_accum))?;
    }
    w.flush().map_err(|e| Error::persist(&series, e))?;
    Ok(vec![density, surface, series])
}

/// Solve the DP of `cfg` and write the grid to `out`.
pub fn synthesize_dp(cfg: &RunConfig, out: &Path) -> Result<DpSummary> {
    cfg.validate()?;
    with_workers(cfg.output.workers, || -> Result<DpSummary> {
        let (grid, summary) = synthesize_grid(cfg)?;
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            fs::create_dir_all(dir).map_err(|e| Error::persist(dir, e))?;
        }
        grid.save(out)?;
        Ok(summary)
    })?
}

/// Human-readable summary of a validated configuration.
pub fn describe(cfg: &RunConfig, mut w: impl Write) -> std::io::Result<()> {
    let sp = &cfg.scaling;
    writeln!(w, "configuration ok")?;
    writeln!(
        w,
        "  steps        {} x dt {} (T = {})",
        sp.steps().unwrap_or(0),
        sp.dt,
        sp.t_final
    )?;
    writeln!(
        w,
        "  samples      {} followers, {} leaders, sigma_s {} ({:?})",
        cfg.populations.n_followers, cfg.populations.n_leaders, sp.sigma_s, sp.phi_estimator
    )?;
    writeln!(w, "  control      {}", control_label(cfg))?;
    writeln!(
        w,
        "  dp           {} nodes/axis, {} controls, dt {}, beta {:.6}",
        cfg.dp.nodes,
        cfg.dp.n_controls,
        cfg.dp_dt(),
        cfg.cost_params().beta()
    )?;
    writeln!(w, "  dp digest    {}", dp_digest(cfg))
}
