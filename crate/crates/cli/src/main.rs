use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use dexprim_core::bench::bench_generate;
use dexprim_core::container::{load_demo_matrix, load_dictionary, save_demo_matrix, save_dictionary, Encoding};
use dexprim_core::io::{load_frame, load_json, load_recording, load_trajectory, save_json, save_recording, save_trajectory};
use dexprim_core::nmf::{nmf_factorize, reconstruction_report, NmfSolver};
use dexprim_core::pipeline::{generate_or_best, held_out_reconstruction, run_pipeline, standard_requests, PipelineConfig};
use dexprim_core::plot::emit_plot_data;
use dexprim_core::preprocess::preprocess;
use dexprim_core::synth::synthesize;
use dexprim_core::trajgen::final_pose_error;
use dexprim_core::verify::{verify, ObjectModel, Workspace};
use dexprim_core::Error;

const EXIT_USAGE: u8 = 1;
const EXIT_VIOLATIONS: u8 = 2;
const EXIT_INFEASIBLE: u8 = 3;

#[derive(Parser)]
#[command(name = "dexprim", version, about = "Motion-primitive dictionaries for in-hand manipulation")]
struct Cli {
    /// Pipeline configuration (TOML). Flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// More log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic demonstration recordings.
    Synth(SynthArgs),
    /// Turn recordings into a demonstration matrix.
    Preprocess(PreprocessArgs),
    /// Learn a dictionary from a demonstration matrix.
    Train(TrainArgs),
    /// Generate a trajectory between two frames.
    Generate(GenerateArgs),
    /// Check a trajectory against reachability, collision and contact constraints.
    Verify(VerifyArgs),
    /// Error tables for held-out demonstrations or a generated endpoint.
    Evaluate(EvaluateArgs),
    /// Time trajectory generation on the standard request set.
    Bench(BenchArgs),
    /// Run every stage end to end.
    Pipeline(PipelineArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    object: Option<String>,
    /// Total length; split into trials of `trial-minutes`.
    #[arg(long)]
    minutes: Option<f64>,
    #[arg(long)]
    trial_minutes: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    /// Fingertip noise standard deviation, meters.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct PreprocessArgs {
    /// Recording CSVs, or directories holding them.
    #[arg(long, required = true, num_args = 1..)]
    demos: Vec<PathBuf>,
    #[arg(long)]
    cutoff_hz: Option<f64>,
    #[arg(long)]
    max_gap_s: Option<f64>,
    #[arg(long, value_parser = parse_encoding)]
    encoding: Option<Encoding>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    demos: PathBuf,
    #[arg(long)]
    primitives: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, value_parser = parse_solver)]
    solver: Option<NmfSolver>,
    #[arg(long, value_parser = parse_encoding)]
    encoding: Option<Encoding>,
    /// Object name recorded in the dictionary provenance.
    #[arg(long)]
    object: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    dict: PathBuf,
    /// Single-frame trajectory CSV.
    #[arg(long)]
    initial: PathBuf,
    #[arg(long)]
    r#final: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    vmax: Option<f64>,
    #[arg(long)]
    prior_weight: Option<f64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long)]
    traj: PathBuf,
    #[arg(long)]
    object: Option<String>,
    #[arg(long)]
    tau: Option<f64>,
    #[arg(long)]
    dmin: Option<f64>,
    #[arg(long)]
    min_contacts: Option<usize>,
    /// Workspace JSON.
    #[arg(long, conflicts_with = "demos", required_unless_present = "demos")]
    workspace: Option<PathBuf>,
    /// Fit the workspace to a demonstration matrix instead.
    #[arg(long)]
    demos: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// Also write the contact-count plot data.
    #[arg(long)]
    plot: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    dict: Option<PathBuf>,
    /// Held-out demonstration matrix to reconstruct.
    #[arg(long, requires = "dict")]
    demos: Option<PathBuf>,
    #[arg(long)]
    stride: Option<usize>,
    /// Generated trajectory whose final frame is compared with `--final`.
    #[arg(long, requires = "final", conflicts_with = "demos")]
    traj: Option<PathBuf>,
    #[arg(long)]
    r#final: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long)]
    dict: PathBuf,
    #[arg(long)]
    object: Option<String>,
    #[arg(long, default_value_t = 3)]
    warmup: usize,
    /// Passes over the 21 standard requests.
    #[arg(long, default_value_t = 1)]
    repeat: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PipelineArgs {
    #[arg(long)]
    object: Option<String>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long)]
    trial_minutes: Option<f64>,
    #[arg(long)]
    primitives: Option<usize>,
    #[arg(long)]
    iters: Option<usize>,
    #[arg(long)]
    demo_dir: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

fn parse_encoding(s: &str) -> Result<Encoding, String> {
    match s {
        "csv" => Ok(Encoding::Csv),
        "f64le" => Ok(Encoding::F64le),
        _ => Err(format!("unknown encoding `{s}` (csv or f64le)")),
    }
}

fn parse_solver(s: &str) -> Result<NmfSolver, String> {
    match s {
        "hals" => Ok(NmfSolver::Hals),
        "mu" | "multiplicative" => Ok(NmfSolver::Multiplicative),
        _ => Err(format!("unknown solver `{s}` (hals or mu)")),
    }
}

fn with_extension(path: &Path, ext: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}.{ext}"))
}

fn ensure_parent(path: &Path) -> anyhow::Result<()> {
    if let Some(p) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(p).with_context(|| format!("creating {}", p.display()))?;
    }
    Ok(())
}

fn object_or(name: Option<&str>, cfg: &PipelineConfig) -> anyhow::Result<ObjectModel> {
    Ok(ObjectModel::by_name(name.unwrap_or(&cfg.object))?)
}

fn synth_cmd(cfg: &PipelineConfig, a: SynthArgs) -> anyhow::Result<u8> {
    let object = object_or(a.object.as_deref(), cfg)?;
    let mut s = cfg.synth.clone();
    if let Some(m) = a.trial_minutes {
        s.trial_minutes = m;
    }
    if let Some(m) = a.minutes {
        if !(m > 0.0) {
            bail!(Error::InvalidInput("minutes must be positive".into()));
        }
        s.trials = (m / s.trial_minutes).ceil().max(1.0) as usize;
        s.trial_minutes = m / s.trials as f64;
    }
    if let Some(seed) = a.seed {
        s.seed = seed;
    }
    if let Some(n) = a.noise {
        s.noise_sigma = n;
    }
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    for script in s.scripts(object) {
        let r = synthesize(&script)?;
        save_recording(&a.out.join(format!("{}.csv", script.name)), &r)?;
        save_json(&a.out.join(format!("{}.json", script.name)), &script)?;
        log::info!("wrote {} ({} samples)", script.name, r.len());
    }
    Ok(0)
}

fn recording_paths(inputs: &[PathBuf]) -> anyhow::Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut found: Vec<PathBuf> = std::fs::read_dir(p)
                .with_context(|| format!("reading {}", p.display()))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|f| f.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            out.extend(found);
        } else {
            out.push(p.clone());
        }
    }
    if out.is_empty() {
        bail!(Error::InvalidInput("no recording CSVs found".into()));
    }
    Ok(out)
}

fn preprocess_cmd(cfg: &PipelineConfig, a: PreprocessArgs) -> anyhow::Result<u8> {
    let mut p = cfg.preprocess;
    if let Some(c) = a.cutoff_hz {
        p.cutoff_hz = c;
    }
    if let Some(g) = a.max_gap_s {
        p.max_gap_s = g;
    }
    let recordings = recording_paths(&a.demos)?
        .iter()
        .map(|f| load_recording(f))
        .collect::<Result<Vec<_>, _>>()?;
    let v = preprocess(&recordings, &p)?;
    ensure_parent(&a.out)?;
    save_demo_matrix(&a.out, &v, a.encoding.unwrap_or(cfg.encoding))?;
    println!("{} columns from {} recordings", v.n_columns(), recordings.len());
    Ok(0)
}

fn train_cmd(cfg: &PipelineConfig, a: TrainArgs) -> anyhow::Result<u8> {
    let mut n = cfg.nmf.clone();
    if let Some(l) = a.primitives {
        n.n_primitives = l;
    }
    if let Some(i) = a.iters {
        n.max_iters = i;
    }
    if let Some(s) = a.seed {
        n.rng_seed = s;
    }
    if let Some(s) = a.solver {
        n.solver = s;
    }
    let v = load_demo_matrix(&a.demos)?;
    let object = a.object.unwrap_or_else(|| cfg.object.clone());
    let res = nmf_factorize(&v, &n, &object)?;
    ensure_parent(&a.out)?;
    save_dictionary(&a.out, &res.dictionary, a.encoding.unwrap_or(cfg.encoding))?;
    let table = reconstruction_report(&res, &v)?;
    save_json(
        &with_extension(&a.out, "report.json"),
        &serde_json::json!({
            "iterations": res.objective_trace.len() - 1,
            "stop": res.stop,
            "objective_trace": res.objective_trace,
            "table": table,
        }),
    )?;
    print!("{}", table.to_text());
    Ok(0)
}

fn generate_cmd(cfg: &PipelineConfig, a: GenerateArgs) -> anyhow::Result<u8> {
    let mut g = cfg.generate;
    if let Some(l) = a.lambda {
        g.lambda = l;
    }
    if let Some(v) = a.vmax {
        g.v_max = v;
    }
    if let Some(w) = a.prior_weight {
        g.prior_weight = w;
    }
    let d = load_dictionary(&a.dict)?;
    let req = g.request(load_frame(&a.initial)?, load_frame(&a.r#final)?);
    let (res, infeasible) = generate_or_best(&d, &req, &g.options())?;
    ensure_parent(&a.out)?;
    save_trajectory(&a.out, &res.trajectory)?;
    save_json(
        &with_extension(&a.out, "stats.json"),
        &serde_json::json!({
            "infeasible": infeasible,
            "solve_stats": res.solve_stats,
            "endpoint_residuals": res.endpoint_residuals,
            "h": res.h,
        }),
    )?;
    if infeasible {
        eprintln!("infeasible: velocity bounds keep the endpoints out of reach; wrote the best trajectory found");
        return Ok(EXIT_INFEASIBLE);
    }
    Ok(0)
}

fn verify_cmd(cfg: &PipelineConfig, a: VerifyArgs) -> anyhow::Result<u8> {
    let object = object_or(a.object.as_deref(), cfg)?;
    let mut v = cfg.verify.config();
    if let Some(t) = a.tau {
        v.tau = t;
    }
    if let Some(d) = a.dmin {
        v.d_min = d;
    }
    if let Some(m) = a.min_contacts {
        v.min_contacts = m;
    }
    let ws: Workspace = match (&a.workspace, &a.demos) {
        (Some(p), _) => load_json(p)?,
        (None, Some(p)) => Workspace::fit_demos(&load_demo_matrix(p)?, cfg.verify.workspace_margin)?,
        (None, None) => unreachable!("clap requires one of them"),
    };
    let t = load_trajectory(&a.traj)?;
    let report = verify(&t, &ws, &object, &v)?;
    ensure_parent(&a.out)?;
    save_json(&a.out, &report)?;
    if let Some(p) = &a.plot {
        ensure_parent(p)?;
        std::fs::write(p, emit_plot_data(&report, t.dt())).with_context(|| format!("writing {}", p.display()))?;
    }
    println!(
        "{} steps: {} reachable, {} with >= {} contacts, {} with collisions, gaiting {}",
        report.n_steps(),
        report.reachable_steps(),
        report.contact_steps(),
        v.min_contacts,
        report.collision_steps(),
        report.gaiting_detected
    );
    Ok(if report.has_violations() { EXIT_VIOLATIONS } else { 0 })
}

fn evaluate_cmd(cfg: &PipelineConfig, a: EvaluateArgs) -> anyhow::Result<u8> {
    let table = match (&a.demos, &a.traj) {
        (Some(demos), _) => {
            let d = load_dictionary(a.dict.as_ref().expect("clap requires --dict"))?;
            let v = load_demo_matrix(demos)?;
            let h = held_out_reconstruction(&d, &v, &cfg.generate, a.stride.unwrap_or(cfg.evaluate.column_stride))?;
            if h.infeasible > 0 {
                log::warn!("{} of {} columns hit the velocity bounds", h.infeasible, h.columns);
            }
            h.table
        }
        (None, Some(traj)) => {
            let t = load_trajectory(traj)?;
            let fin = load_frame(a.r#final.as_ref().expect("clap requires --final"))?;
            final_pose_error(t.last(), &fin)
        }
        (None, None) => bail!(Error::InvalidInput("evaluate needs --demos or --traj".into())),
    };
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        save_json(out, &table)?;
    }
    print!("{}", table.to_text());
    Ok(0)
}

fn bench_cmd(cfg: &PipelineConfig, a: BenchArgs) -> anyhow::Result<u8> {
    let d = load_dictionary(&a.dict)?;
    let name = a.object.clone().or_else(|| {
        let o = &d.provenance.object;
        ObjectModel::by_name(o).is_ok().then(|| o.clone())
    });
    let object = object_or(name.as_deref(), cfg)?;
    let base = standard_requests(&object, &cfg.requests, &cfg.generate);
    let requests: Vec<_> = (0..a.repeat.max(1)).flat_map(|_| base.iter().map(|r| r.request.clone())).collect();
    if requests.len() < 20 {
        log::warn!("only {} requests; timing statistics will be noisy", requests.len());
    }
    let report = bench_generate(&d, &requests, a.warmup, &cfg.generate.options())?;
    if let Some(out) = &a.out {
        ensure_parent(out)?;
        save_json(out, &report)?;
    }
    println!(
        "{} calls, l = {}, N = {}: median {:.1} ms, max {:.1} ms",
        report.samples_ms.len(),
        report.n_primitives,
        report.n_steps,
        report.median_ms,
        report.max_ms
    );
    Ok(0)
}

fn pipeline_cmd(cfg: &PipelineConfig, a: PipelineArgs) -> anyhow::Result<u8> {
    let mut cfg = cfg.clone();
    if let Some(o) = a.object {
        cfg.object = o;
    }
    if let Some(s) = a.seed {
        cfg.synth.seed = s;
        cfg.nmf.rng_seed = s;
    }
    if let Some(t) = a.trials {
        cfg.synth.trials = t;
    }
    if let Some(m) = a.trial_minutes {
        cfg.synth.trial_minutes = m;
    }
    if let Some(l) = a.primitives {
        cfg.nmf.n_primitives = l;
    }
    if let Some(i) = a.iters {
        cfg.nmf.max_iters = i;
    }
    if let Some(d) = a.demo_dir {
        cfg.demo_dir = Some(d);
    }
    let summary = run_pipeline(&cfg, &a.out)?;
    print!("{}", summary.tables_text());
    let c = &summary.constraints;
    println!(
        "{} trajectories: {:.1}% reachable steps, {:.1}% with enough contacts, {} collision step-instants, {} with gaiting",
        summary.trajectories.len(),
        100.0 * c.reachable_fraction,
        100.0 * c.contact_fraction,
        c.collision_step_instants,
        c.gaiting_trajectories
    );
    Ok(0)
}

fn exit_code(e: &anyhow::Error) -> u8 {
    match e.downcast_ref::<Error>().map(Error::root) {
        Some(Error::Infeasible { .. }) => EXIT_INFEASIBLE,
        _ => EXIT_USAGE,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    let run = || -> anyhow::Result<u8> {
        let cfg = match &cli.config {
            Some(p) => PipelineConfig::load(p)?,
            None => PipelineConfig::default(),
        };
        match cli.command {
            Command::Synth(a) => synth_cmd(&cfg, a),
            Command::Preprocess(a) => preprocess_cmd(&cfg, a),
            Command::Train(a) => train_cmd(&cfg, a),
            Command::Generate(a) => generate_cmd(&cfg, a),
            Command::Verify(a) => verify_cmd(&cfg, a),
            Command::Evaluate(a) => evaluate_cmd(&cfg, a),
            Command::Bench(a) => bench_cmd(&cfg, a),
            Command::Pipeline(a) => pipeline_cmd(&cfg, a),
        }
    };
    match run() {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            if e.downcast_ref::<Error>().is_some() {
                eprintln!("error: {e}");
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}
