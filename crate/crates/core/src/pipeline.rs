//! End-to-end run: synthetic demonstrations, dictionary training, the
//! standard request set, verification and evaluation tables.

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::container::{save_demo_matrix, save_dictionary, Encoding};
use crate::error::{Error, Result, StageExt};
use crate::io::{load_recording, save_json, save_recording, save_trajectory};
use crate::manifest::write_manifest;
use crate::model::{remove_offset, Dictionary};
use crate::nmf::{nmf_factorize, reconstruction_report, NmfConfig, StopReason};
use crate::plot::emit_plot_data;
use crate::preprocess::{preprocess, DemoMatrix, PreprocessConfig, Recording};
use crate::report::{ErrorTable, ReconstructionErrors};
use crate::synth::{
    canonical_contacts, grasp_frame, random_script, split_recordings, synthesize, ManipulationScript, ScriptRanges,
    HOME_POSITION,
};
use crate::trajgen::{
    generate_with, EndpointError, EndpointErrorTable, GenerationOptions, GenerationRequest, GenerationResult,
    VelocityBounds, DEFAULT_PRIOR_WEIGHT,
};
use crate::verify::{verify, ObjectModel, VerifyConfig, Workspace, DEFAULT_WORKSPACE_MARGIN};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub trials: usize,
    pub trial_minutes: f64,
    pub seed: u64,
    pub noise_sigma: f64,
    pub train_share: usize,
    pub test_share: usize,
    pub ranges: ScriptRanges,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            trials: 6,
            trial_minutes: 6.0,
            seed: 0,
            noise_sigma: 0.0005,
            train_share: 5,
            test_share: 1,
            ranges: ScriptRanges::default(),
        }
    }
}

impl SynthSection {
    /// Renders `trials` random scripts named `trial0`, `trial1`, ...
    pub fn scripts(&self, object: ObjectModel) -> Vec<ManipulationScript> {
        (0..self.trials)
            .map(|i| {
                let seed = self.seed.wrapping_mul(1000).wrapping_add(i as u64);
                ManipulationScript {
                    name: format!("trial{i}"),
                    noise_sigma: self.noise_sigma,
                    ..random_script(object, 60.0 * self.trial_minutes, seed, &self.ranges)
                }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerateSection {
    pub lambda: f64,
    pub v_max: f64,
    pub infeasibility_tol: Option<f64>,
    pub prior_weight: f64,
}

impl Default for GenerateSection {
    fn default() -> Self {
        GenerateSection {
            lambda: 1.0,
            v_max: VelocityBounds::default().v_max,
            infeasibility_tol: GenerationOptions::default().infeasibility_tol,
            prior_weight: DEFAULT_PRIOR_WEIGHT,
        }
    }
}

impl GenerateSection {
    pub fn options(&self) -> GenerationOptions {
        GenerationOptions {
            infeasibility_tol: self.infeasibility_tol,
            prior_weight: self.prior_weight,
            ..Default::default()
        }
    }

    pub fn request(&self, initial: crate::model::Frame, final_frame: crate::model::Frame) -> GenerationRequest {
        GenerationRequest {
            lambda: self.lambda,
            velocity_bounds: VelocityBounds {
                v_max: self.v_max,
                per_finger: None,
            },
            ..GenerationRequest::new(initial, final_frame)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub tau: f64,
    pub d_min: f64,
    pub min_contacts: usize,
    pub workspace_margin: f64,
}

impl Default for VerifySection {
    fn default() -> Self {
        let v = VerifyConfig::default();
        VerifySection {
            tau: v.tau,
            d_min: v.d_min,
            min_contacts: v.min_contacts,
            workspace_margin: DEFAULT_WORKSPACE_MARGIN,
        }
    }
}

impl VerifySection {
    pub fn config(&self) -> VerifyConfig {
        VerifyConfig {
            tau: self.tau,
            d_min: self.d_min,
            min_contacts: self.min_contacts,
        }
    }
}

/// Evenly spaced magnitudes per action type, endpoints included.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RequestSection {
    pub per_action: usize,
    pub rotation_deg: [f64; 2],
    pub translation_m: [f64; 2],
}

impl Default for RequestSection {
    fn default() -> Self {
        RequestSection {
            per_action: 7,
            rotation_deg: [15.0, 20.0],
            translation_m: [0.05, 0.10],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluateSection {
    /// Reconstruct the held-out demonstrations from their endpoints.
    pub held_out: bool,
    /// Use every `column_stride`-th held-out column.
    pub column_stride: usize,
}

impl Default for EvaluateSection {
    fn default() -> Self {
        EvaluateSection {
            held_out: true,
            column_stride: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub object: String,
    /// Directory of recording CSVs to use instead of synthesized ones.
    pub demo_dir: Option<PathBuf>,
    pub encoding: Encoding,
    pub synth: SynthSection,
    pub preprocess: PreprocessConfig,
    pub nmf: NmfConfig,
    pub generate: GenerateSection,
    pub verify: VerifySection,
    pub requests: RequestSection,
    pub evaluate: EvaluateSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            object: "cube".into(),
            demo_dir: None,
            encoding: Encoding::F64le,
            synth: SynthSection::default(),
            preprocess: PreprocessConfig::default(),
            nmf: NmfConfig::default(),
            generate: GenerateSection::default(),
            verify: VerifySection::default(),
            requests: RequestSection::default(),
            evaluate: EvaluateSection::default(),
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: PipelineConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn object_model(&self) -> Result<ObjectModel> {
        ObjectModel::by_name(&self.object).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        self.object_model()?;
        self.preprocess.validate()?;
        self.nmf.validate()?;
        self.verify.config().validate()?;
        let s = &self.synth;
        if s.trials == 0 || !(s.trial_minutes > 0.0) || s.train_share == 0 {
            return Err(Error::Config("synth needs trials, a positive length and a training share".into()));
        }
        if !(s.noise_sigma >= 0.0) {
            return Err(Error::Config("noise_sigma must be non-negative".into()));
        }
        let g = &self.generate;
        if !(g.lambda > 0.0) || !(g.v_max > 0.0) || !(g.prior_weight >= 0.0) {
            return Err(Error::Config("lambda and v_max must be positive, prior_weight non-negative".into()));
        }
        if !(self.verify.workspace_margin >= 0.0) {
            return Err(Error::Config("workspace_margin must be non-negative".into()));
        }
        let r = &self.requests;
        if r.per_action == 0 {
            return Err(Error::Config("per_action must be at least 1".into()));
        }
        if self.evaluate.column_stride == 0 {
            return Err(Error::Config("column_stride must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RequestKind {
    RotateX,
    RotateY,
    TranslateY,
}

impl RequestKind {
    pub const ALL: [RequestKind; 3] = [RequestKind::RotateX, RequestKind::RotateY, RequestKind::TranslateY];

    pub fn label(&self) -> &'static str {
        match self {
            RequestKind::RotateX => "Rotation on x-axis",
            RequestKind::RotateY => "Rotation on y-axis",
            RequestKind::TranslateY => "Translation on y-axis",
        }
    }

    fn slug(&self) -> &'static str {
        match self {
            RequestKind::RotateX => "rot_x",
            RequestKind::RotateY => "rot_y",
            RequestKind::TranslateY => "trans_y",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedRequest {
    pub name: String,
    pub kind: RequestKind,
    /// Degrees for rotations, meters for translations.
    pub magnitude: f64,
    pub request: GenerationRequest,
}

fn spaced(range: [f64; 2], n: usize, i: usize) -> f64 {
    if n == 1 {
        0.5 * (range[0] + range[1])
    } else {
        range[0] + (range[1] - range[0]) * i as f64 / (n - 1) as f64
    }
}

/// Rotations about x and y and translations along y, all starting from the
/// canonical grasp at the home pose.
pub fn standard_requests(object: &ObjectModel, rs: &RequestSection, g: &GenerateSection) -> Vec<NamedRequest> {
    let contacts = canonical_contacts(object);
    let home = Vector3::from(HOME_POSITION);
    let initial = grasp_frame(object, &contacts, &home, &Vector3::zeros());
    let mut out = Vec::new();
    for kind in RequestKind::ALL {
        for i in 0..rs.per_action {
            let (magnitude, position, rpy) = match kind {
                RequestKind::RotateX => {
                    let deg = spaced(rs.rotation_deg, rs.per_action, i);
                    (deg, home, Vector3::new(deg.to_radians(), 0.0, 0.0))
                }
                RequestKind::RotateY => {
                    let deg = spaced(rs.rotation_deg, rs.per_action, i);
                    (deg, home, Vector3::new(0.0, deg.to_radians(), 0.0))
                }
                RequestKind::TranslateY => {
                    let m = spaced(rs.translation_m, rs.per_action, i);
                    (m, home + Vector3::new(0.0, m, 0.0), Vector3::zeros())
                }
            };
            let final_frame = grasp_frame(object, &contacts, &position, &rpy);
            out.push(NamedRequest {
                name: format!("{:02}_{}", out.len(), kind.slug()),
                kind,
                magnitude,
                request: g.request(initial, final_frame),
            });
        }
    }
    out
}

/// Generation that keeps the best attempt when the bounds make a request
/// infeasible. Returns whether that happened.
pub fn generate_or_best(
    d: &Dictionary,
    req: &GenerationRequest,
    opts: &GenerationOptions,
) -> Result<(GenerationResult, bool)> {
    match generate_with(d, req, opts) {
        Ok(r) => Ok((r, false)),
        Err(Error::Infeasible { best, .. }) => Ok((*best, true)),
        Err(e) => Err(e),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeldOutSummary {
    pub columns: usize,
    pub infeasible: usize,
    pub mean_fingertip_error_mm: f64,
    pub table: ErrorTable,
}

/// Rebuilds held-out demonstration columns by generating between their own
/// first and last frames, and tabulates the errors against the originals.
pub fn held_out_reconstruction(
    d: &Dictionary,
    v: &DemoMatrix,
    g: &GenerateSection,
    stride: usize,
) -> Result<HeldOutSummary> {
    if v.n_steps() != d.n_steps() {
        return Err(Error::DimensionMismatch {
            expected: d.n_steps(),
            actual: v.n_steps(),
            context: "held-out window length vs. dictionary",
        });
    }
    let opts = g.options();
    let mut errors = ReconstructionErrors::default();
    let mut columns = 0;
    let mut infeasible = 0;
    for j in (0..v.n_columns()).step_by(stride.max(1)) {
        let original = remove_offset(&v.column_trajectory(j), &v.offsets)?;
        let req = g.request(*original.first(), *original.last());
        let (res, inf) = generate_or_best(d, &req, &opts)?;
        infeasible += inf as usize;
        columns += 1;
        errors.push(&res.trajectory.flatten(), &original.flatten());
    }
    Ok(HeldOutSummary {
        columns,
        infeasible,
        mean_fingertip_error_mm: errors.mean_fingertip_error_mm(),
        table: errors.table("Reconstruction error on held-out demonstrations"),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NmfSummary {
    pub iterations: usize,
    pub stop: StopReason,
    pub final_objective: f64,
    pub relative_residual: f64,
}

/// Solver statistics without wall time, so that reruns write identical files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub name: String,
    pub kind: RequestKind,
    pub magnitude: f64,
    pub infeasible: bool,
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    pub objective: f64,
    pub velocity_utilization: f64,
    pub max_fingertip_speed: f64,
    pub endpoint_error: EndpointError,
    pub reachable_steps: usize,
    pub contact_steps: usize,
    pub collision_steps: usize,
    pub n_steps: usize,
    pub violations: usize,
    pub gaiting_detected: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintSummary {
    pub steps: usize,
    pub reachable_fraction: f64,
    pub contact_fraction: f64,
    pub collision_step_instants: usize,
    pub violations: usize,
    pub gaiting_trajectories: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineSummary {
    pub object: String,
    pub train_recordings: Vec<String>,
    pub test_recordings: Vec<String>,
    pub train_columns: usize,
    pub test_columns: usize,
    pub nmf: NmfSummary,
    pub trajectories: Vec<TrajectorySummary>,
    pub constraints: ConstraintSummary,
    pub endpoint_table: ErrorTable,
    pub held_out: Option<HeldOutSummary>,
}

impl PipelineSummary {
    pub fn tables_text(&self) -> String {
        let mut out = String::new();
        if let Some(h) = &self.held_out {
            out.push_str(&h.table.to_text());
            out.push('\n');
        }
        out.push_str(&self.endpoint_table.to_text());
        out
    }
}

/// Endpoint errors grouped by action type.
pub fn endpoint_table(trajectories: &[TrajectorySummary]) -> ErrorTable {
    let mut rows = Vec::new();
    for kind in RequestKind::ALL {
        let mut acc = EndpointErrorTable::default();
        let mut any = false;
        for t in trajectories.iter().filter(|t| t.kind == kind) {
            acc.push(&t.endpoint_error);
            any = true;
        }
        if any {
            rows.extend(acc.rows(kind.label()));
        }
    }
    ErrorTable {
        title: "Final object pose error".into(),
        rows,
    }
}

fn ensure_dir(p: &Path) -> Result<()> {
    std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))
}

fn load_demo_dir(dir: &Path) -> Result<Vec<Recording>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut paths = entries
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect::<Vec<_>>();
    paths.sort();
    if paths.is_empty() {
        return Err(Error::InvalidInput(format!("no recording CSVs in {}", dir.display())));
    }
    paths.iter().map(|p| load_recording(p)).collect()
}

/// Runs every stage and writes its artifacts below `out`, finishing with a
/// manifest of all files.
pub fn run_pipeline(cfg: &PipelineConfig, out: &Path) -> Result<PipelineSummary> {
    cfg.validate()?;
    let object = cfg.object_model()?;
    ensure_dir(out)?;

    let recordings = match &cfg.demo_dir {
        Some(dir) => load_demo_dir(dir).stage("load-demos")?,
        None => {
            let scripts = cfg.synth.scripts(object);
            let rec_dir = out.join("recordings");
            let script_dir = out.join("scripts");
            ensure_dir(&rec_dir).stage("synth")?;
            ensure_dir(&script_dir).stage("synth")?;
            let mut recordings = Vec::with_capacity(scripts.len());
            for s in &scripts {
                let r = synthesize(s).stage("synth")?;
                save_recording(&rec_dir.join(format!("{}.csv", s.name)), &r).stage("synth")?;
                save_json(&script_dir.join(format!("{}.json", s.name)), s).stage("synth")?;
                recordings.push(r);
            }
            log::info!("synthesized {} recordings", recordings.len());
            recordings
        }
    };
    let (train, test) =
        split_recordings(recordings, cfg.synth.train_share, cfg.synth.test_share, cfg.synth.seed).stage("split")?;

    let v_train = preprocess(&train, &cfg.preprocess).stage("preprocess")?;
    let v_test = if test.is_empty() {
        None
    } else {
        Some(preprocess(&test, &cfg.preprocess).stage("preprocess")?)
    };
    let demo_dir = out.join("demos");
    ensure_dir(&demo_dir).stage("preprocess")?;
    save_demo_matrix(&demo_dir.join("train.json"), &v_train, cfg.encoding).stage("preprocess")?;
    if let Some(v) = &v_test {
        save_demo_matrix(&demo_dir.join("test.json"), v, cfg.encoding).stage("preprocess")?;
    }
    log::info!("{} training columns", v_train.n_columns());

    let trained = nmf_factorize(&v_train, &cfg.nmf, object.name()).stage("train")?;
    let d = &trained.dictionary;
    save_dictionary(&out.join("dictionary.json"), d, cfg.encoding).stage("train")?;
    let final_objective = *trained.objective_trace.last().expect("trace has the initial value");
    let nmf = NmfSummary {
        iterations: trained.objective_trace.len() - 1,
        stop: trained.stop,
        final_objective,
        relative_residual: final_objective.sqrt() / v_train.v().norm(),
    };
    let training_table = reconstruction_report(&trained, &v_train).stage("train")?;
    save_json(
        &out.join("training_report.json"),
        &serde_json::json!({
            "nmf": nmf,
            "objective_trace": trained.objective_trace,
            "table": training_table,
        }),
    )
    .stage("train")?;
    log::info!("trained {} primitives in {} iterations", d.n_primitives(), nmf.iterations);

    let workspace = Workspace::fit_demos(&v_train, cfg.verify.workspace_margin).stage("workspace")?;
    save_json(&out.join("workspace.json"), &workspace).stage("workspace")?;

    let opts = cfg.generate.options();
    let vcfg = cfg.verify.config();
    let traj_dir = out.join("trajectories");
    let report_dir = out.join("reports");
    let plot_dir = out.join("plots");
    for p in [&traj_dir, &report_dir, &plot_dir] {
        ensure_dir(p).stage("generate")?;
    }
    let mut trajectories = Vec::new();
    let mut total_steps = 0;
    let (mut reach, mut contact, mut collide, mut violations, mut gaiting) = (0, 0, 0, 0, 0);
    for nr in standard_requests(&object, &cfg.requests, &cfg.generate) {
        let (res, infeasible) = generate_or_best(d, &nr.request, &opts).stage("generate")?;
        save_trajectory(&traj_dir.join(format!("{}.csv", nr.name)), &res.trajectory).stage("generate")?;
        let report = verify(&res.trajectory, &workspace, &object, &vcfg).stage("verify")?;
        save_json(&report_dir.join(format!("{}.json", nr.name)), &report).stage("verify")?;
        std::fs::write(plot_dir.join(format!("{}.csv", nr.name)), emit_plot_data(&report, d.dt()))
            .map_err(|e| Error::io(plot_dir.join(&nr.name), e))
            .stage("plot")?;

        let s = TrajectorySummary {
            name: nr.name.clone(),
            kind: nr.kind,
            magnitude: nr.magnitude,
            infeasible,
            iterations: res.solve_stats.iterations,
            converged: res.solve_stats.converged,
            kkt_residual: res.solve_stats.kkt_residual,
            objective: res.solve_stats.objective,
            velocity_utilization: res.solve_stats.velocity_utilization,
            max_fingertip_speed: res.trajectory.max_fingertip_speed(),
            endpoint_error: EndpointError::between(res.trajectory.last(), &nr.request.final_frame),
            reachable_steps: report.reachable_steps(),
            contact_steps: report.contact_steps(),
            collision_steps: report.collision_steps(),
            n_steps: report.n_steps(),
            violations: report.violations.len(),
            gaiting_detected: report.gaiting_detected,
        };
        save_json(
            &traj_dir.join(format!("{}.json", nr.name)),
            &serde_json::json!({ "request": nr, "h": res.h, "summary": s }),
        )
        .stage("generate")?;
        total_steps += s.n_steps;
        reach += s.reachable_steps;
        contact += s.contact_steps;
        collide += s.collision_steps;
        violations += s.violations;
        gaiting += s.gaiting_detected as usize;
        trajectories.push(s);
    }
    let constraints = ConstraintSummary {
        steps: total_steps,
        reachable_fraction: reach as f64 / total_steps.max(1) as f64,
        contact_fraction: contact as f64 / total_steps.max(1) as f64,
        collision_step_instants: collide,
        violations,
        gaiting_trajectories: gaiting,
    };
    log::info!("generated and verified {} trajectories", trajectories.len());

    let held_out = match (&v_test, cfg.evaluate.held_out) {
        (Some(v), true) => {
            Some(held_out_reconstruction(d, v, &cfg.generate, cfg.evaluate.column_stride).stage("evaluate")?)
        }
        _ => None,
    };
    let summary = PipelineSummary {
        object: object.name().into(),
        train_recordings: train.iter().map(|r| r.name.clone()).collect(),
        test_recordings: test.iter().map(|r| r.name.clone()).collect(),
        train_columns: v_train.n_columns(),
        test_columns: v_test.as_ref().map_or(0, |v| v.n_columns()),
        nmf,
        endpoint_table: endpoint_table(&trajectories),
        trajectories,
        constraints,
        held_out,
    };
    save_json(&out.join("summary.json"), &summary).stage("evaluate")?;
    std::fs::write(out.join("tables.txt"), summary.tables_text())
        .map_err(|e| Error::io(out.join("tables.txt"), e))
        .stage("evaluate")?;
    write_manifest(out).stage("manifest")?;
    Ok(summary)
}
