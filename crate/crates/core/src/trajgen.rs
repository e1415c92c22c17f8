//! Trajectory generation: pick activations whose reconstruction starts and
//! ends at requested poses while keeping fingertip speeds bounded.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::wrap_angle;
use crate::model::{
    reconstruct, remove_offset, ActivationPrior, ActivationVector, Dictionary, Frame, Trajectory, FEATURES, FINGERS,
    FINGERTIP_FEATURES,
};
use crate::qp::{self, QpOptions, QpProblem};
use crate::report::{ErrorRow, ErrorTable, Spread, Stats};

/// Per-axis fingertip speed limits in m/s. An infinite limit disables the
/// constraint for that finger.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VelocityBounds {
    pub v_max: f64,
    pub per_finger: Option<[f64; FINGERS]>,
}

impl Default for VelocityBounds {
    fn default() -> Self {
        VelocityBounds {
            v_max: 0.5,
            per_finger: None,
        }
    }
}

impl VelocityBounds {
    pub fn new(v_max: f64) -> Result<Self> {
        let b = VelocityBounds {
            v_max,
            per_finger: None,
        };
        b.validate()?;
        Ok(b)
    }

    pub fn unconstrained() -> Self {
        VelocityBounds {
            v_max: f64::INFINITY,
            per_finger: None,
        }
    }

    pub fn limit(&self, finger: usize) -> f64 {
        self.per_finger.map_or(self.v_max, |p| p[finger])
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v > 0.0;
        if !ok(self.v_max) || self.per_finger.is_some_and(|p| !p.iter().all(|v| ok(*v))) {
            return Err(Error::InvalidInput("velocity limits must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRequest {
    pub initial: Frame,
    #[serde(rename = "final")]
    pub final_frame: Frame,
    pub lambda: f64,
    pub velocity_bounds: VelocityBounds,
}

impl GenerationRequest {
    pub fn new(initial: Frame, final_frame: Frame) -> Self {
        GenerationRequest {
            initial,
            final_frame,
            lambda: 1.0,
            velocity_bounds: VelocityBounds::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationOptions {
    /// A request is infeasible when the velocity bounds raise the square root
    /// of the endpoint cost by more than this over the bound-free optimum.
    /// `None` never reports infeasibility.
    pub infeasibility_tol: Option<f64>,
    /// Weight of the dictionary's activation prior against the endpoint
    /// cost. Zero, or a dictionary without a prior, solves the endpoint
    /// problem alone.
    pub prior_weight: f64,
    pub qp: QpOptions,
}

impl Default for GenerationOptions {
    fn default() -> Self {
        GenerationOptions {
            infeasibility_tol: Some(5e-3),
            prior_weight: DEFAULT_PRIOR_WEIGHT,
            qp: QpOptions::default(),
        }
    }
}

pub const DEFAULT_PRIOR_WEIGHT: f64 = 3e-7;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct SolveStats {
    pub iterations: usize,
    pub converged: bool,
    pub kkt_residual: f64,
    /// Endpoint cost at the returned activations.
    pub objective: f64,
    /// Largest fingertip speed over its limit, 1 when a bound is active.
    pub velocity_utilization: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationResult {
    pub h: ActivationVector,
    pub trajectory: Trajectory,
    /// Achieved minus requested, initial and final frame.
    pub endpoint_residuals: ([f64; FEATURES], [f64; FEATURES]),
    pub solve_stats: SolveStats,
}

/// Endpoint cost `||A h - p||^2` with the two frames stacked into `A`, plus
/// an optional `w (h - mu)' P (h - mu)` prior term.
struct Endpoints<'a> {
    a: DMatrix<f64>,
    p: DVector<f64>,
    prior: Option<(f64, &'a ActivationPrior)>,
}

impl<'a> Endpoints<'a> {
    fn new(d: &'a Dictionary, p1: &Frame, pn: &Frame, lambda: f64, prior_weight: f64) -> Self {
        let l = d.n_primitives();
        let n = d.n_steps();
        let wl = lambda.sqrt();
        let mut a = DMatrix::zeros(2 * FEATURES, l);
        a.rows_mut(0, FEATURES).copy_from(&d.step_block(0));
        a.rows_mut(FEATURES, FEATURES).copy_from(&(d.step_block(n - 1) * wl));
        let p = DVector::from_fn(2 * FEATURES, |i, _| {
            if i < FEATURES {
                p1.features[i]
            } else {
                wl * pn.features[i - FEATURES]
            }
        });
        let prior = d.prior().filter(|_| prior_weight > 0.0).map(|p| (prior_weight, p));
        Endpoints { a, p, prior }
    }

    fn cost(&self, h: &DVector<f64>) -> f64 {
        (&self.a * h - &self.p).norm_squared()
    }

    fn problem(&self, g: DMatrix<f64>, b: DVector<f64>) -> QpProblem {
        let mut q = self.a.transpose() * &self.a;
        let mut c = -(self.a.transpose() * &self.p);
        if let Some((w, prior)) = self.prior {
            q += &prior.precision * w;
            c -= &prior.precision * &prior.mean * w;
        }
        QpProblem { q: q * 2.0, c: c * 2.0, g, b }
    }
}

/// Forward-difference rows of the fingertip coordinates and their bounds
/// (`v_max * dt`). Fingers without a finite limit contribute no rows.
pub fn velocity_rows(d: &Dictionary, bounds: &VelocityBounds) -> (DMatrix<f64>, DVector<f64>) {
    let n = d.n_steps();
    let l = d.n_primitives();
    let coords: Vec<usize> = (0..FINGERTIP_FEATURES)
        .filter(|r| bounds.limit(r / 3).is_finite())
        .collect();
    let rows = coords.len() * (n - 1);
    let w = d.w();
    let mut g = DMatrix::zeros(rows, l);
    let mut b = DVector::zeros(rows);
    for k in 0..n - 1 {
        for (i, &r) in coords.iter().enumerate() {
            let row = k * coords.len() + i;
            for j in 0..l {
                g[(row, j)] = w[((k + 1) * FEATURES + r, j)] - w[(k * FEATURES + r, j)];
            }
            b[row] = bounds.limit(r / 3) * d.dt();
        }
    }
    (g, b)
}

fn residual(achieved: &Frame, requested: &Frame) -> [f64; FEATURES] {
    std::array::from_fn(|f| achieved.features[f] - requested.features[f])
}

pub fn generate(d: &Dictionary, req: &GenerationRequest) -> Result<GenerationResult> {
    generate_with(d, req, &GenerationOptions::default())
}

pub fn generate_with(d: &Dictionary, req: &GenerationRequest, opts: &GenerationOptions) -> Result<GenerationResult> {
    let start = Instant::now();
    if !(req.lambda > 0.0) || !req.lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be positive, got {}", req.lambda)));
    }
    req.velocity_bounds.validate()?;
    let p1 = d.offsets.apply_frame(&req.initial, 0)?;
    let pn = d.offsets.apply_frame(&req.final_frame, d.n_steps() - 1)?;
    if !(opts.prior_weight >= 0.0) || !opts.prior_weight.is_finite() {
        return Err(Error::InvalidInput(format!("prior weight must be non-negative, got {}", opts.prior_weight)));
    }
    let ends = Endpoints::new(d, &p1, &pn, req.lambda, opts.prior_weight);

    let (g, b) = velocity_rows(d, &req.velocity_bounds);
    let problem = ends.problem(g, b);
    let sol = qp::solve(&problem, &opts.qp)?;
    if !sol.converged {
        log::warn!("generation solver stopped after {} iterations, KKT residual {:.3e}", sol.iterations, sol.kkt.max());
    }

    let gh = &problem.g * &sol.h;
    let utilization = (0..gh.len())
        .map(|r| gh[r].abs() / problem.b[r])
        .fold(0.0f64, f64::max);
    let objective = ends.cost(&sol.h);

    let h = ActivationVector::new(sol.h.clone())?;
    let trajectory = remove_offset(&reconstruct(d, &h)?, &d.offsets)?;
    let endpoint_residuals = (
        residual(trajectory.first(), &req.initial),
        residual(trajectory.last(), &req.final_frame),
    );
    let result = GenerationResult {
        h,
        trajectory,
        endpoint_residuals,
        solve_stats: SolveStats {
            iterations: sol.iterations,
            converged: sol.converged,
            kkt_residual: sol.kkt.max(),
            objective,
            velocity_utilization: utilization,
            wall_time_s: start.elapsed().as_secs_f64(),
        },
    };

    // Only a binding velocity bound can make the result worse than the
    // bound-free optimum.
    if let (Some(tol), true) = (opts.infeasibility_tol, utilization > 1.0 - 1e-6) {
        let l = d.n_primitives();
        let free = qp::solve(&ends.problem(DMatrix::zeros(0, l), DVector::zeros(0)), &opts.qp)?;
        let free_cost = ends.cost(&free.h);
        if objective.sqrt() - free_cost.sqrt() > tol {
            return Err(Error::Infeasible {
                residual: objective.sqrt(),
                unconstrained_residual: free_cost.sqrt(),
                best: Box::new(result),
            });
        }
    }
    Ok(result)
}

/// Final-pose error of one achieved trajectory in Table II units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EndpointError {
    pub translation_mm: [f64; 3],
    pub rotation_deg: [f64; 3],
}

impl EndpointError {
    pub fn between(achieved: &Frame, requested: &Frame) -> Self {
        let p = achieved.object_position() - requested.object_position();
        let r = achieved.object_orientation() - requested.object_orientation();
        EndpointError {
            translation_mm: [1e3 * p.x, 1e3 * p.y, 1e3 * p.z],
            rotation_deg: [
                wrap_angle(r.x).to_degrees(),
                wrap_angle(r.y).to_degrees(),
                wrap_angle(r.z).to_degrees(),
            ],
        }
    }
}

const AXES: [&str; 3] = ["x", "y", "z"];

/// Collects endpoint errors of several trajectories into mean / range rows.
#[derive(Debug, Clone, Default)]
pub struct EndpointErrorTable {
    translation: [Stats; 3],
    rotation: [Stats; 3],
}

impl EndpointErrorTable {
    pub fn push(&mut self, e: &EndpointError) {
        for a in 0..3 {
            self.translation[a].push(e.translation_mm[a]);
            self.rotation[a].push(e.rotation_deg[a]);
        }
    }

    pub fn rows(&self, group: &str) -> Vec<ErrorRow> {
        let mut rows = Vec::new();
        for (s, axis) in self.translation.iter().zip(AXES) {
            rows.push(s.row_range(group, &format!("Translation error on {axis}-axis"), "mm"));
        }
        for (s, axis) in self.rotation.iter().zip(AXES) {
            rows.push(s.row_range(group, &format!("Rotation error on {axis}-axis"), "deg"));
        }
        rows
    }
}

/// Per-axis object translation (mm) and rotation (deg) error between the
/// achieved final frame and the requested one.
pub fn endpoint_error(res: &GenerationResult, req: &GenerationRequest) -> ErrorTable {
    final_pose_error(res.trajectory.last(), &req.final_frame)
}

pub fn final_pose_error(achieved: &Frame, requested: &Frame) -> ErrorTable {
    let mut acc = EndpointErrorTable::default();
    acc.push(&EndpointError::between(achieved, requested));
    ErrorTable {
        title: "Endpoint error".into(),
        rows: acc
            .rows("Object")
            .into_iter()
            .map(|mut r| {
                r.spread = Spread::Range { min: r.mean, max: r.mean };
                r
            })
            .collect(),
    }
}
