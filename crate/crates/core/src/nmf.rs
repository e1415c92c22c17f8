//! Non-negative matrix factorization `V ~ W H` under the Frobenius objective.
//!
//! Two update rules are available. [`NmfSolver::Hals`] (hierarchical
//! alternating least squares) updates one column of a factor at a time with
//! its exact non-negative least-squares minimizer; [`NmfSolver::Multiplicative`]
//! is the Lee-Seung rule. Both never increase the objective.
//!
//! Internally `H` is stored transposed (`m x l`) so that both half-steps are
//! the same column-wise kernel.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{check_non_negative, ActivationPrior, Dictionary, Provenance};
use crate::preprocess::DemoMatrix;
use crate::report::{ErrorTable, ReconstructionErrors};

/// Floor applied to denominators of the update ratios.
const DENOMINATOR_FLOOR: f64 = 1e-12;
/// Smallest factor entry kept by the column-wise updates.
const ENTRY_FLOOR: f64 = 1e-16;
/// Above this many multiply-adds per product the objective is tracked through
/// the Gram-matrix identity instead of forming `W H`.
const EXACT_OBJECTIVE_LIMIT: usize = 20_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NmfSolver {
    #[default]
    Hals,
    Multiplicative,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NmfConfig {
    pub n_primitives: usize,
    pub max_iters: usize,
    /// Stop once the relative objective decrease of an iteration falls below this.
    pub rel_tol: f64,
    pub rng_seed: u64,
    /// Upper end of the uniform initialization; `None` picks
    /// `2 sqrt(mean(V) / l)` so that `W H` starts at the scale of `V`.
    pub init_scale: Option<f64>,
    pub solver: NmfSolver,
}

impl Default for NmfConfig {
    fn default() -> Self {
        NmfConfig {
            n_primitives: 200,
            max_iters: 500,
            rel_tol: 1e-6,
            rng_seed: 0,
            init_scale: None,
            solver: NmfSolver::Hals,
        }
    }
}

impl NmfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_primitives == 0 {
            return Err(Error::Config("n_primitives must be at least 1".into()));
        }
        if !(self.rel_tol > 0.0) {
            return Err(Error::Config("rel_tol must be positive".into()));
        }
        if matches!(self.init_scale, Some(s) if !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("init_scale must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Converged,
    MaxIterations,
    /// Rounding made the last update increase the objective; it was discarded.
    Stalled,
}

/// Raw factors of a matrix.
#[derive(Debug, Clone)]
pub struct Factorization {
    pub w: DMatrix<f64>,
    /// `l x m`.
    pub h: DMatrix<f64>,
    /// `||V - W H||_F` at initialization, then after every accepted iteration.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
    pub stop: StopReason,
}

impl Factorization {
    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().expect("trace holds the initial objective")
    }
}

#[derive(Debug, Clone)]
pub struct NmfResult {
    pub dictionary: Dictionary,
    pub activations: DMatrix<f64>,
    pub objective_trace: Vec<f64>,
    pub stop: StopReason,
}

/// Column-wise exact minimization of `||Y - X O^T||` over `x_j >= 0`, where
/// `cross = Y O` and `gram = O^T O`.
fn hals_step(x: &mut DMatrix<f64>, cross: &DMatrix<f64>, gram: &DMatrix<f64>) {
    for j in 0..x.ncols() {
        let xg = &*x * gram.column(j);
        let d = gram[(j, j)].max(DENOMINATOR_FLOOR);
        let cj = cross.column(j);
        for (r, xr) in x.column_mut(j).iter_mut().enumerate() {
            *xr = (*xr + (cj[r] - xg[r]) / d).max(ENTRY_FLOOR);
        }
    }
}

fn multiplicative_step(x: &mut DMatrix<f64>, cross: &DMatrix<f64>, gram: &DMatrix<f64>) {
    let denom = &*x * gram;
    x.zip_zip_apply(cross, &denom, |xi, c, d| *xi *= c / d.max(DENOMINATOR_FLOOR));
}

fn frobenius_sq(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum()
}

/// Factorizes a plain non-negative matrix.
pub fn factorize_matrix(v: &DMatrix<f64>, cfg: &NmfConfig) -> Result<Factorization> {
    cfg.validate()?;
    check_non_negative(v)?;
    let (n, m) = v.shape();
    let l = cfg.n_primitives;
    if l >= m {
        return Err(Error::RankTooLarge { rank: l, columns: m });
    }

    let scale = cfg
        .init_scale
        .unwrap_or_else(|| 2.0 * (v.mean() / l as f64).sqrt())
        .max(f64::MIN_POSITIVE);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut sample = || scale * (1.0 - rng.random::<f64>());
    let mut w = DMatrix::from_fn(n, l, |_, _| sample());
    let mut ht = DMatrix::from_fn(m, l, |_, _| sample());

    let vt = v.transpose();
    let v_sq = frobenius_sq(v);
    let exact = n * m * l <= EXACT_OBJECTIVE_LIMIT;
    let direct = |w: &DMatrix<f64>, ht: &DMatrix<f64>| (v - w * ht.transpose()).norm();

    let step = match cfg.solver {
        NmfSolver::Hals => hals_step,
        NmfSolver::Multiplicative => multiplicative_step,
    };

    let mut wtw = w.transpose() * &w;
    let mut trace = vec![direct(&w, &ht)];
    let mut stop = StopReason::MaxIterations;
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        let (w_prev, ht_prev, wtw_prev) = (w.clone(), ht.clone(), wtw.clone());

        let vtw = &vt * &w;
        step(&mut ht, &vtw, &wtw);
        let vh = v * &ht;
        let hth = ht.transpose() * &ht;
        step(&mut w, &vh, &hth);
        wtw = w.transpose() * &w;

        let objective = if exact {
            direct(&w, &ht)
        } else {
            (v_sq - 2.0 * w.dot(&vh) + wtw.dot(&hth)).max(0.0).sqrt()
        };
        let prev = *trace.last().expect("non-empty");
        if objective > prev {
            w = w_prev;
            ht = ht_prev;
            wtw = wtw_prev;
            stop = StopReason::Stalled;
            break;
        }
        iterations += 1;
        trace.push(objective);
        if prev == 0.0 || (prev - objective) / prev < cfg.rel_tol {
            stop = StopReason::Converged;
            break;
        }
    }
    let _ = wtw;
    log::debug!(
        "nmf: {iterations} iterations, residual {:.6e}, {stop:?}",
        trace.last().copied().unwrap_or_default()
    );
    Ok(Factorization {
        w,
        h: ht.transpose(),
        objective_trace: trace,
        iterations,
        stop,
    })
}

/// Learns a dictionary from a demonstration matrix. The dictionary inherits
/// the matrix's step count, time step and offsets.
pub fn nmf_factorize(v: &DemoMatrix, cfg: &NmfConfig, object: &str) -> Result<NmfResult> {
    let f = factorize_matrix(v.v(), cfg)?;
    let provenance = Provenance {
        object: object.into(),
        seed: cfg.rng_seed,
        iterations: f.iterations,
        final_residual: f.final_objective(),
    };
    let mut dictionary = Dictionary::new(f.w, v.n_steps(), v.dt(), v.offsets, provenance)?;
    if let Ok(prior) = ActivationPrior::fit(&f.h) {
        dictionary = dictionary.with_prior(prior)?;
    }
    Ok(NmfResult {
        dictionary,
        activations: f.h,
        objective_trace: f.objective_trace,
        stop: f.stop,
    })
}

/// Per-finger and object errors between `V` and its reconstruction `W H`.
/// Offsets cancel in the differences, so the values are in physical units.
pub fn reconstruction_report(res: &NmfResult, v: &DemoMatrix) -> Result<ErrorTable> {
    let w = res.dictionary.w();
    if w.nrows() != v.v().nrows() || res.activations.ncols() != v.n_columns() {
        return Err(Error::DimensionMismatch {
            expected: v.n_columns(),
            actual: res.activations.ncols(),
            context: "activations vs. demonstration columns",
        });
    }
    let recreated = w * &res.activations;
    let mut errors = ReconstructionErrors::default();
    for j in 0..v.n_columns() {
        errors.push(&recreated.column(j).into_owned(), &v.v().column(j).into_owned());
    }
    Ok(errors.table("Training reconstruction error"))
}
