//! Convex quadratic programs with non-negative variables and symmetric
//! two-sided linear bounds:
//!
//! ```text
//! minimize  1/2 h' Q h + c' h   subject to  h >= 0,  -b <= G h <= b
//! ```
//!
//! Solved with a primal-dual interior point method (Mehrotra
//! predictor-corrector). Because `b >= 0`, `h = 0` is always feasible.

use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub b: DVector<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct QpOptions {
    pub max_iters: usize,
    /// Relative tolerance on the scaled primal and dual residuals.
    pub tol: f64,
    /// Tolerance on the scaled duality measure.
    pub mu_tol: f64,
}

impl Default for QpOptions {
    fn default() -> Self {
        QpOptions {
            max_iters: 200,
            tol: 1e-9,
            mu_tol: 1e-15,
        }
    }
}

/// KKT residual components in the problem's own units.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Kkt {
    pub primal: f64,
    pub stationarity: f64,
    pub complementarity: f64,
}

impl Kkt {
    pub fn max(&self) -> f64 {
        self.primal.max(self.stationarity).max(self.complementarity)
    }
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub h: DVector<f64>,
    /// Multipliers of `h >= 0`.
    pub z_nonneg: DVector<f64>,
    /// Multipliers of `G h <= b` and `-G h <= b`.
    pub z_upper: DVector<f64>,
    pub z_lower: DVector<f64>,
    pub iterations: usize,
    pub converged: bool,
    pub kkt: Kkt,
}

impl QpProblem {
    pub fn validate(&self) -> Result<()> {
        let l = self.c.len();
        if self.q.shape() != (l, l) || self.g.ncols() != l || self.g.nrows() != self.b.len() {
            return Err(Error::DimensionMismatch {
                expected: l,
                actual: self.q.nrows(),
                context: "QP data",
            });
        }
        if self.b.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
            return Err(Error::InvalidInput("QP bounds must be finite and non-negative".into()));
        }
        Ok(())
    }

    pub fn objective(&self, h: &DVector<f64>) -> f64 {
        0.5 * h.dot(&(&self.q * h)) + self.c.dot(h)
    }

    /// Residuals of a candidate primal-dual point.
    pub fn kkt(&self, h: &DVector<f64>, zb: &DVector<f64>, zu: &DVector<f64>, zl: &DVector<f64>) -> Kkt {
        let gh = &self.g * h;
        let mut primal = h.iter().fold(0.0f64, |m, v| m.max(-v));
        let mut compl = h.iter().zip(zb.iter()).fold(0.0f64, |m, (h, z)| m.max((h * z).abs()));
        for r in 0..gh.len() {
            primal = primal.max(gh[r].abs() - self.b[r]);
            compl = compl
                .max((zu[r] * (self.b[r] - gh[r])).abs())
                .max((zl[r] * (self.b[r] + gh[r])).abs());
        }
        let grad = &self.q * h + &self.c - zb + self.g.transpose() * (zu - zl);
        Kkt {
            primal: primal.max(0.0),
            stationarity: grad.amax(),
            complementarity: compl,
        }
    }
}

fn max_step(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    v.iter()
        .zip(dv.iter())
        .filter(|(_, d)| **d < 0.0)
        .fold(1.0f64, |a, (x, d)| a.min(-x / d))
}

/// Stacked inequality system `C h <= d` with `C = [-I; G; -G]`; vectors over
/// the constraints are stored as one block of length `l + 2k`.
struct Stacked<'a> {
    g: &'a DMatrix<f64>,
    gt: DMatrix<f64>,
    l: usize,
    k: usize,
}

impl Stacked<'_> {
    fn mul(&self, h: &DVector<f64>) -> DVector<f64> {
        let gh = self.g * h;
        let mut out = DVector::zeros(self.l + 2 * self.k);
        out.rows_mut(0, self.l).copy_from(&(-h));
        out.rows_mut(self.l, self.k).copy_from(&gh);
        out.rows_mut(self.l + self.k, self.k).copy_from(&(-gh));
        out
    }

    fn tr_mul(&self, v: &DVector<f64>) -> DVector<f64> {
        let diff = v.rows(self.l, self.k) - v.rows(self.l + self.k, self.k);
        &self.gt * diff - v.rows(0, self.l)
    }
}

/// Solves the QP. Rows of `G` with zero norm are ignored.
pub fn solve(p: &QpProblem, opts: &QpOptions) -> Result<QpSolution> {
    p.validate()?;
    let l = p.c.len();

    // Normalize the constraint rows and the objective.
    let row_norms: Vec<f64> = p.g.row_iter().map(|r| r.norm()).collect();
    let g_max = row_norms.iter().cloned().fold(0.0, f64::max);
    let kept: Vec<usize> = (0..row_norms.len()).filter(|&r| row_norms[r] > 1e-14 * g_max).collect();
    let k = kept.len();
    let g = DMatrix::from_fn(k, l, |i, j| p.g[(kept[i], j)] / row_norms[kept[i]]);
    let bn = DVector::from_fn(k, |i, _| p.b[kept[i]] / row_norms[kept[i]]);
    let f_scale = 1.0 / p.q.amax().max(p.c.amax()).max(1e-300);
    let q = &p.q * f_scale;
    let c = &p.c * f_scale;

    let sys = Stacked {
        gt: g.transpose(),
        g: &g,
        l,
        k,
    };
    let m = l + 2 * k;
    let mut d = DVector::zeros(m);
    d.rows_mut(l, k).copy_from(&bn);
    d.rows_mut(l + k, k).copy_from(&bn);

    // Interior start on the ray h = t 1, inside the velocity bounds.
    let ones = DVector::from_element(l, 1.0);
    let curvature = ones.dot(&(&q * &ones));
    let mut t = if curvature > 0.0 { -c.sum() / curvature } else { 1.0 };
    if !(t > 0.0) {
        t = 1.0;
    }
    let g1 = &g * &ones;
    for i in 0..k {
        if g1[i].abs() * t > 0.5 * bn[i] {
            t = 0.5 * bn[i] / g1[i].abs();
        }
    }
    let t = t.max(1e-12);
    let mut h = &ones * t;
    let mut s = (&d - sys.mul(&h)).map(|v| v.max(1e-12));
    let mut z = DVector::from_element(m, 1.0);

    let tol = opts.tol;
    let scale_p = 1.0 + d.amax();
    let scale_d = 1.0 + c.amax();
    let mut iterations = 0;
    let mut converged = false;
    for _ in 0..opts.max_iters {
        let r_d = &q * &h + &c + sys.tr_mul(&z);
        let r_p = sys.mul(&h) + &s - &d;
        let mu = s.dot(&z) / m as f64;
        if r_p.amax() <= tol * scale_p && r_d.amax() <= tol * scale_d && mu <= opts.mu_tol {
            converged = true;
            break;
        }
        iterations += 1;

        let dz = z.component_div(&s);
        let mut normal = q.clone();
        for i in 0..l {
            normal[(i, i)] += dz[i];
        }
        if k > 0 {
            let weights = DVector::from_fn(k, |i, _| (dz[l + i] + dz[l + k + i]).sqrt());
            let mut gw = g.clone();
            for (i, mut row) in gw.row_iter_mut().enumerate() {
                row *= weights[i];
            }
            normal += gw.transpose() * &gw;
        }
        let Some(chol) = factor(normal) else {
            log::debug!("qp: normal matrix lost definiteness after {iterations} iterations");
            break;
        };

        let direction = |r_c: &DVector<f64>| {
            let rhs = -(&r_d) - sys.tr_mul(&(dz.component_mul(&r_p) - r_c.component_div(&s)));
            let dh = chol.solve(&rhs);
            let dzv = dz.component_mul(&(sys.mul(&dh) + &r_p)) - r_c.component_div(&s);
            let dsv = -(r_c + s.component_mul(&dzv)).component_div(&z);
            (dh, dsv, dzv)
        };

        let r_aff = s.component_mul(&z);
        let (_, ds_a, dz_a) = direction(&r_aff);
        let a_aff = max_step(&s, &ds_a).min(max_step(&z, &dz_a));
        let mu_aff = (&s + &ds_a * a_aff).dot(&(&z + &dz_a * a_aff)) / m as f64;
        let sigma = (mu_aff / mu).powi(3).min(1.0);
        let r_c = r_aff + ds_a.component_mul(&dz_a) - DVector::from_element(m, sigma * mu);
        let (dh, ds, dzv) = direction(&r_c);
        let alpha = (0.99 * max_step(&s, &ds).min(max_step(&z, &dzv))).min(1.0);
        h += dh * alpha;
        s += ds * alpha;
        z += dzv * alpha;
    }

    // Multipliers back in the problem's units, zero for ignored rows.
    let zb = z.rows(0, l) / f_scale;
    let mut zu = DVector::zeros(p.b.len());
    let mut zl = DVector::zeros(p.b.len());
    for (i, &r) in kept.iter().enumerate() {
        zu[r] = z[l + i] / (f_scale * row_norms[r]);
        zl[r] = z[l + k + i] / (f_scale * row_norms[r]);
    }

    // Land exactly in the feasible set: clamp to h >= 0, then shrink towards
    // the origin (feasible by symmetry) until every bound holds.
    h.apply(|v| *v = v.max(0.0));
    let gh = &p.g * &h;
    let mut shrink = 1.0f64;
    for r in 0..gh.len() {
        if gh[r].abs() > p.b[r] {
            shrink = shrink.min(p.b[r] / gh[r].abs() * (1.0 - 1e-12));
        }
    }
    if shrink < 1.0 {
        h *= shrink;
    }
    let kkt = p.kkt(&h, &zb, &zu, &zl);
    Ok(QpSolution {
        h,
        z_nonneg: zb,
        z_upper: zu,
        z_lower: zl,
        iterations,
        converged,
        kkt,
    })
}

fn factor(mut m: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    if m.iter().any(|v| !v.is_finite()) {
        return None;
    }
    let diag_max = m.diagonal().amax().max(1e-300);
    let mut reg = 0.0;
    for _ in 0..12 {
        if let Some(c) = Cholesky::new(m.clone()) {
            return Some(c);
        }
        let next = if reg == 0.0 { 1e-14 * diag_max } else { reg * 100.0 };
        for i in 0..m.nrows() {
            m[(i, i)] += next - reg;
        }
        reg = next;
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn unbounded(q: DMatrix<f64>, c: DVector<f64>) -> QpProblem {
        let l = c.len();
        QpProblem {
            q,
            c,
            g: DMatrix::zeros(0, l),
            b: DVector::zeros(0),
        }
    }

    #[test]
    fn interior_minimum() {
        let p = unbounded(DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![-2.0, -4.0]));
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert!((s.h[0] - 1.0).abs() < 1e-8 && (s.h[1] - 2.0).abs() < 1e-8, "{}", s.h);
        assert!(s.kkt.max() < 1e-8);
    }

    #[test]
    fn non_negativity_binds() {
        let p = unbounded(DMatrix::identity(2, 2) * 2.0, DVector::from_vec(vec![2.0, -4.0]));
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert!(s.h[0].abs() < 1e-8 && (s.h[1] - 2.0).abs() < 1e-8, "{}", s.h);
        assert!((s.z_nonneg[0] - 2.0).abs() < 1e-6);
    }

    #[test]
    fn two_sided_bound_binds() {
        // min (h0 - 3)^2 + (h1 - 1)^2 with |h0 - h1| <= 0.5 -> h = (2.25, 1.75).
        let p = QpProblem {
            q: DMatrix::identity(2, 2) * 2.0,
            c: DVector::from_vec(vec![-6.0, -2.0]),
            g: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            b: DVector::from_vec(vec![0.5]),
        };
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert!((s.h[0] - 2.25).abs() < 1e-8 && (s.h[1] - 1.75).abs() < 1e-8, "{}", s.h);
        assert!((p.g.row(0) * &s.h)[0] <= 0.5);
        assert!((s.z_upper[0] - 1.5).abs() < 1e-6);
        assert!(s.kkt.max() < 1e-8);
    }

    #[test]
    fn zero_rows_are_ignored() {
        let p = QpProblem {
            q: DMatrix::identity(2, 2) * 2.0,
            c: DVector::from_vec(vec![-2.0, -2.0]),
            g: DMatrix::from_row_slice(2, 2, &[0.0, 0.0, 1.0, 1.0]),
            b: DVector::from_vec(vec![0.0, 10.0]),
        };
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert!((s.h[0] - 1.0).abs() < 1e-8 && (s.h[1] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rank_deficient_hessian() {
        // Only h0 + h1 is determined.
        let a = DMatrix::from_row_slice(1, 2, &[1.0, 1.0]);
        let p = unbounded(a.transpose() * &a * 2.0, DVector::from_vec(vec![-4.0, -4.0]));
        let s = solve(&p, &QpOptions::default()).unwrap();
        assert!((s.h.sum() - 2.0).abs() < 1e-7, "{}", s.h);
        assert!(s.kkt.max() < 1e-7);
    }

    #[test]
    fn random_instances_satisfy_kkt() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..20 {
            let l = 8;
            let a = DMatrix::from_fn(6, l, |_, _| rng.random::<f64>());
            let target = DVector::from_fn(6, |_, _| rng.random::<f64>() * 3.0);
            let g = DMatrix::from_fn(10, l, |_, _| rng.random::<f64>() - 0.5);
            let p = QpProblem {
                q: a.transpose() * &a * 2.0,
                c: a.transpose() * &target * -2.0,
                g,
                b: DVector::from_fn(10, |_, _| 0.05 + 0.2 * rng.random::<f64>()),
            };
            let s = solve(&p, &QpOptions::default()).unwrap();
            assert!(s.converged);
            assert!(s.kkt.max() < 1e-7, "{:?}", s.kkt);
            assert!(s.h.iter().all(|v| *v >= 0.0));
            let gh = &p.g * &s.h;
            assert!((0..10).all(|r| gh[r].abs() <= p.b[r]));
        }
    }
}
