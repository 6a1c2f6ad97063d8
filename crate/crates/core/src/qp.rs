//! Dense convex quadratic programming.
//!
//! [`solve_qp`] handles the general inequality form
//!
//! ```text
//! minimize   ½ xᵀQx + cᵀx
//! subject to G x ≤ h
//! ```
//!
//! with a primal-dual interior point method (Mehrotra predictor-corrector).
//! [`solve_box_qp`] handles the special case `l ≤ x ≤ u`, which is what SVM
//! duals reduce to, with coordinate descent plus Newton steps on the face of
//! free variables.

use nalgebra::{Cholesky, DMatrix, DVector};
use thiserror::Error;

use crate::kernel::max_asymmetry;

#[derive(Debug, Error)]
pub enum QpError {
    #[error("qp dimension mismatch: {0}")]
    Dimension(String),

    #[error("quadratic term is not symmetric (max asymmetry {0:e})")]
    NotSymmetric(f64),

    #[error("quadratic term is not positive semidefinite")]
    NotPsd,

    #[error("constraints are infeasible")]
    Infeasible,

    #[error(
        "qp solver stopped after {} iterations without converging (kkt residuals {:?})",
        best.iterations,
        best.kkt
    )]
    NotConverged { best: Box<QpSolution> },

    #[error("solution failed kkt certification: {0:?}")]
    Uncertified(KktResiduals),

    #[error(
        "box qp solver stopped after {} sweeps without converging (violation {:e})",
        best.iterations,
        best.violation
    )]
    BoxNotConverged { best: Box<BoxQpSolution> },
}

pub const DEFAULT_TOL: f64 = 1e-6;
pub const DEFAULT_MAX_ITER: usize = 500;

/// `minimize ½ xᵀQx + cᵀx  s.t.  G x ≤ h`.
#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl QpProblem {
    pub fn new(
        q: DMatrix<f64>,
        c: DVector<f64>,
        g: DMatrix<f64>,
        h: DVector<f64>,
    ) -> Result<Self, QpError> {
        let m = c.len();
        if q.shape() != (m, m) {
            return Err(QpError::Dimension(format!(
                "Q is {:?}, expected ({m}, {m})",
                q.shape()
            )));
        }
        if g.ncols() != m || g.nrows() != h.len() {
            return Err(QpError::Dimension(format!(
                "G is {:?} with {} right-hand sides for {m} variables",
                g.shape(),
                h.len()
            )));
        }
        let asym = max_asymmetry(&q);
        if asym > 1e-10 * q.amax().max(1.0) {
            return Err(QpError::NotSymmetric(asym));
        }
        Ok(QpProblem { q, c, g, h })
    }

    /// Problem without constraints.
    pub fn unconstrained(q: DMatrix<f64>, c: DVector<f64>) -> Result<Self, QpError> {
        let m = c.len();
        QpProblem::new(q, c, DMatrix::zeros(0, m), DVector::zeros(0))
    }

    pub fn num_vars(&self) -> usize {
        self.c.len()
    }

    pub fn num_constraints(&self) -> usize {
        self.h.len()
    }

    pub fn objective(&self, x: &DVector<f64>) -> f64 {
        0.5 * x.dot(&(&self.q * x)) + self.c.dot(x)
    }
}

/// Infinity norms of the three KKT conditions.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct KktResiduals {
    /// `|Qx + c + Gᵀz|∞`
    pub stationarity: f64,
    /// `|max(Gx - h, 0)|∞`
    pub primal_feasibility: f64,
    /// `|z ⊙ (Gx - h)|∞`
    pub complementarity: f64,
}

impl KktResiduals {
    pub fn max(&self) -> f64 {
        self.stationarity
            .max(self.primal_feasibility)
            .max(self.complementarity)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// One multiplier per inequality.
    pub duals: DVector<f64>,
    pub objective: f64,
    pub kkt: KktResiduals,
    pub iterations: usize,
}

pub fn kkt_residuals(
    p: &QpProblem,
    x: &DVector<f64>,
    duals: &DVector<f64>,
) -> Result<KktResiduals, QpError> {
    if x.len() != p.num_vars() || duals.len() != p.num_constraints() {
        return Err(QpError::Dimension(format!(
            "solution has {} variables and {} duals, problem has {} and {}",
            x.len(),
            duals.len(),
            p.num_vars(),
            p.num_constraints()
        )));
    }
    let grad = &p.q * x + &p.c + p.g.tr_mul(duals);
    let slack = &p.g * x - &p.h;
    Ok(KktResiduals {
        stationarity: grad.amax(),
        primal_feasibility: slack.iter().fold(0.0f64, |acc, &v| acc.max(v)),
        complementarity: slack.component_mul(duals).amax(),
    })
}

/// Fails with [`QpError::NotPsd`] when `Q` has an eigenvalue below
/// `-1e-8 · max|Q_ij|`.
fn check_psd(q: &DMatrix<f64>) -> Result<(), QpError> {
    let m = q.nrows();
    if m == 0 {
        return Ok(());
    }
    let tau = 1e-8 * q.amax().max(f64::MIN_POSITIVE);
    let shifted = q + DMatrix::identity(m, m) * tau;
    match Cholesky::new(shifted) {
        Some(_) => Ok(()),
        None => Err(QpError::NotPsd),
    }
}

/// Cholesky with a growing diagonal shift for matrices that are PSD but
/// possibly singular.
fn regularized_cholesky(mut a: DMatrix<f64>) -> Option<Cholesky<f64, nalgebra::Dyn>> {
    let m = a.nrows();
    let scale = a.diagonal().amax().max(1.0);
    let mut shift = 1e-14 * scale;
    for _ in 0..12 {
        if let Some(ch) = Cholesky::new(a.clone()) {
            return Some(ch);
        }
        for i in 0..m {
            a[(i, i)] += shift;
        }
        shift *= 100.0;
    }
    None
}

/// Solves `p` to KKT residuals `≤ tol`.
pub fn solve_qp(p: &QpProblem, tol: f64, max_iter: usize) -> Result<QpSolution, QpError> {
    check_psd(&p.q)?;
    let m = p.num_vars();
    let r = p.num_constraints();

    if r == 0 {
        let ch = regularized_cholesky(p.q.clone()).ok_or(QpError::NotPsd)?;
        let x = ch.solve(&(-&p.c));
        let duals = DVector::zeros(0);
        let kkt = kkt_residuals(p, &x, &duals)?;
        let sol = QpSolution {
            objective: p.objective(&x),
            x,
            duals,
            kkt,
            iterations: 1,
        };
        return if kkt.max() <= tol {
            Ok(sol)
        } else {
            Err(QpError::NotConverged { best: Box::new(sol) })
        };
    }

    // Start from the least-squares fit of the constraints plus objective.
    let gtg = p.g.tr_mul(&p.g);
    let init = regularized_cholesky(&p.q + &gtg).ok_or(QpError::NotPsd)?;
    let mut x = init.solve(&(p.g.tr_mul(&p.h) - &p.c));
    let mut s = &p.h - &p.g * &x;
    let shift = (-s.min()).max(0.0) + 1.0;
    s.add_scalar_mut(shift);
    let mut z = DVector::from_element(r, 1.0);

    let mut best: Option<QpSolution> = None;
    for iter in 0..max_iter {
        let kkt = kkt_residuals(p, &x, &z)?;
        let current = QpSolution {
            x: x.clone(),
            duals: z.clone(),
            objective: p.objective(&x),
            kkt,
            iterations: iter,
        };
        if kkt.max() <= tol {
            return Ok(current);
        }
        if best.as_ref().is_none_or(|b| kkt.max() < b.kkt.max()) {
            best = Some(current);
        }

        // Farkas certificate: y ≥ 0, Gᵀy = 0, hᵀy < 0.
        let z_norm = z.amax();
        if z_norm > 1e8 {
            let y = &z / z_norm;
            let hy = p.h.dot(&y);
            if hy < -1e-9 && p.g.tr_mul(&y).amax() <= 1e-9 * hy.abs().max(1.0) * p.g.amax().max(1.0) {
                return Err(QpError::Infeasible);
            }
        }

        let r_d = &p.q * &x + &p.c + p.g.tr_mul(&z);
        let r_p = &p.g * &x + &s - &p.h;
        let mu = s.dot(&z) / r as f64;
        let w = z.component_div(&s);

        let mut lhs = p.q.clone();
        let mut gw = p.g.clone();
        for (i, mut row) in gw.row_iter_mut().enumerate() {
            row *= w[i];
        }
        lhs += p.g.tr_mul(&gw);
        let Some(chol) = regularized_cholesky(lhs) else {
            break;
        };

        let direction = |r_c: &DVector<f64>| {
            let rhs = -&r_d - p.g.tr_mul(&(w.component_mul(&r_p) - r_c.component_div(&s)));
            let dx = chol.solve(&rhs);
            let dz = w.component_mul(&(&p.g * &dx + &r_p)) - r_c.component_div(&s);
            let ds = -(r_c + s.component_mul(&dz)).component_div(&z);
            (dx, ds, dz)
        };

        // Predictor.
        let r_c_aff = s.component_mul(&z);
        let (_, ds_aff, dz_aff) = direction(&r_c_aff);
        let alpha_aff = step_to_boundary(&s, &ds_aff).min(step_to_boundary(&z, &dz_aff));
        let mu_aff = (&s + &ds_aff * alpha_aff).dot(&(&z + &dz_aff * alpha_aff)) / r as f64;
        let sigma = (mu_aff / mu).powi(3).clamp(0.0, 1.0);

        // Corrector.
        let r_c = &r_c_aff + ds_aff.component_mul(&dz_aff) - DVector::from_element(r, sigma * mu);
        let (dx, ds, dz) = direction(&r_c);
        let alpha = (0.99 * step_to_boundary(&s, &ds).min(step_to_boundary(&z, &dz))).min(1.0);

        x += &dx * alpha;
        s += &ds * alpha;
        z += &dz * alpha;
        if !(x.iter().all(|v| v.is_finite()) && z.iter().all(|v| v.is_finite())) {
            break;
        }
        let _ = m;
    }

    let kkt = kkt_residuals(p, &x, &z)?;
    let last = QpSolution {
        objective: p.objective(&x),
        x,
        duals: z,
        kkt,
        iterations: max_iter,
    };
    let best = match best {
        Some(b) if b.kkt.max() <= last.kkt.max() => b,
        _ => last,
    };
    if best.kkt.max() <= tol {
        Ok(best)
    } else {
        Err(QpError::NotConverged {
            best: Box::new(best),
        })
    }
}

/// Largest `t ∈ (0, ∞)` keeping `v + t·dv ≥ 0`, capped at `1/0.99` so the
/// caller's damping can still reach a full step.
fn step_to_boundary(v: &DVector<f64>, dv: &DVector<f64>) -> f64 {
    let mut t = 1.0f64 / 0.99;
    for (vi, di) in v.iter().zip(dv.iter()) {
        if *di < 0.0 {
            t = t.min(-vi / di);
        }
    }
    t
}

/// `minimize ½ xᵀQx + cᵀx  s.t.  lower ≤ x ≤ upper` with finite bounds.
#[derive(Debug, Clone, PartialEq)]
pub struct BoxQp {
    pub q: DMatrix<f64>,
    pub c: DVector<f64>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoxQpSolution {
    pub x: DVector<f64>,
    /// `Qx + c` at the solution.
    pub gradient: DVector<f64>,
    pub objective: f64,
    /// Largest bound-complementarity product, see [`box_violation`].
    pub violation: f64,
    /// Coordinate sweeps used.
    pub iterations: usize,
}

/// `max_i max((x_i - l_i)·g_i⁺, (u_i - x_i)·g_i⁻)`.
///
/// Zero exactly at a KKT point. For an SVM dual with box `[0, C]` this equals
/// the complementarity residual of the matching primal problem.
pub fn box_violation(
    x: &DVector<f64>,
    grad: &DVector<f64>,
    lower: &DVector<f64>,
    upper: &DVector<f64>,
) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x.len() {
        let g = grad[i];
        let v = if g > 0.0 {
            (x[i] - lower[i]) * g
        } else {
            (upper[i] - x[i]) * (-g)
        };
        worst = worst.max(v);
    }
    worst
}

/// Widest box side, floored at 1. Complementarity products grow with the
/// box, so the stopping test compares `violation / box_scale` with `tol`.
pub fn box_scale(p: &BoxQp) -> f64 {
    (0..p.c.len()).fold(1.0f64, |acc, i| acc.max(p.upper[i] - p.lower[i]))
}

pub fn solve_box_qp(
    p: &BoxQp,
    tol: f64,
    max_sweeps: usize,
) -> Result<BoxQpSolution, QpError> {
    solve_box_qp_from(p, None, tol, max_sweeps)
}

/// [`solve_box_qp`] started from `start` (clipped into the box).
pub fn solve_box_qp_from(
    p: &BoxQp,
    start: Option<&DVector<f64>>,
    tol: f64,
    max_sweeps: usize,
) -> Result<BoxQpSolution, QpError> {
    let m = p.c.len();
    if p.q.shape() != (m, m) || p.lower.len() != m || p.upper.len() != m {
        return Err(QpError::Dimension(format!(
            "box qp with {m} variables has Q {:?} and {} / {} bounds",
            p.q.shape(),
            p.lower.len(),
            p.upper.len()
        )));
    }
    if (0..m).any(|i| !(p.lower[i] <= p.upper[i]) || !p.lower[i].is_finite() || !p.upper[i].is_finite()) {
        return Err(QpError::Infeasible);
    }

    let mut x = match start {
        Some(s) if s.len() == m => DVector::from_fn(m, |i, _| s[i].clamp(p.lower[i], p.upper[i])),
        _ => DVector::from_fn(m, |i, _| 0.0f64.clamp(p.lower[i], p.upper[i])),
    };
    let mut grad = &p.q * &x + &p.c;
    let diag = p.q.diagonal();
    let tol = tol * box_scale(p);

    let mut last_pattern: Vec<i8> = Vec::new();
    let mut sweeps = 0;
    while sweeps < max_sweeps {
        sweeps += 1;
        for i in 0..m {
            let g = grad[i];
            let target = if diag[i] > 0.0 {
                x[i] - g / diag[i]
            } else if g > 0.0 {
                p.lower[i]
            } else if g < 0.0 {
                p.upper[i]
            } else {
                x[i]
            };
            let new = target.clamp(p.lower[i], p.upper[i]);
            let delta = new - x[i];
            if delta != 0.0 {
                x[i] = new;
                grad.axpy(delta, &p.q.column(i), 1.0);
            }
        }

        let pattern = bound_pattern(&x, &p.lower, &p.upper);
        if box_violation(&x, &grad, &p.lower, &p.upper) <= tol {
            grad = &p.q * &x + &p.c;
            if box_violation(&x, &grad, &p.lower, &p.upper) <= tol {
                break;
            }
        }
        if pattern == last_pattern || sweeps % 10 == 0 {
            optimize_face(p, &mut x, &mut grad, m + 1);
            grad = &p.q * &x + &p.c;
            if box_violation(&x, &grad, &p.lower, &p.upper) <= tol {
                break;
            }
        }
        last_pattern = pattern;
    }

    let violation = box_violation(&x, &grad, &p.lower, &p.upper);
    let objective = 0.5 * x.dot(&(&grad + &p.c));
    let sol = BoxQpSolution {
        x,
        gradient: grad,
        objective,
        violation,
        iterations: sweeps,
    };
    if violation <= tol {
        Ok(sol)
    } else {
        Err(QpError::BoxNotConverged { best: Box::new(sol) })
    }
}

/// -1 at the lower bound, 1 at the upper bound, 0 strictly inside.
fn bound_pattern(x: &DVector<f64>, lower: &DVector<f64>, upper: &DVector<f64>) -> Vec<i8> {
    (0..x.len())
        .map(|i| {
            if x[i] <= lower[i] {
                -1
            } else if x[i] >= upper[i] {
                1
            } else {
                0
            }
        })
        .collect()
}

/// Minimizes over the face of currently free coordinates with Newton steps,
/// each cut short at the first bound it reaches, which then stays fixed.
/// Stops at the face optimum, when nothing is free, or after `max_steps`.
///
/// Every direction is a descent direction of the regularized face problem,
/// so the objective never increases. `grad` is kept up to date. A bound
/// that becomes active is dropped from the factorization by a downdate.
fn optimize_face(p: &BoxQp, x: &mut DVector<f64>, grad: &mut DVector<f64>, max_steps: usize) {
    let mut free: Vec<usize> = (0..x.len())
        .filter(|&i| x[i] > p.lower[i] && x[i] < p.upper[i])
        .collect();
    if free.is_empty() {
        return;
    }
    let mut reg = p.q.select_rows(&free).select_columns(&free);
    let scale = reg.diagonal().amax().max(f64::MIN_POSITIVE);
    for i in 0..free.len() {
        reg[(i, i)] += 1e-12 * scale;
    }
    let Some(mut chol) = regularized_cholesky(reg) else {
        return;
    };
    for _ in 0..max_steps {
        let g_f = DVector::from_iterator(free.len(), free.iter().map(|&i| grad[i]));
        let d = -chol.solve(&g_f);

        let mut t = 1.0f64;
        let mut blocking = None;
        for (k, &i) in free.iter().enumerate() {
            let limit = if d[k] > 0.0 {
                (p.upper[i] - x[i]) / d[k]
            } else if d[k] < 0.0 {
                (p.lower[i] - x[i]) / d[k]
            } else {
                continue;
            };
            if limit < t {
                t = limit;
                blocking = Some(k);
            }
        }
        for (k, &i) in free.iter().enumerate() {
            let new = if Some(k) == blocking {
                if d[k] > 0.0 { p.upper[i] } else { p.lower[i] }
            } else {
                (x[i] + t * d[k]).clamp(p.lower[i], p.upper[i])
            };
            let delta = new - x[i];
            if delta != 0.0 {
                x[i] = new;
                grad.axpy(delta, &p.q.column(i), 1.0);
            }
        }
        let Some(k) = blocking else {
            return;
        };
        if free.len() == 1 {
            return;
        }
        chol = chol.remove_column(k);
        free.remove(k);
    }
}
