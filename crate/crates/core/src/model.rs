//! The domain-independent SVM estimator.
//!
//! Training minimizes
//!
//! ```text
//! ½ βᵀKβ + C Σ_{i labeled} ξ_i + (λ/2) βᵀ K H K_a H K β
//! s.t. ỹ_i (Kβ)_i ≥ 1 - ξ_i,  ξ_i ≥ 0
//! ```
//!
//! over one coefficient per training sample, labeled or not. Unlabeled
//! samples only enter through the dependence penalty.
//!
//! The problem is solved through its dual. With `P = K + λ U Uᵀ + εI` and
//! `U = K H Aᵀ`, the dual is a box QP in `α ∈ [0, C]^ñ` with Hessian
//! `Y (K P⁻¹ K)_{LL} Y`, and `β = P⁻¹ K Y α`. Since `U` has only `p + q`
//! columns, `P⁻¹` is applied through the Woodbury identity on top of a single
//! factorization of `K + εI`, which [`DisvmSystem`] keeps so that every `λ`,
//! `C` and label pattern on the same samples reuses it.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::domain::{encode_domains, recode_labels, Dataset, DomainMatrix, Label};
use crate::error::{check_dim, Error, Result};
use crate::kernel::{gram, self_gram, KernelSpec};
use crate::qp::{self, BoxQp, KktResiduals, QpError, QpProblem};

/// Hyper-parameters of a single fit.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DisvmParams {
    pub kernel: KernelSpec,
    pub c: f64,
    pub lambda: f64,
    pub tol: f64,
    /// Coordinate-descent sweep budget of the dual solver.
    pub max_iter: usize,
}

impl Default for DisvmParams {
    fn default() -> Self {
        DisvmParams {
            kernel: KernelSpec::Linear,
            c: 1.0,
            lambda: 1.0,
            tol: qp::DEFAULT_TOL,
            max_iter: 100_000,
        }
    }
}

impl DisvmParams {
    pub fn validate(&self) -> Result<()> {
        self.kernel.validate()?;
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidParameter(format!("C must be positive, got {}", self.c)));
        }
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        if !(self.tol > 0.0) {
            return Err(Error::InvalidParameter(format!("tol must be positive, got {}", self.tol)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Diagnostics {
    /// `½βᵀKβ + CΣξ + (λ/2)·penalty`, without the small ridge used for
    /// numerical uniqueness.
    pub objective: f64,
    /// Residuals divided by `max(1, C)`, the width of the dual box.
    pub kkt: KktResiduals,
    /// `βᵀ K H K_a H K β` at the solution.
    pub simplified_hsic: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisvmModel {
    pub beta: DVector<f64>,
    pub train_features: DMatrix<f64>,
    pub spec: KernelSpec,
    pub c: f64,
    pub lambda: f64,
    pub diagnostics: Diagnostics,
}

impl DisvmModel {
    /// `f(x) = Σ_j β_j k(x, x_j)` for every column of `x_new`.
    pub fn decision_values(&self, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim("query feature dimension", self.train_features.nrows(), x_new.nrows())?;
        let k = gram(x_new, &self.train_features, &self.spec)?;
        Ok(k.entries() * &self.beta)
    }

    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<Vec<Label>> {
        Ok(sign_labels(&self.decision_values(x_new)?))
    }
}

/// Sign rule with exact zeros going to the positive class.
pub fn sign_labels(values: &DVector<f64>) -> Vec<Label> {
    values
        .iter()
        .map(|&v| if v >= 0.0 { Label::Positive } else { Label::Negative })
        .collect()
}

/// Runs the full pipeline: domain encoding, label recoding, Gram matrices and
/// the QP.
pub fn fit(ds: &Dataset, params: &DisvmParams) -> Result<DisvmModel> {
    params.validate()?;
    if ds.n() == 0 {
        return Err(Error::Empty("training set has no samples"));
    }
    let domains = encode_domains(ds)?;
    let labels = recode_labels(ds);
    let system = DisvmSystem::new(ds.features(), &domains, params.kernel)?;
    let solution = system
        .with_lambda(params.lambda)?
        .solve(labels.values(), params.c, params.tol, params.max_iter, None)?;
    Ok(system.into_model(solution, ds.features().clone()))
}

/// Precomputed pieces shared by all fits on one sample set.
#[derive(Debug, Clone)]
pub struct DisvmSystem {
    spec: KernelSpec,
    k: DMatrix<f64>,
    /// `H Aᵀ`
    b: DMatrix<f64>,
    /// `K H Aᵀ`
    u: DMatrix<f64>,
    eps: f64,
    chol: Cholesky<f64, Dyn>,
    /// `(K + εI)⁻¹ H Aᵀ`
    w0_b: DMatrix<f64>,
    /// `K (K + εI)⁻¹ K`
    m0: DMatrix<f64>,
}

impl DisvmSystem {
    pub fn new(features: &DMatrix<f64>, domains: &DomainMatrix, spec: KernelSpec) -> Result<Self> {
        let k = self_gram(features, &spec)?;
        DisvmSystem::from_gram(k, domains, spec)
    }

    pub fn from_gram(k: DMatrix<f64>, domains: &DomainMatrix, spec: KernelSpec) -> Result<Self> {
        let n = k.nrows();
        if n == 0 {
            return Err(Error::Empty("training set has no samples"));
        }
        check_dim("gram columns", n, k.ncols())?;
        check_dim("domain matrix samples", n, domains.n())?;

        let eps = ridge(&k);
        let mut shifted = k.clone();
        for i in 0..n {
            shifted[(i, i)] += eps;
        }
        let chol = Cholesky::new(shifted).ok_or(QpError::NotPsd)?;
        let b = domains.centered_indicators();
        let u = &k * &b;
        let w0_b = chol.solve(&b);

        // K W0 K = K - εI + ε² W0
        let mut m0 = chol.inverse() * (eps * eps);
        m0 += &k;
        for i in 0..n {
            m0[(i, i)] -= eps;
        }
        crate::kernel::symmetrize(&mut m0);

        Ok(DisvmSystem { spec, k, b, u, eps, chol, w0_b, m0 })
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    pub fn gram(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn ridge(&self) -> f64 {
        self.eps
    }

    /// Prepares the dual Hessian for one penalty weight.
    pub fn with_lambda(&self, lambda: f64) -> Result<PenalizedSystem<'_>> {
        if !(lambda >= 0.0 && lambda.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "lambda must be nonnegative, got {lambda}"
            )));
        }
        let mut m = self.m0.clone();
        let mut correction = None;
        if lambda > 0.0 && self.b.ncols() > 0 {
            let eps = self.eps;
            // V = K W0 U = KB - εB + ε² W0 B
            let v = &self.u - &self.b * eps + &self.w0_b * (eps * eps);
            // S = I/λ + Uᵀ W0 U = I/λ + Bᵀ V
            let mut s = self.b.tr_mul(&v);
            crate::kernel::symmetrize(&mut s);
            for i in 0..s.nrows() {
                s[(i, i)] += 1.0 / lambda;
            }
            let s_chol = Cholesky::new(s).ok_or(QpError::NotPsd)?;
            let s_inv_vt = s_chol.solve(&v.transpose());
            m -= &v * &s_inv_vt;
            crate::kernel::symmetrize(&mut m);
            // W0 U = B - ε W0 B
            let w0_u = &self.b - &self.w0_b * eps;
            correction = Some(Correction { w0_u, s_chol });
        }
        Ok(PenalizedSystem {
            system: self,
            lambda,
            m,
            correction,
        })
    }

    pub fn into_model(&self, solution: DisvmSolution, train_features: DMatrix<f64>) -> DisvmModel {
        DisvmModel {
            beta: solution.beta,
            train_features,
            spec: self.spec,
            c: solution.c,
            lambda: solution.lambda,
            diagnostics: solution.diagnostics,
        }
    }

    /// The stacked primal `(β, ξ_L)` problem, for independent certification.
    pub fn primal_problem(&self, labels: &DVector<f64>, c: f64, lambda: f64) -> Result<QpProblem> {
        let n = self.n();
        check_dim("label vector", n, labels.len())?;
        let labeled: Vec<usize> = (0..n).filter(|&i| labels[i] != 0.0).collect();
        let nl = labeled.len();
        let m = n + nl;

        let mut q = DMatrix::zeros(m, m);
        let p = self.penalized_hessian(lambda);
        q.view_mut((0, 0), (n, n)).copy_from(&p);
        let mut cvec = DVector::zeros(m);
        let mut g = DMatrix::zeros(2 * nl, m);
        let mut h = DVector::zeros(2 * nl);
        for (row, &i) in labeled.iter().enumerate() {
            cvec[n + row] = c;
            for j in 0..n {
                g[(row, j)] = -labels[i] * self.k[(i, j)];
            }
            g[(row, n + row)] = -1.0;
            h[row] = -1.0;
            g[(nl + row, n + row)] = -1.0;
        }
        Ok(QpProblem::new(q, cvec, g, h)?)
    }

    /// `K + λ U Uᵀ + εI`
    fn penalized_hessian(&self, lambda: f64) -> DMatrix<f64> {
        let mut p = &self.k + (&self.u * self.u.transpose()) * lambda;
        for i in 0..self.n() {
            p[(i, i)] += self.eps;
        }
        crate::kernel::symmetrize(&mut p);
        p
    }

    fn apply_hessian(&self, lambda: f64, beta: &DVector<f64>) -> DVector<f64> {
        let mut out = &self.k * beta + beta * self.eps;
        if lambda > 0.0 && self.u.ncols() > 0 {
            out += &self.u * (self.u.tr_mul(beta)) * lambda;
        }
        out
    }

    /// `βᵀ K H K_a H K β = |Uᵀβ|²`
    pub fn penalty(&self, beta: &DVector<f64>) -> f64 {
        self.u.tr_mul(beta).norm_squared()
    }
}

/// `ε = 1e-8 · tr(K) / n`, floored so an all-zero Gram still factors.
fn ridge(k: &DMatrix<f64>) -> f64 {
    let n = k.nrows() as f64;
    let eps = 1e-8 * k.trace() / n;
    if eps > 0.0 {
        eps
    } else {
        1e-12
    }
}

#[derive(Debug, Clone)]
struct Correction {
    w0_u: DMatrix<f64>,
    s_chol: Cholesky<f64, Dyn>,
}

/// A [`DisvmSystem`] at a fixed penalty weight.
#[derive(Debug, Clone)]
pub struct PenalizedSystem<'a> {
    system: &'a DisvmSystem,
    lambda: f64,
    /// `K P⁻¹ K`
    m: DMatrix<f64>,
    correction: Option<Correction>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisvmSolution {
    pub beta: DVector<f64>,
    /// Dual multipliers of the margin constraints, over all samples (zero
    /// for unlabeled ones).
    pub alpha: DVector<f64>,
    /// `Kβ` on the training samples.
    pub train_decisions: DVector<f64>,
    pub c: f64,
    pub lambda: f64,
    pub diagnostics: Diagnostics,
}

impl PenalizedSystem<'_> {
    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// `P⁻¹ v`
    fn apply_inverse(&self, v: &DVector<f64>) -> DVector<f64> {
        let mut out = self.system.chol.solve(v);
        if let Some(corr) = &self.correction {
            let t = corr.s_chol.solve(&corr.w0_u.tr_mul(v));
            out -= &corr.w0_u * t;
        }
        out
    }

    /// Solves for one label pattern (`ỹ ∈ {-1, 0, 1}ⁿ`) and slack cost.
    ///
    /// `warm` is a previous `alpha` over all samples, used as the dual
    /// starting point.
    pub fn solve(
        &self,
        labels: &DVector<f64>,
        c: f64,
        tol: f64,
        max_iter: usize,
        warm: Option<&DVector<f64>>,
    ) -> Result<DisvmSolution> {
        let sys = self.system;
        let n = sys.n();
        check_dim("label vector", n, labels.len())?;
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::InvalidParameter(format!("C must be positive, got {c}")));
        }
        let labeled: Vec<usize> = (0..n).filter(|&i| labels[i] != 0.0).collect();
        if !(labeled.iter().any(|&i| labels[i] > 0.0) && labeled.iter().any(|&i| labels[i] < 0.0)) {
            return Err(Error::SingleClass);
        }
        let nl = labeled.len();
        let y = DVector::from_iterator(nl, labeled.iter().map(|&i| labels[i]));

        let q = DMatrix::from_fn(nl, nl, |a, b| y[a] * y[b] * self.m[(labeled[a], labeled[b])]);
        let mut problem = BoxQp {
            q,
            c: DVector::from_element(nl, -1.0),
            lower: DVector::zeros(nl),
            upper: DVector::from_element(nl, c),
        };
        let mut start = warm.map(|w| DVector::from_iterator(nl, labeled.iter().map(|&i| w[i])));

        // The Hessian `Y M Y` carries rounding error that large multipliers
        // amplify. Each round measures the true dual gradient `Y K β - 1`
        // and shifts the linear term by the defect before re-solving.
        let scale = qp::box_scale(&problem);
        let mut iterations = 0;
        let (alpha, beta, stationarity) = loop {
            let dual = qp::solve_box_qp_from(&problem, start.as_ref(), 0.5 * tol, max_iter)?;
            iterations += dual.iterations;

            let mut alpha = DVector::zeros(n);
            let mut r = DVector::zeros(n);
            for (a, &i) in labeled.iter().enumerate() {
                alpha[i] = dual.x[a];
                r[i] = y[a] * dual.x[a];
            }
            let kr = &sys.k * &r;
            let mut beta = self.apply_inverse(&kr);
            let mut residual = DVector::zeros(n);
            for _ in 0..3 {
                residual = sys.apply_hessian(self.lambda, &beta) - &kr;
                if residual.amax() <= 0.1 * tol {
                    break;
                }
                beta -= self.apply_inverse(&residual);
            }

            let f = &sys.k * &beta;
            let true_grad = DVector::from_iterator(nl, labeled.iter().enumerate().map(|(a, &i)| y[a] * f[i] - 1.0));
            let violation = qp::box_violation(&dual.x, &true_grad, &problem.lower, &problem.upper) / scale;
            if violation <= tol || iterations >= max_iter {
                break (alpha, beta, residual.amax());
            }
            problem.c += &true_grad - &dual.gradient;
            start = Some(dual.x);
        };

        let f = &sys.k * &beta;
        let mut slack_sum = 0.0;
        let mut complementarity = 0.0f64;
        for &i in &labeled {
            let margin = labels[i] * f[i];
            let xi = (1.0 - margin).max(0.0);
            slack_sum += xi;
            // Margin row: α(1 - ξ - margin); slack row: (C - α)ξ.
            complementarity = complementarity
                .max((alpha[i] * (1.0 - xi - margin)).abs())
                .max(((c - alpha[i]) * xi).abs());
        }
        let kkt = KktResiduals {
            stationarity: stationarity / scale,
            primal_feasibility: 0.0,
            complementarity: complementarity / scale,
        };
        let penalty = sys.penalty(&beta);
        let objective = 0.5 * beta.dot(&f) + c * slack_sum + 0.5 * self.lambda * penalty;
        let diagnostics = Diagnostics {
            objective,
            kkt,
            simplified_hsic: penalty,
            iterations,
        };
        let solution = DisvmSolution {
            beta,
            alpha,
            train_decisions: f,
            c,
            lambda: self.lambda,
            diagnostics,
        };
        if kkt.max() > tol {
            return Err(QpError::Uncertified(kkt).into());
        }
        Ok(solution)
    }
}
