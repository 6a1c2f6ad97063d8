//! Comparison methods: a plain kernel SVM and three subspace projections
//! (PCA, MIDA and its label-aware variant SMIDA).

use std::fmt;

use nalgebra::{DMatrix, DVector};

use crate::domain::{DomainMatrix, Label, RecodedLabels};
use crate::error::{check_dim, Error, Result};
use crate::kernel::{center_columns, gram, self_gram, sym_eig_top, symmetrize, KernelSpec};
use crate::model::{sign_labels, Diagnostics};
use crate::qp::{self, BoxQp, KktResiduals};

/// Soft-margin kernel SVM without bias, trained on labeled samples only.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmModel {
    pub beta: DVector<f64>,
    pub train_features: DMatrix<f64>,
    pub spec: KernelSpec,
    pub c: f64,
    pub diagnostics: Diagnostics,
}

impl SvmModel {
    pub fn decision_values(&self, x_new: &DMatrix<f64>) -> Result<DVector<f64>> {
        check_dim("query feature dimension", self.train_features.nrows(), x_new.nrows())?;
        Ok(gram(x_new, &self.train_features, &self.spec)?.entries() * &self.beta)
    }

    pub fn predict(&self, x_new: &DMatrix<f64>) -> Result<Vec<Label>> {
        Ok(sign_labels(&self.decision_values(x_new)?))
    }
}

pub fn fit_svm(
    features: &DMatrix<f64>,
    labels: &[Label],
    spec: KernelSpec,
    c: f64,
    tol: f64,
) -> Result<SvmModel> {
    spec.validate()?;
    check_dim("svm labels", features.ncols(), labels.len())?;
    if labels.iter().any(|l| !l.is_labeled()) {
        return Err(Error::InvalidData("svm training samples must all be labeled".into()));
    }
    let y = DVector::from_iterator(labels.len(), labels.iter().map(|l| l.value()));
    let k = self_gram(features, &spec)?;
    let dual = svm_dual(&k, &y, c, tol, 100_000, None)?;
    Ok(SvmModel {
        beta: dual.beta,
        train_features: features.clone(),
        spec,
        c,
        diagnostics: dual.diagnostics,
    })
}

/// Solution of the SVM dual on a precomputed Gram.
#[derive(Debug, Clone, PartialEq)]
pub struct SvmDual {
    pub alpha: DVector<f64>,
    /// `β = Yα`
    pub beta: DVector<f64>,
    pub diagnostics: Diagnostics,
}

/// Solves `min ½αᵀYKYα - 1ᵀα, 0 ≤ α ≤ C` for labels `y ∈ {-1, 1}ⁿ`.
pub fn svm_dual(
    k: &DMatrix<f64>,
    y: &DVector<f64>,
    c: f64,
    tol: f64,
    max_iter: usize,
    warm: Option<&DVector<f64>>,
) -> Result<SvmDual> {
    let n = y.len();
    check_dim("svm gram rows", n, k.nrows())?;
    check_dim("svm gram cols", n, k.ncols())?;
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidParameter(format!("C must be positive, got {c}")));
    }
    if y.iter().any(|&v| v != 1.0 && v != -1.0) {
        return Err(Error::InvalidData("svm labels must be +1 or -1".into()));
    }
    if !(y.iter().any(|&v| v > 0.0) && y.iter().any(|&v| v < 0.0)) {
        return Err(Error::SingleClass);
    }
    let problem = BoxQp {
        q: DMatrix::from_fn(n, n, |a, b| y[a] * y[b] * k[(a, b)]),
        c: DVector::from_element(n, -1.0),
        lower: DVector::zeros(n),
        upper: DVector::from_element(n, c),
    };
    let dual = qp::solve_box_qp_from(&problem, warm, tol, max_iter)?;
    let beta = dual.x.component_mul(y);
    let f = k * &beta;

    let mut slack = 0.0;
    let mut complementarity = 0.0f64;
    for i in 0..n {
        let margin = y[i] * f[i];
        let xi = (1.0 - margin).max(0.0);
        slack += xi;
        complementarity = complementarity
            .max((dual.x[i] * (1.0 - xi - margin)).abs())
            .max(((c - dual.x[i]) * xi).abs());
    }
    let diagnostics = Diagnostics {
        objective: 0.5 * beta.dot(&f) + c * slack,
        // β = Yα makes the primal gradient K(β - Yα) vanish identically.
        kkt: KktResiduals {
            stationarity: 0.0,
            primal_feasibility: 0.0,
            complementarity: complementarity / qp::box_scale(&problem),
        },
        simplified_hsic: f64::NAN,
        iterations: dual.iterations,
    };
    Ok(SvmDual {
        alpha: dual.x,
        beta,
        diagnostics,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProjectionKind {
    Pca,
    Mida,
    Smida,
}

impl fmt::Display for ProjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ProjectionKind::Pca => "pca",
            ProjectionKind::Mida => "mida",
            ProjectionKind::Smida => "smida",
        })
    }
}

/// A fitted linear (PCA) or kernel (MIDA, SMIDA) subspace.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionModel {
    /// `d × h` for PCA, `n × h` for the kernel projections.
    pub w: DMatrix<f64>,
    pub h: usize,
    pub spec: KernelSpec,
    pub train_features: DMatrix<f64>,
    pub kind: ProjectionKind,
    pub mu_var: f64,
    pub mu_y: f64,
    /// Training mean, used by PCA only.
    pub mean: DVector<f64>,
    /// Eigenvalues belonging to the columns of `w`.
    pub eigenvalues: DVector<f64>,
}

impl ProjectionModel {
    /// Projects the columns of `x_new`, giving an `h × n'` matrix.
    pub fn transform(&self, x_new: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim("query feature dimension", self.train_features.nrows(), x_new.nrows())?;
        match self.kind {
            ProjectionKind::Pca => {
                let mut centered = x_new.clone();
                for mut col in centered.column_iter_mut() {
                    col -= &self.mean;
                }
                Ok(self.w.tr_mul(&centered))
            }
            ProjectionKind::Mida | ProjectionKind::Smida => {
                let k = gram(&self.train_features, x_new, &self.spec)?;
                Ok(self.w.tr_mul(k.entries()))
            }
        }
    }
}

fn check_subspace(h: usize, max: usize) -> Result<()> {
    if h == 0 || h > max {
        return Err(Error::InvalidParameter(format!(
            "subspace dimension {h} outside 1..={max}"
        )));
    }
    Ok(())
}

/// Principal components of the columns of `x`.
pub fn fit_pca(x: &DMatrix<f64>, h: usize) -> Result<ProjectionModel> {
    let (d, n) = x.shape();
    if n == 0 {
        return Err(Error::Empty("pca needs at least one sample"));
    }
    check_subspace(h, d.min(n))?;
    let mean = x.column_mean();
    let mut xc = x.clone();
    for mut col in xc.column_iter_mut() {
        col -= &mean;
    }
    let denom = (n.max(2) - 1) as f64;

    let (values, w) = if d <= n {
        let mut cov = &xc * xc.transpose() / denom;
        symmetrize(&mut cov);
        sym_eig_top(&cov, h)?
    } else {
        // Eigenvectors of XᵀX map to those of XXᵀ through X.
        let mut g = xc.tr_mul(&xc) / denom;
        symmetrize(&mut g);
        let (values, v) = sym_eig_top(&g, h)?;
        let floor = 1e-12 * values[0].abs().max(f64::MIN_POSITIVE);
        let mut w = DMatrix::zeros(d, h);
        for j in 0..h {
            if values[j] > floor {
                let col = &xc * v.column(j) / (values[j] * denom).sqrt();
                w.set_column(j, &col);
            } else {
                w.set_column(j, &orthogonal_complement_vector(&w, j));
            }
        }
        (values.map(|v| v.max(0.0)), w)
    };
    Ok(ProjectionModel {
        w,
        h,
        spec: KernelSpec::Linear,
        train_features: x.clone(),
        kind: ProjectionKind::Pca,
        mu_var: 1.0,
        mu_y: 0.0,
        mean,
        eigenvalues: values,
    })
}

/// A unit vector orthogonal to the first `j` columns of `w`.
fn orthogonal_complement_vector(w: &DMatrix<f64>, j: usize) -> DVector<f64> {
    let d = w.nrows();
    for axis in 0..d {
        let mut v = DVector::zeros(d);
        v[axis] = 1.0;
        for _ in 0..2 {
            for k in 0..j {
                let proj = w.column(k).dot(&v);
                v -= w.column(k) * proj;
            }
        }
        let norm = v.norm();
        if norm > 1e-6 {
            return v / norm;
        }
    }
    DVector::zeros(d)
}

/// Maximizes `tr(Wᵀ K (μ_var H - H K_a H) K W)` over orthonormal `W`.
pub fn fit_mida(
    x: &DMatrix<f64>,
    domains: &DomainMatrix,
    h: usize,
    mu_var: f64,
    spec: KernelSpec,
) -> Result<ProjectionModel> {
    fit_kernel_projection(x, domains, None, h, mu_var, 0.0, spec)
}

/// [`fit_mida`] plus `μ_y K H ỹỹᵀ H K`, rewarding dependence on the labels.
pub fn fit_smida(
    x: &DMatrix<f64>,
    domains: &DomainMatrix,
    labels: &RecodedLabels,
    h: usize,
    mu_var: f64,
    mu_y: f64,
    spec: KernelSpec,
) -> Result<ProjectionModel> {
    fit_kernel_projection(x, domains, Some(labels), h, mu_var, mu_y, spec)
}

/// The symmetric matrix whose top eigenvectors give the MIDA/SMIDA basis.
pub fn mida_matrix(
    k: &DMatrix<f64>,
    domains: &DomainMatrix,
    labels: Option<&RecodedLabels>,
    mu_var: f64,
    mu_y: f64,
) -> Result<DMatrix<f64>> {
    let n = k.nrows();
    check_dim("mida gram cols", n, k.ncols())?;
    check_dim("mida domain samples", n, domains.n())?;
    // With C = HK: K H K = CᵀC and K H K_a H K = (AC)ᵀ(AC).
    let c = center_columns(k);
    let ac = &domains.a * &c;
    let mut m = c.tr_mul(&c) * mu_var - ac.tr_mul(&ac);
    if let Some(y) = labels {
        check_dim("smida labels", n, y.len())?;
        if mu_y != 0.0 {
            let cy = c.tr_mul(y.values());
            m += &cy * cy.transpose() * mu_y;
        }
    }
    symmetrize(&mut m);
    Ok(m)
}

fn fit_kernel_projection(
    x: &DMatrix<f64>,
    domains: &DomainMatrix,
    labels: Option<&RecodedLabels>,
    h: usize,
    mu_var: f64,
    mu_y: f64,
    spec: KernelSpec,
) -> Result<ProjectionModel> {
    spec.validate()?;
    let n = x.ncols();
    if n == 0 {
        return Err(Error::Empty("projection needs at least one sample"));
    }
    check_subspace(h, n)?;
    if !(mu_var >= 0.0 && mu_y >= 0.0) {
        return Err(Error::InvalidParameter("projection weights must be nonnegative".into()));
    }
    let k = self_gram(x, &spec)?;
    let m = mida_matrix(&k, domains, labels, mu_var, mu_y)?;
    let (values, w) = sym_eig_top(&m, h)?;
    Ok(ProjectionModel {
        w,
        h,
        spec,
        train_features: x.clone(),
        kind: if labels.is_some() { ProjectionKind::Smida } else { ProjectionKind::Mida },
        mu_var,
        mu_y,
        mean: DVector::zeros(x.nrows()),
        eigenvalues: values,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::domain::encode_ids;
    use crate::model::{fit, DisvmParams};
    use crate::domain::{Dataset, Role};
    use rand::{Rng, SeedableRng};
    use rand_distr::StandardNormal;

    fn rng(seed: u64) -> rand_chacha::ChaCha8Rng {
        rand_chacha::ChaCha8Rng::seed_from_u64(seed)
    }

    fn gaussian(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng(seed);
        DMatrix::from_fn(rows, cols, |_, _| r.sample(StandardNormal))
    }

    /// Smallest cosine of the principal angles between two orthonormal bases.
    fn min_cos(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
        let s = a.tr_mul(b).singular_values();
        s.min()
    }

    fn orthonormal_error(w: &DMatrix<f64>) -> f64 {
        (w.tr_mul(w) - DMatrix::identity(w.ncols(), w.ncols())).amax()
    }

    #[test]
    fn two_point_svm_meets_margin() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let m = fit_svm(&x, &[Label::Positive, Label::Negative], KernelSpec::Linear, 10.0, 1e-9).unwrap();
        let f = m.decision_values(&x).unwrap();
        assert!((f[0] - 1.0).abs() < 1e-6 && (f[1] + 1.0).abs() < 1e-6);
    }

    #[test]
    fn duplicated_data_keeps_decision_function() {
        let x = gaussian(3, 12, 1);
        let labels: Vec<Label> = (0..12).map(|i| Label::from_sign(x[(0, i)] + 0.3 * x[(1, i)])).collect();
        let once = fit_svm(&x, &labels, KernelSpec::Linear, 1.0, 1e-10).unwrap();
        let doubled_x = DMatrix::from_fn(3, 24, |r, c| x[(r, c % 12)]);
        let doubled_y: Vec<Label> = (0..24).map(|i| labels[i % 12]).collect();
        // Doubling every sample doubles the loss term; halving C compensates.
        let twice = fit_svm(&doubled_x, &doubled_y, KernelSpec::Linear, 0.5, 1e-10).unwrap();
        let q = gaussian(3, 8, 2);
        let a = once.decision_values(&q).unwrap();
        let b = twice.decision_values(&q).unwrap();
        assert!((a - b).amax() < 1e-6);
    }

    #[test]
    fn separable_set_is_fit_exactly_at_large_c() {
        let x = gaussian(2, 10, 3);
        let labels: Vec<Label> = (0..10).map(|i| Label::from_sign(x[(0, i)] - 0.5 * x[(1, i)])).collect();
        let m = fit_svm(&x, &labels, KernelSpec::Linear, 1e4, 1e-8).unwrap();
        assert_eq!(m.predict(&x).unwrap(), labels);
    }

    #[test]
    fn svm_rejects_single_class_and_unlabeled() {
        let x = gaussian(2, 3, 4);
        assert!(matches!(
            fit_svm(&x, &[Label::Positive; 3], KernelSpec::Linear, 1.0, 1e-6),
            Err(Error::SingleClass)
        ));
        assert!(fit_svm(&x, &[Label::Positive, Label::Negative, Label::Unlabeled], KernelSpec::Linear, 1.0, 1e-6).is_err());
    }

    #[test]
    fn svm_equals_disvm_without_penalty() {
        let x = gaussian(3, 20, 5);
        let labels: Vec<Label> = (0..20).map(|i| Label::from_sign(x[(0, i)] + 0.4 * x[(2, i)] + 0.2)).collect();
        let ds = Dataset::new(
            x.clone(),
            (0..20).map(|i| i.to_string()).collect(),
            (0..20).map(|i| format!("e{}", i % 2)).collect(),
            (0..20).map(|i| format!("s{}", i % 4)).collect(),
            labels.clone(),
            vec![Role::Source; 20],
        )
        .unwrap();
        let spec = KernelSpec::Rbf { gamma: 0.5 };
        let svm = fit_svm(&x, &labels, spec, 1.0, 1e-9).unwrap();
        let di = fit(&ds, &DisvmParams { kernel: spec, c: 1.0, lambda: 0.0, tol: 1e-9, ..DisvmParams::default() }).unwrap();
        let q = gaussian(3, 50, 6);
        assert_eq!(svm.predict(&q).unwrap(), di.predict(&q).unwrap());
        let rel = (svm.diagnostics.objective - di.diagnostics.objective).abs() / svm.diagnostics.objective;
        assert!(rel < 1e-6, "{rel}");
    }

    #[test]
    fn pca_on_a_line() {
        let t: Vec<f64> = (0..15).map(|i| i as f64 - 4.0).collect();
        let x = DMatrix::from_fn(3, 15, |r, c| t[c] * [1.0, 2.0, -0.5][r]);
        let m = fit_pca(&x, 1).unwrap();
        let z = m.transform(&x).unwrap();
        let total: f64 = {
            let mean = x.column_mean();
            x.column_iter().map(|c| (c - &mean).norm_squared()).sum()
        };
        assert!(z.norm_squared() >= 0.9999 * total);
        // Monotone in the line coordinate, in one direction or the other.
        let inc = (1..15).all(|i| z[(0, i)] > z[(0, i - 1)]);
        let dec = (1..15).all(|i| z[(0, i)] < z[(0, i - 1)]);
        assert!(inc || dec);
    }

    #[test]
    fn full_pca_is_a_rotation() {
        let x = gaussian(4, 30, 7);
        let m = fit_pca(&x, 4).unwrap();
        assert!(orthonormal_error(&m.w) < 1e-8);
        let z = m.transform(&x).unwrap();
        let back = &m.w * &z;
        let mut centered = x.clone();
        let mean = x.column_mean();
        for mut c in centered.column_iter_mut() {
            c -= &mean;
        }
        assert!((back - &centered).amax() < 1e-8);
        let d01 = (x.column(0) - x.column(1)).norm();
        let z01 = (z.column(0) - z.column(1)).norm();
        assert!((d01 - z01).abs() < 1e-8);
    }

    #[test]
    fn pca_variance_matches_full_decomposition() {
        let x = gaussian(20, 30, 8);
        let m = fit_pca(&x, 5).unwrap();
        let mean = x.column_mean();
        let mut xc = x.clone();
        for mut c in xc.column_iter_mut() {
            c -= &mean;
        }
        let cov = &xc * xc.transpose() / 29.0;
        let mut all: Vec<f64> = cov.clone().symmetric_eigen().eigenvalues.iter().copied().collect();
        all.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let want: f64 = all[..5].iter().sum();
        let got = (m.w.transpose() * &cov * &m.w).trace();
        assert!((got - want).abs() < 1e-8 * want);
    }

    #[test]
    fn wide_pca_uses_sample_space() {
        let x = gaussian(40, 6, 9);
        let wide = fit_pca(&x, 6).unwrap();
        assert!(orthonormal_error(&wide.w) < 1e-8);
        let m = fit_pca(&x, 3).unwrap();
        let mean = x.column_mean();
        let mut xc = x.clone();
        for mut c in xc.column_iter_mut() {
            c -= &mean;
        }
        let cov = &xc * xc.transpose() / 5.0;
        let (_, direct) = sym_eig_top(&cov, 3).unwrap();
        assert!(min_cos(&m.w, &direct) > 1.0 - 1e-8);
    }

    #[test]
    fn pca_rejects_bad_h() {
        let x = gaussian(3, 5, 10);
        assert!(fit_pca(&x, 0).is_err());
        assert!(fit_pca(&x, 4).is_err());
    }

    fn two_domain_setup(seed: u64) -> (DMatrix<f64>, DomainMatrix) {
        let mut x = gaussian(5, 24, seed);
        for c in 12..24 {
            x[(1, c)] += 3.0;
        }
        let exps: Vec<String> = (0..24).map(|i| format!("e{}", i / 12)).collect();
        let subs: Vec<String> = (0..24).map(|i| format!("s{}", i / 6)).collect();
        (x, encode_ids(&exps, &subs).unwrap())
    }

    #[test]
    fn mida_basis_is_orthonormal_and_optimal() {
        let (x, dm) = two_domain_setup(11);
        let spec = KernelSpec::Rbf { gamma: 0.2 };
        let model = fit_mida(&x, &dm, 4, 1.0, spec).unwrap();
        assert!(orthonormal_error(&model.w) < 1e-8);
        let k = self_gram(&x, &spec).unwrap();
        let m = mida_matrix(&k, &dm, None, 1.0, 0.0).unwrap();
        let best = (model.w.transpose() * &m * &model.w).trace();
        let mut r = rng(12);
        for _ in 0..200 {
            let g = DMatrix::from_fn(24, 4, |_, _| r.sample::<f64, _>(StandardNormal));
            let q = g.qr().q();
            assert!((q.transpose() * &m * &q).trace() <= best + 1e-9);
        }
    }

    #[test]
    fn single_domain_mida_is_variance_only() {
        let x = gaussian(4, 15, 13);
        let dm = encode_ids(&vec!["e"; 15], &vec!["s"; 15]).unwrap();
        let spec = KernelSpec::Linear;
        let model = fit_mida(&x, &dm, 3, 1.0, spec).unwrap();
        let c = center_columns(&self_gram(&x, &spec).unwrap());
        let (_, v) = sym_eig_top(&c.tr_mul(&c), 3).unwrap();
        assert!(min_cos(&model.w, &v) > 1.0 - 1e-6);
    }

    #[test]
    fn smida_reduces_to_mida() {
        let (x, dm) = two_domain_setup(14);
        let spec = KernelSpec::Linear;
        let mida = fit_mida(&x, &dm, 3, 1.0, spec).unwrap();
        let y = RecodedLabels::from_values(&(0..24).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect::<Vec<_>>()).unwrap();
        let no_weight = fit_smida(&x, &dm, &y, 3, 1.0, 0.0, spec).unwrap();
        assert!(min_cos(&mida.w, &no_weight.w) > 1.0 - 1e-8);
        let unlabeled = RecodedLabels::from_values(&[0.0; 24]).unwrap();
        let blind = fit_smida(&x, &dm, &unlabeled, 3, 1.0, 5.0, spec).unwrap();
        assert!(min_cos(&mida.w, &blind.w) > 1.0 - 1e-8);
    }

    #[test]
    fn smida_tracks_labels() {
        let mut x = gaussian(6, 30, 15) * 0.3;
        let yv: Vec<f64> = (0..30).map(|i| if i % 2 == 0 { 1.0 } else { -1.0 }).collect();
        for c in 0..30 {
            x[(0, c)] += 2.0 * yv[c];
        }
        let dm = encode_ids(&vec!["e".to_string(); 30], &(0..30).map(|i| format!("s{}", i % 3)).collect::<Vec<_>>()).unwrap();
        let y = RecodedLabels::from_values(&yv).unwrap();
        let model = fit_smida(&x, &dm, &y, 1, 1.0, 100.0, KernelSpec::Linear).unwrap();
        let z = model.transform(&x).unwrap();
        let zc: Vec<f64> = z.row(0).iter().copied().collect();
        let corr = correlation(&zc, &yv);
        assert!(corr.abs() >= 0.9, "{corr}");
    }

    fn correlation(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let (ma, mb) = (a.iter().sum::<f64>() / n, b.iter().sum::<f64>() / n);
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn kernel_transform_is_pointwise() {
        let (x, dm) = two_domain_setup(16);
        let model = fit_mida(&x, &dm, 2, 1.0, KernelSpec::Rbf { gamma: 0.3 }).unwrap();
        let q = x.select_columns(&[3, 3, 7]);
        let z = model.transform(&q).unwrap();
        assert_eq!(z.column(0), z.column(1));
        assert!(model.transform(&DMatrix::zeros(2, 1)).is_err());
    }
}
