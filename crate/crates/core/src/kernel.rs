//! Kernel functions, Gram matrices and the small amount of dense linear
//! algebra shared by the estimators.
//!
//! Samples are stored column-wise: a feature matrix is `d × n`, one column per
//! sample.

use std::fmt;

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{check_dim, Error, Result};

/// Kernel family and parameters.
///
/// The RBF width multiplies the squared distance directly:
/// `k(a, b) = exp(-gamma * |a - b|^2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelSpec {
    /// `k(a, b) = a·b`
    Linear,
    /// `k(a, b) = exp(-gamma |a - b|²)`
    Rbf { gamma: f64 },
    /// `k(a, b) = (a·b + coef)^degree`
    Polynomial { degree: u32, coef: f64 },
}

impl Default for KernelSpec {
    fn default() -> Self {
        KernelSpec::Linear
    }
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Rbf { gamma } => write!(f, "rbf(gamma={gamma})"),
            KernelSpec::Polynomial { degree, coef } => {
                write!(f, "poly(degree={degree},coef={coef})")
            }
        }
    }
}

impl KernelSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            KernelSpec::Linear => Ok(()),
            KernelSpec::Rbf { gamma } if gamma > 0.0 && gamma.is_finite() => Ok(()),
            KernelSpec::Rbf { gamma } => Err(Error::InvalidParameter(format!(
                "rbf gamma must be positive and finite, got {gamma}"
            ))),
            KernelSpec::Polynomial { degree, coef } if degree >= 1 && coef.is_finite() => Ok(()),
            KernelSpec::Polynomial { degree, coef } => Err(Error::InvalidParameter(format!(
                "polynomial kernel needs degree >= 1 and finite coef, got degree={degree} coef={coef}"
            ))),
        }
    }

    /// Kernel value between two samples of equal length.
    pub fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        debug_assert_eq!(a.len(), b.len());
        match *self {
            KernelSpec::Linear => dot(a, b),
            KernelSpec::Rbf { gamma } => {
                let sq: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * sq).exp()
            }
            KernelSpec::Polynomial { degree, coef } => (dot(a, b) + coef).powi(degree as i32),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Kernel matrix between two sample sets, together with the kernel that
/// produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    entries: DMatrix<f64>,
    spec: KernelSpec,
}

impl GramMatrix {
    pub fn entries(&self) -> &DMatrix<f64> {
        &self.entries
    }

    pub fn into_entries(self) -> DMatrix<f64> {
        self.entries
    }

    pub fn spec(&self) -> KernelSpec {
        self.spec
    }
}

/// Computes `k(X_a[:, i], X_b[:, j])` for every column pair.
pub fn gram(xa: &DMatrix<f64>, xb: &DMatrix<f64>, spec: &KernelSpec) -> Result<GramMatrix> {
    spec.validate()?;
    check_dim("gram feature dimension", xa.nrows(), xb.nrows())?;
    let entries = match *spec {
        KernelSpec::Linear => xa.tr_mul(xb),
        KernelSpec::Polynomial { degree, coef } => {
            xa.tr_mul(xb).map(|v| (v + coef).powi(degree as i32))
        }
        KernelSpec::Rbf { gamma } => {
            // Direct differences keep the self-Gram diagonal exactly one.
            let mut out = DMatrix::zeros(xa.ncols(), xb.ncols());
            for j in 0..xb.ncols() {
                let b = xb.column(j);
                for i in 0..xa.ncols() {
                    let a = xa.column(i);
                    let sq: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
                    out[(i, j)] = (-gamma * sq).exp();
                }
            }
            out
        }
    };
    Ok(GramMatrix {
        entries,
        spec: *spec,
    })
}

/// Self-Gram `k(X, X)`, symmetrized so that later factorizations see an
/// exactly symmetric matrix.
pub fn self_gram(x: &DMatrix<f64>, spec: &KernelSpec) -> Result<DMatrix<f64>> {
    let mut k = gram(x, x, spec)?.into_entries();
    symmetrize(&mut k);
    Ok(k)
}

/// `H = I - (1/n) 1 1ᵀ`.
pub fn centering_matrix(n: usize) -> Result<DMatrix<f64>> {
    if n == 0 {
        return Err(Error::Empty("centering matrix needs n >= 1"));
    }
    let inv = 1.0 / n as f64;
    Ok(DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            1.0 - inv
        } else {
            -inv
        }
    }))
}

/// Returns `H·M` without forming `H`: every column has its mean removed.
pub fn center_columns(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut out = m.clone();
    for mut col in out.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
    out
}

/// Returns `H·v`.
pub fn center_vector(v: &DVector<f64>) -> DVector<f64> {
    let mean = v.mean();
    v.add_scalar(-mean)
}

pub(crate) fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in (i + 1)..n {
            let avg = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = avg;
            m[(j, i)] = avg;
        }
    }
}

pub(crate) fn max_asymmetry(m: &DMatrix<f64>) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0f64;
    for i in 0..n {
        for j in (i + 1)..n {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

/// Largest `h` eigenpairs of a symmetric matrix, eigenvalues descending.
///
/// Eigenvectors are returned as the columns of an `n × h` matrix.
pub fn sym_eig_top(m: &DMatrix<f64>, h: usize) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = m.nrows();
    check_dim("sym_eig_top square input", n, m.ncols())?;
    if h == 0 || h > n {
        return Err(Error::InvalidParameter(format!(
            "subspace dimension {h} outside 1..={n}"
        )));
    }
    let scale = m.amax().max(1.0);
    let asym = max_asymmetry(m);
    if asym > 1e-10 * scale {
        return Err(Error::NotSymmetric(asym));
    }
    let mut sym = m.clone();
    symmetrize(&mut sym);
    let eig = SymmetricEigen::new(sym);

    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| {
        eig.eigenvalues[b]
            .partial_cmp(&eig.eigenvalues[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    let values = DVector::from_iterator(h, order[..h].iter().map(|&i| eig.eigenvalues[i]));
    let vectors = DMatrix::from_columns(
        &order[..h]
            .iter()
            .map(|&i| eig.eigenvectors.column(i).into_owned())
            .collect::<Vec<_>>(),
    );
    Ok((values, vectors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<f64> {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn linear_gram_of_identity_columns() {
        let x = DMatrix::identity(2, 2);
        let k = gram(&x, &x, &KernelSpec::Linear).unwrap();
        assert_eq!(k.entries(), &DMatrix::identity(2, 2));
    }

    #[test]
    fn linear_gram_of_signed_scalars() {
        let x = DMatrix::from_row_slice(1, 2, &[1.0, -1.0]);
        let k = gram(&x, &x, &KernelSpec::Linear).unwrap();
        assert_eq!(k.entries(), &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, -1.0, 1.0]));
    }

    #[test]
    fn rbf_self_gram_has_unit_diagonal() {
        let x = random_matrix(4, 9, 1);
        let k = gram(&x, &x, &KernelSpec::Rbf { gamma: 0.7 }).unwrap();
        for i in 0..9 {
            assert_eq!(k.entries()[(i, i)], 1.0);
        }
    }

    #[test]
    fn polynomial_matches_pointwise_eval() {
        let xa = random_matrix(3, 4, 2);
        let xb = random_matrix(3, 5, 3);
        let spec = KernelSpec::Polynomial { degree: 3, coef: 0.5 };
        let k = gram(&xa, &xb, &spec).unwrap();
        for i in 0..4 {
            for j in 0..5 {
                let a: Vec<f64> = xa.column(i).iter().copied().collect();
                let b: Vec<f64> = xb.column(j).iter().copied().collect();
                assert!((k.entries()[(i, j)] - spec.eval(&a, &b)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gram_rejects_bad_input() {
        let xa = DMatrix::zeros(3, 2);
        let xb = DMatrix::zeros(4, 2);
        assert!(matches!(
            gram(&xa, &xb, &KernelSpec::Linear),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(gram(&xa, &xa, &KernelSpec::Rbf { gamma: 0.0 }).is_err());
        assert!(gram(&xa, &xa, &KernelSpec::Polynomial { degree: 0, coef: 1.0 }).is_err());
    }

    #[test]
    fn centering_matrix_small_cases() {
        assert_eq!(
            centering_matrix(2).unwrap(),
            DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5])
        );
        assert_eq!(centering_matrix(1).unwrap(), DMatrix::from_element(1, 1, 0.0));
        assert!(centering_matrix(0).is_err());
    }

    #[test]
    fn centering_matrix_is_idempotent_projector() {
        let h = centering_matrix(5).unwrap();
        assert!((&h * &h - &h).amax() < 1e-12);
        assert!((&h - h.transpose()).amax() < 1e-12);
        let ones = DVector::from_element(5, 1.0);
        assert!((&h * ones).amax() < 1e-12);
    }

    #[test]
    fn center_helpers_match_explicit_h() {
        let m = random_matrix(6, 4, 5);
        let h = centering_matrix(6).unwrap();
        assert!((center_columns(&m) - &h * &m).amax() < 1e-12);
        let v = m.column(0).into_owned();
        assert!((center_vector(&v) - &h * &v).amax() < 1e-12);
    }

    #[test]
    fn eig_top_of_diagonal() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![3.0, 1.0, 2.0]));
        let (vals, vecs) = sym_eig_top(&m, 2).unwrap();
        assert!((vals[0] - 3.0).abs() < 1e-12 && (vals[1] - 2.0).abs() < 1e-12);
        assert!((vecs[(0, 0)].abs() - 1.0).abs() < 1e-12);
        assert!((vecs[(2, 1)].abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_top_of_identity() {
        let (vals, _) = sym_eig_top(&DMatrix::identity(4, 4), 1).unwrap();
        assert!((vals[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn eig_top_errors() {
        let mut m = DMatrix::identity(3, 3);
        assert!(sym_eig_top(&m, 0).is_err());
        assert!(sym_eig_top(&m, 4).is_err());
        m[(0, 1)] = 1.0;
        assert!(matches!(sym_eig_top(&m, 1), Err(Error::NotSymmetric(_))));
    }

    /// Cyclic Jacobi rotations; slow but independent of the library solver.
    fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
        let n = m.nrows();
        let mut a = m.clone();
        for _sweep in 0..100 {
            let off: f64 = (0..n)
                .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
                .map(|(i, j)| a[(i, j)] * a[(i, j)])
                .sum();
            if off < 1e-30 {
                break;
            }
            for p in 0..n {
                for q in (p + 1)..n {
                    if a[(p, q)].abs() < 1e-300 {
                        continue;
                    }
                    let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                    let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                    let t = if theta == 0.0 { 1.0 } else { t };
                    let c = 1.0 / (t * t + 1.0).sqrt();
                    let s = t * c;
                    for k in 0..n {
                        let akp = a[(k, p)];
                        let akq = a[(k, q)];
                        a[(k, p)] = c * akp - s * akq;
                        a[(k, q)] = s * akp + c * akq;
                    }
                    for k in 0..n {
                        let apk = a[(p, k)];
                        let aqk = a[(q, k)];
                        a[(p, k)] = c * apk - s * aqk;
                        a[(q, k)] = s * apk + c * aqk;
                    }
                }
            }
        }
        let mut vals: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
        vals.sort_by(|a, b| b.partial_cmp(a).unwrap());
        vals
    }

    #[test]
    fn eig_top_matches_jacobi_oracle() {
        for seed in 0..5 {
            let r = random_matrix(8, 8, 100 + seed);
            let m = &r + r.transpose();
            let expected = jacobi_eigenvalues(&m);
            let (vals, vecs) = sym_eig_top(&m, 8).unwrap();
            let norm = m.norm();
            for i in 0..8 {
                assert!((vals[i] - expected[i]).abs() < 1e-8, "{} vs {}", vals[i], expected[i]);
                let v = vecs.column(i);
                assert!((&m * v - v * vals[i]).norm() <= 1e-8 * norm);
            }
            assert!((vecs.tr_mul(&vecs) - DMatrix::identity(8, 8)).amax() < 1e-8);
        }
    }

    proptest! {
        #[test]
        fn self_gram_is_psd_and_symmetric(
            seed in 0u64..1000,
            n in 2usize..12,
            d in 1usize..6,
            which in 0usize..3,
        ) {
            let x = random_matrix(d, n, seed);
            let spec = match which {
                0 => KernelSpec::Linear,
                1 => KernelSpec::Rbf { gamma: 0.3 },
                _ => KernelSpec::Polynomial { degree: 2, coef: 1.0 },
            };
            let k = gram(&x, &x, &spec).unwrap().into_entries();
            prop_assert!(max_asymmetry(&k) <= 1e-12);
            let min_eig = SymmetricEigen::new(k.clone()).eigenvalues.min();
            prop_assert!(min_eig >= -1e-8 * k.amax().max(1.0));
        }

        #[test]
        fn gram_is_transpose_symmetric_in_arguments(seed in 0u64..1000, na in 1usize..6, nb in 1usize..6) {
            let xa = random_matrix(3, na, seed);
            let xb = random_matrix(3, nb, seed + 7);
            for spec in [KernelSpec::Linear, KernelSpec::Rbf { gamma: 1.3 }, KernelSpec::Polynomial { degree: 3, coef: 0.1 }] {
                let ab = gram(&xa, &xb, &spec).unwrap().into_entries();
                let ba = gram(&xb, &xa, &spec).unwrap().into_entries();
                prop_assert!((ab - ba.transpose()).amax() < 1e-12);
            }
        }
    }
}
