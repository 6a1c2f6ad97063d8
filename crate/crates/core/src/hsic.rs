//! Hilbert-Schmidt independence criterion.

use nalgebra::{DMatrix, DVector};

use crate::error::{check_dim, Error, Result};
use crate::kernel::{center_vector, gram, KernelSpec};

/// A dependence estimate and the number of samples behind it.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DependenceValue {
    pub value: f64,
    pub n: usize,
}

/// Empirical HSIC, `tr(K H L H) / (n - 1)²`, between two sample sets stored
/// column-wise (`d_x × n` and `d_y × n`).
pub fn hsic(
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    kx: &KernelSpec,
    ky: &KernelSpec,
) -> Result<DependenceValue> {
    let n = x.ncols();
    check_dim("hsic sample count", n, y.ncols())?;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("hsic needs n >= 2, got {n}")));
    }
    let k = gram(x, x, kx)?.into_entries();
    let l = gram(y, y, ky)?.into_entries();
    let value = hsic_from_grams(&k, &l)?;
    Ok(DependenceValue { value, n })
}

/// [`hsic`] from precomputed Gram matrices.
pub fn hsic_from_grams(k: &DMatrix<f64>, l: &DMatrix<f64>) -> Result<f64> {
    let n = k.nrows();
    check_dim("hsic gram shape", n, k.ncols())?;
    check_dim("hsic gram shape", n, l.nrows())?;
    check_dim("hsic gram shape", n, l.ncols())?;
    if n < 2 {
        return Err(Error::InvalidParameter(format!("hsic needs n >= 2, got {n}")));
    }
    // tr(KHLH) = <HKH, L>_F for symmetric L.
    let kc = double_center(k);
    let trace = kc.component_mul(l).sum();
    let denom = (n - 1) as f64;
    Ok(trace / (denom * denom))
}

/// `H K H` through row, column and grand means.
fn double_center(k: &DMatrix<f64>) -> DMatrix<f64> {
    let n = k.nrows();
    let row_means: Vec<f64> = (0..n).map(|i| k.row(i).mean()).collect();
    let col_means: Vec<f64> = (0..n).map(|j| k.column(j).mean()).collect();
    let grand = row_means.iter().sum::<f64>() / n as f64;
    DMatrix::from_fn(n, n, |i, j| k[(i, j)] - row_means[i] - col_means[j] + grand)
}

/// Dependence between the decision values `Kβ` and the domain information:
/// `βᵀ K H K_a H K β`, with no `1/(n-1)²` factor.
pub fn simplified_hsic(
    beta: &DVector<f64>,
    k: &DMatrix<f64>,
    k_a: &DMatrix<f64>,
) -> Result<DependenceValue> {
    let n = beta.len();
    check_dim("simplified hsic gram rows", n, k.nrows())?;
    check_dim("simplified hsic gram cols", n, k.ncols())?;
    check_dim("simplified hsic domain kernel rows", n, k_a.nrows())?;
    check_dim("simplified hsic domain kernel cols", n, k_a.ncols())?;
    let q = center_vector(&(k * beta));
    let value = q.dot(&(k_a * &q));
    Ok(DependenceValue { value, n })
}

/// Same quantity as [`simplified_hsic`] with the domain kernel given in its
/// factored form `K_a = AᵀA`; equals `|A H K β|²`.
pub fn simplified_hsic_factored(
    beta: &DVector<f64>,
    k: &DMatrix<f64>,
    a: &DMatrix<f64>,
) -> Result<DependenceValue> {
    let n = beta.len();
    check_dim("simplified hsic gram rows", n, k.nrows())?;
    check_dim("simplified hsic domain matrix cols", n, a.ncols())?;
    let q = center_vector(&(k * beta));
    Ok(DependenceValue {
        value: (a * q).norm_squared(),
        n,
    })
}
