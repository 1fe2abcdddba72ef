//! Elementary symmetric polynomials, restricted polynomials, the curvature
//! quotient `(sigma_n / sigma_{n-k})^{1/k}` and first derivatives on the
//! Garding cone, plus the spectral-function derivative in the ambient matrix
//! basis.
//!
//! All sigma evaluations go through one O(n^2) recurrence over the
//! coefficients of `prod_i (1 + lambda_i t)`, which is stable for the
//! moderate dimensions used here (n <= 8 in practice).

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Relative threshold below which sigma_{n-k} counts as a cone violation:
/// the quotient operator is undefined at the cone boundary.
pub const CONE_EPS: f64 = 1e-14;

/// Relative gap under which two eigenvalues are treated as repeated when
/// forming divided differences.
pub const EIGEN_GAP_EPS: f64 = 1e-9;

/// An eigenvalue vector (principal curvatures or curvature radii) together
/// with its ambient dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct SpectralPoint {
    lambda: DVector<f64>,
}

impl SpectralPoint {
    pub fn new(lambda: DVector<f64>) -> Result<Self> {
        if lambda.len() < 2 {
            return Err(Error::Argument(format!(
                "spectral point needs dimension >= 2, got {}",
                lambda.len()
            )));
        }
        if lambda.iter().any(|v| !v.is_finite()) {
            return Err(Error::Argument("non-finite eigenvalue entry".into()));
        }
        Ok(Self { lambda })
    }

    pub fn from_slice(lambda: &[f64]) -> Result<Self> {
        Self::new(DVector::from_column_slice(lambda))
    }

    pub fn dim(&self) -> usize {
        self.lambda.len()
    }

    pub fn values(&self) -> &DVector<f64> {
        &self.lambda
    }

    /// Entries sorted ascending (the reporting convention for spectra).
    pub fn sorted(&self) -> DVector<f64> {
        let mut v: Vec<f64> = self.lambda.iter().copied().collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        DVector::from_vec(v)
    }
}

/// Cone membership report for a spectral point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConeLabel {
    pub k: usize,
    pub inside: bool,
}

/// All elementary symmetric polynomials sigma_0..sigma_n of `lambda`,
/// by the product recurrence: after inserting lambda_i,
/// `e_j <- e_j + lambda_i e_{j-1}` (descending j).
pub fn sigma_all(lambda: &DVector<f64>) -> Vec<f64> {
    let n = lambda.len();
    let mut e = vec![0.0; n + 1];
    e[0] = 1.0;
    for (i, &li) in lambda.iter().enumerate() {
        for j in (1..=i + 1).rev() {
            e[j] += li * e[j - 1];
        }
    }
    e
}

/// The k-th elementary symmetric polynomial, sigma_0 := 1.
pub fn sigma(k: usize, p: &SpectralPoint) -> Result<f64> {
    let n = p.dim();
    if k > n {
        return Err(Error::Argument(format!("sigma_{k} undefined for n = {n}")));
    }
    Ok(sigma_all(p.values())[k])
}

/// sigma_l of lambda with the excluded entries set to zero.
///
/// Returns 0 when l exceeds the number of surviving entries.
pub fn sigma_restricted(l: usize, p: &SpectralPoint, excluded: &[usize]) -> Result<f64> {
    let n = p.dim();
    for (pos, &a) in excluded.iter().enumerate() {
        if a >= n {
            return Err(Error::Argument(format!("excluded index {a} out of range")));
        }
        if excluded[..pos].contains(&a) {
            return Err(Error::Argument(format!("excluded index {a} repeated")));
        }
    }
    if l > n - excluded.len() {
        return Ok(0.0);
    }
    let mut v = p.values().clone();
    for &a in excluded {
        v[a] = 0.0;
    }
    Ok(sigma_all(&v)[l])
}

/// Garding cone membership: inside iff sigma_m > 0 for all m = 1..k.
pub fn in_gamma_k(p: &SpectralPoint, k: usize) -> Result<ConeLabel> {
    let n = p.dim();
    if k < 1 || k > n {
        return Err(Error::Argument(format!("gamma_{k} undefined for n = {n}")));
    }
    let e = sigma_all(p.values());
    let inside = (1..=k).all(|m| e[m] > 0.0);
    Ok(ConeLabel { k, inside })
}

/// Gradient of sigma_k: component i is sigma_{k-1}(lambda | i).
pub fn sigma_gradient(k: usize, p: &SpectralPoint) -> Result<DVector<f64>> {
    let n = p.dim();
    if k < 1 || k > n {
        return Err(Error::Argument(format!(
            "sigma_{k} gradient undefined for n = {n}"
        )));
    }
    let mut g = DVector::zeros(n);
    for i in 0..n {
        g[i] = sigma_restricted(k - 1, p, &[i])?;
    }
    Ok(g)
}

fn check_quotient_cone(n: usize, k: usize, p: &SpectralPoint) -> Result<(f64, f64)> {
    if p.dim() != n {
        return Err(Error::Argument(format!(
            "dimension mismatch: point has n = {}, operator has n = {n}",
            p.dim()
        )));
    }
    if k < 1 || k > n {
        return Err(Error::Argument(format!("quotient needs 1 <= k <= n, got k = {k}")));
    }
    let e = sigma_all(p.values());
    let scale = 1.0 + p.values().amax().powi((n - k) as i32);
    if e[n - k] <= CONE_EPS * scale {
        return Err(Error::ConeViolation(format!(
            "sigma_{}(lambda) = {:.3e} <= 0",
            n - k,
            e[n - k]
        )));
    }
    Ok((e[n], e[n - k]))
}

/// The curvature quotient `F = (sigma_n / sigma_{n-k})^{1/k}`.
pub fn quotient_value(n: usize, k: usize, p: &SpectralPoint) -> Result<f64> {
    let (top, bottom) = check_quotient_cone(n, k, p)?;
    let ratio = top / bottom;
    if ratio < 0.0 {
        return Err(Error::ConeViolation(format!(
            "sigma_n / sigma_{} = {ratio:.3e} < 0",
            n - k
        )));
    }
    Ok(ratio.powf(1.0 / k as f64))
}

/// Gradient of the curvature quotient from the closed identity
/// `k F^{k-1} F^{ii} = sigma_{n-1}(lambda|i) sigma_{n-k}(lambda|i) / sigma_{n-k}^2`.
pub fn quotient_gradient(n: usize, k: usize, p: &SpectralPoint) -> Result<DVector<f64>> {
    let (_, bottom) = check_quotient_cone(n, k, p)?;
    let f = quotient_value(n, k, p)?;
    if f <= 0.0 {
        return Err(Error::ConeViolation(
            "quotient vanishes; gradient undefined".into(),
        ));
    }
    let denom = k as f64 * f.powi(k as i32 - 1) * bottom * bottom;
    let mut g = DVector::zeros(n);
    for i in 0..n {
        let s_top = sigma_restricted(n - 1, p, &[i])?;
        let s_bot = sigma_restricted(n - k, p, &[i])?;
        g[i] = s_top * s_bot / denom;
    }
    Ok(g)
}

/// Selector for the spectral functions the solvers differentiate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SymmetricFn {
    /// sigma_k(lambda)
    SigmaK { k: usize },
    /// sigma_k(lambda)^{1/k}
    SigmaKRoot { k: usize },
    /// (sigma_n / sigma_{n-k})^{1/k}
    Quotient { k: usize },
}

impl SymmetricFn {
    pub fn value(&self, p: &SpectralPoint) -> Result<f64> {
        let n = p.dim();
        match *self {
            SymmetricFn::SigmaK { k } => sigma(k, p),
            SymmetricFn::SigmaKRoot { k } => {
                let s = sigma(k, p)?;
                if s <= 0.0 {
                    return Err(Error::ConeViolation(format!(
                        "sigma_{k} = {s:.3e} <= 0, root undefined"
                    )));
                }
                Ok(s.powf(1.0 / k as f64))
            }
            SymmetricFn::Quotient { k } => quotient_value(n, k, p),
        }
    }

    /// Eigenvalue gradient of the selected function.
    pub fn eigen_gradient(&self, p: &SpectralPoint) -> Result<DVector<f64>> {
        let n = p.dim();
        match *self {
            SymmetricFn::SigmaK { k } => sigma_gradient(k, p),
            SymmetricFn::SigmaKRoot { k } => {
                let s = sigma(k, p)?;
                if s <= 0.0 {
                    return Err(Error::ConeViolation(format!(
                        "sigma_{k} = {s:.3e} <= 0, root undefined"
                    )));
                }
                let kf = k as f64;
                let scale = s.powf(1.0 / kf - 1.0) / kf;
                Ok(sigma_gradient(k, p)? * scale)
            }
            SymmetricFn::Quotient { k } => quotient_gradient(n, k, p),
        }
    }
}

/// Eigendecomposition of a symmetric matrix with eigenvalues sorted
/// ascending and the eigenvector columns permuted to match.
pub fn sym_eigen(a: &DMatrix<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let n = a.nrows();
    let se = a
        .clone()
        .try_symmetric_eigen(1e-13, 200)
        .ok_or_else(|| Error::Numerical("symmetric eigensolve failed".into()))?;
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&i, &j| se.eigenvalues[i].partial_cmp(&se.eigenvalues[j]).unwrap());
    let mut vals = DVector::zeros(n);
    let mut vecs = DMatrix::zeros(n, n);
    for (c, &i) in order.iter().enumerate() {
        vals[c] = se.eigenvalues[i];
        vecs.set_column(c, &se.eigenvectors.column(i));
    }
    Ok((vals, vecs))
}

/// Derivative `F^{ij} = dF/da_{ij}` of a spectral function in the ambient
/// basis: eigendecompose, apply the eigenvalue gradient on the diagonal,
/// rotate back.
pub fn matrix_derivative(f: SymmetricFn, a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if a.nrows() != a.ncols() {
        return Err(Error::Argument("matrix_derivative needs a square matrix".into()));
    }
    let (vals, q) = sym_eigen(a)?;
    let p = SpectralPoint::new(vals)?;
    let g = f.eigen_gradient(&p)?;
    let mut d = DMatrix::zeros(a.nrows(), a.ncols());
    for i in 0..a.nrows() {
        d[(i, i)] = g[i];
    }
    Ok(&q * d * q.transpose())
}

/// Divided differences `(f_p - f_q) / (lambda_p - lambda_q)` of the
/// eigenvalue gradient, as needed by second-derivative assembly. When
/// `|lambda_p - lambda_q|` is below the repeated-eigenvalue gap the analytic
/// limit is substituted: the symmetrized derivative of the gradient
/// component, evaluated by a centered difference along the degenerate pair.
pub fn gradient_divided_differences(
    f: SymmetricFn,
    p: &SpectralPoint,
) -> Result<DMatrix<f64>> {
    let n = p.dim();
    let g = f.eigen_gradient(p)?;
    let lam = p.values();
    let mut dd = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let gap = (lam[i] - lam[j]).abs();
            let scale = 1.0_f64.max(lam[i].abs()).max(lam[j].abs());
            if gap >= EIGEN_GAP_EPS * scale {
                dd[(i, j)] = (g[i] - g[j]) / (lam[i] - lam[j]);
            } else {
                // Guarded limit: d g_i / d lambda_i - d g_i / d lambda_j at
                // the symmetrized point, via a small centered step.
                let h = 1e-6 * scale;
                let mut up = lam.clone();
                let mut dn = lam.clone();
                let mid = 0.5 * (lam[i] + lam[j]);
                up[i] = mid + 0.5 * h;
                up[j] = mid - 0.5 * h;
                dn[i] = mid - 0.5 * h;
                dn[j] = mid + 0.5 * h;
                let gi_up = f.eigen_gradient(&SpectralPoint::new(up)?)?[i];
                let gi_dn = f.eigen_gradient(&SpectralPoint::new(dn)?)?[i];
                dd[(i, j)] = (gi_up - gi_dn) / h;
            }
        }
    }
    Ok(dd)
}

/// Binomial coefficient as f64 (sigma_k of the unit vector).
pub fn binomial(n: usize, k: usize) -> f64 {
    if k > n {
        return 0.0;
    }
    let k = k.min(n - k);
    let mut acc = 1.0_f64;
    for i in 0..k {
        acc = acc * (n - i) as f64 / (i + 1) as f64;
    }
    acc.round()
}
