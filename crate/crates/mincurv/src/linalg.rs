//! Sparse linear algebra for the Newton systems: banded LU with partial
//! pivoting for 2-D grids (direct) and Jacobi-preconditioned BiCGStab on
//! CSR for 3-D grids (iterative).

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Compressed sparse row matrix.
#[derive(Debug, Clone)]
pub struct Csr {
    pub n: usize,
    pub row_ptr: Vec<usize>,
    pub cols: Vec<usize>,
    pub vals: Vec<f64>,
}

impl Csr {
    /// Build from per-row (col, val) lists.
    pub fn from_rows(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let n = rows.len();
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut vals = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                cols.push(c);
                vals.push(v);
            }
            row_ptr.push(cols.len());
        }
        Self {
            n,
            row_ptr,
            cols,
            vals,
        }
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        y.par_iter_mut().enumerate().for_each(|(i, yi)| {
            let mut acc = 0.0;
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.vals[idx] * x[self.cols[idx]];
            }
            *yi = acc;
        });
    }

    pub fn diagonal(&self) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for i in 0..self.n {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                if self.cols[idx] == i {
                    d[i] = self.vals[idx];
                }
            }
        }
        d
    }

    /// Lower/upper bandwidth.
    pub fn bandwidths(&self) -> (usize, usize) {
        let mut kl = 0usize;
        let mut ku = 0usize;
        for i in 0..self.n {
            for idx in self.row_ptr[i]..self.row_ptr[i + 1] {
                let j = self.cols[idx];
                if j < i {
                    kl = kl.max(i - j);
                } else {
                    ku = ku.max(j - i);
                }
            }
        }
        (kl, ku)
    }
}

/// Banded LU with partial pivoting (LAPACK gbtrf layout: kl extra
/// superdiagonals hold pivoting fill).
pub struct BandedLu {
    n: usize,
    kl: usize,
    ku: usize,
    /// band(d, j) at d in 0..(2kl+ku+1), row index i = j + d - kl - ku
    band: Vec<f64>,
    ld: usize,
    pivots: Vec<usize>,
}

impl BandedLu {
    fn idx(&self, i: usize, j: usize) -> usize {
        // valid for j.saturating_sub(ku+kl) <= i <= j + kl
        (i + self.kl + self.ku - j) + j * self.ld
    }

    /// Factor a CSR matrix known to be banded.
    pub fn factor(a: &Csr) -> Result<Self> {
        let (kl, ku_core) = a.bandwidths();
        let ku = ku_core + kl; // fill from pivoting
        let n = a.n;
        let ld = 2 * kl + ku_core + 1 + kl; // kl + ku + 1 rows with ku widened
        let mut lu = Self {
            n,
            kl,
            ku,
            band: vec![0.0; ld * n],
            ld,
            pivots: vec![0; n],
        };
        debug_assert_eq!(lu.ld, kl + ku + 1 + kl);
        for i in 0..n {
            for idx in a.row_ptr[i]..a.row_ptr[i + 1] {
                let j = a.cols[idx];
                let p = lu.idx(i, j);
                lu.band[p] = a.vals[idx];
            }
        }
        for j in 0..n {
            // pivot search in column j, rows j..=j+kl
            let imax = (j + kl).min(n - 1);
            let mut p = j;
            let mut best = lu.band[lu.idx(j, j)].abs();
            for i in j + 1..=imax {
                let v = lu.band[lu.idx(i, j)].abs();
                if v > best {
                    best = v;
                    p = i;
                }
            }
            if best == 0.0 || !best.is_finite() {
                return Err(Error::LinearSolve(format!(
                    "singular pivot at column {j}"
                )));
            }
            lu.pivots[j] = p;
            let jmax = (j + ku).min(n - 1);
            if p != j {
                for c in j..=jmax {
                    let a_idx = lu.idx(j, c);
                    let b_idx = lu.idx(p, c);
                    lu.band.swap(a_idx, b_idx);
                }
            }
            let piv = lu.band[lu.idx(j, j)];
            for i in j + 1..=imax {
                let li = lu.idx(i, j);
                let l = lu.band[li] / piv;
                lu.band[li] = l;
                if l != 0.0 {
                    for c in j + 1..=jmax {
                        let t = l * lu.band[lu.idx(j, c)];
                        let ci = lu.idx(i, c);
                        lu.band[ci] -= t;
                    }
                }
            }
        }
        Ok(lu)
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let n = self.n;
        let mut x = b.to_vec();
        // forward: apply pivots and L
        for j in 0..n {
            let p = self.pivots[j];
            if p != j {
                x.swap(p, j);
            }
            let imax = (j + self.kl).min(n - 1);
            let xj = x[j];
            if xj != 0.0 {
                for i in j + 1..=imax {
                    x[i] -= self.band[self.idx(i, j)] * xj;
                }
            }
        }
        // back substitution with U
        for j in (0..n).rev() {
            let jmax = (j + self.ku).min(n - 1);
            let mut acc = x[j];
            for c in j + 1..=jmax {
                acc -= self.band[self.idx(j, c)] * x[c];
            }
            x[j] = acc / self.band[self.idx(j, j)];
        }
        x
    }
}

/// Jacobi-preconditioned BiCGStab. Returns the solution and the iteration
/// count.
pub fn bicgstab(
    a: &Csr,
    b: &[f64],
    x0: &[f64],
    tol: f64,
    max_iter: usize,
) -> Result<(Vec<f64>, usize)> {
    let n = a.n;
    let mut inv_diag = a.diagonal();
    for d in inv_diag.iter_mut() {
        if d.abs() < 1e-300 {
            return Err(Error::LinearSolve("zero diagonal in BiCGStab".into()));
        }
        *d = 1.0 / *d;
    }
    let precond = |v: &[f64], out: &mut Vec<f64>| {
        out.clear();
        out.extend(v.iter().zip(&inv_diag).map(|(x, d)| x * d));
    };

    let mut x = x0.to_vec();
    let mut r = vec![0.0; n];
    a.matvec(&x, &mut r);
    for i in 0..n {
        r[i] = b[i] - r[i];
    }
    let bnorm = b.iter().fold(0.0_f64, |m, v| m.max(v.abs())).max(1e-300);
    let rnorm = |r: &[f64]| r.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if rnorm(&r) <= tol * bnorm {
        return Ok((x, 0));
    }
    let r_hat = r.clone();
    let mut rho = 1.0_f64;
    let mut alpha = 1.0_f64;
    let mut omega = 1.0_f64;
    let mut v = vec![0.0; n];
    let mut p = vec![0.0; n];
    let mut phat = Vec::with_capacity(n);
    let mut shat = Vec::with_capacity(n);
    let mut s = vec![0.0; n];
    let mut t = vec![0.0; n];

    for it in 1..=max_iter {
        let rho_new: f64 = r_hat.iter().zip(&r).map(|(a, b)| a * b).sum();
        if rho_new.abs() < 1e-300 {
            return Err(Error::LinearSolve("BiCGStab breakdown (rho)".into()));
        }
        let beta = (rho_new / rho) * (alpha / omega);
        rho = rho_new;
        for i in 0..n {
            p[i] = r[i] + beta * (p[i] - omega * v[i]);
        }
        precond(&p, &mut phat);
        a.matvec(&phat, &mut v);
        let denom: f64 = r_hat.iter().zip(&v).map(|(a, b)| a * b).sum();
        if denom.abs() < 1e-300 {
            return Err(Error::LinearSolve("BiCGStab breakdown (alpha)".into()));
        }
        alpha = rho / denom;
        for i in 0..n {
            s[i] = r[i] - alpha * v[i];
        }
        if rnorm(&s) <= tol * bnorm {
            for i in 0..n {
                x[i] += alpha * phat[i];
            }
            return Ok((x, it));
        }
        precond(&s, &mut shat);
        a.matvec(&shat, &mut t);
        let tt: f64 = t.iter().map(|v| v * v).sum();
        if tt < 1e-300 {
            return Err(Error::LinearSolve("BiCGStab breakdown (t)".into()));
        }
        omega = t.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / tt;
        for i in 0..n {
            x[i] += alpha * phat[i] + omega * shat[i];
            r[i] = s[i] - omega * t[i];
        }
        if rnorm(&r) <= tol * bnorm {
            return Ok((x, it));
        }
        if omega.abs() < 1e-300 {
            return Err(Error::LinearSolve("BiCGStab breakdown (omega)".into()));
        }
    }
    Err(Error::LinearSolve(format!(
        "BiCGStab did not converge in {max_iter} iterations"
    )))
}
