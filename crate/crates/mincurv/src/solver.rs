//! Damped-Newton solution of the curvature Dirichlet problems on masked
//! grids.
//!
//! Primal form: sigma_k(kappa[M_u]) = psi(x, u) (or the soliton root form
//! (sigma_k/binom)^{1/k} = C - 1/w) for a spacelike height field. Dual form:
//! (sigma_n/sigma_{n-k})^{1/k}(kappa*[w* gamma* D^2u* gamma*]) = psi_hat on
//! a ball in the Gauss-map image, for a convex potential.
//!
//! Unknowns are the interior nodes; boundary nodes carry fixed data. Every
//! accepted Newton iterate must stay admissible (spacelike + Garding cone on
//! the primal side, positive curvature radii on the dual side); the line
//! search halves the step until both admissibility and residual decrease
//! hold.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::field::{DualField, GraphField, Grid, ScalarField};
use crate::geometry::gamma_upper;
use crate::linalg::{bicgstab, BandedLu, Csr};
use crate::symfun::{
    binomial, in_gamma_k, matrix_derivative, sigma_all, sym_eigen, SpectralPoint, SymmetricFn,
};

/// Whitelisted right-hand sides psi(x, u) with psi_u >= 0, so the equation
/// keeps the maximum principle machine-checkable.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimalRhs {
    Constant { value: f64 },
    /// psi(x) = sum_j coeffs[j] |x|^{2j}, all coefficients >= 0, coeffs[0] > 0.
    RadialPoly { coeffs: Vec<f64> },
    /// psi(x, u) = radial poly * exp(beta u), beta >= 0.
    Separable { coeffs: Vec<f64>, beta: f64 },
}

impl PrimalRhs {
    pub fn validate(&self) -> Result<()> {
        let check_poly = |coeffs: &[f64]| -> Result<()> {
            if coeffs.is_empty() || coeffs[0] <= 0.0 {
                return Err(Error::Schema(
                    "radial polynomial needs a positive constant term".into(),
                ));
            }
            if coeffs.iter().any(|&c| c < 0.0) {
                return Err(Error::Schema(
                    "radial polynomial coefficients must be nonnegative".into(),
                ));
            }
            Ok(())
        };
        match self {
            PrimalRhs::Constant { value } => {
                if *value <= 0.0 {
                    return Err(Error::Schema("psi must be positive".into()));
                }
            }
            PrimalRhs::RadialPoly { coeffs } => check_poly(coeffs)?,
            PrimalRhs::Separable { coeffs, beta } => {
                check_poly(coeffs)?;
                if *beta < 0.0 {
                    return Err(Error::Schema(
                        "separable height factor needs beta >= 0 (psi_u >= 0)".into(),
                    ));
                }
            }
        }
        Ok(())
    }

    fn poly(coeffs: &[f64], s: f64) -> (f64, f64) {
        // value and derivative with respect to s = |x|^2
        let mut v = 0.0;
        let mut dv = 0.0;
        for (j, &c) in coeffs.iter().enumerate() {
            v += c * s.powi(j as i32);
            if j > 0 {
                dv += c * j as f64 * s.powi(j as i32 - 1);
            }
        }
        (v, dv)
    }

    pub fn value(&self, x: &DVector<f64>, u: f64) -> f64 {
        match self {
            PrimalRhs::Constant { value } => *value,
            PrimalRhs::RadialPoly { coeffs } => Self::poly(coeffs, x.norm_squared()).0,
            PrimalRhs::Separable { coeffs, beta } => {
                Self::poly(coeffs, x.norm_squared()).0 * (beta * u).exp()
            }
        }
    }

    /// psi_u (nonnegative by construction).
    pub fn d_du(&self, x: &DVector<f64>, u: f64) -> f64 {
        match self {
            PrimalRhs::Constant { .. } | PrimalRhs::RadialPoly { .. } => 0.0,
            PrimalRhs::Separable { coeffs, beta } => {
                Self::poly(coeffs, x.norm_squared()).0 * beta * (beta * u).exp()
            }
        }
    }

    /// Ambient gradient psi_x.
    pub fn d_dx(&self, x: &DVector<f64>, u: f64) -> DVector<f64> {
        match self {
            PrimalRhs::Constant { .. } => DVector::zeros(x.len()),
            PrimalRhs::RadialPoly { coeffs } => {
                let (_, dv) = Self::poly(coeffs, x.norm_squared());
                x * (2.0 * dv)
            }
            PrimalRhs::Separable { coeffs, beta } => {
                let (_, dv) = Self::poly(coeffs, x.norm_squared());
                x * (2.0 * dv * (beta * u).exp())
            }
        }
    }
}

/// Primal equation family.
#[derive(Debug, Clone, PartialEq)]
pub enum PrimalEq {
    /// sigma_k(kappa) = psi(x, u)
    Sigma { rhs: PrimalRhs },
    /// (sigma_k/binom(n,k))^{1/k}(kappa) = C - 1/sqrt(1 - |Du|^2)
    SolitonRoot { c_speed: f64 },
}

/// Dual right-hand side psi_hat for the quotient-root equation.
#[derive(Debug, Clone, PartialEq)]
pub enum DualRhs {
    Constant { value: f64 },
    /// binom(n,k)^{-1/k} / (C - 1/sqrt(1 - |xi|^2))
    SolitonDual { c_speed: f64 },
    /// psi(x, u)^{-1/k} with x = Du*, u = xi . Du* - u*.
    Prescribed { rhs: PrimalRhs },
}

/// Convergence and diagnostics of one Newton run.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SolveReport {
    pub residual_history: Vec<f64>,
    pub newton_iterations: usize,
    pub damping_events: usize,
    pub min_kappa: f64,
    pub max_kappa: f64,
    /// min over interior nodes of min_{m<=k} sigma_m(kappa).
    pub cone_margin: f64,
    pub unknowns: usize,
    pub grid_m: usize,
    pub h: f64,
    #[serde(skip)]
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    pub tol: f64,
    pub max_iter: usize,
    /// Relative tolerance handed to the iterative linear solver (3-D).
    pub linear_tol: f64,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-10,
            max_iter: 50,
            linear_tol: 1e-12,
        }
    }
}

fn offsets_and_stencils(n: usize, h: f64) -> Vec<(Vec<i64>, StencilWeights)> {
    let offsets = crate::field::moore_offsets(n);
    offsets
        .into_iter()
        .map(|d| {
            let w = StencilWeights::at(&d, n, h);
            (d, w)
        })
        .collect()
}

/// Contribution of the node at a given offset to the centered gradient and
/// Hessian of the center node.
struct StencilWeights {
    /// dg_p/du_offset
    grad: Vec<f64>,
    /// dH_{aa}/du_offset
    diag: Vec<f64>,
    /// dH_{ab}/du_offset for a < b (packed)
    mixed: Vec<f64>,
}

impl StencilWeights {
    fn at(delta: &[i64], n: usize, h: f64) -> Self {
        let nz = delta.iter().filter(|&&d| d != 0).count();
        let mut grad = vec![0.0; n];
        let mut diag = vec![0.0; n];
        let mut mixed = vec![0.0; n * (n - 1) / 2];
        match nz {
            0 => {
                for a in 0..n {
                    diag[a] = -2.0 / (h * h);
                }
            }
            1 => {
                let a = delta.iter().position(|&d| d != 0).unwrap();
                grad[a] = delta[a] as f64 / (2.0 * h);
                diag[a] = 1.0 / (h * h);
            }
            2 => {
                let mut axes = delta
                    .iter()
                    .enumerate()
                    .filter(|(_, &d)| d != 0)
                    .map(|(i, &d)| (i, d));
                let (a, da) = axes.next().unwrap();
                let (b, db) = axes.next().unwrap();
                let idx = pack_index(a, b, n);
                mixed[idx] = (da * db) as f64 / (4.0 * h * h);
            }
            _ => {}
        }
        Self { grad, diag, mixed }
    }
}

fn pack_index(a: usize, b: usize, n: usize) -> usize {
    // index of (a, b), a < b, in row-major packed upper triangle
    debug_assert!(a < b);
    a * n - a * (a + 1) / 2 + (b - a - 1)
}

/// Per-node geometry the residual and Jacobian share.
struct PrimalNode {
    residual: f64,
    /// W_ab = (gamma F gamma / w)_ab, the Hessian-entry sensitivities.
    w_mat: DMatrix<f64>,
    /// q_p = dR/d(Du_p) at fixed Hessian.
    grad_sens: DVector<f64>,
    /// dR/du at the center (rhs height dependence).
    center_sens: f64,
    kappa: SpectralPoint,
}

fn primal_node(
    k: usize,
    eq: &PrimalEq,
    x: &DVector<f64>,
    u: f64,
    du: &DVector<f64>,
    hess: &DMatrix<f64>,
    slope_bound: f64,
    need_jacobian: bool,
) -> Result<PrimalNode> {
    let n = x.len();
    let margin = if slope_bound < 1.0 { 1e-10 } else { 1e-12 };
    let g2 = du.norm_squared();
    if g2.sqrt() > slope_bound * (1.0 - margin) {
        return Err(Error::Spacelike(format!(
            "|Du| = {:.12} >= bound {slope_bound}",
            g2.sqrt()
        )));
    }
    let w = (1.0 - g2).sqrt();
    let gamma = gamma_upper(du, w);
    let a = {
        let m = (&gamma * hess * &gamma) / w;
        (&m + m.transpose()) * 0.5
    };
    let (vals, _) = sym_eigen(&a)?;
    let kappa = SpectralPoint::new(vals)?;
    let e = sigma_all(kappa.values());
    let (value, selector, scale) = match eq {
        PrimalEq::Sigma { rhs } => (e[k] - rhs.value(x, u), SymmetricFn::SigmaK { k }, 1.0),
        PrimalEq::SolitonRoot { c_speed } => {
            if e[k] <= 0.0 {
                return Err(Error::ConeViolation(format!(
                    "sigma_{k} = {:.3e} <= 0 in the root form at x = {:?}",
                    e[k],
                    x.as_slice()
                )));
            }
            let b = binomial(n, k);
            let lhs = (e[k] / b).powf(1.0 / k as f64);
            (
                lhs - (c_speed - 1.0 / w),
                SymmetricFn::SigmaKRoot { k },
                b.powf(-1.0 / k as f64),
            )
        }
    };
    if !need_jacobian {
        return Ok(PrimalNode {
            residual: value,
            w_mat: DMatrix::zeros(0, 0),
            grad_sens: DVector::zeros(0),
            center_sens: 0.0,
            kappa,
        });
    }
    let f_mat = matrix_derivative(selector, &a)? * scale;
    let w_mat = (&gamma * &f_mat * &gamma) / w;

    // dA/d(Du_p) at fixed Hessian
    let c = 1.0 / (w * (1.0 + w));
    let dc_dw = -(1.0 + 2.0 * w) * c * c;
    let mut grad_sens = DVector::zeros(n);
    let gh = &gamma * hess;
    let hg = hess * &gamma;
    for p in 0..n {
        let dw = -du[p] / w;
        // dGamma_p
        let mut dg = DMatrix::zeros(n, n);
        for i in 0..n {
            for kk in 0..n {
                let mut v = du[i] * du[kk] * dc_dw * dw;
                if i == p {
                    v += du[kk] * c;
                }
                if kk == p {
                    v += du[i] * c;
                }
                dg[(i, kk)] = v;
            }
        }
        let da = (&a * (du[p] / (w * w))) + (&dg * &hg + &gh * &dg) / w;
        let mut acc = 0.0;
        for i in 0..n {
            for j in 0..n {
                acc += f_mat[(i, j)] * da[(i, j)];
            }
        }
        grad_sens[p] = acc;
        if let PrimalEq::SolitonRoot { .. } = eq {
            // -(C - 1/w) contributes +du_p / w^3
            grad_sens[p] += du[p] / (w * w * w);
        }
    }
    let center_sens = match eq {
        PrimalEq::Sigma { rhs } => -rhs.d_du(x, u),
        PrimalEq::SolitonRoot { .. } => 0.0,
    };
    Ok(PrimalNode {
        residual: value,
        w_mat,
        grad_sens,
        center_sens,
        kappa,
    })
}

struct DualNode {
    residual: f64,
    w_mat: DMatrix<f64>,
    grad_sens: DVector<f64>,
    center_sens: f64,
    kappa_star: SpectralPoint,
}

fn dual_rhs_value(rhs: &DualRhs, k: usize, xi: &DVector<f64>, u: f64, du: &DVector<f64>) -> Result<f64> {
    let n = xi.len();
    match rhs {
        DualRhs::Constant { value } => Ok(*value),
        DualRhs::SolitonDual { c_speed } => {
            let wst = (1.0 - xi.norm_squared()).sqrt();
            let denom = c_speed - 1.0 / wst;
            if denom <= 0.0 {
                return Err(Error::Domain(format!(
                    "|xi| = {:.6} at or beyond the soliton Gauss ball",
                    xi.norm()
                )));
            }
            Ok(binomial(n, k).powf(-1.0 / k as f64) / denom)
        }
        DualRhs::Prescribed { rhs } => {
            let x = du.clone();
            let height = xi.dot(du) - u;
            let psi = rhs.value(&x, height);
            if psi <= 0.0 {
                return Err(Error::Domain("psi must stay positive".into()));
            }
            Ok(psi.powf(-1.0 / k as f64))
        }
    }
}

fn dual_node(
    k: usize,
    rhs: &DualRhs,
    xi: &DVector<f64>,
    u: f64,
    du: &DVector<f64>,
    hess: &DMatrix<f64>,
    ball_radius: f64,
    need_jacobian: bool,
) -> Result<DualNode> {
    let n = xi.len();
    let r2 = xi.norm_squared();
    if r2 >= ball_radius * ball_radius {
        return Err(Error::Domain(format!(
            "node |xi| = {:.6} outside the Gauss ball {ball_radius}",
            r2.sqrt()
        )));
    }
    let wst = (1.0 - r2).sqrt();
    let gs = crate::geometry::gamma_star(xi, wst);
    let m = {
        let mm = (&gs * hess * &gs) * wst;
        (&mm + mm.transpose()) * 0.5
    };
    let (vals, _) = sym_eigen(&m)?;
    if vals[0] <= 0.0 {
        return Err(Error::Convexity {
            count: 1,
            first: vec![],
        });
    }
    let kappa_star = SpectralPoint::new(vals)?;
    let e = sigma_all(kappa_star.values());
    let bottom = e[n - k];
    if bottom <= 0.0 {
        return Err(Error::ConeViolation(format!(
            "sigma_{} of the curvature radii is {bottom:.3e}",
            n - k
        )));
    }
    let fhat = (e[n] / bottom).powf(1.0 / k as f64);
    let psi_hat = dual_rhs_value(rhs, k, xi, u, du)?;
    let residual = fhat - psi_hat;
    if !need_jacobian {
        return Ok(DualNode {
            residual,
            w_mat: DMatrix::zeros(0, 0),
            grad_sens: DVector::zeros(0),
            center_sens: 0.0,
            kappa_star,
        });
    }
    let f_mat = matrix_derivative(SymmetricFn::Quotient { k }, &m)?;
    let w_mat = (&gs * &f_mat * &gs) * wst;

    let mut grad_sens = DVector::zeros(n);
    let mut center_sens = 0.0;
    if let DualRhs::Prescribed { rhs } = rhs {
        // residual includes -psi(Du*, xi . Du* - u*)^{-1/k}
        let x = du.clone();
        let height = xi.dot(du) - u;
        let psi = rhs.value(&x, height);
        let coef = psi.powf(-1.0 / k as f64 - 1.0) / k as f64;
        let psi_x = rhs.d_dx(&x, height);
        let psi_u = rhs.d_du(&x, height);
        for p in 0..n {
            grad_sens[p] = coef * (psi_x[p] + psi_u * xi[p]);
        }
        center_sens = -coef * psi_u;
    }
    Ok(DualNode {
        residual,
        w_mat,
        grad_sens,
        center_sens,
        kappa_star,
    })
}

/// Residual over interior nodes (in mask order) of the primal equation.
pub fn residual_primal(f: &GraphField, k: usize, eq: &PrimalEq) -> Result<Vec<f64>> {
    let nodes: Result<Vec<f64>> = f
        .field
        .mask
        .interior
        .par_iter()
        .map(|&i| {
            let x = f.field.grid.position(i);
            let node = primal_node(
                k,
                eq,
                &x,
                f.field.values[i],
                &f.field.gradient_at(i),
                &f.field.hessian_at(i),
                f.slope_bound,
                false,
            )?;
            Ok(node.residual)
        })
        .collect();
    nodes
}

/// Residual over interior nodes of the dual quotient-root equation.
pub fn residual_dual(g: &DualField, k: usize, rhs: &DualRhs) -> Result<Vec<f64>> {
    g.field
        .mask
        .interior
        .par_iter()
        .map(|&i| {
            let xi = g.field.grid.position(i);
            let (v, dv, hess) = g.total_jet_at(i)?;
            let node = dual_node(k, rhs, &xi, v, &dv, &hess, g.ball_radius, false)?;
            Ok(node.residual)
        })
        .collect()
}

fn unknown_index(mask: &crate::field::DomainMask, len: usize) -> Vec<usize> {
    let mut idx = vec![usize::MAX; len];
    for (u, &i) in mask.interior.iter().enumerate() {
        idx[i] = u;
    }
    idx
}

enum NodeData {
    Primal(PrimalNode),
    Dual(DualNode),
}

impl NodeData {
    fn parts(&self) -> (&DMatrix<f64>, &DVector<f64>, f64) {
        match self {
            NodeData::Primal(p) => (&p.w_mat, &p.grad_sens, p.center_sens),
            NodeData::Dual(d) => (&d.w_mat, &d.grad_sens, d.center_sens),
        }
    }
}

fn assemble_jacobian(
    grid: &Grid,
    mask: &crate::field::DomainMask,
    nodes: &[NodeData],
) -> Csr {
    let n = grid.n;
    let h = grid.h;
    let stencils = offsets_and_stencils(n, h);
    let uidx = unknown_index(mask, grid.len());
    let rows: Vec<Vec<(usize, f64)>> = mask
        .interior
        .par_iter()
        .enumerate()
        .map(|(row, &i)| {
            let (w_mat, grad_sens, center_sens) = nodes[row].parts();
            let mut entries = Vec::with_capacity(stencils.len());
            for (delta, st) in &stencils {
                let Some(j) = grid.offset(i, delta) else {
                    continue;
                };
                let col = uidx[j];
                if col == usize::MAX {
                    continue; // boundary node: value pinned
                }
                let mut coef = 0.0;
                for a in 0..n {
                    if st.diag[a] != 0.0 {
                        coef += w_mat[(a, a)] * st.diag[a];
                    }
                    if st.grad[a] != 0.0 {
                        coef += grad_sens[a] * st.grad[a];
                    }
                }
                for a in 0..n {
                    for b in a + 1..n {
                        let sm = st.mixed[pack_index(a, b, n)];
                        if sm != 0.0 {
                            coef += 2.0 * w_mat[(a, b)] * sm;
                        }
                    }
                }
                if j == i {
                    coef += center_sens;
                }
                if coef != 0.0 {
                    entries.push((col, coef));
                }
            }
            entries
        })
        .collect();
    Csr::from_rows(rows)
}

/// Jacobian of the primal residual with respect to interior nodal values.
pub fn jacobian_primal(f: &GraphField, k: usize, eq: &PrimalEq) -> Result<Csr> {
    let nodes: Result<Vec<NodeData>> = f
        .field
        .mask
        .interior
        .par_iter()
        .map(|&i| {
            let x = f.field.grid.position(i);
            Ok(NodeData::Primal(primal_node(
                k,
                eq,
                &x,
                f.field.values[i],
                &f.field.gradient_at(i),
                &f.field.hessian_at(i),
                f.slope_bound,
                true,
            )?))
        })
        .collect();
    Ok(assemble_jacobian(&f.field.grid, &f.field.mask, &nodes?))
}

/// Jacobian of the dual residual with respect to interior correction values.
pub fn jacobian_dual(g: &DualField, k: usize, rhs: &DualRhs) -> Result<Csr> {
    let nodes: Result<Vec<NodeData>> = g
        .field
        .mask
        .interior
        .par_iter()
        .map(|&i| {
            let xi = g.field.grid.position(i);
            let (v, dv, hess) = g.total_jet_at(i)?;
            Ok(NodeData::Dual(dual_node(
                k,
                rhs,
                &xi,
                v,
                &dv,
                &hess,
                g.ball_radius,
                true,
            )?))
        })
        .collect();
    Ok(assemble_jacobian(&g.field.grid, &g.field.mask, &nodes?))
}

/// Interior nodes violating the Garding-cone requirement (primal) or
/// positive curvature radii (dual). The Newton loop insists this is empty
/// for every accepted iterate.
pub fn admissibility_violations(field: &FieldRef, k: usize) -> Result<Vec<usize>> {
    match field {
        FieldRef::Primal(f) => {
            let res: Result<Vec<Option<usize>>> = f
                .field
                .mask
                .interior
                .par_iter()
                .map(|&i| {
                    let du = f.field.gradient_at(i);
                    let margin = if f.slope_bound < 1.0 { 1e-10 } else { 1e-12 };
                    if du.norm() > f.slope_bound * (1.0 - margin) {
                        return Ok(Some(i));
                    }
                    let w = (1.0 - du.norm_squared()).sqrt();
                    let gamma = gamma_upper(&du, w);
                    let hess = f.field.hessian_at(i);
                    let a = {
                        let m = (&gamma * &hess * &gamma) / w;
                        (&m + m.transpose()) * 0.5
                    };
                    let (vals, _) = sym_eigen(&a)?;
                    let kp = SpectralPoint::new(vals)?;
                    Ok(if in_gamma_k(&kp, k)?.inside {
                        None
                    } else {
                        Some(i)
                    })
                })
                .collect();
            Ok(res?.into_iter().flatten().collect())
        }
        FieldRef::Dual(g) => Ok(g.nonconvex_nodes()),
    }
}

/// Read-only view over either field kind.
pub enum FieldRef<'a> {
    Primal(&'a GraphField),
    Dual(&'a DualField),
}

fn max_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0_f64, |m, x| m.max(x.abs()))
}

fn solve_linear(grid: &Grid, jac: &Csr, rhs: &[f64], linear_tol: f64) -> Result<Vec<f64>> {
    if grid.n == 2 {
        let lu = BandedLu::factor(jac)?;
        Ok(lu.solve(rhs))
    } else {
        let x0 = vec![0.0; rhs.len()];
        let (x, _) = bicgstab(jac, rhs, &x0, linear_tol, 20 * rhs.len().max(200))?;
        Ok(x)
    }
}

/// Kappa statistics over interior nodes for the report.
fn spectrum_stats<'a, I: Iterator<Item = &'a SpectralPoint>>(k: usize, it: I) -> (f64, f64, f64) {
    let mut min_k = f64::INFINITY;
    let mut max_k = f64::NEG_INFINITY;
    let mut margin = f64::INFINITY;
    for sp in it {
        let v = sp.values();
        min_k = min_k.min(v[0]);
        max_k = max_k.max(v[v.len() - 1]);
        let e = sigma_all(v);
        for m in 1..=k {
            margin = margin.min(e[m]);
        }
    }
    (min_k, max_k, margin)
}

enum Problem<'a> {
    Primal {
        k: usize,
        eq: &'a PrimalEq,
    },
    Dual {
        k: usize,
        rhs: &'a DualRhs,
    },
}

enum FieldMut<'a> {
    Primal(&'a mut GraphField),
    Dual(&'a mut DualField),
}

impl FieldMut<'_> {
    fn scalar(&self) -> &ScalarField {
        match self {
            FieldMut::Primal(f) => &f.field,
            FieldMut::Dual(g) => &g.field,
        }
    }

    fn scalar_mut(&mut self) -> &mut ScalarField {
        match self {
            FieldMut::Primal(f) => &mut f.field,
            FieldMut::Dual(g) => &mut g.field,
        }
    }

    fn residual(&self, prob: &Problem) -> Result<Vec<f64>> {
        match (self, prob) {
            (FieldMut::Primal(f), Problem::Primal { k, eq }) => residual_primal(f, *k, eq),
            (FieldMut::Dual(g), Problem::Dual { k, rhs }) => residual_dual(g, *k, rhs),
            _ => Err(Error::Argument("field/problem mismatch".into())),
        }
    }

    fn jacobian(&self, prob: &Problem) -> Result<Csr> {
        match (self, prob) {
            (FieldMut::Primal(f), Problem::Primal { k, eq }) => jacobian_primal(f, *k, eq),
            (FieldMut::Dual(g), Problem::Dual { k, rhs }) => jacobian_dual(g, *k, rhs),
            _ => Err(Error::Argument("field/problem mismatch".into())),
        }
    }

    fn spectra(&self, prob: &Problem) -> Result<Vec<SpectralPoint>> {
        match (self, prob) {
            (FieldMut::Primal(f), Problem::Primal { k, eq }) => f
                .field
                .mask
                .interior
                .par_iter()
                .map(|&i| {
                    let x = f.field.grid.position(i);
                    Ok(primal_node(
                        *k,
                        eq,
                        &x,
                        f.field.values[i],
                        &f.field.gradient_at(i),
                        &f.field.hessian_at(i),
                        f.slope_bound,
                        false,
                    )?
                    .kappa)
                })
                .collect(),
            (FieldMut::Dual(g), Problem::Dual { k, rhs }) => g
                .field
                .mask
                .interior
                .par_iter()
                .map(|&i| {
                    let xi = g.field.grid.position(i);
                    let (v, dv, hess) = g.total_jet_at(i)?;
                    Ok(dual_node(*k, rhs, &xi, v, &dv, &hess, g.ball_radius, false)?.kappa_star)
                })
                .collect(),
            _ => Err(Error::Argument("field/problem mismatch".into())),
        }
    }
}

fn newton_loop(mut field: FieldMut, prob: Problem, opts: &SolveOptions) -> Result<SolveReport> {
    let start = Instant::now();
    let kk = match prob {
        Problem::Primal { k, .. } => k,
        Problem::Dual { k, .. } => k,
    };
    let admissible = |f: &FieldMut| -> Result<bool> {
        let view = match f {
            FieldMut::Primal(p) => FieldRef::Primal(p),
            FieldMut::Dual(d) => FieldRef::Dual(d),
        };
        Ok(admissibility_violations(&view, kk)?.is_empty())
    };
    if !admissible(&field).unwrap_or(false) {
        return Err(Error::Domain(
            "initial iterate inadmissible (spacelike/cone screen failed)".into(),
        ));
    }
    let mut residual = field.residual(&prob).map_err(|e| {
        Error::Domain(format!("initial iterate inadmissible: {e}"))
    })?;
    let mut rnorm = max_norm(&residual);
    let mut history = vec![rnorm];
    let mut damping_events = 0usize;
    let mut iterations = 0usize;

    while rnorm > opts.tol {
        if iterations >= opts.max_iter {
            return Err(Error::MaxIterations(opts.max_iter));
        }
        let jac = field.jacobian(&prob)?;
        let neg_r: Vec<f64> = residual.iter().map(|v| -v).collect();
        let delta = solve_linear(&field.scalar().grid, &jac, &neg_r, opts.linear_tol)?;

        let interior = field.scalar().mask.interior.clone();
        let saved: Vec<f64> = interior.iter().map(|&i| field.scalar().values[i]).collect();
        let mut alpha = 1.0_f64;
        loop {
            {
                let sf = field.scalar_mut();
                for (u, &i) in interior.iter().enumerate() {
                    sf.values[i] = saved[u] + alpha * delta[u];
                }
            }
            let trial_ok = admissible(&field).unwrap_or(false);
            if trial_ok {
                match field.residual(&prob) {
                    Ok(r_new) => {
                        let rn = max_norm(&r_new);
                        if rn <= (1.0 - 1e-4 * alpha) * rnorm {
                            residual = r_new;
                            rnorm = rn;
                            break;
                        }
                    }
                    Err(_) => {} // algebraic breakdown: shrink
                }
            }
            damping_events += 1;
            alpha *= 0.5;
            if alpha < 1e-12 {
                let sf = field.scalar_mut();
                for (u, &i) in interior.iter().enumerate() {
                    sf.values[i] = saved[u];
                }
                return Err(Error::LineSearchStagnation(alpha));
            }
        }
        iterations += 1;
        history.push(rnorm);
    }

    let spectra = field.spectra(&prob)?;
    let (min_kappa, max_kappa, cone_margin) = spectrum_stats(kk, spectra.iter());
    let sf = field.scalar();
    Ok(SolveReport {
        residual_history: history,
        newton_iterations: iterations,
        damping_events,
        min_kappa,
        max_kappa,
        cone_margin,
        unknowns: sf.mask.interior.len(),
        grid_m: sf.grid.shape[0],
        h: sf.grid.h,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Damped Newton on a primal field whose boundary values are already pinned.
pub fn newton_solve_primal(
    field: &mut GraphField,
    k: usize,
    eq: &PrimalEq,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    if let PrimalEq::Sigma { rhs } = eq {
        rhs.validate()?;
    }
    newton_loop(FieldMut::Primal(field), Problem::Primal { k, eq }, opts)
}

/// Damped Newton on a dual field (correction values; base fixed).
pub fn newton_solve_dual(
    field: &mut DualField,
    k: usize,
    rhs: &DualRhs,
    opts: &SolveOptions,
) -> Result<SolveReport> {
    if let DualRhs::Prescribed { rhs } = rhs {
        rhs.validate()?;
    }
    newton_loop(FieldMut::Dual(field), Problem::Dual { k, rhs }, opts)
}

/// Set boundary values from a function and solve the primal Dirichlet
/// problem from the given initial interior guess.
pub fn solve_dirichlet_primal<G, I>(
    grid: Grid,
    mask: std::sync::Arc<crate::field::DomainMask>,
    k: usize,
    eq: &PrimalEq,
    boundary: G,
    initial: I,
    slope_bound: f64,
    opts: &SolveOptions,
) -> Result<(GraphField, SolveReport)>
where
    G: Fn(&DVector<f64>) -> f64,
    I: Fn(&DVector<f64>) -> f64,
{
    let mut sf = ScalarField::new(grid, mask);
    for i in 0..sf.grid.len() {
        match sf.mask.class[i] {
            crate::field::NodeClass::Interior => sf.values[i] = initial(&sf.grid.position(i)),
            crate::field::NodeClass::Boundary => sf.values[i] = boundary(&sf.grid.position(i)),
            crate::field::NodeClass::Exterior => {}
        }
    }
    let mut f = GraphField::new(sf, slope_bound);
    let report = newton_solve_primal(&mut f, k, eq, opts)?;
    Ok((f, report))
}

/// Solve the dual quotient-root problem on the ball of the given radius.
pub fn solve_dirichlet_dual<G, I>(
    radius: f64,
    m: usize,
    n: usize,
    k: usize,
    rhs: &DualRhs,
    base: Option<crate::field::DualBase>,
    ball_radius: f64,
    boundary: G,
    initial: I,
    opts: &SolveOptions,
) -> Result<(DualField, SolveReport)>
where
    G: Fn(&DVector<f64>) -> f64,
    I: Fn(&DVector<f64>) -> f64,
{
    if radius >= ball_radius {
        return Err(Error::Argument(format!(
            "dual domain radius {radius} must stay inside the Gauss ball {ball_radius}"
        )));
    }
    let grid = Grid::centered(n, radius, m)?;
    let mask = crate::field::ball_mask(&grid, radius);
    let mut sf = ScalarField::new(grid, mask);
    for i in 0..sf.grid.len() {
        match sf.mask.class[i] {
            crate::field::NodeClass::Interior => sf.values[i] = initial(&sf.grid.position(i)),
            crate::field::NodeClass::Boundary => sf.values[i] = boundary(&sf.grid.position(i)),
            crate::field::NodeClass::Exterior => {}
        }
    }
    let mut g = DualField::new(sf, base, ball_radius);
    let report = newton_solve_dual(&mut g, k, rhs, opts)?;
    Ok((g, report))
}
