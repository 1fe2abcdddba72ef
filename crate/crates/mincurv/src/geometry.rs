//! Pointwise differential geometry of spacelike graphs in R^{n,1}.
//!
//! A graph `x_{n+1} = u(x)` with `|Du| < 1` carries the induced metric
//! `g_ij = delta_ij - u_i u_j`; its principal curvatures are the eigenvalues
//! of `a_ij = (1/w) gamma^{ik} u_{kl} gamma^{lj}` with
//! `gamma^{ik} = delta_ik + u_i u_k / (w (1 + w))` and `w = sqrt(1 - |Du|^2)`.
//! On the dual side, the eigenvalues of `w* gamma* D^2u* gamma*` at a point
//! of the Gauss-map ball are the curvature radii.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::symfun::{sym_eigen, SpectralPoint};

/// Margin keeping |Du| strictly inside the spacelike bound.
pub const SPACELIKE_EPS: f64 = 1e-12;
/// Margin for the soliton-mode slope bound |Du| <= C_tilde (1 - eps).
pub const SOLITON_SLOPE_EPS: f64 = 1e-10;

/// Second-order jet of a height function at one point.
#[derive(Debug, Clone)]
pub struct JetPoint {
    pub x: DVector<f64>,
    pub u: f64,
    pub du: DVector<f64>,
    pub d2u: DMatrix<f64>,
}

impl JetPoint {
    pub fn new(x: DVector<f64>, u: f64, du: DVector<f64>, d2u: DMatrix<f64>) -> Self {
        Self { x, u, du, d2u }
    }

    pub fn dim(&self) -> usize {
        self.x.len()
    }
}

/// Curvature data derived from a jet.
#[derive(Debug, Clone)]
pub struct GraphGeometry {
    /// sqrt(1 - |Du|^2)
    pub w: f64,
    /// Upward unit normal (Du, 1)/w in R^{n+1}.
    pub nu: DVector<f64>,
    /// gamma^{ik} = delta + u_i u_k / (w(1+w))
    pub gamma: DMatrix<f64>,
    /// a_ij = gamma D2u gamma / w
    pub curvature_matrix: DMatrix<f64>,
    /// Principal curvatures, ascending.
    pub kappa: SpectralPoint,
}

/// Minkowski inner product on R^{n,1} (last coordinate timelike).
pub fn minkowski_dot(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    let n = a.len() - 1;
    let mut s = 0.0;
    for i in 0..n {
        s += a[i] * b[i];
    }
    s - a[n] * b[n]
}

/// `gamma^{ik}` for a gradient vector, the inverse square root of g_ij.
pub fn gamma_upper(du: &DVector<f64>, w: f64) -> DMatrix<f64> {
    let n = du.len();
    let mut m = DMatrix::identity(n, n);
    let c = 1.0 / (w * (1.0 + w));
    for i in 0..n {
        for k in 0..n {
            m[(i, k)] += du[i] * du[k] * c;
        }
    }
    m
}

/// `gamma_ij = delta - u_i u_j/(1+w)`, the square root of g_ij.
pub fn gamma_lower(du: &DVector<f64>, w: f64) -> DMatrix<f64> {
    let n = du.len();
    let mut m = DMatrix::identity(n, n);
    let c = 1.0 / (1.0 + w);
    for i in 0..n {
        for j in 0..n {
            m[(i, j)] -= du[i] * du[j] * c;
        }
    }
    m
}

/// Curvature matrix and principal curvatures of a spacelike jet.
pub fn graph_geometry(j: &JetPoint) -> Result<GraphGeometry> {
    let n = j.dim();
    let g2 = j.du.norm_squared();
    if g2 >= 1.0 - SPACELIKE_EPS {
        return Err(Error::Spacelike(format!(
            "|Du| = {:.12} at x = {:?}",
            g2.sqrt(),
            j.x.as_slice()
        )));
    }
    let w = (1.0 - g2).sqrt();
    let mut nu = DVector::zeros(n + 1);
    for i in 0..n {
        nu[i] = j.du[i] / w;
    }
    nu[n] = 1.0 / w;
    let gamma = gamma_upper(&j.du, w);
    let a = (&gamma * &j.d2u * &gamma) / w;
    // Symmetrize away roundoff before the eigensolve.
    let a = (&a + a.transpose()) * 0.5;
    let (vals, _) = sym_eigen(&a)?;
    Ok(GraphGeometry {
        w,
        nu,
        gamma,
        curvature_matrix: a,
        kappa: SpectralPoint::new(vals)?,
    })
}

/// Support function `v = <X, nu> = (x . Du - u)/w`.
pub fn support_function(j: &JetPoint) -> Result<f64> {
    let g2 = j.du.norm_squared();
    if g2 >= 1.0 - SPACELIKE_EPS {
        return Err(Error::Spacelike(format!("|Du| = {:.12}", g2.sqrt())));
    }
    let w = (1.0 - g2).sqrt();
    Ok((j.x.dot(&j.du) - j.u) / w)
}

/// Second-order jet of a dual potential at one point of the Gauss-map ball.
#[derive(Debug, Clone)]
pub struct DualJetPoint {
    pub xi: DVector<f64>,
    pub ustar: f64,
    pub dustar: DVector<f64>,
    pub d2ustar: DMatrix<f64>,
}

impl DualJetPoint {
    pub fn new(xi: DVector<f64>, ustar: f64, dustar: DVector<f64>, d2ustar: DMatrix<f64>) -> Self {
        Self {
            xi,
            ustar,
            dustar,
            d2ustar,
        }
    }
}

/// `gamma*_{ij} = delta - xi_i xi_j/(1+w*)`, the square root of g_ij in dual
/// coordinates.
pub fn gamma_star(xi: &DVector<f64>, wstar: f64) -> DMatrix<f64> {
    gamma_lower(xi, wstar)
}

/// Curvature radii: eigenvalues (ascending) of `w* gamma* D^2u* gamma*`.
///
/// `ball_radius` is the admissible Gauss-map radius (1 in prescribed mode,
/// C_tilde in soliton mode).
pub fn dual_curvature_radii(d: &DualJetPoint, ball_radius: f64) -> Result<SpectralPoint> {
    let r2 = d.xi.norm_squared();
    if r2 >= ball_radius * ball_radius {
        return Err(Error::Domain(format!(
            "|xi| = {:.12} outside the Gauss-map ball of radius {ball_radius}",
            r2.sqrt()
        )));
    }
    let wstar = (1.0 - r2).sqrt();
    let gs = gamma_star(&d.xi, wstar);
    let m = (&gs * &d.d2ustar * &gs) * wstar;
    let m = (&m + m.transpose()) * 0.5;
    let (vals, _) = sym_eigen(&m)?;
    if vals[0] <= 0.0 {
        return Err(Error::Convexity {
            count: 1,
            first: vec![],
        });
    }
    SpectralPoint::new(vals)
}

/// Asymptotic model a computed solution is compared against.
#[derive(Debug, Clone, Copy)]
pub enum DefectMode {
    /// u -> |x| + phi(x/|x|)
    Prescribed,
    /// u -> C_tilde |x| - (1/C^2)((n-k)/n)^{1/k} log|x| + phi(C_tilde x/|x|)
    Soliton { c_speed: f64, n: usize, k: usize },
}

/// C_tilde = sqrt(1 - 1/C^2).
pub fn c_tilde(c_speed: f64) -> f64 {
    (1.0 - 1.0 / (c_speed * c_speed)).sqrt()
}

/// Coefficient of the log term in the soliton expansion:
/// (1/C^2) ((n-k)/n)^{1/k}.
pub fn soliton_log_coeff(c_speed: f64, n: usize, k: usize) -> f64 {
    ((n - k) as f64 / n as f64).powf(1.0 / k as f64) / (c_speed * c_speed)
}

/// One sampled defect value.
#[derive(Debug, Clone)]
pub struct DefectSample {
    pub radius: f64,
    pub direction: DVector<f64>,
    pub defect: f64,
}

/// Defect of `u` against the asymptotic model at the given radii and unit
/// directions. `u` returns None outside its domain, which is reported as a
/// radius error.
pub fn asymptotic_defect<U, P>(
    u: U,
    phi: P,
    mode: DefectMode,
    radii: &[f64],
    directions: &[DVector<f64>],
) -> Result<Vec<DefectSample>>
where
    U: Fn(&DVector<f64>) -> Option<f64>,
    P: Fn(&DVector<f64>) -> f64,
{
    let mut out = Vec::with_capacity(radii.len() * directions.len());
    for &r in radii {
        for dir in directions {
            let x = dir * r;
            let val = u(&x).ok_or_else(|| {
                Error::Domain(format!("radius {r} outside the field domain"))
            })?;
            let model = match mode {
                DefectMode::Prescribed => r + phi(dir),
                DefectMode::Soliton { c_speed, n, k } => {
                    let ct = c_tilde(c_speed);
                    let a = soliton_log_coeff(c_speed, n, k);
                    let pt = dir * ct;
                    ct * r - a * r.ln() + phi(&pt)
                }
            };
            out.push(DefectSample {
                radius: r,
                direction: dir.clone(),
                defect: val - model,
            });
        }
    }
    Ok(out)
}

/// Analytic jet of the unit hyperboloid u = sqrt(1 + |x|^2).
pub fn hyperboloid_jet(x: &DVector<f64>) -> JetPoint {
    scaled_hyperboloid_jet(x, 1.0)
}

/// Analytic jet of u = sqrt(alpha^2 + |x|^2) (all principal curvatures
/// equal to 1/alpha).
pub fn scaled_hyperboloid_jet(x: &DVector<f64>, alpha: f64) -> JetPoint {
    let n = x.len();
    let s = (alpha * alpha + x.norm_squared()).sqrt();
    let du = x / s;
    let mut d2u = DMatrix::identity(n, n) / s;
    for i in 0..n {
        for j in 0..n {
            d2u[(i, j)] -= x[i] * x[j] / (s * s * s);
        }
    }
    JetPoint::new(x.clone(), s, du, d2u)
}
