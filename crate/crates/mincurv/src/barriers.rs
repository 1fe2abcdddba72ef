//! Sub/supersolution envelopes built from tilted, recentered radial
//! profiles: `z_i(x, y) = phi(rho y) - p_i(rho y) . rho y + z0(|x + p_i|)`
//! with tilts `p_i = Dphi +/- 2 M rho y`, and the envelopes
//! `q1 = sup_y z_1`, `q2 = inf_y z_2`.
//!
//! Each branch is a rigid recentering of an exact radial solution plus an
//! affine function, so it solves the equation exactly; the envelopes are
//! then sub-/supersolutions wherever sup/inf respects the ordering.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::field::GraphField;
use crate::geometry::{graph_geometry, JetPoint};
use crate::radial::{RadialProfile, RhsKind};
use crate::sphere::{default_mesh, SphereFn};
use crate::symfun::{binomial, sigma};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BarrierMode {
    /// Constant-curvature barriers at levels c1 (sub) >= c2 (super).
    Prescribed { level_sub: f64, level_sup: f64 },
    /// Soliton barriers from the radial soliton profile.
    Soliton { c_speed: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BarrierSide {
    /// q1, the subsolution envelope (sup over directions).
    Lower,
    /// q2, the supersolution envelope (inf over directions).
    Upper,
}

/// Tilt vectors `p_i(rho y) = Dphi(rho y) + (-1)^{i+1} 2 M rho y`.
pub fn tilt_vectors(
    phi: &dyn SphereFn,
    m_tilt: f64,
    y: &DVector<f64>,
) -> (DVector<f64>, DVector<f64>) {
    let rho = phi.radius();
    let grad = phi.tangential_gradient(y);
    let radial = y * (2.0 * m_tilt * rho);
    (&grad + &radial, grad - radial)
}

/// A fully precomputed barrier pair over a direction mesh.
pub struct BarrierSet {
    pub mode: BarrierMode,
    pub m_tilt: f64,
    pub mesh: Vec<DVector<f64>>,
    /// Sphere radius carrying the boundary data (C_tilde or 1).
    pub rho: f64,
    /// Profile backing the subsolution branches.
    pub profile_sub: Arc<RadialProfile>,
    /// Profile backing the supersolution branches.
    pub profile_sup: Arc<RadialProfile>,
    /// Whether profile queries beyond r_max may use the tail expansion.
    pub tail_extrapolation: bool,
    /// Boundary data, kept for continuous refinement of the envelopes.
    phi: Arc<dyn SphereFn>,
    tilts_sub: Vec<DVector<f64>>,
    tilts_sup: Vec<DVector<f64>>,
    consts_sub: Vec<f64>,
    consts_sup: Vec<f64>,
}

impl BarrierSet {
    pub fn build(
        mode: BarrierMode,
        phi: Arc<dyn SphereFn>,
        m_tilt: f64,
        mesh: Vec<DVector<f64>>,
        profile_sub: Arc<RadialProfile>,
        profile_sup: Arc<RadialProfile>,
        tail_extrapolation: bool,
    ) -> Result<Self> {
        if !(m_tilt > 0.0) {
            return Err(Error::Argument(format!("tilt must be positive, got {m_tilt}")));
        }
        let rho = phi.radius();
        let expected = profile_sub.params.slope_limit();
        if (rho - expected).abs() > 1e-9 {
            return Err(Error::Argument(format!(
                "boundary sphere radius {rho} does not match the profile slope limit {expected}"
            )));
        }
        match (mode, profile_sub.params.rhs, profile_sup.params.rhs) {
            (BarrierMode::Soliton { c_speed }, RhsKind::Soliton { c_speed: a }, RhsKind::Soliton { c_speed: b })
                if (a - c_speed).abs() < 1e-12 && (b - c_speed).abs() < 1e-12 => {}
            (
                BarrierMode::Prescribed {
                    level_sub,
                    level_sup,
                },
                RhsKind::Constant { level: a },
                RhsKind::Constant { level: b },
            ) if (a - level_sub).abs() < 1e-12 && (b - level_sup).abs() < 1e-12 => {
                if level_sub < level_sup {
                    return Err(Error::Argument(
                        "prescribed barriers need c1 >= c2".into(),
                    ));
                }
            }
            _ => {
                return Err(Error::Argument(
                    "profile right-hand sides do not match the barrier mode".into(),
                ))
            }
        }
        let mut tilts_sub = Vec::with_capacity(mesh.len());
        let mut tilts_sup = Vec::with_capacity(mesh.len());
        let mut consts_sub = Vec::with_capacity(mesh.len());
        let mut consts_sup = Vec::with_capacity(mesh.len());
        for y in &mesh {
            let (p1, p2) = tilt_vectors(phi.as_ref(), m_tilt, y);
            let v = phi.value(y);
            let p = y * rho;
            consts_sub.push(v - p1.dot(&p));
            consts_sup.push(v - p2.dot(&p));
            tilts_sub.push(p1);
            tilts_sup.push(p2);
        }
        Ok(Self {
            mode,
            m_tilt,
            mesh,
            rho,
            profile_sub,
            profile_sup,
            tail_extrapolation,
            phi,
            tilts_sub,
            tilts_sup,
            consts_sub,
            consts_sup,
        })
    }

    /// Convenience constructor with the default mesh and tail extrapolation.
    pub fn with_defaults(
        mode: BarrierMode,
        phi: Arc<dyn SphereFn>,
        m_tilt: f64,
        profile_sub: Arc<RadialProfile>,
        profile_sup: Arc<RadialProfile>,
    ) -> Result<Self> {
        let n = profile_sub.params.n;
        Self::build(
            mode,
            phi,
            m_tilt,
            default_mesh(n),
            profile_sub,
            profile_sup,
            true,
        )
    }

    /// Branch value at a continuous direction (not restricted to the mesh).
    fn branch_at_direction(
        &self,
        x: &DVector<f64>,
        side: BarrierSide,
        y: &DVector<f64>,
    ) -> Result<f64> {
        let (p1, p2) = tilt_vectors(self.phi.as_ref(), self.m_tilt, y);
        let p = match side {
            BarrierSide::Lower => p1,
            BarrierSide::Upper => p2,
        };
        let prof = self.profile(side);
        let rad = (x + &p).norm();
        if rad > prof.r_max() && !self.tail_extrapolation {
            return Err(Error::ProfileRange {
                r: rad,
                r_max: prof.r_max(),
            });
        }
        Ok(self.phi.value(y) - p.dot(&(y * self.rho)) + prof.height_at(rad))
    }

    fn dual_branch_at_direction(
        &self,
        xi: &DVector<f64>,
        side: BarrierSide,
        y: &DVector<f64>,
        base: f64,
    ) -> Result<f64> {
        let (p1, p2) = tilt_vectors(self.phi.as_ref(), self.m_tilt, y);
        let p = match side {
            BarrierSide::Lower => p1,
            BarrierSide::Upper => p2,
        };
        Ok(base - p.dot(xi) - (self.phi.value(y) - p.dot(&(y * self.rho))))
    }

    /// Envelope value with the optimizing direction refined continuously
    /// around the best mesh direction. The mesh envelope is faceted at the
    /// mesh scale, which trips discrete Hessians; refinement restores a C^1
    /// envelope for stage data and initial guesses.
    pub fn value_smooth(&self, x: &DVector<f64>, side: BarrierSide) -> Result<f64> {
        let (coarse, arg) = self.value_and_argopt(x, side)?;
        let maximize = matches!(side, BarrierSide::Lower);
        let refined = self.refine_direction(arg, maximize, |y| {
            self.branch_at_direction(x, side, y)
        })?;
        Ok(if maximize {
            refined.max(coarse)
        } else {
            refined.min(coarse)
        })
    }

    /// Dual envelope value with continuous refinement (see value_smooth).
    pub fn dual_value_smooth(&self, xi: &DVector<f64>, side: BarrierSide) -> Result<f64> {
        let prof = self.profile(side);
        let base = prof.conjugate_at(xi.norm())?;
        // mesh pass
        let mut best = match side {
            BarrierSide::Lower => f64::INFINITY,
            BarrierSide::Upper => f64::NEG_INFINITY,
        };
        let mut arg = 0usize;
        let (tilts, consts) = match side {
            BarrierSide::Lower => (&self.tilts_sub, &self.consts_sub),
            BarrierSide::Upper => (&self.tilts_sup, &self.consts_sup),
        };
        for dir in 0..self.mesh.len() {
            let v = base - tilts[dir].dot(xi) - consts[dir];
            let better = match side {
                BarrierSide::Lower => v < best,
                BarrierSide::Upper => v > best,
            };
            if better {
                best = v;
                arg = dir;
            }
        }
        // the dual transform flips sup and inf
        let maximize = matches!(side, BarrierSide::Upper);
        let refined = self.refine_direction(arg, maximize, |y| {
            self.dual_branch_at_direction(xi, side, y, base)
        })?;
        Ok(if maximize {
            refined.max(best)
        } else {
            refined.min(best)
        })
    }

    /// Golden-section polish over the sphere directions near mesh index
    /// `arg` (one angle for n = 2; two tangent parameters, coordinate-wise,
    /// for n = 3).
    fn refine_direction<F>(&self, arg: usize, maximize: bool, f: F) -> Result<f64>
    where
        F: Fn(&DVector<f64>) -> Result<f64>,
    {
        let n = self.mesh[0].len();
        let golden = 0.5 * (3.0 - 5.0_f64.sqrt());
        if n == 2 {
            let y0 = &self.mesh[arg];
            let theta0 = y0[1].atan2(y0[0]);
            let span = std::f64::consts::TAU / self.mesh.len() as f64;
            let eval = |t: f64| -> Result<f64> {
                f(&DVector::from_column_slice(&[t.cos(), t.sin()]))
            };
            let (mut a, mut b) = (theta0 - span, theta0 + span);
            let mut x1 = a + golden * (b - a);
            let mut x2 = b - golden * (b - a);
            let mut f1 = eval(x1)?;
            let mut f2 = eval(x2)?;
            for _ in 0..60 {
                let pick1 = if maximize { f1 > f2 } else { f1 < f2 };
                if pick1 {
                    b = x2;
                    x2 = x1;
                    f2 = f1;
                    x1 = a + golden * (b - a);
                    f1 = eval(x1)?;
                } else {
                    a = x1;
                    x1 = x2;
                    f1 = f2;
                    x2 = b - golden * (b - a);
                    f2 = eval(x2)?;
                }
            }
            eval(0.5 * (a + b))
        } else {
            // coordinate-wise golden search in the tangent plane
            let y0 = self.mesh[arg].clone();
            let mut basis = Vec::new();
            for d in 0..n {
                let mut e = DVector::zeros(n);
                e[d] = 1.0;
                let mut t = &e - &y0 * y0.dot(&e);
                for b in &basis {
                    let b: &DVector<f64> = b;
                    t -= b * b.dot(&t);
                }
                if t.norm() > 1e-8 {
                    basis.push(t.normalize());
                }
                if basis.len() == n - 1 {
                    break;
                }
            }
            let span = (4.0 * std::f64::consts::PI / self.mesh.len() as f64).sqrt();
            let mut center = y0;
            let mut best = f(&center)?;
            for _sweep in 0..3 {
                for t in &basis {
                    let eval = |s: f64| -> Result<f64> {
                        f(&(&center + t * s).normalize())
                    };
                    let (mut a, mut b) = (-span, span);
                    let mut x1 = a + golden * (b - a);
                    let mut x2 = b - golden * (b - a);
                    let mut f1 = eval(x1)?;
                    let mut f2 = eval(x2)?;
                    for _ in 0..40 {
                        let pick1 = if maximize { f1 > f2 } else { f1 < f2 };
                        if pick1 {
                            b = x2;
                            x2 = x1;
                            f2 = f1;
                            x1 = a + golden * (b - a);
                            f1 = eval(x1)?;
                        } else {
                            a = x1;
                            x1 = x2;
                            f1 = f2;
                            x2 = b - golden * (b - a);
                            f2 = eval(x2)?;
                        }
                    }
                    let s = 0.5 * (a + b);
                    let v = eval(s)?;
                    let better = if maximize { v > best } else { v < best };
                    if better {
                        best = v;
                        center = (&center + t * s).normalize();
                    }
                }
            }
            Ok(best)
        }
    }

    fn branch_radius(&self, x: &DVector<f64>, side: BarrierSide, dir: usize) -> f64 {
        let tilt = match side {
            BarrierSide::Lower => &self.tilts_sub[dir],
            BarrierSide::Upper => &self.tilts_sup[dir],
        };
        (x + tilt).norm()
    }

    fn profile(&self, side: BarrierSide) -> &RadialProfile {
        match side {
            BarrierSide::Lower => &self.profile_sub,
            BarrierSide::Upper => &self.profile_sup,
        }
    }

    /// One branch value z_i(x, y_dir).
    pub fn branch_value(&self, x: &DVector<f64>, side: BarrierSide, dir: usize) -> Result<f64> {
        let rad = self.branch_radius(x, side, dir);
        let prof = self.profile(side);
        if rad > prof.r_max() && !self.tail_extrapolation {
            return Err(Error::ProfileRange {
                r: rad,
                r_max: prof.r_max(),
            });
        }
        let c = match side {
            BarrierSide::Lower => self.consts_sub[dir],
            BarrierSide::Upper => self.consts_sup[dir],
        };
        Ok(c + prof.height_at(rad))
    }

    /// Envelope value together with the attaining mesh direction.
    pub fn value_and_argopt(&self, x: &DVector<f64>, side: BarrierSide) -> Result<(f64, usize)> {
        let mut best = match side {
            BarrierSide::Lower => f64::NEG_INFINITY,
            BarrierSide::Upper => f64::INFINITY,
        };
        let mut arg = 0usize;
        for dir in 0..self.mesh.len() {
            let v = self.branch_value(x, side, dir)?;
            let better = match side {
                BarrierSide::Lower => v > best,
                BarrierSide::Upper => v < best,
            };
            if better {
                best = v;
                arg = dir;
            }
        }
        Ok((best, arg))
    }

    pub fn value(&self, x: &DVector<f64>, side: BarrierSide) -> Result<f64> {
        Ok(self.value_and_argopt(x, side)?.0)
    }

    /// Legendre transform of the envelope at xi:
    /// (z_i)*(xi, y) = z0*(|xi|) - p_i . xi - (phi(rho y) - p_i . rho y),
    /// with inf over directions for the sub side and sup for the super side.
    pub fn dual_value(&self, xi: &DVector<f64>, side: BarrierSide) -> Result<f64> {
        let prof = self.profile(side);
        let base = prof.conjugate_at(xi.norm())?;
        let (tilts, consts) = match side {
            BarrierSide::Lower => (&self.tilts_sub, &self.consts_sub),
            BarrierSide::Upper => (&self.tilts_sup, &self.consts_sup),
        };
        let mut best = match side {
            BarrierSide::Lower => f64::INFINITY,
            BarrierSide::Upper => f64::NEG_INFINITY,
        };
        for dir in 0..self.mesh.len() {
            let v = base - tilts[dir].dot(xi) - consts[dir];
            match side {
                BarrierSide::Lower => best = best.min(v),
                BarrierSide::Upper => best = best.max(v),
            }
        }
        Ok(best)
    }

    /// sigma_k level the branches solve at slope |Du|.
    fn rhs_level(&self, slope: f64) -> f64 {
        let p = &self.profile_sub.params;
        match self.mode {
            BarrierMode::Prescribed { level_sub, .. } => {
                let _ = level_sub;
                match p.rhs {
                    RhsKind::Constant { level } => level,
                    _ => unreachable!(),
                }
            }
            BarrierMode::Soliton { c_speed } => {
                let w = (1.0 - slope * slope).sqrt();
                binomial(p.n, p.k) * (c_speed - 1.0 / w).powi(p.k as i32)
            }
        }
    }
}

/// Second-order jet of a black-box function by centered differences.
pub(crate) fn fd_jet<F>(f: F, x: &DVector<f64>, h: f64) -> Result<JetPoint>
where
    F: Fn(&DVector<f64>) -> Result<f64>,
{
    let n = x.len();
    let u = f(x)?;
    let mut du = DVector::zeros(n);
    let mut d2u = nalgebra::DMatrix::zeros(n, n);
    for a in 0..n {
        let mut xp = x.clone();
        xp[a] += h;
        let mut xm = x.clone();
        xm[a] -= h;
        let fp = f(&xp)?;
        let fm = f(&xm)?;
        du[a] = (fp - fm) / (2.0 * h);
        d2u[(a, a)] = (fp - 2.0 * u + fm) / (h * h);
        for b in a + 1..n {
            let mut xpp = x.clone();
            xpp[a] += h;
            xpp[b] += h;
            let mut xmm = x.clone();
            xmm[a] -= h;
            xmm[b] -= h;
            let mut xpm = x.clone();
            xpm[a] += h;
            xpm[b] -= h;
            let mut xmp = x.clone();
            xmp[a] -= h;
            xmp[b] += h;
            let v = (f(&xpp)? + f(&xmm)? - f(&xpm)? - f(&xmp)?) / (4.0 * h * h);
            d2u[(a, b)] = v;
            d2u[(b, a)] = v;
        }
    }
    Ok(JetPoint::new(x.clone(), u, du, d2u))
}

/// Smallest tilt magnitude from a doubling search such that the envelopes
/// order correctly and pass discrete sub/supersolution residual checks on a
/// validation grid.
pub fn calibrate_m(
    mode: BarrierMode,
    phi: Arc<dyn SphereFn>,
    profile_sub: Arc<RadialProfile>,
    profile_sup: Arc<RadialProfile>,
) -> Result<f64> {
    let n = profile_sub.params.n;
    require_c2_on_mesh(phi.as_ref(), n)?;
    let m_max = 1e3 * (1.0 + phi.c2_bound());
    let dirs = crate::sphere::sphere_mesh(n, if n == 2 { 24 } else { 48 });
    let radii = [0.0, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0];
    let mut m_tilt = 1.0;
    while m_tilt <= m_max {
        let b = BarrierSet::build(
            mode,
            phi.clone(),
            m_tilt,
            default_mesh(n),
            profile_sub.clone(),
            profile_sup.clone(),
            true,
        )?;
        if validate_barriers(&b, &dirs, &radii)? {
            return Ok(m_tilt);
        }
        m_tilt *= 2.0;
    }
    Err(Error::Calibration(format!(
        "no tilt below M_max = {m_max:.3e} passes the validation checks \
         (boundary data too rough?)"
    )))
}

/// Numerical check of the twice-differentiability precondition: discrete
/// second differences along the mesh must be resolution-stable. A jump in
/// the data quadruples the estimate when the mesh is refined.
fn require_c2_on_mesh(phi: &dyn SphereFn, n: usize) -> Result<()> {
    let est = |count: usize| -> f64 {
        let mesh = crate::sphere::sphere_mesh(n, count);
        let rho = phi.radius();
        let vals: Vec<f64> = mesh.iter().map(|y| phi.value(y)).collect();
        let mut worst = 0.0_f64;
        if n == 2 {
            let dth = std::f64::consts::TAU / count as f64 * rho;
            for i in 0..count {
                let a = vals[(i + count - 1) % count];
                let b = vals[i];
                let c = vals[(i + 1) % count];
                worst = worst.max((a - 2.0 * b + c).abs() / (dth * dth));
            }
        } else {
            // second difference along approximate great-circle triples
            let spacing = (4.0 * std::f64::consts::PI / count as f64).sqrt() * rho;
            for i in 0..count {
                // nearest neighbor and its reflection through node i
                let mut jn = usize::MAX;
                let mut dn = f64::INFINITY;
                for j in 0..count {
                    if j == i {
                        continue;
                    }
                    let d = (&mesh[j] - &mesh[i]).norm_squared();
                    if d < dn {
                        dn = d;
                        jn = j;
                    }
                }
                let refl = (&mesh[i] * 2.0 - &mesh[jn]).normalize();
                let mut jr = usize::MAX;
                let mut dr = f64::INFINITY;
                for j in 0..count {
                    if j == i || j == jn {
                        continue;
                    }
                    let d = (&mesh[j] - &refl).norm_squared();
                    if d < dr {
                        dr = d;
                        jr = j;
                    }
                }
                let step = (&mesh[jn] - &mesh[i]).norm() * rho;
                worst = worst.max((vals[jn] - 2.0 * vals[i] + vals[jr]).abs() / (step * step).max(spacing * spacing * 0.01));
            }
        }
        worst
    };
    let fine = est(if n == 2 { 256 } else { 1024 });
    let coarse = est(if n == 2 { 128 } else { 512 });
    if fine > 2.5 * coarse.max(1e-9) && fine > 4.0 * (1.0 + phi.c2_bound().min(1e3)) {
        return Err(Error::Calibration(format!(
            "boundary data fails the C2 check on the mesh: second differences \
             grow from {coarse:.3e} to {fine:.3e} under refinement"
        )));
    }
    Ok(())
}

fn validate_barriers(b: &BarrierSet, dirs: &[DVector<f64>], radii: &[f64]) -> Result<bool> {
    let k = b.profile_sub.params.k;
    let nn = b.profile_sub.params.n;
    for dir in dirs {
        for &r in radii {
            let x = dir * r;
            let (q1, a1) = b.value_and_argopt(&x, BarrierSide::Lower)?;
            let (q2, a2) = b.value_and_argopt(&x, BarrierSide::Upper)?;
            if q1 > q2 + 1e-10 * (1.0 + q1.abs()) {
                return Ok(false);
            }
            // residual checks where the envelope is smooth: the attaining
            // direction must be stable across a small stencil
            for (side, arg, sign) in [
                (BarrierSide::Lower, a1, 1.0_f64),
                (BarrierSide::Upper, a2, -1.0),
            ] {
                let hv = 1e-3;
                let mut stable = true;
                for d in 0..nn {
                    for s in [-1.0, 1.0] {
                        let mut xp = x.clone();
                        xp[d] += s * hv;
                        if b.value_and_argopt(&xp, side)?.1 != arg {
                            stable = false;
                        }
                    }
                }
                if !stable {
                    continue; // kink point; sup/inf of solutions needs no check here
                }
                let jet = fd_jet(|p| b.value(p, side), &x, hv)?;
                if jet.du.norm() >= b.rho {
                    return Ok(false);
                }
                let geom = match graph_geometry(&jet) {
                    Ok(g) => g,
                    Err(_) => return Ok(false),
                };
                let sk = sigma(k, &geom.kappa)?;
                let level = b.rhs_level(jet.du.norm());
                let slack = 0.05 * level.abs() + 1e-6;
                // sub: sigma_k >= level, super: sigma_k <= level
                if sign * (sk - level) < -slack {
                    return Ok(false);
                }
            }
        }
    }
    Ok(true)
}

/// Pointwise sandwich violations of a field against a barrier pair.
#[derive(Debug, Clone, serde::Serialize)]
pub struct SandwichReport {
    /// max over nodes of (q1 - u)+
    pub lower_violation: f64,
    /// max over nodes of (u - q2)+
    pub upper_violation: f64,
    pub worst_lower_at: Vec<f64>,
    pub worst_upper_at: Vec<f64>,
    pub nodes_checked: usize,
}

/// Violations are reported, not thrown.
pub fn check_sandwich(f: &GraphField, b: &BarrierSet) -> Result<SandwichReport> {
    let mut rep = SandwichReport {
        lower_violation: 0.0,
        upper_violation: 0.0,
        worst_lower_at: vec![],
        worst_upper_at: vec![],
        nodes_checked: 0,
    };
    for i in 0..f.field.grid.len() {
        if !f.field.mask.in_domain(i) {
            continue;
        }
        let x = f.field.grid.position(i);
        let u = f.field.values[i];
        let q1 = b.value(&x, BarrierSide::Lower)?;
        let q2 = b.value(&x, BarrierSide::Upper)?;
        if q1 - u > rep.lower_violation {
            rep.lower_violation = q1 - u;
            rep.worst_lower_at = x.iter().copied().collect();
        }
        if u - q2 > rep.upper_violation {
            rep.upper_violation = u - q2;
            rep.worst_upper_at = x.iter().copied().collect();
        }
        rep.nodes_checked += 1;
    }
    Ok(rep)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ball_mask, Grid, ScalarField};
    use crate::radial::{integrate_profile, RadialParams};
    use crate::sphere::{sphere_mesh, HarmonicFn, MeshSampledFn, ZeroFn};

    fn soliton_profile(n: usize, k: usize, c: f64) -> Arc<RadialProfile> {
        Arc::new(integrate_profile(&RadialParams::soliton(n, k, c).unwrap(), 1e3, 1e-10).unwrap())
    }

    fn soliton_barriers(m_tilt: f64) -> BarrierSet {
        let prof = soliton_profile(2, 1, 2.0);
        let phi = Arc::new(ZeroFn {
            rho: prof.params.slope_limit(),
        });
        BarrierSet::with_defaults(
            BarrierMode::Soliton { c_speed: 2.0 },
            phi,
            m_tilt,
            prof.clone(),
            prof,
        )
        .unwrap()
    }

    #[test]
    fn tilt_vectors_zero_phi_and_parity() {
        let rho = 0.8660254037844386;
        let phi = ZeroFn { rho };
        let y = DVector::from_column_slice(&[0.6, 0.8]);
        let (p1, p2) = tilt_vectors(&phi, 1.5, &y);
        assert!((p1 - &y * (2.0 * 1.5 * rho)).norm() < 1e-14);
        assert!((p2 + &y * (2.0 * 1.5 * rho)).norm() < 1e-14);

        // even phi: p_i(-y) = -p_i(y)
        let phi = HarmonicFn::circle(rho, 0.2, vec![0.0, 0.1], vec![]);
        let (p1, _) = tilt_vectors(&phi, 1.0, &y);
        let (p1m, _) = tilt_vectors(&phi, 1.0, &(-&y));
        assert!((p1m + &p1).norm() < 1e-12);
    }

    #[test]
    fn tilt_gradient_matches_mesh_fd() {
        // phi = restriction of a linear function: exact tangential gradient
        // vs the finite-difference mesh oracle
        let rho = 1.0;
        let a = DVector::from_column_slice(&[0.3, -0.4]);
        let exact = HarmonicFn::circle(rho, 0.0, vec![0.3], vec![-0.4]);
        let mesh = sphere_mesh(2, 1024);
        let af = a.clone();
        let sampled = MeshSampledFn::from_fn(rho, mesh, move |y| af.dot(&(y * rho)));
        for t in [0.3_f64, 1.2, 2.9] {
            let y = DVector::from_column_slice(&[t.cos(), t.sin()]);
            let (p1e, _) = tilt_vectors(&exact, 1.0, &y);
            let (p1s, _) = tilt_vectors(&sampled, 1.0, &y);
            assert!((p1e - p1s).norm() < 1e-2);
        }
    }

    #[test]
    fn center_value_formula_zero_phi() {
        let b = soliton_barriers(1.0);
        let ct = b.rho;
        let x0 = DVector::zeros(2);
        let q1 = b.value(&x0, BarrierSide::Lower).unwrap();
        let expect = -2.0 * ct * ct + b.profile_sub.height_at(2.0 * ct);
        assert!((q1 - expect).abs() < 1e-12);
    }

    #[test]
    fn ordering_and_mesh_monotonicity() {
        let prof = soliton_profile(2, 1, 2.0);
        let rho = prof.params.slope_limit();
        let phi = HarmonicFn::circle(rho, 0.0, vec![0.1], vec![0.05]);
        let phi = Arc::new(phi);
        let build = |count: usize| {
            BarrierSet::build(
                BarrierMode::Soliton { c_speed: 2.0 },
                phi.clone(),
                2.0,
                sphere_mesh(2, count),
                prof.clone(),
                prof.clone(),
                true,
            )
            .unwrap()
        };
        let coarse = build(64);
        let fine = build(256);
        for t in 0..12 {
            let ang = t as f64 * 0.5;
            for r in [0.0, 1.0, 3.0, 10.0] {
                let x = DVector::from_column_slice(&[ang.cos() * r, ang.sin() * r]);
                let q1c = coarse.value(&x, BarrierSide::Lower).unwrap();
                let q1f = fine.value(&x, BarrierSide::Lower).unwrap();
                let q2c = coarse.value(&x, BarrierSide::Upper).unwrap();
                let q2f = fine.value(&x, BarrierSide::Upper).unwrap();
                // nested meshes: sup grows, inf shrinks
                assert!(q1f >= q1c - 1e-12);
                assert!(q2f <= q2c + 1e-12);
                assert!(q1f <= q2f + 1e-10);
            }
        }
    }

    #[test]
    fn branch_curvature_matches_profile() {
        let b = soliton_barriers(1.0);
        let dir = 37usize;
        let x = DVector::from_column_slice(&[1.3, -0.4]);
        let jet = fd_jet(|p| b.branch_value(p, BarrierSide::Lower, dir), &x, 1e-4).unwrap();
        let geom = graph_geometry(&jet).unwrap();
        let rad = (&x + &b.tilts_sub[dir]).norm();
        let y = b.profile_sub.slope_at(rad);
        let yp = b.profile_sub.slope_deriv_at(rad);
        let exact = crate::radial::radial_curvature(rad, y, yp, 2).unwrap().sorted();
        let got = geom.kappa.sorted();
        for i in 0..2 {
            assert!(
                (got[i] - exact[i]).abs() < 1e-6,
                "kappa {i}: {} vs {}",
                got[i],
                exact[i]
            );
        }
    }

    #[test]
    fn asymptotic_agreement() {
        let b = soliton_barriers(1.0);
        let a = crate::geometry::soliton_log_coeff(2.0, 2, 1);
        let ct = b.rho;
        let dir = DVector::from_column_slice(&[0.8, 0.6]);
        let mut prev_gap = f64::INFINITY;
        let mut prev_dev = f64::INFINITY;
        for r in [50.0, 200.0, 800.0] {
            let x = &dir * r;
            let q1 = b.value(&x, BarrierSide::Lower).unwrap();
            let q2 = b.value(&x, BarrierSide::Upper).unwrap();
            let gap = q2 - q1;
            assert!(gap >= -1e-10 && gap < prev_gap);
            prev_gap = gap;
            // both envelopes approach the expansion; the O(1/r) remainder
            // dominates the deviation, so it shrinks with r
            let model = ct * r - a * r.ln();
            let dev = (q1 - model).abs().max((q2 - model).abs());
            println!("r={r} gap={gap:.3e} dev={dev:.3e}");
            assert!(dev < prev_dev);
            prev_dev = dev;
        }
        assert!(prev_gap < 2e-3, "gap at 800: {prev_gap}");
        assert!(prev_dev < 2e-2, "deviation at 800: {prev_dev}");
    }

    #[test]
    fn prescribed_degenerate_collapse() {
        // c1 = c2 and phi = 0: the two envelopes approach the same
        // recentered profile as |x| grows
        let level = 2.5;
        let prof = Arc::new(
            integrate_profile(&RadialParams::constant(2, 1, level).unwrap(), 2e3, 1e-10).unwrap(),
        );
        let phi = Arc::new(ZeroFn { rho: 1.0 });
        let b = BarrierSet::with_defaults(
            BarrierMode::Prescribed {
                level_sub: level,
                level_sup: level,
            },
            phi,
            0.5,
            prof.clone(),
            prof,
        )
        .unwrap();
        let dir = DVector::from_column_slice(&[1.0, 0.0]);
        let mut prev = f64::INFINITY;
        for r in [5.0, 20.0, 80.0, 320.0] {
            let x = &dir * r;
            let gap = b.value(&x, BarrierSide::Upper).unwrap()
                - b.value(&x, BarrierSide::Lower).unwrap();
            assert!(gap >= -1e-10);
            assert!(gap < prev);
            prev = gap;
        }
        assert!(prev < 2e-3, "asymptotic gap {prev}");
    }

    #[test]
    fn calibration_paths() {
        let prof = soliton_profile(2, 1, 2.0);
        let rho = prof.params.slope_limit();
        // phi = 0: the initial tilt is accepted
        let m = calibrate_m(
            BarrierMode::Soliton { c_speed: 2.0 },
            Arc::new(ZeroFn { rho }),
            prof.clone(),
            prof.clone(),
        )
        .unwrap();
        assert_eq!(m, 1.0);

        // small first harmonic: finite tilt, sandwich holds
        let phi = Arc::new(HarmonicFn::circle(rho, 0.0, vec![0.1], vec![]));
        let m = calibrate_m(
            BarrierMode::Soliton { c_speed: 2.0 },
            phi.clone(),
            prof.clone(),
            prof.clone(),
        )
        .unwrap();
        assert!(m >= 1.0 && m < 1e3);
        let b = BarrierSet::with_defaults(
            BarrierMode::Soliton { c_speed: 2.0 },
            phi,
            m,
            prof.clone(),
            prof.clone(),
        )
        .unwrap();
        for t in 0..8 {
            let ang = t as f64 * 0.8;
            let x = DVector::from_column_slice(&[ang.cos() * 2.0, ang.sin() * 2.0]);
            assert!(
                b.value(&x, BarrierSide::Lower).unwrap()
                    <= b.value(&x, BarrierSide::Upper).unwrap() + 1e-10
            );
        }

        // discontinuous phi: calibration fails
        let mesh = sphere_mesh(2, 256);
        let step = MeshSampledFn::from_fn(rho, mesh, |y| if y[0] > 0.0 { 0.5 } else { -0.5 });
        let err = calibrate_m(
            BarrierMode::Soliton { c_speed: 2.0 },
            Arc::new(step),
            prof.clone(),
            prof,
        );
        assert!(matches!(err, Err(Error::Calibration(_))), "{err:?}");
    }


    #[test]
    fn sandwich_reports() {
        let b = soliton_barriers(1.0);
        let grid = Grid::centered(2, 3.0, 33).unwrap();
        let mask = ball_mask(&grid, 3.0);

        // the exact radial soliton sits between the envelopes
        let prof = b.profile_sub.clone();
        let f = GraphField::new(
            ScalarField::from_fn(grid.clone(), mask.clone(), |x| prof.height_at(x.norm())),
            b.rho,
        );
        let rep = check_sandwich(&f, &b).unwrap();
        assert!(rep.lower_violation <= 1e-8, "lower {}", rep.lower_violation);
        assert!(rep.upper_violation <= 1e-8, "upper {}", rep.upper_violation);

        // a field one above q2 violates the upper side by one
        let b2 = soliton_barriers(1.0);
        let f_above = GraphField::new(
            ScalarField::from_fn(grid.clone(), mask.clone(), |x| {
                b2.value(x, BarrierSide::Upper).unwrap() + 1.0
            }),
            b2.rho,
        );
        let rep = check_sandwich(&f_above, &b2).unwrap();
        assert!((rep.upper_violation - 1.0).abs() < 1e-9);

        // the lower envelope itself never violates its own side
        let b3 = soliton_barriers(1.0);
        let f_q1 = GraphField::new(
            ScalarField::from_fn(grid, mask, |x| b3.value(x, BarrierSide::Lower).unwrap()),
            b3.rho,
        );
        let rep = check_sandwich(&f_q1, &b3).unwrap();
        assert!(rep.lower_violation <= 1e-10);
    }
}
