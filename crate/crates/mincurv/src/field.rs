//! Structured tensor grids with domain masks, discrete fields and their
//! derivative stencils.
//!
//! A field lives on a uniform grid over a box; the domain is carved out by a
//! mask. Interior nodes have their full 3^n neighborhood inside the domain
//! (so centered first and second differences, including the mixed terms, are
//! available); the remaining in-domain nodes are boundary nodes where values
//! are pinned to boundary data.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::JetPoint;
use crate::radial::RadialProfile;

/// Uniform tensor grid over a box.
#[derive(Debug, Clone, PartialEq)]
pub struct Grid {
    pub n: usize,
    pub shape: Vec<usize>,
    pub origin: Vec<f64>,
    pub h: f64,
}

impl Grid {
    /// Cube [-half, half]^n with m nodes per side.
    pub fn centered(n: usize, half: f64, m: usize) -> Result<Self> {
        if m < 5 {
            return Err(Error::Argument(format!("grid needs m >= 5 nodes, got {m}")));
        }
        let h = 2.0 * half / (m - 1) as f64;
        Ok(Self {
            n,
            shape: vec![m; n],
            origin: vec![-half; n],
            h,
        })
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn strides(&self) -> Vec<usize> {
        let mut s = vec![1; self.n];
        for d in (0..self.n.saturating_sub(1)).rev() {
            s[d] = s[d + 1] * self.shape[d + 1];
        }
        s
    }

    pub fn multi(&self, flat: usize) -> Vec<usize> {
        let mut rem = flat;
        let strides = self.strides();
        (0..self.n)
            .map(|d| {
                let i = rem / strides[d];
                rem %= strides[d];
                i
            })
            .collect()
    }

    pub fn flat(&self, multi: &[usize]) -> usize {
        let strides = self.strides();
        multi.iter().zip(&strides).map(|(i, s)| i * s).sum()
    }

    pub fn position(&self, flat: usize) -> DVector<f64> {
        let mi = self.multi(flat);
        DVector::from_iterator(
            self.n,
            mi.iter()
                .zip(&self.origin)
                .map(|(&i, &o)| o + i as f64 * self.h),
        )
    }

    /// Neighbor at a signed multi-index offset, if inside the bounding box.
    pub fn offset(&self, flat: usize, delta: &[i64]) -> Option<usize> {
        let mi = self.multi(flat);
        let mut out = Vec::with_capacity(self.n);
        for d in 0..self.n {
            let v = mi[d] as i64 + delta[d];
            if v < 0 || v >= self.shape[d] as i64 {
                return None;
            }
            out.push(v as usize);
        }
        Some(self.flat(&out))
    }
}

/// All 3^n signed offsets (including zero), the stencil neighborhood.
pub fn moore_offsets(n: usize) -> Vec<Vec<i64>> {
    let mut out = vec![vec![]];
    for _ in 0..n {
        let mut next = Vec::with_capacity(out.len() * 3);
        for base in &out {
            for d in [-1i64, 0, 1] {
                let mut v = base.clone();
                v.push(d);
                next.push(v);
            }
        }
        out = next;
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NodeClass {
    Interior,
    Boundary,
    Exterior,
}

/// Classification of every grid node plus index lists.
#[derive(Debug, Clone)]
pub struct DomainMask {
    pub class: Vec<NodeClass>,
    pub interior: Vec<usize>,
    pub boundary: Vec<usize>,
}

impl DomainMask {
    /// Build from a membership predicate: interior nodes are in-domain nodes
    /// whose whole 3^n neighborhood is in-domain.
    pub fn from_predicate<F>(grid: &Grid, in_domain: F) -> Self
    where
        F: Fn(&DVector<f64>) -> bool,
    {
        let len = grid.len();
        let inside: Vec<bool> = (0..len).map(|i| in_domain(&grid.position(i))).collect();
        let offsets = moore_offsets(grid.n);
        let mut class = vec![NodeClass::Exterior; len];
        let mut interior = Vec::new();
        let mut boundary = Vec::new();
        for i in 0..len {
            if !inside[i] {
                continue;
            }
            let full = offsets.iter().all(|d| {
                grid.offset(i, d)
                    .map(|j| inside[j])
                    .unwrap_or(false)
            });
            if full {
                class[i] = NodeClass::Interior;
                interior.push(i);
            } else {
                class[i] = NodeClass::Boundary;
                boundary.push(i);
            }
        }
        Self {
            class,
            interior,
            boundary,
        }
    }

    pub fn is_interior(&self, i: usize) -> bool {
        self.class[i] == NodeClass::Interior
    }

    pub fn in_domain(&self, i: usize) -> bool {
        self.class[i] != NodeClass::Exterior
    }
}

/// A scalar field on a masked grid. Exterior entries hold NaN.
#[derive(Debug, Clone)]
pub struct ScalarField {
    pub grid: Grid,
    pub mask: Arc<DomainMask>,
    pub values: Vec<f64>,
}

impl ScalarField {
    pub fn new(grid: Grid, mask: Arc<DomainMask>) -> Self {
        let mut values = vec![f64::NAN; grid.len()];
        for &i in mask.interior.iter().chain(&mask.boundary) {
            values[i] = 0.0;
        }
        Self { grid, mask, values }
    }

    pub fn from_fn<F>(grid: Grid, mask: Arc<DomainMask>, f: F) -> Self
    where
        F: Fn(&DVector<f64>) -> f64,
    {
        let mut s = Self::new(grid, mask);
        for i in 0..s.grid.len() {
            if s.mask.in_domain(i) {
                s.values[i] = f(&s.grid.position(i));
            }
        }
        s
    }

    /// Centered gradient at an interior node.
    pub fn gradient_at(&self, i: usize) -> DVector<f64> {
        let n = self.grid.n;
        let mut g = DVector::zeros(n);
        let inv2h = 1.0 / (2.0 * self.grid.h);
        for d in 0..n {
            let mut dp = vec![0i64; n];
            dp[d] = 1;
            let mut dm = vec![0i64; n];
            dm[d] = -1;
            let up = self.grid.offset(i, &dp).expect("interior node");
            let dn = self.grid.offset(i, &dm).expect("interior node");
            g[d] = (self.values[up] - self.values[dn]) * inv2h;
        }
        g
    }

    /// Centered Hessian at an interior node (mixed terms by the 4-point
    /// cross difference).
    pub fn hessian_at(&self, i: usize) -> DMatrix<f64> {
        let n = self.grid.n;
        let h2 = self.grid.h * self.grid.h;
        let mut hess = DMatrix::zeros(n, n);
        for a in 0..n {
            let mut dp = vec![0i64; n];
            dp[a] = 1;
            let mut dm = vec![0i64; n];
            dm[a] = -1;
            let up = self.grid.offset(i, &dp).unwrap();
            let dn = self.grid.offset(i, &dm).unwrap();
            hess[(a, a)] = (self.values[up] - 2.0 * self.values[i] + self.values[dn]) / h2;
            for b in a + 1..n {
                let mut dpp = vec![0i64; n];
                dpp[a] = 1;
                dpp[b] = 1;
                let mut dmm = vec![0i64; n];
                dmm[a] = -1;
                dmm[b] = -1;
                let mut dpm = vec![0i64; n];
                dpm[a] = 1;
                dpm[b] = -1;
                let mut dmp = vec![0i64; n];
                dmp[a] = -1;
                dmp[b] = 1;
                let v = (self.values[self.grid.offset(i, &dpp).unwrap()]
                    + self.values[self.grid.offset(i, &dmm).unwrap()]
                    - self.values[self.grid.offset(i, &dpm).unwrap()]
                    - self.values[self.grid.offset(i, &dmp).unwrap()])
                    / (4.0 * h2);
                hess[(a, b)] = v;
                hess[(b, a)] = v;
            }
        }
        hess
    }

    /// One-sided second-order gradient usable at boundary nodes. Falls back
    /// to first order where only one inward neighbor exists.
    pub fn one_sided_gradient_at(&self, i: usize) -> Option<DVector<f64>> {
        let n = self.grid.n;
        let h = self.grid.h;
        let mut g = DVector::zeros(n);
        for d in 0..n {
            let mut dp = vec![0i64; n];
            dp[d] = 1;
            let mut dm = vec![0i64; n];
            dm[d] = -1;
            let up = self.grid.offset(i, &dp).filter(|&j| self.mask.in_domain(j));
            let dn = self.grid.offset(i, &dm).filter(|&j| self.mask.in_domain(j));
            g[d] = match (up, dn) {
                (Some(u), Some(l)) => (self.values[u] - self.values[l]) / (2.0 * h),
                (Some(u), None) => {
                    let mut d2 = vec![0i64; n];
                    d2[d] = 2;
                    match self.grid.offset(i, &d2).filter(|&j| self.mask.in_domain(j)) {
                        Some(u2) => {
                            (-3.0 * self.values[i] + 4.0 * self.values[u] - self.values[u2])
                                / (2.0 * h)
                        }
                        None => (self.values[u] - self.values[i]) / h,
                    }
                }
                (None, Some(l)) => {
                    let mut d2 = vec![0i64; n];
                    d2[d] = -2;
                    match self.grid.offset(i, &d2).filter(|&j| self.mask.in_domain(j)) {
                        Some(l2) => {
                            (3.0 * self.values[i] - 4.0 * self.values[l] + self.values[l2])
                                / (2.0 * h)
                        }
                        None => (self.values[i] - self.values[l]) / h,
                    }
                }
                (None, None) => return None,
            };
        }
        Some(g)
    }

    /// Multilinear interpolation; None outside the covered cells.
    pub fn interpolate(&self, x: &DVector<f64>) -> Option<f64> {
        let n = self.grid.n;
        let mut base = Vec::with_capacity(n);
        let mut frac = Vec::with_capacity(n);
        for d in 0..n {
            let t = (x[d] - self.grid.origin[d]) / self.grid.h;
            if t < -1e-9 || t > (self.grid.shape[d] - 1) as f64 + 1e-9 {
                return None;
            }
            let i = (t.floor() as usize).min(self.grid.shape[d] - 2);
            base.push(i);
            frac.push((t - i as f64).clamp(0.0, 1.0));
        }
        let mut acc = 0.0;
        for corner in 0..(1usize << n) {
            let mut w = 1.0;
            let mut mi = Vec::with_capacity(n);
            for d in 0..n {
                if corner >> d & 1 == 1 {
                    w *= frac[d];
                    mi.push(base[d] + 1);
                } else {
                    w *= 1.0 - frac[d];
                    mi.push(base[d]);
                }
            }
            let v = self.values[self.grid.flat(&mi)];
            if !v.is_finite() {
                return None;
            }
            acc += w * v;
        }
        Some(acc)
    }

    /// Interior nodes with a non-positive-definite discrete Hessian.
    pub fn nonconvex_nodes(&self) -> Vec<usize> {
        let mut bad = Vec::new();
        for &i in &self.mask.interior {
            let h = self.hessian_at(i);
            if !is_positive_definite(&h) {
                bad.push(i);
            }
        }
        bad
    }

    /// Error unless the discrete Hessian is positive definite at every
    /// interior node.
    pub fn require_convex(&self) -> Result<()> {
        let bad = self.nonconvex_nodes();
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Convexity {
                count: bad.len(),
                first: bad.into_iter().take(8).collect(),
            })
        }
    }
}

pub fn is_positive_definite(m: &DMatrix<f64>) -> bool {
    m.clone().cholesky().is_some()
}

/// Primal height field u(x) with its spacelike slope bound (1 in prescribed
/// mode, C_tilde in soliton mode).
#[derive(Debug, Clone)]
pub struct GraphField {
    pub field: ScalarField,
    pub slope_bound: f64,
}

impl GraphField {
    pub fn new(field: ScalarField, slope_bound: f64) -> Self {
        Self { field, slope_bound }
    }

    pub fn jet_at(&self, i: usize) -> JetPoint {
        JetPoint::new(
            self.field.grid.position(i),
            self.field.values[i],
            self.field.gradient_at(i),
            self.field.hessian_at(i),
        )
    }

    /// Interior nodes violating the slope bound, with the worst slope.
    pub fn spacelike_violations(&self) -> (Vec<usize>, f64) {
        let mut bad = Vec::new();
        let mut worst = 0.0_f64;
        for &i in &self.field.mask.interior {
            let g = self.field.gradient_at(i).norm();
            worst = worst.max(g);
            if g >= self.slope_bound {
                bad.push(i);
            }
        }
        (bad, worst)
    }
}

/// Analytic radial reference subtracted from dual unknowns, so the grid only
/// carries the bounded correction. The conjugate of the radial profile is
/// log-singular at the rim, where uniform stencils lose accuracy.
#[derive(Debug, Clone)]
pub enum DualBase {
    /// Conjugate of a radial profile: value r tau - z0(r) at r(tau).
    Profile(Arc<RadialProfile>),
    /// Conjugate of u = sqrt(alpha^2 + |x|^2): -alpha sqrt(1 - |xi|^2).
    ScaledHyperboloid { alpha: f64 },
}

impl DualBase {
    /// (value, gradient, hessian) of the base at xi.
    pub fn jet(&self, xi: &DVector<f64>) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let n = xi.len();
        match self {
            DualBase::ScaledHyperboloid { alpha } => {
                let r2 = xi.norm_squared();
                if r2 >= 1.0 {
                    return Err(Error::Domain("|xi| >= 1 in hyperboloid base".into()));
                }
                let w = (1.0 - r2).sqrt();
                let grad = xi * (alpha / w);
                let mut hess = DMatrix::identity(n, n) * (alpha / w);
                for a in 0..n {
                    for b in 0..n {
                        hess[(a, b)] += alpha * xi[a] * xi[b] / (w * w * w);
                    }
                }
                Ok((-alpha * w, grad, hess))
            }
            DualBase::Profile(prof) => {
                let tau = xi.norm();
                let slope0 = prof.params.initial_slope();
                if tau < 1e-10 {
                    let r = tau / slope0;
                    let value = r * tau - prof.height_at(r);
                    return Ok((
                        value,
                        xi / slope0,
                        DMatrix::identity(n, n) / slope0,
                    ));
                }
                let r = prof.radius_for_slope(tau)?;
                let value = r * tau - prof.height_at(r);
                let dir = xi / tau;
                let grad = &dir * r;
                let yp = prof.slope_deriv_at(r).max(1e-300);
                let radial = 1.0 / yp;
                let tangential = r / tau;
                let mut hess = DMatrix::identity(n, n) * tangential;
                for a in 0..n {
                    for b in 0..n {
                        hess[(a, b)] += (radial - tangential) * dir[a] * dir[b];
                    }
                }
                Ok((value, grad, hess))
            }
        }
    }
}

/// Dual potential field on a Gauss-map ball: grid correction values plus an
/// optional analytic base.
#[derive(Debug, Clone)]
pub struct DualField {
    pub field: ScalarField,
    pub base: Option<DualBase>,
    /// Admissible ball radius (1 prescribed, C_tilde soliton).
    pub ball_radius: f64,
}

impl DualField {
    pub fn new(field: ScalarField, base: Option<DualBase>, ball_radius: f64) -> Self {
        Self {
            field,
            base,
            ball_radius,
        }
    }

    pub fn total_value_at(&self, i: usize) -> Result<f64> {
        let v = self.field.values[i];
        match &self.base {
            None => Ok(v),
            Some(b) => Ok(v + b.jet(&self.field.grid.position(i))?.0),
        }
    }

    /// (value, gradient, hessian) of base + correction at an interior node.
    pub fn total_jet_at(&self, i: usize) -> Result<(f64, DVector<f64>, DMatrix<f64>)> {
        let v = self.field.values[i];
        let g = self.field.gradient_at(i);
        let h = self.field.hessian_at(i);
        match &self.base {
            None => Ok((v, g, h)),
            Some(b) => {
                let (bv, bg, bh) = b.jet(&self.field.grid.position(i))?;
                Ok((v + bv, g + bg, h + bh))
            }
        }
    }

    pub fn total_interpolate(&self, xi: &DVector<f64>) -> Option<f64> {
        let v = self.field.interpolate(xi)?;
        match &self.base {
            None => Some(v),
            Some(b) => b.jet(xi).ok().map(|(bv, _, _)| v + bv),
        }
    }

    /// Interior nodes whose total discrete Hessian is not positive definite.
    pub fn nonconvex_nodes(&self) -> Vec<usize> {
        let mut bad = Vec::new();
        for &i in &self.field.mask.interior {
            match self.total_jet_at(i) {
                Ok((_, _, h)) => {
                    if !is_positive_definite(&h) {
                        bad.push(i);
                    }
                }
                Err(_) => bad.push(i),
            }
        }
        bad
    }
}

/// Mask with the outermost `layers` rings of in-domain nodes removed.
/// Rim nodes of resampled fields carry fallback values; checks exclude them.
pub fn shrink_mask(grid: &Grid, mask: &DomainMask, layers: usize) -> Arc<DomainMask> {
    let offsets = moore_offsets(grid.n);
    let mut inside: Vec<bool> = (0..grid.len()).map(|i| mask.in_domain(i)).collect();
    for _ in 0..layers {
        let snapshot = inside.clone();
        for i in 0..grid.len() {
            if !snapshot[i] {
                continue;
            }
            let keep = offsets.iter().all(|d| {
                grid.offset(i, d).map(|j| snapshot[j]).unwrap_or(false)
            });
            if !keep {
                inside[i] = false;
            }
        }
    }
    let mut class = vec![NodeClass::Exterior; grid.len()];
    let mut interior = Vec::new();
    let mut boundary = Vec::new();
    for i in 0..grid.len() {
        if !inside[i] {
            continue;
        }
        let full = offsets.iter().all(|d| {
            grid.offset(i, d).map(|j| inside[j]).unwrap_or(false)
        });
        if full {
            class[i] = NodeClass::Interior;
            interior.push(i);
        } else {
            class[i] = NodeClass::Boundary;
            boundary.push(i);
        }
    }
    Arc::new(DomainMask {
        class,
        interior,
        boundary,
    })
}

/// Ball mask helper: |x| <= radius.
pub fn ball_mask(grid: &Grid, radius: f64) -> Arc<DomainMask> {
    Arc::new(DomainMask::from_predicate(grid, |x| x.norm() <= radius))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_indexing_roundtrip() {
        let g = Grid::centered(2, 1.0, 9).unwrap();
        assert_eq!(g.len(), 81);
        for flat in [0, 17, 80] {
            assert_eq!(g.flat(&g.multi(flat)), flat);
        }
        let p = g.position(g.flat(&[4, 4]));
        assert!(p.norm() < 1e-14);
        assert_eq!(g.offset(g.flat(&[0, 4]), &[-1, 0]), None);
    }

    #[test]
    fn ball_mask_classification() {
        let g = Grid::centered(2, 1.0, 21).unwrap();
        let m = ball_mask(&g, 1.0);
        assert!(!m.interior.is_empty());
        assert!(!m.boundary.is_empty());
        // center is interior, corner exterior
        assert!(m.is_interior(g.flat(&[10, 10])));
        assert_eq!(m.class[g.flat(&[0, 0])], NodeClass::Exterior);
        // every interior node has its full Moore neighborhood in-domain
        for &i in &m.interior {
            for d in moore_offsets(2) {
                let j = g.offset(i, &d).unwrap();
                assert!(m.in_domain(j));
            }
        }
    }

    #[test]
    fn derivatives_are_second_order() {
        let trig = |x: &DVector<f64>| (x[0] * 2.0).sin() * (x[1] * 1.5).cos();
        let err_at = |m: usize| -> (f64, f64) {
            let g = Grid::centered(2, 1.0, m).unwrap();
            let mask = ball_mask(&g, 2.0);
            let f = ScalarField::from_fn(g, mask, trig);
            let j = f.grid.flat(&[(m - 1) / 4, (m - 1) / 3]);
            let xj = f.grid.position(j);
            let ge = 2.0 * (2.0 * xj[0]).cos() * (1.5 * xj[1]).cos();
            let he = -2.0 * (2.0 * xj[0]).cos() * 1.5 * (1.5 * xj[1]).sin();
            (
                (f.gradient_at(j)[0] - ge).abs(),
                (f.hessian_at(j)[(0, 1)] - he).abs(),
            )
        };
        let (g1, h1) = err_at(33);
        let (g2, h2) = err_at(65);
        assert!(g1 < 2e-2 && h1 < 2e-2);
        // halving h divides the error by about 4
        assert!(g1 / g2 > 3.0 && g1 / g2 < 5.0, "grad ratio {}", g1 / g2);
        assert!(h1 / h2 > 3.0 && h1 / h2 < 5.0, "hess ratio {}", h1 / h2);
    }

    #[test]
    fn interpolation_reproduces_linear_functions() {
        let g = Grid::centered(2, 1.0, 17).unwrap();
        let m = ball_mask(&g, 2.0); // whole box in-domain
        let f = ScalarField::from_fn(g, m, |x| 1.0 + 2.0 * x[0] - 0.5 * x[1]);
        for p in [[0.13, -0.41], [0.0, 0.0], [0.99, 0.99]] {
            let x = DVector::from_column_slice(&p);
            let v = f.interpolate(&x).unwrap();
            assert!((v - (1.0 + 2.0 * p[0] - 0.5 * p[1])).abs() < 1e-12);
        }
        assert!(f
            .interpolate(&DVector::from_column_slice(&[1.2, 0.0]))
            .is_none());
    }

    #[test]
    fn convexity_detection() {
        let g = Grid::centered(2, 1.0, 17).unwrap();
        let m = ball_mask(&g, 1.0);
        let convex = ScalarField::from_fn(g.clone(), m.clone(), |x| x.norm_squared());
        assert!(convex.require_convex().is_ok());
        let saddle = ScalarField::from_fn(g, m, |x| x[0] * x[0] - x[1] * x[1]);
        assert!(matches!(
            saddle.require_convex(),
            Err(Error::Convexity { .. })
        ));
    }

    #[test]
    fn hyperboloid_base_jet() {
        let b = DualBase::ScaledHyperboloid { alpha: 0.8 };
        let xi = DVector::from_column_slice(&[0.3, -0.2]);
        let (v, g, h) = b.jet(&xi).unwrap();
        let w = (1.0 - xi.norm_squared()).sqrt();
        assert!((v + 0.8 * w).abs() < 1e-15);
        // finite differences of the value
        let eps = 1e-6;
        for d in 0..2 {
            let mut up = xi.clone();
            up[d] += eps;
            let mut dn = xi.clone();
            dn[d] -= eps;
            let fd = (b.jet(&up).unwrap().0 - b.jet(&dn).unwrap().0) / (2.0 * eps);
            assert!((fd - g[d]).abs() < 1e-8);
            let fdh = (b.jet(&up).unwrap().1[d] - b.jet(&dn).unwrap().1[d]) / (2.0 * eps);
            assert!((fdh - h[(d, d)]).abs() < 1e-7);
        }
    }

    #[test]
    fn profile_base_matches_hyperboloid() {
        // constant mode at level binom(n,k) has conjugate -sqrt(1 - |xi|^2)
        use crate::radial::{integrate_profile, RadialParams};
        use crate::symfun::binomial;
        let p = RadialParams::constant(2, 1, binomial(2, 1)).unwrap();
        let prof = Arc::new(integrate_profile(&p, 2e3, 1e-11).unwrap());
        let base = DualBase::Profile(prof);
        let exact = DualBase::ScaledHyperboloid { alpha: 1.0 };
        for xi in [[0.0, 0.0], [0.4, 0.1], [-0.6, 0.5]] {
            let x = DVector::from_column_slice(&xi);
            let (v, g, h) = base.jet(&x).unwrap();
            let (ve, ge, he) = exact.jet(&x).unwrap();
            // values carry the fitted-normalization constant, derivatives
            // do not
            assert!((v - ve).abs() < 3e-3, "value at {xi:?}: {v} vs {ve}");
            assert!((g - ge).norm() < 1e-6, "gradient at {xi:?}");
            assert!((h - he).norm() < 1e-4, "hessian at {xi:?}");
        }
    }
}
