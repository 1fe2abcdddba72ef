//! Boundary data on spheres: direction meshes and C^2 functions given by
//! truncated harmonic coefficient tables (exact tangential gradients), plus
//! a mesh-sampled wrapper whose gradients come from finite differences.

use nalgebra::DVector;

/// A function on the sphere of radius `rho`, queried through unit
/// directions y (the evaluation point is rho * y).
pub trait SphereFn: Send + Sync {
    fn radius(&self) -> f64;
    /// phi(rho y).
    fn value(&self, y: &DVector<f64>) -> f64;
    /// Tangential gradient of phi at rho y (a vector orthogonal to y).
    fn tangential_gradient(&self, y: &DVector<f64>) -> DVector<f64>;
    /// Estimate of the C^2 norm, used to cap tilt calibration.
    fn c2_bound(&self) -> f64;
}

/// phi identically zero.
pub struct ZeroFn {
    pub rho: f64,
}

impl SphereFn for ZeroFn {
    fn radius(&self) -> f64 {
        self.rho
    }
    fn value(&self, _y: &DVector<f64>) -> f64 {
        0.0
    }
    fn tangential_gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        DVector::zeros(y.len())
    }
    fn c2_bound(&self) -> f64 {
        0.0
    }
}

/// Truncated harmonic expansion.
///
/// n = 2: phi(theta) = a0 + sum_m cos_coeffs[m-1] cos(m theta)
///                        + sin_coeffs[m-1] sin(m theta).
/// n = 3: a0 plus degree-1 terms (y1, y2, y3) and degree-2 terms
/// (y1 y2, y2 y3, y1 y3, y1^2 - y2^2, 3 y3^2 - 1) with the given
/// coefficients.
#[derive(Debug, Clone)]
pub struct HarmonicFn {
    pub n: usize,
    pub rho: f64,
    pub a0: f64,
    pub cos_coeffs: Vec<f64>,
    pub sin_coeffs: Vec<f64>,
    pub deg1: [f64; 3],
    pub deg2: [f64; 5],
}

impl HarmonicFn {
    pub fn zero(n: usize, rho: f64) -> Self {
        Self {
            n,
            rho,
            a0: 0.0,
            cos_coeffs: Vec::new(),
            sin_coeffs: Vec::new(),
            deg1: [0.0; 3],
            deg2: [0.0; 5],
        }
    }

    pub fn circle(rho: f64, a0: f64, cos_coeffs: Vec<f64>, sin_coeffs: Vec<f64>) -> Self {
        Self {
            n: 2,
            rho,
            a0,
            cos_coeffs,
            sin_coeffs,
            deg1: [0.0; 3],
            deg2: [0.0; 5],
        }
    }

    pub fn sphere3(rho: f64, a0: f64, deg1: [f64; 3], deg2: [f64; 5]) -> Self {
        Self {
            n: 3,
            rho,
            a0,
            cos_coeffs: Vec::new(),
            sin_coeffs: Vec::new(),
            deg1,
            deg2,
        }
    }

    /// Value and ambient gradient of the degree-homogeneous polynomial
    /// extension, evaluated at the unit direction.
    fn poly_eval(&self, y: &DVector<f64>) -> (f64, DVector<f64>) {
        match self.n {
            2 => {
                let theta = y[1].atan2(y[0]);
                let mut v = self.a0;
                let mut dv_dtheta = 0.0;
                for (m0, &c) in self.cos_coeffs.iter().enumerate() {
                    let m = (m0 + 1) as f64;
                    v += c * (m * theta).cos();
                    dv_dtheta -= c * m * (m * theta).sin();
                }
                for (m0, &c) in self.sin_coeffs.iter().enumerate() {
                    let m = (m0 + 1) as f64;
                    v += c * (m * theta).sin();
                    dv_dtheta += c * m * (m * theta).cos();
                }
                let tangent = DVector::from_column_slice(&[-y[1], y[0]]);
                (v, tangent * dv_dtheta)
            }
            3 => {
                let (y1, y2, y3) = (y[0], y[1], y[2]);
                let v = self.a0
                    + self.deg1[0] * y1
                    + self.deg1[1] * y2
                    + self.deg1[2] * y3
                    + self.deg2[0] * y1 * y2
                    + self.deg2[1] * y2 * y3
                    + self.deg2[2] * y1 * y3
                    + self.deg2[3] * (y1 * y1 - y2 * y2)
                    + self.deg2[4] * (3.0 * y3 * y3 - 1.0);
                let g = DVector::from_column_slice(&[
                    self.deg1[0]
                        + self.deg2[0] * y2
                        + self.deg2[2] * y3
                        + 2.0 * self.deg2[3] * y1,
                    self.deg1[1]
                        + self.deg2[0] * y1
                        + self.deg2[1] * y3
                        - 2.0 * self.deg2[3] * y2,
                    self.deg1[2]
                        + self.deg2[1] * y2
                        + self.deg2[2] * y1
                        + 6.0 * self.deg2[4] * y3,
                ]);
                (v, g)
            }
            _ => unreachable!("harmonic tables exist for n = 2, 3 only"),
        }
    }
}

impl SphereFn for HarmonicFn {
    fn radius(&self) -> f64 {
        self.rho
    }

    fn value(&self, y: &DVector<f64>) -> f64 {
        self.poly_eval(y).0
    }

    fn tangential_gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        let (_, g) = self.poly_eval(y);
        // project out the radial component and account for the sphere radius
        let radial = g.dot(y);
        (g - y * radial) / self.rho
    }

    fn c2_bound(&self) -> f64 {
        let rho2 = self.rho * self.rho;
        match self.n {
            2 => {
                let mut b = self.a0.abs();
                for (m0, &c) in self.cos_coeffs.iter().enumerate() {
                    let m = (m0 + 1) as f64;
                    b += c.abs() * (1.0 + m / self.rho + m * m / rho2);
                }
                for (m0, &c) in self.sin_coeffs.iter().enumerate() {
                    let m = (m0 + 1) as f64;
                    b += c.abs() * (1.0 + m / self.rho + m * m / rho2);
                }
                b
            }
            _ => {
                let mut b = self.a0.abs();
                for c in self.deg1 {
                    b += c.abs() * (1.0 + 1.0 / self.rho + 1.0 / rho2);
                }
                for c in self.deg2 {
                    b += c.abs() * (1.0 + 2.0 / self.rho + 6.0 / rho2);
                }
                b
            }
        }
    }
}

/// Arbitrary sampled data on a direction mesh; tangential gradients by
/// finite differences between mesh neighbors. This is the path for boundary
/// data without exact derivatives, including the deliberately non-smooth
/// inputs the calibration error path must reject.
pub struct MeshSampledFn {
    pub rho: f64,
    pub mesh: Vec<DVector<f64>>,
    pub values: Vec<f64>,
}

impl MeshSampledFn {
    pub fn from_fn<F: Fn(&DVector<f64>) -> f64>(rho: f64, mesh: Vec<DVector<f64>>, f: F) -> Self {
        let values = mesh.iter().map(|y| f(y)).collect();
        Self { rho, mesh, values }
    }

    fn nearest(&self, y: &DVector<f64>) -> usize {
        let mut best = 0;
        let mut bd = f64::INFINITY;
        for (i, m) in self.mesh.iter().enumerate() {
            let d = (m - y).norm_squared();
            if d < bd {
                bd = d;
                best = i;
            }
        }
        best
    }
}

impl SphereFn for MeshSampledFn {
    fn radius(&self) -> f64 {
        self.rho
    }

    fn value(&self, y: &DVector<f64>) -> f64 {
        self.values[self.nearest(y)]
    }

    fn tangential_gradient(&self, y: &DVector<f64>) -> DVector<f64> {
        // weighted least squares of a linear model over nearby mesh nodes,
        // projected onto the tangent plane
        let i0 = self.nearest(y);
        let y0 = &self.mesh[i0];
        let n = y0.len();
        // gather a handful of closest nodes
        let mut order: Vec<usize> = (0..self.mesh.len()).collect();
        order.sort_by(|&a, &b| {
            (&self.mesh[a] - y0)
                .norm_squared()
                .partial_cmp(&(&self.mesh[b] - y0).norm_squared())
                .unwrap()
        });
        let take = (2 * n + 3).min(order.len());
        let mut ata = nalgebra::DMatrix::<f64>::zeros(n, n);
        let mut atb = DVector::<f64>::zeros(n);
        for &j in order.iter().take(take).skip(1) {
            let d = (&self.mesh[j] - y0) * self.rho;
            let df = self.values[j] - self.values[i0];
            ata += &d * d.transpose();
            atb += d * df;
        }
        // regularize the radial null direction
        for a in 0..n {
            for b in 0..n {
                ata[(a, b)] += y0[a] * y0[b];
            }
        }
        let g = ata.lu().solve(&atb).unwrap_or_else(|| DVector::zeros(n));
        let radial = g.dot(y0);
        g - y0 * radial
    }

    fn c2_bound(&self) -> f64 {
        // second differences between consecutive mesh nodes
        let mut worst = 0.0_f64;
        let spacing = (2.0 / (self.mesh.len() as f64).sqrt()).max(1e-6) * self.rho;
        for i in 0..self.mesh.len() {
            let g = self.tangential_gradient(&self.mesh[i]);
            worst = worst.max(g.norm() / spacing);
        }
        worst + self.values.iter().fold(0.0_f64, |a, v| a.max(v.abs()))
    }
}

/// Direction mesh on S^{n-1}: uniform angles for n = 2, a Fibonacci lattice
/// for n = 3.
pub fn sphere_mesh(n: usize, count: usize) -> Vec<DVector<f64>> {
    match n {
        2 => (0..count)
            .map(|i| {
                let t = i as f64 / count as f64 * std::f64::consts::TAU;
                DVector::from_column_slice(&[t.cos(), t.sin()])
            })
            .collect(),
        3 => {
            let golden = (1.0 + 5.0_f64.sqrt()) / 2.0;
            (0..count)
                .map(|i| {
                    let z = 1.0 - 2.0 * (i as f64 + 0.5) / count as f64;
                    let r = (1.0 - z * z).sqrt();
                    let t = std::f64::consts::TAU * (i as f64) / golden;
                    DVector::from_column_slice(&[r * t.cos(), r * t.sin(), z])
                })
                .collect()
        }
        _ => panic!("sphere meshes exist for n = 2, 3 only"),
    }
}

/// Default mesh sizes: 256 directions for n = 2, 1024 for n = 3.
pub fn default_mesh(n: usize) -> Vec<DVector<f64>> {
    sphere_mesh(n, if n == 2 { 256 } else { 1024 })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fd_tangential(f: &dyn SphereFn, y: &DVector<f64>) -> DVector<f64> {
        // central differences along great circles through y
        let n = y.len();
        let rho = f.radius();
        let mut g = DVector::zeros(n);
        let eps = 1e-6;
        // tangent basis by Gram-Schmidt on coordinate vectors
        let mut basis = Vec::new();
        for d in 0..n {
            let mut e = DVector::zeros(n);
            e[d] = 1.0;
            let mut t = &e - y * y.dot(&e);
            for b in &basis {
                let b: &DVector<f64> = b;
                t -= b * b.dot(&t);
            }
            if t.norm() > 1e-8 {
                basis.push(t.normalize());
            }
        }
        for t in &basis {
            let up = (y + t * eps).normalize();
            let dn = (y - t * eps).normalize();
            let df = (f.value(&up) - f.value(&dn)) / (2.0 * eps * rho);
            g += t * df;
        }
        g
    }

    #[test]
    fn circle_harmonic_gradient_matches_fd() {
        let f = HarmonicFn::circle(0.866, 0.3, vec![0.2, -0.1], vec![0.05, 0.0, 0.4]);
        for k in 0..8 {
            let t = k as f64 * 0.7;
            let y = DVector::from_column_slice(&[t.cos(), t.sin()]);
            let g = f.tangential_gradient(&y);
            let fd = fd_tangential(&f, &y);
            assert!((g - &fd).norm() < 1e-6 * (1.0 + fd.norm()));
        }
    }

    #[test]
    fn sphere3_harmonic_gradient_matches_fd() {
        let f = HarmonicFn::sphere3(1.0, 0.1, [0.3, -0.2, 0.15], [0.1, 0.0, -0.05, 0.2, 0.07]);
        for y in sphere_mesh(3, 24) {
            let g = f.tangential_gradient(&y);
            let fd = fd_tangential(&f, &y);
            assert!((g - &fd).norm() < 1e-5 * (1.0 + fd.norm()));
            // gradient is tangential
            assert!(f.tangential_gradient(&y).dot(&y).abs() < 1e-12);
        }
    }

    #[test]
    fn meshes_are_unit_and_spread() {
        for (n, count) in [(2usize, 256usize), (3, 1024)] {
            let mesh = sphere_mesh(n, count);
            assert_eq!(mesh.len(), count);
            for y in &mesh {
                assert!((y.norm() - 1.0).abs() < 1e-12);
            }
            // antipodal coverage: some direction within 0.2 of -mesh[0]
            let target = -&mesh[0];
            assert!(mesh.iter().any(|y| (y - &target).norm() < 0.2));
        }
    }

    #[test]
    fn mesh_sampled_gradient_roughly_matches_smooth_truth() {
        let mesh = sphere_mesh(2, 512);
        let f = MeshSampledFn::from_fn(1.0, mesh, |y| y[0] * 0.5);
        let y = DVector::from_column_slice(&[0.6_f64.cos(), 0.6_f64.sin()]);
        let g = f.tangential_gradient(&y);
        let exact = HarmonicFn::circle(1.0, 0.0, vec![0.5], vec![]).tangential_gradient(&y);
        assert!((g - &exact).norm() < 0.05);
    }
}
