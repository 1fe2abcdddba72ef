//! Discrete Legendre transform between graph fields and dual potentials.
//!
//! Forward: xi = Du(x), u*(xi) = x . Du - u, sampled at interior nodes and
//! resampled onto a structured ball grid. Inverse: x = Du*(xi),
//! u(x) = xi . Du* - u*. The scattered resampling uses barycentric linear
//! interpolation over the triangulated image of the source cells in 2-D and
//! inverse-distance blending in 3-D.

use std::sync::Arc;

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::field::{ball_mask, DualField, GraphField, Grid, ScalarField};

/// Resampling controls for the discrete transform.
#[derive(Debug, Clone, Copy)]
pub struct LegendreOptions {
    /// Target grid nodes per side; None picks half the source resolution.
    /// Differentiating resampled values amplifies interpolation noise by
    /// 1/h^2, so the target defaults to a coarser grid than the source.
    pub target_m: Option<usize>,
    /// Fraction of the covered image radius used for the target ball.
    pub radius_factor: f64,
}

impl Default for LegendreOptions {
    fn default() -> Self {
        Self {
            target_m: None,
            radius_factor: 0.95,
        }
    }
}

fn pick_target_m(opts: &LegendreOptions, source_m: usize) -> usize {
    opts.target_m.unwrap_or_else(|| (source_m / 2 + 1).max(17))
}

/// Provenance retained for round-trip accounting.
#[derive(Debug, Clone, serde::Serialize)]
pub struct ResampleReport {
    pub source_h: f64,
    pub covered_radius: f64,
    pub target_radius: f64,
    pub samples: usize,
    pub unfilled_nodes: usize,
}

struct Scattered {
    points: Vec<DVector<f64>>,
    values: Vec<f64>,
    /// Source-grid quads (2-D only), as sample indices.
    quads: Vec<[usize; 4]>,
}

/// Interior samples of the forward map of a graph field.
fn forward_samples(f: &GraphField) -> Result<Scattered> {
    f.field.require_convex()?;
    let grid = &f.field.grid;
    let mut sample_of = vec![usize::MAX; grid.len()];
    let mut points = Vec::new();
    let mut values = Vec::new();
    for &i in &f.field.mask.interior {
        let x = grid.position(i);
        let xi = f.field.gradient_at(i);
        let v = x.dot(&xi) - f.field.values[i];
        sample_of[i] = points.len();
        points.push(xi);
        values.push(v);
    }
    let quads = source_quads(grid, &sample_of);
    Ok(Scattered {
        points,
        values,
        quads,
    })
}

/// Interior samples of the inverse map of a dual field.
fn inverse_samples(g: &DualField) -> Result<Scattered> {
    let bad = g.nonconvex_nodes();
    if !bad.is_empty() {
        return Err(Error::Convexity {
            count: bad.len(),
            first: bad.into_iter().take(8).collect(),
        });
    }
    let grid = &g.field.grid;
    let mut sample_of = vec![usize::MAX; grid.len()];
    let mut points = Vec::new();
    let mut values = Vec::new();
    for &i in &g.field.mask.interior {
        let xi = grid.position(i);
        let (v, dv, _) = g.total_jet_at(i)?;
        sample_of[i] = points.len();
        points.push(dv.clone());
        values.push(xi.dot(&dv) - v);
    }
    let quads = source_quads(grid, &sample_of);
    Ok(Scattered {
        points,
        values,
        quads,
    })
}

/// 2-D cells whose four corners are all interior samples.
fn source_quads(grid: &Grid, sample_of: &[usize]) -> Vec<[usize; 4]> {
    if grid.n != 2 {
        return Vec::new();
    }
    let mut quads = Vec::new();
    for i0 in 0..grid.shape[0] - 1 {
        for j0 in 0..grid.shape[1] - 1 {
            let c = [
                grid.flat(&[i0, j0]),
                grid.flat(&[i0 + 1, j0]),
                grid.flat(&[i0 + 1, j0 + 1]),
                grid.flat(&[i0, j0 + 1]),
            ];
            let s = [
                sample_of[c[0]],
                sample_of[c[1]],
                sample_of[c[2]],
                sample_of[c[3]],
            ];
            if s.iter().all(|&v| v != usize::MAX) {
                quads.push(s);
            }
        }
    }
    quads
}

/// Largest ball radius safely covered by the sample cloud: the smallest
/// point norm over the outermost sample layer (2-D: quad corners on the
/// image hull; fallback: directional minimum of the maximal radius).
fn covered_radius(sc: &Scattered, n: usize) -> f64 {
    if n == 2 && !sc.quads.is_empty() {
        // corners used by fewer than 4 quads lie on the image boundary
        let mut use_count = vec![0usize; sc.points.len()];
        for q in &sc.quads {
            for &s in q {
                use_count[s] += 1;
            }
        }
        let mut rim = f64::INFINITY;
        for (i, &c) in use_count.iter().enumerate() {
            if c > 0 && c < 4 {
                rim = rim.min(sc.points[i].norm());
            }
        }
        if rim.is_finite() {
            return rim;
        }
    }
    // directional sweep: min over directions of the largest sample radius
    // within a cone around the direction
    let dirs = 64usize;
    let mut worst = f64::INFINITY;
    for d in 0..dirs {
        let theta = d as f64 / dirs as f64 * std::f64::consts::TAU;
        let dir = if n == 2 {
            DVector::from_column_slice(&[theta.cos(), theta.sin()])
        } else {
            let phi = (d as f64 / dirs as f64 - 0.5) * std::f64::consts::PI;
            DVector::from_column_slice(&[
                theta.cos() * phi.cos(),
                theta.sin() * phi.cos(),
                phi.sin(),
            ])
        };
        let mut best = 0.0_f64;
        for p in sc.points.iter() {
            let along = p.dot(&dir);
            if along > best && (p - &dir * along).norm() < 0.25 * along.max(1e-12) {
                best = along;
            }
        }
        worst = worst.min(best);
    }
    if worst.is_finite() {
        worst
    } else {
        0.0
    }
}

/// Uniform spatial bins over the sample bounding box.
struct Bins {
    origin: Vec<f64>,
    cell: f64,
    dims: Vec<usize>,
    slots: Vec<Vec<usize>>,
    n: usize,
}

impl Bins {
    fn build(points: &[DVector<f64>], n: usize, target_per_cell: f64) -> Self {
        let mut lo = vec![f64::INFINITY; n];
        let mut hi = vec![f64::NEG_INFINITY; n];
        for p in points {
            for d in 0..n {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let span: f64 = (0..n).map(|d| hi[d] - lo[d]).fold(0.0, f64::max).max(1e-12);
        let cells = (points.len() as f64 / target_per_cell).powf(1.0 / n as f64);
        let cell = (span / cells.max(1.0)).max(1e-12);
        let dims: Vec<usize> = (0..n)
            .map(|d| (((hi[d] - lo[d]) / cell).ceil() as usize + 1).max(1))
            .collect();
        let total: usize = dims.iter().product();
        let mut bins = Self {
            origin: lo,
            cell,
            dims,
            slots: vec![Vec::new(); total],
            n,
        };
        for (i, p) in points.iter().enumerate() {
            let idx = bins.index_of(p);
            bins.slots[idx].push(i);
        }
        bins
    }

    fn coords(&self, p: &DVector<f64>) -> Vec<usize> {
        (0..self.n)
            .map(|d| {
                (((p[d] - self.origin[d]) / self.cell).floor() as i64)
                    .clamp(0, self.dims[d] as i64 - 1) as usize
            })
            .collect()
    }

    fn index_of(&self, p: &DVector<f64>) -> usize {
        let c = self.coords(p);
        let mut idx = 0;
        for d in 0..self.n {
            idx = idx * self.dims[d] + c[d];
        }
        idx
    }

    fn neighborhood(&self, p: &DVector<f64>, reach: i64) -> Vec<usize> {
        let c = self.coords(p);
        let mut offsets = vec![vec![]];
        for _ in 0..self.n {
            let mut next = Vec::new();
            for base in &offsets {
                for d in -reach..=reach {
                    let mut v: Vec<i64> = base.clone();
                    v.push(d);
                    next.push(v);
                }
            }
            offsets = next;
        }
        let mut out = Vec::new();
        for off in &offsets {
            let mut idx = 0usize;
            let mut ok = true;
            for d in 0..self.n {
                let v = c[d] as i64 + off[d];
                if v < 0 || v >= self.dims[d] as i64 {
                    ok = false;
                    break;
                }
                idx = idx * self.dims[d] + v as usize;
            }
            if ok {
                out.extend_from_slice(&self.slots[idx]);
            }
        }
        out
    }
}

/// Resample scattered values at the target points. 2-D uses barycentric
/// interpolation over triangulated source quads; 3-D uses inverse-distance
/// blending over nearby samples.
fn resample(sc: &Scattered, n: usize, targets: &[DVector<f64>]) -> Vec<Option<f64>> {
    if n == 2 && !sc.quads.is_empty() {
        resample_triangulated(sc, targets)
    } else {
        resample_idw(sc, n, targets)
    }
}

fn resample_triangulated(sc: &Scattered, targets: &[DVector<f64>]) -> Vec<Option<f64>> {
    let mut tris: Vec<[usize; 3]> = Vec::with_capacity(2 * sc.quads.len());
    for q in &sc.quads {
        tris.push([q[0], q[1], q[2]]);
        tris.push([q[0], q[2], q[3]]);
    }
    let centers: Vec<DVector<f64>> = tris
        .iter()
        .map(|t| (sc.points[t[0]].clone() + &sc.points[t[1]] + &sc.points[t[2]]) / 3.0)
        .collect();
    let bins = Bins::build(&centers, 2, 4.0);
    let mut diam = 0.0_f64;
    for t in &tris {
        for e in 0..3 {
            diam = diam.max((&sc.points[t[e]] - &sc.points[t[(e + 1) % 3]]).norm());
        }
    }
    let reach = ((diam / bins.cell).ceil() as i64 + 1).max(1);

    targets
        .iter()
        .map(|q| {
            for ti in bins.neighborhood(q, reach) {
                let t = tris[ti];
                let p0 = &sc.points[t[0]];
                let p1 = &sc.points[t[1]];
                let p2 = &sc.points[t[2]];
                let d1 = p1 - p0;
                let d2 = p2 - p0;
                let det = d1[0] * d2[1] - d1[1] * d2[0];
                if det.abs() < 1e-16 {
                    continue;
                }
                let rq = q - p0;
                let a = (rq[0] * d2[1] - rq[1] * d2[0]) / det;
                let b = (d1[0] * rq[1] - d1[1] * rq[0]) / det;
                let tol = -1e-10;
                if a >= tol && b >= tol && 1.0 - a - b >= tol {
                    return Some(
                        (1.0 - a - b) * sc.values[t[0]]
                            + a * sc.values[t[1]]
                            + b * sc.values[t[2]],
                    );
                }
            }
            None
        })
        .collect()
}

fn resample_idw(sc: &Scattered, n: usize, targets: &[DVector<f64>]) -> Vec<Option<f64>> {
    let bins = Bins::build(&sc.points, n, 2.0);
    let h = bins.cell;
    targets
        .iter()
        .map(|q| {
            let mut cand = bins.neighborhood(q, 1);
            if cand.is_empty() {
                cand = bins.neighborhood(q, 2);
            }
            let mut wsum = 0.0;
            let mut acc = 0.0;
            let mut nearest = f64::INFINITY;
            for &s in &cand {
                let d = (&sc.points[s] - q).norm();
                nearest = nearest.min(d);
                if d < 1e-14 {
                    return Some(sc.values[s]);
                }
                let w = 1.0 / (d * d);
                wsum += w;
                acc += w * sc.values[s];
            }
            if wsum > 0.0 && nearest <= 2.0 * h {
                Some(acc / wsum)
            } else {
                None
            }
        })
        .collect()
}

fn fill_field(
    grid: Grid,
    mask: Arc<crate::field::DomainMask>,
    resampled: &[Option<f64>],
    nodes: &[usize],
) -> (ScalarField, usize) {
    let mut f = ScalarField::new(grid, mask);
    let mut filled: Vec<bool> = vec![false; f.grid.len()];
    for (t, &node) in nodes.iter().enumerate() {
        if let Some(v) = resampled[t] {
            f.values[node] = v;
            filled[node] = true;
        }
    }
    // nearest-filled fallback for stray unfilled rim nodes
    let mut unfilled = 0usize;
    for i in 0..f.grid.len() {
        if f.mask.in_domain(i) && !filled[i] {
            unfilled += 1;
            let x = f.grid.position(i);
            let mut best = f64::INFINITY;
            let mut val = 0.0;
            for j in 0..f.grid.len() {
                if filled[j] {
                    let d = (f.grid.position(j) - &x).norm();
                    if d < best {
                        best = d;
                        val = f.values[j];
                    }
                }
            }
            f.values[i] = val;
        }
    }
    (f, unfilled)
}

/// Pointwise discrete conjugate sup_x (x . xi - u(x)) over the field nodes,
/// sharpened by the second-order Legendre expansion at the maximizing node:
/// the nodal max underestimates the true conjugate by O(h^2) (the parabola
/// gap between nodes), and adding (1/2) d^T H^{-1} d with d = xi - Du(x*)
/// removes that bias. Returns None when the maximizer touches the domain
/// edge, i.e. the slope xi is not covered by the field's gradient image.
pub fn discrete_conjugate(f: &GraphField, xi: &DVector<f64>) -> Option<f64> {
    let grid = &f.field.grid;
    let mut best = f64::NEG_INFINITY;
    let mut arg = usize::MAX;
    for i in 0..grid.len() {
        if !f.field.mask.in_domain(i) {
            continue;
        }
        let v = grid.position(i).dot(xi) - f.field.values[i];
        if v > best {
            best = v;
            arg = i;
        }
    }
    if arg == usize::MAX {
        return None;
    }
    // reject slopes whose maximizer sits on the outer node layers
    let edge = crate::field::moore_offsets(grid.n).into_iter().any(|d| {
        let two = d.iter().map(|&v| v * 2).collect::<Vec<_>>();
        grid.offset(arg, &two)
            .map(|j| !f.field.mask.in_domain(j))
            .unwrap_or(true)
    });
    if edge {
        return None;
    }
    if f.field.mask.is_interior(arg) {
        let du = f.field.gradient_at(arg);
        let hess = f.field.hessian_at(arg);
        let delta = xi - du;
        if let Some(ch) = hess.clone().cholesky() {
            let step = ch.solve(&delta);
            let corr = 0.5 * delta.dot(&step);
            // the correction is a within-cell refinement; anything larger
            // signals a poorly resolved Hessian and is dropped
            if corr.is_finite() && corr >= 0.0 && corr < 10.0 * grid.h * grid.h {
                return Some(best + corr);
            }
        }
    }
    Some(best)
}

/// Legendre transform of a strictly convex graph field, resampled onto a
/// structured ball grid in the Gauss-map image.
pub fn legendre_forward(
    f: &GraphField,
    opts: &LegendreOptions,
) -> Result<(DualField, ResampleReport)> {
    let n = f.field.grid.n;
    let sc = forward_samples(f)?;
    if sc.points.len() < 4 {
        return Err(Error::Argument(
            "too few interior samples to transform".into(),
        ));
    }
    let covered = covered_radius(&sc, n);
    let target_radius = (covered * opts.radius_factor).min(f.slope_bound * (1.0 - 1e-9));
    if target_radius <= 0.0 {
        return Err(Error::Argument("empty Gauss-map image".into()));
    }
    let m = pick_target_m(opts, f.field.grid.shape[0]);
    let grid = Grid::centered(n, target_radius, m)?;
    let mask = ball_mask(&grid, target_radius);
    let nodes: Vec<usize> = (0..grid.len()).filter(|&i| mask.in_domain(i)).collect();
    let targets: Vec<DVector<f64>> = nodes.iter().map(|&i| grid.position(i)).collect();
    let values = resample(&sc, n, &targets);
    let (field, unfilled) = fill_field(grid, mask, &values, &nodes);
    let report = ResampleReport {
        source_h: f.field.grid.h,
        covered_radius: covered,
        target_radius,
        samples: sc.points.len(),
        unfilled_nodes: unfilled,
    };
    Ok((DualField::new(field, None, f.slope_bound), report))
}

/// Inverse transform of a strictly convex dual field back to a graph field.
pub fn legendre_inverse(
    g: &DualField,
    opts: &LegendreOptions,
) -> Result<(GraphField, ResampleReport)> {
    let n = g.field.grid.n;
    let sc = inverse_samples(g)?;
    if sc.points.len() < 4 {
        return Err(Error::Argument(
            "too few interior samples to transform".into(),
        ));
    }
    let covered = covered_radius(&sc, n);
    let target_radius = covered * opts.radius_factor;
    if target_radius <= 0.0 {
        return Err(Error::Argument("empty gradient image".into()));
    }
    let m = pick_target_m(opts, g.field.grid.shape[0]);
    let grid = Grid::centered(n, target_radius, m)?;
    let mask = ball_mask(&grid, target_radius);
    let nodes: Vec<usize> = (0..grid.len()).filter(|&i| mask.in_domain(i)).collect();
    let targets: Vec<DVector<f64>> = nodes.iter().map(|&i| grid.position(i)).collect();
    let values = resample(&sc, n, &targets);
    let (field, unfilled) = fill_field(grid, mask, &values, &nodes);
    let report = ResampleReport {
        source_h: g.field.grid.h,
        covered_radius: covered,
        target_radius,
        samples: sc.points.len(),
        unfilled_nodes: unfilled,
    };
    Ok((GraphField::new(field, g.ball_radius), report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{ball_mask, DualBase, ScalarField};

    fn hyperboloid_field(half: f64, m: usize) -> GraphField {
        let grid = Grid::centered(2, half, m).unwrap();
        let mask = ball_mask(&grid, half);
        let f = ScalarField::from_fn(grid, mask, |x| (1.0 + x.norm_squared()).sqrt());
        GraphField::new(f, 1.0)
    }

    #[test]
    fn forward_hyperboloid_matches_conjugate() {
        let f = hyperboloid_field(2.0, 65);
        let h = f.field.grid.h;
        let (dual, rep) = legendre_forward(&f, &LegendreOptions::default()).unwrap();
        assert!(rep.covered_radius > 0.8);
        let mut worst = 0.0_f64;
        for &i in &dual.field.mask.interior {
            let xi = dual.field.grid.position(i);
            let exact = -(1.0 - xi.norm_squared()).sqrt();
            worst = worst.max((dual.field.values[i] - exact).abs());
        }
        assert!(worst <= 10.0 * h * h, "worst dual error {worst}");
    }

    #[test]
    fn quadratic_self_conjugacy() {
        let grid = Grid::centered(2, 1.0, 49).unwrap();
        let mask = ball_mask(&grid, 1.0);
        let c = 0.7;
        let f = GraphField::new(
            ScalarField::from_fn(grid, mask, |x| 0.5 * x.norm_squared() + c),
            1.0,
        );
        let (dual, _) = legendre_forward(&f, &LegendreOptions::default()).unwrap();
        let mut worst = 0.0_f64;
        for &i in &dual.field.mask.interior {
            let xi = dual.field.grid.position(i);
            let exact = 0.5 * xi.norm_squared() - c;
            worst = worst.max((dual.field.values[i] - exact).abs());
        }
        // piecewise-linear resampling of a quadratic leaves O(h^2) error
        let h = dual.field.grid.h;
        assert!(worst <= 0.5 * h * h, "worst {worst}");
    }

    #[test]
    fn non_convex_input_rejected() {
        let grid = Grid::centered(2, 1.0, 17).unwrap();
        let mask = ball_mask(&grid, 1.0);
        let f = GraphField::new(
            ScalarField::from_fn(grid, mask, |x| 0.3 * (x[0] * x[0] - x[1] * x[1])),
            1.0,
        );
        assert!(matches!(
            legendre_forward(&f, &LegendreOptions::default()),
            Err(Error::Convexity { .. })
        ));
    }

    #[test]
    fn roundtrip_on_hyperboloid() {
        let f = hyperboloid_field(2.0, 65);
        let h = f.field.grid.h;
        let opts = LegendreOptions::default();
        let (dual, _) = legendre_forward(&f, &opts).unwrap();
        let (back, _) = legendre_inverse(&dual, &opts).unwrap();
        let mut worst = 0.0_f64;
        for &i in &back.field.mask.interior {
            let x = back.field.grid.position(i);
            if x.norm() > 1.5 {
                continue;
            }
            let exact = (1.0 + x.norm_squared()).sqrt();
            worst = worst.max((back.field.values[i] - exact).abs());
        }
        assert!(worst <= 10.0 * h * h, "roundtrip error {worst}");
    }

    #[test]
    fn inverse_of_analytic_dual_with_base() {
        // a dual field with hyperboloid base and zero correction inverts to
        // the hyperboloid
        let grid = Grid::centered(2, 0.85, 65).unwrap();
        let mask = ball_mask(&grid, 0.85);
        let field = ScalarField::new(grid, mask);
        let dual = DualField::new(
            field,
            Some(DualBase::ScaledHyperboloid { alpha: 1.0 }),
            1.0,
        );
        let (back, _) = legendre_inverse(&dual, &LegendreOptions::default()).unwrap();
        let mut worst = 0.0_f64;
        for &i in &back.field.mask.interior {
            let x = back.field.grid.position(i);
            let exact = (1.0 + x.norm_squared()).sqrt();
            worst = worst.max((back.field.values[i] - exact).abs());
        }
        assert!(worst < 5e-3, "inverse error {worst}");
    }

    #[test]
    fn forward_3d_idw_smoke() {
        let grid = Grid::centered(3, 1.2, 25).unwrap();
        let mask = ball_mask(&grid, 1.2);
        let f = GraphField::new(
            ScalarField::from_fn(grid, mask, |x| (1.0 + x.norm_squared()).sqrt()),
            1.0,
        );
        let opts = LegendreOptions {
            target_m: Some(21),
            radius_factor: 0.9,
        };
        let (dual, rep) = legendre_forward(&f, &opts).unwrap();
        assert!(rep.samples > 1000);
        let mut worst = 0.0_f64;
        for &i in &dual.field.mask.interior {
            let xi = dual.field.grid.position(i);
            let exact = -(1.0 - xi.norm_squared()).sqrt();
            worst = worst.max((dual.field.values[i] - exact).abs());
        }
        // inverse-distance blending is low order; the tolerance budget is
        // generous by design
        assert!(worst < 0.05, "worst 3d dual error {worst}");
    }
}
