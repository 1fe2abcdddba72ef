//! Solver cross-checks beyond the unit tests: the 3-D radial oracle, the
//! primal-dual consistency route, and the degenerate-limit conditioning
//! diagnostic.

use std::sync::Arc;

use nalgebra::DVector;

use mincurv::field::{ball_mask, DualBase, Grid, ScalarField};
use mincurv::legendre::{legendre_forward, LegendreOptions};
use mincurv::radial::{integrate_profile, RadialParams};
use mincurv::solver::{
    jacobian_dual, solve_dirichlet_dual, solve_dirichlet_primal, DualRhs, PrimalEq, PrimalRhs,
    SolveOptions,
};

#[test]
fn primal_3d_matches_constant_mode_radial_oracle() {
    // sigma_2 = 2 in R^3 with boundary data from the radial profile; the
    // profile is also the oracle (a scaled hyperboloid in disguise)
    let level = 2.0;
    let prof = Arc::new(
        integrate_profile(&RadialParams::constant(3, 2, level).unwrap(), 1e3, 1e-10).unwrap(),
    );
    let grid = Grid::centered(3, 0.9, 21).unwrap();
    let mask = ball_mask(&grid, 0.9);
    let eq = PrimalEq::Sigma {
        rhs: PrimalRhs::Constant { value: level },
    };
    let opts = SolveOptions {
        tol: 1e-9,
        ..Default::default()
    };
    let p = prof.clone();
    let q = prof.clone();
    let (f, report) = solve_dirichlet_primal(
        grid,
        mask,
        2,
        &eq,
        move |x: &DVector<f64>| p.height_at(x.norm()),
        move |x: &DVector<f64>| {
            q.height_at(x.norm()) + 0.05 * (0.81 - x.norm_squared()).powi(2)
        },
        1.0,
        &opts,
    )
    .unwrap();
    assert!(report.newton_iterations <= 12);
    let mut worst = 0.0_f64;
    for &i in &f.field.mask.interior {
        let x = f.field.grid.position(i);
        worst = worst.max((f.field.values[i] - prof.height_at(x.norm())).abs());
    }
    assert!(worst <= 1e-3, "3d error vs the radial oracle: {worst}");
}

#[test]
fn primal_dual_consistency_constant_psi() {
    // solve the primal problem, transform it, and compare with a direct dual
    // solve on transformed data
    let psi = 2.0;
    let grid = Grid::centered(2, 1.5, 65).unwrap();
    let mask = ball_mask(&grid, 1.5);
    let eq = PrimalEq::Sigma {
        rhs: PrimalRhs::Constant { value: psi },
    };
    let opts = SolveOptions::default();
    let (primal, _) = solve_dirichlet_primal(
        grid,
        mask,
        1,
        &eq,
        |x: &DVector<f64>| (1.0 + x.norm_squared()).sqrt(),
        |x: &DVector<f64>| {
            (1.0 + x.norm_squared()).sqrt() + 0.08 * (2.25 - x.norm_squared()).powi(2) / 5.0
        },
        1.0,
        &opts,
    )
    .unwrap();
    let (dual_of_primal, rep) = legendre_forward(&primal, &LegendreOptions::default()).unwrap();

    // direct dual solve with boundary data resampled from the transform
    let tau = rep.target_radius * 0.9;
    let g = dual_of_primal.clone();
    let gi = dual_of_primal.clone();
    let (dual_direct, _) = solve_dirichlet_dual(
        tau,
        49,
        2,
        1,
        &DualRhs::Constant {
            value: 1.0 / psi, // (sigma_n/sigma_{n-k})^{1/k} = psi^{-1/k}, k = 1
        },
        None,
        1.0,
        move |xi: &DVector<f64>| g.field.interpolate(xi).unwrap(),
        move |xi: &DVector<f64>| gi.field.interpolate(xi).unwrap(),
        &opts,
    )
    .unwrap();
    let h = primal.field.grid.h;
    let resample_tol = rep.source_h * rep.source_h;
    let mut worst = 0.0_f64;
    for &i in &dual_direct.field.mask.interior {
        let xi = dual_direct.field.grid.position(i);
        if let Some(v) = dual_of_primal.field.interpolate(&xi) {
            worst = worst.max((dual_direct.field.values[i] - v).abs());
        }
    }
    assert!(
        worst <= 10.0 * (h * h + resample_tol),
        "primal-dual discrepancy {worst}"
    );
}

#[test]
fn degenerate_dual_limit_conditioning_grows() {
    // diagnostic: as the dual ball approaches the Gauss-map boundary the
    // Jacobian's diagonal spread grows; reported, not certified
    let prof = Arc::new(
        integrate_profile(&RadialParams::constant(2, 1, 2.0).unwrap(), 1e3, 1e-10).unwrap(),
    );
    let mut spreads = Vec::new();
    for r in [0.7, 0.85, 0.95] {
        let grid = Grid::centered(2, r, 33).unwrap();
        let mask = ball_mask(&grid, r);
        let sf = ScalarField::new(grid, mask);
        let g = mincurv::field::DualField::new(sf, Some(DualBase::Profile(prof.clone())), 1.0);
        let jac = jacobian_dual(&g, 1, &DualRhs::Constant { value: 0.5 }).unwrap();
        let diag = jac.diagonal();
        let max = diag.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        let min = diag
            .iter()
            .fold(f64::INFINITY, |m, v| m.min(v.abs().max(1e-300)));
        spreads.push(max / min);
    }
    println!("diagonal spread vs ball radius: {spreads:?}");
    assert!(spreads[0] < spreads[1] && spreads[1] < spreads[2]);
}

#[test]
fn soliton_mode_defect_of_exact_profile() {
    // the normalized radial soliton has vanishing defect against its own
    // expansion, decreasing with radius
    let prof =
        integrate_profile(&RadialParams::soliton(2, 1, 2.0).unwrap(), 2e3, 1e-10).unwrap();
    let dirs = vec![
        DVector::from_column_slice(&[1.0, 0.0]),
        DVector::from_column_slice(&[0.0, 1.0]),
    ];
    let samples = mincurv::geometry::asymptotic_defect(
        |x: &DVector<f64>| Some(prof.height_at(x.norm())),
        |_d: &DVector<f64>| 0.0,
        mincurv::geometry::DefectMode::Soliton {
            c_speed: 2.0,
            n: 2,
            k: 1,
        },
        &[200.0, 1000.0],
        &dirs,
    )
    .unwrap();
    let at = |r: f64| {
        samples
            .iter()
            .filter(|s| s.radius == r)
            .fold(0.0_f64, |m, s| m.max(s.defect.abs()))
    };
    assert!(at(1000.0) < at(200.0));
    assert!(at(1000.0) < 5e-4, "defect at 1e3: {}", at(1000.0));
}
