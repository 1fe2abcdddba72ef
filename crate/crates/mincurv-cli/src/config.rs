//! JSON run configurations. Every config validates fully before any
//! computation starts; schema violations exit with code 2.

use serde::{Deserialize, Serialize};

use mincurv::error::{Error, Result};
use mincurv::solver::{DualRhs, PrimalEq, PrimalRhs, SolveOptions};
use mincurv::sphere::HarmonicFn;

/// Right-hand-side whitelist. `constant`, `radial_poly` and `separable`
/// give psi(x, u) with psi_u >= 0; `soliton` selects the root-form
/// translating-soliton equation with speed C.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RhsSpec {
    Constant { value: f64 },
    RadialPoly { coeffs: Vec<f64> },
    Separable { coeffs: Vec<f64>, beta: f64 },
    Soliton { c: f64 },
}

impl RhsSpec {
    pub fn primal_eq(&self) -> Result<PrimalEq> {
        let eq = match self {
            RhsSpec::Constant { value } => PrimalEq::Sigma {
                rhs: PrimalRhs::Constant { value: *value },
            },
            RhsSpec::RadialPoly { coeffs } => PrimalEq::Sigma {
                rhs: PrimalRhs::RadialPoly {
                    coeffs: coeffs.clone(),
                },
            },
            RhsSpec::Separable { coeffs, beta } => PrimalEq::Sigma {
                rhs: PrimalRhs::Separable {
                    coeffs: coeffs.clone(),
                    beta: *beta,
                },
            },
            RhsSpec::Soliton { c } => {
                if !(*c > 1.0) {
                    return Err(Error::Schema("soliton speed needs C > 1".into()));
                }
                PrimalEq::SolitonRoot { c_speed: *c }
            }
        };
        if let PrimalEq::Sigma { rhs } = &eq {
            rhs.validate().map_err(|e| Error::Schema(e.to_string()))?;
        }
        Ok(eq)
    }

    pub fn dual_rhs(&self, k: usize) -> Result<DualRhs> {
        Ok(match self {
            RhsSpec::Constant { value } => {
                if !(*value > 0.0) {
                    return Err(Error::Schema("psi must be positive".into()));
                }
                DualRhs::Constant {
                    value: value.powf(-1.0 / k as f64),
                }
            }
            RhsSpec::Soliton { c } => {
                if !(*c > 1.0) {
                    return Err(Error::Schema("soliton speed needs C > 1".into()));
                }
                DualRhs::SolitonDual { c_speed: *c }
            }
            RhsSpec::RadialPoly { coeffs } => DualRhs::Prescribed {
                rhs: PrimalRhs::RadialPoly {
                    coeffs: coeffs.clone(),
                },
            },
            RhsSpec::Separable { coeffs, beta } => DualRhs::Prescribed {
                rhs: PrimalRhs::Separable {
                    coeffs: coeffs.clone(),
                    beta: *beta,
                },
            },
        })
    }
}

/// Boundary data families with exact derivatives.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BoundarySpec {
    /// Primal: sqrt(alpha^2 + |x|^2); dual: -alpha sqrt(1 - |xi|^2).
    Hyperboloid { alpha: f64 },
    Constant { value: f64 },
    /// Truncated harmonic table evaluated on the direction of the point.
    Harmonics {
        a0: f64,
        #[serde(default)]
        cos: Vec<f64>,
        #[serde(default)]
        sin: Vec<f64>,
    },
}

impl BoundarySpec {
    pub fn primal_fn(&self) -> impl Fn(&nalgebra::DVector<f64>) -> f64 + '_ {
        move |x: &nalgebra::DVector<f64>| match self {
            BoundarySpec::Hyperboloid { alpha } => (alpha * alpha + x.norm_squared()).sqrt(),
            BoundarySpec::Constant { value } => *value,
            BoundarySpec::Harmonics { a0, cos, sin } => {
                let theta = x[1].atan2(x[0]);
                let mut v = *a0;
                for (m0, c) in cos.iter().enumerate() {
                    v += c * ((m0 + 1) as f64 * theta).cos();
                }
                for (m0, c) in sin.iter().enumerate() {
                    v += c * ((m0 + 1) as f64 * theta).sin();
                }
                v
            }
        }
    }

    pub fn dual_fn(&self) -> Result<impl Fn(&nalgebra::DVector<f64>) -> f64 + '_> {
        match self {
            BoundarySpec::Hyperboloid { .. } | BoundarySpec::Constant { .. } => {}
            BoundarySpec::Harmonics { .. } => {
                return Err(Error::Schema(
                    "harmonic boundary data is a primal-form family".into(),
                ))
            }
        }
        Ok(move |xi: &nalgebra::DVector<f64>| match self {
            BoundarySpec::Hyperboloid { alpha } => -alpha * (1.0 - xi.norm_squared()).sqrt(),
            BoundarySpec::Constant { value } => *value,
            BoundarySpec::Harmonics { .. } => unreachable!(),
        })
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DomainSpec {
    pub kind: String,
    pub radius: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub m: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RadialConfig {
    pub n: usize,
    pub k: usize,
    pub rhs: RhsSpec,
    pub r_max: f64,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DirichletConfig {
    pub n: usize,
    pub k: usize,
    pub form: String, // "primal" | "dual"
    pub rhs: RhsSpec,
    pub domain: DomainSpec,
    pub boundary: BoundarySpec,
    pub grid: GridSpec,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    /// Initial-guess bump amplitude over the boundary extension.
    #[serde(default = "default_bump")]
    pub initial_bump: f64,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhiSpec {
    #[serde(default)]
    pub a0: f64,
    #[serde(default)]
    pub cos: Vec<f64>,
    #[serde(default)]
    pub sin: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntireConfig {
    pub mode: String, // "theorem1" | "theorem2" | "theorem3"
    pub n: usize,
    pub k: usize,
    #[serde(default)]
    pub psi: Option<f64>,
    #[serde(default)]
    pub rhs: Option<RhsSpec>,
    #[serde(default)]
    pub c: Option<f64>,
    #[serde(default)]
    pub level_sub: Option<f64>,
    #[serde(default)]
    pub level_sup: Option<f64>,
    #[serde(default)]
    pub base_level: Option<f64>,
    pub stages: usize,
    pub grid_m: usize,
    #[serde(default)]
    pub stage_h: Option<f64>,
    pub watch_radius: f64,
    #[serde(default = "default_watch_m")]
    pub watch_m: usize,
    #[serde(default = "default_tol_entire")]
    pub tol_entire: f64,
    #[serde(default = "default_m_tilt")]
    pub m_tilt: f64,
    #[serde(default)]
    pub phi: Option<PhiSpec>,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_max_iter")]
    pub max_iter: usize,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VerifyConfig {
    /// Directory holding a previous run's artifacts and manifest.
    pub bundle: String,
    #[serde(default)]
    pub seed: u64,
}

fn default_tol() -> f64 {
    1e-10
}
fn default_max_iter() -> usize {
    50
}
fn default_bump() -> f64 {
    0.1
}
fn default_watch_m() -> usize {
    33
}
fn default_tol_entire() -> f64 {
    1e-4
}
fn default_m_tilt() -> f64 {
    0.1
}

impl EntireConfig {
    pub fn to_plan(&self) -> Result<mincurv::entire::ExhaustionPlan> {
        use mincurv::entire::{ExhaustionPlan, PlanMode};
        if self.k < 1 || self.k > self.n || self.n < 2 || self.n > 3 {
            return Err(Error::Schema(format!(
                "need 2 <= n <= 3 and 1 <= k <= n, got n = {}, k = {}",
                self.n, self.k
            )));
        }
        let mode = match self.mode.as_str() {
            "theorem1" => PlanMode::Theorem1 {
                n: self.n,
                k: self.k,
                psi: self
                    .psi
                    .ok_or_else(|| Error::Schema("theorem1 needs psi".into()))?,
                level_sub: self
                    .level_sub
                    .ok_or_else(|| Error::Schema("theorem1 needs level_sub".into()))?,
                level_sup: self
                    .level_sup
                    .ok_or_else(|| Error::Schema("theorem1 needs level_sup".into()))?,
            },
            "theorem2" => {
                let rhs = match &self.rhs {
                    Some(RhsSpec::Constant { value }) => PrimalRhs::Constant { value: *value },
                    Some(RhsSpec::RadialPoly { coeffs }) => PrimalRhs::RadialPoly {
                        coeffs: coeffs.clone(),
                    },
                    Some(RhsSpec::Separable { coeffs, beta }) => PrimalRhs::Separable {
                        coeffs: coeffs.clone(),
                        beta: *beta,
                    },
                    _ => {
                        return Err(Error::Schema(
                            "theorem2 needs a prescribed rhs (constant/radial_poly/separable)"
                                .into(),
                        ))
                    }
                };
                PlanMode::Theorem2 {
                    n: self.n,
                    k: self.k,
                    rhs,
                    level_sub: self
                        .level_sub
                        .ok_or_else(|| Error::Schema("theorem2 needs level_sub".into()))?,
                    level_sup: self
                        .level_sup
                        .ok_or_else(|| Error::Schema("theorem2 needs level_sup".into()))?,
                    base_level: self
                        .base_level
                        .ok_or_else(|| Error::Schema("theorem2 needs base_level".into()))?,
                }
            }
            "theorem3" => PlanMode::Theorem3 {
                n: self.n,
                k: self.k,
                c_speed: self
                    .c
                    .ok_or_else(|| Error::Schema("theorem3 needs the speed c".into()))?,
            },
            other => {
                return Err(Error::Schema(format!(
                    "unknown mode {other:?} (theorem1|theorem2|theorem3)"
                )))
            }
        };
        let mut plan = ExhaustionPlan::defaults(mode);
        plan.stages = self.stages;
        plan.grid_m = self.grid_m;
        plan.stage_h = self.stage_h.or(plan.stage_h);
        plan.watch_radius = self.watch_radius;
        plan.watch_m = self.watch_m;
        plan.tol_entire = self.tol_entire;
        plan.m_tilt = self.m_tilt;
        plan.solve = SolveOptions {
            tol: self.tol,
            max_iter: self.max_iter,
            ..SolveOptions::default()
        };
        if let Some(p) = &self.phi {
            let rho = match &plan.mode {
                mincurv::entire::PlanMode::Theorem3 { c_speed, .. } => {
                    (1.0 - 1.0 / (c_speed * c_speed)).sqrt()
                }
                _ => 1.0,
            };
            if self.n != 2 {
                return Err(Error::Schema(
                    "harmonic boundary tables are wired for n = 2 runs".into(),
                ));
            }
            plan.phi = Some(HarmonicFn::circle(rho, p.a0, p.cos.clone(), p.sin.clone()));
        }
        Ok(plan)
    }
}

/// Load and parse a config file of the given type.
pub fn load<T: for<'de> Deserialize<'de>>(path: &std::path::Path) -> Result<(T, String)> {
    let text = std::fs::read_to_string(path)?;
    let value: T =
        serde_json::from_str(&text).map_err(|e| Error::Schema(format!("config: {e}")))?;
    Ok((value, text))
}
