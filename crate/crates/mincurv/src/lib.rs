//! Spacelike hypersurfaces of prescribed sigma_k curvature and downward
//! translating solitons in Minkowski space R^{n,1}.
//!
//! The crate provides:
//!
//! - [`symfun`]: elementary symmetric polynomials, the curvature quotient
//!   `(sigma_n/sigma_{n-k})^{1/k}` and their derivatives on the Garding cone;
//! - [`geometry`]: curvature of spacelike graphs, support function, Legendre
//!   duality between graphs and convex potentials on the Gauss-map ball;
//! - [`radial`]: the radial translating-soliton ODE and constant-curvature
//!   profiles, with asymptotic-constant extraction;
//! - [`barriers`]: sub/supersolution envelopes built from tilted, recentered
//!   radial profiles;
//! - [`solver`]: damped-Newton solution of the primal and dual Dirichlet
//!   problems on structured masked grids;
//! - [`entire`]: exhaustion runs approximating entire solutions;
//! - [`verify`]: numerical checks of a-priori bounds on computed solutions;
//! - [`io`]: CSV/JSON artifact serialization with content-hash manifests.

pub mod barriers;
pub mod entire;
pub mod error;
pub mod field;
pub mod geometry;
pub mod io;
pub mod legendre;
pub mod linalg;
pub mod radial;
pub mod solver;
pub mod sphere;
pub mod symfun;
pub mod verify;

pub use error::{Error, Result};
