//! Finite-difference solvers for conserved (H^{-1}) and non-conserved
//! (L^2) gradient flows of a regularized logarithmic free energy on
//! periodic, cell-centered grids in 2-D and 3-D.
//!
//! The free energy couples a Flory-Huggins mixing term, singular at
//! phi = +-1 and smoothly extended below a cutoff `delta`, with a square
//! gradient penalty. The implicit schemes here inherit the barrier: solved
//! exactly, their iterates stay strictly inside (-1, 1) regardless of time
//! step, and the convex-splitting variants dissipate the discrete energy
//! unconditionally.
//!
//! Layout:
//!
//! * [`grid`] - grid geometry, flat-array fields, and the periodic
//!   difference calculus (gradient, divergence, Laplacian, weighted
//!   divergence, discrete norms including the H^{-1} norm).
//! * [`potential`] - model parameters, the regularized potential and its
//!   derivatives, discrete energies.
//! * [`schemes`] - one-step and two-step time discretizations assembled as
//!   nonlinear systems, plus the scalar non-conserved stepper.
//! * [`multigrid`] - the nonlinear FAS V-cycle solver with a cell-wise
//!   Newton-linearized block smoother.
//! * [`diagnostics`] - simulation driver with per-step audits, and the
//!   refinement, solver-complexity, and scheme-comparison benchmarks.
//!
//! A minimal conserved-flow run:
//!
//! ```
//! use flory::{
//!     diagnostics::{run_simulation, random_uniform_ic, RunOptions},
//!     grid::GridSpec,
//!     multigrid::MgConfig,
//!     potential::ModelParams,
//!     schemes::{SchemeKind, SchemeState},
//! };
//!
//! let spec = GridSpec::new(2, 32, 1.0).unwrap();
//! let params = ModelParams::new(0.05, 3.0, 1e-5).unwrap();
//! let phi0 = random_uniform_ic(spec, 0.2, 0.05, 1).unwrap();
//! let state = SchemeState::initial(phi0, &params).unwrap();
//! let traj = run_simulation(
//!     state, SchemeKind::Cs1, &params, 1e-3, 10,
//!     &MgConfig::default(), &RunOptions::default(),
//! ).unwrap();
//! assert!(traj.failure.is_none());
//! assert!(traj.strictly_separated(params.delta));
//! ```

pub mod diagnostics;
pub mod error;
pub mod grid;
pub mod multigrid;
pub mod potential;
pub mod schemes;

pub use error::{Error, Result};
pub use grid::{CellField, FaceField, GridSpec};
pub use multigrid::{MgConfig, SolveReport, SweepOrder};
pub use potential::{discrete_energy, Mobility, ModelParams};
pub use schemes::{SchemeKind, SchemeState, StepReport};
