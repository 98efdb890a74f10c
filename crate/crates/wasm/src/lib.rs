//! Browser bindings for the phase-field solver. Three operations are
//! exported: an interactive simulation that steps the solver and renders
//! the field to RGBA, sampling of the homogeneous free energy and chemical
//! potential for plotting, and the V-cycle residual history of the most
//! recent step. All numerical logic lives in plain functions so the crate
//! tests on the host target; the `wasm_bindgen` layer only converts errors.

use wasm_bindgen::prelude::*;

use flory::diagnostics::random_uniform_ic;
use flory::potential::discrete_energy;
use flory::schemes::step;
use flory::{GridSpec, MgConfig, ModelParams, SchemeKind, SchemeState, StepReport};

// ---------------------------------------------------------------------------
// field rendering
// ---------------------------------------------------------------------------

/// Diverging colormap on phi in [-1, 1]: cool below zero, warm above,
/// near-white at the mean. Values outside [-1, 1] clamp to the endpoints.
pub fn colormap(phi: f64) -> [u8; 4] {
    const COOL: [f64; 3] = [59.0, 76.0, 192.0];
    const MID: [f64; 3] = [221.0, 221.0, 221.0];
    const WARM: [f64; 3] = [180.0, 4.0, 38.0];
    let t = phi.clamp(-1.0, 1.0);
    let (a, b, s) = if t < 0.0 {
        (COOL, MID, t + 1.0)
    } else {
        (MID, WARM, t)
    };
    let mut px = [255u8; 4];
    for c in 0..3 {
        px[c] = (a[c] + (b[c] - a[c]) * s).round() as u8;
    }
    px
}

/// Row-major RGBA image of a 2-D field (one pixel per cell).
pub fn field_to_rgba(data: &[f64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(4 * data.len());
    for &v in data {
        out.extend_from_slice(&colormap(v));
    }
    out
}

// ---------------------------------------------------------------------------
// potential curves
// ---------------------------------------------------------------------------

/// Samples the homogeneous free-energy density f(phi) and chemical
/// potential f'(phi) on `samples` uniformly spaced points covering
/// [-1.05, 1.05] (the overshoot shows the regularized branch). Returns
/// flat (phi, f, mu) triplets.
pub fn sample_potential_curves(
    theta0: f64,
    delta: f64,
    samples: usize,
) -> flory::Result<Vec<f64>> {
    let params = ModelParams::new(1.0, theta0, delta)?;
    let n = samples.max(2);
    let mut out = Vec::with_capacity(3 * n);
    // centered so the grid is exactly sign-symmetric in floating point
    let center = (n - 1) as f64 / 2.0;
    for i in 0..n {
        let phi = 2.1 * (i as f64 - center) / (n - 1) as f64;
        out.push(phi);
        out.push(params.fc_value(phi) - params.fe_value(phi));
        out.push(params.fc_prime(phi) - phi);
    }
    Ok(out)
}

/// Positive root of ln((1+phi)/(1-phi)) = 2 theta0 phi, the equilibrium
/// phase composition of the unregularized potential. Zero when the well is
/// single (theta0 <= 1).
pub fn equilibrium_composition(theta0: f64) -> f64 {
    if !(theta0 > 1.0) {
        return 0.0;
    }
    let g = |phi: f64| ((1.0 + phi) / (1.0 - phi)).ln() - 2.0 * theta0 * phi;
    // g < 0 just right of the origin, g -> +inf toward phi = 1
    let (mut lo, mut hi) = (1e-12, 1.0 - 1e-15);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if g(mid) < 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

// ---------------------------------------------------------------------------
// interactive simulation
// ---------------------------------------------------------------------------

#[wasm_bindgen]
pub struct Sim {
    state: SchemeState,
    kind: SchemeKind,
    params: ModelParams,
    mg: MgConfig,
    dt: f64,
    steps_taken: u64,
    initial_mass: f64,
    last_report: Option<StepReport>,
}

impl Sim {
    /// Plain constructor used by both the wasm wrapper and host tests.
    pub fn build(
        n: usize,
        scheme: &str,
        epsilon: f64,
        theta0: f64,
        dt: f64,
        mean: f64,
        amplitude: f64,
        seed: u64,
    ) -> flory::Result<Sim> {
        let kind: SchemeKind = scheme.parse()?;
        let params = ModelParams::new(epsilon, theta0, 1e-5)?;
        let spec = GridSpec::new(2, n, 1.0)?;
        let phi0 = random_uniform_ic(spec, mean, amplitude, seed)?;
        let state = SchemeState::initial(phi0, &params)?;
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(flory::Error::InvalidParameter {
                name: "dt",
                reason: format!("must be positive and finite, got {dt}"),
            });
        }
        let initial_mass = state.phi().mean();
        Ok(Sim {
            state,
            kind,
            params,
            // small interactive grids sit at coarse interface resolution,
            // where the two-sweep cycle can stall; three sweeps is robust
            mg: MgConfig {
                lambda: 3,
                ..MgConfig::default()
            },
            dt,
            steps_taken: 0,
            initial_mass,
            last_report: None,
        })
    }

    pub fn advance_inner(&mut self, steps: u32) -> flory::Result<()> {
        for _ in 0..steps {
            // two-step schemes bootstrap their first step with the
            // first-order splitting, as the trajectory runner does
            let kind = if self.kind.needs_history() && self.state.phi_prev().is_none() {
                SchemeKind::Cs1
            } else {
                self.kind
            };
            let (next, report) = step(&self.state, kind, &self.params, self.dt, &self.mg)?;
            self.state = next;
            self.steps_taken += 1;
            self.last_report = Some(report);
        }
        Ok(())
    }
}

#[wasm_bindgen]
impl Sim {
    /// Builds a simulation on an n-by-n unit box with a uniform random
    /// initial mixture. `scheme` is one of cs1|be|bdf2_es|bdf2|ac1.
    #[wasm_bindgen(constructor)]
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n: usize,
        scheme: &str,
        epsilon: f64,
        theta0: f64,
        dt: f64,
        mean: f64,
        amplitude: f64,
        seed: u64,
    ) -> Result<Sim, JsError> {
        Sim::build(n, scheme, epsilon, theta0, dt, mean, amplitude, seed)
            .map_err(|e| JsError::new(&e.to_string()))
    }

    /// Advances the simulation by `steps` time steps.
    pub fn advance(&mut self, steps: u32) -> Result<(), JsError> {
        self.advance_inner(steps)
            .map_err(|e| JsError::new(&e.to_string()))
    }

    /// RGBA image of the current field, one pixel per cell, row-major.
    pub fn render_rgba(&self) -> Vec<u8> {
        field_to_rgba(self.state.phi().data())
    }

    /// V-cycle residual norms of the most recent step (index 0 is the
    /// initial-guess residual). Empty before the first step.
    pub fn residual_history(&self) -> Vec<f64> {
        self.last_report
            .as_ref()
            .map(|r| r.residual_history.clone())
            .unwrap_or_default()
    }

    pub fn grid_n(&self) -> usize {
        self.state.phi().spec().n()
    }

    pub fn time(&self) -> f64 {
        self.steps_taken as f64 * self.dt
    }

    pub fn steps_taken(&self) -> u32 {
        self.steps_taken as u32
    }

    pub fn energy(&self) -> f64 {
        discrete_energy(self.state.phi(), &self.params).value
    }

    pub fn phi_min(&self) -> f64 {
        self.state.phi().min_max().0
    }

    pub fn phi_max(&self) -> f64 {
        self.state.phi().min_max().1
    }

    /// Deviation of the current mean from the initial mean; identically
    /// zero (to rounding) for the conserved dynamics, nonzero for ac1.
    pub fn mass_drift(&self) -> f64 {
        self.state.phi().mean() - self.initial_mass
    }

    pub fn last_vcycles(&self) -> u32 {
        self.last_report.as_ref().map(|r| r.cycles as u32).unwrap_or(0)
    }
}

// ---------------------------------------------------------------------------
// free functions exported to the page
// ---------------------------------------------------------------------------

/// See `sample_potential_curves`.
#[wasm_bindgen]
pub fn potential_curves(theta0: f64, delta: f64, samples: usize) -> Result<Vec<f64>, JsError> {
    sample_potential_curves(theta0, delta, samples).map_err(|e| JsError::new(&e.to_string()))
}

/// See `equilibrium_composition`.
#[wasm_bindgen]
pub fn binodal_point(theta0: f64) -> f64 {
    equilibrium_composition(theta0)
}
