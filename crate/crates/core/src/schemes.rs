//! Time discretizations of the H^{-1} (conserved) and L^2 (non-conserved)
//! gradient flows of the regularized logarithmic free energy.
//!
//! Each conserved scheme advances (phi^n, mu^n) by solving a coupled system
//! N(phi, mu) = S:
//!
//! * `Cs1` - first-order convex splitting: log part implicit, concave part
//!   explicit, mobility frozen at phi^n. Unconditionally solvable and
//!   energy-stable.
//! * `Be` - backward Euler: concave part implicit too, mobility at the
//!   unknown (Picard-refreshed between V-cycles).
//! * `Bdf2Es` - two-step BDF with extrapolated concave part and the
//!   A dt lap(phi^{n+1} - phi^n) stabilization; decays a modified energy
//!   for A >= 1/16.
//! * `Bdf2` - standard fully implicit two-step BDF, mobility at the unknown.
//!
//! `Ac1` is the L^2-flow analogue of `Cs1` (constant mobility), a single
//! scalar equation per step.
//!
//! Solutions of the implicit log systems stay strictly inside (-1, 1); the
//! solver preserves that because the local Newton updates keep the convex
//! branch's barrier intact. Conserved schemes keep the mean exactly: after
//! each converged solve the remaining tau-sized mean defect is projected
//! out, which is below solver error and restores the telescoping identity
//! mean(phi^{n+1}) = mean(S^(1)).

use crate::error::{Error, Result};
use crate::grid::{laplacian, CellField};
use crate::multigrid::{self, ChCoeffs, MgConfig, SolveReport};
use crate::potential::ModelParams;

/// Available time discretizations.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SchemeKind {
    Cs1,
    Be,
    Bdf2Es,
    Bdf2,
    Ac1,
}

impl SchemeKind {
    /// Two-step methods need phi^{n-1}.
    pub fn needs_history(self) -> bool {
        matches!(self, SchemeKind::Bdf2Es | SchemeKind::Bdf2)
    }

    /// Conserved (H^{-1}) flows keep the mean; the L^2 flow does not.
    pub fn conserves_mass(self) -> bool {
        !matches!(self, SchemeKind::Ac1)
    }

    pub fn name(self) -> &'static str {
        match self {
            SchemeKind::Cs1 => "cs1",
            SchemeKind::Be => "be",
            SchemeKind::Bdf2Es => "bdf2_es",
            SchemeKind::Bdf2 => "bdf2",
            SchemeKind::Ac1 => "ac1",
        }
    }
}

impl std::str::FromStr for SchemeKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cs1" => Ok(SchemeKind::Cs1),
            "be" => Ok(SchemeKind::Be),
            "bdf2_es" => Ok(SchemeKind::Bdf2Es),
            "bdf2" => Ok(SchemeKind::Bdf2),
            "ac1" => Ok(SchemeKind::Ac1),
            other => Err(Error::InvalidParameter {
                name: "scheme",
                reason: format!("unknown scheme '{other}' (cs1|be|bdf2_es|bdf2|ac1)"),
            }),
        }
    }
}

/// Time-stepping state: current field, one history level for two-step
/// methods, the scheme's chemical potential, and the clock.
#[derive(Clone, Debug)]
pub struct SchemeState {
    phi: CellField,
    phi_prev: Option<CellField>,
    mu: CellField,
    time: f64,
    step_index: u64,
}

impl SchemeState {
    /// Start from phi^0 (strictly inside (-1,1)); mu^0 is the scheme-
    /// consistent potential f_c'(phi) - phi - eps^2 lap(phi).
    pub fn initial(phi0: CellField, params: &ModelParams) -> Result<Self> {
        params.validate()?;
        if phi0.norm_linf() >= 1.0 {
            return Err(Error::InvalidParameter {
                name: "phi0",
                reason: format!(
                    "initial data must lie strictly inside (-1,1), |phi|_max = {}",
                    phi0.norm_linf()
                ),
            });
        }
        let mu = chemical_potential(&phi0, params);
        Ok(SchemeState {
            phi: phi0,
            phi_prev: None,
            mu,
            time: 0.0,
            step_index: 0,
        })
    }

    pub fn phi(&self) -> &CellField {
        &self.phi
    }

    pub fn phi_prev(&self) -> Option<&CellField> {
        self.phi_prev.as_ref()
    }

    pub fn mu(&self) -> &CellField {
        &self.mu
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn step_index(&self) -> u64 {
        self.step_index
    }
}

/// mu = f_c'(phi) - phi - eps^2 lap(phi), the semi-implicit potential all
/// first steps and reports use.
pub fn chemical_potential(phi: &CellField, params: &ModelParams) -> CellField {
    let lap = laplacian(phi);
    let mut mu = CellField::zeros(phi.spec());
    let eps2 = params.eps2();
    for ((m, &p), &l) in mu.data_mut().iter_mut().zip(phi.data()).zip(lap.data()) {
        *m = params.fc_prime(p) - p - eps2 * l;
    }
    mu
}

/// A fully assembled implicit system N(phi, mu) = S for one step of a
/// conserved scheme: scheme coefficients, sources, and the field whose face
/// averages feed the mobility.
#[derive(Clone, Debug)]
pub struct SystemAssembly {
    params: ModelParams,
    dt: f64,
    coeffs: ChCoeffs,
    /// Mobility argument: phi^n (Cs1), the extrapolated 2 phi^n - phi^{n-1}
    /// (Bdf2Es), or the running iterate's start (Be/Bdf2).
    lagged: CellField,
    /// True when the mobility sits at the unknown and is Picard-refreshed
    /// from the current iterate between V-cycles.
    mobility_live: bool,
    source1: CellField,
    source2: CellField,
}

impl SystemAssembly {
    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub(crate) fn coeffs(&self) -> ChCoeffs {
        self.coeffs
    }

    pub(crate) fn lagged(&self) -> &CellField {
        &self.lagged
    }

    pub(crate) fn mobility_live(&self) -> bool {
        self.mobility_live
    }

    pub fn source1(&self) -> &CellField {
        &self.source1
    }

    pub fn source2(&self) -> &CellField {
        &self.source2
    }

    /// N(phi, mu) with this assembly's coefficients and mobility.
    pub fn apply_n(&self, phi: &CellField, mu: &CellField) -> (CellField, CellField) {
        multigrid::apply_system(self, phi, mu)
    }

    #[cfg(test)]
    pub(crate) fn set_sources_for_test(&mut self, s1: CellField, s2: CellField) {
        self.source1 = s1;
        self.source2 = s2;
    }
}

fn check_dt(dt: f64) -> Result<()> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive and finite, got {dt}"),
        });
    }
    Ok(())
}

/// Convex splitting:
///   phi - dt div(M(phi^n) grad mu) = phi^n
///   mu - f_c'(phi) + eps^2 lap(phi) = -phi^n.
pub fn assemble_cs1(state: &SchemeState, params: &ModelParams, dt: f64) -> Result<SystemAssembly> {
    params.validate()?;
    check_dt(dt)?;
    let mut source2 = state.phi.clone();
    for v in source2.data_mut() {
        *v = -*v;
    }
    Ok(SystemAssembly {
        params: params.clone(),
        dt,
        coeffs: ChCoeffs {
            dt_eff: dt,
            eps2_eff: params.eps2(),
            c_lin: 0.0,
        },
        lagged: state.phi.clone(),
        mobility_live: false,
        source1: state.phi.clone(),
        source2,
    })
}

/// Backward Euler:
///   phi - dt div(M(phi) grad mu) = phi^n
///   mu - f_c'(phi) + phi + eps^2 lap(phi) = 0.
pub fn assemble_be(state: &SchemeState, params: &ModelParams, dt: f64) -> Result<SystemAssembly> {
    params.validate()?;
    check_dt(dt)?;
    Ok(SystemAssembly {
        params: params.clone(),
        dt,
        coeffs: ChCoeffs {
            dt_eff: dt,
            eps2_eff: params.eps2(),
            c_lin: 1.0,
        },
        lagged: state.phi.clone(),
        mobility_live: true,
        source1: state.phi.clone(),
        source2: CellField::zeros(state.phi.spec()),
    })
}

fn bdf2_source1(state: &SchemeState) -> Result<(CellField, CellField)> {
    let prev = state.phi_prev.as_ref().ok_or(Error::MissingHistory {
        needed: 1,
        got: 0,
    })?;
    let mut s1 = state.phi.clone();
    for (v, &p) in s1.data_mut().iter_mut().zip(prev.data()) {
        *v = (4.0 * *v - p) / 3.0;
    }
    let mut check = state.phi.clone();
    check.add_scaled(1.0, &state.phi); // 2 phi^n
    check.add_scaled(-1.0, prev); // - phi^{n-1}
    Ok((s1, check))
}

/// Stabilized, energy-stable BDF2 (phi_ex = 2 phi^n - phi^{n-1}):
///   phi - (2dt/3) div(M(phi_ex) grad mu) = (4 phi^n - phi^{n-1})/3
///   mu - f_c'(phi) + (eps^2 + A dt) lap(phi) = A dt lap(phi^n) - phi_ex.
pub fn assemble_bdf2es(
    state: &SchemeState,
    params: &ModelParams,
    dt: f64,
) -> Result<SystemAssembly> {
    params.validate()?;
    check_dt(dt)?;
    let (source1, phi_ex) = bdf2_source1(state)?;
    let a_dt = params.stabilization_a * dt;
    let mut source2 = laplacian(&state.phi);
    for (v, &e) in source2.data_mut().iter_mut().zip(phi_ex.data()) {
        *v = a_dt * *v - e;
    }
    Ok(SystemAssembly {
        params: params.clone(),
        dt,
        coeffs: ChCoeffs {
            dt_eff: 2.0 * dt / 3.0,
            eps2_eff: params.eps2() + a_dt,
            c_lin: 0.0,
        },
        lagged: phi_ex,
        mobility_live: false,
        source1,
        source2,
    })
}

/// Standard fully implicit BDF2:
///   phi - (2dt/3) div(M(phi) grad mu) = (4 phi^n - phi^{n-1})/3
///   mu - f_c'(phi) + phi + eps^2 lap(phi) = 0.
pub fn assemble_bdf2(state: &SchemeState, params: &ModelParams, dt: f64) -> Result<SystemAssembly> {
    params.validate()?;
    check_dt(dt)?;
    let (source1, _) = bdf2_source1(state)?;
    Ok(SystemAssembly {
        params: params.clone(),
        dt,
        coeffs: ChCoeffs {
            dt_eff: 2.0 * dt / 3.0,
            eps2_eff: params.eps2(),
            c_lin: 1.0,
        },
        lagged: state.phi.clone(),
        mobility_live: true,
        source1,
        source2: CellField::zeros(state.phi.spec()),
    })
}

/// Assembles the conserved scheme `kind`; errs for `Ac1` (scalar path).
pub fn assemble(
    kind: SchemeKind,
    state: &SchemeState,
    params: &ModelParams,
    dt: f64,
) -> Result<SystemAssembly> {
    match kind {
        SchemeKind::Cs1 => assemble_cs1(state, params, dt),
        SchemeKind::Be => assemble_be(state, params, dt),
        SchemeKind::Bdf2Es => assemble_bdf2es(state, params, dt),
        SchemeKind::Bdf2 => assemble_bdf2(state, params, dt),
        SchemeKind::Ac1 => Err(Error::InvalidParameter {
            name: "scheme",
            reason: "ac1 is a scalar scheme; use ac1_step".into(),
        }),
    }
}

/// Per-step solver summary.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub cycles: usize,
    pub final_residual: f64,
    pub residual_history: Vec<f64>,
    pub phi_min: f64,
    pub phi_max: f64,
    /// True if the accepted solution touched |phi| >= 1 - delta.
    pub saturated: bool,
}

fn report_from(solve: SolveReport, phi: &CellField, params: &ModelParams) -> StepReport {
    let (phi_min, phi_max) = phi.min_max();
    StepReport {
        final_residual: *solve.residual_history.last().unwrap_or(&f64::NAN),
        cycles: solve.cycles,
        residual_history: solve.residual_history,
        phi_min,
        phi_max,
        saturated: phi_min.abs().max(phi_max.abs()) >= 1.0 - params.delta,
    }
}

/// Advances one step of `kind` from `state`, solving with `mg`. Two-step
/// kinds require history (see `SchemeKind::needs_history`); the usual
/// bootstrap is one `Cs1` step.
pub fn step(
    state: &SchemeState,
    kind: SchemeKind,
    params: &ModelParams,
    dt: f64,
    mg: &MgConfig,
) -> Result<(SchemeState, StepReport)> {
    if kind == SchemeKind::Ac1 {
        return ac1_step(state, params, dt, mg);
    }
    let assembly = assemble(kind, state, params, dt)?;
    let (mut phi, mu, solve) = multigrid::solve(&assembly, &state.phi, &state.mu, mg)?;
    // Mean projection: the scheme conserves mean(S^(1)) exactly; remove the
    // tau-sized solver defect.
    let target = assembly.source1().mean();
    let shift = target - phi.mean();
    phi.shift(shift);
    let report = report_from(solve, &phi, params);
    Ok((
        SchemeState {
            phi_prev: Some(state.phi.clone()),
            mu,
            time: state.time + dt,
            step_index: state.step_index + 1,
            phi,
        },
        report,
    ))
}

/// One step of the L^2-flow convex splitting (constant mobility M):
///   phi + dt M (f_c'(phi) - eps^2 lap(phi)) = (1 + dt M) phi^n.
pub fn ac1_step(
    state: &SchemeState,
    params: &ModelParams,
    dt: f64,
    mg: &MgConfig,
) -> Result<(SchemeState, StepReport)> {
    params.validate()?;
    check_dt(dt)?;
    let m = params.mobility.as_constant().ok_or(Error::InvalidParameter {
        name: "mobility",
        reason: "ac1 requires a constant mobility".into(),
    })?;
    let dtm = dt * m;
    let op = multigrid::ScalarOp::GradientFlow {
        dtm,
        eps2: params.eps2(),
        params,
    };
    let mut rhs = state.phi.clone();
    for v in rhs.data_mut() {
        *v *= 1.0 + dtm;
    }
    let (phi, solve) = multigrid::scalar_solve(&op, &state.phi, &rhs, mg, false)?;
    let mu = {
        // mu^{n+1} = f_c'(phi^{n+1}) - phi^n - eps^2 lap(phi^{n+1}).
        let lap = laplacian(&phi);
        let mut mu = CellField::zeros(phi.spec());
        let eps2 = params.eps2();
        for (((v, &p), &l), &pn) in mu
            .data_mut()
            .iter_mut()
            .zip(phi.data())
            .zip(lap.data())
            .zip(state.phi.data())
        {
            *v = params.fc_prime(p) - pn - eps2 * l;
        }
        mu
    };
    let report = report_from(solve, &phi, params);
    Ok((
        SchemeState {
            phi_prev: Some(state.phi.clone()),
            mu,
            time: state.time + dt,
            step_index: state.step_index + 1,
            phi,
        },
        report,
    ))
}
