//! Simulation driver and the benchmark protocols built on it: per-step
//! audit records, mesh-refinement error/rate tables, solver-complexity
//! logging, and cross-scheme accuracy comparison against a fine-step
//! reference trajectory.

use crate::error::{Error, Result};
use crate::grid::{CellField, GridSpec};
use crate::multigrid::{restrict, MgConfig};
use crate::potential::{discrete_energy, modified_energy_bdf2, ModelParams};
use crate::schemes::{step, SchemeKind, SchemeState};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// Audit data captured after every accepted step (index 0 is the initial
/// state, with zero solver work).
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub step: u64,
    pub time: f64,
    pub mass: f64,
    pub energy: f64,
    /// Stabilized-BDF2 Lyapunov functional: energy plus the (4 dt)^{-1}
    /// H^{-1} and 1/2 L^2 penalties on the last increment. Present only
    /// when requested and a previous field exists.
    pub modified_energy: Option<f64>,
    pub phi_min: f64,
    pub phi_max: f64,
    pub vcycles: usize,
    pub final_residual: f64,
    pub saturated: bool,
}

/// A completed (or truncated) run: one record per accepted step plus the
/// terminal state. A solver failure does not discard the prefix; it is
/// reported in `failure` with everything accepted so far intact.
#[derive(Debug)]
pub struct Trajectory {
    pub records: Vec<StepRecord>,
    pub final_state: SchemeState,
    pub failure: Option<Error>,
    /// Residual after each V-cycle of the last accepted step.
    pub final_step_residuals: Vec<f64>,
}

impl Trajectory {
    /// Largest |mean(phi^n) - mean(phi^0)| over the run.
    pub fn max_mass_drift(&self) -> f64 {
        let m0 = self.records[0].mass;
        self.records
            .iter()
            .map(|r| (r.mass - m0).abs())
            .fold(0.0, f64::max)
    }

    /// Extremes of phi over all accepted steps.
    pub fn phi_range(&self) -> (f64, f64) {
        self.records.iter().fold(
            (f64::INFINITY, f64::NEG_INFINITY),
            |(lo, hi), r| (lo.min(r.phi_min), hi.max(r.phi_max)),
        )
    }

    /// True if every accepted iterate stayed strictly inside
    /// (-1 + delta, 1 - delta).
    pub fn strictly_separated(&self, delta: f64) -> bool {
        let (lo, hi) = self.phi_range();
        lo > -1.0 + delta && hi < 1.0 - delta
    }

    pub fn mean_vcycles(&self) -> f64 {
        let steps = self.records.len().saturating_sub(1);
        if steps == 0 {
            return 0.0;
        }
        self.records[1..].iter().map(|r| r.vcycles as f64).sum::<f64>() / steps as f64
    }
}

/// Knobs for `run_simulation` beyond the scheme itself.
#[derive(Clone, Debug)]
pub struct RunOptions {
    /// Compute the stabilized-BDF2 Lyapunov functional each step. Costs one
    /// Poisson solve per step for the H^{-1} part.
    pub record_modified_energy: bool,
    /// Relative tolerance of that Poisson solve.
    pub poisson_tol: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        RunOptions {
            record_modified_energy: false,
            poisson_tol: 1e-10,
        }
    }
}

fn record_for(
    state: &SchemeState,
    params: &ModelParams,
    vcycles: usize,
    final_residual: f64,
    modified_energy: Option<f64>,
) -> StepRecord {
    let (phi_min, phi_max) = state.phi().min_max();
    StepRecord {
        step: state.step_index(),
        time: state.time(),
        mass: state.phi().mean(),
        energy: discrete_energy(state.phi(), params).value,
        modified_energy,
        phi_min,
        phi_max,
        vcycles,
        final_residual,
        saturated: phi_min.abs().max(phi_max.abs()) >= 1.0 - params.delta,
    }
}

/// Advances `n_steps` of `kind` from `state0`, auditing each step. Two-step
/// schemes without history take their first step with `Cs1` (first-order
/// bootstrap; the overall order is unaffected). Solver non-convergence ends
/// the run early and is reported in the returned trajectory, not as `Err`;
/// `Err` is reserved for unusable setups (bad parameters, missing history
/// that cannot be bootstrapped).
pub fn run_simulation(
    state0: SchemeState,
    kind: SchemeKind,
    params: &ModelParams,
    dt: f64,
    n_steps: u64,
    mg: &MgConfig,
    opts: &RunOptions,
) -> Result<Trajectory> {
    params.validate()?;
    mg.validate()?;
    let mut records = Vec::with_capacity(n_steps as usize + 1);
    records.push(record_for(&state0, params, 0, 0.0, None));
    let mut state = state0;
    let mut failure = None;
    let mut final_step_residuals = Vec::new();
    for _ in 0..n_steps {
        let step_kind = if kind.needs_history() && state.phi_prev().is_none() {
            SchemeKind::Cs1
        } else {
            kind
        };
        let prev_phi = state.phi().clone();
        match step(&state, step_kind, params, dt, mg) {
            Ok((next, report)) => {
                let me = if opts.record_modified_energy {
                    Some(modified_energy_bdf2(
                        next.phi(),
                        &prev_phi,
                        dt,
                        params,
                        opts.poisson_tol,
                    )?)
                } else {
                    None
                };
                records.push(record_for(&next, params, report.cycles, report.final_residual, me));
                final_step_residuals = report.residual_history;
                state = next;
            }
            Err(e @ Error::NonConvergence { .. }) => {
                failure = Some(e);
                break;
            }
            Err(e) => return Err(e),
        }
    }
    Ok(Trajectory {
        records,
        final_state: state,
        failure,
        final_step_residuals,
    })
}

/// Violation summary for a monotone-decay audit.
#[derive(Clone, Copy, Debug)]
pub struct EnergyAudit {
    /// Adjacent pairs inspected.
    pub audited: usize,
    /// Increases beyond the slack.
    pub violations: usize,
    /// Largest increase observed (0 if none).
    pub max_increase: f64,
}

fn audit_series(values: impl Iterator<Item = f64>, slack: f64) -> EnergyAudit {
    let mut audited = 0;
    let mut violations = 0;
    let mut max_increase: f64 = 0.0;
    let mut prev: Option<f64> = None;
    for v in values {
        if let Some(p) = prev {
            audited += 1;
            let rise = v - p;
            if rise > slack * p.abs().max(1.0) {
                violations += 1;
            }
            max_increase = max_increase.max(rise);
        }
        prev = Some(v);
    }
    EnergyAudit {
        audited,
        violations,
        max_increase,
    }
}

/// Checks monotone decay of the discrete energy across `records`, allowing
/// a relative `slack` per step for roundoff.
pub fn energy_audit(records: &[StepRecord], slack: f64) -> EnergyAudit {
    audit_series(records.iter().map(|r| r.energy), slack)
}

/// Same audit on the stabilized-BDF2 Lyapunov functional. Records without
/// it (the initial state and any bootstrap step) are skipped.
pub fn modified_energy_audit(records: &[StepRecord], slack: f64) -> EnergyAudit {
    audit_series(records.iter().filter_map(|r| r.modified_energy), slack)
}

/// The deterministic two-bump cosine profile used by the refinement and
/// solver-complexity benchmarks,
///   phi(x, y) = 1.8 * (1 - cos(4 pi x / L)) / 2 * (1 - cos(2 pi y / L)) / 2 - 0.9,
/// defined on the 2-D periodic square with L = 3.2 (the profile and its
/// reference outputs are calibrated to that box).
pub fn init_convergence_profile(spec: GridSpec) -> Result<CellField> {
    if spec.dim() != 2 {
        return Err(Error::InvalidParameter {
            name: "grid",
            reason: "the benchmark profile is two-dimensional".into(),
        });
    }
    if (spec.length() - 3.2).abs() > 1e-12 {
        return Err(Error::DomainSize {
            required: 3.2,
            got: spec.length(),
        });
    }
    let l = spec.length();
    let pi = std::f64::consts::PI;
    Ok(CellField::from_fn(spec, |x, y, _| {
        1.8 * (0.5 * (1.0 - (4.0 * pi * x / l).cos())) * (0.5 * (1.0 - (2.0 * pi * y / l).cos()))
            - 0.9
    }))
}

/// Uniform random field phi = mean + U(-amplitude, amplitude), reproducible
/// from `seed` (counter-based generator, so identical across platforms).
/// Requires |mean| + amplitude < 1 so the field is admissible.
pub fn random_uniform_ic(
    spec: GridSpec,
    mean: f64,
    amplitude: f64,
    seed: u64,
) -> Result<CellField> {
    if !(amplitude >= 0.0) || !(mean.abs() + amplitude < 1.0) {
        return Err(Error::InvalidParameter {
            name: "initial data",
            reason: format!(
                "need |mean| + amplitude < 1 and amplitude >= 0, got mean {mean}, amplitude {amplitude}"
            ),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..spec.cells())
        .map(|_| {
            if amplitude == 0.0 {
                mean
            } else {
                mean + rng.gen_range(-amplitude..amplitude)
            }
        })
        .collect();
    CellField::from_vec(spec, data)
}

/// Output of `convergence_study`: Cauchy errors between adjacent
/// resolutions and the implied orders.
#[derive(Clone, Debug)]
pub struct ConvergenceResult {
    pub resolutions: Vec<usize>,
    /// errors[i] = domain-RMS of phi_{n_i} - restrict(phi_{n_{i+1}}) at T,
    /// i.e. || . ||_2 / sqrt(|domain|) (equivalently the plain root mean
    /// square over coarse cells).
    pub errors: Vec<f64>,
    /// rates[i] = log2(errors[i] / errors[i+1]).
    pub rates: Vec<f64>,
    /// Energy-monotonicity audit pooled over every refinement run
    /// (1e-10 relative slack).
    pub energy: EnergyAudit,
}

/// Mesh-refinement study for the first-order convex-splitting scheme on the
/// benchmark profile: each resolution runs to `t_final` with dt =
/// `dt_factor` * h^2, and adjacent solutions are compared on the coarser
/// grid by cell averaging. Resolutions must double.
pub fn convergence_study(
    params: &ModelParams,
    resolutions: &[usize],
    t_final: f64,
    dt_factor: f64,
    mg: &MgConfig,
) -> Result<ConvergenceResult> {
    params.validate()?;
    if resolutions.len() < 2 {
        return Err(Error::InvalidParameter {
            name: "resolutions",
            reason: "need at least two resolutions".into(),
        });
    }
    for w in resolutions.windows(2) {
        if w[1] != 2 * w[0] {
            return Err(Error::InvalidParameter {
                name: "resolutions",
                reason: format!("must double at each level, got {} -> {}", w[0], w[1]),
            });
        }
    }
    if !(t_final > 0.0) || !(dt_factor > 0.0) {
        return Err(Error::InvalidParameter {
            name: "t_final/dt_factor",
            reason: "must be positive".into(),
        });
    }
    let mut finals: Vec<CellField> = Vec::with_capacity(resolutions.len());
    let mut energy = EnergyAudit {
        audited: 0,
        violations: 0,
        max_increase: 0.0,
    };
    for &n in resolutions {
        let spec = GridSpec::new(2, n, 3.2)?;
        let dt = dt_factor * spec.h() * spec.h();
        let steps_f = t_final / dt;
        let steps = steps_f.round();
        if (steps_f - steps).abs() > 1e-6 || steps < 1.0 {
            return Err(Error::InvalidParameter {
                name: "t_final",
                reason: format!("not a multiple of dt = {dt} at n = {n}"),
            });
        }
        let state = SchemeState::initial(init_convergence_profile(spec)?, params)?;
        let traj = run_simulation(
            state,
            SchemeKind::Cs1,
            params,
            dt,
            steps as u64,
            mg,
            &RunOptions::default(),
        )?;
        if let Some(e) = traj.failure {
            return Err(e);
        }
        let audit = energy_audit(&traj.records, 1e-10);
        energy.audited += audit.audited;
        energy.violations += audit.violations;
        energy.max_increase = energy.max_increase.max(audit.max_increase);
        finals.push(traj.final_state.phi().clone());
    }
    let mut errors = Vec::with_capacity(finals.len() - 1);
    for pair in finals.windows(2) {
        let mut diff = pair[0].clone();
        diff.add_scaled(-1.0, &restrict(&pair[1]));
        errors.push(diff.norm_l2() / diff.spec().volume().sqrt());
    }
    let rates = errors
        .windows(2)
        .map(|e| (e[0] / e[1]).log2())
        .collect();
    Ok(ConvergenceResult {
        resolutions: resolutions.to_vec(),
        errors,
        rates,
        energy,
    })
}

/// One grid/quench combination of the solver-complexity benchmark.
#[derive(Clone, Debug)]
pub struct MgComplexityRecord {
    pub theta0: f64,
    pub n: usize,
    /// V-cycles needed at each of the accepted steps.
    pub cycles_per_step: Vec<usize>,
    /// Residual after each V-cycle of the final solve (index 0 is the
    /// initial-guess residual).
    pub final_step_residuals: Vec<f64>,
    pub mean_cycles: f64,
    /// False when the cycle budget ran out; the residual curve then
    /// describes the failed solve, which is exactly what a benchmark with a
    /// deliberately small budget wants to see.
    pub converged: bool,
}

/// Solver-complexity benchmark: the benchmark profile advanced `n_steps`
/// with the convex-splitting scheme at a deliberately large fixed dt, over
/// a sweep of quench parameters and grid sizes, logging the V-cycle
/// residual history of the final step. Near-optimal complexity shows up as
/// geometric residual decay with grid-independent cycle counts. A solve
/// that exhausts its cycle budget does not abort the sweep: its partial
/// residual curve is recorded with `converged = false`.
pub fn mg_complexity_study(
    base: &ModelParams,
    theta0s: &[f64],
    resolutions: &[usize],
    dt: f64,
    n_steps: u64,
    mg: &MgConfig,
) -> Result<Vec<MgComplexityRecord>> {
    let mut out = Vec::with_capacity(theta0s.len() * resolutions.len());
    for &theta0 in theta0s {
        let params = ModelParams {
            theta0,
            ..base.clone()
        };
        params.validate()?;
        for &n in resolutions {
            let spec = GridSpec::new(2, n, 3.2)?;
            let state = SchemeState::initial(init_convergence_profile(spec)?, &params)?;
            let traj = run_simulation(
                state,
                SchemeKind::Cs1,
                &params,
                dt,
                n_steps,
                mg,
                &RunOptions::default(),
            )?;
            let cycles_per_step: Vec<usize> =
                traj.records[1..].iter().map(|r| r.vcycles).collect();
            let mean_cycles = traj.mean_vcycles();
            let (final_step_residuals, converged) = match traj.failure {
                None => (traj.final_step_residuals, true),
                Some(Error::NonConvergence { history, .. }) => (history, false),
                Some(e) => return Err(e),
            };
            out.push(MgComplexityRecord {
                theta0,
                n,
                cycles_per_step,
                final_step_residuals,
                mean_cycles,
                converged,
            });
        }
    }
    Ok(out)
}

/// A scheme entry for `comparison_study`; `stabilization_a` overrides the
/// base parameters' coefficient (used to compare the stabilized two-step
/// scheme with and without stabilization).
#[derive(Clone, Copy, Debug)]
pub struct ComparisonEntry {
    pub kind: SchemeKind,
    pub stabilization_a: Option<f64>,
}

impl ComparisonEntry {
    pub fn plain(kind: SchemeKind) -> Self {
        ComparisonEntry {
            kind,
            stabilization_a: None,
        }
    }

    pub fn label(&self) -> String {
        match self.stabilization_a {
            Some(a) => format!("{}_A{a}", self.kind.name()),
            None => self.kind.name().to_string(),
        }
    }
}

/// One (scheme, dt) row of the comparison table.
#[derive(Clone, Debug)]
pub struct ComparisonRow {
    pub label: String,
    pub dt: f64,
    /// || phi - phi_target ||_2 at each probe time.
    pub errors: Vec<f64>,
    pub mean_vcycles: f64,
    pub max_phi: f64,
}

#[derive(Clone, Debug)]
pub struct ComparisonResult {
    pub probe_times: Vec<f64>,
    pub target_dt: f64,
    pub target_max_phi: f64,
    pub rows: Vec<ComparisonRow>,
}

// Runs `kind` to the last probe, capturing phi at each probe time.
// Returns captures, mean V-cycles, and the running max of phi.
fn run_with_probes(
    state0: SchemeState,
    kind: SchemeKind,
    params: &ModelParams,
    dt: f64,
    probes: &[f64],
    mg: &MgConfig,
) -> Result<(Vec<CellField>, f64, f64)> {
    let mut probe_steps = Vec::with_capacity(probes.len());
    for &t in probes {
        let s = t / dt;
        let r = s.round();
        if !(t > 0.0) || (s - r).abs() > 1e-6 || r < 1.0 {
            return Err(Error::InvalidParameter {
                name: "probe_times",
                reason: format!("probe t = {t} is not a positive multiple of dt = {dt}"),
            });
        }
        probe_steps.push(r as u64);
    }
    if !probe_steps.windows(2).all(|w| w[0] < w[1]) {
        return Err(Error::InvalidParameter {
            name: "probe_times",
            reason: "must be strictly increasing".into(),
        });
    }
    let total = *probe_steps.last().expect("probes checked non-empty");
    let mut captures = Vec::with_capacity(probes.len());
    let mut state = state0;
    let mut cycles_sum = 0.0;
    let mut max_phi = state.phi().min_max().1;
    for k in 1..=total {
        let step_kind = if kind.needs_history() && state.phi_prev().is_none() {
            SchemeKind::Cs1
        } else {
            kind
        };
        let (next, report) = step(&state, step_kind, params, dt, mg)?;
        cycles_sum += report.cycles as f64;
        max_phi = max_phi.max(report.phi_max);
        if probe_steps.contains(&k) {
            captures.push(next.phi().clone());
        }
        state = next;
    }
    Ok((captures, cycles_sum / total as f64, max_phi))
}

/// Accuracy/work comparison of the time discretizations against a
/// fine-step reference: the reference trajectory uses the standard
/// two-step scheme at `target_dt`; every (entry, dt) pair then reports its
/// l2 distance from the reference at each probe time, its mean V-cycle
/// count, and its running max of phi. All probe times must be multiples of
/// every dt and of `target_dt`.
pub fn comparison_study(
    params: &ModelParams,
    phi0: &CellField,
    entries: &[ComparisonEntry],
    dts: &[f64],
    target_dt: f64,
    probes: &[f64],
    mg: &MgConfig,
) -> Result<ComparisonResult> {
    params.validate()?;
    if entries.is_empty() || dts.is_empty() || probes.is_empty() {
        return Err(Error::InvalidParameter {
            name: "comparison",
            reason: "need at least one scheme, dt, and probe time".into(),
        });
    }
    let target_state = SchemeState::initial(phi0.clone(), params)?;
    let (targets, _, target_max_phi) = run_with_probes(
        target_state,
        SchemeKind::Bdf2,
        params,
        target_dt,
        probes,
        mg,
    )?;
    let mut rows = Vec::with_capacity(entries.len() * dts.len());
    for entry in entries {
        let p = match entry.stabilization_a {
            Some(a) => params.clone().with_stabilization(a),
            None => params.clone(),
        };
        for &dt in dts {
            let state = SchemeState::initial(phi0.clone(), &p)?;
            let (captures, mean_vcycles, max_phi) =
                run_with_probes(state, entry.kind, &p, dt, probes, mg)?;
            let errors = captures
                .iter()
                .zip(&targets)
                .map(|(c, t)| {
                    let mut diff = c.clone();
                    diff.add_scaled(-1.0, t);
                    diff.norm_l2()
                })
                .collect();
            rows.push(ComparisonRow {
                label: entry.label(),
                dt,
                errors,
                mean_vcycles,
                max_phi,
            });
        }
    }
    Ok(ComparisonResult {
        probe_times: probes.to_vec(),
        target_dt,
        target_max_phi,
        rows,
    })
}
