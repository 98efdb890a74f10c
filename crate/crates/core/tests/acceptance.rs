//! End-to-end acceptance battery for the solver library.
//!
//! Each test prints a single machine-greppable verdict line
//!
//!   ACCEPTANCE <k> <label>: PASS|FAIL (<metrics>)
//!
//! and then asserts, so a red suite still shows every verdict with
//! `--nocapture`. Tolerances are pinned here, next to the checks.
//!
//! By default the battery runs at a CI-friendly scale: the spinodal
//! benchmark uses a 128^2 grid (value band +/- 0.02 against the published
//! 256^2 references). Set FLORY_ACCEPT_FULL=1 to run the full 256^2
//! protocol with the tight +/- 0.01 band; expect tens of minutes.
//!
//! Expensive trajectories are computed once and shared between tests
//! through memo cells, so the wall-clock cost is dominated by five long
//! runs (refinement ladder, three quench levels, one 64^3 smoke).

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use flory::diagnostics::{
    comparison_study, convergence_study, energy_audit, mg_complexity_study, modified_energy_audit,
    random_uniform_ic, run_simulation, ComparisonEntry, ConvergenceResult, RunOptions, Trajectory,
};
use flory::grid::{
    div_mobility_grad, face_average, face_inner_product, gradient, laplacian, FaceField,
};
use flory::multigrid::{prolong, restrict};
use flory::{CellField, GridSpec, MgConfig, ModelParams, SchemeKind, SchemeState};

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

// ---------------------------------------------------------------------------
// verdict plumbing
// ---------------------------------------------------------------------------

fn verdict(k: usize, label: &str, pass: bool, metrics: String) {
    println!(
        "ACCEPTANCE {k} {label}: {} ({metrics})",
        if pass { "PASS" } else { "FAIL" }
    );
    assert!(pass, "ACCEPTANCE {k} {label} FAILED: {metrics}");
}

fn full_scale() -> bool {
    std::env::var("FLORY_ACCEPT_FULL").ok().as_deref() == Some("1")
}

// ---------------------------------------------------------------------------
// shared runs (memoized; tests may execute in any order)
// ---------------------------------------------------------------------------

/// Spinodal benchmark: eps = 5e-3, unit box, mean 0.2, amplitude 0.05,
/// seed 7, dt = 1e-3, 1000 steps of the first-order splitting scheme.
/// Scale and smoothing count follow the CI/full switch: the 128^2 grid
/// under-resolves the interface (eps/h = 0.64), where two smoothing sweeps
/// per level limit-cycle; three sweeps restore convergence.
fn spinodal_run(theta0: f64, delta: f64) -> Arc<Trajectory> {
    spinodal_run_tau(theta0, delta, 1e-9)
}

fn spinodal_run_tau(theta0: f64, delta: f64, tau: f64) -> Arc<Trajectory> {
    static MEMO: OnceLock<Mutex<HashMap<(u64, u64, u64), Arc<Trajectory>>>> = OnceLock::new();
    let memo = MEMO.get_or_init(|| Mutex::new(HashMap::new()));
    let mut map = memo.lock().unwrap();
    if let Some(t) = map.get(&(theta0.to_bits(), delta.to_bits(), tau.to_bits())) {
        return t.clone();
    }
    let (n, lambda) = if full_scale() { (256, 2) } else { (128, 3) };
    let mg = MgConfig {
        lambda,
        tau,
        ..MgConfig::default()
    };
    let params = ModelParams::new(5e-3, theta0, delta).unwrap();
    let spec = GridSpec::new(2, n, 1.0).unwrap();
    let phi0 = random_uniform_ic(spec, 0.2, 0.05, 7).unwrap();
    let state0 = SchemeState::initial(phi0, &params).unwrap();
    let traj = run_simulation(
        state0,
        SchemeKind::Cs1,
        &params,
        1e-3,
        1000,
        &mg,
        &RunOptions::default(),
    )
    .unwrap();
    assert!(
        traj.failure.is_none(),
        "spinodal run theta0={theta0} delta={delta} failed: {:?}",
        traj.failure
    );
    let arc = Arc::new(traj);
    map.insert((theta0.to_bits(), delta.to_bits(), tau.to_bits()), arc.clone());
    arc
}

/// Refinement ladder on the two-bump profile: 16^2 .. 256^2, dt = 0.4 h^2,
/// T = 0.4; errors are coarse-fine domain-RMS differences.
fn refinement() -> &'static ConvergenceResult {
    static MEMO: OnceLock<ConvergenceResult> = OnceLock::new();
    MEMO.get_or_init(|| {
        let params = ModelParams::new(0.2, 3.0, 1e-5).unwrap();
        convergence_study(
            &params,
            &[16, 32, 64, 128, 256],
            0.4,
            0.4,
            &MgConfig::default(),
        )
        .unwrap()
    })
}

/// Stabilized two-step run on the spinodal protocol with the Lyapunov
/// functional recorded each step (A = 1/16, the provable threshold).
fn stabilized_two_step_run() -> &'static Trajectory {
    static MEMO: OnceLock<Trajectory> = OnceLock::new();
    MEMO.get_or_init(|| {
        let (n, lambda) = if full_scale() { (256, 2) } else { (128, 3) };
        let mg = MgConfig {
            lambda,
            ..MgConfig::default()
        };
        let params = ModelParams::new(5e-3, 3.0, 1e-5)
            .unwrap()
            .with_stabilization(1.0 / 16.0);
        let spec = GridSpec::new(2, n, 1.0).unwrap();
        let phi0 = random_uniform_ic(spec, 0.2, 0.05, 7).unwrap();
        let state0 = SchemeState::initial(phi0, &params).unwrap();
        let opts = RunOptions {
            record_modified_energy: true,
            ..RunOptions::default()
        };
        let traj = run_simulation(state0, SchemeKind::Bdf2Es, &params, 1e-3, 1000, &mg, &opts)
            .unwrap();
        assert!(traj.failure.is_none(), "stabilized run failed: {:?}", traj.failure);
        traj
    })
}

// ---------------------------------------------------------------------------
// 1: refinement errors and rates against the published ladder
// ---------------------------------------------------------------------------

#[test]
fn acceptance_01_refinement_convergence() {
    let expect_err = [5.6689e-2, 1.6071e-2, 4.1541e-3, 1.0472e-3];
    let expect_rate = [1.819, 1.952, 1.988];
    let res = refinement();
    let mut pass = res.errors.len() == 4 && res.rates.len() == 3;
    for (e, x) in res.errors.iter().zip(expect_err) {
        pass &= (e - x).abs() <= 0.05 * x;
    }
    for (r, x) in res.rates.iter().zip(expect_rate) {
        pass &= (r - x).abs() <= 0.05;
    }
    let shown: Vec<String> = res.errors.iter().map(|e| format!("{e:.4e}")).collect();
    verdict(
        1,
        "refinement-convergence",
        pass,
        format!("errors {:?} rates {:.4?}", shown, res.rates),
    );
}

// ---------------------------------------------------------------------------
// 2: spinodal extrema band + strict separation at three quench levels
// ---------------------------------------------------------------------------

#[test]
fn acceptance_02_spinodal_extrema_band() {
    // published 256^2 references: (theta0, max, min)
    let reference = [
        (2.0, 0.9582, -0.9690),
        (2.5, 0.9861, -0.9909),
        (3.0, 0.9952, -0.9973),
    ];
    let band = if full_scale() { 0.01 } else { 0.02 };
    let delta = 1e-5;
    let mut pass = true;
    let mut metrics = String::new();
    for (theta0, ref_max, ref_min) in reference {
        let traj = spinodal_run(theta0, delta);
        let (lo, hi) = traj.phi_range();
        let in_band = (hi - ref_max).abs() <= band && (lo - ref_min).abs() <= band;
        let separated = traj.strictly_separated(delta);
        pass &= in_band && separated;
        metrics.push_str(&format!(
            "theta0={theta0}: [{lo:.4}, {hi:.4}] vs [{ref_min}, {ref_max}] sep={separated}; "
        ));
    }
    verdict(2, "spinodal-extrema-band", pass, metrics);
}

// ---------------------------------------------------------------------------
// 3: regularization-threshold insensitivity at the deepest quench
// ---------------------------------------------------------------------------

#[test]
fn acceptance_03_delta_insensitivity() {
    // No accepted iterate comes within 2.9e-3 of the endpoints here, so the
    // two regularizations solve literally identical equations at every
    // step; any difference is the solver's per-step stopping noise, which
    // accumulates over the 1000 steps. Measured on 128^2: linf 6.9e-8 at
    // tau = 1e-9 versus 6.4e-10 at tau = 1e-11 (linear in tau). The
    // comparison therefore runs at tau = 1e-11 so it measures the delta
    // response rather than the benchmark tolerance floor.
    let a = spinodal_run_tau(3.0, 1e-3, 1e-11);
    let b = spinodal_run_tau(3.0, 1e-5, 1e-11);
    let mut diff = a.final_state.phi().clone();
    diff.add_scaled(-1.0, b.final_state.phi());
    let linf = diff.norm_linf();
    verdict(
        3,
        "delta-insensitivity",
        linf <= 1e-7,
        format!("linf(delta 1e-3 vs 1e-5 at T=1) = {linf:.3e} <= 1e-7"),
    );
}

// ---------------------------------------------------------------------------
// 4: energy monotonicity on every benchmark run; Lyapunov decay for the
//    stabilized two-step scheme at A = 1/16
// ---------------------------------------------------------------------------

#[test]
fn acceptance_04_energy_dissipation() {
    let slack = 1e-10;
    let mut violations = 0usize;
    let mut audited = 0usize;
    let mut max_inc = 0.0f64;
    for theta0 in [2.0, 2.5, 3.0] {
        let audit = energy_audit(&spinodal_run(theta0, 1e-5).records, slack);
        violations += audit.violations;
        audited += audit.audited;
        max_inc = max_inc.max(audit.max_increase);
    }
    let refine = &refinement().energy;
    violations += refine.violations;
    audited += refine.audited;
    max_inc = max_inc.max(refine.max_increase);

    let stab = stabilized_two_step_run();
    let mod_audit = modified_energy_audit(&stab.records, slack);

    let pass = violations == 0 && mod_audit.violations == 0 && audited > 4000
        && mod_audit.audited >= 999;
    verdict(
        4,
        "energy-dissipation",
        pass,
        format!(
            "splitting: {violations} violations / {audited} comparisons (worst +{max_inc:.2e}); \
             Lyapunov: {} violations / {} comparisons",
            mod_audit.violations, mod_audit.audited
        ),
    );
}

// ---------------------------------------------------------------------------
// 5: mass conservation over a long run
// ---------------------------------------------------------------------------

#[test]
fn acceptance_05_mass_conservation() {
    let traj = spinodal_run(3.0, 1e-5);
    let drift = traj.max_mass_drift();
    verdict(
        5,
        "mass-conservation",
        traj.records.len() == 1001 && drift <= 1e-8,
        format!("max |mean drift| over 1000 steps = {drift:.3e} <= 1e-8"),
    );
}

// ---------------------------------------------------------------------------
// 6: solver complexity: near-constant per-cycle contraction, cycle counts
//    flat in h and ordered by quench depth
// ---------------------------------------------------------------------------

#[test]
fn acceptance_06_solver_complexity() {
    let base = ModelParams::new(0.2, 3.0, 1e-5).unwrap();
    let theta0s = [2.0, 3.0, 3.5];
    let sizes = [64usize, 128, 256];
    let recs = mg_complexity_study(&base, &theta0s, &sizes, 0.1, 10, &MgConfig::default()).unwrap();

    // cycles[t][s] = V-cycles of the final step for theta0s[t], sizes[s]
    let mut cycles = [[0usize; 3]; 3];
    let mut pass = true;
    let mut metrics = String::new();
    for r in &recs {
        let t = theta0s.iter().position(|&x| x == r.theta0).unwrap();
        let s = sizes.iter().position(|&x| x == r.n).unwrap();
        let hist = &r.final_step_residuals;
        cycles[t][s] = hist.len() - 1;

        // contraction factors of cycles 2..k (cycle 1 carries the
        // warm-start transient); "nearly constant" means small relative
        // dispersion and every cycle at least halving the residual
        let rhos: Vec<f64> = hist.windows(2).map(|w| w[1] / w[0]).collect();
        let tail = &rhos[1..];
        let mean = tail.iter().sum::<f64>() / tail.len() as f64;
        let var = tail.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / tail.len() as f64;
        let cv = var.sqrt() / mean;
        let worst = tail.iter().cloned().fold(0.0, f64::max);
        pass &= cv <= 0.5 && worst <= 0.5;
        metrics.push_str(&format!(
            "t{}n{}: k={} cv={:.0}% max_rho={:.2}; ",
            r.theta0,
            r.n,
            cycles[t][s],
            100.0 * cv,
            worst
        ));
    }
    for t in 0..3 {
        // h-independence: growing the grid 16x may at most double the cycles
        pass &= cycles[t][2] <= 2 * cycles[t][0];
    }
    for s in 0..3 {
        // deeper quench never converges in fewer cycles
        pass &= cycles[2][s] >= cycles[0][s];
    }
    verdict(6, "solver-complexity", pass, metrics);
}

// ---------------------------------------------------------------------------
// 7: multigrid solutions match a dense exact-Jacobian Newton oracle
// ---------------------------------------------------------------------------

/// Dense oracle: the coupled per-step system written straight from the
/// time-scheme equations (constant mobility), solved with Newton + LU on
/// the raw 5-point periodic Laplacian matrix. Shares no code with the
/// solver besides the field container.
mod dense {
    use nalgebra::{DMatrix, DVector};

    pub struct Problem {
        pub lap: DMatrix<f64>,
        pub theta0: f64,
        pub delta: f64,
        /// phi-block linear part: mu = fc'(phi) + lin_phi * phi + lap_coef * (L phi) + src
        pub lin_phi: f64,
        pub lap_coef: f64,
        pub src: DVector<f64>,
        /// phi + step_coef * (L mu) = rhs1
        pub step_coef: f64,
        pub rhs1: DVector<f64>,
    }

    fn ln_delta(x: f64, delta: f64) -> f64 {
        if x > delta {
            x.ln()
        } else {
            delta.ln() + (x - delta) / delta
        }
    }

    fn ln_delta_prime(x: f64, delta: f64) -> f64 {
        if x > delta {
            1.0 / x
        } else {
            1.0 / delta
        }
    }

    pub fn fc_prime(phi: f64, theta0: f64, delta: f64) -> f64 {
        (ln_delta(1.0 + phi, delta) - ln_delta(1.0 - phi, delta)) / (2.0 * theta0)
    }

    fn fc_second(phi: f64, theta0: f64, delta: f64) -> f64 {
        (ln_delta_prime(1.0 + phi, delta) + ln_delta_prime(1.0 - phi, delta)) / (2.0 * theta0)
    }

    /// Periodic 5-point Laplacian on an n x n cell-centered grid, spacing h.
    pub fn laplacian_matrix(n: usize, h: f64) -> DMatrix<f64> {
        let cells = n * n;
        let mut m = DMatrix::zeros(cells, cells);
        let w = 1.0 / (h * h);
        for j in 0..n {
            for i in 0..n {
                let c = j * n + i;
                m[(c, c)] = -4.0 * w;
                m[(c, j * n + (i + 1) % n)] += w;
                m[(c, j * n + (i + n - 1) % n)] += w;
                m[(c, ((j + 1) % n) * n + i)] += w;
                m[(c, ((j + n - 1) % n) * n + i)] += w;
            }
        }
        m
    }

    /// Newton iteration on F(phi, mu) = 0 where
    ///   F1 = phi + step_coef * L mu - rhs1
    ///   F2 = fc'(phi) + lin_phi * phi + lap_coef * L phi + src - mu
    /// Returns (phi, mu); panics if 60 iterations do not reach 1e-13.
    pub fn solve(p: &Problem, phi0: &DVector<f64>, mu0: &DVector<f64>) -> (DVector<f64>, DVector<f64>) {
        let n = phi0.len();
        let mut phi = phi0.clone();
        let mut mu = mu0.clone();
        for _ in 0..60 {
            let lmu = &p.lap * &mu;
            let lphi = &p.lap * &phi;
            let mut f = DVector::zeros(2 * n);
            for i in 0..n {
                f[i] = phi[i] + p.step_coef * lmu[i] - p.rhs1[i];
                f[n + i] = fc_prime(phi[i], p.theta0, p.delta) + p.lin_phi * phi[i]
                    + p.lap_coef * lphi[i]
                    + p.src[i]
                    - mu[i];
            }
            let fnorm = f.amax();
            if fnorm <= 1e-13 {
                return (phi, mu);
            }
            let mut jac = DMatrix::zeros(2 * n, 2 * n);
            for i in 0..n {
                jac[(i, i)] = 1.0;
                for c in 0..n {
                    jac[(i, n + c)] = p.step_coef * p.lap[(i, c)];
                    jac[(n + i, c)] = p.lap_coef * p.lap[(i, c)];
                }
                jac[(n + i, i)] += fc_second(phi[i], p.theta0, p.delta) + p.lin_phi;
                jac[(n + i, n + i)] = -1.0;
            }
            let dx = jac
                .lu()
                .solve(&(-f))
                .expect("dense Jacobian is nonsingular on admissible states");
            for i in 0..n {
                phi[i] += dx[i];
                mu[i] += dx[n + i];
            }
        }
        panic!("dense Newton did not converge");
    }
}

#[test]
fn acceptance_07_dense_newton_oracle() {
    use nalgebra::DVector;

    let n = 8usize;
    let spec = GridSpec::new(2, n, 1.0).unwrap();
    let h = spec.h();
    let lap = dense::laplacian_matrix(n, h);
    let params = ModelParams::new(0.05, 3.0, 1e-5).unwrap();
    let dt = 1e-3;
    let a = params.stabilization_a;
    let mg = MgConfig {
        tau: 1e-12,
        ..MgConfig::default()
    };
    let kinds = [
        SchemeKind::Cs1,
        SchemeKind::Be,
        SchemeKind::Bdf2Es,
        SchemeKind::Bdf2,
    ];
    let to_dv = |f: &CellField| DVector::from_column_slice(f.data());

    let mut worst = 0.0f64;
    for (ki, &kind) in kinds.iter().enumerate() {
        for seed in 0..20u64 {
            let mut rng = ChaCha8Rng::seed_from_u64(1000 * (ki as u64 + 1) + seed);
            let mean = rng.gen_range(-0.3..0.3);
            let data = (0..spec.cells())
                .map(|_| mean + rng.gen_range(-0.4..0.4))
                .collect();
            let phi0 = CellField::from_vec(spec, data).unwrap();
            let state0 = SchemeState::initial(phi0, &params).unwrap();

            // two-step kinds get a library-generated first step so the oracle
            // and the solver share the identical history pair
            let state = if kind.needs_history() {
                flory::schemes::step(&state0, SchemeKind::Cs1, &params, dt, &mg)
                    .unwrap()
                    .0
            } else {
                state0
            };
            let (lib, _) = flory::schemes::step(&state, kind, &params, dt, &mg).unwrap();

            let phin = to_dv(state.phi());
            let eps2 = params.epsilon * params.epsilon;
            let problem = match kind {
                // phi - dt L mu = phi^n ; mu = fc'(phi) - phi^n - eps^2 L phi
                SchemeKind::Cs1 => dense::Problem {
                    lap: lap.clone(),
                    theta0: params.theta0,
                    delta: params.delta,
                    lin_phi: 0.0,
                    lap_coef: -eps2,
                    src: -&phin,
                    step_coef: -dt,
                    rhs1: phin.clone(),
                },
                // phi - dt L mu = phi^n ; mu = fc'(phi) - phi - eps^2 L phi
                SchemeKind::Be => dense::Problem {
                    lap: lap.clone(),
                    theta0: params.theta0,
                    delta: params.delta,
                    lin_phi: -1.0,
                    lap_coef: -eps2,
                    src: DVector::zeros(spec.cells()),
                    step_coef: -dt,
                    rhs1: phin.clone(),
                },
                // (3phi - 4phi^n + phi^{n-1})/2 - dt L mu = 0 ;
                // mu = fc'(phi) - (2phi^n - phi^{n-1}) - eps^2 L phi
                //      - A dt L (phi - phi^n)
                SchemeKind::Bdf2Es => {
                    let prev = to_dv(state.phi_prev().unwrap());
                    let check = 2.0 * &phin - &prev;
                    dense::Problem {
                        lap: lap.clone(),
                        theta0: params.theta0,
                        delta: params.delta,
                        lin_phi: 0.0,
                        lap_coef: -(eps2 + a * dt),
                        src: -&check + a * dt * (&lap * &phin),
                        step_coef: -2.0 * dt / 3.0,
                        rhs1: (4.0 * &phin - &prev) / 3.0,
                    }
                }
                // (3phi - 4phi^n + phi^{n-1})/2 - dt L mu = 0 ;
                // mu = fc'(phi) - phi - eps^2 L phi
                SchemeKind::Bdf2 => {
                    let prev = to_dv(state.phi_prev().unwrap());
                    dense::Problem {
                        lap: lap.clone(),
                        theta0: params.theta0,
                        delta: params.delta,
                        lin_phi: -1.0,
                        lap_coef: -eps2,
                        src: DVector::zeros(spec.cells()),
                        step_coef: -2.0 * dt / 3.0,
                        rhs1: (4.0 * &phin - &prev) / 3.0,
                    }
                }
                SchemeKind::Ac1 => unreachable!(),
            };

            let mu_guess: DVector<f64> = DVector::from_iterator(
                spec.cells(),
                state.mu().data().iter().cloned(),
            );
            let (phi_d, _) = dense::solve(&problem, &phin, &mu_guess);
            let diff = (to_dv(lib.phi()) - &phi_d).amax();
            worst = worst.max(diff);
        }
    }
    verdict(
        7,
        "dense-newton-oracle",
        worst <= 1e-8,
        format!("worst linf over 4 schemes x 20 seeds = {worst:.3e} <= 1e-8"),
    );
}

// ---------------------------------------------------------------------------
// 8: order-of-accuracy signatures against a fine-step reference
// ---------------------------------------------------------------------------

#[test]
fn acceptance_08_order_signatures() {
    // gentle coarsening box: interfaces stay resolved and the trajectory
    // stays time-correlated through t = 1 (see the notes with the tables:
    // the splitting scheme's error behaves as a coherent lag, so its ratio
    // stays near 2 even when the absolute error is large)
    let params = ModelParams::new(0.04, 3.0, 1e-5).unwrap();
    let spec = GridSpec::new(2, 32, 1.0).unwrap();
    let phi0 = random_uniform_ic(spec, 0.2, 0.05, 11).unwrap();
    let entries = [
        ComparisonEntry::plain(SchemeKind::Cs1),
        ComparisonEntry::plain(SchemeKind::Be),
        ComparisonEntry::plain(SchemeKind::Bdf2),
    ];
    // the tight tau keeps the accumulated solver floor (~2e-5 at tau = 1e-9
    // after 2e4 steps) well below the two-step scheme's dt^2 error
    let mg = MgConfig {
        tau: 1e-11,
        ..MgConfig::default()
    };
    let res = comparison_study(
        &params,
        &phi0,
        &entries,
        &[1e-4, 5e-5],
        1e-5,
        &[0.1, 0.5, 1.0],
        &mg,
    )
    .unwrap();

    // rows come scheme-major: [cs1@1e-4, cs1@5e-5, be@1e-4, be@5e-5, ...]
    let err_t1 = |label: &str, dt: f64| {
        res.rows
            .iter()
            .find(|r| r.label == label && r.dt == dt)
            .map(|r| r.errors[2])
            .unwrap()
    };
    let cs1_ratio = err_t1("cs1", 1e-4) / err_t1("cs1", 5e-5);
    let bdf2_ratio = err_t1("bdf2", 1e-4) / err_t1("bdf2", 5e-5);
    let ordered = [1e-4, 5e-5].iter().all(|&dt| {
        err_t1("bdf2", dt) < err_t1("be", dt) && err_t1("be", dt) < err_t1("cs1", dt)
    });
    let pass = (3.0..=5.0).contains(&bdf2_ratio)
        && (1.7..=2.4).contains(&cs1_ratio)
        && ordered;
    verdict(
        8,
        "order-signatures",
        pass,
        format!(
            "bdf2 ratio {bdf2_ratio:.3} in [3,5]; cs1 ratio {cs1_ratio:.3} in [1.7,2.4]; \
             ordering bdf2<be<cs1 at both dts = {ordered}"
        ),
    );
}

// ---------------------------------------------------------------------------
// 9: operator identity suite on randomized small grids
// ---------------------------------------------------------------------------

#[test]
fn acceptance_09_operator_identities() {
    let mut pass = true;
    let mut worst = 0.0f64;
    for dim in [2usize, 3] {
        let spec = GridSpec::new(dim, 8, 1.7).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(42 + dim as u64);
        let mut rand_field = |spec: GridSpec| {
            let data = (0..spec.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            CellField::from_vec(spec, data).unwrap()
        };
        let u = rand_field(spec);
        let v = rand_field(spec);
        // strictly positive face mobility from a positive cell field
        let mpos = CellField::from_vec(
            spec,
            u.data().iter().map(|x| 1.5 + 0.5 * x.sin()).collect(),
        )
        .unwrap();
        let m: FaceField = face_average(&mpos);

        // summation by parts: <div(M grad u), v>_cells = -<M grad u, grad v>_faces
        let mut weighted = gradient(&u);
        for axis in 0..dim {
            let mw = m.axis(axis).to_vec();
            for (g, w) in weighted.axis_mut(axis).iter_mut().zip(mw) {
                *g *= w;
            }
        }
        let lhs = div_mobility_grad(&m, &u).unwrap().inner_product(&v).unwrap();
        let rhs = -face_inner_product(&weighted, &gradient(&v)).unwrap();
        let sbp = (lhs - rhs).abs() / lhs.abs().max(1e-300);
        pass &= sbp <= 1e-12;
        worst = worst.max(sbp);

        // Laplacian symbol: cos(2 pi k x / L) is an eigenvector with
        // eigenvalue -(4/h^2) sin^2(pi k / n)
        for k in [1usize, 3] {
            let w = std::f64::consts::TAU * k as f64 / spec.length();
            let field = CellField::from_fn(spec, |x, _, _| (w * x).cos());
            let lam = -4.0 / (spec.h() * spec.h())
                * (std::f64::consts::PI * k as f64 / spec.n() as f64).sin().powi(2);
            let mut resid = laplacian(&field);
            resid.add_scaled(-lam, &field);
            let rel = resid.norm_linf() / lam.abs();
            pass &= rel <= 1e-12;
            worst = worst.max(rel);
        }

        // restriction is a left inverse of prolongation
        let coarse_spec = GridSpec::new(dim, 4, 1.7).unwrap();
        let c = {
            let data = (0..coarse_spec.cells()).map(|_| rng.gen_range(-1.0..1.0)).collect();
            CellField::from_vec(coarse_spec, data).unwrap()
        };
        let mut back = restrict(&prolong(&c, spec));
        back.add_scaled(-1.0, &c);
        let rp = back.norm_linf();
        pass &= rp <= 1e-14;
        worst = worst.max(rp);

        // translation equivariance: shifting cells by one in every axis
        // commutes with the Laplacian
        let shift = |f: &CellField| {
            let n = spec.n();
            let mut out = CellField::zeros(spec);
            for k in 0..if dim == 3 { n } else { 1 } {
                for j in 0..n {
                    for i in 0..n {
                        let src = if dim == 3 {
                            spec.idx3(i, j, k)
                        } else {
                            spec.idx2(i, j)
                        };
                        let dst = if dim == 3 {
                            spec.idx3((i + 1) % n, (j + 1) % n, (k + 1) % n)
                        } else {
                            spec.idx2((i + 1) % n, (j + 1) % n)
                        };
                        out.data_mut()[dst] = f.data()[src];
                    }
                }
            }
            out
        };
        let mut comm = laplacian(&shift(&u));
        comm.add_scaled(-1.0, &shift(&laplacian(&u)));
        let te = comm.norm_linf() / laplacian(&u).norm_linf();
        pass &= te <= 1e-12;
        worst = worst.max(te);
    }
    verdict(
        9,
        "operator-identities",
        pass,
        format!("worst relative defect {worst:.3e} <= 1e-12"),
    );
}

// ---------------------------------------------------------------------------
// 10: three-dimensional smoke at depth quench
// ---------------------------------------------------------------------------

#[test]
fn acceptance_10_three_dimensional_smoke() {
    let delta = 1e-5;
    let params = ModelParams::new(5e-3, 3.0, delta).unwrap();
    let spec = GridSpec::new(3, 64, 1.0).unwrap();
    let phi0 = random_uniform_ic(spec, 0.2, 0.05, 7).unwrap();
    let state0 = SchemeState::initial(phi0, &params).unwrap();
    // eps/h = 0.32 here: at this deliberately reduced resolution the
    // two-sweep V-cycle limit-cycles (as on the 128^2 grid), so the
    // smoke test runs the three-sweep variant
    let mg = MgConfig {
        lambda: 3,
        ..MgConfig::default()
    };
    let traj = run_simulation(
        state0,
        SchemeKind::Cs1,
        &params,
        1e-3,
        200,
        &mg,
        &RunOptions::default(),
    )
    .unwrap();
    let (lo, hi) = traj.phi_range();
    let audit = energy_audit(&traj.records, 1e-10);
    let drift = traj.max_mass_drift();
    let pass = traj.failure.is_none()
        && traj.strictly_separated(delta)
        && audit.violations == 0
        && drift <= 1e-8;
    verdict(
        10,
        "three-dimensional-smoke",
        pass,
        format!(
            "range [{lo:.5}, {hi:.5}] in (-1+{delta}, 1-{delta}); energy violations {}; \
             mass drift {drift:.2e}",
            audit.violations
        ),
    );
}

// Check that the reference extrema used by test 2 are the values the model
// itself predicts: solving ln((1+phi)/(1-phi)) = 2 theta0 phi by bisection
// gives the flat-interface equilibrium plateau, and the published dynamic
// maxima sit within a few 1e-4 of it (slightly above: droplet curvature
// shifts the interior composition past the flat value).
#[test]
fn acceptance_binodal_sanity() {
    for (theta0, ref_max) in [(2.0, 0.9582), (2.5, 0.9861), (3.0, 0.9952)] {
        let f = |phi: f64| ((1.0 + phi) / (1.0 - phi)).ln() - 2.0 * theta0 * phi;
        let (mut a, mut b) = (0.5, 1.0 - 1e-12);
        for _ in 0..200 {
            let mid = 0.5 * (a + b);
            if f(mid) > 0.0 {
                b = mid;
            } else {
                a = mid;
            }
        }
        let binodal = 0.5 * (a + b);
        assert!(
            (binodal - ref_max).abs() <= 2e-3,
            "theta0={theta0}: plateau {binodal:.5} vs observed max {ref_max}"
        );
    }
}
