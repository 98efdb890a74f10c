//! Logarithmic Flory-Huggins potential with the linear-extension
//! regularization of the log near the pure phases.
//!
//! The free energy density is split f(phi) = f_c(phi) - f_e(phi) with a
//! convex logarithmic part
//!
//!   f_c(phi) = (1/(2 theta0)) [ (1-phi) ln(1-phi) + (1+phi) ln(1+phi) ]
//!
//! and a concave part f_e(phi) = (phi^2 - 1)/2. The chemical potential is
//! mu = f_c'(phi) - f_e'(phi) - eps^2 lap(phi). Replacing ln by ln_delta
//! (linear below delta, C^1 at the seam) makes f_c' globally defined while
//! leaving values for |phi| <= 1 - delta untouched, which is what the
//! positivity property of the schemes relies on.

use crate::error::{Error, Result};
use crate::grid::{norm_grad_l2, solve_poisson_zero_mean, CellField, Kahan};

/// Mobility coefficient M(phi), strictly positive.
#[derive(Clone, Debug, PartialEq)]
pub enum Mobility {
    Constant(f64),
    /// (1 - phi^2)_+ + floor: a positive regularization of the degenerate
    /// polynomial mobility.
    RegularizedDegenerate { floor: f64 },
}

impl Mobility {
    pub fn validate(&self) -> Result<()> {
        let bad = |value: f64| Error::InvalidParameter {
            name: "mobility",
            reason: format!("must be strictly positive and finite, got {value}"),
        };
        match *self {
            Mobility::Constant(v) => {
                if !(v > 0.0) || !v.is_finite() {
                    return Err(bad(v));
                }
            }
            Mobility::RegularizedDegenerate { floor } => {
                if !(floor > 0.0) || !floor.is_finite() {
                    return Err(bad(floor));
                }
            }
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, phi: f64) -> f64 {
        match *self {
            Mobility::Constant(v) => v,
            Mobility::RegularizedDegenerate { floor } => (1.0 - phi * phi).max(0.0) + floor,
        }
    }

    pub fn as_constant(&self) -> Option<f64> {
        match *self {
            Mobility::Constant(v) => Some(v),
            _ => None,
        }
    }
}

/// Model parameters shared by every scheme.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    /// Interface parameter; eps^2 multiplies the surface term.
    pub epsilon: f64,
    /// Temperature-like parameter of the logarithmic part.
    pub theta0: f64,
    /// Log regularization threshold, 0 < delta < 1/4.
    pub delta: f64,
    /// BDF2 stabilization coefficient A (the energy-stable variant needs
    /// A >= 1/16).
    pub stabilization_a: f64,
    pub mobility: Mobility,
}

impl ModelParams {
    pub fn new(epsilon: f64, theta0: f64, delta: f64) -> Result<Self> {
        let p = ModelParams {
            epsilon,
            theta0,
            delta,
            stabilization_a: 1.0 / 16.0,
            mobility: Mobility::Constant(1.0),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn with_mobility(mut self, m: Mobility) -> Self {
        self.mobility = m;
        self
    }

    pub fn with_stabilization(mut self, a: f64) -> Self {
        self.stabilization_a = a;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, name: &'static str, v: f64, want: &str| {
            if ok && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter {
                    name,
                    reason: format!("must be {want}, got {v}"),
                })
            }
        };
        check(self.epsilon > 0.0, "epsilon", self.epsilon, "positive")?;
        check(self.theta0 > 0.0, "theta0", self.theta0, "positive")?;
        check(
            self.delta > 0.0 && self.delta < 0.25,
            "delta",
            self.delta,
            "in (0, 1/4)",
        )?;
        check(
            self.stabilization_a >= 0.0,
            "stabilization_a",
            self.stabilization_a,
            "nonnegative",
        )?;
        self.mobility.validate()
    }

    #[inline]
    pub fn eps2(&self) -> f64 {
        self.epsilon * self.epsilon
    }

    /// f_c'(phi) under the delta-regularized log.
    #[inline]
    pub fn fc_prime(&self, phi: f64) -> f64 {
        (ln_delta(1.0 + phi, self.delta) - ln_delta(1.0 - phi, self.delta)) / (2.0 * self.theta0)
    }

    /// f_c''(phi): 1/x on the log branch, the constant 1/delta below the
    /// seam. Strictly positive for every real phi.
    #[inline]
    pub fn fc_double_prime(&self, phi: f64) -> f64 {
        let d = |x: f64| {
            if x > self.delta {
                1.0 / x
            } else {
                1.0 / self.delta
            }
        };
        (d(1.0 + phi) + d(1.0 - phi)) / (2.0 * self.theta0)
    }

    /// The regularized convex density f_{c,delta}(phi), normalized so
    /// f_{c,delta}(0) = 0. Its derivative is `fc_prime`.
    #[inline]
    pub fn fc_value(&self, phi: f64) -> f64 {
        (ln_delta_antiderivative(1.0 + phi, self.delta)
            + ln_delta_antiderivative(1.0 - phi, self.delta))
            / (2.0 * self.theta0)
    }

    /// Concave density f_e(phi) = (phi^2 - 1)/2.
    #[inline]
    pub fn fe_value(&self, phi: f64) -> f64 {
        0.5 * (phi * phi - 1.0)
    }
}

/// ln x for x > delta, the tangent-line extension ln(delta) + (x-delta)/delta
/// below. C^1 at the seam, defined for every real x.
#[inline]
pub fn ln_delta(x: f64, delta: f64) -> f64 {
    if x > delta {
        x.ln()
    } else {
        delta.ln() + (x - delta) / delta
    }
}

/// Antiderivative of ln_delta with F(1) = 0: x ln x - x + 1 above the seam,
/// the matching quadratic x ln(delta) + (x - delta)^2/(2 delta) - delta + 1
/// below (value and slope agree at x = delta).
#[inline]
fn ln_delta_antiderivative(x: f64, delta: f64) -> f64 {
    if x > delta {
        x * x.ln() - x + 1.0
    } else {
        let t = x - delta;
        x * delta.ln() + 0.5 * t * t / delta - delta + 1.0
    }
}

/// Discrete free energy together with a saturation indicator.
#[derive(Clone, Copy, Debug)]
pub struct EnergyValue {
    pub value: f64,
    /// True if any cell satisfies |phi| >= 1 - delta, i.e. the log part was
    /// evaluated on (or beyond) the regularized branch.
    pub saturated: bool,
}

/// E_h(phi) = <f_{c,delta}(phi) - f_e(phi), 1> + (eps^2/2) ||grad phi||^2.
/// Defined for any field; saturation is flagged, not an error.
pub fn discrete_energy(phi: &CellField, params: &ModelParams) -> EnergyValue {
    let mut s = Kahan::new();
    let mut saturated = false;
    let sat_level = 1.0 - params.delta;
    for &v in phi.data() {
        if v.abs() >= sat_level {
            saturated = true;
        }
        s.add(params.fc_value(v) - params.fe_value(v));
    }
    let grad = norm_grad_l2(phi);
    EnergyValue {
        value: s.sum() * phi.spec().cell_volume() + 0.5 * params.eps2() * grad * grad,
        saturated,
    }
}

/// The quantity whose monotone decay the stabilized BDF2 scheme guarantees
/// for A >= 1/16:
///
///   E_h(phi_new) + (1/(4 dt)) ||phi_new - phi_old||_{-1,h}^2
///               + (1/2) ||phi_new - phi_old||_2^2.
///
/// `tol` is the relative tolerance of the Poisson solve behind the -1 norm.
pub fn modified_energy_bdf2(
    phi_new: &CellField,
    phi_old: &CellField,
    dt: f64,
    params: &ModelParams,
    tol: f64,
) -> Result<f64> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidParameter {
            name: "dt",
            reason: format!("must be positive, got {dt}"),
        });
    }
    let mut diff = phi_new.clone();
    diff.add_scaled(-1.0, phi_old);
    // The -1 norm needs a zero-mean argument; CH steps conserve the mean, so
    // only round-off is removed here.
    let m = diff.mean();
    diff.shift(-m);
    let hm1_sq = if diff.norm_l2() == 0.0 {
        0.0
    } else {
        let psi = solve_poisson_zero_mean(&diff, tol)?;
        diff.inner_product(&psi)?.max(0.0)
    };
    let l2 = diff.norm_l2();
    Ok(discrete_energy(phi_new, params).value + hm1_sq / (4.0 * dt) + 0.5 * l2 * l2)
}
