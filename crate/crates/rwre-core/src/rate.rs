//! The rate function as the convex conjugate of the estimated moment
//! generating function.
//!
//! For a velocity `xi` the rate is `I(xi) = <theta(xi), xi> - lambda(theta)`
//! where `theta(xi)` solves `grad lambda(theta) = xi`. Since the empirical
//! `lambda_hat` is itself the moment generating function of the harvested
//! cycle measure, it is genuinely convex, its gradient map is monotone, and
//! damped Newton on `grad lambda_hat(theta) = xi` with the exact ratio
//! Hessian converges whenever `xi` lies in the gradient's range. Velocities
//! outside that range (or requiring tilts past the estimable region) surface
//! as refusals, never as extrapolated numbers.

use thiserror::Error;

use crate::environment::EnvironmentLaw;
use crate::linalg::{self, Matrix};
use crate::lmgf::{
    classify_theta, grad_lambda, hessian_lambda, lambda_hat, weighted_block_ratio, LmgfError,
    ThetaRegion,
};
use crate::scalar::Scalar;
use crate::walk_sim::{harvest_cycles, CycleEnsemble, HarvestError};

/// Knobs for the Newton inversion and any harvesting a sweep performs.
#[derive(Clone, Debug)]
pub struct SolverParams<F: Scalar> {
    /// Stop when `|grad lambda_hat(theta) - xi| < grad_tol`.
    pub grad_tol: F,
    /// Root tolerance handed to the inner `lambda_hat` solves.
    pub lambda_tol: F,
    /// z-score threshold for region classification along the way.
    pub z_crit: F,
    pub max_iter: usize,
    /// Walk-step budget per cycle before a harvest declares starvation.
    pub cycle_cap: usize,
    /// Independent walker count used when an operation harvests for itself.
    pub runs: usize,
}

impl<F: Scalar> Default for SolverParams<F> {
    fn default() -> Self {
        SolverParams {
            grad_tol: F::of(1e-6),
            lambda_tol: F::of(1e-9),
            z_crit: F::of(crate::lmgf::DEFAULT_Z_CRIT),
            max_iter: 60,
            cycle_cap: 1_000_000,
            runs: 8,
        }
    }
}

#[derive(Error, Debug)]
pub enum RateError {
    #[error("the inversion left the estimable tilt region (iterate classified `{label}`); the velocity likely falls outside the estimator's range")]
    LeftRegion { label: ThetaRegion },
    #[error("no convergence after {iterations} Newton iterations; gradient residual {residual}")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("hessian is numerically singular at the current tilt")]
    DegenerateHessian,
    #[error("the boundary probe studies nestling laws; this law is non-nestling")]
    NotNestling,
    #[error(transparent)]
    Lmgf(#[from] LmgfError),
    #[error(transparent)]
    Harvest(#[from] HarvestError),
}

/// Law-of-large-numbers velocity: ratio of mean cycle displacement to mean
/// cycle duration, with per-axis delta-method standard errors.
#[derive(Clone, Debug)]
pub struct VelocityEstimate<F: Scalar> {
    pub value: Vec<F>,
    pub std_error: Vec<F>,
}

/// One evaluated point of the rate function.
#[derive(Clone, Debug)]
pub struct RatePoint<F: Scalar> {
    pub xi: Vec<F>,
    /// The conjugate tilt solving `grad lambda_hat(theta) = xi`.
    pub theta: Vec<F>,
    pub rate: F,
    /// Standard error of the rate; by the envelope argument the tilt's own
    /// uncertainty enters only at second order, so this is the root's SE.
    pub rate_se: F,
    /// Curvature of the rate function: inverse of the lambda Hessian.
    pub rate_hessian: Matrix<F>,
    /// `max over the diagnostic tilt grid of <theta', xi> - lambda_hat(theta')`
    /// minus the reported rate; nonnegative, and small unless the solver
    /// stopped short of the true conjugate tilt.
    pub fenchel_gap: F,
    /// `|grad lambda_hat(theta) - xi|` at the accepted tilt.
    pub grad_residual: F,
    /// Effective sample size of the reweighted cycles at the accepted tilt.
    pub ess: F,
}

/// One row of a velocity sweep: the grid point with either its rate point or
/// the honest reason none could be estimated.
#[derive(Debug)]
pub struct RateCurveRow<F: Scalar> {
    pub xi: Vec<F>,
    pub outcome: Result<RatePoint<F>, RateError>,
}

/// A whole sweep together with the shared ensemble it was computed from.
#[derive(Debug)]
pub struct RateCurve<F: Scalar> {
    pub ensemble: CycleEnsemble<F>,
    pub rows: Vec<RateCurveRow<F>>,
}

/// One tilt of the nestling boundary probe.
#[derive(Clone, Debug)]
pub struct BoundaryProbePoint<F: Scalar> {
    pub theta: Vec<F>,
    pub label: ThetaRegion,
    /// Interior tilts: gradient at the root. Boundary tilts: the extended
    /// gradient, i.e. the same ratio evaluated with the root pinned at zero.
    pub gradient: Option<Vec<F>>,
    /// At `theta = 0`: `<hessian(0)^{-1} xi_hat, xi_hat>`, whose positivity
    /// witnesses that the velocity leaves the boundary patch transversally.
    pub inner_product_check: Option<F>,
}

/// Ratio estimator `mean(displacement) / mean(duration)` per axis.
pub fn lln_velocity<F: Scalar>(ensemble: &CycleEnsemble<F>) -> VelocityEstimate<F> {
    let ones = vec![F::one(); ensemble.len()];
    let durations: Vec<F> = ensemble
        .cycles()
        .iter()
        .map(|c| F::of_int(c.duration as i64))
        .collect();
    let mut value = Vec::with_capacity(ensemble.dimension());
    let mut std_error = Vec::with_capacity(ensemble.dimension());
    for axis in 0..ensemble.dimension() {
        let nums: Vec<F> = ensemble
            .cycles()
            .iter()
            .map(|c| F::of_int(c.displacement[axis]))
            .collect();
        let (v, se) = weighted_block_ratio(&nums, &durations, &ones);
        value.push(v);
        std_error.push(se);
    }
    VelocityEstimate { value, std_error }
}

struct GradEval<F: Scalar> {
    lambda: F,
    lambda_se: F,
    ess: F,
    gradient: Vec<F>,
    residual: Vec<F>,
    residual_norm: F,
}

fn eval_gradient<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    xi: &[F],
    params: &SolverParams<F>,
) -> Result<GradEval<F>, RateError> {
    let label = classify_theta(ensemble, theta, params.z_crit);
    if label != ThetaRegion::Interior {
        return Err(RateError::LeftRegion { label });
    }
    let lam = lambda_hat(ensemble, theta, params.lambda_tol)?;
    let grad = grad_lambda(ensemble, theta, lam.value)?;
    let residual: Vec<F> = xi
        .iter()
        .zip(&grad.value)
        .map(|(&x, &g)| x - g)
        .collect();
    let residual_norm = linalg::norm(&residual);
    Ok(GradEval {
        lambda: lam.value,
        lambda_se: lam.std_error,
        ess: lam.ess,
        gradient: grad.value,
        residual,
        residual_norm,
    })
}

/// Invert the gradient map: find `theta` with
/// `grad lambda_hat(theta) = xi` by damped Newton with the exact ratio
/// Hessian. Every iterate must classify as interior; a trial step is halved
/// until it both stays estimable and shrinks the gradient residual.
pub fn invert_velocity<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    xi: &[F],
    params: &SolverParams<F>,
) -> Result<Vec<F>, RateError> {
    assert_eq!(xi.len(), ensemble.dimension(), "velocity dimension");
    // Zero tilt sits on the region boundary for nestling laws, so those
    // start a nudge along the regeneration direction instead.
    let mut theta: Vec<F> = if ensemble.nestling().is_nestling() {
        ensemble.direction().iter().map(|&u| u * F::of(0.1)).collect()
    } else {
        vec![F::zero(); ensemble.dimension()]
    };
    let mut eval = eval_gradient(ensemble, &theta, xi, params)?;

    for iteration in 0..params.max_iter {
        if eval.residual_norm < params.grad_tol {
            return Ok(theta);
        }
        let hess = hessian_lambda(ensemble, &theta, eval.lambda, &eval.gradient)?;
        let mut step =
            linalg::solve(&hess.matrix, &eval.residual).ok_or(RateError::DegenerateHessian)?;

        let mut accepted = false;
        let mut last_region_error: Option<RateError> = None;
        for _ in 0..30 {
            let candidate: Vec<F> = theta.iter().zip(&step).map(|(&t, &s)| t + s).collect();
            match eval_gradient(ensemble, &candidate, xi, params) {
                Ok(next) if next.residual_norm < eval.residual_norm => {
                    theta = candidate;
                    eval = next;
                    accepted = true;
                    break;
                }
                Ok(_) => {}
                Err(e @ RateError::LeftRegion { .. }) | Err(e @ RateError::Lmgf(_)) => {
                    last_region_error = Some(e);
                }
                Err(e) => return Err(e),
            }
            for s in &mut step {
                *s = *s / F::of(2.0);
            }
        }
        if !accepted {
            // A full backtrack that never re-entered the estimable region
            // means the target velocity pulls past it.
            return Err(last_region_error.unwrap_or(RateError::NoConvergence {
                iterations: iteration,
                residual: eval.residual_norm.to_f64().unwrap_or(f64::NAN),
            }));
        }
    }
    if eval.residual_norm < params.grad_tol {
        return Ok(theta);
    }
    Err(RateError::NoConvergence {
        iterations: params.max_iter,
        residual: eval.residual_norm.to_f64().unwrap_or(f64::NAN),
    })
}

/// Evaluate the rate function at one velocity.
pub fn rate_at<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    xi: &[F],
    params: &SolverParams<F>,
) -> Result<RatePoint<F>, RateError> {
    let theta = invert_velocity(ensemble, xi, params)?;
    let eval = eval_gradient(ensemble, &theta, xi, params)?;
    let hess = hessian_lambda(ensemble, &theta, eval.lambda, &eval.gradient)?;
    let rate_hessian = linalg::invert(&hess.matrix).ok_or(RateError::DegenerateHessian)?;

    // The conjugate objective vanishes at zero tilt (lambda_hat(0) = 0
    // exactly), so the supremum is nonnegative; only solver roundoff can dip
    // below, and it is clamped away.
    let raw = linalg::dot(&theta, xi) - eval.lambda;
    let rate = if raw > F::zero() { raw } else { F::zero() };

    // Fenchel diagnostic: other tilts may not beat the conjugate one by more
    // than estimation noise. Probe a fixed perturbation grid around theta;
    // grid points the estimator refuses are skipped, not invented.
    let mut best = raw;
    for delta in [F::of(0.05), F::of(0.1), F::of(0.2)] {
        for axis in 0..theta.len() {
            for sign in [F::one(), -F::one()] {
                let mut probe = theta.clone();
                probe[axis] = probe[axis] + sign * delta;
                if let Ok(lam) = lambda_hat(ensemble, &probe, params.lambda_tol) {
                    let value = linalg::dot(&probe, xi) - lam.value;
                    if value > best {
                        best = value;
                    }
                }
            }
        }
    }

    Ok(RatePoint {
        xi: xi.to_vec(),
        theta,
        rate,
        rate_se: eval.lambda_se,
        rate_hessian,
        fenchel_gap: best - raw,
        grad_residual: eval.residual_norm,
        ess: eval.ess,
    })
}

/// Sweep the rate function across a velocity grid on one shared ensemble.
/// Rows that fail keep their error; the sweep itself never aborts once the
/// harvest has succeeded.
pub fn rate_curve<F: Scalar>(
    law: &EnvironmentLaw<F>,
    direction: &[F],
    xi_grid: &[Vec<F>],
    n_cycles: usize,
    seed: u64,
    params: &SolverParams<F>,
) -> Result<RateCurve<F>, RateError> {
    let ensemble = harvest_cycles(law, direction, n_cycles, seed, params.cycle_cap, params.runs)?;
    let rows = xi_grid
        .iter()
        .map(|xi| RateCurveRow {
            xi: xi.clone(),
            outcome: rate_at(&ensemble, xi, params),
        })
        .collect();
    Ok(RateCurve { ensemble, rows })
}

/// Walk a tilt sequence toward the nestling region boundary, reporting the
/// gradient at interior tilts and the extended (root pinned at zero)
/// gradient on the boundary. For `theta = 0` the probe also reports the
/// transversality inner product `<hessian^{-1} xi_hat, xi_hat>`.
pub fn nestling_boundary_probe<F: Scalar>(
    law: &EnvironmentLaw<F>,
    direction: &[F],
    theta_sequence: &[Vec<F>],
    n_cycles: usize,
    seed: u64,
    params: &SolverParams<F>,
) -> Result<Vec<BoundaryProbePoint<F>>, RateError> {
    let ensemble = harvest_cycles(law, direction, n_cycles, seed, params.cycle_cap, params.runs)?;
    if !ensemble.nestling().is_nestling() {
        return Err(RateError::NotNestling);
    }
    let xi = lln_velocity(&ensemble);
    let mut points = Vec::with_capacity(theta_sequence.len());
    for theta in theta_sequence {
        let label = classify_theta(&ensemble, theta, params.z_crit);
        let gradient = match label {
            ThetaRegion::Interior => lambda_hat(&ensemble, theta, params.lambda_tol)
                .and_then(|lam| grad_lambda(&ensemble, theta, lam.value))
                .map(|g| g.value)
                .ok(),
            ThetaRegion::Boundary => grad_lambda(&ensemble, theta, F::zero())
                .map(|g| g.value)
                .ok(),
            _ => None,
        };
        let at_origin = theta.iter().all(|&t| t == F::zero());
        let inner_product_check = if at_origin {
            gradient.as_ref().and_then(|grad| {
                let hess = hessian_lambda(&ensemble, theta, F::zero(), grad).ok()?;
                let eta = linalg::solve(&hess.matrix, &xi.value)?;
                Some(linalg::dot(&eta, &xi.value))
            })
        } else {
            None
        };
        points.push(BoundaryProbePoint {
            theta: theta.clone(),
            label,
            gradient,
            inner_product_check,
        });
    }
    Ok(points)
}
