//! Estimation of the averaged logarithmic moment generating function from
//! regeneration cycles.
//!
//! For a tilt `theta`, the limit `Lambda(theta)` of `log E[exp<theta, X_n>]/n`
//! is characterized as the unique `r` solving the renewal identity
//! `E[exp(<theta, D> - r tau)] = 1`, where `(tau, D)` is a conditioned
//! regeneration cycle's duration and displacement. Replacing the expectation
//! by the empirical mean over a [`CycleEnsemble`] turns the identity into a
//! one-dimensional root-finding problem; derivatives of `Lambda` become ratio
//! estimators in the exponentially reweighted cycles:
//!
//! * gradient: `E[D w] / E[tau w]` with `w = exp(<theta, D> - Lambda tau)`,
//! * Hessian: `E[(D - grad tau)(D - grad tau)^T w] / E[tau w]`.
//!
//! The identity characterizes `Lambda` only on the tilt region where the
//! reweighted walk keeps drifting along the regeneration direction (tilts
//! pulling hard against it push the root toward negative `r`, where the
//! heavy duration tail defeats any cycle average); elsewhere only the
//! one-sided bound `psi_hat(theta, Lambda) <= 1` survives, and the solver
//! reports a refusal rather than a number. For laws whose kernels can have
//! drifts of both signs along the direction ("nestling" laws), the region
//! boundary passes through `theta = 0` and [`classify_theta`] tests
//! membership from the data before any root solving is attempted.

use std::fmt;

use thiserror::Error;

use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;
use crate::walk_sim::{CycleEnsemble, RegenerationCycle};

/// Default z-score threshold for the region classification test.
pub const DEFAULT_Z_CRIT: f64 = 3.0;

/// Estimates whose effective sample size falls below this are refused.
pub const ESS_FLOOR: f64 = 100.0;

const MAX_BISECTIONS: usize = 200;

/// Where a tilt sits relative to the region on which the root identity
/// defines the moment generating function.
#[derive(Copy, Clone, Debug, PartialEq, Eq)]
pub enum ThetaRegion {
    /// The root identity applies. For non-nestling laws this is any finite
    /// tilt with representable weights; for nestling laws it is where the
    /// zero-tilt weight mean exceeds one decisively, making the root
    /// strictly positive.
    Interior,
    /// The zero-tilt weight mean is statistically indistinguishable from
    /// one: the root sits at zero (nestling laws only).
    Boundary,
    /// The zero-tilt weight mean falls decisively below one: for nestling
    /// laws the root identity no longer defines the limit here.
    Outside,
    /// Weights overflowed, or the effective sample size is too small to run
    /// the boundary test.
    Undetermined,
}

impl fmt::Display for ThetaRegion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ThetaRegion::Interior => "interior",
            ThetaRegion::Boundary => "boundary",
            ThetaRegion::Outside => "outside",
            ThetaRegion::Undetermined => "undetermined",
        })
    }
}

#[derive(Error, Debug)]
pub enum LmgfError {
    #[error("the root identity defines lambda only strictly inside the estimable region; this tilt classified as `{0}`")]
    NotInterior(ThetaRegion),
    #[error("no sign change over the root bracket [{lo}, {hi}]: psi-1 there is {psi_lo} and {psi_hi}")]
    BracketFailure {
        lo: f64,
        hi: f64,
        psi_lo: f64,
        psi_hi: f64,
    },
    #[error("weight exponent {max_exponent} would overflow the scalar type")]
    NonFiniteWeight { max_exponent: f64 },
    #[error("effective sample size {ess:.1} at the root is below the floor {floor}; a handful of extreme cycles would carry the estimate")]
    InsufficientSample { ess: f64, floor: f64 },
}

/// Empirical weight mean `psi_hat(theta, r) = mean exp(<theta, D> - r tau)`.
#[derive(Clone, Debug)]
pub struct PsiEstimate<F: Scalar> {
    pub value: F,
    pub std_error: F,
    pub theta: Vec<F>,
    pub r: F,
    pub n_cycles: usize,
    /// Effective sample size `(sum w)^2 / sum w^2`.
    pub ess: F,
}

impl<F: Scalar> PsiEstimate<F> {
    pub fn low_ess(&self) -> bool {
        self.ess.to_f64().unwrap_or(0.0) < ESS_FLOOR
    }
}

/// The root of the empirical renewal identity at a fixed tilt.
#[derive(Clone, Debug)]
pub struct LambdaHat<F: Scalar> {
    pub value: F,
    pub std_error: F,
    /// `|psi_hat(theta, value) - 1|` after the final polish step.
    pub residual: F,
    pub ess: F,
    pub n_cycles: usize,
}

/// Ratio estimator of the gradient of lambda, with per-component delta-method
/// standard errors.
#[derive(Clone, Debug)]
pub struct GradientHat<F: Scalar> {
    pub value: Vec<F>,
    pub std_error: Vec<F>,
}

/// Ratio estimator of the Hessian of lambda. Symmetric by construction.
#[derive(Clone, Debug)]
pub struct HessianHat<F: Scalar> {
    pub matrix: Matrix<F>,
    pub min_eigenvalue: F,
}

/// Full local picture of lambda at one tilt.
#[derive(Clone, Debug)]
pub struct LmgfEstimate<F: Scalar> {
    pub theta: Vec<F>,
    pub region: ThetaRegion,
    pub lambda: LambdaHat<F>,
    pub gradient: GradientHat<F>,
    pub hessian: HessianHat<F>,
}

/// `<theta, D> - r tau` for one cycle, evaluated the same way everywhere so
/// downstream ratio estimators agree bit for bit.
pub(crate) fn cycle_exponent<F: Scalar>(cycle: &RegenerationCycle, theta: &[F], r: F) -> F {
    let a: F = cycle
        .displacement
        .iter()
        .zip(theta)
        .map(|(&x, &t)| F::of_int(x) * t)
        .sum();
    a - r * F::of_int(cycle.duration as i64)
}

/// The largest exponent we allow: weights and their squares must both stay
/// finite for the variance formulas.
pub(crate) fn exponent_cap<F: Scalar>() -> F {
    F::max_value().ln() * F::of(0.49)
}

/// Weights `w_i = exp(<theta, D_i> - r tau_i)` for the whole ensemble.
pub(crate) fn cycle_weights<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    r: F,
) -> Result<Vec<F>, LmgfError> {
    assert_eq!(theta.len(), ensemble.dimension(), "tilt dimension");
    let cap = exponent_cap::<F>();
    ensemble
        .cycles()
        .iter()
        .map(|c| {
            let e = cycle_exponent(c, theta, r);
            if e.is_finite() && e <= cap {
                Ok(e.exp())
            } else {
                Err(LmgfError::NonFiniteWeight {
                    max_exponent: e.to_f64().unwrap_or(f64::INFINITY),
                })
            }
        })
        .collect()
}

/// Ratio of weighted block sums `sum(num_b w_b) / sum(tau_b w_b)` with its
/// delta-method standard error. Shared by the gradient estimator and the
/// tilted cycle averages so both produce identical bits for identical inputs.
pub(crate) fn weighted_block_ratio<F: Scalar>(
    numerators: &[F],
    durations: &[F],
    weights: &[F],
) -> (F, F) {
    let n = F::of_int(weights.len() as i64);
    let num: F = numerators
        .iter()
        .zip(weights)
        .map(|(&a, &w)| a * w)
        .sum();
    let den: F = durations.iter().zip(weights).map(|(&t, &w)| t * w).sum();
    let value = num / den;
    let den_mean = den / n;
    let var: F = numerators
        .iter()
        .zip(durations)
        .zip(weights)
        .map(|((&a, &t), &w)| {
            let resid = (a - value * t) * w;
            resid * resid
        })
        .sum::<F>()
        / (n - F::one());
    let se = var.sqrt() / (n.sqrt() * den_mean);
    (value, se)
}

/// Empirical weight mean at `(theta, r)` with standard error and effective
/// sample size. At `theta = 0, r = 0` every weight is exactly one, so the
/// value is exactly one with zero standard error.
pub fn psi_hat<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    r: F,
) -> Result<PsiEstimate<F>, LmgfError> {
    assert!(ensemble.len() >= 2, "need at least two cycles");
    let w = cycle_weights(ensemble, theta, r)?;
    let n = F::of_int(w.len() as i64);
    let sum: F = w.iter().copied().sum();
    let sum_sq: F = w.iter().map(|&x| x * x).sum();
    let mean = sum / n;
    let var: F = w.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / (n - F::one());
    Ok(PsiEstimate {
        value: mean,
        std_error: (var / n).sqrt(),
        theta: theta.to_vec(),
        r,
        n_cycles: w.len(),
        ess: sum * sum / sum_sq,
    })
}

/// Locate `theta` relative to the estimable region.
///
/// Non-nestling laws admit every finite tilt whose weights stay
/// representable, so the check is purely for overflow. (The zero-tilt weight
/// mean is no guide there: its population value is infinite for moderate
/// tilts even though the root itself is perfectly estimable, so neither its
/// value nor its effective sample size is consulted.)
///
/// For nestling laws the interior is exactly where the root is positive,
/// i.e. where `psi_hat(theta, 0) > 1`; the decision is a z-test of that
/// inequality at threshold `z_crit`, refused as [`ThetaRegion::Undetermined`]
/// when fewer than [`ESS_FLOOR`] effective samples back it.
pub fn classify_theta<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    z_crit: F,
) -> ThetaRegion {
    assert_eq!(theta.len(), ensemble.dimension(), "tilt dimension");
    if !ensemble.nestling().is_nestling() {
        let cap = exponent_cap::<F>();
        let representable = ensemble.cycles().iter().all(|c| {
            let e = cycle_exponent(c, theta, F::zero());
            e.is_finite() && e <= cap
        });
        return if representable {
            ThetaRegion::Interior
        } else {
            ThetaRegion::Undetermined
        };
    }
    let psi0 = match psi_hat(ensemble, theta, F::zero()) {
        Ok(p) => p,
        Err(_) => return ThetaRegion::Undetermined,
    };
    if psi0.low_ess() {
        return ThetaRegion::Undetermined;
    }
    let diff = psi0.value - F::one();
    if psi0.std_error == F::zero() {
        return if diff > F::zero() {
            ThetaRegion::Interior
        } else if diff < F::zero() {
            ThetaRegion::Outside
        } else {
            ThetaRegion::Boundary
        };
    }
    let score = diff / psi0.std_error;
    if score > z_crit {
        ThetaRegion::Interior
    } else if score < -z_crit {
        ThetaRegion::Outside
    } else {
        ThetaRegion::Boundary
    }
}

struct RootEval<F: Scalar> {
    psi: F,
    /// `mean(tau w)`, the negative of the derivative of psi in `r`.
    mean_tw: F,
}

fn eval_root_function<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    r: F,
) -> Result<RootEval<F>, LmgfError> {
    let w = cycle_weights(ensemble, theta, r)?;
    let n = F::of_int(w.len() as i64);
    let psi = w.iter().copied().sum::<F>() / n;
    let mean_tw = ensemble
        .cycles()
        .iter()
        .zip(&w)
        .map(|(c, &w)| F::of_int(c.duration as i64) * w)
        .sum::<F>()
        / n;
    Ok(RootEval { psi, mean_tw })
}

/// Solve the empirical renewal identity `psi_hat(theta, r) = 1` for `r`.
///
/// If `psi_hat(theta, 0)` is exactly one (in particular at `theta = 0`) the
/// root is zero exactly. Otherwise the tilt must classify as interior.
///
/// The root is bracketed by `lo = <theta, xi_hat> - 1/2` and
/// `hi = |theta| + 1/2` without evaluating either endpoint: at `lo` the mean
/// weight exponent equals `tau_bar / 2 > 0`, so Jensen forces
/// `psi_hat > 1`, while at `hi` every single exponent is at most
/// `-tau_i / 2 < 0` (displacements are bounded by durations), so
/// `psi_hat < 1`. Since `psi_hat(theta, .)` is continuous and strictly
/// decreasing, the root lies strictly inside, and skipping the endpoints
/// avoids computing the gigantic weights that `lo` can produce. Bisection
/// runs until `|psi_hat - 1| < tol`, then one Newton step polishes the root,
/// giving a residual of order `tol^2`.
///
/// Nestling laws clamp `lo` at zero: their interior tilts have positive
/// roots, and negative `r` multiplies the heavy duration tail into the
/// exponent for no benefit.
///
/// After solving, the weights at the root must carry at least [`ESS_FLOOR`]
/// effective samples; otherwise the estimate would hang on a few extreme
/// cycles and is refused instead of reported.
pub fn lambda_hat<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    tol: F,
) -> Result<LambdaHat<F>, LmgfError> {
    assert!(tol > F::zero());
    let psi0 = psi_hat(ensemble, theta, F::zero())?;
    if psi0.value == F::one() {
        let eval = eval_root_function(ensemble, theta, F::zero())?;
        return Ok(LambdaHat {
            value: F::zero(),
            std_error: psi0.std_error / eval.mean_tw,
            residual: F::zero(),
            ess: psi0.ess,
            n_cycles: psi0.n_cycles,
        });
    }
    let region = classify_theta(ensemble, theta, F::of(DEFAULT_Z_CRIT));
    if region != ThetaRegion::Interior {
        return Err(LmgfError::NotInterior(region));
    }

    let xi = ensemble.velocity();
    let mut lo = linalg::dot(theta, &xi) - F::of(0.5);
    if ensemble.nestling().is_nestling() {
        lo = lo.max(F::zero());
    }
    let mut hi = linalg::norm(theta) + F::of(0.5);

    let mut mid = (lo + hi) / F::of(2.0);
    let mut eval = eval_root_function(ensemble, theta, mid)?;
    let mut converged = false;
    for _ in 0..MAX_BISECTIONS {
        let g = eval.psi - F::one();
        if g.abs() < tol || (hi - lo) < F::epsilon() * (F::one() + mid.abs()) {
            converged = true;
            break;
        }
        if g > F::zero() {
            lo = mid;
        } else {
            hi = mid;
        }
        mid = (lo + hi) / F::of(2.0);
        eval = eval_root_function(ensemble, theta, mid)?;
    }
    if !converged {
        return Err(LmgfError::BracketFailure {
            lo: lo.to_f64().unwrap_or(f64::NAN),
            hi: hi.to_f64().unwrap_or(f64::NAN),
            psi_lo: (eval.psi - F::one()).to_f64().unwrap_or(f64::NAN),
            psi_hi: f64::NAN,
        });
    }
    // One Newton step: quadratic convergence squares the bisection accuracy.
    let root = mid + (eval.psi - F::one()) / eval.mean_tw;

    let w = cycle_weights(ensemble, theta, root)?;
    let n = F::of_int(w.len() as i64);
    let sum: F = w.iter().copied().sum();
    let sum_sq: F = w.iter().map(|&x| x * x).sum();
    let mean = sum / n;
    let var: F = w.iter().map(|&x| (x - mean) * (x - mean)).sum::<F>() / (n - F::one());
    let mean_tw = ensemble
        .cycles()
        .iter()
        .zip(&w)
        .map(|(c, &w)| F::of_int(c.duration as i64) * w)
        .sum::<F>()
        / n;
    let ess = sum * sum / sum_sq;
    if ess.to_f64().unwrap_or(0.0) < ESS_FLOOR {
        return Err(LmgfError::InsufficientSample {
            ess: ess.to_f64().unwrap_or(0.0),
            floor: ESS_FLOOR,
        });
    }
    Ok(LambdaHat {
        value: root,
        std_error: (var / n).sqrt() / mean_tw,
        residual: (mean - F::one()).abs(),
        ess,
        n_cycles: w.len(),
    })
}

/// Gradient of lambda at `(theta, lambda)` as the reweighted-cycle ratio
/// `mean(D w) / mean(tau w)`. Evaluates the formula at whatever `lambda` the
/// caller supplies; use the [`lambda_hat`] root for the actual gradient.
pub fn grad_lambda<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    lambda: F,
) -> Result<GradientHat<F>, LmgfError> {
    let w = cycle_weights(ensemble, theta, lambda)?;
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
        let (v, se) = weighted_block_ratio(&nums, &durations, &w);
        value.push(v);
        std_error.push(se);
    }
    Ok(GradientHat { value, std_error })
}

/// Hessian of lambda at `(theta, lambda)`:
/// `mean((D - grad tau)(D - grad tau)^T w) / mean(tau w)`, assembled from the
/// upper triangle so the result is symmetric to the bit.
pub fn hessian_lambda<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    lambda: F,
    gradient: &[F],
) -> Result<HessianHat<F>, LmgfError> {
    assert_eq!(gradient.len(), ensemble.dimension(), "gradient dimension");
    let w = cycle_weights(ensemble, theta, lambda)?;
    let d = ensemble.dimension();
    let den: F = ensemble
        .cycles()
        .iter()
        .zip(&w)
        .map(|(c, &w)| F::of_int(c.duration as i64) * w)
        .sum();
    let mut matrix = vec![vec![F::zero(); d]; d];
    for a in 0..d {
        for b in a..d {
            let num: F = ensemble
                .cycles()
                .iter()
                .zip(&w)
                .map(|(c, &w)| {
                    let t = F::of_int(c.duration as i64);
                    let ra = F::of_int(c.displacement[a]) - gradient[a] * t;
                    let rb = F::of_int(c.displacement[b]) - gradient[b] * t;
                    ra * rb * w
                })
                .sum();
            matrix[a][b] = num / den;
            matrix[b][a] = matrix[a][b];
        }
    }
    let min_eigenvalue = linalg::min_eigenvalue_symmetric(&matrix);
    Ok(HessianHat {
        matrix,
        min_eigenvalue,
    })
}

/// Root, gradient, Hessian and region classification at one tilt.
pub fn estimate_lmgf<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    tol: F,
) -> Result<LmgfEstimate<F>, LmgfError> {
    let region = classify_theta(ensemble, theta, F::of(DEFAULT_Z_CRIT));
    let lambda = lambda_hat(ensemble, theta, tol)?;
    let gradient = grad_lambda(ensemble, theta, lambda.value)?;
    let hessian = hessian_lambda(ensemble, theta, lambda.value, &gradient.value)?;
    Ok(LmgfEstimate {
        theta: theta.to_vec(),
        region,
        lambda,
        gradient,
        hessian,
    })
}
