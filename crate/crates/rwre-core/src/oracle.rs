//! Exact reference values the Monte Carlo estimators are tested against.
//!
//! Three independent sources of truth live here:
//!
//! * [`exact_annealed_expectation`] enumerates every nearest-neighbor path of
//!   a fixed length and computes the averaged tilted expectation
//!   `E[exp(<theta, X_n>)]` exactly (up to floating-point rounding), using the
//!   product form of the averaged path weight over visited sites.
//! * [`CramerClosedForm`] covers deterministic environments (a single mixture
//!   atom), where the walk is a plain i.i.d. random walk and the cumulant
//!   generating function, its derivatives, and the rate function have closed
//!   forms.
//! * [`solomon_velocity`] computes the limiting speed of a one-dimensional
//!   walk in exact rational arithmetic from the classical odds-ratio formula.
//!
//! None of these touch the sampling code, so agreement between an estimator
//! and an oracle is evidence for both.

use std::collections::BTreeMap;

use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rayon::prelude::*;
use thiserror::Error;

use crate::environment::{EnvironmentLaw, Step, TransitionKernel};
use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;

/// Hard cap on the number of enumerated paths, `(2d)^n`.
pub const MAX_ENUMERATED_PATHS: u128 = 100_000_000;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum OracleError {
    #[error("enumerating {paths} paths exceeds the cap of {cap}")]
    TooLarge { paths: u128, cap: u128 },
    #[error("mean backtracking odds ratio is {mean_rho}; the speed formula needs it below 1")]
    NotTransientRight { mean_rho: f64 },
    #[error("this reference requires a one-dimensional law, got dimension {0}")]
    NeedsOneDimension(usize),
    #[error("no walk lengths supplied")]
    EmptyGrid,
}

fn kahan_add<F: Scalar>(sum: &mut F, comp: &mut F, term: F) {
    let y = term - *comp;
    let t = *sum + y;
    *comp = (t - *sum) - y;
    *sum = t;
}

fn mix<F: Scalar>(weights: &[F], prods: &[F]) -> F {
    weights
        .iter()
        .zip(prods)
        .map(|(&w, &p)| w * p)
        .sum()
}

/// Depth-first enumerator over nearest-neighbor paths.
///
/// The averaged weight of a path factorizes over visited sites: each site
/// contributes the mixture average of the product of its jump probabilities.
/// The recursion keeps, per site, the running product under every atom, so a
/// step only touches one site's state; the path weight is carried down by
/// value and updated with the changed site's contribution ratio.
struct Enumerator<'a, F: Scalar> {
    law: &'a EnvironmentLaw<F>,
    theta: &'a [F],
    n: usize,
    position: Vec<i64>,
    sites: BTreeMap<Vec<i64>, Vec<F>>,
    sum: F,
    comp: F,
}

impl<'a, F: Scalar> Enumerator<'a, F> {
    fn new(law: &'a EnvironmentLaw<F>, theta: &'a [F], n: usize) -> Enumerator<'a, F> {
        Enumerator {
            law,
            theta,
            n,
            position: vec![0; law.dimension()],
            sites: BTreeMap::new(),
            sum: F::zero(),
            comp: F::zero(),
        }
    }

    /// `weight` is the averaged probability of the path so far, `level` its
    /// accumulated tilt `<theta, X>`. `only` restricts the first step so the
    /// top level can be split across threads by first-step branch.
    fn descend(&mut self, depth: usize, weight: F, level: F, only: Option<Step>) {
        if depth == self.n {
            kahan_add(&mut self.sum, &mut self.comp, weight * level.exp());
            return;
        }
        let law = self.law;
        for step in Step::all(law.dimension()) {
            if only.is_some_and(|f| step != f) {
                continue;
            }
            let key = self.position.clone();
            let prods = self
                .sites
                .entry(key.clone())
                .or_insert_with(|| vec![F::one(); law.atoms().len()]);
            let saved = prods.clone();
            let before = mix(law.weights(), prods);
            for (prod, atom) in prods.iter_mut().zip(law.atoms()) {
                *prod = *prod * atom.prob(step);
            }
            let after = mix(law.weights(), prods);
            let child_weight = weight / before * after;

            step.apply(&mut self.position);
            self.descend(depth + 1, child_weight, level + step.level_gain(self.theta), None);
            self.position[step.axis()] -= step.delta();
            self.sites.insert(key, saved);
        }
    }
}

/// Exact averaged tilted expectation `E[exp(<theta, X_n>)]` by full path
/// enumeration. Errors if `(2d)^n` exceeds [`MAX_ENUMERATED_PATHS`].
///
/// The result is deterministic regardless of thread count: the enumeration is
/// split by first step and the per-branch sums are combined in step order.
pub fn exact_annealed_expectation<F: Scalar>(
    law: &EnvironmentLaw<F>,
    theta: &[F],
    n: usize,
) -> Result<F, OracleError> {
    assert_eq!(
        theta.len(),
        law.dimension(),
        "tilt dimension must match the law"
    );
    let paths = (2 * law.dimension() as u128)
        .checked_pow(n as u32)
        .unwrap_or(u128::MAX);
    if paths > MAX_ENUMERATED_PATHS {
        return Err(OracleError::TooLarge {
            paths,
            cap: MAX_ENUMERATED_PATHS,
        });
    }
    if n == 0 {
        return Ok(F::one());
    }
    let branch_sums: Vec<F> = (0..2 * law.dimension())
        .into_par_iter()
        .map(|i| {
            let mut e = Enumerator::new(law, theta, n);
            e.descend(0, F::one(), F::zero(), Some(Step::from_index(i)));
            e.sum + e.comp
        })
        .collect();
    let mut sum = F::zero();
    let mut comp = F::zero();
    for s in branch_sums {
        kahan_add(&mut sum, &mut comp, s);
    }
    Ok(sum + comp)
}

/// Finite-length cumulant values `ln E[exp(<theta, X_n>)] / n` together with
/// their `1/n` extrapolation to infinite length.
#[derive(Clone, Debug)]
pub struct FiniteLengthFit<F: Scalar> {
    /// Intercept of the least-squares fit `lambda_n ~ lambda + slope / n`.
    pub lambda: F,
    pub slope: F,
    /// Root-mean-square residual of the fit.
    pub residual: F,
    /// The fitted points `(n, lambda_n)` in increasing `n`.
    pub points: Vec<(usize, F)>,
}

/// Evaluate `lambda_n = ln E[exp(<theta, X_n>)] / n` on a grid of lengths and
/// extrapolate to `n = infinity` with a least-squares fit in `1/n`.
pub fn finite_n_lambda<F: Scalar>(
    law: &EnvironmentLaw<F>,
    theta: &[F],
    lengths: &[usize],
) -> Result<FiniteLengthFit<F>, OracleError> {
    if lengths.is_empty() {
        return Err(OracleError::EmptyGrid);
    }
    let mut ns = lengths.to_vec();
    ns.sort_unstable();
    ns.dedup();
    let mut points = Vec::with_capacity(ns.len());
    for &n in &ns {
        assert!(n >= 1, "walk lengths must be positive");
        let e = exact_annealed_expectation(law, theta, n)?;
        points.push((n, e.ln() / F::of_int(n as i64)));
    }
    if points.len() == 1 {
        return Ok(FiniteLengthFit {
            lambda: points[0].1,
            slope: F::zero(),
            residual: F::zero(),
            points,
        });
    }
    let k = F::of(points.len() as f64);
    let mut sx = F::zero();
    let mut sy = F::zero();
    let mut sxx = F::zero();
    let mut sxy = F::zero();
    for &(n, y) in &points {
        let x = F::one() / F::of_int(n as i64);
        sx = sx + x;
        sy = sy + y;
        sxx = sxx + x * x;
        sxy = sxy + x * y;
    }
    let slope = (k * sxy - sx * sy) / (k * sxx - sx * sx);
    let lambda = (sy - slope * sx) / k;
    let mut ss = F::zero();
    for &(n, y) in &points {
        let x = F::one() / F::of_int(n as i64);
        let r = y - lambda - slope * x;
        ss = ss + r * r;
    }
    Ok(FiniteLengthFit {
        lambda,
        slope,
        residual: (ss / k).sqrt(),
        points,
    })
}

/// Closed forms for a deterministic environment (single kernel), where the
/// walk is an i.i.d. nearest-neighbor random walk: cumulant generating
/// function, its gradient and Hessian, and the Legendre-transform rate
/// function.
#[derive(Clone, Debug)]
pub struct CramerClosedForm<F: Scalar> {
    kernel: TransitionKernel<F>,
}

impl<F: Scalar> CramerClosedForm<F> {
    pub fn new(kernel: TransitionKernel<F>) -> CramerClosedForm<F> {
        CramerClosedForm { kernel }
    }

    pub fn kernel(&self) -> &TransitionKernel<F> {
        &self.kernel
    }

    /// Weighted step sums `(m0, m1, m2_diag)` under the tilt `theta`:
    /// total mass, first moment vector, and the diagonal of the second
    /// moment matrix (off-diagonal entries vanish for unit steps).
    fn moments(&self, theta: &[F]) -> (F, Vec<F>, Vec<F>) {
        let d = self.kernel.dimension();
        let mut m0 = F::zero();
        let mut m1 = vec![F::zero(); d];
        let mut m2 = vec![F::zero(); d];
        for step in Step::all(d) {
            let w = self.kernel.prob(step) * step.level_gain(theta).exp();
            m0 = m0 + w;
            let a = step.axis();
            m1[a] = if step.positive() { m1[a] + w } else { m1[a] - w };
            m2[a] = m2[a] + w;
        }
        (m0, m1, m2)
    }

    /// `lambda(theta) = ln sum_z p_z exp(<theta, z>)`.
    pub fn lambda(&self, theta: &[F]) -> F {
        self.moments(theta).0.ln()
    }

    pub fn grad(&self, theta: &[F]) -> Vec<F> {
        let (m0, m1, _) = self.moments(theta);
        m1.into_iter().map(|x| x / m0).collect()
    }

    pub fn hessian(&self, theta: &[F]) -> Matrix<F> {
        let d = self.kernel.dimension();
        let (m0, m1, m2) = self.moments(theta);
        let g: Vec<F> = m1.into_iter().map(|x| x / m0).collect();
        let mut h = vec![vec![F::zero(); d]; d];
        for i in 0..d {
            for j in 0..d {
                h[i][j] = if i == j { m2[i] / m0 } else { F::zero() } - g[i] * g[j];
            }
        }
        h
    }

    /// Legendre transform `I(xi) = sup_theta <theta, xi> - lambda(theta)`.
    ///
    /// In one dimension this is evaluated in closed form; in higher dimension
    /// the supremum is located by a damped Newton iteration on
    /// `grad lambda(theta) = xi`. Velocities outside the closed unit
    /// one-norm ball are unreachable and get an infinite rate.
    pub fn rate(&self, xi: &[F]) -> F {
        let d = self.kernel.dimension();
        assert_eq!(xi.len(), d, "velocity dimension must match the kernel");
        let one_norm: F = xi.iter().map(|x| x.abs()).sum();
        if one_norm > F::one() + F::prob_tol() {
            return F::infinity();
        }
        if d == 1 {
            let p = self.kernel.prob(Step::new(0, true));
            let q = self.kernel.prob(Step::new(0, false));
            let half = F::of(0.5);
            let hu = (F::one() + xi[0]) * half;
            let hd = (F::one() - xi[0]) * half;
            let xlog = |h: F, p: F| if h > F::zero() { h * (h / p).ln() } else { F::zero() };
            return xlog(hu, p) + xlog(hd, q);
        }
        // Damped Newton ascent of the concave map theta -> <theta, xi> - lambda.
        let objective = |theta: &[F]| linalg::dot(theta, xi) - self.lambda(theta);
        let mut theta = vec![F::zero(); d];
        let mut best = objective(&theta);
        for _ in 0..200 {
            let g = self.grad(&theta);
            let resid: Vec<F> = xi.iter().zip(&g).map(|(&x, &gi)| x - gi).collect();
            let sup_norm = resid.iter().map(|r| r.abs()).fold(F::zero(), F::max);
            if sup_norm < F::of(1e-13) {
                break;
            }
            let h = self.hessian(&theta);
            let delta = linalg::solve(&h, &resid).unwrap_or(resid.clone());
            let mut t = F::one();
            let mut accepted = false;
            for _ in 0..60 {
                let trial: Vec<F> = theta.iter().zip(&delta).map(|(&a, &b)| a + t * b).collect();
                let val = objective(&trial);
                if val > best {
                    theta = trial;
                    best = val;
                    accepted = true;
                    break;
                }
                t = t * F::of(0.5);
            }
            if !accepted {
                break;
            }
        }
        best
    }
}

/// Limiting speed of a one-dimensional walk, computed in exact rational
/// arithmetic and returned as a scalar.
///
/// With `rho = pi(0,-1) / pi(0,+1)` per mixture atom, the averaged odds ratio
/// `E[rho]` determines the speed: below one the walk is ballistic to the
/// right with velocity `(1 - E[rho]) / (1 + E[rho])`; at or above one there
/// is no positive right speed and the formula does not apply.
pub fn solomon_velocity<F: Scalar>(law: &EnvironmentLaw<F>) -> Result<F, OracleError> {
    let v = solomon_velocity_exact(law)?;
    Ok(F::of(v.to_f64().expect("speed is a finite ratio")))
}

/// [`solomon_velocity`] before the final conversion: the exact rational built
/// from the binary rationals behind the stored floating-point probabilities.
pub fn solomon_velocity_exact<F: Scalar>(
    law: &EnvironmentLaw<F>,
) -> Result<BigRational, OracleError> {
    if law.dimension() != 1 {
        return Err(OracleError::NeedsOneDimension(law.dimension()));
    }
    let one = BigRational::one();
    let mut mean = BigRational::zero();
    for (atom, &w) in law.atoms().iter().zip(law.weights()) {
        let p = exact_rational(atom.prob(Step::new(0, true)));
        let rho = (one.clone() - p.clone()) / p;
        mean += exact_rational(w) * rho;
    }
    if mean >= one {
        return Err(OracleError::NotTransientRight {
            mean_rho: mean.to_f64().unwrap_or(f64::NAN),
        });
    }
    Ok((one.clone() - mean.clone()) / (one + mean))
}

fn exact_rational<F: Scalar>(x: F) -> BigRational {
    let f = x.to_f64().expect("probabilities are finite");
    BigRational::from_float(f).expect("probabilities are finite")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EnvironmentLaw;
    use num_bigint::BigInt;

    fn two_atom() -> EnvironmentLaw<f64> {
        EnvironmentLaw::two_point_1d(0.3, 0.7).unwrap()
    }

    fn deterministic(p: f64) -> EnvironmentLaw<f64> {
        EnvironmentLaw::deterministic(TransitionKernel::simple_1d(p).unwrap())
    }

    #[test]
    fn zero_tilt_mass_is_one() {
        for law in [two_atom(), deterministic(0.6)] {
            for n in [1usize, 5, 10] {
                let e = exact_annealed_expectation(&law, &[0.0], n).unwrap();
                assert!((e - 1.0).abs() < 1e-12, "n={n}: {e}");
            }
        }
    }

    #[test]
    fn deterministic_environment_factorizes() {
        let law = deterministic(0.6);
        let m = 0.6 * 0.5f64.exp() + 0.4 * (-0.5f64).exp();
        let e = exact_annealed_expectation(&law, &[0.5], 8).unwrap();
        assert!((e - m.powi(8)).abs() < 1e-12 * m.powi(8));
    }

    #[test]
    fn one_step_expectation_uses_the_mean_kernel() {
        let e = exact_annealed_expectation(&two_atom(), &[0.5], 1).unwrap();
        let expected = 0.5 * 0.5f64.exp() + 0.5 * (-0.5f64).exp();
        assert!((e - expected).abs() < 1e-15);
    }

    #[test]
    fn frozen_two_atom_tilted_expectation() {
        // Four paths by hand: 0.25 e^2 + 0.5 + 0.25 e^{-2}.
        let e = exact_annealed_expectation(&two_atom(), &[1.0], 2).unwrap();
        let expected = 0.25 * 2f64.exp() + 0.5 + 0.25 * (-2f64).exp();
        assert!((e - expected).abs() <= 1e-12, "expectation drifted: {e:.16}");
        assert!((e - 2.3810978455418157).abs() <= 1e-12);
    }

    #[test]
    fn mixture_discrepancy_appears_when_a_site_is_left_twice() {
        // A site's kernel is drawn once, so the mixture and its mean kernel
        // agree while no site is left more than once. The first double
        // departure from a site is possible at n=3, and for a mixture with
        // asymmetric mean the discrepancy there is strictly positive.
        let law = EnvironmentLaw::two_point_1d(0.3f64, 0.5).unwrap();
        let mean = CramerClosedForm::new(law.mean_kernel());
        for n in 1..=2usize {
            let e_mix = exact_annealed_expectation(&law, &[0.5], n).unwrap();
            let e_det = (mean.lambda(&[0.5]) * n as f64).exp();
            assert!((e_mix - e_det).abs() < 1e-13, "n={n}: {e_mix} vs {e_det}");
        }
        let e_mix = exact_annealed_expectation(&law, &[0.5], 3).unwrap();
        let e_det = (mean.lambda(&[0.5]) * 3.0).exp();
        assert!(
            e_mix > e_det + 1e-3,
            "environment memory should be visible at n=3: {e_mix} vs {e_det}"
        );

        // With a symmetric mixture the n=3 contributions cancel exactly
        // (the two double-departure count patterns enter with opposite
        // covariance signs), pushing the first discrepancy to n=4.
        let law = two_atom();
        let mean = CramerClosedForm::new(law.mean_kernel());
        for n in 1..=3usize {
            let e_mix = exact_annealed_expectation(&law, &[0.5], n).unwrap();
            let e_det = (mean.lambda(&[0.5]) * n as f64).exp();
            assert!((e_mix - e_det).abs() < 1e-13, "n={n}: {e_mix} vs {e_det}");
        }
        let e_mix = exact_annealed_expectation(&law, &[0.5], 4).unwrap();
        let e_det = (mean.lambda(&[0.5]) * 4.0).exp();
        assert!((e_mix - e_det).abs() > 1e-3, "{e_mix} vs {e_det}");
    }

    #[test]
    fn finite_length_fit_is_exact_for_deterministic_environments() {
        let law = deterministic(0.6);
        let closed = CramerClosedForm::new(TransitionKernel::simple_1d(0.6).unwrap());
        let fit = finite_n_lambda(&law, &[0.5], &[4, 6, 8, 10]).unwrap();
        assert!((fit.lambda - closed.lambda(&[0.5])).abs() < 1e-12);
        assert!(fit.slope.abs() < 1e-10);
        assert!(fit.residual < 1e-12);
        assert_eq!(fit.points.len(), 4);
    }

    #[test]
    fn finite_length_fit_extrapolates_below_the_points_for_mixtures() {
        // lambda_n decreases in n for this law (positive 1/n correction), so
        // the intercept sits below every fitted point.
        let fit = finite_n_lambda(&two_atom(), &[0.5], &[8, 10, 12, 14, 16]).unwrap();
        let last = fit.points.last().unwrap().1;
        assert!(fit.lambda < last, "intercept {} vs last point {last}", fit.lambda);
        assert!(fit.slope > 0.0);
        assert!((fit.lambda - 0.11724).abs() < 5e-4, "intercept {}", fit.lambda);
        assert!(fit.residual < 1e-4);
    }

    #[test]
    fn single_length_fit_degenerates_gracefully() {
        let fit = finite_n_lambda(&deterministic(0.6), &[0.5], &[10]).unwrap();
        assert_eq!(fit.points.len(), 1);
        assert_eq!(fit.slope, 0.0);
        assert_eq!(fit.residual, 0.0);
    }

    #[test]
    fn enumeration_cap_is_enforced() {
        let err = exact_annealed_expectation(&deterministic(0.6), &[0.5], 27).unwrap_err();
        assert!(matches!(err, OracleError::TooLarge { .. }));
        assert!(exact_annealed_expectation(&deterministic(0.6), &[0.5], 26).is_ok());
    }

    #[test]
    fn cramer_reference_values() {
        let c = CramerClosedForm::new(TransitionKernel::simple_1d(0.6f64).unwrap());
        assert!((c.lambda(&[0.5]) - 0.208513).abs() < 2e-6);
        assert!((c.grad(&[0.5])[0] - 0.606099).abs() < 2e-6);
        assert!((c.hessian(&[0.5])[0][0] - 0.632644).abs() < 2e-6);
        assert!((c.rate(&[0.3]) - 0.005292).abs() < 2e-6);
        assert!((c.rate(&[0.4]) - 0.021601).abs() < 2e-6);
        assert!((c.rate(&[0.5]) - 0.049857).abs() < 2e-6);
    }

    #[test]
    fn cramer_rate_satisfies_duality() {
        // I(grad lambda(theta)) = <theta, grad> - lambda(theta), exactly.
        let c = CramerClosedForm::new(TransitionKernel::simple_1d(0.6f64).unwrap());
        for theta in [-0.7, 0.25, 0.5, 1.2] {
            let g = c.grad(&[theta])[0];
            let expected = theta * g - c.lambda(&[theta]);
            assert!((c.rate(&[g]) - expected).abs() < 1e-12, "theta={theta}");
        }
    }

    #[test]
    fn cramer_rate_edges() {
        let c = CramerClosedForm::new(TransitionKernel::simple_1d(0.6f64).unwrap());
        // Always stepping right has probability p^n.
        assert!((c.rate(&[1.0]) + 0.6f64.ln()).abs() < 1e-12);
        assert!((c.rate(&[-1.0]) + 0.4f64.ln()).abs() < 1e-12);
        assert!(c.rate(&[1.1]).is_infinite());
        // The rate vanishes exactly at the mean velocity.
        assert!(c.rate(&[0.2]).abs() < 1e-12);
    }

    #[test]
    fn cramer_derivatives_match_finite_differences() {
        // Symmetric kernel: lambda(theta) = ln cosh(theta).
        let c = CramerClosedForm::new(TransitionKernel::simple_1d(0.5f64).unwrap());
        let h = 1e-3;
        let fd_grad = (c.lambda(&[0.5 + h]) - c.lambda(&[0.5 - h])) / (2.0 * h);
        let fd_hess = (c.lambda(&[0.5 + h]) - 2.0 * c.lambda(&[0.5]) + c.lambda(&[0.5 - h])) / (h * h);
        let g = c.grad(&[0.5])[0];
        let hh = c.hessian(&[0.5])[0][0];
        assert!((g - 0.5f64.tanh()).abs() < 1e-12);
        assert!((fd_grad - g).abs() < 1e-6);
        assert!((fd_hess - hh).abs() < 1e-5);
    }

    #[test]
    fn cramer_newton_rate_in_two_dimensions() {
        let k = TransitionKernel::new(
            2,
            &[
                (Step::new(0, true), 0.4f64),
                (Step::new(0, false), 0.2),
                (Step::new(1, true), 0.25),
                (Step::new(1, false), 0.15),
            ],
        )
        .unwrap();
        let c = CramerClosedForm::new(k);
        // Zero rate at the drift, positive away from it.
        assert!(c.rate(&[0.2, 0.1]).abs() < 1e-10);
        assert!(c.rate(&[0.35, 0.1]) > 1e-3);
        // Duality at an arbitrary tilt.
        let theta = [0.3, -0.2];
        let g = c.grad(&theta);
        let expected = linalg::dot(&theta, &g) - c.lambda(&theta);
        assert!((c.rate(&g) - expected).abs() < 1e-8);
    }

    #[test]
    fn solomon_velocity_examples() {
        // Dyadic probabilities are exact in binary, so the result is an
        // exact rational identity.
        let law = EnvironmentLaw::two_point_1d(0.75f64, 0.5).unwrap();
        let v = solomon_velocity_exact(&law).unwrap();
        assert_eq!(v, BigRational::new(BigInt::from(1), BigInt::from(5)));

        let v: f64 = solomon_velocity(&EnvironmentLaw::two_point_1d(0.7f64, 0.8).unwrap()).unwrap();
        assert!((v - 37.0 / 75.0).abs() < 1e-14);

        let v: f64 = solomon_velocity(&EnvironmentLaw::two_point_1d(0.85f64, 0.4).unwrap()).unwrap();
        assert!((v - 0.088).abs() < 1e-14);

        let v: f64 = solomon_velocity(&deterministic(0.6)).unwrap();
        assert!((v - 0.2).abs() < 1e-14);
    }

    #[test]
    fn solomon_rejects_walks_without_positive_speed() {
        let err = solomon_velocity(&two_atom()).unwrap_err();
        match err {
            OracleError::NotTransientRight { mean_rho } => {
                assert!((mean_rho - 29.0 / 21.0).abs() < 1e-12)
            }
            other => panic!("expected NotTransientRight, got {other:?}"),
        }

        let k = TransitionKernel::new(
            2,
            &[
                (Step::new(0, true), 0.25f64),
                (Step::new(0, false), 0.25),
                (Step::new(1, true), 0.25),
                (Step::new(1, false), 0.25),
            ],
        )
        .unwrap();
        let err = solomon_velocity(&EnvironmentLaw::deterministic(k)).unwrap_err();
        assert_eq!(err, OracleError::NeedsOneDimension(2));
    }

    #[test]
    fn empty_length_grid_is_rejected() {
        assert_eq!(
            finite_n_lambda(&deterministic(0.6), &[0.5], &[]).unwrap_err(),
            OracleError::EmptyGrid
        );
    }

    proptest::proptest! {
        #[test]
        fn enumeration_agrees_with_closed_form_on_deterministic_laws(
            p in 0.1f64..=0.9,
            theta in -1.0f64..=1.0,
            n in 1usize..=6,
        ) {
            let law = deterministic(p);
            let c = CramerClosedForm::new(TransitionKernel::simple_1d(p).unwrap());
            let e = exact_annealed_expectation(&law, &[theta], n).unwrap();
            let expected = (c.lambda(&[theta]) * n as f64).exp();
            proptest::prop_assert!((e - expected).abs() < 1e-10 * expected.max(1.0));
        }

        #[test]
        fn zero_tilt_mass_is_one_for_random_mixtures(
            p in 0.05f64..=0.95,
            q in 0.05f64..=0.95,
            n in 1usize..=6,
        ) {
            let law = EnvironmentLaw::two_point_1d(p, q).unwrap();
            let e = exact_annealed_expectation(&law, &[0.0], n).unwrap();
            proptest::prop_assert!((e - 1.0).abs() < 1e-10);
        }
    }
}
