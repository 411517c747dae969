//! Environment laws for nearest-neighbor random walks in random environment.
//!
//! A law is a finite mixture of transition kernels on the `2d` signed unit
//! steps: every lattice site independently draws one mixture atom, and the
//! walk at that site jumps with the atom's probabilities. Finite support
//! keeps three things exact that the estimators downstream rely on:
//!
//! * the uniform ellipticity floor `kappa` (the smallest kernel entry),
//! * the convex hull of atom drifts, which decides nestling vs non-nestling,
//! * annealed site moments `E[prod_z pi(0,z)^{n_z}]`, evaluated atom by atom.
//!
//! Probability vectors are validated against a tolerance and renormalized
//! exactly once at construction; downstream code treats them as exact.

use std::collections::HashMap;
use std::fmt;

use thiserror::Error;

use crate::linalg;
use crate::scalar::Scalar;

/// A nearest-neighbor step: one of the `2d` signed unit vectors.
///
/// The canonical enumeration order is `+e1, -e1, +e2, -e2, ...`; kernels
/// store their probabilities in this order.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct Step {
    axis: u8,
    negative: bool,
}

impl Step {
    pub fn new(axis: usize, positive: bool) -> Step {
        assert!(axis < 256, "axis out of range");
        Step {
            axis: axis as u8,
            negative: !positive,
        }
    }

    pub fn axis(&self) -> usize {
        self.axis as usize
    }

    pub fn positive(&self) -> bool {
        !self.negative
    }

    /// Signed unit displacement along this step's axis.
    pub fn delta(&self) -> i64 {
        if self.negative {
            -1
        } else {
            1
        }
    }

    /// Index in the canonical enumeration of the `2d` steps.
    pub fn index(&self) -> usize {
        2 * self.axis as usize + self.negative as usize
    }

    pub fn from_index(index: usize) -> Step {
        Step {
            axis: (index / 2) as u8,
            negative: index % 2 == 1,
        }
    }

    /// All `2d` steps in canonical order.
    pub fn all(dimension: usize) -> impl Iterator<Item = Step> {
        (0..2 * dimension).map(Step::from_index)
    }

    pub fn apply(&self, position: &mut [i64]) {
        position[self.axis as usize] += self.delta();
    }

    pub fn coords(&self, dimension: usize) -> Vec<i64> {
        let mut v = vec![0i64; dimension];
        v[self.axis as usize] = self.delta();
        v
    }

    /// Contribution of this step to the level `<X, direction>`.
    pub fn level_gain<F: Scalar>(&self, direction: &[F]) -> F {
        let u = direction[self.axis as usize];
        if self.negative {
            -u
        } else {
            u
        }
    }
}

impl fmt::Display for Step {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sign = if self.negative { '-' } else { '+' };
        match self.axis {
            0 => write!(f, "{sign}x"),
            1 => write!(f, "{sign}y"),
            2 => write!(f, "{sign}z"),
            a => write!(f, "{sign}e{}", a as usize + 1),
        }
    }
}

/// Parse a step token: `+x`, `-y`, `+z`, or `+e4`, `-e7` for higher axes.
pub fn parse_step(token: &str) -> Result<Step, EnvError> {
    let bad = || EnvError::BadStepToken(token.to_string());
    let mut chars = token.chars();
    let positive = match chars.next().ok_or_else(bad)? {
        '+' => true,
        '-' => false,
        _ => return Err(bad()),
    };
    let rest: String = chars.collect();
    let axis = match rest.as_str() {
        "x" => 0,
        "y" => 1,
        "z" => 2,
        other => {
            let digits = other.strip_prefix('e').ok_or_else(bad)?;
            let one_based: usize = digits.parse().map_err(|_| bad())?;
            if one_based == 0 {
                return Err(bad());
            }
            one_based - 1
        }
    };
    Ok(Step::new(axis, positive))
}

#[derive(Error, Debug, Clone, PartialEq)]
pub enum EnvError {
    #[error("{what} sums to {sum:e}, expected 1 within {tol:e}")]
    NotAProbability { what: String, sum: f64, tol: f64 },
    #[error("kernel entry for step {step} is {value:e}; uniform ellipticity requires every entry > 0")]
    EllipticityViolated { step: String, value: f64 },
    #[error("every atom drift vanishes; the law admits no transient direction")]
    DegenerateDrift,
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("cannot parse step token `{0}`")]
    BadStepToken(String),
}

/// One transition kernel: a strictly positive probability vector over the
/// `2d` nearest-neighbor steps.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionKernel<F: Scalar> {
    dimension: usize,
    probs: Vec<F>,
}

impl<F: Scalar> TransitionKernel<F> {
    /// Build a kernel from `(step, probability)` entries. Entries must cover
    /// every step with a strictly positive mass (an omitted step counts as
    /// zero and violates ellipticity), sum to one within [`Scalar::prob_tol`],
    /// and are renormalized exactly once here.
    pub fn new(dimension: usize, entries: &[(Step, F)]) -> Result<TransitionKernel<F>, EnvError> {
        assert!(dimension >= 1, "dimension must be at least 1");
        let mut probs = vec![F::zero(); 2 * dimension];
        for &(step, p) in entries {
            if step.axis() >= dimension {
                return Err(EnvError::DimensionMismatch(format!(
                    "step {step} outside dimension {dimension}"
                )));
            }
            probs[step.index()] = probs[step.index()] + p;
        }
        let sum: F = probs.iter().copied().sum();
        if (sum - F::one()).abs() > F::prob_tol() {
            return Err(EnvError::NotAProbability {
                what: "kernel probabilities".to_string(),
                sum: sum.to_f64().unwrap_or(f64::NAN),
                tol: F::prob_tol().to_f64().unwrap(),
            });
        }
        for (i, &p) in probs.iter().enumerate() {
            if p <= F::zero() {
                return Err(EnvError::EllipticityViolated {
                    step: Step::from_index(i).to_string(),
                    value: p.to_f64().unwrap_or(f64::NAN),
                });
            }
        }
        for p in probs.iter_mut() {
            *p = *p / sum;
        }
        Ok(TransitionKernel { dimension, probs })
    }

    /// One-dimensional kernel with `P(+1) = p_up`, `P(-1) = 1 - p_up`.
    pub fn simple_1d(p_up: F) -> Result<TransitionKernel<F>, EnvError> {
        TransitionKernel::new(
            1,
            &[
                (Step::new(0, true), p_up),
                (Step::new(0, false), F::one() - p_up),
            ],
        )
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn probs(&self) -> &[F] {
        &self.probs
    }

    pub fn prob(&self, step: Step) -> F {
        self.probs[step.index()]
    }

    /// Mean one-step displacement of this kernel.
    pub fn drift(&self) -> Vec<F> {
        let mut m = vec![F::zero(); self.dimension];
        for step in Step::all(self.dimension) {
            let p = self.probs[step.index()];
            let a = step.axis();
            m[a] = if step.positive() { m[a] + p } else { m[a] - p };
        }
        m
    }

    /// Map a uniform draw `u` in `[0, 1)` to a step via the cumulative
    /// probabilities in canonical order.
    pub fn sample(&self, u: F) -> Step {
        let mut acc = F::zero();
        for (i, &p) in self.probs.iter().enumerate() {
            acc = acc + p;
            if u < acc {
                return Step::from_index(i);
            }
        }
        // Rounding in the cumulative sum can leave u >= acc at the end.
        Step::from_index(self.probs.len() - 1)
    }
}

/// Transience classification of a law.
///
/// Non-nestling means the convex hull of atom drifts avoids the origin; the
/// stored direction is a witness with strictly positive projection onto every
/// atom drift. Nestling means the hull contains the origin.
#[derive(Clone, Debug, PartialEq)]
pub enum NestlingLabel<F: Scalar> {
    NonNestling { direction: Vec<F> },
    Nestling,
}

impl<F: Scalar> NestlingLabel<F> {
    pub fn is_nestling(&self) -> bool {
        matches!(self, NestlingLabel::Nestling)
    }
}

/// Finite mixture law for the i.i.d. environment.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvironmentLaw<F: Scalar> {
    dimension: usize,
    atoms: Vec<TransitionKernel<F>>,
    weights: Vec<F>,
    kappa: F,
}

impl<F: Scalar> EnvironmentLaw<F> {
    pub fn new(
        atoms: Vec<TransitionKernel<F>>,
        weights: Vec<F>,
    ) -> Result<EnvironmentLaw<F>, EnvError> {
        assert!(!atoms.is_empty(), "law needs at least one atom");
        assert_eq!(atoms.len(), weights.len(), "one weight per atom");
        let dimension = atoms[0].dimension();
        for atom in &atoms {
            if atom.dimension() != dimension {
                return Err(EnvError::DimensionMismatch(
                    "atoms of mixed dimension".to_string(),
                ));
            }
        }
        let sum: F = weights.iter().copied().sum();
        if (sum - F::one()).abs() > F::prob_tol() {
            return Err(EnvError::NotAProbability {
                what: "atom weights".to_string(),
                sum: sum.to_f64().unwrap_or(f64::NAN),
                tol: F::prob_tol().to_f64().unwrap(),
            });
        }
        for &w in &weights {
            if w <= F::zero() {
                return Err(EnvError::NotAProbability {
                    what: "atom weights (every atom must carry positive mass)".to_string(),
                    sum: w.to_f64().unwrap_or(f64::NAN),
                    tol: F::prob_tol().to_f64().unwrap(),
                });
            }
        }
        let weights: Vec<F> = weights.iter().map(|&w| w / sum).collect();
        let kappa = atoms
            .iter()
            .flat_map(|a| a.probs().iter().copied())
            .fold(F::infinity(), F::min);
        Ok(EnvironmentLaw {
            dimension,
            atoms,
            weights,
            kappa,
        })
    }

    /// Single-atom (deterministic environment) law.
    pub fn deterministic(kernel: TransitionKernel<F>) -> EnvironmentLaw<F> {
        EnvironmentLaw::new(vec![kernel], vec![F::one()]).expect("single atom is always valid")
    }

    /// Two-atom d=1 law with `P(+1)` equal to `p_a` or `p_b` with equal weight.
    pub fn two_point_1d(p_a: F, p_b: F) -> Result<EnvironmentLaw<F>, EnvError> {
        EnvironmentLaw::new(
            vec![
                TransitionKernel::simple_1d(p_a)?,
                TransitionKernel::simple_1d(p_b)?,
            ],
            vec![F::of(0.5), F::of(0.5)],
        )
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn atoms(&self) -> &[TransitionKernel<F>] {
        &self.atoms
    }

    pub fn weights(&self) -> &[F] {
        &self.weights
    }

    /// Uniform ellipticity floor: the smallest kernel entry across atoms.
    pub fn kappa(&self) -> F {
        self.kappa
    }

    /// The averaged kernel `E[pi(0, .)]`.
    pub fn mean_kernel(&self) -> TransitionKernel<F> {
        let mut probs = vec![F::zero(); 2 * self.dimension];
        for (atom, &w) in self.atoms.iter().zip(&self.weights) {
            for (i, &p) in atom.probs().iter().enumerate() {
                probs[i] = probs[i] + w * p;
            }
        }
        TransitionKernel {
            dimension: self.dimension,
            probs,
        }
    }

    /// Map a uniform draw to a mixture atom index.
    pub fn sample_atom(&self, u: F) -> usize {
        let mut acc = F::zero();
        for (i, &w) in self.weights.iter().enumerate() {
            acc = acc + w;
            if u < acc {
                return i;
            }
        }
        self.weights.len() - 1
    }

    /// Exact annealed site moment `E[prod_z pi(0, z)^{counts_z}]` for jump
    /// counts indexed in canonical step order.
    pub fn annealed_site_moment(&self, counts: &[u32]) -> F {
        debug_assert_eq!(counts.len(), 2 * self.dimension);
        let mut total = F::zero();
        for (atom, &w) in self.atoms.iter().zip(&self.weights) {
            let mut prod = F::one();
            for (i, &c) in counts.iter().enumerate() {
                if c > 0 {
                    prod = prod * atom.probs()[i].powi(c as i32);
                }
            }
            total = total + w * prod;
        }
        total
    }

    /// Stable 64-bit fingerprint of the law (dimension, atom probabilities,
    /// weights), used to tie cycle logs back to the law that produced them.
    pub fn fingerprint(&self) -> u64 {
        let mut h = Fnv1a::new();
        h.write_u64(self.dimension as u64);
        h.write_u64(self.atoms.len() as u64);
        for (atom, &w) in self.atoms.iter().zip(&self.weights) {
            for &p in atom.probs() {
                h.write_u64(p.to_f64().unwrap().to_bits());
            }
            h.write_u64(w.to_f64().unwrap().to_bits());
        }
        h.finish()
    }

    pub fn classify(&self) -> Result<NestlingLabel<F>, EnvError> {
        classify_nestling(self)
    }
}

/// Classify a law as nestling or non-nestling.
///
/// Non-nestling laws come with a witness direction maximizing the minimum
/// projection of the atom drifts: a sign test for d=1, a one-degree angular
/// grid polished by golden-section ascent for d=2, and a minimum-norm-point
/// iteration over the drift hull for d>=3 (where an angular grid is
/// impractical). Ties are broken toward the lexicographically smallest
/// direction. Errors with `DegenerateDrift` when every atom drift vanishes.
pub fn classify_nestling<F: Scalar>(law: &EnvironmentLaw<F>) -> Result<NestlingLabel<F>, EnvError> {
    let drifts: Vec<Vec<F>> = law.atoms().iter().map(|a| a.drift()).collect();
    let zero_tol = F::of(1e-12);
    if drifts.iter().all(|m| linalg::norm(m) < zero_tol) {
        return Err(EnvError::DegenerateDrift);
    }
    let positive_tol = F::of(1e-9);

    match law.dimension() {
        1 => {
            let min = drifts.iter().map(|m| m[0]).fold(F::infinity(), F::min);
            let max = drifts.iter().map(|m| m[0]).fold(F::neg_infinity(), F::max);
            if min > positive_tol {
                Ok(NestlingLabel::NonNestling {
                    direction: vec![F::one()],
                })
            } else if max < -positive_tol {
                Ok(NestlingLabel::NonNestling {
                    direction: vec![-F::one()],
                })
            } else {
                Ok(NestlingLabel::Nestling)
            }
        }
        2 => {
            let min_proj = |u: &[F]| {
                drifts
                    .iter()
                    .map(|m| linalg::dot(m, u))
                    .fold(F::infinity(), F::min)
            };
            let unit = |phi: F| vec![phi.cos(), phi.sin()];
            let mut best_phi = F::zero();
            let mut best_val = F::neg_infinity();
            let mut best_dir = unit(F::zero());
            let two_pi = F::of(std::f64::consts::TAU);
            let n_grid = 360usize;
            for k in 0..n_grid {
                let phi = two_pi * F::of(k as f64) / F::of(n_grid as f64);
                let u = unit(phi);
                let v = min_proj(&u);
                let tie = (v - best_val).abs() <= F::of(1e-15);
                if v > best_val && !tie || (tie && lex_less(&u, &best_dir)) {
                    best_val = v;
                    best_phi = phi;
                    best_dir = u;
                }
            }
            // Golden-section ascent on the angle around the best grid node.
            let gr = F::of((5f64.sqrt() - 1.0) / 2.0);
            let width = two_pi / F::of(n_grid as f64);
            let mut lo = best_phi - width;
            let mut hi = best_phi + width;
            for _ in 0..80 {
                let m1 = hi - gr * (hi - lo);
                let m2 = lo + gr * (hi - lo);
                if min_proj(&unit(m1)) < min_proj(&unit(m2)) {
                    lo = m1;
                } else {
                    hi = m2;
                }
            }
            let phi = (lo + hi) / F::of(2.0);
            let u = unit(phi);
            if min_proj(&u) > positive_tol {
                Ok(NestlingLabel::NonNestling { direction: u })
            } else {
                Ok(NestlingLabel::Nestling)
            }
        }
        d => {
            // Minimum-norm point of the drift hull (Gilbert's algorithm).
            // If the origin lies outside the hull, the normalized point is
            // the direction maximizing the minimum projection.
            let mut p: Vec<F> = vec![F::zero(); d];
            for m in &drifts {
                for (pi, &mi) in p.iter_mut().zip(m) {
                    *pi = *pi + mi / F::of(drifts.len() as f64);
                }
            }
            for _ in 0..2000 {
                let worst = drifts
                    .iter()
                    .min_by(|a, b| {
                        linalg::dot(a, &p)
                            .partial_cmp(&linalg::dot(b, &p))
                            .expect("finite projections")
                    })
                    .expect("nonempty drift list");
                let diff: Vec<F> = p.iter().zip(worst).map(|(&pi, &wi)| pi - wi).collect();
                let denom = linalg::dot(&diff, &diff);
                if denom <= F::of(1e-30) {
                    break;
                }
                let t = (linalg::dot(&p, &diff) / denom).max(F::zero()).min(F::one());
                for (pi, &di) in p.iter_mut().zip(&diff) {
                    *pi = *pi - t * di;
                }
            }
            let norm = linalg::norm(&p);
            if norm <= positive_tol {
                return Ok(NestlingLabel::Nestling);
            }
            let u: Vec<F> = p.iter().map(|&x| x / norm).collect();
            let min = drifts
                .iter()
                .map(|m| linalg::dot(m, &u))
                .fold(F::infinity(), F::min);
            if min > positive_tol {
                Ok(NestlingLabel::NonNestling { direction: u })
            } else {
                Ok(NestlingLabel::Nestling)
            }
        }
    }
}

fn lex_less<F: Scalar>(a: &[F], b: &[F]) -> bool {
    for (&x, &y) in a.iter().zip(b) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

/// Convert a `step -> count` map into the canonical count vector used by
/// [`EnvironmentLaw::annealed_site_moment`].
pub fn counts_vector(dimension: usize, counts: &HashMap<Step, u32>) -> Vec<u32> {
    let mut v = vec![0u32; 2 * dimension];
    for (step, &c) in counts {
        v[step.index()] = c;
    }
    v
}

struct Fnv1a(u64);

impl Fnv1a {
    fn new() -> Fnv1a {
        Fnv1a(0xcbf29ce484222325)
    }

    fn write_u64(&mut self, x: u64) {
        for byte in x.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x100000001b3);
        }
    }

    fn finish(&self) -> u64 {
        self.0
    }
}
