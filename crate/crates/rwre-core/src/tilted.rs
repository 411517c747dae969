//! Cylinder averages under the tilted cycle measure, and the annealed
//! one-step kernel conditioned on visit counts.
//!
//! A bounded function of finitely many future steps is integrated against
//! the size-biased, exponentially tilted block measure: blocks of `K`
//! consecutive cycles inside a single walk contribute
//! `sum_{j<tau_1} f(Z_{j+1},..) * exp(<theta, X_block> - lambda tau_block)`,
//! and the average is normalized by the tilted mean duration over the same
//! blocks. Matching numerator and denominator block for block keeps the
//! constant function at exactly one for every block length, and makes the
//! depth-one drift average agree bit for bit with the gradient estimator.

use std::collections::HashMap;

use thiserror::Error;

use crate::environment::{counts_vector, EnvironmentLaw, Step};
use crate::lmgf::{cycle_exponent, exponent_cap, weighted_block_ratio, LmgfError};
use crate::scalar::Scalar;
use crate::walk_sim::{CycleEnsemble, Path, RegenerationCycle};

/// Errors from cylinder averaging and the empirical process.
#[derive(Debug, Error)]
pub enum TiltedError {
    /// The cylinder table is malformed (empty word, wrong word length,
    /// duplicate word, or a non-finite value).
    #[error("invalid cylinder function: {0}")]
    BadCylinder(String),
    /// No walk in the ensemble holds a full block of `needed` cycles.
    #[error("no run holds {needed} consecutive cycles (longest run has {longest})")]
    InsufficientRunLength { needed: usize, longest: usize },
    /// The path has too few steps for even one window of the given depth.
    #[error("path of {len} steps has no window of depth {depth}")]
    PathTooShort { len: usize, depth: usize },
    #[error(transparent)]
    Lmgf(#[from] LmgfError),
}

/// A bounded local function of the next `depth` steps of the walk.
///
/// Words absent from the table evaluate to zero, so the table only needs
/// the support of the function. `bound` is the exact sup-norm.
#[derive(Clone, Debug)]
pub struct CylinderFunction<F: Scalar> {
    depth: usize,
    table: HashMap<Vec<Step>, F>,
    bound: F,
}

impl<F: Scalar> CylinderFunction<F> {
    /// Build a function from `(word, value)` pairs. Every word must have
    /// length `depth >= 1`, appear once, and carry a finite value.
    pub fn from_entries(
        depth: usize,
        entries: impl IntoIterator<Item = (Vec<Step>, F)>,
    ) -> Result<CylinderFunction<F>, TiltedError> {
        if depth == 0 {
            return Err(TiltedError::BadCylinder("depth must be at least one".into()));
        }
        let mut table = HashMap::new();
        let mut bound = F::zero();
        for (word, value) in entries {
            if word.len() != depth {
                return Err(TiltedError::BadCylinder(format!(
                    "word of length {} in a depth-{depth} function",
                    word.len()
                )));
            }
            if !value.is_finite() {
                return Err(TiltedError::BadCylinder("non-finite value".into()));
            }
            if value.abs() > bound {
                bound = value.abs();
            }
            if table.insert(word, value).is_some() {
                return Err(TiltedError::BadCylinder("duplicate word".into()));
            }
        }
        Ok(CylinderFunction { depth, table, bound })
    }

    /// Indicator of one fixed opening word.
    pub fn indicator(word: Vec<Step>) -> CylinderFunction<F> {
        assert!(!word.is_empty(), "indicator word must be non-empty");
        let depth = word.len();
        CylinderFunction::from_entries(depth, [(word, F::one())]).expect("valid indicator")
    }

    /// The constant function `value`, realized as a depth-one table over
    /// every step of the given dimension.
    pub fn constant(dimension: usize, value: F) -> CylinderFunction<F> {
        let entries = Step::all(dimension).map(|s| (vec![s], value));
        CylinderFunction::from_entries(1, entries).expect("valid constant")
    }

    /// The signed first-step coordinate along `axis`: `+1` for the positive
    /// step, `-1` for the negative step, `0` for steps on other axes.
    pub fn signed_step(dimension: usize, axis: usize) -> CylinderFunction<F> {
        assert!(axis < dimension);
        let entries = [
            (vec![Step::new(axis, true)], F::one()),
            (vec![Step::new(axis, false)], -F::one()),
        ];
        CylinderFunction::from_entries(1, entries).expect("valid signed step")
    }

    /// `a f + b g`, defined on the union of supports. Depths must match.
    pub fn linear_combination(
        a: F,
        f: &CylinderFunction<F>,
        b: F,
        g: &CylinderFunction<F>,
    ) -> Result<CylinderFunction<F>, TiltedError> {
        if f.depth != g.depth {
            return Err(TiltedError::BadCylinder(format!(
                "depth mismatch: {} vs {}",
                f.depth, g.depth
            )));
        }
        let mut table: HashMap<Vec<Step>, F> = HashMap::new();
        for (word, &v) in &f.table {
            table.insert(word.clone(), a * v);
        }
        for (word, &v) in &g.table {
            let slot = table.entry(word.clone()).or_insert_with(F::zero);
            *slot = *slot + b * v;
        }
        CylinderFunction::from_entries(f.depth, table)
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Exact sup-norm of the function.
    pub fn bound(&self) -> F {
        self.bound
    }

    /// Evaluate on the first `depth` steps of `window`.
    pub fn eval(&self, window: &[Step]) -> F {
        assert!(window.len() >= self.depth, "window shorter than depth");
        self.table
            .get(&window[..self.depth])
            .copied()
            .unwrap_or_else(F::zero)
    }
}

/// How many times each step type was taken at a site.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct VisitCounts {
    counts: HashMap<Step, u32>,
}

impl VisitCounts {
    /// No observations at all.
    pub fn empty() -> VisitCounts {
        VisitCounts::default()
    }

    /// Accumulate counts from `(step, count)` pairs.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (Step, u32)>) -> VisitCounts {
        let mut counts: HashMap<Step, u32> = HashMap::new();
        for (step, c) in pairs {
            *counts.entry(step).or_insert(0) += c;
        }
        VisitCounts { counts }
    }

    /// Record one more departure along `step`.
    pub fn increment(&mut self, step: Step) {
        *self.counts.entry(step).or_insert(0) += 1;
    }

    pub fn counts(&self) -> &HashMap<Step, u32> {
        &self.counts
    }

    /// Total number of recorded departures.
    pub fn total(&self) -> u64 {
        self.counts.values().map(|&c| u64::from(c)).sum()
    }
}

/// Posterior-predictive step distribution at a site whose past departures
/// are `counts`: the ratio of annealed site moments with and without one
/// extra step of each type. With no observations this is the mean kernel;
/// with many it concentrates on the atom that explains them.
pub fn annealed_kernel_q<F: Scalar>(
    law: &EnvironmentLaw<F>,
    counts: &VisitCounts,
) -> Vec<(Step, F)> {
    let dimension = law.dimension();
    let base = counts_vector(dimension, counts.counts());
    let denominator = law.annealed_site_moment(&base);
    Step::all(dimension)
        .map(|step| {
            let mut bumped = base.clone();
            bumped[step.index()] += 1;
            (step, law.annealed_site_moment(&bumped) / denominator)
        })
        .collect()
}

/// How consecutive-cycle blocks are drawn from each walk.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BlockScheme {
    /// Disjoint blocks; independent, so the plain ratio standard error
    /// applies.
    NonOverlapping,
    /// Every window of `K` consecutive cycles; more blocks but serially
    /// correlated, so the standard error comes from batch means.
    Overlapping,
}

/// A tilted cylinder average with its uncertainty and block accounting.
#[derive(Clone, Debug)]
pub struct TiltedEstimate<F: Scalar> {
    pub value: F,
    pub std_error: F,
    /// Block length actually used.
    pub k_used: usize,
    /// Number of blocks that entered the average.
    pub n_blocks: usize,
}

struct BlockStats<F> {
    numerators: Vec<F>,
    durations: Vec<F>,
    weights: Vec<F>,
}

/// Walk every block of `k` consecutive cycles (per the scheme, never
/// crossing walk boundaries) and collect the cylinder sum over the first
/// cycle, the first cycle's duration, and the block weight
/// `exp(<theta, X_block> - lambda tau_block)`.
fn collect_blocks<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    lambda: F,
    f: &CylinderFunction<F>,
    k: usize,
    scheme: BlockScheme,
) -> Result<BlockStats<F>, TiltedError> {
    let cap = exponent_cap::<F>();
    let mut stats = BlockStats {
        numerators: Vec::new(),
        durations: Vec::new(),
        weights: Vec::new(),
    };
    let mut window_steps: Vec<Step> = Vec::new();
    let mut longest = 0usize;
    for run in ensemble.runs() {
        longest = longest.max(run.len());
        let blocks: Box<dyn Iterator<Item = &[RegenerationCycle]>> = match scheme {
            BlockScheme::NonOverlapping => Box::new(run.chunks_exact(k)),
            BlockScheme::Overlapping => Box::new(run.windows(k)),
        };
        for block in blocks {
            let exponent: F = block
                .iter()
                .map(|c| cycle_exponent(c, theta, lambda))
                .sum();
            if !exponent.is_finite() || exponent > cap {
                return Err(LmgfError::NonFiniteWeight {
                    max_exponent: exponent.to_f64().unwrap_or(f64::INFINITY),
                }
                .into());
            }
            let tau_1 = block[0].duration as usize;
            let needed = tau_1 + f.depth() - 1;
            window_steps.clear();
            'fill: for cycle in block {
                for &step in &cycle.steps {
                    window_steps.push(step);
                    if window_steps.len() == needed {
                        break 'fill;
                    }
                }
            }
            debug_assert_eq!(window_steps.len(), needed, "block shorter than its windows");
            let cylinder_sum: F = (0..tau_1)
                .map(|j| f.eval(&window_steps[j..j + f.depth()]))
                .sum();
            stats.numerators.push(cylinder_sum);
            stats.durations.push(F::of_int(tau_1 as i64));
            stats.weights.push(exponent.exp());
        }
    }
    if stats.weights.is_empty() {
        return Err(TiltedError::InsufficientRunLength { needed: k, longest });
    }
    Ok(stats)
}

/// Standard error of the block ratio from `n_batches` contiguous batches,
/// for schemes whose blocks are serially correlated.
fn batch_means_se<F: Scalar>(stats: &BlockStats<F>, value: F) -> F {
    let n = stats.weights.len();
    let n_batches = ((n as f64).sqrt().floor() as usize).clamp(2, n);
    let base = n / n_batches;
    let extra = n % n_batches;
    let mut start = 0usize;
    let mut sum_sq = F::zero();
    for b in 0..n_batches {
        let len = base + usize::from(b < extra);
        let end = start + len;
        let num: F = (start..end)
            .map(|i| stats.numerators[i] * stats.weights[i])
            .sum();
        let den: F = (start..end)
            .map(|i| stats.durations[i] * stats.weights[i])
            .sum();
        let diff = num / den - value;
        sum_sq = sum_sq + diff * diff;
        start = end;
    }
    let b = F::of_int(n_batches as i64);
    (sum_sq / (b * (b - F::one()))).sqrt()
}

/// Average of the cylinder function under the tilted cycle measure, using
/// blocks of exactly `f.depth()` cycles.
pub fn tilted_cylinder<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    lambda: F,
    f: &CylinderFunction<F>,
) -> Result<TiltedEstimate<F>, TiltedError> {
    tilted_cylinder_with(ensemble, theta, lambda, f, f.depth(), BlockScheme::NonOverlapping)
}

/// Same average with an explicit block length `k >= f.depth()` and block
/// scheme. All consistent choices estimate the same number; longer blocks
/// discard more cycles, overlapping blocks reuse them.
pub fn tilted_cylinder_with<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    lambda: F,
    f: &CylinderFunction<F>,
    k: usize,
    scheme: BlockScheme,
) -> Result<TiltedEstimate<F>, TiltedError> {
    assert_eq!(theta.len(), ensemble.dimension(), "tilt dimension");
    assert!(k >= f.depth(), "block length below cylinder depth");
    let stats = collect_blocks(ensemble, theta, lambda, f, k, scheme)?;
    let (value, iid_se) = weighted_block_ratio(&stats.numerators, &stats.durations, &stats.weights);
    let std_error = match scheme {
        BlockScheme::NonOverlapping => iid_se,
        BlockScheme::Overlapping => {
            if stats.weights.len() >= 4 {
                batch_means_se(&stats, value)
            } else {
                iid_se
            }
        }
    };
    Ok(TiltedEstimate {
        value,
        std_error,
        k_used: k,
        n_blocks: stats.weights.len(),
    })
}

/// Mean one-step drift under the tilted measure, one coordinate per axis.
/// Each coordinate is the depth-one average of the signed step function,
/// which reduces to the same block ratio as the gradient estimator.
pub fn mean_drift_tilted<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    lambda: F,
) -> Result<Vec<TiltedEstimate<F>>, TiltedError> {
    (0..ensemble.dimension())
        .map(|axis| {
            let f = CylinderFunction::signed_step(ensemble.dimension(), axis);
            tilted_cylinder(ensemble, theta, lambda, &f)
        })
        .collect()
}

/// Re-estimate the same cylinder average with every block length from
/// `f.depth()` to `k_max`; consistent estimates must agree within noise.
pub fn k_consistency_check<F: Scalar>(
    ensemble: &CycleEnsemble<F>,
    theta: &[F],
    lambda: F,
    f: &CylinderFunction<F>,
    k_max: usize,
) -> Result<Vec<TiltedEstimate<F>>, TiltedError> {
    assert!(k_max >= f.depth(), "k_max below cylinder depth");
    (f.depth()..=k_max)
        .map(|k| tilted_cylinder_with(ensemble, theta, lambda, f, k, BlockScheme::NonOverlapping))
        .collect()
}

/// Plain windowed average of the cylinder function along one path:
/// `mean over j < n - depth of f(Z_{j+1}, .., Z_{j+depth})`.
pub fn empirical_process<F: Scalar>(path: &Path, f: &CylinderFunction<F>) -> Result<F, TiltedError> {
    let steps = path.steps();
    let depth = f.depth();
    if steps.len() <= depth {
        return Err(TiltedError::PathTooShort {
            len: steps.len(),
            depth,
        });
    }
    let n_windows = steps.len() - depth;
    let sum: F = (0..n_windows).map(|j| f.eval(&steps[j..j + depth])).sum();
    Ok(sum / F::of_int(n_windows as i64))
}
