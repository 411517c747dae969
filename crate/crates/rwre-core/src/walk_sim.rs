//! Annealed walk simulation and regeneration-cycle harvesting.
//!
//! The walk is simulated under the averaged measure by lazy environment
//! sampling: the first time a site is left, its kernel is drawn from the law
//! and cached for the lifetime of that walk. Regeneration times relative to a
//! direction `u` are the times the walk reaches a strictly new maximum level
//! `<X, u>` that it never undershoots afterwards; the path between successive
//! regenerations splits into i.i.d. blocks whose common law is the cycle law
//! conditioned on never backtracking below the start. Those blocks are the
//! input to every estimator in this crate.
//!
//! Harvesting discards each walk's initial block (its law is not conditioned
//! on the no-backtracking event) and the right-censored provisional tail, and
//! keeps walking a safety margin past the last used boundary so that a
//! boundary is only extremely rarely invalidated after the fact.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::Path as FsPath;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::environment::{
    classify_nestling, parse_step, EnvError, EnvironmentLaw, NestlingLabel, Step,
};
use crate::scalar::Scalar;

/// Extra level gain required beyond the last used cycle boundary before a
/// walk is allowed to stop. Each further level multiplies the probability
/// that the boundary would have been invalidated by a later backtrack, so the
/// residual censoring bias is negligible against Monte Carlo noise.
const CONFIRMATION_MARGIN_LEVELS: i64 = 25;

/// A nearest-neighbor path started at the origin, stored as its step
/// sequence.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    dimension: usize,
    steps: Vec<Step>,
}

impl Path {
    pub fn new(dimension: usize, steps: Vec<Step>) -> Path {
        assert!(dimension >= 1);
        assert!(
            steps.iter().all(|s| s.axis() < dimension),
            "step outside dimension {dimension}"
        );
        Path { dimension, steps }
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn steps(&self) -> &[Step] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// All positions `X_0 = 0, X_1, ..., X_n`.
    pub fn positions(&self) -> Vec<Vec<i64>> {
        let mut out = Vec::with_capacity(self.steps.len() + 1);
        let mut pos = vec![0i64; self.dimension];
        out.push(pos.clone());
        for step in &self.steps {
            step.apply(&mut pos);
            out.push(pos.clone());
        }
        out
    }

    pub fn endpoint(&self) -> Vec<i64> {
        let mut pos = vec![0i64; self.dimension];
        for step in &self.steps {
            step.apply(&mut pos);
        }
        pos
    }
}

/// Regeneration times found in a finite window: `confirmed` hold both
/// defining inequalities against everything observed and are followed by a
/// later record; the last surviving record is `provisional` because its
/// future is censored by the window edge.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegenerationScan {
    pub confirmed: Vec<usize>,
    pub provisional: Option<usize>,
}

/// Scan a path for regeneration times relative to `direction`: times `j > 0`
/// with `<X_i, u> < <X_j, u>` for every `i < j` and `<X_j, u> <= <X_k, u>`
/// for every observed `k > j`.
///
/// One left-to-right pass with a candidate stack: a strictly new maximum is
/// pushed; any candidate whose level the walk later drops below is popped.
///
/// Levels are evaluated from the integer positions, not by accumulating step
/// gains, so that revisiting a site always reproduces the identical level
/// even in floating point.
pub fn find_regenerations<F: Scalar>(path: &Path, direction: &[F]) -> RegenerationScan {
    assert_eq!(direction.len(), path.dimension(), "direction dimension");
    let mut stack: Vec<(usize, F)> = Vec::new();
    let mut position = vec![0i64; path.dimension()];
    let mut max_level = F::zero();
    for (k, step) in path.steps().iter().enumerate() {
        step.apply(&mut position);
        let level = site_level(&position, direction);
        while let Some(&(_, l)) = stack.last() {
            if level < l {
                stack.pop();
            } else {
                break;
            }
        }
        if level > max_level {
            stack.push((k + 1, level));
            max_level = level;
        }
    }
    let provisional = stack.pop().map(|(j, _)| j);
    RegenerationScan {
        confirmed: stack.into_iter().map(|(j, _)| j).collect(),
        provisional,
    }
}

/// `<x, direction>`, always evaluated coordinate-by-coordinate in the same
/// order so equal positions compare exactly equal.
fn site_level<F: Scalar>(x: &[i64], direction: &[F]) -> F {
    x.iter()
        .zip(direction)
        .map(|(&c, &u)| F::of_int(c) * u)
        .sum()
}

/// One inter-regeneration block: its step sequence plus derived duration and
/// displacement. `is_first` marks the block before the first regeneration,
/// whose law is *not* the conditioned cycle law.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RegenerationCycle {
    pub duration: u32,
    pub displacement: Vec<i64>,
    pub steps: Vec<Step>,
    pub is_first: bool,
}

impl RegenerationCycle {
    pub fn from_steps(dimension: usize, steps: &[Step], is_first: bool) -> RegenerationCycle {
        let mut displacement = vec![0i64; dimension];
        for step in steps {
            step.apply(&mut displacement);
        }
        RegenerationCycle {
            duration: steps.len() as u32,
            displacement,
            steps: steps.to_vec(),
            is_first,
        }
    }

    /// `<displacement, direction>`.
    pub fn level_gain<F: Scalar>(&self, direction: &[F]) -> F {
        self.displacement
            .iter()
            .zip(direction)
            .map(|(&x, &u)| F::of_int(x) * u)
            .sum()
    }

    /// Re-check the defining block properties: duration matches the steps,
    /// the displacement is their sum, the walk never drops below the block's
    /// starting level, and the block ends strictly above it.
    pub fn check_invariants<F: Scalar>(&self, direction: &[F]) -> bool {
        if self.duration as usize != self.steps.len() {
            return false;
        }
        let mut disp = vec![0i64; self.displacement.len()];
        let mut level = F::zero();
        for step in &self.steps {
            step.apply(&mut disp);
            level = site_level(&disp, direction);
            if level < F::zero() {
                return false;
            }
        }
        disp == self.displacement && level > F::zero()
    }
}

/// Split a path into regeneration blocks: the initial block (flagged
/// `is_first`) followed by the confirmed inter-regeneration cycles. The
/// provisional tail is dropped.
pub fn cycles_from_path<F: Scalar>(path: &Path, direction: &[F]) -> Vec<RegenerationCycle> {
    let scan = find_regenerations(path, direction);
    let mut boundaries = scan.confirmed.clone();
    boundaries.extend(scan.provisional);
    let mut out = Vec::new();
    let mut start = 0usize;
    for (i, &end) in boundaries.iter().enumerate() {
        out.push(RegenerationCycle::from_steps(
            path.dimension(),
            &path.steps()[start..end],
            i == 0,
        ));
        start = end;
    }
    // The first entry is the pre-regeneration block; the rest are complete
    // cycles. The final block [last boundary, end of window) never appears.
    out
}

#[derive(Error, Debug)]
pub enum HarvestError {
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(
        "regeneration starvation: {starved_walks} walks exceeded the cycle cap \
         ({completed_cycles}/{requested} cycles completed); the law may not be \
         transient along the chosen direction"
    )]
    RegenerationStarvation {
        starved_walks: usize,
        completed_cycles: usize,
        requested: usize,
    },
    #[error("cannot merge ensembles: {0}")]
    MergeMismatch(String),
    #[error("malformed cycle log: {0}")]
    BadCycleLog(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// An i.i.d. sample of conditioned regeneration cycles, together with the
/// grouping into walks ("runs") that produced them and enough provenance to
/// reproduce or validate it.
#[derive(Clone, Debug, PartialEq)]
pub struct CycleEnsemble<F: Scalar> {
    direction: Vec<F>,
    cycles: Vec<RegenerationCycle>,
    /// Offsets into `cycles`, one run per consecutive pair; length = runs+1.
    run_starts: Vec<usize>,
    law_fingerprint: u64,
    master_seed: u64,
    requested_runs: usize,
    cycle_cap: usize,
    starved_walks: usize,
    nestling: NestlingLabel<F>,
}

impl<F: Scalar> CycleEnsemble<F> {
    /// Assemble an ensemble directly from parts (used by tests and the
    /// loader; `harvest_cycles` is the normal constructor).
    #[allow(clippy::too_many_arguments)]
    pub fn from_parts(
        direction: Vec<F>,
        cycles: Vec<RegenerationCycle>,
        run_starts: Vec<usize>,
        law_fingerprint: u64,
        master_seed: u64,
        requested_runs: usize,
        cycle_cap: usize,
        starved_walks: usize,
        nestling: NestlingLabel<F>,
    ) -> CycleEnsemble<F> {
        assert!(!run_starts.is_empty(), "need at least the zero offset");
        assert_eq!(*run_starts.first().unwrap(), 0);
        assert_eq!(*run_starts.last().unwrap(), cycles.len());
        assert!(run_starts.windows(2).all(|w| w[0] <= w[1]));
        CycleEnsemble {
            direction,
            cycles,
            run_starts,
            law_fingerprint,
            master_seed,
            requested_runs,
            cycle_cap,
            starved_walks,
            nestling,
        }
    }

    pub fn cycles(&self) -> &[RegenerationCycle] {
        &self.cycles
    }

    pub fn len(&self) -> usize {
        self.cycles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cycles.is_empty()
    }

    pub fn direction(&self) -> &[F] {
        &self.direction
    }

    pub fn dimension(&self) -> usize {
        self.direction.len()
    }

    pub fn n_runs(&self) -> usize {
        self.run_starts.len() - 1
    }

    /// The cycles of each walk, in temporal order within the walk.
    pub fn runs(&self) -> impl Iterator<Item = &[RegenerationCycle]> {
        self.run_starts
            .windows(2)
            .map(|w| &self.cycles[w[0]..w[1]])
    }

    pub fn law_fingerprint(&self) -> u64 {
        self.law_fingerprint
    }

    pub fn master_seed(&self) -> u64 {
        self.master_seed
    }

    pub fn requested_runs(&self) -> usize {
        self.requested_runs
    }

    pub fn cycle_cap(&self) -> usize {
        self.cycle_cap
    }

    /// Walks that were discarded (and replaced) for exceeding the cycle cap.
    pub fn starved_walks(&self) -> usize {
        self.starved_walks
    }

    pub fn nestling(&self) -> &NestlingLabel<F> {
        &self.nestling
    }

    pub fn mean_duration(&self) -> F {
        let total: F = self
            .cycles
            .iter()
            .map(|c| F::of_int(c.duration as i64))
            .sum();
        total / F::of_int(self.cycles.len() as i64)
    }

    pub fn mean_displacement(&self) -> Vec<F> {
        let n = F::of_int(self.cycles.len() as i64);
        (0..self.dimension())
            .map(|a| {
                let total: F = self
                    .cycles
                    .iter()
                    .map(|c| F::of_int(c.displacement[a]))
                    .sum();
                total / n
            })
            .collect()
    }

    /// Point estimate of the limiting velocity: mean displacement over mean
    /// duration, the empirical version of the cycle-law velocity formula.
    pub fn velocity(&self) -> Vec<F> {
        let t = self.mean_duration();
        self.mean_displacement().into_iter().map(|d| d / t).collect()
    }

    /// Pool another ensemble's cycles after this one (same law, same
    /// direction). Seed provenance keeps the first ensemble's master seed;
    /// starvation counts and requested runs add up.
    pub fn merge(mut self, other: CycleEnsemble<F>) -> Result<CycleEnsemble<F>, HarvestError> {
        if self.law_fingerprint != other.law_fingerprint {
            return Err(HarvestError::MergeMismatch(
                "different law fingerprints".to_string(),
            ));
        }
        if self.direction != other.direction {
            return Err(HarvestError::MergeMismatch("different directions".to_string()));
        }
        let offset = self.cycles.len();
        self.cycles.extend(other.cycles);
        self.run_starts
            .extend(other.run_starts.iter().skip(1).map(|s| s + offset));
        self.requested_runs += other.requested_runs;
        self.starved_walks += other.starved_walks;
        Ok(self)
    }

    /// Write the ensemble as a versioned CSV cycle log.
    pub fn save<W: Write>(&self, mut w: W) -> Result<(), HarvestError> {
        writeln!(w, "#rwre-cycle-log v1")?;
        writeln!(w, "#dimension={}", self.dimension())?;
        let dir = self
            .direction
            .iter()
            .map(|u| format!("{}", u.to_f64().unwrap()))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "#direction={dir}")?;
        writeln!(w, "#law_fingerprint={:016x}", self.law_fingerprint)?;
        writeln!(w, "#master_seed={}", self.master_seed)?;
        writeln!(w, "#requested_runs={}", self.requested_runs)?;
        writeln!(w, "#cycle_cap={}", self.cycle_cap)?;
        writeln!(w, "#starved_walks={}", self.starved_walks)?;
        match &self.nestling {
            NestlingLabel::Nestling => writeln!(w, "#nestling=yes")?,
            NestlingLabel::NonNestling { direction } => {
                let d = direction
                    .iter()
                    .map(|u| format!("{}", u.to_f64().unwrap()))
                    .collect::<Vec<_>>()
                    .join(",");
                writeln!(w, "#nestling=no {d}")?;
            }
        }
        let disp_cols = (0..self.dimension())
            .map(|a| format!("disp_{}", a + 1))
            .collect::<Vec<_>>()
            .join(",");
        writeln!(w, "run,duration,{disp_cols},steps")?;
        for (run, slice) in self.runs().enumerate() {
            for cycle in slice {
                let disp = cycle
                    .displacement
                    .iter()
                    .map(|x| x.to_string())
                    .collect::<Vec<_>>()
                    .join(",");
                let mut steps = String::with_capacity(2 * cycle.steps.len());
                for s in &cycle.steps {
                    let _ = write!(steps, "{s}");
                }
                writeln!(w, "{run},{},{disp},{steps}", cycle.duration)?;
            }
        }
        Ok(())
    }

    pub fn save_path<P: AsRef<FsPath>>(&self, path: P) -> Result<(), HarvestError> {
        let mut buf = Vec::new();
        self.save(&mut buf)?;
        fs::write(path, buf)?;
        Ok(())
    }

    /// Read a cycle log written by [`CycleEnsemble::save`], re-deriving and
    /// validating each cycle from its step string.
    pub fn load<R: BufRead>(r: R) -> Result<CycleEnsemble<F>, HarvestError> {
        let bad = |m: &str| HarvestError::BadCycleLog(m.to_string());
        let mut lines = r.lines();
        let magic = lines.next().ok_or_else(|| bad("empty file"))??;
        if magic.trim() != "#rwre-cycle-log v1" {
            return Err(bad("missing or unsupported version line"));
        }
        let mut dimension = 0usize;
        let mut direction: Vec<F> = Vec::new();
        let mut fingerprint = 0u64;
        let mut master_seed = 0u64;
        let mut requested_runs = 0usize;
        let mut cycle_cap = 0usize;
        let mut starved = 0usize;
        let mut nestling: Option<NestlingLabel<F>> = None;
        let mut header_seen = false;
        let mut cycles: Vec<RegenerationCycle> = Vec::new();
        let mut run_of: Vec<usize> = Vec::new();
        let parse_dir = |s: &str| -> Result<Vec<F>, HarvestError> {
            s.split(',')
                .map(|t| {
                    t.trim()
                        .parse::<f64>()
                        .map(F::of)
                        .map_err(|_| HarvestError::BadCycleLog(format!("bad direction `{t}`")))
                })
                .collect()
        };
        for line in lines {
            let line = line?;
            let line = line.trim_end();
            if line.is_empty() {
                continue;
            }
            if let Some(rest) = line.strip_prefix('#') {
                let (key, value) = rest
                    .split_once('=')
                    .ok_or_else(|| bad(&format!("bad header line `{line}`")))?;
                match key {
                    "dimension" => dimension = value.parse().map_err(|_| bad("bad dimension"))?,
                    "direction" => direction = parse_dir(value)?,
                    "law_fingerprint" => {
                        fingerprint = u64::from_str_radix(value, 16)
                            .map_err(|_| bad("bad fingerprint"))?
                    }
                    "master_seed" => {
                        master_seed = value.parse().map_err(|_| bad("bad master_seed"))?
                    }
                    "requested_runs" => {
                        requested_runs = value.parse().map_err(|_| bad("bad requested_runs"))?
                    }
                    "cycle_cap" => cycle_cap = value.parse().map_err(|_| bad("bad cycle_cap"))?,
                    "starved_walks" => {
                        starved = value.parse().map_err(|_| bad("bad starved_walks"))?
                    }
                    "nestling" => {
                        nestling = Some(if value == "yes" {
                            NestlingLabel::Nestling
                        } else if let Some(d) = value.strip_prefix("no ") {
                            NestlingLabel::NonNestling {
                                direction: parse_dir(d)?,
                            }
                        } else {
                            return Err(bad("bad nestling label"));
                        });
                    }
                    _ => return Err(bad(&format!("unknown header key `{key}`"))),
                }
                continue;
            }
            if !header_seen {
                // Column header row.
                header_seen = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 + dimension {
                return Err(bad(&format!("wrong field count in `{line}`")));
            }
            let run: usize = fields[0].parse().map_err(|_| bad("bad run index"))?;
            let duration: u32 = fields[1].parse().map_err(|_| bad("bad duration"))?;
            let mut displacement = Vec::with_capacity(dimension);
            for f in &fields[2..2 + dimension] {
                displacement.push(f.parse::<i64>().map_err(|_| bad("bad displacement"))?);
            }
            let steps = parse_step_string(fields[2 + dimension])?;
            let cycle = RegenerationCycle::from_steps(dimension, &steps, false);
            if cycle.duration != duration || cycle.displacement != displacement {
                return Err(bad(&format!(
                    "steps do not reproduce duration/displacement in `{line}`"
                )));
            }
            run_of.push(run);
            cycles.push(cycle);
        }
        if direction.len() != dimension {
            return Err(bad("direction does not match dimension"));
        }
        let nestling = nestling.ok_or_else(|| bad("missing nestling header"))?;
        if !run_of.windows(2).all(|w| w[0] <= w[1]) {
            return Err(bad("run indices must be nondecreasing"));
        }
        let n_runs = run_of.last().map_or(0, |&r| r + 1);
        let mut run_starts = vec![0usize; n_runs + 1];
        for &r in &run_of {
            run_starts[r + 1] += 1;
        }
        for i in 1..run_starts.len() {
            run_starts[i] += run_starts[i - 1];
        }
        Ok(CycleEnsemble::from_parts(
            direction,
            cycles,
            run_starts,
            fingerprint,
            master_seed,
            requested_runs,
            cycle_cap,
            starved,
            nestling,
        ))
    }

    pub fn load_path<P: AsRef<FsPath>>(path: P) -> Result<CycleEnsemble<F>, HarvestError> {
        CycleEnsemble::load(BufReader::new(fs::File::open(path)?))
    }
}

fn parse_step_string(s: &str) -> Result<Vec<Step>, HarvestError> {
    let mut out = Vec::new();
    let mut token = String::new();
    for c in s.chars() {
        if (c == '+' || c == '-') && !token.is_empty() {
            out.push(parse_step(&token).map_err(HarvestError::Env)?);
            token.clear();
        }
        token.push(c);
    }
    if !token.is_empty() {
        out.push(parse_step(&token).map_err(HarvestError::Env)?);
    }
    Ok(out)
}

/// The deterministic per-walk random stream: one master seed, one stream per
/// walk index, so results do not depend on thread scheduling.
pub fn stream_rng(master_seed: u64, stream: u64) -> ChaCha12Rng {
    let mut rng = ChaCha12Rng::seed_from_u64(master_seed);
    rng.set_stream(stream);
    rng
}

/// Simulates one annealed walk with lazy environment sampling: each site's
/// kernel is drawn from the law at the first departure and cached for the
/// walk's lifetime, so revisits reuse the same kernel.
pub struct WalkSimulator<'a, F: Scalar> {
    law: &'a EnvironmentLaw<F>,
    rng: ChaCha12Rng,
    position: Vec<i64>,
    atom_cache: HashMap<Vec<i64>, u32>,
}

impl<'a, F: Scalar> WalkSimulator<'a, F> {
    pub fn new(law: &'a EnvironmentLaw<F>, rng: ChaCha12Rng) -> WalkSimulator<'a, F> {
        WalkSimulator {
            law,
            rng,
            position: vec![0; law.dimension()],
            atom_cache: HashMap::new(),
        }
    }

    pub fn from_stream(
        law: &'a EnvironmentLaw<F>,
        master_seed: u64,
        stream: u64,
    ) -> WalkSimulator<'a, F> {
        WalkSimulator::new(law, stream_rng(master_seed, stream))
    }

    pub fn position(&self) -> &[i64] {
        &self.position
    }

    /// The mixture atom governing the current site, drawing and caching it if
    /// the site is fresh. Exposed so tests can assert the caching contract.
    pub fn atom_index_here(&mut self) -> usize {
        if let Some(&a) = self.atom_cache.get(self.position.as_slice()) {
            return a as usize;
        }
        let u = F::of(self.rng.gen::<f64>());
        let a = self.law.sample_atom(u);
        self.atom_cache.insert(self.position.clone(), a as u32);
        a
    }

    /// Advance one step and return it.
    pub fn step(&mut self) -> Step {
        let atom = self.atom_index_here();
        let u = F::of(self.rng.gen::<f64>());
        let step = self.law.atoms()[atom].sample(u);
        step.apply(&mut self.position);
        step
    }
}

/// Simulate `max_steps` steps of the annealed walk. Deterministic in
/// `(law, seed, max_steps)`.
pub fn sample_walk<F: Scalar>(law: &EnvironmentLaw<F>, seed: u64, max_steps: usize) -> Path {
    assert!(max_steps >= 1);
    let mut sim = WalkSimulator::from_stream(law, seed, 0);
    let steps = (0..max_steps).map(|_| sim.step()).collect();
    Path::new(law.dimension(), steps)
}

/// Outcome of one walk: its quota of confirmed cycles, or starvation.
fn run_one_walk<F: Scalar>(
    law: &EnvironmentLaw<F>,
    direction: &[F],
    quota: usize,
    master_seed: u64,
    stream: u64,
    cycle_cap: usize,
) -> Option<Vec<RegenerationCycle>> {
    let mut sim = WalkSimulator::from_stream(law, master_seed, stream);
    let max_gain = direction
        .iter()
        .fold(F::zero(), |m, &u| m.max(u.abs()));
    let margin = F::of_int(CONFIRMATION_MARGIN_LEVELS) * max_gain;
    let mut steps: Vec<Step> = Vec::new();
    let mut level = F::zero();
    let mut max_level = F::zero();
    let mut stack: Vec<(usize, F)> = Vec::new();
    let mut since_candidate = 0usize;
    loop {
        if stack.len() >= quota + 2 && level >= stack[quota].1 + margin {
            break;
        }
        if since_candidate > cycle_cap {
            return None;
        }
        let step = sim.step();
        steps.push(step);
        level = site_level(sim.position(), direction);
        while let Some(&(_, l)) = stack.last() {
            if level < l {
                stack.pop();
            } else {
                break;
            }
        }
        if level > max_level {
            stack.push((steps.len(), level));
            max_level = level;
            since_candidate = 0;
        } else {
            since_candidate += 1;
        }
    }
    let dimension = law.dimension();
    let cycles = stack[..=quota]
        .windows(2)
        .map(|w| RegenerationCycle::from_steps(dimension, &steps[w[0].0..w[1].0], false))
        .collect();
    Some(cycles)
}

/// Harvest `n_cycles` conditioned regeneration cycles from `runs` independent
/// walks (quotas split evenly). Per walk, the initial block and the
/// provisional tail are discarded. A walk that exceeds `cycle_cap` steps
/// without a new record candidate is discarded entirely, counted, and
/// replaced by a fresh walk on the next unused random stream; if starvation
/// keeps repeating, the harvest aborts with the counts.
///
/// The result is a deterministic function of the arguments, independent of
/// how many worker threads carry the walks.
pub fn harvest_cycles<F: Scalar>(
    law: &EnvironmentLaw<F>,
    direction: &[F],
    n_cycles: usize,
    seed: u64,
    cycle_cap: usize,
    runs: usize,
) -> Result<CycleEnsemble<F>, HarvestError> {
    assert!(n_cycles >= 1, "need at least one cycle");
    assert!(runs >= 1, "need at least one run");
    assert_eq!(direction.len(), law.dimension(), "direction dimension");
    let norm: F = crate::linalg::norm(direction);
    assert!(
        (norm - F::one()).abs() < F::of(1e-6),
        "direction must be a unit vector"
    );
    let nestling = classify_nestling(law)?;

    // Even quota split; walks with a zero quota are not run.
    let base = n_cycles / runs;
    let extra = n_cycles % runs;
    let mut pending: Vec<(u64, usize)> = (0..runs)
        .map(|i| (i as u64, base + usize::from(i < extra)))
        .filter(|&(_, q)| q > 0)
        .collect();

    let abort_after = runs.max(8);
    let mut next_stream = runs as u64;
    let mut starved = 0usize;
    let mut finished: Vec<(u64, Vec<RegenerationCycle>)> = Vec::new();
    while !pending.is_empty() {
        let outcomes: Vec<Option<Vec<RegenerationCycle>>> = pending
            .par_iter()
            .map(|&(stream, quota)| run_one_walk(law, direction, quota, seed, stream, cycle_cap))
            .collect();
        let mut replacements = Vec::new();
        for (&(stream, quota), outcome) in pending.iter().zip(outcomes) {
            match outcome {
                Some(cycles) => finished.push((stream, cycles)),
                None => {
                    starved += 1;
                    replacements.push((next_stream, quota));
                    next_stream += 1;
                }
            }
        }
        if starved > abort_after {
            return Err(HarvestError::RegenerationStarvation {
                starved_walks: starved,
                completed_cycles: finished.iter().map(|(_, c)| c.len()).sum(),
                requested: n_cycles,
            });
        }
        pending = replacements;
    }
    finished.sort_by_key(|&(stream, _)| stream);

    let mut cycles = Vec::with_capacity(n_cycles);
    let mut run_starts = vec![0usize];
    for (_, walk_cycles) in finished {
        cycles.extend(walk_cycles);
        run_starts.push(cycles.len());
    }
    debug_assert_eq!(cycles.len(), n_cycles);
    Ok(CycleEnsemble::from_parts(
        direction.to_vec(),
        cycles,
        run_starts,
        law.fingerprint(),
        seed,
        runs,
        cycle_cap,
        starved,
        nestling,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::TransitionKernel;
    use proptest::prelude::*;

    fn p(up_signs: &[i8]) -> Path {
        Path::new(
            1,
            up_signs
                .iter()
                .map(|&s| Step::new(0, s > 0))
                .collect(),
        )
    }

    fn law_06() -> EnvironmentLaw<f64> {
        EnvironmentLaw::deterministic(TransitionKernel::simple_1d(0.6).unwrap())
    }

    #[test]
    fn scan_examples() {
        // A later revisit of an earlier maximum level blocks the strict past
        // inequality: only time 1 survives, time 5 is right-censored.
        let scan = find_regenerations(&p(&[1, 1, -1, 1, 1]), &[1.0]);
        assert_eq!(scan.confirmed, vec![1]);
        assert_eq!(scan.provisional, Some(5));

        let scan = find_regenerations(&p(&[1, 1, 1]), &[1.0]);
        assert_eq!(scan.confirmed, vec![1, 2]);
        assert_eq!(scan.provisional, Some(3));

        // Level 0 is re-approached but never strictly exceeded.
        let scan = find_regenerations(&p(&[-1, 1]), &[1.0]);
        assert!(scan.confirmed.is_empty());
        assert_eq!(scan.provisional, None);
    }

    fn brute_force_scan(path: &Path, direction: &[f64]) -> Vec<usize> {
        let positions = path.positions();
        let level = |k: usize| -> f64 {
            positions[k]
                .iter()
                .zip(direction)
                .map(|(&x, &u)| x as f64 * u)
                .sum()
        };
        (1..=path.len())
            .filter(|&j| {
                (0..j).all(|i| level(i) < level(j))
                    && (j + 1..=path.len()).all(|k| level(j) <= level(k))
            })
            .collect()
    }

    proptest! {
        #[test]
        fn scan_matches_brute_force_1d(signs in proptest::collection::vec(-1i8..=1, 1..40)) {
            let steps: Vec<i8> = signs.iter().map(|&s| if s >= 0 { 1 } else { -1 }).collect();
            let path = p(&steps);
            let scan = find_regenerations(&path, &[1.0]);
            let mut all = scan.confirmed.clone();
            all.extend(scan.provisional);
            prop_assert_eq!(all, brute_force_scan(&path, &[1.0]));
        }

        #[test]
        fn scan_matches_brute_force_2d(ix in proptest::collection::vec(0usize..4, 1..30)) {
            let path = Path::new(2, ix.into_iter().map(Step::from_index).collect());
            let u = [0.8, 0.6];
            let scan = find_regenerations(&path, &u);
            let mut all = scan.confirmed.clone();
            all.extend(scan.provisional);
            prop_assert_eq!(all, brute_force_scan(&path, &u));
        }
    }

    #[test]
    fn sampled_walk_is_deterministic_and_obeys_the_lln() {
        let law = law_06();
        let a = sample_walk(&law, 7, 1000);
        let b = sample_walk(&law, 7, 1000);
        assert_eq!(a, b);

        let long = sample_walk(&law, 11, 1_000_000);
        let ups = long.steps().iter().filter(|s| s.positive()).count();
        let freq = ups as f64 / long.len() as f64;
        assert!((freq - 0.6).abs() < 0.002, "freq={freq}");
    }

    #[test]
    fn environment_cache_gives_revisits_the_same_kernel() {
        let law = EnvironmentLaw::two_point_1d(0.3f64, 0.7).unwrap();
        let mut sim = WalkSimulator::from_stream(&law, 5, 0);
        let here = sim.atom_index_here();
        // Wander a while, then check the origin's atom is pinned.
        for _ in 0..50 {
            sim.step();
        }
        let again = {
            // Walk back to the origin by brute force along the cached path.
            let mut s = sim;
            while s.position()[0] != 0 {
                s.step();
            }
            s.atom_index_here()
        };
        assert_eq!(here, again);
    }

    #[test]
    fn harvest_velocity_matches_classical_walk() {
        let law = law_06();
        let ens = harvest_cycles(&law, &[1.0], 20_000, 42, 1_000_000, 4).unwrap();
        assert_eq!(ens.len(), 20_000);
        assert_eq!(ens.n_runs(), 4);
        assert_eq!(ens.starved_walks(), 0);
        let (mut d, mut t) = (0.0f64, 0.0f64);
        for c in ens.cycles() {
            d += c.displacement[0] as f64;
            t += c.duration as f64;
        }
        let v = d / t;
        // Delta-method standard error of the ratio estimator.
        let n = ens.len() as f64;
        let mean_t = t / n;
        let var: f64 = ens
            .cycles()
            .iter()
            .map(|c| {
                let r = c.displacement[0] as f64 - v * c.duration as f64;
                r * r
            })
            .sum::<f64>()
            / (n - 1.0);
        let se = var.sqrt() / (mean_t * n.sqrt());
        assert!((v - 0.2).abs() < 3.0 * se, "v={v} se={se}");
    }

    #[test]
    fn harvested_cycles_satisfy_block_invariants() {
        let ens = harvest_cycles(&law_06(), &[1.0], 2_000, 3, 1_000_000, 4).unwrap();
        for c in ens.cycles() {
            assert!(c.check_invariants(&[1.0]));
            assert!(c.level_gain(&[1.0]) >= 1.0);
            assert!(!c.is_first);
        }
    }

    #[test]
    fn concatenated_run_reproduces_its_cycle_boundaries() {
        let ens = harvest_cycles(&law_06(), &[1.0], 500, 9, 1_000_000, 3).unwrap();
        for run in ens.runs() {
            let steps: Vec<Step> = run.iter().flat_map(|c| c.steps.iter().copied()).collect();
            let path = Path::new(1, steps);
            let scan = find_regenerations(&path, &[1.0]);
            let mut expected = Vec::new();
            let mut acc = 0usize;
            for c in run {
                acc += c.duration as usize;
                expected.push(acc);
            }
            let mut got = scan.confirmed.clone();
            got.extend(scan.provisional);
            assert_eq!(got, expected);
        }
    }

    #[test]
    fn recurrent_law_starves() {
        let law = EnvironmentLaw::two_point_1d(0.3f64, 0.7).unwrap();
        match harvest_cycles(&law, &[1.0], 100, 1, 3_000, 2) {
            Err(HarvestError::RegenerationStarvation { starved_walks, .. }) => {
                assert!(starved_walks >= 2)
            }
            other => panic!("expected starvation, got {other:?}"),
        }
    }

    #[test]
    fn harvest_is_independent_of_worker_count() {
        let law = EnvironmentLaw::two_point_1d(0.7f64, 0.8).unwrap();
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| harvest_cycles(&law, &[1.0], 3_000, 77, 1_000_000, 5).unwrap())
        };
        assert_eq!(run(1), run(4));
    }

    #[test]
    fn merged_ensembles_pool_their_cycles() {
        let law = law_06();
        let a = harvest_cycles(&law, &[1.0], 1_000, 1, 1_000_000, 2).unwrap();
        let b = harvest_cycles(&law, &[1.0], 1_000, 2, 1_000_000, 2).unwrap();
        let sum_t = |e: &CycleEnsemble<f64>| {
            e.cycles().iter().map(|c| c.duration as f64).sum::<f64>()
        };
        let (ta, tb) = (sum_t(&a), sum_t(&b));
        let merged = a.merge(b).unwrap();
        assert_eq!(merged.len(), 2_000);
        assert_eq!(merged.n_runs(), 4);
        assert_eq!(sum_t(&merged), ta + tb);
    }

    #[test]
    fn merge_rejects_mismatched_laws() {
        let a = harvest_cycles(&law_06(), &[1.0], 100, 1, 1_000_000, 1).unwrap();
        let other = EnvironmentLaw::deterministic(TransitionKernel::simple_1d(0.7f64).unwrap());
        let b = harvest_cycles(&other, &[1.0], 100, 1, 1_000_000, 1).unwrap();
        assert!(matches!(
            a.merge(b),
            Err(HarvestError::MergeMismatch(_))
        ));
    }

    /// Two-sample Mann-Whitney z statistic with tie correction.
    fn rank_test_z(a: &[f64], b: &[f64]) -> f64 {
        let mut all: Vec<(f64, usize)> = a
            .iter()
            .map(|&x| (x, 0))
            .chain(b.iter().map(|&x| (x, 1)))
            .collect();
        all.sort_by(|x, y| x.0.partial_cmp(&y.0).unwrap());
        let n = all.len();
        let mut ranks = vec![0.0f64; n];
        let mut tie_term = 0.0f64;
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && all[j + 1].0 == all[i].0 {
                j += 1;
            }
            let avg = (i + j) as f64 / 2.0 + 1.0;
            for r in ranks.iter_mut().take(j + 1).skip(i) {
                *r = avg;
            }
            let t = (j - i + 1) as f64;
            tie_term += t * t * t - t;
            i = j + 1;
        }
        let (m, k) = (a.len() as f64, b.len() as f64);
        let r1: f64 = all
            .iter()
            .zip(&ranks)
            .filter(|((_, src), _)| *src == 0)
            .map(|(_, &r)| r)
            .sum();
        let u = r1 - m * (m + 1.0) / 2.0;
        let nn = m + k;
        let var = m * k / (nn * (nn - 1.0)) * ((nn * nn * nn - nn) / 12.0 - tie_term / 12.0);
        (u - m * k / 2.0) / var.sqrt()
    }

    #[test]
    fn runs_are_exchangeable_by_rank_test() {
        let ens = harvest_cycles(&law_06(), &[1.0], 4_000, 13, 1_000_000, 2).unwrap();
        let runs: Vec<&[RegenerationCycle]> = ens.runs().collect();
        let durations =
            |r: &[RegenerationCycle]| r.iter().map(|c| c.duration as f64).collect::<Vec<_>>();
        let displacements =
            |r: &[RegenerationCycle]| r.iter().map(|c| c.displacement[0] as f64).collect::<Vec<_>>();
        let z_dur = rank_test_z(&durations(runs[0]), &durations(runs[1]));
        let z_disp = rank_test_z(&displacements(runs[0]), &displacements(runs[1]));
        assert!(z_dur.abs() < 2.576, "duration rank z = {z_dur}");
        assert!(z_disp.abs() < 2.576, "displacement rank z = {z_disp}");
    }

    #[test]
    fn cycle_log_round_trips() {
        let law = EnvironmentLaw::two_point_1d(0.7f64, 0.8).unwrap();
        let ens = harvest_cycles(&law, &[1.0], 200, 21, 1_000_000, 3).unwrap();
        let mut buf = Vec::new();
        ens.save(&mut buf).unwrap();
        let loaded = CycleEnsemble::<f64>::load(buf.as_slice()).unwrap();
        assert_eq!(ens, loaded);
    }

    #[test]
    fn cycle_log_rejects_corruption() {
        let ens = harvest_cycles(&law_06(), &[1.0], 20, 2, 1_000_000, 1).unwrap();
        let mut buf = Vec::new();
        ens.save(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        // Corrupt one duration field.
        let corrupted = text.replacen(",2,", ",3,", 1);
        if corrupted != text {
            assert!(CycleEnsemble::<f64>::load(corrupted.as_bytes()).is_err());
        }
        let missing_version = text.replace("#rwre-cycle-log v1", "#rwre-cycle-log v9");
        assert!(CycleEnsemble::<f64>::load(missing_version.as_bytes()).is_err());
    }

    #[test]
    fn uneven_quota_split_covers_all_cycles() {
        let ens = harvest_cycles(&law_06(), &[1.0], 7, 5, 1_000_000, 3).unwrap();
        assert_eq!(ens.len(), 7);
        let sizes: Vec<usize> = ens.runs().map(|r| r.len()).collect();
        assert_eq!(sizes, vec![3, 2, 2]);

        // More runs than cycles: zero-quota walks are skipped.
        let ens = harvest_cycles(&law_06(), &[1.0], 2, 5, 1_000_000, 4).unwrap();
        assert_eq!(ens.len(), 2);
        assert_eq!(ens.n_runs(), 2);
    }

    #[test]
    fn cycles_from_path_flags_the_initial_block() {
        let path = p(&[-1, 1, 1, 1, -1, 1, 1]);
        // Levels: -1,0,1,2,1,2,3 -> records at times 3 (level 1), 4 (level 2,
        // popped by time 5? level drops to 1 < 2 at t=5: popped), then 6
        // (level 2), 7 (level 3, provisional).
        let cycles = cycles_from_path(&path, &[1.0]);
        assert!(cycles[0].is_first);
        assert!(cycles.iter().skip(1).all(|c| !c.is_first));
        let total: u32 = cycles.iter().map(|c| c.duration).sum();
        // The provisional tail is dropped, so the blocks cover the path only
        // up to the last confirmed boundary.
        assert!(total as usize <= path.len());
        for c in cycles.iter().skip(1) {
            assert!(c.check_invariants(&[1.0]));
        }
    }
}
