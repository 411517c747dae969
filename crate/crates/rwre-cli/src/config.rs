//! Experiment configuration: a single TOML file describing the law, the
//! task, and every knob that affects the result. The seed is mandatory so
//! no run ever depends on silent entropy.

use std::collections::BTreeMap;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use rwre_core::environment::{parse_step, EnvError, NestlingLabel, Step};
use rwre_core::{EnvironmentLaw64, TransitionKernel64};

use crate::CliError;

#[derive(Clone, Copy, Debug, Deserialize, Serialize, PartialEq, Eq)]
#[serde(rename_all = "kebab-case")]
pub enum TaskKind {
    LambdaSweep,
    RateCurve,
    Tilted,
    BoundaryProbe,
    OracleCrosscheck,
}

impl TaskKind {
    pub fn name(self) -> &'static str {
        match self {
            TaskKind::LambdaSweep => "lambda-sweep",
            TaskKind::RateCurve => "rate-curve",
            TaskKind::Tilted => "tilted",
            TaskKind::BoundaryProbe => "boundary-probe",
            TaskKind::OracleCrosscheck => "oracle-crosscheck",
        }
    }
}

/// Either the literal string `"auto"` or an explicit direction vector.
#[derive(Clone, Debug, Deserialize, Serialize, PartialEq)]
#[serde(untagged)]
pub enum DirectionSpec {
    Named(String),
    Vector(Vec<f64>),
}

impl Default for DirectionSpec {
    fn default() -> Self {
        DirectionSpec::Named("auto".to_string())
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AtomSection {
    /// Mixture weight of this kernel; weights are normalized to sum to one.
    #[serde(default = "default_weight")]
    pub weight: f64,
    /// Step token -> probability, e.g. `"+x" = 0.6, "-x" = 0.4`.
    pub kernel: BTreeMap<String, f64>,
}

fn default_weight() -> f64 {
    1.0
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct LawSection {
    pub dimension: usize,
    pub atoms: Vec<AtomSection>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct HarvestSection {
    pub n_cycles: usize,
    pub runs: usize,
    pub cycle_cap: usize,
}

impl Default for HarvestSection {
    fn default() -> Self {
        HarvestSection {
            n_cycles: 20_000,
            runs: 8,
            cycle_cap: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct EstimationSection {
    /// Root tolerance for the empirical moment generating function solves.
    pub tolerance: f64,
    /// z-score threshold for region classification.
    pub z_crit: f64,
}

impl Default for EstimationSection {
    fn default() -> Self {
        EstimationSection {
            tolerance: 1e-10,
            z_crit: 3.0,
        }
    }
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridsSection {
    /// Tilt grid, one vector per point (`[[0.5]]` in one dimension).
    pub theta: Vec<Vec<f64>>,
    /// Velocity grid for the rate-curve task.
    pub xi: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OracleSection {
    /// Path lengths for the finite-length extrapolation.
    pub lengths: Vec<usize>,
}

impl Default for OracleSection {
    fn default() -> Self {
        OracleSection {
            lengths: vec![8, 10, 12, 14, 16],
        }
    }
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CylinderEntry {
    pub word: Vec<String>,
    pub value: f64,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct TiltedSection {
    /// Support of the cylinder function as `(word, value)` entries.
    pub cylinder: Vec<CylinderEntry>,
    /// Largest block length for the consistency sweep; `0` means the
    /// cylinder depth alone.
    pub k_max: usize,
}

#[derive(Clone, Debug, Default, Deserialize, Serialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    /// Directory for `results.csv` and `provenance.json`; created if absent.
    pub dir: Option<PathBuf>,
}

#[derive(Clone, Debug, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: TaskKind,
    /// Master seed; mandatory so reruns are exact.
    pub seed: u64,
    pub law: LawSection,
    #[serde(default)]
    pub direction: DirectionSpec,
    #[serde(default)]
    pub harvest: HarvestSection,
    #[serde(default)]
    pub estimation: EstimationSection,
    #[serde(default)]
    pub grids: GridsSection,
    #[serde(default)]
    pub oracle: OracleSection,
    #[serde(default)]
    pub tilted: TiltedSection,
    #[serde(default)]
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<ExperimentConfig, CliError> {
        let config: ExperimentConfig =
            toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    /// Structural checks that do not need the law to be built yet.
    pub fn validate(&self) -> Result<(), CliError> {
        let d = self.law.dimension;
        if d == 0 {
            return Err(CliError::Config("dimension must be at least 1".into()));
        }
        if self.law.atoms.is_empty() {
            return Err(CliError::Config("law needs at least one atom".into()));
        }
        let needs_theta = matches!(
            self.task,
            TaskKind::LambdaSweep
                | TaskKind::Tilted
                | TaskKind::BoundaryProbe
                | TaskKind::OracleCrosscheck
        );
        if needs_theta && self.grids.theta.is_empty() {
            return Err(CliError::Config(format!(
                "task {} needs a nonempty grids.theta",
                self.task.name()
            )));
        }
        if self.task == TaskKind::RateCurve && self.grids.xi.is_empty() {
            return Err(CliError::Config(
                "task rate-curve needs a nonempty grids.xi".into(),
            ));
        }
        for point in self.grids.theta.iter().chain(self.grids.xi.iter()) {
            if point.len() != d {
                return Err(CliError::Config(format!(
                    "grid point {point:?} does not have dimension {d}"
                )));
            }
        }
        if self.task == TaskKind::OracleCrosscheck {
            if self.oracle.lengths.len() < 2 {
                return Err(CliError::Config(
                    "oracle-crosscheck needs at least two lengths to extrapolate".into(),
                ));
            }
            if self.grids.theta.len() != 1 {
                return Err(CliError::Config(
                    "oracle-crosscheck compares a single tilt; give exactly one theta".into(),
                ));
            }
        }
        if self.task == TaskKind::Tilted {
            if self.tilted.cylinder.is_empty() {
                return Err(CliError::Config(
                    "task tilted needs a cylinder function (tilted.cylinder)".into(),
                ));
            }
            let depth = self.tilted.cylinder[0].word.len();
            if depth == 0 {
                return Err(CliError::Config("cylinder words must be non-empty".into()));
            }
            for entry in &self.tilted.cylinder {
                if entry.word.len() != depth {
                    return Err(CliError::Config(
                        "all cylinder words must share one depth".into(),
                    ));
                }
            }
            if self.tilted.k_max != 0 && self.tilted.k_max < depth {
                return Err(CliError::Config(
                    "tilted.k_max must be at least the cylinder depth".into(),
                ));
            }
        }
        Ok(())
    }

    /// Build the environment law, surfacing kernel validation errors
    /// (ellipticity, normalization) under their own names.
    pub fn build_law(&self) -> Result<EnvironmentLaw64, CliError> {
        let d = self.law.dimension;
        let mut kernels = Vec::with_capacity(self.law.atoms.len());
        let mut weights = Vec::with_capacity(self.law.atoms.len());
        for atom in &self.law.atoms {
            let mut entries: Vec<(Step, f64)> = Vec::with_capacity(atom.kernel.len());
            for (token, &prob) in &atom.kernel {
                let step = parse_step(token).map_err(CliError::Env)?;
                if step.axis() >= d {
                    return Err(CliError::Env(EnvError::DimensionMismatch(format!(
                        "step {token} does not fit dimension {d}"
                    ))));
                }
                entries.push((step, prob));
            }
            kernels.push(TransitionKernel64::new(d, &entries).map_err(CliError::Env)?);
            weights.push(atom.weight);
        }
        EnvironmentLaw64::new(kernels, weights).map_err(CliError::Env)
    }

    /// Resolve the regeneration direction: an explicit vector is normalized;
    /// `"auto"` takes the transience witness of a non-nestling law.
    pub fn resolve_direction(&self, law: &EnvironmentLaw64) -> Result<Vec<f64>, CliError> {
        match &self.direction {
            DirectionSpec::Named(name) if name == "auto" => match law.classify() {
                Ok(NestlingLabel::NonNestling { direction }) => Ok(direction),
                Ok(NestlingLabel::Nestling) => Err(CliError::Config(
                    "nestling law: no canonical direction; set `direction` explicitly".into(),
                )),
                Err(e) => Err(CliError::Env(e)),
            },
            DirectionSpec::Named(other) => Err(CliError::Config(format!(
                "unknown direction keyword `{other}` (only \"auto\" or a vector)"
            ))),
            DirectionSpec::Vector(v) => {
                if v.len() != self.law.dimension {
                    return Err(CliError::Config(format!(
                        "direction {v:?} does not have dimension {}",
                        self.law.dimension
                    )));
                }
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
                if !(norm.is_finite() && norm > 0.0) {
                    return Err(CliError::Config("direction must be a nonzero vector".into()));
                }
                Ok(v.iter().map(|x| x / norm).collect())
            }
        }
    }

    /// Parse the configured cylinder entries into `(word, value)` pairs.
    pub fn cylinder_entries(&self) -> Result<Vec<(Vec<Step>, f64)>, CliError> {
        self.tilted
            .cylinder
            .iter()
            .map(|entry| {
                let word = entry
                    .word
                    .iter()
                    .map(|token| parse_step(token).map_err(CliError::Env))
                    .collect::<Result<Vec<Step>, CliError>>()?;
                Ok((word, entry.value))
            })
            .collect()
    }
}

/// A fully commented example configuration for each task, small enough to
/// run in seconds; doubles as the schema documentation.
pub fn sample_config(task: TaskKind) -> String {
    let header = r#"# rwre experiment configuration.
#
# task: one of lambda-sweep | rate-curve | tilted | boundary-probe
#       | oracle-crosscheck
# seed: mandatory master seed; identical config + seed reproduces the
#       results CSV byte for byte, independent of worker count.
#
# [law] describes the environment: `dimension` and one [[law.atoms]] block
# per kernel, each a step -> probability table ("+x", "-x", "+y", ...)
# with a mixture `weight`. Probabilities must be strictly positive and
# sum to one (uniform ellipticity).
#
# direction: "auto" (transience witness; non-nestling laws only) or an
# explicit vector such as [1.0] — it is normalized internally.
#
# [harvest]   n_cycles, runs, cycle_cap — regeneration harvest controls.
# [estimation] tolerance (root solves), z_crit (region classification).
# [grids]     theta = [[...], ...] tilt grid; xi = [[...], ...] velocities.
# [oracle]    lengths for the finite-length extrapolation cross-check.
# [tilted]    cylinder = [{ word = ["+x"], value = 1.0 }, ...]; k_max.
# [output]    dir: where results.csv / provenance.json are written.
"#;
    let body = match task {
        TaskKind::LambdaSweep => {
            r#"
task = "lambda-sweep"
seed = 4242
direction = "auto"

[law]
dimension = 1

[[law.atoms]]
weight = 1.0
kernel = { "+x" = 0.6, "-x" = 0.4 }

[harvest]
n_cycles = 20000
runs = 8
cycle_cap = 1000000

[grids]
theta = [[-0.5], [0.25], [0.5]]
"#
        }
        TaskKind::RateCurve => {
            r#"
task = "rate-curve"
seed = 4242
direction = "auto"

[law]
dimension = 1

[[law.atoms]]
weight = 1.0
kernel = { "+x" = 0.6, "-x" = 0.4 }

[harvest]
n_cycles = 20000
runs = 8

[grids]
xi = [[0.3], [0.4], [0.5]]
"#
        }
        TaskKind::Tilted => {
            r#"
task = "tilted"
seed = 4242
direction = "auto"

[law]
dimension = 1

[[law.atoms]]
weight = 1.0
kernel = { "+x" = 0.6, "-x" = 0.4 }

[harvest]
n_cycles = 20000
runs = 8

[grids]
theta = [[0.5]]

[tilted]
cylinder = [{ word = ["+x"], value = 1.0 }]
k_max = 3
"#
        }
        TaskKind::BoundaryProbe => {
            r#"
task = "boundary-probe"
seed = 4242
# Nestling laws need an explicit direction.
direction = [1.0]

[law]
dimension = 1

[[law.atoms]]
weight = 0.5
kernel = { "+x" = 0.85, "-x" = 0.15 }

[[law.atoms]]
weight = 0.5
kernel = { "+x" = 0.4, "-x" = 0.6 }

[harvest]
n_cycles = 20000
runs = 8

[grids]
theta = [[0.10], [0.05], [0.02], [0.0]]
"#
        }
        TaskKind::OracleCrosscheck => {
            r#"
task = "oracle-crosscheck"
seed = 4242
direction = "auto"

[law]
dimension = 1

[[law.atoms]]
weight = 0.5
kernel = { "+x" = 0.7, "-x" = 0.3 }

[[law.atoms]]
weight = 0.5
kernel = { "+x" = 0.8, "-x" = 0.2 }

[harvest]
n_cycles = 20000
runs = 8

[grids]
theta = [[0.5]]

[oracle]
lengths = [8, 10, 12, 14, 16]
"#
        }
    };
    format!("{header}{body}")
}
