//! Experiment configuration.
//!
//! A config is a TOML document: `[section]` headers followed by `key = value`
//! lines, so every setting has a dotted name such as `sampling.radius`.
//! Unknown keys are rejected. Only the work directory may be overridden from
//! the environment (`NN_SCHWARZ_WORKDIR`) or the command line.

use std::path::{Path, PathBuf};

use nn_schwarz::decomposition::{Decomposition, PatchIndex};
use nn_schwarz::grid::GridSpec;
use nn_schwarz::local_solver::SolveOptions;
use nn_schwarz::problems::{Medium, ProblemKind, ProblemSpec};
use nn_schwarz::sampling::SampleLaw;
use nn_schwarz::schwarz::SchwarzConfig;
use nn_schwarz::surrogate::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{BenchError, BenchResult};

pub const WORKDIR_ENV: &str = "NN_SCHWARZ_WORKDIR";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub problem: ProblemSection,
    pub grid: GridSection,
    pub decomposition: DecompositionSection,
    pub sampling: SamplingSection,
    pub surrogate: SurrogateSection,
    pub schwarz: SchwarzSection,
    #[serde(default)]
    pub solver: SolverSection,
    #[serde(default)]
    pub spectrum: SpectrumSection,
    #[serde(default)]
    pub paths: PathsSection,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KindName {
    Semilinear,
    Plaplace,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemSection {
    pub kind: KindName,
    /// Scale of the semilinear medium.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Exponent of the p-Laplacian.
    #[serde(default = "default_p")]
    pub p: f64,
}

fn default_epsilon() -> f64 {
    0.125
}

fn default_p() -> f64 {
    6.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub dx: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DecompositionSection {
    pub m1: usize,
    pub m2: usize,
    pub dx_o: f64,
    pub dx_b: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SamplingSection {
    pub n: usize,
    pub radius: f64,
    pub power: f64,
    pub seed: u64,
    pub test_fraction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InitName {
    Svd,
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SurrogateSection {
    pub delta1: f64,
    pub init: InitName,
    pub buffered: bool,
    /// Defaults to on for the p-Laplace problem only.
    #[serde(default)]
    pub normalize: Option<bool>,
    pub epochs: usize,
    pub batch_fraction: f64,
    pub lr: f64,
    pub decay: f64,
    pub decay_every: usize,
    pub mu: f64,
    pub seed: u64,
    #[serde(default = "default_eval_every")]
    pub eval_every: usize,
}

fn default_eval_every() -> usize {
    1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Classical,
    Surrogate,
    Oracle,
    Linear,
}

impl std::str::FromStr for ModeName {
    type Err = BenchError;

    fn from_str(s: &str) -> BenchResult<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classical" => Ok(ModeName::Classical),
            "surrogate" | "nn" => Ok(ModeName::Surrogate),
            "oracle" => Ok(ModeName::Oracle),
            "linear" => Ok(ModeName::Linear),
            other => Err(BenchError::Config(format!(
                "unknown mode `{other}` (classical, surrogate, oracle, linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchwarzSection {
    pub delta0: f64,
    pub max_iter: usize,
    pub modes: Vec<ModeName>,
    pub bcs: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub newton_tol: f64,
    pub newton_max_iter: usize,
    pub pgd_tol: f64,
    pub pgd_max_iter: usize,
    /// Tolerance multiplier for the classical runs of `solve` (relaxed
    /// accuracy for timing comparisons); 1 keeps full accuracy.
    pub classical_relaxation: f64,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SolveOptions::default();
        Self {
            newton_tol: o.newton_tol,
            newton_max_iter: o.newton_max_iter,
            pgd_tol: o.pgd_tol,
            pgd_max_iter: o.pgd_max_iter,
            classical_relaxation: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpectrumSection {
    /// Medium scales swept at the configured mesh width.
    pub epsilons: Vec<f64>,
    /// Mesh widths swept at the configured medium scale.
    pub dxs: Vec<f64>,
    pub patch: [usize; 2],
}

impl Default for SpectrumSection {
    fn default() -> Self {
        Self { epsilons: Vec::new(), dxs: Vec::new(), patch: [2, 2] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PathsSection {
    pub workdir: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        Self { workdir: PathBuf::from("work") }
    }
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> BenchResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads `path`, then applies the environment override of the workdir.
    pub fn load(path: &Path) -> BenchResult<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
        let mut cfg =
            Self::parse(&text).map_err(|e| BenchError::Config(format!("{}: {e}", path.display())))?;
        if let Some(dir) = std::env::var_os(WORKDIR_ENV) {
            cfg.paths.workdir = PathBuf::from(dir);
        }
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of the canonical serialization, ignoring the work directory.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.paths = PathsSection::default();
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> BenchResult<()> {
        let bad = |msg: String| Err(BenchError::Config(msg));
        let positive = [
            ("problem.epsilon", self.problem.epsilon),
            ("grid.dx", self.grid.dx),
            ("decomposition.dx_o", self.decomposition.dx_o),
            ("sampling.radius", self.sampling.radius),
            ("surrogate.delta1", self.surrogate.delta1),
            ("surrogate.lr", self.surrogate.lr),
            ("surrogate.decay", self.surrogate.decay),
            ("schwarz.delta0", self.schwarz.delta0),
            ("solver.newton_tol", self.solver.newton_tol),
            ("solver.pgd_tol", self.solver.pgd_tol),
            ("solver.classical_relaxation", self.solver.classical_relaxation),
        ];
        for (key, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{key} must be positive, got {v}"));
            }
        }
        if !(self.decomposition.dx_b >= 0.0) || !(self.sampling.power >= 0.0) || !(self.surrogate.mu >= 0.0) {
            return bad("decomposition.dx_b, sampling.power and surrogate.mu must be nonnegative".into());
        }
        if self.problem.kind == KindName::Plaplace && !(self.problem.p > 1.0) {
            return bad(format!("problem.p must exceed 1, got {}", self.problem.p));
        }
        if self.sampling.n == 0 {
            return bad("sampling.n must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.sampling.test_fraction) {
            return bad(format!(
                "sampling.test_fraction must lie in [0, 1), got {}",
                self.sampling.test_fraction
            ));
        }
        if self.schwarz.bcs.iter().any(|&b| !(1..=3).contains(&b)) {
            return bad("schwarz.bcs entries must be 1, 2 or 3".into());
        }
        if self.spectrum.epsilons.iter().chain(&self.spectrum.dxs).any(|&v| !(v > 0.0)) {
            return bad("spectrum sweeps must be positive".into());
        }
        self.train_config().validate()?;
        self.schwarz_config().validate()?;
        self.solve_options().validate()?;
        self.law().validate()?;
        self.decomposition()?;
        Ok(())
    }

    pub fn kind(&self) -> ProblemKind {
        match self.problem.kind {
            KindName::Semilinear => ProblemKind::Semilinear,
            KindName::Plaplace => ProblemKind::PLaplace,
        }
    }

    pub fn problem(&self) -> ProblemSpec {
        self.problem_with_epsilon(self.problem.epsilon)
    }

    pub fn problem_with_epsilon(&self, epsilon: f64) -> ProblemSpec {
        match self.problem.kind {
            KindName::Semilinear => ProblemSpec::semilinear(epsilon),
            KindName::Plaplace => ProblemSpec::plaplace(self.problem.p),
        }
    }

    pub fn medium_has_scale(&self) -> bool {
        matches!(self.problem().medium, Medium::Semilinear { .. })
    }

    pub fn decomposition(&self) -> BenchResult<Decomposition> {
        self.decomposition_at(self.grid.dx)
    }

    pub fn decomposition_at(&self, dx: f64) -> BenchResult<Decomposition> {
        let d = &self.decomposition;
        let grid = GridSpec::unit_square(dx)?;
        Ok(Decomposition::new(grid, d.m1, d.m2, d.dx_o, d.dx_b)?)
    }

    pub fn law(&self) -> SampleLaw {
        SampleLaw { radius: self.sampling.radius, power: self.sampling.power, seed: self.sampling.seed }
    }

    pub fn normalize(&self) -> bool {
        self.surrogate.normalize.unwrap_or(self.problem.kind == KindName::Plaplace)
    }

    pub fn train_config(&self) -> TrainConfig {
        let s = &self.surrogate;
        TrainConfig {
            epochs: s.epochs,
            batch_fraction: s.batch_fraction,
            lr: s.lr,
            decay: s.decay,
            decay_every: s.decay_every,
            mu: s.mu,
            seed: s.seed,
            eval_every: s.eval_every,
            ..TrainConfig::default()
        }
    }

    pub fn schwarz_config(&self) -> SchwarzConfig {
        SchwarzConfig {
            delta0: self.schwarz.delta0,
            max_iter: self.schwarz.max_iter,
            ..SchwarzConfig::default()
        }
    }

    pub fn solve_options(&self) -> SolveOptions {
        let s = &self.solver;
        SolveOptions {
            newton_tol: s.newton_tol,
            newton_max_iter: s.newton_max_iter,
            pgd_tol: s.pgd_tol,
            pgd_max_iter: s.pgd_max_iter,
            ..SolveOptions::default()
        }
    }

    /// Solver options of the classical reference runs.
    pub fn classical_options(&self) -> SolveOptions {
        let mut o = self.solve_options();
        o.newton_tol *= self.solver.classical_relaxation;
        o.pgd_tol *= self.solver.classical_relaxation;
        o
    }

    pub fn spectrum_patch(&self) -> PatchIndex {
        PatchIndex::new(self.spectrum.patch[0], self.spectrum.patch[1])
    }

    /// Label of the trained surrogate in result tables.
    pub fn surrogate_label(&self) -> String {
        let base = match self.surrogate.init {
            InitName::Svd => "SVD-NN",
            InitName::Random => "Rand-NN",
        };
        if self.surrogate.buffered {
            base.to_string()
        } else {
            format!("{base} (No buffer zone)")
        }
    }

    pub fn workdir(&self) -> &Path {
        &self.paths.workdir
    }
}
