//! Jacobi-type overlapping Schwarz drivers.
//!
//! Every sweep maps the current boundary data of all patches to their
//! boundary-to-boundary outputs, exchanges the outputs between neighbors and
//! rebuilds the boundary data. Interior patches can use a surrogate map in
//! place of the local solve; patches touching the physical boundary always
//! solve. After the sweep converges every patch solves once more and the local
//! solutions are blended with the partition of unity.

use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use rayon::prelude::*;

use crate::decomposition::{trace_change, Decomposition, PartitionOfUnity, PatchIndex};
use crate::error::{Error, Result};
use crate::grid::{BoundaryTrace, Field2D, Norm, NormKind};
use crate::local_solver::{LocalSolver, SolveOptions};
use crate::problems::{BoundaryCondition, ProblemSpec};
use crate::surrogate::{LinearBtB, TwoLayerNet};

/// Largest corner mismatch tolerated in the physical data.
pub const CORNER_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SchwarzMode {
    /// Every patch solves.
    Classical,
    /// Interior patches apply their surrogate map.
    Surrogate,
    /// The surrogate code path with the exact map substituted.
    Oracle,
}

impl fmt::Display for SchwarzMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SchwarzMode::Classical => "classical",
            SchwarzMode::Surrogate => "surrogate",
            SchwarzMode::Oracle => "oracle",
        })
    }
}

impl std::str::FromStr for SchwarzMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "classical" => Ok(SchwarzMode::Classical),
            "surrogate" | "nn" => Ok(SchwarzMode::Surrogate),
            "oracle" => Ok(SchwarzMode::Oracle),
            other => Err(Error::Config(format!("unknown Schwarz mode `{other}`"))),
        }
    }
}

/// Value put on the non-physical boundary nodes of the first iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InitialGuess {
    /// Mean of the physical data over the perimeter of the domain.
    BoundaryMean,
    Constant(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SchwarzConfig {
    pub delta0: f64,
    pub max_iter: usize,
    pub mode: SchwarzMode,
    pub initial_guess: InitialGuess,
    /// Keep every trace iterate in the result.
    pub record_traces: bool,
}

impl Default for SchwarzConfig {
    fn default() -> Self {
        Self {
            delta0: 1e-4,
            max_iter: 500,
            mode: SchwarzMode::Classical,
            initial_guess: InitialGuess::BoundaryMean,
            record_traces: false,
        }
    }
}

impl SchwarzConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta0 > 0.0) {
            return Err(Error::Config(format!("delta0 must be positive, got {}", self.delta0)));
        }
        if self.max_iter == 0 {
            return Err(Error::Config("max_iter must be at least 1".into()));
        }
        Ok(())
    }
}

/// Replacement for the exact boundary-to-boundary map of one interior patch.
#[derive(Debug, Clone)]
pub enum Surrogate {
    Net(TwoLayerNet),
    Linear(LinearBtB),
}

impl Surrogate {
    pub fn input_dim(&self) -> usize {
        match self {
            Surrogate::Net(n) => n.input_dim(),
            Surrogate::Linear(l) => l.matrix.ncols(),
        }
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Surrogate::Net(n) => n.output_dim(),
            Surrogate::Linear(l) => l.matrix.nrows(),
        }
    }

    pub fn apply(&self, phi: &[f64]) -> Result<Vec<f64>> {
        match self {
            Surrogate::Net(n) => n.forward(phi),
            Surrogate::Linear(l) => l.apply(phi),
        }
    }
}

pub type SurrogateSet = BTreeMap<PatchIndex, Surrogate>;

/// Wall-clock seconds per phase, summed over all iterations.
///
/// Per-patch work is timed inside each task, so with several threads the
/// solve and surrogate totals are CPU-like sums rather than elapsed time.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct PhaseTimes {
    pub local_solve: f64,
    pub surrogate: f64,
    /// Exchange, boundary update and residual.
    pub bookkeeping: f64,
    /// Final local solves and blending.
    pub assembly: f64,
    pub total: f64,
    /// Per iteration: time spent producing the outputs of the interior
    /// patches (solve and restriction, or surrogate evaluation).
    pub interior_update: Vec<f64>,
}

impl PhaseTimes {
    pub fn mean_interior_update(&self) -> f64 {
        if self.interior_update.is_empty() {
            return 0.0;
        }
        self.interior_update.iter().sum::<f64>() / self.interior_update.len() as f64
    }
}

/// Relative errors against a reference field.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorNorms {
    pub l2: f64,
    pub h1: f64,
    pub linf: f64,
}

#[derive(Debug, Clone)]
pub struct SchwarzResult {
    pub mode: SchwarzMode,
    pub iterations: usize,
    pub residual_history: Vec<f64>,
    pub global: Field2D,
    /// Boundary data of every patch at termination.
    pub traces: Vec<BoundaryTrace>,
    /// All iterates, starting with the initial guess, when recorded.
    pub trace_history: Vec<Vec<BoundaryTrace>>,
    pub times: PhaseTimes,
    pub errors: Option<ErrorNorms>,
}

impl SchwarzResult {
    pub fn attach_errors(&mut self, reference: &Field2D) -> Result<ErrorNorms> {
        let e = compute_errors(&self.global, reference)?;
        self.errors = Some(e);
        Ok(e)
    }
}

/// `norm(u - ref) / norm(ref)` in L2, H1 and max norms.
pub fn compute_errors(u: &Field2D, reference: &Field2D) -> Result<ErrorNorms> {
    if u.grid != reference.grid {
        return Err(Error::Dimension("error norms need fields on the same grid".into()));
    }
    let diff = Field2D::new(u.grid, u.values.iter().zip(&reference.values).map(|(a, b)| a - b).collect())?;
    let rel = |kind| {
        let r = reference.norm(kind);
        if r > 0.0 {
            Ok(diff.norm(kind) / r)
        } else {
            Err(Error::Dimension("reference field has zero norm".into()))
        }
    };
    Ok(ErrorNorms { l2: rel(NormKind::L2)?, h1: rel(NormKind::H1)?, linf: rel(NormKind::Linf)? })
}

/// Single solve on the whole domain.
pub fn monodomain_solve(
    problem: &ProblemSpec,
    decomp: &Decomposition,
    phi: &BoundaryCondition,
    opts: &SolveOptions,
) -> Result<Field2D> {
    let g = *decomp.global();
    let trace = BoundaryTrace::from_fn(&g, |x, y| phi.eval(x, y));
    Ok(LocalSolver::new(g, *problem).solve(&trace, opts)?.field)
}

/// Schwarz iteration with an exact solve on every patch.
pub fn run_classical(
    problem: &ProblemSpec,
    decomp: &Decomposition,
    phi: &BoundaryCondition,
    config: &SchwarzConfig,
    opts: &SolveOptions,
) -> Result<SchwarzResult> {
    let config = SchwarzConfig { mode: SchwarzMode::Classical, ..*config };
    Driver::new(problem, decomp, None, phi, &config, opts)?.run()
}

/// Schwarz iteration with interior patches mapped by `surrogates`
/// (`config.mode == Surrogate`) or by the exact map through the same code
/// path (`Oracle`). `Classical` is forwarded to [`run_classical`].
pub fn run_nn(
    problem: &ProblemSpec,
    decomp: &Decomposition,
    surrogates: &SurrogateSet,
    phi: &BoundaryCondition,
    config: &SchwarzConfig,
    opts: &SolveOptions,
) -> Result<SchwarzResult> {
    match config.mode {
        SchwarzMode::Classical => run_classical(problem, decomp, phi, config, opts),
        SchwarzMode::Oracle => Driver::new(problem, decomp, None, phi, config, opts)?.run(),
        SchwarzMode::Surrogate => {
            for m in decomp.interior() {
                let s = surrogates
                    .get(&m)
                    .ok_or_else(|| Error::Config(format!("no surrogate for interior patch {m}")))?;
                let (d, p) = (decomp.input_len(m), decomp.output_len(m));
                if s.input_dim() != d || s.output_dim() != p {
                    return Err(Error::Config(format!(
                        "surrogate of patch {m} maps {} -> {}, patch needs {d} -> {p}",
                        s.input_dim(),
                        s.output_dim()
                    )));
                }
            }
            Driver::new(problem, decomp, Some(surrogates), phi, config, opts)?.run()
        }
    }
}

struct Driver<'a> {
    decomp: &'a Decomposition,
    surrogates: Option<&'a SurrogateSet>,
    solvers: Vec<LocalSolver>,
    interior: Vec<bool>,
    phys: Field2D,
    phi: &'a BoundaryCondition,
    config: &'a SchwarzConfig,
    opts: &'a SolveOptions,
}

/// Output of one patch in one sweep, with the time it took.
struct PatchOutput {
    values: Vec<f64>,
    seconds: f64,
    solved: bool,
}

impl<'a> Driver<'a> {
    fn new(
        problem: &ProblemSpec,
        decomp: &'a Decomposition,
        surrogates: Option<&'a SurrogateSet>,
        phi: &'a BoundaryCondition,
        config: &'a SchwarzConfig,
        opts: &'a SolveOptions,
    ) -> Result<Self> {
        config.validate()?;
        opts.validate()?;
        problem.validate()?;
        let mismatch = phi.corner_mismatch();
        if mismatch > CORNER_TOL {
            return Err(Error::Config(format!(
                "boundary data disagree by {mismatch:e} at a corner of the domain"
            )));
        }
        Ok(Self {
            decomp,
            surrogates,
            solvers: decomp.local_solvers(*problem),
            interior: decomp.indices().map(|m| decomp.is_interior(m)).collect(),
            phys: decomp.physical_field(phi),
            phi,
            config,
            opts,
        })
    }

    fn map_patch(&self, k: usize, m: PatchIndex, trace: &BoundaryTrace) -> Result<PatchOutput> {
        let start = Instant::now();
        let d = self.decomp;
        let (values, solved) = match (self.config.mode, self.interior[k]) {
            (SchwarzMode::Surrogate, true) => {
                let s = &self.surrogates.expect("checked by run_nn")[&m];
                (s.apply(&trace.values)?, false)
            }
            (SchwarzMode::Oracle, true) => (d.q_exact(&self.solvers[k], m, trace, self.opts)?, true),
            _ => {
                let sol = self.solvers[k].solve(trace, self.opts)?;
                (d.restrict_all(&sol.field, m)?, true)
            }
        };
        Ok(PatchOutput { values, seconds: start.elapsed().as_secs_f64(), solved })
    }

    fn run(&self) -> Result<SchwarzResult> {
        let t0 = Instant::now();
        let d = self.decomp;
        let indices: Vec<PatchIndex> = d.indices().collect();
        let fill = match self.config.initial_guess {
            InitialGuess::BoundaryMean => d.physical_mean(&self.phys),
            InitialGuess::Constant(c) => c,
        };
        let mut traces: Vec<BoundaryTrace> =
            indices.iter().map(|&m| d.initial_trace(m, &self.phys, fill)).collect();
        let mut times = PhaseTimes::default();
        let mut history = Vec::new();
        let mut trace_history = Vec::new();
        if self.config.record_traces {
            trace_history.push(traces.clone());
        }

        let mut converged = false;
        while history.len() < self.config.max_iter {
            let outputs: Vec<PatchOutput> = indices
                .par_iter()
                .enumerate()
                .map(|(k, &m)| self.map_patch(k, m, &traces[k]))
                .collect::<Result<_>>()?;

            let mut interior_time = 0.0;
            for (k, out) in outputs.iter().enumerate() {
                if out.solved {
                    times.local_solve += out.seconds;
                } else {
                    times.surrogate += out.seconds;
                }
                if self.interior[k] {
                    interior_time += out.seconds;
                }
            }
            times.interior_update.push(interior_time);

            let book = Instant::now();
            let next = indices
                .iter()
                .map(|&m| {
                    let incoming = d
                        .neighbors(m)
                        .into_iter()
                        .map(|l| {
                            let range = d.segment(l, m)?.range.clone();
                            Ok(&outputs[d.position(l)].values[range])
                        })
                        .collect::<Result<Vec<&[f64]>>>()?;
                    d.update_bc(m, &incoming, &self.phys)
                })
                .collect::<Result<Vec<_>>>()?;
            let res = trace_change(&traces, &next);
            traces = next;
            history.push(res);
            if self.config.record_traces {
                trace_history.push(traces.clone());
            }
            times.bookkeeping += book.elapsed().as_secs_f64();
            if !res.is_finite() {
                break;
            }
            if res < self.config.delta0 {
                converged = true;
                break;
            }
        }
        if !converged {
            return Err(Error::SchwarzNonConvergence {
                iterations: history.len(),
                residual: history.last().copied().unwrap_or(f64::NAN),
                history,
            });
        }

        let asm = Instant::now();
        let locals: Vec<Field2D> = indices
            .par_iter()
            .enumerate()
            .map(|(k, _)| Ok(self.solvers[k].solve(&traces[k], self.opts)?.field))
            .collect::<Result<_>>()?;
        let mut global = PartitionOfUnity::new(d).assemble(d, &locals)?;
        global.set_boundary(&BoundaryTrace::from_fn(d.global(), |x, y| self.phi.eval(x, y)))?;
        times.assembly = asm.elapsed().as_secs_f64();
        times.total = t0.elapsed().as_secs_f64();

        Ok(SchwarzResult {
            mode: self.config.mode,
            iterations: history.len(),
            residual_history: history,
            global,
            traces,
            trace_history,
            times,
            errors: None,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::GridSpec;
    use crate::problems::{bc_catalog, Medium, ProblemKind};
    use crate::surrogate::q_linear_matrix;

    fn field(g: GridSpec, vals: &[f64]) -> Field2D {
        Field2D::new(g, vals.to_vec()).unwrap()
    }

    #[test]
    fn errors_of_trivial_pairs() {
        let g = GridSpec::unit_square(0.25).unwrap();
        let r = Field2D::from_fn(g, |x, y| 1.0 + x * x - y);
        let e = compute_errors(&r, &r).unwrap();
        assert_eq!((e.l2, e.h1, e.linf), (0.0, 0.0, 0.0));
        let two = Field2D::new(g, r.values.iter().map(|v| 2.0 * v).collect()).unwrap();
        let e = compute_errors(&two, &r).unwrap();
        for v in [e.l2, e.h1, e.linf] {
            assert!((v - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn errors_on_a_single_cell_by_hand() {
        // 2x2 nodes, dx = 1: reference (1, 2; 3, 4), u off by one at node (1, 0).
        let g = GridSpec::new((0.0, 0.0), (1.0, 1.0), 1.0).unwrap();
        let r = field(g, &[1.0, 2.0, 3.0, 4.0]);
        let u = field(g, &[1.0, 3.0, 3.0, 4.0]);
        let e = compute_errors(&u, &r).unwrap();
        assert!((e.l2 - 1.0 / 30f64.sqrt()).abs() < 1e-15);
        assert!((e.linf - 0.25).abs() < 1e-15);
        // Forward differences at (0, 0) only: diff (1, 0) against ref (1, 2).
        let h1 = f64::sqrt((1.0 + 1.0) / (30.0 + 5.0));
        assert!((e.h1 - h1).abs() < 1e-15, "{} vs {h1}", e.h1);
    }

    fn desk(m: usize) -> Decomposition {
        Decomposition::new(GridSpec::unit_square(1.0 / 32.0).unwrap(), m, m, 1.0 / 16.0, 1.0 / 16.0).unwrap()
    }

    #[test]
    fn single_patch_is_one_direct_solve() {
        let g = GridSpec::unit_square(1.0 / 16.0).unwrap();
        let decomp = Decomposition::new(g, 1, 1, 1.0 / 16.0, 0.0).unwrap();
        let problem = ProblemSpec::semilinear(0.25);
        let phi = bc_catalog(ProblemKind::Semilinear, 1).unwrap();
        let opts = SolveOptions::default();
        let r = run_classical(&problem, &decomp, &phi, &SchwarzConfig::default(), &opts).unwrap();
        assert_eq!(r.iterations, 1);
        assert_eq!(r.residual_history, vec![0.0]);
        let direct = monodomain_solve(&problem, &decomp, &phi, &opts).unwrap();
        assert!(r.global.max_abs_diff(&direct) <= 1e-14);
    }

    #[test]
    fn classical_matches_monodomain_and_pins_the_boundary() {
        let decomp = desk(4);
        let problem = ProblemSpec::semilinear(0.125);
        let phi = bc_catalog(ProblemKind::Semilinear, 1).unwrap();
        let opts = SolveOptions::default();
        let cfg = SchwarzConfig { delta0: 1e-8, record_traces: true, ..Default::default() };
        let mut r = run_classical(&problem, &decomp, &phi, &cfg, &opts).unwrap();
        let reference = monodomain_solve(&problem, &decomp, &phi, &opts).unwrap();
        let e = r.attach_errors(&reference).unwrap();
        assert!(e.l2 < 1e-6, "{e:?}");
        assert_eq!(r.residual_history.len(), r.iterations);
        assert!(*r.residual_history.last().unwrap() < cfg.delta0);

        let g = decomp.global();
        for j in 0..=g.ny {
            for i in 0..=g.nx {
                if g.is_boundary(i, j) {
                    let (x, y) = g.coords(i, j);
                    assert_eq!(r.global.at(i, j), phi.eval(x, y));
                }
            }
        }
        // The stored iterates reproduce the residual history.
        assert_eq!(r.trace_history.len(), r.iterations + 1);
        for (n, w) in r.trace_history.windows(2).enumerate() {
            assert_eq!(trace_change(&w[0], &w[1]), r.residual_history[n]);
        }
        // Every iterate carries the physical data on the domain boundary.
        for (k, p) in decomp.patches().iter().enumerate() {
            let layout = p.grid.trace_layout();
            for e in 0..layout.len() {
                let (i, j) = layout.entry_node(e);
                let (gi, gj) = p.global_node(i, j);
                if g.is_boundary(gi, gj) {
                    let (x, y) = g.coords(gi, gj);
                    for it in &r.trace_history {
                        assert_eq!(it[k].values[e], phi.eval(x, y));
                    }
                }
            }
        }
    }

    #[test]
    fn oracle_reproduces_classical_iterates() {
        let decomp = desk(4);
        let problem = ProblemSpec::semilinear(0.125);
        let phi = bc_catalog(ProblemKind::Semilinear, 2).unwrap();
        let opts = SolveOptions::default();
        let cfg = SchwarzConfig::default();
        let a = run_classical(&problem, &decomp, &phi, &cfg, &opts).unwrap();
        let oracle = SchwarzConfig { mode: SchwarzMode::Oracle, ..cfg };
        let b = run_nn(&problem, &decomp, &SurrogateSet::new(), &phi, &oracle, &opts).unwrap();
        assert_eq!(a.iterations, b.iterations);
        for (x, y) in a.residual_history.iter().zip(&b.residual_history) {
            assert!((x - y).abs() <= 1e-12);
        }
        assert!(a.global.max_abs_diff(&b.global) <= 1e-12);
    }

    #[test]
    fn linear_problem_with_exact_linear_maps_matches_classical() {
        let decomp = desk(4);
        let problem = ProblemSpec::linear(Medium::Semilinear { epsilon: 0.125 });
        let phi = bc_catalog(ProblemKind::Semilinear, 1).unwrap();
        let opts = SolveOptions::default();
        let maps: SurrogateSet = decomp
            .interior()
            .into_iter()
            .map(|m| (m, Surrogate::Linear(q_linear_matrix(&problem, &decomp, m).unwrap())))
            .collect();
        let cfg = SchwarzConfig { mode: SchwarzMode::Surrogate, ..Default::default() };
        let a = run_classical(&problem, &decomp, &phi, &cfg, &opts).unwrap();
        let b = run_nn(&problem, &decomp, &maps, &phi, &cfg, &opts).unwrap();
        assert_eq!(a.iterations, b.iterations);
        for (x, y) in a.residual_history.iter().zip(&b.residual_history) {
            assert!((x - y).abs() <= 1e-9 * x.max(1.0));
        }
        assert!(a.global.max_abs_diff(&b.global) <= 1e-9);
        assert!(b.times.surrogate > 0.0);
    }

    #[test]
    fn surrogate_mode_checks_the_maps() {
        let decomp = desk(4);
        let problem = ProblemSpec::semilinear(0.125);
        let phi = bc_catalog(ProblemKind::Semilinear, 1).unwrap();
        let cfg = SchwarzConfig { mode: SchwarzMode::Surrogate, ..Default::default() };
        let opts = SolveOptions::default();
        let err = run_nn(&problem, &decomp, &SurrogateSet::new(), &phi, &cfg, &opts).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        let wrong: SurrogateSet = decomp
            .interior()
            .into_iter()
            .map(|m| (m, Surrogate::Net(TwoLayerNet::zeros(3, 2, decomp.output_len(m), 0.1))))
            .collect();
        let err = run_nn(&problem, &decomp, &wrong, &phi, &cfg, &opts).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn iteration_cap_reports_history() {
        let decomp = desk(4);
        let problem = ProblemSpec::semilinear(0.125);
        let phi = bc_catalog(ProblemKind::Semilinear, 1).unwrap();
        let cfg = SchwarzConfig { max_iter: 3, delta0: 1e-12, ..Default::default() };
        match run_classical(&problem, &decomp, &phi, &cfg, &SolveOptions::default()) {
            Err(Error::SchwarzNonConvergence { iterations, history, .. }) => {
                assert_eq!(iterations, 3);
                assert_eq!(history.len(), 3);
            }
            other => panic!("expected non-convergence, got {other:?}"),
        }
        assert!(SchwarzConfig { delta0: 0.0, ..cfg }.validate().is_err());
        assert!(SchwarzConfig { max_iter: 0, ..cfg }.validate().is_err());
    }

    #[test]
    fn mode_names_round_trip() {
        for m in [SchwarzMode::Classical, SchwarzMode::Surrogate, SchwarzMode::Oracle] {
            assert_eq!(m.to_string().parse::<SchwarzMode>().unwrap(), m);
        }
        assert!("gauss-seidel".parse::<SchwarzMode>().is_err());
    }
}
