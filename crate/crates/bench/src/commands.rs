//! Experiment stages: gen-data, train, solve, spectrum, report.
//!
//! Every stage takes the work-directory lock, records the files it wrote in
//! the manifest and reads only files recorded by earlier stages.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use nn_schwarz::decomposition::{Decomposition, PatchIndex};
use nn_schwarz::problems::bc_catalog;
use nn_schwarz::sampling::{gen_dataset, split_dataset};
use nn_schwarz::schwarz::{
    monodomain_solve, run_classical, run_nn, SchwarzConfig, SchwarzMode, SchwarzResult, Surrogate,
    SurrogateSet,
};
use nn_schwarz::surrogate::{init_from_svd, q_linear_matrix, svd_spectrum, train, LossSpec, TwoLayerNet};
use rayon::prelude::*;

use crate::config::{ExperimentConfig, InitName, ModeName};
use crate::error::{BenchError, BenchResult};
use crate::formats::{
    load_dataset, load_model, loss_csv, residual_csv, save_dataset, save_field, save_model, spectrum_csv,
    write_file, ModelInfo, Provenance,
};
use crate::manifest::{file_record, RunManifest, StageRecord, WorkdirLock};

pub const STAGE_GEN_DATA: &str = "gen-data";
pub const STAGE_TRAIN: &str = "train";
pub const STAGE_SOLVE: &str = "solve";
pub const STAGE_SPECTRUM: &str = "spectrum";
pub const STAGE_REPORT: &str = "report";

pub const ERRORS_CSV: &str = "results/errors.csv";
pub const TIMINGS_CSV: &str = "results/timings.csv";
const ERRORS_HEADER: &str = "method,bc,L2,H1,Linf,iters,seconds";
const TIMINGS_HEADER: &str =
    "method,bc,iters,total,local_solve,surrogate,bookkeeping,assembly,mean_interior_update,newton_tol,pgd_tol";

pub fn dataset_rel(m: PatchIndex) -> String {
    format!("data/dataset_{m}.bin")
}

pub fn model_rel(m: PatchIndex) -> String {
    format!("models/model_{m}.bin")
}

pub fn curve_rel(m: PatchIndex) -> String {
    format!("curves/loss_{m}.csv")
}

/// Manifest and lock of one stage run.
struct Stage<'a> {
    cfg: &'a ExperimentConfig,
    workdir: PathBuf,
    manifest: RunManifest,
    record: StageRecord,
    start: Instant,
    _lock: WorkdirLock,
}

impl<'a> Stage<'a> {
    fn begin(cfg: &'a ExperimentConfig) -> BenchResult<Self> {
        let workdir = cfg.workdir().to_path_buf();
        let lock = WorkdirLock::acquire(&workdir)?;
        let manifest = RunManifest::load_or_default(&workdir)?;
        Ok(Self {
            cfg,
            workdir,
            manifest,
            record: StageRecord { config_hash: cfg.hash(), ..Default::default() },
            start: Instant::now(),
            _lock: lock,
        })
    }

    fn write(&mut self, rel: &str, bytes: &[u8]) -> BenchResult<()> {
        write_file(&self.workdir.join(rel), bytes)?;
        self.declare(rel)
    }

    fn declare(&mut self, rel: &str) -> BenchResult<()> {
        let rec = file_record(&self.workdir, rel)?;
        self.record.files.retain(|f| f.path != rel);
        self.record.files.push(rec);
        Ok(())
    }

    fn finish(mut self, name: &str) -> BenchResult<StageRecord> {
        self.record.seconds = self.start.elapsed().as_secs_f64();
        self.record.files.sort_by(|a, b| a.path.cmp(&b.path));
        let m = &mut self.manifest;
        m.config_name = self.cfg.name.clone();
        m.config_hash = self.cfg.hash();
        m.problem = self.cfg.kind().to_string();
        m.versions.insert("nn-schwarz-bench".into(), env!("CARGO_PKG_VERSION").into());
        m.stages.insert(name.to_string(), self.record.clone());
        m.save(&self.workdir)?;
        Ok(self.record)
    }
}

fn data_provenance(cfg: &ExperimentConfig) -> Provenance {
    let mut p = BTreeMap::new();
    p.insert("problem".into(), cfg.kind().to_string());
    p.insert("epsilon".into(), format!("{:?}", cfg.problem.epsilon));
    p.insert("p_exponent".into(), format!("{:?}", cfg.problem.p));
    p.insert("dx".into(), format!("{:?}", cfg.grid.dx));
    p.insert("m1".into(), cfg.decomposition.m1.to_string());
    p.insert("m2".into(), cfg.decomposition.m2.to_string());
    p.insert("dx_o".into(), format!("{:?}", cfg.decomposition.dx_o));
    p.insert("dx_b".into(), format!("{:?}", cfg.decomposition.dx_b));
    p.insert("newton_tol".into(), format!("{:?}", cfg.solver.newton_tol));
    p.insert("pgd_tol".into(), format!("{:?}", cfg.solver.pgd_tol));
    Provenance(p)
}

/// One dataset file per interior patch.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> BenchResult<StageRecord> {
    let mut stage = Stage::begin(cfg)?;
    let decomp = cfg.decomposition()?;
    let problem = cfg.problem();
    let (law, opts) = (cfg.law(), cfg.solve_options());
    let provenance = data_provenance(cfg);
    for m in decomp.interior() {
        let t = Instant::now();
        let set = gen_dataset(&problem, &decomp, m, cfg.sampling.n, &law, &opts, cfg.surrogate.buffered)?;
        let rel = dataset_rel(m);
        save_dataset(&stage.workdir.join(&rel), &set, &provenance)?;
        stage.declare(&rel)?;
        stage.record.notes.insert(format!("{m}.skipped"), set.skipped.to_string());
        log::info!("patch {m}: {} samples in {:.1}s", set.len(), t.elapsed().as_secs_f64());
    }
    stage.finish(STAGE_GEN_DATA)
}

/// Trained net of one patch, with its loss history.
pub struct TrainedPatch {
    pub patch: PatchIndex,
    pub net: TwoLayerNet,
    pub info: ModelInfo,
    pub report: nn_schwarz::surrogate::TrainReport,
}

/// Initializes and trains the net of `m` on `set` as configured.
pub fn train_patch(
    cfg: &ExperimentConfig,
    decomp: &Decomposition,
    m: PatchIndex,
    set: &nn_schwarz::sampling::TrainingSet,
) -> BenchResult<TrainedPatch> {
    let (train_set, test_set) = split_dataset(set, cfg.sampling.test_fraction, cfg.sampling.seed)?;
    let svd = q_linear_matrix(&cfg.problem(), decomp, m)?.truncate(cfg.surrogate.delta1)?;
    let seed = cfg.surrogate.seed.wrapping_add(decomp.position(m) as u64);
    let dx = decomp.global().dx;
    let net = match cfg.surrogate.init {
        InitName::Svd => init_from_svd(&svd, dx),
        InitName::Random => TwoLayerNet::random(svd.v.nrows(), 2 * svd.rank(), svd.u.nrows(), dx, seed),
    };
    let mut net = net.with_normalization(cfg.normalize());
    let spec = LossSpec::for_patch(decomp, m, cfg.surrogate.mu);
    let tc = nn_schwarz::surrogate::TrainConfig { seed, ..cfg.train_config() };
    let report = train(&mut net, &train_set, &test_set, &spec, &tc)?;
    let info = ModelInfo {
        patch: m,
        init: match cfg.surrogate.init {
            InitName::Svd => "svd".into(),
            InitName::Random => "random".into(),
        },
        rank: svd.rank(),
        delta1: cfg.surrogate.delta1,
        buffered: set.buffered,
        train_seed: seed,
        epochs: tc.epochs,
    };
    Ok(TrainedPatch { patch: m, net, info, report })
}

/// One model file and one loss curve per interior patch.
pub fn cmd_train(cfg: &ExperimentConfig) -> BenchResult<StageRecord> {
    let mut stage = Stage::begin(cfg)?;
    let decomp = cfg.decomposition()?;
    let interior = decomp.interior();
    let paths = interior
        .iter()
        .map(|&m| stage.manifest.require_file(&stage.workdir, STAGE_GEN_DATA, &dataset_rel(m)))
        .collect::<BenchResult<Vec<_>>>()?;
    let trained = interior
        .par_iter()
        .zip(&paths)
        .map(|(&m, path)| {
            let set = load_dataset(path)?;
            if set.patch != m || set.d != decomp.input_len(m) || set.p != decomp.output_len(m) {
                return Err(BenchError::Dependency(format!(
                    "{} does not match patch {m} of this decomposition",
                    path.display()
                )));
            }
            train_patch(cfg, &decomp, m, &set)
        })
        .collect::<BenchResult<Vec<_>>>()?;
    for t in trained {
        let rel = model_rel(t.patch);
        save_model(&stage.workdir.join(&rel), &t.net, &t.info)?;
        stage.declare(&rel)?;
        stage.write(&curve_rel(t.patch), loss_csv(&t.report, cfg.surrogate.lr).as_bytes())?;
        let notes = &mut stage.record.notes;
        let m = t.patch;
        notes.insert(format!("{m}.rank"), t.info.rank.to_string());
        notes.insert(format!("{m}.initial_train_loss"), format!("{:e}", t.report.initial_train_loss));
        notes.insert(format!("{m}.final_train_loss"), format!("{:e}", t.report.final_train_loss()));
        if let Some(v) = t.report.final_test_loss() {
            notes.insert(format!("{m}.final_test_loss"), format!("{v:e}"));
        }
    }
    stage.finish(STAGE_TRAIN)
}

/// Restricts `solve` to some modes or boundary conditions.
#[derive(Debug, Clone, Default)]
pub struct SolveFilter {
    pub modes: Option<Vec<ModeName>>,
    pub bcs: Option<Vec<usize>>,
}

/// One row of the error table.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRow {
    pub method: String,
    pub bc: usize,
    pub l2: f64,
    pub h1: f64,
    pub linf: f64,
    pub iters: usize,
    pub seconds: f64,
}

impl ErrorRow {
    fn csv(&self) -> String {
        format!(
            "{},{},{:e},{:e},{:e},{},{:.6}",
            self.method, self.bc, self.l2, self.h1, self.linf, self.iters, self.seconds
        )
    }
}

#[derive(Debug, Clone, Default)]
pub struct SolveSummary {
    pub rows: Vec<ErrorRow>,
    pub results: Vec<(ModeName, usize, SchwarzResult)>,
}

pub fn mode_label(cfg: &ExperimentConfig, mode: ModeName) -> String {
    match mode {
        ModeName::Classical => "Classical".into(),
        ModeName::Surrogate => cfg.surrogate_label(),
        ModeName::Oracle => "Oracle".into(),
        ModeName::Linear => "Linear".into(),
    }
}

fn mode_slug(mode: ModeName) -> &'static str {
    match mode {
        ModeName::Classical => "classical",
        ModeName::Surrogate => "surrogate",
        ModeName::Oracle => "oracle",
        ModeName::Linear => "linear",
    }
}

/// Replaces rows keyed by `(method, bc)` in a CSV table and rewrites it
/// sorted by `(bc, method)`.
fn merge_rows(path: &Path, header: &str, rows: &[String]) -> BenchResult<()> {
    let key = |line: &str| {
        let mut it = line.split(',');
        let method = it.next().unwrap_or("").to_string();
        let bc: usize = it.next().and_then(|b| b.parse().ok()).unwrap_or(0);
        (bc, method)
    };
    let mut table: BTreeMap<(usize, String), String> = BTreeMap::new();
    if let Ok(text) = fs::read_to_string(path) {
        for line in text.lines().skip(1).filter(|l| !l.is_empty()) {
            table.insert(key(line), line.to_string());
        }
    }
    for r in rows {
        table.insert(key(r), r.clone());
    }
    let mut out = format!("{header}\n");
    for line in table.values() {
        out.push_str(line);
        out.push('\n');
    }
    write_file(path, out.as_bytes())
}

/// Runs the configured Schwarz variants for every configured boundary
/// condition and compares each against the monodomain solve.
pub fn cmd_solve(cfg: &ExperimentConfig, filter: &SolveFilter) -> BenchResult<SolveSummary> {
    let mut stage = Stage::begin(cfg)?;
    let decomp = cfg.decomposition()?;
    let problem = cfg.problem();
    let modes: Vec<ModeName> = {
        let set: BTreeSet<ModeName> =
            filter.modes.clone().unwrap_or_else(|| cfg.schwarz.modes.clone()).into_iter().collect();
        set.into_iter().collect()
    };
    let bcs: Vec<usize> = filter.bcs.clone().unwrap_or_else(|| cfg.schwarz.bcs.clone());
    let phis = bcs.iter().map(|&bc| bc_catalog(cfg.kind(), bc)).collect::<nn_schwarz::Result<Vec<_>>>()?;

    let mut nets = SurrogateSet::new();
    if modes.contains(&ModeName::Surrogate) {
        for m in decomp.interior() {
            let path = stage.manifest.require_file(&stage.workdir, STAGE_TRAIN, &model_rel(m))?;
            let (net, info) = load_model(&path)?;
            if info.patch != m {
                return Err(BenchError::Dependency(format!(
                    "{} belongs to patch {}",
                    path.display(),
                    info.patch
                )));
            }
            nets.insert(m, Surrogate::Net(net));
        }
    }
    let mut linear = SurrogateSet::new();
    if modes.contains(&ModeName::Linear) {
        for m in decomp.interior() {
            linear.insert(m, Surrogate::Linear(q_linear_matrix(&problem, &decomp, m)?));
        }
    }

    let opts = cfg.solve_options();
    let classical_opts = cfg.classical_options();
    let base = cfg.schwarz_config();
    let mut summary = SolveSummary::default();
    let (mut error_lines, mut timing_lines) = (Vec::new(), Vec::new());
    let mut failures = Vec::new();
    for (&bc, phi) in bcs.iter().zip(&phis) {
        let reference = monodomain_solve(&problem, &decomp, phi, &opts)?;
        stage.write_field(&format!("results/reference_bc{bc}.field"), &reference)?;
        for &mode in &modes {
            let label = mode_label(cfg, mode);
            let run_opts = if mode == ModeName::Classical { classical_opts } else { opts };
            let outcome = match mode {
                ModeName::Classical => run_classical(&problem, &decomp, phi, &base, &run_opts),
                ModeName::Oracle => {
                    let c = SchwarzConfig { mode: SchwarzMode::Oracle, ..base };
                    run_nn(&problem, &decomp, &SurrogateSet::new(), phi, &c, &run_opts)
                }
                ModeName::Surrogate | ModeName::Linear => {
                    let c = SchwarzConfig { mode: SchwarzMode::Surrogate, ..base };
                    let maps = if mode == ModeName::Surrogate { &nets } else { &linear };
                    run_nn(&problem, &decomp, maps, phi, &c, &run_opts)
                }
            };
            let slug = mode_slug(mode);
            let mut result = match outcome {
                Ok(r) => r,
                Err(nn_schwarz::Error::SchwarzNonConvergence { iterations, residual, history }) => {
                    log::error!(
                        "{label}, BC {bc}: no convergence after {iterations} iterations (res {residual:e})"
                    );
                    stage.write(
                        &format!("results/residual_{slug}_bc{bc}.csv"),
                        residual_csv(&history).as_bytes(),
                    )?;
                    failures.push(format!("{label} BC {bc}"));
                    continue;
                }
                Err(e) => return Err(e.into()),
            };
            let e = result.attach_errors(&reference)?;
            stage.write(
                &format!("results/residual_{slug}_bc{bc}.csv"),
                residual_csv(&result.residual_history).as_bytes(),
            )?;
            stage.write_field(&format!("results/{slug}_bc{bc}.field"), &result.global)?;
            let row = ErrorRow {
                method: label.clone(),
                bc,
                l2: e.l2,
                h1: e.h1,
                linf: e.linf,
                iters: result.iterations,
                seconds: result.times.total,
            };
            log::info!("{label}, BC {bc}: {} iterations, H1 error {:e}", row.iters, row.h1);
            error_lines.push(row.csv());
            let t = &result.times;
            timing_lines.push(format!(
                "{label},{bc},{},{:.6},{:.6},{:.6},{:.6},{:.6},{:e},{:e},{:e}",
                result.iterations,
                t.total,
                t.local_solve,
                t.surrogate,
                t.bookkeeping,
                t.assembly,
                t.mean_interior_update(),
                run_opts.newton_tol,
                run_opts.pgd_tol
            ));
            summary.rows.push(row);
            summary.results.push((mode, bc, result));
        }
    }
    merge_rows(&stage.workdir.join(ERRORS_CSV), ERRORS_HEADER, &error_lines)?;
    stage.declare(ERRORS_CSV)?;
    merge_rows(&stage.workdir.join(TIMINGS_CSV), TIMINGS_HEADER, &timing_lines)?;
    stage.declare(TIMINGS_CSV)?;
    stage
        .record
        .notes
        .insert("classical_relaxation".into(), format!("{:?}", cfg.solver.classical_relaxation));
    stage.finish(STAGE_SOLVE)?;
    if !failures.is_empty() {
        return Err(BenchError::NonConvergence(failures.join(", ")));
    }
    Ok(summary)
}

impl Stage<'_> {
    fn write_field(&mut self, rel: &str, field: &nn_schwarz::grid::Field2D) -> BenchResult<()> {
        save_field(&self.workdir.join(rel), field)?;
        self.declare(rel)
    }
}

/// 1-based index of the first relative singular value below `delta1`, or
/// `len + 1` if none is.
pub fn first_below(sigma_rel: &[f64], delta1: f64) -> usize {
    sigma_rel.iter().position(|&s| s < delta1).unwrap_or(sigma_rel.len()) + 1
}

/// Relative spectra of the linearized map over the configured sweeps.
pub fn cmd_spectrum(cfg: &ExperimentConfig) -> BenchResult<StageRecord> {
    let mut stage = Stage::begin(cfg)?;
    let m = cfg.spectrum_patch();
    let mut ranks = String::from("sweep,value,len,first_below_delta1\n");
    let mut run = |stage: &mut Stage,
                   sweep: &str,
                   value: f64,
                   problem,
                   decomp: &Decomposition|
     -> BenchResult<()> {
        if !decomp.is_valid(m) || !decomp.is_interior(m) {
            return Err(BenchError::Config(format!("spectrum.patch {m} is not an interior patch")));
        }
        let s = svd_spectrum(&problem, decomp, m)?;
        stage.write(&format!("spectrum/spectrum_{sweep}_{value}.csv"), spectrum_csv(&s).as_bytes())?;
        ranks.push_str(&format!("{sweep},{value},{},{}\n", s.len(), first_below(&s, cfg.surrogate.delta1)));
        Ok(())
    };
    if cfg.medium_has_scale() {
        let decomp = cfg.decomposition()?;
        for &eps in &cfg.spectrum.epsilons {
            run(&mut stage, "eps", eps, cfg.problem_with_epsilon(eps), &decomp)?;
        }
    } else if !cfg.spectrum.epsilons.is_empty() {
        log::warn!("the {} medium has no scale parameter; epsilon sweep skipped", cfg.kind());
    }
    for &dx in &cfg.spectrum.dxs {
        run(&mut stage, "dx", dx, cfg.problem(), &cfg.decomposition_at(dx)?)?;
    }
    stage.write("spectrum/ranks.csv", ranks.as_bytes())?;
    stage.finish(STAGE_SPECTRUM)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub problem: String,
    pub fields: Vec<String>,
}

#[derive(Debug, Clone, Default)]
pub struct ReportSummary {
    pub error_rows: Vec<ReportRow>,
    pub timing_rows: Vec<ReportRow>,
    pub written: Vec<PathBuf>,
}

/// Result directories: `workdir` itself and its immediate subdirectories.
fn result_dirs(workdir: &Path) -> Vec<PathBuf> {
    let mut dirs = vec![workdir.to_path_buf()];
    if let Ok(entries) = fs::read_dir(workdir) {
        let mut subs: Vec<PathBuf> =
            entries.filter_map(|e| e.ok()).map(|e| e.path()).filter(|p| p.is_dir()).collect();
        subs.sort();
        dirs.extend(subs);
    }
    dirs.into_iter().filter(|d| d.join(ERRORS_CSV).is_file()).collect()
}

fn read_rows(path: &Path, problem: &str) -> Vec<ReportRow> {
    fs::read_to_string(path)
        .map(|text| {
            text.lines()
                .skip(1)
                .filter(|l| !l.is_empty())
                .map(|l| ReportRow {
                    problem: problem.to_string(),
                    fields: l.split(',').map(String::from).collect(),
                })
                .collect()
        })
        .unwrap_or_default()
}

fn sort_rows(rows: &mut [ReportRow]) {
    rows.sort_by(|a, b| {
        let bc = |r: &ReportRow| r.fields.get(1).and_then(|v| v.parse::<usize>().ok()).unwrap_or(0);
        (a.problem.as_str(), bc(a), a.fields.first()).cmp(&(b.problem.as_str(), bc(b), b.fields.first()))
    });
}

/// Merges the result tables under `workdir` into `workdir/report`.
pub fn cmd_report(workdir: &Path) -> BenchResult<ReportSummary> {
    let _lock = WorkdirLock::acquire(workdir)?;
    let mut summary = ReportSummary::default();
    for dir in result_dirs(workdir) {
        let problem = RunManifest::load_or_default(&dir)?.problem;
        let problem = if problem.is_empty() { dir.display().to_string() } else { problem };
        summary.error_rows.extend(read_rows(&dir.join(ERRORS_CSV), &problem));
        summary.timing_rows.extend(read_rows(&dir.join(TIMINGS_CSV), &problem));
    }
    if summary.error_rows.is_empty() {
        log::warn!("no result tables under {}; the report is empty", workdir.display());
    }
    sort_rows(&mut summary.error_rows);
    sort_rows(&mut summary.timing_rows);

    let csv = |header: &str, rows: &[ReportRow]| {
        let mut s = format!("problem,{header}\n");
        for r in rows {
            s.push_str(&format!("{},{}\n", r.problem, r.fields.join(",")));
        }
        s
    };
    let out = workdir.join("report");
    for (name, text) in [
        ("errors.csv", csv(ERRORS_HEADER, &summary.error_rows)),
        ("timings.csv", csv(TIMINGS_HEADER, &summary.timing_rows)),
        ("tables.txt", text_tables(&summary)),
    ] {
        let path = out.join(name);
        write_file(&path, text.as_bytes())?;
        summary.written.push(path);
    }
    Ok(summary)
}

/// Relative errors per method and boundary condition, then iterations, time
/// and H1 error of each method.
fn text_tables(s: &ReportSummary) -> String {
    let mut out = String::new();
    if s.error_rows.is_empty() {
        out.push_str("no results\n");
        return out;
    }
    let problems: BTreeSet<&str> = s.error_rows.iter().map(|r| r.problem.as_str()).collect();
    for p in problems {
        out.push_str(&format!("== {p}: relative errors ==\n"));
        out.push_str(&format!(
            "{:<26}{:>4}{:>12}{:>12}{:>12}{:>7}{:>11}\n",
            "method", "bc", "L2", "H1", "Linf", "iters", "seconds"
        ));
        for r in s.error_rows.iter().filter(|r| r.problem == p) {
            let f = |i: usize| r.fields.get(i).map(String::as_str).unwrap_or("");
            let num = |i: usize| {
                f(i).parse::<f64>().map(|v| format!("{v:.4e}")).unwrap_or_else(|_| f(i).to_string())
            };
            out.push_str(&format!(
                "{:<26}{:>4}{:>12}{:>12}{:>12}{:>7}{:>11}\n",
                f(0),
                f(1),
                num(2),
                num(3),
                num(4),
                f(5),
                f(6)
            ));
        }
        out.push('\n');
    }
    out
}
