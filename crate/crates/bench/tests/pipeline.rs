mod common;

use std::fs;

use common::{set_key, tiny, tiny_text};
use nn_schwarz::decomposition::PatchIndex;
use nn_schwarz::surrogate::{init_from_svd, q_linear_matrix};
use nn_schwarz_bench::commands::{
    cmd_gen_data, cmd_report, cmd_solve, cmd_spectrum, cmd_train, dataset_rel, model_rel, SolveFilter,
    ERRORS_CSV,
};
use nn_schwarz_bench::config::{ExperimentConfig, ModeName};
use nn_schwarz_bench::formats::{load_dataset, load_field, load_model};
use nn_schwarz_bench::manifest::RunManifest;
use nn_schwarz_bench::BenchError;

fn csv_rows(text: &str) -> Vec<Vec<String>> {
    text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect()
}

#[test]
fn full_pipeline_declares_and_checks_its_files() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    let w = dir.path();

    assert!(matches!(cmd_train(&cfg), Err(BenchError::Dependency(_))));

    let gen = cmd_gen_data(&cfg).unwrap();
    assert_eq!(gen.files.len(), 4);
    let decomp = cfg.decomposition().unwrap();
    for m in decomp.interior() {
        let set = load_dataset(&w.join(dataset_rel(m))).unwrap();
        assert_eq!((set.patch, set.len()), (m, 60));
    }

    let tr = cmd_train(&cfg).unwrap();
    for m in decomp.interior() {
        let (net, info) = load_model(&w.join(model_rel(m))).unwrap();
        assert_eq!(net.hidden_dim(), 2 * info.rank);
        assert!(tr.notes.contains_key(&format!("{m}.final_test_loss")));
    }

    let summary = cmd_solve(&cfg, &SolveFilter::default()).unwrap();
    assert_eq!(summary.rows.len(), 4 * 3);
    for bc in 1..=3 {
        let row = |label: &str| summary.rows.iter().find(|r| r.method == label && r.bc == bc).unwrap();
        let (c, o) = (row("Classical"), row("Oracle"));
        assert_eq!(c.iters, o.iters);
        assert!((c.h1 - o.h1).abs() <= 1e-10 * c.h1.max(1e-300), "BC {bc}: {} vs {}", c.h1, o.h1);
        let reference = load_field(&w.join(format!("results/reference_bc{bc}.field"))).unwrap();
        let classical = load_field(&w.join(format!("results/classical_bc{bc}.field"))).unwrap();
        assert_eq!(reference.grid, classical.grid);
    }
    let table = csv_rows(&fs::read_to_string(w.join(ERRORS_CSV)).unwrap());
    assert_eq!(table.len(), 12);

    // Every declared file exists with its recorded size.
    let manifest = RunManifest::load_or_default(w).unwrap();
    for stage in ["gen-data", "train", "solve"] {
        manifest.require_stage(w, stage).unwrap();
    }
    assert_eq!(manifest.problem, "semilinear");

    // Rerunning one mode replaces its rows and keeps the others.
    let filter = SolveFilter { modes: Some(vec![ModeName::Classical]), bcs: Some(vec![2]) };
    cmd_solve(&cfg, &filter).unwrap();
    let again = csv_rows(&fs::read_to_string(w.join(ERRORS_CSV)).unwrap());
    assert_eq!(again.len(), 12);

    let report = cmd_report(w).unwrap();
    assert_eq!(report.error_rows.len(), 12);
    let keys: Vec<(usize, String)> =
        report.error_rows.iter().map(|r| (r.fields[1].parse().unwrap(), r.fields[0].clone())).collect();
    let mut sorted = keys.clone();
    sorted.sort();
    assert_eq!(keys, sorted);
    assert!(fs::read_to_string(w.join("report/tables.txt")).unwrap().contains("SVD-NN"));
}

#[test]
fn gen_data_and_train_are_byte_reproducible() {
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    for d in [&a, &b] {
        let cfg = tiny(d.path());
        cmd_gen_data(&cfg).unwrap();
        cmd_train(&cfg).unwrap();
    }
    let m = PatchIndex::new(2, 3);
    for rel in [dataset_rel(m), model_rel(m)] {
        assert_eq!(fs::read(a.path().join(&rel)).unwrap(), fs::read(b.path().join(&rel)).unwrap(), "{rel}");
    }
}

#[test]
fn zero_epochs_store_the_initialization() {
    let dir = tempfile::tempdir().unwrap();
    let text = set_key(&tiny_text(), "epochs", "0");
    let mut cfg = ExperimentConfig::parse(&text).unwrap();
    cfg.paths.workdir = dir.path().to_path_buf();
    cmd_gen_data(&cfg).unwrap();
    cmd_train(&cfg).unwrap();
    let decomp = cfg.decomposition().unwrap();
    let m = PatchIndex::new(2, 2);
    let (net, _) = load_model(&dir.path().join(model_rel(m))).unwrap();
    let svd = q_linear_matrix(&cfg.problem(), &decomp, m).unwrap().truncate(cfg.surrogate.delta1).unwrap();
    let init = init_from_svd(&svd, decomp.global().dx).with_normalization(cfg.normalize());
    assert_eq!(net.flatten(), init.flatten());
}

#[test]
fn spectrum_files_start_at_one_and_decrease() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = tiny(dir.path());
    cmd_spectrum(&cfg).unwrap();
    let spec_dir = dir.path().join("spectrum");
    let eps_files = fs::read_dir(&spec_dir)
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("spectrum_eps_"))
        .count();
    assert_eq!(eps_files, 3);
    for e in fs::read_dir(&spec_dir).unwrap() {
        let path = e.unwrap().path();
        let name = path.file_name().unwrap().to_string_lossy().to_string();
        if !name.starts_with("spectrum_") {
            continue;
        }
        let values: Vec<f64> =
            csv_rows(&fs::read_to_string(&path).unwrap()).iter().map(|r| r[1].parse().unwrap()).collect();
        assert_eq!(values[0], 1.0, "{name}");
        assert!(values.windows(2).all(|w| w[1] <= w[0]), "{name}");
    }
}

#[test]
fn report_on_empty_workdir_is_empty() {
    let dir = tempfile::tempdir().unwrap();
    let s = cmd_report(dir.path()).unwrap();
    assert!(s.error_rows.is_empty());
    assert!(fs::read_to_string(dir.path().join("report/tables.txt")).unwrap().contains("no results"));
}

#[test]
fn eight_by_eight_has_thirty_six_interior_patches() {
    let text = common::DESK_PLAPLACE.replace("m1 = 4", "m1 = 8").replace("m2 = 4", "m2 = 8");
    let text = set_key(&set_key(&text, "dx_o", "0.03125"), "dx_b", "0.03125");
    let cfg = ExperimentConfig::parse(&text).unwrap();
    assert_eq!(cfg.decomposition().unwrap().interior().len(), 36);
}
