#![allow(dead_code)]

use std::path::Path;

use nn_schwarz_bench::config::ExperimentConfig;

pub const DESK_SEMILINEAR: &str = include_str!("../../../../configs/desk_semilinear.toml");
pub const DESK_PLAPLACE: &str = include_str!("../../../../configs/desk_plaplace.toml");

/// Replaces the value of `key` in the first line that assigns it.
pub fn set_key(text: &str, key: &str, value: &str) -> String {
    let prefix = format!("{key} = ");
    let mut done = false;
    text.lines()
        .map(|l| {
            if !done && l.starts_with(&prefix) {
                done = true;
                format!("{prefix}{value}")
            } else {
                l.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join("\n")
        + "\n"
}

/// Small semilinear profile: dx = 2^-5, 60 samples, 20 epochs.
pub fn tiny_text() -> String {
    let mut t = DESK_SEMILINEAR.to_string();
    for (k, v) in [
        ("name", "\"tiny\""),
        ("dx", "0.03125"),
        ("n", "60"),
        ("epochs", "20"),
        ("eval_every", "5"),
        ("epsilons", "[0.25, 0.125, 0.0625]"),
        ("dxs", "[0.0625, 0.03125]"),
    ] {
        t = set_key(&t, k, v);
    }
    t
}

pub fn tiny(workdir: &Path) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::parse(&tiny_text()).unwrap();
    cfg.paths.workdir = workdir.to_path_buf();
    cfg
}

pub fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let p = dir.join("config.toml");
    std::fs::write(&p, text).unwrap();
    p
}
