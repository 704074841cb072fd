//! End-to-end tests of the `mlmc` binary: exit codes, file layout, and the
//! closed-form levels the discretizer must reproduce.

use std::path::Path;
use std::process::{Command, Output};

use mlmc_cli::config::ExperimentConfig;
use mlmc_core::io;

fn mlmc<I, S>(args: I) -> Output
where
    I: IntoIterator<Item = S>,
    S: AsRef<std::ffi::OsStr>,
{
    Command::new(env!("CARGO_BIN_EXE_mlmc"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8(out.stderr.clone()).unwrap()
}

fn write_config(dir: &Path, text: &str) -> std::path::PathBuf {
    let path = dir.join("config.toml");
    std::fs::write(&path, text).unwrap();
    path
}

#[test]
fn print_config_round_trips() {
    let out = mlmc(["print-config"]);
    assert!(out.status.success(), "{}", stderr(&out));
    let printed = stdout(&out);
    let parsed: ExperimentConfig = toml::from_str(&printed).unwrap();
    assert_eq!(parsed, ExperimentConfig::default().resolved().unwrap());

    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), &printed);
    let again = mlmc(["print-config", "--config", config.to_str().unwrap()]);
    assert!(again.status.success());
    assert_eq!(stdout(&again), printed);
}

#[test]
fn discretize_reproduces_the_two_state_window() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[kernel]\nfamily = \"uniform-window\"\nboundary = \"renormalize-rows\"\n\n\
         [kernel.params]\nw = 1.0\n\n\
         [schedule]\nh_max = \"1\"\nh_min = \"1\"\nd = 1\n",
    );
    let out_dir = dir.path().join("out");
    let out = mlmc([
        "discretize",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let p = io::read_matrix(
        &out_dir.join("matrix_h_1_over_1.csv"),
        &out_dir.join("matrix_h_1_over_1.json"),
    )
    .unwrap();
    assert_eq!(p.n(), 2);
    let ln2 = std::f64::consts::LN_2;
    for (i, j, expected) in
        [(0, 0, ln2), (0, 1, 1.0 - ln2), (1, 0, 1.0 - ln2), (1, 1, ln2)]
    {
        assert!(
            (p.get(i, j) - expected).abs() <= 1e-11,
            "entry ({i},{j}) = {}, expected {expected}",
            p.get(i, j)
        );
    }
}

#[test]
fn discretize_folds_reflected_mass_exactly() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[kernel]\nfamily = \"uniform-window\"\nboundary = \"reflect\"\n\n\
         [kernel.params]\nw = 1.0\n\n\
         [schedule]\nh_max = \"1\"\nh_min = \"1\"\nd = 1\n",
    );
    let out_dir = dir.path().join("out");
    let out = mlmc([
        "discretize",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let p = io::read_matrix(
        &out_dir.join("matrix_h_1_over_1.csv"),
        &out_dir.join("matrix_h_1_over_1.json"),
    )
    .unwrap();
    for (i, j, expected) in [(0, 0, 0.75), (0, 1, 0.25), (1, 0, 0.25), (1, 1, 0.75)] {
        assert!(
            (p.get(i, j) - expected).abs() <= 1e-11,
            "entry ({i},{j}) = {}, expected {expected}",
            p.get(i, j)
        );
    }
}

#[test]
fn discretize_rejects_non_dyadic_widths() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[schedule]\nh_max = \"1/2\"\nh_min = \"1/3\"\nd = 1\n",
    );
    let out = mlmc(["discretize", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("schedule.h_min"), "{}", stderr(&out));
}

#[test]
fn discretize_writes_the_two_dimensional_header() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(
        dir.path(),
        "[schedule]\nh_max = \"1/8\"\nh_min = \"1/8\"\nd = 2\n",
    );
    let out_dir = dir.path().join("out");
    let out = mlmc([
        "discretize",
        "--config",
        config.to_str().unwrap(),
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let header: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("matrix_h_1_over_8.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(header["n_states"], 256);
    assert_eq!(header["partition"]["d"], 2);
    assert_eq!(header["partition"]["h_den"], 8);
}

#[test]
fn pipeline_writes_reports_and_omits_classical_columns() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = mlmc(["pipeline", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    for name in ["report.json", "levels.csv", "cost_check.json"] {
        assert!(out_dir.join(name).is_file(), "missing {name}");
    }
    let csv = std::fs::read_to_string(out_dir.join("levels.csv")).unwrap();
    let header = csv.lines().next().unwrap();
    assert_eq!(header, "h,n_states,m,s,tau,delta_eig,q,walk_steps,C");
    assert_eq!(csv.lines().count(), 5);
}

#[test]
fn pipeline_stops_at_the_state_cap() {
    let dir = tempfile::tempdir().unwrap();
    let out = mlmc([
        "pipeline",
        "--cap",
        "8",
        "--out",
        dir.path().join("out").to_str().unwrap(),
    ]);
    assert_eq!(out.status.code(), Some(3), "{}", stderr(&out));
    assert!(stderr(&out).contains("capacity"), "{}", stderr(&out));
}

#[test]
fn unknown_config_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let config = write_config(dir.path(), "bogus = 1\n");
    let out = mlmc(["pipeline", "--config", config.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    assert!(stderr(&out).contains("bogus"), "{}", stderr(&out));
}

#[test]
fn walk_check_traces_the_reversibilized_chain() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = mlmc([
        "walk-check",
        "--steps",
        "12",
        "--out",
        out_dir.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("walk_check.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report["reversibilized"], true);
    assert_eq!(report["spectrum"]["pass"], true);

    let trace = std::fs::read_to_string(out_dir.join("overlap_trace.csv")).unwrap();
    assert_eq!(trace.lines().next().unwrap(), "step,overlap,self_overlap");
    assert_eq!(trace.lines().count(), 14);
}

#[test]
fn verify_suite_reports_each_check() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = dir.path().join("out");
    let out = mlmc(["verify", "lemma2", "--out", out_dir.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("PASS")).count(), 2);

    let report: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("verify_lemma2.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report.as_array().unwrap().len(), 2);
}
