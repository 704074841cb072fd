//! Acceptance gate: runs every verification check once, prints one pass/fail
//! line per check, and fails if any check fails. The worker-count check runs
//! the real binary twice with different MLMC_THREADS settings.

use std::process::{Command, Stdio};
use std::time::Instant;

use mlmc_core::checks::{self, CheckOutcome};

fn process_level_worker_invariance() -> CheckOutcome {
    let start = Instant::now();
    let (pass, detail) = match pipeline_outputs_across_workers() {
        Ok(r) => r,
        Err(e) => (false, format!("error: {e}")),
    };
    CheckOutcome {
        id: 12,
        name: "pipeline_outputs_are_worker_count_invariant".into(),
        pass,
        detail,
        seconds: start.elapsed().as_secs_f64(),
        budget_seconds: None,
    }
}

fn pipeline_outputs_across_workers() -> Result<(bool, String), String> {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let config = dir.path().join("config.toml");
    std::fs::write(&config, "mode = \"classical-emulation\"\n").map_err(|e| e.to_string())?;

    let outputs = ["w1", "w4"].map(|name| dir.path().join(name));
    for (threads, out) in ["1", "4"].iter().zip(&outputs) {
        let status = Command::new(env!("CARGO_BIN_EXE_mlmc"))
            .arg("pipeline")
            .arg("--config")
            .arg(&config)
            .arg("--out")
            .arg(out)
            .env("MLMC_THREADS", threads)
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .status()
            .map_err(|e| e.to_string())?;
        if !status.success() {
            return Err(format!("pipeline exited with {status}"));
        }
    }

    let mut identical = true;
    for name in ["report.json", "levels.csv", "cost_check.json"] {
        let a = std::fs::read(outputs[0].join(name)).map_err(|e| e.to_string())?;
        let b = std::fs::read(outputs[1].join(name)).map_err(|e| e.to_string())?;
        identical &= a == b;
    }
    Ok((
        identical,
        format!(
            "report.json, levels.csv, cost_check.json byte-identical across \
             MLMC_THREADS=1 and 4: {identical}"
        ),
    ))
}

#[test]
fn acceptance() {
    let outcomes = vec![
        checks::aggregation_interpolation_identities(),
        checks::coarsening_matches_direct_discretization(),
        checks::interpolation_error_linear_in_h(),
        checks::contraction_coefficient_closed_form(),
        checks::contraction_stable_across_levels(),
        checks::lift_rows_are_stochastic(),
        checks::stationary_perturbation_bound(),
        checks::warm_start_overlap_scaling(),
        checks::walk_spectrum_correspondence(),
        checks::geometric_total_cost_bound(),
        checks::warm_start_payoff(),
        process_level_worker_invariance(),
    ];

    let mut failed = Vec::new();
    for o in &outcomes {
        println!(
            "{} {:2} {} ({:.2}s): {}",
            if o.pass { "PASS" } else { "FAIL" },
            o.id,
            o.name,
            o.seconds,
            o.detail
        );
        if !o.pass {
            failed.push(o.id);
        }
    }
    assert!(failed.is_empty(), "failing checks: {failed:?}");
}
