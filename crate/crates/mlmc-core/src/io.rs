//! File formats: matrix dumps as coordinate triplets with a JSON sidecar
//! header, densities and walk traces as CSV, reports as JSON.
//!
//! Every float is written in shortest round-trip decimal form and every
//! row order is fixed, so identical inputs produce byte-identical files
//! regardless of thread count.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::density::DiscreteDensity;
use crate::error::{Error, Result};
use crate::matrix::StochasticMatrix;
use crate::multilevel::{PipelineMode, PipelineReport};
use crate::partition::Partition;
use crate::quadrature::QuadratureSpec;
use crate::szegedy::WalkTrace;

/// Sidecar metadata written next to each matrix dump.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MatrixHeader {
    pub partition: Option<Partition>,
    pub n_states: usize,
    /// Relative per-row threshold that was applied when the matrix was
    /// assembled.
    pub threshold: f64,
    pub quadrature: Option<QuadratureSpec>,
    pub renorm_max_delta: f64,
}

fn create(path: &Path) -> Result<BufWriter<fs::File>> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            fs::create_dir_all(dir)?;
        }
    }
    Ok(BufWriter::new(fs::File::create(path)?))
}

/// Serializes any report type as pretty-printed JSON with a trailing
/// newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w)?;
    w.flush()?;
    Ok(())
}

/// Writes `{stem}.csv` with (row, col, value) triplets in row-major order
/// and `{stem}.json` with the matrix header; returns both paths.
pub fn write_matrix(
    dir: &Path,
    stem: &str,
    m: &StochasticMatrix,
    quadrature: Option<&QuadratureSpec>,
    threshold: f64,
) -> Result<(PathBuf, PathBuf)> {
    let csv_path = dir.join(format!("{stem}.csv"));
    let json_path = dir.join(format!("{stem}.json"));
    let mut w = create(&csv_path)?;
    writeln!(w, "row,col,value")?;
    for i in 0..m.n() {
        for &(j, v) in m.row(i) {
            writeln!(w, "{i},{j},{v}")?;
        }
    }
    w.flush()?;
    let header = MatrixHeader {
        partition: m.partition().cloned(),
        n_states: m.n(),
        threshold,
        quadrature: quadrature.cloned(),
        renorm_max_delta: m.renorm_max_delta(),
    };
    write_json(&json_path, &header)?;
    Ok((csv_path, json_path))
}

/// Reads a matrix dump written by `write_matrix` back into a chain. Rows
/// are revalidated and renormalized on entry, so the result may differ
/// from the original by one rounding step.
pub fn read_matrix(csv_path: &Path, json_path: &Path) -> Result<StochasticMatrix> {
    let header: MatrixHeader = serde_json::from_str(&fs::read_to_string(json_path)?)?;
    let text = fs::read_to_string(csv_path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some("row,col,value") => {}
        other => {
            return Err(Error::Parse(format!(
                "{}: expected header row,col,value, got {other:?}",
                csv_path.display()
            )));
        }
    }
    let mut rows: Vec<Vec<(u32, f64)>> = vec![Vec::new(); header.n_states];
    for (k, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let bad = || {
            Error::Parse(format!(
                "{} line {}: expected row,col,value triplet, got {line:?}",
                csv_path.display(),
                k + 2
            ))
        };
        let mut fields = line.split(',');
        let row: usize =
            fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let col: u32 = fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        let value: f64 =
            fields.next().and_then(|s| s.parse().ok()).ok_or_else(bad)?;
        if fields.next().is_some() {
            return Err(bad());
        }
        if row >= header.n_states {
            return Err(Error::Parse(format!(
                "{} line {}: row {row} out of range for {} states",
                csv_path.display(),
                k + 2,
                header.n_states
            )));
        }
        rows[row].push((col, value));
    }
    StochasticMatrix::from_sparse(header.partition, header.n_states, rows)
}

/// Writes a density as (index, mass) rows.
pub fn write_density(path: &Path, rho: &DiscreteDensity) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "index,mass")?;
    for (i, v) in rho.mass().iter().enumerate() {
        writeln!(w, "{i},{v}")?;
    }
    w.flush()?;
    Ok(())
}

/// Writes a walk trace as (step, overlap, self_overlap) rows: overlap with
/// the stationary target alongside overlap with the initial state.
pub fn write_overlap_trace(path: &Path, trace: &WalkTrace) -> Result<()> {
    let mut w = create(path)?;
    writeln!(w, "step,overlap,self_overlap")?;
    for (t, (a, b)) in trace.target_overlap.iter().zip(&trace.self_overlap).enumerate() {
        writeln!(w, "{t},{a},{b}")?;
    }
    w.flush()?;
    Ok(())
}

/// Builds the per-level cost table. Classical-emulation runs carry two
/// extra columns with the measured power-iteration work.
pub fn pipeline_csv(report: &PipelineReport) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    match report.mode {
        PipelineMode::QuantumCostModel => {
            out.push_str("h,n_states,m,s,tau,delta_eig,q,walk_steps,C\n");
            for l in &report.levels {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{}",
                    l.h, l.n_states, l.m, l.s, l.tau, l.delta, l.q, l.walk_steps, l.cost
                )
                .unwrap();
            }
        }
        PipelineMode::ClassicalEmulation => {
            out.push_str(
                "h,n_states,m,s,tau,delta_eig,q,walk_steps,C,classical_matvecs,classical_cost\n",
            );
            for l in &report.levels {
                writeln!(
                    out,
                    "{},{},{},{},{},{},{},{},{},{},{}",
                    l.h,
                    l.n_states,
                    l.m,
                    l.s,
                    l.tau,
                    l.delta,
                    l.q,
                    l.walk_steps,
                    l.cost,
                    l.classical_matvecs.unwrap_or(0),
                    l.classical_cost.unwrap_or(0.0)
                )
                .unwrap();
            }
        }
    }
    out
}

/// Writes the table from `pipeline_csv` to a file.
pub fn write_pipeline_csv(path: &Path, report: &PipelineReport) -> Result<()> {
    let mut w = create(path)?;
    w.write_all(pipeline_csv(report).as_bytes())?;
    w.flush()?;
    Ok(())
}

/// Writes `{stem}.json` and `{stem}.csv` for a pipeline report; returns
/// both paths.
pub fn write_pipeline_report(
    dir: &Path,
    stem: &str,
    report: &PipelineReport,
) -> Result<(PathBuf, PathBuf)> {
    let json_path = dir.join(format!("{stem}.json"));
    let csv_path = dir.join(format!("{stem}.csv"));
    write_json(&json_path, report)?;
    write_pipeline_csv(&csv_path, report)?;
    Ok((json_path, csv_path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{BoundaryPolicy, KernelSpec};
    use crate::multilevel::{run_pipeline, LevelSchedule};
    use crate::ulam::{discretize_kernel, RELATIVE_ENTRY_THRESHOLD};

    fn gauss_chain(n: u32) -> StochasticMatrix {
        let kernel = KernelSpec::gauss_ar1(0.5, 0.3, BoundaryPolicy::RenormalizeRows, 1).unwrap();
        let part = Partition::new(n, 1).unwrap();
        discretize_kernel(&kernel, &part, &QuadratureSpec::default_for(1)).unwrap()
    }

    #[test]
    fn matrix_dump_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = gauss_chain(8);
        let quad = QuadratureSpec::default_for(1);
        let (csv, json) =
            write_matrix(dir.path(), "gauss", &m, Some(&quad), RELATIVE_ENTRY_THRESHOLD)
                .unwrap();
        let back = read_matrix(&csv, &json).unwrap();
        assert_eq!(back.n(), m.n());
        assert_eq!(back.partition(), m.partition());
        for i in 0..m.n() {
            let (a, b) = (m.row(i), back.row(i));
            assert_eq!(a.len(), b.len());
            for ((ka, va), (kb, vb)) in a.iter().zip(b) {
                assert_eq!(ka, kb);
                assert!((va - vb).abs() <= 1e-15);
            }
        }
        let header: MatrixHeader =
            serde_json::from_str(&fs::read_to_string(&json).unwrap()).unwrap();
        assert_eq!(header.n_states, 16);
        assert_eq!(header.threshold, RELATIVE_ENTRY_THRESHOLD);
        assert_eq!(header.renorm_max_delta, m.renorm_max_delta());
    }

    #[test]
    fn partition_header_names_the_index_order() {
        let part = Partition::new(8, 2).unwrap();
        let text = serde_json::to_string(&part).unwrap();
        assert_eq!(
            text,
            r#"{"h_num":1,"h_den":8,"d":2,"index_order":"row-major-c0-slowest"}"#
        );
        let back: Partition = serde_json::from_str(&text).unwrap();
        assert_eq!(back, part);
        let wrong = text.replace("c0-slowest", "c0-fastest");
        assert!(serde_json::from_str::<Partition>(&wrong).is_err());
    }

    #[test]
    fn density_file_content_is_stable() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rho.csv");
        let rho = DiscreteDensity::free(vec![0.25, 0.75]).unwrap();
        write_density(&path, &rho).unwrap();
        assert_eq!(fs::read_to_string(&path).unwrap(), "index,mass\n0,0.25\n1,0.75\n");
    }

    #[test]
    fn pipeline_csv_columns_follow_the_mode() {
        let dir = tempfile::tempdir().unwrap();
        let kernel =
            KernelSpec::gauss_ar1(0.5, 0.3, BoundaryPolicy::RenormalizeRows, 1).unwrap();
        let schedule = LevelSchedule::new(4, 8, 1).unwrap();
        let quad = QuadratureSpec::default_for(1);

        let quantum = run_pipeline(
            &kernel,
            &schedule,
            &quad,
            PipelineMode::QuantumCostModel,
            1e-3,
        )
        .unwrap();
        let (json, csv) = write_pipeline_report(dir.path(), "quantum", &quantum).unwrap();
        let text = fs::read_to_string(&csv).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), "h,n_states,m,s,tau,delta_eig,q,walk_steps,C");
        assert_eq!(lines.count(), quantum.levels.len());
        assert!(!text.contains("classical"));
        assert!(fs::read_to_string(&json).unwrap().contains("\"c_total\""));

        let classical = run_pipeline(
            &kernel,
            &schedule,
            &quad,
            PipelineMode::ClassicalEmulation,
            1e-3,
        )
        .unwrap();
        let (_, csv) = write_pipeline_report(dir.path(), "classical", &classical).unwrap();
        let text = fs::read_to_string(&csv).unwrap();
        assert!(text
            .starts_with("h,n_states,m,s,tau,delta_eig,q,walk_steps,C,classical_matvecs"));
        let row = text.lines().nth(1).unwrap();
        assert_eq!(row.split(',').count(), 11);
    }

    #[test]
    fn identical_reports_serialize_to_identical_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let kernel =
            KernelSpec::gauss_ar1(0.5, 0.3, BoundaryPolicy::RenormalizeRows, 1).unwrap();
        let schedule = LevelSchedule::new(4, 8, 1).unwrap();
        let quad = QuadratureSpec::default_for(1);
        let a = run_pipeline(&kernel, &schedule, &quad, PipelineMode::QuantumCostModel, 1e-3)
            .unwrap();
        let b = run_pipeline(&kernel, &schedule, &quad, PipelineMode::QuantumCostModel, 1e-3)
            .unwrap();
        let (ja, ca) = write_pipeline_report(dir.path(), "a", &a).unwrap();
        let (jb, cb) = write_pipeline_report(dir.path(), "b", &b).unwrap();
        assert_eq!(fs::read(ja).unwrap(), fs::read(jb).unwrap());
        assert_eq!(fs::read(ca).unwrap(), fs::read(cb).unwrap());
    }

    #[test]
    fn malformed_dumps_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let m = gauss_chain(2);
        let (csv, json) = write_matrix(dir.path(), "m", &m, None, 0.0).unwrap();

        fs::write(dir.path().join("bad.csv"), "row,col,value\n0,0\n").unwrap();
        assert!(matches!(
            read_matrix(&dir.path().join("bad.csv"), &json),
            Err(Error::Parse(_))
        ));

        fs::write(dir.path().join("head.csv"), "a,b,c\n").unwrap();
        assert!(matches!(
            read_matrix(&dir.path().join("head.csv"), &json),
            Err(Error::Parse(_))
        ));

        fs::write(dir.path().join("range.csv"), "row,col,value\n99,0,1.0\n").unwrap();
        assert!(matches!(
            read_matrix(&dir.path().join("range.csv"), &json),
            Err(Error::Parse(_))
        ));
        drop(csv);
    }

    #[test]
    fn overlap_trace_lists_every_step() {
        use crate::szegedy::{build_walk, walk_evolve};
        let dir = tempfile::tempdir().unwrap();
        let p = StochasticMatrix::from_dense(vec![vec![0.9, 0.1], vec![0.2, 0.8]]).unwrap();
        let walk = build_walk(&p).unwrap();
        let psi0 = walk.encode_density(&DiscreteDensity::uniform_free(2)).unwrap();
        let trace = walk_evolve(&walk, &psi0, 5).unwrap();
        let path = dir.path().join("trace.csv");
        write_overlap_trace(&path, &trace).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().next().unwrap(), "step,overlap,self_overlap");
        assert_eq!(text.lines().count(), 7);
        assert!(text.lines().nth(1).unwrap().starts_with("0,"));
    }
}
