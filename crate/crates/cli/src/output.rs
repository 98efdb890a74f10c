//! Artifact writers. Every float is printed with {:.16e} (17 significant
//! digits), which round-trips f64 exactly, so identical runs produce
//! byte-identical files and determinism is checkable with `cmp`.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use flory::diagnostics::{ComparisonResult, ConvergenceResult, MgComplexityRecord, StepRecord};
use flory::{CellField, SchemeState};

use crate::config::{CliResult, MobilitySection, Validated};

fn f(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn ensure_dir(dir: &str) -> CliResult<PathBuf> {
    let path = PathBuf::from(dir);
    std::fs::create_dir_all(&path)?;
    Ok(path)
}

/// series.csv: one step record per row; modified_energy is empty unless the
/// run recorded it.
pub fn write_series(dir: &Path, records: &[StepRecord], record_every: u64) -> CliResult<PathBuf> {
    let path = dir.join("series.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(
        w,
        "step,time,mass,energy,modified_energy,phi_min,phi_max,vcycles,final_residual,saturated"
    )?;
    let last = records.last().map(|r| r.step).unwrap_or(0);
    for r in records {
        if r.step % record_every != 0 && r.step != last {
            continue;
        }
        let me = r.modified_energy.map(f).unwrap_or_default();
        writeln!(
            w,
            "{},{},{},{},{},{},{},{},{},{}",
            r.step,
            f(r.time),
            f(r.mass),
            f(r.energy),
            me,
            f(r.phi_min),
            f(r.phi_max),
            r.vcycles,
            f(r.final_residual),
            r.saturated
        )?;
    }
    w.flush()?;
    Ok(path)
}

/// Raw little-endian f64 snapshot (x fastest) plus a text sidecar with the
/// grid, time, scheme, and model parameters.
pub fn write_snapshot(
    dir: &Path,
    stem: &str,
    state: &SchemeState,
    scheme: &str,
    v: &Validated,
) -> CliResult<()> {
    let raw_path = dir.join(format!("{stem}.f64"));
    let mut w = BufWriter::new(File::create(&raw_path)?);
    for &x in state.phi().data() {
        w.write_all(&x.to_le_bytes())?;
    }
    w.flush()?;

    let meta_path = dir.join(format!("{stem}.meta"));
    let mut m = BufWriter::new(File::create(&meta_path)?);
    let spec = state.phi().spec();
    writeln!(m, "format = raw_f64_le")?;
    writeln!(m, "layout = row_major_x_fastest")?;
    writeln!(m, "dim = {}", spec.dim())?;
    writeln!(m, "n = {}", spec.n())?;
    writeln!(m, "length = {}", f(spec.length()))?;
    writeln!(m, "time = {}", f(state.time()))?;
    writeln!(m, "step = {}", state.step_index())?;
    writeln!(m, "scheme = {scheme}")?;
    writeln!(m, "epsilon = {}", f(v.params.epsilon))?;
    writeln!(m, "theta0 = {}", f(v.params.theta0))?;
    writeln!(m, "delta = {}", f(v.params.delta))?;
    writeln!(m, "stabilization_a = {}", f(v.params.stabilization_a))?;
    match &v.raw.model.mobility {
        MobilitySection::Constant { value } => {
            writeln!(m, "mobility = constant {}", f(*value))?;
        }
        MobilitySection::RegularizedDegenerate { floor } => {
            writeln!(m, "mobility = regularized_degenerate {}", f(*floor))?;
        }
    }
    m.flush()?;
    Ok(())
}

/// Reads a `.f64` snapshot back; the caller supplies the grid the sidecar
/// describes. Round-trips bitwise.
pub fn read_snapshot(path: &Path, spec: flory::GridSpec) -> CliResult<CellField> {
    let bytes = std::fs::read(path)?;
    if bytes.len() != 8 * spec.cells() {
        return Err(crate::config::CliError::Io(format!(
            "{}: expected {} bytes for a {}^{} grid, found {}",
            path.display(),
            8 * spec.cells(),
            spec.n(),
            spec.dim(),
            bytes.len()
        )));
    }
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    CellField::from_vec(spec, data).map_err(Into::into)
}

/// convergence.csv: coarse/fine spacing, coarse-vs-fine error, and the
/// observed rate (blank on the first row, which has no predecessor).
pub fn write_convergence(dir: &Path, res: &ConvergenceResult, length: f64) -> CliResult<PathBuf> {
    let path = dir.join("convergence.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "h_coarse,h_fine,error_l2,rate")?;
    for (i, err) in res.errors.iter().enumerate() {
        let h_coarse = length / res.resolutions[i] as f64;
        let h_fine = length / res.resolutions[i + 1] as f64;
        let rate = if i == 0 {
            String::new()
        } else {
            f(res.rates[i - 1])
        };
        writeln!(w, "{},{},{},{}", f(h_coarse), f(h_fine), f(*err), rate)?;
    }
    w.flush()?;
    Ok(path)
}

/// mg_residuals.csv: the final-step residual history of every
/// (theta0, grid) combination, one row per V-cycle.
pub fn write_mg_residuals(dir: &Path, recs: &[MgComplexityRecord]) -> CliResult<PathBuf> {
    let path = dir.join("mg_residuals.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    writeln!(w, "theta0,grid_n,cycle_index,residual")?;
    for r in recs {
        for (i, res) in r.final_step_residuals.iter().enumerate() {
            writeln!(w, "{},{},{},{}", f(r.theta0), r.n, i, f(*res))?;
        }
    }
    w.flush()?;
    Ok(path)
}

/// comparison.csv: one row per (scheme, dt), error columns named by probe
/// time, then the mean V-cycle count and the running max of phi.
pub fn write_comparison(dir: &Path, res: &ComparisonResult) -> CliResult<PathBuf> {
    let path = dir.join("comparison.csv");
    let mut w = BufWriter::new(File::create(&path)?);
    let err_cols: Vec<String> = res
        .probe_times
        .iter()
        .map(|t| format!("err_t{t}"))
        .collect();
    writeln!(w, "scheme,dt,{},avg_vcycles,max_phi", err_cols.join(","))?;
    for row in &res.rows {
        let errs: Vec<String> = row.errors.iter().map(|e| f(*e)).collect();
        writeln!(
            w,
            "{},{},{},{},{}",
            row.label,
            f(row.dt),
            errs.join(","),
            f(row.mean_vcycles),
            f(row.max_phi)
        )?;
    }
    w.flush()?;
    Ok(path)
}
