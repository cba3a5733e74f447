use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use serde::Serialize;

use crate::error::Result;
use crate::policy::EquilibriumSolution;
use crate::series::MatrixSeries;
use crate::verification::VerificationReport;

/// 17 significant digits, enough to round-trip an `f64`.
fn num(x: f64) -> String {
    format!("{x:.16e}")
}

/// Writes a headed CSV of numeric rows.
pub fn write_csv(path: &Path, header: &[String], rows: impl IntoIterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header)?;
    for row in rows {
        w.write_record(row.iter().map(|&x| num(x)))?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Two-column whitespace-separated file with a `#` header line.
pub fn write_plot_data(path: &Path, labels: (&str, &str), xs: &[f64], ys: &[f64]) -> Result<()> {
    let mut text = format!("# {} {}\n", labels.0, labels.1);
    for (x, y) in xs.iter().zip(ys) {
        text.push_str(&format!("{} {}\n", num(*x), num(*y)));
    }
    fs::write(path, text)?;
    Ok(())
}

/// Column names `{prefix}_{i}_{j}` (1-based; `{prefix}_{i}` for vectors) in
/// row-major order, with the matching column-major offsets.
fn entry_columns(prefix: &str, rows: usize, cols: usize, vector: bool) -> (Vec<String>, Vec<usize>) {
    let mut names = Vec::new();
    let mut offsets = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            names.push(if vector {
                format!("{prefix}_{}", i + 1)
            } else {
                format!("{prefix}_{}_{}", i + 1, j + 1)
            });
            offsets.push(j * rows + i);
        }
    }
    (names, offsets)
}

fn write_series(path: &Path, prefix: &str, times: &[f64], s: &MatrixSeries, vector: bool) -> Result<()> {
    let (names, offsets) = entry_columns(prefix, s.rows(), s.cols(), vector);
    let mut header = vec!["t".to_string()];
    header.extend(names);
    write_csv(
        path,
        &header,
        (0..s.len()).map(|i| {
            let v = s.slice(i);
            std::iter::once(times[i]).chain(offsets.iter().map(|&o| v[o])).collect()
        }),
    )
}

fn write_scalars(path: &Path, name: &str, times: &[f64], v: &[f64]) -> Result<()> {
    write_csv(
        path,
        &["t".into(), name.into()],
        times.iter().zip(v).map(|(&t, &x)| vec![t, x]),
    )
}

/// Solution tables, the equilibrium trajectory from `(0, x0)` and plot data.
/// Returns the files written.
pub fn write_solution(dir: &Path, sol: &EquilibriumSolution, x0: &DVector<f64>) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir.join("plot"))?;
    let times = sol.grid().nodes();
    let r = sol.riccati();
    let a = sol.auxiliary();
    let mut files = Vec::new();
    let mut emit = |name: &str| {
        let p = dir.join(name);
        files.push(p.clone());
        p
    };
    write_series(&emit("P.csv"), "P", &times, &r.p, false)?;
    write_series(&emit("Gamma.csv"), "Gamma", &times, &r.gamma, false)?;
    write_series(&emit("Qbb.csv"), "Qbb", &times, &r.qbb, false)?;
    write_series(&emit("phi.csv"), "phi", &times, &a.phi, true)?;
    write_series(&emit("Upsilon.csv"), "Upsilon", &times, &a.upsilon, true)?;
    write_series(&emit("Sbb.csv"), "Sbb", &times, &a.sbb, true)?;
    write_scalars(&emit("psi.csv"), "psi", &times, &a.psi)?;
    write_scalars(&emit("omega.csv"), "omega", &times, &a.omega)?;

    let traj = sol.simulate_equilibrium(0, x0)?;
    let (n, m) = (x0.len(), sol.spec().dims.m);
    let mut header = vec!["t".to_string()];
    header.extend((1..=n).map(|i| format!("y_{i}")));
    header.extend((1..=m).map(|j| format!("u_{j}")));
    header.push("V".into());
    let rows = traj
        .states
        .iter()
        .zip(&traj.controls)
        .enumerate()
        .map(|(i, (y, u))| {
            let t = times[i];
            let mut row = vec![t];
            row.extend(y.iter());
            row.extend(u.iter());
            row.push(sol.value(t, y)?);
            Ok(row)
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(&emit("trajectory.csv"), &header, rows.iter().cloned())?;

    let plot = dir.join("plot");
    let (names, offsets) = entry_columns("P", r.p.rows(), r.p.cols(), false);
    for (name, &o) in names.iter().zip(&offsets) {
        let ys: Vec<f64> = (0..r.p.len()).map(|i| r.p.slice(i)[o]).collect();
        let p = plot.join(format!("{name}.dat"));
        write_plot_data(&p, ("t", name), &times, &ys)?;
        files.push(p);
    }
    for (k, label) in header.iter().enumerate().skip(1) {
        let ys: Vec<f64> = rows.iter().map(|r| r[k]).collect();
        let p = plot.join(format!("trajectory_{label}.dat"));
        write_plot_data(&p, ("t", label), &times, &ys)?;
        files.push(p);
    }
    Ok(files)
}

fn numbered(prefix: &str, k: usize) -> impl Iterator<Item = String> + '_ {
    (1..=k).map(move |i| format!("{prefix}_{i}"))
}

/// Report JSON plus per-probe CSVs.
pub fn write_verification(dir: &Path, report: &VerificationReport) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir)?;
    let mut files = vec![dir.join("verification.json")];
    write_json(&files[0], report)?;

    if let Some(first) = report.spikes.first() {
        let (n, m, k) = (first.x.len(), first.v.len(), first.epsilons.len());
        let mut header = vec!["t".to_string()];
        header.extend(numbered("x", n));
        header.extend(numbered("v", m));
        header.extend(numbered("eps", k));
        header.extend(numbered("quotient", k));
        header.extend(["extrapolated", "analytic", "reference"].map(String::from));
        let p = dir.join("spike.csv");
        write_csv(
            &p,
            &header,
            report.spikes.iter().map(|s| {
                let mut r = vec![s.t];
                r.extend(&s.x);
                r.extend(&s.v);
                r.extend(&s.epsilons);
                r.extend(&s.quotients);
                r.extend([s.extrapolated, s.analytic, s.reference]);
                r
            }),
        )?;
        files.push(p);
    }
    if let Some(first) = report.bellman.first() {
        let mut header = vec!["t".to_string(), "s".to_string()];
        header.extend(numbered("x", first.x.len()));
        header.extend(["residual", "equilibrium_residual"].map(String::from));
        let p = dir.join("bellman.csv");
        write_csv(
            &p,
            &header,
            report.bellman.iter().map(|b| {
                let mut r = vec![b.t, b.s];
                r.extend(&b.x);
                r.extend([b.residual, b.equilibrium_residual]);
                r
            }),
        )?;
        files.push(p);
    }
    if let Some(first) = report.hjb.first() {
        let mut header = vec!["t".to_string()];
        header.extend(numbered("x", first.x.len()));
        header.extend(["pointwise", "integral", "value"].map(String::from));
        let p = dir.join("hjb.csv");
        write_csv(
            &p,
            &header,
            report.hjb.iter().map(|h| {
                let mut r = vec![h.t];
                r.extend(&h.x);
                r.extend([h.pointwise, h.integral, h.value]);
                r
            }),
        )?;
        files.push(p);
    }
    let p = dir.join("checks.csv");
    let mut w = csv::Writer::from_path(&p)?;
    w.write_record(["check", "passed", "value", "tolerance"])?;
    for c in &report.checks {
        w.write_record([c.name.clone(), c.passed.to_string(), num(c.value), num(c.tolerance)])?;
    }
    w.flush()?;
    files.push(p);
    Ok(files)
}

/// One node of an equilibrium-versus-classical comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub t: f64,
    pub equilibrium: Vec<f64>,
    pub classical: Vec<f64>,
}

/// `compare.csv`: both `P` tables (row-major entries) and their difference.
pub fn write_compare(dir: &Path, n: usize, rows: &[CompareRow]) -> Result<PathBuf> {
    fs::create_dir_all(dir)?;
    let (names, _) = entry_columns("", n, n, false);
    let mut header = vec!["t".to_string()];
    for prefix in ["P_eq", "P_classical", "diff"] {
        header.extend(names.iter().map(|s| format!("{prefix}{s}")));
    }
    let p = dir.join("compare.csv");
    write_csv(
        &p,
        &header,
        rows.iter().map(|r| {
            let mut out = vec![r.t];
            out.extend(&r.equilibrium);
            out.extend(&r.classical);
            out.extend(r.equilibrium.iter().zip(&r.classical).map(|(a, b)| a - b));
            out
        }),
    )?;
    Ok(p)
}

/// One parameter value of a sweep.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub parameter: f64,
    /// `P(0)`, row-major.
    pub p0: Vec<f64>,
    pub value0: f64,
    pub iterations: usize,
}

/// `sweep.csv`: `P(0)` entries and `V(0, x₀)` against the parameter.
pub fn write_sweep(dir: &Path, name: &str, n: usize, rows: &[SweepRow]) -> Result<PathBuf> {
    fs::create_dir_all(dir.join("plot"))?;
    let (names, _) = entry_columns("P0", n, n, false);
    let mut header = vec![name.to_string()];
    header.extend(names);
    header.push("V0".into());
    let p = dir.join("sweep.csv");
    write_csv(
        &p,
        &header,
        rows.iter().map(|r| {
            let mut out = vec![r.parameter];
            out.extend(&r.p0);
            out.push(r.value0);
            out
        }),
    )?;
    let xs: Vec<f64> = rows.iter().map(|r| r.parameter).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.value0).collect();
    write_plot_data(&dir.join("plot").join("sweep_V0.dat"), (name, "V0"), &xs, &ys)?;
    Ok(p)
}
