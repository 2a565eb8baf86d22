//! Side-by-side problem-size and constraint-violation tables.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::output::{RunReport, REPORT};

fn load(dir: &Path) -> Result<RunReport> {
    let path = dir.join(REPORT);
    if !path.is_file() {
        bail!("{}: no {REPORT}, not a run directory", dir.display());
    }
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
    serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))
}

fn label(r: &RunReport) -> String {
    let time = match r.time_mode {
        centroidal::TimeMode::FixedTime => "fixed",
        centroidal::TimeMode::TimeOptFreeHorizon => "free",
        centroidal::TimeMode::TimeOptFixedHorizon => "fixed-horizon",
    };
    format!("{} [{time}]", r.scenario)
}

fn table(title: &str, columns: &[String], rows: &[(&str, Vec<String>)]) -> String {
    let first = rows.iter().map(|(n, _)| n.chars().count()).max().unwrap_or(0);
    let widths: Vec<usize> = columns
        .iter()
        .enumerate()
        .map(|(i, c)| {
            rows.iter()
                .map(|(_, v)| v[i].len())
                .chain([c.chars().count()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let mut out = format!("{title}\n{:first$}", "");
    for (c, w) in columns.iter().zip(&widths) {
        out += &format!("  {c:>w$}");
    }
    out.push('\n');
    for (name, vals) in rows {
        out += &format!("{name:first$}");
        for (v, w) in vals.iter().zip(&widths) {
            out += &format!("  {v:>w$}");
        }
        out.push('\n');
    }
    out
}

pub fn render(runs: &[RunReport]) -> String {
    let cols: Vec<String> = runs.iter().map(label).collect();
    let col = |f: &dyn Fn(&RunReport) -> String| runs.iter().map(f).collect::<Vec<_>>();
    let size = table(
        "Problem size and time",
        &cols,
        &[
            ("Variables", col(&|r| r.kkt_stats.variables.to_string())),
            ("Equalities", col(&|r| r.kkt_stats.lin_eq.to_string())),
            ("Inequalities", col(&|r| r.kkt_stats.lin_ineq.to_string())),
            ("SOC constraints", col(&|r| r.kkt_stats.soc_count.to_string())),
            ("KKT size", col(&|r| r.kkt_stats.kkt_size.to_string())),
            ("KKT nonzeros", col(&|r| r.kkt_stats.kkt_nnz.to_string())),
            ("Outer iterations", col(&|r| r.outer_iterations.to_string())),
            ("Time [s]", col(&|r| format!("{:.3}", r.total_solve_time))),
            ("Duration [s]", col(&|r| format!("{:.3}", r.total_duration))),
        ],
    );
    let violation = table(
        "Constraint violation (mean over steps)",
        &cols,
        &[
            ("CoM [m]", col(&|r| format!("{:.3e}", r.violation.com_err))),
            ("Linear momentum [kg m/s]", col(&|r| format!("{:.3e}", r.violation.lin_err))),
            ("Angular momentum [kg m^2/s]", col(&|r| format!("{:.3e}", r.violation.ang_err))),
        ],
    );
    format!("{size}\n{violation}")
}

pub fn print(dirs: &[PathBuf]) -> Result<()> {
    let runs = dirs.iter().map(|d| load(d)).collect::<Result<Vec<_>>>()?;
    print!("{}", render(&runs));
    Ok(())
}
