//! Comparison tables from per-run CSVs.
//!
//! For each solver and threshold the table shows the median over seeds of
//! the oracle calls needed to first bring the residual to `fraction * r0`,
//! where `r0` is the seed's `|R(x_0)|`. A run that never gets there counts
//! as infinitely many calls, and a median that lands on such runs is `—`.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use crate::experiment::{CsvRow, Summary, CSV_HEADER};
use crate::{BenchError, THRESHOLDS};

#[derive(Debug, Clone, PartialEq)]
pub struct RunCsv {
    pub path: PathBuf,
    pub problem: String,
    pub solver: String,
    pub seed: u64,
    pub rows: Vec<CsvRow>,
}

/// Splits `<problem>.<solver>.seed<N>.csv`.
pub fn parse_csv_name(name: &str) -> Option<(String, String, u64)> {
    let stem = name.strip_suffix(".csv")?;
    let mut parts = stem.rsplitn(3, '.');
    let seed = parts.next()?.strip_prefix("seed")?.parse().ok()?;
    let solver = parts.next()?;
    let problem = parts.next()?;
    if solver.is_empty() || problem.is_empty() {
        return None;
    }
    Some((problem.to_string(), solver.to_string(), seed))
}

pub fn read_run_csv(path: &Path) -> Result<RunCsv, BenchError> {
    let err = |msg: String| BenchError::Csv {
        path: path.display().to_string(),
        msg,
    };
    let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
    let (problem, solver, seed) =
        parse_csv_name(name).ok_or_else(|| err("expected a name like <problem>.<solver>.seed<N>.csv".into()))?;
    let text = fs::read_to_string(path)?;
    let header = text.lines().next().unwrap_or_default();
    if header != CSV_HEADER {
        return Err(err(format!("unexpected header {header:?}")));
    }
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let rows = reader
        .deserialize()
        .collect::<Result<Vec<CsvRow>, _>>()
        .map_err(|e| err(e.to_string()))?;
    Ok(RunCsv {
        path: path.to_path_buf(),
        problem,
        solver,
        seed,
        rows,
    })
}

/// Cumulative `(p_calls, q_calls)` at the first point with residual at or below `level`.
pub fn first_reach(points: &[(f64, u64, u64)], level: f64) -> Option<(u64, u64)> {
    points.iter().find(|p| p.0 <= level).map(|p| (p.1, p.2))
}

/// Median with `None` as +infinity.
pub fn median(values: &[Option<u64>]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v: Vec<f64> = values.iter().map(|x| x.map_or(f64::INFINITY, |x| x as f64)).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let m = if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) };
    m.is_finite().then_some(m)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub p_calls: Option<f64>,
    pub q_calls: Option<f64>,
    /// Baseline median P calls over this solver's; above 1 means fewer calls.
    pub p_ratio: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverRow {
    pub solver: String,
    pub seeds: Vec<u64>,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Comparison {
    pub problem: String,
    pub baseline: String,
    pub thresholds: Vec<f64>,
    pub rows: Vec<SolverRow>,
}

/// Builds the comparison. `references` maps seed to `|R(x_0)|`; seeds it
/// lacks fall back to the largest first-row residual among that seed's runs.
pub fn compare_runs(runs: &[RunCsv], references: &HashMap<u64, f64>) -> Result<Comparison, BenchError> {
    let cfg = |msg: String| BenchError::Config(msg);
    if runs.len() < 2 {
        return Err(cfg(format!("need at least two runs to compare, got {}", runs.len())));
    }
    let problem = runs[0].problem.clone();
    if let Some(other) = runs.iter().find(|r| r.problem != problem) {
        return Err(cfg(format!(
            "runs are from different problems: {problem} and {}",
            other.problem
        )));
    }
    let mut seen = BTreeSet::new();
    for r in runs {
        if !seen.insert((r.solver.clone(), r.seed)) {
            return Err(cfg(format!("duplicate run for {} seed {}", r.solver, r.seed)));
        }
        if r.rows.is_empty() {
            return Err(cfg(format!("{} has no rows", r.path.display())));
        }
    }

    let mut refs: BTreeMap<u64, f64> = BTreeMap::new();
    for r in runs {
        let first = r.rows[0].residual_norm;
        let e = refs.entry(r.seed).or_insert(first);
        *e = e.max(first);
    }
    for (seed, r0) in refs.iter_mut() {
        if let Some(&given) = references.get(seed) {
            *r0 = given;
        }
    }

    let mut by_solver: BTreeMap<&str, Vec<&RunCsv>> = BTreeMap::new();
    for r in runs {
        by_solver.entry(r.solver.as_str()).or_default().push(r);
    }
    let baseline = if by_solver.contains_key("extragradient") {
        "extragradient".to_string()
    } else {
        by_solver.keys().next().expect("nonempty").to_string()
    };

    let hits = |group: &[&RunCsv], fraction: f64| -> (Vec<Option<u64>>, Vec<Option<u64>>) {
        group
            .iter()
            .map(|r| {
                let points: Vec<(f64, u64, u64)> =
                    r.rows.iter().map(|x| (x.residual_norm, x.p_calls, x.q_calls)).collect();
                let hit = first_reach(&points, fraction * refs[&r.seed]);
                (hit.map(|h| h.0), hit.map(|h| h.1))
            })
            .unzip()
    };

    let baseline_p: Vec<Option<f64>> = THRESHOLDS
        .iter()
        .map(|&f| median(&hits(&by_solver[baseline.as_str()], f).0))
        .collect();

    let mut rows = Vec::new();
    for (solver, group) in &by_solver {
        let mut seeds: Vec<u64> = group.iter().map(|r| r.seed).collect();
        seeds.sort_unstable();
        let cells = THRESHOLDS
            .iter()
            .zip(&baseline_p)
            .map(|(&f, base)| {
                let (p, q) = hits(group, f);
                let p_calls = median(&p);
                let p_ratio = match (base, p_calls) {
                    (Some(b), Some(p)) if p > 0.0 => Some(b / p),
                    _ => None,
                };
                Cell {
                    p_calls,
                    q_calls: median(&q),
                    p_ratio,
                }
            })
            .collect();
        rows.push(SolverRow {
            solver: solver.to_string(),
            seeds,
            cells,
        });
    }
    Ok(Comparison {
        problem,
        baseline,
        thresholds: THRESHOLDS.to_vec(),
        rows,
    })
}

fn fmt_count(v: Option<f64>) -> String {
    match v {
        Some(v) if v.fract() == 0.0 => format!("{v:.0}"),
        Some(v) => format!("{v:.1}"),
        None => "—".to_string(),
    }
}

impl fmt::Display for Comparison {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "problem: {}   (medians over seeds; ratio = {} P calls / solver P calls)", self.problem, self.baseline)?;
        writeln!(
            f,
            "{:<10} {:<16} {:>6} {:>12} {:>12} {:>8}",
            "threshold", "solver", "seeds", "P calls", "Q calls", "ratio"
        )?;
        for (t, &frac) in self.thresholds.iter().enumerate() {
            for row in &self.rows {
                let cell = &row.cells[t];
                let ratio = cell.p_ratio.map_or("—".to_string(), |r| format!("{r:.2}"));
                writeln!(
                    f,
                    "{:<10} {:<16} {:>6} {:>12} {:>12} {:>8}",
                    format!("{frac:e}"),
                    row.solver,
                    row.seeds.len(),
                    fmt_count(cell.p_calls),
                    fmt_count(cell.q_calls),
                    ratio
                )?;
            }
        }
        Ok(())
    }
}

/// Table for a set of CSV files.
pub fn compare_report(paths: &[PathBuf]) -> Result<String, BenchError> {
    let runs = paths.iter().map(|p| read_run_csv(p)).collect::<Result<Vec<_>, _>>()?;
    Ok(compare_runs(&runs, &HashMap::new())?.to_string())
}

/// Table for every run CSV in a directory. Uses `summary.json`, when present,
/// for the `|R(x_0)|` references.
pub fn report_dir(dir: &Path) -> Result<String, BenchError> {
    let entries = fs::read_dir(dir).map_err(|e| BenchError::Config(format!("{}: {e}", dir.display())))?;
    let mut paths = Vec::new();
    for entry in entries {
        let path = entry?.path();
        let is_run = path
            .file_name()
            .and_then(|n| n.to_str())
            .is_some_and(|n| parse_csv_name(n).is_some());
        if is_run {
            paths.push(path);
        }
    }
    paths.sort();
    let runs = paths.iter().map(|p| read_run_csv(p)).collect::<Result<Vec<_>, _>>()?;
    let mut references = HashMap::new();
    let summary_path = dir.join("summary.json");
    if summary_path.is_file() {
        let text = fs::read_to_string(&summary_path)?;
        let summary: Summary = serde_json::from_str(&text).map_err(|e| BenchError::Csv {
            path: summary_path.display().to_string(),
            msg: e.to_string(),
        })?;
        for run in summary.runs {
            references.insert(run.seed, run.initial_residual);
        }
    }
    Ok(compare_runs(&runs, &references)?.to_string())
}
