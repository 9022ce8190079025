//! `report`: summary tables, percentage improvements and comparison plots
//! over finished run directories. Inputs are only read.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context as _;
use serde::Deserialize;

use hemsmeta_core::Error;

use crate::commands::{create_dir, fmt_opt, write, SOLUTIONS_HEADER};
use crate::plot::{boxes, chart, Chart, Mark, Series};
use crate::Usage;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Better {
    Higher,
    Lower,
}

/// Summary columns and the direction that counts as better.
pub const COLUMNS: [(&str, Better); 6] = [
    ("eu", Better::Higher),
    ("hv", Better::Higher),
    ("sp", Better::Lower),
    ("hv_over_sp", Better::Higher),
    ("bill", Better::Lower),
    ("comfort", Better::Higher),
];

#[derive(Debug, Clone, Deserialize)]
pub struct MetricsRow {
    pub method: String,
    pub seed: u64,
    pub eu: f64,
    pub hv: f64,
    pub sp: Option<f64>,
    pub hv_over_sp: Option<f64>,
    pub bill: f64,
    pub comfort: f64,
}

impl MetricsRow {
    fn columns(&self) -> [Option<f64>; 6] {
        [
            Some(self.eu),
            Some(self.hv),
            self.sp,
            self.hv_over_sp,
            Some(self.bill),
            Some(self.comfort),
        ]
    }
}

#[derive(Debug, Clone, Deserialize)]
pub struct SolutionRow {
    pub seed: u64,
    pub policy_id: usize,
    pub w1: Option<f64>,
    pub neg_cost: f64,
    pub comfort: f64,
    pub on_front: u8,
}

pub struct RunData {
    pub label: String,
    pub metrics: Vec<MetricsRow>,
    pub solutions: Vec<SolutionRow>,
}

fn read_csv<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    if !path.is_file() {
        return Err(Error::Data(format!("missing {}", path.display())).into());
    }
    let mut rdr = csv::Reader::from_path(path).with_context(|| format!("cannot read {}", path.display()))?;
    let mut rows = Vec::new();
    for (i, rec) in rdr.deserialize().enumerate() {
        let row = rec.map_err(|e| Error::Parse {
            row: i + 2,
            msg: format!("{}: {e}", path.display()),
        })?;
        rows.push(row);
    }
    Ok(rows)
}

pub fn load_run(dir: &Path) -> anyhow::Result<RunData> {
    let metrics: Vec<MetricsRow> = read_csv(&dir.join("metrics.csv"))?;
    let Some(first) = metrics.first() else {
        return Err(Error::Data(format!("{} has no metric rows", dir.join("metrics.csv").display())).into());
    };
    let label = first.method.clone();
    let solutions = read_csv(&dir.join("solutions.csv"))?;
    Ok(RunData {
        label,
        metrics,
        solutions,
    })
}

/// Mean of the present values; `None` when no seed has a value.
fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = values.flatten().collect();
    (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
}

pub fn summarize(run: &RunData) -> [Option<f64>; 6] {
    std::array::from_fn(|j| mean(run.metrics.iter().map(|m| m.columns()[j])))
}

/// Row indices holding the best value of each column; ties are all kept.
pub fn best_per_column(rows: &[[Option<f64>; 6]]) -> [Vec<usize>; 6] {
    std::array::from_fn(|j| {
        let better = COLUMNS[j].1;
        let best = rows.iter().filter_map(|r| r[j]).reduce(|a, b| match better {
            Better::Higher => a.max(b),
            Better::Lower => a.min(b),
        });
        match best {
            Some(b) => (0..rows.len()).filter(|&i| rows[i][j] == Some(b)).collect(),
            None => Vec::new(),
        }
    })
}

/// `(candidate - baseline) / baseline * 100`; zero for identical values,
/// absent for a zero baseline.
pub fn pct_improvement(candidate: f64, baseline: f64) -> Option<f64> {
    if candidate == baseline {
        Some(0.0)
    } else if baseline == 0.0 {
        None
    } else {
        Some((candidate - baseline) / baseline * 100.0)
    }
}

fn table_header() -> String {
    COLUMNS.iter().map(|c| c.0).collect::<Vec<_>>().join(",")
}

fn summary_csv(labels: &[String], rows: &[[Option<f64>; 6]], seeds: &[usize]) -> String {
    let mut s = format!("method,n_seeds,{}\n", table_header());
    for ((label, row), n) in labels.iter().zip(rows).zip(seeds) {
        let cells: Vec<String> = row.iter().map(|v| fmt_opt(*v)).collect();
        let _ = writeln!(s, "{label},{n},{}", cells.join(","));
    }
    s
}

fn summary_md(labels: &[String], rows: &[[Option<f64>; 6]], best: &[Vec<usize>; 6]) -> String {
    let arrows: Vec<String> = COLUMNS
        .iter()
        .map(|(name, b)| format!("{name} {}", if *b == Better::Higher { "↑" } else { "↓" }))
        .collect();
    let mut s = format!(
        "| method | {} |\n|---|{}\n",
        arrows.join(" | "),
        "---:|".repeat(COLUMNS.len())
    );
    for (i, (label, row)) in labels.iter().zip(rows).enumerate() {
        let cells: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(j, v)| match v {
                Some(x) if best[j].contains(&i) => format!("**{x:.2}**"),
                Some(x) => format!("{x:.2}"),
                None => "n/a".into(),
            })
            .collect();
        let _ = writeln!(s, "| {label} | {} |", cells.join(" | "));
    }
    s.push_str("\nBold marks the best mean per column over seeds.\n");
    s
}

fn improvement_csv(labels: &[String], rows: &[[Option<f64>; 6]], base: usize) -> String {
    let mut s = format!("candidate,baseline,{}\n", table_header());
    for (i, row) in rows.iter().enumerate() {
        if i == base {
            continue;
        }
        let cells: Vec<String> = (0..COLUMNS.len())
            .map(|j| match (row[j], rows[base][j]) {
                (Some(c), Some(b)) => fmt_opt(pct_improvement(c, b)),
                _ => String::new(),
            })
            .collect();
        let _ = writeln!(s, "{},{},{}", labels[i], labels[base], cells.join(","));
    }
    s
}

fn scatter(title: &str, runs: &[RunData], labels: &[String], front_only: bool) -> String {
    chart(&Chart {
        title: title.into(),
        x_label: "negative annual cost (GBP)".into(),
        y_label: "annual comfort hours".into(),
        series: runs
            .iter()
            .zip(labels)
            .map(|(r, label)| Series {
                label: label.clone(),
                mark: Mark::Points,
                points: r
                    .solutions
                    .iter()
                    .filter(|s| !front_only || s.on_front == 1)
                    .map(|s| (s.neg_cost, s.comfort))
                    .collect(),
            })
            .collect(),
    })
}

fn solutions_table(runs: &[RunData], labels: &[String], front_only: bool) -> String {
    let mut s = if front_only {
        String::from("method,seed,policy_id,neg_cost,comfort\n")
    } else {
        format!("{SOLUTIONS_HEADER}\n")
    };
    for (r, label) in runs.iter().zip(labels) {
        for x in r.solutions.iter().filter(|s| !front_only || s.on_front == 1) {
            if front_only {
                let _ = writeln!(s, "{label},{},{},{},{}", x.seed, x.policy_id, x.neg_cost, x.comfort);
            } else {
                let _ = writeln!(
                    s,
                    "{label},{},{},{},{},{},{}",
                    x.seed,
                    x.policy_id,
                    fmt_opt(x.w1),
                    x.neg_cost,
                    x.comfort,
                    x.on_front
                );
            }
        }
    }
    s
}

/// Run labels: the method name, suffixed with the directory name when two
/// runs share a method.
fn unique_labels(runs: &[RunData], dirs: &[PathBuf]) -> Vec<String> {
    let mut count: BTreeMap<&str, usize> = BTreeMap::new();
    for r in runs {
        *count.entry(&r.label).or_default() += 1;
    }
    runs.iter()
        .zip(dirs)
        .map(|(r, d)| {
            if count[r.label.as_str()] > 1 {
                let dir = d
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                format!("{}@{dir}", r.label)
            } else {
                r.label.clone()
            }
        })
        .collect()
}

pub fn report(dirs: &[PathBuf], baseline: Option<&str>, out: &Path) -> anyhow::Result<()> {
    if dirs.len() < 2 {
        return Err(Usage("report needs at least two run directories".into()).into());
    }
    let out_abs = fs::canonicalize(out).ok();
    for d in dirs {
        if out_abs.is_some() && fs::canonicalize(d).ok() == out_abs {
            return Err(Usage(format!("output directory {} is also an input", out.display())).into());
        }
    }
    let runs: Vec<RunData> = dirs.iter().map(|d| load_run(d)).collect::<anyhow::Result<_>>()?;
    let labels = unique_labels(&runs, dirs);
    let base = match baseline {
        None => 0,
        Some(b) => labels
            .iter()
            .position(|l| l == b)
            .ok_or_else(|| Usage(format!("baseline `{b}` is not among the runs: {}", labels.join(", "))))?,
    };
    let rows: Vec<[Option<f64>; 6]> = runs.iter().map(summarize).collect();
    let seeds: Vec<usize> = runs.iter().map(|r| r.metrics.len()).collect();
    let best = best_per_column(&rows);

    create_dir(out)?;
    write(&out.join("summary.csv"), summary_csv(&labels, &rows, &seeds))?;
    write(&out.join("summary.md"), summary_md(&labels, &rows, &best))?;
    write(&out.join("improvement.csv"), improvement_csv(&labels, &rows, base))?;

    let mut eu = String::from("method,seed,eu\n");
    let mut groups = Vec::new();
    for (r, label) in runs.iter().zip(&labels) {
        for m in &r.metrics {
            let _ = writeln!(eu, "{label},{},{}", m.seed, m.eu);
        }
        groups.push((label.clone(), r.metrics.iter().map(|m| m.eu).collect()));
    }
    write(&out.join("eu_box.csv"), eu)?;
    write(
        &out.join("eu_box.svg"),
        boxes("Expected utility over seeds", "EU", &groups),
    )?;
    write(&out.join("front.csv"), solutions_table(&runs, &labels, true))?;
    write(&out.join("front.svg"), scatter("Pareto fronts", &runs, &labels, true))?;
    write(&out.join("solutions.csv"), solutions_table(&runs, &labels, false))?;
    write(
        &out.join("solutions.svg"),
        scatter("All solutions", &runs, &labels, false),
    )?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn improvement_examples() {
        let eu = pct_improvement(215.37, 203.37).unwrap();
        assert_eq!(format!("{eu:.1}"), "5.9");
        let sp = pct_improvement(4159.47, 11073.96).unwrap();
        assert_eq!(format!("{sp:.2}"), "-62.44");
        assert_eq!(pct_improvement(3.5, 3.5), Some(0.0));
        assert_eq!(pct_improvement(0.0, 0.0), Some(0.0));
        assert_eq!(pct_improvement(1.0, 0.0), None);
    }

    #[test]
    fn swapped_roles_are_not_negations() {
        let (a, b) = (120.0, 100.0);
        assert_eq!(pct_improvement(a, b), Some(20.0));
        let back = pct_improvement(b, a).unwrap();
        assert!((back + 100.0 / 6.0).abs() < 1e-12);
    }

    #[test]
    fn best_respects_direction_and_ties() {
        let rows = vec![
            [Some(1.0), Some(5.0), Some(2.0), None, Some(300.0), Some(1460.0)],
            [Some(2.0), Some(5.0), Some(1.0), None, Some(310.0), Some(1400.0)],
        ];
        let best = best_per_column(&rows);
        assert_eq!(best[0], vec![1]);
        assert_eq!(best[1], vec![0, 1]);
        assert_eq!(best[2], vec![1]);
        assert!(best[3].is_empty());
        assert_eq!(best[4], vec![0]);
        assert_eq!(best[5], vec![0]);
    }

    #[test]
    fn mean_skips_absent_values() {
        assert_eq!(mean([Some(1.0), None, Some(3.0)].into_iter()), Some(2.0));
        assert_eq!(mean([None, None].into_iter()), None);
    }
}
