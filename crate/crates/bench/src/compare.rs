//! Per-method summary tables: averages with (min/max) and speed-up over the FOM baseline.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{BenchError, Result};
use crate::runs::{Method, RunRecord};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub avg: f64,
    pub min: f64,
    pub max: f64,
}

impl Stat {
    fn of(values: impl IntoIterator<Item = f64>) -> Option<Stat> {
        let v: Vec<f64> = values.into_iter().collect();
        if v.is_empty() {
            return None;
        }
        Some(Stat {
            avg: v.iter().sum::<f64>() / v.len() as f64,
            min: v.iter().copied().fold(f64::INFINITY, f64::min),
            max: v.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub runs: usize,
    pub converged: usize,
    pub runtime: Stat,
    /// Baseline average runtime over this method's; `None` without a baseline.
    pub speedup: Option<f64>,
    pub iterations: Stat,
    pub relative_error: Option<Stat>,
    pub foc: Stat,
    pub fom_solves: Stat,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub methods: Vec<MethodSummary>,
    pub note: Option<String>,
}

pub const CSV_HEADER: [&str; 17] = [
    "method",
    "runs",
    "converged",
    "runtime[s] avg.",
    "runtime[s] min",
    "runtime[s] max",
    "speed-up",
    "iterations k avg.",
    "iterations k min",
    "iterations k max",
    "rel. error avg.",
    "rel. error min",
    "rel. error max",
    "FOC cond. avg.",
    "FOC cond. max",
    "FOM solves avg.",
    "FOM solves max",
];

pub fn compare_methods(records: &[RunRecord]) -> Result<Comparison> {
    if records.is_empty() {
        return Err(BenchError::Validation("nothing to compare: no run records".into()));
    }
    let mut by_method: BTreeMap<Method, Vec<&RunRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method).or_default().push(r);
    }
    let mut methods: Vec<MethodSummary> = by_method
        .iter()
        .map(|(&method, rs)| MethodSummary {
            method,
            runs: rs.len(),
            converged: rs.iter().filter(|r| r.summary.converged).count(),
            runtime: Stat::of(rs.iter().map(|r| r.summary.total_seconds)).expect("nonempty"),
            speedup: None,
            iterations: Stat::of(rs.iter().map(|r| r.summary.iterations as f64)).expect("nonempty"),
            relative_error: if rs.iter().all(|r| r.summary.relative_error.is_some()) {
                Stat::of(rs.iter().filter_map(|r| r.summary.relative_error))
            } else {
                None
            },
            foc: Stat::of(rs.iter().map(|r| r.summary.g_h)).expect("nonempty"),
            fom_solves: Stat::of(rs.iter().map(|r| r.summary.fom_solves as f64)).expect("nonempty"),
        })
        .collect();
    let baseline = methods.iter().find(|m| m.method == Method::FomTrNewtonCg).map(|m| m.runtime.avg);
    let note = match baseline {
        Some(b) => {
            for m in &mut methods {
                m.speedup = Some(b / m.runtime.avg);
            }
            None
        }
        None => Some("no fom-tr-newton-cg records: speed-up column omitted".to_string()),
    };
    Ok(Comparison { methods, note })
}

fn num(x: f64) -> String {
    format!("{x:.6e}")
}

impl Comparison {
    fn has_speedup(&self) -> bool {
        self.note.is_none()
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header: Vec<&str> =
            CSV_HEADER.iter().copied().filter(|h| self.has_speedup() || *h != "speed-up").collect();
        let io = |e: csv::Error| BenchError::Output(format!("csv: {e}"));
        w.write_record(&header).map_err(io)?;
        for m in &self.methods {
            let opt = |s: Option<Stat>, f: fn(Stat) -> f64| s.map(|s| num(f(s))).unwrap_or_default();
            let mut row = vec![
                m.method.id().to_string(),
                m.runs.to_string(),
                m.converged.to_string(),
                num(m.runtime.avg),
                num(m.runtime.min),
                num(m.runtime.max),
            ];
            if self.has_speedup() {
                row.push(m.speedup.map(num).unwrap_or_default());
            }
            row.extend([
                num(m.iterations.avg),
                num(m.iterations.min),
                num(m.iterations.max),
                opt(m.relative_error, |s| s.avg),
                opt(m.relative_error, |s| s.min),
                opt(m.relative_error, |s| s.max),
                num(m.foc.avg),
                num(m.foc.max),
                num(m.fom_solves.avg),
                num(m.fom_solves.max),
            ]);
            w.write_record(&row).map_err(io)?;
        }
        let bytes = w.into_inner().map_err(|e| BenchError::Output(format!("csv: {e}")))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }

    /// Aligned, human-readable version of the table.
    pub fn to_text(&self) -> String {
        let mut header = vec!["method", "runtime[s] avg. (min/max)"];
        if self.has_speedup() {
            header.push("speed-up");
        }
        header.extend(["iterations k", "rel. error", "FOC cond.", "FOM solves", "conv."]);
        let rows: Vec<Vec<String>> = self
            .methods
            .iter()
            .map(|m| {
                let mut r = vec![
                    m.method.label().to_string(),
                    format!("{:.3} ({:.3}/{:.3})", m.runtime.avg, m.runtime.min, m.runtime.max),
                ];
                if self.has_speedup() {
                    r.push(m.speedup.map_or("-".into(), |s| format!("{s:.2}")));
                }
                r.push(format!("{:.1} ({}/{})", m.iterations.avg, m.iterations.min, m.iterations.max));
                r.push(m.relative_error.map_or("-".into(), |s| format!("{:.2e} ({:.2e}/{:.2e})", s.avg, s.min, s.max)));
                r.push(format!("{:.2e}", m.foc.avg));
                r.push(format!("{:.1}", m.fom_solves.avg));
                r.push(format!("{}/{}", m.converged, m.runs));
                r
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].chars().count()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| {
            cells.iter().zip(&widths).map(|(c, w)| format!("{c:<w$}")).collect::<Vec<_>>().join("  ").trim_end().to_string()
        };
        let mut out = String::new();
        let head: Vec<String> = header.iter().map(|s| s.to_string()).collect();
        let _ = writeln!(out, "{}", line(&head));
        let _ = writeln!(out, "{}", widths.iter().map(|w| "-".repeat(*w)).collect::<Vec<_>>().join("  "));
        for r in &rows {
            let _ = writeln!(out, "{}", line(r));
        }
        if let Some(n) = &self.note {
            let _ = writeln!(out, "note: {n}");
        }
        out
    }
}
