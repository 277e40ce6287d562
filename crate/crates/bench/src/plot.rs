//! Plot data: whitespace-delimited series per (method, seed) and one SVG per figure.

use std::path::{Path, PathBuf};

use plotters::prelude::*;

use crate::error::{BenchError, Result};
use crate::runs::{Method, RunRecord};

pub const ERROR_SVG: &str = "error_vs_time.svg";
pub const INNER_SVG: &str = "inner_iterations.svg";

pub fn error_series_name(method: Method, seed: u64) -> String {
    format!("{}_seed{seed}_error.dat", method.id())
}

pub fn inner_series_name(method: Method, seed: u64) -> String {
    format!("{}_seed{seed}_inner.dat", method.id())
}

/// (seconds, ‖μ_ref − μ^(k)‖) for rows that carry an error.
pub fn error_series(r: &RunRecord) -> Vec<(f64, f64)> {
    r.rows.iter().filter_map(|row| row.mu_error.map(|e| (row.seconds, e))).collect()
}

/// (k, inner iterations) for every row after the start.
pub fn inner_series(r: &RunRecord) -> Vec<(usize, usize)> {
    r.rows.iter().skip(1).map(|row| (row.k, row.inner_iters)).collect()
}

fn write(path: &Path, text: String) -> Result<()> {
    std::fs::write(path, text).map_err(|e| BenchError::io(path, e))
}

/// Parses a series file written by [`emit_plot_data`].
pub fn read_series(path: &Path) -> Result<Vec<(f64, f64)>> {
    let text = std::fs::read_to_string(path).map_err(|e| BenchError::io(path, e))?;
    text.lines()
        .filter(|l| !l.starts_with('#') && !l.trim().is_empty())
        .map(|l| {
            let mut it = l.split_whitespace().map(str::parse::<f64>);
            match (it.next(), it.next()) {
                (Some(Ok(a)), Some(Ok(b))) => Ok((a, b)),
                _ => Err(BenchError::Output(format!("{}: bad line {l:?}", path.display()))),
            }
        })
        .collect()
}

fn draw_err(e: impl std::fmt::Display) -> BenchError {
    BenchError::Output(format!("svg: {e}"))
}

fn colour(i: usize) -> RGBColor {
    const P: [RGBColor; 6] = [
        RGBColor(31, 119, 180),
        RGBColor(214, 39, 40),
        RGBColor(44, 160, 44),
        RGBColor(255, 127, 14),
        RGBColor(148, 103, 189),
        RGBColor(140, 86, 75),
    ];
    P[i % P.len()]
}

fn method_index(m: Method) -> usize {
    Method::ALL.iter().position(|x| *x == m).unwrap_or(0)
}

fn error_chart(records: &[RunRecord], path: &Path) -> Result<()> {
    let series: Vec<(Method, Vec<(f64, f64)>)> = records
        .iter()
        .map(|r| (r.method, error_series(r).into_iter().filter(|p| p.1 > 0.0).collect::<Vec<_>>()))
        .collect();
    let pts = series.iter().flat_map(|(_, s)| s.iter());
    let tmax = pts.clone().map(|p| p.0).fold(0.0, f64::max).max(1e-3);
    let emin = pts.clone().map(|p| p.1).fold(f64::INFINITY, f64::min);
    let emax = pts.map(|p| p.1).fold(0.0, f64::max);
    let (emin, emax) = if emin.is_finite() && emax > 0.0 { (emin * 0.5, emax * 2.0) } else { (1e-8, 1.0) };

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(70)
        .build_cartesian_2d(0.0..tmax * 1.05, (emin..emax).log_scale())
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("time [s]")
        .y_desc("parameter error")
        .draw()
        .map_err(draw_err)?;
    for (m, s) in &series {
        let c = colour(method_index(*m));
        chart.draw_series(LineSeries::new(s.iter().copied(), &c)).map_err(draw_err)?;
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

fn inner_chart(records: &[RunRecord], path: &Path) -> Result<()> {
    let series: Vec<(Method, Vec<(f64, f64)>)> = records
        .iter()
        .map(|r| (r.method, inner_series(r).into_iter().map(|(k, l)| (k as f64, l as f64)).collect()))
        .collect();
    let kmax = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.0)).fold(1.0, f64::max);
    let lmax = series.iter().flat_map(|(_, s)| s.iter().map(|p| p.1)).fold(1.0, f64::max);
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .margin(20)
        .x_label_area_size(40)
        .y_label_area_size(50)
        .build_cartesian_2d(0.0..kmax + 0.5, 0.0..lmax * 1.1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("outer iteration k")
        .y_desc("inner iterations")
        .draw()
        .map_err(draw_err)?;
    for (m, s) in &series {
        let c = colour(method_index(*m));
        chart.draw_series(LineSeries::new(s.iter().copied(), &c)).map_err(draw_err)?;
    }
    root.present().map_err(draw_err)?;
    Ok(())
}

/// Writes both series files for every record plus the two charts and returns
/// the paths written. An empty input writes nothing.
pub fn emit_plot_data(records: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if records.is_empty() {
        log::warn!("no run records: no plot data written");
        return Ok(Vec::new());
    }
    std::fs::create_dir_all(out_dir).map_err(|e| BenchError::io(out_dir, e))?;
    let mut written = Vec::new();
    for r in records {
        let p = out_dir.join(error_series_name(r.method, r.seed));
        let mut text = format!("# {} seed {}: seconds parameter_error\n", r.method, r.seed);
        for (t, e) in error_series(r) {
            text.push_str(&format!("{t} {e}\n"));
        }
        write(&p, text)?;
        written.push(p);

        let p = out_dir.join(inner_series_name(r.method, r.seed));
        let mut text = format!("# {} seed {}: k inner_iterations\n", r.method, r.seed);
        for (k, l) in inner_series(r) {
            text.push_str(&format!("{k} {l}\n"));
        }
        write(&p, text)?;
        written.push(p);
    }
    for (name, f) in [(ERROR_SVG, error_chart as fn(&[RunRecord], &Path) -> Result<()>), (INNER_SVG, inner_chart)] {
        let p = out_dir.join(name);
        f(records, &p)?;
        written.push(p);
    }
    Ok(written)
}
