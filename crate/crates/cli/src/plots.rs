//! SVG charts of a report: root value against the radius and, when the
//! policies were simulated, their cost statistics.

use std::fs;
use std::path::Path;

use drd_opf::report::Report;
use plotters::prelude::*;

use crate::CliError;

pub fn write_all(report: &Report, dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(|e| CliError::Io(dir.to_path_buf(), e))?;
    let points: Vec<(f64, f64)> = report.rows.iter().map(|r| (r.gamma, r.root_value)).collect();
    write_svg(&dir.join("root_value.svg"), |area| root_value(area, &points))?;

    let sims: Vec<_> = report
        .rows
        .iter()
        .filter_map(|r| r.simulation.as_ref().map(|s| (r.gamma, s)))
        .collect();
    if !sims.is_empty() {
        let mean: Vec<(f64, f64, f64)> = sims.iter().map(|(g, s)| (*g, s.mean, s.std_dev)).collect();
        let p90: Vec<(f64, f64)> = sims.iter().map(|(g, s)| (*g, s.p90)).collect();
        write_svg(&dir.join("simulated_cost.svg"), |area| simulated_cost(area, &mean, &p90))?;
    }
    Ok(())
}

type Area<'a> = DrawingArea<SVGBackend<'a>, plotters::coord::Shift>;
type DrawResult = Result<(), Box<dyn std::error::Error + 'static>>;

fn write_svg(path: &Path, draw: impl FnOnce(&Area<'_>) -> DrawResult) -> Result<(), CliError> {
    let mut svg = String::new();
    {
        let area = SVGBackend::with_string(&mut svg, (720, 480)).into_drawing_area();
        area.fill(&WHITE).map_err(plot_err)?;
        draw(&area).map_err(|e| CliError::Plot(e.to_string()))?;
        area.present().map_err(plot_err)?;
    }
    fs::write(path, svg).map_err(|e| CliError::Io(path.to_path_buf(), e))
}

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Plot(e.to_string())
}

/// Axis range covering `values` with a small margin; degenerate ranges are
/// widened so the chart still has extent.
fn padded(values: impl Iterator<Item = f64>) -> std::ops::Range<f64> {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return 0.0..1.0;
    }
    let pad = if hi > lo { 0.08 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    (lo - pad)..(hi + pad)
}

fn root_value(area: &Area<'_>, points: &[(f64, f64)]) -> DrawResult {
    let mut chart = ChartBuilder::on(area)
        .caption("Robust cost-to-go at the initial dispatch", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(80)
        .build_cartesian_2d(padded(points.iter().map(|p| p.0)), padded(points.iter().map(|p| p.1)))?;
    chart.configure_mesh().x_desc("radius γ").y_desc("root value ($)").draw()?;
    chart.draw_series(LineSeries::new(points.iter().copied(), &BLUE))?;
    chart.draw_series(points.iter().map(|&p| Circle::new(p, 4, BLUE.filled())))?;
    Ok(())
}

fn simulated_cost(area: &Area<'_>, mean: &[(f64, f64, f64)], p90: &[(f64, f64)]) -> DrawResult {
    let ys = mean
        .iter()
        .flat_map(|&(_, m, s)| [m - s, m + s])
        .chain(p90.iter().map(|p| p.1));
    let mut chart = ChartBuilder::on(area)
        .caption("Simulated total cost", ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(80)
        .build_cartesian_2d(padded(mean.iter().map(|p| p.0)), padded(ys))?;
    chart.configure_mesh().x_desc("radius γ").y_desc("cost ($)").draw()?;

    chart
        .draw_series(mean.iter().map(|&(g, m, s)| {
            ErrorBar::new_vertical(g, m - s, m, m + s, BLUE.filled(), 8)
        }))?
        .label("mean ± std")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], BLUE));
    chart.draw_series(LineSeries::new(mean.iter().map(|&(g, m, _)| (g, m)), &BLUE))?;
    chart
        .draw_series(LineSeries::new(p90.iter().copied(), &RED))?
        .label("p90")
        .legend(|(x, y)| PathElement::new([(x, y), (x + 16, y)], RED));
    chart.draw_series(p90.iter().map(|&p| TriangleMarker::new(p, 5, RED.filled())))?;
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()?;
    Ok(())
}
