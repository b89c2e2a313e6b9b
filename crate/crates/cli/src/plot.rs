//! SVG plot of mean cumulative regret with a one-standard-deviation band.

use std::path::Path;

use plotters::prelude::*;
use thiserror::Error;

use crate::runner::CurvePoint;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("no algorithms to plot")]
    Empty,
    #[error("drawing failed: {0}")]
    Draw(String),
}

fn draw_err<E: std::fmt::Display>(e: E) -> PlotError {
    PlotError::Draw(e.to_string())
}

/// Groups points by algorithm in order of first appearance.
pub fn group_curves(points: &[CurvePoint]) -> Vec<(String, Vec<&CurvePoint>)> {
    let mut groups: Vec<(String, Vec<&CurvePoint>)> = Vec::new();
    for p in points {
        match groups.iter_mut().find(|(name, _)| *name == p.algorithm) {
            Some((_, v)) => v.push(p),
            None => groups.push((p.algorithm.clone(), vec![p])),
        }
    }
    groups
}

/// Draws one line per algorithm; a band is added when it has two or more
/// runs. Nothing is written when `points` is empty.
pub fn plot_regret(points: &[CurvePoint], out: &Path) -> Result<(), PlotError> {
    let groups = group_curves(points);
    if groups.is_empty() {
        return Err(PlotError::Empty);
    }
    let t_max = points.iter().map(|p| p.t).max().unwrap_or(1).max(2) as f64;
    let y_max = points
        .iter()
        .map(|p| p.mean + if p.runs > 1 { p.std } else { 0.0 })
        .fold(0.0, f64::max)
        .max(1e-9)
        * 1.05;

    let root = SVGBackend::new(out, (800, 560)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption("Cumulative regret vs. rounds", ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(42)
        .y_label_area_size(64)
        .build_cartesian_2d(1f64..t_max, 0f64..y_max)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc("round t")
        .y_desc("mean cumulative regret")
        .draw()
        .map_err(draw_err)?;

    for (i, (name, pts)) in groups.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        if pts.iter().all(|p| p.runs > 1) {
            let upper = pts.iter().map(|p| (p.t as f64, p.mean + p.std));
            let lower = pts.iter().rev().map(|p| (p.t as f64, (p.mean - p.std).max(0.0)));
            chart
                .draw_series(std::iter::once(Polygon::new(upper.chain(lower).collect::<Vec<_>>(), color.mix(0.2))))
                .map_err(draw_err)?;
        }
        chart
            .draw_series(LineSeries::new(pts.iter().map(|p| (p.t as f64, p.mean)), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .position(SeriesLabelPosition::UpperLeft)
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(draw_err)?;
    root.present().map_err(draw_err)?;
    Ok(())
}
