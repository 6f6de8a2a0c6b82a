//! SVG plots read from CSV tables. Presentation only.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;
use serde::Deserialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("table is empty")]
    EmptyTable,
    #[error("table: {0}")]
    Csv(#[from] csv::Error),
    #[error("drawing: {0}")]
    Draw(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlotKind {
    /// Columns `x, regime, value`: one line per regime.
    ValueVsX,
    /// Columns `n, mean, stderr`: estimates with ±2 stderr bars.
    JVsN,
    /// Columns `x, regime, pde_residual, gradient_residual, region`.
    ResidualHeatline,
}

impl PlotKind {
    pub fn file_stem(&self) -> &'static str {
        match self {
            PlotKind::ValueVsX => "value_vs_x",
            PlotKind::JVsN => "J_vs_n",
            PlotKind::ResidualHeatline => "residual_heatline",
        }
    }
}

#[derive(Deserialize)]
struct ValueRow {
    x: f64,
    regime: usize,
    value: f64,
}

#[derive(Deserialize)]
struct JRow {
    n: f64,
    mean: f64,
    stderr: f64,
}

#[derive(Deserialize)]
struct ResidualRow {
    x: f64,
    regime: usize,
    pde_residual: f64,
    gradient_residual: f64,
    region: String,
}

fn read<T: for<'de> Deserialize<'de>>(csv_text: &str) -> Result<Vec<T>, PlotError> {
    let rows = csv::Reader::from_reader(csv_text.as_bytes()).deserialize().collect::<Result<Vec<T>, _>>()?;
    if rows.is_empty() {
        return Err(PlotError::EmptyTable);
    }
    Ok(rows)
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 * lo.abs().max(1.0) };
    (lo - pad, hi + pad)
}

fn draw_err<E: std::fmt::Display>(e: E) -> PlotError {
    PlotError::Draw(e.to_string())
}

/// Writes an SVG of `csv_text` to `out`.
pub fn emit_plot(kind: PlotKind, csv_text: &str, title: &str, out: &Path) -> Result<(), PlotError> {
    let root = SVGBackend::new(out, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    match kind {
        PlotKind::ValueVsX => {
            let rows: Vec<ValueRow> = read(csv_text)?;
            let mut lines: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
            for r in &rows {
                lines.entry(r.regime).or_default().push((r.x, r.value));
            }
            let xr = bounds(rows.iter().map(|r| r.x));
            let yr = bounds(rows.iter().map(|r| r.value));
            let mut chart = ChartBuilder::on(&root)
                .caption(title, ("sans-serif", 20))
                .margin(10)
                .x_label_area_size(35)
                .y_label_area_size(50)
                .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)
                .map_err(draw_err)?;
            chart.configure_mesh().x_desc("x").y_desc("value").draw().map_err(draw_err)?;
            for (i, (regime, pts)) in lines.into_iter().enumerate() {
                let color = Palette99::pick(i).to_rgba();
                chart
                    .draw_series(LineSeries::new(pts, color.stroke_width(2)))
                    .map_err(draw_err)?
                    .label(format!("regime {regime}"))
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
            }
            chart.configure_series_labels().border_style(BLACK).draw().map_err(draw_err)?;
        }
        PlotKind::JVsN => {
            let rows: Vec<JRow> = read(csv_text)?;
            let xr = bounds(rows.iter().map(|r| r.n.log2()));
            let yr = bounds(rows.iter().flat_map(|r| [r.mean - 2.0 * r.stderr, r.mean + 2.0 * r.stderr]));
            let mut chart = ChartBuilder::on(&root)
                .caption(title, ("sans-serif", 20))
                .margin(10)
                .x_label_area_size(35)
                .y_label_area_size(60)
                .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)
                .map_err(draw_err)?;
            chart.configure_mesh().x_desc("log2 n").y_desc("J estimate").draw().map_err(draw_err)?;
            chart
                .draw_series(LineSeries::new(rows.iter().map(|r| (r.n.log2(), r.mean)), BLUE.stroke_width(2)))
                .map_err(draw_err)?;
            chart
                .draw_series(rows.iter().map(|r| {
                    let x = r.n.log2();
                    PathElement::new(vec![(x, r.mean - 2.0 * r.stderr), (x, r.mean + 2.0 * r.stderr)], BLACK)
                }))
                .map_err(draw_err)?;
        }
        PlotKind::ResidualHeatline => {
            let rows: Vec<ResidualRow> = read(csv_text)?;
            let xr = bounds(rows.iter().map(|r| r.x));
            let yr = bounds(rows.iter().flat_map(|r| [r.pde_residual, r.gradient_residual]));
            let mut chart = ChartBuilder::on(&root)
                .caption(title, ("sans-serif", 20))
                .margin(10)
                .x_label_area_size(35)
                .y_label_area_size(60)
                .build_cartesian_2d(xr.0..xr.1, yr.0..yr.1)
                .map_err(draw_err)?;
            chart.configure_mesh().x_desc("x").y_desc("residual").draw().map_err(draw_err)?;
            let mut by_regime: BTreeMap<usize, Vec<&ResidualRow>> = BTreeMap::new();
            for r in &rows {
                by_regime.entry(r.regime).or_default().push(r);
            }
            for (i, (regime, pts)) in by_regime.into_iter().enumerate() {
                let color = Palette99::pick(2 * i).to_rgba();
                let color2 = Palette99::pick(2 * i + 1).to_rgba();
                chart
                    .draw_series(LineSeries::new(pts.iter().map(|r| (r.x, r.pde_residual)), color.stroke_width(2)))
                    .map_err(draw_err)?
                    .label(format!("(L-r)phi, regime {regime}"))
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color));
                chart
                    .draw_series(LineSeries::new(pts.iter().map(|r| (r.x, r.gradient_residual)), color2.stroke_width(2)))
                    .map_err(draw_err)?
                    .label(format!("f - phi', regime {regime}"))
                    .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color2));
            }
            // region strip along the bottom edge
            let y0 = yr.0;
            let h = 0.03 * (yr.1 - yr.0);
            chart
                .draw_series(rows.windows(2).filter(|w| w[0].regime == w[1].regime).map(|w| {
                    let color = match w[0].region.as_str() {
                        "continuation" => GREEN.mix(0.6),
                        "harvest" => BLUE.mix(0.6),
                        _ => RED.mix(0.8),
                    };
                    let off = w[0].regime as f64 * h;
                    Rectangle::new([(w[0].x, y0 + off), (w[1].x, y0 + off + h)], color.filled())
                }))
                .map_err(draw_err)?;
            chart.configure_series_labels().border_style(BLACK).draw().map_err(draw_err)?;
        }
    }
    root.present().map_err(draw_err)?;
    Ok(())
}
