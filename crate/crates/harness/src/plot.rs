//! SVG plots plus the CSV data behind them.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use polyp_metrics::FrocPoint;

use crate::error::{Error, Result};
use crate::train::RunRecord;

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Plot(e.to_string())
}

struct Series {
    label: String,
    points: Vec<(f64, f64)>,
}

fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let all = series.iter().flat_map(|s| s.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        (x0, x1, y0, y1) = (x0.min(x), x1.max(x), y0.min(y), y1.max(y));
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    let pad = |a: f64, b: f64| if b > a { (a, b) } else { (a - 0.5, a + 0.5) };
    let ((x0, x1), (y0, y1)) = (pad(x0, x1), pad(y0, y1));

    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(plot_err)?;
    chart.configure_mesh().x_desc(x_label).y_desc(y_label).draw().map_err(plot_err)?;
    for (i, s) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)?;
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::file(path, e))
}

/// Per-iteration total loss of each run, overlaid in one chart and labelled
/// by config name. Writes `loss_curves.svg` and `loss_curves.csv`.
pub fn plot_loss_curves(runs: &[RunRecord], out_dir: &Path) -> Result<Vec<PathBuf>> {
    if runs.is_empty() {
        return Err(Error::Config("no runs to plot".into()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::file(out_dir, e))?;
    let mut csv = String::from("run,iteration,epoch,loss\n");
    let series: Vec<Series> = runs
        .iter()
        .map(|r| {
            for it in &r.iterations {
                writeln!(csv, "{},{},{},{:.8}", r.config.name, it.iteration, it.epoch, it.loss.total).unwrap();
            }
            Series {
                label: r.config.name.clone(),
                points: r.iterations.iter().map(|it| (it.iteration as f64, it.loss.total)).collect(),
            }
        })
        .collect();
    let svg = out_dir.join("loss_curves.svg");
    let csv_path = out_dir.join("loss_curves.csv");
    line_chart(&svg, "Training loss", "iteration", "loss", &series)?;
    write_text(&csv_path, &csv)?;
    Ok(vec![svg, csv_path])
}

/// FROC curves (TPR against false positives per image), one per dataset.
pub fn plot_froc(curves: &[(String, Vec<FrocPoint>)], path: &Path) -> Result<PathBuf> {
    let series: Vec<Series> = curves
        .iter()
        .map(|(name, pts)| {
            let mut points: Vec<(f64, f64)> = pts.iter().map(|p| (p.fp_per_image, p.tpr)).collect();
            points.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
            Series { label: name.clone(), points }
        })
        .collect();
    line_chart(path, "FROC", "false positives per image", "true positive rate", &series)?;
    Ok(path.to_path_buf())
}
