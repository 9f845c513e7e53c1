//! SVG charts.

use std::path::Path;

use plotters::prelude::*;

use crate::error::{Error, Result};
use crate::trainer::EpochRecord;

fn plot_err(path: &Path) -> impl Fn(String) -> Error + '_ {
    move |e| Error::Serde(format!("{}: {e}", path.display()))
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-6);
    (lo - pad, hi + pad)
}

/// One labelled series of `(x, y)` points.
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

/// Line chart with markers, one colour per series.
pub fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<()> {
    let err = plot_err(path);
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (x0, x1) = range(all().map(|p| p.0));
    let (y0, y1) = range(all().map(|p| p.1));
    let root = SVGBackend::new(path, (720, 480)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(|e| err(e.to_string()))?;
    for (i, s) in series.iter().enumerate() {
        let colour = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), colour.stroke_width(2)))
            .map_err(|e| err(e.to_string()))?
            .label(s.label.clone())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 16, y)], colour.stroke_width(2)));
        chart
            .draw_series(s.points.iter().map(|&p| Circle::new(p, 3, colour.filled())))
            .map_err(|e| err(e.to_string()))?;
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(e.to_string()))?;
    root.present().map_err(|e| err(e.to_string()))
}

/// Scatter plot, one colour per class.
pub fn scatter_chart(path: &Path, title: &str, coords: &[[f64; 2]], classes: &[usize], names: &[String]) -> Result<()> {
    let series: Vec<Series> = names
        .iter()
        .enumerate()
        .map(|(c, name)| Series {
            label: name.clone(),
            points: coords
                .iter()
                .zip(classes)
                .filter(|(_, &k)| k == c)
                .map(|(p, _)| (p[0], p[1]))
                .collect(),
        })
        .collect();
    let err = plot_err(path);
    let (x0, x1) = range(coords.iter().map(|p| p[0]));
    let (y0, y1) = range(coords.iter().map(|p| p[1]));
    let root = SVGBackend::new(path, (720, 600)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| err(e.to_string()))?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(56)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| err(e.to_string()))?;
    chart
        .configure_mesh()
        .x_desc("PC 1")
        .y_desc("PC 2")
        .draw()
        .map_err(|e| err(e.to_string()))?;
    for (i, s) in series.iter().enumerate() {
        let colour = Palette99::pick(i).to_rgba();
        chart
            .draw_series(s.points.iter().map(|&p| Circle::new(p, 3, colour.filled())))
            .map_err(|e| err(e.to_string()))?
            .label(s.label.clone())
            .legend(move |(x, y)| Circle::new((x + 8, y), 3, colour.filled()));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.8))
        .border_style(BLACK)
        .draw()
        .map_err(|e| err(e.to_string()))?;
    root.present().map_err(|e| err(e.to_string()))
}

/// Per-epoch loss curves.
pub fn trace_chart(path: &Path, trace: &[EpochRecord]) -> Result<()> {
    let pick = |f: fn(&EpochRecord) -> f64| trace.iter().map(|r| (f64::from(r.epoch), f(r))).collect();
    line_chart(
        path,
        "Pretraining losses",
        "epoch",
        "loss",
        &[
            Series {
                label: "mean CE".into(),
                points: pick(|r| r.mean_ce),
            },
            Series {
                label: "weighted DWV".into(),
                points: pick(|r| r.mean_dwv),
            },
        ],
    )
}
