//! SVG line and bar charts. Every chart is drawn from numbers read back out
//! of a CSV file, so re-plotting never changes the data.

use std::collections::BTreeMap;
use std::path::Path;

use plotters::prelude::*;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("column '{0}' not found")]
    MissingColumn(String),
    #[error("value '{value}' in column '{column}' is not a number")]
    NotNumeric { column: String, value: String },
    #[error("drawing failed: {0}")]
    Draw(String),
}

fn draw_err<E: std::fmt::Display>(e: E) -> PlotError {
    PlotError::Draw(e.to_string())
}

const PALETTE: [RGBColor; 6] = [
    RGBColor(31, 119, 180),
    RGBColor(255, 127, 14),
    RGBColor(44, 160, 44),
    RGBColor(214, 39, 40),
    RGBColor(148, 103, 189),
    RGBColor(140, 86, 75),
];

pub type Series = (String, Vec<(f64, f64)>);

fn padded_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

pub fn line_chart(path: &Path, title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<(), PlotError> {
    let root = SVGBackend::new(path, (720, 450)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let (x0, x1) = padded_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.0)));
    let (y0, y1) = padded_range(series.iter().flat_map(|s| s.1.iter().map(|p| p.1)));
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .x_desc(x_label)
        .y_desc(y_label)
        .draw()
        .map_err(draw_err)?;
    for (k, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        chart
            .draw_series(LineSeries::new(points.iter().copied(), color.stroke_width(2)))
            .map_err(draw_err)?
            .label(name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 18, y)], color.stroke_width(2)));
    }
    if series.len() > 1 || series.first().is_some_and(|s| !s.0.is_empty()) {
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(draw_err)?;
    }
    root.present().map_err(draw_err)
}

/// Vertical bars with optional symmetric error bars.
pub fn bar_chart(
    path: &Path,
    title: &str,
    y_label: &str,
    bars: &[(String, f64, Option<f64>)],
) -> Result<(), PlotError> {
    let root = SVGBackend::new(path, (720, 450)).into_drawing_area();
    root.fill(&WHITE).map_err(draw_err)?;
    let (y0, y1) = padded_range(bars.iter().flat_map(|(_, v, e)| {
        let e = e.unwrap_or(0.0);
        [v - e, v + e, 0.0]
    }));
    let n = bars.len().max(1);
    let labels: Vec<String> = bars.iter().map(|b| b.0.clone()).collect();
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 20))
        .margin(12)
        .x_label_area_size(36)
        .y_label_area_size(64)
        .build_cartesian_2d(0f64..n as f64, y0..y1)
        .map_err(draw_err)?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .x_labels(n)
        .x_label_formatter(&|x| {
            let k = (*x - 0.5).round();
            if k >= 0.0 && (x - 0.5 - k).abs() < 1e-6 {
                labels.get(k as usize).cloned().unwrap_or_default()
            } else {
                String::new()
            }
        })
        .y_desc(y_label)
        .draw()
        .map_err(draw_err)?;
    for (k, (_, v, err)) in bars.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let x = k as f64;
        chart
            .draw_series(std::iter::once(Rectangle::new(
                [(x + 0.15, 0.0), (x + 0.85, *v)],
                color.filled(),
            )))
            .map_err(draw_err)?;
        if let Some(e) = err {
            chart
                .draw_series(std::iter::once(PathElement::new(
                    vec![(x + 0.5, v - e), (x + 0.5, v + e)],
                    BLACK.stroke_width(2),
                )))
                .map_err(draw_err)?;
        }
    }
    root.present().map_err(draw_err)
}

/// Reads a CSV into a header list and string records.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>), PlotError> {
    let mut reader = csv::Reader::from_path(path)?;
    let headers = reader.headers()?.iter().map(str::to_string).collect();
    let rows = reader
        .records()
        .map(|r| r.map(|rec| rec.iter().map(str::to_string).collect()))
        .collect::<Result<_, _>>()?;
    Ok((headers, rows))
}

fn column(headers: &[String], name: &str) -> Result<usize, PlotError> {
    headers
        .iter()
        .position(|h| h == name)
        .ok_or_else(|| PlotError::MissingColumn(name.to_string()))
}

fn number(value: &str, column: &str) -> Result<f64, PlotError> {
    value.parse().map_err(|_| PlotError::NotNumeric {
        column: column.to_string(),
        value: value.to_string(),
    })
}

/// Groups `(x, y)` points by the value of `group` (or one unnamed series).
pub fn series_from_csv(csv_path: &Path, group: Option<&str>, x: &str, y: &str) -> Result<Vec<Series>, PlotError> {
    let (headers, rows) = read_table(csv_path)?;
    let (xi, yi) = (column(&headers, x)?, column(&headers, y)?);
    let gi = group.map(|g| column(&headers, g)).transpose()?;
    let mut groups: BTreeMap<String, Vec<(f64, f64)>> = BTreeMap::new();
    for row in &rows {
        let key = gi.map(|g| row[g].clone()).unwrap_or_default();
        groups
            .entry(key)
            .or_default()
            .push((number(&row[xi], x)?, number(&row[yi], y)?));
    }
    let label = |k: String| match group {
        Some(g) => format!("{g}={k}"),
        None => k,
    };
    Ok(groups.into_iter().map(|(k, v)| (label(k), v)).collect())
}

pub fn line_chart_from_csv(
    csv_path: &Path,
    svg_path: &Path,
    title: &str,
    group: Option<&str>,
    x: &str,
    y: &str,
) -> Result<(), PlotError> {
    let series = series_from_csv(csv_path, group, x, y)?;
    line_chart(svg_path, title, x, y, &series)
}

/// One bar per row, labelled by `label`, with an optional error column.
pub fn bar_chart_from_csv(
    csv_path: &Path,
    svg_path: &Path,
    title: &str,
    label: &str,
    value: &str,
    error: Option<&str>,
) -> Result<(), PlotError> {
    let (headers, rows) = read_table(csv_path)?;
    let (li, vi) = (column(&headers, label)?, column(&headers, value)?);
    let ei = error.map(|e| column(&headers, e)).transpose()?;
    let bars = rows
        .iter()
        .map(|r| {
            let err = match ei {
                Some(e) => Some(number(&r[e], error.unwrap_or_default())?),
                None => None,
            };
            Ok((r[li].clone(), number(&r[vi], value)?, err))
        })
        .collect::<Result<Vec<_>, PlotError>>()?;
    bar_chart(svg_path, title, value, &bars)
}
