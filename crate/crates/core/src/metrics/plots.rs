//! Minimal plot emitters: SVG line charts and PNG error maps.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use crate::error::{shape_err, Error, Result};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// A named polyline; `x` and `y` have equal lengths.
#[derive(Debug, Clone)]
pub struct Series {
    pub name: String,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

impl Series {
    pub fn new(name: impl Into<String>, y: Vec<f64>) -> Self {
        let x = (0..y.len()).map(|i| i as f64).collect();
        Self { name: name.into(), x, y }
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Renders the series as an SVG line chart.
pub fn line_chart_svg(title: &str, x_label: &str, y_label: &str, series: &[Series]) -> Result<String> {
    if let Some(s) = series.iter().find(|s| s.x.len() != s.y.len()) {
        return Err(shape_err!("series `{}` has {} x and {} y values", s.name, s.x.len(), s.y.len()));
    }
    let (x0, x1) = bounds(series.iter().flat_map(|s| s.x.iter().copied()));
    let (y0, y1) = bounds(series.iter().flat_map(|s| s.y.iter().copied()));
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (y - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    let _ = writeln!(
        svg,
        r#"<path d="M{m} {t} L{m} {b} L{r} {b}" stroke="black" fill="none"/>"#,
        m = MARGIN,
        t = MARGIN,
        b = HEIGHT - MARGIN,
        r = WIDTH - MARGIN
    );
    for (v, y) in [(y0, py(y0)), (y1, py(y1))] {
        let _ = writeln!(svg, r#"<text x="{}" y="{y:.1}" text-anchor="end">{v:.4}</text>"#, MARGIN - 4.0);
    }
    for (v, x) in [(x0, px(x0)), (x1, px(x1))] {
        let _ = writeln!(svg, r#"<text x="{x:.1}" y="{}" text-anchor="middle">{v:.0}</text>"#, HEIGHT - MARGIN + 16.0);
    }
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>"#,
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let points: Vec<String> = s
            .x
            .iter()
            .zip(&s.y)
            .filter(|(_, y)| y.is_finite())
            .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" stroke="{color}" fill="none" stroke-width="1.5"/>"#,
            points.join(" ")
        );
        let ly = MARGIN + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<text x="{}" y="{ly}" fill="{color}" text-anchor="end">{}</text>"#,
            WIDTH - MARGIN,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    Ok(svg)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn write_svg(path: &Path, svg: &str) -> Result<()> {
    fs::write(path, svg).map_err(|e| Error::io(path, e))
}

/// Prediction and ground truth along image row `row`.
pub fn cross_section_svg(pred: &Array2<f32>, gt: &Array2<f32>, row: usize) -> Result<String> {
    if pred.dim() != gt.dim() {
        return Err(shape_err!("prediction {:?} and ground truth {:?} differ", pred.dim(), gt.dim()));
    }
    if row >= gt.nrows() {
        return Err(shape_err!("row {row} outside a {}-row map", gt.nrows()));
    }
    let take = |a: &Array2<f32>| a.row(row).iter().map(|v| *v as f64).collect::<Vec<_>>();
    line_chart_svg(
        &format!("cross-section at row {row}"),
        "column (px)",
        "height (mm)",
        &[Series::new("ground truth", take(gt)), Series::new("prediction", take(pred))],
    )
}

/// Absolute error map: black outside the mask, blue to red scaled by
/// `max_error_mm` inside it.
pub fn error_map_png(path: &Path, pred: &Array2<f32>, gt: &Array2<f32>, mask: &Array2<bool>, max_error_mm: f64) -> Result<()> {
    if pred.dim() != gt.dim() || gt.dim() != mask.dim() {
        return Err(shape_err!("error map inputs differ in shape"));
    }
    let (h, w) = gt.dim();
    let scale = if max_error_mm > 0.0 { max_error_mm } else { 1.0 };
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let ix = (y as usize, x as usize);
        if !mask[ix] {
            return Rgb([0, 0, 0]);
        }
        let t = ((pred[ix] - gt[ix]).abs() as f64 / scale).clamp(0.0, 1.0);
        Rgb([(255.0 * t) as u8, (255.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8, (255.0 * (1.0 - t)) as u8])
    });
    img.save_with_format(path, image::ImageFormat::Png).map_err(|e| match e {
        image::ImageError::IoError(io) => Error::io(path, io),
        other => Error::Image(other),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn chart_contains_every_series() {
        let svg = line_chart_svg(
            "t",
            "epoch",
            "rmse",
            &[Series::new("train", vec![3.0, 2.0, 1.0]), Series::new("val <a>", vec![3.5, 2.5, 2.0])],
        )
        .unwrap();
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("val &lt;a&gt;"));
    }

    #[test]
    fn cross_section_rejects_bad_row() {
        let a = Array2::<f32>::zeros((4, 4));
        assert!(cross_section_svg(&a, &a, 4).is_err());
        assert!(cross_section_svg(&a, &a, 3).is_ok());
    }
}
