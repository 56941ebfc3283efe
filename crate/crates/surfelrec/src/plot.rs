//! Tiny PNG line plots for per-keyframe map statistics.

use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};

const MARGIN: u32 = 24;

/// Writes a polyline plot of one or more series over a shared x index.
/// Series are drawn in fixed distinct colors on a white background with a
/// black frame; axes are scaled to the data range.
pub fn write_line_plot(
    path: &Path,
    series: &[(&str, &[f64])],
    width: u32,
    height: u32,
) -> Result<()> {
    if series.is_empty() || series.iter().any(|(_, s)| s.is_empty()) {
        return Err(Error::Domain("plot needs at least one non-empty series".into()));
    }
    let mut img = RgbImage::from_pixel(width, height, Rgb([255, 255, 255]));
    let (x0, y0) = (MARGIN, MARGIN);
    let (x1, y1) = (width - MARGIN, height - MARGIN);
    for x in x0..=x1 {
        img.put_pixel(x, y1, Rgb([0, 0, 0]));
    }
    for y in y0..=y1 {
        img.put_pixel(x0, y, Rgb([0, 0, 0]));
    }

    let n = series.iter().map(|(_, s)| s.len()).max().unwrap();
    let vmax = series
        .iter()
        .flat_map(|(_, s)| s.iter().copied())
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1e-12);
    let vmin = series
        .iter()
        .flat_map(|(_, s)| s.iter().copied())
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let colors = [
        Rgb([30, 90, 200]),
        Rgb([200, 60, 40]),
        Rgb([30, 150, 70]),
        Rgb([150, 60, 180]),
    ];
    for (si, (_, s)) in series.iter().enumerate() {
        let color = colors[si % colors.len()];
        let to_px = |i: usize, v: f64| -> (i64, i64) {
            let fx = if n <= 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
            let fy = (v - vmin) / (vmax - vmin);
            (
                (x0 as f64 + fx * (x1 - x0) as f64).round() as i64,
                (y1 as f64 - fy * (y1 - y0) as f64).round() as i64,
            )
        };
        for i in 1..s.len() {
            let (ax, ay) = to_px(i - 1, s[i - 1]);
            let (bx, by) = to_px(i, s[i]);
            draw_line(&mut img, ax, ay, bx, by, color);
        }
        if s.len() == 1 {
            let (ax, ay) = to_px(0, s[0]);
            draw_line(&mut img, ax, ay, ax, ay, color);
        }
    }
    img.save(path)
        .map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

fn draw_line(img: &mut RgbImage, mut x0: i64, mut y0: i64, x1: i64, y1: i64, color: Rgb<u8>) {
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as u32) < img.width() && (y0 as u32) < img.height() {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}
