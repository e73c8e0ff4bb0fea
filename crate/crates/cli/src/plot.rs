//! PNG figures: confusion heat-maps and adaptation-history curves.

use std::path::Path;

use image::{Rgb, RgbImage};
use serde::Deserialize;

use wda::evaluation::Confusion;

use crate::config::{io_failure, CliResult, Failure};

const CELL: u32 = 24;
const MARGIN: u32 = 8;

/// White to dark blue.
fn shade(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let lerp = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    Rgb([lerp(255.0, 8.0), lerp(255.0, 48.0), lerp(255.0, 107.0)])
}

fn save(img: &RgbImage, path: &Path) -> CliResult<()> {
    img.save(path).map_err(|e| Failure::Data(format!("{}: {e}", path.display())))
}

/// One square per cell; rows are true classes. Unsupported rows are grey.
pub fn confusion_heatmap(confusion: &Confusion, path: &Path) -> CliResult<()> {
    let k = confusion.num_classes() as u32;
    let side = 2 * MARGIN + k * CELL;
    let mut img = RgbImage::from_pixel(side, side, Rgb([255, 255, 255]));
    let norm = confusion.normalized_array();
    for i in 0..k {
        for j in 0..k {
            let color = if confusion.supported[i as usize] {
                shade(norm[[i as usize, j as usize]])
            } else {
                Rgb([200, 200, 200])
            };
            for y in 0..CELL - 1 {
                for x in 0..CELL - 1 {
                    img.put_pixel(MARGIN + j * CELL + x, MARGIN + i * CELL + y, color);
                }
            }
        }
    }
    save(&img, path)
}

#[derive(Debug, Deserialize)]
struct Header {
    method: String,
}

#[derive(Debug, Deserialize)]
struct EpochLine {
    critic_loss_mean: f64,
    generator_loss_mean: f64,
    source_ce_mean: f64,
}

#[derive(Debug)]
pub struct Curves {
    pub method: String,
    pub critic: Vec<f64>,
    pub generator: Vec<f64>,
    pub source_ce: Vec<f64>,
}

/// Parses a history file written by `adapt`.
pub fn read_history(path: &Path) -> CliResult<Curves> {
    let text = std::fs::read_to_string(path).map_err(|e| io_failure(path, e))?;
    let bad = |what: &str| Failure::Data(format!("{}: {what}", path.display()));
    let lines: Vec<&str> = text.lines().collect();
    if lines.len() < 2 {
        return Err(bad("history needs a header and a footer line"));
    }
    let header: Header = serde_json::from_str(lines[0]).map_err(|e| bad(&format!("bad header: {e}")))?;
    let mut c = Curves {
        method: header.method,
        critic: Vec::new(),
        generator: Vec::new(),
        source_ce: Vec::new(),
    };
    for line in &lines[1..lines.len() - 1] {
        let e: EpochLine = serde_json::from_str(line).map_err(|e| bad(&format!("bad epoch line: {e}")))?;
        c.critic.push(e.critic_loss_mean);
        c.generator.push(e.generator_loss_mean);
        c.source_ce.push(e.source_ce_mean);
    }
    Ok(c)
}

fn line(img: &mut RgbImage, (x0, y0): (f64, f64), (x1, y1): (f64, f64), color: Rgb<u8>) {
    let steps = ((x1 - x0).abs().max((y1 - y0).abs()).ceil() as usize).max(1);
    for s in 0..=steps {
        let t = s as f64 / steps as f64;
        let (x, y) = (x0 + (x1 - x0) * t, y0 + (y1 - y0) * t);
        if x >= 0.0 && y >= 0.0 && (x as u32) < img.width() && (y as u32) < img.height() {
            img.put_pixel(x as u32, y as u32, color);
        }
    }
}

/// Each series is min-max scaled into its own horizontal band.
pub fn history_curves(c: &Curves, path: &Path) -> CliResult<()> {
    let (w, band) = (480u32, 100u32);
    let series = [
        (&c.critic, Rgb([200, 40, 40])),
        (&c.generator, Rgb([30, 90, 200])),
        (&c.source_ce, Rgb([30, 150, 60])),
    ];
    let h = band * series.len() as u32;
    let mut img = RgbImage::from_pixel(w, h, Rgb([255, 255, 255]));
    for (b, (values, color)) in series.iter().enumerate() {
        let top = b as f64 * band as f64;
        let axis = top + band as f64 - 6.0;
        line(&mut img, (6.0, axis), (w as f64 - 6.0, axis), Rgb([160, 160, 160]));
        if values.is_empty() {
            continue;
        }
        let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let span = if hi > lo { hi - lo } else { 1.0 };
        let px = |i: usize, v: f64| {
            let x = 6.0 + (w as f64 - 12.0) * if values.len() > 1 { i as f64 / (values.len() - 1) as f64 } else { 0.5 };
            (x, axis - (band as f64 - 14.0) * (v - lo) / span)
        };
        for i in 1..values.len() {
            line(&mut img, px(i - 1, values[i - 1]), px(i, values[i]), *color);
        }
        if values.len() == 1 {
            let (x, y) = px(0, values[0]);
            img.put_pixel(x as u32, y as u32, *color);
        }
    }
    save(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_colors_follow_rates() {
        let c = Confusion::from_predictions(&[0, 0, 1, 1], &[0, 0, 1, 0], 3).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.png");
        confusion_heatmap(&c, &p).unwrap();
        let img = image::open(&p).unwrap().to_rgb8();
        let at = |i: u32, j: u32| *img.get_pixel(MARGIN + j * CELL + 2, MARGIN + i * CELL + 2);
        // row 1 predicted entirely as class 1
        assert_eq!(at(1, 1), shade(1.0));
        assert_eq!(at(1, 0), shade(0.0));
        // class 2 never occurs
        assert_eq!(at(2, 2), Rgb([200, 200, 200]));
    }
}
