//! CSV tables and PPM image dumps.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use bem_core::evalkit::MetricsRow;
use bem_core::learner::{MixTrace, StepRecord};
use bem_core::Image;

use crate::error::{CliError, CliResult};

pub const METRICS_FILE: &str = "metrics.csv";
pub const STEPS_FILE: &str = "steps.csv";

pub fn create_dir(path: &Path) -> CliResult<()> {
    std::fs::create_dir_all(path).map_err(|e| CliError::io(path, e))
}

/// Writes a header row and records to `path`.
pub fn write_csv<I, R>(path: &Path, header: &[String], records: I) -> CliResult<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    w.write_record(header)?;
    for r in records {
        w.write_record(r)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))?;
    Ok(())
}

pub fn write_metrics(path: &Path, classes: usize, rows: &[MetricsRow]) -> CliResult<()> {
    write_csv(
        path,
        &MetricsRow::header(classes),
        rows.iter().map(MetricsRow::record),
    )
}

pub fn steps_header() -> Vec<String> {
    [
        "iteration",
        "loss_s",
        "loss_u_h",
        "loss_u_l",
        "loss_us_h",
        "loss_us_l",
        "lambda",
        "batch",
        "loss_total",
        "learning_rate",
        "warmed_up",
        "low_entropy_fraction",
        "mask_rate",
        "mean_entropy",
        "labeled_sources",
        "unlabeled_sources",
        "cam_fallbacks",
    ]
    .map(String::from)
    .to_vec()
}

/// One `steps.csv` record. Floats use the shortest representation that
/// parses back to the same value, so the loss identity can be re-checked
/// exactly from the file.
pub fn step_record(s: &StepRecord) -> Vec<String> {
    let l = &s.loss;
    vec![
        s.iteration.to_string(),
        l.l_s.to_string(),
        l.l_u_h.to_string(),
        l.l_u_l.to_string(),
        l.l_us_h.to_string(),
        l.l_us_l.to_string(),
        l.lambda.to_string(),
        l.batch.to_string(),
        l.total.to_string(),
        s.learning_rate.to_string(),
        (s.warmed_up as u8).to_string(),
        s.low_entropy_fraction.to_string(),
        s.mask_rate.to_string(),
        s.mean_entropy.to_string(),
        s.labeled_sources.to_string(),
        s.unlabeled_sources.to_string(),
        s.cam_fallbacks.to_string(),
    ]
}

pub fn write_steps(path: &Path, steps: &[StepRecord]) -> CliResult<()> {
    write_csv(path, &steps_header(), steps.iter().map(step_record))
}

/// Binary PPM (`P6`) of a grid of equally sized RGB images, one row per
/// entry of `rows`, separated by one black pixel.
pub fn encode_ppm_grid(rows: &[Vec<Image>]) -> Vec<u8> {
    let (h, w) = rows
        .iter()
        .flatten()
        .next()
        .map_or((0, 0), |im| (im.height, im.width));
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let width = cols * (w + 1) + 1;
    let height = rows.len() * (h + 1) + 1;
    let mut pixels = vec![0u8; width * height * 3];
    for (r, row) in rows.iter().enumerate() {
        for (b, img) in row.iter().enumerate() {
            for y in 0..h.min(img.height) {
                for x in 0..w.min(img.width) {
                    let (py, px) = (1 + r * (h + 1) + y, 1 + b * (w + 1) + x);
                    for c in 0..3 {
                        let v = img.get(c.min(img.channels - 1), y, x).clamp(0.0, 1.0);
                        pixels[(py * width + px) * 3 + c] = (v * 255.0).round() as u8;
                    }
                }
            }
        }
    }
    let mut out = format!("P6\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(&pixels);
    out
}

/// The thresholded source CAM drawn at image resolution (white = kept).
fn cam_image(mask: &[bool], height: usize, width: usize) -> Image {
    let side = (mask.len() as f64).sqrt() as usize;
    let mut im = Image::new(1, height, width);
    if side == 0 {
        return im;
    }
    let (sy, sx) = (height.div_ceil(side), width.div_ceil(side));
    for y in 0..height {
        for x in 0..width {
            if mask[(y / sy).min(side - 1) * side + (x / sx).min(side - 1)] {
                im.set(0, y, x, 1.0);
            }
        }
    }
    im
}

/// Writes the first `columns` samples of a mixing step as four rows:
/// destinations, sources, mixed images and thresholded source CAMs.
/// Missing sources and CAMs are black.
pub fn write_mix_dump(path: &Path, trace: &MixTrace, columns: usize) -> CliResult<()> {
    let [n, c, h, w] = trace.mixed.shape();
    let n = n.min(columns);
    let black = Image::new(c, h, w);
    let rows = vec![
        (0..n).map(|m| trace.destinations.image(m)).collect(),
        (0..n)
            .map(|m| {
                trace.sources[m]
                    .as_ref()
                    .map_or_else(|| black.clone(), |s| s.image.clone())
            })
            .collect(),
        (0..n).map(|m| trace.mixed.image(m)).collect(),
        (0..n)
            .map(
                |m| match trace.outcomes[m].as_ref().and_then(|o| o.cam_mask.as_ref()) {
                    Some(mask) => cam_image(mask, h, w),
                    None => black.clone(),
                },
            )
            .collect(),
    ];
    let bytes = encode_ppm_grid(&rows);
    let mut f = BufWriter::new(File::create(path).map_err(|e| CliError::io(path, e))?);
    f.write_all(&bytes)
        .and_then(|_| f.flush())
        .map_err(|e| CliError::io(path, e))
}
