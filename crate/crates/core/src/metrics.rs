//! k-space NMSE, SSIM on centre-cropped RSS images, and summary statistics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kspace::{rss, KGrid};

pub const SSIM_WINDOW: usize = 7;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `‖ŷ - y0‖² / ‖y0‖²`.
pub fn nmse(estimate: &KGrid, truth: &KGrid) -> Result<f64> {
    estimate.check_same_shape(truth)?;
    let den = truth.norm_sqr();
    if den == 0.0 {
        return Err(Error::InvalidInput("nmse is undefined for an all-zero truth".into()));
    }
    let num: f64 = estimate
        .as_slice()
        .iter()
        .zip(truth.as_slice())
        .map(|(a, b)| (a - b).norm_sqr())
        .sum();
    Ok(num / den)
}

/// Central `crop x crop` block of a row-major `rows x cols` image.
pub fn center_crop(img: &[f64], rows: usize, cols: usize, crop: usize) -> Result<Vec<f64>> {
    if crop == 0 || crop > rows || crop > cols {
        return Err(Error::InvalidInput(format!("crop {crop} does not fit a {rows}x{cols} grid")));
    }
    if img.len() != rows * cols {
        return Err(Error::shape(rows * cols, img.len()));
    }
    let (r0, c0) = ((rows - crop) / 2, (cols - crop) / 2);
    Ok((r0..r0 + crop)
        .flat_map(|r| img[r * cols + c0..r * cols + c0 + crop].iter().copied())
        .collect())
}

/// Mean SSIM over every fully contained 7x7 window of two `n x n` images,
/// with sample (N - 1) statistics and dynamic range `range`.
pub fn ssim(x: &[f64], y: &[f64], n: usize, range: f64) -> Result<f64> {
    if x.len() != n * n || y.len() != n * n {
        return Err(Error::shape(n * n, x.len().max(y.len())));
    }
    if n < SSIM_WINDOW {
        return Err(Error::InvalidInput(format!("image side {n} is smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")));
    }
    if !(range > 0.0 && range.is_finite()) {
        return Err(Error::InvalidInput(format!("dynamic range must be positive, got {range}")));
    }
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let np = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let cov_norm = np / (np - 1.0);
    let last = n - SSIM_WINDOW + 1;
    let mut total = 0.0;
    for r in 0..last {
        for c in 0..last {
            let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for i in r..r + SSIM_WINDOW {
                for j in c..c + SSIM_WINDOW {
                    let (a, b) = (x[i * n + j], y[i * n + j]);
                    sx += a;
                    sy += b;
                    sxx += a * a;
                    syy += b * b;
                    sxy += a * b;
                }
            }
            let (ux, uy) = (sx / np, sy / np);
            let vx = cov_norm * (sxx / np - ux * ux);
            let vy = cov_norm * (syy / np - uy * uy);
            let vxy = cov_norm * (sxy / np - ux * uy);
            total += ((2.0 * ux * uy + c1) * (2.0 * vxy + c2)) / ((ux * ux + uy * uy + c1) * (vx + vy + c2));
        }
    }
    Ok(total / (last * last) as f64)
}

/// SSIM between the central `crop x crop` RSS images of estimate and truth.
pub fn ssim_cropped(estimate: &KGrid, truth: &KGrid, crop: usize) -> Result<f64> {
    estimate.check_same_shape(truth)?;
    let shape = truth.shape();
    let x = center_crop(&rss(estimate), shape.rows, shape.cols, crop)?;
    let y = center_crop(&rss(truth), shape.rows, shape.cols, crop)?;
    let range = y.iter().copied().fold(0.0, f64::max);
    if range == 0.0 {
        return Err(Error::InvalidInput("ssim needs a truth with non-zero cropped RSS".into()));
    }
    ssim(&x, &y, crop, range)
}

/// Default crop: half the grid height.
pub fn default_crop(rows: usize) -> usize {
    rows / 2
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub sample_id: usize,
    pub nmse: f64,
    pub ssim: f64,
}

/// Order statistics of one metric; quartiles use linear interpolation
/// between closest ranks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub mean: f64,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl Distribution {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::InvalidInput("cannot summarise an empty set".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("metric values"));
        }
        let mut sorted = values.to_vec();
        sorted.sort_by(f64::total_cmp);
        Ok(Self {
            mean: values.iter().sum::<f64>() / values.len() as f64,
            median: quantile(&sorted, 0.5),
            q1: quantile(&sorted, 0.25),
            q3: quantile(&sorted, 0.75),
            min: sorted[0],
            max: sorted[sorted.len() - 1],
            count: sorted.len(),
        })
    }
}

/// Linear-interpolation quantile of sorted data.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q.clamp(0.0, 1.0) * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    pub nmse: Distribution,
    pub ssim: Distribution,
}

pub fn aggregate(records: &[MetricRecord]) -> Result<MetricSummary> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no metric records".into()));
    }
    let n: Vec<f64> = records.iter().map(|r| r.nmse).collect();
    let s: Vec<f64> = records.iter().map(|r| r.ssim).collect();
    Ok(MetricSummary { nmse: Distribution::from_values(&n)?, ssim: Distribution::from_values(&s)? })
}
