//! Reconstruction quality metrics for grid observations.
//!
//! Observations are flattened `height × width × channels` arrays (channel
//! fastest). SSIM uses a uniform window of `min(5, dim)` cells per axis over
//! each channel separately, averaged over all window positions and channels.

#[cfg(feature = "serde")]
use serde::{Deserialize, Serialize};

use crate::error::GraphError;

pub const PSNR_CAP: f64 = 100.0;
pub const SSIM_WINDOW: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct ImageShape {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
}

impl ImageShape {
    pub fn len(&self) -> usize {
        self.height * self.width * self.channels
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(Serialize, Deserialize))]
pub struct Quality {
    pub mse: f64,
    pub psnr: f64,
    pub ssim: f64,
}

fn check(x: &[f64], y: &[f64]) -> Result<(), GraphError> {
    if x.len() != y.len() || x.is_empty() {
        return Err(GraphError::ShapeMismatch { op: "metric", lhs: (1, x.len()), rhs: (1, y.len()) });
    }
    Ok(())
}

pub fn mse(x: &[f64], y: &[f64]) -> Result<f64, GraphError> {
    check(x, y)?;
    Ok(x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64)
}

/// `10·log10(R²/mse)`, capped at [`PSNR_CAP`] once `mse < R²·1e-10`.
pub fn psnr_from_mse(mse: f64, range: f64) -> f64 {
    let peak = range * range;
    if mse < peak * 1e-10 {
        PSNR_CAP
    } else {
        (10.0 * libm::log10(peak / mse)).min(PSNR_CAP)
    }
}

pub fn psnr(x: &[f64], y: &[f64], range: f64) -> Result<f64, GraphError> {
    Ok(psnr_from_mse(mse(x, y)?, range))
}

pub fn ssim(x: &[f64], y: &[f64], shape: ImageShape, range: f64) -> Result<f64, GraphError> {
    check(x, y)?;
    if shape.len() != x.len() {
        return Err(GraphError::ShapeMismatch {
            op: "ssim",
            lhs: (1, x.len()),
            rhs: (shape.height * shape.width, shape.channels),
        });
    }
    let c1 = (0.01 * range) * (0.01 * range);
    let c2 = (0.03 * range) * (0.03 * range);
    let wh = SSIM_WINDOW.min(shape.height);
    let ww = SSIM_WINDOW.min(shape.width);
    let n = (wh * ww) as f64;
    let at = |v: &[f64], r: usize, c: usize, ch: usize| v[(r * shape.width + c) * shape.channels + ch];

    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..shape.channels {
        for r0 in 0..=shape.height - wh {
            for c0 in 0..=shape.width - ww {
                let (mut sx, mut sy, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for r in r0..r0 + wh {
                    for c in c0..c0 + ww {
                        let (a, b) = (at(x, r, c, ch), at(y, r, c, ch));
                        sx += a;
                        sy += b;
                        sxx += a * a;
                        syy += b * b;
                        sxy += a * b;
                    }
                }
                let (mx, my) = (sx / n, sy / n);
                let vx = (sxx / n - mx * mx).max(0.0);
                let vy = (syy / n - my * my).max(0.0);
                let cov = sxy / n - mx * my;
                total += ((2.0 * mx * my + c1) * (2.0 * cov + c2))
                    / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

pub fn quality(x: &[f64], y: &[f64], shape: ImageShape, range: f64) -> Result<Quality, GraphError> {
    let m = mse(x, y)?;
    Ok(Quality { mse: m, psnr: psnr_from_mse(m, range), ssim: ssim(x, y, shape, range)? })
}
