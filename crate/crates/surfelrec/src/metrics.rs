//! Image quality metrics over [3, H, W] tensors with values in [0, 1].

use crate::error::{Error, Result};
use crate::nn::Tensor;

/// PSNR in dB against a peak of 1.0, capped at 99 dB so identical images
/// stay finite in CSV output.
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b)?;
    let mse = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data.len() as f64;
    if mse <= 0.0 {
        return Ok(99.0);
    }
    Ok((10.0 * (1.0 / mse).log10()).min(99.0))
}

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const SSIM_K1: f64 = 0.01;
const SSIM_K2: f64 = 0.03;

/// Mean SSIM with an 11x11 Gaussian window (sigma 1.5), averaged over all
/// channels and all positions where the window fits entirely.
pub fn ssim(a: &Tensor, b: &Tensor) -> Result<f64> {
    check_pair(a, b)?;
    let (c, h, w) = (a.shape[0], a.shape[1], a.shape[2]);
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::Shape(format!(
            "ssim needs images at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {h}x{w}"
        )));
    }
    let mut kernel = [0.0f64; SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as isize;
    let mut sum = 0.0;
    for (i, k) in kernel.iter_mut().enumerate() {
        let d = i as isize - half;
        *k = (-(d * d) as f64 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
        sum += *k;
    }
    kernel.iter_mut().for_each(|k| *k /= sum);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    let mut count = 0usize;
    for ch in 0..c {
        let pa = &a.data[ch * h * w..(ch + 1) * h * w];
        let pb = &b.data[ch * h * w..(ch + 1) * h * w];
        for v0 in 0..=(h - SSIM_WINDOW) {
            for u0 in 0..=(w - SSIM_WINDOW) {
                let mut mu_a = 0.0;
                let mut mu_b = 0.0;
                let mut aa = 0.0;
                let mut bb = 0.0;
                let mut ab = 0.0;
                for dv in 0..SSIM_WINDOW {
                    for du in 0..SSIM_WINDOW {
                        let wgt = kernel[dv] * kernel[du];
                        let x = pa[(v0 + dv) * w + u0 + du];
                        let y = pb[(v0 + dv) * w + u0 + du];
                        mu_a += wgt * x;
                        mu_b += wgt * y;
                        aa += wgt * (x * x);
                        bb += wgt * (y * y);
                        ab += wgt * (x * y);
                    }
                }
                let mu_ab = mu_a * mu_b;
                let var_a = aa - mu_a * mu_a;
                let var_b = bb - mu_b * mu_b;
                let cov = ab - mu_ab;
                let s = ((2.0 * mu_ab + c1) * (2.0 * cov + c2))
                    / ((mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2));
                total += s;
                count += 1;
            }
        }
    }
    Ok(total / count as f64)
}

fn check_pair(a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape != b.shape || a.shape.len() != 3 {
        return Err(Error::Shape(format!(
            "metric inputs must share a [C, H, W] shape, got {:?} vs {:?}",
            a.shape, b.shape
        )));
    }
    for v in a.data.iter().chain(&b.data) {
        if !(0.0..=1.0).contains(v) {
            return Err(Error::Domain("metric inputs must lie in [0, 1]".into()));
        }
    }
    Ok(())
}
