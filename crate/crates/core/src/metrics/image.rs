//! Image-quality metrics with optional validity masks.

use crate::error::{Error, Result};
use crate::render::Image;

fn check_pair(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<()> {
    if a.width != b.width || a.height != b.height || a.data.len() != b.data.len() {
        return Err(Error::invalid(format!(
            "image sizes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    if let Some(m) = mask {
        if m.len() != a.num_pixels() {
            return Err(Error::invalid("mask length does not match image"));
        }
    }
    Ok(())
}

/// Mean squared error over valid pixels (all three channels).
pub fn mse(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(a, b, mask)?;
    let mut sum = 0.0;
    let mut count = 0usize;
    for p in 0..a.num_pixels() {
        if mask.is_some_and(|m| !m[p]) {
            continue;
        }
        for c in 0..3 {
            let d = a.data[3 * p + c] - b.data[3 * p + c];
            sum += d * d;
        }
        count += 3;
    }
    if count == 0 {
        return Err(Error::invalid("mask selects no pixels"));
    }
    Ok(sum / count as f64)
}

/// Peak signal-to-noise ratio for peak value 1; identical images give
/// `f64::INFINITY`.
pub fn psnr(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b, mask)?))
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse == 0.0 {
        f64::INFINITY
    } else {
        -10.0 * mse.log10()
    }
}

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

/// Rec. 601 luma.
pub fn luma(img: &Image) -> Vec<f64> {
    img.data.chunks_exact(3).map(|p| 0.299 * p[0] + 0.587 * p[1] + 0.114 * p[2]).collect()
}

/// Normalized 2D Gaussian window, row-major `SSIM_WINDOW²`.
pub fn gaussian_window() -> Vec<f64> {
    let r = (SSIM_WINDOW / 2) as f64;
    let g: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - r).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = g.iter().sum();
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for a in &g {
        for b in &g {
            w.push(a * b / (s * s));
        }
    }
    w
}

/// SSIM of one window given its weighted statistics.
pub fn ssim_from_stats(mu_x: f64, mu_y: f64, var_x: f64, var_y: f64, cov: f64) -> f64 {
    ((2.0 * mu_x * mu_y + C1) * (2.0 * cov + C2)) / ((mu_x * mu_x + mu_y * mu_y + C1) * (var_x + var_y + C2))
}

/// Mean structural similarity on luma over all fully valid 11×11 windows
/// (Gaussian weights, σ = 1.5, no padding).
pub fn ssim(a: &Image, b: &Image, mask: Option<&[bool]>) -> Result<f64> {
    check_pair(a, b, mask)?;
    let (w, h) = (a.width, a.height);
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::invalid(format!("image smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} SSIM window")));
    }
    let (x, y) = (luma(a), luma(b));
    let win = gaussian_window();
    let mut total = 0.0;
    let mut count = 0usize;
    for j0 in 0..=h - SSIM_WINDOW {
        'win: for i0 in 0..=w - SSIM_WINDOW {
            let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for dj in 0..SSIM_WINDOW {
                for di in 0..SSIM_WINDOW {
                    let p = (j0 + dj) * w + i0 + di;
                    if mask.is_some_and(|m| !m[p]) {
                        continue 'win;
                    }
                    let g = win[dj * SSIM_WINDOW + di];
                    mx += g * x[p];
                    my += g * y[p];
                    sxx += g * x[p] * x[p];
                    syy += g * y[p] * y[p];
                    sxy += g * x[p] * y[p];
                }
            }
            total += ssim_from_stats(mx, my, sxx - mx * mx, syy - my * my, sxy - mx * my);
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::invalid("mask leaves no complete SSIM window"));
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn constant(w: usize, h: usize, v: f64) -> Image {
        Image {
            width: w,
            height: h,
            data: vec![v; w * h * 3],
        }
    }

    fn checker(w: usize, h: usize, invert: bool) -> Image {
        let mut img = Image::new(w, h);
        for j in 0..h {
            for i in 0..w {
                let v = if ((i + j) % 2 == 0) != invert { 1.0 } else { 0.0 };
                img.set_pixel(i, j, [v; 3]);
            }
        }
        img
    }

    #[test]
    fn psnr_closed_forms() {
        let a = constant(4, 3, 0.3);
        assert_eq!(psnr(&a, &a, None).unwrap(), f64::INFINITY);
        let b = constant(4, 3, 0.4);
        assert!((psnr(&a, &b, None).unwrap() - 20.0).abs() < 1e-9);
        assert!(psnr(&checker(4, 4, false), &checker(4, 4, true), None).unwrap().abs() < 1e-12);
    }

    #[test]
    fn psnr_ignores_masked_pixels() {
        let a = constant(2, 1, 0.5);
        let mut b = a.clone();
        b.set_pixel(1, 0, [1.0; 3]);
        assert_eq!(psnr(&a, &b, Some(&[true, false])).unwrap(), f64::INFINITY);
        assert!(psnr(&a, &b, Some(&[false, false])).is_err());
        assert!(psnr(&a, &constant(1, 2, 0.5), None).is_err());
    }

    #[test]
    fn window_is_normalized_and_symmetric() {
        let w = gaussian_window();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        for j in 0..SSIM_WINDOW {
            for i in 0..SSIM_WINDOW {
                assert_eq!(w[j * SSIM_WINDOW + i], w[i * SSIM_WINDOW + j]);
            }
        }
    }

    #[test]
    fn ssim_identical_is_one() {
        let a = checker(16, 12, false);
        assert!((ssim(&a, &a, None).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn ssim_constant_offset_matches_scalar_formula() {
        // Constant luma 0.4 vs 0.5: zero variances, so only the mean term
        // remains: (2·0.4·0.5 + C1) / (0.4² + 0.5² + C1).
        let a = constant(12, 12, 0.4);
        let b = constant(12, 12, 0.5);
        let c1 = 1e-4;
        let want = (2.0 * 0.4 * 0.5 + c1) / (0.16 + 0.25 + c1);
        assert!((ssim(&a, &b, None).unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn ssim_of_negated_zero_mean_pattern_is_negative() {
        // Checker around 0.5 vs its inversion: covariance = −variance.
        let a = checker(16, 16, false);
        let b = checker(16, 16, true);
        assert!(ssim(&a, &b, None).unwrap() < 0.0);
    }

    #[test]
    fn ssim_masked_windows_are_skipped() {
        let a = checker(12, 11, false);
        let mut b = a.clone();
        b.set_pixel(11, 5, [0.5; 3]);
        // Two windows; masking column 11 leaves only the untouched one.
        let mask: Vec<bool> = (0..12 * 11).map(|p| p % 12 != 11).collect();
        assert!((ssim(&a, &b, Some(&mask)).unwrap() - 1.0).abs() < 1e-12);
        assert!(ssim(&a, &b, None).unwrap() < 1.0);
        assert!(ssim(&constant(10, 10, 0.0), &constant(10, 10, 0.0), None).is_err());
    }
}
