use ndarray::{s, ArrayView2};

use crate::error::{Error, Result};

/// PSNR reported for identical images.
pub const PSNR_CAP_DB: f64 = 100.0;
pub const SSIM_WINDOW: usize = 8;

fn same_shape(a: ArrayView2<'_, f64>, b: ArrayView2<'_, f64>) -> Result<()> {
    if a.dim() != b.dim() {
        return Err(Error::invalid(format!(
            "image shapes differ: {:?} vs {:?}",
            a.dim(),
            b.dim()
        )));
    }
    Ok(())
}

pub fn mse(reference: ArrayView2<'_, f64>, test: ArrayView2<'_, f64>) -> Result<f64> {
    same_shape(reference, test)?;
    let n = reference.len() as f64;
    Ok(reference
        .iter()
        .zip(test.iter())
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / n)
}

/// 10·log₁₀(peak²/MSE), capped at [`PSNR_CAP_DB`].
pub fn psnr(reference: ArrayView2<'_, f64>, test: ArrayView2<'_, f64>, peak: f64) -> Result<f64> {
    if !(peak > 0.0) {
        return Err(Error::invalid("peak must be positive"));
    }
    let mse = mse(reference, test)?;
    if mse == 0.0 {
        return Ok(PSNR_CAP_DB);
    }
    Ok((10.0 * (peak * peak / mse).log10()).min(PSNR_CAP_DB))
}

/// Mean SSIM over every 8×8 window (stride 1, uniform weights, population
/// statistics) with C₁ = (0.01·peak)², C₂ = (0.03·peak)².
pub fn ssim(reference: ArrayView2<'_, f64>, test: ArrayView2<'_, f64>, peak: f64) -> Result<f64> {
    same_shape(reference, test)?;
    let (h, w) = reference.dim();
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!("SSIM needs at least {SSIM_WINDOW}x{SSIM_WINDOW} images, got {h}x{w}")));
    }
    let c1 = (0.01 * peak).powi(2);
    let c2 = (0.03 * peak).powi(2);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - SSIM_WINDOW {
        for j in 0..=w - SSIM_WINDOW {
            let a = reference.slice(s![i..i + SSIM_WINDOW, j..j + SSIM_WINDOW]);
            let b = test.slice(s![i..i + SSIM_WINDOW, j..j + SSIM_WINDOW]);
            let mu_a = a.sum() / n;
            let mu_b = b.sum() / n;
            let centered = |x: f64, m: f64| x - m;
            let mut var_a = 0.0;
            let mut var_b = 0.0;
            let mut cov = 0.0;
            for (&x, &y) in a.iter().zip(b.iter()) {
                let (dx, dy) = (centered(x, mu_a), centered(y, mu_b));
                var_a += dx * dx;
                var_b += dy * dy;
                cov += dx * dy;
            }
            var_a /= n;
            var_b /= n;
            cov /= n;
            let num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    Ok(total / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn pseudo_random(h: usize, w: usize, seed: u64) -> Array2<f64> {
        Array2::from_shape_fn((h, w), |(i, j)| {
            let v = ((i * 131 + j * 71) as u64 ^ seed).wrapping_mul(2654435761) % 1000;
            v as f64 / 999.0
        })
    }

    #[test]
    fn identical_images_hit_the_cap() {
        let a = pseudo_random(16, 16, 1);
        assert_eq!(psnr(a.view(), a.view(), 1.0).unwrap(), PSNR_CAP_DB);
        assert_eq!(ssim(a.view(), a.view(), 1.0).unwrap(), 1.0);
    }

    #[test]
    fn constant_offset_on_8bit_scale() {
        let a = Array2::from_elem((10, 10), 100.0);
        let b = Array2::from_elem((10, 10), 116.0);
        let v = psnr(a.view(), b.view(), 255.0).unwrap();
        assert!((v - 24.048_403_955_560_61).abs() < 1e-9);
    }

    #[test]
    fn psnr_matches_two_pass_mse_and_is_symmetric() {
        let a = pseudo_random(12, 9, 3);
        let b = pseudo_random(12, 9, 4);
        let mut sq = 0.0;
        for i in 0..12 {
            for j in 0..9 {
                sq += (a[[i, j]] - b[[i, j]]).powi(2);
            }
        }
        let direct = 10.0 * (1.0 / (sq / 108.0)).log10();
        assert!((psnr(a.view(), b.view(), 1.0).unwrap() - direct).abs() < 1e-10);
        assert_eq!(psnr(a.view(), b.view(), 1.0).unwrap(), psnr(b.view(), a.view(), 1.0).unwrap());
    }

    #[test]
    fn negated_zero_mean_image_has_negative_ssim() {
        // every 8x8 window holds 4 positive and 4 negative entries per row
        let a = Array2::from_shape_fn((16, 16), |(i, j)| {
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            sign * (0.1 + 0.05 * (i % 5) as f64)
        });
        let b = a.mapv(|v| -v);
        assert!(ssim(a.view(), b.view(), 1.0).unwrap() < 0.0);
    }

    #[test]
    fn shape_and_size_errors() {
        let a = Array2::zeros((8, 8));
        let b = Array2::zeros((8, 9));
        assert!(psnr(a.view(), b.view(), 1.0).is_err());
        let small = Array2::zeros((7, 7));
        assert!(ssim(small.view(), small.view(), 1.0).is_err());
    }
}
