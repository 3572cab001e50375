//! Pixel losses and PSNR.

use jga_core::Image;

use crate::RenderError;

pub(crate) fn check_shapes(a: &Image, b: &Image) -> Result<(), RenderError> {
    if !a.same_shape(b) {
        return Err(RenderError::Dimensions(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    Ok(())
}

/// Mean absolute error over all pixels and channels.
pub fn l1(a: &Image, b: &Image) -> Result<f64, RenderError> {
    check_shapes(a, b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).abs()).sum::<f64>() / n)
}

/// Gradient of [`l1`] with respect to `a` (subgradient 0 at ties).
pub fn l1_grad(a: &Image, b: &Image) -> Result<Image, RenderError> {
    check_shapes(a, b)?;
    let n = a.data.len().max(1) as f64;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(x, y)| {
            let d = x - y;
            if d > 0.0 {
                1.0 / n
            } else if d < 0.0 {
                -1.0 / n
            } else {
                0.0
            }
        })
        .collect();
    Ok(Image { data, ..a.clone() })
}

pub fn mse(a: &Image, b: &Image) -> Result<f64, RenderError> {
    check_shapes(a, b)?;
    let n = a.data.len().max(1) as f64;
    Ok(a.data.iter().zip(&b.data).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n)
}

/// Peak signal-to-noise ratio for images in `[0, 1]`, capped at 100 dB.
pub fn psnr(a: &Image, b: &Image) -> Result<f64, RenderError> {
    let m = mse(a, b)?;
    Ok(if m < 1e-10 {
        100.0
    } else {
        (-10.0 * m.log10()).min(100.0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_of_known_mse() {
        let a = Image::filled(4, 4, &[0.5, 0.5, 0.5]);
        let b = Image::filled(4, 4, &[0.6, 0.6, 0.6]);
        // mse = 0.01 -> 20 dB
        assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
        assert_eq!(psnr(&a, &a).unwrap(), 100.0);
        assert!((l1(&a, &b).unwrap() - 0.1).abs() < 1e-12);
    }

    #[test]
    fn mismatched_shapes_fail() {
        let a = Image::filled(4, 4, &[0.5; 3]);
        let b = Image::filled(4, 5, &[0.5; 3]);
        assert!(psnr(&a, &b).is_err());
    }
}
