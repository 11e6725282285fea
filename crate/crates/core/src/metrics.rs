//! Image reconstruction metrics: PSNR (peak 1.0) and windowed SSIM.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::image::ImageBuf;

/// Reported PSNR when the images are (numerically) identical.
pub const PSNR_CAP: f64 = 99.0;
const MSE_FLOOR: f64 = 1e-10;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

fn check_pair(a: &ImageBuf, b: &ImageBuf) -> Result<()> {
    if (a.height, a.width, a.channels) != (b.height, b.width, b.channels) {
        return Err(Error::Usage(format!(
            "image size mismatch: {}x{}x{} vs {}x{}x{}",
            a.height, a.width, a.channels, b.height, b.width, b.channels
        )));
    }
    Ok(())
}

pub fn mse(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check_pair(a, b)?;
    let sum: f64 = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| (f64::from(x) - f64::from(y)).powi(2))
        .sum();
    Ok(sum / a.data.len().max(1) as f64)
}

pub fn psnr_from_mse(mse: f64) -> f64 {
    if mse < MSE_FLOOR {
        PSNR_CAP
    } else {
        (10.0 * (1.0 / mse).log10()).min(PSNR_CAP)
    }
}

pub fn psnr(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    Ok(psnr_from_mse(mse(a, b)?))
}

fn gaussian_window() -> [f64; SSIM_WINDOW] {
    let half = (SSIM_WINDOW / 2) as f64;
    let mut w: [f64; SSIM_WINDOW] =
        std::array::from_fn(|i| (-((i as f64 - half).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    w
}

/// Mean SSIM over channels and every fully-contained 11x11 window.
pub fn ssim(a: &ImageBuf, b: &ImageBuf) -> Result<f64> {
    check_pair(a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(Error::Usage(format!(
            "SSIM needs images of at least {SSIM_WINDOW}x{SSIM_WINDOW}, got {}x{}",
            a.height, a.width
        )));
    }
    let w = gaussian_window();
    let (oh, ow) = (a.height - SSIM_WINDOW + 1, a.width - SSIM_WINDOW + 1);
    let mut total = 0.0;
    for c in 0..a.channels {
        for y in 0..oh {
            for x in 0..ow {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for (dy, wy) in w.iter().enumerate() {
                    for (dx, wx) in w.iter().enumerate() {
                        let k = wy * wx;
                        let va = f64::from(a.at(y + dy, x + dx, c));
                        let vb = f64::from(b.at(y + dy, x + dx, c));
                        ma += k * va;
                        mb += k * vb;
                        saa += k * va * va;
                        sbb += k * vb * vb;
                        sab += k * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                total += ((2.0 * ma * mb + SSIM_C1) * (2.0 * cov + SSIM_C2))
                    / ((ma * ma + mb * mb + SSIM_C1) * (va + vb + SSIM_C2));
            }
        }
    }
    Ok(total / (a.channels * oh * ow) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViewMetrics {
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub views: Vec<ViewMetrics>,
}

impl MetricsReport {
    pub fn mean_psnr(&self) -> f64 {
        self.views.iter().map(|v| v.psnr).sum::<f64>() / self.views.len().max(1) as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.views.iter().map(|v| v.ssim).sum::<f64>() / self.views.len().max(1) as f64
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("view,psnr,ssim\n");
        for (i, v) in self.views.iter().enumerate() {
            writeln!(out, "{i},{:.6},{:.6}", v.psnr, v.ssim).expect("string write");
        }
        writeln!(out, "mean,{:.6},{:.6}", self.mean_psnr(), self.mean_ssim()).expect("string write");
        out
    }

    pub fn summary(&self) -> String {
        format!(
            "{} views: mean PSNR {:.2} dB, mean SSIM {:.4}",
            self.views.len(),
            self.mean_psnr(),
            self.mean_ssim()
        )
    }
}

/// Per-view PSNR and SSIM over matched prediction/ground-truth pairs.
pub fn evaluate(pred: &[ImageBuf], gt: &[ImageBuf]) -> Result<MetricsReport> {
    if pred.len() != gt.len() {
        return Err(Error::Usage(format!(
            "{} predicted images but {} ground-truth images",
            pred.len(),
            gt.len()
        )));
    }
    let views = pred
        .iter()
        .zip(gt)
        .map(|(p, g)| {
            Ok(ViewMetrics {
                psnr: psnr(p, g)?,
                ssim: ssim(p, g)?,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport { views })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform(v: f32) -> ImageBuf {
        ImageBuf::filled(16, 16, 3, v)
    }

    #[test]
    fn identical_images_hit_the_caps() {
        let a = uniform(0.3);
        assert_eq!(psnr(&a, &a).unwrap(), PSNR_CAP);
        assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn mse_point_zero_one_is_twenty_db() {
        let p = psnr_from_mse(0.01);
        assert!((p - 20.0).abs() < 1e-12);
        let measured = psnr(&uniform(0.5), &uniform(0.6)).unwrap();
        assert!((measured - 20.0).abs() < 1e-5);
    }

    #[test]
    fn ssim_is_symmetric_and_penalizes_structure() {
        let a = ImageBuf::new(16, 16, 1, (0..256).map(|i| ((i * 37) % 101) as f32 / 100.0).collect()).unwrap();
        let b = ImageBuf::new(16, 16, 1, (0..256).map(|i| ((i * 53) % 97) as f32 / 96.0).collect()).unwrap();
        let (ab, ba) = (ssim(&a, &b).unwrap(), ssim(&b, &a).unwrap());
        assert!((ab - ba).abs() < 1e-9);
        assert!(ab < 0.5);
    }

    #[test]
    fn count_mismatch_is_a_usage_error() {
        assert!(matches!(evaluate(&[uniform(0.0)], &[]), Err(Error::Usage(_))));
        let r = evaluate(&[uniform(0.5)], &[uniform(0.6)]).unwrap();
        assert!(r.to_csv().starts_with("view,psnr,ssim\n0,"));
    }
}
