use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window() -> Vec<f64> {
    let c = (SSIM_WINDOW as f64 - 1.0) / 2.0;
    let w: Vec<f64> = (0..SSIM_WINDOW)
        .map(|i| (-((i as f64 - c).powi(2)) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp())
        .collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

/// Separable Gaussian filter over the valid region.
fn filter(x: &Array2<f64>, w: &[f64]) -> Array2<f64> {
    let (nx, ny) = x.dim();
    let k = w.len();
    let (ox, oy) = (nx - k + 1, ny - k + 1);
    let rows = Array2::from_shape_fn((ox, ny), |(i, j)| (0..k).map(|a| w[a] * x[(i + a, j)]).sum::<f64>());
    Array2::from_shape_fn((ox, oy), |(i, j)| (0..k).map(|b| w[b] * rows[(i, j + b)]).sum::<f64>())
}

/// Mean structural similarity of two images with dynamic range `range`,
/// using an 11-tap Gaussian window (σ = 1.5) over the valid region.
pub fn ssim(f: ArrayView2<'_, f64>, g: ArrayView2<'_, f64>, range: f64) -> Result<f64> {
    if f.dim() != g.dim() {
        return Err(Error::shape(f.shape(), g.shape()));
    }
    let (nx, ny) = f.dim();
    if nx < SSIM_WINDOW || ny < SSIM_WINDOW {
        return Err(Error::InvalidParameter(format!(
            "{nx}x{ny} image is smaller than the {SSIM_WINDOW}-sample SSIM window"
        )));
    }
    if !(range > 0.0) {
        return Err(Error::InvalidParameter(format!("dynamic range {range} must be positive")));
    }
    let w = gaussian_window();
    let (f, g) = (f.to_owned(), g.to_owned());
    let mu_f = filter(&f, &w);
    let mu_g = filter(&g, &w);
    let ff = filter(&(&f * &f), &w);
    let gg = filter(&(&g * &g), &w);
    let fg = filter(&(&f * &g), &w);
    let c1 = (SSIM_K1 * range).powi(2);
    let c2 = (SSIM_K2 * range).powi(2);
    let mut acc = 0.0;
    for (idx, &mf) in mu_f.indexed_iter() {
        let mg = mu_g[idx];
        let vf = ff[idx] - mf * mf;
        let vg = gg[idx] - mg * mg;
        let cov = fg[idx] - mf * mg;
        acc += ((2.0 * mf * mg + c1) * (2.0 * cov + c2)) / ((mf * mf + mg * mg + c1) * (vf + vg + c2));
    }
    Ok(acc / mu_f.len() as f64)
}
