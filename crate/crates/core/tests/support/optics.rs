//! Closed-form optics references.

use std::f64::consts::PI;

use dyntomo::grid::{ComplexField, OpticalGrid};
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Paraxial Gaussian beam intensity `(w₀/w)² exp(−2r²/w²)` at distance `z`
/// from a waist of radius `w0` (unit peak at the waist).
pub fn gaussian_beam_intensity(r2: f64, w0: f64, z: f64, wavelength: f64) -> f64 {
    let zr = PI * w0 * w0 / wavelength;
    let w2 = w0 * w0 * (1.0 + (z / zr).powi(2));
    (w0 * w0 / w2) * (-2.0 * r2 / w2).exp()
}

/// Field with independent uniform real and imaginary parts in [−1, 1).
pub fn random_field(grid: &OpticalGrid, rng: &mut ChaCha8Rng) -> ComplexField {
    let values = Array2::from_shape_fn(grid.shape2(), |_| {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    });
    ComplexField::new(values, *grid).unwrap()
}

pub fn rel_diff(a: &Array2<Complex64>, b: &Array2<Complex64>) -> f64 {
    let num: f64 = a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm_sqr()).sum();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum();
    (num / den).sqrt()
}
