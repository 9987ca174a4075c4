//! Two-dimensional complex FFT on row-major `nx × ny` arrays.
//!
//! Forward transform uses the `e^{-i k·x}` kernel and is unnormalized; the
//! inverse applies the `1/(nx·ny)` factor so that `inverse(forward(a)) == a`.

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

#[derive(Clone)]
pub struct Fft2 {
    nx: usize,
    ny: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft2 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft2")
            .field("nx", &self.nx)
            .field("ny", &self.ny)
            .finish()
    }
}

impl Fft2 {
    pub fn new(nx: usize, ny: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft2 {
            nx,
            ny,
            row_fwd: planner.plan_fft_forward(ny),
            row_inv: planner.plan_fft_inverse(ny),
            col_fwd: planner.plan_fft_forward(nx),
            col_inv: planner.plan_fft_inverse(nx),
        }
    }

    pub fn forward(&self, a: &mut Array2<Complex64>) {
        self.transform(a, false);
    }

    pub fn inverse(&self, a: &mut Array2<Complex64>) {
        self.transform(a, true);
        let scale = 1.0 / (self.nx * self.ny) as f64;
        a.mapv_inplace(|v| v * scale);
    }

    fn transform(&self, a: &mut Array2<Complex64>, inverse: bool) {
        assert_eq!(a.dim(), (self.nx, self.ny), "fft2 shape mismatch");
        let (rows, cols) = if inverse {
            (&self.row_inv, &self.col_inv)
        } else {
            (&self.row_fwd, &self.col_fwd)
        };
        let (nx, ny) = (self.nx, self.ny);
        let buf = a
            .as_slice_mut()
            .expect("field arrays are standard row-major");
        rows.process(buf);

        let mut t = vec![Complex64::new(0.0, 0.0); nx * ny];
        for i in 0..nx {
            for j in 0..ny {
                t[j * nx + i] = buf[i * ny + j];
            }
        }
        cols.process(&mut t);
        for j in 0..ny {
            for i in 0..nx {
                buf[i * ny + j] = t[j * nx + i];
            }
        }
    }
}
