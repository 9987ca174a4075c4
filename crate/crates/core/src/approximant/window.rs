use ndarray::Array3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WindowSpec {
    /// Window length minus one.
    pub n_w: usize,
    /// Windows per axis group.
    pub n_h: usize,
}

impl Default for WindowSpec {
    fn default() -> Self {
        WindowSpec { n_w: 15, n_h: 6 }
    }
}

impl WindowSpec {
    pub fn output_len(&self) -> usize {
        2 * self.n_h
    }

    /// Checks the two-group layout: each half of the sequence (N/2 angles)
    /// must hold exactly `n_h` windows of `n_w + 1` entries.
    pub fn validate(&self, n: usize) -> Result<()> {
        let implied_n_h = (n / 2) as isize - self.n_w as isize;
        if n == 0 || n % 2 != 0 || self.n_h == 0 || implied_n_h != self.n_h as isize {
            return Err(Error::WindowMismatch {
                n,
                n_w: self.n_w,
                n_h: self.n_h,
                implied_n_h,
                implied_m: 2 * implied_n_h,
            });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    /// Single-pass gradient descent.
    Train,
    /// Gradient descent followed by TV denoising.
    Test,
}

/// M windowed approximant volumes, each `J × nx × ny`.
#[derive(Debug, Clone, PartialEq)]
pub struct ApproximantSequence {
    pub volumes: Vec<Array3<f64>>,
    pub window: WindowSpec,
    pub n: usize,
    pub provenance: Provenance,
}

impl ApproximantSequence {
    pub fn len(&self) -> usize {
        self.volumes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.volumes.is_empty()
    }
}

/// Moving average over each axis group:
/// `f̃_m = mean(f_m ..= f_{m+N_w})` for `m <= N_h`, and
/// `f̃_m = mean(f_{m+N_w} ..= f_{m+2N_w})` for `N_h < m <= M` (1-based).
pub fn window_average(
    volumes: &[Array3<f64>],
    window: WindowSpec,
    provenance: Provenance,
) -> Result<ApproximantSequence> {
    let n = volumes.len();
    window.validate(n)?;
    let shape = volumes[0].dim();
    if let Some(bad) = volumes.iter().find(|v| v.dim() != shape) {
        return Err(Error::shape(volumes[0].shape(), bad.shape()));
    }
    let m_total = window.output_len();
    let scale = 1.0 / (window.n_w + 1) as f64;
    let out = (1..=m_total)
        .map(|m| {
            let start = if m <= window.n_h { m } else { m + window.n_w };
            let mut acc = Array3::<f64>::zeros(shape);
            for v in &volumes[start - 1..start + window.n_w] {
                acc += v;
            }
            acc * scale
        })
        .collect();
    Ok(ApproximantSequence {
        volumes: out,
        window,
        n,
        provenance,
    })
}
