//! Discretized optical geometry and the primitive field operations the BPM is
//! built from: plane-wave synthesis, spectral propagation and thin-transparency
//! phase modulation.
//!
//! Conventions:
//! - arrays are indexed `[ix, iy]`, row-major, with `x` along axis 0;
//! - sample `i` sits at `x = (i - (n-1)/2) * pitch`, so the origin is the grid
//!   center and `i -> n-1-i` is the exact mirror `x -> -x`;
//! - spatial frequencies follow DFT ordering, `k_x[i] = 2π m(i) / (n·pitch)`
//!   with `m(i) = i` for `i <= (n-1)/2` and `m(i) = i - n` otherwise.

use std::f64::consts::PI;
use std::sync::Arc;

use ndarray::{Array2, Array3, ArrayView2, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;

/// He-Ne wavelength used by the reference apparatus.
pub const DEFAULT_WAVELENGTH: f64 = 632.8e-9;
/// Slab thickness between object layers.
pub const DEFAULT_SLICE_THICKNESS: f64 = 0.5e-3;
/// Exit-surface to detector defocus.
pub const DEFAULT_DEFOCUS: f64 = 58.2e-3;
/// Binary phase depth of the etched layers (radians).
pub const DEFAULT_CONTRAST: f64 = -0.323;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OpticalGrid {
    pub nx: usize,
    pub ny: usize,
    /// Lateral sample spacing (m).
    pub pitch: f64,
    /// Vacuum wavelength (m).
    pub wavelength: f64,
    /// Number of object slices J.
    pub slices: usize,
    /// Slice separation δz (m).
    pub slice_thickness: f64,
    /// Object exit surface to detector distance Δz (m).
    pub defocus: f64,
}

impl Default for OpticalGrid {
    /// Desk-scale 64×64×4 grid. The pitch keeps ±10° illumination inside the
    /// sampled band (`k sin 10° < π / pitch`).
    fn default() -> Self {
        OpticalGrid {
            nx: 64,
            ny: 64,
            pitch: 1.5e-6,
            wavelength: DEFAULT_WAVELENGTH,
            slices: 4,
            slice_thickness: DEFAULT_SLICE_THICKNESS,
            defocus: DEFAULT_DEFOCUS,
        }
    }
}

impl OpticalGrid {
    pub fn new(
        nx: usize,
        ny: usize,
        pitch: f64,
        wavelength: f64,
        slices: usize,
        slice_thickness: f64,
        defocus: f64,
    ) -> Result<Self> {
        let g = OpticalGrid {
            nx,
            ny,
            pitch,
            wavelength,
            slices,
            slice_thickness,
            defocus,
        };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<()> {
        if self.nx < 2 || self.ny < 2 {
            return Err(Error::InvalidGrid(format!(
                "need nx, ny >= 2, got {} x {}",
                self.nx, self.ny
            )));
        }
        if self.slices == 0 {
            return Err(Error::InvalidGrid("need at least one slice".into()));
        }
        for (name, v) in [
            ("pitch", self.pitch),
            ("wavelength", self.wavelength),
            ("slice_thickness", self.slice_thickness),
            ("defocus", self.defocus),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidGrid(format!("{name} must be positive, got {v}")));
            }
        }
        Ok(())
    }

    pub fn wavenumber(&self) -> f64 {
        2.0 * PI / self.wavelength
    }

    pub fn shape2(&self) -> (usize, usize) {
        (self.nx, self.ny)
    }

    pub fn shape3(&self) -> (usize, usize, usize) {
        (self.slices, self.nx, self.ny)
    }

    /// Largest representable |k_x| (Nyquist), rad/m.
    pub fn nyquist(&self) -> f64 {
        PI / self.pitch
    }

    pub fn x_coord(&self, ix: usize) -> f64 {
        (ix as f64 - (self.nx as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn y_coord(&self, iy: usize) -> f64 {
        (iy as f64 - (self.ny as f64 - 1.0) / 2.0) * self.pitch
    }

    pub fn kx(&self, ix: usize) -> f64 {
        freq_step(self.nx, self.pitch) * freq_index_to_mode(ix, self.nx) as f64
    }

    pub fn ky(&self, iy: usize) -> f64 {
        freq_step(self.ny, self.pitch) * freq_index_to_mode(iy, self.ny) as f64
    }

    /// True when every DFT frequency of the grid propagates (no evanescent bins).
    pub fn fully_propagating(&self) -> bool {
        2.0 * self.nyquist().powi(2) <= self.wavenumber().powi(2)
    }
}

fn freq_step(n: usize, pitch: f64) -> f64 {
    2.0 * PI / (n as f64 * pitch)
}

/// Signed DFT mode number of array index `i` on an `n`-point axis.
pub fn freq_index_to_mode(i: usize, n: usize) -> isize {
    debug_assert!(i < n);
    if i <= (n - 1) / 2 {
        i as isize
    } else {
        i as isize - n as isize
    }
}

/// Inverse of [`freq_index_to_mode`]; `None` if the mode is not on the axis.
pub fn mode_to_freq_index(m: isize, n: usize) -> Option<usize> {
    let n_i = n as isize;
    let lo = -(n_i / 2);
    let hi = (n_i - 1) / 2;
    if m < lo || m > hi {
        return None;
    }
    Some(if m >= 0 { m as usize } else { (m + n_i) as usize })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IlluminationAngle {
    pub theta_x: f64,
    pub theta_y: f64,
}

impl IlluminationAngle {
    pub fn new(theta_x: f64, theta_y: f64) -> Self {
        IlluminationAngle { theta_x, theta_y }
    }

    pub fn from_degrees(theta_x: f64, theta_y: f64) -> Self {
        Self::new(theta_x.to_radians(), theta_y.to_radians())
    }

    pub fn normal() -> Self {
        Self::new(0.0, 0.0)
    }

    /// Checks the angle against the sampled band of `grid`.
    pub fn check_band(&self, grid: &OpticalGrid) -> Result<()> {
        let k = grid.wavenumber();
        let limit = grid.nyquist();
        for (axis, theta) in [('x', self.theta_x), ('y', self.theta_y)] {
            if !theta.is_finite() || theta.abs() >= PI / 2.0 {
                return Err(Error::AngleOutOfBand {
                    axis,
                    spatial_freq: f64::INFINITY,
                    limit,
                });
            }
            let f = k * theta.sin();
            if f.abs() > limit {
                return Err(Error::AngleOutOfBand {
                    axis,
                    spatial_freq: f,
                    limit,
                });
            }
        }
        Ok(())
    }
}

/// Complex scalar field on one z-plane.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub values: Array2<Complex64>,
    pub grid: OpticalGrid,
}

impl ComplexField {
    pub fn new(values: Array2<Complex64>, grid: OpticalGrid) -> Result<Self> {
        if values.dim() != grid.shape2() {
            return Err(Error::shape(&[grid.nx, grid.ny], values.shape()));
        }
        Ok(ComplexField {
            values: values.as_standard_layout().into_owned(),
            grid,
        })
    }

    pub fn filled(grid: OpticalGrid, value: Complex64) -> Self {
        ComplexField {
            values: Array2::from_elem(grid.shape2(), value),
            grid,
        }
    }

    pub fn energy(&self) -> f64 {
        self.values.iter().map(|v| v.norm_sqr()).sum()
    }

    pub fn intensity(&self) -> Array2<f64> {
        self.values.mapv(|v| v.norm_sqr())
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.re.is_finite() && v.im.is_finite())
    }
}

/// Stack of J real phase slices, `phases[[j, ix, iy]]` in radians.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseVolume {
    pub phases: Array3<f64>,
    pub grid: OpticalGrid,
}

impl PhaseVolume {
    pub fn zeros(grid: OpticalGrid) -> Self {
        PhaseVolume {
            phases: Array3::zeros(grid.shape3()),
            grid,
        }
    }

    pub fn new(phases: Array3<f64>, grid: OpticalGrid) -> Result<Self> {
        if phases.dim() != grid.shape3() {
            return Err(Error::shape(
                &[grid.slices, grid.nx, grid.ny],
                phases.shape(),
            ));
        }
        Ok(PhaseVolume {
            phases: phases.as_standard_layout().into_owned(),
            grid,
        })
    }

    /// Binary object: `contrast` where `mask` is set, 0 elsewhere.
    pub fn from_mask(mask: &Array3<bool>, contrast: f64, grid: OpticalGrid) -> Result<Self> {
        Self::new(mask.mapv(|b| if b { contrast } else { 0.0 }), grid)
    }

    pub fn slice(&self, j: usize) -> ArrayView2<'_, f64> {
        self.phases.index_axis(ndarray::Axis(0), j)
    }

    pub fn num_slices(&self) -> usize {
        self.phases.dim().0
    }

    /// Complex transmittance `exp(iφ)` of slice `j`.
    pub fn transmittance(&self, j: usize) -> Array2<Complex64> {
        self.slice(j).mapv(|p| Complex64::from_polar(1.0, p))
    }
}

/// `exp[ik(x sinθx + y sinθy)]` sampled on the grid.
pub fn make_plane_wave(angle: IlluminationAngle, grid: &OpticalGrid) -> Result<ComplexField> {
    grid.validate()?;
    angle.check_band(grid)?;
    let k = grid.wavenumber();
    let (sx, sy) = (angle.theta_x.sin(), angle.theta_y.sin());
    let values = Array2::from_shape_fn(grid.shape2(), |(ix, iy)| {
        Complex64::from_polar(1.0, k * (grid.x_coord(ix) * sx + grid.y_coord(iy) * sy))
    });
    Ok(ComplexField {
        values,
        grid: *grid,
    })
}

/// Spectral propagator for a fixed distance, caching the FFT plans and the
/// transfer function `exp(-i(k - sqrt(k² - kx² - ky²)) d)`. Evanescent bins
/// are zeroed.
///
/// A tilted propagator acts on fields carrying the plane-wave factor of an
/// illumination angle: the factor is divided out, the slowly varying envelope
/// is propagated with the kernel shifted to the carrier frequency, and the
/// factor is restored. This keeps a sampled tilted wave free of the phase
/// jump it would otherwise have across the periodic boundary.
#[derive(Debug, Clone)]
pub struct SpectralPropagator {
    grid: OpticalGrid,
    distance: f64,
    kernel: Array2<Complex64>,
    carrier: Option<Array2<Complex64>>,
    fft: Arc<Fft2>,
}

impl SpectralPropagator {
    pub fn new(grid: &OpticalGrid, distance: f64) -> Result<Self> {
        Self::with_fft(grid, distance, Arc::new(Fft2::new(grid.nx, grid.ny)))
    }

    pub fn with_fft(grid: &OpticalGrid, distance: f64, fft: Arc<Fft2>) -> Result<Self> {
        Self::build(grid, distance, fft, None)
    }

    /// Propagator for fields travelling along `angle` (identical to the plain
    /// one at normal incidence).
    pub fn tilted(grid: &OpticalGrid, distance: f64, fft: Arc<Fft2>, angle: IlluminationAngle) -> Result<Self> {
        if angle.theta_x == 0.0 && angle.theta_y == 0.0 {
            return Self::build(grid, distance, fft, None);
        }
        let carrier = make_plane_wave(angle, grid)?.values;
        Self::build(grid, distance, fft, Some((angle, carrier)))
    }

    fn build(
        grid: &OpticalGrid,
        distance: f64,
        fft: Arc<Fft2>,
        tilt: Option<(IlluminationAngle, Array2<Complex64>)>,
    ) -> Result<Self> {
        grid.validate()?;
        if !(distance.is_finite() && distance >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "propagation distance must be >= 0, got {distance}"
            )));
        }
        let k = grid.wavenumber();
        let k2 = k * k;
        let (cx, cy) = match &tilt {
            Some((a, _)) => (k * a.theta_x.sin(), k * a.theta_y.sin()),
            None => (0.0, 0.0),
        };
        // k - sqrt(k² - kt²) written without cancellation
        let phase = |fx: f64, fy: f64| {
            let kt2 = fx * fx + fy * fy;
            (kt2 <= k2).then(|| kt2 / (k + (k2 - kt2).sqrt()) * distance)
        };
        // Under a tilt the two aliases of an even-length Nyquist bin sit at
        // different carrier-frame frequencies; the bin takes the mean phase of
        // both so that opposite tilts stay mirror images.
        let aliases = |f: f64, i: usize, n: usize, shift: f64| -> Vec<f64> {
            if shift != 0.0 && n % 2 == 0 && i == n / 2 {
                vec![f + shift, -f + shift]
            } else {
                vec![f + shift]
            }
        };
        let kernel = Array2::from_shape_fn(grid.shape2(), |(ix, iy)| {
            let fxs = aliases(grid.kx(ix), ix, grid.nx, cx);
            let fys = aliases(grid.ky(iy), iy, grid.ny, cy);
            let phases: Option<Vec<f64>> = fxs
                .iter()
                .flat_map(|&fx| fys.iter().map(move |&fy| (fx, fy)))
                .map(|(fx, fy)| phase(fx, fy))
                .collect();
            match phases {
                Some(p) => Complex64::from_polar(1.0, -p.iter().sum::<f64>() / p.len() as f64),
                None => Complex64::new(0.0, 0.0),
            }
        });
        Ok(SpectralPropagator {
            grid: *grid,
            distance,
            kernel,
            carrier: tilt.map(|(_, c)| c),
            fft,
        })
    }

    pub fn distance(&self) -> f64 {
        self.distance
    }

    pub fn kernel(&self) -> &Array2<Complex64> {
        &self.kernel
    }

    pub fn apply(&self, field: &ComplexField) -> Result<ComplexField> {
        let mut out = field.clone();
        self.apply_inplace(&mut out.values, false)?;
        Ok(out)
    }

    /// Adjoint map: propagation with the conjugate transfer function.
    pub fn apply_adjoint(&self, field: &ComplexField) -> Result<ComplexField> {
        let mut out = field.clone();
        self.apply_inplace(&mut out.values, true)?;
        Ok(out)
    }

    pub(crate) fn apply_inplace(&self, values: &mut Array2<Complex64>, adjoint: bool) -> Result<()> {
        if values.dim() != self.grid.shape2() {
            return Err(Error::shape(&[self.grid.nx, self.grid.ny], values.shape()));
        }
        if self.distance == 0.0 {
            return Ok(());
        }
        if let Some(c) = &self.carrier {
            Zip::from(&mut *values).and(c).for_each(|v, c| *v *= c.conj());
        }
        self.fft.forward(values);
        if adjoint {
            Zip::from(&mut *values)
                .and(&self.kernel)
                .for_each(|v, k| *v *= k.conj());
        } else {
            Zip::from(&mut *values).and(&self.kernel).for_each(|v, k| *v *= k);
        }
        self.fft.inverse(values);
        if let Some(c) = &self.carrier {
            Zip::from(&mut *values).and(c).for_each(|v, c| *v *= c);
        }
        Ok(())
    }
}

pub fn propagate(field: &ComplexField, distance: f64) -> Result<ComplexField> {
    if !field.is_finite() {
        return Err(Error::InvalidParameter("field has non-finite entries".into()));
    }
    SpectralPropagator::new(&field.grid, distance)?.apply(field)
}

/// `propagate` for a field carrying the plane-wave factor of `angle`.
pub fn propagate_tilted(field: &ComplexField, distance: f64, angle: IlluminationAngle) -> Result<ComplexField> {
    if !field.is_finite() {
        return Err(Error::InvalidParameter("field has non-finite entries".into()));
    }
    let fft = Arc::new(Fft2::new(field.grid.nx, field.grid.ny));
    SpectralPropagator::tilted(&field.grid, distance, fft, angle)?.apply(field)
}

/// Thin-transparency modulation `ψ · exp(iφ)`.
pub fn modulate(field: &ComplexField, slice_phase: ArrayView2<'_, f64>) -> Result<ComplexField> {
    if slice_phase.dim() != field.values.dim() {
        return Err(Error::shape(field.values.shape(), slice_phase.shape()));
    }
    let mut out = field.clone();
    Zip::from(&mut out.values)
        .and(&slice_phase)
        .for_each(|v, &p| *v *= Complex64::from_polar(1.0, p));
    Ok(out)
}
