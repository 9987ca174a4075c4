//! Multi-slice beam propagation forward model, angle sweeps and the
//! procedural layered-object generator used to build datasets.

use std::collections::HashMap;
use std::sync::{Arc, RwLock};

use ndarray::{Array2, Array3};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fft::Fft2;
use crate::grid::{
    make_plane_wave, IlluminationAngle, OpticalGrid, PhaseVolume,
    SpectralPropagator,
};

/// Detector-plane intensity `|ψ^{[J+1]}|²` for one illumination angle.
#[derive(Debug, Clone, PartialEq)]
pub struct IntensityPattern {
    pub values: Array2<f64>,
    pub angle: IlluminationAngle,
    pub grid: OpticalGrid,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    X,
    Y,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceAngle {
    pub angle: IlluminationAngle,
    pub axis: SweepAxis,
}

/// Ordered illumination sequence, split into an x-sweep group followed by a
/// y-sweep group of equal length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AngleSequence {
    pub angles: Vec<SequenceAngle>,
}

impl Default for AngleSequence {
    /// −10°..+10° in 1° steps about x, then the same about y (N = 42).
    fn default() -> Self {
        Self::sweep(10, 1.0)
    }
}

impl AngleSequence {
    /// Symmetric sweep of `2*half_steps + 1` angles per axis, `step_deg` apart.
    pub fn sweep(half_steps: usize, step_deg: f64) -> Self {
        let h = half_steps as isize;
        let mut angles = Vec::with_capacity(2 * (2 * half_steps + 1));
        for axis in [SweepAxis::X, SweepAxis::Y] {
            for i in -h..=h {
                let t = (i as f64 * step_deg).to_radians();
                let angle = match axis {
                    SweepAxis::X => IlluminationAngle::new(t, 0.0),
                    SweepAxis::Y => IlluminationAngle::new(0.0, t),
                };
                angles.push(SequenceAngle { angle, axis });
            }
        }
        AngleSequence { angles }
    }

    pub fn single(angle: IlluminationAngle) -> Self {
        AngleSequence {
            angles: vec![SequenceAngle {
                angle,
                axis: SweepAxis::X,
            }],
        }
    }

    pub fn len(&self) -> usize {
        self.angles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.angles.is_empty()
    }

    pub fn get(&self, n: usize) -> IlluminationAngle {
        self.angles[n].angle
    }

    pub fn iter(&self) -> impl Iterator<Item = IlluminationAngle> + '_ {
        self.angles.iter().map(|a| a.angle)
    }
}

/// Forward operator `H_n` with per-angle cached propagators for δz and Δz.
///
/// Slice order: illumination, modulate by slice 1, propagate δz, ...,
/// modulate by slice J, propagate Δz to the detector.
#[derive(Debug, Clone)]
pub struct BpmModel {
    grid: OpticalGrid,
    fft: Arc<Fft2>,
    cache: Arc<RwLock<HashMap<(u64, u64), Arc<AnglePropagators>>>>,
}

/// Slice-to-slice and slice-to-detector propagators for one angle.
#[derive(Debug)]
pub struct AnglePropagators {
    pub slice: SpectralPropagator,
    pub detector: SpectralPropagator,
}

/// Fields recorded during one forward pass: the field entering each slice's
/// modulation, and the detector field.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub slice_inputs: Vec<Array2<Complex64>>,
    pub detector: Array2<Complex64>,
}

impl BpmModel {
    pub fn new(grid: &OpticalGrid) -> Result<Self> {
        grid.validate()?;
        Ok(BpmModel {
            grid: *grid,
            fft: Arc::new(Fft2::new(grid.nx, grid.ny)),
            cache: Arc::default(),
        })
    }

    pub fn grid(&self) -> &OpticalGrid {
        &self.grid
    }

    pub fn propagators(&self, angle: IlluminationAngle) -> Result<Arc<AnglePropagators>> {
        let key = (angle.theta_x.to_bits(), angle.theta_y.to_bits());
        if let Some(p) = self.cache.read().expect("propagator cache").get(&key) {
            return Ok(p.clone());
        }
        let g = &self.grid;
        let p = Arc::new(AnglePropagators {
            slice: SpectralPropagator::tilted(g, g.slice_thickness, self.fft.clone(), angle)?,
            detector: SpectralPropagator::tilted(g, g.defocus, self.fft.clone(), angle)?,
        });
        self.cache.write().expect("propagator cache").insert(key, p.clone());
        Ok(p)
    }

    fn check_volume(&self, phases: &Array3<f64>) -> Result<()> {
        if phases.dim() != self.grid.shape3() {
            return Err(Error::shape(
                &[self.grid.slices, self.grid.nx, self.grid.ny],
                phases.shape(),
            ));
        }
        Ok(())
    }

    pub fn trace(&self, phases: &Array3<f64>, angle: IlluminationAngle) -> Result<ForwardTrace> {
        self.check_volume(phases)?;
        let mut psi = make_plane_wave(angle, &self.grid)?.values;
        let props = self.propagators(angle)?;
        let j_count = phases.dim().0;
        let mut slice_inputs = Vec::with_capacity(j_count);
        for j in 0..j_count {
            slice_inputs.push(psi.clone());
            let slice = phases.index_axis(ndarray::Axis(0), j);
            ndarray::Zip::from(&mut psi)
                .and(&slice)
                .for_each(|v, &p| *v *= Complex64::from_polar(1.0, p));
            if j + 1 < j_count {
                props.slice.apply_inplace(&mut psi, false)?;
            }
        }
        props.detector.apply_inplace(&mut psi, false)?;
        Ok(ForwardTrace {
            slice_inputs,
            detector: psi,
        })
    }

    pub fn intensity(&self, phases: &Array3<f64>, angle: IlluminationAngle) -> Result<Array2<f64>> {
        Ok(self.trace(phases, angle)?.detector.mapv(|v| v.norm_sqr()))
    }
}

pub fn forward_intensity(object: &PhaseVolume, angle: IlluminationAngle) -> Result<IntensityPattern> {
    let model = BpmModel::new(&object.grid)?;
    Ok(IntensityPattern {
        values: model.intensity(&object.phases, angle)?,
        angle,
        grid: object.grid,
    })
}

/// Intensity pattern for every angle of the sequence, in sequence order.
pub fn simulate_sequence(object: &PhaseVolume, angles: &AngleSequence) -> Result<Vec<IntensityPattern>> {
    if angles.is_empty() {
        return Err(Error::InvalidParameter("empty angle sequence".into()));
    }
    let model = BpmModel::new(&object.grid)?;
    angles
        .angles
        .par_iter()
        .enumerate()
        .map(|(index, a)| {
            model
                .intensity(&object.phases, a.angle)
                .map(|values| IntensityPattern {
                    values,
                    angle: a.angle,
                    grid: object.grid,
                })
                .map_err(|e| Error::AtAngle {
                    index,
                    source: Box::new(e),
                })
        })
        .collect()
}

/// Adds zero-mean Gaussian detector noise, clamping at zero intensity.
pub fn add_detector_noise(patterns: &mut [IntensityPattern], sigma: f64, seed: u64) -> Result<()> {
    if !(sigma >= 0.0 && sigma.is_finite()) {
        return Err(Error::InvalidParameter(format!("noise sigma must be >= 0, got {sigma}")));
    }
    if sigma == 0.0 {
        return Ok(());
    }
    let normal = Normal::new(0.0, sigma).expect("validated sigma");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for p in patterns.iter_mut() {
        p.values
            .mapv_inplace(|v| (v + normal.sample(&mut rng)).max(0.0));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ObjectSpec {
    pub slices: usize,
    /// Minimum feature size in samples.
    pub feature_scale: usize,
    pub fill_fraction: f64,
    pub contrast: f64,
}

impl Default for ObjectSpec {
    fn default() -> Self {
        ObjectSpec {
            slices: 4,
            feature_scale: 4,
            fill_fraction: 0.3,
            contrast: crate::grid::DEFAULT_CONTRAST,
        }
    }
}

/// Binary Manhattan-geometry object: each slice is a union of axis-aligned
/// rectangles snapped to a lattice of `feature_scale`-sample cells, so every
/// feature and every gap is at least `feature_scale` samples wide.
pub fn generate_layered_object(seed: u64, spec: &ObjectSpec, grid: &OpticalGrid) -> Result<PhaseVolume> {
    grid.validate()?;
    if spec.slices != grid.slices {
        return Err(Error::InvalidParameter(format!(
            "object has {} slices but the grid has {}",
            spec.slices, grid.slices
        )));
    }
    if !(spec.fill_fraction > 0.0 && spec.fill_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "fill_fraction must lie in (0, 1), got {}",
            spec.fill_fraction
        )));
    }
    if !spec.contrast.is_finite() || spec.contrast == 0.0 {
        return Err(Error::InvalidParameter("contrast must be finite and nonzero".into()));
    }
    let fs = spec.feature_scale;
    if fs == 0 || grid.nx / fs.max(1) < 2 || grid.ny / fs.max(1) < 2 {
        return Err(Error::InvalidParameter(format!(
            "feature_scale {fs} does not fit two cells on a {}x{} grid",
            grid.nx, grid.ny
        )));
    }
    let (cx, cy) = (grid.nx / fs, grid.ny / fs);
    let cells = cx * cy;
    let target = ((spec.fill_fraction * cells as f64).round() as usize).clamp(1, cells - 1);
    let max_w = (cx / 4).max(1);
    let max_h = (cy / 4).max(1);

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut phases = Array3::<f64>::zeros(grid.shape3());
    for j in 0..spec.slices {
        let mut lattice = Array2::<bool>::from_elem((cx, cy), false);
        let mut covered = 0usize;
        let mut misses = 0usize;
        while covered < target && misses < 64 {
            let w = rng.random_range(1..=max_w);
            let h = rng.random_range(1..=max_h);
            let x0 = rng.random_range(0..=cx - w);
            let y0 = rng.random_range(0..=cy - h);
            let fresh = (x0..x0 + w)
                .flat_map(|a| (y0..y0 + h).map(move |b| (a, b)))
                .filter(|&c| !lattice[c])
                .count();
            if fresh == 0 || covered + fresh > target {
                misses += 1;
                continue;
            }
            for a in x0..x0 + w {
                for b in y0..y0 + h {
                    lattice[(a, b)] = true;
                }
            }
            covered += fresh;
        }
        // top up with single cells when rectangles keep overshooting
        while covered < target {
            let c = (rng.random_range(0..cx), rng.random_range(0..cy));
            if !lattice[c] {
                lattice[c] = true;
                covered += 1;
            }
        }
        for ((a, b), &on) in lattice.indexed_iter() {
            if on {
                for ix in a * fs..(a + 1) * fs {
                    for iy in b * fs..(b + 1) * fs {
                        phases[(j, ix, iy)] = spec.contrast;
                    }
                }
            }
        }
    }
    PhaseVolume::new(phases, *grid)
}
