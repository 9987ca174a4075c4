//! Physics-informed network inputs: per-angle gradient-descent estimates of
//! the phase volume, their TV-denoised test-time variant, and the moving
//! average that shortens the N-angle sequence to M windows.
//!
//! The optimization variable is the real phase `φ` of every voxel; gradients
//! are taken through `f = exp(iφ)`.

mod tv;
mod window;

pub use tv::{tv_denoise_fgp, tv_objective, tv_value, tv_value_slice, FgpOutcome};
pub use window::{window_average, ApproximantSequence, Provenance, WindowSpec};

use ndarray::{Array2, Array3, Axis, Zip};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::bpm::{BpmModel, IntensityPattern};
use crate::error::{Error, Result};
use crate::grid::{IlluminationAngle, OpticalGrid, PhaseVolume};

/// Gradient-descent step size used for every approximant.
pub const DEFAULT_STEP: f64 = 0.05;
/// TV weight of the test-time approximant.
pub const DEFAULT_TV_WEIGHT: f64 = 1e-3;
pub const TEST_GD_ITERS: usize = 3;
pub const TEST_FGP_ITERS: usize = 2;

/// Recorded forward pass used for reverse traversal.
#[derive(Debug, Clone)]
pub struct AdjointTape {
    pub angle: IlluminationAngle,
    pub grid: OpticalGrid,
    pub phases: Array3<f64>,
    /// Field entering the modulation of slice j (`ψ^{[j]}`), j = 0..J.
    pub slice_inputs: Vec<Array2<Complex64>>,
    /// Field at the detector plane.
    pub detector: Array2<Complex64>,
    pub intensity: Array2<f64>,
}

impl AdjointTape {
    pub fn record(model: &BpmModel, phases: &Array3<f64>, angle: IlluminationAngle) -> Result<Self> {
        let trace = model.trace(phases, angle)?;
        let intensity = trace.detector.mapv(|v| v.norm_sqr());
        Ok(AdjointTape {
            angle,
            grid: *model.grid(),
            phases: phases.clone(),
            slice_inputs: trace.slice_inputs,
            detector: trace.detector,
            intensity,
        })
    }

    /// Re-runs the recorded pass from the stored illumination field.
    pub fn replay(&self, model: &BpmModel) -> Result<Array2<f64>> {
        let props = model.propagators(self.angle)?;
        let mut psi = self.slice_inputs[0].clone();
        let j_count = self.phases.dim().0;
        for j in 0..j_count {
            Zip::from(&mut psi)
                .and(&self.phases.index_axis(Axis(0), j))
                .for_each(|v, &p| *v *= Complex64::from_polar(1.0, p));
            if j + 1 < j_count {
                props.slice.apply_inplace(&mut psi, false)?;
            }
        }
        props.detector.apply_inplace(&mut psi, false)?;
        Ok(psi.mapv(|v| v.norm_sqr()))
    }

    /// Back-propagates the detector-plane sensitivity `∂L/∂|u|²` to the
    /// per-voxel phase gradient.
    pub fn backward(&self, model: &BpmModel, intensity_sensitivity: &Array2<f64>) -> Result<Array3<f64>> {
        if intensity_sensitivity.dim() != self.intensity.dim() {
            return Err(Error::shape(self.intensity.shape(), intensity_sensitivity.shape()));
        }
        let props = model.propagators(self.angle)?;
        // dL = Re Σ conj(2 r u) du
        let mut adj = Array2::from_shape_fn(self.detector.dim(), |idx| {
            self.detector[idx] * (2.0 * intensity_sensitivity[idx])
        });
        props.detector.apply_inplace(&mut adj, true)?;

        let j_count = self.phases.dim().0;
        let mut grad = Array3::<f64>::zeros(self.phases.dim());
        for j in (0..j_count).rev() {
            let phase = self.phases.index_axis(Axis(0), j);
            let input = &self.slice_inputs[j];
            let mut gslice = grad.index_axis_mut(Axis(0), j);
            Zip::from(&mut gslice)
                .and(&mut adj)
                .and(input)
                .and(&phase)
                .for_each(|g, a, &psi, &p| {
                    let t = Complex64::from_polar(1.0, p);
                    let chi = psi * t;
                    // χ = ψ e^{iφ}: ∂L/∂φ = Im(χ̄ · conj χ)
                    *g = (*a * chi.conj()).im;
                    *a *= t.conj();
                });
            if j > 0 {
                props.slice.apply_inplace(&mut adj, true)?;
            }
        }
        Ok(grad)
    }
}

fn check_pattern(object: &PhaseVolume, g: &IntensityPattern) -> Result<()> {
    if object.grid != g.grid {
        return Err(Error::InvalidParameter("object and pattern grids differ".into()));
    }
    if g.values.dim() != object.grid.shape2() {
        return Err(Error::shape(&[object.grid.nx, object.grid.ny], g.values.shape()));
    }
    Ok(())
}

fn half_sq_residual(h: &Array2<f64>, g: &Array2<f64>) -> f64 {
    0.5 * h.iter().zip(g.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>()
}

/// `½ ‖H_n(f) − g_n‖²`.
pub fn data_loss(object: &PhaseVolume, g: &IntensityPattern, angle: IlluminationAngle) -> Result<f64> {
    check_pattern(object, g)?;
    let model = BpmModel::new(&object.grid)?;
    let h = model.intensity(&object.phases, angle)?;
    Ok(half_sq_residual(&h, &g.values))
}

/// Loss and phase gradient from one recorded forward/adjoint pass.
pub fn loss_and_gradient(
    model: &BpmModel,
    phases: &Array3<f64>,
    g: &Array2<f64>,
    angle: IlluminationAngle,
) -> Result<(f64, Array3<f64>)> {
    let tape = AdjointTape::record(model, phases, angle)?;
    if g.dim() != tape.intensity.dim() {
        return Err(Error::shape(tape.intensity.shape(), g.shape()));
    }
    let residual = &tape.intensity - g;
    let loss = 0.5 * residual.iter().map(|r| r * r).sum::<f64>();
    let grad = tape.backward(model, &residual)?;
    Ok((loss, grad))
}

/// `∇_φ L_n` with the same shape as the object.
pub fn data_loss_gradient(
    object: &PhaseVolume,
    g: &IntensityPattern,
    angle: IlluminationAngle,
) -> Result<PhaseVolume> {
    check_pattern(object, g)?;
    let model = BpmModel::new(&object.grid)?;
    let (_, grad) = loss_and_gradient(&model, &object.phases, &g.values, angle)?;
    PhaseVolume::new(grad, object.grid)
}

#[derive(Debug, Clone)]
pub struct GdOutcome {
    pub volume: PhaseVolume,
    /// Loss before each update.
    pub losses: Vec<f64>,
    /// Set when the loss rose on three consecutive iterations.
    pub diverged: bool,
}

/// Gradient descent on `L_n` from the zero volume.
pub fn gd_approximant(
    g: &IntensityPattern,
    angle: IlluminationAngle,
    iters: usize,
    step: f64,
) -> Result<GdOutcome> {
    let model = BpmModel::new(&g.grid)?;
    gd_with_model(&model, &g.values, angle, iters, step)
}

pub(crate) fn gd_with_model(
    model: &BpmModel,
    g: &Array2<f64>,
    angle: IlluminationAngle,
    iters: usize,
    step: f64,
) -> Result<GdOutcome> {
    if iters == 0 {
        return Err(Error::InvalidParameter("gradient descent needs iters >= 1".into()));
    }
    if !step.is_finite() {
        return Err(Error::InvalidParameter("step must be finite".into()));
    }
    let grid = *model.grid();
    let mut phases = Array3::<f64>::zeros(grid.shape3());
    let mut losses = Vec::with_capacity(iters);
    let mut rises = 0usize;
    let mut diverged = false;
    for _ in 0..iters {
        let (loss, grad) = loss_and_gradient(model, &phases, g, angle)?;
        if let Some(&prev) = losses.last() {
            if loss > prev {
                rises += 1;
                if rises >= 3 && !diverged {
                    diverged = true;
                    log::warn!("approximant gradient descent diverging (loss {loss:.4e})");
                }
            } else {
                rises = 0;
            }
        }
        losses.push(loss);
        phases.scaled_add(-step, &grad);
    }
    Ok(GdOutcome {
        volume: PhaseVolume::new(phases, grid)?,
        losses,
        diverged,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TvApproximantSpec {
    pub gd_iters: usize,
    pub step: f64,
    pub tv_weight: f64,
    pub fgp_iters: usize,
}

impl Default for TvApproximantSpec {
    fn default() -> Self {
        TvApproximantSpec {
            gd_iters: TEST_GD_ITERS,
            step: DEFAULT_STEP,
            tv_weight: DEFAULT_TV_WEIGHT,
            fgp_iters: TEST_FGP_ITERS,
        }
    }
}

/// Test-time approximant: a few GD steps followed by FGP TV denoising.
pub fn tv_approximant(g: &IntensityPattern, angle: IlluminationAngle) -> Result<PhaseVolume> {
    tv_approximant_with(g, angle, &TvApproximantSpec::default())
}

pub fn tv_approximant_with(
    g: &IntensityPattern,
    angle: IlluminationAngle,
    spec: &TvApproximantSpec,
) -> Result<PhaseVolume> {
    let gd = gd_approximant(g, angle, spec.gd_iters, spec.step)?;
    let denoised = tv_denoise_fgp(&gd.volume.phases, spec.tv_weight, spec.fgp_iters)?;
    PhaseVolume::new(denoised.volume, g.grid)
}
