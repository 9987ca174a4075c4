//! Evaluation metrics: probability of error on binarised volumes, its
//! transport form, exact Wasserstein-1, Pearson correlation and SSIM.

pub mod ssim;
pub mod transport;

use std::fmt::Write as _;

use ndarray::{Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use ssim::ssim;
pub use transport::{wasserstein1, wasserstein1_pooled, wasserstein1_points, MassPoint, TransportPlan};

pub const DEFAULT_THRESHOLD: f64 = 0.5;

/// Which end of the value range marks an occupied voxel. Phase objects with
/// negative contrast are occupied where the phase is lowest.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

impl Polarity {
    pub fn of_contrast(c: f64) -> Self {
        if c < 0.0 {
            Polarity::Negative
        } else {
            Polarity::Positive
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BitsSource {
    GroundTruth,
    Reconstruction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BinaryVolume {
    pub bits: Array3<bool>,
    pub threshold: f64,
    pub source: BitsSource,
}

impl BinaryVolume {
    pub fn from_bits(bits: Array3<bool>, source: BitsSource) -> Self {
        BinaryVolume {
            bits,
            threshold: DEFAULT_THRESHOLD,
            source,
        }
    }

    pub fn layer(&self, j: usize) -> ArrayView2<'_, bool> {
        self.bits.index_axis(Axis(0), j)
    }

    pub fn num_layers(&self) -> usize {
        self.bits.dim().0
    }
}

/// Maps the volume's min..max onto 0..1 (reversed for negative polarity).
/// A constant volume maps to zeros.
pub fn normalize(x: &Array3<f64>, polarity: Polarity) -> Array3<f64> {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = hi - lo;
    if !(span > 0.0) {
        return Array3::zeros(x.dim());
    }
    match polarity {
        Polarity::Positive => x.mapv(|v| (v - lo) / span),
        Polarity::Negative => x.mapv(|v| (hi - v) / span),
    }
}

/// Thresholds the min-max normalised volume.
pub fn binarize(x: &Array3<f64>, threshold: f64, polarity: Polarity, source: BitsSource) -> BinaryVolume {
    let lo = x.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        log::warn!("binarising a constant volume: all bits are zero");
    }
    let n = normalize(x, polarity);
    BinaryVolume {
        bits: n.mapv(|v| v.abs() >= threshold && hi > lo),
        threshold,
        source,
    }
}

fn check_same(f: &BinaryVolume, g: &BinaryVolume) -> Result<()> {
    if f.bits.dim() != g.bits.dim() {
        return Err(Error::shape(f.bits.shape(), g.bits.shape()));
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorRate {
    pub overall: f64,
    pub per_layer: Vec<f64>,
}

/// Fraction of disagreeing voxels, overall and per layer.
pub fn probability_of_error(f: &BinaryVolume, g: &BinaryVolume) -> Result<ErrorRate> {
    check_same(f, g)?;
    let (j, nx, ny) = f.bits.dim();
    let per_layer: Vec<f64> = (0..j)
        .map(|l| {
            let wrong = f.layer(l).iter().zip(g.layer(l).iter()).filter(|(a, b)| a != b).count();
            wrong as f64 / (nx * ny) as f64
        })
        .collect();
    let wrong = f.bits.iter().zip(g.bits.iter()).filter(|(a, b)| a != b).count();
    Ok(ErrorRate {
        overall: wrong as f64 / f.bits.len() as f64,
        per_layer,
    })
}

/// `N²·C̃` at a coupled pair: `1 − g_kl` on the diagonal, 1 elsewhere.
pub fn scaled_transport_cost(g_kl: bool, same_site: bool) -> f64 {
    if same_site && g_kl {
        0.0
    } else {
        1.0
    }
}

/// PE written as `Σ_ij |Σ_kl γ_ij,kl C̃_ij,kl|` for a binary coupling whose
/// row sums are `f`. Entries are flat voxel indices `(ij, kl)` with γ = 1.
///
/// The δ term `g_kl δ[ij − kl]` is kept in the division-free form
/// `γ C̃ = (γ − g δ) / N²`, so sites where γ vanishes but `g_ij = 1` still
/// contribute their `−g_ij`.
pub fn pe_transport_form_with(f: &BinaryVolume, g: &BinaryVolume, coupling: &[(usize, usize)]) -> Result<f64> {
    check_same(f, g)?;
    let n = f.bits.len();
    let fs = f.bits.as_slice().ok_or_else(|| Error::InvalidParameter("non-contiguous volume".into()))?;
    let gs = g.bits.as_slice().ok_or_else(|| Error::InvalidParameter("non-contiguous volume".into()))?;
    let mut row = vec![0.0f64; n];
    let mut diagonal = vec![false; n];
    for &(ij, kl) in coupling {
        if ij >= n || kl >= n {
            return Err(Error::InvalidParameter(format!("coupling entry ({ij}, {kl}) outside {n} voxels")));
        }
        row[ij] += scaled_transport_cost(gs[kl], ij == kl);
        if ij == kl {
            diagonal[ij] = true;
        }
    }
    let mut rows = vec![0usize; n];
    for &(ij, _) in coupling {
        rows[ij] += 1;
    }
    if let Some(bad) = (0..n).find(|&i| rows[i] != fs[i] as usize) {
        return Err(Error::InvalidParameter(format!(
            "coupling row sum at voxel {bad} is {} but f = {}",
            rows[bad], fs[bad] as u8
        )));
    }
    let total: f64 = (0..n)
        .map(|ij| {
            // rows without a diagonal coupling still carry −g_ij·δ
            let delta = if !diagonal[ij] && gs[ij] { 1.0 } else { 0.0 };
            (row[ij] - delta).abs()
        })
        .sum();
    Ok(total / n as f64)
}

/// [`pe_transport_form_with`] under the diagonal coupling `γ_ij,kl = f_ij δ[ij − kl]`.
pub fn pe_transport_form(f: &BinaryVolume, g: &BinaryVolume) -> Result<f64> {
    let coupling: Vec<(usize, usize)> = f
        .bits
        .iter()
        .enumerate()
        .filter(|(_, &b)| b)
        .map(|(i, _)| (i, i))
        .collect();
    pe_transport_form_with(f, g, &coupling)
}

/// Pearson correlation coefficient.
pub fn pcc(f: &[f64], g: &[f64]) -> Result<f64> {
    if f.len() != g.len() || f.is_empty() {
        return Err(Error::shape(&[f.len()], &[g.len()]));
    }
    let n = f.len() as f64;
    let mf = f.iter().sum::<f64>() / n;
    let mg = g.iter().sum::<f64>() / n;
    let (mut sff, mut sgg, mut sfg) = (0.0, 0.0, 0.0);
    for (&a, &b) in f.iter().zip(g) {
        let (da, db) = (a - mf, b - mg);
        sff += da * da;
        sgg += db * db;
        sfg += da * db;
    }
    if sff == 0.0 || sgg == 0.0 {
        return Err(Error::ZeroVariance(if sff == 0.0 { "first argument" } else { "second argument" }));
    }
    Ok(sfg / (sff.sqrt() * sgg.sqrt()))
}

/// Per-layer Pearson correlation of two volumes.
pub fn pcc_layers(f: &Array3<f64>, g: &Array3<f64>) -> Result<Vec<f64>> {
    if f.dim() != g.dim() {
        return Err(Error::shape(f.shape(), g.shape()));
    }
    f.axis_iter(Axis(0))
        .zip(g.axis_iter(Axis(0)))
        .map(|(a, b)| {
            let a: Vec<f64> = a.iter().copied().collect();
            let b: Vec<f64> = b.iter().copied().collect();
            pcc(&a, &b)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalOptions {
    pub threshold: f64,
    pub polarity: Polarity,
    /// Block size for mass pooling before the exact W1 solve (1 = none).
    pub w1_pool: usize,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            threshold: DEFAULT_THRESHOLD,
            polarity: Polarity::of_contrast(crate::grid::DEFAULT_CONTRAST),
            w1_pool: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub label: String,
    pub pe: f64,
    pub w1: f64,
    pub pcc: f64,
    pub ssim: f64,
}

/// Rows `Layer 1..J` and `Overall`; the overall row averages the layers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub rows: Vec<MetricRow>,
}

impl MetricReport {
    pub fn overall(&self) -> &MetricRow {
        self.rows.last().expect("report has an overall row")
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("layer,PE,W1,PCC,SSIM\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{:.8},{:.8},{:.8},{:.8}", r.label, r.pe, r.w1, r.pcc, r.ssim);
        }
        s
    }

    /// Element-wise mean of several reports with the same layout. Undefined
    /// (NaN) entries are left out of each average.
    pub fn mean(reports: &[MetricReport]) -> Result<MetricReport> {
        let first = reports
            .first()
            .ok_or_else(|| Error::InvalidParameter("no reports to average".into()))?;
        let rows = first
            .rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                let avg = |get: fn(&MetricRow) -> f64| {
                    let vals: Vec<f64> = reports.iter().map(|rep| get(&rep.rows[i])).filter(|v| v.is_finite()).collect();
                    if vals.is_empty() {
                        f64::NAN
                    } else {
                        vals.iter().sum::<f64>() / vals.len() as f64
                    }
                };
                MetricRow {
                    label: r.label.clone(),
                    pe: avg(|r| r.pe),
                    w1: avg(|r| r.w1),
                    pcc: avg(|r| r.pcc),
                    ssim: avg(|r| r.ssim),
                }
            })
            .collect();
        Ok(MetricReport { rows })
    }
}

/// All four metrics of a reconstruction against its ground truth.
/// A layer whose binarisation is empty on either side has W1 = NaN.
pub fn evaluate(recon: &Array3<f64>, truth: &Array3<f64>, opts: &EvalOptions) -> Result<MetricReport> {
    if recon.dim() != truth.dim() {
        return Err(Error::shape(truth.shape(), recon.shape()));
    }
    let fb = binarize(truth, opts.threshold, opts.polarity, BitsSource::GroundTruth);
    let gb = binarize(recon, opts.threshold, opts.polarity, BitsSource::Reconstruction);
    let pe = probability_of_error(&fb, &gb)?;
    let pccs = pcc_layers(recon, truth)?;
    let (fn_, gn) = (normalize(truth, opts.polarity), normalize(recon, opts.polarity));
    let mut rows = Vec::with_capacity(fb.num_layers() + 1);
    for j in 0..fb.num_layers() {
        let w1 = match wasserstein1_pooled(fb.layer(j), gb.layer(j), opts.w1_pool) {
            Ok(v) => v,
            Err(Error::EmptySupport(msg)) => {
                log::warn!("layer {}: {msg}; W1 undefined", j + 1);
                f64::NAN
            }
            Err(e) => return Err(e),
        };
        let s = ssim(fn_.index_axis(Axis(0), j), gn.index_axis(Axis(0), j), 1.0)?;
        rows.push(MetricRow {
            label: format!("Layer {}", j + 1),
            pe: pe.per_layer[j],
            w1,
            pcc: pccs[j],
            ssim: s,
        });
    }
    let mean = |get: fn(&MetricRow) -> f64| rows.iter().map(get).sum::<f64>() / rows.len() as f64;
    let overall = MetricRow {
        label: "Overall".into(),
        pe: pe.overall,
        w1: mean(|r| r.w1),
        pcc: mean(|r| r.pcc),
        ssim: mean(|r| r.ssim),
    };
    rows.push(overall);
    Ok(MetricReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vol(bits: &[bool], shape: (usize, usize, usize)) -> BinaryVolume {
        BinaryVolume::from_bits(Array3::from_shape_vec(shape, bits.to_vec()).unwrap(), BitsSource::GroundTruth)
    }

    #[test]
    fn binarize_examples() {
        let x = Array3::from_shape_vec((1, 1, 5), vec![0.0, 0.25, 0.5, 0.75, 1.0]).unwrap();
        let b = binarize(&x, 0.5, Polarity::Positive, BitsSource::Reconstruction);
        assert_eq!(b.bits.iter().copied().collect::<Vec<_>>(), vec![false, false, true, true, true]);
        let bin = x.mapv(|v| if v >= 0.5 { 1.0 } else { 0.0 });
        assert_eq!(binarize(&bin, 0.5, Polarity::Positive, BitsSource::GroundTruth).bits, b.bits);
        let c = binarize(&Array3::from_elem((1, 2, 2), 3.0), 0.5, Polarity::Positive, BitsSource::Reconstruction);
        assert!(c.bits.iter().all(|&v| !v));
    }

    #[test]
    fn phase_mask_roundtrip_for_either_sign() {
        let mask = Array3::from_shape_fn((2, 4, 4), |(j, a, b)| (j + a * b) % 3 == 0);
        for c in [-0.323, 0.8, -5.0] {
            let phases = mask.mapv(|m| if m { c } else { 0.0 });
            let b = binarize(&phases, 0.5, Polarity::of_contrast(c), BitsSource::GroundTruth);
            assert_eq!(b.bits, mask);
        }
    }

    #[test]
    fn pe_examples() {
        let f = vol(&[true, false, true, true], (1, 2, 2));
        assert_eq!(probability_of_error(&f, &f).unwrap().overall, 0.0);
        let comp = BinaryVolume::from_bits(f.bits.mapv(|b| !b), BitsSource::Reconstruction);
        assert_eq!(probability_of_error(&f, &comp).unwrap().overall, 1.0);
        let mut big = Array3::from_elem((4, 64, 64), false);
        let truth = BinaryVolume::from_bits(big.clone(), BitsSource::GroundTruth);
        big[(2, 10, 20)] = true;
        let one = BinaryVolume::from_bits(big, BitsSource::Reconstruction);
        let pe = probability_of_error(&truth, &one).unwrap();
        assert_eq!(pe.overall, 1.0 / 16384.0);
        assert_eq!(pe.per_layer, vec![0.0, 0.0, 1.0 / 4096.0, 0.0]);
    }

    #[test]
    fn transport_form_diagonal_cost() {
        assert_eq!(scaled_transport_cost(true, true), 0.0);
        assert_eq!(scaled_transport_cost(false, true), 1.0);
        assert_eq!(scaled_transport_cost(true, false), 1.0);
        let f = vol(&[true, true, false, false], (1, 2, 2));
        let g = vol(&[true, false, true, false], (1, 2, 2));
        assert_eq!(pe_transport_form(&f, &f).unwrap(), 0.0);
        assert_eq!(pe_transport_form(&f, &g).unwrap(), 0.5);
        // a coupling whose rows do not sum to f is rejected
        assert!(pe_transport_form_with(&f, &g, &[(0, 0)]).is_err());
    }

    #[test]
    fn pcc_examples() {
        let f = [1.0, 2.0, 4.0, 8.0];
        let neg: Vec<f64> = f.iter().map(|v| -v).collect();
        assert!((pcc(&f, &f).unwrap() - 1.0).abs() < 1e-15);
        assert!((pcc(&f, &neg).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(pcc(&f, &[1.0; 4]), Err(Error::ZeroVariance(_))));
    }

    #[test]
    fn report_layout() {
        let truth = Array3::from_shape_fn((2, 16, 16), |(j, a, b)| if (a / 4 + b / 4 + j) % 2 == 0 { -0.3 } else { 0.0 });
        let recon = truth.mapv(|v| v * 0.9 + 0.01);
        let r = evaluate(&recon, &truth, &EvalOptions::default()).unwrap();
        assert_eq!(r.rows.len(), 3);
        assert_eq!(r.overall().pe, 0.0);
        assert!(r.overall().w1.abs() < 1e-12);
        assert!((r.overall().pcc - 1.0).abs() < 1e-12);
        let csv = r.to_csv();
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("layer,PE,W1,PCC,SSIM\nLayer 1,"));
        assert!(csv.lines().last().unwrap().starts_with("Overall,"));
    }
}
