//! Staged pipeline: dataset generation, approximants, training, evaluation
//! and ablation sweeps. Every stage records its outputs in a manifest and
//! checks its inputs against the upstream manifest before running.

pub mod config;
pub mod store;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use ndarray::{s, Array2, Array3, Array4, Axis, Ix2, Ix3, Ix4};
use rayon::prelude::*;
use serde::Serialize;

use crate::approximant::{gd_approximant, tv_approximant_with, window_average, Provenance};
use crate::bpm::{add_detector_noise, generate_layered_object, simulate_sequence, IntensityPattern};
use crate::error::{Error, Result};
use crate::metrics::{binarize, evaluate, pcc, probability_of_error, BitsSource, MetricReport, MetricRow};
use crate::net::train::{standardize, train, EpochRecord};
use crate::net::{Ablation, Activation, Checkpoint, ConvKind, NetSpec, Network, Params, Sample, Scalar, Tensor, TrainStop};
use store::{config_hash, encode_array, encode_pgm, get_array, pgm_name, write_atomic, FileState, Manifest};

pub use config::{AngleConfig, ApproximantConfig, DataConfig, EvalConfig, PathsConfig, RunConfig};

pub const DATASET_STAGE: &str = "dataset";
pub const APPROXIMANT_STAGE: &str = "approximants";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Split {
    Train,
    Val,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
        }
    }

    pub fn count(self, cfg: &RunConfig) -> usize {
        match self {
            Split::Train => cfg.data.train_count,
            Split::Val => cfg.data.val_count,
        }
    }
}

fn object_ids(cfg: &RunConfig) -> Vec<(Split, usize)> {
    [Split::Train, Split::Val]
        .into_iter()
        .flat_map(|s| (0..s.count(cfg)).map(move |i| (s, i)))
        .collect()
}

fn object_key(split: Split, i: usize) -> String {
    format!("{}-{i:04}", split.as_str())
}

pub fn object_rel(split: Split, i: usize) -> String {
    format!("objects/{}.arr", object_key(split, i))
}

pub fn pattern_rel(split: Split, i: usize, n: usize) -> String {
    format!("patterns/{}/angle-{n:02}.arr", object_key(split, i))
}

pub fn approximant_rel(split: Split, i: usize) -> String {
    format!("{}.arr", object_key(split, i))
}

fn object_seed(seed: u64, split: Split, i: usize) -> u64 {
    let offset = match split {
        Split::Train => 0,
        Split::Val => 1 << 32,
    };
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(offset + i as u64)
}

fn provenance_str(p: Provenance) -> &'static str {
    match p {
        Provenance::Train => "train",
        Provenance::Test => "test",
    }
}

pub fn approximant_dir(cfg: &RunConfig, mode: Provenance) -> PathBuf {
    cfg.paths.data_dir.join(format!("approximants-{}", provenance_str(mode)))
}

fn to_json<T: Serialize>(v: &T) -> Result<serde_json::Value> {
    serde_json::to_value(v).map_err(|e| Error::Config(e.to_string()))
}

fn dataset_settings(cfg: &RunConfig) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "grid": to_json(&cfg.grid)?,
        "angles": to_json(&cfg.angles)?,
        "object": to_json(&cfg.object)?,
        "data": to_json(&cfg.data)?,
    }))
}

/// Approximant settings plus the sequence lengths they imply.
fn approximant_settings(cfg: &RunConfig, mode: Provenance) -> Result<serde_json::Value> {
    Ok(serde_json::json!({
        "mode": to_json(&mode)?,
        "approximant": to_json(&cfg.approximant)?,
        "n": cfg.angles.sequence().len(),
        "m": cfg.approximant.window.output_len(),
    }))
}

fn dataset_hash(cfg: &RunConfig) -> Result<String> {
    config_hash(&dataset_settings(cfg)?)
}

fn approximant_hash(cfg: &RunConfig, mode: Provenance) -> Result<String> {
    config_hash(&approximant_settings(cfg, mode)?)
}

/// Objects produced fresh and objects whose files were already valid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct StageSummary {
    pub generated: usize,
    pub reused: usize,
}

fn open_dataset(cfg: &RunConfig) -> Result<Manifest> {
    let dir = &cfg.paths.data_dir;
    let m = Manifest::require(dir, DATASET_STAGE)?;
    if m.config_hash != dataset_hash(cfg)? {
        return Err(Error::ManifestMismatch(format!(
            "dataset in {} was generated with a different configuration",
            dir.display()
        )));
    }
    Ok(m)
}

/// Files of one object and whether the whole group can be reused. A listed
/// file whose contents changed means the dataset cannot be trusted.
fn group_state(m: &Manifest, dir: &Path, rels: &[String]) -> Result<bool> {
    let mut all_valid = true;
    for rel in rels {
        match m.check(dir, rel)? {
            FileState::Valid => {}
            FileState::Corrupt => {
                return Err(Error::ManifestMismatch(format!(
                    "{} does not match its manifest entry; refusing to resume",
                    dir.join(rel).display()
                )))
            }
            FileState::Absent | FileState::Unlisted => all_valid = false,
        }
    }
    Ok(all_valid)
}

fn batch_size_for_resume() -> usize {
    2 * rayon::current_num_threads()
}

/// Simulates every object and its intensity patterns. Objects whose files
/// already match the manifest are skipped, so an interrupted run resumes.
pub fn gen_data(cfg: &RunConfig) -> Result<StageSummary> {
    cfg.validate()?;
    let dir = &cfg.paths.data_dir;
    let hash = dataset_hash(cfg)?;
    let mut manifest = match Manifest::load(dir)? {
        Some(m) if m.stage == DATASET_STAGE && m.config_hash == hash => m,
        Some(_) => {
            return Err(Error::ManifestMismatch(format!(
                "{} holds a dataset from a different configuration; refusing to resume",
                dir.display()
            )))
        }
        None => Manifest::with_settings(DATASET_STAGE, dataset_settings(cfg)?, None)?,
    };
    let angles = cfg.angles.sequence();
    let mut summary = StageSummary::default();
    let mut pending = Vec::new();
    for (split, i) in object_ids(cfg) {
        let mut rels = vec![object_rel(split, i)];
        rels.extend((0..angles.len()).map(|n| pattern_rel(split, i, n)));
        if group_state(&manifest, dir, &rels)? {
            summary.reused += 1;
        } else {
            pending.push((split, i));
        }
    }
    for chunk in pending.chunks(batch_size_for_resume()) {
        let made: Vec<_> = chunk
            .par_iter()
            .map(|&(split, i)| {
                let seed = object_seed(cfg.data.seed, split, i);
                let object = generate_layered_object(seed, &cfg.object, &cfg.grid)?;
                let mut patterns = simulate_sequence(&object, &angles)?;
                if cfg.data.noise_sigma > 0.0 {
                    add_detector_noise(&mut patterns, cfg.data.noise_sigma, seed ^ 0x5EED_0F_D00D)?;
                }
                Ok((split, i, object, patterns))
            })
            .collect::<Result<_>>()?;
        for (split, i, object, patterns) in made {
            manifest.put(dir, &object_rel(split, i), &encode_array(&object.phases.into_dyn()))?;
            for (n, p) in patterns.into_iter().enumerate() {
                manifest.put(dir, &pattern_rel(split, i, n), &encode_array(&p.values.into_dyn()))?;
            }
            summary.generated += 1;
        }
        manifest.save(dir)?;
    }
    manifest.save(dir)?;
    log::info!(
        "dataset {}: {} objects generated, {} reused",
        dir.display(),
        summary.generated,
        summary.reused
    );
    Ok(summary)
}

fn load_patterns(cfg: &RunConfig, m: &Manifest, split: Split, i: usize) -> Result<Vec<IntensityPattern>> {
    let angles = cfg.angles.sequence();
    angles
        .iter()
        .enumerate()
        .map(|(n, angle)| {
            let values = get_array(m, &cfg.paths.data_dir, &pattern_rel(split, i, n))?
                .into_dimensionality::<Ix2>()
                .map_err(|e| Error::Format {
                    path: cfg.paths.data_dir.join(pattern_rel(split, i, n)),
                    msg: e.to_string(),
                })?;
            if values.dim() != cfg.grid.shape2() {
                return Err(Error::shape(&[cfg.grid.nx, cfg.grid.ny], values.shape()));
            }
            Ok(IntensityPattern {
                values,
                angle,
                grid: cfg.grid,
            })
        })
        .collect()
}

/// Windowed approximant sequence `(M, J, nx, ny)` of one object.
pub fn object_approximants(cfg: &RunConfig, patterns: &[IntensityPattern], mode: Provenance) -> Result<Array4<f64>> {
    let a = &cfg.approximant;
    let volumes: Vec<Array3<f64>> = patterns
        .par_iter()
        .enumerate()
        .map(|(index, p)| {
            let v = match mode {
                Provenance::Train => gd_approximant(p, p.angle, a.train_gd_iters, a.step).map(|o| o.volume),
                Provenance::Test => tv_approximant_with(p, p.angle, &a.test),
            };
            v.map(|v| v.phases).map_err(|e| Error::AtAngle {
                index,
                source: Box::new(e),
            })
        })
        .collect::<Result<_>>()?;
    let seq = window_average(&volumes, a.window, mode)?;
    let (j, nx, ny) = cfg.dims();
    let mut out = Array4::zeros((seq.len(), j, nx, ny));
    for (m, v) in seq.volumes.iter().enumerate() {
        out.index_axis_mut(Axis(0), m).assign(v);
    }
    Ok(out)
}

/// Computes approximant sequences for every object of the dataset.
pub fn approximants(cfg: &RunConfig, mode: Provenance) -> Result<StageSummary> {
    cfg.validate()?;
    let dataset = open_dataset(cfg)?;
    let upstream = dataset.digest();
    let hash = approximant_hash(cfg, mode)?;
    let dir = approximant_dir(cfg, mode);
    let mut manifest = match Manifest::load(&dir)? {
        Some(m) if m.stage == APPROXIMANT_STAGE && m.config_hash == hash && m.upstream.as_ref() == Some(&upstream) => m,
        Some(_) => {
            log::warn!("{} is stale; recomputing every approximant", dir.display());
            Manifest::with_settings(APPROXIMANT_STAGE, approximant_settings(cfg, mode)?, Some(upstream))?
        }
        None => Manifest::with_settings(APPROXIMANT_STAGE, approximant_settings(cfg, mode)?, Some(upstream))?,
    };
    let mut summary = StageSummary::default();
    for (split, i) in object_ids(cfg) {
        let rel = approximant_rel(split, i);
        if group_state(&manifest, &dir, std::slice::from_ref(&rel))? {
            summary.reused += 1;
            continue;
        }
        let patterns = load_patterns(cfg, &dataset, split, i)?;
        let seq = object_approximants(cfg, &patterns, mode)?;
        manifest.put(&dir, &rel, &encode_array(&seq.into_dyn()))?;
        manifest.save(&dir)?;
        summary.generated += 1;
        log::debug!("approximants for {}", object_key(split, i));
    }
    manifest.save(&dir)?;
    log::info!(
        "{} approximants: {} computed, {} reused",
        provenance_str(mode),
        summary.generated,
        summary.reused
    );
    Ok(summary)
}

/// Network inputs and ground truths of one split.
#[derive(Debug, Clone)]
pub struct LoadedSet {
    pub split: Split,
    pub samples: Vec<Sample>,
    pub truths: Vec<Array3<f64>>,
}

impl LoadedSet {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

fn to_tensor(v: ndarray::ArrayView3<'_, f64>) -> Tensor<f32> {
    let (j, nx, ny) = v.dim();
    Tensor::from_vec(&[j, nx, ny], v.iter().map(|&x| x as f32).collect()).expect("shape matches data")
}

pub fn tensor_to_array(t: &Tensor<f32>) -> Result<Array3<f64>> {
    let s = t.shape();
    if s.len() != 3 {
        return Err(Error::shape(&[0, 0, 0], s));
    }
    Ok(Array3::from_shape_vec((s[0], s[1], s[2]), t.data().iter().map(|v| v.as_f64()).collect())
        .expect("shape matches data"))
}

/// Loads one split, checking both manifests and their link.
pub fn load_set(cfg: &RunConfig, split: Split, mode: Provenance) -> Result<LoadedSet> {
    let dataset = open_dataset(cfg)?;
    let dir = approximant_dir(cfg, mode);
    let approx = Manifest::require(&dir, APPROXIMANT_STAGE)?;
    if approx.upstream.as_ref() != Some(&dataset.digest()) || approx.config_hash != approximant_hash(cfg, mode)? {
        return Err(Error::ManifestMismatch(format!(
            "{} was computed from a different dataset or configuration; rerun the approximant stage",
            dir.display()
        )));
    }
    let data_dir = &cfg.paths.data_dir;
    let fmt = |path: PathBuf| move |e: ndarray::ShapeError| Error::Format { path, msg: e.to_string() };
    let mut samples = Vec::new();
    let mut truths = Vec::new();
    for i in 0..split.count(cfg) {
        let truth = get_array(&dataset, data_dir, &object_rel(split, i))?
            .into_dimensionality::<Ix3>()
            .map_err(fmt(data_dir.join(object_rel(split, i))))?;
        let seq = get_array(&approx, &dir, &approximant_rel(split, i))?
            .into_dimensionality::<Ix4>()
            .map_err(fmt(dir.join(approximant_rel(split, i))))?;
        if truth.dim() != cfg.dims() || seq.slice(s![0, .., .., ..]).dim() != cfg.dims() {
            return Err(Error::shape(truth.shape(), &seq.shape()[1..]));
        }
        let mut tensors: Vec<Tensor<f32>> = seq.outer_iter().map(to_tensor).collect();
        standardize(&mut tensors);
        samples.push(Sample {
            seq: tensors,
            target: to_tensor(truth.view()),
        });
        truths.push(truth);
    }
    Ok(LoadedSet { split, samples, truths })
}

/// Mean binary error and correlation of the prefix reconstruction `m`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PrefixRow {
    pub m: usize,
    pub pe: f64,
    pub pcc: f64,
}

#[derive(Debug, Clone)]
pub struct SetEvaluation {
    pub report: MetricReport,
    pub progression: Vec<PrefixRow>,
    /// Per-object prefix reconstructions `m = 1..=M`, for the first objects only.
    pub dumps: Vec<Vec<Array3<f64>>>,
}

pub fn progression_csv(rows: &[PrefixRow]) -> String {
    let mut s = String::from("m,PE,PCC\n");
    for r in rows {
        let _ = writeln!(s, "{},{:.8},{:.8}", r.m, r.pe, r.pcc);
    }
    s
}

/// Metrics of the final reconstruction plus the prefix progression.
pub fn evaluate_set(
    cfg: &RunConfig,
    net: &Network,
    params: &Params<f32>,
    set: &LoadedSet,
    keep: usize,
) -> Result<SetEvaluation> {
    if set.is_empty() {
        return Err(Error::Config(format!("the {} split is empty", set.split.as_str())));
    }
    let opts = &cfg.eval.metrics;
    let per: Vec<(MetricReport, Vec<(f64, f64)>, Vec<Array3<f64>>)> = set
        .samples
        .par_iter()
        .zip(set.truths.par_iter())
        .map(|(sample, truth)| {
            let prefixes = net
                .reconstruct_prefixes(params, &sample.seq)?
                .iter()
                .map(tensor_to_array)
                .collect::<Result<Vec<_>>>()?;
            let report = evaluate(prefixes.last().expect("M >= 1"), truth, opts)?;
            let f = binarize(truth, opts.threshold, opts.polarity, BitsSource::GroundTruth);
            let flat_truth: Vec<f64> = truth.iter().copied().collect();
            let series = prefixes
                .iter()
                .map(|r| {
                    let g = binarize(r, opts.threshold, opts.polarity, BitsSource::Reconstruction);
                    let pe = probability_of_error(&f, &g)?.overall;
                    let flat: Vec<f64> = r.iter().copied().collect();
                    let c = pcc(&flat, &flat_truth).unwrap_or(f64::NAN);
                    Ok((pe, c))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((report, series, prefixes))
        })
        .collect::<Result<_>>()?;
    let n = per.len() as f64;
    let m_total = per[0].1.len();
    let progression = (0..m_total)
        .map(|m| PrefixRow {
            m: m + 1,
            pe: per.iter().map(|p| p.1[m].0).sum::<f64>() / n,
            pcc: per.iter().map(|p| p.1[m].1).sum::<f64>() / n,
        })
        .collect();
    let reports: Vec<MetricReport> = per.iter().map(|p| p.0.clone()).collect();
    let dumps = per.into_iter().take(keep).map(|p| p.2).collect();
    Ok(SetEvaluation {
        report: MetricReport::mean(&reports)?,
        progression,
        dumps,
    })
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub stop: TrainStop,
    pub epochs: usize,
    pub steps: usize,
    pub best_val: f64,
    pub param_count: usize,
    pub best_checkpoint: PathBuf,
    pub validation: Option<MetricReport>,
}

fn history_csv(history: &[EpochRecord]) -> String {
    let mut s = String::from("epoch,train_npcc,val_npcc,lr\n");
    for r in history {
        let _ = writeln!(s, "{},{:.8},{:.8},{:.6e}", r.epoch, r.train_npcc, r.val_npcc, r.lr);
    }
    s
}

pub const BEST_CHECKPOINT: &str = "best.ckpt";
pub const LAST_CHECKPOINT: &str = "last.ckpt";

/// Trains one network on preloaded sets, writing checkpoints, the history
/// and a validation report into `out`.
pub fn train_model(
    cfg: &RunConfig,
    spec: &NetSpec,
    train_set: &LoadedSet,
    val_set: &LoadedSet,
    out: &Path,
) -> Result<TrainSummary> {
    let net = Network::new(spec.clone(), cfg.dims())?;
    write_atomic(&out.join("config.toml"), cfg.to_toml()?.as_bytes())?;
    let init = net.init::<f32>(cfg.train.seed);
    let best_path = out.join(BEST_CHECKPOINT);
    let mut history = Vec::new();
    let outcome = train(
        &net,
        init,
        &train_set.samples,
        &val_set.samples,
        &cfg.train,
        |rec, params, improved| {
            history.push(rec.clone());
            write_atomic(&out.join("history.csv"), history_csv(&history).as_bytes())?;
            if improved {
                Checkpoint {
                    network: net.clone(),
                    train: cfg.train.clone(),
                    epoch: rec.epoch,
                    lr: rec.lr,
                    params: params.clone(),
                    optimizer: None,
                }
                .save(&best_path)?;
            }
            Ok(())
        },
    )?;
    let last = Checkpoint {
        network: net.clone(),
        train: cfg.train.clone(),
        epoch: outcome.history.last().map_or(0, |r| r.epoch),
        lr: outcome.history.last().map_or(cfg.train.learning_rate, |r| r.lr),
        params: outcome.params.clone(),
        optimizer: Some(outcome.optimizer.clone()),
    };
    last.save(&out.join(LAST_CHECKPOINT))?;
    if let TrainStop::NonFinite { epoch, step } = outcome.stop {
        log::error!(
            "training diverged; last finite parameters saved to {}",
            out.join(LAST_CHECKPOINT).display()
        );
        return Err(Error::NonFiniteLoss { epoch, step });
    }
    if outcome.history.is_empty() {
        return Err(Error::Config("training ran no epochs".into()));
    }
    let validation = if val_set.is_empty() {
        None
    } else {
        let ev = evaluate_set(cfg, &net, &outcome.best, val_set, 0)?;
        write_atomic(&out.join("validation.csv"), ev.report.to_csv().as_bytes())?;
        Some(ev.report)
    };
    Ok(TrainSummary {
        stop: outcome.stop,
        epochs: outcome.history.len(),
        steps: outcome.steps,
        best_val: outcome.best_val,
        param_count: net.param_count(),
        best_checkpoint: best_path,
        validation,
    })
}

pub fn train_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.out_dir.join("train")
}

/// Trains the configured network on training-mode approximants.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainSummary> {
    cfg.validate()?;
    let train_set = load_set(cfg, Split::Train, Provenance::Train)?;
    let val_set = load_set(cfg, Split::Val, Provenance::Train)?;
    train_model(cfg, &cfg.net, &train_set, &val_set, &train_dir(cfg))
}

fn layer_range(v: ndarray::ArrayView2<'_, f64>) -> (f64, f64) {
    v.iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)))
}

/// Layers side by side, on one grey scale.
fn montage(v: &Array3<f64>) -> Array2<f64> {
    let (j, nx, ny) = v.dim();
    let mut out = Array2::zeros((nx, j * ny));
    for l in 0..j {
        out.slice_mut(s![.., l * ny..(l + 1) * ny]).assign(&v.index_axis(Axis(0), l));
    }
    out
}

fn dump_images(dir: &Path, truth: &Array3<f64>, prefixes: &[Array3<f64>]) -> Result<()> {
    let recon = prefixes.last().expect("M >= 1");
    for (name, vol) in [("truth", truth), ("recon", recon)] {
        for (l, layer) in vol.outer_iter().enumerate() {
            let (lo, hi) = layer_range(layer);
            let file = pgm_name(&format!("{name}_layer{}", l + 1), lo, hi);
            write_atomic(&dir.join(file), &encode_pgm(layer, lo, hi))?;
        }
    }
    for (m, p) in prefixes.iter().enumerate() {
        let img = montage(p);
        let (lo, hi) = layer_range(img.view());
        let file = pgm_name(&format!("m{:02}", m + 1), lo, hi);
        write_atomic(&dir.join("prefix").join(file), &encode_pgm(img.view(), lo, hi))?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub report: MetricReport,
    pub progression: Vec<PrefixRow>,
    pub out: PathBuf,
}

pub fn eval_dir(cfg: &RunConfig) -> PathBuf {
    cfg.paths.out_dir.join("eval")
}

/// Evaluates a checkpoint on the validation split: metric report, prefix
/// progression and image dumps.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path) -> Result<EvalSummary> {
    cfg.validate()?;
    let ckpt = Checkpoint::load(checkpoint)?;
    if ckpt.network.dims != cfg.dims() {
        return Err(Error::ManifestMismatch(format!(
            "{} was trained on {:?} volumes but the dataset holds {:?}",
            checkpoint.display(),
            ckpt.network.dims,
            cfg.dims()
        )));
    }
    let set = load_set(cfg, Split::Val, cfg.eval.approximants)?;
    let ev = evaluate_set(cfg, &ckpt.network, &ckpt.params, &set, cfg.eval.dump_objects)?;
    let out = eval_dir(cfg);
    write_atomic(&out.join("report.csv"), ev.report.to_csv().as_bytes())?;
    write_atomic(&out.join("progression.csv"), progression_csv(&ev.progression).as_bytes())?;
    for (i, prefixes) in ev.dumps.iter().enumerate() {
        dump_images(&out.join("images").join(object_key(Split::Val, i)), &set.truths[i], prefixes)?;
    }
    Ok(EvalSummary {
        report: ev.report,
        progression: ev.progression,
        out,
    })
}

/// The base network and its three ablations, all on the same channel plan.
pub fn ablation_variants(base: &NetSpec) -> Vec<(&'static str, &'static str, NetSpec)> {
    let with = |a: Ablation| NetSpec {
        ablation: a,
        ..base.clone()
    };
    let b = base.ablation;
    vec![
        ("Proposed", "base", base.clone()),
        (
            "- ReLU activation",
            "no-relu",
            with(Ablation {
                activation: Activation::Tanh,
                ..b
            }),
        ),
        ("- angular attention", "no-attention", with(Ablation { attention: false, ..b })),
        (
            "- split convolution",
            "full-conv",
            with(Ablation {
                convolution: ConvKind::Full,
                ..b
            }),
        ),
    ]
}

#[derive(Debug, Clone)]
pub struct AblationRow {
    pub label: String,
    pub params: usize,
    pub overall: MetricRow,
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("model,params,PE,W1,PCC,SSIM\n");
    for r in rows {
        let o = &r.overall;
        let _ = writeln!(s, "{},{},{:.8},{:.8},{:.8},{:.8}", r.label, r.params, o.pe, o.w1, o.pcc, o.ssim);
    }
    s
}

/// Trains and evaluates the base network and each ablation with shared data
/// and seeds.
pub fn cmd_ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    let train_set = load_set(cfg, Split::Train, Provenance::Train)?;
    let val_set = load_set(cfg, Split::Val, Provenance::Train)?;
    let eval_set = load_set(cfg, Split::Val, cfg.eval.approximants)?;
    let root = cfg.paths.out_dir.join("ablation");
    let mut rows = Vec::new();
    for (label, slug, spec) in ablation_variants(&cfg.net) {
        log::info!("ablation: {label}");
        let summary = train_model(cfg, &spec, &train_set, &val_set, &root.join(slug))?;
        let best = Checkpoint::load(&summary.best_checkpoint)?;
        let ev = evaluate_set(cfg, &best.network, &best.params, &eval_set, 0)?;
        rows.push(AblationRow {
            label: label.to_string(),
            params: summary.param_count,
            overall: ev.report.overall().clone(),
        });
        write_atomic(&root.join("ablation.csv"), ablation_csv(&rows).as_bytes())?;
    }
    Ok(rows)
}

/// Sizes the global worker pool from `cfg.threads`; a second call is a no-op.
pub fn configure_threads(cfg: &RunConfig) {
    if let Some(n) = cfg.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::debug!("worker pool already configured: {e}");
        }
    }
}
