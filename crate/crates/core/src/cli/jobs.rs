//! Fully resolved command configurations. A job is what a manifest records
//! and what a replay executes.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::args::{
    BaselineArgs, CommandArgs, CommonArgs, EvalArgs, ExtractArgs, KldArgs, MeasureArgs, RestoreArgs, SampleArgs,
    SensingFlags, SolverArg, SpectrumArgs, TrainArgs,
};
use super::config::{FileConfig, SnrEntry};
use crate::error::{Error, Result};
use crate::prior::Preset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "command", rename_all = "lowercase")]
pub enum Job {
    Extract(ExtractJob),
    Train(TrainJob),
    Sample(SampleJob),
    Measure(MeasureJob),
    Restore(RestoreJob),
    Eval(EvalJob),
    Kld(KldJob),
    Spectrum(SpectrumJob),
    Baseline(BaselineJob),
}

impl Job {
    pub fn name(&self) -> &'static str {
        match self {
            Job::Extract(_) => "extract",
            Job::Train(_) => "train",
            Job::Sample(_) => "sample",
            Job::Measure(_) => "measure",
            Job::Restore(_) => "restore",
            Job::Eval(_) => "eval",
            Job::Kld(_) => "kld",
            Job::Spectrum(_) => "spectrum",
            Job::Baseline(_) => "baseline",
        }
    }

    pub fn out(&self) -> &PathBuf {
        match self {
            Job::Extract(j) => &j.out,
            Job::Train(j) => &j.out,
            Job::Sample(j) => &j.out,
            Job::Measure(j) => &j.out,
            Job::Restore(j) => &j.out,
            Job::Eval(j) => &j.out,
            Job::Kld(j) => &j.out,
            Job::Spectrum(j) => &j.out,
            Job::Baseline(j) => &j.out,
        }
    }

    pub fn set_out(&mut self, out: PathBuf) {
        match self {
            Job::Extract(j) => j.out = out,
            Job::Train(j) => j.out = out,
            Job::Sample(j) => j.out = out,
            Job::Measure(j) => j.out = out,
            Job::Restore(j) => j.out = out,
            Job::Eval(j) => j.out = out,
            Job::Kld(j) => j.out = out,
            Job::Spectrum(j) => j.out = out,
            Job::Baseline(j) => j.out = out,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractJob {
    pub images: PathBuf,
    pub patch: usize,
    pub stride: Option<usize>,
    pub target: Option<usize>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelSource {
    Preset(String),
    File(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub dataset: PathBuf,
    pub init: ModelSource,
    pub seed: u64,
    pub cd_steps: usize,
    pub lr: f64,
    pub batch: usize,
    pub epochs: usize,
    pub persistent: bool,
    pub model_selection: bool,
    pub solver: SolverArg,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleJob {
    pub model: PathBuf,
    pub count: usize,
    pub size: (usize, usize),
    pub iterations: usize,
    pub seed: u64,
    pub solver: Option<SolverArg>,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensingPlan {
    pub mr: Vec<f64>,
    /// `None` entries are noiseless.
    pub snr_db: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeasureJob {
    pub images: PathBuf,
    pub plan: SensingPlan,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MeasurementSource {
    /// Measure these images with the sensing plan.
    Images(PathBuf),
    /// Use stored records; references are optional.
    Records { dir: PathBuf, reference: Option<PathBuf> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RestoreJob {
    pub model: PathBuf,
    pub source: MeasurementSource,
    pub plan: SensingPlan,
    pub iterations: usize,
    pub burn_in: usize,
    pub last_sample: bool,
    pub random_init: bool,
    /// `None` picks by problem size.
    pub solver: Option<SolverArg>,
    pub seed: u64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalJob {
    pub restored: PathBuf,
    pub reference: PathBuf,
    pub method: String,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KldJob {
    pub model: PathBuf,
    pub dataset: PathBuf,
    pub iterations: usize,
    pub bins: usize,
    pub max_patches: usize,
    pub seed: u64,
    pub solver: SolverArg,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpectrumJob {
    pub model: Option<PathBuf>,
    pub samples: usize,
    pub range: f64,
    pub out: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaChoice {
    Fraction(f64),
    Oracle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineJob {
    pub source: MeasurementSource,
    pub plan: SensingPlan,
    pub iterations: usize,
    pub lambda: LambdaChoice,
    pub seed: u64,
    pub out: PathBuf,
}

pub const DEFAULT_PATCH: usize = 20;
pub const DEFAULT_PATCH_TARGET: usize = 21_668;
pub const DEFAULT_EPOCHS: usize = 20;
pub const DEFAULT_SAMPLE_SWEEPS: usize = 100;
pub const DEFAULT_KLD_SWEEPS: usize = 10;
pub const DEFAULT_KLD_PATCHES: usize = 1024;
pub const DEFAULT_ISTA_ITERATIONS: usize = 500;
pub const DEFAULT_LAMBDA_FRACTION: f64 = 1e-2;

fn required<T>(flag: Option<T>, file: Option<T>, name: &str) -> Result<T> {
    flag.or(file)
        .ok_or_else(|| Error::invalid(format!("--{name} is required")))
}

fn out_dir(common: &CommonArgs, cfg: &FileConfig) -> Result<PathBuf> {
    required(common.out.clone(), cfg.out.clone(), "out")
}

fn seed(common: &CommonArgs, cfg: &FileConfig) -> u64 {
    common.seed.or(cfg.seed).unwrap_or(0)
}

fn positive(value: usize, name: &str) -> Result<usize> {
    if value == 0 {
        return Err(Error::invalid(format!("--{name} must be positive")));
    }
    Ok(value)
}

pub fn parse_size(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::invalid(format!("size must look like 20x20, got {text:?}"));
    let (h, w) = text.split_once(['x', 'X']).ok_or_else(bad)?;
    let h: usize = h.trim().parse().map_err(|_| bad())?;
    let w: usize = w.trim().parse().map_err(|_| bad())?;
    if h == 0 || w == 0 {
        return Err(bad());
    }
    Ok((h, w))
}

pub fn parse_snr(text: &str) -> Result<Option<f64>> {
    let t = text.trim();
    if t.eq_ignore_ascii_case("none") || t.eq_ignore_ascii_case("noiseless") {
        return Ok(None);
    }
    let v: f64 = t
        .parse()
        .map_err(|_| Error::invalid(format!("SNR must be a number of dB or `none`, got {text:?}")))?;
    if !v.is_finite() {
        return Err(Error::invalid("SNR must be finite; use `none` for noiseless measurements"));
    }
    Ok(Some(v))
}

fn plan(flags: &SensingFlags, cfg: &FileConfig) -> Result<SensingPlan> {
    let mr = if flags.mr.is_empty() {
        cfg.mr.clone().unwrap_or_else(|| vec![0.25])
    } else {
        flags.mr.clone()
    };
    for &r in &mr {
        if !(r > 0.0 && r <= 1.0) {
            return Err(Error::invalid(format!("measurement ratio must lie in (0, 1], got {r}")));
        }
    }
    let snr_text: Vec<String> = if flags.snr_db.is_empty() {
        cfg.snr_db
            .as_ref()
            .map(|v| v.iter().map(SnrEntry::as_text).collect())
            .unwrap_or_else(|| vec!["none".into()])
    } else {
        flags.snr_db.clone()
    };
    let snr_db = snr_text.iter().map(|t| parse_snr(t)).collect::<Result<Vec<_>>>()?;
    Ok(SensingPlan { mr, snr_db })
}

fn source(
    images: &Option<PathBuf>,
    measurements: &Option<PathBuf>,
    reference: &Option<PathBuf>,
    cfg: &FileConfig,
) -> Result<MeasurementSource> {
    let images = images.clone().or_else(|| cfg.images.clone());
    let measurements = measurements.clone().or_else(|| cfg.measurements.clone());
    match (images, measurements) {
        (Some(dir), None) => Ok(MeasurementSource::Images(dir)),
        (None, Some(dir)) => Ok(MeasurementSource::Records {
            dir,
            reference: reference.clone().or_else(|| cfg.reference.clone()),
        }),
        (Some(_), Some(_)) => Err(Error::invalid("give either --images or --measurements, not both")),
        (None, None) => Err(Error::invalid("--images or --measurements is required")),
    }
}

/// Turn parsed flags plus config-file defaults into a job.
pub fn resolve(command: &CommandArgs) -> Result<Job> {
    let common = match command {
        CommandArgs::Extract(a) => &a.common,
        CommandArgs::Train(a) => &a.common,
        CommandArgs::Sample(a) => &a.common,
        CommandArgs::Measure(a) => &a.common,
        CommandArgs::Restore(a) => &a.common,
        CommandArgs::Eval(a) => &a.common,
        CommandArgs::Kld(a) => &a.common,
        CommandArgs::Spectrum(a) => &a.common,
        CommandArgs::Baseline(a) => &a.common,
        CommandArgs::Replay(_) => return Err(Error::invalid("replay has no job of its own")),
    };
    let cfg = FileConfig::load_optional(common.config.as_deref())?;
    match command {
        CommandArgs::Extract(a) => extract(a, &cfg),
        CommandArgs::Train(a) => train(a, &cfg),
        CommandArgs::Sample(a) => sample(a, &cfg),
        CommandArgs::Measure(a) => measure(a, &cfg),
        CommandArgs::Restore(a) => restore(a, &cfg),
        CommandArgs::Eval(a) => eval(a, &cfg),
        CommandArgs::Kld(a) => kld(a, &cfg),
        CommandArgs::Spectrum(a) => spectrum(a, &cfg),
        CommandArgs::Baseline(a) => baseline(a, &cfg),
        CommandArgs::Replay(_) => unreachable!(),
    }
}

fn extract(a: &ExtractArgs, cfg: &FileConfig) -> Result<Job> {
    let stride = a.stride.or(if a.target.is_some() { None } else { cfg.stride });
    let target = a.target.or(if a.stride.is_some() { None } else { cfg.target });
    if stride.is_some() && target.is_some() {
        return Err(Error::invalid("give either a stride or a patch-count target, not both"));
    }
    let target = if stride.is_none() {
        Some(target.unwrap_or(DEFAULT_PATCH_TARGET))
    } else {
        None
    };
    Ok(Job::Extract(ExtractJob {
        images: required(a.images.clone(), cfg.images.clone(), "images")?,
        patch: positive(a.patch.or(cfg.patch).unwrap_or(DEFAULT_PATCH), "patch")?,
        stride: stride.map(|s| positive(s, "stride")).transpose()?,
        target: target.map(|t| positive(t, "target")).transpose()?,
        out: out_dir(&a.common, cfg)?,
    }))
}

fn train(a: &TrainArgs, cfg: &FileConfig) -> Result<Job> {
    let init = match (a.preset.clone(), a.model.clone()) {
        (Some(p), None) => ModelSource::Preset(p),
        (None, Some(m)) => ModelSource::File(m),
        _ => match (cfg.preset.clone(), cfg.model.clone()) {
            (Some(p), None) => ModelSource::Preset(p),
            (None, Some(m)) => ModelSource::File(m),
            (Some(_), Some(_)) => return Err(Error::invalid("give either a preset or an initial model, not both")),
            (None, None) => return Err(Error::invalid("--preset or --model is required")),
        },
    };
    if let ModelSource::Preset(p) = &init {
        p.parse::<Preset>()?;
    }
    let lr = a.lr.or(cfg.lr).unwrap_or(0.01);
    if !(lr > 0.0 && lr <= 1.0) {
        return Err(Error::invalid(format!("--lr must lie in (0, 1], got {lr}")));
    }
    Ok(Job::Train(TrainJob {
        dataset: required(a.dataset.clone(), cfg.dataset.clone(), "dataset")?,
        init,
        seed: seed(&a.common, cfg),
        cd_steps: positive(a.cd_steps.or(cfg.cd_steps).unwrap_or(1), "cd-steps")?,
        lr,
        batch: positive(a.batch.or(cfg.batch).unwrap_or(64), "batch")?,
        epochs: a.epochs.or(cfg.epochs).unwrap_or(DEFAULT_EPOCHS),
        persistent: a.persistent || cfg.persistent.unwrap_or(false),
        model_selection: !a.no_model_selection && cfg.model_selection.unwrap_or(true),
        solver: a.solver.solver.or(cfg.solver).unwrap_or(SolverArg::Cholesky),
        out: out_dir(&a.common, cfg)?,
    }))
}

fn sample(a: &SampleArgs, cfg: &FileConfig) -> Result<Job> {
    let size = match a.size.clone().or_else(|| cfg.size.clone()) {
        Some(text) => parse_size(&text)?,
        None => (DEFAULT_PATCH, DEFAULT_PATCH),
    };
    Ok(Job::Sample(SampleJob {
        model: required(a.model.clone(), cfg.model.clone(), "model")?,
        count: positive(a.count.or(cfg.count).unwrap_or(4), "count")?,
        size,
        iterations: positive(a.iterations.or(cfg.iterations).unwrap_or(DEFAULT_SAMPLE_SWEEPS), "iterations")?,
        seed: seed(&a.common, cfg),
        solver: a.solver.solver.or(cfg.solver),
        out: out_dir(&a.common, cfg)?,
    }))
}

fn measure(a: &MeasureArgs, cfg: &FileConfig) -> Result<Job> {
    Ok(Job::Measure(MeasureJob {
        images: required(a.images.clone(), cfg.images.clone(), "images")?,
        plan: plan(&a.sensing, cfg)?,
        seed: seed(&a.common, cfg),
        out: out_dir(&a.common, cfg)?,
    }))
}

fn restore(a: &RestoreArgs, cfg: &FileConfig) -> Result<Job> {
    let iterations = a.iterations.or(cfg.iterations).unwrap_or(200);
    let burn_in = a.burn_in.or(cfg.burn_in).unwrap_or(100);
    if iterations <= burn_in {
        return Err(Error::invalid(format!(
            "--iterations ({iterations}) must exceed --burn-in ({burn_in})"
        )));
    }
    Ok(Job::Restore(RestoreJob {
        model: required(a.model.clone(), cfg.model.clone(), "model")?,
        source: source(&a.images, &a.measurements, &a.reference, cfg)?,
        plan: plan(&a.sensing, cfg)?,
        iterations,
        burn_in,
        last_sample: a.last_sample || cfg.last_sample.unwrap_or(false),
        random_init: a.random_init || cfg.random_init.unwrap_or(false),
        solver: a.solver.solver.or(cfg.solver),
        seed: seed(&a.common, cfg),
        out: out_dir(&a.common, cfg)?,
    }))
}

fn eval(a: &EvalArgs, cfg: &FileConfig) -> Result<Job> {
    Ok(Job::Eval(EvalJob {
        restored: required(a.restored.clone(), cfg.restored.clone(), "restored")?,
        reference: required(a.reference.clone(), cfg.reference.clone(), "reference")?,
        method: a.method.clone().or_else(|| cfg.method.clone()).unwrap_or_else(|| "restored".into()),
        out: out_dir(&a.common, cfg)?,
    }))
}

fn kld(a: &KldArgs, cfg: &FileConfig) -> Result<Job> {
    Ok(Job::Kld(KldJob {
        model: required(a.model.clone(), cfg.model.clone(), "model")?,
        dataset: required(a.dataset.clone(), cfg.dataset.clone(), "dataset")?,
        iterations: positive(a.iterations.or(cfg.iterations).unwrap_or(DEFAULT_KLD_SWEEPS), "iterations")?,
        bins: positive(a.bins.or(cfg.bins).unwrap_or(crate::evaluation::DEFAULT_BINS), "bins")?,
        max_patches: positive(a.max_patches.or(cfg.max_patches).unwrap_or(DEFAULT_KLD_PATCHES), "max-patches")?,
        seed: seed(&a.common, cfg),
        solver: a.solver.solver.or(cfg.solver).unwrap_or(SolverArg::Cholesky),
        out: out_dir(&a.common, cfg)?,
    }))
}

fn spectrum(a: &SpectrumArgs, cfg: &FileConfig) -> Result<Job> {
    let range = a.range.or(cfg.range).unwrap_or(10.0);
    if !(range > 0.0) || !range.is_finite() {
        return Err(Error::invalid("--range must be positive"));
    }
    let samples = a.samples.or(cfg.samples).unwrap_or(1024);
    if samples < 64 {
        return Err(Error::invalid("--samples must be at least 64"));
    }
    Ok(Job::Spectrum(SpectrumJob {
        model: a.model.clone().or_else(|| cfg.model.clone()),
        samples,
        range,
        out: out_dir(&a.common, cfg)?,
    }))
}

fn baseline(a: &BaselineArgs, cfg: &FileConfig) -> Result<Job> {
    let oracle = a.oracle_lambda || (a.lambda_fraction.is_none() && cfg.oracle_lambda.unwrap_or(false));
    let lambda = if oracle {
        LambdaChoice::Oracle
    } else {
        let f = a.lambda_fraction.or(cfg.lambda_fraction).unwrap_or(DEFAULT_LAMBDA_FRACTION);
        if !(f > 0.0) || !f.is_finite() {
            return Err(Error::invalid("--lambda-fraction must be positive"));
        }
        LambdaChoice::Fraction(f)
    };
    Ok(Job::Baseline(BaselineJob {
        source: source(&a.images, &a.measurements, &a.reference, cfg)?,
        plan: plan(&a.sensing, cfg)?,
        iterations: positive(a.iterations.or(cfg.iterations).unwrap_or(DEFAULT_ISTA_ITERATIONS), "iterations")?,
        lambda,
        seed: seed(&a.common, cfg),
        out: out_dir(&a.common, cfg)?,
    }))
}
