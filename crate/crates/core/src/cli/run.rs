use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde_json::json;

use super::args::SolverArg;
use super::jobs::*;
use super::manifest::{digest, FileDigest, RunManifest};
use crate::error::{Error, Result};
use crate::evaluation::{
    activation_spectrum, build_report, data_model_kld, high_band_mean, ista_with_step, lambda_grid, psnr, spectrum_to_columns,
    spectral_norm_sq, ssim, Activation, LassoOptions, ReportRow, SpectrumGrid,
};
use crate::imageio::{file_stem, list_images, read_gray, write_gray};
use crate::prior::{load_model, model_to_string, preset_model, Preset, PriorModel};
use crate::rng::{derive_seed, rng_from_seed};
use crate::sampler::{run_prior_chain, run_restoration_chain, ChainOptions, SolverMethod, SolverOptions};
use crate::sensing::{
    add_noise_snr, make_gaussian_matrix, measure, measurements_for_ratio, unvec_image, MeasurementOperator,
    MeasurementRecord,
};
use crate::trainer::{extract_patches, stride_for_target, train_with_observer, PatchDataset, TrainingConfig};

/// Output bookkeeping for one command: the manifest goes to disk before the
/// first output file, and is completed with output digests at the end.
pub struct Run {
    out: PathBuf,
    manifest: RunManifest,
    outputs: Vec<PathBuf>,
    started: bool,
    clock: Instant,
}

impl Run {
    fn new(job: &Job) -> Self {
        Self {
            out: job.out().clone(),
            manifest: RunManifest::new(job.clone()),
            outputs: Vec::new(),
            started: false,
            clock: Instant::now(),
        }
    }

    fn input(&mut self, path: &Path) -> Result<()> {
        self.manifest.add_input(path)
    }

    fn seed(&mut self, label: &str, value: u64) {
        self.manifest.seeds.insert(label.to_string(), value);
    }

    fn start(&mut self) -> Result<()> {
        if !self.started {
            if matches!(self.manifest.job, Job::Measure(_) | Job::Restore(_) | Job::Baseline(_)) {
                self.manifest.detail("operator_entry_variance", crate::sensing::ENTRY_VARIANCE);
            }
            fs::create_dir_all(&self.out).map_err(|e| Error::io(&self.out, e))?;
            self.manifest.write(&self.out)?;
            self.started = true;
        }
        Ok(())
    }

    fn target(&mut self, rel: &str) -> Result<PathBuf> {
        self.start()?;
        let path = self.out.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        self.outputs.push(PathBuf::from(rel));
        Ok(path)
    }

    fn write(&mut self, rel: &str, contents: impl AsRef<[u8]>) -> Result<()> {
        let path = self.target(rel)?;
        fs::write(&path, contents).map_err(|e| Error::io(&path, e))
    }

    fn write_image(&mut self, rel: &str, image: ArrayView2<'_, f64>) -> Result<()> {
        let path = self.target(rel)?;
        write_gray(path, image)
    }

    fn finish(mut self) -> Result<RunManifest> {
        self.start()?;
        self.outputs.sort();
        self.outputs.dedup();
        let mut digests = Vec::new();
        for rel in &self.outputs {
            let d = digest(&self.out.join(rel))?;
            digests.push(FileDigest { path: rel.clone(), ..d });
        }
        self.manifest.outputs = digests;
        self.manifest.status = "complete".into();
        self.manifest.wall_time_s = Some(self.clock.elapsed().as_secs_f64());
        self.manifest.write(&self.out)?;
        Ok(self.manifest)
    }

    fn fail(mut self, error: &Error) {
        if self.started {
            self.manifest.status = format!("failed: {error}");
            self.manifest.wall_time_s = Some(self.clock.elapsed().as_secs_f64());
            if let Err(e) = self.manifest.write(&self.out) {
                log::error!("could not record the failure in the manifest: {e}");
            }
        }
    }
}

/// Run a resolved job, writing its manifest and outputs under `job.out()`.
pub fn execute(job: &Job) -> Result<RunManifest> {
    let mut run = Run::new(job);
    let result = match job {
        Job::Extract(j) => extract(j, &mut run),
        Job::Train(j) => train(j, &mut run),
        Job::Sample(j) => sample(j, &mut run),
        Job::Measure(j) => measure_images(j, &mut run),
        Job::Restore(j) => restore(j, &mut run),
        Job::Eval(j) => eval(j, &mut run),
        Job::Kld(j) => kld(j, &mut run),
        Job::Spectrum(j) => spectrum(j, &mut run),
        Job::Baseline(j) => baseline(j, &mut run),
    };
    match result {
        Ok(()) => run.finish(),
        Err(e) => {
            run.fail(&e);
            Err(e)
        }
    }
}

/// Re-run the job recorded in a manifest, optionally into another directory.
pub fn replay(manifest_path: &Path, out: Option<PathBuf>) -> Result<RunManifest> {
    let recorded = RunManifest::load(manifest_path)?;
    for input in &recorded.inputs {
        let now = digest(&input.path)?;
        if now.sha256 != input.sha256 {
            return Err(Error::invalid(format!(
                "input {} changed since the recorded run",
                input.path.display()
            )));
        }
    }
    let mut job = recorded.job;
    if let Some(out) = out {
        job.set_out(out);
    }
    execute(&job)
}

fn solver_options(choice: Option<SolverArg>, unknowns: usize) -> SolverOptions {
    match choice {
        Some(SolverArg::Cholesky) => SolverOptions::default(),
        Some(SolverArg::Cg) => SolverOptions {
            method: SolverMethod::ConjugateGradient,
            ..SolverOptions::default()
        },
        None => SolverOptions::auto(unknowns),
    }
}

fn load_images(dir: &Path) -> Result<Vec<(String, Array2<f64>)>> {
    let files = list_images(dir)?;
    if files.is_empty() {
        return Err(Error::invalid(format!("no .pgm or .png images in {}", dir.display())));
    }
    let mut images = Vec::new();
    let mut failures = Vec::new();
    for f in &files {
        match read_gray(f) {
            Ok(img) => images.push((file_stem(f), img)),
            Err(e) => failures.push(format!("{}: {e}", f.display())),
        }
    }
    if !failures.is_empty() {
        return Err(Error::malformed(dir, format!("unreadable images:\n  {}", failures.join("\n  "))));
    }
    Ok(images)
}

fn load_prior(run: &mut Run, path: &Path) -> Result<PriorModel> {
    run.input(path)?;
    load_model(path)
}

fn fmt_snr(snr: Option<f64>) -> String {
    snr.map_or_else(|| "none".into(), |v| v.to_string())
}

/// Directory label for one sensing condition, e.g. `mr0.25_snrnone`.
pub fn condition_label(mr: f64, snr: Option<f64>) -> String {
    format!("mr{}_snr{}", mr, fmt_snr(snr))
}

/// Parse a label written by [`condition_label`].
pub fn parse_condition(label: &str) -> Option<(f64, Option<f64>)> {
    let rest = label.strip_prefix("mr")?;
    let (mr, snr) = rest.split_once("_snr")?;
    let mr: f64 = mr.parse().ok()?;
    let snr = if snr == "none" { None } else { Some(snr.parse().ok()?) };
    Some((mr, snr))
}

fn extract(job: &ExtractJob, run: &mut Run) -> Result<()> {
    let images = load_images(&job.images)?;
    run.input(&job.images)?;
    let patch = (job.patch, job.patch);
    let stride = match (job.stride, job.target) {
        (Some(s), _) => s,
        (None, Some(t)) => {
            let shapes: Vec<_> = images.iter().map(|(_, i)| i.dim()).collect();
            stride_for_target(&shapes, patch, t)
        }
        (None, None) => return Err(Error::invalid("extract needs a stride or a target count")),
    };
    run.manifest.detail("stride", stride);
    let views: Vec<_> = images.iter().map(|(n, i)| (n.clone(), i.view())).collect();
    let dataset = extract_patches(&views, patch, stride)?;
    if dataset.is_empty() {
        return Err(Error::invalid("no image is large enough for a single patch"));
    }
    run.start()?;
    run.manifest.detail("patch_count", dataset.len());
    dataset.save(&job.out)?;
    run.outputs.push(crate::trainer::PATCHES_FILE.into());
    run.outputs.push(crate::trainer::MANIFEST_FILE.into());
    log::info!("{} patches with stride {stride}", dataset.len());
    Ok(())
}

fn train(job: &TrainJob, run: &mut Run) -> Result<()> {
    let dataset = PatchDataset::load(&job.dataset)?;
    run.input(&job.dataset)?;
    let init_seed = derive_seed(job.seed, "init", 0);
    let model = match &job.init {
        ModelSource::Preset(name) => {
            run.seed("init", init_seed);
            preset_model(name.parse::<Preset>()?, init_seed)?
        }
        ModelSource::File(path) => load_prior(run, path)?,
    };
    run.seed("root", job.seed);
    run.manifest.detail("parameter_count", model.parameter_count());
    run.manifest.detail("patch_count", dataset.len());
    let config = TrainingConfig {
        learning_rate: job.lr,
        batch_size: job.batch,
        cd_steps: job.cd_steps,
        max_epochs: job.epochs,
        seed: job.seed,
        solver: solver_options(Some(job.solver), 0),
        persistent: job.persistent,
        model_selection: job.model_selection,
        ..TrainingConfig::default()
    };
    run.start()?;
    let trace_path = run.target("trace.csv")?;
    let outcome = train_with_observer(&model, &dataset, &config, &mut |trace, _| {
        fs::write(&trace_path, trace.to_csv()).map_err(|e| Error::io(&trace_path, e))
    })?;
    fs::write(&trace_path, outcome.trace.to_csv()).map_err(|e| Error::io(&trace_path, e))?;
    run.write("model.json", model_to_string(&outcome.model))?;
    run.manifest.detail("selected_epoch", outcome.selected_epoch);
    run.manifest.detail("converged", outcome.converged);
    run.manifest.detail("initial_kld", outcome.trace.initial_kld);
    run.manifest.detail("epoch_wall_seconds", &outcome.trace.wall_seconds);
    Ok(())
}

fn sample(job: &SampleJob, run: &mut Run) -> Result<()> {
    let model = load_prior(run, &job.model)?;
    crate::prior::conv::check_shape(model.footprint(), job.size)?;
    let seed = derive_seed(job.seed, "sample", 0);
    run.seed("sample", seed);
    run.start()?;
    let mut rng = rng_from_seed(seed);
    let starts: Vec<Array2<f64>> = (0..job.count)
        .map(|_| Array2::from_shape_simple_fn(job.size, || rng.random::<f64>()))
        .collect();
    let solver = solver_options(job.solver, job.size.0 * job.size.1);
    let samples = run_prior_chain(&model, &starts, job.iterations, &solver, &mut rng)?;
    let path = run.target("samples.bin")?;
    crate::trainer::write_patch_file(&path, &samples)?;
    for (k, s) in samples.iter().enumerate() {
        // the prior ignores the mean level, so show each sample around mid-gray
        let mean = s.mean().unwrap_or(0.0);
        run.write_image(&format!("sample_{k:03}.png"), s.mapv(|v| v - mean + 0.5).view())?;
    }
    Ok(())
}

struct Case {
    name: String,
    record: MeasurementRecord,
    operator: MeasurementOperator,
    reference: Option<Array2<f64>>,
    mr: f64,
    snr: Option<f64>,
}

impl Case {
    fn condition(&self) -> String {
        condition_label(self.mr, self.snr)
    }

    fn key(&self) -> String {
        format!("{}/{}", self.condition(), self.name)
    }
}

fn simulate(name: &str, image: &Array2<f64>, mr: f64, snr: Option<f64>, root: u64, run: &mut Run) -> Result<Case> {
    let n = image.len();
    let m = measurements_for_ratio(mr, n)?;
    let op_seed = derive_seed(root, &format!("operator/{name}/{mr}"), 0);
    let operator = make_gaussian_matrix(m, n, op_seed)?;
    let mut record = measure(&operator, image.view())?;
    record.image = Some(name.to_string());
    run.seed(&format!("operator/{name}/{mr}"), op_seed);
    if let Some(snr) = snr {
        let noise_seed = derive_seed(root, &format!("noise/{name}/{mr}/{snr}"), 0);
        run.seed(&format!("noise/{name}/{mr}/{snr}"), noise_seed);
        record = add_noise_snr(&record, snr, noise_seed)?;
    }
    Ok(Case {
        name: name.to_string(),
        record,
        operator,
        reference: Some(image.clone()),
        mr,
        snr,
    })
}

fn find_reference(dir: &Path, stem: &str) -> Result<Option<PathBuf>> {
    Ok(list_images(dir)?.into_iter().find(|p| file_stem(p) == stem))
}

fn gather_cases(source: &MeasurementSource, plan: &SensingPlan, root: u64, run: &mut Run) -> Result<Vec<Case>> {
    let mut cases = Vec::new();
    match source {
        MeasurementSource::Images(dir) => {
            let images = load_images(dir)?;
            run.input(dir)?;
            for &mr in &plan.mr {
                for &snr in &plan.snr_db {
                    for (name, img) in &images {
                        cases.push(simulate(name, img, mr, snr, root, run)?);
                    }
                }
            }
        }
        MeasurementSource::Records { dir, reference } => {
            let mut files: Vec<PathBuf> = fs::read_dir(dir)
                .map_err(|e| Error::io(dir, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|e| e == "json") && file_stem(p) != "manifest")
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::invalid(format!("no measurement records in {}", dir.display())));
            }
            for f in files {
                run.input(&f)?;
                let record = MeasurementRecord::load(&f)?;
                let operator = record.regenerate_operator()?;
                let stem = record.image.clone().unwrap_or_else(|| file_stem(&f));
                let reference = match reference {
                    Some(rdir) => match find_reference(rdir, &stem)? {
                        Some(p) => {
                            run.input(&p)?;
                            let img = read_gray(&p)?;
                            if img.dim() != record.shape {
                                return Err(Error::invalid(format!(
                                    "reference {} is {:?} but the record is {:?}",
                                    p.display(),
                                    img.dim(),
                                    record.shape
                                )));
                            }
                            Some(img)
                        }
                        None => return Err(Error::invalid(format!("no reference image named {stem}"))),
                    },
                    None => None,
                };
                cases.push(Case {
                    name: stem,
                    mr: operator.measurement_ratio(),
                    snr: record.noise.map(|n| n.snr_db),
                    record,
                    operator,
                    reference,
                });
            }
        }
    }
    Ok(cases)
}

fn measure_images(job: &MeasureJob, run: &mut Run) -> Result<()> {
    let cases = gather_cases(&MeasurementSource::Images(job.images.clone()), &job.plan, job.seed, run)?;
    run.start()?;
    let mut lengths = BTreeMap::new();
    for case in &cases {
        lengths.insert(case.key(), case.record.num_measurements());
        run.write(&format!("{}_{}.json", case.name, case.condition()), case.record.to_json())?;
    }
    run.manifest.detail("measurement_lengths", lengths);
    Ok(())
}

fn score(case: &Case, restored: &Array2<f64>, method: &str, seed: u64, runtime: f64) -> Result<Option<ReportRow>> {
    let Some(reference) = &case.reference else {
        return Ok(None);
    };
    Ok(Some(ReportRow {
        image: case.name.clone(),
        method: method.into(),
        mr: case.mr,
        snr_db: case.snr,
        psnr_db: psnr(reference.view(), restored.view(), 1.0)?,
        ssim: ssim(reference.view(), restored.view(), 1.0)?,
        seed,
        runtime_s: Some(runtime),
    }))
}

fn write_report(run: &mut Run, rows: Vec<ReportRow>) -> Result<()> {
    let runtimes: BTreeMap<String, f64> = rows
        .iter()
        .filter_map(|r| {
            r.runtime_s
                .map(|t| (format!("{}/{}/{}", r.method, condition_label(r.mr, r.snr_db), r.image), t))
        })
        .collect();
    run.manifest.detail("runtime_seconds", runtimes);
    let report = build_report(rows);
    run.write("report.csv", report.to_csv())?;
    run.write("summary.json", report.summary_json() + "\n")
}

fn restore(job: &RestoreJob, run: &mut Run) -> Result<()> {
    let model = load_prior(run, &job.model)?;
    let cases = gather_cases(&job.source, &job.plan, job.seed, run)?;
    for case in &cases {
        crate::prior::conv::check_shape(model.footprint(), case.record.shape)?;
    }
    let lengths: BTreeMap<String, usize> = cases.iter().map(|c| (c.key(), c.record.num_measurements())).collect();
    run.manifest.detail("measurement_lengths", lengths);
    let chain_seeds: Vec<u64> = cases
        .iter()
        .map(|c| derive_seed(job.seed, &format!("chain/{}", c.key()), 0))
        .collect();
    for (c, &s) in cases.iter().zip(&chain_seeds) {
        run.seed(&format!("chain/{}", c.key()), s);
    }
    run.start()?;
    let mut rows = Vec::new();
    for (case, &seed) in cases.iter().zip(&chain_seeds) {
        let clock = Instant::now();
        let options = ChainOptions {
            iterations: job.iterations,
            burn_in: job.burn_in,
            solver: solver_options(job.solver, case.operator.cols()),
            last_sample: job.last_sample,
            random_init: job.random_init,
        };
        let output = run_restoration_chain(
            &model,
            &case.operator,
            case.record.y(),
            case.record.shape,
            &options,
            &mut rng_from_seed(seed),
        )?;
        let runtime = clock.elapsed().as_secs_f64();
        log::info!("restored {} in {runtime:.1}s", case.key());
        run.write_image(&format!("restored/{}.png", case.key()), output.image.view())?;
        run.write(&format!("diagnostics/{}.csv", case.key()), output.diagnostics.to_csv())?;
        if let Some(row) = score(case, &output.image, "bcnn", seed, runtime)? {
            rows.push(row);
        }
    }
    write_report(run, rows)
}

fn baseline(job: &BaselineJob, run: &mut Run) -> Result<()> {
    let cases = gather_cases(&job.source, &job.plan, job.seed, run)?;
    if job.lambda == LambdaChoice::Oracle && cases.iter().any(|c| c.reference.is_none()) {
        return Err(Error::invalid("--oracle-lambda needs reference images"));
    }
    run.start()?;
    let mut rows = Vec::new();
    let mut chosen = BTreeMap::new();
    for case in &cases {
        let clock = Instant::now();
        let y = case.record.y();
        let step = 1.0 / spectral_norm_sq(&case.operator)?;
        let candidates = match job.lambda {
            LambdaChoice::Fraction(f) => {
                let top = lambda_grid(&case.operator, y)[0] / crate::evaluation::LAMBDA_FRACTIONS[0];
                vec![f * top]
            }
            LambdaChoice::Oracle => lambda_grid(&case.operator, y),
        };
        let mut best: Option<(f64, f64, Array2<f64>)> = None;
        for lambda in candidates {
            let result = ista_with_step(&case.operator, y, step, &LassoOptions::new(lambda, job.iterations))?;
            let image = unvec_image(result.x.view(), case.record.shape)?;
            let quality = match &case.reference {
                Some(r) => psnr(r.view(), image.view(), 1.0)?,
                None => 0.0,
            };
            if best.as_ref().is_none_or(|b| quality > b.0) {
                best = Some((quality, lambda, image));
            }
        }
        let (_, lambda, image) = best.expect("at least one lambda");
        let runtime = clock.elapsed().as_secs_f64();
        chosen.insert(case.key(), lambda);
        run.write_image(&format!("restored/{}.png", case.key()), image.view())?;
        if let Some(row) = score(case, &image, "lasso", job.seed, runtime)? {
            rows.push(row);
        }
    }
    run.manifest.detail("lambda", chosen);
    write_report(run, rows)
}

fn eval(job: &EvalJob, run: &mut Run) -> Result<()> {
    let restored = list_images(&job.restored)?;
    let references = list_images(&job.reference)?;
    if restored.is_empty() {
        return Err(Error::invalid(format!("no images in {}", job.restored.display())));
    }
    let mut pairs = Vec::new();
    let mut unmatched = Vec::new();
    for r in &restored {
        match references.iter().find(|p| file_stem(p) == file_stem(r)) {
            Some(p) => pairs.push((r.clone(), p.clone())),
            None => unmatched.push(r.display().to_string()),
        }
    }
    if !unmatched.is_empty() {
        return Err(Error::invalid(format!(
            "no reference for:\n  {}",
            unmatched.join("\n  ")
        )));
    }
    let condition = job
        .restored
        .file_name()
        .and_then(|n| n.to_str())
        .and_then(parse_condition);
    let (mr, snr) = condition.unwrap_or((0.0, None));
    for (r, p) in &pairs {
        run.input(r)?;
        run.input(p)?;
    }
    run.start()?;
    let mut rows = Vec::new();
    for (r, p) in &pairs {
        let a = read_gray(p)?;
        let b = read_gray(r)?;
        if a.dim() != b.dim() {
            return Err(Error::invalid(format!(
                "{} and {} differ in size",
                r.display(),
                p.display()
            )));
        }
        rows.push(ReportRow {
            image: file_stem(r),
            method: job.method.clone(),
            mr,
            snr_db: snr,
            psnr_db: psnr(a.view(), b.view(), 1.0)?,
            ssim: ssim(a.view(), b.view(), 1.0)?,
            seed: 0,
            runtime_s: None,
        });
    }
    write_report(run, rows)
}

fn kld(job: &KldJob, run: &mut Run) -> Result<()> {
    let model = load_prior(run, &job.model)?;
    let dataset = PatchDataset::load(&job.dataset)?;
    run.input(&job.dataset)?;
    if dataset.is_empty() {
        return Err(Error::invalid("dataset is empty"));
    }
    let take = job.max_patches.min(dataset.len());
    let patches: Vec<Array2<f64>> = (0..take)
        .map(|k| dataset.patches[k * dataset.len() / take].clone())
        .collect();
    let seed = derive_seed(job.seed, "kld", 0);
    run.seed("kld", seed);
    run.start()?;
    let solver = solver_options(Some(job.solver), 0);
    let cmp = data_model_kld(&model, &patches, job.iterations, job.bins, &solver, &mut rng_from_seed(seed))?;
    run.write("data_hist.txt", cmp.data.to_columns())?;
    run.write("model_hist.txt", cmp.model.to_columns())?;
    let summary = json!({
        "kld_nats": cmp.kld.nats,
        "floored_bins": cmp.kld.floored_bins,
        "bins": job.bins,
        "patches": take,
        "sweeps": job.iterations,
    });
    run.write("kld.json", serde_json::to_string_pretty(&summary).expect("json") + "\n")
}

fn spectrum(job: &SpectrumJob, run: &mut Run) -> Result<()> {
    let model = match &job.model {
        Some(p) => Some(load_prior(run, p)?),
        None => None,
    };
    run.start()?;
    let grid = SpectrumGrid {
        samples: job.samples,
        half_range: job.range,
    };
    let relu = activation_spectrum(&Activation::Relu, &grid)?;
    let arctan = activation_spectrum(&Activation::Arctan, &grid)?;
    run.write("relu.txt", spectrum_to_columns(&relu, &grid))?;
    run.write("arctan.txt", spectrum_to_columns(&arctan, &grid))?;
    let relu_high = high_band_mean(&relu);
    let arctan_high = high_band_mean(&arctan);
    let mut gmm_high = Vec::new();
    if let Some(model) = &model {
        for m in 0..model.num_filters() {
            let s = activation_spectrum(&Activation::gmm_row(model, m), &grid)?;
            run.write(&format!("gmm_f{m:02}.txt"), spectrum_to_columns(&s, &grid))?;
            gmm_high.push(high_band_mean(&s));
        }
    }
    let summary = json!({
        "relu_high_band": relu_high,
        "arctan_high_band": arctan_high,
        "gmm_high_band": gmm_high,
        "relu_above_arctan": relu_high > arctan_high,
        "relu_above_every_gmm": gmm_high.iter().all(|&g| relu_high > g),
    });
    run.write("summary.json", serde_json::to_string_pretty(&summary).expect("json") + "\n")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn condition_labels_round_trip() {
        assert_eq!(condition_label(0.25, None), "mr0.25_snrnone");
        assert_eq!(parse_condition("mr0.25_snrnone"), Some((0.25, None)));
        assert_eq!(parse_condition(&condition_label(0.1, Some(16.0))), Some((0.1, Some(16.0))));
        assert_eq!(parse_condition("restored"), None);
    }
}
