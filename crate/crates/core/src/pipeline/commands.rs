//! Command implementations shared by the CLI and the test suites. Every
//! command runs its per-image work on the current rayon pool and
//! aggregates results in input order, so reports do not depend on the
//! number of workers.

use std::collections::HashSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::Serialize;

use super::{EntryLabel, FeaturePipeline, Manifest, ManifestEntry, PipelineConfig, StageTimes, SMALL_TRAINING_SET};
use crate::error::{Error, Result};
use crate::imagio::{load_image, save_image, ImageFormat};
use crate::metrics::{accuracy, average_precision, f1, Label, ScoredLabel};
use crate::ocsvm::{train_with_report, verdict, OcSvmModel, TrainReport};
use crate::perturb::PerturbSpec;
use crate::simgen::{peak_report, simulate, PeakReport, SimSpec};
use crate::spectrum::{enhance, mean_profile, mean_spectrum, spectrum_to_image, Spectrum};

/// Minimum corpus size accepted by [`cmd_bench`].
pub const BENCH_MIN_IMAGES: usize = 100;

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn to_json_line<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

/// Features of every path, failing on the first unreadable image.
pub fn compute_features(fp: &FeaturePipeline, paths: &[PathBuf]) -> Result<Vec<Vec<f64>>> {
    paths.par_iter().map(|p| fp.path_features(p)).collect()
}

/// Paths with their features, and paths with their error messages.
pub type LenientFeatures = (Vec<(PathBuf, Vec<f64>)>, Vec<(PathBuf, String)>);

/// Features of every path; failures are returned separately, both lists
/// in input order.
pub fn compute_features_lenient(fp: &FeaturePipeline, paths: &[PathBuf]) -> LenientFeatures {
    let results: Vec<_> = paths.par_iter().map(|p| (p, fp.path_features(p))).collect();
    let mut ok = Vec::new();
    let mut failed = Vec::new();
    for (p, r) in results {
        match r {
            Ok(f) => ok.push((p.clone(), f)),
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                failed.push((p.clone(), e.to_string()));
            }
        }
    }
    (ok, failed)
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: OcSvmModel,
    pub report: TrainReport,
    /// Every image read during training, in reading order.
    pub audit: Vec<PathBuf>,
    pub warnings: Vec<String>,
}

/// Trains on a manifest of real images only and optionally writes the
/// model. Any generated-labeled entry is rejected before an image is read.
pub fn cmd_train(manifest: &Manifest, cfg: &PipelineConfig, model_out: Option<&Path>) -> Result<TrainOutcome> {
    cfg.validate()?;
    for e in &manifest.entries {
        match e.label {
            EntryLabel::Real => {}
            EntryLabel::Generated => return Err(Error::GeneratedInTraining(e.path.display().to_string())),
            EntryLabel::Unknown => {
                return Err(Error::invalid(format!(
                    "training entry {} is unlabeled; only real images may be used",
                    e.path.display()
                )))
            }
        }
    }
    let paths = manifest.resolved_paths();
    if paths.len() < 2 {
        return Err(Error::invalid(format!("training needs at least 2 images, got {}", paths.len())));
    }
    let mut warnings = Vec::new();
    if paths.len() < SMALL_TRAINING_SET {
        warnings.push(format!(
            "only {} training images; fewer than {SMALL_TRAINING_SET} usually gives a loose boundary",
            paths.len()
        ));
    }
    let fp = FeaturePipeline::from_config(cfg)?;
    let features = compute_features(&fp, &paths)?;
    if features.windows(2).all(|w| w[0] == w[1]) {
        warnings.push("all training feature vectors are identical; the model is degenerate".into());
    }
    let (model, report) = train_with_report(&features, &cfg.ocsvm)?;
    let model = model.with_feature_config(fp.feature_config());
    for w in &warnings {
        log::warn!("{w}");
    }
    log::info!(
        "trained on {} images: {} support vectors, sum(alpha) = {:.12}, training outliers {:.4}",
        report.n_train,
        report.n_support,
        report.alpha_sum,
        report.outlier_fraction
    );
    if let Some(out) = model_out {
        if let Some(dir) = out.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        model.save(out)?;
    }
    Ok(TrainOutcome {
        model,
        report,
        audit: paths,
        warnings,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct Detection {
    pub path: String,
    pub decision: f64,
    pub verdict: Label,
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct DetectSummary {
    pub n_images: usize,
    pub n_real: usize,
    pub n_generated: usize,
    pub n_failed: usize,
    pub failures: Vec<Failure>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Failure {
    pub path: String,
    pub error: String,
}

#[derive(Serialize)]
struct DetectFile<'a> {
    detections: &'a [Detection],
    summary: &'a DetectSummary,
}

/// Decision and verdict for every decodable image; undecodable ones are
/// listed in the summary. A `.json` report gets detections plus summary,
/// anything else gets `path,decision,verdict` CSV.
pub fn cmd_detect(
    model: &OcSvmModel,
    manifest: &Manifest,
    cfg: &PipelineConfig,
    report_out: Option<&Path>,
) -> Result<(Vec<Detection>, DetectSummary)> {
    let fp = FeaturePipeline::for_model(model, cfg.input_policy)?;
    let paths = manifest.resolved_paths();
    if paths.is_empty() {
        log::warn!("no input images");
    }
    let (ok, failed) = compute_features_lenient(&fp, &paths);
    let features: Vec<Vec<f64>> = ok.iter().map(|(_, f)| f.clone()).collect();
    let decisions = model.decision_batch(&features)?;
    let detections: Vec<Detection> = ok
        .iter()
        .zip(&decisions)
        .map(|((p, _), &d)| Detection {
            path: p.display().to_string(),
            decision: d,
            verdict: verdict(d),
        })
        .collect();
    let n_generated = detections.iter().filter(|d| d.verdict == Label::Generated).count();
    let summary = DetectSummary {
        n_images: detections.len(),
        n_real: detections.len() - n_generated,
        n_generated,
        n_failed: failed.len(),
        failures: failed
            .into_iter()
            .map(|(p, e)| Failure {
                path: p.display().to_string(),
                error: e,
            })
            .collect(),
    };
    if let Some(out) = report_out {
        let text = if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            to_json_line(&DetectFile {
                detections: &detections,
                summary: &summary,
            })?
        } else {
            let mut s = String::from("path,decision,verdict\n");
            for d in &detections {
                let _ = writeln!(s, "{},{},{}", csv_field(&d.path), d.decision, d.verdict);
            }
            s
        };
        write_text(out, &text)?;
    }
    Ok((detections, summary))
}

/// Metrics at the fixed decision threshold 0; AP ranks by `-decision`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalReport {
    pub acc: f64,
    pub ap: f64,
    pub f1: f64,
    pub n_real: usize,
    pub n_generated: usize,
    pub threshold: f64,
}

impl EvalReport {
    pub fn from_decisions(decisions: &[f64], labels: &[Label]) -> Result<Self> {
        if decisions.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: format!("{} decisions", labels.len()),
                actual: format!("{} decisions", decisions.len()),
            });
        }
        let n_generated = labels.iter().filter(|l| l.is_generated()).count();
        let n_real = labels.len() - n_generated;
        if n_generated == 0 || n_real == 0 {
            return Err(Error::invalid(
                "evaluation needs both real and generated images (AP is undefined otherwise)",
            ));
        }
        let preds: Vec<Label> = decisions.iter().map(|&d| verdict(d)).collect();
        let scored: Vec<ScoredLabel> = decisions
            .iter()
            .zip(labels)
            .map(|(&d, &label)| ScoredLabel { score: -d, label })
            .collect();
        Ok(Self {
            acc: accuracy(&preds, labels)?,
            ap: average_precision(&scored)?,
            f1: f1(&preds, labels)?,
            n_real,
            n_generated,
            threshold: 0.0,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        to_json_line(self)
    }
}

fn labeled(manifest: &Manifest) -> Result<Vec<(PathBuf, Label)>> {
    manifest
        .entries
        .iter()
        .map(|e| {
            e.label.known().map(|l| (manifest.resolve(e), l)).ok_or_else(|| {
                Error::invalid(format!("evaluation entry {} is unlabeled", e.path.display()))
            })
        })
        .collect()
}

/// Evaluates a fully labeled manifest; unreadable images are an error.
pub fn cmd_eval(model: &OcSvmModel, manifest: &Manifest, cfg: &PipelineConfig, report_out: Option<&Path>) -> Result<EvalReport> {
    let items = labeled(manifest)?;
    let labels: Vec<Label> = items.iter().map(|(_, l)| *l).collect();
    if !labels.contains(&Label::Real) || !labels.contains(&Label::Generated) {
        return Err(Error::invalid(
            "evaluation needs both real and generated images (AP is undefined otherwise)",
        ));
    }
    let fp = FeaturePipeline::for_model(model, cfg.input_policy)?;
    let paths: Vec<PathBuf> = items.into_iter().map(|(p, _)| p).collect();
    let decisions = model.decision_batch(&compute_features(&fp, &paths)?)?;
    let report = EvalReport::from_decisions(&decisions, &labels)?;
    if let Some(out) = report_out {
        write_text(out, &report.to_json()?)?;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RobustnessRow {
    pub spec: String,
    #[serde(flatten)]
    pub metrics: EvalReport,
}

/// Features of an image after the input policy and a perturbation. Crops
/// get their spectrum resampled back to the unperturbed size.
pub fn perturbed_features(fp: &FeaturePipeline, path: &Path, spec: &PerturbSpec, stream: u64) -> Result<Vec<f64>> {
    let base = fp.load(path)?;
    if spec.is_identity() {
        return fp.features(&base, Some(path), None);
    }
    let img = spec.apply_stream(&base, stream)?;
    let target = spec.crop_size().map(|_| (base.width(), base.height()));
    fp.features(&img, Some(path), target)
}

/// One metrics row per perturbation, in grid order. Only generated images
/// are perturbed; generated image `i` uses random stream `i`.
pub fn cmd_robustness(
    model: &OcSvmModel,
    manifest: &Manifest,
    grid: &[PerturbSpec],
    cfg: &PipelineConfig,
    report_out: Option<&Path>,
) -> Result<Vec<RobustnessRow>> {
    if grid.is_empty() {
        return Err(Error::invalid("empty perturbation grid"));
    }
    let items = labeled(manifest)?;
    let fp = FeaturePipeline::for_model(model, cfg.input_policy)?;
    let real: Vec<PathBuf> = items.iter().filter(|(_, l)| *l == Label::Real).map(|(p, _)| p.clone()).collect();
    let generated: Vec<PathBuf> = items.iter().filter(|(_, l)| *l == Label::Generated).map(|(p, _)| p.clone()).collect();
    if real.is_empty() || generated.is_empty() {
        return Err(Error::invalid(
            "evaluation needs both real and generated images (AP is undefined otherwise)",
        ));
    }
    let real_decisions = model.decision_batch(&compute_features(&fp, &real)?)?;
    let mut labels = vec![Label::Real; real.len()];
    labels.extend(std::iter::repeat_n(Label::Generated, generated.len()));

    let mut rows = Vec::with_capacity(grid.len());
    for spec in grid {
        let feats: Vec<Vec<f64>> = generated
            .par_iter()
            .enumerate()
            .map(|(i, p)| perturbed_features(&fp, p, spec, i as u64))
            .collect::<Result<_>>()?;
        let mut decisions = real_decisions.clone();
        decisions.extend(model.decision_batch(&feats)?);
        let metrics = EvalReport::from_decisions(&decisions, &labels)?;
        log::info!("{spec}: acc {:.4} ap {:.4} f1 {:.4}", metrics.acc, metrics.ap, metrics.f1);
        rows.push(RobustnessRow {
            spec: spec.to_string(),
            metrics,
        });
    }
    if let Some(out) = report_out {
        let text = if out.extension().is_some_and(|e| e.eq_ignore_ascii_case("json")) {
            to_json_line(&rows)?
        } else {
            let mut s = String::from("spec,acc,ap,f1,n_real,n_generated,threshold\n");
            for r in &rows {
                let m = &r.metrics;
                let _ = writeln!(
                    s,
                    "{},{},{},{},{},{},{}",
                    csv_field(&r.spec),
                    m.acc,
                    m.ap,
                    m.f1,
                    m.n_real,
                    m.n_generated,
                    m.threshold
                );
            }
            s
        };
        write_text(out, &text)?;
    }
    Ok(rows)
}

#[derive(Debug, Clone, Default, Serialize)]
pub struct SpectrumSummary {
    pub n_images: usize,
    pub written: Vec<PathBuf>,
    pub failures: Vec<Failure>,
    /// Row profile of the mean spectrum, when requested.
    pub profile: Option<Vec<f64>>,
    pub peak: Option<PeakReport>,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct SpectrumOptions {
    /// Write `profile.csv` with the mean row profile.
    pub mean_profile: bool,
    /// Run the lattice peak check on the mean spectrum with this period.
    pub peak_period: Option<usize>,
}

/// Renders `<stem>_raw.png` and `<stem>_enhanced.png` (centered,
/// log-scaled) for every decodable image.
pub fn cmd_spectrum(paths: &[PathBuf], cfg: &PipelineConfig, out_dir: &Path, opts: SpectrumOptions) -> Result<SpectrumSummary> {
    let fp = FeaturePipeline::from_config(cfg)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut seen = HashSet::new();
    let names: Vec<String> = paths
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let stem = file_stem(p);
            if seen.insert(stem.clone()) {
                stem
            } else {
                format!("{stem}_{i}")
            }
        })
        .collect();
    let results: Vec<Result<(Spectrum, Vec<PathBuf>)>> = paths
        .par_iter()
        .zip(&names)
        .map(|(p, name)| {
            let spec = fp.spectrum(&fp.load(p)?, Some(p))?;
            let raw = out_dir.join(format!("{name}_raw.png"));
            let enh = out_dir.join(format!("{name}_enhanced.png"));
            save_image(&spectrum_to_image(&spec, true, true)?, &raw, ImageFormat::Png)?;
            save_image(&spectrum_to_image(&enhance(&spec), true, true)?, &enh, ImageFormat::Png)?;
            Ok((spec, vec![raw, enh]))
        })
        .collect();
    let mut summary = SpectrumSummary::default();
    let mut spectra = Vec::new();
    for (p, r) in paths.iter().zip(results) {
        match r {
            Ok((s, files)) => {
                spectra.push(s);
                summary.written.extend(files);
            }
            Err(e) => {
                log::warn!("skipping {}: {e}", p.display());
                summary.failures.push(Failure {
                    path: p.display().to_string(),
                    error: e.to_string(),
                });
            }
        }
    }
    summary.n_images = spectra.len();
    if spectra.is_empty() {
        log::warn!("no decodable images");
        return Ok(summary);
    }
    if opts.mean_profile {
        let profile = mean_profile(&spectra)?;
        let mut s = String::from("u,amplitude\n");
        for (u, a) in profile.iter().enumerate() {
            let _ = writeln!(s, "{u},{a}");
        }
        let out = out_dir.join("profile.csv");
        write_text(&out, &s)?;
        summary.written.push(out);
        summary.profile = Some(profile);
    }
    if let Some(period) = opts.peak_period {
        summary.peak = Some(peak_report(&mean_spectrum(&spectra)?, period)?);
    }
    Ok(summary)
}

/// Writes `<out>/real/<stem>.png` (the prepared input) and
/// `<out>/gen/<stem>.png` (its simulation) for every input, cycling
/// through `specs`, plus `<out>/manifest.json`. Image `i` seeds its output
/// stage with `seed + i`.
pub fn cmd_simulate(paths: &[PathBuf], specs: &[SimSpec], cfg: &PipelineConfig, out: &Path) -> Result<Manifest> {
    if specs.is_empty() {
        return Err(Error::invalid("no simulation spec given"));
    }
    for s in specs {
        s.validate()?;
    }
    let mut seen = HashSet::new();
    for p in paths {
        if !seen.insert(file_stem(p)) {
            return Err(Error::invalid(format!("duplicate file stem {}", p.display())));
        }
    }
    let real_dir = out.join("real");
    let gen_dir = out.join("gen");
    for d in [&real_dir, &gen_dir] {
        std::fs::create_dir_all(d).map_err(|e| Error::io(d, e))?;
    }
    let pairs: Vec<[ManifestEntry; 2]> = paths
        .par_iter()
        .enumerate()
        .map(|(i, p)| {
            let base = &specs[i % specs.len()];
            let spec = SimSpec {
                seed: cfg.seed.wrapping_add(i as u64),
                ..base.clone()
            };
            let real = cfg.input_policy.apply(&load_image(p)?)?;
            let fake = simulate(&real, &spec)?;
            let name = format!("{}.png", file_stem(p));
            save_image(&real, real_dir.join(&name), ImageFormat::Png)?;
            save_image(&fake, gen_dir.join(&name), ImageFormat::Png)?;
            let mut gen = ManifestEntry::new(Path::new("gen").join(&name), EntryLabel::Generated);
            gen.method = Some(spec.method.clone());
            gen.factor = Some(spec.factor);
            gen.seed = Some(spec.seed);
            Ok([ManifestEntry::new(Path::new("real").join(&name), EntryLabel::Real), gen])
        })
        .collect::<Result<_>>()?;
    let (reals, gens): (Vec<_>, Vec<_>) = pairs.into_iter().map(|[r, g]| (r, g)).unzip();
    let mut manifest = Manifest::new(cfg.seed, reals.into_iter().chain(gens).collect())?;
    manifest.save(&out.join("manifest.json"))?;
    manifest.base = Some(out.to_path_buf());
    Ok(manifest)
}

/// Applies one perturbation to one image and writes the result in the
/// format implied by `output`.
pub fn cmd_perturb(input: &Path, output: &Path, spec: &PerturbSpec, jpeg_quality: u8) -> Result<()> {
    let img = spec.apply(&load_image(input)?)?;
    save_image(&img, output, ImageFormat::from_path(output, jpeg_quality)?)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StageMillis {
    pub decode: f64,
    pub noise: f64,
    pub fft: f64,
    pub svm: f64,
}

/// Throughput plus mean per-image milliseconds of each stage.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BenchReport {
    pub images_per_s: f64,
    pub stages: StageMillis,
}

/// End-to-end decode, feature and decision throughput over `paths` on the
/// current pool.
pub fn cmd_bench(model: &OcSvmModel, paths: &[PathBuf], cfg: &PipelineConfig, report_out: Option<&Path>) -> Result<BenchReport> {
    if paths.len() < BENCH_MIN_IMAGES {
        return Err(Error::invalid(format!(
            "benchmark needs at least {BENCH_MIN_IMAGES} images, got {}",
            paths.len()
        )));
    }
    let fp = FeaturePipeline::for_model(model, cfg.input_policy)?;
    let start = Instant::now();
    let times: Vec<StageTimes> = paths
        .par_iter()
        .map(|p| {
            let (f, mut t) = fp.path_features_timed(p)?;
            let s = Instant::now();
            std::hint::black_box(model.decision(&f)?);
            t.svm = s.elapsed().as_secs_f64();
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let wall = start.elapsed().as_secs_f64();
    let mut total = StageTimes::default();
    for t in times {
        total += t;
    }
    let per = 1000.0 / paths.len() as f64;
    let report = BenchReport {
        images_per_s: paths.len() as f64 / wall,
        stages: StageMillis {
            decode: total.decode * per,
            noise: total.noise * per,
            fft: total.fft * per,
            svm: total.svm * per,
        },
    };
    if let Some(out) = report_out {
        write_text(out, &to_json_line(&report)?)?;
    }
    Ok(report)
}

/// Writes `path,label,v0..` (or `path,v0..` when nothing is labeled) and
/// returns the number of rows. Unreadable images are an error.
pub fn export_features(manifest: &Manifest, cfg: &PipelineConfig, out: &Path) -> Result<usize> {
    let fp = FeaturePipeline::from_config(cfg)?;
    let features = compute_features(&fp, &manifest.resolved_paths())?;
    let with_labels = manifest.entries.iter().any(|e| e.label != EntryLabel::Unknown);
    let dim = features.first().map_or(0, Vec::len);
    let mut s = String::from("path");
    if with_labels {
        s.push_str(",label");
    }
    for i in 0..dim {
        let _ = write!(s, ",v{i}");
    }
    s.push('\n');
    for (e, f) in manifest.entries.iter().zip(&features) {
        s.push_str(&csv_field(&e.path.display().to_string()));
        if with_labels {
            let label = match e.label {
                EntryLabel::Real => "real",
                EntryLabel::Generated => "generated",
                EntryLabel::Unknown => "",
            };
            s.push(',');
            s.push_str(label);
        }
        for v in f {
            let _ = write!(s, ",{v}");
        }
        s.push('\n');
    }
    write_text(out, &s)?;
    Ok(features.len())
}
