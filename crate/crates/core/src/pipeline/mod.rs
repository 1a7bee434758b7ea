//! End-to-end orchestration: manifests, configuration, the per-image
//! feature pipeline and the worker pool. The command implementations live
//! in [`commands`].

pub mod commands;

use std::collections::HashSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagio::{center_crop, list_images, load_image, resize, ResizeMethod};
use crate::metrics::Label;
use crate::noise::{Extractor, ExtractorSpec};
use crate::ocsvm::{FeatureConfig, Gamma, OcSvmConfig, OcSvmModel};
use crate::raster::Raster;
use crate::spectrum::{enhance, grid_len, merge_channels, residual_features, sample_features, Spectrum};

pub use commands::*;

/// Environment variable overriding the worker count.
pub const THREADS_ENV: &str = "REALONLY_THREADS";

/// Training sets smaller than this get a warning.
pub const SMALL_TRAINING_SET: usize = 100;

pub const WORKING_SIZE: usize = 256;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryLabel {
    Real,
    Generated,
    Unknown,
}

impl EntryLabel {
    pub fn known(self) -> Option<Label> {
        match self {
            EntryLabel::Real => Some(Label::Real),
            EntryLabel::Generated => Some(Label::Generated),
            EntryLabel::Unknown => None,
        }
    }
}

impl From<Label> for EntryLabel {
    fn from(l: Label) -> Self {
        match l {
            Label::Real => EntryLabel::Real,
            Label::Generated => EntryLabel::Generated,
        }
    }
}

fn unknown() -> EntryLabel {
    EntryLabel::Unknown
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    #[serde(default = "unknown")]
    pub label: EntryLabel,
    /// Simulation provenance, present on simulator output.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub method: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub factor: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
}

impl ManifestEntry {
    pub fn new(path: impl Into<PathBuf>, label: EntryLabel) -> Self {
        Self {
            path: path.into(),
            label,
            method: None,
            factor: None,
            seed: None,
        }
    }
}

/// A list of images with optional labels. Relative paths are resolved
/// against the directory of the manifest file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    #[serde(default)]
    pub seed: u64,
    pub entries: Vec<ManifestEntry>,
    #[serde(skip)]
    base: Option<PathBuf>,
}

impl Manifest {
    pub fn new(seed: u64, entries: Vec<ManifestEntry>) -> Result<Self> {
        let m = Self {
            seed,
            entries,
            base: None,
        };
        m.validate()?;
        Ok(m)
    }

    /// Every image directly inside `dir`, in name order, with one label.
    pub fn from_dir(dir: &Path, label: EntryLabel) -> Result<Self> {
        let entries = list_images(dir)?
            .into_iter()
            .map(|p| ManifestEntry::new(p, label))
            .collect();
        Self::new(0, entries)
    }

    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(&e.path) {
                return Err(Error::invalid(format!(
                    "manifest lists {} twice",
                    e.path.display()
                )));
            }
        }
        Ok(())
    }

    pub fn from_json(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut m: Manifest = serde_json::from_str(text)?;
        m.base = base.map(Path::to_path_buf);
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text, path.parent())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        match &self.base {
            Some(base) if entry.path.is_relative() => base.join(&entry.path),
            _ => entry.path.clone(),
        }
    }

    pub fn resolved_paths(&self) -> Vec<PathBuf> {
        self.entries.iter().map(|e| self.resolve(e)).collect()
    }

    pub fn count(&self, label: EntryLabel) -> usize {
        self.entries.iter().filter(|e| e.label == label).count()
    }
}

/// How decoded images are brought to the working resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum InputPolicy {
    #[default]
    CenterCrop256,
    Resize256,
    Native,
}

impl InputPolicy {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim() {
            "center_crop_256" => Ok(InputPolicy::CenterCrop256),
            "resize_256" => Ok(InputPolicy::Resize256),
            "native" => Ok(InputPolicy::Native),
            other => Err(Error::Parse {
                what: "input policy",
                reason: format!(
                    "expected center_crop_256, resize_256 or native, got `{other}`"
                ),
            }),
        }
    }

    pub fn apply(self, raster: &Raster) -> Result<Raster> {
        match self {
            InputPolicy::CenterCrop256 => center_crop(raster, WORKING_SIZE),
            InputPolicy::Resize256 => resize(raster, WORKING_SIZE, WORKING_SIZE, ResizeMethod::Bilinear),
            InputPolicy::Native => Ok(raster.clone()),
        }
    }
}

impl fmt::Display for InputPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            InputPolicy::CenterCrop256 => "center_crop_256",
            InputPolicy::Resize256 => "resize_256",
            InputPolicy::Native => "native",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub extractor: ExtractorSpec,
    pub k: usize,
    pub input_policy: InputPolicy,
    pub ocsvm: OcSvmConfig,
    pub seed: u64,
    pub threads: Option<usize>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            extractor: ExtractorSpec::default(),
            k: 32,
            input_policy: InputPolicy::default(),
            ocsvm: OcSvmConfig::default(),
            seed: 0,
            threads: None,
        }
    }
}

fn parse_num<T: std::str::FromStr>(key: &'static str, value: &str) -> Result<T> {
    value.trim().parse().map_err(|_| Error::Parse {
        what: key,
        reason: format!("cannot parse `{value}`"),
    })
}

impl PipelineConfig {
    pub const KEYS: &'static [&'static str] = &[
        "extractor", "k", "input_policy", "nu", "gamma", "tol", "max_iter", "seed", "threads", "merge",
    ];

    /// Sets one option by name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        match key {
            "extractor" => self.extractor = ExtractorSpec::parse(value)?,
            "k" => self.k = parse_num("k", value)?,
            "input_policy" => self.input_policy = InputPolicy::parse(value)?,
            "nu" => self.ocsvm.nu = parse_num("nu", value)?,
            "gamma" => self.ocsvm.gamma = value.parse::<Gamma>()?,
            "tol" => self.ocsvm.tol = parse_num("tol", value)?,
            "max_iter" => self.ocsvm.max_iter = Some(parse_num("max_iter", value)?),
            "seed" => self.seed = parse_num("seed", value)?,
            "threads" => self.threads = Some(parse_num("threads", value)?),
            "merge" if value.trim() == "mean" => {}
            "merge" => {
                return Err(Error::invalid(format!(
                    "only the `mean` channel merge is supported, got `{value}`"
                )))
            }
            other => {
                return Err(Error::Parse {
                    what: "config",
                    reason: format!("unknown key `{other}` (known: {})", Self::KEYS.join(", ")),
                })
            }
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| Error::Parse {
                what: "config",
                reason: format!("line {}: expected `key = value`", n + 1),
            })?;
            self.set(key.trim(), value.trim())?;
        }
        Ok(())
    }

    /// Defaults overridden by the file at `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg = Self::default();
        cfg.apply_text(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.extractor.validate()?;
        self.ocsvm.validate()?;
        if self.k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        if self.input_policy != InputPolicy::Native && self.k > WORKING_SIZE {
            return Err(Error::invalid(format!("k = {} exceeds the {WORKING_SIZE} working size", self.k)));
        }
        if self.threads == Some(0) {
            return Err(Error::invalid("threads must be >= 1"));
        }
        Ok(())
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            k: self.k,
            extractor: self.extractor.to_string(),
            merge: "mean".into(),
        }
    }
}

/// Worker count: an explicit request, else `REALONLY_THREADS`, else the
/// configured value, else the number of CPUs.
pub fn resolve_threads(explicit: Option<usize>, configured: Option<usize>) -> Result<usize> {
    if let Some(n) = explicit {
        return if n == 0 {
            Err(Error::invalid("thread count must be >= 1"))
        } else {
            Ok(n)
        };
    }
    if let Ok(raw) = std::env::var(THREADS_ENV) {
        let n: usize = raw.trim().parse().map_err(|_| Error::Parse {
            what: "REALONLY_THREADS",
            reason: format!("not a positive integer: `{raw}`"),
        })?;
        if n == 0 {
            return Err(Error::invalid("REALONLY_THREADS must be >= 1"));
        }
        return Ok(n);
    }
    Ok(configured.unwrap_or_else(|| {
        std::thread::available_parallelism()
            .map(|n| n.get())
            .unwrap_or(1)
    }))
}

/// Runs `f` inside a dedicated pool of `threads` workers.
pub fn with_pool<R: Send>(threads: usize, f: impl FnOnce() -> R + Send) -> Result<R> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot start worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Seconds spent in each stage for one image.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimes {
    pub decode: f64,
    pub noise: f64,
    pub fft: f64,
    pub svm: f64,
}

impl std::ops::AddAssign for StageTimes {
    fn add_assign(&mut self, o: Self) {
        self.decode += o.decode;
        self.noise += o.noise;
        self.fft += o.fft;
        self.svm += o.svm;
    }
}

/// Image -> residual -> merged amplitude spectrum -> enhanced grid samples.
pub struct FeaturePipeline {
    extractor: Box<dyn Extractor>,
    spec: ExtractorSpec,
    k: usize,
    policy: InputPolicy,
}

impl FeaturePipeline {
    pub fn new(spec: &ExtractorSpec, k: usize, policy: InputPolicy) -> Result<Self> {
        if k == 0 {
            return Err(Error::invalid("k must be >= 1"));
        }
        Ok(Self {
            extractor: spec.build()?,
            spec: spec.clone(),
            k,
            policy,
        })
    }

    pub fn from_config(cfg: &PipelineConfig) -> Result<Self> {
        Self::new(&cfg.extractor, cfg.k, cfg.input_policy)
    }

    /// Rebuilds the feature settings a model was trained with.
    pub fn for_model(model: &OcSvmModel, policy: InputPolicy) -> Result<Self> {
        if model.feature.merge != "mean" {
            return Err(Error::invalid(format!(
                "unsupported channel merge `{}`",
                model.feature.merge
            )));
        }
        let spec = ExtractorSpec::parse(&model.feature.extractor)?;
        Self::new(&spec, model.feature.k, policy)
    }

    pub fn policy(&self) -> InputPolicy {
        self.policy
    }

    pub fn feature_config(&self) -> FeatureConfig {
        FeatureConfig {
            k: self.k,
            extractor: self.spec.to_string(),
            merge: "mean".into(),
        }
    }

    /// Decodes `path` and applies the input policy.
    pub fn load(&self, path: &Path) -> Result<Raster> {
        self.policy.apply(&load_image(path)?)
    }

    /// Merged amplitude spectrum of the residual.
    pub fn spectrum(&self, raster: &Raster, source: Option<&Path>) -> Result<Spectrum> {
        merge_channels(&self.extractor.extract(raster, source)?)
    }

    /// Features of an already prepared raster. With `target`, the
    /// amplitude spectrum is bilinearly resampled to that size first (used
    /// after cropping).
    pub fn features(&self, raster: &Raster, source: Option<&Path>, target: Option<(usize, usize)>) -> Result<Vec<f64>> {
        self.features_timed(raster, source, target).map(|(f, _)| f)
    }

    fn features_timed(
        &self,
        raster: &Raster,
        source: Option<&Path>,
        target: Option<(usize, usize)>,
    ) -> Result<(Vec<f64>, StageTimes)> {
        let mut times = StageTimes::default();
        let t = Instant::now();
        let residual = self.extractor.extract(raster, source)?;
        times.noise = t.elapsed().as_secs_f64();
        let t = Instant::now();
        let values = match target {
            Some((m, n)) if (residual.width(), residual.height()) != (m, n) => {
                let spec = merge_channels(&residual)?.resized(m, n)?;
                sample_features(&enhance(&spec), self.k)?
            }
            _ => residual_features(&residual, self.k)?,
        };
        times.fft = t.elapsed().as_secs_f64();
        Ok((values, times))
    }

    /// Decode, prepare and featurize one file.
    pub fn path_features(&self, path: &Path) -> Result<Vec<f64>> {
        self.path_features_timed(path).map(|(f, _)| f)
    }

    pub fn path_features_timed(&self, path: &Path) -> Result<(Vec<f64>, StageTimes)> {
        let t = Instant::now();
        let raster = self.load(path)?;
        let decode = t.elapsed().as_secs_f64();
        let (f, mut times) = self.features_timed(&raster, Some(path), None)?;
        times.decode = decode;
        Ok((f, times))
    }

    /// Feature length for a `w x h` input.
    pub fn dim_for(&self, w: usize, h: usize) -> usize {
        grid_len(w, self.k) * grid_len(h, self.k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagio::{save_image, ImageFormat};
    use crate::scene::dead_leaves;

    #[test]
    fn config_precedence_and_parsing() {
        let mut cfg = PipelineConfig::default();
        cfg.apply_text("# comment\nnu = 0.2\n\nk=16  # trailing\ngamma = auto\ninput_policy = resize_256\n")
            .unwrap();
        assert_eq!(cfg.ocsvm.nu, 0.2);
        assert_eq!(cfg.k, 16);
        assert_eq!(cfg.input_policy, InputPolicy::Resize256);
        // a later flag wins over the file
        cfg.set("nu", "0.05").unwrap();
        assert_eq!(cfg.ocsvm.nu, 0.05);
        assert!(cfg.apply_text("bogus = 1").is_err());
        assert!(cfg.apply_text("nu 0.1").is_err());
        assert!(cfg.set("merge", "concat").is_err());
        cfg.set("extractor", "median:5").unwrap();
        assert_eq!(cfg.feature_config().extractor, "median:5");
        cfg.set("gamma", "0.5").unwrap();
        assert_eq!(cfg.ocsvm.gamma, Gamma::Value(0.5));
    }

    #[test]
    fn config_file_load() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("cfg.txt");
        std::fs::write(&p, "nu = 0.3\nthreads = 2\n").unwrap();
        let cfg = PipelineConfig::load(&p).unwrap();
        assert_eq!(cfg.ocsvm.nu, 0.3);
        assert_eq!(cfg.threads, Some(2));
        assert_eq!(cfg.k, 32);
        std::fs::write(&p, "nu = 1.5\n").unwrap();
        assert!(PipelineConfig::load(&p).is_err());
    }

    #[test]
    fn manifest_roundtrip_and_resolution() {
        let json = r#"{"seed": 7, "entries": [{"path": "a.png", "label": "real"}, {"path": "/abs/b.png", "label": "generated"}, {"path": "c.png"}]}"#;
        let m = Manifest::from_json(json, Some(Path::new("/data"))).unwrap();
        assert_eq!(m.seed, 7);
        assert_eq!(m.entries[2].label, EntryLabel::Unknown);
        assert_eq!(m.resolve(&m.entries[0]), PathBuf::from("/data/a.png"));
        assert_eq!(m.resolve(&m.entries[1]), PathBuf::from("/abs/b.png"));
        let back = Manifest::from_json(&m.to_json().unwrap(), Some(Path::new("/data"))).unwrap();
        assert_eq!(back, m);
        let dup = r#"{"seed": 0, "entries": [{"path": "a.png"}, {"path": "a.png"}]}"#;
        assert!(Manifest::from_json(dup, None).is_err());
    }

    #[test]
    fn default_features_have_64_dims() {
        let fp = FeaturePipeline::from_config(&PipelineConfig::default()).unwrap();
        let img = dead_leaves(300, 1);
        let prepared = fp.policy().apply(&img).unwrap();
        assert_eq!(fp.features(&prepared, None, None).unwrap().len(), 64);
        assert_eq!(fp.dim_for(256, 256), 64);
    }

    #[test]
    fn policies() {
        let img = dead_leaves(64, 2);
        assert!(InputPolicy::CenterCrop256.apply(&img).is_err());
        let r = InputPolicy::Resize256.apply(&img).unwrap();
        assert_eq!((r.width(), r.height()), (256, 256));
        assert_eq!(InputPolicy::Native.apply(&img).unwrap(), img);
        for p in ["center_crop_256", "resize_256", "native"] {
            assert_eq!(InputPolicy::parse(p).unwrap().to_string(), p);
        }
    }

    #[test]
    fn path_features_match_in_memory() {
        let dir = tempfile::tempdir().unwrap();
        let img = dead_leaves(256, 3);
        let p = dir.path().join("x.png");
        save_image(&img, &p, ImageFormat::Png).unwrap();
        let fp = FeaturePipeline::from_config(&PipelineConfig::default()).unwrap();
        assert_eq!(fp.path_features(&p).unwrap(), fp.features(&img, None, None).unwrap());
    }

    #[test]
    fn explicit_threads_win() {
        assert_eq!(resolve_threads(Some(3), Some(5)).unwrap(), 3);
        assert!(resolve_threads(Some(0), None).is_err());
    }
}
