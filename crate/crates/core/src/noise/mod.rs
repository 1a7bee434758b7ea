//! Noise-residual extraction.
//!
//! A residual is the input minus a denoised copy of itself. Built-in
//! filters (Gaussian, median, Haar soft-threshold) cover the classical
//! filter-based case; learned denoisers run out of process and their
//! residuals are ingested from a directory by the `external` extractor.

mod external;
mod gaussian;
mod median;
mod wavelet;

use std::path::{Path, PathBuf};

pub use external::{residual_to_raster, ExternalResidual};
pub use gaussian::{gaussian_denoise, gaussian_kernel, GaussianFilter};
pub use median::{median_denoise, MedianFilter};
pub use wavelet::{haar_forward, haar_inverse, soft_threshold, wavelet_denoise, HaarWavelet};
pub(crate) use gaussian::convolve_separable;

use crate::error::{Error, Result};
use crate::raster::{Plane, Raster};
use crate::registry::{arg, Registry};

/// Signed, unclamped per-channel noise pattern with the source's shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    planes: Vec<Plane>,
}

impl Residual {
    pub fn from_planes(planes: Vec<Plane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("residual needs at least one plane"))?;
        for p in &planes {
            first.check_same(p)?;
            if !p.is_finite() {
                return Err(Error::NonFinite("residual"));
            }
        }
        Ok(Self { planes })
    }

    pub fn width(&self) -> usize {
        self.planes[0].width()
    }

    pub fn height(&self) -> usize {
        self.planes[0].height()
    }

    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }
}

/// A residual extraction strategy.
pub trait Extractor: Send + Sync {
    /// Canonical spec string; parsing it yields an equivalent extractor.
    fn id(&self) -> String;

    /// `source` is the path the raster was decoded from, when known.
    fn extract(&self, raster: &Raster, source: Option<&Path>) -> Result<Residual>;
}

/// A filter-based denoiser. Every denoiser is also an [`Extractor`]
/// whose residual is `input - denoise(input)` per channel.
pub trait Denoiser: Send + Sync {
    fn id(&self) -> String;
    fn denoise_plane(&self, plane: &Plane) -> Plane;
}

impl<D: Denoiser> Extractor for D {
    fn id(&self) -> String {
        Denoiser::id(self)
    }

    fn extract(&self, raster: &Raster, _source: Option<&Path>) -> Result<Residual> {
        let planes = raster
            .planes()
            .iter()
            .map(|p| p.sub(&self.denoise_plane(p)))
            .collect::<Result<Vec<_>>>()?;
        Residual::from_planes(planes)
    }
}

/// Typed extractor configuration.
#[derive(Debug, Clone, PartialEq)]
pub enum ExtractorSpec {
    Gaussian { sigma: f64 },
    Median { window: usize },
    Wavelet { levels: usize, threshold: f64 },
    External { dir: PathBuf },
}

impl Default for ExtractorSpec {
    fn default() -> Self {
        ExtractorSpec::Gaussian { sigma: 1.0 }
    }
}

impl ExtractorSpec {
    pub fn validate(&self) -> Result<()> {
        match *self {
            ExtractorSpec::Gaussian { sigma } if !(sigma > 0.0 && sigma.is_finite()) => {
                Err(Error::invalid(format!("gaussian sigma must be > 0, got {sigma}")))
            }
            ExtractorSpec::Median { window } if window < 3 || window % 2 == 0 => Err(
                Error::invalid(format!("median window must be odd and >= 3, got {window}")),
            ),
            ExtractorSpec::Wavelet { levels, threshold }
                if !(1..=5).contains(&levels) || !(threshold >= 0.0 && threshold.is_finite()) =>
            {
                Err(Error::invalid(format!(
                    "wavelet needs levels in 1..=5 and threshold >= 0, got {levels}, {threshold}"
                )))
            }
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Box<dyn Extractor>> {
        self.validate()?;
        Ok(match self {
            ExtractorSpec::Gaussian { sigma } => Box::new(GaussianFilter::new(*sigma)?),
            ExtractorSpec::Median { window } => Box::new(MedianFilter::new(*window)?),
            ExtractorSpec::Wavelet { levels, threshold } => {
                Box::new(HaarWavelet::new(*levels, *threshold)?)
            }
            ExtractorSpec::External { dir } => Box::new(ExternalResidual::new(dir.clone())),
        })
    }

    /// Parses `gaussian[:sigma]`, `median[:window]`,
    /// `wavelet[:levels[:threshold]]` or `external:<dir>`.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (name, rest) = spec.split_once(':').unwrap_or((spec, ""));
        let args: Vec<&str> = if rest.is_empty() {
            vec![]
        } else {
            rest.split(':').collect()
        };
        let parsed = match name {
            "gaussian" => ExtractorSpec::Gaussian {
                sigma: arg(&args, 0, "gaussian sigma", Some(1.0))?,
            },
            "median" => ExtractorSpec::Median {
                window: arg(&args, 0, "median window", Some(3))?,
            },
            "wavelet" => ExtractorSpec::Wavelet {
                levels: arg(&args, 0, "wavelet levels", Some(2))?,
                threshold: arg(&args, 1, "wavelet threshold", Some(0.02))?,
            },
            // the directory may itself contain ':'
            "external" if !rest.is_empty() => ExtractorSpec::External {
                dir: PathBuf::from(rest),
            },
            "external" => {
                return Err(Error::Parse {
                    what: "external extractor",
                    reason: "missing directory".into(),
                })
            }
            other => {
                return Err(Error::UnknownStrategy {
                    kind: "extractor",
                    name: other.to_string(),
                    known: registry().names().collect::<Vec<_>>().join(", "),
                })
            }
        };
        parsed.validate()?;
        Ok(parsed)
    }
}

impl std::fmt::Display for ExtractorSpec {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            ExtractorSpec::Gaussian { sigma } => write!(f, "gaussian:{sigma}"),
            ExtractorSpec::Median { window } => write!(f, "median:{window}"),
            ExtractorSpec::Wavelet { levels, threshold } => {
                write!(f, "wavelet:{levels}:{threshold}")
            }
            ExtractorSpec::External { dir } => write!(f, "external:{}", dir.display()),
        }
    }
}

impl std::str::FromStr for ExtractorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

fn build_named(name: &str, args: &[&str]) -> Result<Box<dyn Extractor>> {
    let spec = if args.is_empty() {
        name.to_string()
    } else {
        format!("{name}:{}", args.join(":"))
    };
    ExtractorSpec::parse(&spec)?.build()
}

/// All residual extractors, keyed by name.
pub fn registry() -> Registry<dyn Extractor> {
    let mut reg = Registry::new("extractor");
    reg.register("gaussian", "gaussian[:sigma=1.0]", |a| build_named("gaussian", a));
    reg.register("median", "median[:window=3]", |a| build_named("median", a));
    reg.register("wavelet", "wavelet[:levels=2[:threshold=0.02]]", |a| {
        build_named("wavelet", a)
    });
    reg.register("external", "external:<dir>", |a| build_named("external", a));
    reg
}

pub fn extract_residual(raster: &Raster, spec: &ExtractorSpec, source: Option<&Path>) -> Result<Residual> {
    spec.build()?.extract(raster, source)
}
