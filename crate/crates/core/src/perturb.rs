//! Seeded post-processing operations for robustness sweeps.
//!
//! A perturbation is written `name[:param][@seed=N]`, e.g. `jpeg:85` or
//! `gauss:5@seed=7`. Stochastic kinds draw from a ChaCha stream chosen by
//! the caller (typically the image index), so a sweep over many images is
//! reproducible and independent of scheduling order.

use std::fmt;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::imagio::{center_crop, jpeg_roundtrip};
use crate::metrics::psnr;
use crate::noise::convolve_separable;
use crate::raster::{Plane, Raster};
use crate::registry::{arg, Registry};

pub trait Perturbation: Send + Sync {
    fn id(&self) -> String;

    fn apply(&self, raster: &Raster, rng: &mut ChaCha8Rng) -> Result<Raster>;

    fn is_stochastic(&self) -> bool {
        false
    }

    /// Output side length when the perturbation crops.
    fn crop_size(&self) -> Option<usize> {
        None
    }
}

fn check_range(what: &str, v: f64, lo: f64, hi: f64) -> Result<()> {
    if !(v >= lo && v <= hi) {
        return Err(Error::invalid(format!("{what} must be in [{lo}, {hi}], got {v}")));
    }
    Ok(())
}

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

struct Identity;

impl Perturbation for Identity {
    fn id(&self) -> String {
        "identity".into()
    }

    fn apply(&self, raster: &Raster, _rng: &mut ChaCha8Rng) -> Result<Raster> {
        Ok(raster.clone())
    }
}

/// 3-tap Gaussian blur.
struct Blur {
    sigma: f64,
    kernel: [f64; 3],
}

impl Blur {
    fn new(sigma: f64) -> Result<Self> {
        check_range("blur sigma", sigma, 0.1, 1.0)?;
        let side = (-1.0 / (2.0 * sigma * sigma)).exp();
        let norm = 1.0 + 2.0 * side;
        Ok(Self {
            sigma,
            kernel: [side / norm, 1.0 / norm, side / norm],
        })
    }
}

impl Perturbation for Blur {
    fn id(&self) -> String {
        format!("blur:{}", self.sigma)
    }

    fn apply(&self, raster: &Raster, _rng: &mut ChaCha8Rng) -> Result<Raster> {
        raster.map_planes(|p| convolve_separable(p, &self.kernel).map(clamp01))
    }
}

struct Brightness(f64);

impl Perturbation for Brightness {
    fn id(&self) -> String {
        format!("brightness:{}", self.0)
    }

    fn apply(&self, raster: &Raster, _rng: &mut ChaCha8Rng) -> Result<Raster> {
        if self.0 == 1.0 {
            return Ok(raster.clone());
        }
        let f = self.0;
        raster.map(|v| clamp01(v * f))
    }
}

/// Power-law tone curve `x^g`.
struct GammaCurve(f64);

impl Perturbation for GammaCurve {
    fn id(&self) -> String {
        format!("gamma:{}", self.0)
    }

    fn apply(&self, raster: &Raster, _rng: &mut ChaCha8Rng) -> Result<Raster> {
        if self.0 == 1.0 {
            return Ok(raster.clone());
        }
        let g = self.0;
        raster.map(|v| clamp01(v.powf(g)))
    }
}

struct Crop(usize);

impl Perturbation for Crop {
    fn id(&self) -> String {
        format!("crop:{}", self.0)
    }

    fn apply(&self, raster: &Raster, _rng: &mut ChaCha8Rng) -> Result<Raster> {
        center_crop(raster, self.0)
    }

    fn crop_size(&self) -> Option<usize> {
        Some(self.0)
    }
}

struct Jpeg(u8);

impl Perturbation for Jpeg {
    fn id(&self) -> String {
        format!("jpeg:{}", self.0)
    }

    fn apply(&self, raster: &Raster, _rng: &mut ChaCha8Rng) -> Result<Raster> {
        jpeg_roundtrip(raster, self.0)
    }
}

/// Additive white Gaussian noise; sigma in 8-bit units.
struct GaussNoise(f64);

impl Perturbation for GaussNoise {
    fn id(&self) -> String {
        format!("gauss:{}", self.0)
    }

    fn apply(&self, raster: &Raster, rng: &mut ChaCha8Rng) -> Result<Raster> {
        let dist = Normal::new(0.0, self.0 / 255.0).map_err(|e| Error::invalid(e.to_string()))?;
        raster.map_planes(|p| p.map(|v| clamp01(v + dist.sample(rng))))
    }

    fn is_stochastic(&self) -> bool {
        true
    }
}

/// Impulse noise hitting `density` of the pixels in all channels at once,
/// half white and half black.
struct SaltPepper(f64);

impl Perturbation for SaltPepper {
    fn id(&self) -> String {
        format!("saltpepper:{}", self.0)
    }

    fn apply(&self, raster: &Raster, rng: &mut ChaCha8Rng) -> Result<Raster> {
        let (w, h) = (raster.width(), raster.height());
        let n = w * h;
        let hits = ((self.0 * n as f64).round() as usize).min(n);
        let picked = index::sample(rng, n, hits).into_vec();
        let n_salt = hits.div_ceil(2);
        let mut planes = raster.planes().to_vec();
        for (rank, &pos) in picked.iter().enumerate() {
            let v = if rank < n_salt { 1.0 } else { 0.0 };
            for p in planes.iter_mut() {
                p.data_mut()[pos] = v;
            }
        }
        Raster::from_planes(planes)
    }

    fn is_stochastic(&self) -> bool {
        true
    }
}

/// Multiplicative noise `x (1 + N(0, sigma))`.
struct Speckle(f64);

impl Perturbation for Speckle {
    fn id(&self) -> String {
        format!("speckle:{}", self.0)
    }

    fn apply(&self, raster: &Raster, rng: &mut ChaCha8Rng) -> Result<Raster> {
        let dist = Normal::new(0.0, self.0).map_err(|e| Error::invalid(e.to_string()))?;
        raster.map_planes(|p| p.map(|v| clamp01(v * (1.0 + dist.sample(rng)))))
    }

    fn is_stochastic(&self) -> bool {
        true
    }
}

/// Photon noise `Poisson(x lambda 255) / (lambda 255)`.
struct PoissonNoise(f64);

impl Perturbation for PoissonNoise {
    fn id(&self) -> String {
        format!("poisson:{}", self.0)
    }

    fn apply(&self, raster: &Raster, rng: &mut ChaCha8Rng) -> Result<Raster> {
        let scale = self.0 * 255.0;
        let mut out = Vec::with_capacity(raster.channels());
        for p in raster.planes() {
            let mut data = Vec::with_capacity(p.data().len());
            for &v in p.data() {
                let mean = v * scale;
                let count = if mean > 0.0 {
                    Poisson::new(mean)
                        .map_err(|e| Error::invalid(e.to_string()))?
                        .sample(rng)
                } else {
                    0.0
                };
                data.push(clamp01(count / scale));
            }
            out.push(Plane::new(p.width(), p.height(), data)?);
        }
        Raster::from_planes(out)
    }

    fn is_stochastic(&self) -> bool {
        true
    }
}

fn ranged(args: &[&str], what: &'static str, lo: f64, hi: f64) -> Result<f64> {
    let v: f64 = arg(args, 0, what, None)?;
    check_range(what, v, lo, hi)?;
    Ok(v)
}

/// All perturbations, keyed by name.
pub fn registry() -> Registry<dyn Perturbation> {
    let mut reg: Registry<dyn Perturbation> = Registry::new("perturbation");
    reg.register("identity", "identity", |_| Ok(Box::new(Identity)));
    reg.register("blur", "blur:<sigma 0.1..1>", |a| {
        Ok(Box::new(Blur::new(arg(a, 0, "blur sigma", None)?)?))
    });
    reg.register("brightness", "brightness:<factor 0.3..3>", |a| {
        Ok(Box::new(Brightness(ranged(a, "brightness factor", 0.3, 3.0)?)))
    });
    reg.register("gamma", "gamma:<g 0.3..3>", |a| {
        Ok(Box::new(GammaCurve(ranged(a, "gamma", 0.3, 3.0)?)))
    });
    reg.register("crop", "crop:<size 96..256>", |a| {
        let size: usize = arg(a, 0, "crop size", None)?;
        check_range("crop size", size as f64, 96.0, 256.0)?;
        Ok(Box::new(Crop(size)))
    });
    reg.register("jpeg", "jpeg:<quality 70..100>", |a| {
        let q: u8 = arg(a, 0, "jpeg quality", None)?;
        check_range("jpeg quality", q as f64, 70.0, 100.0)?;
        Ok(Box::new(Jpeg(q)))
    });
    reg.register("gauss", "gauss:<sigma 1..10, 8-bit units>", |a| {
        Ok(Box::new(GaussNoise(ranged(a, "gauss sigma", 1.0, 10.0)?)))
    });
    reg.register("saltpepper", "saltpepper:<density 0.001..0.01>", |a| {
        Ok(Box::new(SaltPepper(ranged(a, "salt-and-pepper density", 0.001, 0.01)?)))
    });
    reg.register("speckle", "speckle:<sigma 0.01..0.1>", |a| {
        Ok(Box::new(Speckle(ranged(a, "speckle sigma", 0.01, 0.1)?)))
    });
    reg.register("poisson", "poisson:<lambda 0.1..1>", |a| {
        Ok(Box::new(PoissonNoise(ranged(a, "poisson lambda", 0.1, 1.0)?)))
    });
    reg
}

/// A parsed perturbation plus its seed.
#[derive(Clone)]
pub struct PerturbSpec {
    op: std::sync::Arc<dyn Perturbation>,
    pub seed: u64,
}

impl fmt::Debug for PerturbSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PerturbSpec({self})")
    }
}

impl PartialEq for PerturbSpec {
    fn eq(&self, other: &Self) -> bool {
        self.to_string() == other.to_string()
    }
}

impl PerturbSpec {
    pub fn identity() -> Self {
        Self {
            op: std::sync::Arc::new(Identity),
            seed: 0,
        }
    }

    /// Parses `name[:param][@seed=N]`; the seed defaults to 0.
    pub fn parse(spec: &str) -> Result<Self> {
        let spec = spec.trim();
        let (body, seed) = match spec.split_once('@') {
            Some((body, tail)) => {
                let raw = tail.trim().strip_prefix("seed=").ok_or_else(|| Error::Parse {
                    what: "perturbation",
                    reason: format!("expected `@seed=<n>` in `{spec}`"),
                })?;
                let seed = raw.parse().map_err(|_| Error::Parse {
                    what: "perturbation seed",
                    reason: format!("not an unsigned integer: `{raw}`"),
                })?;
                (body, seed)
            }
            None => (spec, 0),
        };
        let op = registry().parse(body)?;
        Ok(Self {
            op: op.into(),
            seed,
        })
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn op(&self) -> &dyn Perturbation {
        self.op.as_ref()
    }

    pub fn crop_size(&self) -> Option<usize> {
        self.op.crop_size()
    }

    pub fn is_identity(&self) -> bool {
        self.op.id() == "identity"
    }

    /// Applies with stream 0.
    pub fn apply(&self, raster: &Raster) -> Result<Raster> {
        self.apply_stream(raster, 0)
    }

    /// Applies using the ChaCha stream `stream` of this spec's seed.
    pub fn apply_stream(&self, raster: &Raster, stream: u64) -> Result<Raster> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream);
        self.op.apply(raster, &mut rng)
    }
}

impl fmt::Display for PerturbSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.op.id())?;
        if self.op.is_stochastic() {
            write!(f, "@seed={}", self.seed)?;
        }
        Ok(())
    }
}

impl std::str::FromStr for PerturbSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::parse(s)
    }
}

pub fn apply(raster: &Raster, spec: &PerturbSpec) -> Result<Raster> {
    spec.apply(raster)
}

/// Reference PSNR interval for each noise kind.
pub fn reference_psnr_interval(kind: &str) -> Option<(f64, f64)> {
    match kind {
        "gauss" => Some((26.0, 47.0)),
        "saltpepper" => Some((18.0, 31.0)),
        "speckle" => Some((22.0, 57.0)),
        "poisson" => Some((3.0, 58.0)),
        _ => None,
    }
}

/// Default parameter sweep covering the full allowed range of a noise kind.
pub fn default_grid(kind: &str) -> Option<Vec<f64>> {
    let (lo, hi) = match kind {
        "gauss" => (1.0, 10.0),
        "saltpepper" => (0.001, 0.01),
        "speckle" => (0.01, 0.1),
        "poisson" => (0.1, 1.0),
        _ => return None,
    };
    // round away the spacing error so the end points stay inside the range
    let point = |i: usize| -> f64 {
        let x = lo + (hi - lo) * i as f64 / 9.0;
        format!("{x:.10}").parse().expect("formatted float")
    };
    Some((0..10).map(point).collect())
}

#[derive(Debug, Clone, Serialize)]
pub struct PsnrRange {
    pub kind: String,
    pub params: Vec<f64>,
    pub min_psnr: f64,
    pub max_psnr: f64,
    pub reference: (f64, f64),
    pub overlaps: bool,
    pub brackets: bool,
}

/// Sweeps `grid` for a stochastic `kind` over `images` and compares the
/// observed PSNR span with the reference interval.
pub fn psnr_range_check(kind: &str, grid: &[f64], images: &[Raster], seed: u64) -> Result<PsnrRange> {
    let reference = reference_psnr_interval(kind)
        .ok_or_else(|| Error::invalid(format!("`{kind}` is not a stochastic noise kind")))?;
    if grid.is_empty() || images.is_empty() {
        return Err(Error::invalid("psnr sweep needs a nonempty grid and image set"));
    }
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &param in grid {
        let spec = PerturbSpec::parse(&format!("{kind}:{param}"))?.with_seed(seed);
        for (i, img) in images.iter().enumerate() {
            let p = psnr(img, &spec.apply_stream(img, i as u64)?)?;
            lo = lo.min(p);
            hi = hi.max(p);
        }
    }
    Ok(PsnrRange {
        kind: kind.to_string(),
        params: grid.to_vec(),
        min_psnr: lo,
        max_psnr: hi,
        reference,
        overlaps: lo <= reference.1 && hi >= reference.0,
        brackets: lo <= reference.0 && hi >= reference.1,
    })
}

/// Uniform integer crop size in `[96, 256]`, for randomized sweeps.
pub fn random_crop_size(rng: &mut impl Rng) -> usize {
    rng.random_range(96..=256)
}
