//! Synthetic "generated" images with known upsampling artifacts.
//!
//! A real image is box-downsampled by `factor`, upsampled back with a
//! chosen method and passed through a small generator-style output stage
//! (a seeded 3x3 convolution followed by a pointwise activation). The
//! upsampler leaves a periodic structure with period `M / factor`; the
//! nonlinear output stage turns the spectral zeros of plain interpolation
//! into the bright lattice seen in real generator output.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::imagio::{resize_plane, ResizeMethod};
use crate::raster::{Plane, Raster};
use crate::registry::{arg, Registry};
use crate::spectrum::Spectrum;

pub trait Upsampler: Send + Sync {
    fn id(&self) -> String;

    /// Enlarges `plane` by `factor` in both directions.
    fn upsample(&self, plane: &Plane, factor: usize) -> Result<Plane>;
}

struct Interpolate(ResizeMethod);

impl Upsampler for Interpolate {
    fn id(&self) -> String {
        match self.0 {
            ResizeMethod::Nearest => "nearest".into(),
            ResizeMethod::Bilinear => "bilinear".into(),
        }
    }

    fn upsample(&self, plane: &Plane, factor: usize) -> Result<Plane> {
        resize_plane(plane, plane.width() * factor, plane.height() * factor, self.0)
    }
}

/// Stride-2 transposed convolution with a 4x4 kernel and padding 1,
/// repeated `log2(factor)` times.
pub struct TransposedConv {
    seed: u64,
    kernel: [[f64; 4]; 4],
}

impl TransposedConv {
    /// Kernel entries are uniform in `[0.1, 1)` and normalized to sum 1.
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut kernel = [[0.0; 4]; 4];
        for row in kernel.iter_mut() {
            for w in row.iter_mut() {
                *w = rng.random_range(0.1..1.0);
            }
        }
        let sum: f64 = kernel.iter().flatten().sum();
        kernel.iter_mut().flatten().for_each(|w| *w /= sum);
        Self { seed, kernel }
    }

    pub fn kernel(&self) -> &[[f64; 4]; 4] {
        &self.kernel
    }

    /// One 2x step. Each output pixel receives four taps, so weights are
    /// scaled by 4 to keep the mean level.
    fn step(&self, plane: &Plane) -> Plane {
        let (w, h) = (plane.width(), plane.height());
        let mut out = Plane::filled(2 * w, 2 * h, 0.0);
        for i in 0..h {
            for j in 0..w {
                let v = 4.0 * plane.get(j, i);
                for (ky, row) in self.kernel.iter().enumerate() {
                    let y = (2 * i + ky) as isize - 1;
                    if y < 0 || y >= 2 * h as isize {
                        continue;
                    }
                    for (kx, &k) in row.iter().enumerate() {
                        let x = (2 * j + kx) as isize - 1;
                        if x < 0 || x >= 2 * w as isize {
                            continue;
                        }
                        let (x, y) = (x as usize, y as usize);
                        out.set(x, y, out.get(x, y) + k * v);
                    }
                }
            }
        }
        out
    }
}

impl Upsampler for TransposedConv {
    fn id(&self) -> String {
        format!("transposed_conv:{}", self.seed)
    }

    fn upsample(&self, plane: &Plane, factor: usize) -> Result<Plane> {
        if !factor.is_power_of_two() {
            return Err(Error::invalid(format!(
                "transposed convolution needs a power-of-two factor, got {factor}"
            )));
        }
        let mut p = plane.clone();
        for _ in 0..factor.trailing_zeros() {
            p = self.step(&p);
        }
        Ok(p)
    }
}

/// All upsamplers, keyed by name.
pub fn registry() -> Registry<dyn Upsampler> {
    let mut reg: Registry<dyn Upsampler> = Registry::new("upsampler");
    reg.register("nearest", "nearest", |_| Ok(Box::new(Interpolate(ResizeMethod::Nearest))));
    reg.register("bilinear", "bilinear", |_| Ok(Box::new(Interpolate(ResizeMethod::Bilinear))));
    reg.register("transposed_conv", "transposed_conv[:kernel_seed=0]", |a| {
        Ok(Box::new(TransposedConv::new(arg(a, 0, "kernel seed", Some(0))?)))
    });
    reg
}

/// Pointwise nonlinearity of the output stage.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Activation {
    /// No output stage at all: the upsampled image is returned as is.
    Off,
    /// `y^p` after the 3x3 convolution.
    Power(f64),
}

impl Default for Activation {
    fn default() -> Self {
        Activation::Power(4.0)
    }
}

impl Activation {
    fn apply(self, y: f64) -> f64 {
        let y = y.clamp(0.0, 1.0);
        match self {
            Activation::Off => y,
            Activation::Power(p) => y.powf(p),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        match s {
            "off" => Ok(Activation::Off),
            _ => match s.strip_prefix("power:").map(str::parse::<f64>) {
                Some(Ok(p)) if p > 0.0 && p.is_finite() => Ok(Activation::Power(p)),
                _ => Err(Error::Parse {
                    what: "activation",
                    reason: format!("expected off or power:<p>, got `{s}`"),
                }),
            },
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Activation::Off => f.write_str("off"),
            Activation::Power(p) => write!(f, "power:{p}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSpec {
    /// Upsampler spec string, e.g. `nearest` or `transposed_conv:3`.
    pub method: String,
    pub factor: usize,
    /// Seeds the output-stage kernel.
    pub seed: u64,
    pub activation: Activation,
}

impl SimSpec {
    pub fn new(method: &str, factor: usize, seed: u64) -> Self {
        Self {
            method: method.to_string(),
            factor,
            seed,
            activation: Activation::default(),
        }
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    /// Parses `method:factor`, e.g. `nearest:4` or `transposed_conv:3:4`
    /// (the last field is always the factor).
    pub fn parse(spec: &str, seed: u64) -> Result<Self> {
        let spec = spec.trim();
        let (method, factor) = spec.rsplit_once(':').ok_or_else(|| Error::Parse {
            what: "simulation spec",
            reason: format!("expected `<method>:<factor>`, got `{spec}`"),
        })?;
        let factor = factor.parse().map_err(|_| Error::Parse {
            what: "simulation factor",
            reason: format!("not a positive integer: `{factor}`"),
        })?;
        let s = Self::new(method, factor, seed);
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.factor == 0 {
            return Err(Error::invalid("simulation factor must be >= 1"));
        }
        registry().parse(&self.method).map(|_| ())
    }

    /// Period in frequency bins of the artifact lattice for an axis of
    /// length `len`.
    pub fn expected_period(&self, len: usize) -> usize {
        len / self.factor
    }
}

impl fmt::Display for SimSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.method, self.factor)
    }
}

/// Normalized positive 3x3 kernel of the output stage.
pub fn stage_kernel(seed: u64) -> [[f64; 3]; 3] {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x05ee_d0f5_7a9e);
    let mut k = [[0.0; 3]; 3];
    for row in k.iter_mut() {
        for w in row.iter_mut() {
            *w = rng.random_range(0.1..1.0);
        }
    }
    let sum: f64 = k.iter().flatten().sum();
    k.iter_mut().flatten().for_each(|w| *w /= sum);
    k
}

/// The generator-style output stage on its own.
pub fn output_stage(plane: &Plane, seed: u64, activation: Activation) -> Plane {
    if activation == Activation::Off {
        return plane.map(|v| v.clamp(0.0, 1.0));
    }
    let k = stage_kernel(seed);
    Plane::from_fn(plane.width(), plane.height(), |x, y| {
        let mut acc = 0.0;
        for (dy, row) in k.iter().enumerate() {
            for (dx, w) in row.iter().enumerate() {
                acc += w * plane.get_clamped(x as isize + dx as isize - 1, y as isize + dy as isize - 1);
            }
        }
        activation.apply(acc)
    })
}

/// Mean over non-overlapping `factor x factor` blocks.
pub fn box_downsample(plane: &Plane, factor: usize) -> Result<Plane> {
    let (w, h) = (plane.width(), plane.height());
    if factor == 0 || w % factor != 0 || h % factor != 0 {
        return Err(Error::invalid(format!("{w}x{h} is not divisible by {factor}")));
    }
    let area = (factor * factor) as f64;
    Ok(Plane::from_fn(w / factor, h / factor, |bx, by| {
        let mut s = 0.0;
        for y in by * factor..(by + 1) * factor {
            s += plane.row(y)[bx * factor..(bx + 1) * factor].iter().sum::<f64>();
        }
        s / area
    }))
}

/// Downsample, upsample and output stage; factor 1 returns the input.
pub fn simulate(real: &Raster, spec: &SimSpec) -> Result<Raster> {
    spec.validate()?;
    if spec.factor == 1 {
        return Ok(real.clone());
    }
    let (w, h) = (real.width(), real.height());
    if w % spec.factor != 0 || h % spec.factor != 0 {
        return Err(Error::invalid(format!(
            "{w}x{h} is not divisible by factor {}",
            spec.factor
        )));
    }
    let up = registry().parse(&spec.method)?;
    let planes = real
        .planes()
        .iter()
        .map(|p| {
            let low = box_downsample(p, spec.factor)?;
            let big = up.upsample(&low, spec.factor)?;
            Ok(output_stage(&big, spec.seed, spec.activation))
        })
        .collect::<Result<Vec<_>>>()?;
    Raster::from_planes(planes)
}

/// Reported when the off-peak median is zero but the peaks are not.
pub const RATIO_CAP: f64 = 1e6;

#[derive(Debug, Clone, Serialize)]
pub struct PeakReport {
    pub period: usize,
    pub peak_mean: f64,
    pub off_peak_median: f64,
    pub ratio: f64,
    pub pass: bool,
}

pub const PEAK_PASS_RATIO: f64 = 5.0;

/// Compares the amplitude on the lattice `(j P, l P)` (excluding DC, each
/// point widened by one bin in every direction, indices wrapping) with the
/// median amplitude elsewhere, outside the DC neighbourhood.
pub fn peak_report(spec: &Spectrum, period: usize) -> Result<PeakReport> {
    let (m, n) = (spec.width(), spec.height());
    if period == 0 || m % period != 0 || n % period != 0 {
        return Err(Error::invalid(format!(
            "period {period} does not divide the {m}x{n} spectrum"
        )));
    }
    let mut mask = vec![0u8; m * n]; // 0 off-peak, 1 peak, 2 DC
    let mark = |mask: &mut [u8], cu: usize, cv: usize, tag: u8| {
        for du in [m - 1, 0, 1] {
            for dv in [n - 1, 0, 1] {
                let idx = ((cv + dv) % n) * m + (cu + du) % m;
                mask[idx] = mask[idx].max(tag);
            }
        }
    };
    for cu in (0..m).step_by(period) {
        for cv in (0..n).step_by(period) {
            if cu != 0 || cv != 0 {
                mark(&mut mask, cu, cv, 1);
            }
        }
    }
    mark(&mut mask, 0, 0, 2);

    let data = spec.plane().data();
    let peaks: Vec<f64> = data.iter().zip(&mask).filter(|(_, &t)| t == 1).map(|(a, _)| *a).collect();
    let mut off: Vec<f64> = data.iter().zip(&mask).filter(|(_, &t)| t == 0).map(|(a, _)| *a).collect();
    let peak_mean = if peaks.is_empty() {
        0.0
    } else {
        peaks.iter().sum::<f64>() / peaks.len() as f64
    };
    let off_peak_median = if off.is_empty() {
        0.0
    } else {
        let mid = off.len() / 2;
        let (_, hi, _) = off.select_nth_unstable_by(mid, f64::total_cmp);
        let hi = *hi;
        if off.len() % 2 == 1 {
            hi
        } else {
            let lo = off[..mid].iter().copied().fold(f64::NEG_INFINITY, f64::max);
            0.5 * (lo + hi)
        }
    };
    let ratio = if off_peak_median > 0.0 {
        (peak_mean / off_peak_median).min(RATIO_CAP)
    } else if peak_mean > 0.0 {
        RATIO_CAP
    } else {
        1.0
    };
    Ok(PeakReport {
        period,
        peak_mean,
        off_peak_median,
        ratio,
        pass: ratio >= PEAK_PASS_RATIO,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::noise::{Extractor, GaussianFilter};
    use crate::scene::dead_leaves;
    use crate::spectrum::{mean_spectrum, merge_channels};

    #[test]
    fn factor_one_is_identity() {
        let img = dead_leaves(256, 1);
        for m in ["nearest", "bilinear", "transposed_conv"] {
            assert_eq!(simulate(&img, &SimSpec::new(m, 1, 3)).unwrap(), img);
        }
    }

    #[test]
    fn shape_and_range_preserved() {
        let img = dead_leaves(64, 2);
        for (m, f) in [("nearest", 4), ("bilinear", 8), ("transposed_conv:5", 4), ("nearest", 2)] {
            let out = simulate(&img, &SimSpec::new(m, f, 3)).unwrap();
            assert!(out.same_shape(&img));
            assert!(out.planes().iter().all(|p| p.data().iter().all(|v| (0.0..=1.0).contains(v))));
        }
    }

    #[test]
    fn argument_errors() {
        let img = Raster::filled(60, 60, 1, 0.5).unwrap();
        assert!(simulate(&img, &SimSpec::new("nearest", 8, 0)).is_err());
        assert!(simulate(&img, &SimSpec::new("transposed_conv", 3, 0)).is_err());
        assert!(simulate(&img, &SimSpec::new("cubic", 2, 0)).is_err());
        assert!(SimSpec::parse("nearest", 0).is_err());
        assert!(SimSpec::parse("nearest:0", 0).is_err());
        assert_eq!(SimSpec::parse("transposed_conv:2:4", 1).unwrap().method, "transposed_conv:2");
    }

    #[test]
    fn box_downsample_averages_blocks() {
        let p = Plane::from_fn(4, 2, |x, y| (x + 4 * y) as f64);
        let d = box_downsample(&p, 2).unwrap();
        assert_eq!(d.data(), &[2.5, 4.5]);
    }

    #[test]
    fn nearest_is_block_replication_without_stage() {
        let img = dead_leaves(32, 4);
        let spec = SimSpec::new("nearest", 4, 0).with_activation(Activation::Off);
        let out = simulate(&img, &spec).unwrap();
        for p in out.planes() {
            for y in 0..32 {
                for x in 0..32 {
                    assert_eq!(p.get(x, y), p.get(x / 4 * 4, y / 4 * 4));
                }
            }
        }
    }

    #[test]
    fn transposed_conv_preserves_interior_mean_level() {
        let tc = TransposedConv::new(9);
        let s: f64 = tc.kernel().iter().flatten().sum();
        assert!((s - 1.0).abs() < 1e-12);
        let flat = Plane::filled(16, 16, 0.5);
        let up = tc.upsample(&flat, 2).unwrap();
        // interior pixels alternate among four phase sums averaging to 0.5
        let mut total = 0.0;
        for y in 2..30 {
            for x in 2..30 {
                total += up.get(x, y);
            }
        }
        assert!((total / (28.0 * 28.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn stage_kernel_positive_normalized() {
        let k = stage_kernel(11);
        assert!(k.iter().flatten().all(|&w| w > 0.0));
        assert!((k.iter().flatten().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn output_stage_is_conv_then_power() {
        let p = Plane::from_fn(8, 8, |x, y| 0.1 * ((x + 2 * y) % 9) as f64);
        let out = output_stage(&p, 4, Activation::Power(4.0));
        let k = stage_kernel(4);
        let mut acc = 0.0;
        for (dy, row) in k.iter().enumerate() {
            for (dx, w) in row.iter().enumerate() {
                acc += w * p.get(3 + dx - 1, 4 + dy - 1);
            }
        }
        assert!((out.get(3, 4) - acc.powi(4)).abs() < 1e-15);
        // edges clamp
        assert!((0.0..=1.0).contains(&out.get(0, 0)));
    }

    #[test]
    fn impulse_lattice_hits_cap() {
        let m = 64;
        let amp = Plane::from_fn(m, m, |u, v| if u % 16 == 0 && v % 16 == 0 { 1.0 } else { 0.0 });
        let r = peak_report(&Spectrum::from_plane(amp).unwrap(), 16).unwrap();
        assert_eq!(r.ratio, RATIO_CAP);
        assert!(r.pass);
    }

    #[test]
    fn flat_spectrum_ratio_one() {
        let r = peak_report(&Spectrum::from_plane(Plane::filled(64, 64, 0.3)).unwrap(), 16).unwrap();
        assert!((r.ratio - 1.0).abs() < 1e-12);
        assert!(!r.pass);
        let z = peak_report(&Spectrum::from_plane(Plane::filled(64, 64, 0.0)).unwrap(), 16).unwrap();
        assert_eq!(z.ratio, 1.0);
        assert!(peak_report(&Spectrum::from_plane(Plane::filled(64, 64, 0.0)).unwrap(), 24).is_err());
    }

    #[test]
    fn nearest_4_shows_lattice_on_dead_leaves() {
        let ext = GaussianFilter::new(1.0).unwrap();
        let amp = |img: &Raster| merge_channels(&ext.extract(img, None).unwrap()).unwrap();
        let imgs: Vec<Raster> = (0..8).map(|s| dead_leaves(256, 100 + s)).collect();
        let real: Vec<Spectrum> = imgs.iter().map(amp).collect();
        let fake: Vec<Spectrum> = imgs
            .iter()
            .enumerate()
            .map(|(i, img)| amp(&simulate(img, &SimSpec::new("nearest", 4, i as u64)).unwrap()))
            .collect();
        let fr = peak_report(&mean_spectrum(&fake).unwrap(), 64).unwrap();
        let rr = peak_report(&mean_spectrum(&real).unwrap(), 64).unwrap();
        assert!(fr.ratio >= PEAK_PASS_RATIO, "{fr:?}");
        assert!(rr.ratio < 2.0, "{rr:?}");
    }
}
