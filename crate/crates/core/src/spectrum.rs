//! Amplitude spectra of noise residuals and the grid-sampled features
//! derived from them.
//!
//! Indexing is unshifted (DC at `(0, 0)`). `u` is the frequency along the
//! image width `M`, `v` along the height `N`; a "row" is a fixed `u`.

use std::cell::RefCell;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imagio::{resize_plane, ResizeMethod};
use crate::noise::Residual;
use crate::raster::{Plane, Raster};

/// Nonnegative amplitude plane of size `M x N`.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    amp: Plane,
}

impl Spectrum {
    pub fn from_plane(amp: Plane) -> Result<Self> {
        if !amp.is_finite() || amp.data().iter().any(|&v| v < 0.0) {
            return Err(Error::invalid("amplitudes must be finite and nonnegative"));
        }
        Ok(Self { amp })
    }

    /// `M`
    pub fn width(&self) -> usize {
        self.amp.width()
    }

    /// `N`
    pub fn height(&self) -> usize {
        self.amp.height()
    }

    #[inline]
    pub fn amp(&self, u: usize, v: usize) -> f64 {
        self.amp.get(u, v)
    }

    pub fn plane(&self) -> &Plane {
        &self.amp
    }

    /// Bilinear resampling of the amplitude plane, e.g. to bring the
    /// spectrum of a cropped image back to the training resolution.
    pub fn resized(&self, m: usize, n: usize) -> Result<Spectrum> {
        let p = resize_plane(&self.amp, m, n, ResizeMethod::Bilinear)?;
        Spectrum::from_plane(p.map(|v| v.max(0.0)))
    }
}

thread_local! {
    static PLANNER: RefCell<FftPlanner<f64>> = RefCell::new(FftPlanner::new());
}

fn plan(len: usize) -> Arc<dyn Fft<f64>> {
    PLANNER.with(|p| p.borrow_mut().plan_fft_forward(len))
}

/// Normalized 2-D DFT `(1 / MN) * sum r(x, y) e^{-i 2 pi (ux/M + vy/N)}`,
/// returned in the plane's row-major layout.
pub fn dft2(plane: &Plane) -> Result<Vec<Complex<f64>>> {
    if !plane.is_finite() {
        return Err(Error::NonFinite("residual plane"));
    }
    let (m, n) = (plane.width(), plane.height());
    let mut buf: Vec<Complex<f64>> = plane.data().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let row_fft = plan(m);
    let mut scratch = vec![Complex::default(); row_fft.get_inplace_scratch_len()];
    for row in buf.chunks_exact_mut(m) {
        row_fft.process_with_scratch(row, &mut scratch);
    }
    let col_fft = plan(n);
    let mut col = vec![Complex::default(); n];
    let mut scratch = vec![Complex::default(); col_fft.get_inplace_scratch_len()];
    let norm = 1.0 / (m * n) as f64;
    for u in 0..m {
        for v in 0..n {
            col[v] = buf[v * m + u];
        }
        col_fft.process_with_scratch(&mut col, &mut scratch);
        for v in 0..n {
            buf[v * m + u] = col[v] * norm;
        }
    }
    Ok(buf)
}

pub fn dft2_amplitude(plane: &Plane) -> Result<Spectrum> {
    let (m, n) = (plane.width(), plane.height());
    let coeffs = dft2(plane)?;
    let amp = Plane::new(m, n, coeffs.iter().map(|c| c.norm()).collect())?;
    Ok(Spectrum { amp })
}

/// `A_u = sum_v A(u, v)` for each `u`.
pub fn row_profile(spec: &Spectrum) -> Vec<f64> {
    let (m, n) = (spec.width(), spec.height());
    let mut prof = vec![0.0; m];
    for v in 0..n {
        for (u, p) in prof.iter_mut().enumerate() {
            *p += spec.amp(u, v);
        }
    }
    prof
}

/// Elementwise mean of the row profiles of `specs`.
pub fn mean_profile(specs: &[Spectrum]) -> Result<Vec<f64>> {
    let first = specs
        .first()
        .ok_or_else(|| Error::invalid("mean profile of an empty set"))?;
    let m = first.width();
    let mut acc = vec![0.0; m];
    for s in specs {
        if s.width() != m {
            return Err(Error::DimensionMismatch {
                expected: format!("M = {m}"),
                actual: format!("M = {}", s.width()),
            });
        }
        for (a, p) in acc.iter_mut().zip(row_profile(s)) {
            *a += p;
        }
    }
    let count = specs.len() as f64;
    acc.iter_mut().for_each(|a| *a /= count);
    Ok(acc)
}

/// Elementwise mean of equally-sized amplitude planes.
pub fn mean_spectrum(specs: &[Spectrum]) -> Result<Spectrum> {
    let first = specs
        .first()
        .ok_or_else(|| Error::invalid("mean spectrum of an empty set"))?;
    let mut acc = Plane::filled(first.width(), first.height(), 0.0);
    for s in specs {
        acc.check_same(&s.amp)?;
        for (a, v) in acc.data_mut().iter_mut().zip(s.amp.data()) {
            *a += v;
        }
    }
    let count = specs.len() as f64;
    Ok(Spectrum {
        amp: acc.map(|v| v / count),
    })
}

/// Zeroes amplitudes strictly below their row mean and squares the rest.
pub fn enhance(spec: &Spectrum) -> Spectrum {
    let (m, n) = (spec.width(), spec.height());
    let means: Vec<f64> = row_profile(spec).iter().map(|s| s / n as f64).collect();
    let amp = Plane::from_fn(m, n, |u, v| {
        let a = spec.amp(u, v);
        if a < means[u] {
            0.0
        } else {
            a * a
        }
    });
    Spectrum { amp }
}

/// Grid-sampled enhanced amplitudes, flattened row-major over `(m, n)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    /// `(rows, cols)` = number of sampled `u` and `v` positions.
    pub grid: (usize, usize),
    pub k: usize,
    pub extractor: String,
    pub enhanced: bool,
}

impl FeatureVector {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Number of grid samples along an axis of length `len` at interval `k`.
#[inline]
pub fn grid_len(len: usize, k: usize) -> usize {
    (len - 1) / k + 1
}

/// `F(m, n) = A'(m k, n k)`.
pub fn sample_features(spec: &Spectrum, k: usize) -> Result<Vec<f64>> {
    let (m, n) = (spec.width(), spec.height());
    if k == 0 || k > m.min(n) {
        return Err(Error::invalid(format!(
            "sampling interval {k} outside 1..={}",
            m.min(n)
        )));
    }
    let (rows, cols) = (grid_len(m, k), grid_len(n, k));
    let mut out = Vec::with_capacity(rows * cols);
    for mi in 0..rows {
        for ni in 0..cols {
            out.push(spec.amp(mi * k, ni * k));
        }
    }
    Ok(out)
}

/// Same values as `sample_features(&enhance(&merge_channels(residual)?), k)`
/// up to rounding, computed from the sampled frequency rows only. Channels
/// are transformed in pairs as one complex signal and separated through
/// conjugate symmetry.
pub fn residual_features(residual: &Residual, k: usize) -> Result<Vec<f64>> {
    let c = residual.channels();
    if c != 1 && c != 3 {
        return Err(Error::invalid(format!("cannot merge {c} channels")));
    }
    let (m, n) = (residual.width(), residual.height());
    if k == 0 || k > m.min(n) {
        return Err(Error::invalid(format!(
            "sampling interval {k} outside 1..={}",
            m.min(n)
        )));
    }
    if residual.planes().iter().any(|p| !p.is_finite()) {
        return Err(Error::NonFinite("residual plane"));
    }
    let sampled: Vec<usize> = (0..grid_len(m, k)).map(|i| i * k).collect();
    // columns needed: every sampled u and its mirror -u
    let mut needed: Vec<usize> = sampled.iter().flat_map(|&u| [u, (m - u) % m]).collect();
    needed.sort_unstable();
    needed.dedup();
    let slot = |u: usize| needed.binary_search(&u).expect("needed column");

    let row_fft = plan(m);
    let col_fft = plan(n);
    let mut row_scratch = vec![Complex::default(); row_fft.get_inplace_scratch_len()];
    let mut col_scratch = vec![Complex::default(); col_fft.get_inplace_scratch_len()];
    let norm = 1.0 / (m * n) as f64;
    // amp[i * n + v] accumulates A(sampled[i], v) over channels
    let mut amp = vec![0.0; sampled.len() * n];
    let mut row = vec![Complex::default(); m];
    let mut cols = vec![Complex::default(); needed.len() * n];

    for pair in residual.planes().chunks(2) {
        let (a, b) = (&pair[0], pair.get(1));
        for y in 0..n {
            let ra = a.row(y);
            match b {
                Some(b) => {
                    for ((z, &re), &im) in row.iter_mut().zip(ra).zip(b.row(y)) {
                        *z = Complex::new(re, im);
                    }
                }
                None => {
                    for (z, &re) in row.iter_mut().zip(ra) {
                        *z = Complex::new(re, 0.0);
                    }
                }
            }
            row_fft.process_with_scratch(&mut row, &mut row_scratch);
            for (j, &u) in needed.iter().enumerate() {
                cols[j * n + y] = row[u];
            }
        }
        for col in cols.chunks_exact_mut(n) {
            col_fft.process_with_scratch(col, &mut col_scratch);
        }
        for (i, &u) in sampled.iter().enumerate() {
            let z = &cols[slot(u) * n..][..n];
            let zm = &cols[slot((m - u) % m) * n..][..n];
            for v in 0..n {
                let zz = z[v];
                let mirror = zm[(n - v) % n].conj();
                let out = &mut amp[i * n + v];
                if b.is_some() {
                    *out += 0.5 * norm * ((zz + mirror).norm() + (zz - mirror).norm());
                } else {
                    *out += norm * zz.norm();
                }
            }
        }
    }

    let scale = 1.0 / c as f64;
    let mut out = Vec::with_capacity(sampled.len() * grid_len(n, k));
    for i in 0..sampled.len() {
        let rowv = &amp[i * n..][..n];
        let mean = rowv.iter().map(|a| a * scale).sum::<f64>() / n as f64;
        for vi in 0..grid_len(n, k) {
            let a = rowv[vi * k] * scale;
            out.push(if a < mean { 0.0 } else { a * a });
        }
    }
    Ok(out)
}

/// Per-channel amplitude spectra averaged into one plane.
pub fn merge_channels(residual: &Residual) -> Result<Spectrum> {
    if residual.channels() != 1 && residual.channels() != 3 {
        return Err(Error::invalid(format!(
            "cannot merge {} channels",
            residual.channels()
        )));
    }
    merge_planes(residual.planes())
}

pub(crate) fn merge_planes(planes: &[Plane]) -> Result<Spectrum> {
    let specs = planes
        .iter()
        .map(dft2_amplitude)
        .collect::<Result<Vec<_>>>()?;
    if specs.len() == 1 {
        return Ok(specs.into_iter().next().expect("one spectrum"));
    }
    mean_spectrum(&specs)
}

/// Renders a spectrum as a grayscale raster: optional DC-centering shift,
/// optional `log(1 + a)`, then min-max normalization. A constant spectrum
/// renders uniformly at 0.5.
pub fn spectrum_to_image(spec: &Spectrum, shift: bool, log_scale: bool) -> Result<Raster> {
    let (m, n) = (spec.width(), spec.height());
    let mut p = Plane::from_fn(m, n, |x, y| {
        let (u, v) = if shift {
            ((x + m - m / 2) % m, (y + n - n / 2) % n)
        } else {
            (x, y)
        };
        let a = spec.amp(u, v);
        if log_scale {
            a.ln_1p()
        } else {
            a
        }
    });
    let (lo, hi) = p
        .data()
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if hi - lo <= 0.0 {
        p = Plane::filled(m, n, 0.5);
    } else {
        p = p.map(|v| (v - lo) / (hi - lo));
    }
    Raster::gray(p)
}


#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    fn plane_strategy() -> impl Strategy<Value = Plane> {
        (1usize..12, 1usize..12).prop_flat_map(|(m, n)| {
            proptest::collection::vec(-1.0f64..1.0, m * n)
                .prop_map(move |d| Plane::new(m, n, d).unwrap())
        })
    }

    proptest! {
        #[test]
        fn parseval(p in plane_strategy()) {
            let s = dft2_amplitude(&p).unwrap();
            let mn = (p.width() * p.height()) as f64;
            let lhs: f64 = s.plane().data().iter().map(|a| a * a).sum();
            let rhs: f64 = p.data().iter().map(|v| v * v).sum::<f64>() / mn;
            prop_assert!((lhs - rhs).abs() <= 1e-9 * rhs.max(1e-300));
        }

        #[test]
        fn hermitian(p in plane_strategy()) {
            let s = dft2_amplitude(&p).unwrap();
            let (m, n) = (s.width(), s.height());
            for v in 0..n {
                for u in 0..m {
                    let mirror = s.amp((m - u) % m, (n - v) % n);
                    prop_assert!((s.amp(u, v) - mirror).abs() <= 1e-12);
                }
            }
        }

        #[test]
        fn enhance_preserves_order_of_survivors(vals in proptest::collection::vec(0.0f64..5.0, 2..16)) {
            let s = Spectrum::from_plane(Plane::new(1, vals.len(), vals.clone()).unwrap()).unwrap();
            let e = enhance(&s);
            let out = e.plane().data();
            for i in 0..vals.len() {
                for j in 0..vals.len() {
                    if out[i] > 0.0 && out[j] > 0.0 && vals[i] < vals[j] {
                        prop_assert!(out[i] < out[j]);
                    }
                }
            }
        }

        #[test]
        fn feature_length_formula(m in 1usize..70, n in 1usize..70, kf in 0.0f64..1.0) {
            let k = 1 + ((m.min(n) - 1) as f64 * kf) as usize;
            let s = Spectrum::from_plane(Plane::filled(m, n, 1.0)).unwrap();
            let f = sample_features(&s, k).unwrap();
            prop_assert_eq!(f.len(), ((m - 1) / k + 1) * ((n - 1) / k + 1));
        }

        #[test]
        fn squaring_scales_survivors(p in plane_strategy(), scale in 0.1f64..10.0) {
            let a = enhance(&dft2_amplitude(&p).unwrap());
            let b = enhance(&dft2_amplitude(&p.map(|v| v * scale)).unwrap());
            for (x, y) in a.plane().data().iter().zip(b.plane().data()) {
                if *x > 1e-20 && *y > 0.0 {
                    prop_assert!((y / x - scale * scale).abs() <= 1e-6 * scale * scale);
                }
            }
        }
    }
}
