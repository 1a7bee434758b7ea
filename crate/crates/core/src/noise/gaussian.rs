use crate::error::{Error, Result};
use crate::raster::{Plane, Raster};

use super::Denoiser;

/// Normalized 1-D Gaussian taps with radius `ceil(3 sigma)`.
pub fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil().max(1.0) as i64;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= sum);
    k
}

/// Separable convolution with edge replication.
pub(crate) fn convolve_separable(plane: &Plane, kernel: &[f64]) -> Plane {
    let (w, h) = (plane.width(), plane.height());
    let r = (kernel.len() / 2) as isize;
    let mut tmp = Plane::filled(w, h, 0.0);
    // each row is edge-padded once so the tap loop needs no clamping
    let mut padded = vec![0.0; w + 2 * r as usize];
    for y in 0..h {
        let row = plane.row(y);
        for (j, p) in padded.iter_mut().enumerate() {
            *p = row[(j as isize - r).clamp(0, w as isize - 1) as usize];
        }
        let dst = &mut tmp.data_mut()[y * w..(y + 1) * w];
        for (x, d) in dst.iter_mut().enumerate() {
            let window = &padded[x..x + kernel.len()];
            let mut acc = 0.0;
            for (k, v) in kernel.iter().zip(window) {
                acc += k * v;
            }
            *d = acc;
        }
    }
    let mut out = Plane::filled(w, h, 0.0);
    for y in 0..h {
        let dst = &mut out.data_mut()[y * w..(y + 1) * w];
        for (i, k) in kernel.iter().enumerate() {
            let sy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
            let src = tmp.row(sy);
            for (d, s) in dst.iter_mut().zip(src) {
                *d += k * s;
            }
        }
    }
    out
}

#[derive(Debug, Clone)]
pub struct GaussianFilter {
    sigma: f64,
    kernel: Vec<f64>,
}

impl GaussianFilter {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::invalid(format!("gaussian sigma must be > 0, got {sigma}")));
        }
        Ok(Self {
            sigma,
            kernel: gaussian_kernel(sigma),
        })
    }
}

impl Denoiser for GaussianFilter {
    fn id(&self) -> String {
        format!("gaussian:{}", self.sigma)
    }

    fn denoise_plane(&self, plane: &Plane) -> Plane {
        convolve_separable(plane, &self.kernel)
    }
}

pub fn gaussian_denoise(raster: &Raster, sigma: f64) -> Result<Raster> {
    let f = GaussianFilter::new(sigma)?;
    raster.map_planes(|p| f.denoise_plane(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_shape() {
        let k = gaussian_kernel(1.0);
        assert_eq!(k.len(), 7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(gaussian_kernel(0.5).len(), 5);
        assert_eq!(gaussian_kernel(1.2).len(), 9);
    }

    #[test]
    fn constant_preserved_and_sigma_checked() {
        let r = Raster::filled(9, 6, 3, 0.25).unwrap();
        let out = gaussian_denoise(&r, 2.0).unwrap();
        for p in out.planes() {
            assert!(p.data().iter().all(|v| (v - 0.25).abs() < 1e-15));
        }
        assert!(gaussian_denoise(&r, 0.0).is_err());
        assert!(gaussian_denoise(&r, -1.0).is_err());
    }

    #[test]
    fn impulse_center_weight_and_mass() {
        let mut p = Plane::filled(21, 21, 0.0);
        p.set(10, 10, 1.0);
        let out = GaussianFilter::new(1.0).unwrap().denoise_plane(&p);
        // w0 = 1 / sum_{i=-3..3} exp(-i^2/2), evaluated independently
        let z: f64 = (-3i32..=3).map(|i| (-(i * i) as f64 / 2.0).exp()).sum();
        let w0 = 1.0 / z;
        assert!((out.get(10, 10) - w0 * w0).abs() < 1e-15);
        assert!((out.sum() - 1.0).abs() < 1e-9);
    }
}
