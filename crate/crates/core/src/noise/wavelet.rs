//! Orthonormal 2-D Haar transform with soft-thresholded details.

use crate::error::{Error, Result};
use crate::raster::{Plane, Raster};

use super::Denoiser;

const INV_SQRT2: f64 = std::f64::consts::FRAC_1_SQRT_2;

#[inline]
pub fn soft_threshold(v: f64, t: f64) -> f64 {
    v.signum() * (v.abs() - t).max(0.0)
}

fn haar_1d(buf: &mut [f64], tmp: &mut [f64]) {
    let half = buf.len() / 2;
    for i in 0..half {
        let (a, b) = (buf[2 * i], buf[2 * i + 1]);
        tmp[i] = (a + b) * INV_SQRT2;
        tmp[half + i] = (a - b) * INV_SQRT2;
    }
    buf.copy_from_slice(&tmp[..buf.len()]);
}

fn ihaar_1d(buf: &mut [f64], tmp: &mut [f64]) {
    let half = buf.len() / 2;
    for i in 0..half {
        let (s, d) = (buf[i], buf[half + i]);
        tmp[2 * i] = (s + d) * INV_SQRT2;
        tmp[2 * i + 1] = (s - d) * INV_SQRT2;
    }
    buf.copy_from_slice(&tmp[..buf.len()]);
}

/// In-place multi-level decomposition (Mallat layout). Dimensions must be
/// divisible by `2^levels`.
pub fn haar_forward(plane: &mut Plane, levels: usize) {
    let (w, h) = (plane.width(), plane.height());
    let mut tmp = vec![0.0; w.max(h)];
    let mut col = vec![0.0; h];
    let (mut cw, mut ch) = (w, h);
    for _ in 0..levels {
        for y in 0..ch {
            let row = &mut plane.data_mut()[y * w..y * w + cw];
            haar_1d(row, &mut tmp);
        }
        for x in 0..cw {
            for (y, c) in col[..ch].iter_mut().enumerate() {
                *c = plane.get(x, y);
            }
            haar_1d(&mut col[..ch], &mut tmp);
            for (y, &c) in col[..ch].iter().enumerate() {
                plane.set(x, y, c);
            }
        }
        cw /= 2;
        ch /= 2;
    }
}

pub fn haar_inverse(plane: &mut Plane, levels: usize) {
    let (w, h) = (plane.width(), plane.height());
    let mut tmp = vec![0.0; w.max(h)];
    let mut col = vec![0.0; h];
    for level in (0..levels).rev() {
        let (cw, ch) = (w >> level, h >> level);
        for x in 0..cw {
            for (y, c) in col[..ch].iter_mut().enumerate() {
                *c = plane.get(x, y);
            }
            ihaar_1d(&mut col[..ch], &mut tmp);
            for (y, &c) in col[..ch].iter().enumerate() {
                plane.set(x, y, c);
            }
        }
        for y in 0..ch {
            let row = &mut plane.data_mut()[y * w..y * w + cw];
            ihaar_1d(row, &mut tmp);
        }
    }
}

/// Mirror index into `0..len` (edge sample repeated: `..., 1, 0 | 0, 1, ...`).
fn reflect(i: usize, len: usize) -> usize {
    let period = 2 * len;
    let m = i % period;
    if m < len {
        m
    } else {
        period - 1 - m
    }
}

#[derive(Debug, Clone)]
pub struct HaarWavelet {
    levels: usize,
    threshold: f64,
}

impl HaarWavelet {
    pub fn new(levels: usize, threshold: f64) -> Result<Self> {
        if !(1..=5).contains(&levels) {
            return Err(Error::invalid(format!("wavelet levels must be in 1..=5, got {levels}")));
        }
        if !(threshold >= 0.0 && threshold.is_finite()) {
            return Err(Error::invalid(format!("wavelet threshold must be >= 0, got {threshold}")));
        }
        Ok(Self { levels, threshold })
    }
}

impl Denoiser for HaarWavelet {
    fn id(&self) -> String {
        format!("wavelet:{}:{}", self.levels, self.threshold)
    }

    fn denoise_plane(&self, plane: &Plane) -> Plane {
        let block = 1usize << self.levels;
        let (w, h) = (plane.width(), plane.height());
        let pw = w.div_ceil(block) * block;
        let ph = h.div_ceil(block) * block;
        let mut work = Plane::from_fn(pw, ph, |x, y| plane.get(reflect(x, w), reflect(y, h)));
        haar_forward(&mut work, self.levels);
        let (aw, ah) = (pw >> self.levels, ph >> self.levels);
        for y in 0..ph {
            for x in 0..pw {
                if x >= aw || y >= ah {
                    let v = work.get(x, y);
                    work.set(x, y, soft_threshold(v, self.threshold));
                }
            }
        }
        haar_inverse(&mut work, self.levels);
        Plane::from_fn(w, h, |x, y| work.get(x, y))
    }
}

pub fn wavelet_denoise(raster: &Raster, levels: usize, threshold: f64) -> Result<Raster> {
    let f = HaarWavelet::new(levels, threshold)?;
    raster.map_planes(|p| f.denoise_plane(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn textured(w: usize, h: usize) -> Plane {
        Plane::from_fn(w, h, |x, y| (((x * 13 + y * 7) % 17) as f64 / 16.0).sin().abs())
    }

    #[test]
    fn zero_threshold_reconstructs() {
        for (w, h) in [(16, 16), (13, 7), (32, 20)] {
            let p = textured(w, h);
            for levels in 1..=5 {
                let out = HaarWavelet::new(levels, 0.0).unwrap().denoise_plane(&p);
                for (a, b) in out.data().iter().zip(p.data()) {
                    assert!((a - b).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn constant_unchanged() {
        let p = Plane::filled(12, 10, 0.6);
        let out = HaarWavelet::new(3, 0.5).unwrap().denoise_plane(&p);
        assert!(out.data().iter().all(|v| (v - 0.6).abs() < 1e-12));
    }

    #[test]
    fn single_detail_coefficient_shrinks_by_threshold() {
        let t = 0.125;
        let mut coeffs = Plane::filled(8, 8, 0.0);
        // a level-1 HH coefficient
        coeffs.set(5, 6, 2.0 * t);
        let mut img = coeffs.clone();
        haar_inverse(&mut img, 1);
        let mut out = HaarWavelet::new(1, t).unwrap().denoise_plane(&img);
        haar_forward(&mut out, 1);
        assert!((out.get(5, 6).abs() - t).abs() < 1e-12);
        assert_eq!(soft_threshold(-2.0 * t, t), -t);
        assert_eq!(soft_threshold(0.5 * t, t), 0.0);
    }

    #[test]
    fn levels_checked() {
        assert!(HaarWavelet::new(0, 0.1).is_err());
        assert!(HaarWavelet::new(6, 0.1).is_err());
        assert!(wavelet_denoise(&Raster::filled(4, 4, 1, 0.5).unwrap(), 2, -0.1).is_err());
    }

    #[test]
    fn reflect_indices() {
        let got: Vec<usize> = (0..8).map(|i| reflect(i, 3)).collect();
        assert_eq!(got, vec![0, 1, 2, 2, 1, 0, 0, 1]);
    }
}
