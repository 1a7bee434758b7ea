//! Deterministic photo-like test scenes and patch extraction from photo
//! directories.
//!
//! Scenes follow the dead-leaves model: opaque shaded disks with
//! power-law radii are stacked front to back until the frame is covered,
//! then rendered through a mild optical blur, Poisson-Gaussian sensor
//! noise and 8-bit quantization. The result has the occlusion edges,
//! roughly `1/f` spectrum and sensor grain of a natural photograph without
//! any periodic structure.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};

use crate::error::Result;
use crate::imagio::{crop_plane, list_images, load_image};
use crate::noise::{convolve_separable, gaussian_kernel};
use crate::raster::{Plane, Raster};

const MAX_DISKS: usize = 6000;
const OPTICS_SIGMA: f64 = 0.8;

/// An RGB dead-leaves scene of `size x size` pixels.
pub fn dead_leaves(size: usize, seed: u64) -> Raster {
    assert!(size >= 8, "scene size must be at least 8");
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = size as f64;
    let r_min = (4.0 * s / 256.0).max(1.5);
    let r_max = 0.8 * s;
    let mut rgb = [vec![0.0; size * size], vec![0.0; size * size], vec![0.0; size * size]];
    let mut filled = vec![false; size * size];
    let mut covered = 0usize;
    let target = (0.999 * (size * size) as f64) as usize;
    let normal = Normal::new(0.0, 1.0).expect("unit normal");

    let mut disks = 0;
    while covered < target && disks < MAX_DISKS {
        disks += 1;
        // density of r proportional to r^-3
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let r = (r_min / u.sqrt()).min(r_max);
        let cx = rng.random_range(0.0..s);
        let cy = rng.random_range(0.0..s);
        let color: [f64; 3] = [rng.random(), rng.random(), rng.random()];
        let gx: f64 = normal.sample(&mut rng);
        let gy: f64 = normal.sample(&mut rng);
        let slope = 0.1 / r.max(1.0);

        let x0 = (cx - r).floor().max(0.0) as usize;
        let x1 = ((cx + r).ceil() as usize).min(size - 1);
        let y0 = (cy - r).floor().max(0.0) as usize;
        let y1 = ((cy + r).ceil() as usize).min(size - 1);
        for y in y0..=y1 {
            let dy = y as f64 + 0.5 - cy;
            for x in x0..=x1 {
                let idx = y * size + x;
                if filled[idx] {
                    continue;
                }
                let dx = x as f64 + 0.5 - cx;
                if dx * dx + dy * dy >= r * r {
                    continue;
                }
                let shade = 1.0 + slope * (dx * gx + dy * gy);
                for c in 0..3 {
                    rgb[c][idx] = (color[c] * shade).clamp(0.0, 1.0);
                }
                filled[idx] = true;
                covered += 1;
            }
        }
    }
    let background: [f64; 3] = [rng.random(), rng.random(), rng.random()];
    for (idx, f) in filled.iter().enumerate() {
        if !f {
            for c in 0..3 {
                rgb[c][idx] = background[c];
            }
        }
    }

    let kernel = gaussian_kernel(OPTICS_SIGMA);
    let full_well = rng.random_range(500.0..4000.0);
    let read = Normal::new(0.0, rng.random_range(0.002..0.008)).expect("positive sigma");
    let planes = rgb
        .into_iter()
        .map(|data| {
            let p = Plane::new(size, size, data).expect("sized buffer");
            let blurred = convolve_separable(&p, &kernel);
            blurred.map(|v| {
                let mean = v.clamp(0.0, 1.0) * full_well;
                let photons = if mean > 0.0 {
                    Poisson::new(mean).expect("positive mean").sample(&mut rng)
                } else {
                    0.0
                };
                let v = photons / full_well + read.sample(&mut rng);
                (v.clamp(0.0, 1.0) * 255.0).round() / 255.0
            })
        })
        .collect();
    Raster::from_planes(planes).expect("valid scene")
}

/// Up to `limit` non-overlapping `size x size` tiles cut from the images
/// in `dir`, taken image by image in name order. Grayscale photos are
/// expanded to RGB.
pub fn photo_patches(dir: &Path, size: usize, limit: usize) -> Result<Vec<Raster>> {
    let mut out = Vec::new();
    for path in list_images(dir)? {
        if out.len() >= limit {
            break;
        }
        let img = match load_image(&path) {
            Ok(img) => img,
            Err(e) => {
                log::warn!("skipping {}: {e}", path.display());
                continue;
            }
        };
        let (w, h) = (img.width(), img.height());
        for ty in 0..h / size {
            for tx in 0..w / size {
                if out.len() >= limit {
                    break;
                }
                let mut planes: Vec<Plane> = img
                    .planes()
                    .iter()
                    .map(|p| crop_plane(p, tx * size, ty * size, size, size))
                    .collect();
                if planes.len() == 1 {
                    planes = vec![planes[0].clone(), planes[0].clone(), planes[0].clone()];
                }
                out.push(Raster::from_planes(planes)?);
            }
        }
    }
    Ok(out)
}
