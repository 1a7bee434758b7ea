use crate::error::{Error, Result};
use crate::raster::{Plane, Raster};

use super::Denoiser;

#[derive(Debug, Clone)]
pub struct MedianFilter {
    window: usize,
}

impl MedianFilter {
    pub fn new(window: usize) -> Result<Self> {
        if window < 3 || window.is_multiple_of(2) {
            return Err(Error::invalid(format!(
                "median window must be odd and >= 3, got {window}"
            )));
        }
        Ok(Self { window })
    }
}

impl Denoiser for MedianFilter {
    fn id(&self) -> String {
        format!("median:{}", self.window)
    }

    fn denoise_plane(&self, plane: &Plane) -> Plane {
        let r = (self.window / 2) as isize;
        let mut buf = Vec::with_capacity(self.window * self.window);
        Plane::from_fn(plane.width(), plane.height(), |x, y| {
            buf.clear();
            for dy in -r..=r {
                for dx in -r..=r {
                    buf.push(plane.get_clamped(x as isize + dx, y as isize + dy));
                }
            }
            let mid = buf.len() / 2;
            *buf.select_nth_unstable_by(mid, |a, b| a.total_cmp(b)).1
        })
    }
}

pub fn median_denoise(raster: &Raster, window: usize) -> Result<Raster> {
    let f = MedianFilter::new(window)?;
    raster.map_planes(|p| f.denoise_plane(p))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_validation() {
        assert!(MedianFilter::new(2).is_err());
        assert!(MedianFilter::new(1).is_err());
        assert!(MedianFilter::new(5).is_ok());
    }

    #[test]
    fn median_of_ramp_is_ramp() {
        let p = Plane::from_fn(8, 8, |x, _| x as f64 / 7.0);
        let out = MedianFilter::new(3).unwrap().denoise_plane(&p);
        assert_eq!(out, p);
    }
}
