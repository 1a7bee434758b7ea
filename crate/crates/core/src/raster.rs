//! Floating-point image containers.

use crate::error::{Error, Result};

/// A single real-valued sample grid, row-major (`y * width + x`).
///
/// Planes carry unclamped data: residuals, spectra and intermediate
/// filter output all live here.
#[derive(Debug, Clone, PartialEq)]
pub struct Plane {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("plane dimensions must be nonzero"));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                expected: format!("{} samples", width * height),
                actual: format!("{} samples", data.len()),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        assert!(width > 0 && height > 0, "plane dimensions must be nonzero");
        Self {
            width,
            height,
            data: vec![value; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        assert!(width > 0 && height > 0, "plane dimensions must be nonzero");
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        self.data[y * self.width + x] = v;
    }

    /// Edge-replicating accessor.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f64 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, y: usize) -> &[f64] {
        &self.data[y * self.width..(y + 1) * self.width]
    }

    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Plane {
        Plane {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Elementwise `self - other`.
    pub fn sub(&self, other: &Plane) -> Result<Plane> {
        self.check_same(other)?;
        Ok(Plane {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| a - b)
                .collect(),
        })
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub(crate) fn check_same(&self, other: &Plane) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}", self.width, self.height),
                actual: format!("{}x{}", other.width, other.height),
            });
        }
        Ok(())
    }
}

/// A decoded image: 1 or 3 channel planes with samples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: usize,
    height: usize,
    planes: Vec<Plane>,
}

impl Raster {
    /// Builds a raster, clamping every sample into `[0, 1]`.
    ///
    /// Fails on non-finite samples, mismatched plane sizes or a channel
    /// count other than 1 or 3.
    pub fn from_planes(planes: Vec<Plane>) -> Result<Self> {
        let first = planes
            .first()
            .ok_or_else(|| Error::invalid("raster needs at least one plane"))?;
        if planes.len() != 1 && planes.len() != 3 {
            return Err(Error::invalid(format!(
                "raster must have 1 or 3 channels, got {}",
                planes.len()
            )));
        }
        let (width, height) = (first.width, first.height);
        let mut clamped = Vec::with_capacity(planes.len());
        for mut p in planes {
            if p.width != width || p.height != height {
                return Err(Error::DimensionMismatch {
                    expected: format!("{width}x{height}"),
                    actual: format!("{}x{}", p.width, p.height),
                });
            }
            if !p.is_finite() {
                return Err(Error::NonFinite("raster"));
            }
            for v in &mut p.data {
                *v = v.clamp(0.0, 1.0);
            }
            clamped.push(p);
        }
        Ok(Self {
            width,
            height,
            planes: clamped,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("raster dimensions must be nonzero"));
        }
        Self::from_planes(vec![Plane::filled(width, height, value); channels])
    }

    pub fn gray(plane: Plane) -> Result<Self> {
        Self::from_planes(vec![plane])
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.planes.len()
    }

    pub fn planes(&self) -> &[Plane] {
        &self.planes
    }

    pub fn plane(&self, c: usize) -> &Plane {
        &self.planes[c]
    }

    pub fn into_planes(self) -> Vec<Plane> {
        self.planes
    }

    /// Applies `f` to every plane and re-clamps the result.
    pub fn map_planes(&self, mut f: impl FnMut(&Plane) -> Plane) -> Result<Raster> {
        Raster::from_planes(self.planes.iter().map(&mut f).collect())
    }

    /// Applies `f` to every sample and re-clamps the result.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Result<Raster> {
        self.map_planes(|p| p.map(&f))
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.width == other.width
            && self.height == other.height
            && self.channels() == other.channels()
    }

    /// Rounds every sample to the nearest 8-bit level.
    pub fn quantized(&self) -> Raster {
        let planes = self
            .planes
            .iter()
            .map(|p| p.map(|v| (v * 255.0).round() / 255.0))
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            planes,
        }
    }
}
