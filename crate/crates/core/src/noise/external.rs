use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::imagio::load_image;
use crate::raster::Raster;

use super::{Extractor, Residual};

/// Residuals precomputed by an out-of-process denoiser.
///
/// For an image `photo.jpg` the residual is read from `<dir>/photo.png`,
/// an 8-bit image whose stored value `v` in `[0, 1]` maps to `2v - 1`.
#[derive(Debug, Clone)]
pub struct ExternalResidual {
    dir: PathBuf,
}

impl ExternalResidual {
    pub fn new(dir: PathBuf) -> Self {
        Self { dir }
    }

    pub fn residual_path(&self, source: &Path) -> Option<PathBuf> {
        let stem = source.file_stem()?;
        let mut name = stem.to_os_string();
        name.push(".png");
        Some(self.dir.join(name))
    }
}

impl Extractor for ExternalResidual {
    fn id(&self) -> String {
        format!("external:{}", self.dir.display())
    }

    fn extract(&self, raster: &Raster, source: Option<&Path>) -> Result<Residual> {
        let source = source.ok_or_else(|| {
            Error::invalid("external residuals need the source image path")
        })?;
        let path = self
            .residual_path(source)
            .ok_or_else(|| Error::MissingResidual(source.to_path_buf()))?;
        if !path.is_file() {
            return Err(Error::MissingResidual(path));
        }
        let stored = load_image(&path)?;
        if !stored.same_shape(raster) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{}x{}", raster.width(), raster.height(), raster.channels()),
                actual: format!("{}x{}x{} in {}", stored.width(), stored.height(), stored.channels(), path.display()),
            });
        }
        let planes = stored
            .planes()
            .iter()
            .map(|p| p.map(|v| v * 2.0 - 1.0))
            .collect();
        Residual::from_planes(planes)
    }
}

/// Stores a residual in the external-residual layout: `(r + 1) / 2`,
/// clamped and quantized to 8 bits.
pub fn residual_to_raster(residual: &Residual) -> Result<Raster> {
    Raster::from_planes(
        residual
            .planes()
            .iter()
            .map(|p| p.map(|v| (v + 1.0) / 2.0))
            .collect(),
    )
    .map(|r| r.quantized())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imagio::{save_image, ImageFormat};
    use crate::raster::Plane;

    #[test]
    fn loads_and_remaps() {
        let dir = tempfile::tempdir().unwrap();
        let stored = Raster::gray(Plane::new(2, 1, vec![0.0, 1.0]).unwrap()).unwrap();
        save_image(&stored, dir.path().join("shot.png"), ImageFormat::Png).unwrap();
        let ext = ExternalResidual::new(dir.path().to_path_buf());
        let src = Raster::filled(2, 1, 1, 0.5).unwrap();
        let res = ext.extract(&src, Some(Path::new("/photos/shot.jpg"))).unwrap();
        assert_eq!(res.planes()[0].data(), &[-1.0, 1.0]);
        // idempotent
        assert_eq!(ext.extract(&src, Some(Path::new("shot.ppm"))).unwrap(), res);
    }

    #[test]
    fn missing_file_and_shape_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let ext = ExternalResidual::new(dir.path().to_path_buf());
        let src = Raster::filled(2, 2, 1, 0.5).unwrap();
        assert!(matches!(
            ext.extract(&src, Some(Path::new("absent.png"))),
            Err(Error::MissingResidual(_))
        ));
        assert!(ext.extract(&src, None).is_err());
        save_image(&Raster::filled(3, 2, 1, 0.5).unwrap(), dir.path().join("x.png"), ImageFormat::Png).unwrap();
        assert!(matches!(
            ext.extract(&src, Some(Path::new("x.png"))),
            Err(Error::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn residual_raster_roundtrip_is_within_quantization() {
        let res = Residual::from_planes(vec![Plane::new(3, 1, vec![-0.5, 0.0, 0.25]).unwrap()]).unwrap();
        let r = residual_to_raster(&res).unwrap();
        for (a, b) in r.plane(0).data().iter().zip(res.planes()[0].data()) {
            assert!((a * 2.0 - 1.0 - b).abs() <= 1.0 / 255.0);
        }
    }
}
