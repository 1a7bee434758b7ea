//! Image decoding/encoding plus the crop and resize primitives shared by
//! the pipeline, the perturbation suite and the simulator.
//!
//! Only PNG, binary PPM (P6, maxval 255) and baseline JPEG are handled.
//! Samples are mapped to `[0, 1]` by `v / 255`; alpha is dropped and
//! grayscale stays single-channel.

use std::fs;
use std::io::Cursor;
use std::path::{Path, PathBuf};

use image::codecs::jpeg::JpegEncoder;
use image::codecs::png::PngEncoder;
use image::{DynamicImage, ExtendedColorType, ImageEncoder};

use crate::error::{Error, Result};
use crate::raster::{Plane, Raster};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
    Jpeg { quality: u8 },
}

impl ImageFormat {
    /// Picks a format from a file extension; JPEG uses `quality`.
    pub fn from_path(path: &Path, quality: u8) -> Result<Self> {
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase());
        match ext.as_deref() {
            Some("png") => Ok(ImageFormat::Png),
            Some("ppm") => Ok(ImageFormat::Ppm),
            Some("jpg") | Some("jpeg") => Ok(ImageFormat::Jpeg { quality }),
            _ => Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
            }),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResizeMethod {
    Nearest,
    Bilinear,
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Raster> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, path)
}

/// Decodes an in-memory image; `path` is only used for error messages.
pub fn decode_image(bytes: &[u8], path: &Path) -> Result<Raster> {
    let format = image::guess_format(bytes).map_err(|_| Error::UnsupportedFormat {
        path: path.to_path_buf(),
    })?;
    match format {
        image::ImageFormat::Png | image::ImageFormat::Jpeg => {}
        image::ImageFormat::Pnm if bytes.starts_with(b"P6") => {}
        _ => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
            })
        }
    }
    let img = image::load_from_memory_with_format(bytes, format).map_err(|e| Error::Decode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    })?;
    raster_from_dynamic(img, path)
}

fn raster_from_dynamic(img: DynamicImage, path: &Path) -> Result<Raster> {
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::Decode {
            path: path.to_path_buf(),
            reason: "empty image".into(),
        });
    }
    let gray = !img.color().has_color();
    let sixteen = img.color().bytes_per_pixel() / img.color().channel_count() > 1;
    let planes = match (gray, sixteen) {
        (true, false) => vec![plane_from(img.to_luma8().as_raw(), w, h, 0, 1, 255.0)],
        (true, true) => vec![plane_from(img.to_luma16().as_raw(), w, h, 0, 1, 65535.0)],
        (false, false) => {
            let buf = img.to_rgb8();
            (0..3)
                .map(|c| plane_from(buf.as_raw(), w, h, c, 3, 255.0))
                .collect()
        }
        (false, true) => {
            let buf = img.to_rgb16();
            (0..3)
                .map(|c| plane_from(buf.as_raw(), w, h, c, 3, 65535.0))
                .collect()
        }
    };
    Raster::from_planes(planes)
}

fn plane_from<T: Copy + Into<f64>>(
    raw: &[T],
    w: usize,
    h: usize,
    offset: usize,
    stride: usize,
    max: f64,
) -> Plane {
    let data = raw
        .iter()
        .skip(offset)
        .step_by(stride)
        .map(|&v| v.into() / max)
        .collect();
    Plane::new(w, h, data).expect("decoder produced consistent dimensions")
}

fn to_bytes(raster: &Raster, force_rgb: bool) -> (Vec<u8>, ExtendedColorType) {
    let n = raster.width() * raster.height();
    let q = |v: f64| (v * 255.0).round().clamp(0.0, 255.0) as u8;
    if raster.channels() == 1 && !force_rgb {
        let bytes = raster.plane(0).data().iter().map(|&v| q(v)).collect();
        return (bytes, ExtendedColorType::L8);
    }
    let mut bytes = Vec::with_capacity(n * 3);
    for i in 0..n {
        for c in 0..3 {
            let p = raster.plane(c.min(raster.channels() - 1));
            bytes.push(q(p.data()[i]));
        }
    }
    (bytes, ExtendedColorType::Rgb8)
}

/// Encodes `raster` to bytes. Grayscale PPM is written as RGB since P6 has
/// no single-channel form.
pub fn encode_image(raster: &Raster, format: ImageFormat, path: &Path) -> Result<Vec<u8>> {
    let (w, h) = (raster.width() as u32, raster.height() as u32);
    let enc_err = |e: image::ImageError| Error::Encode {
        path: path.to_path_buf(),
        reason: e.to_string(),
    };
    let mut out = Vec::new();
    match format {
        ImageFormat::Png => {
            let (bytes, color) = to_bytes(raster, false);
            PngEncoder::new(&mut out)
                .write_image(&bytes, w, h, color)
                .map_err(enc_err)?;
        }
        ImageFormat::Ppm => {
            let (bytes, _) = to_bytes(raster, true);
            out.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
            out.extend_from_slice(&bytes);
        }
        ImageFormat::Jpeg { quality } => {
            if !(1..=100).contains(&quality) {
                return Err(Error::invalid(format!(
                    "JPEG quality must be in 1..=100, got {quality}"
                )));
            }
            let (bytes, color) = to_bytes(raster, false);
            JpegEncoder::new_with_quality(Cursor::new(&mut out), quality)
                .write_image(&bytes, w, h, color)
                .map_err(enc_err)?;
        }
    }
    Ok(out)
}

pub fn save_image(raster: &Raster, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_image(raster, format, path)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// JPEG-compresses and decodes in memory.
pub fn jpeg_roundtrip(raster: &Raster, quality: u8) -> Result<Raster> {
    let path = Path::new("<memory>");
    let bytes = encode_image(raster, ImageFormat::Jpeg { quality }, path)?;
    decode_image(&bytes, path)
}

/// Top-left offset of a centered `size` window along an axis of length `len`.
#[inline]
pub fn center_offset(len: usize, size: usize) -> usize {
    (len - size) / 2
}

pub fn crop_plane(plane: &Plane, x0: usize, y0: usize, w: usize, h: usize) -> Plane {
    Plane::from_fn(w, h, |x, y| plane.get(x0 + x, y0 + y))
}

pub fn center_crop(raster: &Raster, size: usize) -> Result<Raster> {
    if size == 0 || size > raster.width() || size > raster.height() {
        return Err(Error::invalid(format!(
            "crop size {size} exceeds {}x{} image",
            raster.width(),
            raster.height()
        )));
    }
    let x0 = center_offset(raster.width(), size);
    let y0 = center_offset(raster.height(), size);
    raster.map_planes(|p| crop_plane(p, x0, y0, size, size))
}

/// Source sample position for destination index `dst` under the
/// half-pixel-center convention.
#[inline]
fn source_coord(dst: usize, scale: f64) -> f64 {
    (dst as f64 + 0.5) * scale - 0.5
}

/// Resamples an unclamped plane.
pub fn resize_plane(plane: &Plane, new_w: usize, new_h: usize, method: ResizeMethod) -> Result<Plane> {
    if new_w == 0 || new_h == 0 {
        return Err(Error::invalid("resize target dimensions must be nonzero"));
    }
    let (w, h) = (plane.width(), plane.height());
    if (w, h) == (new_w, new_h) {
        return Ok(plane.clone());
    }
    let sx = w as f64 / new_w as f64;
    let sy = h as f64 / new_h as f64;
    let out = match method {
        ResizeMethod::Nearest => {
            let xs: Vec<usize> = (0..new_w)
                .map(|x| ((source_coord(x, sx) + 0.5).floor().max(0.0) as usize).min(w - 1))
                .collect();
            let ys: Vec<usize> = (0..new_h)
                .map(|y| ((source_coord(y, sy) + 0.5).floor().max(0.0) as usize).min(h - 1))
                .collect();
            Plane::from_fn(new_w, new_h, |x, y| plane.get(xs[x], ys[y]))
        }
        ResizeMethod::Bilinear => {
            let taps = |len: usize, n: usize, s: f64| -> Vec<(usize, usize, f64)> {
                (0..n)
                    .map(|d| {
                        let c = source_coord(d, s).clamp(0.0, (len - 1) as f64);
                        let i0 = c.floor() as usize;
                        let i1 = (i0 + 1).min(len - 1);
                        (i0, i1, c - i0 as f64)
                    })
                    .collect()
            };
            let xt = taps(w, new_w, sx);
            let yt = taps(h, new_h, sy);
            Plane::from_fn(new_w, new_h, |x, y| {
                let (x0, x1, tx) = xt[x];
                let (y0, y1, ty) = yt[y];
                let top = plane.get(x0, y0) * (1.0 - tx) + plane.get(x1, y0) * tx;
                let bot = plane.get(x0, y1) * (1.0 - tx) + plane.get(x1, y1) * tx;
                top * (1.0 - ty) + bot * ty
            })
        }
    };
    Ok(out)
}

pub fn resize(raster: &Raster, new_w: usize, new_h: usize, method: ResizeMethod) -> Result<Raster> {
    let planes = raster
        .planes()
        .iter()
        .map(|p| resize_plane(p, new_w, new_h, method))
        .collect::<Result<Vec<_>>>()?;
    Raster::from_planes(planes)
}

/// Image files directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let entries = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .unwrap_or_default();
        if path.is_file() && matches!(ext.as_str(), "png" | "jpg" | "jpeg" | "ppm") {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::psnr;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_quantized(w: usize, h: usize, ch: usize, seed: u64) -> Raster {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes = (0..ch)
            .map(|_| Plane::from_fn(w, h, |_, _| rng.random_range(0..=255u8) as f64 / 255.0))
            .collect();
        Raster::from_planes(planes).unwrap()
    }

    #[test]
    fn ppm_all_255_loads_as_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("white.ppm");
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        bytes.extend(std::iter::repeat_n(255u8, 12));
        fs::write(&path, bytes).unwrap();
        let r = load_image(&path).unwrap();
        assert_eq!((r.width(), r.height(), r.channels()), (2, 2, 3));
        assert!(r.planes().iter().all(|p| p.data().iter().all(|&v| v == 1.0)));
    }

    #[test]
    fn black_png_loads_as_zero() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("black.png");
        let img = image::RgbImage::from_pixel(1, 1, image::Rgb([0, 0, 0]));
        img.save(&path).unwrap();
        let r = load_image(&path).unwrap();
        assert_eq!(r.channels(), 3);
        assert!(r.planes().iter().all(|p| p.data() == [0.0]));
    }

    #[test]
    fn alpha_discarded_and_gray_kept() {
        let dir = tempfile::tempdir().unwrap();
        let rgba = dir.path().join("rgba.png");
        image::RgbaImage::from_pixel(3, 2, image::Rgba([10, 20, 30, 40]))
            .save(&rgba)
            .unwrap();
        let r = load_image(&rgba).unwrap();
        assert_eq!(r.channels(), 3);
        assert_eq!(r.plane(2).get(0, 0), 30.0 / 255.0);

        let gray = dir.path().join("gray.png");
        image::GrayImage::from_pixel(3, 2, image::Luma([51])).save(&gray).unwrap();
        let r = load_image(&gray).unwrap();
        assert_eq!(r.channels(), 1);
        assert_eq!(r.plane(0).get(2, 1), 0.2);
    }

    #[test]
    fn lossless_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        for (ch, name, fmt) in [
            (3, "a.png", ImageFormat::Png),
            (1, "b.png", ImageFormat::Png),
            (3, "c.ppm", ImageFormat::Ppm),
        ] {
            let r = random_quantized(16, 16, ch, 7);
            let path = dir.path().join(name);
            save_image(&r, &path, fmt).unwrap();
            assert_eq!(load_image(&path).unwrap(), r, "{name}");
        }
    }

    #[test]
    fn load_errors_carry_path() {
        let dir = tempfile::tempdir().unwrap();
        let missing = dir.path().join("nope.png");
        let err = load_image(&missing).unwrap_err();
        assert!(err.to_string().contains("nope.png"));

        let junk = dir.path().join("junk.png");
        fs::write(&junk, b"definitely not an image").unwrap();
        assert!(matches!(load_image(&junk), Err(Error::UnsupportedFormat { .. })));

        let truncated = dir.path().join("trunc.png");
        let mut bytes = encode_image(&random_quantized(8, 8, 3, 1), ImageFormat::Png, &truncated).unwrap();
        bytes.truncate(bytes.len() / 2);
        fs::write(&truncated, bytes).unwrap();
        assert!(matches!(load_image(&truncated), Err(Error::Decode { .. })));

        let ascii = dir.path().join("ascii.ppm");
        fs::write(&ascii, b"P3\n1 1\n255\n0 0 0\n").unwrap();
        assert!(matches!(load_image(&ascii), Err(Error::UnsupportedFormat { .. })));
    }

    #[test]
    fn jpeg_quality_validated_and_unwritable_path() {
        let r = random_quantized(8, 8, 3, 2);
        assert!(encode_image(&r, ImageFormat::Jpeg { quality: 0 }, Path::new("x")).is_err());
        assert!(encode_image(&r, ImageFormat::Jpeg { quality: 101 }, Path::new("x")).is_err());
        let err = save_image(&r, "/nonexistent-dir/x.png", ImageFormat::Png).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    fn gradient(size: usize) -> Raster {
        let p = Plane::from_fn(size, size, |x, y| {
            ((x + y) as f64 / (2 * size - 2) as f64 * 255.0).round() / 255.0
        });
        Raster::from_planes(vec![p.clone(), p.map(|v| 1.0 - v), p]).unwrap()
    }

    #[test]
    fn jpeg_q100_smooth_gradient_is_near_lossless() {
        let r = gradient(64);
        let back = jpeg_roundtrip(&r, 100).unwrap();
        assert!(psnr(&r, &back).unwrap() >= 40.0);
    }

    #[test]
    fn jpeg_recompression_converges() {
        let r = random_quantized(32, 32, 3, 11);
        let once = jpeg_roundtrip(&r, 70).unwrap();
        let twice = jpeg_roundtrip(&once, 70).unwrap();
        let changed = |a: &Raster, b: &Raster| {
            a.planes()
                .iter()
                .zip(b.planes())
                .flat_map(|(p, q)| p.data().iter().zip(q.data()))
                .filter(|(x, y)| x != y)
                .count()
        };
        assert!(changed(&once, &twice) < changed(&r, &once));
    }

    #[test]
    fn center_crop_offsets() {
        let r = Raster::gray(Plane::from_fn(4, 4, |x, y| (y * 4 + x) as f64 / 15.0)).unwrap();
        let c = center_crop(&r, 2).unwrap();
        assert_eq!(c.plane(0).data(), &[5.0 / 15.0, 6.0 / 15.0, 9.0 / 15.0, 10.0 / 15.0]);

        // 5x5 -> 2: offset floor(3/2) = 1, checked against an explicit index walk.
        let r = Raster::gray(Plane::from_fn(5, 5, |x, y| (y * 5 + x) as f64 / 24.0)).unwrap();
        let c = center_crop(&r, 2).unwrap();
        let mut expect = vec![];
        for y in 0..5usize {
            for x in 0..5usize {
                if (1..=2).contains(&x) && (1..=2).contains(&y) {
                    expect.push((y * 5 + x) as f64 / 24.0);
                }
            }
        }
        assert_eq!(c.plane(0).data(), expect.as_slice());

        let same = center_crop(&r, 5).unwrap();
        assert_eq!(same, r);
        assert!(center_crop(&r, 6).is_err());
    }

    #[test]
    fn resize_identity_and_nearest_replication() {
        let r = random_quantized(7, 5, 3, 3);
        for m in [ResizeMethod::Nearest, ResizeMethod::Bilinear] {
            let s = resize(&r, 7, 5, m).unwrap();
            for (a, b) in s.planes().iter().zip(r.planes()) {
                for (x, y) in a.data().iter().zip(b.data()) {
                    assert!((x - y).abs() < 1e-12);
                }
            }
        }
        let p = Plane::new(2, 2, vec![0.1, 0.2, 0.3, 0.4]).unwrap();
        let up = resize_plane(&p, 4, 4, ResizeMethod::Nearest).unwrap();
        for y in 0..4 {
            for x in 0..4 {
                assert_eq!(up.get(x, y), p.get(x / 2, y / 2));
            }
        }
        assert!(resize_plane(&p, 0, 4, ResizeMethod::Bilinear).is_err());
    }

    #[test]
    fn bilinear_doubling_matches_formula() {
        // 2x2 ramp upsampled to 4x4: source coord (d + 0.5) / 2 - 0.5, clamped.
        let p = Plane::new(2, 2, vec![0.0, 1.0, 2.0, 3.0]).unwrap();
        let up = resize_plane(&p, 4, 4, ResizeMethod::Bilinear).unwrap();
        let coord = |d: usize| ((d as f64 + 0.5) / 2.0 - 0.5).clamp(0.0, 1.0);
        for y in 0..4 {
            for x in 0..4 {
                let (cx, cy) = (coord(x), coord(y));
                let expect = cx * 1.0 + cy * 2.0;
                assert!((up.get(x, y) - expect).abs() < 1e-12);
                assert!(up.get(x, y) >= 0.0 && up.get(x, y) <= 3.0);
            }
        }
        assert_eq!(up.get(1, 1), 0.25 * 1.0 + 0.25 * 2.0);
    }
}

#[cfg(test)]
mod props {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn crop_has_requested_size(w in 1usize..40, h in 1usize..40, frac in 0.0f64..1.0) {
            let r = Raster::filled(w, h, 1, 0.5).unwrap();
            let size = 1 + ((w.min(h) - 1) as f64 * frac) as usize;
            let c = center_crop(&r, size).unwrap();
            prop_assert_eq!((c.width(), c.height()), (size, size));
        }

        #[test]
        fn nearest_only_emits_input_values(
            vals in proptest::collection::vec(0.0f64..1.0, 12),
            nw in 1usize..20, nh in 1usize..20,
        ) {
            let p = Plane::new(4, 3, vals.clone()).unwrap();
            let out = resize_plane(&p, nw, nh, ResizeMethod::Nearest).unwrap();
            for v in out.data() {
                prop_assert!(vals.contains(v));
            }
        }
    }
}
