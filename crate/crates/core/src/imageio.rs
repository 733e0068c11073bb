//! Grayscale image files (PGM and PNG) as arrays in [0, 1].

use std::path::{Path, PathBuf};

use image::{GrayImage, ImageFormat, Luma};
use ndarray::{Array2, ArrayView2};

use crate::error::{Error, Result};

pub const IMAGE_EXTENSIONS: [&str; 3] = ["pgm", "png", "pnm"];

fn format_for(path: &Path) -> Result<ImageFormat> {
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pgm") | Some("pnm") => Ok(ImageFormat::Pnm),
        Some("png") => Ok(ImageFormat::Png),
        _ => Err(Error::invalid(format!(
            "{}: unsupported image extension (use .pgm or .png)",
            path.display()
        ))),
    }
}

/// Load an image, convert to 8-bit gray and scale to [0, 1].
pub fn read_gray(path: impl AsRef<Path>) -> Result<Array2<f64>> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = image::load_from_memory_with_format(&bytes, format)
        .map_err(|source| Error::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_luma8();
    let (w, h) = img.dimensions();
    Ok(Array2::from_shape_fn((h as usize, w as usize), |(i, j)| {
        img.get_pixel(j as u32, i as u32)[0] as f64 / 255.0
    }))
}

/// Quantize to 8 bits (clamping to [0, 1]) and write as PGM or PNG.
pub fn write_gray(path: impl AsRef<Path>, image: ArrayView2<'_, f64>) -> Result<()> {
    let path = path.as_ref();
    let format = format_for(path)?;
    let (h, w) = image.dim();
    let mut out = GrayImage::new(w as u32, h as u32);
    for ((i, j), &v) in image.indexed_iter() {
        out.put_pixel(j as u32, i as u32, Luma([quantize(v)]));
    }
    out.save_with_format(path, format).map_err(|source| Error::Image {
        path: path.to_path_buf(),
        source,
    })
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Image files in `dir` sorted by file name.
pub fn list_images(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
        })
        .collect();
    files.sort();
    Ok(files)
}

pub fn file_stem(path: &Path) -> String {
    path.file_stem().map_or_else(String::new, |s| s.to_string_lossy().into_owned())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_on_the_8bit_grid() {
        let dir = tempfile::tempdir().unwrap();
        let img = Array2::from_shape_fn((5, 7), |(i, j)| ((i * 7 + j) * 7 % 256) as f64 / 255.0);
        for name in ["a.pgm", "a.png"] {
            let path = dir.path().join(name);
            write_gray(&path, img.view()).unwrap();
            assert_eq!(read_gray(&path).unwrap(), img);
        }
        assert_eq!(list_images(dir.path()).unwrap().len(), 2);
    }

    #[test]
    fn out_of_range_values_are_clamped() {
        assert_eq!(quantize(-0.3), 0);
        assert_eq!(quantize(1.7), 255);
        assert_eq!(quantize(0.5), 128);
    }

    #[test]
    fn unknown_extension_and_missing_file() {
        assert!(matches!(read_gray("x.bmp"), Err(Error::InvalidInput(_))));
        assert!(read_gray("/nonexistent/x.pgm").unwrap_err().is_io());
    }
}
