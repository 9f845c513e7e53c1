use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, ImageReader};

use super::{Dataset, Sample};
use crate::augment::ImageGrid;
use crate::error::{Error, Result};

fn ingestion(path: &Path, reason: impl Into<String>) -> Error {
    Error::Ingestion {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| ingestion(dir, e.to_string()))? {
        out.push(entry.map_err(|e| ingestion(dir, e.to_string()))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_png(path: &Path) -> bool {
    path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Decode a grayscale PNG to [0,1], returning the bit depth alongside.
fn read_gray(path: &Path) -> Result<(ImageGrid, u8)> {
    let img = ImageReader::open(path)
        .map_err(|e| ingestion(path, e.to_string()))?
        .with_guessed_format()
        .map_err(|e| ingestion(path, e.to_string()))?
        .decode()
        .map_err(|e| ingestion(path, e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let (pixels, depth): (Vec<f32>, u8) = match img {
        DynamicImage::ImageLuma8(buf) => (buf.into_raw().into_iter().map(|v| v as f32 / 255.0).collect(), 8),
        DynamicImage::ImageLuma16(buf) => (buf.into_raw().into_iter().map(|v| v as f32 / 65535.0).collect(), 16),
        other => return Err(ingestion(path, format!("expected 8- or 16-bit grayscale, found {:?}", other.color()))),
    };
    Ok((ImageGrid::new(h, w, pixels)?, depth))
}

/// Load `root/<class>/<image>.png` into a dataset. Classes are the
/// subdirectories in lexicographic order; every image is center-cropped or
/// zero-padded to `size` x `size`. Sample ids are `<class>/<file name>`.
pub fn load_image_folder(root: &Path, size: usize) -> Result<Dataset> {
    if size == 0 {
        return Err(Error::config("image size must be positive"));
    }
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(ingestion(root, "no class subdirectories"));
    }
    let mut class_names = Vec::new();
    let mut items = Vec::new();
    let mut depth: Option<(u8, PathBuf)> = None;
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir.file_name().and_then(|n| n.to_str()).ok_or_else(|| ingestion(dir, "class name is not UTF-8"))?;
        class_names.push(name.to_string());
        for file in sorted_entries(dir)?.into_iter().filter(|p| p.is_file() && is_png(p)) {
            let (img, d) = read_gray(&file)?;
            match &depth {
                None => depth = Some((d, file.clone())),
                Some((first, first_path)) if *first != d => {
                    return Err(ingestion(
                        &file,
                        format!("{d}-bit image, but {} is {first}-bit", first_path.display()),
                    ))
                }
                _ => {}
            }
            let file_name = file.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            items.push(Sample::new(img.center_fit(size), label, format!("{name}/{file_name}")));
        }
    }
    if items.is_empty() {
        return Err(ingestion(root, "no PNG images found"));
    }
    Dataset::new(items, class_names)
}
