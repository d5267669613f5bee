//! Decoding image folders into [`ClassIndexedDataset`]s.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use image::imageops::{self, FilterType};
use log::warn;
use serde::Deserialize;

use super::dataset::{ClassEntry, ClassId, ClassIndexedDataset, Role};
use crate::error::{Error, Result};

pub const OMNIGLOT_SIDE: usize = 105;
pub const OMNIGLOT_IMAGES_PER_CLASS: usize = 20;
pub const NATURAL_SIDE: usize = 132;

fn ingest_err(path: &Path, message: impl Into<String>) -> Error {
    Error::Ingest { path: path.to_path_buf(), message: message.into() }
}

fn sorted_entries(dir: &Path, want_dirs: bool) -> Result<Vec<PathBuf>> {
    let read = std::fs::read_dir(dir).map_err(|e| ingest_err(dir, e.to_string()))?;
    let mut out = Vec::new();
    for entry in read {
        let entry = entry.map_err(|e| ingest_err(dir, e.to_string()))?;
        let path = entry.path();
        let hidden = entry.file_name().to_string_lossy().starts_with('.');
        if !hidden && path.is_dir() == want_dirs {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn file_name(path: &Path) -> String {
    path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Loads a character scan as one channel in `[0, 1]` with ink = 1,
/// optionally resized to `side x side`.
pub fn load_glyph(path: &Path, side: Option<usize>) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| ingest_err(path, e.to_string()))?;
    let mut gray = img.to_luma32f();
    if let Some(s) = side {
        if gray.width() as usize != s || gray.height() as usize != s {
            gray = imageops::resize(&gray, s as u32, s as u32, FilterType::Triangle);
        }
    }
    Ok(gray.into_raw().into_iter().map(|v| (1.0 - v).clamp(0.0, 1.0)).collect())
}

/// One Omniglot split directory: `alphabet/character/*.png`. Characters
/// become classes numbered from `first_id` in sorted path order.
pub fn ingest_omniglot_set(dir: &Path, role: Role, first_id: ClassId, side: Option<usize>) -> Result<ClassIndexedDataset> {
    let side_px = side.unwrap_or(OMNIGLOT_SIDE);
    let mut classes = Vec::new();
    let mut warnings = Vec::new();
    let mut next_id = first_id;
    for alphabet in sorted_entries(dir, true)? {
        let group = file_name(&alphabet);
        for character in sorted_entries(&alphabet, true)? {
            let files: Vec<PathBuf> = sorted_entries(&character, false)?
                .into_iter()
                .filter(|p| p.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")))
                .collect();
            if files.is_empty() {
                return Err(ingest_err(&character, "character folder holds no images"));
            }
            if files.len() != OMNIGLOT_IMAGES_PER_CLASS {
                let msg = format!("{} holds {} images, expected {OMNIGLOT_IMAGES_PER_CLASS}", character.display(), files.len());
                warn!("{msg}");
                warnings.push(msg);
            }
            let mut images = Vec::with_capacity(files.len());
            for f in &files {
                let img = load_glyph(f, side)?;
                if img.len() != side_px * side_px {
                    return Err(ingest_err(f, format!("expected a {side_px}x{side_px} image")));
                }
                images.push(img);
            }
            let name = format!("{group}/{}", file_name(&character));
            classes.push(ClassEntry::new(next_id, name, group.clone(), images));
            next_id += 1;
        }
    }
    if classes.is_empty() {
        return Err(ingest_err(dir, "no alphabet/character folders found"));
    }
    let mut ds = ClassIndexedDataset::new((1, side_px, side_px), role, classes)?;
    ds.warnings = warnings;
    Ok(ds)
}

/// Background and evaluation sets from an Omniglot root holding
/// `images_background/` and `images_evaluation/`. Evaluation class ids
/// continue after the background ones so the two never collide.
pub fn ingest_omniglot(root: &Path, side: Option<usize>) -> Result<(ClassIndexedDataset, ClassIndexedDataset)> {
    let background = ingest_omniglot_set(&root.join("images_background"), Role::Base, 0, side)?;
    let evaluation = ingest_omniglot_set(
        &root.join("images_evaluation"),
        Role::Novel,
        background.num_classes() as ClassId,
        side,
    )?;
    Ok((background, evaluation))
}

#[derive(Debug, Deserialize)]
struct ManifestRow {
    path: String,
    class_id: ClassId,
    #[serde(default)]
    class_name: Option<String>,
}

/// Decodes an RGB image and resizes it bilinearly to `side x side`, channel-major.
pub fn load_natural(path: &Path, side: usize) -> Result<Vec<f32>> {
    let img = image::open(path).map_err(|e| ingest_err(path, e.to_string()))?;
    let rgb = imageops::resize(&img.to_rgb32f(), side as u32, side as u32, FilterType::Triangle);
    let plane = side * side;
    let mut out = vec![0.0f32; 3 * plane];
    for (i, px) in rgb.pixels().enumerate() {
        for ch in 0..3 {
            out[ch * plane + i] = px.0[ch].clamp(0.0, 1.0);
        }
    }
    Ok(out)
}

/// Natural images listed in a CSV manifest with columns
/// `path,class_id[,class_name]`; paths are relative to `root`.
pub fn ingest_natural(root: &Path, manifest: &Path, role: Role) -> Result<ClassIndexedDataset> {
    let mut reader = csv::Reader::from_path(manifest).map_err(|e| ingest_err(manifest, e.to_string()))?;
    let mut by_class: BTreeMap<ClassId, (String, Vec<Vec<f32>>)> = BTreeMap::new();
    for row in reader.deserialize::<ManifestRow>() {
        let row = row.map_err(|e| ingest_err(manifest, e.to_string()))?;
        let img = load_natural(&root.join(&row.path), NATURAL_SIDE)?;
        let slot = by_class
            .entry(row.class_id)
            .or_insert_with(|| (row.class_name.clone().unwrap_or_else(|| row.class_id.to_string()), Vec::new()));
        slot.1.push(img);
    }
    if by_class.is_empty() {
        return Err(ingest_err(manifest, "manifest lists no images"));
    }
    let classes = by_class.into_iter().map(|(id, (name, imgs))| ClassEntry::new(id, name, "", imgs)).collect();
    ClassIndexedDataset::new((3, NATURAL_SIDE, NATURAL_SIDE), role, classes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use image::{GrayImage, Luma, Rgb, RgbImage};

    fn write_glyph(path: &Path, ink_at: (u32, u32)) {
        let mut img = GrayImage::from_pixel(8, 8, Luma([255]));
        img.put_pixel(ink_at.0, ink_at.1, Luma([0]));
        std::fs::create_dir_all(path.parent().unwrap()).unwrap();
        img.save(path).unwrap();
    }

    #[test]
    fn omniglot_layout_becomes_inverted_classes() {
        let dir = tempfile::tempdir().unwrap();
        for (a, c, n) in [("Greek", "character01", 3), ("Greek", "character02", 2), ("Latin", "character01", 2)] {
            for i in 0..n {
                write_glyph(&dir.path().join(a).join(c).join(format!("{i}.png")), (i, 0));
            }
        }
        let ds = ingest_omniglot_set(dir.path(), Role::Base, 7, Some(8)).unwrap();
        assert_eq!(ds.class_ids(), vec![7, 8, 9]);
        assert_eq!(ds.image_shape(), (1, 8, 8));
        assert_eq!(ds.groups(), vec!["Greek".to_string(), "Latin".to_string()]);
        let img = ds.image(7, 1).unwrap();
        assert_eq!(img[1], 1.0);
        assert_eq!(img[0], 0.0);
        assert_eq!(ds.warnings.len(), 3);
    }

    #[test]
    fn missing_root_names_the_path() {
        let err = ingest_omniglot_set(Path::new("/definitely/missing"), Role::Base, 0, None).unwrap_err();
        assert!(err.to_string().contains("/definitely/missing"));
    }

    #[test]
    fn manifest_images_are_resized_to_132() {
        let dir = tempfile::tempdir().unwrap();
        RgbImage::from_pixel(40, 30, Rgb([255, 0, 51])).save(dir.path().join("a.png")).unwrap();
        RgbImage::from_pixel(10, 10, Rgb([0, 0, 0])).save(dir.path().join("b.png")).unwrap();
        let manifest = dir.path().join("m.csv");
        std::fs::write(&manifest, "path,class_id,class_name\na.png,4,red\nb.png,2,\na.png,2,\n").unwrap();
        let ds = ingest_natural(dir.path(), &manifest, Role::Base).unwrap();
        assert_eq!(ds.image_shape(), (3, 132, 132));
        assert_eq!(ds.class_ids(), vec![2, 4]);
        assert_eq!(ds.class(2).unwrap().len(), 2);
        let red = ds.image(4, 0).unwrap();
        assert!((red[0] - 1.0).abs() < 1e-6 && red[132 * 132].abs() < 1e-6);
        assert!((red[2 * 132 * 132] - 0.2).abs() < 1e-3);
    }

    #[test]
    fn undecodable_image_is_an_ingest_error() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("x.png"), b"not a png").unwrap();
        let manifest = dir.path().join("m.csv");
        std::fs::write(&manifest, "path,class_id\nx.png,0\n").unwrap();
        assert!(matches!(ingest_natural(dir.path(), &manifest, Role::Base), Err(Error::Ingest { .. })));
    }
}
