//! Dataset directories: `images/<id>.png` (RGB8), `masks/<id>.png` (values 0/255),
//! optional `artifacts/<id>.png`, and `meta.csv` with
//! `id,patient_id,skin_tone,gender,age_group,site`.

use std::path::{Path, PathBuf};

use image::{GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::{Sample, Strata};
use crate::error::{Error, Result};
use crate::mask::BinaryMap;
use crate::tensor::Tensor;

#[derive(Debug, Serialize, Deserialize)]
struct MetaRow {
    id: String,
    patient_id: String,
    skin_tone: String,
    gender: String,
    age_group: String,
    site: String,
}

fn dataset_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Dataset {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn mask_image(m: &BinaryMap) -> GrayImage {
    let (h, w) = m.dims();
    GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([if m.get(y as usize, x as usize) { 255 } else { 0 }]))
}

pub fn save_dataset(samples: &[Sample], dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    for sub in ["images", "masks", "artifacts"] {
        std::fs::create_dir_all(dir.join(sub))?;
    }
    let mut meta = csv::Writer::from_path(dir.join("meta.csv"))?;
    for s in samples {
        let (h, w) = s.dims();
        let rgb = RgbImage::from_fn(w as u32, h as u32, |x, y| {
            let (y, x) = (y as usize, x as usize);
            image::Rgb([0, 1, 2].map(|c| to_byte(s.image.at(y, x, c))))
        });
        rgb.save(dir.join("images").join(format!("{}.png", s.id)))?;
        mask_image(&s.mask).save(dir.join("masks").join(format!("{}.png", s.id)))?;
        mask_image(&s.artifact_mask).save(dir.join("artifacts").join(format!("{}.png", s.id)))?;
        meta.serialize(MetaRow {
            id: s.id.clone(),
            patient_id: s.patient_id.clone(),
            skin_tone: s.strata.skin_tone.clone(),
            gender: s.strata.gender.clone(),
            age_group: s.strata.age_group.clone(),
            site: s.strata.site.clone(),
        })?;
    }
    meta.flush()?;
    Ok(())
}

fn read_mask(path: &Path, dims: (usize, usize)) -> Result<BinaryMap> {
    let img = image::open(path).map_err(|e| dataset_err(path, e.to_string()))?.to_luma8();
    let (w, h) = img.dimensions();
    if (h as usize, w as usize) != dims {
        return Err(dataset_err(path, format!("mask is {w}x{h}, image is {}x{}", dims.1, dims.0)));
    }
    let mut data = Vec::with_capacity((h * w) as usize);
    for p in img.pixels() {
        match p.0[0] {
            0 => data.push(false),
            255 => data.push(true),
            v => {
                return Err(dataset_err(
                    path,
                    format!("mask value {v} is not 0 or 255; binarize the mask (e.g. threshold at 128) before loading"),
                ))
            }
        }
    }
    BinaryMap::from_vec(h as usize, w as usize, data)
}

fn read_sample(dir: &Path, row: MetaRow) -> Result<Sample> {
    let img_path = dir.join("images").join(format!("{}.png", row.id));
    let rgb = image::open(&img_path)
        .map_err(|e| dataset_err(&img_path, e.to_string()))?
        .to_rgb8();
    let (w, h) = rgb.dimensions();
    let (h, w) = (h as usize, w as usize);
    let data = rgb.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
    let mask_path = dir.join("masks").join(format!("{}.png", row.id));
    if !mask_path.exists() {
        return Err(dataset_err(&mask_path, format!("missing mask for image {}", img_path.display())));
    }
    let mask = read_mask(&mask_path, (h, w))?;
    let art_path = dir.join("artifacts").join(format!("{}.png", row.id));
    let artifact_mask = if art_path.exists() {
        read_mask(&art_path, (h, w))?
    } else {
        BinaryMap::new(h, w)
    };
    Ok(Sample {
        id: row.id,
        patient_id: row.patient_id,
        image: Tensor::from_vec(&[h, w, 3], data)?,
        mask,
        artifact_mask,
        strata: Strata {
            skin_tone: row.skin_tone,
            gender: row.gender,
            age_group: row.age_group,
            site: row.site,
        },
    })
}

fn image_ids(dir: &Path) -> Result<Vec<String>> {
    let images = dir.join("images");
    if !images.is_dir() {
        return Ok(Vec::new());
    }
    let mut ids: Vec<String> = std::fs::read_dir(&images)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "png"))
        .filter_map(|p| p.file_stem().map(|s| s.to_string_lossy().into_owned()))
        .collect();
    ids.sort();
    Ok(ids)
}

/// Loads a dataset directory in `meta.csv` order. Without `meta.csv`, images are
/// taken in file-name order, each its own patient with empty strata.
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<Sample>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(dataset_err(dir, "not a directory"));
    }
    let meta_path: PathBuf = dir.join("meta.csv");
    let rows: Vec<MetaRow> = if meta_path.exists() {
        csv::Reader::from_path(&meta_path)?
            .deserialize()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| dataset_err(&meta_path, e.to_string()))?
    } else {
        image_ids(dir)?
            .into_iter()
            .map(|id| MetaRow {
                patient_id: id.clone(),
                id,
                skin_tone: String::new(),
                gender: String::new(),
                age_group: String::new(),
                site: String::new(),
            })
            .collect()
    };
    if rows.is_empty() {
        log::warn!("dataset directory {} holds no samples", dir.display());
    }
    rows.into_iter().map(|r| read_sample(dir, r)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthdata::{generate_dataset, SynthConfig};

    #[test]
    fn round_trip() {
        let tmp = tempfile::tempdir().unwrap();
        let samples = generate_dataset(
            &SynthConfig {
                image_size: 32,
                hair_count_range: (1, 3),
                ..SynthConfig::default()
            },
            4,
        )
        .unwrap();
        save_dataset(&samples, tmp.path()).unwrap();
        assert_eq!(load_dataset(tmp.path()).unwrap(), samples);
    }

    #[test]
    fn empty_directory() {
        let tmp = tempfile::tempdir().unwrap();
        assert!(load_dataset(tmp.path()).unwrap().is_empty());
    }

    #[test]
    fn missing_mask_named() {
        let tmp = tempfile::tempdir().unwrap();
        let samples = generate_dataset(&SynthConfig { image_size: 16, lesion_area_range: (0.1, 0.3), ..SynthConfig::default() }, 2).unwrap();
        save_dataset(&samples, tmp.path()).unwrap();
        std::fs::remove_file(tmp.path().join("masks").join("img00001.png")).unwrap();
        let err = load_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("img00001.png"), "{err}");
    }

    #[test]
    fn non_binary_mask_rejected() {
        let tmp = tempfile::tempdir().unwrap();
        let samples = generate_dataset(&SynthConfig { image_size: 16, lesion_area_range: (0.1, 0.3), ..SynthConfig::default() }, 1).unwrap();
        save_dataset(&samples, tmp.path()).unwrap();
        let mut m = GrayImage::new(16, 16);
        m.put_pixel(3, 3, image::Luma([128]));
        m.save(tmp.path().join("masks").join("img00000.png")).unwrap();
        let err = load_dataset(tmp.path()).unwrap_err().to_string();
        assert!(err.contains("128") && err.contains("binarize"), "{err}");
    }
}
