use std::path::{Path, PathBuf};

use image::GrayImage;

use crate::error::{Error, Result};
use crate::network::checkpoint::Checkpoint;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::evaluate::{segment, EvalOptions};

/// Result for one input file. Failures are recorded and the batch continues.
#[derive(Clone, Debug, PartialEq)]
pub struct InferOutcome {
    pub input: PathBuf,
    pub result: std::result::Result<PathBuf, String>,
}

fn read_rgb(path: &Path) -> Result<Tensor<f32>> {
    let img = image::open(path)
        .map_err(|e| Error::Dataset {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?
        .to_rgb8();
    let (w, h) = img.dimensions();
    let data = img.as_raw().iter().map(|&b| b as f32 / 255.0).collect();
    Tensor::from_vec(&[h as usize, w as usize, 3], data)
}

fn infer_one<T: Scalar>(checkpoint: &Checkpoint<T>, path: &Path, out_dir: &Path, opts: &EvalOptions) -> Result<PathBuf> {
    let image = read_rgb(path)?;
    let mask = segment(&checkpoint.params, &checkpoint.config, &image, opts)?;
    let (h, w) = mask.dims();
    let png = GrayImage::from_fn(w as u32, h as u32, |x, y| image::Luma([if mask.get(y as usize, x as usize) { 255 } else { 0 }]));
    let stem = path.file_stem().map_or_else(|| "mask".into(), |s| s.to_string_lossy().into_owned());
    let out = out_dir.join(format!("{stem}.png"));
    png.save(&out)?;
    Ok(out)
}

/// Segments each image and writes an 8-bit {0, 255} mask named after it into `out_dir`.
pub fn infer<T: Scalar>(checkpoint: &Checkpoint<T>, paths: &[PathBuf], out_dir: &Path, opts: &EvalOptions) -> Result<Vec<InferOutcome>> {
    checkpoint.check_layout()?;
    std::fs::create_dir_all(out_dir)?;
    Ok(paths
        .iter()
        .map(|p| {
            let result = infer_one(checkpoint, p, out_dir, opts).map_err(|e| {
                log::error!("{}: {e}", p.display());
                e.to_string()
            });
            InferOutcome {
                input: p.clone(),
                result,
            }
        })
        .collect())
}
