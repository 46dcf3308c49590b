use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{child_seed, Sample};
use crate::error::{Error, Result};
use crate::mask::BinaryMap;
use crate::tensor::Tensor;

/// One concrete draw of the augmentation pipeline. Geometric steps run in the order
/// flip, quarter turns, rotation, elastic warp, crop-and-resize; photometric steps
/// touch only the image.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub hflip: bool,
    pub vflip: bool,
    /// Clockwise quarter turns.
    pub rot90: u8,
    pub rotation_deg: f64,
    /// Peak elastic displacement in pixels.
    pub elastic_alpha: f64,
    pub elastic_grid: usize,
    pub elastic_seed: u64,
    pub brightness: f64,
    pub contrast: f64,
    pub saturation: f64,
    /// Side of the crop window relative to the image, in `(0, 1]`.
    pub crop_scale: f64,
    /// Crop position as fractions of the free space, each in `[0, 1]`.
    pub crop_offset: (f64, f64),
}

impl AugmentParams {
    pub fn identity() -> Self {
        AugmentParams {
            hflip: false,
            vflip: false,
            rot90: 0,
            rotation_deg: 0.0,
            elastic_alpha: 0.0,
            elastic_grid: 4,
            elastic_seed: 0,
            brightness: 0.0,
            contrast: 1.0,
            saturation: 1.0,
            crop_scale: 1.0,
            crop_offset: (0.0, 0.0),
        }
    }

    /// Random draw whose magnitudes scale with `strength` in `[0, 1]`; zero
    /// strength is the identity.
    pub fn sample(seed: u64, strength: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&strength) {
            return Err(Error::Param(format!("augmentation strength {strength} outside [0, 1]")));
        }
        if strength == 0.0 {
            return Ok(Self::identity());
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = strength;
        Ok(AugmentParams {
            hflip: rng.gen_bool(0.5),
            vflip: rng.gen_bool(0.5),
            rot90: rng.gen_range(0..4),
            rotation_deg: rng.gen_range(-15.0..=15.0) * s,
            elastic_alpha: rng.gen_range(0.0..=2.0) * s,
            elastic_grid: 4,
            elastic_seed: rng.gen(),
            brightness: rng.gen_range(-0.08..=0.08) * s,
            contrast: 1.0 + rng.gen_range(-0.2..=0.2) * s,
            saturation: 1.0 + rng.gen_range(-0.2..=0.2) * s,
            crop_scale: 1.0 - rng.gen_range(0.0..=0.2) * s,
            crop_offset: (rng.gen_range(0.0..=1.0), rng.gen_range(0.0..=1.0)),
        })
    }

    fn validate(&self) -> Result<()> {
        if !(self.crop_scale > 0.0 && self.crop_scale <= 1.0) {
            return Err(Error::Param(format!(
                "crop scale {} must lie in (0, 1]; the crop cannot exceed the image",
                self.crop_scale
            )));
        }
        let (oy, ox) = self.crop_offset;
        if !((0.0..=1.0).contains(&oy) && (0.0..=1.0).contains(&ox)) {
            return Err(Error::Param("crop offsets must lie in [0, 1]".into()));
        }
        if self.elastic_alpha < 0.0 || self.elastic_grid == 0 {
            return Err(Error::Param("elastic warp needs alpha >= 0 and grid >= 1".into()));
        }
        Ok(())
    }

    fn photometric_identity(&self) -> bool {
        self.brightness == 0.0 && self.contrast == 1.0 && self.saturation == 1.0
    }
}

/// Backward map from output pixel centres to continuous source coordinates.
struct Warp {
    src: (f64, f64),
    out: (f64, f64),
    p: AugmentParams,
    lattice: Vec<(f64, f64)>,
}

impl Warp {
    fn new(h: usize, w: usize, p: &AugmentParams) -> Self {
        let (h, w) = (h as f64, w as f64);
        let out = if p.rot90 % 2 == 1 { (w, h) } else { (h, w) };
        let g = p.elastic_grid + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(p.elastic_seed);
        let lattice = (0..g * g)
            .map(|_| (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0)))
            .collect();
        Warp {
            src: (h, w),
            out,
            p: p.clone(),
            lattice,
        }
    }

    fn displacement(&self, y: f64, x: f64) -> (f64, f64) {
        let grid = self.p.elastic_grid;
        let g = grid + 1;
        let fy = (y / self.out.0).clamp(0.0, 1.0) * grid as f64;
        let fx = (x / self.out.1).clamp(0.0, 1.0) * grid as f64;
        let (y0, x0) = ((fy.floor() as usize).min(grid - 1), (fx.floor() as usize).min(grid - 1));
        let (ty, tx) = (fy - y0 as f64, fx - x0 as f64);
        let at = |yy: usize, xx: usize| self.lattice[yy * g + xx];
        let mix = |a: (f64, f64), b: (f64, f64), t: f64| (a.0 + (b.0 - a.0) * t, a.1 + (b.1 - a.1) * t);
        let top = mix(at(y0, x0), at(y0, x0 + 1), tx);
        let bot = mix(at(y0 + 1, x0), at(y0 + 1, x0 + 1), tx);
        let d = mix(top, bot, ty);
        (d.0 * self.p.elastic_alpha, d.1 * self.p.elastic_alpha)
    }

    fn source(&self, y: usize, x: usize) -> (f64, f64) {
        let (oh, ow) = self.out;
        let (mut py, mut px) = (y as f64 + 0.5, x as f64 + 0.5);
        let p = &self.p;
        if p.crop_scale != 1.0 {
            let (ch, cw) = (oh * p.crop_scale, ow * p.crop_scale);
            py = p.crop_offset.0 * (oh - ch) + py * p.crop_scale;
            px = p.crop_offset.1 * (ow - cw) + px * p.crop_scale;
        }
        if p.elastic_alpha != 0.0 {
            let (dy, dx) = self.displacement(py, px);
            py += dy;
            px += dx;
        }
        if p.rotation_deg != 0.0 {
            let (s, c) = (-p.rotation_deg.to_radians()).sin_cos();
            let (cy, cx) = (oh / 2.0, ow / 2.0);
            let (ry, rx) = (py - cy, px - cx);
            py = cy + c * ry + s * rx;
            px = cx - s * ry + c * rx;
        }
        // undo the quarter turns one at a time, tracking the frame size
        let (mut fh, mut fw) = (oh, ow);
        for _ in 0..p.rot90 % 4 {
            let (ny, nx) = (fw - px, py);
            py = ny;
            px = nx;
            std::mem::swap(&mut fh, &mut fw);
        }
        debug_assert_eq!((fh, fw), self.src);
        if p.vflip {
            py = self.src.0 - py;
        }
        if p.hflip {
            px = self.src.1 - px;
        }
        (py, px)
    }
}

fn nearest(m: &BinaryMap, y: f64, x: f64) -> bool {
    let (h, w) = m.dims();
    let yi = (y.floor().max(0.0) as usize).min(h - 1);
    let xi = (x.floor().max(0.0) as usize).min(w - 1);
    m.get(yi, xi)
}

fn bilinear(img: &Tensor<f32>, y: f64, x: f64, out: &mut [f32]) {
    let (h, w, c) = img.hwc();
    let sy = (y - 0.5).clamp(0.0, (h - 1) as f64);
    let sx = (x - 0.5).clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (ty, tx) = ((sy - y0 as f64) as f32, (sx - x0 as f64) as f32);
    for (k, o) in out.iter_mut().enumerate().take(c) {
        let v00 = img.at(y0, x0, k);
        if ty == 0.0 && tx == 0.0 {
            *o = v00;
            continue;
        }
        let top = v00 + (img.at(y0, x1, k) - v00) * tx;
        let bot = img.at(y1, x0, k) + (img.at(y1, x1, k) - img.at(y1, x0, k)) * tx;
        *o = top + (bot - top) * ty;
    }
}

/// Applies `params` to image, mask and artifact mask; masks use nearest-neighbour
/// sampling so they stay binary.
pub fn apply_augment(sample: &Sample, params: &AugmentParams) -> Result<Sample> {
    params.validate()?;
    let (h, w) = sample.dims();
    let warp = Warp::new(h, w, params);
    let (oh, ow) = (warp.out.0 as usize, warp.out.1 as usize);
    let mut img = vec![0.0f32; oh * ow * 3];
    let mut mask = Vec::with_capacity(oh * ow);
    let mut art = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        for x in 0..ow {
            let (sy, sx) = warp.source(y, x);
            let i = y * ow + x;
            bilinear(&sample.image, sy, sx, &mut img[i * 3..i * 3 + 3]);
            mask.push(nearest(&sample.mask, sy, sx));
            art.push(nearest(&sample.artifact_mask, sy, sx));
        }
    }
    if !params.photometric_identity() {
        let mean = img.iter().map(|&v| v as f64).sum::<f64>() / img.len() as f64;
        for px in img.chunks_mut(3) {
            let gray = (px[0] + px[1] + px[2]) as f64 / 3.0;
            for v in px.iter_mut() {
                let sat = gray + params.saturation * (*v as f64 - gray);
                let con = mean + params.contrast * (sat - mean);
                *v = (con + params.brightness).clamp(0.0, 1.0) as f32;
            }
        }
    }
    Ok(Sample {
        id: sample.id.clone(),
        patient_id: sample.patient_id.clone(),
        image: Tensor::from_vec(&[oh, ow, 3], img)?,
        mask: BinaryMap::from_vec(oh, ow, mask)?,
        artifact_mask: BinaryMap::from_vec(oh, ow, art)?,
        strata: sample.strata.clone(),
    })
}

pub fn augment(sample: &Sample, seed: u64, strength: f64) -> Result<Sample> {
    apply_augment(sample, &AugmentParams::sample(seed, strength)?)
}

/// Two independent augmentations from child seeds of `seed`.
pub fn two_views(sample: &Sample, seed: u64, strength: f64) -> Result<(Sample, Sample)> {
    Ok((
        augment(sample, child_seed(seed, 0), strength)?,
        augment(sample, child_seed(seed, 1), strength)?,
    ))
}
