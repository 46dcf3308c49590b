//! Seeded synthetic dermoscopy-like images with lesion masks, artifact overlays
//! and stratum labels, plus the training-time augmentations.

mod augment;
mod draw;
mod io;

pub use augment::{apply_augment, augment, two_views, AugmentParams};
pub use io::{load_dataset, save_dataset};

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mask::BinaryMap;
use crate::network::postprocess::label_components;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SkinToneMode {
    Light,
    Dark,
    /// Each patient draws light or dark with equal probability.
    #[default]
    Mixed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub image_size: usize,
    /// Lesion area as a fraction of the image, `(min, max)`.
    pub lesion_area_range: (f64, f64),
    /// Amplitude of the radial perturbation of the base ellipse.
    pub lesion_irregularity: f64,
    /// Relative darkening of the lesion against the skin.
    pub contrast: f64,
    pub hair_count_range: (usize, usize),
    pub ruler_on: bool,
    pub specular_count_range: (usize, usize),
    pub skin_tone_mode: SkinToneMode,
    pub images_per_patient: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            image_size: 64,
            lesion_area_range: (0.08, 0.3),
            lesion_irregularity: 0.15,
            contrast: 0.35,
            hair_count_range: (0, 4),
            ruler_on: false,
            specular_count_range: (0, 3),
            skin_tone_mode: SkinToneMode::Mixed,
            images_per_patient: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.image_size < 8 {
            return Err(Error::config("image_size", "must be at least 8"));
        }
        let (lo, hi) = self.lesion_area_range;
        if !(lo > 0.0 && lo <= hi && hi < 1.0) {
            return Err(Error::config("lesion_area_range", "need 0 < min <= max < 1"));
        }
        let n2 = (self.image_size * self.image_size) as f64;
        if (hi * n2).ceil() < (lo * n2).floor().max(1.0) || hi * n2 < 1.0 {
            return Err(Error::config("lesion_area_range", "range holds no whole-pixel area at this image size"));
        }
        if !(self.lesion_irregularity >= 0.0 && self.lesion_irregularity < 1.0) {
            return Err(Error::config("lesion_irregularity", "must lie in [0, 1)"));
        }
        if !(self.contrast >= 0.0 && self.contrast <= 1.0) {
            return Err(Error::config("contrast", "must lie in [0, 1]"));
        }
        if self.hair_count_range.0 > self.hair_count_range.1 {
            return Err(Error::config("hair_count_range", "min exceeds max"));
        }
        if self.specular_count_range.0 > self.specular_count_range.1 {
            return Err(Error::config("specular_count_range", "min exceeds max"));
        }
        if self.images_per_patient == 0 {
            return Err(Error::config("images_per_patient", "must be >= 1"));
        }
        Ok(())
    }

    fn area_bounds(&self) -> (usize, usize) {
        let n2 = (self.image_size * self.image_size) as f64;
        let (lo, hi) = self.lesion_area_range;
        (((lo * n2).floor() as usize).max(1), (hi * n2).ceil() as usize)
    }
}

/// Synthetic stratum labels; they mirror the report's grouping keys and carry no
/// clinical meaning.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Strata {
    pub skin_tone: String,
    pub gender: String,
    pub age_group: String,
    pub site: String,
}

impl Strata {
    pub fn to_map(&self) -> BTreeMap<String, String> {
        [
            ("skin_tone", &self.skin_tone),
            ("gender", &self.gender),
            ("age_group", &self.age_group),
            ("site", &self.site),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v.clone()))
        .collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub id: String,
    pub patient_id: String,
    /// `H×W×3` RGB in `[0, 1]`.
    pub image: Tensor<f32>,
    pub mask: BinaryMap,
    pub artifact_mask: BinaryMap,
    pub strata: Strata,
}

impl Sample {
    pub fn dims(&self) -> (usize, usize) {
        self.mask.dims()
    }
}

/// Independent child seed number `stream` of `seed`.
pub fn child_seed(seed: u64, stream: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng.next_u64()
}

const GENDERS: [&str; 2] = ["female", "male"];
const AGE_GROUPS: [&str; 3] = ["18-30", "31-50", "51+"];
const SITES: [&str; 4] = ["acral", "head_neck", "limbs", "trunk"];

fn patient_strata(mode: SkinToneMode, patient_seed: u64) -> Strata {
    let mut rng = ChaCha8Rng::seed_from_u64(patient_seed);
    let dark = match mode {
        SkinToneMode::Light => false,
        SkinToneMode::Dark => true,
        SkinToneMode::Mixed => rng.gen_bool(0.5),
    };
    Strata {
        skin_tone: if dark { "dark" } else { "light" }.into(),
        gender: GENDERS[rng.gen_range(0..GENDERS.len())].into(),
        age_group: AGE_GROUPS[rng.gen_range(0..AGE_GROUPS.len())].into(),
        site: SITES[rng.gen_range(0..SITES.len())].into(),
    }
}

/// One sample whose patient is derived from the same seed.
pub fn generate_sample(config: &SynthConfig, seed: u64) -> Result<Sample> {
    config.validate()?;
    let patient_seed = child_seed(seed, 1);
    generate_inner(config, seed, patient_seed, format!("s{seed:016x}"), format!("p{patient_seed:016x}"))
}

/// `n` samples from `config.seed`, grouped `images_per_patient` to a patient.
pub fn generate_dataset(config: &SynthConfig, n: usize) -> Result<Vec<Sample>> {
    config.validate()?;
    (0..n)
        .map(|i| {
            let p = i / config.images_per_patient;
            let patient_seed = child_seed(config.seed, 2 * p as u64 + 1);
            let sample_seed = child_seed(config.seed, 2 * i as u64 + 2);
            generate_inner(config, sample_seed, patient_seed, format!("img{i:05}"), format!("pat{p:05}"))
        })
        .collect()
}

fn lesion_mask(config: &SynthConfig, rng: &mut ChaCha8Rng) -> Result<(BinaryMap, Vec<f32>)> {
    let n = config.image_size;
    let (lo, hi) = config.area_bounds();
    let nf = n as f64;
    for _ in 0..32 {
        let target = rng.gen_range(lo..=hi);
        let cy = nf / 2.0 + rng.gen_range(-0.12..0.12) * nf;
        let cx = nf / 2.0 + rng.gen_range(-0.12..0.12) * nf;
        let aspect: f64 = rng.gen_range(0.65..1.0);
        let orient: f64 = rng.gen_range(0.0..std::f64::consts::PI);
        let harmonics: Vec<(f64, f64)> = (2..6)
            .map(|k| (rng.gen_range(-1.0..1.0) / k as f64, rng.gen_range(0.0..std::f64::consts::TAU)))
            .collect();
        let norm: f64 = harmonics.iter().map(|h| h.0.abs()).sum::<f64>().max(1e-9);
        // normalized radial coordinate: rho <= s is inside the lesion scaled by s
        let rho: Vec<f64> = (0..n * n)
            .map(|i| {
                let (dy, dx) = ((i / n) as f64 + 0.5 - cy, (i % n) as f64 + 0.5 - cx);
                let theta = dy.atan2(dx);
                let (c, s) = ((theta - orient).cos(), (theta - orient).sin());
                let ell = aspect / (aspect * aspect * c * c + s * s).sqrt();
                let pert: f64 = harmonics
                    .iter()
                    .enumerate()
                    .map(|(k, &(a, ph))| a * ((k + 2) as f64 * theta + ph).cos())
                    .sum::<f64>()
                    / norm;
                let r = ell * (1.0 + config.lesion_irregularity * pert);
                (dy * dy + dx * dx).sqrt() / r.max(1e-6)
            })
            .collect();
        let mut sorted = rho.clone();
        sorted.sort_by(f64::total_cmp);
        let mut want = target;
        for _ in 0..8 {
            let s = sorted[want.min(n * n) - 1];
            let raw = BinaryMap::from_vec(n, n, rho.iter().map(|&r| r <= s).collect())?;
            let (labels, areas) = label_components(&raw);
            let (best, &area) = areas.iter().enumerate().skip(1).max_by_key(|&(l, &a)| (a, std::cmp::Reverse(l))).unwrap_or((0, &0));
            if (lo..=hi).contains(&area) {
                let mask = BinaryMap::from_vec(n, n, labels.iter().map(|&l| l == best && best != 0).collect())?;
                let radial = rho.iter().map(|&r| (r / s) as f32).collect();
                return Ok((mask, radial));
            }
            if area >= hi || want >= n * n {
                break;
            }
            want += lo.saturating_sub(area).max(1);
        }
    }
    Err(Error::config("lesion_area_range", "could not place a lesion of the requested area"))
}

fn generate_inner(config: &SynthConfig, seed: u64, patient_seed: u64, id: String, patient_id: String) -> Result<Sample> {
    let n = config.image_size;
    let strata = patient_strata(config.skin_tone_mode, patient_seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mask, radial) = lesion_mask(config, &mut rng)?;

    let skin: [f32; 3] = if strata.skin_tone == "dark" {
        [0.50, 0.34, 0.25]
    } else {
        [0.90, 0.72, 0.62]
    };
    let skin = skin.map(|c| (c + rng.gen_range(-0.04..0.04)).clamp(0.0, 1.0));
    let contrast = (config.contrast * rng.gen_range(0.8..1.2)).min(1.0) as f32;
    let lesion = [
        skin[0] * (1.0 - 0.9 * contrast),
        skin[1] * (1.0 - 1.05 * contrast).max(0.05),
        skin[2] * (1.0 - 1.15 * contrast).max(0.05),
    ];
    let skin_noise = draw::value_noise(n, n, 6, &mut rng);
    let lesion_noise = draw::value_noise(n, n, 12, &mut rng);
    let mut img = vec![0.0f32; n * n * 3];
    for i in 0..n * n {
        let (y, x) = ((i / n) as f32, (i % n) as f32);
        let r = ((y - n as f32 / 2.0).powi(2) + (x - n as f32 / 2.0).powi(2)).sqrt() / n as f32;
        let shade = 1.0 - 0.15 * r * r + 0.05 * skin_noise[i];
        // soft edge over roughly one pixel around rho = 1
        let t = if mask.data()[i] { 1.0 } else { ((1.06 - radial[i]) / 0.06).clamp(0.0, 1.0) * 0.5 };
        let core = 0.8 + 0.2 * radial[i].min(1.0);
        for c in 0..3 {
            let l = lesion[c] * core * (1.0 + 0.12 * lesion_noise[i]);
            img[i * 3 + c] = (skin[c] * shade) * (1.0 - t) + l * t;
        }
    }

    let mut artifact = BinaryMap::new(n, n);
    let hairs = rng.gen_range(config.hair_count_range.0..=config.hair_count_range.1);
    for _ in 0..hairs {
        draw::hair(&mut img, &mut artifact, n, &mut rng);
    }
    if config.ruler_on {
        draw::ruler(&mut img, &mut artifact, n, &mut rng);
    }
    let spots = rng.gen_range(config.specular_count_range.0..=config.specular_count_range.1);
    for _ in 0..spots {
        draw::specular(&mut img, &mut artifact, n, &mut rng);
    }
    let image = Tensor::from_vec(&[n, n, 3], img.into_iter().map(quantize).collect())?;
    Ok(Sample {
        id,
        patient_id,
        image,
        mask,
        artifact_mask: artifact,
        strata,
    })
}

/// Rounds to the nearest 8-bit level so images survive a PNG round trip exactly.
pub(crate) fn quantize(v: f32) -> f32 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8 as f32 / 255.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let c = SynthConfig::default();
        assert_eq!(generate_sample(&c, 9).unwrap(), generate_sample(&c, 9).unwrap());
        assert_ne!(generate_sample(&c, 9).unwrap().image, generate_sample(&c, 10).unwrap().image);
    }

    #[test]
    fn area_within_range() {
        let c = SynthConfig {
            image_size: 128,
            lesion_area_range: (0.1, 0.2),
            ..SynthConfig::default()
        };
        for seed in 0..10 {
            let s = generate_sample(&c, seed).unwrap();
            let a = s.mask.count();
            assert!((1638..=3277).contains(&a), "seed {seed}: {a}");
        }
    }

    #[test]
    fn single_component_and_ranges() {
        let c = SynthConfig {
            lesion_irregularity: 0.6,
            hair_count_range: (3, 6),
            ruler_on: true,
            ..SynthConfig::default()
        };
        for s in generate_dataset(&c, 12).unwrap() {
            let (_, areas) = label_components(&s.mask);
            assert_eq!(areas.len(), 2);
            assert!(s.image.data().iter().all(|v| (0.0..=1.0).contains(v)));
            assert!(!s.artifact_mask.is_all_background());
        }
    }

    #[test]
    fn no_hair_no_artifacts() {
        let c = SynthConfig {
            hair_count_range: (0, 0),
            specular_count_range: (0, 0),
            ..SynthConfig::default()
        };
        for seed in 0..5 {
            assert!(generate_sample(&c, seed).unwrap().artifact_mask.is_all_background());
        }
    }

    #[test]
    fn hair_darkens_marked_pixels() {
        let c = SynthConfig {
            hair_count_range: (4, 4),
            specular_count_range: (0, 0),
            ..SynthConfig::default()
        };
        let s = generate_sample(&c, 3).unwrap();
        let bare = generate_sample(&SynthConfig { hair_count_range: (0, 0), ..c.clone() }, 3).unwrap();
        let mut darker = 0;
        for (i, &a) in s.artifact_mask.data().iter().enumerate() {
            if a && s.image.data()[i * 3] < bare.image.data()[i * 3] {
                darker += 1;
            }
        }
        assert!(darker * 2 > s.artifact_mask.count());
    }

    #[test]
    fn patients_share_strata() {
        let c = SynthConfig {
            images_per_patient: 3,
            ..SynthConfig::default()
        };
        let d = generate_dataset(&c, 9).unwrap();
        for chunk in d.chunks(3) {
            assert!(chunk.iter().all(|s| s.patient_id == chunk[0].patient_id && s.strata == chunk[0].strata));
        }
        assert_ne!(d[0].patient_id, d[3].patient_id);
    }

    #[test]
    fn tone_modes() {
        let light = SynthConfig {
            skin_tone_mode: SkinToneMode::Light,
            ..SynthConfig::default()
        };
        assert!(generate_dataset(&light, 6).unwrap().iter().all(|s| s.strata.skin_tone == "light"));
        let dark = SynthConfig {
            skin_tone_mode: SkinToneMode::Dark,
            ..light
        };
        assert!(generate_dataset(&dark, 6).unwrap().iter().all(|s| s.strata.skin_tone == "dark"));
    }

    #[test]
    fn invalid_configs() {
        for c in [
            SynthConfig {
                lesion_area_range: (0.5, 0.2),
                ..SynthConfig::default()
            },
            SynthConfig {
                lesion_area_range: (0.0, 0.2),
                ..SynthConfig::default()
            },
            SynthConfig {
                lesion_area_range: (1e-6, 1e-5),
                image_size: 16,
                ..SynthConfig::default()
            },
            SynthConfig {
                hair_count_range: (3, 1),
                ..SynthConfig::default()
            },
        ] {
            assert!(matches!(generate_sample(&c, 0), Err(Error::Config { .. })), "{c:?}");
        }
    }
}
