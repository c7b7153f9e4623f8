//! Deterministic synthetic slides: textured tissue disks on a light background
//! with darker, bluish tumor disks placed inside the tissue.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Rgb8Image;
use crate::slide_store::mask::AnnotationMask;
use crate::slide_store::pyramid::SlidePyramid;

const PLACEMENT_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSlideConfig {
    pub slide_id: String,
    pub width: u32,
    pub height: u32,
    pub mpp: f64,
    pub tissue_blobs: u32,
    /// Inclusive `[min, max]` tissue disk radius in base pixels.
    pub tissue_radius: [u32; 2],
    pub tumor_count: u32,
    pub tumor_radius: [u32; 2],
    /// Minimum distance between a tumor's edge and the edge of its tissue disk.
    pub tumor_margin: u32,
    /// Minimum gap between tumor edges; at least 2 px is always enforced so
    /// that tumors never touch, even diagonally.
    pub min_separation: u32,
    pub background_gray: f32,
    pub tissue_color: [f32; 3],
    pub tumor_color: [f32; 3],
    /// Half-width of the uniform per-pixel texture noise.
    pub texture: f32,
    pub factors: Vec<u32>,
    pub seed: u64,
}

impl Default for SyntheticSlideConfig {
    fn default() -> Self {
        Self {
            slide_id: "synthetic".into(),
            width: 1024,
            height: 1024,
            mpp: 4.0,
            tissue_blobs: 2,
            tissue_radius: [300, 420],
            tumor_count: 0,
            tumor_radius: [100, 160],
            tumor_margin: 96,
            min_separation: 16,
            background_gray: 0.94,
            tissue_color: [0.86, 0.52, 0.72],
            tumor_color: [0.36, 0.20, 0.56],
            texture: 0.05,
            factors: vec![1, 2, 4],
            seed: 0,
        }
    }
}

/// A disk in base-pixel coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Disk {
    pub cx: f64,
    pub cy: f64,
    pub r: f64,
}

impl Disk {
    /// Whether the center of pixel `(x, y)` lies inside the disk.
    #[inline]
    pub fn contains_pixel(&self, x: u32, y: u32) -> bool {
        let dx = x as f64 + 0.5 - self.cx;
        let dy = y as f64 + 0.5 - self.cy;
        dx * dx + dy * dy <= self.r * self.r
    }
}

#[derive(Debug)]
pub struct SyntheticSlide {
    pub pyramid: SlidePyramid,
    pub mask: AnnotationMask,
    pub tissue: Vec<Disk>,
    pub tumors: Vec<Disk>,
}

impl SyntheticSlideConfig {
    fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.width == 0 || self.height == 0 || self.width % 128 != 0 || self.height % 128 != 0 {
            return bad(format!(
                "slide dimensions {}x{} must be positive multiples of 128",
                self.width, self.height
            ));
        }
        if self.tissue_blobs == 0 {
            return bad("at least one tissue blob is required".into());
        }
        for (name, [lo, hi]) in [("tissue", self.tissue_radius), ("tumor", self.tumor_radius)] {
            if lo == 0 || lo > hi {
                return bad(format!("{name} radius range [{lo}, {hi}] is invalid"));
            }
        }
        if !(self.mpp.is_finite() && self.mpp > 0.0) {
            return bad(format!("mpp must be positive, got {}", self.mpp));
        }
        if self.tumor_count > 0 {
            let largest_tumor = self.tumor_radius[1] as u64 + self.tumor_margin as u64;
            let tumor_area = self.tumor_count as u64 * (self.tumor_radius[1] as u64).pow(2);
            let tissue_area = self.tissue_blobs as u64 * (self.tissue_radius[0] as u64).pow(2);
            if largest_tumor >= self.tissue_radius[0] as u64 || tumor_area > tissue_area {
                return bad(format!(
                    "tumor area ({} disks up to radius {} with margin {}) exceeds tissue area \
                     ({} disks from radius {})",
                    self.tumor_count,
                    self.tumor_radius[1],
                    self.tumor_margin,
                    self.tissue_blobs,
                    self.tissue_radius[0]
                ));
            }
        }
        Ok(())
    }
}

fn place_tumors(config: &SyntheticSlideConfig, tissue: &[Disk], rng: &mut ChaCha8Rng) -> Result<Vec<Disk>> {
    let gap = config.min_separation.max(2) as f64;
    let margin = config.tumor_margin as f64;
    let (w, h) = (config.width as f64, config.height as f64);
    let mut tumors: Vec<Disk> = Vec::with_capacity(config.tumor_count as usize);
    for _ in 0..config.tumor_count {
        let mut placed = None;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let blob = tissue[rng.random_range(0..tissue.len())];
            let r = rng.random_range(config.tumor_radius[0]..=config.tumor_radius[1]) as f64;
            let reach = blob.r - r - margin;
            if reach <= 0.0 {
                continue;
            }
            let (ox, oy) = (rng.random_range(-reach..reach), rng.random_range(-reach..reach));
            if ox * ox + oy * oy > reach * reach {
                continue;
            }
            let cand = Disk {
                cx: blob.cx + ox,
                cy: blob.cy + oy,
                r,
            };
            let inside_slide = cand.cx - r - margin >= 0.0
                && cand.cy - r - margin >= 0.0
                && cand.cx + r + margin <= w
                && cand.cy + r + margin <= h;
            let separated = tumors.iter().all(|t| {
                let d = ((t.cx - cand.cx).powi(2) + (t.cy - cand.cy).powi(2)).sqrt();
                d >= t.r + cand.r + gap
            });
            if inside_slide && separated {
                placed = Some(cand);
                break;
            }
        }
        match placed {
            Some(d) => tumors.push(d),
            None => {
                return Err(Error::Config(format!(
                    "could not place tumor {} of {} inside the tissue after {PLACEMENT_ATTEMPTS} attempts",
                    tumors.len() + 1,
                    config.tumor_count
                )))
            }
        }
    }
    Ok(tumors)
}

fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Renders a slide and its exact tumor mask. Output depends only on `config`.
pub fn generate_synthetic_slide(config: &SyntheticSlideConfig) -> Result<SyntheticSlide> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (w, h) = (config.width as f64, config.height as f64);
    let tissue: Vec<Disk> = (0..config.tissue_blobs)
        .map(|_| Disk {
            cx: rng.random_range(0.25 * w..0.75 * w),
            cy: rng.random_range(0.25 * h..0.75 * h),
            r: rng.random_range(config.tissue_radius[0]..=config.tissue_radius[1]) as f64,
        })
        .collect();
    let tumors = place_tumors(config, &tissue, &mut rng)?;

    let amp = config.texture;
    let bg = [config.background_gray; 3];
    let mut base = Rgb8Image::filled(config.width, config.height, [0; 3]);
    for y in 0..config.height {
        for x in 0..config.width {
            let (color, scale) = if tumors.iter().any(|d| d.contains_pixel(x, y)) {
                // coarser, stronger grain for tumor nests
                (config.tumor_color, 2.0)
            } else if tissue.iter().any(|d| d.contains_pixel(x, y)) {
                (config.tissue_color, 1.0)
            } else {
                (bg, 0.5)
            };
            let mut px = [0u8; 3];
            for c in 0..3 {
                let noise = if amp > 0.0 {
                    rng.random_range(-amp..=amp) * scale
                } else {
                    0.0
                };
                px[c] = to_u8(color[c] + noise);
            }
            base.put(x, y, px);
        }
    }

    let mask = AnnotationMask::from_fn(config.slide_id.clone(), config.width, config.height, |x, y| {
        tumors.iter().any(|d| d.contains_pixel(x, y))
    });
    let pyramid = SlidePyramid::from_base(config.slide_id.clone(), base, config.mpp, &config.factors)?;
    Ok(SyntheticSlide {
        pyramid,
        mask,
        tissue,
        tumors,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::slide_store::mask::connected_regions;

    fn small(seed: u64, tumors: u32) -> SyntheticSlideConfig {
        SyntheticSlideConfig {
            width: 512,
            height: 512,
            tissue_blobs: 1,
            tissue_radius: [200, 230],
            tumor_count: tumors,
            tumor_radius: [20, 40],
            tumor_margin: 16,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let a = generate_synthetic_slide(&small(11, 2)).unwrap();
        let b = generate_synthetic_slide(&small(11, 2)).unwrap();
        assert_eq!(a.pyramid.level_image(1).unwrap(), b.pyramid.level_image(1).unwrap());
        assert_eq!(a.mask, b.mask);
        let c = generate_synthetic_slide(&small(12, 2)).unwrap();
        assert_ne!(a.pyramid.level_image(1).unwrap(), c.pyramid.level_image(1).unwrap());
    }

    #[test]
    fn zero_tumors_gives_empty_mask() {
        let s = generate_synthetic_slide(&small(3, 0)).unwrap();
        assert!(s.mask.is_empty());
    }

    #[test]
    fn separated_tumors_are_distinct_regions() {
        for seed in 0..5 {
            let s = generate_synthetic_slide(&small(seed, 3)).unwrap();
            assert_eq!(connected_regions(&s.mask, 1.0).len(), 3, "seed {seed}");
        }
    }

    #[test]
    fn mask_marks_exactly_tumor_disks() {
        let s = generate_synthetic_slide(&small(5, 2)).unwrap();
        for y in (0..512).step_by(3) {
            for x in (0..512).step_by(3) {
                let inside = s.tumors.iter().any(|d| d.contains_pixel(x, y));
                assert_eq!(s.mask.is_set(x, y), inside);
            }
        }
    }

    #[test]
    fn oversized_tumors_are_a_config_error() {
        let mut cfg = small(1, 1);
        cfg.tumor_radius = [190, 210];
        assert!(matches!(generate_synthetic_slide(&cfg), Err(Error::Config(_))));
        let mut cfg = small(1, 40);
        cfg.tumor_radius = [60, 60];
        assert!(matches!(generate_synthetic_slide(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn dimensions_must_be_multiples_of_128() {
        let mut cfg = small(1, 0);
        cfg.width = 500;
        assert!(matches!(generate_synthetic_slide(&cfg), Err(Error::Config(_))));
    }
}
