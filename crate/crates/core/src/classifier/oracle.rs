use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::classifier::PatchClassifier;
use crate::error::{Error, Result};
use crate::patch_pipeline::{patch_soft_label, Magnification, PatchGroup};
use crate::seeds::{derive_seed, derive_seed_u64};
use crate::slide_store::AnnotationMask;

/// Sharpening exponent applied to the soft label.
pub const ORACLE_GAMMA: f64 = 0.25;

/// Reads the ground truth instead of pixels:
/// `p = clamp(soft_label^0.25 + noise, 0, 1)` with Gaussian noise of
/// standard deviation `noise_sigma`, keyed by `(seed, slide, center)`.
pub struct OracleClassifier {
    /// `None` marks a known slide without tumor.
    masks: HashMap<String, Option<AnnotationMask>>,
    noise: Option<Normal<f64>>,
    seed: u64,
    mags: Vec<Magnification>,
}

impl OracleClassifier {
    pub fn new(masks: HashMap<String, Option<AnnotationMask>>, noise_sigma: f64, seed: u64) -> Result<Self> {
        if !(noise_sigma.is_finite() && noise_sigma >= 0.0) {
            return Err(Error::Argument(format!("noise sigma must be non-negative, got {noise_sigma}")));
        }
        let noise = (noise_sigma > 0.0).then(|| Normal::new(0.0, noise_sigma).expect("valid sigma"));
        Ok(Self {
            masks,
            noise,
            seed,
            mags: vec![Magnification::X40],
        })
    }

    /// Declares which patch magnifications inference should extract. The
    /// oracle itself only looks at the patch center.
    pub fn with_magnifications(mut self, mags: Vec<Magnification>) -> Self {
        self.mags = mags;
        self
    }

    pub fn oracle_predict(&self, slide_id: &str, center: (i64, i64)) -> Result<f32> {
        let mask = self
            .masks
            .get(slide_id)
            .ok_or_else(|| Error::UnknownSlide(slide_id.to_string()))?;
        let soft = mask.as_ref().map_or(0.0, |m| patch_soft_label(m, center));
        let mut p = soft.powf(ORACLE_GAMMA);
        if let Some(noise) = &self.noise {
            let key = derive_seed_u64(derive_seed(self.seed, &["oracle", slide_id]), &[center.0 as u64, center.1 as u64]);
            p += noise.sample(&mut ChaCha8Rng::seed_from_u64(key));
        }
        Ok(p.clamp(0.0, 1.0) as f32)
    }
}

impl PatchClassifier for OracleClassifier {
    fn magnifications(&self) -> &[Magnification] {
        &self.mags
    }

    fn predict(&self, group: &PatchGroup) -> Result<f32> {
        self.oracle_predict(&group.slide_id, group.center)
    }
}
