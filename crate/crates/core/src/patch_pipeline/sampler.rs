//! Two-stage balanced sampling of training patches.
//!
//! Draw `i` uses its own generator `stream_rng(seed, i)`: pick the class with
//! probability 1/2, pick a slide holding that class uniformly, pick one of the
//! slide's eligible cells uniformly, then jitter the cell center.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::patch_pipeline::augment::{apply_augment, AugmentDraw, Augmenter};
use crate::patch_pipeline::extract::{extract_patch_group, Magnification, PatchSpec};
use crate::patch_pipeline::labels::{patch_hard_label, patch_soft_label, LabeledPatch};
use crate::patch_pipeline::tissue::{tissue_grid, TissueGrid, CELL_SIZE};
use crate::seeds::stream_rng;
use crate::slide_store::{AnnotationMask, DatasetManifest, SlideLabel, SlidePyramid, Split};

/// What the sampler needs to know about one slide.
#[derive(Debug)]
pub struct SampledSlide {
    pub slide_id: String,
    pub label: SlideLabel,
    pub exhaustive_annotations: bool,
    pub width: u32,
    pub height: u32,
    pub mask: Option<AnnotationMask>,
    pub tissue: TissueGrid,
    /// Pixels for patch extraction. Statistics-only samplers can leave it out.
    pub pyramid: Option<SlidePyramid>,
}

/// Opens every slide of `split` with its mask and tissue grid.
pub fn load_split(manifest: &DatasetManifest, split: Split, gray_threshold: f64) -> Result<Vec<SampledSlide>> {
    manifest
        .split(split)
        .map(|entry| {
            let pyramid = manifest.open_slide(entry)?;
            let mask = manifest.load_mask(entry)?;
            let tissue = tissue_grid(&pyramid, gray_threshold)?;
            Ok(SampledSlide {
                slide_id: entry.slide_id.clone(),
                label: entry.label,
                exhaustive_annotations: entry.exhaustive_annotations,
                width: pyramid.width(),
                height: pyramid.height(),
                mask,
                tissue,
                pyramid: Some(pyramid),
            })
        })
        .collect()
}

/// Location and labels of one draw, before pixels are read.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainingDraw {
    pub index: u64,
    pub class: u8,
    pub slide_index: usize,
    pub slide_id: String,
    pub cell: (usize, usize),
    pub center: (i64, i64),
    pub hard_label: u8,
    pub soft_label: f64,
}

pub fn cell_center(row: usize, col: usize) -> (i64, i64) {
    let half = CELL_SIZE as i64 / 2;
    (col as i64 * CELL_SIZE as i64 + half, row as i64 * CELL_SIZE as i64 + half)
}

/// A slide index with its eligible `(row, col)` cells.
type Pool = (usize, Vec<(usize, usize)>);

#[derive(Debug)]
pub struct TrainingSampler {
    slides: Vec<SampledSlide>,
    /// Per class (0 normal, 1 tumor): slides holding that class and their eligible cells.
    pools: [Vec<Pool>; 2],
    seed: u64,
    jitter_max: u32,
}

impl TrainingSampler {
    /// Fails with a sampling error when either class has no eligible slide.
    pub fn new(slides: Vec<SampledSlide>, seed: u64, jitter_max: u32) -> Result<Self> {
        let mut pools: [Vec<Pool>; 2] = [Vec::new(), Vec::new()];
        for (i, s) in slides.iter().enumerate() {
            let mut cells: [Vec<(usize, usize)>; 2] = [Vec::new(), Vec::new()];
            let normal_allowed = s.label == SlideLabel::Normal || s.exhaustive_annotations;
            for (r, c) in s.tissue.tissue_cells() {
                let hard = match &s.mask {
                    Some(m) => patch_hard_label(m, cell_center(r, c)),
                    None if s.label == SlideLabel::Tumor => continue,
                    None => 0,
                };
                if hard == 0 && !normal_allowed {
                    continue;
                }
                cells[hard as usize].push((r, c));
            }
            for (class, cells) in cells.into_iter().enumerate() {
                if !cells.is_empty() {
                    pools[class].push((i, cells));
                }
            }
        }
        for (class, name) in [(0, "normal"), (1, "tumor")] {
            if pools[class].is_empty() {
                return Err(Error::Sampling(format!("no slide holds eligible {name} cells")));
            }
        }
        Ok(Self {
            slides,
            pools,
            seed,
            jitter_max,
        })
    }

    pub fn slides(&self) -> &[SampledSlide] {
        &self.slides
    }

    /// Indices of the slides eligible for `class` (0 normal, 1 tumor).
    pub fn eligible_slides(&self, class: u8) -> Vec<usize> {
        self.pools[class as usize].iter().map(|(i, _)| *i).collect()
    }

    fn draw_with<R: Rng + ?Sized>(&self, index: u64, rng: &mut R) -> TrainingDraw {
        let class = rng.random_bool(0.5) as u8;
        let pool = &self.pools[class as usize];
        let (slide_index, cells) = &pool[rng.random_range(0..pool.len())];
        let cell = cells[rng.random_range(0..cells.len())];
        let slide = &self.slides[*slide_index];
        let j = self.jitter_max as i64;
        let (cx, cy) = cell_center(cell.0, cell.1);
        let dx = rng.random_range(-j..=j);
        let dy = rng.random_range(-j..=j);
        let center = (
            (cx + dx).clamp(0, slide.width as i64 - 1),
            (cy + dy).clamp(0, slide.height as i64 - 1),
        );
        let (hard_label, soft_label) = match &slide.mask {
            Some(m) => (patch_hard_label(m, center), patch_soft_label(m, center)),
            None => (0, 0.0),
        };
        TrainingDraw {
            index,
            class,
            slide_index: *slide_index,
            slide_id: slide.slide_id.clone(),
            cell,
            center,
            hard_label,
            soft_label,
        }
    }

    /// Draw number `index`; the same index always gives the same draw.
    pub fn draw(&self, index: u64) -> TrainingDraw {
        self.draw_with(index, &mut stream_rng(self.seed, index))
    }

    /// Draw `index` with pixels, augmented by `augmenter` from the same stream.
    pub fn sample(
        &self,
        index: u64,
        magnifications: &[Magnification],
        augmenter: Option<&Augmenter>,
    ) -> Result<(TrainingDraw, LabeledPatch, Option<AugmentDraw>)> {
        self.sample_with(index, magnifications, augmenter, true)
    }

    /// Like [`sample`](Self::sample), but the drawn orientation is recorded
    /// and not applied to the pixels when `oriented` is false. The random
    /// stream is consumed identically either way.
    pub fn sample_with(
        &self,
        index: u64,
        magnifications: &[Magnification],
        augmenter: Option<&Augmenter>,
        oriented: bool,
    ) -> Result<(TrainingDraw, LabeledPatch, Option<AugmentDraw>)> {
        let mut rng = stream_rng(self.seed, index);
        let draw = self.draw_with(index, &mut rng);
        let slide = &self.slides[draw.slide_index];
        let pyramid = slide
            .pyramid
            .as_ref()
            .ok_or_else(|| Error::Sampling(format!("slide '{}' has no pixels loaded", slide.slide_id)))?;
        let spec = PatchSpec {
            slide_id: slide.slide_id.clone(),
            center: draw.center,
            magnifications: magnifications.to_vec(),
        };
        let group = extract_patch_group(pyramid, &spec)?;
        let (group, aug) = match augmenter {
            Some(a) => {
                let d = a.draw(&mut rng);
                (apply_augment(group, &d, oriented)?, Some(d))
            }
            None => (group, None),
        };
        let patch = LabeledPatch {
            group,
            hard_label: draw.hard_label,
            soft_label: draw.soft_label,
        };
        Ok((draw, patch, aug))
    }
}
