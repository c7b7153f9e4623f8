//! Background filtering, patch labels, balanced sampling, multi-magnification
//! extraction and augmentation.

pub mod augment;
pub mod dump;
pub mod extract;
pub mod labels;
pub mod sampler;
pub mod tissue;

pub use augment::{
    apply_augment, apply_color, apply_color_in_place, orient, perturb_color, to_model_range, AugmentDraw, AugmentParams, Augmenter, ColorDraw, Orientation,
};
pub use dump::write_dump;
pub use extract::{extract_patch_group, parse_magnifications, Magnification, PatchGroup, PatchSpec, PATCH_SIZE};
pub use labels::{center_region, patch_hard_label, patch_soft_label, LabeledPatch};
pub use sampler::{cell_center, load_split, SampledSlide, TrainingDraw, TrainingSampler};
pub use tissue::{tissue_grid, TissueGrid, CELL_SIZE, DEFAULT_GRAY_THRESHOLD};
