//! Slide pyramids, annotation masks, dataset manifests and the synthetic slide
//! generator used for end-to-end checks.
//!
//! A pyramid directory looks like:
//!
//! ```text
//! meta.json            {"slide_id", "width", "height", "mpp", "tile_size", "factors"}
//! L1/r{row}_c{col}.png base level tiles
//! L2/...               2x area-averaged level
//! L4/...               4x area-averaged level
//! ```
//!
//! Masks are stored as a run-length JSON sidecar (see [`AnnotationMask::save`]).

mod manifest;
mod mask;
mod pyramid;
mod synthetic;

pub use manifest::{DatasetManifest, ManifestEntry, SlideLabel, Split};
pub use mask::{connected_regions, AnnotationMask, RegionMap, SizeClass, TumorRegion};
pub use pyramid::{open_slide, LevelInfo, PyramidMeta, SlidePyramid, SUPPORTED_FACTORS};
pub use synthetic::{generate_synthetic_slide, Disk, SyntheticSlide, SyntheticSlideConfig};
