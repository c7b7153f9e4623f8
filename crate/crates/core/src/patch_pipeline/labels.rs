use crate::patch_pipeline::extract::PatchGroup;
use crate::slide_store::AnnotationMask;

const HALF_REGION: i64 = 64;
const REGION_PIXELS: f64 = 128.0 * 128.0;

/// Center region `[x-64, x+64) x [y-64, y+64)` of a patch centered at `center`.
pub fn center_region(center: (i64, i64)) -> (i64, i64, i64, i64) {
    let (x, y) = center;
    (x - HALF_REGION, y - HALF_REGION, x + HALF_REGION, y + HALF_REGION)
}

/// 1 when at least one pixel of the center region is annotated as tumor.
pub fn patch_hard_label(mask: &AnnotationMask, center: (i64, i64)) -> u8 {
    let (x0, y0, x1, y1) = center_region(center);
    mask.any_in_rect(x0, y0, x1, y1) as u8
}

/// Fraction of tumor pixels in the center region.
pub fn patch_soft_label(mask: &AnnotationMask, center: (i64, i64)) -> f64 {
    let (x0, y0, x1, y1) = center_region(center);
    mask.count_in_rect(x0, y0, x1, y1) as f64 / REGION_PIXELS
}

/// A patch group with both label variants. `hard_label == 1` iff `soft_label > 0`.
#[derive(Clone, Debug)]
pub struct LabeledPatch {
    pub group: PatchGroup,
    pub hard_label: u8,
    pub soft_label: f64,
}

impl LabeledPatch {
    pub fn new(group: PatchGroup, mask: Option<&AnnotationMask>) -> Self {
        let (hard_label, soft_label) = match mask {
            Some(m) => (patch_hard_label(m, group.center), patch_soft_label(m, group.center)),
            None => (0, 0.0),
        };
        Self {
            group,
            hard_label,
            soft_label,
        }
    }
}
