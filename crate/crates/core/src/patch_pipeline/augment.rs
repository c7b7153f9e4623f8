//! Dihedral orientations and color perturbation.
//!
//! Color perturbation applies, in order: brightness offset, saturation scale
//! and hue shift (both in HSV), per-channel contrast around the patch mean,
//! then a final clip to `[0, 1]`.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Patch;
use crate::patch_pipeline::extract::PatchGroup;

/// One of the 8 symmetries of the square: optional left-right flip, then
/// `rotations` quarter turns counterclockwise.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Orientation {
    pub rotations: u8,
    pub flip: bool,
}

impl Orientation {
    pub const IDENTITY: Orientation = Orientation {
        rotations: 0,
        flip: false,
    };

    /// The four rotations, then the same four after a flip.
    pub const ALL: [Orientation; 8] = [
        Orientation { rotations: 0, flip: false },
        Orientation { rotations: 1, flip: false },
        Orientation { rotations: 2, flip: false },
        Orientation { rotations: 3, flip: false },
        Orientation { rotations: 0, flip: true },
        Orientation { rotations: 1, flip: true },
        Orientation { rotations: 2, flip: true },
        Orientation { rotations: 3, flip: true },
    ];

    /// Source pixel read for output pixel `(x, y)` of an `n x n` patch.
    #[inline]
    fn source(self, x: u32, y: u32, n: u32) -> (u32, u32) {
        let m = n - 1;
        // undo the rotation (applied last); a counterclockwise quarter turn reads in(m - y, x)
        let (sx, sy) = match self.rotations % 4 {
            0 => (x, y),
            1 => (m - y, x),
            2 => (m - x, m - y),
            _ => (y, m - x),
        };
        if self.flip {
            (m - sx, sy)
        } else {
            (sx, sy)
        }
    }
}

/// Applies `o` to a square patch.
pub fn orient(patch: &Patch, o: Orientation) -> Result<Patch> {
    if !patch.is_square() {
        return Err(Error::Argument(format!(
            "orientation needs a square patch, got {}x{}",
            patch.width(),
            patch.height()
        )));
    }
    if o == Orientation::IDENTITY {
        return Ok(patch.clone());
    }
    let n = patch.width();
    let src = patch.as_raw();
    let mut out = patch.clone();
    let dst = out.as_raw_mut();
    // the source index is affine in x along an output row
    let index = |x: u32, y: u32| {
        let (sx, sy) = o.source(x, y, n);
        (sy * n + sx) as i64 * 3
    };
    for y in 0..n {
        let start = index(0, y);
        let step = if n > 1 { index(1, y) - start } else { 0 };
        let row = &mut dst[(y * n * 3) as usize..((y + 1) * n * 3) as usize];
        for (x, px) in row.chunks_exact_mut(3).enumerate() {
            let k = (start + step * x as i64) as usize;
            px.copy_from_slice(&src[k..k + 3]);
        }
    }
    Ok(out)
}

/// Augmentation magnitudes. Jitter is in base pixels.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentParams {
    pub brightness_delta_max: f32,
    pub saturation_delta_max: f32,
    pub hue_delta_max: f32,
    pub contrast_delta_max: f32,
    pub jitter_max: u32,
}

impl Default for AugmentParams {
    fn default() -> Self {
        Self {
            brightness_delta_max: 64.0 / 255.0,
            saturation_delta_max: 0.25,
            hue_delta_max: 0.04,
            contrast_delta_max: 0.75,
            jitter_max: 8,
        }
    }
}

impl AugmentParams {
    pub fn validate(&self) -> Result<()> {
        let all = [
            self.brightness_delta_max,
            self.saturation_delta_max,
            self.hue_delta_max,
            self.contrast_delta_max,
        ];
        if all.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::Argument(format!("augmentation maxima must be non-negative: {self:?}")));
        }
        if self.hue_delta_max > 0.5 {
            return Err(Error::Argument(format!(
                "hue delta {} exceeds half the hue circle",
                self.hue_delta_max
            )));
        }
        Ok(())
    }
}

/// Concrete color perturbation: brightness offset, saturation factor, hue
/// shift (fraction of the hue circle) and contrast factor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorDraw {
    pub brightness: f32,
    pub saturation: f32,
    pub hue: f32,
    pub contrast: f32,
}

impl ColorDraw {
    pub const IDENTITY: ColorDraw = ColorDraw {
        brightness: 0.0,
        saturation: 1.0,
        hue: 0.0,
        contrast: 1.0,
    };

    pub fn sample<R: Rng + ?Sized>(rng: &mut R, p: &AugmentParams) -> Self {
        fn sym<R: Rng + ?Sized>(rng: &mut R, max: f32) -> f32 {
            if max > 0.0 {
                rng.random_range(-max..=max)
            } else {
                0.0
            }
        }
        ColorDraw {
            brightness: sym(rng, p.brightness_delta_max),
            saturation: 1.0 + sym(rng, p.saturation_delta_max),
            hue: sym(rng, p.hue_delta_max),
            contrast: 1.0 + sym(rng, p.contrast_delta_max),
        }
    }
}

#[cfg(test)]
fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let delta = max - min;
    let s = if max > 0.0 { delta / max } else { 0.0 };
    let h = if delta <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / delta).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / delta + 2.0) / 6.0
    } else {
        ((r - g) / delta + 4.0) / 6.0
    };
    [h, s, max]
}

#[cfg(test)]
fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as i32).min(5);
    let f = h6 - sector as f32;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Saturation scale and hue shift (in sixths of the circle) through HSV,
/// over planar channel buffers. Same result as `hsv_to_rgb(rgb_to_hsv(px))`
/// with the adjustments applied in between. Branch-free so the loop vectorizes.
// compare-selects vectorize more tightly than f32::min/max; patch values are finite
#[inline(always)]
fn max(a: f32, b: f32) -> f32 {
    if a > b {
        a
    } else {
        b
    }
}

#[inline(always)]
fn min(a: f32, b: f32) -> f32 {
    if a < b {
        a
    } else {
        b
    }
}

#[inline(always)]
fn shift_hsv_planar(rr: &mut [f32], gg: &mut [f32], bb: &mut [f32], sat: f32, hue6: f32) {
    let n = rr.len().min(gg.len()).min(bb.len());
    let (rr, gg, bb) = (&mut rr[..n], &mut gg[..n], &mut bb[..n]);
    for i in 0..n {
        let (r, g, b) = (rr[i], gg[i], bb[i]);
        let v = max(max(r, g), b);
        let delta = v - min(min(r, g), b);
        let chromatic = delta > 0.0 && v > 0.0;
        let s = if chromatic { (delta / v * sat).clamp(0.0, 1.0) } else { 0.0 };
        let inv = if chromatic { 1.0 / delta } else { 0.0 };
        let hr = (g - b) * inv;
        let hg = (b - r) * inv + 2.0;
        let hb = (r - g) * inv + 4.0;
        let mut h = if v == r { hr } else if v == g { hg } else { hb } + hue6;
        // |hue6| < 3, so one wrap each way suffices
        h += if h < 0.0 { 6.0 } else { 0.0 };
        h -= if h >= 6.0 { 6.0 } else { 0.0 };
        let vs = v * s;
        let channel = |n: f32| {
            let mut k = n + h;
            k -= if k >= 6.0 { 6.0 } else { 0.0 };
            v - vs * min(max(min(k, 4.0 - k), 0.0), 1.0)
        };
        rr[i] = channel(5.0);
        gg[i] = channel(3.0);
        bb[i] = channel(1.0);
    }
}

#[cfg(test)]
fn shift_hsv([r, g, b]: [f32; 3], sat: f32, hue6: f32) -> [f32; 3] {
    let (mut rr, mut gg, mut bb) = ([r], [g], [b]);
    shift_hsv_planar(&mut rr, &mut gg, &mut bb, sat, hue6);
    [rr[0], gg[0], bb[0]]
}

const PLANAR_BLOCK: usize = 256;

/// Applies a fixed color draw. Identity steps are skipped, so
/// `ColorDraw::IDENTITY` leaves `[0, 1]` input bit-for-bit unchanged.
pub fn apply_color(patch: &Patch, d: &ColorDraw) -> Patch {
    let mut out = patch.clone();
    apply_color_in_place(&mut out, d);
    out
}

/// [`apply_color`] without the copy.
pub fn apply_color_in_place(patch: &mut Patch, d: &ColorDraw) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the feature was detected at runtime.
        unsafe { color_avx2(patch.as_raw_mut(), d) };
        return;
    }
    color_kernel(patch.as_raw_mut(), d);
}

// Same code compiled for wider vectors; no FMA contraction, so bit-identical.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn color_avx2(data: &mut [f32], d: &ColorDraw) {
    color_kernel(data, d)
}

#[inline(always)]
fn color_kernel(data: &mut [f32], d: &ColorDraw) {
    let hsv = d.saturation != 1.0 || d.hue != 0.0;
    if hsv {
        let hue6 = 6.0 * d.hue;
        let mut planes = [[0.0f32; PLANAR_BLOCK]; 3];
        for chunk in data.chunks_mut(3 * PLANAR_BLOCK) {
            let m = chunk.len() / 3;
            for (i, px) in chunk.chunks_exact(3).enumerate() {
                planes[0][i] = px[0] + d.brightness;
                planes[1][i] = px[1] + d.brightness;
                planes[2][i] = px[2] + d.brightness;
            }
            let [rr, gg, bb] = &mut planes;
            shift_hsv_planar(&mut rr[..m], &mut gg[..m], &mut bb[..m], d.saturation, hue6);
            for (i, px) in chunk.chunks_exact_mut(3).enumerate() {
                px[0] = planes[0][i];
                px[1] = planes[1][i];
                px[2] = planes[2][i];
            }
        }
    } else if d.brightness != 0.0 {
        data.iter_mut().for_each(|v| *v += d.brightness);
    }
    if d.contrast != 1.0 {
        let sum = channel_sums(data);
        let n = (data.len() / 3).max(1) as f64;
        let mean = sum.map(|m| (m / n) as f32);
        let lane_mean: [f32; 48] = std::array::from_fn(|j| mean[j % 3]);
        for block in data.chunks_mut(48) {
            for (v, &m) in block.iter_mut().zip(&lane_mean) {
                *v = (m + (*v - m) * d.contrast).clamp(0.0, 1.0);
            }
        }
    } else {
        data.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    }
}

/// Per-channel f64 sums of interleaved RGB values: 16 pixels of partial
/// sums side by side, reduced in lane order, then the leftover pixels.
#[inline(always)]
fn channel_sums(data: &[f32]) -> [f64; 3] {
    const LANES: usize = 48;
    let mut acc = [0.0f64; LANES];
    let mut blocks = data.chunks_exact(LANES);
    for block in &mut blocks {
        for (a, &v) in acc.iter_mut().zip(block) {
            *a += v as f64;
        }
    }
    let mut sum = [0.0f64; 3];
    for (j, a) in acc.iter().enumerate() {
        sum[j % 3] += a;
    }
    for px in blocks.remainder().chunks_exact(3) {
        for c in 0..3 {
            sum[c] += px[c] as f64;
        }
    }
    sum
}

/// Draws a color perturbation from `rng` and applies it.
pub fn perturb_color<R: Rng + ?Sized>(patch: &Patch, rng: &mut R, params: &AugmentParams) -> (Patch, ColorDraw) {
    let draw = ColorDraw::sample(rng, params);
    (apply_color(patch, &draw), draw)
}

/// Clips to `[0, 1]` and rescales to `[-1, 1]`.
pub fn to_model_range(patch: &Patch) -> Patch {
    let mut out = patch.clone();
    out.as_raw_mut()
        .iter_mut()
        .for_each(|v| *v = v.clamp(0.0, 1.0) * 2.0 - 1.0);
    out
}

/// What was applied to one training patch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraw {
    pub orientation: Orientation,
    pub color: ColorDraw,
}

/// Training-time augmentation: a random orientation plus a random color
/// perturbation, shared by every magnification of a group so members stay aligned.
#[derive(Clone, Copy, Debug, Default)]
pub struct Augmenter {
    pub params: AugmentParams,
}

impl Augmenter {
    pub fn new(params: AugmentParams) -> Result<Self> {
        params.validate()?;
        Ok(Self { params })
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> AugmentDraw {
        let orientation = Orientation::ALL[rng.random_range(0..8)];
        let color = ColorDraw::sample(rng, &self.params);
        AugmentDraw { orientation, color }
    }

    pub fn augment<R: Rng + ?Sized>(&self, group: &PatchGroup, rng: &mut R) -> Result<(PatchGroup, AugmentDraw)> {
        let d = self.draw(rng);
        Ok((apply_augment(group.clone(), &d, true)?, d))
    }
}

/// Applies a recorded draw. With `oriented == false` only the color part is
/// applied, for consumers whose features ignore pixel arrangement.
pub fn apply_augment(mut group: PatchGroup, d: &AugmentDraw, oriented: bool) -> Result<PatchGroup> {
    for (_, p) in group.members.iter_mut() {
        if oriented {
            *p = orient(p, d.orientation)?;
        }
        apply_color_in_place(p, &d.color);
    }
    Ok(group)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    fn asymmetric(n: u32) -> Patch {
        Patch::from_fn(n, n, |x, y| [x as f32 / n as f32, y as f32 / n as f32, ((x * 3 + y * 5) % 7) as f32 / 7.0])
    }

    #[test]
    fn identity_orientation() {
        let p = asymmetric(5);
        assert_eq!(orient(&p, Orientation::IDENTITY).unwrap(), p);
    }

    #[test]
    fn quarter_turn_is_counterclockwise() {
        // top-right corner moves to the top-left
        let p = asymmetric(4);
        let r = orient(&p, Orientation { rotations: 1, flip: false }).unwrap();
        assert_eq!(r.get(0, 0), p.get(3, 0));
        assert_eq!(r.get(0, 3), p.get(0, 0));
        let f = orient(&p, Orientation { rotations: 0, flip: true }).unwrap();
        assert_eq!(f.get(0, 1), p.get(3, 1));
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let p = asymmetric(6);
        let q = Orientation { rotations: 1, flip: false };
        let mut r = p.clone();
        for _ in 0..4 {
            r = orient(&r, q).unwrap();
        }
        assert_eq!(r, p);
    }

    #[test]
    fn symmetric_patch_is_invariant() {
        let n = 9;
        let p = Patch::from_fn(n, n, |x, y| {
            let (dx, dy) = (x as i32 - 4, y as i32 - 4);
            [(dx * dx + dy * dy) as f32 / 32.0; 3]
        });
        for o in Orientation::ALL {
            assert_eq!(orient(&p, o).unwrap(), p);
        }
    }

    #[test]
    fn eight_orientations_are_distinct_and_closed() {
        let p = asymmetric(7);
        let outs: Vec<Patch> = Orientation::ALL.iter().map(|&o| orient(&p, o).unwrap()).collect();
        for i in 0..8 {
            for j in 0..i {
                assert_ne!(outs[i], outs[j], "{i} vs {j}");
            }
        }
        for a in Orientation::ALL {
            for b in Orientation::ALL {
                let composed = orient(&orient(&p, a).unwrap(), b).unwrap();
                assert!(outs.contains(&composed));
            }
        }
    }

    #[test]
    fn non_square_is_rejected() {
        let p = Patch::filled(3, 4, [0.0; 3]);
        assert!(matches!(orient(&p, Orientation::ALL[1]), Err(Error::Argument(_))));
    }

    #[test]
    fn identity_color_draw_is_exact() {
        let p = asymmetric(11);
        assert_eq!(apply_color(&p, &ColorDraw::IDENTITY), p);
    }

    #[test]
    fn brightness_on_gray() {
        let p = Patch::filled(4, 4, [0.5; 3]);
        let d = ColorDraw {
            brightness: 0.251,
            ..ColorDraw::IDENTITY
        };
        let out = apply_color(&p, &d);
        assert!(out.as_raw().iter().all(|&v| (v - 0.751).abs() < 1e-6));
    }

    #[test]
    fn hue_shift_rotates_primaries() {
        let p = Patch::filled(1, 1, [1.0, 0.0, 0.0]);
        let d = ColorDraw {
            hue: 1.0 / 3.0,
            ..ColorDraw::IDENTITY
        };
        let out = apply_color(&p, &d).get(0, 0);
        assert!((out[0] - 0.0).abs() < 1e-5 && (out[1] - 1.0).abs() < 1e-5 && out[2].abs() < 1e-5);
    }

    #[test]
    fn zero_saturation_gives_gray() {
        let p = Patch::filled(1, 1, [0.8, 0.4, 0.2]);
        let d = ColorDraw {
            saturation: 0.0,
            ..ColorDraw::IDENTITY
        };
        assert_eq!(apply_color(&p, &d).get(0, 0), [0.8; 3]);
    }

    #[test]
    fn contrast_scales_about_channel_mean() {
        let p = Patch::from_fn(2, 1, |x, _| [x as f32 * 0.5 + 0.25; 3]);
        let d = ColorDraw {
            contrast: 0.5,
            ..ColorDraw::IDENTITY
        };
        let out = apply_color(&p, &d);
        assert!((out.get(0, 0)[0] - 0.375).abs() < 1e-6);
        assert!((out.get(1, 0)[0] - 0.625).abs() < 1e-6);
    }

    #[test]
    fn model_range_endpoints() {
        let p = Patch::from_raw(1, 1, vec![0.0, 1.0, 0.5]).unwrap();
        assert_eq!(to_model_range(&p).as_raw(), &[-1.0, 1.0, 0.0]);
        let q = Patch::from_raw(1, 1, vec![-0.3, 1.7, 0.25]).unwrap();
        assert_eq!(to_model_range(&q).as_raw(), &[-1.0, 1.0, -0.5]);
    }

    #[test]
    fn draws_stay_within_maxima() {
        let params = AugmentParams::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(4);
        for _ in 0..1000 {
            let d = ColorDraw::sample(&mut rng, &params);
            assert!(d.brightness.abs() <= 64.0 / 255.0);
            assert!((0.75..=1.25).contains(&d.saturation));
            assert!(d.hue.abs() <= 0.04);
            assert!((0.25..=1.75).contains(&d.contrast));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(128))]

        #[test]
        fn perturbed_output_is_clipped(seed in any::<u64>(), base in 0.0f32..=1.0) {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let p = Patch::from_fn(8, 8, |x, y| [base, (x as f32 / 8.0), (y as f32 / 8.0)]);
            let (out, _) = perturb_color(&p, &mut rng, &AugmentParams::default());
            prop_assert!(out.as_raw().iter().all(|v| (0.0..=1.0).contains(v)));
        }

        #[test]
        fn fused_hsv_matches_two_step(
            r in -0.3f32..=1.3, g in -0.3f32..=1.3, b in -0.3f32..=1.3, sat in 0.75f32..=1.25, hue in -0.04f32..=0.04,
        ) {
            let fused = shift_hsv([r, g, b], sat, 6.0 * hue);
            let [h, s, v] = rgb_to_hsv([r, g, b]);
            let two_step = hsv_to_rgb([h + hue, (s * sat).clamp(0.0, 1.0), v]);
            for (x, y) in fused.iter().zip(two_step) {
                prop_assert!((x - y).abs() < 1e-5, "{fused:?} vs {two_step:?}");
            }
        }

        #[test]
        fn hsv_round_trip(r in 0.0f32..=1.0, g in 0.0f32..=1.0, b in 0.0f32..=1.0) {
            let back = hsv_to_rgb(rgb_to_hsv([r, g, b]));
            for (x, y) in back.iter().zip([r, g, b]) {
                prop_assert!((x - y).abs() < 1e-5);
            }
        }
    }
}
