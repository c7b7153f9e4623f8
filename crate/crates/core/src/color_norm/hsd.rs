//! Hue-saturation-density color space.
//!
//! Per channel optical density is `D_v = -ln((I_v + 1) / 257)`. The pixel
//! density is the channel mean `D`, and chroma is
//! `c_x = D_R / D - 1`, `c_y = (D_G - D_B) / (sqrt(3) D)`.

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

const SQRT3: f64 = 1.732_050_807_568_877_2;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HsdPixel {
    pub cx: f64,
    pub cy: f64,
    pub d: f64,
}

fn density_table() -> &'static [f64; 256] {
    static TABLE: OnceLock<[f64; 256]> = OnceLock::new();
    TABLE.get_or_init(|| std::array::from_fn(|i| -((i as f64 + 1.0) / 257.0).ln()))
}

/// Optical density of one 8-bit channel value.
#[inline]
pub fn channel_density(v: u8) -> f64 {
    density_table()[v as usize]
}

#[inline]
pub fn rgb_to_hsd([r, g, b]: [u8; 3]) -> HsdPixel {
    let (dr, dg, db) = (channel_density(r), channel_density(g), channel_density(b));
    let d = (dr + dg + db) / 3.0;
    HsdPixel {
        cx: dr / d - 1.0,
        cy: (dg - db) / (SQRT3 * d),
        d,
    }
}

/// Channel densities of an HSD pixel.
#[inline]
pub fn hsd_to_densities(p: HsdPixel) -> [f64; 3] {
    let dr = p.d * (p.cx + 1.0);
    let rest = 0.5 * p.d * (2.0 - p.cx);
    let split = 0.5 * SQRT3 * p.d * p.cy;
    [dr, rest + split, rest - split]
}

/// Inverse of [`rgb_to_hsd`]. The second value is true when any channel fell
/// outside `[0, 255]` and was clamped.
#[inline]
pub fn hsd_to_rgb(p: HsdPixel) -> ([u8; 3], bool) {
    let mut clamped = false;
    let rgb = hsd_to_densities(p).map(|dv| {
        let v = (-dv).exp() * 257.0 - 1.0;
        if !(-0.5..255.5).contains(&v) {
            clamped = true;
        }
        // NaN clamps to 0 through the saturating cast
        v.clamp(0.0, 255.0).round() as u8
    });
    (rgb, clamped)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mid_gray() {
        let p = rgb_to_hsd([127, 127, 127]);
        assert_eq!((p.cx, p.cy), (0.0, 0.0));
        assert!((p.d - (257.0f64 / 128.0).ln()).abs() < 1e-15);
        assert!((p.d - 0.6971).abs() < 1e-4);
    }

    #[test]
    fn pure_red() {
        let p = rgb_to_hsd([255, 0, 0]);
        let dr = -(256.0f64 / 257.0).ln();
        let dg = 257.0f64.ln();
        let d = (dr + 2.0 * dg) / 3.0;
        assert!((p.d - d).abs() < 1e-14);
        assert!((p.d - 3.7005).abs() < 5e-4);
        assert!((p.cx - (-0.99895)).abs() < 1e-5);
        assert_eq!(p.cy, 0.0);
    }

    #[test]
    fn gray_has_zero_chroma() {
        for v in 0..=255u8 {
            let p = rgb_to_hsd([v, v, v]);
            assert!(p.cx.abs() < 1e-15 && p.cy.abs() < 1e-15);
            assert!(p.d > 0.0);
        }
    }

    #[test]
    fn inverse_of_mid_gray() {
        let (rgb, clamped) = hsd_to_rgb(HsdPixel {
            cx: 0.0,
            cy: 0.0,
            d: (257.0f64 / 128.0).ln(),
        });
        assert_eq!(rgb, [127; 3]);
        assert!(!clamped);
    }

    #[test]
    fn vanishing_density_is_white() {
        let (rgb, _) = hsd_to_rgb(HsdPixel { cx: 0.0, cy: 0.0, d: 1e-300 });
        assert_eq!(rgb, [255; 3]);
        let (rgb, clamped) = hsd_to_rgb(HsdPixel { cx: 0.0, cy: 0.0, d: -0.5 });
        assert_eq!(rgb, [255; 3]);
        assert!(clamped);
    }

    #[test]
    fn lattice_round_trip() {
        for r in (0..=255u16).step_by(8) {
            for g in (0..=255u16).step_by(8) {
                for b in (0..=255u16).step_by(8) {
                    let x = [r as u8, g as u8, b as u8];
                    assert_eq!(hsd_to_rgb(rgb_to_hsd(x)).0, x);
                }
            }
        }
    }
}
