//! Stain normalization in HSD space.
//!
//! Each slide's tissue pixels are summarized by a Gaussian over chroma
//! `(c_x, c_y)` and the first two moments of density `D`. Normalization moves
//! chroma with the Monge-Kantorovitch map
//! `c' = T (c - mu) + mu_R`, `T = S^-1/2 (S^1/2 S_R S^1/2)^1/2 S^-1/2`,
//! and matches the density mean and variance with a 1-D affine map.

pub mod hsd;
pub mod linalg;

use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::Rgb8Image;
use crate::patch_pipeline::tissue::{TissueGrid, CELL_SIZE};
use crate::slide_store::SlidePyramid;

pub use hsd::{hsd_to_rgb, rgb_to_hsd, HsdPixel};
pub use linalg::Sym2;

/// Eigenvalue floor applied to near-singular covariances before square roots.
pub const EIGEN_FLOOR: f64 = 1e-8;
/// Lower bound on the source density variance in the intensity map.
pub const VAR_EPS: f64 = 1e-12;

const CHUNK: usize = 4096;

/// Gaussian stain statistics of one slide.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ColorStats {
    pub mu: [f64; 2],
    /// Chroma covariance, row-major.
    pub sigma: [f64; 4],
    pub d_mean: f64,
    pub d_var: f64,
    pub pixel_count: u64,
    /// Set when the chroma covariance is singular (for example a constant sample).
    #[serde(default)]
    pub degenerate: bool,
}

impl ColorStats {
    pub fn sigma_sym(&self) -> Sym2 {
        Sym2::from_matrix([[self.sigma[0], self.sigma[1]], [self.sigma[2], self.sigma[3]]])
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self).map_err(|e| Error::json(path, e))?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let s: ColorStats = serde_json::from_str(&text).map_err(|e| Error::json(path, e))?;
        let ok = s.mu.iter().chain(&s.sigma).all(|v| v.is_finite())
            && s.d_mean.is_finite()
            && s.d_var.is_finite()
            && s.d_var >= 0.0
            && s.sigma[1] == s.sigma[2];
        if !ok {
            return Err(Error::Format(format!("{}: invalid color statistics", path.display())));
        }
        Ok(s)
    }
}

/// Pairwise sum in a fixed tree order, independent of thread count.
fn pairwise<const N: usize>(parts: &[[f64; N]]) -> [f64; N] {
    match parts.len() {
        0 => [0.0; N],
        1 => parts[0],
        n => {
            let (l, r) = parts.split_at(n / 2);
            let (a, b) = (pairwise(l), pairwise(r));
            std::array::from_fn(|i| a[i] + b[i])
        }
    }
}

/// Unbiased mean and covariance of chroma plus density moments.
pub fn fit_hsd_stats(pixels: &[HsdPixel]) -> Result<ColorStats> {
    let n = pixels.len();
    if n < 2 {
        return Err(Error::Argument(format!("color statistics need at least 2 pixels, got {n}")));
    }
    // shift by the first pixel so a constant sample has an exact mean
    let o = pixels[0];
    let sums: Vec<[f64; 3]> = pixels
        .par_chunks(CHUNK)
        .map(|c| c.iter().fold([0.0; 3], |s, p| [s[0] + (p.cx - o.cx), s[1] + (p.cy - o.cy), s[2] + (p.d - o.d)]))
        .collect();
    let s = pairwise(&sums);
    let nf = n as f64;
    let (mx, my, md) = (o.cx + s[0] / nf, o.cy + s[1] / nf, o.d + s[2] / nf);
    let centered: Vec<[f64; 4]> = pixels
        .par_chunks(CHUNK)
        .map(|c| {
            c.iter().fold([0.0; 4], |s, p| {
                let (x, y, d) = (p.cx - mx, p.cy - my, p.d - md);
                [s[0] + x * x, s[1] + x * y, s[2] + y * y, s[3] + d * d]
            })
        })
        .collect();
    let m = pairwise(&centered);
    let k = nf - 1.0;
    let sigma = Sym2::new(m[0] / k, m[1] / k, m[2] / k);
    let degenerate = sigma.eigenvalues()[0] <= EIGEN_FLOOR * sigma.trace().max(f64::MIN_POSITIVE);
    Ok(ColorStats {
        mu: [mx, my],
        sigma: sigma.row_major(),
        d_mean: md,
        d_var: m[3] / k,
        pixel_count: n as u64,
        degenerate,
    })
}

pub fn fit_color_stats(pixels: &[[u8; 3]]) -> Result<ColorStats> {
    let hsd: Vec<HsdPixel> = pixels.par_iter().map(|&p| rgb_to_hsd(p)).collect();
    fit_hsd_stats(&hsd)
}

/// Base-resolution pixels of every tissue cell, in row-major cell order.
pub fn tissue_pixels(slide: &SlidePyramid, grid: &TissueGrid) -> Result<Vec<[u8; 3]>> {
    let cell = CELL_SIZE as i64;
    let (w, h) = (slide.width() as i64, slide.height() as i64);
    let mut out = Vec::new();
    for (r, c) in grid.tissue_cells() {
        let (x0, y0) = (c as i64 * cell, r as i64 * cell);
        // clip to the slide so padding never enters the statistics
        let (cw, ch) = ((w - x0).min(cell), (h - y0).min(cell));
        let region = slide.read_region_rgb8(1, x0, y0, cw, ch)?;
        out.extend(region.pixels());
    }
    Ok(out)
}

fn floor_eigenvalues(m: Sym2, name: &str) -> Result<Sym2> {
    if !m.is_finite() {
        return Err(Error::Numeric(format!("{name} has non-finite entries")));
    }
    let [l0, l1] = m.eigenvalues();
    let scale = l1.abs().max(1.0);
    if l0 < -1e-10 * scale {
        return Err(Error::Numeric(format!(
            "{name} is not positive semi-definite (eigenvalues {l0:e}, {l1:e})"
        )));
    }
    if l0 < EIGEN_FLOOR {
        Ok(m.map_eigenvalues(|l| l.max(EIGEN_FLOOR)))
    } else {
        Ok(m)
    }
}

/// Monge-Kantorovitch map carrying covariance `sigma` onto `sigma_r`:
/// the symmetric positive definite `T` with `T sigma T^T = sigma_r`.
///
/// Eigenvalues below [`EIGEN_FLOOR`] are raised to it first; well-conditioned
/// inputs pass through untouched.
pub fn mk_transform(sigma: Sym2, sigma_r: Sym2) -> Result<Sym2> {
    let s = floor_eigenvalues(sigma, "source covariance")?;
    let r = floor_eigenvalues(sigma_r, "reference covariance")?;
    let root = s.sqrt();
    let inv_root = root.inverse();
    let middle = root.sandwich(r).sqrt();
    let t = inv_root.sandwich(middle);
    if !t.is_finite() {
        return Err(Error::Numeric("transport map is not finite".into()));
    }
    Ok(t)
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Component-wise median of per-slide statistics, with the covariance
/// projected back onto the positive semi-definite cone.
pub fn reference_stats(stats: &[ColorStats]) -> Result<ColorStats> {
    if stats.is_empty() {
        return Err(Error::Argument("reference statistics need at least one slide".into()));
    }
    let med = |f: &dyn Fn(&ColorStats) -> f64| median(&mut stats.iter().map(f).collect::<Vec<_>>());
    let sigma = Sym2::new(
        med(&|s| s.sigma[0]),
        med(&|s| 0.5 * (s.sigma[1] + s.sigma[2])),
        med(&|s| s.sigma[3]),
    )
    .psd_projection();
    Ok(ColorStats {
        mu: [med(&|s| s.mu[0]), med(&|s| s.mu[1])],
        sigma: sigma.row_major(),
        d_mean: med(&|s| s.d_mean),
        d_var: med(&|s| s.d_var).max(0.0),
        pixel_count: stats.iter().map(|s| s.pixel_count).sum(),
        degenerate: sigma.eigenvalues()[0] <= EIGEN_FLOOR * sigma.trace().max(f64::MIN_POSITIVE),
    })
}

/// Per-pixel map from a slide's statistics to the reference.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TransferMap {
    pub t: Sym2,
    pub mu: [f64; 2],
    pub mu_r: [f64; 2],
    /// Density map `D' = scale * D + offset`.
    pub scale: f64,
    pub offset: f64,
}

impl TransferMap {
    pub fn new(stats: &ColorStats, reference: &ColorStats) -> Result<Self> {
        let t = mk_transform(stats.sigma_sym(), reference.sigma_sym())?;
        let scale = (reference.d_var / stats.d_var.max(VAR_EPS)).sqrt();
        Ok(Self {
            t,
            mu: stats.mu,
            mu_r: reference.mu,
            scale,
            offset: reference.d_mean - scale * stats.d_mean,
        })
    }

    #[inline]
    pub fn map_pixel(&self, p: HsdPixel) -> HsdPixel {
        let [x, y] = self.t.apply([p.cx - self.mu[0], p.cy - self.mu[1]]);
        HsdPixel {
            cx: x + self.mu_r[0],
            cy: y + self.mu_r[1],
            d: self.scale * p.d + self.offset,
        }
    }

    /// Maps every pixel; returns the image and how many pixels were clamped.
    pub fn apply(&self, img: &Rgb8Image) -> (Rgb8Image, u64) {
        let mut out = img.clone();
        let clamped: u64 = out
            .as_raw_mut()
            .par_chunks_mut(3 * CHUNK)
            .map(|chunk| {
                let mut n = 0;
                for px in chunk.chunks_exact_mut(3) {
                    let (rgb, c) = hsd_to_rgb(self.map_pixel(rgb_to_hsd([px[0], px[1], px[2]])));
                    px.copy_from_slice(&rgb);
                    n += c as u64;
                }
                n
            })
            .sum();
        (out, clamped)
    }
}

/// Normalizes `img`, whose statistics are `stats`, toward `reference`.
pub fn apply_normalization(img: &Rgb8Image, stats: &ColorStats, reference: &ColorStats) -> Result<(Rgb8Image, u64)> {
    Ok(TransferMap::new(stats, reference)?.apply(img))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_distr::{Distribution, Normal};

    fn hsd(cx: f64, cy: f64) -> HsdPixel {
        HsdPixel { cx, cy, d: 1.0 }
    }

    #[test]
    fn two_point_fit() {
        let s = fit_hsd_stats(&[hsd(0.0, 0.0), hsd(2.0, 0.0)]).unwrap();
        assert_eq!(s.mu, [1.0, 0.0]);
        assert_eq!(s.sigma, [2.0, 0.0, 0.0, 0.0]);
        assert!(s.degenerate);
    }

    #[test]
    fn constant_sample_has_zero_covariance() {
        let s = fit_color_stats(&[[200, 100, 150]; 10]).unwrap();
        assert_eq!(s.sigma, [0.0; 4]);
        assert_eq!(s.d_var, 0.0);
        assert!(s.degenerate);
        assert!(matches!(fit_color_stats(&[[1, 2, 3]]), Err(Error::Argument(_))));
    }

    #[test]
    fn gaussian_sample_recovers_covariance() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(1);
        let n = Normal::new(0.0, 1.0).unwrap();
        // Sigma = L L^T with L = [[0.3, 0], [0.1, 0.2]] -> [[0.09, 0.03], [0.03, 0.05]]
        let pixels: Vec<HsdPixel> = (0..100_000)
            .map(|_| {
                let (z0, z1): (f64, f64) = (n.sample(&mut rng), n.sample(&mut rng));
                hsd(0.3 * z0 + 0.5, 0.1 * z0 + 0.2 * z1 - 0.1)
            })
            .collect();
        let s = fit_hsd_stats(&pixels).unwrap();
        let truth = Sym2::new(0.09, 0.03, 0.05);
        assert!(s.sigma_sym().sub(truth).frobenius() / truth.frobenius() < 0.05);
        assert!((s.mu[0] - 0.5).abs() < 0.01 && (s.mu[1] + 0.1).abs() < 0.01);
    }

    #[test]
    fn fit_is_independent_of_thread_count() {
        let pixels: Vec<[u8; 3]> = (0..50_000u32).map(|i| [(i % 251) as u8, (i % 97) as u8, (i % 13) as u8]).collect();
        let a = fit_color_stats(&pixels).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
        let b = pool.install(|| fit_color_stats(&pixels).unwrap());
        assert_eq!(a, b);
    }

    #[test]
    fn transport_closed_forms() {
        let id = mk_transform(Sym2::IDENTITY, Sym2::IDENTITY).unwrap();
        assert!(id.sub(Sym2::IDENTITY).frobenius() <= 1e-12);
        let half = mk_transform(Sym2::scaled_identity(4.0), Sym2::IDENTITY).unwrap();
        assert!(half.sub(Sym2::scaled_identity(0.5)).frobenius() <= 1e-12);
        let d = mk_transform(Sym2::diag(4.0, 9.0), Sym2::IDENTITY).unwrap();
        assert!(d.sub(Sym2::diag(0.5, 1.0 / 3.0)).frobenius() <= 1e-12);
    }

    #[test]
    fn transport_rejects_indefinite_input() {
        let bad = Sym2::new(1.0, 2.0, 1.0);
        assert!(matches!(mk_transform(bad, Sym2::IDENTITY), Err(Error::Numeric(_))));
        assert!(matches!(mk_transform(Sym2::IDENTITY, bad), Err(Error::Numeric(_))));
    }

    #[test]
    fn transport_survives_singular_source() {
        let t = mk_transform(Sym2::diag(1.0, 0.0), Sym2::IDENTITY).unwrap();
        assert!(t.is_finite());
    }

    fn stats_with(mu_x: f64, sigma: Sym2) -> ColorStats {
        ColorStats {
            mu: [mu_x, 0.0],
            sigma: sigma.row_major(),
            d_mean: 0.5,
            d_var: 0.01,
            pixel_count: 10,
            degenerate: false,
        }
    }

    #[test]
    fn reference_of_one_is_itself() {
        let s = stats_with(0.1, Sym2::new(0.02, 0.005, 0.01));
        assert_eq!(reference_stats(std::slice::from_ref(&s)).unwrap(), s);
    }

    #[test]
    fn reference_takes_medians() {
        let all: Vec<_> = [0.1, 0.9, 0.2].iter().map(|&m| stats_with(m, Sym2::IDENTITY)).collect();
        assert_eq!(reference_stats(&all).unwrap().mu[0], 0.2);
    }

    #[test]
    fn indefinite_median_is_projected() {
        // medians a = 1, b = 2, c = 1 -> eigenvalues 3, -1
        let all = vec![
            stats_with(0.0, Sym2::new(1.0, 2.0, 1.0)),
            stats_with(0.0, Sym2::new(1.0, 2.0, 1.0)),
            stats_with(0.0, Sym2::new(5.0, 0.0, 5.0)),
        ];
        let r = reference_stats(&all).unwrap().sigma_sym();
        let oracle = Sym2::new(1.5, 1.5, 1.5);
        assert!(r.sub(oracle).frobenius() < 1e-12);
    }

    fn stain_image(seed: u64, base: [f64; 3], spread: f64) -> Rgb8Image {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let n = Normal::new(0.0, 1.0).unwrap();
        let mut img = Rgb8Image::filled(128, 128, [0; 3]);
        for px in img.pixels_mut() {
            let (z0, z1): (f64, f64) = (n.sample(&mut rng), n.sample(&mut rng));
            let v = [base[0] + spread * z0, base[1] + spread * (0.5 * z0 + z1), base[2] + spread * z1];
            for c in 0..3 {
                px[c] = v[c].clamp(0.0, 255.0).round() as u8;
            }
        }
        img
    }

    fn stats_of(img: &Rgb8Image) -> ColorStats {
        fit_color_stats(&img.pixels().collect::<Vec<_>>()).unwrap()
    }

    #[test]
    fn self_normalization_is_identity() {
        let img = stain_image(3, [200.0, 120.0, 170.0], 12.0);
        let s = stats_of(&img);
        let (out, clamped) = apply_normalization(&img, &s, &s).unwrap();
        assert_eq!(clamped, 0);
        for (a, b) in out.as_raw().iter().zip(img.as_raw()) {
            assert!((*a as i32 - *b as i32).abs() <= 1);
        }
    }

    #[test]
    fn refit_after_normalization_matches_reference() {
        let src = stain_image(5, [190.0, 110.0, 160.0], 14.0);
        let reference = stats_of(&stain_image(6, [210.0, 140.0, 190.0], 9.0));
        let (out, _) = apply_normalization(&src, &stats_of(&src), &reference).unwrap();
        let refit = stats_of(&out);
        let rel = refit.sigma_sym().sub(reference.sigma_sym()).frobenius() / reference.sigma_sym().frobenius();
        assert!(rel < 0.02, "sigma rel err {rel}");
        assert!((refit.d_mean - reference.d_mean).abs() / reference.d_mean < 0.02);
        let mu_err = ((refit.mu[0] - reference.mu[0]).powi(2) + (refit.mu[1] - reference.mu[1]).powi(2)).sqrt();
        assert!(mu_err < 0.02 * (reference.mu[0].hypot(reference.mu[1])).max(0.01), "mu err {mu_err}");

        // a second pass barely moves the statistics
        let (again, _) = apply_normalization(&out, &refit, &reference).unwrap();
        let refit2 = stats_of(&again);
        let drift = refit2.sigma_sym().sub(refit.sigma_sym()).frobenius() / refit.sigma_sym().frobenius();
        assert!(drift < 0.01, "drift {drift}");
    }

    #[test]
    fn achromatic_pixels_stay_achromatic_with_zero_means() {
        let s = ColorStats {
            mu: [0.0, 0.0],
            sigma: [0.02, 0.004, 0.004, 0.03],
            d_mean: 0.6,
            d_var: 0.02,
            pixel_count: 2,
            degenerate: false,
        };
        let r = ColorStats {
            sigma: [0.01, -0.002, -0.002, 0.015],
            ..s.clone()
        };
        let map = TransferMap::new(&s, &r).unwrap();
        let out = map.map_pixel(rgb_to_hsd([90, 90, 90]));
        assert!(out.cx.abs() < 1e-15 && out.cy.abs() < 1e-15);
    }

    #[test]
    fn stats_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.json");
        let s = stats_of(&stain_image(1, [180.0, 100.0, 150.0], 10.0));
        s.save(&p).unwrap();
        assert_eq!(ColorStats::load(&p).unwrap(), s);
    }
}
