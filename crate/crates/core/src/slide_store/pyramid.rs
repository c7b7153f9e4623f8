use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use serde::{Deserialize, Serialize};

use crate::error::{Error, LoadError, Result};
use crate::image::{Rgb8Image, RgbImage};

/// Downsample factors a pyramid may carry (40X, 20X, 10X).
pub const SUPPORTED_FACTORS: [u32; 3] = [1, 2, 4];

const META_FILE: &str = "meta.json";
const MAX_CACHED_TILES: usize = 4096;

/// Contents of `meta.json` in a pyramid directory.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PyramidMeta {
    pub slide_id: String,
    pub width: u32,
    pub height: u32,
    pub mpp: f64,
    pub tile_size: u32,
    pub factors: Vec<u32>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LevelInfo {
    pub factor: u32,
    pub width: u32,
    pub height: u32,
}

enum Backing {
    Memory(Vec<Rgb8Image>),
    Tiles {
        root: PathBuf,
        cache: RwLock<HashMap<(usize, u32, u32), Arc<Rgb8Image>>>,
    },
}

/// Multi-resolution slide image addressed in base-pixel coordinates.
///
/// Immutable after construction; region reads take `&self` and are safe to
/// issue from many threads. Directory-backed pyramids decode tiles on demand.
pub struct SlidePyramid {
    meta: PyramidMeta,
    levels: Vec<LevelInfo>,
    backing: Backing,
}

impl std::fmt::Debug for SlidePyramid {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SlidePyramid")
            .field("meta", &self.meta)
            .field("in_memory", &matches!(self.backing, Backing::Memory(_)))
            .finish()
    }
}

fn validate_factors(factors: &[u32]) -> std::result::Result<(), String> {
    if factors.first() != Some(&1) {
        return Err("factor 1 must be present and listed first".into());
    }
    if !factors.windows(2).all(|w| w[0] < w[1]) {
        return Err(format!("factors must be strictly increasing, got {factors:?}"));
    }
    if let Some(f) = factors.iter().find(|f| !SUPPORTED_FACTORS.contains(f)) {
        return Err(format!("unsupported downsample factor {f}"));
    }
    Ok(())
}

fn level_infos(width: u32, height: u32, factors: &[u32]) -> Vec<LevelInfo> {
    factors
        .iter()
        .map(|&factor| LevelInfo {
            factor,
            width: width.div_ceil(factor),
            height: height.div_ceil(factor),
        })
        .collect()
}

impl SlidePyramid {
    /// Builds an in-memory pyramid whose reduced levels are area averages of `base`.
    pub fn from_base(
        slide_id: impl Into<String>,
        base: Rgb8Image,
        mpp: f64,
        factors: &[u32],
    ) -> Result<Self> {
        validate_factors(factors).map_err(Error::Argument)?;
        if base.width() == 0 || base.height() == 0 {
            return Err(Error::Argument("slide must have non-zero dimensions".into()));
        }
        let (width, height) = (base.width(), base.height());
        let mut images = Vec::with_capacity(factors.len());
        for &f in &factors[1..] {
            images.push(base.downsample(f));
        }
        images.insert(0, base);
        Ok(Self {
            meta: PyramidMeta {
                slide_id: slide_id.into(),
                width,
                height,
                mpp,
                tile_size: 256,
                factors: factors.to_vec(),
            },
            levels: level_infos(width, height, factors),
            backing: Backing::Memory(images),
        })
    }

    pub fn slide_id(&self) -> &str {
        &self.meta.slide_id
    }

    pub fn width(&self) -> u32 {
        self.meta.width
    }

    pub fn height(&self) -> u32 {
        self.meta.height
    }

    pub fn mpp(&self) -> f64 {
        self.meta.mpp
    }

    pub fn meta(&self) -> &PyramidMeta {
        &self.meta
    }

    pub fn levels(&self) -> &[LevelInfo] {
        &self.levels
    }

    pub fn factors(&self) -> &[u32] {
        &self.meta.factors
    }

    pub fn has_factor(&self, factor: u32) -> bool {
        self.meta.factors.contains(&factor)
    }

    fn level_index(&self, factor: u32) -> Result<usize> {
        self.meta
            .factors
            .iter()
            .position(|&f| f == factor)
            .ok_or_else(|| {
                Error::Argument(format!(
                    "slide '{}' has no level with downsample factor {factor}",
                    self.meta.slide_id
                ))
            })
    }

    fn tile_path(root: &Path, factor: u32, row: u32, col: u32) -> PathBuf {
        root.join(format!("L{factor}")).join(format!("r{row}_c{col}.png"))
    }

    fn tile(&self, level: usize, row: u32, col: u32) -> Result<Arc<Rgb8Image>> {
        let Backing::Tiles { root, cache } = &self.backing else {
            unreachable!("tile() is only used for directory-backed pyramids");
        };
        if let Some(t) = cache.read().expect("tile cache poisoned").get(&(level, row, col)) {
            return Ok(Arc::clone(t));
        }
        let info = self.levels[level];
        let ts = self.meta.tile_size;
        let path = Self::tile_path(root, info.factor, row, col);
        let img = Rgb8Image::read_png(&path).map_err(|e| match e {
            Error::Io { path, source } => Error::Load(LoadError::CorruptTile {
                path,
                detail: source.to_string(),
            }),
            other => other,
        })?;
        let expect_w = ts.min(info.width - col * ts);
        let expect_h = ts.min(info.height - row * ts);
        if (img.width(), img.height()) != (expect_w, expect_h) {
            return Err(Error::Load(LoadError::DimensionMismatch {
                path,
                detail: format!(
                    "tile is {}x{}, expected {expect_w}x{expect_h}",
                    img.width(),
                    img.height()
                ),
            }));
        }
        let img = Arc::new(img);
        let mut guard = cache.write().expect("tile cache poisoned");
        if guard.len() >= MAX_CACHED_TILES {
            guard.clear();
        }
        guard.insert((level, row, col), Arc::clone(&img));
        Ok(img)
    }

    /// Reads a region at downsample `factor` as 8-bit pixels.
    ///
    /// `(x, y, w, h)` are in base pixels. The output is `(w / factor) x (h / factor)`
    /// and its origin is `(x, y)` snapped down to the level grid. Anything outside
    /// the slide reads as white.
    pub fn read_region_rgb8(
        &self,
        factor: u32,
        x: i64,
        y: i64,
        w: i64,
        h: i64,
    ) -> Result<Rgb8Image> {
        if w <= 0 || h <= 0 {
            return Err(Error::Argument(format!("region extent must be positive, got {w}x{h}")));
        }
        let level = self.level_index(factor)?;
        let f = factor as i64;
        let (ow, oh) = (w / f, h / f);
        if ow == 0 || oh == 0 {
            return Err(Error::Argument(format!(
                "region {w}x{h} is smaller than downsample factor {factor}"
            )));
        }
        let (lx, ly) = (x.div_euclid(f), y.div_euclid(f));
        let mut out = Rgb8Image::filled(ow as u32, oh as u32, [255; 3]);
        let info = self.levels[level];

        // Intersection of the request with the level, in level coordinates.
        let x0 = lx.max(0);
        let y0 = ly.max(0);
        let x1 = (lx + ow).min(info.width as i64);
        let y1 = (ly + oh).min(info.height as i64);
        if x0 >= x1 || y0 >= y1 {
            return Ok(out);
        }

        match &self.backing {
            Backing::Memory(images) => {
                blit(&images[level], 0, 0, &mut out, lx, ly, (x0, y0, x1, y1));
            }
            Backing::Tiles { .. } => {
                let ts = self.meta.tile_size as i64;
                for tr in (y0 / ts)..=((y1 - 1) / ts) {
                    for tc in (x0 / ts)..=((x1 - 1) / ts) {
                        let tile = self.tile(level, tr as u32, tc as u32)?;
                        blit(&tile, tc * ts, tr * ts, &mut out, lx, ly, (x0, y0, x1, y1));
                    }
                }
            }
        }
        Ok(out)
    }

    /// Same as [`read_region_rgb8`](Self::read_region_rgb8) with values scaled to `[0, 1]`.
    pub fn read_region(&self, factor: u32, x: i64, y: i64, w: i64, h: i64) -> Result<RgbImage> {
        Ok(self.read_region_rgb8(factor, x, y, w, h)?.to_float())
    }

    /// Materializes a whole level.
    pub fn level_image(&self, factor: u32) -> Result<Rgb8Image> {
        let level = self.level_index(factor)?;
        if let Backing::Memory(images) = &self.backing {
            return Ok(images[level].clone());
        }
        let f = factor as i64;
        let info = self.levels[level];
        self.read_region_rgb8(factor, 0, 0, info.width as i64 * f, info.height as i64 * f)
    }

    /// Writes `meta.json` plus `L{factor}/r{row}_c{col}.png` tiles into `dir`.
    pub fn write(&self, dir: &Path, tile_size: u32) -> Result<()> {
        if tile_size == 0 {
            return Err(Error::Argument("tile size must be positive".into()));
        }
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let meta = PyramidMeta {
            tile_size,
            ..self.meta.clone()
        };
        for info in &self.levels {
            let level_dir = dir.join(format!("L{}", info.factor));
            std::fs::create_dir_all(&level_dir).map_err(|e| Error::io(&level_dir, e))?;
            let img = self.level_image(info.factor)?;
            for row in 0..info.height.div_ceil(tile_size) {
                for col in 0..info.width.div_ceil(tile_size) {
                    let (tx, ty) = (col * tile_size, row * tile_size);
                    let tile = img.crop(
                        tx,
                        ty,
                        tile_size.min(info.width - tx),
                        tile_size.min(info.height - ty),
                    );
                    tile.write_png(&Self::tile_path(dir, info.factor, row, col))?;
                }
            }
        }
        let meta_path = dir.join(META_FILE);
        let text = serde_json::to_string_pretty(&meta).map_err(|e| Error::json(&meta_path, e))?;
        std::fs::write(&meta_path, text).map_err(|e| Error::io(&meta_path, e))
    }
}

/// Copies the part of `src` (placed at level coordinates `src_x, src_y`) that falls
/// inside `clip` into `out`, whose top-left corner sits at level coordinates `out_x, out_y`.
fn blit(
    src: &Rgb8Image,
    src_x: i64,
    src_y: i64,
    out: &mut Rgb8Image,
    out_x: i64,
    out_y: i64,
    clip: (i64, i64, i64, i64),
) {
    let x0 = clip.0.max(src_x);
    let y0 = clip.1.max(src_y);
    let x1 = clip.2.min(src_x + src.width() as i64);
    let y1 = clip.3.min(src_y + src.height() as i64);
    if x0 >= x1 || y0 >= y1 {
        return;
    }
    let n = (x1 - x0) as usize * 3;
    let out_w = out.width() as usize * 3;
    let dst = out.as_raw_mut();
    for y in y0..y1 {
        let src_row = src.row((y - src_y) as u32);
        let s = (x0 - src_x) as usize * 3;
        let d = (y - out_y) as usize * out_w + (x0 - out_x) as usize * 3;
        dst[d..d + n].copy_from_slice(&src_row[s..s + n]);
    }
}

/// Opens a pyramid directory. Tiles are decoded lazily on first access.
///
/// Every declared level must exist and the bottom-right tile of each level must
/// have the size implied by the metadata.
pub fn open_slide(path: &Path) -> Result<SlidePyramid> {
    let meta_path = path.join(META_FILE);
    let text = std::fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: PyramidMeta = serde_json::from_str(&text).map_err(|e| {
        Error::Load(LoadError::BadMetadata {
            path: meta_path.clone(),
            detail: e.to_string(),
        })
    })?;
    if !meta.factors.contains(&1) {
        return Err(Error::Load(LoadError::MissingLevel {
            path: path.to_path_buf(),
            factor: 1,
        }));
    }
    validate_factors(&meta.factors).map_err(|detail| {
        Error::Load(LoadError::BadMetadata {
            path: meta_path.clone(),
            detail,
        })
    })?;
    if meta.width == 0 || meta.height == 0 || meta.tile_size == 0 {
        return Err(Error::Load(LoadError::DimensionMismatch {
            path: path.to_path_buf(),
            detail: format!(
                "width {}, height {}, tile size {} must all be positive",
                meta.width, meta.height, meta.tile_size
            ),
        }));
    }
    for &factor in &meta.factors {
        if !path.join(format!("L{factor}")).is_dir() {
            return Err(Error::Load(LoadError::MissingLevel {
                path: path.to_path_buf(),
                factor,
            }));
        }
    }
    let levels = level_infos(meta.width, meta.height, &meta.factors);
    let slide = SlidePyramid {
        levels,
        backing: Backing::Tiles {
            root: path.to_path_buf(),
            cache: RwLock::new(HashMap::new()),
        },
        meta,
    };
    let ts = slide.meta.tile_size;
    for (i, info) in slide.levels.iter().enumerate() {
        let (last_row, last_col) = (info.height.div_ceil(ts) - 1, info.width.div_ceil(ts) - 1);
        let tile_path = SlidePyramid::tile_path(path, info.factor, last_row, last_col);
        if !tile_path.is_file() {
            return Err(Error::Load(LoadError::DimensionMismatch {
                path: path.to_path_buf(),
                detail: format!(
                    "level {} should span {}x{} pixels but {} is missing",
                    info.factor,
                    info.width,
                    info.height,
                    tile_path.display()
                ),
            }));
        }
        slide.tile(i, last_row, last_col)?;
    }
    Ok(slide)
}
