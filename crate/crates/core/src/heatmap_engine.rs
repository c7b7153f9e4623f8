//! Sliding-window inference and heatmap files.
//!
//! Cell `(r, c)` covers base pixels `[c s, (c+1) s) x [r s, (r+1) s)` for
//! stride `s` and is scored by the patch group centered on that region.

use std::io::Write;
use std::path::Path;

use rayon::prelude::*;

use crate::classifier::PatchClassifier;
use crate::error::{Error, LoadError, Result};
use crate::patch_pipeline::{extract_patch_group, orient, to_model_range, Orientation, PatchSpec, TissueGrid, CELL_SIZE};
use crate::slide_store::SlidePyramid;

const MAGIC: &[u8; 4] = b"GDHM";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Heatmap {
    pub slide_id: String,
    pub rows: usize,
    pub cols: usize,
    pub stride: u32,
    /// Row-major probabilities.
    pub values: Vec<f32>,
}

impl Heatmap {
    pub fn new(slide_id: impl Into<String>, rows: usize, cols: usize, stride: u32, values: Vec<f32>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Argument(format!("{} values do not fill a {rows}x{cols} heatmap", values.len())));
        }
        if stride == 0 {
            return Err(Error::Argument("heatmap stride must be positive".into()));
        }
        if let Some(v) = values.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::Argument(format!("heatmap value {v} is outside [0, 1]")));
        }
        Ok(Self {
            slide_id: slide_id.into(),
            rows,
            cols,
            stride,
            values,
        })
    }

    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.values[row * self.cols + col]
    }

    /// Base-pixel center of a cell.
    pub fn cell_center(&self, row: usize, col: usize) -> (i64, i64) {
        cell_center(self.stride, row, col)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let id = self.slide_id.as_bytes();
        let mut out = Vec::with_capacity(24 + id.len() + 4 * self.values.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(id.len() as u32).to_le_bytes());
        out.extend_from_slice(id);
        out.extend_from_slice(&(self.rows as u32).to_le_bytes());
        out.extend_from_slice(&(self.cols as u32).to_le_bytes());
        out.extend_from_slice(&self.stride.to_le_bytes());
        for v in &self.values {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut at = 0usize;
        let mut take = |n: usize, what: &str| -> Result<&[u8]> {
            let s = bytes
                .get(at..at + n)
                .ok_or_else(|| Error::Format(format!("heatmap truncated while reading {what}")))?;
            at += n;
            Ok(s)
        };
        let u32_at = |s: &[u8]| u32::from_le_bytes(s.try_into().expect("4 bytes"));
        if take(4, "magic")? != MAGIC {
            return Err(Error::Format("not a heatmap file (bad magic)".into()));
        }
        let version = u32_at(take(4, "version")?);
        if version != VERSION {
            return Err(Error::Format(format!("unsupported heatmap version {version}")));
        }
        let id_len = u32_at(take(4, "slide id length")?) as usize;
        let slide_id = std::str::from_utf8(take(id_len, "slide id")?)
            .map_err(|_| Error::Format("slide id is not UTF-8".into()))?
            .to_string();
        let rows = u32_at(take(4, "rows")?) as usize;
        let cols = u32_at(take(4, "cols")?) as usize;
        let stride = u32_at(take(4, "stride")?);
        let n = rows
            .checked_mul(cols)
            .ok_or_else(|| Error::Format("heatmap dimensions overflow".into()))?;
        let raw = take(n.checked_mul(4).ok_or_else(|| Error::Format("heatmap too large".into()))?, "values")?;
        let values = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes"))).collect();
        if at != bytes.len() {
            return Err(Error::Format(format!("{} trailing bytes after heatmap", bytes.len() - at)));
        }
        Heatmap::new(slide_id, rows, cols, stride, values).map_err(|e| Error::Format(e.to_string()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }

    /// `row,col,prob` lines with a header. Values print in shortest round-trip form.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,col,prob\n");
        for r in 0..self.rows {
            for c in 0..self.cols {
                s.push_str(&format!("{r},{c},{}\n", self.get(r, c)));
            }
        }
        s
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path).map_err(|e| Error::io(path, e))?);
        f.write_all(self.to_csv().as_bytes()).map_err(|e| Error::io(path, e))?;
        f.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn cell_center(stride: u32, row: usize, col: usize) -> (i64, i64) {
    let s = stride as i64;
    (col as i64 * s + s / 2, row as i64 * s + s / 2)
}

/// Parses a CSV export back into `(row, col, prob)` triples.
pub fn parse_heatmap_csv(text: &str) -> Result<Vec<(usize, usize, f32)>> {
    let mut lines = text.lines();
    if lines.next() != Some("row,col,prob") {
        return Err(Error::Format("heatmap CSV must start with 'row,col,prob'".into()));
    }
    lines
        .enumerate()
        .map(|(i, line)| {
            let bad = || Error::Format(format!("heatmap CSV line {}: '{line}'", i + 2));
            let mut f = line.split(',');
            let r = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let c = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let p = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            if f.next().is_some() {
                return Err(bad());
            }
            Ok((r, c, p))
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceConfig {
    /// Grid spacing in base pixels; must divide 128.
    pub stride: u32,
    /// Average over the 8 orientations.
    pub tta: bool,
    /// Worker threads; 0 uses the global pool.
    pub workers: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        Self {
            stride: CELL_SIZE,
            tta: true,
            workers: 0,
        }
    }
}

/// Scores every tissue cell of `slide`. Background cells hold 0.
///
/// Each cell is computed independently and TTA predictions are summed in
/// orientation order, so the output does not depend on `workers`.
pub fn infer_heatmap<C: PatchClassifier + ?Sized>(
    slide: &SlidePyramid,
    tissue: &TissueGrid,
    classifier: &C,
    config: &InferenceConfig,
) -> Result<Heatmap> {
    let stride = config.stride;
    if stride == 0 || CELL_SIZE % stride != 0 {
        return Err(Error::Argument(format!("stride {stride} must divide {CELL_SIZE}")));
    }
    let mags = classifier.magnifications().to_vec();
    if mags.is_empty() {
        return Err(Error::Argument("classifier declares no magnification".into()));
    }
    for m in &mags {
        if !slide.has_factor(m.factor()) {
            return Err(LoadError::MissingLevel {
                path: slide.slide_id().into(),
                factor: m.factor(),
            }
            .into());
        }
    }
    let rows = slide.height().div_ceil(stride) as usize;
    let cols = slide.width().div_ceil(stride) as usize;
    let expected = (slide.height().div_ceil(CELL_SIZE) as usize, slide.width().div_ceil(CELL_SIZE) as usize);
    if (tissue.rows(), tissue.cols()) != expected {
        return Err(Error::Argument(format!(
            "tissue grid is {}x{}, slide needs {}x{}",
            tissue.rows(),
            tissue.cols(),
            expected.0,
            expected.1
        )));
    }

    let score = |i: usize| -> Result<f32> {
        let (r, c) = (i / cols, i % cols);
        let center = cell_center(stride, r, c);
        let cell = CELL_SIZE as i64;
        if !tissue.is_tissue((center.1 / cell) as usize, (center.0 / cell) as usize) {
            return Ok(0.0);
        }
        let wrap = |e: Error| Error::Cell {
            row: r,
            col: c,
            source: Box::new(e),
        };
        let spec = PatchSpec {
            slide_id: slide.slide_id().to_string(),
            center,
            magnifications: mags.clone(),
        };
        let group = extract_patch_group(slide, &spec).map_err(wrap)?.map(to_model_range);
        let p = if config.tta {
            let mut sum = 0.0f64;
            for o in Orientation::ALL {
                let g = group.try_map(|p| orient(p, o)).map_err(wrap)?;
                sum += classifier.predict(&g).map_err(wrap)? as f64;
            }
            (sum / 8.0) as f32
        } else {
            classifier.predict(&group).map_err(wrap)?
        };
        if !(0.0..=1.0).contains(&p) {
            return Err(wrap(Error::Numeric(format!("classifier returned {p}"))));
        }
        Ok(p)
    };
    let run = || (0..rows * cols).into_par_iter().map(score).collect::<Result<Vec<f32>>>();
    let values = if config.workers == 0 {
        run()?
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(config.workers)
            .build()
            .map_err(|e| Error::Config(format!("cannot start {} workers: {e}", config.workers)))?
            .install(run)?
    };
    Heatmap::new(slide.slide_id(), rows, cols, stride, values)
}

/// Slide-level tumor score: the heatmap maximum.
pub fn slide_score(heatmap: &Heatmap) -> Result<f32> {
    heatmap
        .values
        .iter()
        .copied()
        .reduce(f32::max)
        .ok_or_else(|| Error::Argument(format!("heatmap of '{}' is empty", heatmap.slide_id)))
}
