use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::slide_store::SlidePyramid;

/// Side of a heatmap cell and of the labeled center region, in base pixels.
pub const CELL_SIZE: u32 = 128;

/// Default background cut-off on mean gray value.
pub const DEFAULT_GRAY_THRESHOLD: f64 = 0.8;

/// Tissue/background flags on the stride-128 grid. `true` means tissue.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TissueGrid {
    rows: usize,
    cols: usize,
    cells: Vec<bool>,
}

#[derive(Serialize, Deserialize)]
struct TissueFile {
    slide_id: String,
    stride: u32,
    gray_threshold: f64,
    rows: usize,
    cols: usize,
    /// One string of '0'/'1' per grid row.
    cells: Vec<String>,
}

impl TissueGrid {
    pub fn new(rows: usize, cols: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != rows * cols {
            return Err(Error::Argument(format!(
                "{} cells do not fill a {rows}x{cols} grid",
                cells.len()
            )));
        }
        Ok(Self { rows, cols, cells })
    }

    /// Grid sized for a `width x height` slide with every cell marked `value`.
    pub fn uniform(width: u32, height: u32, value: bool) -> Self {
        let rows = height.div_ceil(CELL_SIZE) as usize;
        let cols = width.div_ceil(CELL_SIZE) as usize;
        Self {
            rows,
            cols,
            cells: vec![value; rows * cols],
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn is_tissue(&self, row: usize, col: usize) -> bool {
        self.cells[row * self.cols + col]
    }

    pub fn tissue_count(&self) -> usize {
        self.cells.iter().filter(|&&c| c).count()
    }

    /// `(row, col)` of every tissue cell in row-major order.
    pub fn tissue_cells(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.cells
            .iter()
            .enumerate()
            .filter(|(_, &t)| t)
            .map(move |(i, _)| (i / self.cols, i % self.cols))
    }

    pub fn to_json(&self, slide_id: &str, gray_threshold: f64) -> String {
        let file = TissueFile {
            slide_id: slide_id.to_string(),
            stride: CELL_SIZE,
            gray_threshold,
            rows: self.rows,
            cols: self.cols,
            cells: self
                .cells
                .chunks(self.cols.max(1))
                .map(|row| row.iter().map(|&t| if t { '1' } else { '0' }).collect())
                .collect(),
        };
        serde_json::to_string_pretty(&file).expect("tissue grid serializes")
    }
}

/// Marks a cell as background when the mean of R, G and B over its 128x128
/// base region exceeds `gray_threshold`. Pixels outside the slide count as white.
pub fn tissue_grid(slide: &SlidePyramid, gray_threshold: f64) -> Result<TissueGrid> {
    let rows = slide.height().div_ceil(CELL_SIZE) as usize;
    let cols = slide.width().div_ceil(CELL_SIZE) as usize;
    let cell = CELL_SIZE as i64;
    let denom = 3.0 * 255.0 * (CELL_SIZE * CELL_SIZE) as f64;
    let cells = (0..rows * cols)
        .into_par_iter()
        .map(|i| {
            let (r, c) = ((i / cols) as i64, (i % cols) as i64);
            let region = slide.read_region_rgb8(1, c * cell, r * cell, cell, cell)?;
            let sum: u64 = region.as_raw().iter().map(|&v| v as u64).sum();
            Ok(sum as f64 / denom <= gray_threshold)
        })
        .collect::<Result<Vec<bool>>>()?;
    TissueGrid::new(rows, cols, cells)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::image::Rgb8Image;

    fn slide_of(img: Rgb8Image) -> SlidePyramid {
        SlidePyramid::from_base("s", img, 1.0, &[1]).unwrap()
    }

    #[test]
    fn white_slide_has_no_tissue() {
        let grid = tissue_grid(&slide_of(Rgb8Image::filled(256, 384, [255; 3])), 0.8).unwrap();
        assert_eq!((grid.rows(), grid.cols()), (3, 2));
        assert_eq!(grid.tissue_count(), 0);
    }

    #[test]
    fn black_cell_is_tissue() {
        let mut img = Rgb8Image::filled(256, 128, [255; 3]);
        for y in 0..128 {
            for x in 128..256 {
                img.put(x, y, [0; 3]);
            }
        }
        let grid = tissue_grid(&slide_of(img), 0.8).unwrap();
        assert!(!grid.is_tissue(0, 0));
        assert!(grid.is_tissue(0, 1));
    }

    #[test]
    fn half_white_half_mid_gray_is_tissue() {
        // mean = (1 + 128/255) / 2 = 0.751 <= 0.8
        let mut img = Rgb8Image::filled(128, 128, [255; 3]);
        for y in 64..128 {
            for x in 0..128 {
                img.put(x, y, [128; 3]);
            }
        }
        let grid = tissue_grid(&slide_of(img), 0.8).unwrap();
        assert!(grid.is_tissue(0, 0));
    }

    #[test]
    fn partial_border_cells_are_padded_white() {
        // 200 px wide: second column cell is 72 px of black + 56 px of padding
        let img = Rgb8Image::filled(200, 128, [0; 3]);
        let grid = tissue_grid(&slide_of(img), 0.4).unwrap();
        assert_eq!(grid.cols(), 2);
        assert!(grid.is_tissue(0, 0));
        // mean = 56 / 128 = 0.4375 > 0.4
        assert!(!grid.is_tissue(0, 1));
    }
}
