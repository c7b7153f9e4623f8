//! Pixel containers shared by the slide store, patch pipeline and classifiers.
//!
//! [`Rgb8Image`] holds stored slide pixels (8 bits per channel, interleaved RGB).
//! [`RgbImage`] holds floating point pixels, normally in `[0, 1]` after decoding
//! or `[-1, 1]` once mapped into model range.

use std::fs::File;
use std::io::{BufReader, BufWriter};
use std::path::Path;

use crate::error::{Error, LoadError, Result};

/// Interleaved 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Rgb8Image {
    width: u32,
    height: u32,
    data: Vec<u8>,
}

impl Rgb8Image {
    pub fn filled(width: u32, height: u32, rgb: [u8; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<u8>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::Argument(format!(
                "raw buffer of {} bytes does not match {width}x{height} RGB",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn as_raw(&self) -> &[u8] {
        &self.data
    }

    pub fn as_raw_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_raw(self) -> Vec<u8> {
        self.data
    }

    #[inline]
    fn offset(&self, x: u32, y: u32) -> usize {
        (y as usize * self.width as usize + x as usize) * 3
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [u8; 3] {
        let o = self.offset(x, y);
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        let o = self.offset(x, y);
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    /// Row `y` as an interleaved slice.
    pub fn row(&self, y: u32) -> &[u8] {
        let w = self.width as usize * 3;
        &self.data[y as usize * w..(y as usize + 1) * w]
    }

    pub fn pixels(&self) -> impl Iterator<Item = [u8; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    pub fn pixels_mut(&mut self) -> std::slice::ChunksExactMut<'_, u8> {
        self.data.chunks_exact_mut(3)
    }

    /// Copies the `w`x`h` window at (`x`, `y`); the window must lie inside the image.
    pub fn crop(&self, x: u32, y: u32, w: u32, h: u32) -> Rgb8Image {
        let mut out = Vec::with_capacity(w as usize * h as usize * 3);
        for row in y..y + h {
            let o = self.offset(x, row);
            out.extend_from_slice(&self.data[o..o + w as usize * 3]);
        }
        Rgb8Image {
            width: w,
            height: h,
            data: out,
        }
    }

    /// Area-average downsampling by an integer factor.
    ///
    /// Output dimensions are `ceil(dim / factor)`. Blocks that overhang the
    /// image edge are padded with white, matching the out-of-bounds rule of
    /// region reads. Averages are rounded half up.
    pub fn downsample(&self, factor: u32) -> Rgb8Image {
        assert!(factor >= 1);
        if factor == 1 {
            return self.clone();
        }
        let ow = self.width.div_ceil(factor);
        let oh = self.height.div_ceil(factor);
        let n = factor * factor;
        let mut out = Vec::with_capacity(ow as usize * oh as usize * 3);
        for oy in 0..oh {
            for ox in 0..ow {
                let mut sum = [0u32; 3];
                for dy in 0..factor {
                    for dx in 0..factor {
                        let (x, y) = (ox * factor + dx, oy * factor + dy);
                        let px = if x < self.width && y < self.height {
                            self.get(x, y)
                        } else {
                            [255; 3]
                        };
                        for c in 0..3 {
                            sum[c] += px[c] as u32;
                        }
                    }
                }
                for s in sum {
                    out.push(((s + n / 2) / n) as u8);
                }
            }
        }
        Rgb8Image {
            width: ow,
            height: oh,
            data: out,
        }
    }

    pub fn to_float(&self) -> RgbImage {
        RgbImage {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| v as f32 / 255.0).collect(),
        }
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut encoder = png::Encoder::new(BufWriter::new(file), self.width, self.height);
        encoder.set_color(png::ColorType::Rgb);
        encoder.set_depth(png::BitDepth::Eight);
        encoder.set_compression(png::Compression::Fast);
        let encode_err = |e: png::EncodingError| Error::Format(format!("{}: {e}", path.display()));
        let mut writer = encoder.write_header().map_err(encode_err)?;
        writer.write_image_data(&self.data).map_err(encode_err)?;
        writer.finish().map_err(encode_err)
    }

    /// Decodes an 8-bit RGB PNG. Any decoding problem is reported as a corrupt tile.
    pub fn read_png(path: &Path) -> Result<Rgb8Image> {
        let corrupt = |detail: String| {
            Error::Load(LoadError::CorruptTile {
                path: path.to_path_buf(),
                detail,
            })
        };
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let decoder = png::Decoder::new(BufReader::new(file));
        let mut reader = decoder.read_info().map_err(|e| corrupt(e.to_string()))?;
        let size = reader
            .output_buffer_size()
            .ok_or_else(|| corrupt("image too large".into()))?;
        let mut buf = vec![0u8; size];
        let info = reader
            .next_frame(&mut buf)
            .map_err(|e| corrupt(e.to_string()))?;
        if info.color_type != png::ColorType::Rgb || info.bit_depth != png::BitDepth::Eight {
            return Err(corrupt(format!(
                "expected 8-bit RGB, found {:?}/{:?}",
                info.color_type, info.bit_depth
            )));
        }
        buf.truncate(info.buffer_size());
        Rgb8Image::from_raw(info.width, info.height, buf).map_err(|e| corrupt(e.to_string()))
    }
}

/// Interleaved floating point RGB image. Patches handed to classifiers use this type.
#[derive(Clone, Debug, PartialEq)]
pub struct RgbImage {
    width: u32,
    height: u32,
    data: Vec<f32>,
}

/// A patch is a (normally square) float RGB image.
pub type Patch = RgbImage;

impl RgbImage {
    pub fn filled(width: u32, height: u32, rgb: [f32; 3]) -> Self {
        let n = width as usize * height as usize;
        let mut data = Vec::with_capacity(n * 3);
        for _ in 0..n {
            data.extend_from_slice(&rgb);
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn from_raw(width: u32, height: u32, data: Vec<f32>) -> Result<Self> {
        if data.len() != width as usize * height as usize * 3 {
            return Err(Error::Argument(format!(
                "raw buffer of {} values does not match {width}x{height} RGB",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: u32, height: u32, mut f: impl FnMut(u32, u32) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn is_square(&self) -> bool {
        self.width == self.height
    }

    pub fn as_raw(&self) -> &[f32] {
        &self.data
    }

    pub fn as_raw_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32) -> [f32; 3] {
        let o = (y as usize * self.width as usize + x as usize) * 3;
        [self.data[o], self.data[o + 1], self.data[o + 2]]
    }

    #[inline]
    pub fn put(&mut self, x: u32, y: u32, rgb: [f32; 3]) {
        let o = (y as usize * self.width as usize + x as usize) * 3;
        self.data[o..o + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|c| [c[0], c[1], c[2]])
    }

    /// Quantizes `[0, 1]` values back to 8 bits (clamped, rounded).
    pub fn to_rgb8(&self) -> Rgb8Image {
        Rgb8Image {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
                .collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn downsample_averages_blocks() {
        let mut img = Rgb8Image::filled(4, 2, [0, 0, 0]);
        img.put(0, 0, [4, 8, 12]);
        img.put(1, 1, [4, 0, 0]);
        let half = img.downsample(2);
        assert_eq!((half.width(), half.height()), (2, 1));
        assert_eq!(half.get(0, 0), [2, 2, 3]);
        assert_eq!(half.get(1, 0), [0, 0, 0]);
    }

    #[test]
    fn downsample_pads_overhang_with_white() {
        let img = Rgb8Image::filled(3, 3, [0, 0, 0]);
        let half = img.downsample(2);
        assert_eq!((half.width(), half.height()), (2, 2));
        assert_eq!(half.get(0, 0), [0, 0, 0]);
        // one black pixel, three white: (0 + 3 * 255) / 4 rounded
        assert_eq!(half.get(1, 1), [191, 191, 191]);
    }

    #[test]
    fn png_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.png");
        let img = Rgb8Image::from_raw(2, 2, (0..12).map(|v| v * 20).collect()).unwrap();
        img.write_png(&path).unwrap();
        assert_eq!(Rgb8Image::read_png(&path).unwrap(), img);
    }

    #[test]
    fn garbage_png_is_corrupt_tile() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.png");
        std::fs::write(&path, b"not a png").unwrap();
        let err = Rgb8Image::read_png(&path).unwrap_err();
        assert!(matches!(err, Error::Load(LoadError::CorruptTile { .. })));
    }
}
