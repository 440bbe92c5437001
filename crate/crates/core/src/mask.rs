//! Binary spatial masks and their on-disk formats.
//!
//! A mask cell is `1` when the feature is kept (unmasked) and `0` when it is
//! occluded. On disk a mask is either an 8-bit PGM (`0` masked, `255`
//! unmasked; any value `>= 128` reads as unmasked) or run-length JSON:
//!
//! ```json
//! {"height": 2, "width": 3, "runs": [[1, 4], [0, 2]]}
//! ```
//!
//! where each run is `[value, count]` in row-major order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    height: usize,
    width: usize,
    data: Vec<u8>,
}

impl BinaryMask {
    pub fn new(height: usize, width: usize, data: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::Mask(format!(
                "mask dimensions {height}x{width} must be positive"
            )));
        }
        if data.len() != height * width {
            return Err(Error::Mask(format!(
                "{height}x{width} mask needs {} cells, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|&v| v > 1) {
            return Err(Error::Mask(format!(
                "cell {i} has non-binary value {}",
                data[i]
            )));
        }
        Ok(BinaryMask {
            height,
            width,
            data,
        })
    }

    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        BinaryMask {
            height,
            width,
            data: vec![value as u8; height * width],
        }
    }

    pub fn ones(height: usize, width: usize) -> Self {
        Self::filled(height, width, true)
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, false)
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x) as u8);
            }
        }
        BinaryMask {
            height,
            width,
            data,
        }
    }

    /// Builds a mask from 0/1 rows; handy for fixtures.
    pub fn from_rows(rows: &[&[u8]]) -> Result<Self> {
        let h = rows.len();
        let w = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != w) {
            return Err(Error::Mask("ragged rows".into()));
        }
        Self::new(h, w, rows.concat())
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.width + x] != 0
    }

    pub fn set(&mut self, y: usize, x: usize, value: bool) {
        self.data[y * self.width + x] = value as u8;
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&v| v != 0).count()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn is_all_ones(&self) -> bool {
        self.data.iter().all(|&v| v == 1)
    }

    /// Elementwise `self <= other`.
    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.dims() == other.dims() && self.data.iter().zip(&other.data).all(|(a, b)| a <= b)
    }

    pub fn union(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a | b)
    }

    pub fn intersection(&self, other: &BinaryMask) -> Result<BinaryMask> {
        self.zip(other, |a, b| a & b)
    }

    fn zip(&self, other: &BinaryMask, f: impl Fn(u8, u8) -> u8) -> Result<BinaryMask> {
        if self.dims() != other.dims() {
            return Err(Error::Mask(format!(
                "mask dimensions differ: {:?} vs {:?}",
                self.dims(),
                other.dims()
            )));
        }
        Ok(BinaryMask {
            height: self.height,
            width: self.width,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    /// Binary P5 PGM, `255` for unmasked cells.
    pub fn to_pgm(&self) -> Vec<u8> {
        let mut out = format!("P5\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| if v != 0 { 255u8 } else { 0 }));
        out
    }

    /// Reads an 8-bit PGM (P2 or P5); values `>= 128` become `1`.
    pub fn from_pgm(bytes: &[u8]) -> Result<Self> {
        let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Pnm)
            .map_err(|e| Error::Mask(format!("PGM decode: {e}")))?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(Error::Mask(format!(
                    "mask must be an 8-bit single-channel PGM, got {:?}",
                    other.color()
                )))
            }
        };
        let (w, h) = gray.dimensions();
        let data = gray
            .into_raw()
            .into_iter()
            .map(|v| (v >= 128) as u8)
            .collect();
        Self::new(h as usize, w as usize, data)
    }

    pub fn to_rle_json(&self) -> String {
        let mut runs: Vec<[usize; 2]> = Vec::new();
        for &v in &self.data {
            match runs.last_mut() {
                Some(r) if r[0] == v as usize => r[1] += 1,
                _ => runs.push([v as usize, 1]),
            }
        }
        serde_json::to_string(&RleMask {
            height: self.height,
            width: self.width,
            runs,
        })
        .expect("rle serialises")
    }

    pub fn from_rle_json(text: &str) -> Result<Self> {
        let rle: RleMask =
            serde_json::from_str(text).map_err(|e| Error::Mask(format!("RLE JSON: {e}")))?;
        let mut data = Vec::with_capacity(rle.height * rle.width);
        for [value, count] in rle.runs {
            if value > 1 {
                return Err(Error::Mask(format!("run value {value} is not 0 or 1")));
            }
            data.extend(std::iter::repeat_n(value as u8, count));
        }
        Self::new(rle.height, rle.width, data)
    }

    /// Loads a mask, choosing the format from the extension (`.json` is
    /// run-length JSON, anything else PGM).
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        if path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("json"))
        {
            let text = String::from_utf8(bytes)
                .map_err(|_| Error::Mask("mask JSON is not UTF-8".into()))?;
            Self::from_rle_json(&text)
        } else {
            Self::from_pgm(&bytes)
        }
    }

    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }
}

#[derive(Serialize, Deserialize)]
struct RleMask {
    height: usize,
    width: usize,
    runs: Vec<[usize; 2]>,
}
