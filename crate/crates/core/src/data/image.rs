use std::path::Path;

use super::tensor::{write_tensor, TensorFile};
use crate::error::{Error, Result};

/// Per-pixel class indices, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMap {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u16>,
}

impl LabelMap {
    pub fn new(height: usize, width: usize, data: Vec<u16>) -> Self {
        assert_eq!(data.len(), height * width, "label map size");
        LabelMap {
            height,
            width,
            data,
        }
    }

    pub fn filled(height: usize, width: usize, label: u16) -> Self {
        LabelMap::new(height, width, vec![label; height * width])
    }

    pub fn get(&self, y: usize, x: usize) -> u16 {
        self.data[y * self.width + x]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn to_tensor(&self) -> TensorFile {
        TensorFile::from_u16(vec![self.height, self.width], self.data.clone())
            .expect("label map dims are non-zero")
    }

    pub fn from_tensor(t: TensorFile, what: &str) -> Result<Self> {
        let dims = t.dims().to_vec();
        if dims.len() != 2 {
            return Err(Error::invalid(what, format!("expected H×W u16, got dims {dims:?}")));
        }
        let data = t
            .into_u16()
            .ok_or_else(|| Error::invalid(what, "expected u16 dtype"))?;
        Ok(LabelMap::new(dims[0], dims[1], data))
    }

    /// Binary 8-bit PGM (P5) with maxval = `classes - 1`.
    pub fn write_pgm(&self, path: impl AsRef<Path>, classes: usize) -> Result<()> {
        let maxval = classes.saturating_sub(1).clamp(1, 255);
        let mut out = format!("P5\n{} {}\n{}\n", self.width, self.height, maxval).into_bytes();
        out.extend(self.data.iter().map(|&l| l.min(maxval as u16) as u8));
        std::fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
    }
}

/// Row-major H×W×C float image.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), height * width * channels, "image size");
        Image {
            height,
            width,
            channels,
            data,
        }
    }

    pub fn zeros(height: usize, width: usize, channels: usize) -> Self {
        Image::new(height, width, channels, vec![0.0; height * width * channels])
    }

    pub fn pixel(&self, index: usize) -> &[f32] {
        &self.data[index * self.channels..(index + 1) * self.channels]
    }

    pub fn pixel_count(&self) -> usize {
        self.height * self.width
    }

    pub fn to_tensor(&self) -> TensorFile {
        TensorFile::from_f32(
            vec![self.height, self.width, self.channels],
            self.data.clone(),
        )
        .expect("image dims are non-zero")
    }

    pub fn from_tensor(t: TensorFile, what: &str) -> Result<Self> {
        let dims = t.dims().to_vec();
        if dims.len() != 3 {
            return Err(Error::invalid(what, format!("expected H×W×C f32, got dims {dims:?}")));
        }
        let data = t
            .into_f32()
            .ok_or_else(|| Error::invalid(what, "expected f32 dtype"))?;
        Ok(Image::new(dims[0], dims[1], dims[2], data))
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        write_tensor(path, &self.to_tensor())
    }

    /// Binary PPM (P6), 8-bit, values clamped to [0,1] then rounded half-to-even.
    pub fn write_ppm(&self, path: impl AsRef<Path>) -> Result<()> {
        if self.channels != 3 {
            return Err(Error::invalid("ppm", "needs a 3-channel image"));
        }
        let mut out = format!("P6\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| to_u8(v)));
        std::fs::write(path.as_ref(), out).map_err(|e| Error::io(path.as_ref(), e))
    }
}

pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round_ties_even() as u8
}
