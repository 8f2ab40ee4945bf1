//! Dense row-major tensors and their on-disk formats.
//!
//! The binary format is the one used for saved feature maps: an 8-byte
//! little-endian rank, one 8-byte little-endian extent per dimension, then the
//! elements as 32-bit little-endian floats. Elements are held as `f64` in
//! memory, so a write/read cycle rounds through `f32`.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size in bytes of one serialized element.
pub const ELEMENT_BYTES: u64 = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        validate_shape(&shape)?;
        let numel: usize = shape.iter().product();
        if data.len() != numel {
            return Err(Error::Format(format!(
                "shape {shape:?} holds {numel} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        let numel = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; numel],
        }
    }

    /// Internal constructor for kernels that already guarantee the length.
    pub(crate) fn from_parts(shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self { shape, data }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// Bytes this tensor occupies in the wire format's element section.
    pub fn byte_size(&self) -> u64 {
        self.numel() as u64 * ELEMENT_BYTES
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self> {
        validate_shape(&shape)?;
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::ShapeMismatch {
                expected: self.shape,
                actual: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn sum_squared_difference(&self, other: &Tensor) -> Result<f64> {
        self.expect_shape(other.shape())?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum())
    }

    pub fn expect_shape(&self, expected: &[usize]) -> Result<()> {
        if self.shape != expected {
            return Err(Error::ShapeMismatch {
                expected: expected.to_vec(),
                actual: self.shape.clone(),
            });
        }
        Ok(())
    }

    pub fn write_binary<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(&(self.shape.len() as u64).to_le_bytes())?;
        for &extent in &self.shape {
            w.write_all(&(extent as u64).to_le_bytes())?;
        }
        let mut buf = Vec::with_capacity(self.data.len() * ELEMENT_BYTES as usize);
        for &v in &self.data {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn to_binary(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_binary(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_binary<R: Read>(mut r: R) -> Result<Self> {
        let rank = read_u64(&mut r)? as usize;
        if rank == 0 || rank > 8 {
            return Err(Error::Format(format!("unsupported tensor rank {rank}")));
        }
        let mut shape = Vec::with_capacity(rank);
        for _ in 0..rank {
            shape.push(read_u64(&mut r)? as usize);
        }
        validate_shape(&shape)?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &e| acc.checked_mul(e))
            .ok_or_else(|| Error::Format(format!("tensor shape {shape:?} overflows")))?;
        let mut bytes = vec![0u8; numel * ELEMENT_BYTES as usize];
        r.read_exact(&mut bytes)?;
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        let tensor = Self { shape, data };
        if !tensor.is_finite() {
            return Err(Error::NonFinite("tensor file".into()));
        }
        Ok(tensor)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_binary(std::io::BufReader::new(file))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::io::write_atomic(path, &self.to_binary())
    }

    /// Loads an 8-bit PGM (grayscale, 1 channel) or PPM (RGB, 3 channels)
    /// image as a channels × height × width tensor scaled to [0, 1].
    pub fn load_pnm(path: &Path) -> Result<Self> {
        let img = image::ImageReader::open(path)?
            .with_guessed_format()?
            .decode()?;
        let (w, h) = (img.width() as usize, img.height() as usize);
        match img {
            image::DynamicImage::ImageLuma8(gray) => {
                let data = gray.as_raw().iter().map(|&p| p as f64 / 255.0).collect();
                Self::new(vec![1, h, w], data)
            }
            other => {
                let rgb = other.to_rgb8();
                let raw = rgb.as_raw();
                let mut data = vec![0.0; 3 * h * w];
                for (i, px) in raw.chunks_exact(3).enumerate() {
                    for c in 0..3 {
                        data[c * h * w + i] = px[c] as f64 / 255.0;
                    }
                }
                Self::new(vec![3, h, w], data)
            }
        }
    }

    /// Writes a 1- or 3-channel tensor with values in [0, 1] as binary PGM/PPM.
    pub fn save_pnm(&self, path: &Path) -> Result<()> {
        let (c, h, w) = match self.shape.as_slice() {
            &[c, h, w] if c == 1 || c == 3 => (c, h, w),
            _ => return Err(Error::InvalidShape(self.shape.clone())),
        };
        let to_u8 = |v: f64| (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        let mut out = format!("P{}\n{} {}\n255\n", if c == 1 { 5 } else { 6 }, w, h).into_bytes();
        for i in 0..h * w {
            for ch in 0..c {
                out.push(to_u8(self.data[ch * h * w + i]));
            }
        }
        crate::io::write_atomic(path, &out)
    }
}

fn validate_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.contains(&0) {
        return Err(Error::InvalidShape(shape.to_vec()));
    }
    Ok(())
}

fn read_u64<R: Read>(r: &mut R) -> Result<u64> {
    let mut buf = [0u8; 8];
    r.read_exact(&mut buf)?;
    Ok(u64::from_le_bytes(buf))
}
