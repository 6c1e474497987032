use crate::error::{Error, Result};
use crate::kspace::ComplexImage;

/// Channel-major feature stack `(channels, height, width)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStack {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f64>,
}

impl ChannelStack {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        ChannelStack {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
        }
    }

    pub fn new(channels: usize, height: usize, width: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != channels * height * width {
            return Err(Error::Shape(format!(
                "stack {channels}x{height}x{width} needs {} values, got {}",
                channels * height * width,
                data.len()
            )));
        }
        Ok(ChannelStack {
            channels,
            height,
            width,
            data,
        })
    }

    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn plane(&self, c: usize) -> &[f64] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [f64] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    /// Concatenates stacks along the channel axis.
    pub fn concat(parts: &[&ChannelStack]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("nothing to concatenate".into()))?;
        let (h, w) = (first.height, first.width);
        let mut data = Vec::with_capacity(parts.iter().map(|p| p.data.len()).sum());
        let mut channels = 0;
        for p in parts {
            if (p.height, p.width) != (h, w) {
                return Err(Error::Shape(format!(
                    "cannot concatenate {}x{} with {}x{}",
                    p.height, p.width, h, w
                )));
            }
            channels += p.channels;
            data.extend_from_slice(&p.data);
        }
        ChannelStack::new(channels, h, w, data)
    }

    /// Splits off the first `n` channels.
    pub fn split_at(&self, n: usize) -> (ChannelStack, ChannelStack) {
        let cut = n * self.plane_len();
        (
            ChannelStack {
                channels: n,
                height: self.height,
                width: self.width,
                data: self.data[..cut].to_vec(),
            },
            ChannelStack {
                channels: self.channels - n,
                height: self.height,
                width: self.width,
                data: self.data[cut..].to_vec(),
            },
        )
    }

    /// Real and imaginary planes as two channels.
    pub fn from_complex(img: &ComplexImage) -> Self {
        let mut data = img.real_part();
        data.extend(img.imag_part());
        ChannelStack {
            channels: 2,
            height: img.height(),
            width: img.width(),
            data,
        }
    }

    pub fn from_real(height: usize, width: usize, planes: &[&[f64]]) -> Result<Self> {
        let mut data = Vec::with_capacity(planes.len() * height * width);
        for p in planes {
            if p.len() != height * width {
                return Err(Error::Shape("plane size mismatch".into()));
            }
            data.extend_from_slice(p);
        }
        ChannelStack::new(planes.len(), height, width, data)
    }

    /// Interprets a two-channel stack as a complex image.
    pub fn to_complex(&self) -> Result<ComplexImage> {
        if self.channels != 2 {
            return Err(Error::Shape(format!("expected 2 channels, got {}", self.channels)));
        }
        ComplexImage::from_parts(self.height, self.width, self.plane(0), self.plane(1))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}
