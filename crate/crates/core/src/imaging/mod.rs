//! Raster primitives used by the weather estimator and the enhancement
//! branches: colour conversion, CLAHE, bilateral/median filters, gamma,
//! vertical morphology, Telea inpainting and edge statistics.
//!
//! Every operation is a pure function of its inputs. Borders are handled by
//! edge replication throughout.

mod clahe;
mod color;
mod edges;
mod filter;
mod inpaint;
mod io;

pub use clahe::{clahe, ClaheParams};
pub use color::{from_lab, lab_stats, to_lab, LabStats};
pub use edges::{canny_edges, edge_features, sobel_magnitude, EdgeThresholds};
pub use filter::{
    bilateral, dilate_vertical, erode_vertical, gamma_correct, median_filter, min_filter,
    morph_open_vertical,
};
pub use inpaint::telea_inpaint;
pub use io::{read_image, read_ppm, write_image, write_ppm};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum ImagingError {
    #[error("expected a {expected}-channel raster, got {got} channels")]
    ChannelMismatch { expected: usize, got: usize },
    #[error("raster dimensions differ: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("invalid raster: {0}")]
    InvalidRaster(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error("inpainting mask covers the whole raster; no boundary to propagate from")]
    FullyMasked,
    #[error("unsupported image format: {0}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Image(#[from] image::ImageError),
}

pub type Result<T> = std::result::Result<T, ImagingError>;

/// An 8-bit raster with one or three interleaved channels, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Raster {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<u8>,
}

impl Raster {
    pub fn new(width: usize, height: usize, channels: usize, data: Vec<u8>) -> Result<Self> {
        if channels != 1 && channels != 3 {
            return Err(ImagingError::InvalidRaster(format!(
                "channel count must be 1 or 3, got {channels}"
            )));
        }
        if data.len() != width * height * channels {
            return Err(ImagingError::InvalidRaster(format!(
                "data length {} does not match {width}x{height}x{channels}",
                data.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Self {
        assert!(channels == 1 || channels == 3);
        Self {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    /// Builds a single-channel raster by evaluating `f(x, y)` at every pixel.
    pub fn from_fn_gray(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 1,
            data,
        }
    }

    pub fn from_fn_rgb(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> [u8; 3],
    ) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Self {
            width,
            height,
            channels: 3,
            data,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<u8> {
        self.data
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: u8) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Sample with edge replication for out-of-range coordinates.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize, c: usize) -> u8 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.get(x, y, c)
    }

    /// Extracts channel `c` as a single-channel raster.
    pub fn channel(&self, c: usize) -> Raster {
        assert!(c < self.channels);
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Overwrites channel `c` with the samples of a single-channel raster.
    pub fn set_channel(&mut self, c: usize, plane: &Raster) -> Result<()> {
        plane.require_channels(1)?;
        self.require_same_size(plane)?;
        for (dst, &src) in self
            .data
            .iter_mut()
            .skip(c)
            .step_by(self.channels)
            .zip(plane.data.iter())
        {
            *dst = src;
        }
        Ok(())
    }

    /// ITU-R BT.601 luma, rounded.
    pub fn to_gray(&self) -> Raster {
        if self.channels == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|p| {
                let y = 0.299 * p[0] as f64 + 0.587 * p[1] as f64 + 0.114 * p[2] as f64;
                y.round().clamp(0.0, 255.0) as u8
            })
            .collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Replicates a single-channel raster into three channels.
    pub fn to_rgb(&self) -> Raster {
        if self.channels == 3 {
            return self.clone();
        }
        let data = self.data.iter().flat_map(|&v| [v, v, v]).collect();
        Raster {
            width: self.width,
            height: self.height,
            channels: 3,
            data,
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().map(|&v| v as f64).sum::<f64>() / self.data.len() as f64
    }

    pub(crate) fn require_channels(&self, expected: usize) -> Result<()> {
        if self.channels != expected {
            return Err(ImagingError::ChannelMismatch {
                expected,
                got: self.channels,
            });
        }
        Ok(())
    }

    pub(crate) fn require_same_size(&self, other: &Raster) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(ImagingError::SizeMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }
}
