//! Images and latent grids: the two dense array types the codec moves
//! between.

use ndarray::Array2;

use crate::error::{Error, Result};
use crate::num::Scalar;

/// A raster image with pixel values in `[0, 1]`, row-major `(y, x, channel)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image<T> {
    height: usize,
    width: usize,
    channels: usize,
    pixels: Vec<T>,
}

impl<T: Scalar> Image<T> {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<T>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidInput("image dimensions must be positive".into()));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidInput(format!(
                "image channels must be 1 or 3, got {channels}"
            )));
        }
        if pixels.len() != height * width * channels {
            return Err(Error::Contract(format!(
                "pixel buffer length {} does not match {}x{}x{}",
                pixels.len(),
                height,
                width,
                channels
            )));
        }
        for (i, &v) in pixels.iter().enumerate() {
            if !v.is_finite() || v < T::zero() || v > T::one() {
                return Err(Error::InvalidInput(format!(
                    "pixel {i} out of [0,1]: {v}"
                )));
            }
        }
        Ok(Self { height, width, channels, pixels })
    }

    /// Build from raw values, clamping into `[0, 1]` (decoder outputs).
    pub fn from_clamped(height: usize, width: usize, channels: usize, raw: Vec<T>) -> Result<Self> {
        let clamped = raw
            .into_iter()
            .map(|v| {
                if v.is_finite() {
                    v.max(T::zero()).min(T::one())
                } else {
                    T::zero()
                }
            })
            .collect();
        Self::new(height, width, channels, clamped)
    }

    pub fn constant(height: usize, width: usize, channels: usize, value: T) -> Result<Self> {
        Self::new(height, width, channels, vec![value; height * width * channels])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[T] {
        &self.pixels
    }

    pub fn get(&self, y: usize, x: usize, c: usize) -> T {
        self.pixels[(y * self.width + x) * self.channels + c]
    }
}

/// A `grid_h x grid_w` grid of `dim`-dimensional latent vectors, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentGrid<T> {
    grid_h: usize,
    grid_w: usize,
    dim: usize,
    values: Vec<T>,
}

impl<T: Scalar> LatentGrid<T> {
    pub fn new(grid_h: usize, grid_w: usize, dim: usize, values: Vec<T>) -> Result<Self> {
        if grid_h == 0 || grid_w == 0 || dim == 0 {
            return Err(Error::InvalidInput("latent grid dimensions must be positive".into()));
        }
        if values.len() != grid_h * grid_w * dim {
            return Err(Error::Contract(format!(
                "latent buffer length {} does not match {}x{}x{}",
                values.len(),
                grid_h,
                grid_w,
                dim
            )));
        }
        if let Some((i, v)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite latent at index {i}: {v}")));
        }
        Ok(Self { grid_h, grid_w, dim, values })
    }

    pub fn grid_h(&self) -> usize {
        self.grid_h
    }

    pub fn grid_w(&self) -> usize {
        self.grid_w
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn cell(&self, i: usize, j: usize) -> &[T] {
        let start = (i * self.grid_w + j) * self.dim;
        &self.values[start..start + self.dim]
    }

    /// View the grid as a `(cells x dim)` matrix, cells in row-major order.
    pub fn to_matrix(&self) -> Array2<T> {
        Array2::from_shape_vec((self.num_cells(), self.dim), self.values.clone())
            .expect("cell count times dim equals buffer length")
    }

    /// Rebuild a grid from a `(cells x dim)` matrix.
    pub fn from_matrix(grid_h: usize, grid_w: usize, matrix: &Array2<T>) -> Result<Self> {
        if matrix.nrows() != grid_h * grid_w {
            return Err(Error::Contract(format!(
                "matrix rows {} do not match grid {}x{}",
                matrix.nrows(),
                grid_h,
                grid_w
            )));
        }
        let dim = matrix.ncols();
        let values = matrix.iter().copied().collect();
        Self::new(grid_h, grid_w, dim, values)
    }
}
