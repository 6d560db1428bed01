//! Dense 2D containers shared by every stage: images on the reconstruction
//! grid and sinograms on the (view, channel) acquisition grid.

use crate::error::{Error, Result};

/// Scalar image on a square-pixel grid, stored row-major (`iy * nx + ix`).
///
/// Row `iy` grows with the physical `y` coordinate; see
/// [`FanBeamGeometry::pixel_center`](crate::geometry::FanBeamGeometry::pixel_center).
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    nx: usize,
    ny: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self::filled(nx, ny, 0.0)
    }

    pub fn filled(nx: usize, ny: usize, value: f64) -> Self {
        Self {
            nx,
            ny,
            data: vec![value; nx * ny],
        }
    }

    pub fn from_vec(nx: usize, ny: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != nx * ny {
            return Err(Error::DimensionMismatch {
                expected: format!("{nx}x{ny} = {} pixels", nx * ny),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self { nx, ny, data })
    }

    pub fn from_fn(nx: usize, ny: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(nx * ny);
        for iy in 0..ny {
            for ix in 0..nx {
                data.push(f(ix, iy));
            }
        }
        Self { nx, ny, data }
    }

    #[inline]
    pub fn nx(&self) -> usize {
        self.nx
    }

    #[inline]
    pub fn ny(&self) -> usize {
        self.ny
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, ix: usize, iy: usize) -> f64 {
        self.data[iy * self.nx + ix]
    }

    #[inline]
    pub fn set(&mut self, ix: usize, iy: usize, value: f64) {
        self.data[iy * self.nx + ix] = value;
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Image) -> bool {
        self.nx == other.nx && self.ny == other.ny
    }

    pub fn ensure_shape(&self, nx: usize, ny: usize) -> Result<()> {
        if self.nx != nx || self.ny != ny {
            return Err(Error::DimensionMismatch {
                expected: format!("{nx}x{ny} image"),
                found: format!("{}x{} image", self.nx, self.ny),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            nx: self.nx,
            ny: self.ny,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Pointwise combination of two equally shaped images.
    pub fn zip_map(&self, other: &Image, f: impl Fn(f64, f64) -> f64) -> Image {
        assert!(self.same_shape(other), "zip_map on differently shaped images");
        Image {
            nx: self.nx,
            ny: self.ny,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean(&self) -> f64 {
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn dot(&self, other: &Image) -> f64 {
        assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn clamp_nonnegative(&mut self) {
        for v in &mut self.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Projection data indexed by `(view, channel)`, stored view-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Sinogram {
    n_views: usize,
    n_channels: usize,
    data: Vec<f64>,
}

impl Sinogram {
    pub fn zeros(n_views: usize, n_channels: usize) -> Self {
        Self {
            n_views,
            n_channels,
            data: vec![0.0; n_views * n_channels],
        }
    }

    pub fn from_vec(n_views: usize, n_channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != n_views * n_channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{n_views} views x {n_channels} channels"),
                found: format!("{} values", data.len()),
            });
        }
        Ok(Self {
            n_views,
            n_channels,
            data,
        })
    }

    #[inline]
    pub fn n_views(&self) -> usize {
        self.n_views
    }

    #[inline]
    pub fn n_channels(&self) -> usize {
        self.n_channels
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, view: usize, channel: usize) -> f64 {
        self.data[view * self.n_channels + channel]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn same_shape(&self, other: &Sinogram) -> bool {
        self.n_views == other.n_views && self.n_channels == other.n_channels
    }

    pub fn ensure_shape(&self, n_views: usize, n_channels: usize) -> Result<()> {
        if self.n_views != n_views || self.n_channels != n_channels {
            return Err(Error::DimensionMismatch {
                expected: format!("{n_views} views x {n_channels} channels"),
                found: format!("{} views x {} channels", self.n_views, self.n_channels),
            });
        }
        Ok(())
    }

    pub fn dot(&self, other: &Sinogram) -> f64 {
        assert!(self.same_shape(other));
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    /// Euclidean norm of `self - other`.
    pub fn distance(&self, other: &Sinogram) -> f64 {
        assert!(self.same_shape(other));
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}
