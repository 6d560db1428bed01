//! Guided image filter with clipped box windows.
//!
//! Within each window `w_k` the output is modeled as `a_k I + b_k`, with the
//! ridge-regularized least-squares fit
//! `a_k = cov_k(I, x) / (var_k(I) + eps)`, `b_k = mean_k(x) - a_k mean_k(I)`.
//! Every pixel lies in several windows; its output averages them:
//! `y = mean(a) I + mean(b)`.
//!
//! Windows are clipped at the border and `|w|` is the clipped pixel count.
//! Box sums are taken on data shifted by its first pixel, which keeps constant
//! images exact fixed points and reduces cancellation in the moments.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::Image;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidedFilterParams {
    pub radius_px: usize,
    /// Regularization in squared guide-intensity units.
    pub epsilon: f64,
}

impl GuidedFilterParams {
    pub fn new(radius_px: usize, epsilon: f64) -> Result<Self> {
        let p = Self { radius_px, epsilon };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if self.radius_px < 1 {
            return Err(Error::Parameter("guided filter radius must be at least 1".into()));
        }
        if !(self.epsilon > 0.0 && self.epsilon.is_finite()) {
            return Err(Error::Parameter(format!(
                "guided filter epsilon must be positive, got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Default window radius for an `n`-pixel grid: 8 px at 512, scaled linearly,
/// never below 2.
pub fn default_radius(n: usize) -> usize {
    ((8.0 * n as f64 / 512.0).round() as usize).max(2)
}

/// Regularization given either absolutely or relative to the squared dynamic
/// range of the guide.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Epsilon {
    Absolute(f64),
    Relative(f64),
}

impl Epsilon {
    pub const DEFAULT_RELATIVE: f64 = 1e-4;

    pub fn resolve(&self, guide: &Image) -> f64 {
        match *self {
            Epsilon::Absolute(e) => e,
            Epsilon::Relative(r) => {
                let range = guide.max() - guide.min();
                r * range * range
            }
        }
    }
}

impl Default for Epsilon {
    fn default() -> Self {
        Epsilon::Relative(Self::DEFAULT_RELATIVE)
    }
}

/// Window coefficients and their window averages.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterCoeffs {
    pub a: Image,
    pub b: Image,
    pub a_bar: Image,
    pub b_bar: Image,
}

/// Sums over clipped windows, separably: horizontal then vertical.
fn box_sum(data: &[f64], nx: usize, ny: usize, r: usize) -> Vec<f64> {
    let mut horizontal = vec![0.0; nx * ny];
    horizontal
        .par_chunks_mut(nx)
        .zip(data.par_chunks(nx))
        .for_each(|(out, row)| {
            let mut acc: f64 = row[..(r + 1).min(nx)].iter().sum();
            for x in 0..nx {
                out[x] = acc;
                if x + r + 1 < nx {
                    acc += row[x + r + 1];
                }
                if x >= r {
                    acc -= row[x - r];
                }
            }
        });

    let mut out = vec![0.0; nx * ny];
    // Column-parallel over strips keeps each column's order fixed.
    const STRIP: usize = 64;
    let strips: Vec<(usize, Vec<f64>)> = (0..nx.div_ceil(STRIP))
        .into_par_iter()
        .map(|s| {
            let x0 = s * STRIP;
            let w = STRIP.min(nx - x0);
            let mut acc = vec![0.0; w];
            for y in 0..(r + 1).min(ny) {
                for (a, v) in acc.iter_mut().zip(&horizontal[y * nx + x0..y * nx + x0 + w]) {
                    *a += v;
                }
            }
            let mut strip = vec![0.0; w * ny];
            for y in 0..ny {
                strip[y * w..(y + 1) * w].copy_from_slice(&acc);
                if y + r + 1 < ny {
                    let row = &horizontal[(y + r + 1) * nx + x0..(y + r + 1) * nx + x0 + w];
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                if y >= r {
                    let row = &horizontal[(y - r) * nx + x0..(y - r) * nx + x0 + w];
                    for (a, v) in acc.iter_mut().zip(row) {
                        *a -= v;
                    }
                }
            }
            (x0, strip)
        })
        .collect();
    for (x0, strip) in strips {
        let w = strip.len() / ny.max(1);
        for y in 0..ny {
            out[y * nx + x0..y * nx + x0 + w].copy_from_slice(&strip[y * w..(y + 1) * w]);
        }
    }
    out
}

/// Number of in-bounds positions of a radius-`r` window centered at `i`.
#[inline]
fn clipped_extent(i: usize, n: usize, r: usize) -> usize {
    (i + r).min(n - 1) - i.saturating_sub(r) + 1
}

/// Mean over the clipped `(2r+1)^2` window around every pixel.
pub fn box_mean(image: &Image, radius: usize) -> Image {
    let (nx, ny) = (image.nx(), image.ny());
    if image.is_empty() {
        return image.clone();
    }
    let shift = image.data()[0];
    let shifted: Vec<f64> = image.data().iter().map(|v| v - shift).collect();
    let sums = box_sum(&shifted, nx, ny, radius);
    Image::from_fn(nx, ny, |ix, iy| {
        let count = clipped_extent(ix, nx, radius) * clipped_extent(iy, ny, radius);
        shift + sums[iy * nx + ix] / count as f64
    })
}

fn check_pair(guide: &Image, input: &Image) -> Result<()> {
    if !guide.same_shape(input) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} input matching the guide", guide.nx(), guide.ny()),
            found: format!("{}x{}", input.nx(), input.ny()),
        });
    }
    Ok(())
}

pub fn fit_coeffs(guide: &Image, input: &Image, params: &GuidedFilterParams) -> Result<FilterCoeffs> {
    params.validate()?;
    check_pair(guide, input)?;
    if guide.is_empty() {
        return Ok(FilterCoeffs {
            a: guide.clone(),
            b: guide.clone(),
            a_bar: guide.clone(),
            b_bar: guide.clone(),
        });
    }
    let r = params.radius_px;
    let (g0, x0) = (guide.data()[0], input.data()[0]);
    let g = guide.map(|v| v - g0);
    let x = input.map(|v| v - x0);

    let mean_g = box_mean(&g, r);
    let mean_x = box_mean(&x, r);
    let mean_gx = box_mean(&g.zip_map(&x, |a, b| a * b), r);
    let mean_gg = box_mean(&g.map(|v| v * v), r);

    let n = guide.len();
    let mut a = Vec::with_capacity(n);
    let mut b = Vec::with_capacity(n);
    for k in 0..n {
        let nu = mean_g.data()[k];
        let xbar = mean_x.data()[k];
        let var = (mean_gg.data()[k] - nu * nu).max(0.0);
        let cov = mean_gx.data()[k] - nu * xbar;
        let ak = cov / (var + params.epsilon);
        a.push(ak);
        // Back in unshifted units: b = mean(x) - a mean(I).
        b.push((xbar + x0) - ak * (nu + g0));
    }
    let a = Image::from_vec(guide.nx(), guide.ny(), a)?;
    let b = Image::from_vec(guide.nx(), guide.ny(), b)?;
    let a_bar = box_mean(&a, r);
    let b_bar = box_mean(&b, r);
    Ok(FilterCoeffs { a, b, a_bar, b_bar })
}

/// Filters `input` under `guide`: `y = a_bar * I + b_bar`.
pub fn apply(guide: &Image, input: &Image, params: &GuidedFilterParams) -> Result<Image> {
    let c = fit_coeffs(guide, input, params)?;
    Ok(output(&c, guide))
}

/// Output of already fitted coefficients.
pub fn output(coeffs: &FilterCoeffs, guide: &Image) -> Image {
    let ab = coeffs.a_bar.zip_map(guide, |a, i| a * i);
    ab.zip_map(&coeffs.b_bar, |v, b| v + b)
}
