//! Image quality measures: RMSE against a reference and ROI signal-to-noise.

use std::path::Path;

use crate::error::{Error, Result};
use crate::raster::Image;

pub fn rmse(image: &Image, reference: &Image) -> Result<f64> {
    if !image.same_shape(reference) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{} image", reference.nx(), reference.ny()),
            found: format!("{}x{} image", image.nx(), image.ny()),
        });
    }
    if image.is_empty() {
        return Ok(0.0);
    }
    let sse: f64 = image
        .data()
        .iter()
        .zip(reference.data())
        .map(|(a, b)| (a - b) * (a - b))
        .sum();
    Ok((sse / image.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiShape {
    Rectangle,
    Ellipse,
}

/// Region of interest in pixel coordinates: pixel `(ix, iy)` sits at
/// `(ix, iy)`, extents are half-widths (rectangle) or semi-axes (ellipse).
#[derive(Debug, Clone, PartialEq)]
pub struct RoiSpec {
    pub label: String,
    pub shape: RoiShape,
    pub center: [f64; 2],
    pub extents: [f64; 2],
}

impl RoiSpec {
    pub fn contains(&self, ix: usize, iy: usize) -> bool {
        let dx = (ix as f64 - self.center[0]) / self.extents[0];
        let dy = (iy as f64 - self.center[1]) / self.extents[1];
        match self.shape {
            RoiShape::Rectangle => dx.abs() <= 1.0 && dy.abs() <= 1.0,
            RoiShape::Ellipse => dx * dx + dy * dy <= 1.0,
        }
    }

    /// Checks the ROI is nonempty and its bounding box lies inside the image.
    pub fn validate(&self, nx: usize, ny: usize) -> Result<()> {
        let [cx, cy] = self.center;
        let [ax, ay] = self.extents;
        let inside = ax > 0.0
            && ay > 0.0
            && cx - ax >= -0.5
            && cy - ay >= -0.5
            && cx + ax <= nx as f64 - 0.5
            && cy + ay <= ny as f64 - 0.5;
        if !inside {
            return Err(Error::Parameter(format!(
                "ROI {:?} is not fully inside the {nx}x{ny} image",
                self.label
            )));
        }
        if self.pixels(nx, ny).is_empty() {
            return Err(Error::Parameter(format!("ROI {:?} covers no pixel centers", self.label)));
        }
        Ok(())
    }

    pub fn pixels(&self, nx: usize, ny: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for iy in 0..ny {
            for ix in 0..nx {
                if self.contains(ix, iy) {
                    out.push(iy * nx + ix);
                }
            }
        }
        out
    }
}

/// Mean and population standard deviation over the ROI.
pub fn roi_stats(image: &Image, roi: &RoiSpec) -> Result<(f64, f64)> {
    roi.validate(image.nx(), image.ny())?;
    let px = roi.pixels(image.nx(), image.ny());
    let n = px.len() as f64;
    let mean = px.iter().map(|&k| image.data()[k]).sum::<f64>() / n;
    let var = px
        .iter()
        .map(|&k| (image.data()[k] - mean).powi(2))
        .sum::<f64>()
        / n;
    Ok((mean, var.sqrt()))
}

/// `20 log10(mean / std)` over the ROI; `+inf` when the ROI is constant.
pub fn roi_snr(image: &Image, roi: &RoiSpec) -> Result<f64> {
    let (mean, std) = roi_stats(image, roi)?;
    if std == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(20.0 * (mean / std).abs().log10())
}

/// Parses ROI lines `label shape cx cy ax ay` (`shape` is `rect` or
/// `ellipse`).
pub fn parse_rois(text: &str, path: &Path) -> Result<Vec<RoiSpec>> {
    let mut rois = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split_whitespace().collect();
        if f.len() != 6 {
            return Err(Error::parse(path, line_no, "expected `label shape cx cy ax ay`"));
        }
        let shape = match f[1] {
            "rect" | "rectangle" => RoiShape::Rectangle,
            "ellipse" => RoiShape::Ellipse,
            other => {
                return Err(Error::parse(path, line_no, format!("unknown ROI shape {other:?}")))
            }
        };
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, line_no, format!("not a finite number: {s:?}")))
        };
        rois.push(RoiSpec {
            label: f[0].to_string(),
            shape,
            center: [num(f[2])?, num(f[3])?],
            extents: [num(f[4])?, num(f[5])?],
        });
    }
    Ok(rois)
}

pub fn load_rois(path: impl AsRef<Path>) -> Result<Vec<RoiSpec>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_rois(&text, path)
}
