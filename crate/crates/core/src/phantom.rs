//! Analytic two-material phantoms built from additive ellipses.

use std::path::Path;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{FanBeamGeometry, Ray};
use crate::raster::Image;

/// Supersampling factor per axis used by [`rasterize`].
pub const SUPERSAMPLE: usize = 3;

/// Composed densities below this are treated as a phantom definition error
/// rather than rounding noise.
const NEGATIVE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq)]
pub struct EllipseSpec {
    pub center_xy: [f64; 2],
    pub semi_axes: [f64; 2],
    pub rotation_rad: f64,
    /// Additive density contributions `(d_rho1, d_rho2)` in g/cm^3.
    pub densities: (f64, f64),
}

impl EllipseSpec {
    pub fn disk(center_xy: [f64; 2], radius: f64, densities: (f64, f64)) -> Self {
        Self {
            center_xy,
            semi_axes: [radius, radius],
            rotation_rad: 0.0,
            densities,
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = self.semi_axes.iter().all(|&a| a > 0.0 && a.is_finite())
            && self.center_xy.iter().all(|v| v.is_finite())
            && self.rotation_rad.is_finite()
            && self.densities.0.is_finite()
            && self.densities.1.is_finite();
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid ellipse {self:?}")))
        }
    }

    /// Coordinates of `p` in the ellipse frame, scaled to the unit circle.
    #[inline]
    fn to_unit(&self, p: [f64; 2]) -> [f64; 2] {
        let (s, c) = self.rotation_rad.sin_cos();
        let dx = p[0] - self.center_xy[0];
        let dy = p[1] - self.center_xy[1];
        [
            (c * dx + s * dy) / self.semi_axes[0],
            (-s * dx + c * dy) / self.semi_axes[1],
        ]
    }

    #[inline]
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let u = self.to_unit(p);
        u[0] * u[0] + u[1] * u[1] <= 1.0
    }

    /// Length of the segment `ray` inside the ellipse.
    pub fn chord_length(&self, ray: &Ray) -> f64 {
        let (s, c) = self.rotation_rad.sin_cos();
        let q = self.to_unit(ray.source_xy);
        let dx = ray.detector_xy[0] - ray.source_xy[0];
        let dy = ray.detector_xy[1] - ray.source_xy[1];
        let e = [
            (c * dx + s * dy) / self.semi_axes[0],
            (-s * dx + c * dy) / self.semi_axes[1],
        ];
        let a = e[0] * e[0] + e[1] * e[1];
        let b = q[0] * e[0] + q[1] * e[1];
        let cc = q[0] * q[0] + q[1] * q[1] - 1.0;
        let disc = b * b - a * cc;
        if a == 0.0 || disc <= 0.0 {
            return 0.0;
        }
        let root = disc.sqrt();
        // Numerically stable pair of roots of a t^2 + 2 b t + cc.
        let k = -(b + b.signum() * root);
        let (t1, t2) = if k == 0.0 {
            (-root / a, root / a)
        } else {
            let (r1, r2) = (k / a, cc / k);
            (r1.min(r2), r1.max(r2))
        };
        let lo = t1.max(0.0);
        let hi = t2.min(1.0);
        if hi <= lo {
            return 0.0;
        }
        (hi - lo) * dx.hypot(dy)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Phantom {
    pub ellipses: Vec<EllipseSpec>,
    pub field_of_view_cm: f64,
}

impl Phantom {
    pub fn new(ellipses: Vec<EllipseSpec>, field_of_view_cm: f64) -> Result<Self> {
        if !(field_of_view_cm > 0.0 && field_of_view_cm.is_finite()) {
            return Err(Error::Parameter(format!(
                "phantom field of view must be positive, got {field_of_view_cm}"
            )));
        }
        for e in &ellipses {
            e.validate()?;
        }
        Ok(Self {
            ellipses,
            field_of_view_cm,
        })
    }

    pub fn is_empty(&self) -> bool {
        self.ellipses.is_empty()
    }
}

/// Densities `(rho1, rho2)` at a point: sum over all containing ellipses.
pub fn density_at(phantom: &Phantom, point_xy: [f64; 2]) -> (f64, f64) {
    phantom
        .ellipses
        .iter()
        .filter(|e| e.contains(point_xy))
        .fold((0.0, 0.0), |acc, e| (acc.0 + e.densities.0, acc.1 + e.densities.1))
}

/// Ground-truth density images, each pixel the mean over a 3x3 subgrid.
pub fn rasterize(phantom: &Phantom, geom: &FanBeamGeometry) -> Result<(Image, Image)> {
    let (nx, ny) = (geom.n_x, geom.n_y);
    let h = geom.pixel_cm;
    let offsets: Vec<f64> = (0..SUPERSAMPLE)
        .map(|k| ((k as f64 + 0.5) / SUPERSAMPLE as f64 - 0.5) * h)
        .collect();
    let norm = (SUPERSAMPLE * SUPERSAMPLE) as f64;
    let rows: Vec<Vec<(f64, f64)>> = (0..ny)
        .into_par_iter()
        .map(|iy| {
            (0..nx)
                .map(|ix| {
                    let [cx, cy] = geom.pixel_center(ix, iy);
                    let mut acc = (0.0, 0.0);
                    for &oy in &offsets {
                        for &ox in &offsets {
                            let d = density_at(phantom, [cx + ox, cy + oy]);
                            acc.0 += d.0;
                            acc.1 += d.1;
                        }
                    }
                    (acc.0 / norm, acc.1 / norm)
                })
                .collect()
        })
        .collect();

    let mut rho1 = Image::zeros(nx, ny);
    let mut rho2 = Image::zeros(nx, ny);
    for (iy, row) in rows.into_iter().enumerate() {
        for (ix, (r1, r2)) in row.into_iter().enumerate() {
            if r1 < -NEGATIVE_TOLERANCE || r2 < -NEGATIVE_TOLERANCE {
                return Err(Error::NegativeDensity {
                    ix,
                    iy,
                    rho1: r1,
                    rho2: r2,
                });
            }
            rho1.set(ix, iy, r1.max(0.0));
            rho2.set(ix, iy, r2.max(0.0));
        }
    }
    Ok((rho1, rho2))
}

/// Exact line integrals of both densities along the ray segment.
pub fn analytic_path_integrals(phantom: &Phantom, ray: &Ray) -> (f64, f64) {
    phantom.ellipses.iter().fold((0.0, 0.0), |acc, e| {
        let len = e.chord_length(ray);
        (acc.0 + len * e.densities.0, acc.1 + len * e.densities.1)
    })
}

/// Parses the phantom text format: a `fov <cm>` header followed by lines
/// `cx cy a b theta_deg drho1 drho2`.
pub fn parse_phantom(text: &str, path: &Path) -> Result<Phantom> {
    let mut fov = None;
    let mut ellipses = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        let num = |s: &str| {
            s.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::parse(path, line_no, format!("not a finite number: {s:?}")))
        };
        if fields[0] == "fov" {
            if fields.len() != 2 || fov.is_some() {
                return Err(Error::parse(path, line_no, "expected a single `fov <cm>` header"));
            }
            fov = Some(num(fields[1])?);
            continue;
        }
        if fov.is_none() {
            return Err(Error::parse(path, line_no, "missing `fov <cm>` header"));
        }
        if fields.len() != 7 {
            return Err(Error::parse(
                path,
                line_no,
                format!("expected 7 columns (cx cy a b theta_deg drho1 drho2), found {}", fields.len()),
            ));
        }
        let v: Vec<f64> = fields.iter().map(|s| num(s)).collect::<Result<_>>()?;
        if v[2] <= 0.0 || v[3] <= 0.0 {
            return Err(Error::parse(path, line_no, "semi-axes must be positive"));
        }
        ellipses.push(EllipseSpec {
            center_xy: [v[0], v[1]],
            semi_axes: [v[2], v[3]],
            rotation_rad: v[4].to_radians(),
            densities: (v[5], v[6]),
        });
    }
    let fov = fov.ok_or_else(|| Error::parse(path, 0, "missing `fov <cm>` header"))?;
    Phantom::new(ellipses, fov).map_err(|e| Error::parse(path, 0, e.to_string()))
}

pub fn load_phantom(path: impl AsRef<Path>) -> Result<Phantom> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_phantom(&text, path)
}
