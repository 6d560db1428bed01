//! Fan-beam acquisition geometry and the discrete ray transform.
//!
//! Every ray runs from a point source to the center of one flat-detector
//! channel. Its footprint on the image grid is the exact list of pixel
//! intersection lengths, found by an incremental parametric traversal of the
//! grid planes. [`Projector`] applies the resulting system matrix and its
//! exact transpose.

use std::f64::consts::TAU;
use std::sync::OnceLock;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::raster::{Image, Sinogram};

/// Flat-detector fan-beam geometry with the image grid centered on the
/// rotation axis.
#[derive(Debug, Clone, PartialEq)]
pub struct FanBeamGeometry {
    /// Source to rotation axis distance (cm).
    pub sod_cm: f64,
    /// Source to detector distance (cm).
    pub sdd_cm: f64,
    pub n_channels: usize,
    /// Channel width (cm).
    pub channel_pitch_cm: f64,
    pub n_views: usize,
    /// Total angular coverage (rad), sampled uniformly without repeating the
    /// end point.
    pub angle_span_rad: f64,
    pub n_x: usize,
    pub n_y: usize,
    /// Pixel side length (cm).
    pub pixel_cm: f64,
}

impl FanBeamGeometry {
    pub const DEFAULT_VIEWS: usize = 360;
    pub const DEFAULT_ANGLE_SPAN: f64 = TAU;

    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Geometry(msg));
        if !(self.sod_cm > 0.0 && self.sod_cm.is_finite()) {
            return fail(format!("sod_cm must be positive, got {}", self.sod_cm));
        }
        if !(self.sdd_cm > self.sod_cm && self.sdd_cm.is_finite()) {
            return fail(format!(
                "sdd_cm ({}) must exceed sod_cm ({})",
                self.sdd_cm, self.sod_cm
            ));
        }
        if self.n_channels == 0 || self.n_views == 0 {
            return fail("n_channels and n_views must be at least 1".into());
        }
        if !(self.channel_pitch_cm > 0.0 && self.channel_pitch_cm.is_finite()) {
            return fail(format!(
                "channel_pitch_cm must be positive, got {}",
                self.channel_pitch_cm
            ));
        }
        if !(self.angle_span_rad > 0.0 && self.angle_span_rad.is_finite()) {
            return fail(format!(
                "angle_span_rad must be positive, got {}",
                self.angle_span_rad
            ));
        }
        if self.n_x == 0 || self.n_y == 0 {
            return fail("image grid must be at least 1x1".into());
        }
        if !(self.pixel_cm > 0.0 && self.pixel_cm.is_finite()) {
            return fail(format!("pixel_cm must be positive, got {}", self.pixel_cm));
        }
        if self.n_x > u32::MAX as usize / self.n_y.max(1) {
            return fail("image grid too large".into());
        }
        let inscribed = self.n_x.min(self.n_y) as f64 * self.pixel_cm / 2.0;
        let fov = self.fov_radius_cm();
        if inscribed > fov * (1.0 + 1e-12) {
            return fail(format!(
                "image inscribed circle (radius {inscribed:.4} cm) exceeds the scanned field of view (radius {fov:.4} cm)"
            ));
        }
        Ok(())
    }

    /// Radius of the circle at the rotation axis covered by every view.
    pub fn fov_radius_cm(&self) -> f64 {
        let half_width = self.n_channels as f64 * self.channel_pitch_cm / 2.0;
        self.sod_cm * (half_width / self.sdd_cm).atan().sin()
    }

    #[inline]
    pub fn n_rays(&self) -> usize {
        self.n_views * self.n_channels
    }

    #[inline]
    pub fn n_pixels(&self) -> usize {
        self.n_x * self.n_y
    }

    /// Half extents of the image grid (cm).
    #[inline]
    pub fn half_extent(&self) -> (f64, f64) {
        (
            self.n_x as f64 * self.pixel_cm / 2.0,
            self.n_y as f64 * self.pixel_cm / 2.0,
        )
    }

    /// Physical center of pixel `(ix, iy)`.
    #[inline]
    pub fn pixel_center(&self, ix: usize, iy: usize) -> [f64; 2] {
        let (hx, hy) = self.half_extent();
        [
            (ix as f64 + 0.5) * self.pixel_cm - hx,
            (iy as f64 + 0.5) * self.pixel_cm - hy,
        ]
    }

    #[inline]
    pub fn view_angle(&self, view: usize) -> f64 {
        view as f64 * self.angle_span_rad / self.n_views as f64
    }

    /// Ray from the source at `view` to the center of `channel`.
    pub fn ray(&self, view: usize, channel: usize) -> Ray {
        let (sin, cos) = self.view_angle(view).sin_cos();
        let source_xy = [self.sod_cm * cos, self.sod_cm * sin];
        let axis_offset = self.sod_cm - self.sdd_cm;
        let u = (channel as f64 + 0.5 - self.n_channels as f64 / 2.0) * self.channel_pitch_cm;
        let detector_xy = [axis_offset * cos - u * sin, axis_offset * sin + u * cos];
        Ray {
            source_xy,
            detector_xy,
            view_index: view,
            channel_index: channel,
        }
    }

    pub fn empty_image(&self) -> Image {
        Image::zeros(self.n_x, self.n_y)
    }

    pub fn empty_sinogram(&self) -> Sinogram {
        Sinogram::zeros(self.n_views, self.n_channels)
    }
}

/// One source-to-channel line, identified by its ray index `l`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Ray {
    pub source_xy: [f64; 2],
    pub detector_xy: [f64; 2],
    pub view_index: usize,
    pub channel_index: usize,
}

impl Ray {
    pub fn length(&self) -> f64 {
        let dx = self.detector_xy[0] - self.source_xy[0];
        let dy = self.detector_xy[1] - self.source_xy[1];
        dx.hypot(dy)
    }

    #[inline]
    pub fn point_at(&self, t: f64) -> [f64; 2] {
        [
            self.source_xy[0] + t * (self.detector_xy[0] - self.source_xy[0]),
            self.source_xy[1] + t * (self.detector_xy[1] - self.source_xy[1]),
        ]
    }
}

/// Pixel intersection lengths of one ray.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RayFootprint {
    pub entries: Vec<(usize, f64)>,
}

impl RayFootprint {
    pub fn total_length(&self) -> f64 {
        self.entries.iter().map(|&(_, len)| len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// All rays of the geometry in view-major order.
pub fn enumerate_rays(geom: &FanBeamGeometry) -> Vec<Ray> {
    let mut rays = Vec::with_capacity(geom.n_rays());
    for v in 0..geom.n_views {
        for c in 0..geom.n_channels {
            rays.push(geom.ray(v, c));
        }
    }
    rays
}

/// Exact intersection lengths of `ray` with the pixels of the grid.
pub fn trace(ray: &Ray, geom: &FanBeamGeometry) -> RayFootprint {
    let mut buf = Vec::new();
    trace_into(ray, geom, &mut buf);
    RayFootprint {
        entries: buf.into_iter().map(|(i, l)| (i as usize, l)).collect(),
    }
}

/// Parametric interval `[t_min, t_max]` of the ray segment inside the grid's
/// bounding box, or `None` when it misses.
fn clip_to_grid(ray: &Ray, geom: &FanBeamGeometry) -> Option<(f64, f64)> {
    let (hx, hy) = geom.half_extent();
    let mut t_min = 0.0_f64;
    let mut t_max = 1.0_f64;
    for (origin, delta, half) in [
        (ray.source_xy[0], ray.detector_xy[0] - ray.source_xy[0], hx),
        (ray.source_xy[1], ray.detector_xy[1] - ray.source_xy[1], hy),
    ] {
        if delta == 0.0 {
            if origin <= -half || origin >= half {
                return None;
            }
        } else {
            let a = (-half - origin) / delta;
            let b = (half - origin) / delta;
            t_min = t_min.max(a.min(b));
            t_max = t_max.min(a.max(b));
        }
    }
    (t_max > t_min).then_some((t_min, t_max))
}

/// Crossing parameters of one family of grid planes, walked in ray order.
struct PlaneWalk {
    origin: f64,
    delta: f64,
    lo: f64,
    pitch: f64,
    index: i64,
    step: i64,
    n_planes: i64,
}

impl PlaneWalk {
    fn new(origin: f64, delta: f64, lo: f64, pitch: f64, n: usize, t_start: f64) -> Self {
        let n_planes = n as i64 + 1;
        if delta == 0.0 {
            return Self {
                origin,
                delta,
                lo,
                pitch,
                index: n_planes,
                step: 1,
                n_planes,
            };
        }
        let coord = (origin + t_start * delta - lo) / pitch;
        let (index, step) = if delta > 0.0 {
            ((coord.floor() as i64 - 1).max(0), 1)
        } else {
            ((coord.ceil() as i64 + 1).min(n_planes - 1), -1)
        };
        let mut walk = Self {
            origin,
            delta,
            lo,
            pitch,
            index,
            step,
            n_planes,
        };
        while walk.in_range() && walk.alpha() <= t_start {
            walk.index += walk.step;
        }
        walk
    }

    #[inline]
    fn in_range(&self) -> bool {
        self.delta != 0.0 && self.index >= 0 && self.index < self.n_planes
    }

    #[inline]
    fn alpha(&self) -> f64 {
        (self.lo + self.index as f64 * self.pitch - self.origin) / self.delta
    }

    #[inline]
    fn next_alpha(&self) -> f64 {
        if self.in_range() {
            self.alpha()
        } else {
            f64::INFINITY
        }
    }
}

/// Appends `(pixel_index, length)` pairs for `ray` to `out` (cleared first).
pub(crate) fn trace_into(ray: &Ray, geom: &FanBeamGeometry, out: &mut Vec<(u32, f64)>) {
    out.clear();
    let Some((t_min, t_max)) = clip_to_grid(ray, geom) else {
        return;
    };
    let (hx, hy) = geom.half_extent();
    let p = geom.pixel_cm;
    let (x0, y0) = (ray.source_xy[0], ray.source_xy[1]);
    let dx = ray.detector_xy[0] - x0;
    let dy = ray.detector_xy[1] - y0;
    let length = dx.hypot(dy);
    let nx = geom.n_x as i64;
    let ny = geom.n_y as i64;

    let mut xs = PlaneWalk::new(x0, dx, -hx, p, geom.n_x, t_min);
    let mut ys = PlaneWalk::new(y0, dy, -hy, p, geom.n_y, t_min);
    let mut t = t_min;
    loop {
        let ax = xs.next_alpha();
        let ay = ys.next_alpha();
        let next = ax.min(ay).min(t_max);
        if next > t {
            let mid = 0.5 * (t + next);
            let ix = (((x0 + mid * dx + hx) / p).floor() as i64).clamp(0, nx - 1);
            let iy = (((y0 + mid * dy + hy) / p).floor() as i64).clamp(0, ny - 1);
            out.push(((iy * nx + ix) as u32, (next - t) * length));
            t = next;
        }
        if next >= t_max {
            break;
        }
        if ax <= next {
            xs.index += xs.step;
        }
        if ay <= next {
            ys.index += ys.step;
        }
    }
}

/// `project` for one image without building a reusable [`Projector`].
pub fn project(image: &Image, geom: &FanBeamGeometry) -> Result<Sinogram> {
    Projector::with_policy(geom.clone(), CachePolicy::OnTheFly)?.project(image)
}

/// Adjoint of [`project`].
pub fn backproject(sino: &Sinogram, geom: &FanBeamGeometry) -> Result<Image> {
    Projector::with_policy(geom.clone(), CachePolicy::OnTheFly)?.backproject(sino)
}

/// Whether the projector stores the system matrix or re-traces every ray.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CachePolicy {
    /// Cache when the estimated number of nonzeros stays below the limit.
    Auto { max_entries: usize },
    Cached,
    OnTheFly,
}

impl Default for CachePolicy {
    fn default() -> Self {
        // ~16M entries is about 400 MB for the row and column copies together.
        CachePolicy::Auto {
            max_entries: 16_000_000,
        }
    }
}

/// Compressed row storage plus its transpose, both in deterministic order.
struct SystemMatrix {
    row_ptr: Vec<usize>,
    row_idx: Vec<u32>,
    row_len: Vec<f64>,
    col_ptr: Vec<usize>,
    col_idx: Vec<u32>,
    col_len: Vec<f64>,
}

impl SystemMatrix {
    fn build(geom: &FanBeamGeometry) -> Self {
        let per_view: Vec<(Vec<usize>, Vec<(u32, f64)>)> = (0..geom.n_views)
            .into_par_iter()
            .map(|v| {
                let mut counts = Vec::with_capacity(geom.n_channels);
                let mut entries = Vec::new();
                let mut buf = Vec::new();
                for c in 0..geom.n_channels {
                    trace_into(&geom.ray(v, c), geom, &mut buf);
                    counts.push(buf.len());
                    entries.extend_from_slice(&buf);
                }
                (counts, entries)
            })
            .collect();

        let nnz: usize = per_view.iter().map(|(_, e)| e.len()).sum();
        let mut row_ptr = Vec::with_capacity(geom.n_rays() + 1);
        let mut row_idx = Vec::with_capacity(nnz);
        let mut row_len = Vec::with_capacity(nnz);
        row_ptr.push(0);
        for (counts, entries) in per_view {
            for count in counts {
                row_ptr.push(row_ptr.last().unwrap() + count);
            }
            for (i, l) in entries {
                row_idx.push(i);
                row_len.push(l);
            }
        }

        let n_pixels = geom.n_pixels();
        let mut col_ptr = vec![0usize; n_pixels + 1];
        for &i in &row_idx {
            col_ptr[i as usize + 1] += 1;
        }
        for k in 0..n_pixels {
            col_ptr[k + 1] += col_ptr[k];
        }
        let mut fill = col_ptr.clone();
        let mut col_idx = vec![0u32; nnz];
        let mut col_len = vec![0.0; nnz];
        for ray in 0..geom.n_rays() {
            for k in row_ptr[ray]..row_ptr[ray + 1] {
                let pixel = row_idx[k] as usize;
                col_idx[fill[pixel]] = ray as u32;
                col_len[fill[pixel]] = row_len[k];
                fill[pixel] += 1;
            }
        }
        Self {
            row_ptr,
            row_idx,
            row_len,
            col_ptr,
            col_idx,
            col_len,
        }
    }

    fn nnz(&self) -> usize {
        self.row_idx.len()
    }
}

/// Views summed per partial image in on-the-fly backprojection. Fixed so the
/// reduction order never depends on the thread count.
const BACKPROJECT_VIEW_CHUNK: usize = 12;

/// Discrete ray transform `P` and its adjoint `P^T` for one geometry.
pub struct Projector {
    geom: FanBeamGeometry,
    matrix: Option<SystemMatrix>,
    row_sums: OnceLock<Sinogram>,
    col_sums: OnceLock<Image>,
}

impl std::fmt::Debug for Projector {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Projector")
            .field("geom", &self.geom)
            .field("cached_entries", &self.matrix.as_ref().map(SystemMatrix::nnz))
            .finish()
    }
}

impl Projector {
    pub fn new(geom: FanBeamGeometry) -> Result<Self> {
        Self::with_policy(geom, CachePolicy::default())
    }

    pub fn with_policy(geom: FanBeamGeometry, policy: CachePolicy) -> Result<Self> {
        geom.validate()?;
        let cache = match policy {
            CachePolicy::Cached => true,
            CachePolicy::OnTheFly => false,
            CachePolicy::Auto { max_entries } => {
                geom.n_rays().saturating_mul(geom.n_x + geom.n_y) <= max_entries
            }
        };
        let matrix = cache.then(|| SystemMatrix::build(&geom));
        Ok(Self {
            geom,
            matrix,
            row_sums: OnceLock::new(),
            col_sums: OnceLock::new(),
        })
    }

    pub fn geometry(&self) -> &FanBeamGeometry {
        &self.geom
    }

    pub fn is_cached(&self) -> bool {
        self.matrix.is_some()
    }

    /// Footprint of ray `l` (view-major index).
    pub fn footprint(&self, ray_index: usize) -> RayFootprint {
        match &self.matrix {
            Some(m) => RayFootprint {
                entries: (m.row_ptr[ray_index]..m.row_ptr[ray_index + 1])
                    .map(|k| (m.row_idx[k] as usize, m.row_len[k]))
                    .collect(),
            },
            None => {
                let v = ray_index / self.geom.n_channels;
                let c = ray_index % self.geom.n_channels;
                trace(&self.geom.ray(v, c), &self.geom)
            }
        }
    }

    pub fn project(&self, image: &Image) -> Result<Sinogram> {
        let [s] = self.project_many([image])?;
        Ok(s)
    }

    /// Projects several images while traversing each ray once.
    pub fn project_many<const N: usize>(&self, images: [&Image; N]) -> Result<[Sinogram; N]> {
        let views: Vec<usize> = (0..self.geom.n_views).collect();
        let values = self.project_views(images, &views)?;
        let n_rays = self.geom.n_rays();
        let mut outs: [Vec<f64>; N] = std::array::from_fn(|_| Vec::with_capacity(n_rays));
        for v in values {
            for n in 0..N {
                outs[n].push(v[n]);
            }
        }
        let nv = self.geom.n_views;
        let nc = self.geom.n_channels;
        Ok(outs.map(|d| Sinogram::from_vec(nv, nc, d).expect("sized by geometry")))
    }

    /// Copies the footprint of ray `l` into `buf`.
    fn footprint_into(&self, ray: usize, buf: &mut Vec<(u32, f64)>) {
        match &self.matrix {
            Some(m) => {
                buf.clear();
                let range = m.row_ptr[ray]..m.row_ptr[ray + 1];
                buf.extend(m.row_idx[range.clone()].iter().copied().zip(m.row_len[range].iter().copied()));
            }
            None => {
                let nc = self.geom.n_channels;
                trace_into(&self.geom.ray(ray / nc, ray % nc), &self.geom, buf);
            }
        }
    }

    /// Projections along the rays of the listed views, in the order of
    /// `views` and then channel.
    pub fn project_views<const N: usize>(&self, images: [&Image; N], views: &[usize]) -> Result<Vec<[f64; N]>> {
        for img in &images {
            img.ensure_shape(self.geom.n_x, self.geom.n_y)?;
        }
        self.check_views(views)?;
        let nc = self.geom.n_channels;
        let data: [&[f64]; N] = images.map(Image::data);
        let mut values = vec![[0.0f64; N]; views.len() * nc];
        values
            .par_chunks_mut(nc)
            .zip(views.par_iter())
            .for_each_init(Vec::new, |buf, (row, &v)| {
                for (c, out) in row.iter_mut().enumerate() {
                    self.footprint_into(v * nc + c, buf);
                    let mut acc = [0.0f64; N];
                    for &(pixel, len) in buf.iter() {
                        for n in 0..N {
                            acc[n] += len * data[n][pixel as usize];
                        }
                    }
                    *out = acc;
                }
            });
        Ok(values)
    }

    /// Adjoint of [`Projector::project_views`]: `values` holds one entry per
    /// ray of `views`, in the same order.
    pub fn backproject_views(&self, values: &[f64], views: &[usize]) -> Result<Image> {
        self.check_views(views)?;
        let nc = self.geom.n_channels;
        if values.len() != views.len() * nc {
            return Err(Error::DimensionMismatch {
                expected: format!("{} ray values", views.len() * nc),
                found: format!("{}", values.len()),
            });
        }
        let n_pixels = self.geom.n_pixels();
        let chunks: Vec<Vec<f64>> = views
            .par_chunks(BACKPROJECT_VIEW_CHUNK)
            .zip(values.par_chunks(BACKPROJECT_VIEW_CHUNK * nc))
            .map(|(chunk_views, chunk_values)| {
                let mut partial = vec![0.0; n_pixels];
                let mut buf = Vec::new();
                for (&v, row) in chunk_views.iter().zip(chunk_values.chunks(nc)) {
                    for (c, &value) in row.iter().enumerate() {
                        if value == 0.0 {
                            continue;
                        }
                        self.footprint_into(v * nc + c, &mut buf);
                        for &(i, l) in &buf {
                            partial[i as usize] += l * value;
                        }
                    }
                }
                partial
            })
            .collect();
        let mut total = vec![0.0; n_pixels];
        for partial in chunks {
            for (t, p) in total.iter_mut().zip(partial) {
                *t += p;
            }
        }
        Image::from_vec(self.geom.n_x, self.geom.n_y, total)
    }

    fn check_views(&self, views: &[usize]) -> Result<()> {
        match views.iter().find(|&&v| v >= self.geom.n_views) {
            Some(v) => Err(Error::Parameter(format!(
                "view {v} out of range for {} views",
                self.geom.n_views
            ))),
            None => Ok(()),
        }
    }

    /// Exact transpose of [`Projector::project`].
    pub fn backproject(&self, sino: &Sinogram) -> Result<Image> {
        sino.ensure_shape(self.geom.n_views, self.geom.n_channels)?;
        let n_pixels = self.geom.n_pixels();
        let y = sino.data();
        let data = match &self.matrix {
            Some(m) => (0..n_pixels)
                .into_par_iter()
                .map(|pixel| {
                    (m.col_ptr[pixel]..m.col_ptr[pixel + 1])
                        .map(|k| m.col_len[k] * y[m.col_idx[k] as usize])
                        .sum()
                })
                .collect(),
            None => {
                let views: Vec<usize> = (0..self.geom.n_views).collect();
                return self.backproject_views(y, &views);
            }
        };
        Image::from_vec(self.geom.n_x, self.geom.n_y, data)
    }

    /// Total intersection length of each ray with the grid.
    pub fn row_sums(&self) -> &Sinogram {
        self.row_sums.get_or_init(|| {
            let ones = Image::filled(self.geom.n_x, self.geom.n_y, 1.0);
            self.project(&ones).expect("shape matches geometry")
        })
    }

    /// Total intersection length of all rays through each pixel.
    pub fn col_sums(&self) -> &Image {
        self.col_sums.get_or_init(|| {
            let ones = Sinogram::from_vec(
                self.geom.n_views,
                self.geom.n_channels,
                vec![1.0; self.geom.n_rays()],
            )
            .expect("sized by geometry");
            self.backproject(&ones).expect("shape matches geometry")
        })
    }
}
