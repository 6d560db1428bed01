#![allow(dead_code)]

use std::f64::consts::TAU;
use std::path::PathBuf;

use dsct::phantom::{load_phantom, Phantom};
use dsct::spectra::{load_attenuation_table, load_spectrum, EnergyGrid, SpectralModel, Spectrum};
use dsct::FanBeamGeometry;

pub fn data_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

/// 64x64 grid, 128 channels, 180 views.
pub fn desk_geometry() -> FanBeamGeometry {
    FanBeamGeometry {
        sod_cm: 100.0,
        sdd_cm: 120.0,
        n_channels: 128,
        channel_pitch_cm: 0.12,
        n_views: 180,
        angle_span_rad: TAU,
        n_x: 64,
        n_y: 64,
        pixel_cm: 0.1992,
    }
}

/// Square grid of `n` pixels whose fan covers it with some margin.
pub fn small_geometry(n: usize, n_views: usize, n_channels: usize) -> FanBeamGeometry {
    let pixel = 0.25;
    FanBeamGeometry {
        sod_cm: 100.0,
        sdd_cm: 120.0,
        n_channels,
        channel_pitch_cm: 2.0 * n as f64 * pixel / n_channels as f64,
        n_views,
        angle_span_rad: TAU,
        n_x: n,
        n_y: n,
        pixel_cm: pixel,
    }
}

pub fn head_phantom() -> Phantom {
    load_phantom(data_path("phantoms/head_like.txt")).unwrap()
}

/// The bundled phantom shrunk to a field of view of `fov_cm`.
pub fn scaled_head_phantom(fov_cm: f64) -> Phantom {
    let base = head_phantom();
    let s = fov_cm / base.field_of_view_cm;
    let ellipses = base
        .ellipses
        .into_iter()
        .map(|mut e| {
            e.center_xy = [e.center_xy[0] * s, e.center_xy[1] * s];
            e.semi_axes = [e.semi_axes[0] * s, e.semi_axes[1] * s];
            e
        })
        .collect();
    Phantom::new(ellipses, fov_cm).unwrap()
}

fn tables() -> [dsct::spectra::AttenuationTable; 2] {
    [
        load_attenuation_table(data_path("attenuation/water.txt")).unwrap(),
        load_attenuation_table(data_path("attenuation/bone_cortical.txt")).unwrap(),
    ]
}

pub fn bundled_model() -> SpectralModel {
    let low = load_spectrum(data_path("spectra/spectrum_80kvp.txt")).unwrap();
    let high = load_spectrum(data_path("spectra/spectrum_140kvp_cu1mm.txt")).unwrap();
    SpectralModel::from_tables(&low, &high, tables(), ["water".into(), "bone".into()]).unwrap()
}

/// Single-bin spectra at `low_kev` and `high_kev` with the bundled bases.
pub fn mono_model(low_kev: f64, high_kev: f64) -> SpectralModel {
    let low = Spectrum::monochromatic(EnergyGrid::uniform(low_kev, 1.0, 1).unwrap(), 0).unwrap();
    let high = Spectrum::monochromatic(EnergyGrid::uniform(high_kev, 1.0, 1).unwrap(), 0).unwrap();
    SpectralModel::from_tables(&low, &high, tables(), ["water".into(), "bone".into()]).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Length of the part of segment `p0 -> p1` inside the box, by parametric
/// slab clipping.
pub fn clipped_length(p0: [f64; 2], p1: [f64; 2], lo: [f64; 2], hi: [f64; 2]) -> f64 {
    let d = [p1[0] - p0[0], p1[1] - p0[1]];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..2 {
        if d[k] == 0.0 {
            if p0[k] < lo[k] || p0[k] > hi[k] {
                return 0.0;
            }
            continue;
        }
        let (a, b) = ((lo[k] - p0[k]) / d[k], (hi[k] - p0[k]) / d[k]);
        t0 = t0.max(a.min(b));
        t1 = t1.min(a.max(b));
    }
    if t1 <= t0 {
        return 0.0;
    }
    (t1 - t0) * d[0].hypot(d[1])
}

/// Dense system matrix built pixel by pixel with box clipping.
pub fn dense_matrix(geom: &FanBeamGeometry) -> Vec<Vec<f64>> {
    let p = geom.pixel_cm;
    let x0 = -(geom.n_x as f64) * p / 2.0;
    let y0 = -(geom.n_y as f64) * p / 2.0;
    let mut rows = Vec::with_capacity(geom.n_rays());
    for v in 0..geom.n_views {
        for c in 0..geom.n_channels {
            let ray = geom.ray(v, c);
            let mut row = vec![0.0; geom.n_pixels()];
            for iy in 0..geom.n_y {
                for ix in 0..geom.n_x {
                    let lo = [x0 + ix as f64 * p, y0 + iy as f64 * p];
                    let hi = [lo[0] + p, lo[1] + p];
                    row[iy * geom.n_x + ix] = clipped_length(ray.source_xy, ray.detector_xy, lo, hi);
                }
            }
            rows.push(row);
        }
    }
    rows
}

pub fn matvec(a: &[Vec<f64>], x: &[f64]) -> Vec<f64> {
    a.iter().map(|row| row.iter().zip(x).map(|(r, v)| r * v).sum()).collect()
}

pub fn matvec_t(a: &[Vec<f64>], y: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; a[0].len()];
    for (row, &yv) in a.iter().zip(y) {
        for (o, r) in out.iter_mut().zip(row) {
            *o += r * yv;
        }
    }
    out
}
