//! Polychromatic dual-spectral projection simulation.
//!
//! A ray with basis path integrals `(p1, p2)` measures
//! `P = -ln sum_j w_j exp(-(psi_1j p1 + psi_2j p2))` under each spectrum.
//! Sums are evaluated relative to the least attenuated bin so that heavy
//! paths do not underflow before the logarithm.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Poisson};
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::geometry::{FanBeamGeometry, Projector};
use crate::phantom::{analytic_path_integrals, rasterize, Phantom};
use crate::raster::Sinogram;
use crate::spectra::{BasisSet, SpectralModel, Spectrum};

/// Largest attenuation exponent accepted before the transmitted fraction is
/// considered unrepresentable.
pub const MAX_ATTENUATION: f64 = 700.0;

/// Spectrum-integrated response of one ray for one spectrum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpectralResponse {
    /// Model projection `-ln Q`.
    pub projection: f64,
    /// Transmitted fraction `Q = sum_j w_j e_j`.
    pub transmission: f64,
    /// `Psi^i = sum_j psi_ij w_j e_j` for both bases.
    pub psi_moments: [f64; 2],
    /// `Psi^i / Q`, evaluated without forming `Q` explicitly.
    pub ratios: [f64; 2],
}

/// Evaluates the polychromatic projection and its linearization moments.
pub fn spectral_response(
    weights: &[f64],
    psi1: &[f64],
    psi2: &[f64],
    p: (f64, f64),
) -> Result<SpectralResponse> {
    let non_finite = |reason: &str| Error::NonFinite {
        p1: p.0,
        p2: p.1,
        reason: reason.to_string(),
    };
    if !(p.0.is_finite() && p.1.is_finite()) {
        return Err(non_finite("path integrals are not finite"));
    }
    let mut shift = f64::INFINITY;
    for j in 0..weights.len() {
        if weights[j] > 0.0 {
            shift = shift.min(psi1[j] * p.0 + psi2[j] * p.1);
        }
    }
    if shift.is_infinite() {
        return Err(non_finite("spectrum has no positive bin"));
    }
    if shift > MAX_ATTENUATION {
        return Err(non_finite("attenuation exceeds the representable range"));
    }
    // Dividing by the summed weights, accumulated in the same order, makes a
    // zero path give exactly zero despite rounding in the normalization.
    let (mut total, mut s0, mut s1, mut s2) = (0.0, 0.0, 0.0, 0.0);
    for j in 0..weights.len() {
        let w = weights[j];
        if w == 0.0 {
            continue;
        }
        let t = w * (-(psi1[j] * p.0 + psi2[j] * p.1 - shift)).exp();
        total += w;
        s0 += t;
        s1 += psi1[j] * t;
        s2 += psi2[j] * t;
    }
    let (s0, s1, s2) = (s0 / total, s1 / total, s2 / total);
    let scale = (-shift).exp();
    let response = SpectralResponse {
        projection: shift - s0.ln(),
        transmission: scale * s0,
        psi_moments: [scale * s1, scale * s2],
        ratios: [s1 / s0, s2 / s0],
    };
    if !(response.projection.is_finite() && response.ratios.iter().all(|r| r.is_finite())) {
        return Err(non_finite("non-finite spectral sum"));
    }
    Ok(response)
}

/// `P = -ln sum_j w_j exp(-(psi_1j p1 + psi_2j p2))`.
pub fn polychromatic_projection(spectrum: &Spectrum, basis: &BasisSet, p: (f64, f64)) -> Result<f64> {
    if spectrum.grid() != basis.grid() {
        return Err(Error::Parameter(
            "spectrum and basis must share an energy grid".into(),
        ));
    }
    Ok(spectral_response(spectrum.weights(), basis.psi(0), basis.psi(1), p)?.projection)
}

/// Low- and high-energy measurements of one acquisition.
#[derive(Debug, Clone, PartialEq)]
pub struct DualScan {
    pub low: Sinogram,
    pub high: Sinogram,
    pub model: SpectralModel,
}

impl DualScan {
    pub fn new(low: Sinogram, high: Sinogram, model: SpectralModel) -> Result<Self> {
        if !low.same_shape(&high) {
            return Err(Error::DimensionMismatch {
                expected: format!("{}x{} high-energy sinogram", low.n_views(), low.n_channels()),
                found: format!("{}x{}", high.n_views(), high.n_channels()),
            });
        }
        Ok(Self { low, high, model })
    }

    /// Sinogram `k` (0 = low, 1 = high).
    pub fn sinogram(&self, k: usize) -> &Sinogram {
        match k {
            0 => &self.low,
            1 => &self.high,
            _ => panic!("sinogram index {k} out of range"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseConfig {
    pub enabled: bool,
    /// Expected unattenuated photon count per ray, `N0`.
    pub photons_per_ray: f64,
    pub seed: u64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            photons_per_ray: 1e5,
            seed: 0,
        }
    }
}

/// How basis path integrals are produced for simulation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PathIntegralSource {
    /// Exact chord integrals through the analytic ellipses.
    #[default]
    Analytic,
    /// Projection of the rasterized phantom with the reconstruction
    /// projector. Commits the inverse crime; for debugging only.
    Discrete,
}

/// Basis path-integral sinograms `(P f1, P f2)` of the phantom.
pub fn basis_path_integrals(
    phantom: &Phantom,
    geom: &FanBeamGeometry,
    source: PathIntegralSource,
) -> Result<(Sinogram, Sinogram)> {
    geom.validate()?;
    match source {
        PathIntegralSource::Analytic => {
            let nc = geom.n_channels;
            let mut pairs = vec![(0.0, 0.0); geom.n_rays()];
            pairs.par_chunks_mut(nc).enumerate().for_each(|(v, row)| {
                for (c, out) in row.iter_mut().enumerate() {
                    *out = analytic_path_integrals(phantom, &geom.ray(v, c));
                }
            });
            let (p1, p2): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
            Ok((
                Sinogram::from_vec(geom.n_views, nc, p1)?,
                Sinogram::from_vec(geom.n_views, nc, p2)?,
            ))
        }
        PathIntegralSource::Discrete => {
            let (f1, f2) = rasterize(phantom, geom)?;
            let projector = Projector::new(geom.clone())?;
            let [s1, s2] = projector.project_many([&f1, &f2])?;
            Ok((s1, s2))
        }
    }
}

/// Applies the polychromatic model of `spectrum` ray by ray.
pub fn polychromatic_sinogram(
    spectrum: &Spectrum,
    basis: &BasisSet,
    p1: &Sinogram,
    p2: &Sinogram,
) -> Result<Sinogram> {
    if !p1.same_shape(p2) {
        return Err(Error::DimensionMismatch {
            expected: format!("{}x{}", p1.n_views(), p1.n_channels()),
            found: format!("{}x{}", p2.n_views(), p2.n_channels()),
        });
    }
    if spectrum.grid() != basis.grid() {
        return Err(Error::Parameter(
            "spectrum and basis must share an energy grid".into(),
        ));
    }
    let (w, psi1, psi2) = (spectrum.weights(), basis.psi(0), basis.psi(1));
    let values = p1
        .data()
        .par_iter()
        .zip(p2.data().par_iter())
        .map(|(&a, &b)| spectral_response(w, psi1, psi2, (a, b)).map(|r| r.projection))
        .collect::<Result<Vec<f64>>>()?;
    Sinogram::from_vec(p1.n_views(), p1.n_channels(), values)
}

/// Seed offset separating the high-energy noise streams from the low-energy
/// ones.
const HIGH_SEED_OFFSET: u64 = 0x9E37_79B9_7F4A_7C15;

pub fn simulate_dual_scan(
    phantom: &Phantom,
    geom: &FanBeamGeometry,
    model: &SpectralModel,
    noise: &NoiseConfig,
    source: PathIntegralSource,
) -> Result<DualScan> {
    let (p1, p2) = basis_path_integrals(phantom, geom, source)?;
    let basis = model.basis();
    let mut low = polychromatic_sinogram(model.low(), basis, &p1, &p2)?;
    let mut high = polychromatic_sinogram(model.high(), basis, &p1, &p2)?;
    if noise.enabled {
        low = add_poisson_noise(&low, noise.photons_per_ray, noise.seed)?;
        high = add_poisson_noise(&high, noise.photons_per_ray, noise.seed.wrapping_add(HIGH_SEED_OFFSET))?;
    }
    DualScan::new(low, high, model.clone())
}

/// Poisson counting noise on transmitted photons.
///
/// Ray `l` draws from its own ChaCha stream `(seed, l)`, so results do not
/// depend on evaluation order. Zero counts are clamped to one before the log.
pub fn add_poisson_noise(sino: &Sinogram, photons_per_ray: f64, seed: u64) -> Result<Sinogram> {
    if !(photons_per_ray > 0.0 && photons_per_ray.is_finite()) {
        return Err(Error::Parameter(format!(
            "photons per ray must be positive, got {photons_per_ray}"
        )));
    }
    let values = sino
        .data()
        .par_iter()
        .enumerate()
        .map(|(l, &p)| {
            let expected = photons_per_ray * (-p).exp();
            let count = if expected > 0.0 && expected.is_finite() {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(l as u64);
                Poisson::new(expected)
                    .map_err(|e| Error::Parameter(format!("Poisson mean {expected}: {e}")))?
                    .sample(&mut rng)
            } else {
                0.0
            };
            Ok(-(count.max(1.0) / photons_per_ray).ln())
        })
        .collect::<Result<Vec<f64>>>()?;
    Sinogram::from_vec(sino.n_views(), sino.n_channels(), values)
}

pub const SINOGRAM_MAGIC: &[u8; 8] = b"DSCTSINO";
pub const SINOGRAM_VERSION: u32 = 1;
const SINOGRAM_HEADER_LEN: usize = 8 + 4 + 4 + 4;

/// Little-endian `DSCTSINO` encoding, view-major payload.
pub fn encode_sinogram(sino: &Sinogram) -> Vec<u8> {
    let mut out = Vec::with_capacity(SINOGRAM_HEADER_LEN + 8 * sino.len());
    out.extend_from_slice(SINOGRAM_MAGIC);
    out.extend_from_slice(&SINOGRAM_VERSION.to_le_bytes());
    out.extend_from_slice(&(sino.n_views() as u32).to_le_bytes());
    out.extend_from_slice(&(sino.n_channels() as u32).to_le_bytes());
    for v in sino.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_sinogram(bytes: &[u8]) -> Result<Sinogram> {
    if bytes.len() < SINOGRAM_HEADER_LEN || &bytes[..8] != SINOGRAM_MAGIC {
        return Err(Error::Format("not a DSCTSINO sinogram file".into()));
    }
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u32_at(8);
    if version != SINOGRAM_VERSION {
        return Err(Error::Format(format!("unsupported sinogram version {version}")));
    }
    let (n_views, n_channels) = (u32_at(12) as usize, u32_at(16) as usize);
    let payload = &bytes[SINOGRAM_HEADER_LEN..];
    if payload.len() != 8 * n_views * n_channels {
        return Err(Error::Format(format!(
            "sinogram payload has {} bytes, header declares {n_views}x{n_channels}",
            payload.len()
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect::<Vec<_>>();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("sinogram contains non-finite values".into()));
    }
    Sinogram::from_vec(n_views, n_channels, data)
}

/// `view,channel,value` rows for inspection.
pub fn sinogram_to_csv(sino: &Sinogram) -> String {
    let mut out = String::from("view,channel,value\n");
    for v in 0..sino.n_views() {
        for c in 0..sino.n_channels() {
            out.push_str(&format!("{v},{c},{:e}\n", sino.get(v, c)));
        }
    }
    out
}
