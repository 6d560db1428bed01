//! Straightforward reference implementations, written for clarity rather
//! than speed, and the bundled scenarios the acceptance gate runs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dsct::phantom::rasterize;
use dsct::spectra::{load_attenuation_table, EnergyGrid, SpectralModel, Spectrum};
use dsct::{simulate_dual_scan, DualScan, FanBeamGeometry, Image, NoiseConfig, PathIntegralSource, Projector};
use dsct_cli::files::sha256_hex;
use dsct_cli::LoadedConfig;

pub fn repo_path(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

/// `-ln sum_j w_j exp(-(psi_1j p1 + psi_2j p2)) / sum_j w_j`, summed term by
/// term with no rescaling.
pub fn direct_projection(weights: &[f64], psi1: &[f64], psi2: &[f64], p: (f64, f64)) -> f64 {
    let total: f64 = weights.iter().sum();
    let q: f64 = (0..weights.len())
        .map(|j| weights[j] * (-(psi1[j] * p.0 + psi2[j] * p.1)).exp())
        .sum();
    -(q / total).ln()
}

fn window(i: usize, n: usize, r: usize) -> std::ops::RangeInclusive<usize> {
    i.saturating_sub(r)..=(i + r).min(n - 1)
}

/// Guided filter evaluated window by window: each window's ridge fit is
/// solved from its 2x2 normal equations and every pixel averages the fits of
/// the windows covering it.
pub fn naive_guided_filter(guide: &Image, x: &Image, r: usize, eps: f64) -> Image {
    let (nx, ny) = (guide.nx(), guide.ny());
    let mut fits = vec![(0.0, 0.0); nx * ny];
    for ky in 0..ny {
        for kx in 0..nx {
            let (mut n, mut si, mut sx, mut sii, mut six) = (0.0, 0.0, 0.0, 0.0, 0.0);
            for iy in window(ky, ny, r) {
                for ix in window(kx, nx, r) {
                    let (g, v) = (guide.get(ix, iy), x.get(ix, iy));
                    n += 1.0;
                    si += g;
                    sx += v;
                    sii += g * g;
                    six += g * v;
                }
            }
            let (m00, m01, m11) = (sii + n * eps, si, n);
            let det = m00 * m11 - m01 * m01;
            fits[ky * nx + kx] = ((six * m11 - m01 * sx) / det, (m00 * sx - m01 * six) / det);
        }
    }
    Image::from_fn(nx, ny, |ix, iy| {
        let (mut n, mut sa, mut sb) = (0.0, 0.0, 0.0);
        for ky in window(iy, ny, r) {
            for kx in window(ix, nx, r) {
                let (a, b) = fits[ky * nx + kx];
                n += 1.0;
                sa += a;
                sb += b;
            }
        }
        sa / n * guide.get(ix, iy) + sb / n
    })
}

pub fn max_abs_diff(a: &Image, b: &Image) -> f64 {
    a.data().iter().zip(b.data()).map(|(u, v)| (u - v).abs()).fold(0.0, f64::max)
}

/// A simulated acquisition with its ground truth.
pub struct Scenario {
    pub config: LoadedConfig,
    pub geometry: FanBeamGeometry,
    pub projector: Projector,
    pub scan: DualScan,
    pub truth: (Image, Image),
}

impl Scenario {
    pub fn truth_ref(&self) -> Option<(&Image, &Image)> {
        Some((&self.truth.0, &self.truth.1))
    }
}

pub fn load_config(name: &str, overrides: &[&str]) -> LoadedConfig {
    let o: Vec<String> = overrides.iter().map(|s| s.to_string()).collect();
    LoadedConfig::load(&repo_path("configs").join(name), &o).expect("bundled config loads")
}

/// Single-bin spectra at the given energies with the configured bases.
pub fn monochromatic_model(cfg: &LoadedConfig, low_kev: f64, high_kev: f64) -> SpectralModel {
    let b = &cfg.config.basis;
    let tables = [
        load_attenuation_table(cfg.resolve(&b.tables[0])).unwrap(),
        load_attenuation_table(cfg.resolve(&b.tables[1])).unwrap(),
    ];
    let line = |e: f64| Spectrum::monochromatic(EnergyGrid::uniform(e, 1.0, 1).unwrap(), 0).unwrap();
    SpectralModel::from_tables(&line(low_kev), &line(high_kev), tables, b.names.clone()).unwrap()
}

/// Simulates the scenario described by `cfg`, optionally replacing its
/// spectra and path-integral source.
pub fn scenario(cfg: LoadedConfig, model: Option<SpectralModel>, source: Option<PathIntegralSource>) -> Scenario {
    let geometry = cfg.geometry().unwrap();
    let model = model.unwrap_or_else(|| cfg.spectral_model().unwrap());
    let phantom = cfg.phantom().unwrap();
    let noise: NoiseConfig = cfg.noise();
    let source = source.unwrap_or_else(|| cfg.path_integral_source());
    let scan = simulate_dual_scan(&phantom, &geometry, &model, &noise, source).unwrap();
    let truth = rasterize(&phantom, &geometry).unwrap();
    let projector = Projector::with_policy(geometry.clone(), cfg.cache_policy()).unwrap();
    Scenario { config: cfg, geometry, projector, scan, truth }
}

/// SHA-256 of every file under `dir`, keyed by relative path.
pub fn hash_tree(dir: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            if p.is_dir() {
                walk(root, &p, out);
            } else {
                let rel = p.strip_prefix(root).unwrap().display().to_string();
                out.insert(rel, sha256_hex(&std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(dir, dir, &mut out);
    out
}

/// Peak resident set size of this process in KiB, from `/proc/self/status`.
pub fn peak_rss_kib() -> Option<u64> {
    let status = std::fs::read_to_string("/proc/self/status").ok()?;
    let line = status.lines().find(|l| l.starts_with("VmHWM:"))?;
    line.split_whitespace().nth(1)?.parse().ok()
}
