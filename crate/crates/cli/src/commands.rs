//! The `simulate`, `decompose` and `metrics` subcommands.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use dsct::esart::diagnostics_csv;
use dsct::forward::{decode_sinogram, encode_sinogram};
use dsct::metrics::{load_rois, rmse, roi_snr, roi_stats};
use dsct::phantom::rasterize;
use dsct::solver::{decompose_with_guides, resolve_guides};
use dsct::{
    composite_image, decompose_esart, simulate_dual_scan, Decomposition, DecompositionState, DualScan,
    GuideSource, Image, Projector, Sinogram,
};
use serde::Serialize;

use crate::config::{LoadedConfig, Method, OutputBlock};
use crate::failure::{CliResult, Failure, Stage};
use crate::files::{
    decode_image, encode_image, encode_pgm16, load_image, read_file, sha256_hex, window_sidecar, write_atomic,
};

pub const LOW_SINOGRAM: &str = "low.dsctsino";
pub const HIGH_SINOGRAM: &str = "high.dsctsino";
pub const TRUTH_F1: &str = "truth_f1.dsctimg";
pub const TRUTH_F2: &str = "truth_f2.dsctimg";
pub const MANIFEST: &str = "manifest.json";
pub const DIAGNOSTICS: &str = "diagnostics.csv";
pub const METRICS_HEADER: &str = "image,truth,rmse,roi,roi_mean,roi_std,roi_snr_db";

#[derive(Debug, Clone, Serialize)]
pub struct InputRecord {
    pub path: String,
    pub sha256: String,
}

/// Everything needed to rerun a command bit-exactly. No timestamps or
/// absolute output locations, so identical runs give identical manifests.
#[derive(Debug, Clone, Serialize)]
pub struct Manifest {
    pub command: String,
    pub version: String,
    pub config: String,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: BTreeMap<String, InputRecord>,
    pub outputs: BTreeMap<String, String>,
    pub summary: BTreeMap<String, f64>,
}

impl Manifest {
    fn new(command: &str, cfg: &LoadedConfig) -> CliResult<Self> {
        let mut m = Self {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            config: cfg.echo(),
            seeds: BTreeMap::new(),
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
            summary: BTreeMap::new(),
        };
        if cfg.config.noise.enabled {
            m.seeds.insert("noise".into(), cfg.config.noise.seed);
        }
        for (role, written, resolved) in cfg.input_files() {
            m.add_input(&role, &written.display().to_string(), &read_file(&resolved, "load inputs")?);
        }
        Ok(m)
    }

    fn add_input(&mut self, role: &str, path: &str, bytes: &[u8]) {
        self.inputs.insert(
            role.to_string(),
            InputRecord { path: path.to_string(), sha256: sha256_hex(bytes) },
        );
    }
}

/// Writes files into one directory and records their hashes.
struct Outputs<'a> {
    dir: PathBuf,
    block: &'a OutputBlock,
    pixel_cm: f64,
    hashes: BTreeMap<String, String>,
}

impl<'a> Outputs<'a> {
    fn new(dir: PathBuf, block: &'a OutputBlock, pixel_cm: f64) -> Self {
        Self { dir, block, pixel_cm, hashes: BTreeMap::new() }
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> CliResult<()> {
        write_atomic(&self.dir.join(name), bytes)?;
        self.hashes.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// `stem.dsctimg`, plus `stem.pgm` and its window sidecar when enabled.
    fn image(&mut self, stem: &str, image: &Image) -> CliResult<()> {
        self.bytes(&format!("{stem}.dsctimg"), &encode_image(image, self.pixel_cm))?;
        if self.block.pgm {
            let window = match self.block.windows.get(stem) {
                Some(&[lo, hi]) => (lo, hi),
                None => (image.min(), image.max()),
            };
            self.bytes(&format!("{stem}.pgm"), &encode_pgm16(image, window))?;
            self.bytes(&format!("{stem}.pgm.txt"), window_sidecar(window).as_bytes())?;
        }
        Ok(())
    }

    fn finish(mut self, mut manifest: Manifest) -> CliResult<PathBuf> {
        manifest.outputs = std::mem::take(&mut self.hashes);
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
        write_atomic(&self.dir.join(MANIFEST), json.as_bytes())?;
        Ok(self.dir)
    }
}

fn energy_stem(prefix: &str, e: f64) -> String {
    format!("{prefix}_{e}kev")
}

/// Simulates both sinograms and the ground truth into the output directory.
pub fn simulate(cfg: &LoadedConfig) -> CliResult<PathBuf> {
    let geom = cfg.geometry()?;
    let model = cfg.spectral_model()?;
    let phantom = cfg.phantom()?;
    let mut manifest = Manifest::new("simulate", cfg)?;

    const S: &str = "simulate";
    let (t1, t2) = rasterize(&phantom, &geom).stage(S)?;
    let scan = simulate_dual_scan(&phantom, &geom, &model, &cfg.noise(), cfg.path_integral_source()).stage(S)?;
    let truth = DecompositionState { f1: t1, f2: t2, iteration: 0 };

    let mut out = Outputs::new(cfg.output_dir(), &cfg.config.output, geom.pixel_cm);
    out.bytes(LOW_SINOGRAM, &encode_sinogram(&scan.low))?;
    out.bytes(HIGH_SINOGRAM, &encode_sinogram(&scan.high))?;
    out.image("truth_f1", &truth.f1)?;
    out.image("truth_f2", &truth.f2)?;
    for &e in &cfg.config.output.composite_energies_kev {
        let mu = composite_image(&truth, model.basis(), e).stage(S)?;
        out.image(&energy_stem("truth_mu", e), &mu)?;
    }
    manifest.summary.insert("max_rho1".into(), truth.f1.max());
    manifest.summary.insert("max_rho2".into(), truth.f2.max());
    manifest.summary.insert("max_projection_low".into(), scan.low.data().iter().cloned().fold(0.0, f64::max));
    manifest.summary.insert("max_projection_high".into(), scan.high.data().iter().cloned().fold(0.0, f64::max));
    out.finish(manifest)
}

/// Reads a file from the scan directory, recording it by file name so the
/// manifest does not depend on where the scan lives.
fn read_scan_file(dir: &Path, name: &str, manifest: &mut Manifest, role: &str) -> CliResult<Vec<u8>> {
    let bytes = read_file(&dir.join(name), "load inputs")?;
    manifest.add_input(role, name, &bytes);
    Ok(bytes)
}

fn load_sinogram(dir: &Path, name: &str, manifest: &mut Manifest, role: &str) -> CliResult<Sinogram> {
    let bytes = read_scan_file(dir, name, manifest, role)?;
    decode_sinogram(&bytes).map_err(|e| Failure::data("load inputs", format!("{}: {e}", dir.join(name).display())))
}

fn load_truth(dir: &Path, name: &str, manifest: &mut Manifest, role: &str) -> CliResult<Image> {
    let bytes = read_scan_file(dir, name, manifest, role)?;
    decode_image(&bytes)
        .map(|(img, _)| img)
        .map_err(|e| Failure::data("load inputs", format!("{}: {e}", dir.join(name).display())))
}

/// Runs the configured method on the sinograms in `scan_dir` (default: the
/// output directory) and writes into `<output>/<method>/`.
pub fn decompose(cfg: &LoadedConfig, scan_dir: Option<&Path>) -> CliResult<PathBuf> {
    let geom = cfg.geometry()?;
    let model = cfg.spectral_model()?;
    let method = cfg.config.solver.method;
    let proposed = match method {
        Method::Proposed => Some(cfg.proposed_config()?),
        Method::Esart => None,
    };
    let mut manifest = Manifest::new("decompose", cfg)?;
    let scan_dir = scan_dir.map(Path::to_path_buf).unwrap_or_else(|| cfg.output_dir());

    const L: &str = "load inputs";
    let low = load_sinogram(&scan_dir, LOW_SINOGRAM, &mut manifest, "sinogram_low")?;
    let high = load_sinogram(&scan_dir, HIGH_SINOGRAM, &mut manifest, "sinogram_high")?;
    low.ensure_shape(geom.n_views, geom.n_channels).stage(L)?;
    let scan = DualScan::new(low, high, model.clone()).stage(L)?;
    let truth = if scan_dir.join(TRUTH_F1).is_file() && scan_dir.join(TRUTH_F2).is_file() {
        let t1 = load_truth(&scan_dir, TRUTH_F1, &mut manifest, "truth_f1")?;
        let t2 = load_truth(&scan_dir, TRUTH_F2, &mut manifest, "truth_f2")?;
        t1.ensure_shape(geom.n_x, geom.n_y).stage(L)?;
        t2.ensure_shape(geom.n_x, geom.n_y).stage(L)?;
        Some((t1, t2))
    } else {
        None
    };
    let truth_ref = truth.as_ref().map(|(a, b)| (a, b));

    const S: &str = "decompose";
    let projector = Projector::with_policy(geom.clone(), cfg.cache_policy()).stage(S)?;
    let mut out = Outputs::new(cfg.output_dir().join(method.name()), &cfg.config.output, geom.pixel_cm);
    let result: Decomposition = match &proposed {
        None => decompose_esart(&scan, &projector, &cfg.esart_config(), truth_ref).stage(S)?,
        Some(pc) => {
            let guides = resolve_guides(&scan, &projector, pc).stage(S)?;
            // Reconstructed guides only; external images are inputs already.
            for (src, g) in pc.guides.iter().zip(&guides.guides) {
                let stem = match src {
                    GuideSource::High => "guide_high",
                    GuideSource::Low => "guide_low",
                    _ => continue,
                };
                if let Some(g) = g {
                    out.image(stem, g)?;
                }
            }
            decompose_with_guides(&scan, &projector, pc, &guides, truth_ref).stage(S)?
        }
    };

    out.image("f1", &result.state.f1)?;
    out.image("f2", &result.state.f2)?;
    for &e in &cfg.config.output.composite_energies_kev {
        let c = composite_image(&result.state, model.basis(), e).stage(S)?;
        out.image(&energy_stem("composite", e), &c)?;
    }
    let csv = diagnostics_csv(&result.history, truth.is_some(), method == Method::Proposed);
    out.bytes(DIAGNOSTICS, csv.as_bytes())?;
    manifest.summary.insert("iterations".into(), result.state.iteration as f64);
    if let Some(last) = result.history.last() {
        manifest.summary.insert("residual_low".into(), last.residual_low);
        manifest.summary.insert("residual_high".into(), last.residual_high);
        if let (Some(a), Some(b)) = (last.rmse_f1, last.rmse_f2) {
            manifest.summary.insert("rmse_f1".into(), a);
            manifest.summary.insert("rmse_f2".into(), b);
        }
    }
    out.finish(manifest)
}

/// RMSE and ROI statistics of images against truths. `truths` holds one
/// file for all images, one per image, or none.
pub fn metrics(images: &[PathBuf], truths: &[PathBuf], rois: Option<&Path>) -> CliResult<String> {
    const S: &str = "metrics";
    if !(truths.is_empty() || truths.len() == 1 || truths.len() == images.len()) {
        return Err(Failure::config(S, "give one truth image, or one per image"));
    }
    let rois = match rois {
        Some(p) => load_rois(p).stage(S)?,
        None => Vec::new(),
    };
    let fmt = |v: f64| {
        if v.is_infinite() {
            if v > 0.0 { "inf".to_string() } else { "-inf".to_string() }
        } else {
            format!("{v:.9e}")
        }
    };
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for (k, path) in images.iter().enumerate() {
        let image = load_image(path, S)?;
        let truth_path = truths.get(if truths.len() == 1 { 0 } else { k });
        let err = match truth_path {
            Some(tp) => {
                let truth = load_image(tp, S)?;
                if !image.same_shape(&truth) {
                    return Err(Failure::data(
                        S,
                        format!(
                            "dimension mismatch: {} is {}x{} but {} is {}x{}",
                            path.display(),
                            image.nx(),
                            image.ny(),
                            tp.display(),
                            truth.nx(),
                            truth.ny()
                        ),
                    ));
                }
                fmt(rmse(&image, &truth).stage(S)?)
            }
            None => String::new(),
        };
        let tp = truth_path.map(|p| p.display().to_string()).unwrap_or_default();
        let row = |roi: &str, stats: &str| format!("{},{tp},{err},{roi},{stats}\n", path.display());
        if rois.is_empty() {
            out.push_str(&row("", ",,"));
        }
        for roi in &rois {
            let (mean, std) = roi_stats(&image, roi).stage(S)?;
            let snr = roi_snr(&image, roi).stage(S)?;
            out.push_str(&row(&roi.label, &format!("{},{},{}", fmt(mean), fmt(std), fmt(snr))));
        }
    }
    Ok(out)
}
