//! Run configuration: one TOML file with named blocks, plus `--set` overrides.
//!
//! Relative paths are resolved against the directory of the config file.

use std::path::{Path, PathBuf};

use dsct::guided_filter::{default_radius, Epsilon};
use dsct::phantom::load_phantom;
use dsct::solver::FilterSpec;
use dsct::spectra::{load_attenuation_table, load_spectrum};
use dsct::{
    CachePolicy, EsartConfig, FanBeamGeometry, GuideSource, NoiseConfig, PathIntegralSource, Phantom,
    ProposedConfig, SpectralModel,
};
use serde::{Deserialize, Serialize};

use crate::failure::{CliResult, Failure, Stage};
use crate::files::load_image;

const STAGE: &str = "config";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: GeometryBlock,
    pub spectra: SpectraBlock,
    pub basis: BasisBlock,
    pub phantom: PhantomBlock,
    #[serde(default)]
    pub noise: NoiseBlock,
    #[serde(default)]
    pub solver: SolverBlock,
    pub output: OutputBlock,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ProjectorMode {
    #[default]
    Auto,
    Cached,
    OnTheFly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometryBlock {
    pub sod_cm: f64,
    pub sdd_cm: f64,
    pub n_channels: usize,
    pub channel_pitch_cm: f64,
    pub n_views: usize,
    #[serde(default = "full_turn")]
    pub angle_span_deg: f64,
    pub n_x: usize,
    pub n_y: usize,
    pub pixel_cm: f64,
    #[serde(default)]
    pub projector: ProjectorMode,
}

fn full_turn() -> f64 {
    360.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpectraBlock {
    pub low: PathBuf,
    pub high: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BasisBlock {
    pub names: [String; 2],
    pub tables: [PathBuf; 2],
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PathIntegrals {
    #[default]
    Analytic,
    Discrete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PhantomBlock {
    pub path: PathBuf,
    #[serde(default)]
    pub path_integrals: PathIntegrals,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseBlock {
    pub enabled: bool,
    pub photons_per_ray: f64,
    pub seed: u64,
}

impl Default for NoiseBlock {
    fn default() -> Self {
        let n = NoiseConfig::default();
        Self { enabled: n.enabled, photons_per_ray: n.photons_per_ray, seed: n.seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Esart,
    #[default]
    Proposed,
}

impl Method {
    pub fn name(self) -> &'static str {
        match self {
            Method::Esart => "esart",
            Method::Proposed => "proposed",
        }
    }
}

/// A value given once for both bases or as a `[basis1, basis2]` pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum PerBasis<T> {
    Both(T),
    Each([T; 2]),
}

impl<T: Clone> PerBasis<T> {
    pub fn pair(&self) -> [T; 2] {
        match self {
            PerBasis::Both(v) => [v.clone(), v.clone()],
            PerBasis::Each(p) => p.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverBlock {
    pub method: Method,
    pub iterations: usize,
    pub relaxation: f64,
    pub clamp: bool,
    /// Interleaved view subsets per iteration; 1 is fully simultaneous.
    pub subsets: usize,
    /// Guided filter radius in pixels; defaults to 8 px at 512 scaled to the grid.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub radius: Option<PerBasis<usize>>,
    /// Absolute epsilon, in squared guide units.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon: Option<PerBasis<f64>>,
    /// Epsilon relative to the squared dynamic range of the guide.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epsilon_rel: Option<PerBasis<f64>>,
    /// `high`, `low`, `self`, or the path of a DSCTIMG image.
    pub guide: PerBasis<String>,
    pub guide_iterations: usize,
}

impl Default for SolverBlock {
    fn default() -> Self {
        Self {
            method: Method::Proposed,
            iterations: 30,
            relaxation: 1.0,
            clamp: true,
            subsets: 1,
            radius: None,
            epsilon: None,
            epsilon_rel: None,
            guide: PerBasis::Both("high".into()),
            guide_iterations: 30,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputBlock {
    /// Where the run writes; not echoed into manifests.
    #[serde(default = "here", skip_serializing)]
    pub dir: PathBuf,
    #[serde(default = "default_energies")]
    pub composite_energies_kev: Vec<f64>,
    #[serde(default = "yes")]
    pub pgm: bool,
    /// Fixed PGM windows `[min, max]` keyed by output file stem.
    #[serde(default, skip_serializing_if = "std::collections::BTreeMap::is_empty")]
    pub windows: std::collections::BTreeMap<String, [f64; 2]>,
}

fn here() -> PathBuf {
    PathBuf::from(".")
}

fn default_energies() -> Vec<f64> {
    vec![70.0]
}

fn yes() -> bool {
    true
}

/// A parsed configuration and the directory its relative paths refer to.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedConfig {
    pub config: RunConfig,
    pub base_dir: PathBuf,
}

/// Applies `key.path=value` overrides. Values are parsed as TOML and fall back
/// to plain strings.
pub fn apply_overrides(table: &mut toml::Table, overrides: &[String]) -> CliResult<()> {
    for item in overrides {
        let (key, raw) = item
            .split_once('=')
            .ok_or_else(|| Failure::config(STAGE, format!("override {item:?} is not key=value")))?;
        let value = toml::from_str::<toml::Table>(&format!("v = {raw}"))
            .ok()
            .and_then(|mut t| t.remove("v"))
            .unwrap_or_else(|| toml::Value::String(raw.to_string()));
        let parts: Vec<&str> = key.trim().split('.').collect();
        if parts.iter().any(|p| p.is_empty()) {
            return Err(Failure::config(STAGE, format!("bad override key {key:?}")));
        }
        let mut cur = &mut *table;
        for p in &parts[..parts.len() - 1] {
            let entry = cur
                .entry(p.to_string())
                .or_insert_with(|| toml::Value::Table(toml::Table::new()));
            cur = entry
                .as_table_mut()
                .ok_or_else(|| Failure::config(STAGE, format!("override {key:?}: {p} is not a block")))?;
        }
        cur.insert(parts[parts.len() - 1].to_string(), value);
    }
    Ok(())
}

impl LoadedConfig {
    pub fn load(path: &Path, overrides: &[String]) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::config(STAGE, format!("cannot read {}: {e}", path.display())))?;
        let base_dir = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_str(&text, base_dir, overrides)
    }

    pub fn from_str(text: &str, base_dir: PathBuf, overrides: &[String]) -> CliResult<Self> {
        let mut table: toml::Table = text
            .parse()
            .map_err(|e| Failure::config(STAGE, format!("invalid TOML: {e}")))?;
        apply_overrides(&mut table, overrides)?;
        let config: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e| Failure::config(STAGE, format!("invalid configuration: {e}")))?;
        let loaded = Self { config, base_dir };
        loaded.validate()?;
        Ok(loaded)
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn output_dir(&self) -> PathBuf {
        self.resolve(&self.config.output.dir)
    }

    /// Input files named by the config: role, path as written, resolved path.
    pub fn input_files(&self) -> Vec<(String, PathBuf, PathBuf)> {
        let c = &self.config;
        let mut named = vec![
            ("spectrum_low".to_string(), c.spectra.low.clone()),
            ("spectrum_high".to_string(), c.spectra.high.clone()),
            (format!("basis_{}", c.basis.names[0]), c.basis.tables[0].clone()),
            (format!("basis_{}", c.basis.names[1]), c.basis.tables[1].clone()),
            ("phantom".to_string(), c.phantom.path.clone()),
        ];
        for (i, g) in c.solver.guide.pair().iter().enumerate() {
            if !matches!(g.as_str(), "high" | "low" | "self") {
                named.push((format!("guide_f{}", i + 1), PathBuf::from(g)));
            }
        }
        named
            .into_iter()
            .map(|(role, p)| {
                let resolved = self.resolve(&p);
                (role, p, resolved)
            })
            .collect()
    }

    fn validate(&self) -> CliResult<()> {
        for (role, _, path) in self.input_files() {
            if !path.is_file() {
                return Err(Failure::config(STAGE, format!("{role} file {} does not exist", path.display())));
            }
        }
        self.geometry()?;
        let c = &self.config;
        if c.noise.enabled && !(c.noise.photons_per_ray > 0.0 && c.noise.photons_per_ray.is_finite()) {
            return Err(Failure::config(STAGE, "noise.photons_per_ray must be positive"));
        }
        if c.output.composite_energies_kev.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(Failure::config(STAGE, "composite energies must be positive"));
        }
        if c.solver.epsilon.is_some() && c.solver.epsilon_rel.is_some() {
            return Err(Failure::config(STAGE, "give solver.epsilon or solver.epsilon_rel, not both"));
        }
        self.esart_config().validate().stage(STAGE)?;
        if c.solver.method == Method::Proposed {
            self.proposed_filters_only().validate().stage(STAGE)?;
        }
        Ok(())
    }

    pub fn geometry(&self) -> CliResult<FanBeamGeometry> {
        let g = &self.config.geometry;
        let geom = FanBeamGeometry {
            sod_cm: g.sod_cm,
            sdd_cm: g.sdd_cm,
            n_channels: g.n_channels,
            channel_pitch_cm: g.channel_pitch_cm,
            n_views: g.n_views,
            angle_span_rad: g.angle_span_deg.to_radians(),
            n_x: g.n_x,
            n_y: g.n_y,
            pixel_cm: g.pixel_cm,
        };
        geom.validate().stage(STAGE)?;
        Ok(geom)
    }

    pub fn cache_policy(&self) -> CachePolicy {
        match self.config.geometry.projector {
            ProjectorMode::Auto => CachePolicy::default(),
            ProjectorMode::Cached => CachePolicy::Cached,
            ProjectorMode::OnTheFly => CachePolicy::OnTheFly,
        }
    }

    pub fn spectral_model(&self) -> CliResult<SpectralModel> {
        const S: &str = "load inputs";
        let c = &self.config;
        let low = load_spectrum(self.resolve(&c.spectra.low)).stage(S)?;
        let high = load_spectrum(self.resolve(&c.spectra.high)).stage(S)?;
        let tables = [
            load_attenuation_table(self.resolve(&c.basis.tables[0])).stage(S)?,
            load_attenuation_table(self.resolve(&c.basis.tables[1])).stage(S)?,
        ];
        SpectralModel::from_tables(&low, &high, tables, c.basis.names.clone()).stage(S)
    }

    pub fn phantom(&self) -> CliResult<Phantom> {
        load_phantom(self.resolve(&self.config.phantom.path)).stage("load inputs")
    }

    pub fn path_integral_source(&self) -> PathIntegralSource {
        match self.config.phantom.path_integrals {
            PathIntegrals::Analytic => PathIntegralSource::Analytic,
            PathIntegrals::Discrete => PathIntegralSource::Discrete,
        }
    }

    pub fn noise(&self) -> NoiseConfig {
        let n = &self.config.noise;
        NoiseConfig { enabled: n.enabled, photons_per_ray: n.photons_per_ray, seed: n.seed }
    }

    pub fn esart_config(&self) -> EsartConfig {
        let s = &self.config.solver;
        EsartConfig {
            iterations: s.iterations,
            relaxation: s.relaxation,
            clamp: s.clamp,
            subsets: s.subsets,
        }
    }

    fn proposed_filters_only(&self) -> ProposedConfig {
        let s = &self.config.solver;
        let radius = s
            .radius
            .as_ref()
            .map(PerBasis::pair)
            .unwrap_or([default_radius(self.config.geometry.n_x.max(self.config.geometry.n_y)); 2]);
        let eps = match (&s.epsilon, &s.epsilon_rel) {
            (Some(a), _) => a.pair().map(Epsilon::Absolute),
            (None, Some(r)) => r.pair().map(Epsilon::Relative),
            (None, None) => [Epsilon::default(); 2],
        };
        ProposedConfig {
            iterations: s.iterations,
            relaxation: s.relaxation,
            clamp: s.clamp,
            filters: [0, 1].map(|i| FilterSpec { radius_px: radius[i], epsilon: eps[i] }),
            guides: [GuideSource::High, GuideSource::High],
            guide_iterations: s.guide_iterations,
            subsets: s.subsets,
        }
    }

    /// Proposed-method configuration, loading external guide images if named.
    pub fn proposed_config(&self) -> CliResult<ProposedConfig> {
        let mut c = self.proposed_filters_only();
        let names = self.config.solver.guide.pair();
        for i in 0..2 {
            c.guides[i] = match names[i].as_str() {
                "high" => GuideSource::High,
                "low" => GuideSource::Low,
                "self" => GuideSource::SelfIterate,
                path => GuideSource::External(load_image(&self.resolve(Path::new(path)), "load inputs")?),
            };
        }
        Ok(c)
    }

    /// The configuration as TOML, for manifests.
    pub fn echo(&self) -> String {
        toml::to_string(&self.config).expect("configuration serializes")
    }
}
