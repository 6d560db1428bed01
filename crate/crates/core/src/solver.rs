//! Guided-filter constrained decomposition.
//!
//! Every outer iteration runs one E-SART step and then replaces each basis
//! image by its guided-filter output against a single-spectrum guide image.
//! The balance weight between the data and filter terms drops out of this
//! split loop, so only the window radius and regularization are exposed.

use crate::error::{Error, Result};
use crate::esart::{
    esart_step, rmse_pair, Decomposition, DecompositionState, IterationRecord, SubsetPlan,
};
use crate::forward::DualScan;
use crate::geometry::Projector;
use crate::guided_filter::{self, default_radius, Epsilon, GuidedFilterParams};
use crate::raster::{Image, Sinogram};
use crate::spectra::BasisSet;

/// Image that steers the filtering of one basis.
#[derive(Debug, Clone, PartialEq)]
pub enum GuideSource {
    /// SART reconstruction of the high-energy sinogram.
    High,
    /// SART reconstruction of the low-energy sinogram.
    Low,
    /// The basis image's own pre-filter iterate.
    SelfIterate,
    External(Image),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FilterSpec {
    pub radius_px: usize,
    pub epsilon: Epsilon,
}

impl FilterSpec {
    /// Default radius for the grid size with the default relative epsilon.
    pub fn default_for(n: usize) -> Self {
        Self {
            radius_px: default_radius(n),
            epsilon: Epsilon::default(),
        }
    }

    pub fn resolve(&self, guide: &Image) -> Result<GuidedFilterParams> {
        let eps = self.epsilon.resolve(guide);
        if !(eps > 0.0) {
            return Err(Error::Parameter(format!(
                "guided filter epsilon resolved to {eps}; a relative epsilon needs a non-constant guide"
            )));
        }
        GuidedFilterParams::new(self.radius_px, eps)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProposedConfig {
    pub iterations: usize,
    pub relaxation: f64,
    pub clamp: bool,
    pub filters: [FilterSpec; 2],
    pub guides: [GuideSource; 2],
    pub guide_iterations: usize,
    /// View subsets for both the decomposition and the guide reconstruction.
    pub subsets: usize,
}

impl ProposedConfig {
    /// Defaults for an `n`-pixel grid: 30 iterations, high-energy guide for
    /// both bases.
    pub fn for_grid(n: usize) -> Self {
        Self {
            iterations: 30,
            relaxation: 1.0,
            clamp: true,
            filters: [FilterSpec::default_for(n); 2],
            guides: [GuideSource::High, GuideSource::High],
            guide_iterations: 30,
            subsets: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.iterations < 1 {
            return Err(Error::Parameter("iterations must be at least 1".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation.is_finite()) {
            return Err(Error::Parameter(format!(
                "relaxation must be positive, got {}",
                self.relaxation
            )));
        }
        if self.subsets < 1 {
            return Err(Error::Parameter("subsets must be at least 1".into()));
        }
        for f in &self.filters {
            if f.radius_px < 1 {
                return Err(Error::Parameter("guided filter radius must be at least 1".into()));
            }
            let e = match f.epsilon {
                Epsilon::Absolute(e) | Epsilon::Relative(e) => e,
            };
            if !(e > 0.0 && e.is_finite()) {
                return Err(Error::Parameter(format!(
                    "guided filter epsilon must be positive, got {e}"
                )));
            }
        }
        Ok(())
    }
}

/// SART reconstruction of one sinogram as monochromatic line integrals, from a
/// zero image and clamped at zero after every update.
pub fn reconstruct_guide(
    sino: &Sinogram,
    projector: &Projector,
    iterations: usize,
    relaxation: f64,
) -> Result<Image> {
    reconstruct_guide_subsets(sino, projector, &SubsetPlan::new(projector, 1)?, iterations, relaxation)
}

/// As [`reconstruct_guide`], updating the view subsets of `plan` in turn.
pub fn reconstruct_guide_subsets(
    sino: &Sinogram,
    projector: &Projector,
    plan: &SubsetPlan,
    iterations: usize,
    relaxation: f64,
) -> Result<Image> {
    let geom = projector.geometry();
    sino.ensure_shape(geom.n_views, geom.n_channels)?;
    let nc = geom.n_channels;
    let row_sums = projector.row_sums().data();
    let mut g = geom.empty_image();
    for _ in 0..iterations {
        for s in 0..plan.len() {
            let views = plan.views(s);
            let model = projector.project_views([&g], views)?;
            let rays = views.iter().flat_map(|&v| v * nc..(v + 1) * nc);
            let scaled: Vec<f64> = rays
                .zip(&model)
                .map(|(l, [p])| {
                    let r = row_sums[l];
                    if r > 0.0 {
                        (sino.data()[l] - p) / r
                    } else {
                        0.0
                    }
                })
                .collect();
            g = plan.apply(&g, &scaled, projector, s, relaxation)?;
            g.clamp_nonnegative();
        }
    }
    if g.data().iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("guide reconstruction produced non-finite values".into()));
    }
    Ok(g)
}

/// Guide images resolved for both bases. `None` means the basis is guided by
/// its own iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct ResolvedGuides {
    pub guides: [Option<Image>; 2],
}

pub fn resolve_guides(scan: &DualScan, projector: &Projector, config: &ProposedConfig) -> Result<ResolvedGuides> {
    let geom = projector.geometry();
    let plan = SubsetPlan::new(projector, config.subsets)?;
    let mut cache: [Option<Image>; 2] = [None, None];
    let mut guides: [Option<Image>; 2] = [None, None];
    for (i, src) in config.guides.iter().enumerate() {
        guides[i] = match src {
            GuideSource::SelfIterate => None,
            GuideSource::External(img) => {
                img.ensure_shape(geom.n_x, geom.n_y)?;
                Some(img.clone())
            }
            GuideSource::Low | GuideSource::High => {
                let k = usize::from(matches!(src, GuideSource::High));
                if cache[k].is_none() {
                    cache[k] = Some(reconstruct_guide_subsets(
                        scan.sinogram(k),
                        projector,
                        &plan,
                        config.guide_iterations,
                        config.relaxation,
                    )?);
                }
                cache[k].clone()
            }
        };
    }
    Ok(ResolvedGuides { guides })
}

/// One outer iteration, keeping the intermediate E-SART iterate.
#[derive(Debug, Clone, PartialEq)]
pub struct ProposedStep {
    pub intermediate: DecompositionState,
    pub state: DecompositionState,
    pub residual: [f64; 2],
    pub skipped_rays: usize,
}

pub fn proposed_step(
    state: &DecompositionState,
    scan: &DualScan,
    projector: &Projector,
    plan: &SubsetPlan,
    guides: &ResolvedGuides,
    config: &ProposedConfig,
) -> Result<ProposedStep> {
    let step = esart_step(state, scan, projector, plan, config.relaxation, config.clamp)?;
    let inter = step.state;
    let mut filtered = [inter.f1.clone(), inter.f2.clone()];
    for (i, out) in filtered.iter_mut().enumerate() {
        let input = inter.basis(i);
        let guide = guides.guides[i].as_ref().unwrap_or(input);
        let params = config.filters[i].resolve(guide)?;
        *out = guided_filter::apply(guide, input, &params)?;
        if config.clamp {
            out.clamp_nonnegative();
        }
    }
    let [f1, f2] = filtered;
    Ok(ProposedStep {
        state: DecompositionState {
            f1,
            f2,
            iteration: inter.iteration,
        },
        intermediate: inter,
        residual: step.residual,
        skipped_rays: step.skipped_rays,
    })
}

/// Decomposition with a guided-filter step after every E-SART iteration.
pub fn decompose_proposed(
    scan: &DualScan,
    projector: &Projector,
    config: &ProposedConfig,
    truth: Option<(&Image, &Image)>,
) -> Result<Decomposition> {
    config.validate()?;
    let guides = resolve_guides(scan, projector, config)?;
    decompose_with_guides(scan, projector, config, &guides, truth)
}

/// As [`decompose_proposed`] with guides already reconstructed.
pub fn decompose_with_guides(
    scan: &DualScan,
    projector: &Projector,
    config: &ProposedConfig,
    guides: &ResolvedGuides,
    truth: Option<(&Image, &Image)>,
) -> Result<Decomposition> {
    config.validate()?;
    let geom = projector.geometry();
    let plan = SubsetPlan::new(projector, config.subsets)?;
    let mut state = DecompositionState::zeros(geom.n_x, geom.n_y);
    let mut history = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let step = proposed_step(&state, scan, projector, &plan, guides, config)?;
        let (pre1, pre2) = rmse_pair(&step.intermediate, truth)?;
        let (post1, post2) = rmse_pair(&step.state, truth)?;
        state = step.state;
        history.push(IterationRecord {
            iteration: state.iteration,
            residual_low: step.residual[0],
            residual_high: step.residual[1],
            skipped_rays: step.skipped_rays,
            rmse_f1: post1,
            rmse_f2: post2,
            rmse_f1_prefilter: pre1,
            rmse_f2_prefilter: pre2,
        });
    }
    Ok(Decomposition { state, history })
}

/// Monochromatic attenuation image `psi_1(E) f1 + psi_2(E) f2`.
pub fn composite_image(state: &DecompositionState, basis: &BasisSet, energy_kev: f64) -> Result<Image> {
    let (a, b) = basis.psi_at_energy(energy_kev)?;
    Ok(state.f1.zip_map(&state.f2, |x, y| a * x + b * y))
}
