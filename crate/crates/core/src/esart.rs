//! Extended SART for dual-spectral decomposition.
//!
//! Each iteration linearizes the polychromatic model of every ray around the
//! current basis images, solves the resulting 2x2 system for projection-domain
//! increments of both basis path integrals, and spreads those increments back
//! into the images with the SART normalization.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::forward::{spectral_response, DualScan};
use crate::geometry::Projector;
use crate::metrics::rmse;
use crate::raster::{Image, Sinogram};
use crate::spectra::SpectralModel;

/// Rays with `|det M| < DEGENERACY_RTOL * max|M_ij|^2` are skipped.
pub const DEGENERACY_RTOL: f64 = 1e-8;

/// Linearization of one ray around the current iterate, per spectrum `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinearizationCoeffs {
    /// `P_k(n)`.
    pub model_projection: [f64; 2],
    /// `Q_k(n)`.
    pub transmission: [f64; 2],
    /// `[k][i] -> Psi^i_k(n)`.
    pub psi_moments: [[f64; 2]; 2],
    /// `[k][i] -> Psi^i_k(n) / Q_k(n)`, the entries of `M`.
    pub ratios: [[f64; 2]; 2],
}

/// Per-ray 2x2 system `M dp = residual`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RaySystem {
    pub m: [[f64; 2]; 2],
    /// Cofactor (adjugate) matrix `C` with `C / det = M^-1`.
    pub cofactor: [[f64; 2]; 2],
    pub det: f64,
}

impl RaySystem {
    pub fn new(m: [[f64; 2]; 2]) -> Self {
        Self {
            m,
            cofactor: [[m[1][1], -m[0][1]], [-m[1][0], m[0][0]]],
            det: m[0][0] * m[1][1] - m[0][1] * m[1][0],
        }
    }

    pub fn from_coeffs(c: &LinearizationCoeffs) -> Self {
        Self::new(c.ratios)
    }

    pub fn is_degenerate(&self) -> bool {
        let scale = self
            .m
            .iter()
            .flatten()
            .fold(0.0f64, |acc, v| acc.max(v.abs()));
        !(self.det.abs() >= DEGENERACY_RTOL * scale * scale) || scale == 0.0
    }

    /// `(C / det) * residual`, or `None` when the system is degenerate.
    pub fn solve(&self, residual: (f64, f64)) -> Option<(f64, f64)> {
        if self.is_degenerate() {
            return None;
        }
        let c = &self.cofactor;
        Some((
            (c[0][0] * residual.0 + c[0][1] * residual.1) / self.det,
            (c[1][0] * residual.0 + c[1][1] * residual.1) / self.det,
        ))
    }
}

/// Basis density images and the number of completed iterations.
#[derive(Debug, Clone, PartialEq)]
pub struct DecompositionState {
    pub f1: Image,
    pub f2: Image,
    pub iteration: usize,
}

impl DecompositionState {
    pub fn zeros(nx: usize, ny: usize) -> Self {
        Self {
            f1: Image::zeros(nx, ny),
            f2: Image::zeros(nx, ny),
            iteration: 0,
        }
    }

    pub fn basis(&self, i: usize) -> &Image {
        match i {
            0 => &self.f1,
            1 => &self.f2,
            _ => panic!("basis index {i} out of range"),
        }
    }
}

/// Linearizes the model of every ray at the current state.
pub fn linearize(
    state: &DecompositionState,
    projector: &Projector,
    model: &SpectralModel,
) -> Result<Vec<LinearizationCoeffs>> {
    let [p1, p2] = projector.project_many([&state.f1, &state.f2])?;
    linearize_path_integrals(&p1, &p2, model)
}

/// Linearization given already projected basis path integrals.
pub fn linearize_path_integrals(
    p1: &Sinogram,
    p2: &Sinogram,
    model: &SpectralModel,
) -> Result<Vec<LinearizationCoeffs>> {
    p1.ensure_shape(p2.n_views(), p2.n_channels())?;
    let pairs: Vec<[f64; 2]> = p1.data().iter().zip(p2.data()).map(|(&a, &b)| [a, b]).collect();
    linearize_pairs(&pairs, model)
}

fn linearize_pairs(pairs: &[[f64; 2]], model: &SpectralModel) -> Result<Vec<LinearizationCoeffs>> {
    let basis = model.basis();
    let (psi1, psi2) = (basis.psi(0), basis.psi(1));
    let (w_low, w_high) = (model.low().weights(), model.high().weights());
    pairs
        .par_iter()
        .map(|&[a, b]| {
            let lo = spectral_response(w_low, psi1, psi2, (a, b))?;
            let hi = spectral_response(w_high, psi1, psi2, (a, b))?;
            if !(lo.transmission > 0.0 && hi.transmission > 0.0) {
                return Err(Error::NonFinite {
                    p1: a,
                    p2: b,
                    reason: "transmitted fraction underflowed".into(),
                });
            }
            Ok(LinearizationCoeffs {
                model_projection: [lo.projection, hi.projection],
                transmission: [lo.transmission, hi.transmission],
                psi_moments: [lo.psi_moments, hi.psi_moments],
                ratios: [lo.ratios, hi.ratios],
            })
        })
        .collect()
}

/// Projection-domain increments `(dp1, dp2)` for one ray, or `None` if the ray
/// is skipped as degenerate.
pub fn solve_ray_update(coeffs: &LinearizationCoeffs, measured: (f64, f64)) -> Option<(f64, f64)> {
    let residual = (
        measured.0 - coeffs.model_projection[0],
        measured.1 - coeffs.model_projection[1],
    );
    RaySystem::from_coeffs(coeffs).solve(residual)
}

/// SART step for one image: `f + lambda * D_c^-1 A^T D_r^-1 increments`.
///
/// Rays with zero length and pixels no ray crosses contribute nothing.
pub fn sart_update(
    image: &Image,
    increments: &Sinogram,
    projector: &Projector,
    relaxation: f64,
) -> Result<Image> {
    let row_sums = projector.row_sums();
    increments.ensure_shape(row_sums.n_views(), row_sums.n_channels())?;
    let scaled: Vec<f64> = increments
        .data()
        .iter()
        .zip(row_sums.data())
        .map(|(&d, &r)| if r > 0.0 { d / r } else { 0.0 })
        .collect();
    let scaled = Sinogram::from_vec(increments.n_views(), increments.n_channels(), scaled)?;
    let back = projector.backproject(&scaled)?;
    let col_sums = projector.col_sums();
    image.ensure_shape(col_sums.nx(), col_sums.ny())?;
    let data = image
        .data()
        .iter()
        .zip(back.data())
        .zip(col_sums.data())
        .map(|((&f, &b), &c)| if c > 0.0 { f + relaxation * b / c } else { f })
        .collect();
    Image::from_vec(image.nx(), image.ny(), data)
}

/// Applies SART to both basis images with their increment sinograms.
pub fn sart_image_update(
    state: &DecompositionState,
    dp1: &Sinogram,
    dp2: &Sinogram,
    projector: &Projector,
    relaxation: f64,
    clamp: bool,
) -> Result<DecompositionState> {
    let mut f1 = sart_update(&state.f1, dp1, projector, relaxation)?;
    let mut f2 = sart_update(&state.f2, dp2, projector, relaxation)?;
    if clamp {
        f1.clamp_nonnegative();
        f2.clamp_nonnegative();
    }
    Ok(DecompositionState {
        f1,
        f2,
        iteration: state.iteration + 1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EsartConfig {
    pub iterations: usize,
    pub relaxation: f64,
    /// Clamp densities at zero after every update.
    pub clamp: bool,
    /// Number of interleaved view subsets updated in sequence per iteration;
    /// 1 is the fully simultaneous update.
    pub subsets: usize,
}

impl Default for EsartConfig {
    fn default() -> Self {
        Self {
            iterations: 30,
            relaxation: 1.0,
            clamp: true,
            subsets: 1,
        }
    }
}

impl EsartConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.relaxation > 0.0 && self.relaxation.is_finite()) {
            return Err(Error::Parameter(format!(
                "relaxation must be positive, got {}",
                self.relaxation
            )));
        }
        if self.subsets < 1 {
            return Err(Error::Parameter("subsets must be at least 1".into()));
        }
        Ok(())
    }
}

/// Interleaved view subsets: subset `s` of `S` holds views `s, s + S, ...`.
pub fn view_subsets(n_views: usize, n_subsets: usize) -> Result<Vec<Vec<usize>>> {
    if n_subsets < 1 || n_subsets > n_views {
        return Err(Error::Parameter(format!(
            "subsets must be between 1 and the number of views ({n_views}), got {n_subsets}"
        )));
    }
    Ok((0..n_subsets)
        .map(|s| (s..n_views).step_by(n_subsets).collect())
        .collect())
}

/// View subsets and their SART column normalizations.
#[derive(Debug, Clone)]
pub struct SubsetPlan {
    subsets: Vec<Vec<usize>>,
    col_sums: Vec<Image>,
}

impl SubsetPlan {
    pub fn new(projector: &Projector, n_subsets: usize) -> Result<Self> {
        let subsets = view_subsets(projector.geometry().n_views, n_subsets)?;
        let nc = projector.geometry().n_channels;
        let col_sums = if subsets.len() == 1 {
            vec![projector.col_sums().clone()]
        } else {
            subsets
                .iter()
                .map(|views| projector.backproject_views(&vec![1.0; views.len() * nc], views))
                .collect::<Result<_>>()?
        };
        Ok(Self { subsets, col_sums })
    }

    pub fn len(&self) -> usize {
        self.subsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subsets.is_empty()
    }

    pub fn views(&self, s: usize) -> &[usize] {
        &self.subsets[s]
    }

    /// `f + lambda * (A_s^T scaled) / col_sums_s` for subset `s`, where
    /// `scaled` holds the subset's ray increments already divided by the ray
    /// lengths.
    pub fn apply(
        &self,
        image: &Image,
        scaled: &[f64],
        projector: &Projector,
        s: usize,
        relaxation: f64,
    ) -> Result<Image> {
        let back = projector.backproject_views(scaled, self.views(s))?;
        let data = image
            .data()
            .iter()
            .zip(back.data())
            .zip(self.col_sums[s].data())
            .map(|((&f, &b), &c)| if c > 0.0 { f + relaxation * b / c } else { f })
            .collect();
        Image::from_vec(image.nx(), image.ny(), data)
    }
}


/// Outcome of one linearize / solve / update pass.
#[derive(Debug, Clone, PartialEq)]
pub struct EsartStep {
    pub state: DecompositionState,
    /// `||P_k - P_k(n)||_2` of the state the step started from.
    pub residual: [f64; 2],
    pub skipped_rays: usize,
}

/// One E-SART iteration. With several subsets each subset is linearized,
/// solved and applied in turn, and the residual sums every ray at the point it
/// was linearized.
pub fn esart_step(
    state: &DecompositionState,
    scan: &DualScan,
    projector: &Projector,
    plan: &SubsetPlan,
    relaxation: f64,
    clamp: bool,
) -> Result<EsartStep> {
    let geom = projector.geometry();
    scan.low.ensure_shape(geom.n_views, geom.n_channels)?;
    scan.high.ensure_shape(geom.n_views, geom.n_channels)?;
    if plan.len() == 1 {
        return simultaneous_step(state, scan, projector, relaxation, clamp);
    }
    let nc = geom.n_channels;
    let row_sums = projector.row_sums().data();
    let mut f = [state.f1.clone(), state.f2.clone()];
    let mut residual = [0.0f64; 2];
    let mut skipped = 0usize;
    for s in 0..plan.len() {
        let views = plan.views(s);
        let pairs = projector.project_views([&f[0], &f[1]], views)?;
        let coeffs = linearize_pairs(&pairs, &scan.model)?;
        let mut scaled = [Vec::with_capacity(coeffs.len()), Vec::with_capacity(coeffs.len())];
        let rays = views.iter().flat_map(|&v| v * nc..(v + 1) * nc);
        for (l, c) in rays.zip(&coeffs) {
            let measured = (scan.low.data()[l], scan.high.data()[l]);
            residual[0] += (measured.0 - c.model_projection[0]).powi(2);
            residual[1] += (measured.1 - c.model_projection[1]).powi(2);
            let (d1, d2) = solve_ray_update(c, measured).unwrap_or_else(|| {
                skipped += 1;
                (0.0, 0.0)
            });
            let r = row_sums[l];
            let (d1, d2) = if r > 0.0 { (d1 / r, d2 / r) } else { (0.0, 0.0) };
            scaled[0].push(d1);
            scaled[1].push(d2);
        }
        for i in 0..2 {
            f[i] = plan.apply(&f[i], &scaled[i], projector, s, relaxation)?;
            if clamp {
                f[i].clamp_nonnegative();
            }
        }
    }
    let [f1, f2] = f;
    Ok(EsartStep {
        state: DecompositionState {
            f1,
            f2,
            iteration: state.iteration + 1,
        },
        residual: residual.map(f64::sqrt),
        skipped_rays: skipped,
    })
}

fn simultaneous_step(
    state: &DecompositionState,
    scan: &DualScan,
    projector: &Projector,
    relaxation: f64,
    clamp: bool,
) -> Result<EsartStep> {
    let geom = projector.geometry();
    let coeffs = linearize(state, projector, &scan.model)?;

    let mut residual = [0.0f64; 2];
    let mut skipped = 0usize;
    let mut dp1 = Vec::with_capacity(coeffs.len());
    let mut dp2 = Vec::with_capacity(coeffs.len());
    for (l, c) in coeffs.iter().enumerate() {
        let measured = (scan.low.data()[l], scan.high.data()[l]);
        residual[0] += (measured.0 - c.model_projection[0]).powi(2);
        residual[1] += (measured.1 - c.model_projection[1]).powi(2);
        match solve_ray_update(c, measured) {
            Some((a, b)) => {
                dp1.push(a);
                dp2.push(b);
            }
            None => {
                skipped += 1;
                dp1.push(0.0);
                dp2.push(0.0);
            }
        }
    }
    let dp1 = Sinogram::from_vec(geom.n_views, geom.n_channels, dp1)?;
    let dp2 = Sinogram::from_vec(geom.n_views, geom.n_channels, dp2)?;
    let next = sart_image_update(state, &dp1, &dp2, projector, relaxation, clamp)?;
    Ok(EsartStep {
        state: next,
        residual: residual.map(f64::sqrt),
        skipped_rays: skipped,
    })
}

/// Diagnostics for one outer iteration.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct IterationRecord {
    /// 1-based iteration number.
    pub iteration: usize,
    /// Projection residuals of the iterate this iteration linearized around.
    pub residual_low: f64,
    pub residual_high: f64,
    pub skipped_rays: usize,
    /// RMSE of the state after the iteration, when truth is known.
    pub rmse_f1: Option<f64>,
    pub rmse_f2: Option<f64>,
    /// RMSE of the intermediate E-SART iterate before guided filtering.
    pub rmse_f1_prefilter: Option<f64>,
    pub rmse_f2_prefilter: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub state: DecompositionState,
    pub history: Vec<IterationRecord>,
}

pub(crate) fn rmse_pair(state: &DecompositionState, truth: Option<(&Image, &Image)>) -> Result<(Option<f64>, Option<f64>)> {
    match truth {
        Some((t1, t2)) => Ok((Some(rmse(&state.f1, t1)?), Some(rmse(&state.f2, t2)?))),
        None => Ok((None, None)),
    }
}

/// Baseline E-SART decomposition from zero initial images.
pub fn decompose_esart(
    scan: &DualScan,
    projector: &Projector,
    config: &EsartConfig,
    truth: Option<(&Image, &Image)>,
) -> Result<Decomposition> {
    config.validate()?;
    let geom = projector.geometry();
    let plan = SubsetPlan::new(projector, config.subsets)?;
    let mut state = DecompositionState::zeros(geom.n_x, geom.n_y);
    let mut history = Vec::with_capacity(config.iterations);
    for _ in 0..config.iterations {
        let step = esart_step(&state, scan, projector, &plan, config.relaxation, config.clamp)?;
        state = step.state;
        let (rmse_f1, rmse_f2) = rmse_pair(&state, truth)?;
        history.push(IterationRecord {
            iteration: state.iteration,
            residual_low: step.residual[0],
            residual_high: step.residual[1],
            skipped_rays: step.skipped_rays,
            rmse_f1,
            rmse_f2,
            ..Default::default()
        });
    }
    Ok(Decomposition { state, history })
}

/// Renders diagnostics as CSV. `with_filter_columns` adds the pre-filter
/// RMSE columns written by the guided-filter method.
pub fn diagnostics_csv(history: &[IterationRecord], with_truth: bool, with_filter_columns: bool) -> String {
    let mut out = String::from("iteration,residual_low,residual_high,skipped_rays");
    if with_truth {
        out.push_str(",rmse_f1,rmse_f2");
        if with_filter_columns {
            out.push_str(",rmse_f1_prefilter,rmse_f2_prefilter");
        }
    }
    out.push('\n');
    let opt = |v: Option<f64>| v.map(|x| format!("{x:.9e}")).unwrap_or_default();
    for r in history {
        out.push_str(&format!(
            "{},{:.9e},{:.9e},{}",
            r.iteration, r.residual_low, r.residual_high, r.skipped_rays
        ));
        if with_truth {
            out.push_str(&format!(",{},{}", opt(r.rmse_f1), opt(r.rmse_f2)));
            if with_filter_columns {
                out.push_str(&format!(
                    ",{},{}",
                    opt(r.rmse_f1_prefilter),
                    opt(r.rmse_f2_prefilter)
                ));
            }
        }
        out.push('\n');
    }
    out
}
