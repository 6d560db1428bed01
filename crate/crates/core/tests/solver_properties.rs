mod common;

use common::*;
use dsct::esart::{esart_step, DecompositionState, SubsetPlan};
use dsct::forward::{simulate_dual_scan, DualScan, NoiseConfig, PathIntegralSource};
use dsct::guided_filter::{self, Epsilon};
use dsct::metrics::{load_rois, rmse, roi_stats};
use dsct::phantom::rasterize;
use dsct::solver::{
    decompose_proposed, proposed_step, reconstruct_guide, reconstruct_guide_subsets, resolve_guides,
    FilterSpec, GuideSource, ProposedConfig,
};
use dsct::spectra::mu_at;
use dsct::{composite_image, decompose_esart, EsartConfig, Image, Projector};

const SUBSETS: usize = 10;

fn desk_config() -> ProposedConfig {
    let mut c = ProposedConfig::for_grid(64);
    c.subsets = SUBSETS;
    c.filters = [FilterSpec { radius_px: 1, epsilon: Epsilon::Relative(1e-4) }; 2];
    c
}

fn desk_esart() -> EsartConfig {
    EsartConfig { subsets: SUBSETS, ..Default::default() }
}

struct Desk {
    projector: Projector,
    scan: DualScan,
    truth: (Image, Image),
}

fn desk(noise: Option<u64>) -> Desk {
    let geom = desk_geometry();
    let phantom = head_phantom();
    let noise = match noise {
        Some(seed) => NoiseConfig { enabled: true, photons_per_ray: 1e5, seed },
        None => NoiseConfig::default(),
    };
    let scan = simulate_dual_scan(&phantom, &geom, &bundled_model(), &noise, PathIntegralSource::Analytic).unwrap();
    let truth = rasterize(&phantom, &geom).unwrap();
    Desk { projector: Projector::new(geom).unwrap(), scan, truth }
}

#[test]
fn one_iteration_is_esart_then_filter() {
    let d = desk(Some(3));
    let mut config = desk_config();
    config.guide_iterations = 5;
    let guides = resolve_guides(&d.scan, &d.projector, &config).unwrap();
    let plan = SubsetPlan::new(&d.projector, SUBSETS).unwrap();
    let mut state = DecompositionState::zeros(64, 64);
    for _ in 0..3 {
        let step = proposed_step(&state, &d.scan, &d.projector, &plan, &guides, &config).unwrap();
        let e = esart_step(&state, &d.scan, &d.projector, &plan, 1.0, true).unwrap();
        let g = guides.guides[0].as_ref().unwrap();
        for i in 0..2 {
            let params = config.filters[i].resolve(g).unwrap();
            let mut expected = guided_filter::apply(g, e.state.basis(i), &params).unwrap();
            expected.clamp_nonnegative();
            assert!(max_abs_diff(step.state.basis(i).data(), expected.data()) <= 1e-14);
        }
        assert_eq!(step.intermediate, e.state);
        state = step.state;
    }
}

#[test]
fn identity_filter_reduces_to_esart() {
    let d = desk(None);
    let mut config = desk_config();
    config.guides = [GuideSource::SelfIterate, GuideSource::SelfIterate];
    config.filters = [FilterSpec { radius_px: 2, epsilon: Epsilon::Absolute(1e-12) }; 2];
    let p = decompose_proposed(&d.scan, &d.projector, &config, None).unwrap();
    let e = decompose_esart(&d.scan, &d.projector, &desk_esart(), None).unwrap();
    assert!(max_abs_diff(p.state.f1.data(), e.state.f1.data()) <= 1e-6 * e.state.f1.max());
    assert!(max_abs_diff(p.state.f2.data(), e.state.f2.data()) <= 1e-6 * e.state.f2.max());
}

#[test]
fn perfect_guide_does_not_hurt() {
    let d = desk(None);
    let truth_state = DecompositionState { f1: d.truth.0.clone(), f2: d.truth.1.clone(), iteration: 0 };
    let mu70 = composite_image(&truth_state, d.scan.model.basis(), 70.0).unwrap();
    let mut config = desk_config();
    config.guides = [GuideSource::External(mu70.clone()), GuideSource::External(mu70)];
    let truth = Some((&d.truth.0, &d.truth.1));
    let p = decompose_proposed(&d.scan, &d.projector, &config, truth).unwrap();
    let e = decompose_esart(&d.scan, &d.projector, &desk_esart(), truth).unwrap();
    let (p, e) = (p.history.last().unwrap(), e.history.last().unwrap());
    assert!(p.rmse_f1.unwrap() <= e.rmse_f1.unwrap(), "{p:?} {e:?}");
    assert!(p.rmse_f2.unwrap() <= e.rmse_f2.unwrap(), "{p:?} {e:?}");
}

#[test]
fn runs_are_bitwise_reproducible() {
    let a = desk(Some(11));
    let b = desk(Some(11));
    assert_eq!(a.scan, b.scan);
    let mut config = desk_config();
    config.iterations = 4;
    config.guide_iterations = 4;
    let x = decompose_proposed(&a.scan, &a.projector, &config, None).unwrap();
    let y = decompose_proposed(&b.scan, &b.projector, &config, None).unwrap();
    assert_eq!(x, y);
    let g1 = reconstruct_guide(&a.scan.high, &a.projector, 3, 1.0).unwrap();
    let g2 = reconstruct_guide(&a.scan.high, &a.projector, 3, 1.0).unwrap();
    assert_eq!(g1, g2);
}

#[test]
fn guide_inverts_monochromatic_data() {
    // Self-consistent line integrals of a known attenuation map.
    let d = desk(None);
    let truth_state = DecompositionState { f1: d.truth.0.clone(), f2: d.truth.1.clone(), iteration: 0 };
    let mu = composite_image(&truth_state, d.scan.model.basis(), 70.0).unwrap();
    let sino = d.projector.project(&mu).unwrap();
    let plan = SubsetPlan::new(&d.projector, SUBSETS).unwrap();
    let g = reconstruct_guide_subsets(&sino, &d.projector, &plan, 30, 1.0).unwrap();
    let rel = rmse(&g, &mu).unwrap() / mu.max();
    assert!(rel < 0.02, "{rel}");
}

#[test]
fn truth_composite_matches_pointwise_mu() {
    let d = desk(None);
    let basis = d.scan.model.basis();
    let j = basis.grid().centers_kev().iter().position(|&e| e == 70.0).unwrap();
    let state = DecompositionState { f1: d.truth.0.clone(), f2: d.truth.1.clone(), iteration: 0 };
    let c = composite_image(&state, basis, 70.0).unwrap();
    for k in 0..c.len() {
        let m = mu_at(basis, (d.truth.0.data()[k], d.truth.1.data()[k]), j);
        assert!((c.data()[k] - m).abs() <= 1e-12);
    }
}

#[test]
fn clean_data_is_not_degraded() {
    let d = desk(None);
    let truth = Some((&d.truth.0, &d.truth.1));
    let p = decompose_proposed(&d.scan, &d.projector, &desk_config(), truth).unwrap();
    let e = decompose_esart(&d.scan, &d.projector, &desk_esart(), truth).unwrap();
    let (p, e) = (p.history.last().unwrap(), e.history.last().unwrap());
    assert!(p.rmse_f1.unwrap() <= 1.5 * e.rmse_f1.unwrap());
    assert!(p.rmse_f2.unwrap() <= 1.5 * e.rmse_f2.unwrap());
}

#[test]
fn noise_is_suppressed_in_water() {
    let d = desk(Some(1));
    let truth = Some((&d.truth.0, &d.truth.1));
    let p = decompose_proposed(&d.scan, &d.projector, &desk_config(), truth).unwrap();
    let e = decompose_esart(&d.scan, &d.projector, &desk_esart(), truth).unwrap();
    let rois = load_rois(data_path("rois/head_like_64.txt")).unwrap();
    let water = rois.iter().find(|r| r.label == "water").unwrap();
    for i in 0..2 {
        let (_, sp) = roi_stats(p.state.basis(i), water).unwrap();
        let (_, se) = roi_stats(e.state.basis(i), water).unwrap();
        assert!(sp < se, "basis {i}: {sp} vs {se}");
    }
    let (pl, el) = (p.history.last().unwrap(), e.history.last().unwrap());
    assert!(pl.rmse_f1 < el.rmse_f1 && pl.rmse_f2 < el.rmse_f2);
}
