//! Property tests for geometry, masks, sensing and the solvers.

use num_complex::Complex64;
use proptest::prelude::*;

use ris_rci::fields::{aggregate_field, panel_field};
use ris_rci::masks::{
    compensation_phase, make_mask, make_masks, nominal_steering, random_redirection, steering_gradient, MaskStrategy,
    SeedRecord,
};
use ris_rci::recon::{reconstruct_cgnr, reconstruct_crnr, SolverOptions};
use ris_rci::scalar::wrap_phase;
use ris_rci::scene::{angle_bounds_from, build_scene, direction_angles, RoiBox, SceneConfig, Side};
use ris_rci::sensing::{build_sensing_matrix, measure, NoiseSpec, SensingMatrix};
use ris_rci::{Point3, Scene64};

fn small_scene() -> Scene64 {
    let cfg = SceneConfig {
        panel_rows: 4,
        panel_cols: 4,
        ..SceneConfig::default()
    };
    build_scene(&cfg).unwrap()
}

fn roi_strategy() -> impl Strategy<Value = RoiBox<f64>> {
    (-2.0..2.0f64, -1.0..3.0f64, 3.0..12.0f64, 0.1..3.0f64, 0.1..3.0f64)
        .prop_map(|(x, y, z, ex, ey)| RoiBox::planar(Point3::new(x, y, z), ex, ey))
}

fn complex_vec(len: usize) -> impl Strategy<Value = Vec<Complex64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64).prop_map(|(a, b)| Complex64::new(a, b)), len)
}

fn system(m: usize, n: usize) -> impl Strategy<Value = (SensingMatrix<f64>, Vec<Complex64>)> {
    (complex_vec(m * n), complex_vec(m)).prop_map(move |(e, g)| (SensingMatrix::from_entries(m, n, e).unwrap(), g))
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den.max(1e-300)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn enlarged_roi_bounds_enclose_the_original(roi in roi_strategy(), grow in 1.0..2.5f64) {
        let panel = Point3::new(-0.3, 0.2, 0.0);
        let small = angle_bounds_from(panel, &roi).unwrap();
        let big = angle_bounds_from(panel, &roi.scaled(grow)).unwrap();
        prop_assert!(big.encloses(&small, 1e-9), "{small:?} not inside {big:?}");
    }

    #[test]
    fn every_roi_point_lies_inside_the_bounds(roi in roi_strategy(), u in 0.0..1.0f64, v in 0.0..1.0f64) {
        let panel = Point3::new(0.4, -0.2, 0.0);
        let b = angle_bounds_from(panel, &roi).unwrap();
        let (x0, x1) = roi.x_range();
        let (y0, y1) = roi.y_range();
        let p = Point3::new(x0 + u * (x1 - x0), y0 + v * (y1 - y0), roi.center.z);
        let (theta, phi) = direction_angles(panel, p);
        prop_assert!(b.contains(theta, phi, 1e-9));
    }

    #[test]
    fn redirection_stays_in_bounds(roi in roi_strategy(), c_max in 0.0..=0.5f64, seed in any::<u64>()) {
        let panel = Point3::new(0.0, 0.0, 0.0);
        let b = angle_bounds_from(panel, &roi).unwrap();
        let (theta, phi) = direction_angles(panel, roi.center);
        let mut rng = SeedRecord::new(seed, 0).rng();
        for _ in 0..50 {
            let r = random_redirection(&b, ris_rci::masks::Steering { theta, phi }, c_max, &mut rng);
            prop_assert!(b.contains(r.theta, r.phi, 1e-12));
            prop_assert!(r.theta_rnd <= c_max * b.theta_width() + 1e-15);
        }
    }

    #[test]
    fn masks_replay_from_their_seed(seed in any::<u64>(), index in 0usize..50) {
        let scene = small_scene();
        for strategy in [MaskStrategy::focused_speckle(), MaskStrategy::RandomPattern] {
            let rec = SeedRecord::new(seed, index as u64);
            let a = make_mask(&scene, &strategy, index, rec).unwrap();
            let b = make_mask(&scene, &strategy, index, a.seed_record).unwrap();
            prop_assert_eq!(a, b);
        }
    }

    #[test]
    fn speckle_profile_is_compensation_plus_gradient_plus_offset(seed in any::<u64>()) {
        let scene = small_scene();
        let mask = make_masks(&scene, &MaskStrategy::focused_speckle(), 1, seed).unwrap().remove(0);
        let f0 = scene.design_frequency;
        for panel in scene.all_panels() {
            let s = mask.steering[panel.id].unwrap();
            let expect = compensation_phase(panel, scene.antenna(panel.side), f0)
                .add(&steering_gradient(panel, s.theta, s.phi, f0))
                .shifted(mask.offsets[panel.id]);
            for (a, b) in mask.profile(panel.id).phases.iter().zip(&expect.phases) {
                prop_assert!(wrap_phase(a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn offset_only_masks_differ_by_a_constant_phase_per_panel(s1 in any::<u64>(), s2 in any::<u64>()) {
        let scene = small_scene();
        let strategy = MaskStrategy::offsets_only();
        let a = make_masks(&scene, &strategy, 1, s1).unwrap().remove(0);
        let b = make_masks(&scene, &strategy, 1, s2).unwrap().remove(0);
        for panel in scene.all_panels() {
            let pa = a.profile(panel.id).shifted(-a.offsets[panel.id]);
            let pb = b.profile(panel.id).shifted(-b.offsets[panel.id]);
            for (x, y) in pa.phases.iter().zip(&pb.phases) {
                prop_assert!(wrap_phase(x - y).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn panel_offset_leaves_single_panel_magnitude_unchanged(seed in any::<u64>(), shift in -3.0..3.0f64) {
        let scene = small_scene();
        let mask = make_masks(&scene, &MaskStrategy::focused_speckle(), 1, seed).unwrap().remove(0);
        let mut shifted = mask.clone();
        shifted.profiles[0] = mask.profiles[0].shifted(shift);
        let pts = scene.roi.grid(5, 5).points;
        let f = scene.design_frequency;
        let a = panel_field(&scene, &mask, 0, &pts, f).unwrap();
        let b = panel_field(&scene, &shifted, 0, &pts, f).unwrap();
        for (x, y) in a.values.iter().zip(&b.values) {
            prop_assert!((x.norm() - y.norm()).abs() <= 1e-9 * x.norm().max(1e-12));
        }
    }

    #[test]
    fn aggregate_field_is_the_sum_of_panel_fields(seed in any::<u64>()) {
        let scene = small_scene();
        let mask = make_masks(&scene, &MaskStrategy::RandomPattern, 1, seed).unwrap().remove(0);
        let pts = scene.roi.grid(4, 4).points;
        let f = scene.frequencies[0];
        let total = aggregate_field(&scene, &mask, Side::Rx, &pts, f).unwrap();
        let mut sum = vec![Complex64::new(0.0, 0.0); pts.len()];
        for p in scene.panels(Side::Rx) {
            for (s, v) in sum.iter_mut().zip(panel_field(&scene, &mask, p.id, &pts, f).unwrap().values) {
                *s += v;
            }
        }
        prop_assert!(rel_err(&total.values, &sum) < 1e-12);
    }

    #[test]
    fn noiseless_measurement_is_linear(a in complex_vec(6), b in complex_vec(6), alpha in -2.0..2.0f64) {
        let scene = small_scene();
        let masks = make_masks(&scene, &MaskStrategy::focused_speckle(), 3, 5).unwrap();
        let h = build_sensing_matrix(&scene, &masks, &scene.roi.grid(3, 2).points).unwrap();
        let rec = SeedRecord::new(0, 0);
        let mix: Vec<Complex64> = a.iter().zip(&b).map(|(x, y)| x * alpha + y).collect();
        let ga = measure(&h, &a, NoiseSpec::Noiseless, rec).unwrap().g;
        let gb = measure(&h, &b, NoiseSpec::Noiseless, rec).unwrap().g;
        let gm = measure(&h, &mix, NoiseSpec::Noiseless, rec).unwrap().g;
        let expect: Vec<Complex64> = ga.iter().zip(&gb).map(|(x, y)| x * alpha + y).collect();
        prop_assert!(rel_err(&gm, &expect) < 1e-10);
    }

    #[test]
    fn cgnr_is_scale_equivariant((h, g) in system(12, 6), re in 0.1..10.0f64, im in -5.0..5.0f64) {
        let c = Complex64::new(re, im);
        let opts = SolverOptions { max_iter: 30, ..SolverOptions::default() };
        let x = reconstruct_cgnr(&h, &g, &opts).unwrap().sigma_est;
        let gc: Vec<Complex64> = g.iter().map(|v| v * c).collect();
        let xc = reconstruct_cgnr(&h, &gc, &opts).unwrap().sigma_est;
        let expect: Vec<Complex64> = x.iter().map(|v| v * c).collect();
        prop_assert!(rel_err(&xc, &expect) < 1e-8);
    }

    #[test]
    fn crnr_normal_residual_never_increases((h, g) in system(10, 8)) {
        let opts = SolverOptions { tol: 1e-14, max_iter: 40, ..SolverOptions::default() };
        let r = reconstruct_crnr(&h, &g, &opts).unwrap();
        for w in r.residual_history.windows(2) {
            prop_assert!(w[1] <= w[0] * (1.0 + 1e-10), "{:?}", r.residual_history);
        }
    }

    #[test]
    fn reconstruction_is_deterministic((h, g) in system(9, 5)) {
        let opts = SolverOptions::default();
        prop_assert_eq!(reconstruct_cgnr(&h, &g, &opts).unwrap(), reconstruct_cgnr(&h, &g, &opts).unwrap());
    }

    #[test]
    fn wrapped_phase_is_in_range(p in -100.0..100.0f64) {
        let w = wrap_phase(p);
        prop_assert!(w > -std::f64::consts::PI - 1e-12 && w <= std::f64::consts::PI + 1e-12);
        prop_assert!(((p - w) / std::f64::consts::TAU).fract().abs().min(1.0 - ((p - w) / std::f64::consts::TAU).fract().abs()) < 1e-9);
    }
}

#[test]
fn nominal_steering_points_at_the_roi_center() {
    let scene = small_scene();
    for panel in scene.all_panels() {
        let s = nominal_steering(panel, &scene);
        let (theta, phi) = direction_angles(panel.origin, scene.roi.center);
        assert_eq!((s.theta, s.phi), (theta, phi));
    }
}
