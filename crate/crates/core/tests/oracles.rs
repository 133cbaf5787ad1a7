//! Checks against independent scalar, dense and statistical oracles.

use std::f64::consts::TAU;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use ris_rci::analysis::{normalized_singular_values, singular_values};
use ris_rci::experiments::{self, ExperimentConfig};
use ris_rci::fields::{aggregate_field, element_field, panel_field, spherical_wave};
use ris_rci::masks::{
    compensation_phase, make_masks, nominal_steering, random_redirection, steering_gradient, MaskStrategy, SeedRecord,
};
use ris_rci::recon::{compute_metrics, reconstruct, reconstruct_cgnr, SolverKind, SolverOptions};
use ris_rci::scalar::{wrap_phase, SPEED_OF_LIGHT};
use ris_rci::scene::{
    angle_bounds, build_scene, direction_angles, reference_target, ImageGrid, RisPanel, RoiBox, SceneConfig, Side,
};
use ris_rci::sensing::{build_sensing_matrix, measure, sensing_row, NoiseSpec, SensingMatrix};
use ris_rci::{Point3, Scene64};

fn k0(f: f64) -> f64 {
    TAU * f / SPEED_OF_LIGHT
}

fn default_scene() -> Scene64 {
    build_scene(&SceneConfig::default()).unwrap()
}

fn random_complex(rng: &mut ChaCha8Rng) -> Complex64 {
    Complex64::new(rng.random::<f64>() * 2.0 - 1.0, rng.random::<f64>() * 2.0 - 1.0)
}

#[test]
fn angle_bounds_match_brute_force_over_the_roi() {
    let scene = default_scene();
    let (x0, x1) = scene.roi.x_range();
    let (y0, y1) = scene.roi.y_range();
    let n = 100;
    for panel in scene.all_panels() {
        let b = angle_bounds(panel, &scene.roi).unwrap();
        let (mut tmin, mut tmax, mut pmin, mut pmax) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for i in 0..n {
            for j in 0..n {
                let p = Point3::new(
                    x0 + (x1 - x0) * i as f64 / (n - 1) as f64,
                    y0 + (y1 - y0) * j as f64 / (n - 1) as f64,
                    scene.roi.center.z,
                );
                let (t, ph) = direction_angles(panel.origin, p);
                assert!(b.contains(t, ph, 1e-12));
                tmin = tmin.min(t);
                tmax = tmax.max(t);
                pmin = pmin.min(ph);
                pmax = pmax.max(ph);
            }
        }
        assert!((tmin - b.theta_min).abs() < 1e-4, "panel {}: {tmin} vs {}", panel.id, b.theta_min);
        assert!((tmax - b.theta_max).abs() < 1e-9);
        assert!((pmin - b.phi_min).abs() < 1e-9);
        assert!((pmax - b.phi_max).abs() < 1e-9);
    }
}

#[test]
fn compensation_phase_is_wavenumber_times_distance() {
    let f = 6.0e9;
    let element = Point3::new(0.1, 0.1, 0.0);
    let source = Point3::new(0.0, -3.0, 3.0);
    let panel = RisPanel::new(0, 1, 1, 0.02, element, Side::Tx);
    let d = ((0.1f64).powi(2) + (3.1f64).powi(2) + 9.0).sqrt();
    let expect = wrap_phase(TAU * f / 299_792_458.0 * d);
    let got = compensation_phase(&panel, source, f).phases[0];
    assert!(wrap_phase(got - expect).abs() < 1e-9, "{got} vs {expect}");
}

#[test]
fn steering_gradient_scalar_value() {
    let f = 6.0e9;
    let panel = RisPanel::new(0, 1, 1, 0.02, Point3::new(0.02, 0.04, 0.0), Side::Tx);
    let (theta, phi) = (30f64.to_radians(), 45f64.to_radians());
    let magnitude = k0(f) * (0.02 * 0.5 * 45f64.to_radians().cos() + 0.04 * 0.5 * 45f64.to_radians().sin());
    // the crate applies the gradient with a negative sign (e^{-ikd} propagation)
    let got = steering_gradient(&panel, theta, phi, f).phases[0];
    assert!(wrap_phase(got + magnitude).abs() < 1e-9, "{got} vs {}", -magnitude);
}

#[test]
fn redirection_magnitude_is_uniform() {
    let scene = default_scene();
    let panel = &scene.tx_panels[0];
    let bounds = angle_bounds(panel, &scene.roi).unwrap();
    let nominal = nominal_steering(panel, &scene);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = 100_000;
    let scale = 0.25 * bounds.theta_width();
    let mut u: Vec<f64> = (0..n)
        .map(|_| random_redirection(&bounds, nominal, 0.25, &mut rng).theta_rnd / scale)
        .collect();
    u.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let d = u
        .iter()
        .enumerate()
        .map(|(i, x)| ((i + 1) as f64 / n as f64 - x).abs().max((x - i as f64 / n as f64).abs()))
        .fold(0.0, f64::max);
    // Kolmogorov-Smirnov critical value at the 1% level
    let critical = 1.628 / (n as f64).sqrt();
    assert!(d < critical, "KS statistic {d} exceeds {critical}");
    assert!(u[0] >= 0.0 && u[n - 1] <= 1.0);
}

#[test]
fn two_leg_phase_and_spreading() {
    let f = 5.95e9;
    let k = k0(f);
    let tx = Point3::new(0.0, -3.0, 3.0);
    let el = Point3::new(-0.3, 0.15, 0.0);
    let p = Point3::new(0.4, 1.7, 8.0);
    let d1 = ((0.3f64).powi(2) + (3.15f64).powi(2) + 9.0).sqrt();
    let d2 = ((0.7f64).powi(2) + (1.55f64).powi(2) + 64.0).sqrt();
    let v = element_field(el, 0.0, spherical_wave(tx, el, k), p, f);
    assert!(wrap_phase(v.arg() + k * (d1 + d2)).abs() < 1e-9);
    assert!((v.norm() - 1.0 / (d1 * d2)).abs() < 1e-12);
}

#[test]
fn compensated_panel_focuses_at_far_boresight() {
    let scene = default_scene();
    let panel = &scene.tx_panels[0];
    let f = scene.design_frequency;
    let far = panel.origin + Point3::new(0.0, 0.0, 1.0e4);
    let mut mask = make_masks(&scene, &MaskStrategy::RandomPattern, 1, 1).unwrap().remove(0);
    mask.profiles[panel.id] = compensation_phase(panel, scene.tx_antenna, f);
    let focused = panel_field(&scene, &mask, panel.id, &[far], f).unwrap().values[0].norm();
    for seed in 0..100 {
        let random = make_masks(&scene, &MaskStrategy::RandomPattern, 1, 1000 + seed).unwrap().remove(0);
        let other = panel_field(&scene, &random, panel.id, &[far], f).unwrap().values[0].norm();
        assert!(focused >= other, "trial {seed}: {focused} < {other}");
    }
}

#[test]
fn sensing_entry_is_a_product_of_two_leg_factors() {
    let cfg = SceneConfig {
        panel_rows: 1,
        panel_cols: 1,
        block_cols: 1,
        block_rows: 1,
        ..SceneConfig::default()
    };
    let scene: Scene64 = build_scene(&cfg).unwrap();
    let mask = make_masks(&scene, &MaskStrategy::RandomPattern, 1, 9).unwrap().remove(0);
    let f = 6.05e9;
    let k = k0(f);
    let p = Point3::new(0.2, 2.1, 8.0);
    let leg = |panel: &RisPanel<f64>, antenna: Point3, phase: f64| {
        let a = antenna.distance(panel.origin);
        let b = panel.origin.distance(p);
        Complex64::from_polar(1.0 / (a * b), phase - k * (a + b))
    };
    let tx = &scene.tx_panels[0];
    let rx = &scene.rx_panels[0];
    let expect = leg(tx, scene.tx_antenna, mask.profile(tx.id).phases[0]) * leg(rx, scene.rx_antenna, mask.profile(rx.id).phases[0]);
    let got = sensing_row(&scene, &mask, f, &[p])[0];
    assert!((got - expect).norm() <= 1e-12 * expect.norm());
}

#[test]
fn speckle_is_more_confined_than_random_patterns() {
    let scene = default_scene();
    let window = scene.roi.scaled(3.0);
    let (x0, x1) = window.x_range();
    let (y0, y1) = window.y_range();
    let grid = ImageGrid::spanning((x0, x1), (y0, y1), 8.0, 61, 61);
    let f = scene.design_frequency;
    let fraction = |strategy: &MaskStrategy| {
        let masks = make_masks(&scene, strategy, 4, 21).unwrap();
        masks
            .iter()
            .map(|m| aggregate_field(&scene, m, Side::Tx, &grid.points, f).unwrap().energy_fraction_inside(&scene.roi))
            .sum::<f64>()
            / masks.len() as f64
    };
    let speckle = fraction(&MaskStrategy::focused_speckle());
    let random = fraction(&MaskStrategy::RandomPattern);
    assert!(speckle > random, "{speckle} vs {random}");
}

fn qr_oracle(a: &DMatrix<Complex64>, g: &DVector<Complex64>) -> DVector<Complex64> {
    let qr = a.clone().qr();
    qr.r().solve_upper_triangular(&(qr.q().adjoint() * g)).unwrap()
}

#[test]
fn eight_by_eight_system_matches_direct_inverse() {
    let mut rng = ChaCha8Rng::seed_from_u64(88);
    let mut e: Vec<Complex64> = (0..64).map(|_| random_complex(&mut rng)).collect();
    for i in 0..8 {
        e[i * 8 + i] += Complex64::new(4.0, 0.0);
    }
    let g: Vec<Complex64> = (0..8).map(|_| random_complex(&mut rng)).collect();
    let a = DMatrix::from_row_slice(8, 8, &e);
    let x_ref = a.clone().try_inverse().unwrap() * DVector::from_column_slice(&g);
    let h = SensingMatrix::from_entries(8, 8, e).unwrap();
    let opts = SolverOptions { tol: 1e-14, ..SolverOptions::default() };
    for kind in [SolverKind::Cgnr, SolverKind::Crnr, SolverKind::Cgs, SolverKind::LeastSquaresOracle] {
        let gm = measure(&h, &[Complex64::new(0.0, 0.0); 8], NoiseSpec::Noiseless, SeedRecord::new(0, 0)).unwrap();
        let gm = ris_rci::sensing::Measurement { g: g.clone(), ..gm };
        let x = reconstruct(&h, &gm, &SolverOptions { kind, ..opts }).unwrap().sigma_est;
        let err = (DVector::from_column_slice(&x) - &x_ref).norm() / x_ref.norm();
        assert!(err < 1e-8, "{kind:?}: {err}");
    }
}

#[test]
fn every_iterative_solver_matches_the_qr_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(606);
    for _ in 0..20 {
        let n = rng.random_range(2..=40usize);
        let m = n + rng.random_range(1..=n);
        let e: Vec<Complex64> = (0..m * n).map(|_| random_complex(&mut rng)).collect();
        let g: Vec<Complex64> = (0..m).map(|_| random_complex(&mut rng)).collect();
        let x_ref = qr_oracle(&DMatrix::from_row_slice(m, n, &e), &DVector::from_column_slice(&g));
        let h = SensingMatrix::from_entries(m, n, e).unwrap();
        let gm = measure(&h, &vec![Complex64::new(0.0, 0.0); n], NoiseSpec::Noiseless, SeedRecord::new(0, 0)).unwrap();
        let gm = ris_rci::sensing::Measurement { g, ..gm };
        for kind in [SolverKind::Cgnr, SolverKind::Crnr, SolverKind::Cgs, SolverKind::LeastSquaresOracle] {
            let opts = SolverOptions { kind, tol: 1e-13, max_iter: 2000, ..SolverOptions::default() };
            let x = reconstruct(&h, &gm, &opts).unwrap().sigma_est;
            let err = (DVector::from_column_slice(&x) - &x_ref).norm() / x_ref.norm();
            assert!(err < 1e-6, "{kind:?} {m}x{n}: {err}");
        }
    }
}

#[test]
fn identity_system_returns_the_data() {
    let n = 5;
    let mut e = vec![Complex64::new(0.0, 0.0); n * n];
    for i in 0..n {
        e[i * n + i] = Complex64::new(1.0, 0.0);
    }
    let h = SensingMatrix::from_entries(n, n, e).unwrap();
    let g: Vec<Complex64> = (0..n).map(|i| Complex64::new(i as f64, -1.0)).collect();
    let x = reconstruct_cgnr(&h, &g, &SolverOptions::default()).unwrap().sigma_est;
    for (a, b) in x.iter().zip(&g) {
        assert!((a - b).norm() < 1e-9);
    }
}

#[test]
fn duplicated_masks_add_only_zero_singular_values() {
    let scene = default_scene().with_frequencies(vec![6.0e9]).unwrap();
    let mut masks = make_masks(&scene, &MaskStrategy::focused_speckle(), 8, 4).unwrap();
    let copies = masks.clone();
    masks.extend(copies);
    let h = build_sensing_matrix(&scene, &masks, &scene.roi.grid(5, 5).points).unwrap();
    let s = normalized_singular_values(&h);
    assert!(s[7] > 1e-6);
    assert!(s[8..16].iter().all(|v| *v < 1e-10), "{s:?}");
    assert_eq!(singular_values(&h).len(), 16);
}

#[test]
fn perfect_and_empty_reconstructions_score_as_expected() {
    let target = reference_target::<f64>();
    let grid = RoiBox::planar(Point3::new(0.0, 1.9, 8.0), 2.0, 2.0).grid(9, 9);
    let mut perfect = vec![Complex64::new(0.0, 0.0); grid.len()];
    for p in target.positions() {
        perfect[grid.nearest(p)] = Complex64::new(1.0, 0.0);
    }
    let m = compute_metrics(&perfect, &target, &grid).unwrap();
    assert!((m.normalized_correlation - 1.0).abs() < 1e-12);
    assert!(m.peak_localization_error < 1e-12);
    assert!(m.background_energy_ratio.abs() < 1e-12);
    let zeros = vec![Complex64::new(0.0, 0.0); grid.len()];
    assert_eq!(compute_metrics(&zeros, &target, &grid).unwrap().normalized_correlation, 0.0);
}

#[test]
fn full_raster_scan_localizes_every_target() {
    // 9×9 inverse grid with one scan point per grid cell
    let dir = tempfile::tempdir().unwrap();
    let cfg = ExperimentConfig {
        mask_count: 81,
        inverse_grid: [9, 9],
        snr_db: 50.0,
        output_dir: dir.path().to_path_buf(),
        ..ExperimentConfig::default()
    };
    let rep = experiments::run_compare(&cfg).unwrap();
    for name in ["raster", "raster_beamformed"] {
        let m = rep.method(name).unwrap();
        assert_eq!((m.peak_hits, m.peaks_covered), (9, 9), "{name}: {m:?}");
    }
}

#[test]
fn frequency_change_decorrelates_the_pattern() {
    let scene = default_scene();
    let mask = make_masks(&scene, &MaskStrategy::focused_speckle(), 1, 2).unwrap().remove(0);
    let pts = scene.roi.grid(41, 41).points;
    let a = aggregate_field(&scene, &mask, Side::Tx, &pts, 5.9e9).unwrap();
    let b = aggregate_field(&scene, &mask, Side::Tx, &pts, 6.1e9).unwrap();
    let c = ris_rci::fields::pattern_correlation(&a.values, &b.values);
    assert!(c < 0.99, "{c}");
}
