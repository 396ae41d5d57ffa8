use emsense::coding::random_pattern;
use emsense::physics::{
    calibrate_noise_std, forward_measure, noiseless_measure, sensing_matrix, GeometryParams, SensingGeometry,
};
use emsense::SceneGrid;
use num_complex::Complex64;
use proptest::prelude::*;

fn scene(side: usize, values: &[f64]) -> SceneGrid {
    SceneGrid::new(side, side, values[..side * side].to_vec(), None).unwrap()
}

fn rel_err(a: &[Complex64], b: &[Complex64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
    num / den.max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn measurement_is_linear_in_the_scene(
        atoms in 2usize..5,
        side in 2usize..6,
        rows in 1usize..4,
        seed in 0u64..10_000,
        a in proptest::collection::vec(0.0f64..1.0, 36),
        b in proptest::collection::vec(0.0f64..1.0, 36),
        alpha in 0.0f64..1.0,
    ) {
        let geom = SensingGeometry::new(GeometryParams::scaled(atoms, side)).unwrap();
        let pattern = random_pattern(rows, geom.n_atoms(), seed).unwrap();
        let (xa, xb) = (scene(side, &a), scene(side, &b));
        let combo: Vec<f64> = xa.values().iter().zip(xb.values()).map(|(p, q)| alpha * p + (1.0 - alpha) * q).collect();
        let xc = SceneGrid::new(side, side, combo, None).unwrap();

        let ya = noiseless_measure(&geom, &pattern, &xa).unwrap().values;
        let yb = noiseless_measure(&geom, &pattern, &xb).unwrap().values;
        let yc = noiseless_measure(&geom, &pattern, &xc).unwrap().values;
        let expected: Vec<Complex64> = ya.iter().zip(&yb).map(|(p, q)| p * alpha + q * (1.0 - alpha)).collect();
        prop_assert!(rel_err(&yc, &expected) <= 1e-12);

        let h = sensing_matrix(&geom, &pattern).unwrap();
        let x = nalgebra::DVector::from_iterator(side * side, xa.values().iter().map(|&v| Complex64::new(v, 0.0)));
        let hx: Vec<Complex64> = (&h * x).iter().copied().collect();
        prop_assert!(rel_err(&ya, &hx) <= 1e-12);
    }
}

#[test]
fn zero_noise_forward_matches_noiseless() {
    let geom = SensingGeometry::new(GeometryParams::scaled(3, 4)).unwrap();
    let pattern = random_pattern(2, 9, 4).unwrap();
    let x = SceneGrid::delta(4, 4, 5);
    assert_eq!(
        forward_measure(&geom, &pattern, &x, 1).unwrap(),
        noiseless_measure(&geom, &pattern, &x).unwrap()
    );
}

#[test]
fn noise_has_the_requested_variance() {
    let geom = SensingGeometry::new(GeometryParams::scaled(2, 2))
        .unwrap()
        .with_noise_std(0.5)
        .unwrap();
    let pattern = random_pattern(1, 4, 0).unwrap();
    let x = SceneGrid::zeros(2, 2);
    let n = 4000;
    let power: f64 = (0..n)
        .map(|s| forward_measure(&geom, &pattern, &x, s).unwrap().values[0].norm_sqr())
        .sum::<f64>()
        / n as f64;
    // E|n|² = 0.25; the estimate of an Exp(0.25) mean has std 0.25/√n.
    assert!((power - 0.25).abs() < 4.0 * 0.25 / (n as f64).sqrt(), "{power}");
}

#[test]
fn complementing_a_row_negates_its_measurement() {
    let geom = SensingGeometry::new(GeometryParams::scaled(3, 4)).unwrap();
    let mut pattern = random_pattern(2, 9, 11).unwrap();
    let x = SceneGrid::new(4, 4, (0..16).map(|k| (k % 3) as f64 / 2.0).collect(), None).unwrap();
    let before = noiseless_measure(&geom, &pattern, &x).unwrap().values;
    pattern.complement_row(1);
    let after = noiseless_measure(&geom, &pattern, &x).unwrap().values;
    assert_eq!(before[0], after[0]);
    assert!((before[1] + after[1]).norm() <= 1e-12 * before[1].norm());
}

#[test]
fn noise_calibration_scales_with_the_relative_level() {
    let geom = SensingGeometry::new(GeometryParams::scaled(3, 4)).unwrap();
    let pattern = random_pattern(4, 9, 2).unwrap();
    let scenes: Vec<SceneGrid> = (0..5).map(|k| SceneGrid::delta(4, 4, 3 * k)).collect();
    let a = calibrate_noise_std(&geom, &pattern, &scenes, 1e-3).unwrap();
    let b = calibrate_noise_std(&geom, &pattern, &scenes, 2e-3).unwrap();
    assert!(a > 0.0);
    assert!((b / a - 2.0).abs() < 1e-12);
    assert!(calibrate_noise_std(&geom, &pattern, &[], 1e-3).is_err());
}

#[test]
fn mismatched_scene_is_rejected() {
    let geom = SensingGeometry::new(GeometryParams::scaled(3, 4)).unwrap();
    let pattern = random_pattern(1, 9, 0).unwrap();
    assert!(noiseless_measure(&geom, &pattern, &SceneGrid::zeros(5, 4)).is_err());
    let wrong = random_pattern(1, 8, 0).unwrap();
    assert!(noiseless_measure(&geom, &wrong, &SceneGrid::zeros(4, 4)).is_err());
}
