use emsense::rng::rng_from;
use emsense::scenes::{
    classification_report, generate_scene, make_dataset, make_splits, read_pgm, ssim, write_pgm, DatasetParams,
    GestureSpec, GESTURE_CLASSES,
};
use emsense::{Error, SceneGrid};
use nalgebra::DMatrix;
use rand::Rng;

#[test]
fn foreground_coverage_stays_in_band() {
    for s in 0..1000u64 {
        let spec = GestureSpec {
            class_id: (s % 3) as usize,
            person_id: s % 7,
        };
        let g = generate_scene(spec, 32, 32, s).unwrap();
        assert!(g.values().iter().all(|v| (0.0..=1.0).contains(v)));
        let f = g.foreground_fraction();
        assert!((0.03..=0.60).contains(&f), "seed {s}: coverage {f}");
        assert_eq!(g.label(), Some(spec.class_id));
    }
}

#[test]
fn splits_share_no_scene_and_keep_persons_apart() {
    let params = DatasetParams {
        n_train_per_class: 40,
        n_val_per_class: 10,
        ..DatasetParams::default()
    };
    let s = make_splits(&params, 11).unwrap();
    assert_eq!(s.test.len(), 300);
    assert_eq!(s.train.len(), 120);
    assert_eq!(s.val.len(), 30);
    for t in s.test.scenes() {
        assert!(!s.train.scenes().contains(t));
        assert!(!s.val.scenes().contains(t));
    }
    for v in s.val.scenes() {
        assert!(!s.train.scenes().contains(v));
    }
    for split in [&s.train, &s.val, &s.test] {
        let labels = split.labels().unwrap();
        for c in 0..GESTURE_CLASSES {
            assert_eq!(
                labels.iter().filter(|&&l| l == c).count() * GESTURE_CLASSES,
                labels.len()
            );
        }
    }
    let (train, test) = make_dataset(&params, 11).unwrap();
    assert_eq!((train, test), (s.train, s.test));
}

#[test]
fn overlapping_persons_are_a_config_error() {
    let params = DatasetParams {
        test_persons: vec![2],
        ..DatasetParams::default()
    };
    assert!(matches!(make_dataset(&params, 0), Err(Error::Config { .. })));
    let params = DatasetParams {
        test_persons: vec![],
        ..DatasetParams::default()
    };
    assert!(make_dataset(&params, 0).is_err());
}

/// Multinomial logistic regression on raw pixels, full-batch gradient descent.
#[test]
fn classes_are_linearly_separable_on_raw_pixels() {
    let params = DatasetParams {
        n_train_per_class: 300,
        ..DatasetParams::default()
    };
    let (train, test) = make_dataset(&params, 5).unwrap();
    let design = |scenes: &[SceneGrid]| {
        DMatrix::from_fn(
            scenes.len(),
            1025,
            |r, c| if c == 1024 { 1.0 } else { scenes[r].values()[c] },
        )
    };
    let x = design(train.scenes());
    let labels = train.labels().unwrap();
    let n = labels.len() as f64;
    let mut w = DMatrix::<f64>::zeros(1025, 3);
    for _ in 0..ITERATIONS {
        let mut p = &x * &w;
        for mut row in p.row_iter_mut() {
            let max = row.max();
            row.iter_mut().for_each(|v| *v = (*v - max).exp());
            let sum = row.sum();
            row.iter_mut().for_each(|v| *v /= sum);
        }
        for (r, &l) in labels.iter().enumerate() {
            p[(r, l)] -= 1.0;
        }
        w -= (x.transpose() * p) * (STEP / n);
    }
    let scores = design(test.scenes()) * w;
    let predictions: Vec<usize> = (0..scores.nrows())
        .map(|r| scores.row(r).transpose().argmax().0)
        .collect();
    let (acc, cm) = classification_report(&predictions, &test.labels().unwrap(), 3).unwrap();
    assert!(acc >= 0.99, "linear accuracy {acc}: {cm:?}");
}

const ITERATIONS: usize = 1500;
const STEP: f64 = 0.1;

fn checkerboard(n: usize, invert: bool) -> SceneGrid {
    let v = (0..n * n)
        .map(|p| {
            let on = ((p / n) + (p % n)).is_multiple_of(2);
            if on != invert {
                1.0
            } else {
                0.0
            }
        })
        .collect();
    SceneGrid::new(n, n, v, None).unwrap()
}

/// Direct per-window evaluation without summed-area tables.
fn ssim_direct(a: &SceneGrid, b: &SceneGrid) -> f64 {
    let (n, k) = (a.width(), 8);
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    let mut count = 0;
    for i in 0..=n - k {
        for j in 0..=n - k {
            let mut xs = Vec::new();
            let mut ys = Vec::new();
            for r in i..i + k {
                for c in j..j + k {
                    xs.push(a.at(r, c));
                    ys.push(b.at(r, c));
                }
            }
            let m = (k * k) as f64;
            let mx = xs.iter().sum::<f64>() / m;
            let my = ys.iter().sum::<f64>() / m;
            let vx = xs.iter().map(|x| (x - mx).powi(2)).sum::<f64>() / m;
            let vy = ys.iter().map(|y| (y - my).powi(2)).sum::<f64>() / m;
            let cxy = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum::<f64>() / m;
            total += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2));
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn ssim_matches_direct_window_formula() {
    let a = checkerboard(16, false);
    let b = checkerboard(16, true);
    let s = ssim(&a, &b).unwrap();
    assert!(s < 0.0);
    assert!((s - ssim_direct(&a, &b)).abs() < 1e-12);
    assert_eq!(ssim(&a, &a).unwrap(), 1.0);

    let x = generate_scene(
        GestureSpec {
            class_id: 0,
            person_id: 1,
        },
        32,
        32,
        3,
    )
    .unwrap();
    let y = generate_scene(
        GestureSpec {
            class_id: 2,
            person_id: 4,
        },
        32,
        32,
        8,
    )
    .unwrap();
    let (xy, yx) = (ssim(&x, &y).unwrap(), ssim(&y, &x).unwrap());
    assert!((xy - yx).abs() <= 1e-12);
    assert!((xy - ssim_direct(&x, &y)).abs() < 1e-10);
    assert!((-1.0..1.0).contains(&xy));
}

#[test]
fn uniform_guessing_scores_one_third() {
    let mut rng = rng_from(1, &[]);
    let labels: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..3)).collect();
    let predictions: Vec<usize> = (0..10_000).map(|_| rng.random_range(0..3)).collect();
    let (acc, cm) = classification_report(&predictions, &labels, 3).unwrap();
    assert!((acc - 1.0 / 3.0).abs() <= 0.015, "{acc}");
    assert_eq!(cm.total(), 10_000);
    for t in 0..3 {
        assert_eq!(cm.row_sum(t) as usize, labels.iter().filter(|&&l| l == t).count());
    }
}

#[test]
fn pgm_export_round_trips_to_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let g = generate_scene(
        GestureSpec {
            class_id: 1,
            person_id: 2,
        },
        32,
        32,
        9,
    )
    .unwrap();
    let path = dir.path().join("g.pgm");
    write_pgm(&path, &g).unwrap();
    let back = read_pgm(&path).unwrap();
    assert_eq!((back.width(), back.height()), (32, 32));
    for (a, b) in g.values().iter().zip(back.values()) {
        assert!((a - b).abs() <= 0.5 / 255.0 + 1e-12);
    }
}
