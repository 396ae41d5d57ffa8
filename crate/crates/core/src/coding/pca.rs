//! PCA-derived coding patterns.
//!
//! Each principal component of the (mean-centered) training scenes is mapped
//! back through the two-hop propagation path to a per-atom weight
//! `w_a = G(tx, a)·Σ_j G(a, j)·G(j, rx)·area·pc_j`. The 1-bit row is the ±1
//! choice maximizing `|Σ_a c_a·w_a| = |⟨H_row, pc⟩|`; among the two optimal
//! sign-flipped rows the one with nonnegative real correlation is kept, so that
//! negating a component complements its row.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};
use num_complex::Complex64;

use crate::error::{ensure_dim, Error, Result};
use crate::pattern::{CodingPattern, PatternOrigin};
use crate::physics::{SceneGrid, SensingGeometry};

/// Relative eigenvalue threshold below which a component counts as zero.
const RANK_TOLERANCE: f64 = 1e-10;

/// Top-`count` unit-norm principal components of the mean-centered scenes,
/// ordered by decreasing variance. Signs are fixed so that each component's
/// largest-magnitude entry is positive.
pub fn principal_components(scenes: &[SceneGrid], count: usize) -> Result<Vec<Vec<f64>>> {
    if count == 0 {
        return Err(Error::Domain("requested zero principal components".into()));
    }
    if scenes.len() < count {
        return Err(Error::Rank(format!(
            "{} scenes cannot provide {count} principal components",
            scenes.len()
        )));
    }
    let n = scenes.len();
    let dim = scenes[0].len();
    for s in scenes {
        ensure_dim("pca scene size", dim, s.len())?;
    }
    let mut centered = DMatrix::from_fn(dim, n, |j, i| scenes[i].values()[j]);
    let mean = centered.column_mean();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }

    // Eigen-decompose whichever of the Gram (n × n) or covariance (dim × dim)
    // matrices is smaller.
    let (values, vectors, gram) = if n <= dim {
        let k = centered.transpose() * &centered;
        let e = SymmetricEigen::new(k);
        (e.eigenvalues, e.eigenvectors, true)
    } else {
        let c = &centered * centered.transpose();
        let e = SymmetricEigen::new(c);
        (e.eigenvalues, e.eigenvectors, false)
    };
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    let top = values[order[0]].max(0.0);
    let rank = order
        .iter()
        .take_while(|&&i| top > 0.0 && values[i] > RANK_TOLERANCE * top)
        .count();
    if rank < count {
        return Err(Error::Rank(format!(
            "only {rank} nonzero principal components available, {count} requested"
        )));
    }
    Ok(order[..count]
        .iter()
        .map(|&i| {
            let mut pc = if gram {
                (&centered * vectors.column(i)).as_slice().to_vec()
            } else {
                vectors.column(i).as_slice().to_vec()
            };
            let norm = pc.iter().map(|v| v * v).sum::<f64>().sqrt();
            let lead = pc
                .iter()
                .enumerate()
                .fold(
                    (0, 0.0f64),
                    |best, (j, v)| if v.abs() > best.1 { (j, v.abs()) } else { best },
                )
                .0;
            let sign = if pc[lead] < 0.0 { -1.0 } else { 1.0 };
            pc.iter_mut().for_each(|v| *v *= sign / norm);
            pc
        })
        .collect())
}

/// Best 1-bit row for a pixel-space component. See the module docs.
pub fn binarize_component(geom: &SensingGeometry, component: &[f64]) -> Result<Vec<u8>> {
    let w = geom.atom_response_of(component)?;
    let signs = best_sign_vector(&w);
    Ok(signs.iter().map(|&c| if c > 0.0 { 0 } else { 1 }).collect())
}

/// `argmax_{c ∈ {±1}^P} |Σ c_a w_a|`, normalized so that `Re Σ c_a w_a ≥ 0`.
///
/// For a fixed phase `φ` the optimal signs are `sign(Re(e^{-iφ} w_a))`, and the
/// global optimum is attained by one of the sign vectors between consecutive
/// breakpoints `arg(w_a) ± π/2`, so scanning those intervals is exact.
pub(crate) fn best_sign_vector(w: &[Complex64]) -> Vec<f64> {
    let mut breaks: Vec<f64> = w
        .iter()
        .filter(|z| z.norm() > 0.0)
        .flat_map(|z| {
            let a = z.arg();
            [(a + PI / 2.0).rem_euclid(2.0 * PI), (a - PI / 2.0).rem_euclid(2.0 * PI)]
        })
        .collect();
    if breaks.is_empty() {
        return vec![1.0; w.len()];
    }
    breaks.sort_by(f64::total_cmp);
    let mut best: Option<(f64, Vec<f64>, Complex64)> = None;
    for i in 0..breaks.len() {
        let lo = breaks[i];
        let hi = if i + 1 < breaks.len() {
            breaks[i + 1]
        } else {
            breaks[0] + 2.0 * PI
        };
        if hi - lo <= 0.0 {
            continue;
        }
        let rot = Complex64::from_polar(1.0, -(lo + hi) / 2.0);
        let signs: Vec<f64> = w.iter().map(|z| if (rot * z).re >= 0.0 { 1.0 } else { -1.0 }).collect();
        let sum: Complex64 = signs.iter().zip(w).map(|(c, z)| z * *c).sum();
        let mag = sum.norm();
        if best.as_ref().is_none_or(|(m, _, _)| mag > *m) {
            best = Some((mag, signs, sum));
        }
    }
    let (_, mut signs, sum) = best.expect("at least one interval");
    if sum.re < 0.0 || (sum.re == 0.0 && sum.im < 0.0) {
        signs.iter_mut().for_each(|c| *c = -*c);
    }
    signs
}

/// `M` coding rows from the top-`M` principal components of `training_scenes`.
pub fn pca_patterns(training_scenes: &[SceneGrid], geom: &SensingGeometry, rows: usize) -> Result<CodingPattern> {
    if let Some(s) = training_scenes.first() {
        ensure_dim("pca scene pixels", geom.n_pixels(), s.len())?;
    }
    let components = principal_components(training_scenes, rows)?;
    let mut bits = Vec::with_capacity(rows * geom.n_atoms());
    for pc in &components {
        bits.extend(binarize_component(geom, pc)?);
    }
    CodingPattern::new(rows, geom.n_atoms(), bits, PatternOrigin::Pca)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physics::{sensing_matrix, GeometryParams};
    use proptest::prelude::*;

    fn brute_force_best(w: &[Complex64]) -> f64 {
        let p = w.len();
        (0..1u32 << p)
            .map(|mask| {
                (0..p)
                    .map(|a| if mask >> a & 1 == 1 { -w[a] } else { w[a] })
                    .sum::<Complex64>()
                    .norm()
            })
            .fold(0.0, f64::max)
    }

    #[test]
    fn rank_one_dataset() {
        let base: Vec<f64> = (0..16).map(|i| ((i * 5) % 7) as f64 / 10.0).collect();
        let scenes: Vec<SceneGrid> = [0.2, 0.5, 0.9, 1.0]
            .iter()
            .map(|s| SceneGrid::new(4, 4, base.iter().map(|v| v * s).collect(), None).unwrap())
            .collect();
        let pcs = principal_components(&scenes, 1).unwrap();
        let norm = base.iter().map(|v| v * v).sum::<f64>().sqrt();
        for (a, b) in pcs[0].iter().zip(&base) {
            assert!((a - b / norm).abs() < 1e-10);
        }
        assert!(matches!(principal_components(&scenes, 2), Err(Error::Rank(_))));
        assert!(matches!(principal_components(&scenes[..1], 2), Err(Error::Rank(_))));

        let geom = SensingGeometry::new(GeometryParams::scaled(2, 4)).unwrap();
        let a = pca_patterns(&scenes, &geom, 1).unwrap();
        assert_eq!(a, pca_patterns(&scenes, &geom, 1).unwrap());
        assert_eq!(a.origin(), PatternOrigin::Pca);
    }

    #[test]
    fn negated_component_complements_row() {
        let geom = SensingGeometry::new(GeometryParams::scaled(2, 4)).unwrap();
        let pc: Vec<f64> = (0..16).map(|i| ((i * 3) % 5) as f64 - 2.0).collect();
        let neg: Vec<f64> = pc.iter().map(|v| -v).collect();
        let a = binarize_component(&geom, &pc).unwrap();
        let b = binarize_component(&geom, &neg).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(*x, 1 - *y);
        }
    }

    #[test]
    fn toy_rows_match_exhaustive_search() {
        let geom = SensingGeometry::new(GeometryParams::scaled(2, 4)).unwrap();
        let scenes: Vec<SceneGrid> = (0..12)
            .map(|s| {
                let v = (0..16).map(|j| (((s * 7 + j * 3) % 11) as f64) / 10.0).collect();
                SceneGrid::new(4, 4, v, None).unwrap()
            })
            .collect();
        let pattern = pca_patterns(&scenes, &geom, 3).unwrap();
        let pcs = principal_components(&scenes, 3).unwrap();
        for (m, pc) in pcs.iter().enumerate() {
            let corr = |bits: &[u8]| {
                let p = CodingPattern::new(1, 4, bits.to_vec(), PatternOrigin::Pca).unwrap();
                let h = sensing_matrix(&geom, &p).unwrap();
                (0..16).map(|j| h[(0, j)] * pc[j]).sum::<Complex64>()
            };
            let best = (0..16u8)
                .map(|mask| {
                    let bits: Vec<u8> = (0..4).map(|a| mask >> a & 1).collect();
                    corr(&bits).norm()
                })
                .fold(0.0, f64::max);
            let mine = corr(pattern.row(m));
            assert!((mine.norm() - best).abs() <= 1e-12 * best, "row {m}");
            assert!(mine.re >= 0.0);
        }
    }

    proptest! {
        #[test]
        fn phase_scan_is_exact(parts in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 1..11)) {
            let w: Vec<Complex64> = parts.iter().map(|&(a, b)| Complex64::new(a, b)).collect();
            let signs = best_sign_vector(&w);
            let got = signs.iter().zip(&w).map(|(c, z)| z * *c).sum::<Complex64>();
            let best = brute_force_best(&w);
            prop_assert!((got.norm() - best).abs() <= 1e-12 * best.max(1e-300));
            prop_assert!(got.re >= 0.0);
        }
    }
}
