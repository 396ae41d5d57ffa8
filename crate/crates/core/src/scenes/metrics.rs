//! Image-quality and classification metrics.

use crate::error::{ensure_dim, Error, Result};
use crate::physics::SceneGrid;

pub const SSIM_WINDOW: usize = 8;
const SSIM_C1: f64 = 0.01 * 0.01;
const SSIM_C2: f64 = 0.03 * 0.03;

/// Summed-area table with a zero border: `t[(i, j)]` sums rows `< i`, cols `< j`.
fn integral(w: usize, h: usize, f: impl Fn(usize) -> f64) -> Vec<f64> {
    let stride = w + 1;
    let mut t = vec![0.0; stride * (h + 1)];
    for i in 0..h {
        let mut row = 0.0;
        for j in 0..w {
            row += f(i * w + j);
            t[(i + 1) * stride + j + 1] = t[i * stride + j + 1] + row;
        }
    }
    t
}

fn window_sum(t: &[f64], stride: usize, i: usize, j: usize, k: usize) -> f64 {
    t[(i + k) * stride + j + k] - t[i * stride + j + k] - t[(i + k) * stride + j] + t[i * stride + j]
}

/// Mean SSIM over all 8×8 windows (stride 1, uniform weights, population
/// moments) with dynamic range 1.
pub fn ssim(a: &SceneGrid, b: &SceneGrid) -> Result<f64> {
    ensure_dim("ssim width", a.width(), b.width())?;
    ensure_dim("ssim height", a.height(), b.height())?;
    let (w, h) = (a.width(), a.height());
    if w < SSIM_WINDOW || h < SSIM_WINDOW {
        return Err(Error::Domain(format!("ssim needs at least 8x8 images, got {w}x{h}")));
    }
    let (x, y) = (a.values(), b.values());
    let sx = integral(w, h, |p| x[p]);
    let sy = integral(w, h, |p| y[p]);
    let sxx = integral(w, h, |p| x[p] * x[p]);
    let syy = integral(w, h, |p| y[p] * y[p]);
    let sxy = integral(w, h, |p| x[p] * y[p]);
    let n = (SSIM_WINDOW * SSIM_WINDOW) as f64;
    let stride = w + 1;
    let mut total = 0.0;
    let mut count = 0usize;
    for i in 0..=h - SSIM_WINDOW {
        for j in 0..=w - SSIM_WINDOW {
            let ws = |t: &[f64]| window_sum(t, stride, i, j, SSIM_WINDOW) / n;
            let (mx, my) = (ws(&sx), ws(&sy));
            let vx = ws(&sxx) - mx * mx;
            let vy = ws(&syy) - my * my;
            let cxy = ws(&sxy) - mx * my;
            total += ((2.0 * mx * my + SSIM_C1) * (2.0 * cxy + SSIM_C2))
                / ((mx * mx + my * my + SSIM_C1) * (vx + vy + SSIM_C2));
            count += 1;
        }
    }
    Ok(total / count as f64)
}

/// `K × K` counts, rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
        }
    }

    pub fn from_counts(classes: usize, counts: Vec<u64>) -> Result<Self> {
        ensure_dim("confusion counts", classes * classes, counts.len())?;
        Ok(Self { classes, counts })
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth * self.classes + predicted]
    }

    pub fn row_sum(&self, truth: usize) -> u64 {
        self.counts[truth * self.classes..(truth + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn correct(&self) -> u64 {
        (0..self.classes).map(|k| self.get(k, k)).sum()
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            0.0
        } else {
            self.correct() as f64 / total as f64
        }
    }
}

pub fn classification_report(
    predictions: &[usize],
    labels: &[usize],
    classes: usize,
) -> Result<(f64, ConfusionMatrix)> {
    ensure_dim("prediction count", labels.len(), predictions.len())?;
    let mut cm = ConfusionMatrix::new(classes);
    for (&p, &t) in predictions.iter().zip(labels) {
        if p >= classes || t >= classes {
            return Err(Error::Domain(format!(
                "class index ({t}, {p}) out of range for {classes} classes"
            )));
        }
        cm.counts[t * classes + p] += 1;
    }
    Ok((cm.accuracy(), cm))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(w: usize, h: usize) -> SceneGrid {
        let v = (0..w * h).map(|p| (p % 7) as f64 / 6.0).collect();
        SceneGrid::new(w, h, v, None).unwrap()
    }

    #[test]
    fn self_similarity_is_one() {
        let a = ramp(16, 12);
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);
    }

    #[test]
    fn small_or_mismatched_images_rejected() {
        assert!(ssim(&ramp(7, 9), &ramp(7, 9)).is_err());
        assert!(matches!(ssim(&ramp(8, 8), &ramp(9, 8)), Err(Error::Dimension { .. })));
    }

    #[test]
    fn perfect_predictions() {
        let labels = [0, 1, 2, 2, 1];
        let (acc, cm) = classification_report(&labels, &labels, 3).unwrap();
        assert_eq!(acc, 1.0);
        assert_eq!(cm.get(2, 2), 2);
        assert_eq!(cm.get(0, 1), 0);
        assert_eq!(cm.total(), 5);
    }

    #[test]
    fn out_of_range_class() {
        assert!(matches!(classification_report(&[3], &[0], 3), Err(Error::Domain(_))));
    }
}
