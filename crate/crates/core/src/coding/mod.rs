//! Coding-pattern construction: random and PCA baselines, and the r-SPSA
//! optimizer over binary patterns.

pub mod pca;
pub mod spsa;

use rand::Rng;

pub use pca::{binarize_component, pca_patterns, principal_components};
pub use spsa::{calibrate_loss_scale, round_to_binary, rspsa_step, Relaxation, SpsaSchedule};

use crate::error::{Error, Result};
use crate::pattern::{CodingPattern, PatternOrigin};
use crate::rng::{rng_from, tag};

/// I.i.d. Bernoulli(1/2) bits, deterministic per seed.
pub fn random_pattern(rows: usize, cols: usize, seed: u64) -> Result<CodingPattern> {
    if rows == 0 || cols == 0 {
        return Err(Error::Domain(format!(
            "random pattern needs positive dimensions, got {rows}x{cols}"
        )));
    }
    let mut rng = rng_from(seed, &[tag::PATTERN]);
    let bits = (0..rows * cols).map(|_| u8::from(rng.random::<bool>())).collect();
    CodingPattern::new(rows, cols, bits, PatternOrigin::Random)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_same_pattern() {
        assert_eq!(random_pattern(3, 256, 5).unwrap(), random_pattern(3, 256, 5).unwrap());
        assert_ne!(random_pattern(3, 256, 5).unwrap(), random_pattern(3, 256, 6).unwrap());
    }

    #[test]
    fn shape_and_origin() {
        let p = random_pattern(3, 7, 0).unwrap();
        assert_eq!((p.rows(), p.cols()), (3, 7));
        assert_eq!(p.origin(), PatternOrigin::Random);
        assert!(random_pattern(0, 7, 0).is_err());
        assert!(random_pattern(2, 0, 0).is_err());
    }

    #[test]
    fn ones_fraction_is_binomial() {
        let half_width = 3.0 * (0.25f64 / 768.0).sqrt();
        let inside = (0..1000)
            .filter(|&s| {
                let f = random_pattern(3, 256, s).unwrap().ones_fraction();
                (f - 0.5).abs() <= half_width
            })
            .count();
        assert!(inside >= 990, "{inside} of 1000 seeds within 3 sigma");
    }
}
