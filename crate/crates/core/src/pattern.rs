//! Binary coding patterns: `M` metasurface configurations of `P` one-bit atoms.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{config_err, Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PatternOrigin {
    Random,
    Pca,
    Learned,
}

impl PatternOrigin {
    pub fn code(self) -> u32 {
        match self {
            PatternOrigin::Random => 0,
            PatternOrigin::Pca => 1,
            PatternOrigin::Learned => 2,
        }
    }

    pub fn from_code(code: u32) -> Option<Self> {
        match code {
            0 => Some(PatternOrigin::Random),
            1 => Some(PatternOrigin::Pca),
            2 => Some(PatternOrigin::Learned),
            _ => None,
        }
    }
}

impl fmt::Display for PatternOrigin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PatternOrigin::Random => "random",
            PatternOrigin::Pca => "pca",
            PatternOrigin::Learned => "learned",
        })
    }
}

impl FromStr for PatternOrigin {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(PatternOrigin::Random),
            "pca" => Ok(PatternOrigin::Pca),
            "learned" => Ok(PatternOrigin::Learned),
            _ => Err(config_err("codes", format!("expected random|pca|learned, got {s:?}"))),
        }
    }
}

/// `rows × cols` matrix of bits stored row-major. One row drives one measurement frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CodingPattern {
    rows: usize,
    cols: usize,
    bits: Vec<u8>,
    origin: PatternOrigin,
}

impl CodingPattern {
    pub fn new(rows: usize, cols: usize, bits: Vec<u8>, origin: PatternOrigin) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::Domain(format!(
                "coding pattern needs at least one row and one column, got {rows}x{cols}"
            )));
        }
        if bits.len() != rows * cols {
            return Err(Error::Dimension {
                context: "coding pattern bits",
                expected: rows * cols,
                found: bits.len(),
            });
        }
        if let Some(pos) = bits.iter().position(|&b| b > 1) {
            return Err(Error::Domain(format!(
                "coding pattern entry {pos} is {}, expected 0 or 1",
                bits[pos]
            )));
        }
        Ok(Self {
            rows,
            cols,
            bits,
            origin,
        })
    }

    /// Number of measurement frames `M`.
    pub fn rows(&self) -> usize {
        self.rows
    }

    /// Number of atoms per frame `P`.
    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bits(&self) -> &[u8] {
        &self.bits
    }

    pub fn origin(&self) -> PatternOrigin {
        self.origin
    }

    pub fn with_origin(mut self, origin: PatternOrigin) -> Self {
        self.origin = origin;
        self
    }

    pub fn row(&self, m: usize) -> &[u8] {
        &self.bits[m * self.cols..(m + 1) * self.cols]
    }

    /// Reflection coefficients: bit 0 → +1, bit 1 → −1.
    pub fn coefficient(bit: u8) -> f64 {
        if bit == 0 {
            1.0
        } else {
            -1.0
        }
    }

    /// `M × P` matrix of ±1 reflection coefficients.
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.rows, self.cols, |m, a| {
            Self::coefficient(self.bits[m * self.cols + a])
        })
    }

    /// `P × M` matrix of raw bits as reals (one column per row of the pattern).
    pub fn bit_columns(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.cols, self.rows, |a, m| f64::from(self.bits[m * self.cols + a]))
    }

    pub fn complement_row(&mut self, m: usize) {
        for b in &mut self.bits[m * self.cols..(m + 1) * self.cols] {
            *b ^= 1;
        }
    }

    pub fn ones_fraction(&self) -> f64 {
        self.bits.iter().map(|&b| b as usize).sum::<usize>() as f64 / self.bits.len() as f64
    }

    /// Pattern made of a subset of rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Result<Self> {
        let mut bits = Vec::with_capacity(rows.len() * self.cols);
        for &m in rows {
            if m >= self.rows {
                return Err(Error::Domain(format!(
                    "row {m} out of range for a {}-row pattern",
                    self.rows
                )));
            }
            bits.extend_from_slice(self.row(m));
        }
        Self::new(rows.len(), self.cols, bits, self.origin)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_non_binary_and_empty() {
        assert!(CodingPattern::new(1, 2, vec![0, 2], PatternOrigin::Random).is_err());
        assert!(CodingPattern::new(0, 2, vec![], PatternOrigin::Random).is_err());
        assert!(CodingPattern::new(1, 2, vec![0], PatternOrigin::Random).is_err());
    }

    #[test]
    fn complement_flips_one_row() {
        let mut p = CodingPattern::new(2, 3, vec![0, 1, 0, 1, 1, 1], PatternOrigin::Random).unwrap();
        p.complement_row(1);
        assert_eq!(p.bits(), &[0, 1, 0, 0, 0, 0]);
    }

    #[test]
    fn origin_codes_round_trip() {
        for o in [PatternOrigin::Random, PatternOrigin::Pca, PatternOrigin::Learned] {
            assert_eq!(PatternOrigin::from_code(o.code()), Some(o));
        }
        assert_eq!(PatternOrigin::from_code(9), None);
    }
}
