use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Flat real vector of model weights, updates or residues.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ParamVector(Vec<f64>);

impl ParamVector {
    pub fn new(values: Vec<f64>) -> Self {
        Self(values)
    }

    pub fn zeros(d: usize) -> Self {
        Self(vec![0.0; d])
    }

    pub fn filled(d: usize, value: f64) -> Self {
        Self(vec![value; d])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.0.iter()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }

    pub fn check_len(&self, expected: usize) -> Result<()> {
        if self.len() == expected {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                expected,
                got: self.len(),
            })
        }
    }

    /// `self - other`, coordinate-wise.
    pub fn sub(&self, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.len(), other.len());
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a - b).collect())
    }

    /// `self + other`, coordinate-wise.
    pub fn add(&self, other: &ParamVector) -> ParamVector {
        debug_assert_eq!(self.len(), other.len());
        ParamVector(self.0.iter().zip(&other.0).map(|(a, b)| a + b).collect())
    }

    pub fn norm_sq(&self) -> f64 {
        self.0.iter().map(|v| v * v).sum()
    }

    pub fn norm2(&self) -> f64 {
        self.norm_sq().sqrt()
    }

    pub fn norm_inf(&self) -> f64 {
        self.0.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn dist_sq(&self, other: &ParamVector) -> f64 {
        self.0
            .iter()
            .zip(&other.0)
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn mean(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        self.0.iter().sum::<f64>() / self.0.len() as f64
    }

    /// Population variance of the entries.
    pub fn variance(&self) -> f64 {
        if self.0.is_empty() {
            return 0.0;
        }
        let mean = self.mean();
        self.0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / self.0.len() as f64
    }

    /// Coordinate-wise mean of equally weighted vectors.
    pub fn average(vectors: &[&ParamVector]) -> Result<ParamVector> {
        let first = vectors
            .first()
            .ok_or_else(|| Error::contract("cannot average an empty set of vectors"))?;
        let d = first.len();
        // running mean: identical inputs reproduce the input exactly
        let mut mean = first.0.clone();
        for (k, v) in vectors.iter().enumerate().skip(1) {
            v.check_len(d)?;
            let n = (k + 1) as f64;
            for (m, x) in mean.iter_mut().zip(&v.0) {
                *m += (x - *m) / n;
            }
        }
        Ok(ParamVector(mean))
    }
}

impl From<Vec<f64>> for ParamVector {
    fn from(v: Vec<f64>) -> Self {
        Self(v)
    }
}

impl Index<usize> for ParamVector {
    type Output = f64;
    fn index(&self, i: usize) -> &f64 {
        &self.0[i]
    }
}

impl IndexMut<usize> for ParamVector {
    fn index_mut(&mut self, i: usize) -> &mut f64 {
        &mut self.0[i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn average_of_equal_vectors_is_exact() {
        let v = ParamVector::new(vec![0.1, -0.3, 7.25]);
        let avg = ParamVector::average(&[&v, &v, &v]).unwrap();
        assert_eq!(avg, v);
    }

    #[test]
    fn average_rejects_mismatched_lengths() {
        let a = ParamVector::zeros(3);
        let b = ParamVector::zeros(4);
        assert!(matches!(
            ParamVector::average(&[&a, &b]),
            Err(Error::DimensionMismatch { expected: 3, got: 4 })
        ));
    }

    #[test]
    fn variance_of_constant_is_zero() {
        assert_eq!(ParamVector::filled(10, 2.5).variance(), 0.0);
    }
}
