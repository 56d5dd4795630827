//! Low-rank adapters on dense linear maps.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Row-major dense matrix.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::BufferLength {
                expected: rows * cols,
                actual: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, v: f64) {
        self.data[r * self.cols + c] = v;
    }

    pub fn matmul(&self, other: &Matrix) -> Result<Matrix> {
        if self.cols != other.rows {
            return Err(dim_error(self, other));
        }
        let mut out = Matrix::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self.get(r, k);
                if a == 0.0 {
                    continue;
                }
                let row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out.data[r * other.cols..(r + 1) * other.cols].iter_mut().zip(row) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    pub fn matvec(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.cols {
            return Err(Error::Shape {
                left: format!("{}x{}", self.rows, self.cols),
                right: format!("vector of {}", x.len()),
            });
        }
        Ok(self
            .data
            .chunks_exact(self.cols)
            .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
            .collect())
    }
}

fn dim_error(a: &Matrix, b: &Matrix) -> Error {
    Error::Shape {
        left: format!("{}x{}", a.rows, a.cols),
        right: format!("{}x{}", b.rows, b.cols),
    }
}

/// Trainable delta `scale · up · down` for a `base_out × base_in` map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LowRankAdapter {
    /// `rank × base_in`
    pub down: Matrix,
    /// `base_out × rank`
    pub up: Matrix,
    pub scale: f64,
}

impl LowRankAdapter {
    pub fn new(down: Matrix, up: Matrix, scale: f64) -> Result<Self> {
        if up.cols() != down.rows() {
            return Err(dim_error(&up, &down));
        }
        Ok(Self { down, up, scale })
    }

    pub fn rank(&self) -> usize {
        self.down.rows()
    }

    pub fn base_in(&self) -> usize {
        self.down.cols()
    }

    pub fn base_out(&self) -> usize {
        self.up.rows()
    }

    /// `scale · up · down`, shape `base_out × base_in`.
    pub fn delta(&self) -> Matrix {
        let mut d = self.up.matmul(&self.down).expect("adapter dims validated at construction");
        d.data.iter_mut().for_each(|v| *v *= self.scale);
        d
    }

    /// Adapter branch alone: `scale · up · (down · x)`.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let hidden = self.down.matvec(x)?;
        let mut out = self.up.matvec(&hidden)?;
        out.iter_mut().for_each(|v| *v *= self.scale);
        Ok(out)
    }
}

/// Merges an adapter into its base weight: `base + scale · up · down`.
pub fn apply_adapter(base: &Matrix, adapter: &LowRankAdapter) -> Result<Matrix> {
    if base.rows() != adapter.base_out() || base.cols() != adapter.base_in() {
        return Err(Error::Shape {
            left: format!("base {}x{}", base.rows(), base.cols()),
            right: format!("adapter {}x{}", adapter.base_out(), adapter.base_in()),
        });
    }
    let delta = adapter.delta();
    let data = base.data.iter().zip(&delta.data).map(|(a, b)| a + b).collect();
    Matrix::from_vec(base.rows(), base.cols(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn zero_up_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let base = random(5, 4, &mut rng);
        let adapter = LowRankAdapter::new(random(2, 4, &mut rng), Matrix::zeros(5, 2), 1.0).unwrap();
        assert_eq!(apply_adapter(&base, &adapter).unwrap(), base);
    }

    #[test]
    fn rank_one_outer_product() {
        let base = Matrix::from_fn(3, 3, |r, c| (r * 3 + c) as f64);
        let mut e1_row = Matrix::zeros(1, 3);
        e1_row.set(0, 0, 1.0);
        let mut e1_col = Matrix::zeros(3, 1);
        e1_col.set(0, 0, 1.0);
        let adapter = LowRankAdapter::new(e1_row, e1_col, 3.0).unwrap();
        let merged = apply_adapter(&base, &adapter).unwrap();
        let mut expected = base.clone();
        expected.set(0, 0, base.get(0, 0) + 3.0);
        assert_eq!(merged, expected);
    }

    #[test]
    fn merged_forward_is_base_plus_adapter() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for _ in 0..20 {
            let base = random(7, 5, &mut rng);
            let adapter = LowRankAdapter::new(random(2, 5, &mut rng), random(7, 2, &mut rng), 0.7).unwrap();
            let x: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let merged = apply_adapter(&base, &adapter).unwrap().matvec(&x).unwrap();
            let split: Vec<f64> = base
                .matvec(&x)
                .unwrap()
                .iter()
                .zip(adapter.forward(&x).unwrap())
                .map(|(a, b)| a + b)
                .collect();
            for (a, b) in merged.iter().zip(&split) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn delta_rank_is_bounded() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let adapter = LowRankAdapter::new(random(3, 8, &mut rng), random(6, 3, &mut rng), 2.0).unwrap();
        let d = adapter.delta();
        let m = nalgebra::DMatrix::from_row_slice(d.rows(), d.cols(), d.data());
        assert!(m.rank(1e-9) <= 3);
    }

    #[test]
    fn dimension_mismatch() {
        let adapter = LowRankAdapter::new(Matrix::zeros(2, 4), Matrix::zeros(3, 2), 1.0).unwrap();
        assert!(apply_adapter(&Matrix::zeros(3, 5), &adapter).is_err());
        assert!(LowRankAdapter::new(Matrix::zeros(2, 4), Matrix::zeros(3, 3), 1.0).is_err());
    }
}
