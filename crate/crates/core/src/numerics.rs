//! Dense row-major matrices, a pinned seeded random stream and the sigmoid
//! activation.
//!
//! The random stream is ChaCha8 keyed by a 64-bit seed (`rand_chacha`), which
//! produces the same sequence on every platform. Normal variates come from
//! `rand_distr::StandardNormal`, a ziggurat sampler; uniform variates are the
//! 53-bit mantissa construction of `rand`'s `StandardUniform` on `[0, 1)`.
//! Both crates are pinned through `Cargo.lock`, so the stream is stable for a
//! given build.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Seeded random stream owned by exactly one run.
#[derive(Debug, Clone)]
pub struct SeededRng {
    seed: u64,
    inner: ChaCha8Rng,
}

impl SeededRng {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Independent sub-stream for one role in a run: `seed ^ role`.
    pub fn derive(seed: u64, role: u64) -> Self {
        Self::new(seed ^ role)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn normal(&mut self) -> f64 {
        self.inner.sample(StandardNormal)
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    /// `true` with probability `p`; `p = 0` never fires and `p = 1` always does.
    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn shuffle<T>(&mut self, items: &mut [T]) {
        items.shuffle(&mut self.inner);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

fn dim_err(msg: impl Into<String>) -> Error {
    Error::Dimension(msg.into())
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for k in 0..n {
            m[(k, k)] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(dim_err(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        Ok(Self { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(dim_err("ragged rows"));
        }
        let data = rows.iter().flatten().copied().collect();
        Self::from_vec(rows.len(), cols, data)
    }

    /// Single-row matrix.
    pub fn row_vector(values: &[f64]) -> Self {
        Self {
            rows: 1,
            cols: values.len(),
            data: values.to_vec(),
        }
    }

    /// Stacks `batch` copies of `row`.
    pub fn repeat_row(row: &[f64], batch: usize) -> Self {
        let mut data = Vec::with_capacity(row.len() * batch);
        for _ in 0..batch {
            data.extend_from_slice(row);
        }
        Self {
            rows: batch,
            cols: row.len(),
            data,
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn abs(&self) -> Self {
        self.map(f64::abs)
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |acc, v| acc.max(v.abs()))
    }

    fn zip_with(&self, other: &Self, op: &str, f: impl Fn(f64, f64) -> f64) -> Result<Self> {
        if self.shape() != other.shape() {
            return Err(dim_err(format!(
                "{op}: {:?} vs {:?}",
                self.shape(),
                other.shape()
            )));
        }
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    pub fn hadamard(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "hadamard", |a, b| a * b)
    }

    pub fn scale(&self, k: f64) -> Self {
        self.map(|v| v * k)
    }

    /// Adds `row` to every row.
    pub fn add_row(&self, row: &[f64]) -> Result<Self> {
        if row.len() != self.cols {
            return Err(dim_err(format!(
                "add_row: row of {} onto {} columns",
                row.len(),
                self.cols
            )));
        }
        let mut out = self.clone();
        for r in 0..out.rows {
            for (v, b) in out.row_mut(r).iter_mut().zip(row) {
                *v += b;
            }
        }
        Ok(out)
    }

    pub fn transpose(&self) -> Self {
        let mut out = Self::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                out[(c, r)] = self[(r, c)];
            }
        }
        out
    }

    pub fn matmul(&self, other: &Self) -> Result<Self> {
        if self.cols != other.rows {
            return Err(dim_err(format!(
                "matmul: {:?} x {:?}",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Self::zeros(self.rows, other.cols);
        for r in 0..self.rows {
            for k in 0..self.cols {
                let a = self[(r, k)];
                if a == 0.0 {
                    continue;
                }
                let src = other.row(k);
                for (o, &b) in out.row_mut(r).iter_mut().zip(src) {
                    *o += a * b;
                }
            }
        }
        Ok(out)
    }

    /// `self · otherᵀ` without materialising the transpose.
    pub fn matmul_transposed(&self, other: &Self) -> Result<Self> {
        if self.cols != other.cols {
            return Err(dim_err(format!(
                "matmul_transposed: {:?} x {:?}^T",
                self.shape(),
                other.shape()
            )));
        }
        let mut out = Self::zeros(self.rows, other.rows);
        for r in 0..self.rows {
            let a = self.row(r);
            for c in 0..other.rows {
                out[(r, c)] = a.iter().zip(other.row(c)).map(|(x, y)| x * y).sum();
            }
        }
        Ok(out)
    }

    /// Joins along the feature axis: `[self other]`.
    pub fn concat_cols(&self, other: &Self) -> Result<Self> {
        if self.rows != other.rows {
            return Err(dim_err(format!(
                "concat_cols: {} rows vs {} rows",
                self.rows, other.rows
            )));
        }
        let cols = self.cols + other.cols;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(self.row(r));
            data.extend_from_slice(other.row(r));
        }
        Ok(Self {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Columns `start..end`.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Self> {
        if start > end || end > self.cols {
            return Err(dim_err(format!(
                "slice_cols {start}..{end} of {} columns",
                self.cols
            )));
        }
        let cols = end - start;
        let mut data = Vec::with_capacity(self.rows * cols);
        for r in 0..self.rows {
            data.extend_from_slice(&self.row(r)[start..end]);
        }
        Ok(Self {
            rows: self.rows,
            cols,
            data,
        })
    }

    /// Column sums as a vector.
    pub fn col_sums(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.cols];
        for r in 0..self.rows {
            for (o, v) in out.iter_mut().zip(self.row(r)) {
                *o += v;
            }
        }
        out
    }

    /// One line per row, comma separated, shortest round-trip formatting.
    pub fn to_csv(&self) -> String {
        let mut s = String::new();
        for r in 0..self.rows {
            for (c, v) in self.row(r).iter().enumerate() {
                if c > 0 {
                    s.push(',');
                }
                let _ = write!(s, "{v:?}");
            }
            s.push('\n');
        }
        s
    }

    pub fn from_csv(text: &str) -> Result<Self> {
        let rows = text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(parse_csv_row)
            .collect::<Result<Vec<_>>>()?;
        if rows.is_empty() {
            return Err(Error::Parse("empty matrix block".into()));
        }
        Self::from_rows(&rows)
    }
}

pub(crate) fn parse_csv_row(line: &str) -> Result<Vec<f64>> {
    line.split(',')
        .map(|tok| {
            let tok = tok.trim();
            let v: f64 = tok
                .parse()
                .map_err(|_| Error::Parse(format!("not a number: {tok:?}")))?;
            if v.is_finite() {
                Ok(v)
            } else {
                Err(Error::Parse(format!("non-finite value {tok:?}")))
            }
        })
        .collect()
}

impl std::ops::Index<(usize, usize)> for Matrix {
    type Output = f64;

    fn index(&self, (r, c): (usize, usize)) -> &f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &self.data[r * self.cols + c]
    }
}

impl std::ops::IndexMut<(usize, usize)> for Matrix {
    fn index_mut(&mut self, (r, c): (usize, usize)) -> &mut f64 {
        debug_assert!(r < self.rows && c < self.cols);
        &mut self.data[r * self.cols + c]
    }
}

fn check_dims(rows: usize, cols: usize) -> Result<()> {
    if rows == 0 || cols == 0 {
        return Err(dim_err(format!("cannot sample a {rows}x{cols} matrix")));
    }
    Ok(())
}

/// I.i.d. standard normal entries.
pub fn randn(rng: &mut SeededRng, rows: usize, cols: usize) -> Result<Matrix> {
    check_dims(rows, cols)?;
    let data = (0..rows * cols).map(|_| rng.normal()).collect();
    Matrix::from_vec(rows, cols, data)
}

/// I.i.d. uniform entries on `[0, 1)`.
pub fn randu(rng: &mut SeededRng, rows: usize, cols: usize) -> Result<Matrix> {
    check_dims(rows, cols)?;
    let data = (0..rows * cols).map(|_| rng.uniform()).collect();
    Matrix::from_vec(rows, cols, data)
}

/// Exactly rounded floating-point sum (Shewchuk's non-overlapping partials).
/// The result depends only on the multiset of addends, not their order.
#[derive(Debug, Clone, Default)]
pub struct ExactSum {
    partials: Vec<f64>,
}

impl ExactSum {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, mut x: f64) {
        let mut i = 0;
        for j in 0..self.partials.len() {
            let mut y = self.partials[j];
            if x.abs() < y.abs() {
                std::mem::swap(&mut x, &mut y);
            }
            let hi = x + y;
            let lo = y - (hi - x);
            if lo != 0.0 {
                self.partials[i] = lo;
                i += 1;
            }
            x = hi;
        }
        self.partials.truncate(i);
        self.partials.push(x);
    }

    pub fn value(&self) -> f64 {
        let p = &self.partials;
        let Some(mut n) = p.len().checked_sub(1) else {
            return 0.0;
        };
        let mut hi = p[n];
        let mut lo = 0.0;
        while n > 0 {
            let x = hi;
            n -= 1;
            let y = p[n];
            hi = x + y;
            lo = y - (hi - x);
            if lo != 0.0 {
                break;
            }
        }
        // Round half-even across the remaining partials.
        if n > 0 && ((lo < 0.0 && p[n - 1] < 0.0) || (lo > 0.0 && p[n - 1] > 0.0)) {
            let y = lo * 2.0;
            let x = hi + y;
            if y == x - hi {
                hi = x;
            }
        }
        hi
    }
}

pub fn exact_sum(values: impl IntoIterator<Item = f64>) -> f64 {
    let mut acc = ExactSum::new();
    values.into_iter().for_each(|v| acc.add(v));
    acc.value()
}

#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    // Split on sign so exp never overflows.
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn sigmoid(x: &Matrix) -> Matrix {
    x.map(sigmoid_scalar)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_sum_reference_values() {
        assert_eq!(exact_sum([0.1; 10]), 1.0);
        assert_eq!(exact_sum([1e16, 1.0, -1e16]), 1.0);
        assert_eq!(exact_sum([1e100, 1.0, -1e100, 1e-100]), 1.0);
        assert_eq!(exact_sum(std::iter::empty()), 0.0);
        // naive left-to-right gives 0.6000000000000001
        assert_eq!(exact_sum([0.1, 0.2, 0.3]), 0.6);
    }
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    #[test]
    fn randn_is_deterministic_per_seed() {
        let a = randn(&mut SeededRng::new(11), 7, 5).unwrap();
        let b = randn(&mut SeededRng::new(11), 7, 5).unwrap();
        let c = randn(&mut SeededRng::new(12), 7, 5).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn randn_moments() {
        let m = randn(&mut SeededRng::new(2024), 1000, 1000).unwrap();
        let n = m.len() as f64;
        let mean = m.sum() / n;
        let var = m.as_slice().iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        assert!(mean.abs() < 0.01, "mean {mean}");
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    #[test]
    fn randu_range_and_mean() {
        let m = randu(&mut SeededRng::new(5), 1000, 1000).unwrap();
        assert!(m.as_slice().iter().all(|&v| (0.0..1.0).contains(&v)));
        let mean = m.sum() / m.len() as f64;
        assert!((mean - 0.5).abs() < 0.01, "mean {mean}");
        assert_eq!(m, randu(&mut SeededRng::new(5), 1000, 1000).unwrap());
    }

    #[test]
    fn zero_dimension_is_rejected() {
        assert!(matches!(
            randn(&mut SeededRng::new(0), 0, 3),
            Err(Error::Dimension(_))
        ));
        assert!(matches!(
            randu(&mut SeededRng::new(0), 3, 0),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn sigmoid_values() {
        assert_eq!(sigmoid_scalar(0.0), 0.5);
        assert!((1.0 - sigmoid_scalar(100.0)).abs() < 1e-12);
        // 1 / (1 + e^2), 30-digit reference value.
        assert_abs_diff_eq!(sigmoid_scalar(-2.0), 0.119_202_922_022_117_56, epsilon = 1e-15);
        assert!(sigmoid_scalar(-800.0).is_finite());
    }

    #[test]
    fn matmul_by_hand() {
        let a = Matrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ones = Matrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        let p = a.matmul(&ones).unwrap();
        assert_eq!(p, Matrix::from_rows(&[vec![3.0], vec![7.0]]).unwrap());
        assert_eq!(a.matmul(&Matrix::identity(2)).unwrap(), a);
        assert!(matches!(ones.matmul(&ones), Err(Error::Dimension(_))));
    }

    #[test]
    fn concat_and_slice() {
        let a = Matrix::filled(3, 2, 1.0);
        let b = Matrix::filled(3, 4, 2.0);
        let c = a.concat_cols(&b).unwrap();
        assert_eq!(c.shape(), (3, 6));
        assert_eq!(c.slice_cols(0, 2).unwrap(), a);
        assert_eq!(c.slice_cols(2, 6).unwrap(), b);
        assert!(a.concat_cols(&Matrix::zeros(2, 1)).is_err());
        assert!(c.slice_cols(4, 7).is_err());
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let m = randn(&mut SeededRng::new(9), 4, 6).unwrap().scale(1e-7);
        assert_eq!(Matrix::from_csv(&m.to_csv()).unwrap(), m);
        assert!(Matrix::from_csv("1,2\n3").is_err());
        assert!(Matrix::from_csv("1,NaN").is_err());
    }

    proptest! {
        #[test]
        fn exact_sum_ignores_order(xs in proptest::collection::vec(-1e6f64..1e6, 0..40), seed in any::<u64>()) {
            let mut shuffled = xs.clone();
            SeededRng::new(seed).shuffle(&mut shuffled);
            prop_assert_eq!(exact_sum(xs.iter().copied()), exact_sum(shuffled));
        }

        #[test]
        fn transpose_of_product(seed in any::<u64>(), n in 1usize..6, k in 1usize..6, m in 1usize..6) {
            let mut rng = SeededRng::new(seed);
            let a = randn(&mut rng, n, k).unwrap();
            let b = randn(&mut rng, k, m).unwrap();
            let lhs = a.matmul(&b).unwrap().transpose();
            let rhs = b.transpose().matmul(&a.transpose()).unwrap();
            for (x, y) in lhs.as_slice().iter().zip(rhs.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
            let direct = a.matmul(&b).unwrap();
            let via_t = a.matmul_transposed(&b.transpose()).unwrap();
            for (x, y) in direct.as_slice().iter().zip(via_t.as_slice()) {
                prop_assert!((x - y).abs() < 1e-12);
            }
        }

        #[test]
        fn sigmoid_is_antisymmetric(x in -50.0f64..50.0) {
            prop_assert!((sigmoid_scalar(x) + sigmoid_scalar(-x) - 1.0).abs() < 1e-12);
            // f64 rounds σ(x) to 1 beyond x ≈ 36.7.
            let s = sigmoid_scalar(x.clamp(-30.0, 30.0));
            prop_assert!(s > 0.0 && s < 1.0);
        }
    }
}
