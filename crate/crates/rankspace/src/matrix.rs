use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::Error;
use crate::scalar::{real, Real};

/// Dense row-major matrix.
///
/// Entries are validated to be finite at construction, so downstream
/// algebra never sees NaN or infinities. Zero-dimensional matrices are
/// allowed: a rank-0 factor is an `m x 0` matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn new(rows: usize, cols: usize, data: Vec<T>) -> Result<Self, Error> {
        if data.len() != rows * cols {
            return Err(Error::invalid(format!(
                "matrix data length {} does not match {rows}x{cols}",
                data.len()
            )));
        }
        if data.iter().any(|x| !x.is_finite()) {
            return Err(Error::invalid("matrix entries must be finite"));
        }
        Ok(Matrix { rows, cols, data })
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.set(i, i, T::one());
        }
        m
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> T) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Matrix { rows, cols, data }
    }

    /// Square matrix with `values` on the diagonal.
    pub fn diag(values: &[T]) -> Self {
        let n = values.len();
        let mut m = Self::zeros(n, n);
        for (i, &v) in values.iter().enumerate() {
            m.set(i, i, v);
        }
        m
    }

    /// Entries i.i.d. uniform in `[lo, hi)`. Sampling happens in `f64` so the
    /// stream is identical across scalar types for a given RNG state.
    pub fn random_uniform(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(rows, cols, |_, _| real(rng.random_range(lo..hi)))
    }

    /// Entries i.i.d. Gaussian with standard deviation `std`.
    pub fn random_gaussian(rows: usize, cols: usize, std: f64, rng: &mut impl Rng) -> Self {
        Self::from_fn(rows, cols, |_, _| {
            let z: f64 = StandardNormal.sample(rng);
            real(z * std)
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn min_dim(&self) -> usize {
        self.rows.min(self.cols)
    }

    #[inline]
    pub fn at(&self, row: usize, col: usize) -> T {
        self.data[row * self.cols + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: T) {
        self.data[row * self.cols + col] = value;
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn row(&self, i: usize) -> &[T] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.at(j, i))
    }

    /// `self * rhs`.
    pub fn matmul(&self, rhs: &Self) -> Result<Self, Error> {
        if self.cols != rhs.rows {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.cols);
        for i in 0..self.rows {
            for k in 0..self.cols {
                let a = self.at(i, k);
                if a == T::zero() {
                    continue;
                }
                for j in 0..rhs.cols {
                    let v = out.at(i, j) + a * rhs.at(k, j);
                    out.set(i, j, v);
                }
            }
        }
        Ok(out)
    }

    /// `self * rhs^T`, without materializing the transpose.
    pub fn matmul_bt(&self, rhs: &Self) -> Result<Self, Error> {
        if self.cols != rhs.cols {
            return Err(Error::shape(format!(
                "cannot multiply {}x{} by transpose of {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let mut out = Self::zeros(self.rows, rhs.rows);
        for i in 0..self.rows {
            for j in 0..rhs.rows {
                let mut acc = T::zero();
                for k in 0..self.cols {
                    acc = acc + self.at(i, k) * rhs.at(j, k);
                }
                out.set(i, j, acc);
            }
        }
        Ok(out)
    }

    pub fn add(&self, rhs: &Self) -> Result<Self, Error> {
        self.zip_with(rhs, |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Self) -> Result<Self, Error> {
        self.zip_with(rhs, |a, b| a - b)
    }

    fn zip_with(&self, rhs: &Self, f: impl Fn(T, T) -> T) -> Result<Self, Error> {
        if self.rows != rhs.rows || self.cols != rhs.cols {
            return Err(Error::shape(format!(
                "{}x{} vs {}x{}",
                self.rows, self.cols, rhs.rows, rhs.cols
            )));
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Matrix {
            rows: self.rows,
            cols: self.cols,
            data,
        })
    }

    pub fn scale(&self, s: T) -> Self {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| x * s).collect(),
        }
    }

    pub fn frobenius_norm_sq(&self) -> T {
        self.data.iter().map(|&x| x * x).sum()
    }

    pub fn frobenius_norm(&self) -> T {
        self.frobenius_norm_sq().sqrt()
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |acc, &x| acc.max(x.abs()))
    }

    /// Plain-text serialization: first line `rows cols`, then one line per
    /// row with whitespace-separated decimal values.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{} {}", self.rows, self.cols);
        for i in 0..self.rows {
            let mut first = true;
            for j in 0..self.cols {
                if !first {
                    out.push(' ');
                }
                let _ = write!(out, "{}", self.at(i, j));
                first = false;
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, Error> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines
            .next()
            .ok_or_else(|| Error::Parse {
                line: 1,
                message: "empty matrix file".into(),
            })?;
        let dims: Vec<&str> = header.split_whitespace().collect();
        if dims.len() != 2 {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected `rows cols`, got `{header}`"),
            });
        }
        let parse_dim = |tok: &str| {
            tok.parse::<usize>().map_err(|e| Error::Parse {
                line: 1,
                message: format!("bad dimension `{tok}`: {e}"),
            })
        };
        let rows = parse_dim(dims[0])?;
        let cols = parse_dim(dims[1])?;
        if rows == 0 || cols == 0 {
            return Err(Error::Parse {
                line: 1,
                message: "matrix dimensions must be positive".into(),
            });
        }
        let mut data = Vec::with_capacity(rows * cols);
        let mut seen_rows = 0;
        for (idx, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            seen_rows += 1;
            if seen_rows > rows {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("more than {rows} data rows"),
                });
            }
            let values: Vec<&str> = line.split_whitespace().collect();
            if values.len() != cols {
                return Err(Error::Parse {
                    line: idx + 1,
                    message: format!("expected {cols} values, got {}", values.len()),
                });
            }
            for tok in values {
                let v = tok.parse::<T>().map_err(|e| Error::Parse {
                    line: idx + 1,
                    message: format!("bad value `{tok}`: {e}"),
                })?;
                data.push(v);
            }
        }
        if seen_rows != rows {
            return Err(Error::Parse {
                line: seen_rows + 1,
                message: format!("expected {rows} data rows, got {seen_rows}"),
            });
        }
        Matrix::new(rows, cols, data)
    }

    pub fn write_text_file(&self, path: impl AsRef<Path>) -> Result<(), Error> {
        std::fs::write(path, self.to_text()).map_err(Error::from)
    }

    pub fn read_text_file(path: impl AsRef<Path>) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| {
            Error::Io(format!("{}: {e}", path.as_ref().display()))
        })?;
        Self::from_text(&text)
    }
}
