//! Dense row-major matrices, a Cholesky solver and a seeded Gaussian source.
//!
//! Everything here is sized for desk-scale problems (dimensions up to a few
//! dozen), so the kernels are plain loops in a fixed order. That order is part
//! of the contract: traces must be bit-identical across runs.

use std::fmt::Write as _;
use std::ops::{Add, Mul, Sub};

use rand_distr::{Distribution, StandardNormal};
use rand_xoshiro::rand_core::SeedableRng;
use rand_xoshiro::Xoshiro256PlusPlus;

use crate::error::{Error, Result};

/// Dense real matrix stored row-major.
#[derive(Debug, Clone, PartialEq)]
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

    pub fn filled(rows: usize, cols: usize, value: f64) -> Self {
        Self {
            rows,
            cols,
            data: vec![value; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::embedding(n, n)
    }

    /// Rectangular identity: ones on the main diagonal, zeros elsewhere.
    pub fn embedding(rows: usize, cols: usize) -> Self {
        let mut m = Self::zeros(rows, cols);
        for i in 0..rows.min(cols) {
            m.data[i * cols + i] = 1.0;
        }
        m
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::ShapeMismatch {
                op: "from_vec",
                left: (rows, cols),
                right: (data.len(), 1),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// Builds a matrix from nested rows. Panics on ragged input.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Self {
        let r = rows.len();
        let c = rows.first().map_or(0, |row| row.as_ref().len());
        let mut data = Vec::with_capacity(r * c);
        for row in rows {
            let row = row.as_ref();
            assert_eq!(row.len(), c, "ragged rows");
            data.extend_from_slice(row);
        }
        Self {
            rows: r,
            cols: c,
            data,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self::filled(1, 1, value)
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

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    #[inline]
    pub fn set(&mut self, r: usize, c: usize, value: f64) {
        self.data[r * self.cols + c] = value;
    }

    pub fn transpose(&self) -> Matrix {
        let mut t = Matrix::zeros(self.cols, self.rows);
        for r in 0..self.rows {
            for c in 0..self.cols {
                t.data[c * self.rows + r] = self.data[r * self.cols + c];
            }
        }
        t
    }

    /// Matrix product, panicking on incompatible shapes. Use [`matmul`] for
    /// a checked variant.
    pub fn dot(&self, other: &Matrix) -> Matrix {
        assert_eq!(
            self.cols,
            other.rows,
            "dot: {:?} x {:?}",
            self.shape(),
            other.shape()
        );
        let mut out = Matrix::zeros(self.rows, other.cols);
        for i in 0..self.rows {
            let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
            for k in 0..self.cols {
                let a = self.data[i * self.cols + k];
                if a == 0.0 {
                    continue;
                }
                let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `selfᵀ · other` without materializing the transpose.
    pub fn t_dot(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.rows, other.rows, "t_dot row mismatch");
        let mut out = Matrix::zeros(self.cols, other.cols);
        for k in 0..self.rows {
            let b_row = &other.data[k * other.cols..(k + 1) * other.cols];
            for i in 0..self.cols {
                let a = self.data[k * self.cols + i];
                if a == 0.0 {
                    continue;
                }
                let out_row = &mut out.data[i * other.cols..(i + 1) * other.cols];
                for (o, b) in out_row.iter_mut().zip(b_row) {
                    *o += a * b;
                }
            }
        }
        out
    }

    /// `self · otherᵀ`.
    pub fn dot_t(&self, other: &Matrix) -> Matrix {
        assert_eq!(self.cols, other.cols, "dot_t column mismatch");
        let mut out = Matrix::zeros(self.rows, other.rows);
        for i in 0..self.rows {
            let a_row = &self.data[i * self.cols..(i + 1) * self.cols];
            for j in 0..other.rows {
                let b_row = &other.data[j * other.cols..(j + 1) * other.cols];
                out.data[i * other.rows + j] = a_row.iter().zip(b_row).map(|(a, b)| a * b).sum();
            }
        }
        out
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Matrix {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn zip_map(&self, other: &Matrix, f: impl Fn(f64, f64) -> f64) -> Matrix {
        assert_eq!(self.shape(), other.shape(), "zip_map shape mismatch");
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        }
    }

    pub fn hadamard(&self, other: &Matrix) -> Matrix {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, s: f64) -> Matrix {
        self.map(|x| s * x)
    }

    /// `self += s * other`
    pub fn axpy(&mut self, s: f64, other: &Matrix) {
        assert_eq!(self.shape(), other.shape(), "axpy shape mismatch");
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += s * b;
        }
    }

    pub fn add_diag(&mut self, s: f64) {
        for i in 0..self.rows.min(self.cols) {
            self.data[i * self.cols + i] += s;
        }
    }

    /// Frobenius inner product `tr(A Bᵀ)`.
    pub fn inner(&self, other: &Matrix) -> f64 {
        assert_eq!(self.shape(), other.shape(), "inner shape mismatch");
        self.data.iter().zip(&other.data).map(|(a, b)| a * b).sum()
    }

    pub fn frob_sq(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum()
    }

    pub fn frob_norm(&self) -> f64 {
        frob_norm(self)
    }

    pub fn l1_norm(&self) -> f64 {
        self.data.iter().map(|x| x.abs()).sum()
    }

    pub fn trace(&self) -> f64 {
        (0..self.rows.min(self.cols))
            .map(|i| self.data[i * self.cols + i])
            .sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    /// Permutes columns: column `j` of the result is column `perm[j]` of `self`.
    pub fn permute_cols(&self, perm: &[usize]) -> Matrix {
        assert_eq!(perm.len(), self.cols);
        let mut out = Matrix::zeros(self.rows, self.cols);
        for r in 0..self.rows {
            for (j, &src) in perm.iter().enumerate() {
                out.data[r * self.cols + j] = self.data[r * self.cols + src];
            }
        }
        out
    }

    /// Serializes as `rows cols` followed by one line per row, entries with
    /// 17 significant digits.
    pub fn to_text(&self) -> String {
        let mut s = format!("{} {}\n", self.rows, self.cols);
        for r in 0..self.rows {
            for c in 0..self.cols {
                if c > 0 {
                    s.push(' ');
                }
                let _ = write!(s, "{}", fmt_sig17(self.get(r, c)));
            }
            s.push('\n');
        }
        s
    }

    /// Parses the format written by [`Matrix::to_text`]. Extra blank lines at
    /// the end are tolerated; anything else is an error.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (row0, header) = lines
            .by_ref()
            .find(|(_, l)| !l.trim().is_empty())
            .ok_or_else(|| Error::parse(1, "empty matrix text"))?;
        let (rows, cols) = parse_header(header).map_err(|m| Error::parse(row0 + 1, m))?;
        let mut data = Vec::with_capacity(rows.saturating_mul(cols).min(1 << 20));
        for r in 0..rows {
            let (idx, line) = lines
                .next()
                .ok_or_else(|| Error::parse(row0 + 2 + r, "missing matrix row"))?;
            let before = data.len();
            for tok in line.split_whitespace() {
                let v: f64 = tok
                    .parse()
                    .map_err(|_| Error::parse(idx + 1, format!("bad number `{tok}`")))?;
                if !v.is_finite() {
                    return Err(Error::parse(idx + 1, "non-finite entry"));
                }
                data.push(v);
            }
            if data.len() - before != cols {
                return Err(Error::parse(
                    idx + 1,
                    format!("expected {cols} entries, found {}", data.len() - before),
                ));
            }
        }
        if let Some((idx, _)) = lines.find(|(_, l)| !l.trim().is_empty()) {
            return Err(Error::parse(idx + 1, "trailing content after matrix"));
        }
        Matrix::from_vec(rows, cols, data)
    }
}

fn parse_header(line: &str) -> std::result::Result<(usize, usize), String> {
    let mut it = line.split_whitespace();
    let rows: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or("header must be `rows cols`")?;
    let cols: usize = it
        .next()
        .and_then(|t| t.parse().ok())
        .ok_or("header must be `rows cols`")?;
    if it.next().is_some() {
        return Err("header must be `rows cols`".into());
    }
    if rows == 0 || cols == 0 {
        return Err("matrix dimensions must be positive".into());
    }
    if rows.checked_mul(cols).is_none_or(|n| n > 1 << 24) {
        return Err("matrix too large".into());
    }
    Ok((rows, cols))
}

/// Formats a float with 17 significant digits in scientific notation.
/// The output is valid JSON and round-trips exactly.
pub fn fmt_sig17(x: f64) -> String {
    format!("{x:.16e}")
}

impl Add for &Matrix {
    type Output = Matrix;
    fn add(self, rhs: &Matrix) -> Matrix {
        self.zip_map(rhs, |a, b| a + b)
    }
}

impl Sub for &Matrix {
    type Output = Matrix;
    fn sub(self, rhs: &Matrix) -> Matrix {
        self.zip_map(rhs, |a, b| a - b)
    }
}

impl Mul for &Matrix {
    type Output = Matrix;
    fn mul(self, rhs: &Matrix) -> Matrix {
        self.dot(rhs)
    }
}

/// Checked matrix product.
pub fn matmul(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    if a.cols != b.rows {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    Ok(a.dot(b))
}

pub fn frob_norm(a: &Matrix) -> f64 {
    a.frob_sq().sqrt()
}

/// Solves `a x = b` for symmetric positive definite `a` by Cholesky
/// factorization. Only the lower triangle of `a` is read.
pub fn solve_spd(a: &Matrix, b: &Matrix) -> Result<Matrix> {
    let n = a.rows;
    if a.cols != n || b.rows != n {
        return Err(Error::ShapeMismatch {
            op: "solve_spd",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let tol = 1e-12 * a.trace().abs();
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = a.get(j, j);
        for k in 0..j {
            d -= l.get(j, k) * l.get(j, k);
        }
        if !(d > tol) {
            return Err(Error::Singular { row: j, pivot: d });
        }
        let ljj = d.sqrt();
        l.set(j, j, ljj);
        for i in j + 1..n {
            let mut s = a.get(i, j);
            for k in 0..j {
                s -= l.get(i, k) * l.get(j, k);
            }
            l.set(i, j, s / ljj);
        }
    }

    let m = b.cols;
    let mut x = b.clone();
    // forward: L y = b
    for col in 0..m {
        for i in 0..n {
            let mut s = x.get(i, col);
            for k in 0..i {
                s -= l.get(i, k) * x.get(k, col);
            }
            x.set(i, col, s / l.get(i, i));
        }
        // backward: Lᵀ x = y
        for i in (0..n).rev() {
            let mut s = x.get(i, col);
            for k in i + 1..n {
                s -= l.get(k, i) * x.get(k, col);
            }
            x.set(i, col, s / l.get(i, i));
        }
    }
    Ok(x)
}

/// Seeded xoshiro256++ stream. The same seed yields the same draws on every
/// platform; `tests/rng_vectors.rs` pins the output.
#[derive(Debug, Clone)]
pub struct RandomSource {
    seed: u64,
    rng: Xoshiro256PlusPlus,
}

impl RandomSource {
    pub fn new(seed: u64) -> Self {
        Self {
            seed,
            rng: Xoshiro256PlusPlus::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.rng)
    }

    /// Uniform draw on `[0, 1)` from the top 53 bits.
    pub fn uniform(&mut self) -> f64 {
        use rand_xoshiro::rand_core::Rng;
        (self.rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64)
    }
}

/// Matrix with i.i.d. `N(0, scale²)` entries, filled row-major.
pub fn gaussian_fill(rng: &mut RandomSource, rows: usize, cols: usize, scale: f64) -> Matrix {
    assert!(scale >= 0.0, "gaussian_fill: negative scale");
    let mut m = Matrix::zeros(rows, cols);
    for x in m.data.iter_mut() {
        *x = scale * rng.standard_normal();
    }
    m
}
