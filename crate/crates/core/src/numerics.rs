//! Dense linear algebra and seeded Gaussian generation.
//!
//! Matrices are small (a few hundred entries at most in the detector path),
//! stored row-major in a flat `Vec<f64>`. Nothing here allocates more than the
//! result it returns plus one scratch copy.

use std::fmt;
use std::ops::{Index, IndexMut};

use rand_chacha::ChaCha8Rng;
use rand_core::{RngCore, SeedableRng};
use thiserror::Error;

/// Largest Gram-matrix condition estimate accepted by [`lstsq`].
pub const MAX_CONDITION: f64 = 1e12;

/// Relative pivot threshold for [`chol`], scaled by the largest diagonal entry.
pub const SPD_PIVOT_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LinalgError {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    DimensionMismatch {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },
    #[error("invalid shape {rows}x{cols} with {len} entries")]
    InvalidShape {
        rows: usize,
        cols: usize,
        len: usize,
    },
    #[error("matrix is not square ({rows}x{cols})")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not positive definite (pivot {pivot} at row {index})")]
    NotPositiveDefinite { index: usize, pivot: f64 },
    #[error("insufficient excitation: regressor Gram condition estimate {condition:e} exceeds {MAX_CONDITION:e}")]
    InsufficientExcitation { condition: f64 },
}

/// Row-major dense matrix of `f64`.
#[derive(Clone, PartialEq)]
pub struct Matrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl Matrix {
    pub fn new(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self, LinalgError> {
        if rows == 0 || cols == 0 || data.len() != rows * cols {
            return Err(LinalgError::InvalidShape {
                rows,
                cols,
                len: data.len(),
            });
        }
        Ok(Self { rows, cols, data })
    }

    /// # Panics
    ///
    /// Panics if either dimension is zero.
    pub fn zeros(rows: usize, cols: usize) -> Self {
        assert!(rows > 0 && cols > 0, "matrix dimensions must be positive");
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m[(i, i)] = 1.0;
        }
        m
    }

    pub fn from_diag(diag: &[f64]) -> Self {
        let mut m = Self::zeros(diag.len(), diag.len());
        for (i, &d) in diag.iter().enumerate() {
            m[(i, i)] = d;
        }
        m
    }

    /// Builds a matrix from equal-length rows.
    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self, LinalgError> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for r in rows {
            let r = r.as_ref();
            if r.len() != cols {
                return Err(LinalgError::InvalidShape {
                    rows: rows.len(),
                    cols,
                    len: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(rows.len(), cols, data)
    }

    /// Column vector from a slice.
    pub fn column(v: &[f64]) -> Self {
        assert!(!v.is_empty(), "column vector must be non-empty");
        Self {
            rows: v.len(),
            cols: 1,
            data: v.to_vec(),
        }
    }

    /// Row vector from a slice.
    pub fn row(v: &[f64]) -> Self {
        assert!(!v.is_empty(), "row vector must be non-empty");
        Self {
            rows: 1,
            cols: v.len(),
            data: v.to_vec(),
        }
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
    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn row_slice(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn to_rows(&self) -> Vec<Vec<f64>> {
        self.data.chunks(self.cols).map(<[f64]>::to_vec).collect()
    }

    pub fn col_vec(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self[(i, j)]).collect()
    }

    pub fn transpose(&self) -> Self {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t[(j, i)] = self[(i, j)];
            }
        }
        t
    }

    pub fn scale(&self, c: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| x * c).collect(),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self, LinalgError> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn sub(&self, other: &Self) -> Result<Self, LinalgError> {
        self.zip_with(other, "sub", |a, b| a - b)
    }

    fn zip_with(
        &self,
        other: &Self,
        op: &'static str,
        f: impl Fn(f64, f64) -> f64,
    ) -> Result<Self, LinalgError> {
        if self.shape() != other.shape() {
            return Err(LinalgError::DimensionMismatch {
                op,
                left: self.shape(),
                right: other.shape(),
            });
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

    /// Copy of the `rows x cols` block whose top-left corner is `(r0, c0)`.
    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> Self {
        assert!(r0 + rows <= self.rows && c0 + cols <= self.cols);
        let mut b = Self::zeros(rows, cols);
        for i in 0..rows {
            b.data[i * cols..(i + 1) * cols]
                .copy_from_slice(&self.data[(r0 + i) * self.cols + c0..][..cols]);
        }
        b
    }

    pub fn set_block(&mut self, r0: usize, c0: usize, src: &Self) {
        assert!(r0 + src.rows <= self.rows && c0 + src.cols <= self.cols);
        for i in 0..src.rows {
            let dst = (r0 + i) * self.cols + c0;
            self.data[dst..dst + src.cols].copy_from_slice(src.row_slice(i));
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, x| m.max(x.abs()))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_square(&self) -> bool {
        self.rows == self.cols
    }

    /// Largest absolute asymmetry `|a_ij - a_ji|`; infinite for non-square input.
    pub fn asymmetry(&self) -> f64 {
        if !self.is_square() {
            return f64::INFINITY;
        }
        let mut worst = 0.0_f64;
        for i in 0..self.rows {
            for j in 0..i {
                worst = worst.max((self[(i, j)] - self[(j, i)]).abs());
            }
        }
        worst
    }

    /// Replaces the matrix by `(A + Aᵀ) / 2`.
    pub fn symmetrize(&mut self) {
        debug_assert!(self.is_square());
        for i in 0..self.rows {
            for j in 0..i {
                let v = 0.5 * (self[(i, j)] + self[(j, i)]);
                self[(i, j)] = v;
                self[(j, i)] = v;
            }
        }
    }
}

impl Index<(usize, usize)> for Matrix {
    type Output = f64;

    #[inline]
    fn index(&self, (i, j): (usize, usize)) -> &f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &self.data[i * self.cols + j]
    }
}

impl IndexMut<(usize, usize)> for Matrix {
    #[inline]
    fn index_mut(&mut self, (i, j): (usize, usize)) -> &mut f64 {
        debug_assert!(i < self.rows && j < self.cols);
        &mut self.data[i * self.cols + j]
    }
}

impl fmt::Debug for Matrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "Matrix {}x{} [", self.rows, self.cols)?;
        for r in self.data.chunks(self.cols) {
            writeln!(f, "  {r:?}")?;
        }
        write!(f, "]")
    }
}

pub fn mat_mul(a: &Matrix, b: &Matrix) -> Result<Matrix, LinalgError> {
    if a.cols != b.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "mat_mul",
            left: a.shape(),
            right: b.shape(),
        });
    }
    let mut c = Matrix::zeros(a.rows, b.cols);
    for i in 0..a.rows {
        let out = &mut c.data[i * b.cols..(i + 1) * b.cols];
        for (k, &aik) in a.row_slice(i).iter().enumerate() {
            if aik == 0.0 {
                continue;
            }
            for (o, &bkj) in out.iter_mut().zip(b.row_slice(k)) {
                *o += aik * bkj;
            }
        }
    }
    Ok(c)
}

/// Kronecker product; block `(i, j)` of the result is `a[i, j] * b`.
pub fn kron(a: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(a.rows * b.rows, a.cols * b.cols);
    for i in 0..a.rows {
        for j in 0..a.cols {
            let aij = a[(i, j)];
            for p in 0..b.rows {
                for q in 0..b.cols {
                    out[(i * b.rows + p, j * b.cols + q)] = aij * b[(p, q)];
                }
            }
        }
    }
    out
}

/// Least-squares solution `X` of `min ‖y − X·z‖_F`, i.e. `y·zᵀ·(z·zᵀ)⁻¹`.
///
/// Solved by Householder QR of `zᵀ` rather than by forming the normal
/// equations. The condition of `z·zᵀ` is estimated as the squared ratio of the
/// extreme diagonal entries of `R`; anything above [`MAX_CONDITION`] is
/// reported as insufficient excitation.
pub fn lstsq(y: &Matrix, z: &Matrix) -> Result<Matrix, LinalgError> {
    if y.cols != z.cols {
        return Err(LinalgError::DimensionMismatch {
            op: "lstsq",
            left: y.shape(),
            right: z.shape(),
        });
    }
    let n = z.rows;
    let m = z.cols;
    if m < n {
        return Err(LinalgError::InsufficientExcitation {
            condition: f64::INFINITY,
        });
    }
    let mut a = z.transpose(); // m x n
    let mut b = y.transpose(); // m x l
    let l = b.cols;
    let mut rdiag = vec![0.0; n];

    for k in 0..n {
        let norm = (k..m).map(|i| a[(i, k)] * a[(i, k)]).sum::<f64>().sqrt();
        if norm == 0.0 {
            rdiag[k] = 0.0;
            continue;
        }
        let alpha = if a[(k, k)] > 0.0 { -norm } else { norm };
        let mut v: Vec<f64> = (k..m).map(|i| a[(i, k)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|x| x * x).sum();
        if vnorm2 == 0.0 {
            rdiag[k] = alpha;
            continue;
        }
        for j in k..n {
            let dot: f64 = v.iter().enumerate().map(|(t, vi)| vi * a[(k + t, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for (t, vi) in v.iter().enumerate() {
                a[(k + t, j)] -= f * vi;
            }
        }
        for j in 0..l {
            let dot: f64 = v.iter().enumerate().map(|(t, vi)| vi * b[(k + t, j)]).sum();
            let f = 2.0 * dot / vnorm2;
            for (t, vi) in v.iter().enumerate() {
                b[(k + t, j)] -= f * vi;
            }
        }
        rdiag[k] = alpha;
    }

    let max_r = rdiag.iter().fold(0.0_f64, |acc, r| acc.max(r.abs()));
    let min_r = rdiag.iter().fold(f64::INFINITY, |acc, r| acc.min(r.abs()));
    let condition = if min_r == 0.0 {
        f64::INFINITY
    } else {
        (max_r / min_r).powi(2)
    };
    if !(condition <= MAX_CONDITION) {
        return Err(LinalgError::InsufficientExcitation { condition });
    }

    // Back substitution R·X = (Qᵀ b)[..n].
    let mut x = Matrix::zeros(n, l);
    for j in 0..l {
        for i in (0..n).rev() {
            let mut s = b[(i, j)];
            for c in i + 1..n {
                s -= a[(i, c)] * x[(c, j)];
            }
            x[(i, j)] = s / a[(i, i)];
        }
    }
    Ok(x.transpose())
}

/// Lower-triangular Cholesky factor `G` with `G·Gᵀ = s`.
///
/// Only the lower triangle of `s` is read.
pub fn chol(s: &Matrix) -> Result<Matrix, LinalgError> {
    if !s.is_square() {
        return Err(LinalgError::NotSquare {
            rows: s.rows,
            cols: s.cols,
        });
    }
    let n = s.rows;
    let max_diag = (0..n).fold(0.0_f64, |m, i| m.max(s[(i, i)].abs()));
    let tol = SPD_PIVOT_TOLERANCE * max_diag;
    let mut g = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = s[(j, j)];
        for k in 0..j {
            d -= g[(j, k)] * g[(j, k)];
        }
        if !(d > tol) {
            return Err(LinalgError::NotPositiveDefinite { index: j, pivot: d });
        }
        let djj = d.sqrt();
        g[(j, j)] = djj;
        for i in j + 1..n {
            let mut v = s[(i, j)];
            for k in 0..j {
                v -= g[(i, k)] * g[(j, k)];
            }
            g[(i, j)] = v / djj;
        }
    }
    Ok(g)
}

/// Solves `G·w = r` for lower-triangular `G`.
pub fn forward_solve(g: &Matrix, r: &Matrix) -> Result<Matrix, LinalgError> {
    if !g.is_square() || g.rows != r.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "forward_solve",
            left: g.shape(),
            right: r.shape(),
        });
    }
    let n = g.rows;
    let mut w = r.clone();
    for c in 0..r.cols {
        for i in 0..n {
            let mut v = w[(i, c)];
            for k in 0..i {
                v -= g[(i, k)] * w[(k, c)];
            }
            w[(i, c)] = v / g[(i, i)];
        }
    }
    Ok(w)
}

/// Solves `Gᵀ·x = w` for lower-triangular `G`.
pub fn backward_solve_transposed(g: &Matrix, w: &Matrix) -> Result<Matrix, LinalgError> {
    if !g.is_square() || g.rows != w.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "backward_solve",
            left: g.shape(),
            right: w.shape(),
        });
    }
    let n = g.rows;
    let mut x = w.clone();
    for c in 0..w.cols {
        for i in (0..n).rev() {
            let mut v = x[(i, c)];
            for k in i + 1..n {
                v -= g[(k, i)] * x[(k, c)];
            }
            x[(i, c)] = v / g[(i, i)];
        }
    }
    Ok(x)
}

/// Inverse of a symmetric positive definite matrix via its Cholesky factor.
/// The result is exactly symmetric.
pub fn spd_inverse(s: &Matrix) -> Result<Matrix, LinalgError> {
    let g = chol(s)?;
    let w = forward_solve(&g, &Matrix::identity(s.rows))?;
    let mut inv = backward_solve_transposed(&g, &w)?;
    inv.symmetrize();
    Ok(inv)
}

/// `rᵀ·s⁻¹·r` evaluated as `‖G⁻¹ r‖²` with `G = chol(s)`.
pub fn quad_form(s: &Matrix, r: &Matrix) -> Result<f64, LinalgError> {
    if r.cols != 1 || r.rows != s.rows {
        return Err(LinalgError::DimensionMismatch {
            op: "quad_form",
            left: s.shape(),
            right: r.shape(),
        });
    }
    let g = chol(s)?;
    let w = forward_solve(&g, r)?;
    Ok(w.data.iter().map(|x| x * x).sum())
}

/// Deterministic stream of standard normal draws.
///
/// Draw `i` of a stream is a pure function of `(seed, i)`: pairs of draws come
/// from a Box–Muller transform over ChaCha8 words `4·⌊i/2⌋ .. 4·⌊i/2⌋ + 4`.
/// Streams can therefore be created at any position and replayed.
#[derive(Clone)]
pub struct RngStream {
    seed: u64,
    position: u64,
    core: ChaCha8Rng,
    spare: Option<f64>,
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        Self::at(seed, 0)
    }

    pub fn at(seed: u64, position: u64) -> Self {
        Self {
            seed,
            position,
            core: ChaCha8Rng::seed_from_u64(seed),
            spare: None,
        }
    }

    /// Independent stream for a sub-task, e.g. `(cell, trial)` of a sweep.
    pub fn derive(seed: u64, path: &[u64]) -> Self {
        let mut s = splitmix64(seed);
        for &p in path {
            s = splitmix64(s ^ splitmix64(p.wrapping_add(0x632B_E59B_D9B4_E019)));
        }
        Self::new(s)
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn next_gaussian(&mut self) -> f64 {
        let pos = self.position;
        self.position += 1;
        if pos % 2 == 1 {
            if let Some(s) = self.spare.take() {
                return s;
            }
            return self.pair(pos / 2).1;
        }
        let (c, s) = self.pair(pos / 2);
        self.spare = Some(s);
        c
    }

    fn pair(&mut self, index: u64) -> (f64, f64) {
        self.core.set_word_pos(u128::from(index) * 4);
        // (0, 1] so that ln never sees zero.
        let u1 = ((self.core.next_u64() >> 11) + 1) as f64 * (1.0 / (1u64 << 53) as f64);
        let u2 = (self.core.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        let radius = (-2.0 * u1.ln()).sqrt();
        let theta = std::f64::consts::TAU * u2;
        (radius * theta.cos(), radius * theta.sin())
    }
}

impl fmt::Debug for RngStream {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RngStream")
            .field("seed", &self.seed)
            .field("position", &self.position)
            .finish()
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// `n` i.i.d. `N(0, sigma²)` draws as an `n x 1` column.
///
/// # Panics
///
/// Panics if `sigma` is negative or `n` is zero.
pub fn gauss_draw(rng: &mut RngStream, n: usize, sigma: f64) -> Matrix {
    assert!(sigma >= 0.0, "sigma must be non-negative");
    let data = (0..n).map(|_| sigma * rng.next_gaussian()).collect();
    Matrix::new(n, 1, data).expect("n must be positive")
}
