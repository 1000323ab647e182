//! Identification data matrices and least-squares Markov-parameter estimates.
//!
//! For past horizon `p` the regressor of output `y(k)` is
//!
//! ```text
//! [ u(k-p); y(k-p); u(k-p+1); y(k-p+1); … ; u(k-1); y(k-1); u(k) ]
//! ```
//!
//! (oldest input/output pair on top, current input last) and the parameter row
//! is `[CΦ^(p-1)B̃, CΦ^(p-1)K, …, CB̃, CK | D]` in the same order. All block
//! slicing downstream relies on this layout.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, gauss_draw, mat_mul, LinalgError, Matrix, RngStream};

#[derive(Debug, Error)]
pub enum SysIdError {
    #[error("past horizon p must be at least 1")]
    ZeroHorizon,
    #[error("record of {len} samples is too short for past horizon {p}")]
    RecordTooShort { len: usize, p: usize },
    #[error("inconsistent record: {0}")]
    Inconsistent(String),
    #[error("input has zero energy; gain is not identifiable")]
    ZeroInputEnergy,
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("csv header must list u_1..u_m followed by y_1..y_l, got {0:?}")]
    BadHeader(Vec<String>),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Sampled plant inputs (`m` channels) and outputs (`l` channels).
#[derive(Debug, Clone, PartialEq)]
pub struct IoRecord {
    m: usize,
    l: usize,
    u: Vec<f64>,
    y: Vec<f64>,
}

impl IoRecord {
    /// Builds a record from per-sample input and output vectors.
    pub fn new(u: Vec<Vec<f64>>, y: Vec<Vec<f64>>) -> Result<Self, SysIdError> {
        if u.len() != y.len() || u.is_empty() {
            return Err(SysIdError::Inconsistent(format!(
                "{} input samples vs {} output samples",
                u.len(),
                y.len()
            )));
        }
        let m = u[0].len();
        let l = y[0].len();
        if m == 0 || l == 0 {
            return Err(SysIdError::Inconsistent("empty channel set".into()));
        }
        if u.iter().any(|s| s.len() != m) || y.iter().any(|s| s.len() != l) {
            return Err(SysIdError::Inconsistent("ragged samples".into()));
        }
        Ok(Self {
            m,
            l,
            u: u.concat(),
            y: y.concat(),
        })
    }

    /// Single-input single-output record.
    pub fn siso(u: &[f64], y: &[f64]) -> Result<Self, SysIdError> {
        if u.len() != y.len() || u.is_empty() {
            return Err(SysIdError::Inconsistent(format!(
                "{} input samples vs {} output samples",
                u.len(),
                y.len()
            )));
        }
        Ok(Self {
            m: 1,
            l: 1,
            u: u.to_vec(),
            y: y.to_vec(),
        })
    }

    pub fn len(&self) -> usize {
        self.u.len() / self.m
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn output_dim(&self) -> usize {
        self.l
    }

    pub fn u(&self, k: usize) -> &[f64] {
        &self.u[k * self.m..(k + 1) * self.m]
    }

    pub fn y(&self, k: usize) -> &[f64] {
        &self.y[k * self.l..(k + 1) * self.l]
    }

    /// Sub-record of samples `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            m: self.m,
            l: self.l,
            u: self.u[start * self.m..end * self.m].to_vec(),
            y: self.y[start * self.l..end * self.l].to_vec(),
        }
    }

    /// Reads the `u_1..u_m, y_1..y_l` CSV schema (header required).
    pub fn read_csv<R: Read>(reader: R) -> Result<Self, SysIdError> {
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(reader);
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
        let m = header.iter().take_while(|h| h.starts_with("u_")).count();
        let l = header.len() - m;
        let expected: Vec<String> = (1..=m)
            .map(|i| format!("u_{i}"))
            .chain((1..=l).map(|i| format!("y_{i}")))
            .collect();
        if m == 0 || l == 0 || header != expected {
            return Err(SysIdError::BadHeader(header));
        }
        let mut u = Vec::new();
        let mut y = Vec::new();
        for row in rdr.records() {
            let row = row?;
            let vals = row
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|e| {
                        SysIdError::Inconsistent(format!(
                            "line {:?}: {s:?}: {e}",
                            row.position().map(|p| p.line())
                        ))
                    })
                })
                .collect::<Result<Vec<f64>, _>>()?;
            if vals.len() != m + l {
                return Err(SysIdError::Inconsistent("wrong number of fields".into()));
            }
            u.extend_from_slice(&vals[..m]);
            y.extend_from_slice(&vals[m..]);
        }
        if u.is_empty() {
            return Err(SysIdError::Inconsistent("no samples".into()));
        }
        Ok(Self { m, l, u, y })
    }

    pub fn read_csv_path(path: &Path) -> Result<Self, SysIdError> {
        Self::read_csv(std::fs::File::open(path)?)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), SysIdError> {
        let mut w = csv::Writer::from_writer(writer);
        let header: Vec<String> = (1..=self.m)
            .map(|i| format!("u_{i}"))
            .chain((1..=self.l).map(|i| format!("y_{i}")))
            .collect();
        w.write_record(&header)?;
        for k in 0..self.len() {
            let fields: Vec<String> = self
                .u(k)
                .iter()
                .chain(self.y(k))
                .map(|v| format!("{v:?}"))
                .collect();
            w.write_record(&fields)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Number of regressor rows `p·(m+l) + m`.
pub fn regressor_dim(p: usize, m: usize, l: usize) -> usize {
    p * (m + l) + m
}

/// Regressor column for output sample `k` (requires `k ≥ p`).
pub fn regressor(rec: &IoRecord, k: usize, p: usize) -> Vec<f64> {
    debug_assert!(k >= p);
    let mut col = Vec::with_capacity(regressor_dim(p, rec.m, rec.l));
    for t in k - p..k {
        col.extend_from_slice(rec.u(t));
        col.extend_from_slice(rec.y(t));
    }
    col.extend_from_slice(rec.u(k));
    col
}

/// `(Y_id, Z_id)`: one column per output sample `k = p..N-1`.
pub fn build_data_matrices(rec: &IoRecord, p: usize) -> Result<(Matrix, Matrix), SysIdError> {
    if p == 0 {
        return Err(SysIdError::ZeroHorizon);
    }
    let n = rec.len();
    if n <= p {
        return Err(SysIdError::RecordTooShort { len: n, p });
    }
    let cols = n - p;
    let rows = regressor_dim(p, rec.m, rec.l);
    let mut y = Matrix::zeros(rec.l, cols);
    let mut z = Matrix::zeros(rows, cols);
    for (j, k) in (p..n).enumerate() {
        for (i, &v) in rec.y(k).iter().enumerate() {
            y[(i, j)] = v;
        }
        for (i, v) in regressor(rec, k, p).into_iter().enumerate() {
            z[(i, j)] = v;
        }
    }
    Ok((y, z))
}

/// Identified parameter row `Ξ̂` with its block layout.
#[derive(Debug, Clone, PartialEq)]
pub struct MarkovEstimate {
    xi_hat: Matrix,
    p: usize,
    m: usize,
    l: usize,
}

impl MarkovEstimate {
    pub fn new(xi_hat: Matrix, p: usize, m: usize, l: usize) -> Result<Self, SysIdError> {
        if p == 0 {
            return Err(SysIdError::ZeroHorizon);
        }
        if xi_hat.shape() != (l, regressor_dim(p, m, l)) {
            return Err(SysIdError::Inconsistent(format!(
                "parameter block {:?} does not match p={p}, m={m}, l={l}",
                xi_hat.shape()
            )));
        }
        Ok(Self { xi_hat, p, m, l })
    }

    /// Assembles `Ξ` from `D` and the lag-ordered sequences `CΦ^jB̃`, `CΦ^jK`
    /// (`j = 0..p-1`).
    pub fn from_blocks(d: &Matrix, b: &[Matrix], k: &[Matrix]) -> Result<Self, SysIdError> {
        let p = b.len();
        if p == 0 || k.len() != p {
            return Err(SysIdError::Inconsistent("need p ≥ 1 B and K blocks".into()));
        }
        let (l, m) = d.shape();
        let mut xi = Matrix::zeros(l, regressor_dim(p, m, l));
        for j in 0..p {
            if b[j].shape() != (l, m) || k[j].shape() != (l, l) {
                return Err(SysIdError::Inconsistent(format!(
                    "block {j} has wrong shape"
                )));
            }
            let off = (p - 1 - j) * (m + l);
            xi.set_block(0, off, &b[j]);
            xi.set_block(0, off + m, &k[j]);
        }
        xi.set_block(0, p * (m + l), d);
        Ok(Self {
            xi_hat: xi,
            p,
            m,
            l,
        })
    }

    pub fn xi_hat(&self) -> &Matrix {
        &self.xi_hat
    }

    pub fn past_horizon(&self) -> usize {
        self.p
    }

    pub fn input_dim(&self) -> usize {
        self.m
    }

    pub fn output_dim(&self) -> usize {
        self.l
    }

    pub fn regressor_dim(&self) -> usize {
        self.xi_hat.cols()
    }

    pub fn d(&self) -> Matrix {
        self.xi_hat
            .block(0, self.p * (self.m + self.l), self.l, self.m)
    }

    /// `CΦ^j B̃` for lag `j < p`.
    pub fn b_block(&self, j: usize) -> Matrix {
        assert!(j < self.p);
        let off = (self.p - 1 - j) * (self.m + self.l);
        self.xi_hat.block(0, off, self.l, self.m)
    }

    /// `CΦ^j K` for lag `j < p`.
    pub fn k_block(&self, j: usize) -> Matrix {
        assert!(j < self.p);
        let off = (self.p - 1 - j) * (self.m + self.l) + self.m;
        self.xi_hat.block(0, off, self.l, self.l)
    }
}

/// `Ξ̂ = Y_id · Z_id†`.
pub fn estimate_markov(y: &Matrix, z: &Matrix, p: usize) -> Result<MarkovEstimate, SysIdError> {
    if p == 0 {
        return Err(SysIdError::ZeroHorizon);
    }
    let l = y.rows();
    let rows = z.rows();
    if rows < p * l || !(rows - p * l).is_multiple_of(p + 1) {
        return Err(SysIdError::Inconsistent(format!(
            "{rows} regressor rows cannot hold p={p} lags of l={l} outputs"
        )));
    }
    let m = (rows - p * l) / (p + 1);
    let xi = numerics::lstsq(y, z)?;
    MarkovEstimate::new(xi, p, m, l)
}

/// `(Z_id Z_idᵀ)⁻¹`, exactly symmetric.
#[derive(Debug, Clone, PartialEq)]
pub struct GramInverse {
    g: Matrix,
}

impl GramInverse {
    pub fn from_matrix(g: Matrix) -> Result<Self, SysIdError> {
        if !g.is_square() {
            return Err(LinalgError::NotSquare {
                rows: g.rows(),
                cols: g.cols(),
            }
            .into());
        }
        numerics::chol(&g)?;
        Ok(Self { g })
    }

    pub fn matrix(&self) -> &Matrix {
        &self.g
    }

    pub fn dim(&self) -> usize {
        self.g.rows()
    }
}

pub fn gram_inverse(z: &Matrix) -> Result<GramInverse, SysIdError> {
    let gram = mat_mul(z, &z.transpose())?;
    Ok(GramInverse {
        g: numerics::spd_inverse(&gram)?,
    })
}

/// `σ_e² / (U_id U_idᵀ)` for a single-input static gain estimate.
pub fn markov_error_variance_static(u_id: &[f64], sigma_e: f64) -> Result<f64, SysIdError> {
    let energy: f64 = u_id.iter().map(|u| u * u).sum();
    if energy == 0.0 || !energy.is_finite() {
        return Err(SysIdError::ZeroInputEnergy);
    }
    Ok(sigma_e * sigma_e / energy)
}

/// Sample covariance of the identification residuals `Y − Ξ̂·Z`, normalized by
/// `columns − regressors` (or by `columns` when that would be non-positive).
/// A convenience estimate of `Σ_e` when it is not known a priori.
pub fn estimate_innovation_covariance(
    y: &Matrix,
    z: &Matrix,
    markov: &MarkovEstimate,
) -> Result<Matrix, SysIdError> {
    let e = y.sub(&mat_mul(markov.xi_hat(), z)?)?;
    let cols = e.cols();
    let dof = if cols > z.rows() {
        cols - z.rows()
    } else {
        cols
    };
    let mut s = mat_mul(&e, &e.transpose())?.scale(1.0 / dof as f64);
    s.symmetrize();
    Ok(s)
}

/// Everything one identification pass produces.
#[derive(Debug, Clone)]
pub struct Identification {
    pub markov: MarkovEstimate,
    pub gram: GramInverse,
    pub sigma_e_hat: Matrix,
}

pub fn identify(rec: &IoRecord, p: usize) -> Result<Identification, SysIdError> {
    let (y, z) = build_data_matrices(rec, p)?;
    let markov = estimate_markov(&y, &z, p)?;
    let gram = gram_inverse(&z)?;
    let sigma_e_hat = estimate_innovation_covariance(&y, &z, &markov)?;
    Ok(Identification {
        markov,
        gram,
        sigma_e_hat,
    })
}

/// Additive output fault of constant height on samples `start..end`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FaultProfile {
    pub start: usize,
    pub end: usize,
    pub height: f64,
}

impl FaultProfile {
    pub fn value(&self, k: usize) -> f64 {
        if (self.start..self.end).contains(&k) {
            self.height
        } else {
            0.0
        }
    }

    pub fn contains(&self, k: usize) -> bool {
        (self.start..self.end).contains(&k)
    }
}

/// Innovation-form plant
/// `x(k+1) = A x(k) + B u(k) + K e(k)`, `y(k) = C x(k) + D u(k) + e(k)`,
/// with `e ~ N(0, Σ_e)`.
#[derive(Debug, Clone)]
pub struct InnovationModel {
    pub a: Matrix,
    pub b: Matrix,
    pub c: Matrix,
    pub d: Matrix,
    pub k: Matrix,
    sigma_e: Matrix,
    sigma_e_factor: Matrix,
}

impl InnovationModel {
    pub fn new(
        a: Matrix,
        b: Matrix,
        c: Matrix,
        d: Matrix,
        k: Matrix,
        sigma_e: Matrix,
    ) -> Result<Self, SysIdError> {
        let n = a.rows();
        let m = b.cols();
        let l = c.rows();
        let ok = a.shape() == (n, n)
            && b.shape() == (n, m)
            && c.shape() == (l, n)
            && d.shape() == (l, m)
            && k.shape() == (n, l)
            && sigma_e.shape() == (l, l);
        if !ok {
            return Err(SysIdError::Inconsistent(
                "state-space shapes disagree".into(),
            ));
        }
        let sigma_e_factor = if sigma_e.max_abs() == 0.0 {
            Matrix::zeros(l, l)
        } else {
            numerics::chol(&sigma_e)?
        };
        Ok(Self {
            a,
            b,
            c,
            d,
            k,
            sigma_e,
            sigma_e_factor,
        })
    }

    /// Builds the plant from its one-step predictor `(Φ, B̃, C, D, K)` using
    /// `A = Φ + KC`, `B = B̃ + KD`.
    pub fn from_predictor(
        phi: Matrix,
        b_tilde: Matrix,
        c: Matrix,
        d: Matrix,
        k: Matrix,
        sigma_e: Matrix,
    ) -> Result<Self, SysIdError> {
        let a = phi.add(&mat_mul(&k, &c)?)?;
        let b = b_tilde.add(&mat_mul(&k, &d)?)?;
        Self::new(a, b, c, d, k, sigma_e)
    }

    pub fn input_dim(&self) -> usize {
        self.b.cols()
    }

    pub fn output_dim(&self) -> usize {
        self.c.rows()
    }

    pub fn sigma_e(&self) -> &Matrix {
        &self.sigma_e
    }

    pub fn phi(&self) -> Matrix {
        self.a
            .sub(&mat_mul(&self.k, &self.c).expect("shapes checked"))
            .expect("shapes checked")
    }

    pub fn b_tilde(&self) -> Matrix {
        self.b
            .sub(&mat_mul(&self.k, &self.d).expect("shapes checked"))
            .expect("shapes checked")
    }

    /// True parameter row `[CΦ^(p-1)B̃, CΦ^(p-1)K, …, CB̃, CK | D]`.
    pub fn markov(&self, p: usize) -> MarkovEstimate {
        let phi = self.phi();
        let bt = self.b_tilde();
        let mut cphi = self.c.clone();
        let mut b = Vec::with_capacity(p);
        let mut k = Vec::with_capacity(p);
        for _ in 0..p {
            b.push(mat_mul(&cphi, &bt).expect("shapes checked"));
            k.push(mat_mul(&cphi, &self.k).expect("shapes checked"));
            cphi = mat_mul(&cphi, &phi).expect("shapes checked");
        }
        MarkovEstimate::from_blocks(&self.d, &b, &k).expect("shapes checked")
    }

    /// Simulates from a zero initial state, adding `fault` to every output
    /// channel of the measured signal.
    pub fn simulate(
        &self,
        inputs: &[Vec<f64>],
        rng: &mut RngStream,
        fault: Option<&FaultProfile>,
    ) -> Result<IoRecord, SysIdError> {
        let n = self.a.rows();
        let l = self.output_dim();
        let mut x = Matrix::zeros(n, 1);
        let mut ys = Vec::with_capacity(inputs.len());
        for (t, u) in inputs.iter().enumerate() {
            if u.len() != self.input_dim() {
                return Err(SysIdError::Inconsistent("input dimension".into()));
            }
            let u = Matrix::column(u);
            let w = gauss_draw(rng, l, 1.0);
            let e = mat_mul(&self.sigma_e_factor, &w)?;
            let y = mat_mul(&self.c, &x)?.add(&mat_mul(&self.d, &u)?)?.add(&e)?;
            x = mat_mul(&self.a, &x)?
                .add(&mat_mul(&self.b, &u)?)?
                .add(&mat_mul(&self.k, &e)?)?;
            let f = fault.map_or(0.0, |f| f.value(t));
            ys.push(y.as_slice().iter().map(|v| v + f).collect());
        }
        IoRecord::new(inputs.to_vec(), ys)
    }
}

/// White Gaussian excitation, `n` samples of `m` channels with std `sigma`.
pub fn white_inputs(rng: &mut RngStream, n: usize, m: usize, sigma: f64) -> Vec<Vec<f64>> {
    (0..n)
        .map(|_| (0..m).map(|_| sigma * rng.next_gaussian()).collect())
        .collect()
}
