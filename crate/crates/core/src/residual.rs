//! Lumped-VARX residual generation and the whitened chi-squared test.
//!
//! Over a window of `L` samples ending at `k` the stacked outputs satisfy
//!
//! ```text
//! y_win = H·z_past + T_u·u_win + T_y·y_win + e_win   (+ neglected CΦ^p bias)
//! ```
//!
//! where `z_past` holds the `p` input/output pairs preceding the window. The
//! residual `r = y_win − T_y·y_win − H·z_past − T_u·u_win` has covariance
//! `(Z_olᵀ·(Z_id Z_idᵀ)⁻¹·Z_ol + I_L) ⊗ Σ_e`, whose identification-error term
//! makes the test robust to the finite identification record.
//!
//! Block `(i, j)` of the Toeplitz operators carries the Markov parameter for
//! lag `i − j − 1` when that lag is below `p`, and is zero otherwise: each
//! window row is its own truncated `p`-lag predictor.

use std::collections::VecDeque;
use std::io::Write;

use thiserror::Error;

use crate::chi2::{self, Chi2Error, Chi2Params};
use crate::numerics::{self, kron, mat_mul, LinalgError, Matrix};
use crate::sysid::{GramInverse, IoRecord, MarkovEstimate};

#[derive(Debug, Error)]
pub enum ResidualError {
    #[error("invalid detector configuration: {0}")]
    Config(String),
    #[error("window not full: have {have} of {need} samples")]
    NotReady { have: usize, need: usize },
    #[error("sample dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("record of {len} samples is shorter than L + p = {need}")]
    RecordTooShort { len: usize, need: usize },
    #[error(transparent)]
    Linalg(#[from] LinalgError),
    #[error(transparent)]
    Chi2(#[from] Chi2Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

/// Detection horizon, past horizon, FAR target, dimensions and `Σ_e`.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectorConfig {
    pub horizon: usize,
    pub past: usize,
    pub alpha: f64,
    pub m: usize,
    pub l: usize,
    pub sigma_e: Matrix,
}

impl DetectorConfig {
    pub fn new(
        horizon: usize,
        past: usize,
        alpha: f64,
        m: usize,
        l: usize,
        sigma_e: Matrix,
    ) -> Result<Self, ResidualError> {
        if horizon < 2 {
            return Err(ResidualError::Config(format!("L = {horizon} < 2")));
        }
        if past < 1 {
            return Err(ResidualError::Config("p must be at least 1".into()));
        }
        if m == 0 || l == 0 {
            return Err(ResidualError::Config(
                "empty input or output dimension".into(),
            ));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(ResidualError::Config(format!(
                "alpha {alpha} outside (0, 1)"
            )));
        }
        if sigma_e.shape() != (l, l) || sigma_e.asymmetry() > 1e-12 {
            return Err(ResidualError::Config(
                "Σ_e must be a symmetric l x l matrix".into(),
            ));
        }
        numerics::chol(&sigma_e)?;
        Ok(Self {
            horizon,
            past,
            alpha,
            m,
            l,
            sigma_e,
        })
    }

    /// Degrees of freedom used for the threshold, `(L − 1)·l`.
    pub fn dof(&self) -> u32 {
        ((self.horizon - 1) * self.l) as u32
    }

    pub fn threshold(&self) -> Result<f64, ResidualError> {
        Ok(chi2::threshold_for(Chi2Params::new(
            self.dof(),
            self.alpha,
        )?)?)
    }

    pub fn regressor_dim(&self) -> usize {
        self.past * (self.m + self.l) + self.m
    }

    fn check_markov(&self, xi: &MarkovEstimate) -> Result<(), ResidualError> {
        if xi.past_horizon() != self.past || xi.input_dim() != self.m || xi.output_dim() != self.l {
            return Err(ResidualError::Config(format!(
                "Markov estimate (p={}, m={}, l={}) does not match detector (p={}, m={}, l={})",
                xi.past_horizon(),
                xi.input_dim(),
                xi.output_dim(),
                self.past,
                self.m,
                self.l
            )));
        }
        Ok(())
    }
}

/// `H_z^{L,p}`, `T_u^L` and `T_y^L`.
#[derive(Debug, Clone, PartialEq)]
pub struct ToeplitzBlocks {
    pub h: Matrix,
    pub tu: Matrix,
    pub ty: Matrix,
}

pub fn assemble_blocks(
    xi: &MarkovEstimate,
    cfg: &DetectorConfig,
) -> Result<ToeplitzBlocks, ResidualError> {
    assemble_blocks_for_horizon(xi, cfg.horizon).and_then(|b| cfg.check_markov(xi).map(|()| b))
}

/// Same as [`assemble_blocks`] without a full detector configuration; also
/// accepts `L = 1`.
pub fn assemble_blocks_for_horizon(
    xi: &MarkovEstimate,
    horizon: usize,
) -> Result<ToeplitzBlocks, ResidualError> {
    if horizon == 0 {
        return Err(ResidualError::Config("L must be positive".into()));
    }
    let (p, m, l) = (xi.past_horizon(), xi.input_dim(), xi.output_dim());
    let b: Vec<Matrix> = (0..p).map(|j| xi.b_block(j)).collect();
    let k: Vec<Matrix> = (0..p).map(|j| xi.k_block(j)).collect();
    let d = xi.d();

    let mut h = Matrix::zeros(horizon * l, p * (m + l));
    let mut tu = Matrix::zeros(horizon * l, horizon * m);
    let mut ty = Matrix::zeros(horizon * l, horizon * l);
    for i in 0..horizon {
        // past pair q sits at lag i + p - q - 1
        for q in i..p {
            let lag = i + p - q - 1;
            h.set_block(i * l, q * (m + l), &b[lag]);
            h.set_block(i * l, q * (m + l) + m, &k[lag]);
        }
        tu.set_block(i * l, i * m, &d);
        for j in 0..i {
            let lag = i - j - 1;
            if lag < p {
                tu.set_block(i * l, j * m, &b[lag]);
                ty.set_block(i * l, j * l, &k[lag]);
            }
        }
    }
    Ok(ToeplitzBlocks { h, tu, ty })
}

/// Sliding window of the last `L + p` samples and the online regressors
/// `Z_ol`, one column per window output.
#[derive(Debug, Clone)]
pub struct ResidualState {
    horizon: usize,
    past: usize,
    m: usize,
    l: usize,
    samples: VecDeque<(Vec<f64>, Vec<f64>)>,
    zol: VecDeque<Vec<f64>>,
    pushed: usize,
}

impl ResidualState {
    pub fn new(horizon: usize, past: usize, m: usize, l: usize) -> Self {
        Self {
            horizon,
            past,
            m,
            l,
            samples: VecDeque::with_capacity(horizon + past + 1),
            zol: VecDeque::with_capacity(horizon + 1),
            pushed: 0,
        }
    }

    pub fn for_config(cfg: &DetectorConfig) -> Self {
        Self::new(cfg.horizon, cfg.past, cfg.m, cfg.l)
    }

    /// Builds the state directly from the last `L + p` samples of `window`.
    pub fn from_window(
        horizon: usize,
        past: usize,
        window: &[(Vec<f64>, Vec<f64>)],
    ) -> Result<Self, ResidualError> {
        let need = horizon + past;
        if window.len() < need {
            return Err(ResidualError::NotReady {
                have: window.len(),
                need,
            });
        }
        let window = &window[window.len() - need..];
        let m = window[0].0.len();
        let l = window[0].1.len();
        let samples: VecDeque<_> = window.iter().cloned().collect();
        let zol = (past..need)
            .map(|t| {
                let mut col = Vec::with_capacity(past * (m + l) + m);
                for (u, y) in &window[t - past..t] {
                    col.extend_from_slice(u);
                    col.extend_from_slice(y);
                }
                col.extend_from_slice(&window[t].0);
                col
            })
            .collect();
        Ok(Self {
            horizon,
            past,
            m,
            l,
            samples,
            zol,
            pushed: need,
        })
    }

    /// Retires the oldest sample, appends the newest and forms the newest
    /// `Z_ol` column from the `p` samples preceding it.
    pub fn push_sample(&mut self, u: &[f64], y: &[f64]) -> Result<(), ResidualError> {
        if u.len() != self.m {
            return Err(ResidualError::Dimension {
                expected: self.m,
                got: u.len(),
            });
        }
        if y.len() != self.l {
            return Err(ResidualError::Dimension {
                expected: self.l,
                got: y.len(),
            });
        }
        if self.samples.len() >= self.past {
            let mut col = Vec::with_capacity(self.past * (self.m + self.l) + self.m);
            for (pu, py) in self.samples.iter().skip(self.samples.len() - self.past) {
                col.extend_from_slice(pu);
                col.extend_from_slice(py);
            }
            col.extend_from_slice(u);
            if self.zol.len() == self.horizon {
                self.zol.pop_front();
            }
            self.zol.push_back(col);
        }
        if self.samples.len() == self.horizon + self.past {
            self.samples.pop_front();
        }
        self.samples.push_back((u.to_vec(), y.to_vec()));
        self.pushed += 1;
        Ok(())
    }

    pub fn is_ready(&self) -> bool {
        self.samples.len() == self.horizon + self.past
    }

    /// Total samples pushed since creation.
    pub fn pushed(&self) -> usize {
        self.pushed
    }

    fn ensure_ready(&self) -> Result<(), ResidualError> {
        if self.is_ready() {
            Ok(())
        } else {
            Err(ResidualError::NotReady {
                have: self.samples.len(),
                need: self.horizon + self.past,
            })
        }
    }

    /// `Z_ol`, shape `(p·(m+l) + m) x L`.
    pub fn zol(&self) -> Result<Matrix, ResidualError> {
        self.ensure_ready()?;
        let rows = self.past * (self.m + self.l) + self.m;
        let mut z = Matrix::zeros(rows, self.horizon);
        for (j, col) in self.zol.iter().enumerate() {
            for (i, &v) in col.iter().enumerate() {
                z[(i, j)] = v;
            }
        }
        Ok(z)
    }

    pub fn zol_columns(&self) -> impl Iterator<Item = &[f64]> {
        self.zol.iter().map(Vec::as_slice)
    }

    /// Stacked `p` input/output pairs preceding the window.
    pub fn z_past(&self) -> Result<Matrix, ResidualError> {
        self.ensure_ready()?;
        let v: Vec<f64> = self
            .samples
            .iter()
            .take(self.past)
            .flat_map(|(u, y)| u.iter().chain(y).copied())
            .collect();
        Ok(Matrix::column(&v))
    }

    pub fn u_window(&self) -> Result<Matrix, ResidualError> {
        self.ensure_ready()?;
        let v: Vec<f64> = self
            .samples
            .iter()
            .skip(self.past)
            .flat_map(|(u, _)| u.iter().copied())
            .collect();
        Ok(Matrix::column(&v))
    }

    pub fn y_window(&self) -> Result<Matrix, ResidualError> {
        self.ensure_ready()?;
        let v: Vec<f64> = self
            .samples
            .iter()
            .skip(self.past)
            .flat_map(|(_, y)| y.iter().copied())
            .collect();
        Ok(Matrix::column(&v))
    }
}

/// `r = y_win − T_y·y_win − H·z_past − T_u·u_win`, an `L·l x 1` column.
pub fn compute_residual(
    state: &ResidualState,
    blocks: &ToeplitzBlocks,
) -> Result<Matrix, ResidualError> {
    let y = state.y_window()?;
    let u = state.u_window()?;
    let z = state.z_past()?;
    let r = y
        .sub(&mat_mul(&blocks.ty, &y)?)?
        .sub(&mat_mul(&blocks.h, &z)?)?
        .sub(&mat_mul(&blocks.tu, &u)?)?;
    Ok(r)
}

/// `(Z_olᵀ·G·Z_ol + I_L) ⊗ Σ_e`.
pub fn residual_covariance(
    state: &ResidualState,
    gram: &GramInverse,
    cfg: &DetectorConfig,
) -> Result<Matrix, ResidualError> {
    let zol = state.zol()?;
    covariance_from_zol(&zol, gram, &cfg.sigma_e)
}

pub fn covariance_from_zol(
    zol: &Matrix,
    gram: &GramInverse,
    sigma_e: &Matrix,
) -> Result<Matrix, ResidualError> {
    if gram.dim() != zol.rows() {
        return Err(ResidualError::Dimension {
            expected: gram.dim(),
            got: zol.rows(),
        });
    }
    let inner = mat_mul(&zol.transpose(), &mat_mul(gram.matrix(), zol)?)?;
    let mut s = inner.add(&Matrix::identity(zol.cols()))?;
    s.symmetrize();
    let sigma = kron(&s, sigma_e);
    numerics::chol(&sigma)?;
    Ok(sigma)
}

/// `τ = ‖Σ^(−1/2)·r‖²`, evaluated by a Cholesky solve.
pub fn test_statistic(r: &Matrix, sigma: &Matrix) -> Result<f64, ResidualError> {
    Ok(numerics::quad_form(sigma, r)?)
}

/// Alarm iff `tau > gamma` (strict).
#[inline]
pub fn detect(tau: f64, gamma: f64) -> bool {
    tau > gamma
}

/// One evaluated window.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    /// Zero-based index of the newest sample in the window.
    pub k: usize,
    pub tau: f64,
    pub gamma: f64,
    pub alarm: bool,
}

/// Streaming detector: identified model plus sliding state.
#[derive(Debug, Clone)]
pub struct Detector {
    cfg: DetectorConfig,
    blocks: ToeplitzBlocks,
    gram: GramInverse,
    gamma: f64,
    state: ResidualState,
}

impl Detector {
    pub fn new(
        cfg: DetectorConfig,
        markov: &MarkovEstimate,
        gram: GramInverse,
    ) -> Result<Self, ResidualError> {
        cfg.check_markov(markov)?;
        if gram.dim() != cfg.regressor_dim() {
            return Err(ResidualError::Dimension {
                expected: cfg.regressor_dim(),
                got: gram.dim(),
            });
        }
        let blocks = assemble_blocks(markov, &cfg)?;
        let gamma = cfg.threshold()?;
        let state = ResidualState::for_config(&cfg);
        Ok(Self {
            cfg,
            blocks,
            gram,
            gamma,
            state,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn config(&self) -> &DetectorConfig {
        &self.cfg
    }

    pub fn blocks(&self) -> &ToeplitzBlocks {
        &self.blocks
    }

    pub fn state(&self) -> &ResidualState {
        &self.state
    }

    /// Pushes a sample; returns the window's decision once `L + p` samples
    /// have been seen.
    pub fn step(&mut self, u: &[f64], y: &[f64]) -> Result<Option<Detection>, ResidualError> {
        self.state.push_sample(u, y)?;
        if !self.state.is_ready() {
            return Ok(None);
        }
        let r = compute_residual(&self.state, &self.blocks)?;
        let sigma = residual_covariance(&self.state, &self.gram, &self.cfg)?;
        let tau = test_statistic(&r, &sigma)?;
        Ok(Some(Detection {
            k: self.state.pushed() - 1,
            tau,
            gamma: self.gamma,
            alarm: detect(tau, self.gamma),
        }))
    }

    pub fn run(&mut self, rec: &IoRecord) -> Result<Vec<Detection>, ResidualError> {
        let need = self.cfg.horizon + self.cfg.past;
        if rec.len() < need {
            return Err(ResidualError::RecordTooShort {
                len: rec.len(),
                need,
            });
        }
        let mut out = Vec::with_capacity(rec.len() + 1 - need);
        for k in 0..rec.len() {
            if let Some(d) = self.step(rec.u(k), rec.y(k))? {
                out.push(d);
            }
        }
        Ok(out)
    }
}

/// Writes the `k,tau,gamma,alarm` trace.
pub fn write_trace_csv<W: Write>(writer: W, rows: &[Detection]) -> Result<(), ResidualError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "tau", "gamma", "alarm"])?;
    for d in rows {
        w.write_record([
            d.k.to_string(),
            format!("{:?}", d.tau),
            format!("{:?}", d.gamma),
            u8::from(d.alarm).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sysid::MarkovEstimate;

    fn scalar(v: f64) -> Matrix {
        Matrix::from_diag(&[v])
    }

    fn first_order_markov(p: usize) -> MarkovEstimate {
        let b: Vec<Matrix> = (0..p).map(|j| scalar(0.5f64.powi(j as i32))).collect();
        let k: Vec<Matrix> = (0..p)
            .map(|j| scalar(0.3 * 0.5f64.powi(j as i32)))
            .collect();
        MarkovEstimate::from_blocks(&scalar(0.0), &b, &k).unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(DetectorConfig::new(1, 1, 0.01, 1, 1, scalar(1.0)).is_err());
        assert!(DetectorConfig::new(2, 0, 0.01, 1, 1, scalar(1.0)).is_err());
        assert!(DetectorConfig::new(2, 1, 0.0, 1, 1, scalar(1.0)).is_err());
        assert!(DetectorConfig::new(2, 1, 0.01, 1, 1, scalar(-1.0)).is_err());
        let cfg = DetectorConfig::new(20, 2, 0.005, 1, 1, scalar(1.0)).unwrap();
        assert_eq!(cfg.dof(), 19);
        assert!((cfg.threshold().unwrap() - 38.58).abs() < 0.01);
    }

    #[test]
    fn horizon_one_is_first_row() {
        let xi = first_order_markov(3);
        let b = assemble_blocks_for_horizon(&xi, 1).unwrap();
        assert_eq!(b.h, xi.xi_hat().block(0, 0, 1, 6));
        assert_eq!(b.tu, xi.d());
        assert_eq!(b.ty, scalar(0.0));
    }

    #[test]
    fn static_gain_blocks() {
        let zero = scalar(0.0);
        let xi = MarkovEstimate::from_blocks(
            &scalar(2.0),
            std::slice::from_ref(&zero),
            std::slice::from_ref(&zero),
        )
        .unwrap();
        let b = assemble_blocks_for_horizon(&xi, 4).unwrap();
        assert_eq!(b.h.max_abs(), 0.0);
        assert_eq!(b.ty.max_abs(), 0.0);
        assert_eq!(b.tu, Matrix::identity(4).scale(2.0));
    }

    #[test]
    fn first_order_blocks_by_hand() {
        // L = 3, p = 2; Markov pairs (B, K): lag0 (1, 0.3), lag1 (0.5, 0.15)
        let xi = first_order_markov(2);
        let b = assemble_blocks_for_horizon(&xi, 3).unwrap();
        let h = Matrix::from_rows(&[
            [0.5, 0.15, 1.0, 0.3],
            [0.0, 0.0, 0.5, 0.15],
            [0.0, 0.0, 0.0, 0.0],
        ])
        .unwrap();
        let tu = Matrix::from_rows(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.5, 1.0, 0.0]]).unwrap();
        let ty = Matrix::from_rows(&[[0.0, 0.0, 0.0], [0.3, 0.0, 0.0], [0.15, 0.3, 0.0]]).unwrap();
        assert_eq!(b.h, h);
        assert_eq!(b.tu, tu);
        assert_eq!(b.ty, ty);
    }

    #[test]
    fn lags_beyond_past_horizon_are_zero() {
        let xi = first_order_markov(1);
        let b = assemble_blocks_for_horizon(&xi, 4).unwrap();
        for i in 0..4 {
            for j in 0..4 {
                let expect_tu = if i == j {
                    0.0
                } else if i == j + 1 {
                    1.0
                } else {
                    0.0
                };
                assert_eq!(b.tu[(i, j)], expect_tu);
            }
        }
    }

    #[test]
    fn fill_contract_and_steady_state() {
        let mut s = ResidualState::new(3, 2, 1, 1);
        for i in 0..5 {
            assert!(!s.is_ready());
            assert!(matches!(
                compute_residual(
                    &s,
                    &assemble_blocks_for_horizon(&first_order_markov(2), 3).unwrap()
                ),
                Err(ResidualError::NotReady { .. })
            ));
            s.push_sample(&[1.0], &[2.0]).unwrap();
            assert_eq!(s.pushed(), i + 1);
        }
        assert!(s.is_ready());
        let z = s.zol().unwrap();
        for j in 1..3 {
            assert_eq!(z.col_vec(j), z.col_vec(0));
        }
        assert!(matches!(
            s.push_sample(&[1.0, 2.0], &[0.0]),
            Err(ResidualError::Dimension { .. })
        ));
    }

    #[test]
    fn covariance_without_online_regressors() {
        let sigma_e = Matrix::from_rows(&[[2.0, 0.5], [0.5, 1.0]]).unwrap();
        let gram = GramInverse::from_matrix(Matrix::identity(3)).unwrap();
        let zol = Matrix::zeros(3, 4);
        let s = covariance_from_zol(&zol, &gram, &sigma_e).unwrap();
        assert_eq!(s, kron(&Matrix::identity(4), &sigma_e));
    }

    #[test]
    fn scalar_covariance_matches_static_variance() {
        // σ²(z²g + 1) with z = u(k), g = 1/ΣU²
        let (u, energy, sigma2) = (2.0, 400.0, 1.0);
        let gram = GramInverse::from_matrix(scalar(1.0 / energy)).unwrap();
        let zol = Matrix::from_rows(&[[u]]).unwrap();
        let s = covariance_from_zol(&zol, &gram, &scalar(sigma2)).unwrap();
        assert!((s[(0, 0)] - (u * u * sigma2 / energy + sigma2)).abs() < 1e-15);
    }

    #[test]
    fn statistic_and_decision() {
        let r = Matrix::column(&[3.0, 4.0]);
        assert!((test_statistic(&r, &Matrix::identity(2)).unwrap() - 25.0).abs() < 1e-12);
        let zero = Matrix::column(&[0.0, 0.0]);
        assert_eq!(test_statistic(&zero, &Matrix::identity(2)).unwrap(), 0.0);
        assert!(!detect(38.58, 38.58));
        assert!(!detect(0.0, 38.58));
        assert!(detect(38.59, 38.58));
    }

    #[test]
    fn trace_csv_schema() {
        let rows = [Detection {
            k: 4,
            tau: 1.5,
            gamma: 38.5,
            alarm: false,
        }];
        let mut buf = Vec::new();
        write_trace_csv(&mut buf, &rows).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "k,tau,gamma,alarm\n4,1.5,38.5,0\n"
        );
    }
}
