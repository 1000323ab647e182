//! SISO static-gain baseline `y(k) = d·u(k) + e(k) + f(k)`.
//!
//! The gain is identified from a constant-input record whose amplitude is set
//! by the requested SNR, then a detection run with input `u_level` is tested
//! window by window with `τ = Σr² / s²` against the `χ²(L − 1)` quantile.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chi2::{self, Chi2Error, Chi2Params};
use crate::numerics::RngStream;
use crate::par::{self, Exec};
use crate::sysid::{self, FaultProfile, IoRecord, SysIdError};

#[derive(Debug, Error)]
pub enum BaselineError {
    #[error("invalid baseline configuration: {0}")]
    Config(String),
    #[error("window of {len} residuals has zero sample variance")]
    DegenerateWindow { len: usize },
    #[error("identification input has zero energy")]
    ZeroInputEnergy,
    #[error("baseline needs a single-input single-output record")]
    NotSiso,
    #[error(transparent)]
    SysId(#[from] SysIdError),
    #[error(transparent)]
    Chi2(#[from] Chi2Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BaselineConfig {
    /// True static gain.
    pub d: f64,
    pub sigma_e: f64,
    /// Constant input during detection.
    pub u_level: f64,
    /// Identification SNR in dB; fixes the constant identification input.
    pub snr_db: f64,
    /// Identification samples; `None` uses `L`.
    pub n_id: Option<usize>,
    #[serde(rename = "L", alias = "horizon")]
    pub horizon: usize,
    pub alpha: f64,
    pub fault: Option<FaultProfile>,
    pub run_length: usize,
    pub stride: usize,
    /// Skips identification and uses this gain estimate.
    pub dhat: Option<f64>,
    pub seed: u64,
}

impl Default for BaselineConfig {
    fn default() -> Self {
        Self {
            d: 2.0,
            sigma_e: 1.0,
            u_level: 2.0,
            snr_db: 20.0,
            n_id: None,
            horizon: 20,
            alpha: 0.005,
            fault: None,
            run_length: 2000,
            stride: 1,
            dhat: None,
            seed: 0,
        }
    }
}

impl BaselineConfig {
    pub fn validate(&self) -> Result<(), BaselineError> {
        let bad = |msg: String| Err(BaselineError::Config(msg));
        if !(self.sigma_e > 0.0 && self.sigma_e.is_finite()) {
            return bad(format!("sigma_e = {} must be positive", self.sigma_e));
        }
        if !self.d.is_finite() || !self.u_level.is_finite() || !self.snr_db.is_finite() {
            return bad("d, u_level and snr_db must be finite".into());
        }
        if self.horizon < 2 {
            return bad(format!("L = {} < 2", self.horizon));
        }
        if self.n_id() < 2 {
            return bad(format!("N_id = {} < 2", self.n_id()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad(format!("alpha = {} outside (0, 1)", self.alpha));
        }
        if self.stride == 0 {
            return bad("stride must be positive".into());
        }
        if self.run_length < self.horizon {
            return bad(format!(
                "run_length {} shorter than L = {}",
                self.run_length, self.horizon
            ));
        }
        if let Some(f) = self.fault {
            if f.start > f.end || f.end > self.run_length || !f.height.is_finite() {
                return bad(format!(
                    "fault [{}, {}) must satisfy 0 <= start <= end <= run_length",
                    f.start, f.end
                ));
            }
        }
        if let Some(dh) = self.dhat {
            if !dh.is_finite() {
                return bad("dhat must be finite".into());
            }
        }
        Ok(())
    }

    pub fn n_id(&self) -> usize {
        self.n_id.unwrap_or(self.horizon)
    }

    /// Constant identification amplitude achieving `snr_db`.
    pub fn u_id(&self) -> f64 {
        identification_level(self.snr_db, self.sigma_e, self.n_id())
    }

    pub fn threshold(&self) -> Result<f64, BaselineError> {
        threshold(self.horizon, self.alpha)
    }
}

/// `10·log10( Σu² / (N − 1) / σ_e² )` over the identification input.
pub fn snr_db(u_id: &[f64], sigma_e: f64) -> Result<f64, BaselineError> {
    if u_id.len() < 2 {
        return Err(BaselineError::Config(
            "SNR needs at least two samples".into(),
        ));
    }
    let energy: f64 = u_id.iter().map(|u| u * u).sum();
    Ok(10.0 * (energy / (u_id.len() - 1) as f64 / (sigma_e * sigma_e)).log10())
}

/// Constant amplitude `a` with `snr_db(a·ones(n), sigma_e) == target_db`.
pub fn identification_level(target_db: f64, sigma_e: f64, n: usize) -> f64 {
    sigma_e * (10f64.powf(target_db / 10.0) * (n as f64 - 1.0) / n as f64).sqrt()
}

/// `u_k²·σ_e² / (U_id U_idᵀ) + σ_e²`.
pub fn residual_variance(u_k: f64, u_id: &[f64], sigma_e: f64) -> Result<f64, BaselineError> {
    let v = sysid::markov_error_variance_static(u_id, sigma_e).map_err(|e| match e {
        SysIdError::ZeroInputEnergy => BaselineError::ZeroInputEnergy,
        other => other.into(),
    })?;
    Ok(u_k * u_k * v + sigma_e * sigma_e)
}

/// `d̂ = Σ y·u / Σ u²`.
pub fn estimate_gain(rec: &IoRecord) -> Result<f64, BaselineError> {
    if rec.input_dim() != 1 || rec.output_dim() != 1 {
        return Err(BaselineError::NotSiso);
    }
    let (mut yu, mut uu) = (0.0, 0.0);
    for k in 0..rec.len() {
        let (u, y) = (rec.u(k)[0], rec.y(k)[0]);
        yu += y * u;
        uu += u * u;
    }
    if uu == 0.0 {
        return Err(BaselineError::ZeroInputEnergy);
    }
    Ok(yu / uu)
}

fn static_record(
    d: f64,
    sigma_e: f64,
    u: f64,
    n: usize,
    fault: Option<&FaultProfile>,
    rng: &mut RngStream,
) -> IoRecord {
    let us = vec![u; n];
    let ys: Vec<f64> = (0..n)
        .map(|k| d * u + sigma_e * rng.next_gaussian() + fault.map_or(0.0, |f| f.value(k)))
        .collect();
    IoRecord::siso(&us, &ys).expect("equal-length siso record")
}

/// Detection record: `run_length` samples at `u_level` with the configured
/// fault.
pub fn simulate(cfg: &BaselineConfig, rng: &mut RngStream) -> IoRecord {
    static_record(
        cfg.d,
        cfg.sigma_e,
        cfg.u_level,
        cfg.run_length,
        cfg.fault.as_ref(),
        rng,
    )
}

/// Identification record: `N_id` fault-free samples at the SNR-derived level.
pub fn simulate_identification(cfg: &BaselineConfig, rng: &mut RngStream) -> IoRecord {
    static_record(cfg.d, cfg.sigma_e, cfg.u_id(), cfg.n_id(), None, rng)
}

pub fn residuals(rec: &IoRecord, dhat: f64) -> Vec<f64> {
    (0..rec.len())
        .map(|k| rec.y(k)[0] - dhat * rec.u(k)[0])
        .collect()
}

/// `τ = Σr² / s²` with `s² = Σ(r − r̄)² / (L − 1)`.
pub fn window_statistic(r: &[f64]) -> Result<f64, BaselineError> {
    let n = r.len();
    if n < 2 {
        return Err(BaselineError::Config(format!(
            "window of {n} < 2 residuals"
        )));
    }
    let mean = r.iter().sum::<f64>() / n as f64;
    let ss: f64 = r.iter().map(|v| (v - mean) * (v - mean)).sum();
    let var = ss / (n - 1) as f64;
    if var <= 0.0 {
        return Err(BaselineError::DegenerateWindow { len: n });
    }
    Ok(r.iter().map(|v| v * v).sum::<f64>() / var)
}

/// `χ²` quantile at `1 − alpha` with `L − 1` degrees of freedom.
pub fn threshold(horizon: usize, alpha: f64) -> Result<f64, BaselineError> {
    if horizon < 2 {
        return Err(BaselineError::Config(format!("L = {horizon} < 2")));
    }
    Ok(chi2::threshold_for(Chi2Params::new(
        (horizon - 1) as u32,
        alpha,
    )?)?)
}

/// End indices of the evaluated windows: `L − 1, L − 1 + stride, …`.
pub fn window_ends(len: usize, horizon: usize, stride: usize) -> impl Iterator<Item = usize> {
    let first = horizon.saturating_sub(1);
    (first..len)
        .step_by(stride.max(1))
        .take_while(move |_| len >= horizon)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub y: f64,
    pub r: f64,
    pub tau: f64,
    pub gamma: f64,
    pub alarm: bool,
}

#[derive(Debug, Clone)]
pub struct BaselineRun {
    pub dhat: f64,
    pub gamma: f64,
    pub record: IoRecord,
    pub rows: Vec<TraceRow>,
}

/// Gain estimate (or the fixed `dhat`) and the detection record used by
/// [`run`]; the fixed-point runner shares it so both see identical data.
pub fn prepare(cfg: &BaselineConfig) -> Result<(f64, IoRecord), BaselineError> {
    cfg.validate()?;
    let dhat = match cfg.dhat {
        Some(d) => d,
        None => {
            let mut rng = RngStream::derive(cfg.seed, &[0]);
            estimate_gain(&simulate_identification(cfg, &mut rng))?
        }
    };
    let mut rng = RngStream::derive(cfg.seed, &[1]);
    Ok((dhat, simulate(cfg, &mut rng)))
}

/// Identification (unless `dhat` is fixed) followed by a detection run. The
/// two phases draw from independent streams derived from `cfg.seed`.
pub fn run(cfg: &BaselineConfig) -> Result<BaselineRun, BaselineError> {
    let (dhat, record) = prepare(cfg)?;
    let gamma = cfg.threshold()?;
    let r = residuals(&record, dhat);
    let mut rows = Vec::new();
    for k in window_ends(r.len(), cfg.horizon, cfg.stride) {
        let tau = window_statistic(&r[k + 1 - cfg.horizon..=k])?;
        rows.push(TraceRow {
            k,
            y: record.y(k)[0],
            r: r[k],
            tau,
            gamma,
            alarm: tau > gamma,
        });
    }
    Ok(BaselineRun {
        dhat,
        gamma,
        record,
        rows,
    })
}

pub fn write_trace_csv<W: Write>(writer: W, rows: &[TraceRow]) -> Result<(), BaselineError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "y", "r", "tau", "gamma", "alarm"])?;
    for row in rows {
        w.write_record([
            row.k.to_string(),
            format!("{:?}", row.y),
            format!("{:?}", row.r),
            format!("{:?}", row.tau),
            format!("{:?}", row.gamma),
            u8::from(row.alarm).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepCell {
    #[serde(rename = "L")]
    pub horizon: usize,
    pub snr_db: f64,
    pub trials: usize,
    pub windows: u64,
    pub alarms: u64,
    pub far: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub cells: Vec<SweepCell>,
}

impl SweepResult {
    pub fn cell(&self, horizon: usize, snr_db: f64) -> Option<&SweepCell> {
        self.cells
            .iter()
            .find(|c| c.horizon == horizon && c.snr_db == snr_db)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<(), BaselineError> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["L", "snr_db", "trials", "windows", "alarms", "far"])?;
        for c in &self.cells {
            w.write_record([
                c.horizon.to_string(),
                format!("{:?}", c.snr_db),
                c.trials.to_string(),
                c.windows.to_string(),
                c.alarms.to_string(),
                format!("{:?}", c.far),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Fault-free trial: fresh identification and detection run, returning
/// `(windows, alarms)`.
fn far_trial(
    cfg: &BaselineConfig,
    gamma: f64,
    cell: u64,
    trial: u64,
) -> Result<(u64, u64), BaselineError> {
    let mut id_rng = RngStream::derive(cfg.seed, &[cell, trial, 0]);
    let dhat = estimate_gain(&simulate_identification(cfg, &mut id_rng))?;
    let mut det_rng = RngStream::derive(cfg.seed, &[cell, trial, 1]);
    let rec = static_record(
        cfg.d,
        cfg.sigma_e,
        cfg.u_level,
        cfg.run_length,
        None,
        &mut det_rng,
    );
    let r = residuals(&rec, dhat);
    let (mut windows, mut alarms) = (0u64, 0u64);
    for k in window_ends(r.len(), cfg.horizon, cfg.stride) {
        windows += 1;
        if window_statistic(&r[k + 1 - cfg.horizon..=k])? > gamma {
            alarms += 1;
        }
    }
    Ok((windows, alarms))
}

/// FAR over the `(L, SNR)` grid. Each trial re-identifies the gain; the fault
/// and any fixed `dhat` in `base` are ignored.
pub fn far_sweep(
    base: &BaselineConfig,
    horizons: &[usize],
    snrs: &[f64],
    trials: usize,
    exec: Exec,
) -> Result<SweepResult, BaselineError> {
    if horizons.is_empty() || snrs.is_empty() || trials == 0 {
        return Err(BaselineError::Config(
            "sweep grid and trial count must be non-empty".into(),
        ));
    }
    let mut cfgs = Vec::with_capacity(horizons.len() * snrs.len());
    for &h in horizons {
        for &s in snrs {
            let cfg = BaselineConfig {
                horizon: h,
                snr_db: s,
                fault: None,
                dhat: None,
                ..base.clone()
            };
            cfg.validate()?;
            let gamma = cfg.threshold()?;
            cfgs.push((cfg, gamma));
        }
    }
    let counts = par::try_map_indexed(exec, cfgs.len() * trials, |i| {
        let (cell, trial) = (i / trials, i % trials);
        let (cfg, gamma) = &cfgs[cell];
        far_trial(cfg, *gamma, cell as u64, trial as u64)
    })?;
    let cells = cfgs
        .iter()
        .enumerate()
        .map(|(c, (cfg, _))| {
            let (windows, alarms) = counts[c * trials..(c + 1) * trials]
                .iter()
                .fold((0, 0), |(w, a), &(wi, ai)| (w + wi, a + ai));
            SweepCell {
                horizon: cfg.horizon,
                snr_db: cfg.snr_db,
                trials,
                windows,
                alarms,
                far: alarms as f64 / windows as f64,
            }
        })
        .collect();
    Ok(SweepResult { cells })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SnrRow {
    pub snr_db: f64,
    pub trials: usize,
    pub mean_abs_err: f64,
    /// Standard error of `mean_abs_err`.
    pub std_err: f64,
}

/// Monte-Carlo `mean |d̂ − d|` per SNR.
pub fn snr_error_table(
    base: &BaselineConfig,
    snrs: &[f64],
    trials: usize,
    exec: Exec,
) -> Result<Vec<SnrRow>, BaselineError> {
    if snrs.is_empty() || trials < 2 {
        return Err(BaselineError::Config(
            "need at least one SNR and two trials".into(),
        ));
    }
    let cfgs: Vec<BaselineConfig> = snrs
        .iter()
        .map(|&s| BaselineConfig {
            snr_db: s,
            ..base.clone()
        })
        .collect();
    for c in &cfgs {
        c.validate()?;
    }
    let errs = par::try_map_indexed(exec, cfgs.len() * trials, |i| {
        let (cell, trial) = (i / trials, i % trials);
        let cfg = &cfgs[cell];
        let mut rng = RngStream::derive(cfg.seed, &[cell as u64, trial as u64, 0]);
        estimate_gain(&simulate_identification(cfg, &mut rng)).map(|dh| (dh - cfg.d).abs())
    })?;
    Ok(cfgs
        .iter()
        .enumerate()
        .map(|(c, cfg)| {
            let e = &errs[c * trials..(c + 1) * trials];
            let n = trials as f64;
            let mean = e.iter().sum::<f64>() / n;
            let var = e.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
            SnrRow {
                snr_db: cfg.snr_db,
                trials,
                mean_abs_err: mean,
                std_err: (var / n).sqrt(),
            }
        })
        .collect())
}

pub fn write_snr_csv<W: Write>(writer: W, rows: &[SnrRow]) -> Result<(), BaselineError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["snr_db", "mean_abs_err", "std_err"])?;
    for r in rows {
        w.write_record([
            format!("{:?}", r.snr_db),
            format!("{:?}", r.mean_abs_err),
            format!("{:?}", r.std_err),
        ])?;
    }
    w.flush()?;
    Ok(())
}
