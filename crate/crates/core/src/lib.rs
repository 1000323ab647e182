//! Robust residual generation for fault detection in identified linear
//! systems, a scalar baseline detector and a fixed-point dataflow model of it.

// `!(x <= y)` is used deliberately so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod baseline;
pub mod chi2;
pub mod fixedpoint;
pub mod numerics;
pub mod par;
pub mod residual;
pub mod sysid;

pub use par::Exec;

/// Any error raised by this crate.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Linalg(#[from] numerics::LinalgError),
    #[error(transparent)]
    Chi2(#[from] chi2::Chi2Error),
    #[error(transparent)]
    SysId(#[from] sysid::SysIdError),
    #[error(transparent)]
    Residual(#[from] residual::ResidualError),
    #[error(transparent)]
    Baseline(#[from] baseline::BaselineError),
    #[error(transparent)]
    Fx(#[from] fixedpoint::FxError),
}
