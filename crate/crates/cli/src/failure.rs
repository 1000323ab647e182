//! Exit-code classes: 2 usage or I/O, 3 data or numerical, 4 configuration.

use std::fmt;
use std::path::Path;
use std::process::ExitCode;

use rrg_core::baseline::BaselineError;
use rrg_core::chi2::Chi2Error;
use rrg_core::fixedpoint::FxError;
use rrg_core::numerics::LinalgError;
use rrg_core::residual::ResidualError;
use rrg_core::sysid::SysIdError;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Kind {
    Usage = 2,
    Data = 3,
    Config = 4,
}

#[derive(Debug)]
pub struct Failure {
    pub kind: Kind,
    pub err: anyhow::Error,
}

impl Failure {
    pub fn new(kind: Kind, err: impl Into<anyhow::Error>) -> Self {
        Self {
            kind,
            err: err.into(),
        }
    }

    pub fn usage(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Usage, anyhow::anyhow!("{msg}"))
    }

    pub fn data(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Data, anyhow::anyhow!("{msg}"))
    }

    pub fn config(msg: impl fmt::Display) -> Self {
        Self::new(Kind::Config, anyhow::anyhow!("{msg}"))
    }

    /// Prefixes the message, keeping the class.
    pub fn context(self, ctx: impl fmt::Display + Send + Sync + 'static) -> Self {
        Self {
            kind: self.kind,
            err: self.err.context(ctx),
        }
    }

    pub fn exit_code(&self) -> ExitCode {
        ExitCode::from(self.kind as u8)
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#}", self.err)
    }
}

pub fn io_error(path: &Path, action: &str, e: std::io::Error) -> Failure {
    Failure::usage(format!("cannot {action} {}: {e}", path.display()))
}

fn linalg_kind(_: &LinalgError) -> Kind {
    Kind::Data
}

fn chi2_kind(e: &Chi2Error) -> Kind {
    match e {
        Chi2Error::InvalidAlpha(_) | Chi2Error::InvalidDof(_) => Kind::Config,
        _ => Kind::Data,
    }
}

fn sysid_kind(e: &SysIdError) -> Kind {
    match e {
        SysIdError::ZeroHorizon => Kind::Config,
        SysIdError::Io(_) => Kind::Usage,
        SysIdError::Linalg(l) => linalg_kind(l),
        _ => Kind::Data,
    }
}

fn baseline_kind(e: &BaselineError) -> Kind {
    match e {
        BaselineError::Config(_) => Kind::Config,
        BaselineError::SysId(s) => sysid_kind(s),
        BaselineError::Chi2(c) => chi2_kind(c),
        BaselineError::Io(_) => Kind::Usage,
        _ => Kind::Data,
    }
}

fn residual_kind(e: &ResidualError) -> Kind {
    match e {
        ResidualError::Config(_) => Kind::Config,
        ResidualError::Chi2(c) => chi2_kind(c),
        ResidualError::Io(_) => Kind::Usage,
        _ => Kind::Data,
    }
}

fn fx_kind(e: &FxError) -> Kind {
    match e {
        FxError::InvalidFormat(_)
        | FxError::MissingFormat(_)
        | FxError::UnknownVariable(_)
        | FxError::Json(_) => Kind::Config,
        FxError::Baseline(b) => baseline_kind(b),
        FxError::Io(_) => Kind::Usage,
        _ => Kind::Data,
    }
}

macro_rules! classify_from {
    ($($ty:ty => $f:ident),* $(,)?) => {$(
        impl From<$ty> for Failure {
            fn from(e: $ty) -> Self {
                Self::new($f(&e), e)
            }
        }
    )*};
}

classify_from!(
    LinalgError => linalg_kind,
    Chi2Error => chi2_kind,
    SysIdError => sysid_kind,
    BaselineError => baseline_kind,
    ResidualError => residual_kind,
    FxError => fx_kind,
);
