//! Bit-accurate `Q(word, frac)` arithmetic and a fixed-point re-execution of
//! the baseline window statistic.
//!
//! Raw integers are kept in `i128`. Operations form the exact result in
//! sign-magnitude `u128` at the operands' natural scale, then round to the
//! destination format (nearest, ties toward +∞) and saturate.

use std::collections::{BTreeMap, VecDeque};
use std::fmt;
use std::io::{Read, Write};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::baseline::{self, BaselineConfig, BaselineError};
use crate::sysid::IoRecord;

pub const MAX_WORD: u32 = 64;
pub const FORMATS_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum FxError {
    #[error("invalid format: {0}")]
    InvalidFormat(String),
    #[error("fixed-point division by zero")]
    DivideByZero,
    #[error("range record for {0} is empty")]
    EmptyRecord(String),
    #[error("{name} needs a {word}-bit word, above the {MAX_WORD}-bit limit")]
    TooWide { name: String, word: u32 },
    #[error("no format given for variable {0}")]
    MissingFormat(String),
    #[error("unknown variable {0}")]
    UnknownVariable(String),
    #[error("window ending at sample {k} has zero variance")]
    DegenerateWindow { k: usize },
    #[error(transparent)]
    Baseline(#[from] BaselineError),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "RawFormat")]
pub struct FxFormat {
    pub signed: bool,
    pub word: u32,
    pub frac: u32,
}

#[derive(Deserialize)]
struct RawFormat {
    signed: bool,
    word: u32,
    frac: u32,
}

impl TryFrom<RawFormat> for FxFormat {
    type Error = FxError;
    fn try_from(r: RawFormat) -> Result<Self, FxError> {
        FxFormat::new(r.signed, r.word, r.frac)
    }
}

impl FxFormat {
    pub fn new(signed: bool, word: u32, frac: u32) -> Result<Self, FxError> {
        if word == 0 || word > MAX_WORD {
            return Err(FxError::InvalidFormat(format!(
                "word {word} outside 1..={MAX_WORD}"
            )));
        }
        if frac + u32::from(signed) > word {
            return Err(FxError::InvalidFormat(format!(
                "frac {frac} exceeds word {word} minus sign bit"
            )));
        }
        Ok(Self { signed, word, frac })
    }

    pub fn unsigned(word: u32, frac: u32) -> Result<Self, FxError> {
        Self::new(false, word, frac)
    }

    pub fn signed(word: u32, frac: u32) -> Result<Self, FxError> {
        Self::new(true, word, frac)
    }

    pub fn min_raw(&self) -> i128 {
        if self.signed {
            -(1i128 << (self.word - 1))
        } else {
            0
        }
    }

    pub fn max_raw(&self) -> i128 {
        if self.signed {
            (1i128 << (self.word - 1)) - 1
        } else {
            (1i128 << self.word) - 1
        }
    }

    pub fn lsb(&self) -> f64 {
        (-(self.frac as f64)).exp2()
    }

    pub fn min_value(&self) -> f64 {
        self.min_raw() as f64 * self.lsb()
    }

    pub fn max_value(&self) -> f64 {
        self.max_raw() as f64 * self.lsb()
    }

    /// Whether `x` lies inside the representable interval.
    pub fn contains(&self, x: f64) -> bool {
        x >= self.min_value() && x <= self.max_value()
    }
}

impl fmt::Display for FxFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({}, {}, {})",
            u8::from(self.signed),
            self.word,
            self.frac
        )
    }
}

/// Stored integer plus format. Equality ignores the saturation flag.
#[derive(Debug, Clone, Copy)]
pub struct FxValue {
    format: FxFormat,
    raw: i128,
    saturated: bool,
}

impl PartialEq for FxValue {
    fn eq(&self, other: &Self) -> bool {
        self.format == other.format && self.raw == other.raw
    }
}

impl Eq for FxValue {}

impl FxValue {
    /// `raw` is clamped into the format's bounds.
    pub fn from_raw(raw: i128, format: FxFormat) -> Self {
        let clamped = raw.clamp(format.min_raw(), format.max_raw());
        Self {
            format,
            raw: clamped,
            saturated: clamped != raw,
        }
    }

    pub fn format(&self) -> FxFormat {
        self.format
    }

    pub fn raw(&self) -> i128 {
        self.raw
    }

    pub fn saturated(&self) -> bool {
        self.saturated
    }

    pub fn value(&self) -> f64 {
        self.raw as f64 * self.format.lsb()
    }
}

pub fn quantize(x: f64, fmt: FxFormat) -> FxValue {
    if x.is_nan() {
        return FxValue {
            format: fmt,
            raw: 0,
            saturated: true,
        };
    }
    let scaled = x * (fmt.frac as f64).exp2();
    let floor = scaled.floor();
    let rounded = if scaled - floor >= 0.5 {
        floor + 1.0
    } else {
        floor
    };
    // Beyond ±2^120 every format saturates; avoids the float-to-int cast
    // clamping silently.
    const LIMIT: f64 = 1.329_227_995_784_916e36;
    if rounded > LIMIT {
        return sat(fmt, false);
    }
    if rounded < -LIMIT {
        return sat(fmt, true);
    }
    FxValue::from_raw(rounded as i128, fmt)
}

fn sat(fmt: FxFormat, negative: bool) -> FxValue {
    FxValue {
        format: fmt,
        raw: if negative {
            fmt.min_raw()
        } else {
            fmt.max_raw()
        },
        saturated: true,
    }
}

/// Exact intermediate: `(-1)^neg · mag · 2^(-frac)`, or a magnitude too
/// large for any format.
#[derive(Debug, Clone, Copy)]
struct Exact {
    neg: bool,
    mag: u128,
    frac: u32,
    overflow: bool,
}

impl Exact {
    fn of(v: &FxValue) -> Self {
        Self {
            neg: v.raw < 0,
            mag: v.raw.unsigned_abs(),
            frac: v.format.frac,
            overflow: false,
        }
    }

    fn into_format(self, out: FxFormat) -> FxValue {
        if self.overflow {
            return sat(out, self.neg);
        }
        let (neg, mag) = if out.frac >= self.frac {
            let s = out.frac - self.frac;
            if self.mag != 0 && (s >= 128 || self.mag.leading_zeros() < s) {
                return sat(out, self.neg);
            }
            (self.neg, if self.mag == 0 { 0 } else { self.mag << s })
        } else {
            (
                self.neg,
                round_shift(self.neg, self.mag, self.frac - out.frac),
            )
        };
        finish(neg, mag, out)
    }
}

fn finish(neg: bool, mag: u128, out: FxFormat) -> FxValue {
    if mag == 0 {
        return FxValue::from_raw(0, out);
    }
    if neg {
        if mag > out.min_raw().unsigned_abs() {
            sat(out, true)
        } else {
            FxValue::from_raw(-(mag as i128), out)
        }
    } else if mag > out.max_raw() as u128 {
        sat(out, false)
    } else {
        FxValue::from_raw(mag as i128, out)
    }
}

/// `round(±mag / 2^s)` to nearest, ties toward +∞, returned as magnitude.
fn round_shift(neg: bool, mag: u128, s: u32) -> u128 {
    if s == 0 {
        return mag;
    }
    if s > 128 {
        return 0;
    }
    let (q, rem) = if s == 128 {
        (0, mag)
    } else {
        (mag >> s, mag & ((1u128 << s) - 1))
    };
    let half = 1u128 << (s - 1);
    let up = if neg { rem > half } else { rem >= half };
    q + u128::from(up)
}

fn add_exact(a: &FxValue, b: &FxValue, negate_b: bool) -> Exact {
    let (ea, mut eb) = (Exact::of(a), Exact::of(b));
    if negate_b {
        eb.neg = !eb.neg;
    }
    let frac = ea.frac.max(eb.frac);
    // magnitudes are below 2^64 and shifts at most 64, so these fit in u128
    let ma = ea.mag << (frac - ea.frac);
    let mb = eb.mag << (frac - eb.frac);
    let (neg, mag, overflow) = if ea.neg == eb.neg {
        match ma.checked_add(mb) {
            Some(m) => (ea.neg, m, false),
            None => (ea.neg, 0, true),
        }
    } else if ma >= mb {
        (ea.neg, ma - mb, false)
    } else {
        (eb.neg, mb - ma, false)
    };
    Exact {
        neg: neg && mag != 0,
        mag,
        frac,
        overflow,
    }
}

pub fn fx_add(a: &FxValue, b: &FxValue, out: FxFormat) -> FxValue {
    add_exact(a, b, false).into_format(out)
}

pub fn fx_sub(a: &FxValue, b: &FxValue, out: FxFormat) -> FxValue {
    add_exact(a, b, true).into_format(out)
}

pub fn fx_mul(a: &FxValue, b: &FxValue, out: FxFormat) -> FxValue {
    let (ea, eb) = (Exact::of(a), Exact::of(b));
    let mag = ea.mag * eb.mag;
    Exact {
        neg: (ea.neg != eb.neg) && mag != 0,
        mag,
        frac: ea.frac + eb.frac,
        overflow: false,
    }
    .into_format(out)
}

pub fn fx_div(a: &FxValue, b: &FxValue, out: FxFormat) -> Result<FxValue, FxError> {
    if b.raw == 0 {
        return Err(FxError::DivideByZero);
    }
    let (ea, eb) = (Exact::of(a), Exact::of(b));
    let neg = ea.neg != eb.neg;
    // out raw = |a| · 2^k / |b|
    let k = out.frac as i64 + eb.frac as i64 - ea.frac as i64;
    let (q, rem, den, overflow) = if k >= 0 {
        long_division(ea.mag, k as u32, eb.mag)
    } else {
        let s = (-k) as u32;
        if s >= 128 || eb.mag.leading_zeros() < s {
            (0, 0, 1, false)
        } else {
            let den = eb.mag << s;
            (ea.mag / den, ea.mag % den, den, false)
        }
    };
    if overflow {
        return Ok(sat(out, neg));
    }
    let other = den - rem;
    let up = if neg { rem > other } else { rem >= other };
    let mag = q + u128::from(up);
    Ok(finish(neg && mag != 0, mag, out))
}

/// `(num · 2^shift) / den` bit by bit; flags a quotient beyond any format.
fn long_division(num: u128, shift: u32, den: u128) -> (u128, u128, u128, bool) {
    let bits = 128 - num.leading_zeros();
    let (mut q, mut rem) = (0u128, 0u128);
    for i in (0..bits + shift).rev() {
        let bit = if i >= shift {
            (num >> (i - shift)) & 1
        } else {
            0
        };
        rem = (rem << 1) | bit;
        q <<= 1;
        if rem >= den {
            rem -= den;
            q |= 1;
        }
        if q >> 100 != 0 {
            return (0, 0, 1, true);
        }
    }
    (q, rem, den, false)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeRecord {
    pub name: String,
    pub sim_min: f64,
    pub sim_max: f64,
    pub whole: bool,
    pub count: u64,
}

impl RangeRecord {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            sim_min: f64::INFINITY,
            sim_max: f64::NEG_INFINITY,
            whole: true,
            count: 0,
        }
    }

    pub fn record(&mut self, x: f64) {
        self.sim_min = self.sim_min.min(x);
        self.sim_max = self.sim_max.max(x);
        self.whole &= x.fract() == 0.0;
        self.count += 1;
    }

    pub fn with(mut self, x: f64) -> Self {
        self.record(x);
        self
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }
}

pub fn propose_format(rec: &RangeRecord, target_frac: u32) -> Result<FxFormat, FxError> {
    propose_format_with_static(rec, target_frac, None, None)
}

/// Like [`propose_format`], with optional user bounds that can only widen the
/// simulated range.
pub fn propose_format_with_static(
    rec: &RangeRecord,
    target_frac: u32,
    static_min: Option<f64>,
    static_max: Option<f64>,
) -> Result<FxFormat, FxError> {
    if rec.is_empty() && (static_min.is_none() || static_max.is_none()) {
        return Err(FxError::EmptyRecord(rec.name.clone()));
    }
    let lo = static_min.map_or(rec.sim_min, |s| s.min(rec.sim_min));
    let hi = static_max.map_or(rec.sim_max, |s| s.max(rec.sim_max));
    let whole = rec.whole
        && static_min.is_none_or(|s| s.fract() == 0.0)
        && static_max.is_none_or(|s| s.fract() == 0.0);
    let signed = lo < 0.0;
    let frac = if whole { 0 } else { target_frac };
    let lsb = (-(frac as f64)).exp2();
    let mut int_bits = 0u32;
    if hi > 0.0 {
        int_bits = int_bits.max(bits_for(|i| i.exp2() - lsb >= hi));
    }
    if lo < 0.0 {
        int_bits = int_bits.max(bits_for(|i| i.exp2() >= -lo));
    }
    let word = u32::from(signed) + int_bits + frac;
    if word > MAX_WORD {
        return Err(FxError::TooWide {
            name: rec.name.clone(),
            word,
        });
    }
    FxFormat::new(signed, word.max(1), frac)
}

/// Smallest integer `i ≥ 0` with `ok(i)`.
fn bits_for(ok: impl Fn(f64) -> bool) -> u32 {
    (0..=1100).find(|&i| ok(i as f64)).unwrap_or(u32::MAX / 2)
}

/// Named variables of the window-statistic dataflow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    Ym,
    R,
    RSum,
    RAvg,
    RSubAvg,
    RSubAvgSq,
    RSubAvgSqSum,
    RVar,
    RSq,
    RSqSum,
    ChiSq,
    Dhat,
    U,
    N,
    I,
    Count,
}

impl Var {
    pub const ALL: [Var; 16] = [
        Var::ChiSq,
        Var::N,
        Var::Count,
        Var::Dhat,
        Var::I,
        Var::R,
        Var::RAvg,
        Var::RSq,
        Var::RSqSum,
        Var::RSubAvg,
        Var::RSubAvgSq,
        Var::RSubAvgSqSum,
        Var::RSum,
        Var::RVar,
        Var::U,
        Var::Ym,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Var::Ym => "ym",
            Var::R => "r",
            Var::RSum => "r_sum",
            Var::RAvg => "r_avg",
            Var::RSubAvg => "r_sub_avg",
            Var::RSubAvgSq => "r_sub_avg_sq",
            Var::RSubAvgSqSum => "r_sub_avg_sq_sum",
            Var::RVar => "r_var",
            Var::RSq => "r_sq",
            Var::RSqSum => "r_sq_sum",
            Var::ChiSq => "chi_sq",
            Var::Dhat => "dhat",
            Var::U => "u",
            Var::N => "N",
            Var::I => "i",
            Var::Count => "count",
        }
    }

    fn index(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Var {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Var {
    type Err = FxError;
    fn from_str(s: &str) -> Result<Self, FxError> {
        Var::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| FxError::UnknownVariable(s.to_string()))
    }
}

/// A format entry of `formats.json`, optionally carrying user range bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FormatSpec {
    #[serde(flatten)]
    pub format: FxFormat,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub static_max: Option<f64>,
}

impl From<FxFormat> for FormatSpec {
    fn from(format: FxFormat) -> Self {
        Self {
            format,
            static_min: None,
            static_max: None,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FormatMap(pub BTreeMap<String, FormatSpec>);

#[derive(Serialize, Deserialize)]
struct FormatsFile {
    schema_version: u32,
    formats: FormatMap,
}

#[derive(Deserialize)]
#[serde(untagged)]
enum FormatsInput {
    Wrapped(FormatsFile),
    Bare(FormatMap),
}

impl FormatMap {
    /// Same format for every dataflow variable.
    pub fn uniform(fmt: FxFormat) -> Self {
        Self(
            Var::ALL
                .iter()
                .map(|v| (v.name().to_string(), fmt.into()))
                .collect(),
        )
    }

    pub fn get(&self, var: Var) -> Option<&FormatSpec> {
        self.0.get(var.name())
    }

    pub fn insert(&mut self, var: Var, spec: FormatSpec) {
        self.0.insert(var.name().to_string(), spec);
    }

    fn resolve(&self) -> Result<[FxFormat; 16], FxError> {
        for name in self.0.keys() {
            name.parse::<Var>()?;
        }
        let mut out = [FxFormat {
            signed: false,
            word: 1,
            frac: 0,
        }; 16];
        for v in Var::ALL {
            out[v.index()] = self
                .get(v)
                .ok_or_else(|| FxError::MissingFormat(v.name().to_string()))?
                .format;
        }
        Ok(out)
    }

    /// Accepts `{"schema_version": .., "formats": {..}}` or a bare map.
    pub fn read_json<R: Read>(reader: R) -> Result<Self, FxError> {
        let map = match serde_json::from_reader(reader)? {
            FormatsInput::Wrapped(f) => f.formats,
            FormatsInput::Bare(m) => m,
        };
        for name in map.0.keys() {
            name.parse::<Var>()?;
        }
        Ok(map)
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<(), FxError> {
        let file = FormatsFile {
            schema_version: FORMATS_SCHEMA_VERSION,
            formats: self.clone(),
        };
        serde_json::to_writer_pretty(writer, &file)?;
        Ok(())
    }
}

/// Proposes a format for every recorded variable; user bounds in `statics`
/// widen the proposal.
pub fn propose_formats(
    records: &[RangeRecord],
    target_frac: u32,
    statics: Option<&FormatMap>,
) -> Result<FormatMap, FxError> {
    let mut map = FormatMap::default();
    for rec in records {
        let (smin, smax) = statics
            .and_then(|m| m.0.get(&rec.name))
            .map_or((None, None), |s| (s.static_min, s.static_max));
        let format = propose_format_with_static(rec, target_frac, smin, smax)?;
        map.0.insert(
            rec.name.clone(),
            FormatSpec {
                format,
                static_min: smin,
                static_max: smax,
            },
        );
    }
    Ok(map)
}

/// Writes `ranges.csv`; `proposals` must hold an entry per record.
pub fn write_ranges_csv<W: Write>(
    writer: W,
    records: &[RangeRecord],
    proposals: &FormatMap,
) -> Result<(), FxError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record([
        "name",
        "sim_min",
        "sim_max",
        "whole",
        "count",
        "proposed_signed",
        "proposed_word",
        "proposed_frac",
    ])?;
    for rec in records {
        let p = proposals
            .0
            .get(&rec.name)
            .ok_or_else(|| FxError::MissingFormat(rec.name.clone()))?
            .format;
        w.write_record([
            rec.name.clone(),
            format!("{:?}", rec.sim_min),
            format!("{:?}", rec.sim_max),
            rec.whole.to_string(),
            rec.count.to_string(),
            u8::from(p.signed).to_string(),
            p.word.to_string(),
            p.frac.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Where an assignment lands: a recorded variable, or an unrecorded
/// temporary typed like that variable.
#[derive(Debug, Clone, Copy)]
pub enum Dst {
    Var(Var),
    Temp(Var),
}

impl Dst {
    fn var(self) -> Var {
        match self {
            Dst::Var(v) | Dst::Temp(v) => v,
        }
    }
}

/// Arithmetic domain of the dataflow: reference floats or quantized values.
pub trait Arith {
    type Value: Copy;
    fn load(&mut self, dst: Dst, x: f64) -> Self::Value;
    fn add(&mut self, dst: Dst, a: Self::Value, b: Self::Value) -> Self::Value;
    fn sub(&mut self, dst: Dst, a: Self::Value, b: Self::Value) -> Self::Value;
    fn mul(&mut self, dst: Dst, a: Self::Value, b: Self::Value) -> Self::Value;
    fn div(&mut self, dst: Dst, a: Self::Value, b: Self::Value) -> Result<Self::Value, FxError>;
    fn real(&self, v: Self::Value) -> f64;
}

fn empty_records() -> Vec<RangeRecord> {
    let mut recs: Vec<RangeRecord> = (0..16).map(|_| RangeRecord::new("")).collect();
    for v in Var::ALL {
        recs[v.index()].name = v.name().to_string();
    }
    recs
}

#[derive(Debug, Clone)]
pub struct FloatArith {
    records: Vec<RangeRecord>,
}

impl Default for FloatArith {
    fn default() -> Self {
        Self {
            records: empty_records(),
        }
    }
}

impl FloatArith {
    fn store(&mut self, dst: Dst, x: f64) -> f64 {
        if let Dst::Var(v) = dst {
            self.records[v.index()].record(x);
        }
        x
    }
}

impl Arith for FloatArith {
    type Value = f64;
    fn load(&mut self, dst: Dst, x: f64) -> f64 {
        self.store(dst, x)
    }
    fn add(&mut self, dst: Dst, a: f64, b: f64) -> f64 {
        self.store(dst, a + b)
    }
    fn sub(&mut self, dst: Dst, a: f64, b: f64) -> f64 {
        self.store(dst, a - b)
    }
    fn mul(&mut self, dst: Dst, a: f64, b: f64) -> f64 {
        self.store(dst, a * b)
    }
    fn div(&mut self, dst: Dst, a: f64, b: f64) -> Result<f64, FxError> {
        Ok(self.store(dst, a / b))
    }
    fn real(&self, v: f64) -> f64 {
        v
    }
}

#[derive(Debug, Clone)]
pub struct FixedArith {
    formats: [FxFormat; 16],
    records: Vec<RangeRecord>,
    quantizations: u64,
    saturations: u64,
}

impl FixedArith {
    pub fn new(formats: &FormatMap) -> Result<Self, FxError> {
        Ok(Self {
            formats: formats.resolve()?,
            records: empty_records(),
            quantizations: 0,
            saturations: 0,
        })
    }

    fn fmt(&self, dst: Dst) -> FxFormat {
        self.formats[dst.var().index()]
    }

    fn store(&mut self, dst: Dst, v: FxValue) -> FxValue {
        self.quantizations += 1;
        self.saturations += u64::from(v.saturated());
        if let Dst::Var(var) = dst {
            self.records[var.index()].record(v.value());
        }
        v
    }
}

impl Arith for FixedArith {
    type Value = FxValue;
    fn load(&mut self, dst: Dst, x: f64) -> FxValue {
        let v = quantize(x, self.fmt(dst));
        self.store(dst, v)
    }
    fn add(&mut self, dst: Dst, a: FxValue, b: FxValue) -> FxValue {
        let v = fx_add(&a, &b, self.fmt(dst));
        self.store(dst, v)
    }
    fn sub(&mut self, dst: Dst, a: FxValue, b: FxValue) -> FxValue {
        let v = fx_sub(&a, &b, self.fmt(dst));
        self.store(dst, v)
    }
    fn mul(&mut self, dst: Dst, a: FxValue, b: FxValue) -> FxValue {
        let v = fx_mul(&a, &b, self.fmt(dst));
        self.store(dst, v)
    }
    fn div(&mut self, dst: Dst, a: FxValue, b: FxValue) -> Result<FxValue, FxError> {
        let v = fx_div(&a, &b, self.fmt(dst))?;
        Ok(self.store(dst, v))
    }
    fn real(&self, v: FxValue) -> f64 {
        v.value()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Float,
    Fixed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FxTraceRow {
    pub k: usize,
    pub tau: f64,
    pub gamma: f64,
    pub alarm: bool,
}

#[derive(Debug, Clone)]
pub struct FxRun {
    pub mode: Mode,
    pub dhat: f64,
    pub gamma: f64,
    pub horizon: usize,
    pub u_level: f64,
    pub rows: Vec<FxTraceRow>,
    /// In [`Var::ALL`] order.
    pub records: Vec<RangeRecord>,
    pub quantizations: u64,
    pub saturations: u64,
}

/// The window statistic as a sequence of named assignments: residual per
/// sample, then once the window is full mean, centred and raw sums of
/// squares, variance over `N − 1` and `chi_sq = r_sq_sum / r_var`.
pub fn run_dataflow<A: Arith>(
    arith: &mut A,
    rec: &IoRecord,
    dhat: f64,
    horizon: usize,
    gamma: f64,
) -> Result<Vec<FxTraceRow>, FxError> {
    let dh = arith.load(Dst::Var(Var::Dhat), dhat);
    let n = arith.load(Dst::Var(Var::N), horizon as f64);
    let one = arith.load(Dst::Temp(Var::N), 1.0);
    let n_minus_one = arith.sub(Dst::Temp(Var::N), n, one);
    let mut window: VecDeque<A::Value> = VecDeque::with_capacity(horizon + 1);
    let mut rows = Vec::new();
    for k in 0..rec.len() {
        arith.load(Dst::Var(Var::Count), (k + 1) as f64);
        let ym = arith.load(Dst::Var(Var::Ym), rec.y(k)[0]);
        let u = arith.load(Dst::Var(Var::U), rec.u(k)[0]);
        let predicted = arith.mul(Dst::Temp(Var::R), dh, u);
        let r = arith.sub(Dst::Var(Var::R), ym, predicted);
        if window.len() == horizon {
            window.pop_front();
        }
        window.push_back(r);
        if window.len() < horizon {
            continue;
        }

        let mut r_sum = arith.load(Dst::Temp(Var::RSum), 0.0);
        for (idx, &ri) in window.iter().enumerate() {
            arith.load(Dst::Var(Var::I), (idx + 1) as f64);
            r_sum = arith.add(Dst::Var(Var::RSum), r_sum, ri);
        }
        let r_avg = arith.div(Dst::Var(Var::RAvg), r_sum, n)?;
        let mut centred = arith.load(Dst::Temp(Var::RSubAvgSqSum), 0.0);
        let mut raw = arith.load(Dst::Temp(Var::RSqSum), 0.0);
        for &ri in &window {
            let d = arith.sub(Dst::Var(Var::RSubAvg), ri, r_avg);
            let d2 = arith.mul(Dst::Var(Var::RSubAvgSq), d, d);
            centred = arith.add(Dst::Var(Var::RSubAvgSqSum), centred, d2);
            let sq = arith.mul(Dst::Var(Var::RSq), ri, ri);
            raw = arith.add(Dst::Var(Var::RSqSum), raw, sq);
        }
        let r_var = arith.div(Dst::Var(Var::RVar), centred, n_minus_one)?;
        if arith.real(r_var) == 0.0 {
            return Err(FxError::DegenerateWindow { k });
        }
        let chi = arith.div(Dst::Var(Var::ChiSq), raw, r_var)?;
        let tau = arith.real(chi);
        rows.push(FxTraceRow {
            k,
            tau,
            gamma,
            alarm: tau > gamma,
        });
    }
    Ok(rows)
}

/// Floating reference of the dataflow, recording every variable's range.
pub fn float_run_detector(cfg: &BaselineConfig) -> Result<FxRun, FxError> {
    let (dhat, rec) = baseline::prepare(cfg)?;
    let gamma = cfg.threshold()?;
    let mut arith = FloatArith::default();
    let rows = run_dataflow(&mut arith, &rec, dhat, cfg.horizon, gamma)?;
    Ok(FxRun {
        mode: Mode::Float,
        dhat,
        gamma,
        horizon: cfg.horizon,
        u_level: cfg.u_level,
        rows,
        records: ordered(arith.records),
        quantizations: 0,
        saturations: 0,
    })
}

/// Same dataflow with every assignment quantized into its declared format.
pub fn fx_run_detector(cfg: &BaselineConfig, formats: &FormatMap) -> Result<FxRun, FxError> {
    let mut arith = FixedArith::new(formats)?;
    let (dhat, rec) = baseline::prepare(cfg)?;
    let gamma = cfg.threshold()?;
    let rows = run_dataflow(&mut arith, &rec, dhat, cfg.horizon, gamma)?;
    Ok(FxRun {
        mode: Mode::Fixed,
        dhat,
        gamma,
        horizon: cfg.horizon,
        u_level: cfg.u_level,
        rows,
        records: ordered(arith.records),
        quantizations: arith.quantizations,
        saturations: arith.saturations,
    })
}

fn ordered(mut by_index: Vec<RangeRecord>) -> Vec<RangeRecord> {
    Var::ALL
        .iter()
        .map(|v| std::mem::replace(&mut by_index[v.index()], RangeRecord::new("")))
        .collect()
}

pub fn write_fx_trace_csv<W: Write>(writer: W, rows: &[FxTraceRow]) -> Result<(), FxError> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["k", "tau", "gamma", "alarm"])?;
    for r in rows {
        w.write_record([
            r.k.to_string(),
            format!("{:?}", r.tau),
            format!("{:?}", r.gamma),
            u8::from(r.alarm).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OpKind {
    Mul,
    AddSub,
    Div,
    Compare,
}

/// One operator instance; `constant` is the value of a compile-time constant
/// operand, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct OpNode {
    pub kind: OpKind,
    pub output: &'static str,
    pub constant: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct DataflowGraph {
    pub nodes: Vec<OpNode>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct OpCount {
    pub multipliers: usize,
    pub adders: usize,
    pub dividers: usize,
    pub comparators: usize,
    pub shifters: usize,
    pub quantizations: u64,
}

fn is_power_of_two(c: f64) -> bool {
    c > 0.0 && c.fract() == 0.0 && c < 1.8e19 && (c as u64).is_power_of_two()
}

impl DataflowGraph {
    pub fn empty() -> Self {
        Self::default()
    }

    /// Operator instances of [`run_dataflow`] for a constant input.
    pub fn baseline(u_level: f64, horizon: usize) -> Self {
        let node = |kind, output, constant| OpNode {
            kind,
            output,
            constant,
        };
        let n = horizon as f64;
        Self {
            nodes: vec![
                node(OpKind::AddSub, "count", Some(1.0)),
                node(OpKind::Mul, "dhat*u", Some(u_level)),
                node(OpKind::AddSub, "r", None),
                node(OpKind::AddSub, "i", Some(1.0)),
                node(OpKind::AddSub, "r_sum", None),
                node(OpKind::Div, "r_avg", Some(n)),
                node(OpKind::AddSub, "r_sub_avg", None),
                node(OpKind::Mul, "r_sub_avg_sq", None),
                node(OpKind::AddSub, "r_sub_avg_sq_sum", None),
                node(OpKind::Mul, "r_sq", None),
                node(OpKind::AddSub, "r_sq_sum", None),
                node(OpKind::AddSub, "N-1", Some(1.0)),
                node(OpKind::Div, "r_var", Some(n - 1.0)),
                node(OpKind::Div, "chi_sq", None),
                node(OpKind::Compare, "alarm", None),
            ],
        }
    }

    /// Distinct operator instances. In fixed point a multiply or divide by a
    /// power-of-two integer constant is a shift.
    pub fn count(&self, mode: Mode) -> OpCount {
        let mut c = OpCount::default();
        for node in &self.nodes {
            let shift = mode == Mode::Fixed && node.constant.is_some_and(is_power_of_two);
            match node.kind {
                OpKind::Mul | OpKind::Div if shift => c.shifters += 1,
                OpKind::Mul => c.multipliers += 1,
                OpKind::Div => c.dividers += 1,
                OpKind::AddSub => c.adders += 1,
                OpKind::Compare => c.comparators += 1,
            }
        }
        c
    }
}

pub fn op_count_report(run: &FxRun) -> OpCount {
    OpCount {
        quantizations: run.quantizations,
        ..DataflowGraph::baseline(run.u_level, run.horizon).count(run.mode)
    }
}
