//! Moments accountant for rounds of the Poisson-subsampled Gaussian mechanism.
//!
//! For integer order `λ` the per-round log-moment is
//!
//! ```text
//! α(λ) = ln Σ_{i=0}^{λ+1} C(λ+1, i) (1-p)^{λ+1-i} p^i exp((i² - i) / (2 z²))
//! ```
//!
//! which collapses to `λ(λ+1) / (2 z²)` at `p = 1`. Log-moments add across
//! rounds and `ε(δ) = min_λ (α(λ) + ln(1/δ)) / λ`.

use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::error::{invalid, Error, Result};

pub const DEFAULT_MAX_ORDER: u32 = 64;

/// Privacy loss. `Unbounded` is reported when any composed round had no noise.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub enum Epsilon {
    Bounded(f64),
    Unbounded,
}

impl Epsilon {
    pub fn value(self) -> Option<f64> {
        match self {
            Self::Bounded(e) => Some(e),
            Self::Unbounded => None,
        }
    }

    pub fn is_bounded(self) -> bool {
        matches!(self, Self::Bounded(_))
    }
}

impl fmt::Display for Epsilon {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Bounded(e) => write!(f, "{e}"),
            Self::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Serialize for Epsilon {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            Self::Bounded(e) => s.serialize_f64(*e),
            Self::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for Epsilon {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Str(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(e) => Ok(Self::Bounded(e)),
            Raw::Str(s) if s == "unbounded" => Ok(Self::Unbounded),
            Raw::Str(s) => Err(serde::de::Error::custom(format!("bad epsilon {s:?}"))),
        }
    }
}

fn check_round(p: f64, z: f64) -> Result<()> {
    if !(p > 0.0 && p <= 1.0) {
        return Err(invalid(format!(
            "sampling probability must be in (0, 1], got {p}"
        )));
    }
    if !(z >= 0.0) || !z.is_finite() {
        return Err(invalid(format!(
            "noise multiplier must be finite and >= 0, got {z}"
        )));
    }
    Ok(())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta < 1.0) {
        return Err(invalid(format!("delta must be in (0, 1), got {delta}")));
    }
    Ok(())
}

fn log_add(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a > b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// Log-moment of one round at integer order `lambda`. Infinite when `z = 0`.
pub fn round_log_moment(p: f64, z: f64, lambda: u32) -> f64 {
    if z == 0.0 {
        return f64::INFINITY;
    }
    let l = f64::from(lambda);
    let inv_two_var = 1.0 / (2.0 * z * z);
    if p >= 1.0 {
        return l * (l + 1.0) * inv_two_var;
    }
    let alpha = lambda + 1;
    let (ln_p, ln_q) = (p.ln(), (-p).ln_1p());
    let mut ln_binom = 0.0f64;
    let mut acc = f64::NEG_INFINITY;
    for i in 0..=alpha {
        if i > 0 {
            ln_binom += f64::from(alpha - i + 1).ln() - f64::from(i).ln();
        }
        let fi = f64::from(i);
        let term =
            ln_binom + f64::from(alpha - i) * ln_q + fi * ln_p + (fi * fi - fi) * inv_two_var;
        acc = log_add(acc, term);
    }
    // Rounding can push the sum a hair below zero.
    acc.max(0.0)
}

fn epsilon_from_moments(moments: &[f64], delta: f64) -> f64 {
    let ln_inv_delta = -delta.ln();
    moments
        .iter()
        .enumerate()
        .map(|(i, &a)| (a + ln_inv_delta) / (i + 1) as f64)
        .fold(f64::INFINITY, f64::min)
        .max(0.0)
}

/// Accumulated log-moments for orders `1..=max_order`.
#[derive(Debug, Clone, PartialEq)]
pub struct AccountantState {
    log_moments: Vec<f64>,
    rounds: u64,
    unbounded: bool,
}

impl Default for AccountantState {
    fn default() -> Self {
        Self::new(DEFAULT_MAX_ORDER)
    }
}

impl AccountantState {
    pub fn new(max_order: u32) -> Self {
        assert!(max_order >= 1, "need at least one order");
        Self {
            log_moments: vec![0.0; max_order as usize],
            rounds: 0,
            unbounded: false,
        }
    }

    pub fn max_order(&self) -> u32 {
        self.log_moments.len() as u32
    }

    /// `α(λ)` for `λ = 1..=max_order`.
    pub fn log_moments(&self) -> &[f64] {
        &self.log_moments
    }

    pub fn rounds(&self) -> u64 {
        self.rounds
    }

    pub fn compose_round(&mut self, p: f64, z: f64) -> Result<()> {
        check_round(p, z)?;
        self.rounds += 1;
        if z == 0.0 {
            self.unbounded = true;
            return Ok(());
        }
        for (i, a) in self.log_moments.iter_mut().enumerate() {
            *a += round_log_moment(p, z, i as u32 + 1);
        }
        Ok(())
    }

    pub fn epsilon_at_delta(&self, delta: f64) -> Result<Epsilon> {
        check_delta(delta)?;
        if self.unbounded {
            return Ok(Epsilon::Unbounded);
        }
        if self.rounds == 0 {
            return Ok(Epsilon::Bounded(0.0));
        }
        Ok(Epsilon::Bounded(epsilon_from_moments(
            &self.log_moments,
            delta,
        )))
    }
}

/// Largest `T` such that `T` identical rounds stay within `budget` at `delta`.
pub fn rounds_until_budget(p: f64, z: f64, delta: f64, budget: f64, max_order: u32) -> Result<u64> {
    check_round(p, z)?;
    check_delta(delta)?;
    if budget.is_nan() {
        return Err(invalid("budget is NaN"));
    }
    if z == 0.0 || budget <= 0.0 {
        return Ok(0);
    }
    let per_round: Vec<f64> = (1..=max_order).map(|l| round_log_moment(p, z, l)).collect();
    let eps_at = |t: u64| {
        let moments: Vec<f64> = per_round.iter().map(|a| a * t as f64).collect();
        epsilon_from_moments(&moments, delta)
    };
    const CAP: u64 = 1 << 52;
    if eps_at(1) > budget {
        return Ok(0);
    }
    let mut lo = 1u64;
    let mut hi = 2u64;
    while eps_at(hi) <= budget {
        lo = hi;
        if hi >= CAP {
            return Ok(CAP);
        }
        hi *= 2;
    }
    // eps_at(lo) <= budget < eps_at(hi)
    while hi - lo > 1 {
        let mid = lo + (hi - lo) / 2;
        if eps_at(mid) <= budget {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(lo)
}

/// One differentially private round as recorded by the protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LedgerEntry {
    pub sampling_probability: f64,
    pub noise_multiplier: f64,
    /// `None` means clipping was disabled.
    pub clip_bound: Option<f64>,
}

/// Append-only record of private rounds, queryable for `ε(δ)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyLedger {
    #[serde(default = "default_order")]
    max_order: u32,
    entries: Vec<LedgerEntry>,
    #[serde(skip)]
    state: AccountantState,
}

impl Default for PrivacyLedger {
    fn default() -> Self {
        Self::new()
    }
}

fn default_order() -> u32 {
    DEFAULT_MAX_ORDER
}

impl PrivacyLedger {
    pub fn new() -> Self {
        Self::with_max_order(DEFAULT_MAX_ORDER)
    }

    pub fn with_max_order(max_order: u32) -> Self {
        let max_order = max_order.max(1);
        Self {
            max_order,
            entries: Vec::new(),
            state: AccountantState::new(max_order),
        }
    }

    pub fn record(&mut self, p: f64, z: f64, clip_bound: Option<f64>) -> Result<()> {
        check_round(p, z)?;
        if let Some(s) = clip_bound {
            if !(s > 0.0) {
                return Err(invalid(format!("clip bound must be > 0, got {s}")));
            }
        }
        self.state.compose_round(p, z)?;
        self.entries.push(LedgerEntry {
            sampling_probability: p,
            noise_multiplier: z,
            clip_bound,
        });
        Ok(())
    }

    pub fn entries(&self) -> &[LedgerEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Accountant state with every recorded round composed.
    pub fn accountant(&self) -> &AccountantState {
        &self.state
    }

    pub fn epsilon(&self, delta: f64) -> Result<Epsilon> {
        self.state.epsilon_at_delta(delta)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let raw: PrivacyLedger = serde_json::from_str(text)?;
        let mut ledger = Self::with_max_order(raw.max_order);
        for e in raw.entries {
            ledger
                .record(e.sampling_probability, e.noise_multiplier, e.clip_bound)
                .map_err(|err| Error::Format(format!("invalid ledger entry: {err}")))?;
        }
        Ok(ledger)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }
}
