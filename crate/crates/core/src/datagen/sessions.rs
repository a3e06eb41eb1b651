//! Multi-view typing sessions.
//!
//! Each synthetic user produces a continuous keypress log made of bursts
//! separated by idle gaps of at least [`SESSION_GAP_SECS`]; the log is cut
//! back into sessions with [`segment_sessions`]. A session carries three
//! views: alphanumeric keypress metadata, special-key one-hots, and an
//! accelerometer trace sampled every [`ACCEL_PERIOD_SECS`].

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::linalg::Vector;
use crate::models::{Example, ViewSequences};
use crate::rng::{streams, SimRng};
use crate::scalar::Scalar;

/// A keypress at least this long after the previous one starts a new session.
pub const SESSION_GAP_SECS: f64 = 5.0;
pub const ACCEL_PERIOD_SECS: f64 = 0.060;

pub const ALPHANUMERIC_DIM: usize = 4;
pub const SPECIAL_DIM: usize = 6;
pub const ACCELEROMETER_DIM: usize = 3;

const KEY_ROWS: usize = 3;
const KEY_COLS: usize = 10;
const MAX_INTRA_GAP_SECS: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpecialKey {
    AutoCorrect,
    Backspace,
    Space,
    Suggestion,
    SwitchingKeyboard,
    Other,
}

impl SpecialKey {
    pub const ALL: [SpecialKey; SPECIAL_DIM] = [
        Self::AutoCorrect,
        Self::Backspace,
        Self::Space,
        Self::Suggestion,
        Self::SwitchingKeyboard,
        Self::Other,
    ];

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&k| k == self).expect("listed")
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    pub fn one_hot(self) -> [f64; SPECIAL_DIM] {
        let mut v = [0.0; SPECIAL_DIM];
        v[self.index()] = 1.0;
        v
    }
}

/// One phone-usage session in physical units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiViewSession {
    pub user: usize,
    /// Seconds from the first keypress to the release of the last one.
    pub duration: f64,
    /// `[press duration s, time since last keypress s, dx keys, dy keys]`.
    pub alphanumeric: Vec<[f64; ALPHANUMERIC_DIM]>,
    pub special: Vec<SpecialKey>,
    /// `[ax, ay, az]` every 60 ms.
    pub accelerometer: Vec<[f64; ACCELEROMETER_DIM]>,
    pub label: usize,
}

impl MultiViewSession {
    pub fn validate(&self) -> Result<()> {
        if self.alphanumeric.is_empty() || self.special.is_empty() || self.accelerometer.is_empty()
        {
            return Err(invalid("every session view must be non-empty"));
        }
        Ok(())
    }
}

/// Keypress timestamps (seconds) and their per-keypress payload.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypressLog<F> {
    pub timestamps: Vec<f64>,
    pub features: Vec<F>,
}

impl<F> KeypressLog<F> {
    pub fn new(timestamps: Vec<f64>, features: Vec<F>) -> Result<Self> {
        if timestamps.len() != features.len() {
            return Err(invalid("one feature record per timestamp"));
        }
        if timestamps.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(invalid("keypress timestamps must be strictly increasing"));
        }
        Ok(Self {
            timestamps,
            features,
        })
    }

    pub fn sessions(&self, gap: f64) -> Result<Vec<Range<usize>>> {
        segment_sessions(&self.timestamps, gap)
    }
}

/// Splits a keypress stream wherever the gap to the previous keypress is
/// `>= gap` seconds. Every keypress lands in exactly one range.
pub fn segment_sessions(timestamps: &[f64], gap: f64) -> Result<Vec<Range<usize>>> {
    if !(gap > 0.0) {
        return Err(invalid(format!("gap must be > 0, got {gap}")));
    }
    if timestamps.iter().any(|t| !t.is_finite()) {
        return Err(invalid("timestamps must be finite"));
    }
    if let Some(i) = timestamps.windows(2).position(|w| !(w[1] > w[0])) {
        return Err(invalid(format!(
            "timestamps not strictly increasing at index {}",
            i + 1
        )));
    }
    let mut out = Vec::new();
    let mut start = 0;
    for i in 1..timestamps.len() {
        if timestamps[i] - timestamps[i - 1] >= gap {
            out.push(start..i);
            start = i;
        }
    }
    if !timestamps.is_empty() {
        out.push(start..timestamps.len());
    }
    Ok(out)
}

/// Population and class-signal settings for [`gen_multiview_sessions`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionSpec {
    pub users: usize,
    pub sessions_per_user: usize,
    pub classes: usize,
    /// 0 plants nothing; 1 is a clearly learnable signal.
    pub signal: f64,
}

impl SessionSpec {
    fn validate(&self) -> Result<()> {
        if self.users == 0 || self.sessions_per_user == 0 || self.classes == 0 {
            return Err(invalid(
                "users, sessions_per_user and classes must be positive",
            ));
        }
        if !(self.signal >= 0.0) || !self.signal.is_finite() {
            return Err(invalid(format!(
                "signal must be finite and >= 0, got {}",
                self.signal
            )));
        }
        Ok(())
    }
}

/// Per-keypress payload in the raw log.
#[derive(Debug, Clone, Copy)]
struct Press {
    hold: f64,
    row: usize,
    col: usize,
    special: Option<SpecialKey>,
}

/// Signed class effect in `[-signal, signal]`.
fn class_effect(label: usize, classes: usize, signal: f64) -> f64 {
    if classes < 2 {
        0.0
    } else {
        signal * (2.0 * label as f64 / (classes - 1) as f64 - 1.0)
    }
}

fn lognormal(rng: &mut SimRng, sigma: f64) -> f64 {
    (sigma * rng.standard_normal()).exp()
}

/// Users type in bursts; each burst is one session. Class effects shift
/// typing speed, keypress hold time, the backspace/auto-correct share of
/// special keys, and the cross-axis correlation and jitter of the
/// accelerometer. Users also differ in baseline speed and posture, so
/// sessions look realistic even when `signal = 0`.
pub fn gen_multiview_sessions(seed: u64, spec: &SessionSpec) -> Result<Vec<MultiViewSession>> {
    spec.validate()?;
    let root = SimRng::new(seed).fork(streams::DATA);
    let mut all = Vec::with_capacity(spec.users * spec.sessions_per_user);
    for user in 0..spec.users {
        let mut rng = root.fork(user as u64);
        let speed = lognormal(&mut rng, 0.15);
        let tilt = [0.3 * rng.standard_normal(), 0.3 * rng.standard_normal()];

        let labels: Vec<usize> = (0..spec.sessions_per_user)
            .map(|s| (user * spec.sessions_per_user + s) % spec.classes)
            .collect();

        // Build the continuous log.
        let mut timestamps = Vec::new();
        let mut presses = Vec::new();
        let mut bursts = Vec::new();
        let mut t = 0.0;
        for &label in &labels {
            let effect = class_effect(label, spec.classes, spec.signal);
            let start = timestamps.len();
            let n_alpha = 8 + rng.below(17);
            let mean_gap = 0.28 * speed * (-0.45 * effect).exp();
            let mean_hold = 0.09 * (0.35 * effect).exp();
            let special_rate = 0.25;
            let p_correction = (0.35 + 0.25 * effect).clamp(0.05, 0.9);
            let mut alpha_left = n_alpha;
            let mut specials = 0;
            while alpha_left > 0 {
                if timestamps.len() > start {
                    t += (mean_gap * lognormal(&mut rng, 0.35)).min(MAX_INTRA_GAP_SECS);
                }
                let hold = (mean_hold * lognormal(&mut rng, 0.25)).min(0.5);
                let special = if rng.bernoulli(special_rate) {
                    specials += 1;
                    Some(if rng.bernoulli(p_correction) {
                        if rng.bernoulli(0.6) {
                            SpecialKey::Backspace
                        } else {
                            SpecialKey::AutoCorrect
                        }
                    } else {
                        [
                            SpecialKey::Space,
                            SpecialKey::Suggestion,
                            SpecialKey::SwitchingKeyboard,
                            SpecialKey::Other,
                        ][rng.below(4)]
                    })
                } else {
                    alpha_left -= 1;
                    None
                };
                timestamps.push(t);
                presses.push(Press {
                    hold,
                    row: rng.below(KEY_ROWS),
                    col: rng.below(KEY_COLS),
                    special,
                });
            }
            if specials == 0 {
                t += (mean_gap * lognormal(&mut rng, 0.35)).min(MAX_INTRA_GAP_SECS);
                timestamps.push(t);
                presses.push(Press {
                    hold: mean_hold,
                    row: 0,
                    col: 0,
                    special: Some(SpecialKey::Space),
                });
            }
            bursts.push((label, effect));
            t += SESSION_GAP_SECS + rng.uniform_range(0.0, 120.0);
        }

        let log = KeypressLog::new(timestamps, presses)?;
        let ranges = log.sessions(SESSION_GAP_SECS)?;
        debug_assert_eq!(ranges.len(), bursts.len());
        for (range, &(label, effect)) in ranges.into_iter().zip(&bursts) {
            let session = build_session(user, label, effect, tilt, &log, range, &mut rng);
            session.validate()?;
            all.push(session);
        }
    }
    Ok(all)
}

fn build_session(
    user: usize,
    label: usize,
    effect: f64,
    tilt: [f64; 2],
    log: &KeypressLog<Press>,
    range: Range<usize>,
    rng: &mut SimRng,
) -> MultiViewSession {
    let first = log.timestamps[range.start];
    let last = range.end - 1;
    let duration = log.timestamps[last] - first + log.features[last].hold;

    let mut alphanumeric = Vec::new();
    let mut special = Vec::new();
    let mut prev_alpha: Option<(f64, usize, usize)> = None;
    for i in range {
        let p = log.features[i];
        match p.special {
            Some(k) => special.push(k),
            None => {
                let (since, dx, dy) = match prev_alpha {
                    Some((pt, pr, pc)) => (
                        log.timestamps[i] - pt,
                        p.col as f64 - pc as f64,
                        p.row as f64 - pr as f64,
                    ),
                    None => (0.0, 0.0, 0.0),
                };
                alphanumeric.push([p.hold, since, dx, dy]);
                prev_alpha = Some((log.timestamps[i], p.row, p.col));
            }
        }
    }

    let n_accel = ((duration / ACCEL_PERIOD_SECS).ceil() as usize).max(1);
    let coupling = (0.5 + 0.35 * effect).clamp(-0.95, 0.95);
    let jitter = 0.2 * (0.4 * effect).exp();
    let rho: f64 = 0.8;
    let innov = (1.0 - rho * rho).sqrt();
    let (mut sx, mut sy) = (0.0, 0.0);
    let mut accelerometer = Vec::with_capacity(n_accel);
    for _ in 0..n_accel {
        let common = rng.standard_normal();
        sx =
            rho * sx + innov * (coupling * common + (1.0 - coupling.abs()) * rng.standard_normal());
        sy =
            rho * sy + innov * (coupling * common + (1.0 - coupling.abs()) * rng.standard_normal());
        accelerometer.push([
            tilt[0] + jitter * sx,
            tilt[1] + jitter * sy,
            9.81 + 0.1 * jitter * rng.standard_normal(),
        ]);
    }

    MultiViewSession {
        user,
        duration,
        alphanumeric,
        special,
        accelerometer,
        label,
    }
}

/// Per-column mean and standard deviation for the continuous views, fit on
/// training sessions and applied to any split. Special-key one-hots are
/// left as-is.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionScaler {
    pub alphanumeric: [(f64, f64); ALPHANUMERIC_DIM],
    pub accelerometer: [(f64, f64); ACCELEROMETER_DIM],
}

fn column_stats<const D: usize>(rows: impl Iterator<Item = [f64; D]>) -> [(f64, f64); D] {
    let mut n = 0usize;
    let mut sum = [0.0; D];
    let mut sq = [0.0; D];
    for r in rows {
        n += 1;
        for j in 0..D {
            sum[j] += r[j];
            sq[j] += r[j] * r[j];
        }
    }
    let mut out = [(0.0, 1.0); D];
    if n == 0 {
        return out;
    }
    for j in 0..D {
        let mean = sum[j] / n as f64;
        let var = (sq[j] / n as f64 - mean * mean).max(0.0);
        let std = var.sqrt();
        out[j] = (mean, if std > 1e-12 { std } else { 1.0 });
    }
    out
}

impl SessionScaler {
    pub fn fit<'a>(sessions: impl IntoIterator<Item = &'a MultiViewSession> + Clone) -> Self {
        Self {
            alphanumeric: column_stats(
                sessions
                    .clone()
                    .into_iter()
                    .flat_map(|s| s.alphanumeric.iter().copied()),
            ),
            accelerometer: column_stats(
                sessions
                    .into_iter()
                    .flat_map(|s| s.accelerometer.iter().copied()),
            ),
        }
    }

    pub fn identity() -> Self {
        Self {
            alphanumeric: [(0.0, 1.0); ALPHANUMERIC_DIM],
            accelerometer: [(0.0, 1.0); ACCELEROMETER_DIM],
        }
    }

    fn apply<T: Scalar, const D: usize>(stats: &[(f64, f64); D], row: &[f64; D]) -> Vector<T> {
        row.iter()
            .zip(stats)
            .map(|(&x, &(m, s))| T::of((x - m) / s))
            .collect::<Vec<_>>()
            .into()
    }

    /// Standardised model input for one session.
    pub fn transform<T: Scalar>(&self, s: &MultiViewSession) -> ViewSequences<T> {
        ViewSequences::new(vec![
            s.alphanumeric
                .iter()
                .map(|r| Self::apply(&self.alphanumeric, r))
                .collect(),
            s.special
                .iter()
                .map(|k| Vector::from_f64(&k.one_hot()))
                .collect(),
            s.accelerometer
                .iter()
                .map(|r| Self::apply(&self.accelerometer, r))
                .collect(),
        ])
    }

    pub fn examples<T: Scalar>(
        &self,
        sessions: &[MultiViewSession],
    ) -> Vec<Example<ViewSequences<T>>> {
        sessions
            .iter()
            .map(|s| Example::new(self.transform(s), s.label))
            .collect()
    }
}
