//! Crowd prediction error: `SE = MSE − σ̂`.
//!
//! Everything is generic over the scalar, so the identity can be checked
//! exactly on rationals and within a relative tolerance on floats.

use std::fmt::Write as _;

use num_traits::Num;
use thiserror::Error;

use crate::rational::{parse_rational, ratio, Rational};
use crate::table::to_csv;

/// Relative tolerance for the float identity check.
pub const FLOAT_IDENTITY_TOL: f64 = 1e-12;

pub trait Scalar: Clone + PartialOrd + Num {}
impl<T: Clone + PartialOrd + Num> Scalar for T {}

fn count<T: Scalar>(n: usize) -> T {
    (0..n).fold(T::zero(), |acc, _| acc + T::one())
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PredictionError {
    #[error("an ensemble needs at least one signal")]
    NoSignals,
    #[error("non-finite value {0}")]
    NonFinite(f64),
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionEnsemble<T> {
    truth: T,
    signals: Vec<T>,
}

impl<T: Scalar> PredictionEnsemble<T> {
    pub fn new(truth: T, signals: Vec<T>) -> Result<Self, PredictionError> {
        if signals.is_empty() {
            return Err(PredictionError::NoSignals);
        }
        Ok(PredictionEnsemble { truth, signals })
    }

    pub fn truth(&self) -> &T {
        &self.truth
    }

    pub fn signals(&self) -> &[T] {
        &self.signals
    }

    /// `s′ = c + k·(s − c)`: same collective prediction, spread scaled by `k`.
    pub fn spread(&self, k: T) -> Self {
        let c = mean(&self.signals);
        PredictionEnsemble {
            truth: self.truth.clone(),
            signals: self
                .signals
                .iter()
                .map(|s| c.clone() + k.clone() * (s.clone() - c.clone()))
                .collect(),
        }
    }

    /// `s′ = θ + λ·(s − θ)`: every signal pulled toward the truth.
    pub fn shrink_toward_truth(&self, lambda: T) -> Self {
        PredictionEnsemble {
            truth: self.truth.clone(),
            signals: self
                .signals
                .iter()
                .map(|s| self.truth.clone() + lambda.clone() * (s.clone() - self.truth.clone()))
                .collect(),
        }
    }
}

impl PredictionEnsemble<f64> {
    pub fn finite(truth: f64, signals: Vec<f64>) -> Result<Self, PredictionError> {
        if let Some(&v) = std::iter::once(&truth)
            .chain(&signals)
            .find(|v| !v.is_finite())
        {
            return Err(PredictionError::NonFinite(v));
        }
        Self::new(truth, signals)
    }
}

impl PredictionEnsemble<Rational> {
    pub fn to_f64(&self) -> PredictionEnsemble<f64> {
        PredictionEnsemble {
            truth: crate::rational::to_f64(&self.truth),
            signals: self.signals.iter().map(crate::rational::to_f64).collect(),
        }
    }
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().fold(T::zero(), |acc, x| acc + x.clone()) / count(xs.len())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition<T> {
    pub collective: T,
    pub se: T,
    pub mse: T,
    pub diversity: T,
    pub se_max: T,
}

pub fn decompose<T: Scalar>(ensemble: &PredictionEnsemble<T>) -> Decomposition<T> {
    let theta = ensemble.truth.clone();
    let c = mean(&ensemble.signals);
    let sq = |v: T| v.clone() * v;
    let se = sq(c.clone() - theta.clone());
    let mse = mean(
        &ensemble
            .signals
            .iter()
            .map(|s| sq(s.clone() - theta.clone()))
            .collect::<Vec<_>>(),
    );
    let diversity = mean(
        &ensemble
            .signals
            .iter()
            .map(|s| sq(s.clone() - c.clone()))
            .collect::<Vec<_>>(),
    );
    Decomposition {
        collective: c,
        se,
        se_max: mse.clone(),
        mse,
        diversity,
    }
}

impl<T: Scalar> Decomposition<T> {
    /// `SE − (MSE − σ̂)`.
    pub fn residual(&self) -> T {
        self.se.clone() - (self.mse.clone() - self.diversity.clone())
    }

    pub fn crowd_beats_average(&self) -> bool {
        self.se <= self.mse
    }
}

impl Decomposition<Rational> {
    pub fn identity_exact(&self) -> bool {
        num_traits::Zero::is_zero(&self.residual())
    }
}

impl Decomposition<f64> {
    pub fn identity_within_tolerance(&self) -> bool {
        self.residual().abs() <= FLOAT_IDENTITY_TOL * self.mse.max(f64::MIN_POSITIVE)
    }
}

/// Two signals around `θ = 1/2`: `s = (7/20, 3/4)`.
pub fn two_signal_before() -> PredictionEnsemble<Rational> {
    PredictionEnsemble::new(ratio(1, 2), vec![ratio(7, 20), ratio(3, 4)]).expect("two signals")
}

/// The more diverse pair with crowd forecast `c = 0.825` and `σ̂ = 0.14`.
pub fn two_signal_after() -> PredictionEnsemble<f64> {
    let c = 0.825;
    let half = 0.14f64.sqrt();
    PredictionEnsemble::finite(0.5, vec![c - half, c + half]).expect("finite")
}

/// Squared error of the second pair rounded to four places.
pub const ROUNDED_SE_AFTER: f64 = 0.1056;

#[derive(Debug, Clone, PartialEq)]
pub struct TwoSignalVerdict {
    pub before: Decomposition<f64>,
    pub after: Decomposition<f64>,
    pub se_ratio: f64,
    pub diversity_ratio: f64,
    /// Ratio of the four-place rounded squared errors.
    pub rounded_ratio: f64,
}

impl TwoSignalVerdict {
    /// Error more than forty times larger while diversity more than triples.
    pub fn holds(&self) -> bool {
        self.se_ratio > 40.0 && self.diversity_ratio > 3.0
    }
}

pub fn compare_two_signal(
    before: &PredictionEnsemble<f64>,
    after: &PredictionEnsemble<f64>,
) -> TwoSignalVerdict {
    let before = decompose(before);
    let after = decompose(after);
    TwoSignalVerdict {
        se_ratio: after.se / before.se,
        diversity_ratio: after.diversity / before.diversity,
        rounded_ratio: ROUNDED_SE_AFTER / 0.0025,
        before,
        after,
    }
}

pub fn two_signal_check() -> TwoSignalVerdict {
    compare_two_signal(&two_signal_before().to_f64(), &two_signal_after())
}

/// How the error bounds move between two ensembles.
#[derive(Debug, Clone, PartialEq)]
pub struct MonotonicityReport<T> {
    pub delta_mse: T,
    pub delta_diversity: T,
    pub delta_se: T,
    pub delta_se_max: T,
    /// `ΔMSE < 0 ⇒ ΔSEmax < 0`.
    pub ability_law: bool,
    /// `σ̂′ > SEmax ⇒ ΔSEmax > 0`: diversity beyond the old bound raises it.
    pub diversity_law: bool,
    /// Diversity went up and so did the realized error.
    pub madness: bool,
}

pub fn se_max_monotonicity<T: Scalar>(
    base: &PredictionEnsemble<T>,
    perturbed: &PredictionEnsemble<T>,
) -> MonotonicityReport<T> {
    let a = decompose(base);
    let b = decompose(perturbed);
    let zero = T::zero();
    let delta_mse = b.mse.clone() - a.mse.clone();
    let delta_diversity = b.diversity.clone() - a.diversity.clone();
    let delta_se = b.se.clone() - a.se.clone();
    let delta_se_max = b.se_max.clone() - a.se_max.clone();
    MonotonicityReport {
        ability_law: delta_mse >= zero || delta_se_max < zero,
        diversity_law: b.diversity <= a.se_max || delta_se_max > zero,
        madness: delta_diversity > zero && delta_se > zero,
        delta_mse,
        delta_diversity,
        delta_se,
        delta_se_max,
    }
}

/// Reads `θ` on the first non-comment line and the signals on the second.
pub fn parse_ensemble(text: &str) -> Result<PredictionEnsemble<f64>, PredictionError> {
    let (truth, signals) = two_lines(text, |tok| tok.parse::<f64>().map_err(|e| e.to_string()))?;
    PredictionEnsemble::finite(truth, signals)
}

/// Same as [`parse_ensemble`] but exact; fails on inputs that are not
/// rationals (such as exponents).
pub fn parse_ensemble_exact(text: &str) -> Result<PredictionEnsemble<Rational>, PredictionError> {
    let (truth, signals) = two_lines(text, |tok| parse_rational(tok).map_err(|e| e.to_string()))?;
    PredictionEnsemble::new(truth, signals)
}

fn two_lines<T>(
    text: &str,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<(T, Vec<T>), PredictionError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.split('#').next().unwrap_or("").trim()))
        .filter(|(_, l)| !l.is_empty());
    let parse_at = |line: usize, tok: &str| {
        parse(tok).map_err(|message| PredictionError::Parse { line, message })
    };
    let (line, first) = lines.next().ok_or(PredictionError::Parse {
        line: 0,
        message: "missing true value".into(),
    })?;
    let mut tokens = first.split_whitespace();
    let truth = parse_at(line, tokens.next().expect("non-empty line"))?;
    if tokens.next().is_some() {
        return Err(PredictionError::Parse {
            line,
            message: "first line holds only the true value".into(),
        });
    }
    let (line, second) = lines.next().ok_or(PredictionError::NoSignals)?;
    let signals = second
        .split_whitespace()
        .map(|t| parse_at(line, t))
        .collect::<Result<Vec<_>, _>>()?;
    if let Some((line, _)) = lines.next() {
        return Err(PredictionError::Parse {
            line,
            message: "unexpected third line".into(),
        });
    }
    Ok((truth, signals))
}

/// `label,theta,c,se,mse,diversity,se_max`, one row per case.
pub fn decomposition_csv(cases: &[(&str, f64, &Decomposition<f64>)]) -> String {
    let rows = cases.iter().map(|(label, theta, d)| {
        vec![
            label.to_string(),
            fmt_float(*theta),
            fmt_float(d.collective),
            fmt_float(d.se),
            fmt_float(d.mse),
            fmt_float(d.diversity),
            fmt_float(d.se_max),
        ]
    });
    to_csv(
        &["case", "theta", "c", "se", "mse", "diversity", "se_max"],
        rows,
    )
}

fn fmt_float(v: f64) -> String {
    format!("{v:.6}")
}

/// Bar chart of MSE, σ̂ and SE for each case:
/// black for MSE, brown for σ̂, red for SE.
pub fn decomposition_svg(cases: &[(&str, &Decomposition<f64>)]) -> String {
    const BAR: f64 = 36.0;
    const GAP: f64 = 10.0;
    const GROUP_GAP: f64 = 50.0;
    const PLOT_H: f64 = 240.0;
    const LEFT: f64 = 50.0;
    const TOP: f64 = 30.0;
    let group_w = 3.0 * BAR + 2.0 * GAP;
    let width = LEFT + cases.len() as f64 * (group_w + GROUP_GAP) + 20.0;
    let height = TOP + PLOT_H + 70.0;
    let top_value = cases
        .iter()
        .flat_map(|(_, d)| [d.mse, d.diversity, d.se])
        .fold(0.0f64, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.1;
    let base_y = TOP + PLOT_H;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width:.0}" height="{height:.0}" viewBox="0 0 {width:.0} {height:.0}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<line x1="{LEFT}" y1="{base_y}" x2="{:.1}" y2="{base_y}" stroke="black"/>"#,
        width - 10.0
    );
    for (g, (label, d)) in cases.iter().enumerate() {
        let x0 = LEFT + 20.0 + g as f64 * (group_w + GROUP_GAP);
        for (k, (name, value, color)) in [
            ("MSE", d.mse, "black"),
            ("σ̂", d.diversity, "saddlebrown"),
            ("SE", d.se, "red"),
        ]
        .into_iter()
        .enumerate()
        {
            let h = value / top_value * PLOT_H;
            let x = x0 + k as f64 * (BAR + GAP);
            let _ = writeln!(
                svg,
                r#"<rect x="{x:.1}" y="{:.1}" width="{BAR}" height="{h:.1}" fill="{color}"/>"#,
                base_y - h
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{value:.4}</text>"#,
                x + BAR / 2.0,
                base_y - h - 4.0
            );
            let _ = writeln!(
                svg,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{name}</text>"#,
                x + BAR / 2.0,
                base_y + 16.0
            );
        }
        let _ = writeln!(
            svg,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-weight="bold">{}</text>"#,
            x0 + group_w / 2.0,
            base_y + 40.0,
            escape(label)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
