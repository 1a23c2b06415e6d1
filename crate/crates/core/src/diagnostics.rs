//! Trace-level checks: j-step sufficient decrease, its power-law variant,
//! the key inequality behind the rate theorem, rate-regime fits, envelopes,
//! KL-exponent regression and the χ-ratio of consecutive block differences.
//!
//! All functions are pure and operate on finished traces.

use std::collections::BTreeMap;

use serde::de::{self, Deserializer, Visitor};
use serde::ser::Serializer;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::solvers::IterTrace;

/// Records needed in a tail before a regression is attempted.
pub const MIN_FIT_POINTS: usize = 16;
/// Max log-space residual above which a regime fit is rejected.
pub const REGIME_RESIDUAL: f64 = 0.5;
const LEMMA_SLACK: f64 = 1e-12;
const ENVELOPE_SLACK: f64 = 1e-9;
/// Log-log slope of the ratio tail below which the ratios are treated as
/// vanishing rather than bounded away from zero.
pub const VANISHING_SLOPE: f64 = -0.25;
/// The decay must also be a clean power law (max log residual below this).
pub const VANISHING_RESIDUAL: f64 = 0.1;

/// A positive constant or the `unbounded` sentinel of a vacuous check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Bound {
    Finite(f64),
    Unbounded,
}

impl Bound {
    pub fn finite(self) -> Option<f64> {
        match self {
            Bound::Finite(x) => Some(x),
            Bound::Unbounded => None,
        }
    }

    pub fn is_unbounded(self) -> bool {
        matches!(self, Bound::Unbounded)
    }
}

impl std::fmt::Display for Bound {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Bound::Finite(x) => write!(f, "{x}"),
            Bound::Unbounded => f.write_str("unbounded"),
        }
    }
}

impl Serialize for Bound {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Bound::Finite(x) => s.serialize_f64(*x),
            Bound::Unbounded => s.serialize_str("unbounded"),
        }
    }
}

impl<'de> Deserialize<'de> for Bound {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        struct BoundVisitor;
        impl Visitor<'_> for BoundVisitor {
            type Value = Bound;
            fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
                f.write_str("a finite number or \"unbounded\"")
            }
            fn visit_f64<E: de::Error>(self, v: f64) -> std::result::Result<Bound, E> {
                if v.is_finite() {
                    Ok(Bound::Finite(v))
                } else {
                    Err(E::custom("non-finite bound"))
                }
            }
            fn visit_u64<E: de::Error>(self, v: u64) -> std::result::Result<Bound, E> {
                Ok(Bound::Finite(v as f64))
            }
            fn visit_i64<E: de::Error>(self, v: i64) -> std::result::Result<Bound, E> {
                Ok(Bound::Finite(v as f64))
            }
            fn visit_str<E: de::Error>(self, v: &str) -> std::result::Result<Bound, E> {
                if v == "unbounded" {
                    Ok(Bound::Unbounded)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }
        d.deserialize_any(BoundVisitor)
    }
}

/// KL constants at a limit point: `(f(X) − fstar)^θ ≤ c·dist(0, ∂f(X))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KLParams {
    pub theta: f64,
    pub c: f64,
    pub tau: Bound,
    pub fstar: Option<f64>,
}

impl KLParams {
    pub fn new(theta: f64, c: f64, fstar: f64) -> Result<Self> {
        let kl = KLParams {
            theta,
            c,
            tau: Bound::Unbounded,
            fstar: Some(fstar),
        };
        kl.validate()?;
        Ok(kl)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.theta) {
            return Err(Error::InvalidArgument(format!(
                "theta = {} outside [0, 1)",
                self.theta
            )));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "c = {} must be > 0",
                self.c
            )));
        }
        if let Bound::Finite(t) = self.tau {
            if !(t > 0.0) {
                return Err(Error::InvalidArgument(format!("tau = {t} must be > 0")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecreaseCertificate {
    pub j: usize,
    pub c1_hat: Bound,
    pub k0_hat: usize,
    pub violations: Vec<usize>,
    pub holds_after_k0: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct A2Certificate {
    pub j: usize,
    pub alpha: f64,
    pub c2_hat: Bound,
    pub k0_hat: usize,
    pub violations: Vec<usize>,
    pub holds_after_k0: bool,
}

impl DecreaseCertificate {
    /// Holds, and the burn-in covers at most half of the checked indices.
    pub fn conclusive(&self, trace_len: usize) -> bool {
        let checks = trace_len.saturating_sub(self.j);
        self.holds_after_k0 && 2 * self.k0_hat <= checks
    }
}

struct Decrease {
    bound: Bound,
    k0: usize,
    violations: Vec<usize>,
    holds: bool,
}

/// Shared core of the two decrease checks; `power` is the exponent applied to
/// `dist_{k+j}` in the denominator.
fn decrease_check(trace: &IterTrace, j: usize, power: f64) -> Result<Decrease> {
    if j == 0 {
        return Err(Error::InvalidArgument("j must be positive".into()));
    }
    let len = trace.len();
    if len <= j {
        return Err(Error::TraceTooShort { len, needed: j });
    }
    let r = &trace.records;
    let checks = len - j;
    let mut ratios: Vec<Option<f64>> = Vec::with_capacity(checks);
    let mut failed = Vec::new();
    for k in 0..checks {
        let dec = r[k].f - r[k + j].f;
        let d = r[k + j].dist;
        let denom = if power == 2.0 { d * d } else { d.powf(power) };
        if denom > 0.0 {
            let ratio = dec / denom;
            if ratio > 0.0 {
                ratios.push(Some(ratio));
            } else {
                ratios.push(None);
                failed.push(k);
            }
        } else {
            ratios.push(None);
            if dec < 0.0 {
                failed.push(k);
            }
        }
    }
    let (mut k0, mut holds) = match failed.last() {
        None => (0, true),
        Some(&last) if last + 1 < checks => (last + 1, true),
        Some(&last) => (last, false),
    };
    if holds {
        let vanishing = vanishing_ratios(&ratios, k0);
        if !vanishing.is_empty() {
            holds = false;
            k0 = *vanishing.last().expect("non-empty");
            failed.extend(vanishing);
        }
    }
    let bound = if holds {
        ratios[k0..]
            .iter()
            .flatten()
            .copied()
            .reduce(f64::min)
            .map_or(Bound::Unbounded, Bound::Finite)
    } else {
        Bound::Unbounded
    };
    Ok(Decrease {
        bound,
        k0,
        violations: failed,
        holds,
    })
}

/// Indices past `k0` whose ratio keeps sinking: the ratio tail follows a
/// decaying power of `k` and drops below half the minimum of the earlier
/// ratios.
fn vanishing_ratios(ratios: &[Option<f64>], k0: usize) -> Vec<usize> {
    let pts: Vec<(usize, f64)> = ratios
        .iter()
        .enumerate()
        .skip(k0)
        .filter_map(|(k, r)| r.map(|r| (k, r)))
        .collect();
    if pts.len() < 2 * MIN_FIT_POINTS {
        return Vec::new();
    }
    let (head, tail) = pts.split_at(pts.len() / 2);
    let xs: Vec<f64> = tail.iter().map(|(k, _)| ((k + 1) as f64).ln()).collect();
    let ys: Vec<f64> = tail.iter().map(|(_, r)| r.ln()).collect();
    match fit_line(&xs, &ys) {
        Some(fit) if fit.slope < VANISHING_SLOPE && fit.max_residual < VANISHING_RESIDUAL => {
            let floor = head.iter().map(|(_, r)| *r).fold(f64::INFINITY, f64::min);
            tail.iter()
                .filter(|(_, r)| *r < 0.5 * floor)
                .map(|(k, _)| *k)
                .collect()
        }
        _ => Vec::new(),
    }
}

/// `c1·dist(0, ∂f(X_{k+j}))² ≤ f(X_k) − f(X_{k+j})` from some index on.
pub fn check_a1(trace: &IterTrace, j: usize) -> Result<DecreaseCertificate> {
    let d = decrease_check(trace, j, 2.0)?;
    Ok(DecreaseCertificate {
        j,
        c1_hat: d.bound,
        k0_hat: d.k0,
        violations: d.violations,
        holds_after_k0: d.holds,
    })
}

/// `c2·dist(0, ∂f(X_{k+j}))^{1/α} ≤ f(X_k) − f(X_{k+j})` from some index on.
pub fn check_a2(trace: &IterTrace, j: usize, alpha: f64) -> Result<A2Certificate> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "alpha = {alpha} must be > 0"
        )));
    }
    let d = decrease_check(trace, j, 1.0 / alpha)?;
    Ok(A2Certificate {
        j,
        alpha,
        c2_hat: d.bound,
        k0_hat: d.k0,
        violations: d.violations,
        holds_after_k0: d.holds,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Check {
    pub k: usize,
    pub lhs: f64,
    pub rhs: f64,
    pub holds: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lemma1Report {
    pub k1: usize,
    pub checks: Vec<Lemma1Check>,
    /// `min (rhs − lhs)` over the checks; `None` when there were none.
    pub worst_margin: Option<f64>,
}

impl Lemma1Report {
    pub fn all_hold(&self) -> bool {
        self.checks.iter().all(|c| c.holds)
    }
}

/// `(f_k − f*)^{2θ} ≤ c²/c1·(f_{k−j} − f_k)` at every `k ≥ k0 + j` whose gap
/// lies in `(0, 1)`.
pub fn check_lemma1(
    trace: &IterTrace,
    kl: &KLParams,
    cert: &DecreaseCertificate,
    j: usize,
) -> Result<Lemma1Report> {
    let fstar = kl.fstar.ok_or(Error::MissingFstar)?;
    kl.validate()?;
    let c1 = cert.c1_hat.finite().ok_or_else(|| {
        Error::InvalidArgument("the decrease certificate carries no finite c1".into())
    })?;
    if j == 0 {
        return Err(Error::InvalidArgument("j must be positive".into()));
    }
    let k1 = cert.k0_hat + j;
    let coeff = kl.c * kl.c / c1;
    let r = &trace.records;
    let mut checks = Vec::new();
    for k in k1..r.len() {
        let gap = r[k].f - fstar;
        if !(gap > 0.0 && gap < 1.0) {
            continue;
        }
        let lhs = gap.powf(2.0 * kl.theta);
        let rhs = coeff * (r[k - j].f - r[k].f);
        let holds = lhs <= rhs + LEMMA_SLACK * lhs.max(rhs.abs());
        checks.push(Lemma1Check { k, lhs, rhs, holds });
    }
    let worst_margin = checks.iter().map(|c| c.rhs - c.lhs).reduce(f64::min);
    Ok(Lemma1Report {
        k1,
        checks,
        worst_margin,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Regime {
    Finite,
    RLinear,
    RSublinear,
    Undetermined,
}

impl Regime {
    pub fn name(self) -> &'static str {
        match self {
            Regime::Finite => "finite",
            Regime::RLinear => "r_linear",
            Regime::RSublinear => "r_sublinear",
            Regime::Undetermined => "undetermined",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub regime: Regime,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eta_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub c_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub sublinear_exponent_hat: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub theta_implied: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub k1_hat: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub fit_residual: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub r1_hat: Option<f64>,
}

impl RateReport {
    fn empty(regime: Regime) -> Self {
        RateReport {
            regime,
            eta_hat: None,
            c_hat: None,
            sublinear_exponent_hat: None,
            theta_implied: None,
            k1_hat: None,
            fit_residual: None,
            r1_hat: None,
        }
    }

    /// `eta_hat` or the sublinear exponent, whichever the regime carries.
    pub fn rate(&self) -> Option<f64> {
        match self.regime {
            Regime::RLinear => self.eta_hat,
            Regime::RSublinear => self.sublinear_exponent_hat,
            _ => None,
        }
    }
}

/// Least-squares line `y ≈ a + b·x`, with the max absolute residual.
#[derive(Debug, Clone, Copy)]
struct LineFit {
    intercept: f64,
    slope: f64,
    max_residual: f64,
}

fn fit_line(xs: &[f64], ys: &[f64]) -> Option<LineFit> {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return None;
    }
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    if !(sxx > 0.0) {
        return None;
    }
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let max_residual = xs
        .iter()
        .zip(ys)
        .map(|(x, y)| (y - intercept - slope * x).abs())
        .fold(0.0, f64::max);
    Some(LineFit {
        intercept,
        slope,
        max_residual,
    })
}

fn tail_start(len: usize) -> usize {
    len / 2
}

/// Classifies the decay of `gaps` (already `f_k − f*`) into a rate regime.
pub fn fit_rate(gaps: &[f64], j: usize) -> Result<RateReport> {
    if j == 0 {
        return Err(Error::InvalidArgument("j must be positive".into()));
    }
    if let Some(bad) = gaps.iter().find(|g| !(**g >= 0.0) || !g.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "gaps must be finite and non-negative, found {bad}"
        )));
    }
    let len = gaps.len();
    if len == 0 {
        return Ok(RateReport::empty(Regime::Undetermined));
    }
    let zero_run = gaps.iter().rev().take_while(|g| **g == 0.0).count();
    if zero_run >= 2 || zero_run == len {
        let mut report = RateReport::empty(Regime::Finite);
        report.k1_hat = Some(len - zero_run);
        report.r1_hat = Some(0.0);
        return Ok(report);
    }

    let start = tail_start(len);
    let r1_hat = (start.max(1)..len)
        .map(|k| gaps[k].powf(1.0 / k as f64))
        .fold(None, |acc: Option<f64>, v| {
            Some(acc.map_or(v, |a| a.max(v)))
        });
    let (ks, logs): (Vec<usize>, Vec<f64>) = (start..len)
        .filter(|&k| gaps[k] > 0.0)
        .map(|k| (k, gaps[k].ln()))
        .unzip();
    let mut report = RateReport::empty(Regime::Undetermined);
    report.r1_hat = r1_hat;
    if ks.len() < MIN_FIT_POINTS {
        return Ok(report);
    }

    let xs_lin: Vec<f64> = ks.iter().map(|&k| k as f64).collect();
    let linear = fit_line(&xs_lin, &logs).filter(|f| f.slope < 0.0);
    let xs_sub: Vec<f64> = ks.iter().map(|&k| ((k / j) as f64 + 1.0).ln()).collect();
    let sublinear = fit_line(&xs_sub, &logs).filter(|f| f.slope < 0.0);

    let lin_res = linear.map_or(f64::INFINITY, |f| f.max_residual);
    let sub_res = sublinear.map_or(f64::INFINITY, |f| f.max_residual);
    if lin_res.min(sub_res) > REGIME_RESIDUAL {
        report.fit_residual = Some(lin_res.min(sub_res)).filter(|r| r.is_finite());
        return Ok(report);
    }
    report.k1_hat = Some(0);
    if lin_res <= sub_res {
        let f = linear.expect("finite residual implies a fit");
        let eta = (j as f64 * f.slope).exp();
        report.regime = Regime::RLinear;
        report.eta_hat = Some(eta);
        report.c_hat = Some(f.intercept.exp() / eta);
        report.fit_residual = Some(lin_res);
    } else {
        let f = sublinear.expect("finite residual implies a fit");
        let exponent = -f.slope;
        report.regime = Regime::RSublinear;
        report.sublinear_exponent_hat = Some(exponent);
        report.theta_implied = (exponent > 1.0).then(|| (1.0 / exponent + 1.0) / 2.0);
        report.c_hat = Some(f.intercept.exp());
        report.fit_residual = Some(sub_res);
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeCheck {
    pub holds: bool,
    /// Smallest `C` with `gap_k ≤ C·e_k` for every `k ≥ k1`, where `e_k` is
    /// `η^{⌊(k−k1)/j⌋}` for `θ ≤ ½` and `(⌊(k−k1)/j⌋+1)^{−1/(2θ−1)}` above.
    pub c_min: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub eta: Option<f64>,
    pub exponent: Option<f64>,
}

/// Checks the rate envelope selected by `theta` against `gaps` from `k1` on.
/// The envelope holds when the worst ratio `gap_k / e_k` is not still growing
/// over the second half of the checked range.
pub fn verify_envelope(gaps: &[f64], j: usize, theta: f64, k1: usize) -> Result<EnvelopeCheck> {
    if j == 0 {
        return Err(Error::InvalidArgument("j must be positive".into()));
    }
    if !(theta > 0.0 && theta < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "theta = {theta} outside (0, 1)"
        )));
    }
    let ks: Vec<usize> = (k1..gaps.len()).collect();
    let steps = |k: usize| ((k - k1) / j) as f64;
    let (eta, exponent, env): (Option<f64>, Option<f64>, Vec<f64>) = if theta <= 0.5 {
        let (xs, ys): (Vec<f64>, Vec<f64>) = ks
            .iter()
            .filter(|&&k| gaps[k] > 0.0)
            .map(|&k| (steps(k), gaps[k].ln()))
            .unzip();
        let eta = match fit_line(&xs, &ys) {
            Some(f) => f.slope.exp(),
            None => {
                let positive = xs.len();
                return Ok(EnvelopeCheck {
                    holds: positive == 0,
                    c_min: if positive == 0 { 0.0 } else { f64::INFINITY },
                    eta: None,
                    exponent: None,
                });
            }
        };
        if !(eta < 1.0) {
            return Ok(EnvelopeCheck {
                holds: false,
                c_min: f64::INFINITY,
                eta: Some(eta),
                exponent: None,
            });
        }
        let env = ks.iter().map(|&k| eta.powf(steps(k))).collect();
        (Some(eta), None, env)
    } else {
        let e = 1.0 / (2.0 * theta - 1.0);
        let env = ks.iter().map(|&k| (steps(k) + 1.0).powf(-e)).collect();
        (None, Some(e), env)
    };
    let ratios: Vec<f64> = ks
        .iter()
        .zip(&env)
        .map(|(&k, &e)| if e > 0.0 { gaps[k] / e } else { f64::INFINITY })
        .collect();
    let c_min = ratios.iter().copied().fold(0.0, f64::max);
    let half = ratios.len() / 2;
    let first = ratios[..half].iter().copied().fold(0.0, f64::max);
    let second = ratios[half..].iter().copied().fold(0.0, f64::max);
    let holds = c_min.is_finite() && (half == 0 || second <= first * (1.0 + ENVELOPE_SLACK));
    Ok(EnvelopeCheck {
        holds,
        c_min,
        eta,
        exponent,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KlExponentEstimate {
    /// `None` when the tail does not support a regression.
    pub theta_hat: Option<f64>,
    pub slope: Option<f64>,
    pub fit_residual: Option<f64>,
    pub points: usize,
}

/// Regresses `log(f_k − f*)` on `log dist_k` over the tail; `θ̂ = 1/slope`.
pub fn estimate_kl_exponent(trace: &IterTrace, fstar: f64) -> KlExponentEstimate {
    let r = &trace.records;
    let (xs, ys): (Vec<f64>, Vec<f64>) = r[tail_start(r.len())..]
        .iter()
        .filter(|rec| rec.f - fstar > 0.0 && rec.dist > 0.0)
        .map(|rec| (rec.dist.ln(), (rec.f - fstar).ln()))
        .unzip();
    let points = xs.len();
    let undetermined = KlExponentEstimate {
        theta_hat: None,
        slope: None,
        fit_residual: None,
        points,
    };
    if points < MIN_FIT_POINTS {
        return undetermined;
    }
    match fit_line(&xs, &ys) {
        Some(f) if f.slope > 0.0 => KlExponentEstimate {
            theta_hat: Some((1.0 / f.slope).clamp(0.0, 1.0 - f64::EPSILON)),
            slope: Some(f.slope),
            fit_residual: Some(f.max_residual),
            points,
        },
        _ => undetermined,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiReport {
    /// `None` when every denominator was zero.
    pub chi_hat: Option<f64>,
    pub k0: usize,
    /// Indices `k` whose denominator `diff_k` was zero.
    pub skipped: Vec<usize>,
}

impl ChiReport {
    pub fn is_vacuous(&self) -> bool {
        self.chi_hat.is_none()
    }
}

/// `max ‖diff_{k−1}‖ / ‖diff_k‖` over the tail of one block's differences.
pub fn check_chi_ratio(diffs: &[f64]) -> Result<ChiReport> {
    if diffs.len() < 3 {
        return Err(Error::TraceTooShort {
            len: diffs.len(),
            needed: 2,
        });
    }
    let mut skipped = Vec::new();
    let ratios: Vec<Option<f64>> = (1..diffs.len())
        .map(|k| {
            if diffs[k] > 0.0 {
                Some(diffs[k - 1] / diffs[k])
            } else {
                skipped.push(k);
                None
            }
        })
        .collect();
    let start = tail_start(diffs.len()).max(1);
    let chi_hat = ratios[start - 1..]
        .iter()
        .flatten()
        .copied()
        .reduce(f64::max);
    let chi_hat = match chi_hat {
        Some(c) => Some(c),
        None => ratios.iter().flatten().copied().reduce(f64::max),
    };
    let Some(chi) = chi_hat else {
        return Ok(ChiReport {
            chi_hat: None,
            k0: 0,
            skipped,
        });
    };
    let k0 = ratios
        .iter()
        .enumerate()
        .rev()
        .find(|(_, r)| r.is_some_and(|r| r > chi))
        .map_or(0, |(idx, _)| idx + 2);
    Ok(ChiReport {
        chi_hat: Some(chi),
        k0,
        skipped,
    })
}

/// Caller choices for [`diagnose`].
#[derive(Debug, Clone, Default)]
pub struct DiagnoseOptions {
    pub j: usize,
    pub fstar: Option<f64>,
    pub theta: Option<f64>,
    pub alpha: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FstarSource {
    Supplied,
    Header,
    /// Minimum over the trace, a biased proxy for the true limit.
    TraceMin,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Diagnosis {
    pub records: usize,
    pub j: usize,
    pub fstar: f64,
    pub fstar_source: FstarSource,
    pub a1: DecreaseCertificate,
    pub a1_conclusive: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub a2: Option<A2Certificate>,
    pub rate: RateReport,
    pub kl_exponent: KlExponentEstimate,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub envelope: Option<EnvelopeCheck>,
    pub chi: BTreeMap<String, ChiReport>,
}

/// Runs every applicable check on one trace.
pub fn diagnose(trace: &IterTrace, opts: &DiagnoseOptions) -> Result<Diagnosis> {
    let (fstar, fstar_source) = match (opts.fstar, trace.meta.fstar) {
        (Some(f), _) => (f, FstarSource::Supplied),
        (None, Some(f)) => (f, FstarSource::Header),
        (None, None) => (
            trace.min_f().ok_or(Error::TraceTooShort {
                len: 0,
                needed: opts.j,
            })?,
            FstarSource::TraceMin,
        ),
    };
    let a1 = check_a1(trace, opts.j)?;
    let a2 = opts.alpha.map(|a| check_a2(trace, opts.j, a)).transpose()?;
    let gaps: Vec<f64> = trace.gaps(fstar).into_iter().map(|g| g.max(0.0)).collect();
    let rate = fit_rate(&gaps, opts.j)?;
    let envelope = opts
        .theta
        .filter(|t| *t > 0.0 && *t < 1.0)
        .map(|t| verify_envelope(&gaps, opts.j, t, rate.k1_hat.unwrap_or(0)))
        .transpose()?;
    let mut chi = BTreeMap::new();
    for name in trace.block_names() {
        let series = trace.block_diff_series(&name);
        if series.len() >= 3 {
            chi.insert(name, check_chi_ratio(&series)?);
        }
    }
    Ok(Diagnosis {
        records: trace.len(),
        j: opts.j,
        fstar,
        fstar_source,
        a1_conclusive: a1.conclusive(trace.len()),
        a1,
        a2,
        rate,
        kl_exponent: estimate_kl_exponent(trace, fstar),
        envelope,
        chi,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(f: &[f64], d: &[f64]) -> IterTrace {
        IterTrace::from_values(f, d)
    }

    #[test]
    fn a1_geometric_example() {
        let f: Vec<f64> = (0..30).map(|k| 0.25f64.powi(k)).collect();
        let d: Vec<f64> = (0..30).map(|k| 0.5f64.powi(k)).collect();
        let cert = check_a1(&trace(&f, &d), 1).unwrap();
        assert_eq!(cert.k0_hat, 0);
        assert!(cert.violations.is_empty());
        assert!(cert.holds_after_k0);
        assert!((cert.c1_hat.finite().unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn a1_constant_trace_is_vacuous() {
        let cert = check_a1(&trace(&[5.0; 6], &[0.0; 6]), 1).unwrap();
        assert!(cert.holds_after_k0);
        assert_eq!(cert.c1_hat, Bound::Unbounded);
    }

    #[test]
    fn a1_oscillating_example() {
        let f = [1.0, 1.1, 0.5, 0.55, 0.25];
        let cert = check_a1(&trace(&f, &[1.0; 5]), 1).unwrap();
        assert_eq!(cert.violations, vec![0, 2]);
        assert_eq!(cert.k0_hat, 3);
        let d = [1.0, 1.0, 1.0, 1.0, 0.5];
        let cert = check_a1(&trace(&f, &d), 2).unwrap();
        assert!(cert.holds_after_k0);
        assert!(cert.violations.is_empty());
        assert!((cert.c1_hat.finite().unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn a1_rejects_short_trace_and_zero_j() {
        assert!(matches!(
            check_a1(&trace(&[1.0], &[1.0]), 1),
            Err(Error::TraceTooShort { .. })
        ));
        assert!(check_a1(&trace(&[1.0, 0.5], &[1.0, 1.0]), 0).is_err());
    }

    #[test]
    fn a1_failure_at_the_end_has_no_valid_burn_in() {
        let f = [1.0, 0.5, 0.25, 0.3];
        let cert = check_a1(&trace(&f, &[1.0; 4]), 1).unwrap();
        assert!(!cert.holds_after_k0);
        assert_eq!(cert.violations, vec![2]);
        assert_eq!(cert.k0_hat, 2);
    }

    #[test]
    fn a2_flags_incompatible_alpha_on_sublinear_trace() {
        // gap (k+1)^-2 with dist (k+1)^-1.5 is consistent with θ = 3/4.
        let n = 200;
        let f: Vec<f64> = (0..n).map(|k| ((k + 1) as f64).powi(-2)).collect();
        let d: Vec<f64> = (0..n).map(|k| ((k + 1) as f64).powf(-1.5)).collect();
        let ok = check_a2(&trace(&f, &d), 1, 0.5).unwrap();
        assert!(ok.holds_after_k0);
        assert!(ok.violations.is_empty());
        let bad = check_a2(&trace(&f, &d), 1, 1.0).unwrap();
        assert!(!bad.holds_after_k0);
        assert!(!bad.violations.is_empty());
    }

    #[test]
    fn a2_quadratic_toy_constant() {
        let f: Vec<f64> = (0..40).map(|k| 0.25f64.powi(k)).collect();
        let d: Vec<f64> = (0..40).map(|k| 2.0 * 0.5f64.powi(k)).collect();
        let cert = check_a2(&trace(&f, &d), 1, 0.5).unwrap();
        assert!((cert.c2_hat.finite().unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn bound_serializes_as_number_or_sentinel() {
        assert_eq!(serde_json::to_string(&Bound::Finite(0.5)).unwrap(), "0.5");
        assert_eq!(
            serde_json::to_string(&Bound::Unbounded).unwrap(),
            "\"unbounded\""
        );
        let b: Bound = serde_json::from_str("\"unbounded\"").unwrap();
        assert_eq!(b, Bound::Unbounded);
        let b: Bound = serde_json::from_str("3").unwrap();
        assert_eq!(b, Bound::Finite(3.0));
    }

    #[test]
    fn lemma1_quadratic_toy_and_corruption() {
        let n = 30;
        let f: Vec<f64> = (0..n).map(|k| 0.25f64.powi(k)).collect();
        let d: Vec<f64> = (0..n).map(|k| 2.0 * 0.5f64.powi(k)).collect();
        let t = trace(&f, &d);
        let cert = check_a1(&t, 1).unwrap();
        let kl = KLParams::new(0.5, 0.5, 0.0).unwrap();
        let rep = check_lemma1(&t, &kl, &cert, 1).unwrap();
        assert!(!rep.checks.is_empty());
        assert!(rep.all_hold());

        let mut f2 = f.clone();
        f2[10] *= 1.5;
        let t2 = trace(&f2, &d);
        let rep = check_lemma1(&t2, &kl, &cert, 1).unwrap();
        assert!(!rep.all_hold());
        assert!(rep.worst_margin.unwrap() < 0.0);
    }

    #[test]
    fn lemma1_at_fstar_is_vacuous_and_needs_fstar() {
        let t = trace(&[0.0; 5], &[0.0; 5]);
        let cert = DecreaseCertificate {
            j: 1,
            c1_hat: Bound::Finite(1.0),
            k0_hat: 0,
            violations: vec![],
            holds_after_k0: true,
        };
        let kl = KLParams::new(0.5, 0.5, 0.0).unwrap();
        let rep = check_lemma1(&t, &kl, &cert, 1).unwrap();
        assert!(rep.checks.is_empty());
        assert_eq!(rep.worst_margin, None);
        let missing = KLParams { fstar: None, ..kl };
        assert!(matches!(
            check_lemma1(&t, &missing, &cert, 1),
            Err(Error::MissingFstar)
        ));
    }

    #[test]
    fn fit_rate_examples() {
        let geo: Vec<f64> = (0..200).map(|k| 0.5f64.powi(k)).collect();
        let r = fit_rate(&geo, 1).unwrap();
        assert_eq!(r.regime, Regime::RLinear);
        assert!((r.eta_hat.unwrap() - 0.5).abs() < 1e-9);
        assert!(r.fit_residual.unwrap() < 1e-9);
        assert!(r.sublinear_exponent_hat.is_none());

        let poly: Vec<f64> = (0..200).map(|k| ((k + 1) as f64).powi(-2)).collect();
        let r = fit_rate(&poly, 1).unwrap();
        assert_eq!(r.regime, Regime::RSublinear);
        assert!((r.sublinear_exponent_hat.unwrap() - 2.0).abs() < 1e-6);
        assert!((r.theta_implied.unwrap() - 0.75).abs() < 1e-6);
        assert!(r.eta_hat.is_none());

        let mut fin = vec![1.0, 0.3];
        fin.extend([0.0; 20]);
        let r = fit_rate(&fin, 1).unwrap();
        assert_eq!(r.regime, Regime::Finite);
        assert_eq!(r.k1_hat, Some(2));
    }

    #[test]
    fn fit_rate_short_input_is_undetermined() {
        let r = fit_rate(&[1.0, 0.5, 0.25], 1).unwrap();
        assert_eq!(r.regime, Regime::Undetermined);
        assert!(fit_rate(&[1.0, -0.5], 1).is_err());
    }

    #[test]
    fn envelope_examples() {
        let geo: Vec<f64> = (0..100).map(|k| 0.5f64.powi(k)).collect();
        let e = verify_envelope(&geo, 1, 0.5, 0).unwrap();
        assert!(e.holds);
        assert!((e.c_min - 1.0).abs() < 1e-9);

        let poly: Vec<f64> = (0..100).map(|k| ((k + 1) as f64).powi(-2)).collect();
        let e = verify_envelope(&poly, 1, 0.75, 0).unwrap();
        assert!(e.holds);
        assert!((e.c_min - 1.0).abs() < 1e-12);

        let slow: Vec<f64> = (0..100).map(|k| 1.0 / (k + 1) as f64).collect();
        assert!(!verify_envelope(&slow, 1, 0.75, 0).unwrap().holds);
    }

    #[test]
    fn kl_exponent_examples() {
        let xs: Vec<f64> = (0..100).map(|k| 0.97f64.powi(k)).collect();
        let f: Vec<f64> = xs.iter().map(|x| x.powi(4)).collect();
        let d: Vec<f64> = xs.iter().map(|x| 4.0 * x.powi(3)).collect();
        let est = estimate_kl_exponent(&trace(&f, &d), 0.0);
        assert!((est.theta_hat.unwrap() - 0.75).abs() < 1e-9);

        let f: Vec<f64> = xs.iter().map(|x| x * x).collect();
        let d: Vec<f64> = xs.iter().map(|x| 2.0 * x).collect();
        let est = estimate_kl_exponent(&trace(&f, &d), 0.0);
        assert!((est.theta_hat.unwrap() - 0.5).abs() < 1e-9);

        let est = estimate_kl_exponent(&trace(&[2.0; 40], &[1.0; 40]), 0.0);
        assert_eq!(est.theta_hat, None);
    }

    #[test]
    fn chi_ratio_examples() {
        let geo: Vec<f64> = (0..30).map(|k| 0.5f64.powi(k)).collect();
        let c = check_chi_ratio(&geo).unwrap();
        assert!((c.chi_hat.unwrap() - 2.0).abs() < 1e-12);
        assert!(c.skipped.is_empty());

        let c = check_chi_ratio(&[0.3; 10]).unwrap();
        assert_eq!(c.chi_hat, Some(1.0));

        let d = [1.0, 0.5, 0.0, 0.4, 0.2, 0.1, 0.05];
        let c = check_chi_ratio(&d).unwrap();
        assert_eq!(c.skipped, vec![2]);
        assert!((c.chi_hat.unwrap() - 2.0).abs() < 1e-12);

        let c = check_chi_ratio(&[0.0; 5]).unwrap();
        assert!(c.is_vacuous());
        assert!(check_chi_ratio(&[1.0, 2.0]).is_err());
    }
}
