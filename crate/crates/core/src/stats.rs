//! Inferential statistics used by the audit analyses.
//!
//! Everything here is a pure function over counts. The standard-normal
//! quantile is Wichura's AS241 (`PPND16`) rational approximation, accurate
//! to about 1e-16 relative error, so intervals and critical values are
//! bit-stable across platforms without table lookups.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::puppet::BehaviorLog;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("invalid input: {0}")]
    Domain(String),
    #[error("degenerate test: pooled proportion {0} has zero variance")]
    Degenerate(f64),
    #[error("logs differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

/// Inverse of the standard normal CDF.
///
/// Returns `-inf`/`+inf` at 0 and 1 and NaN outside `[0, 1]`.
pub fn normal_quantile(p: f64) -> f64 {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }

    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = ((((((2509.0809287301226727 * r + 33430.575583588128105) * r + 67265.770927008700853) * r
            + 45921.953931549871457)
            * r
            + 13731.693765509461125)
            * r
            + 1971.5909503065514427)
            * r
            + 133.14166789178437745)
            * r
            + 3.387132872796366608;
        let den = ((((((5226.495278852545925 * r + 28729.085735721942674) * r + 39307.89580009271061) * r
            + 21213.794301586595867)
            * r
            + 5394.1960214247511077)
            * r
            + 687.1870074920579083)
            * r
            + 42.313330701600911252)
            * r
            + 1.0;
        return q * num / den;
    }

    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r + 0.24178072517745061177) * r
            + 1.27045825245236838258)
            * r
            + 3.64784832476320460504)
            * r
            + 5.7694972214606914055)
            * r
            + 4.6303378461565452959)
            * r
            + 1.42343711074968357734;
        let den = ((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r + 0.0151986665636164571966)
            * r
            + 0.14810397642748007459)
            * r
            + 0.68976733498510000455)
            * r
            + 1.6763848301838038494)
            * r
            + 2.05319162663775882187)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r + 0.0012426609473880784386)
            * r
            + 0.026532189526576123093)
            * r
            + 0.29656057182850489123)
            * r
            + 1.7848265399172913358)
            * r
            + 5.4637849111641143699)
            * r
            + 6.6579046435011037772;
        let den = ((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r + 1.8463183175100546818e-5)
            * r
            + 7.868691311456132591e-4)
            * r
            + 0.0148753612908506148525)
            * r
            + 0.13692988092273580531)
            * r
            + 0.59983220655588793769)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// Standard normal CDF. Only used for reporting p-values; decisions
/// compare `z` against quantiles.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / std::f64::consts::SQRT_2)
}

/// Two-sided critical value for a confidence level (2.5758... at 0.99).
pub fn two_sided_critical(confidence: f64) -> f64 {
    normal_quantile(1.0 - (1.0 - confidence) / 2.0)
}

pub fn one_sided_critical(confidence: f64) -> f64 {
    normal_quantile(confidence)
}

fn check_confidence(confidence: f64) -> Result<(), StatsError> {
    if confidence > 0.0 && confidence < 1.0 {
        Ok(())
    } else {
        Err(StatsError::Domain(format!("confidence {confidence} not in (0, 1)")))
    }
}

/// Successes out of trials.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProportionSample {
    pub successes: u64,
    pub trials: u64,
}

impl ProportionSample {
    pub fn new(successes: u64, trials: u64) -> Result<Self, StatsError> {
        if trials == 0 {
            return Err(StatsError::Domain("trials must be >= 1".into()));
        }
        if successes > trials {
            return Err(StatsError::Domain(format!("{successes} successes > {trials} trials")));
        }
        Ok(Self { successes, trials })
    }

    pub fn proportion(&self) -> f64 {
        self.successes as f64 / self.trials as f64
    }

    /// On-topic count of one log.
    pub fn from_log(log: &BehaviorLog) -> Result<Self, StatsError> {
        Self::new(log.on_topic_count(), log.entries.len() as u64)
    }

    /// Paired-account aggregation: successes and trials summed across logs
    /// (two 200-video accounts give n = 400).
    pub fn pooled<'a>(logs: impl IntoIterator<Item = &'a BehaviorLog>) -> Result<Self, StatsError> {
        let (x, n) =
            logs.into_iter().fold((0u64, 0u64), |(x, n), log| (x + log.on_topic_count(), n + log.entries.len() as u64));
        Self::new(x, n)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn contains(&self, value: f64) -> bool {
        self.lo <= value && value <= self.hi
    }

    pub fn overlaps(&self, other: &Interval) -> bool {
        self.lo <= other.hi && other.lo <= self.hi
    }
}

/// Agresti-Coull interval for `x` successes in `n` trials, clamped to [0, 1].
pub fn agresti_coull(x: u64, n: u64, confidence: f64) -> Result<Interval, StatsError> {
    check_confidence(confidence)?;
    ProportionSample::new(x, n)?;
    let z = two_sided_critical(confidence);
    let z2 = z * z;
    let n_adj = n as f64 + z2;
    let p_adj = (x as f64 + z2 / 2.0) / n_adj;
    let half = z * (p_adj * (1.0 - p_adj) / n_adj).sqrt();
    Ok(Interval { lo: (p_adj - half).max(0.0), hi: (p_adj + half).min(1.0) })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestMode {
    TwoSided,
    OneSidedGreater,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestVerdict {
    pub z_statistic: f64,
    pub significant: bool,
    /// Sign of `p1 - p2`: -1, 0 or 1.
    pub direction: i8,
    pub confidence: f64,
    pub mode: TestMode,
    pub p_value: f64,
}

/// Pooled two-proportion Z-test of `s1` against `s2`.
pub fn two_prop_ztest(
    s1: ProportionSample,
    s2: ProportionSample,
    confidence: f64,
    mode: TestMode,
) -> Result<TestVerdict, StatsError> {
    check_confidence(confidence)?;
    let s1 = ProportionSample::new(s1.successes, s1.trials)?;
    let s2 = ProportionSample::new(s2.successes, s2.trials)?;
    let (n1, n2) = (s1.trials as f64, s2.trials as f64);
    let pooled = (s1.successes + s2.successes) as f64 / (n1 + n2);
    if pooled <= 0.0 || pooled >= 1.0 {
        return Err(StatsError::Degenerate(pooled));
    }
    let diff = s1.proportion() - s2.proportion();
    let se = (pooled * (1.0 - pooled) * (1.0 / n1 + 1.0 / n2)).sqrt();
    let z = diff / se;
    let (significant, p_value) = match mode {
        TestMode::TwoSided => (z.abs() > two_sided_critical(confidence), 2.0 * normal_cdf(-z.abs())),
        TestMode::OneSidedGreater => (z > one_sided_critical(confidence), normal_cdf(-z)),
    };
    let direction = if diff > 0.0 {
        1
    } else if diff < 0.0 {
        -1
    } else {
        0
    };
    Ok(TestVerdict { z_statistic: z, significant, direction, confidence, mode, p_value })
}

/// `(index, cumulative on-topic count)` for indices 1..=len.
pub fn cumulative_curve(log: &BehaviorLog) -> Vec<(usize, u32)> {
    log.entries
        .iter()
        .scan(0u32, |acc, entry| {
            *acc += entry.classified_on_topic as u32;
            Some((entry.index, *acc))
        })
        .collect()
}

/// Relapse: the ceasing account sees significantly more on-topic videos
/// than its continuing twin (one-sided test).
pub fn detect_relapse(
    ceases: &BehaviorLog,
    continues: &BehaviorLog,
    confidence: f64,
) -> Result<TestVerdict, StatsError> {
    if ceases.entries.len() != continues.entries.len() {
        return Err(StatsError::LengthMismatch(ceases.entries.len(), continues.entries.len()));
    }
    two_prop_ztest(
        ProportionSample::from_log(ceases)?,
        ProportionSample::from_log(continues)?,
        confidence,
        TestMode::OneSidedGreater,
    )
}
