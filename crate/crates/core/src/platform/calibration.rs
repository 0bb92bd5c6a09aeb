use serde::{Deserialize, Serialize};

use super::PlatformError;

/// Signal weights, score clamps and the delivery link function.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Calibration {
    pub score_cap: f64,
    pub score_floor: f64,
    pub w_watch_full: f64,
    pub w_watch_partial: f64,
    pub w_skip: f64,
    pub w_not_interested: f64,
    /// Delivery probability of a topic at `score_cap`.
    pub saturation_prevalence: f64,
    /// `p_floor = base_prevalence * floor_fraction`.
    pub floor_fraction: f64,
    /// Dwell at or below this is a skip.
    pub skip_threshold_ms: u64,
    /// Multiplier applied to a negative score before a positive signal is
    /// added. 1.0 disables recovery.
    pub negative_recovery: f64,
}

impl Default for Calibration {
    fn default() -> Self {
        Self {
            score_cap: 50.0,
            score_floor: -50.0,
            w_watch_full: 4.0,
            w_watch_partial: 1.0,
            w_skip: -1.0,
            w_not_interested: -12.0,
            saturation_prevalence: 0.425,
            floor_fraction: 0.25,
            skip_threshold_ms: 2000,
            negative_recovery: 1.0,
        }
    }
}

pub const PROFILES: [&str; 2] = ["default", "relapse"];

impl Calibration {
    /// Named profiles. `relapse` lets negative affinity decay toward zero
    /// when the account re-engages with a topic.
    pub fn profile(name: &str) -> Result<Self, PlatformError> {
        match name {
            "default" => Ok(Self::default()),
            "relapse" => Ok(Self { negative_recovery: 0.5, ..Self::default() }),
            other => Err(PlatformError::Config(format!(
                "unknown calibration profile {other:?} (expected one of {})",
                PROFILES.join(", ")
            ))),
        }
    }

    pub fn validate(&self) -> Result<(), PlatformError> {
        let err = |m: String| Err(PlatformError::Config(m));
        let finite = [
            self.score_cap,
            self.score_floor,
            self.w_watch_full,
            self.w_watch_partial,
            self.w_skip,
            self.w_not_interested,
            self.saturation_prevalence,
            self.floor_fraction,
            self.negative_recovery,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return err("calibration constants must be finite".into());
        }
        if !(self.w_not_interested < self.w_skip
            && self.w_skip < 0.0
            && 0.0 <= self.w_watch_partial
            && self.w_watch_partial < self.w_watch_full)
        {
            return err(format!(
                "signal weights must satisfy w_not_interested < w_skip < 0 <= w_watch_partial < w_watch_full \
                 (got {} < {} < 0 <= {} < {})",
                self.w_not_interested, self.w_skip, self.w_watch_partial, self.w_watch_full
            ));
        }
        if !(self.score_floor < 0.0 && 0.0 < self.score_cap) {
            return err(format!("need score_floor < 0 < score_cap (got {} / {})", self.score_floor, self.score_cap));
        }
        if !(0.0 < self.saturation_prevalence && self.saturation_prevalence <= 1.0) {
            return err(format!("saturation_prevalence {} not in (0, 1]", self.saturation_prevalence));
        }
        if !(0.0..=1.0).contains(&self.floor_fraction) {
            return err(format!("floor_fraction {} not in [0, 1]", self.floor_fraction));
        }
        if !(0.0..=1.0).contains(&self.negative_recovery) {
            return err(format!("negative_recovery {} not in [0, 1]", self.negative_recovery));
        }
        Ok(())
    }

    pub fn clamp_score(&self, score: f64) -> f64 {
        score.clamp(self.score_floor, self.score_cap)
    }

    pub fn p_floor(&self, base: f64) -> f64 {
        base * self.floor_fraction
    }

    /// Piecewise-linear link: `base` at 0, `saturation_prevalence` at
    /// `score_cap`, `p_floor` at `score_floor`.
    pub fn delivery(&self, base: f64, score: f64) -> f64 {
        let p_floor = self.p_floor(base);
        let p_cap = self.saturation_prevalence.max(base);
        if score <= self.score_floor {
            return p_floor;
        }
        if score >= self.score_cap {
            return p_cap;
        }
        let g = if score >= 0.0 {
            (p_cap - base) * score / self.score_cap
        } else {
            (base - p_floor) * score / -self.score_floor
        };
        (base + g).clamp(p_floor, p_cap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate() {
        for name in PROFILES {
            Calibration::profile(name).unwrap().validate().unwrap();
        }
        assert!(Calibration::profile("nope").is_err());
    }

    #[test]
    fn weight_ordering_enforced() {
        let bad = Calibration { w_not_interested: -0.5, ..Calibration::default() };
        assert!(bad.validate().is_err());
        let bad = Calibration { w_watch_partial: 5.0, ..Calibration::default() };
        assert!(bad.validate().is_err());
        let bad = Calibration { w_skip: 0.0, ..Calibration::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn link_endpoints() {
        let c = Calibration::default();
        assert_eq!(c.delivery(0.085, 0.0), 0.085);
        assert_eq!(c.delivery(0.085, c.score_cap), 0.425);
        assert_eq!(c.delivery(0.085, c.score_floor), 0.085 / 4.0);
        assert_eq!(c.delivery(0.085, 1e9), 0.425);
    }

    #[test]
    fn link_is_monotone() {
        let c = Calibration::default();
        let mut prev = 0.0;
        for i in -60..=60 {
            let p = c.delivery(0.015, i as f64);
            assert!(p >= prev);
            prev = p;
        }
    }
}
