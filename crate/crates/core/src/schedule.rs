//! Lifting parameters shared by every other module.
//!
//! A [`LiftingSchedule`] is the raw, serializable record. Validation turns it
//! into a [`ValidSchedule`], which also caches the per-level variance triples
//! of the Gaussian objects `U_k = (u4_k, u2_k, h_k)`.

use serde::{Deserialize, Serialize};

use crate::error::ScheduleError;

/// The parameter bundle governing one interpolation.
///
/// `m_schedule`, `p_schedule` and `q_schedule` all have length `r + 2` and are
/// indexed `0..=r+1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LiftingSchedule {
    pub r: usize,
    pub m_schedule: Vec<f64>,
    pub p_schedule: Vec<f64>,
    pub q_schedule: Vec<f64>,
    pub beta: f64,
    pub s: f64,
    #[serde(default = "default_group_exponent")]
    pub group_exponent: f64,
}

fn default_group_exponent() -> f64 {
    1.0
}

/// Variances of the entries of `U_k`: `(p_{k-1} q_{k-1} - p_k q_k, p_{k-1} - p_k, q_{k-1} - q_k)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LevelVariance {
    pub u4: f64,
    pub u2: f64,
    pub h: f64,
}

impl LevelVariance {
    pub fn is_degenerate(&self) -> bool {
        self.u4 == 0.0 && self.u2 == 0.0 && self.h == 0.0
    }
}

/// A schedule that passed [`LiftingSchedule::validate`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidSchedule {
    params: LiftingSchedule,
    variances: Vec<LevelVariance>,
}

impl LiftingSchedule {
    /// Convenience constructor with `group_exponent = 1`.
    pub fn new(m: Vec<f64>, p: Vec<f64>, q: Vec<f64>, beta: f64, s: f64) -> Self {
        let r = m.len().saturating_sub(2);
        Self {
            r,
            m_schedule: m,
            p_schedule: p,
            q_schedule: q,
            beta,
            s,
            group_exponent: 1.0,
        }
    }

    pub fn with_group_exponent(mut self, p: f64) -> Self {
        self.group_exponent = p;
        self
    }

    /// Checks every chain inequality and caches the per-level variances.
    pub fn validate(self) -> Result<ValidSchedule, ScheduleError> {
        let r = self.r;
        if r == 0 {
            return Err(ScheduleError::ZeroLevels);
        }
        let expected = r + 2;
        for (name, v) in [
            ("mSchedule", &self.m_schedule),
            ("pSchedule", &self.p_schedule),
            ("qSchedule", &self.q_schedule),
        ] {
            if v.len() != expected {
                return Err(ScheduleError::Length {
                    name,
                    found: v.len(),
                    expected,
                });
            }
            if let Some(index) = v.iter().position(|x| !x.is_finite()) {
                return Err(ScheduleError::NonFinite { name, index });
            }
        }

        let m = &self.m_schedule;
        if m[0] != 1.0 {
            return Err(ScheduleError::MFirst(m[0]));
        }
        if m[r + 1] != 0.0 {
            return Err(ScheduleError::MLast(m[r + 1]));
        }
        for (index, &value) in m.iter().enumerate().take(r + 1).skip(1) {
            if !(value > 0.0 && value <= 1.0) {
                return Err(ScheduleError::MRange { index, value });
            }
        }
        check_nonincreasing("mSchedule", m)?;

        for (name, v) in [("pSchedule", &self.p_schedule), ("qSchedule", &self.q_schedule)] {
            if v[0] > 1.0 {
                return Err(ScheduleError::AboveOne { name, value: v[0] });
            }
            check_nonincreasing(name, v)?;
            if v[r + 1] != 0.0 {
                return Err(ScheduleError::NonzeroTail {
                    name,
                    value: v[r + 1],
                });
            }
        }

        if !(self.beta.is_finite() && self.beta >= 0.0) {
            return Err(ScheduleError::Beta(self.beta));
        }
        if !self.s.is_finite() || self.s == 0.0 {
            return Err(ScheduleError::ZeroS(self.s));
        }
        if !(self.group_exponent.is_finite() && self.group_exponent > 0.0) {
            return Err(ScheduleError::GroupExponent(self.group_exponent));
        }

        let p = &self.p_schedule;
        let q = &self.q_schedule;
        let variances = (1..=r + 1)
            .map(|k| LevelVariance {
                u4: p[k - 1] * q[k - 1] - p[k] * q[k],
                u2: p[k - 1] - p[k],
                h: q[k - 1] - q[k],
            })
            .collect();
        Ok(ValidSchedule {
            params: self,
            variances,
        })
    }
}

fn check_nonincreasing(name: &'static str, v: &[f64]) -> Result<(), ScheduleError> {
    match v.windows(2).position(|w| w[1] > w[0]) {
        Some(i) => Err(ScheduleError::NotNonincreasing { name, index: i + 1 }),
        None => Ok(()),
    }
}

impl ValidSchedule {
    pub fn params(&self) -> &LiftingSchedule {
        &self.params
    }

    pub fn into_params(self) -> LiftingSchedule {
        self.params
    }

    pub fn r(&self) -> usize {
        self.params.r
    }

    pub fn beta(&self) -> f64 {
        self.params.beta
    }

    pub fn s(&self) -> f64 {
        self.params.s
    }

    pub fn group_exponent(&self) -> f64 {
        self.params.group_exponent
    }

    /// `m_k` for `k` in `0..=r+1`.
    pub fn m(&self, k: usize) -> f64 {
        self.params.m_schedule[k]
    }

    pub fn p(&self, k: usize) -> f64 {
        self.params.p_schedule[k]
    }

    pub fn q(&self, k: usize) -> f64 {
        self.params.q_schedule[k]
    }

    /// Variance triple of `U_k`, `k` in `1..=r+1`.
    pub fn level_variance(&self, k: usize) -> LevelVariance {
        self.variances[k - 1]
    }

    pub fn variances(&self) -> &[LevelVariance] {
        &self.variances
    }

    /// Copy with a different inverse temperature; the chain checks are
    /// unaffected by `beta`.
    pub fn with_beta(&self, beta: f64) -> Result<ValidSchedule, ScheduleError> {
        let mut params = self.params.clone();
        params.beta = beta;
        params.validate()
    }
}

/// The weight `ω(k1; p)`: 1 on the first level, the group exponent otherwise.
pub fn omega(k1: usize, group_exponent: f64) -> Result<f64, ScheduleError> {
    match k1 {
        0 => Err(ScheduleError::LevelIndex(0)),
        1 => Ok(1.0),
        _ => Ok(group_exponent),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn level_one() -> LiftingSchedule {
        LiftingSchedule::new(
            vec![1.0, 0.5, 0.0],
            vec![1.0, 0.5, 0.0],
            vec![1.0, 0.5, 0.0],
            1.0,
            -1.0,
        )
    }

    #[test]
    fn level_one_schedule_is_valid() {
        let v = level_one().validate().unwrap();
        assert_eq!(v.r(), 1);
        assert_eq!(v.level_variance(1).u2, 0.5);
        assert_eq!(v.level_variance(2).u4, 0.25);
    }

    #[test]
    fn reports_first_increase_by_index() {
        let s = LiftingSchedule::new(
            vec![1.0, 0.8, 0.3, 0.0],
            vec![1.0, 0.4, 0.6, 0.0],
            vec![1.0, 0.4, 0.2, 0.0],
            1.0,
            -1.0,
        );
        let err = s.validate().unwrap_err();
        assert_eq!(err.to_string(), "pSchedule not nonincreasing at index 2");
    }

    #[test]
    fn level_two_variance_triple() {
        let s = LiftingSchedule::new(
            vec![1.0, 0.8, 0.3, 0.0],
            vec![1.0, 0.7, 0.2, 0.0],
            vec![1.0, 0.7, 0.2, 0.0],
            1.0,
            -1.0,
        )
        .validate()
        .unwrap();
        let v = s.level_variance(2);
        assert!((v.u4 - 0.45).abs() < 1e-15);
        assert!((v.u2 - 0.5).abs() < 1e-15);
        assert!((v.h - 0.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_scalars() {
        let mut s = level_one();
        s.s = 0.0;
        assert_eq!(s.validate().unwrap_err(), ScheduleError::ZeroS(0.0));
        let mut s = level_one();
        s.beta = -1.0;
        assert_eq!(s.validate().unwrap_err(), ScheduleError::Beta(-1.0));
        let mut s = level_one();
        s.m_schedule[0] = 0.9;
        assert_eq!(s.validate().unwrap_err(), ScheduleError::MFirst(0.9));
        let mut s = level_one();
        s.m_schedule[2] = 0.1;
        assert!(matches!(s.validate(), Err(ScheduleError::MLast(_))));
        let mut s = level_one();
        s.m_schedule[1] = 1.5;
        assert!(matches!(s.validate(), Err(ScheduleError::MRange { index: 1, .. })));
        let mut s = level_one();
        s.group_exponent = 0.0;
        assert!(matches!(s.validate(), Err(ScheduleError::GroupExponent(_))));
    }

    #[test]
    fn omega_branches() {
        assert_eq!(omega(1, 7.0).unwrap(), 1.0);
        assert_eq!(omega(2, 7.0).unwrap(), 7.0);
        assert_eq!(omega(5, 1.0).unwrap(), 1.0);
        assert!(omega(0, 1.0).is_err());
    }

    #[test]
    fn serializes_as_flat_record() {
        let json = serde_json::to_value(level_one()).unwrap();
        let keys: Vec<_> = json.as_object().unwrap().keys().cloned().collect();
        for k in ["r", "m_schedule", "p_schedule", "q_schedule", "beta", "s", "group_exponent"] {
            assert!(keys.contains(&k.to_string()), "missing {k}");
        }
    }

    fn chain(len: usize) -> impl Strategy<Value = Vec<f64>> {
        proptest::collection::vec(0.0f64..1.0, len).prop_map(|mut v| {
            v.sort_by(|a, b| b.partial_cmp(a).unwrap());
            *v.last_mut().unwrap() = 0.0;
            v
        })
    }

    fn valid_schedule() -> impl Strategy<Value = LiftingSchedule> {
        (1usize..5).prop_flat_map(|r| {
            (
                chain(r + 2),
                chain(r + 2),
                proptest::collection::vec(0.05f64..1.0, r),
            )
                .prop_map(move |(p, q, mut m)| {
                    m.sort_by(|a, b| b.partial_cmp(a).unwrap());
                    let mut ms = vec![1.0];
                    ms.extend(m);
                    ms.push(0.0);
                    LiftingSchedule::new(ms, p, q, 1.0, -1.0)
                })
        })
    }

    proptest! {
        #[test]
        fn validation_is_idempotent(s in valid_schedule()) {
            let once = s.clone().validate().unwrap();
            let twice = once.params().clone().validate().unwrap();
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once.params(), &s);
        }

        #[test]
        fn variances_telescope(s in valid_schedule()) {
            let v = s.clone().validate().unwrap();
            let (su4, su2, sh) = v.variances().iter().fold((0.0, 0.0, 0.0), |acc, l| {
                (acc.0 + l.u4, acc.1 + l.u2, acc.2 + l.h)
            });
            prop_assert!((su2 - s.p_schedule[0]).abs() < 1e-12);
            prop_assert!((sh - s.q_schedule[0]).abs() < 1e-12);
            prop_assert!((su4 - s.p_schedule[0] * s.q_schedule[0]).abs() < 1e-12);
            prop_assert!(v.variances().iter().all(|l| l.u4 >= 0.0 && l.u2 >= 0.0 && l.h >= 0.0));
        }
    }
}
