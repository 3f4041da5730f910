//! Interval censored observations (case 2) and current status observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Which of the three intervals `[0, T]`, `(T, U]`, `(U, inf)` holds the
/// hidden event time.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Delta {
    Left = 1,
    Interval = 2,
    Right = 3,
}

impl Delta {
    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            1 => Some(Delta::Left),
            2 => Some(Delta::Interval),
            3 => Some(Delta::Right),
            _ => None,
        }
    }

    /// Classifies an event time `x` against the observation pair `(t, u)`.
    pub fn classify<T: Scalar>(x: T, t: T, u: T) -> Self {
        if x <= t {
            Delta::Left
        } else if x <= u {
            Delta::Interval
        } else {
            Delta::Right
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Record<T> {
    pub t: T,
    pub u: T,
    pub delta: Delta,
}

impl<T> Record<T> {
    pub fn new(t: T, u: T, delta: Delta) -> Self {
        Self { t, u, delta }
    }
}

/// Validated sample of case 2 records on `[0, M]` in the separated case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CensoredSample<T> {
    records: Vec<Record<T>>,
    upper: T,
    epsilon: T,
}

impl<T: Scalar> CensoredSample<T> {
    /// Checks `0 <= t < u <= M` and `u - t >= eps` for every record.
    pub fn new(records: Vec<Record<T>>, upper: T, epsilon: T) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::EmptySample);
        }
        if !(epsilon > T::zero()) {
            return Err(Error::InvalidArgument(format!("separation gap must be positive, got {epsilon}")));
        }
        // relative slack for gaps that are exact only up to rounding
        let slack = epsilon * T::lit(1e-9);
        for (index, r) in records.iter().enumerate() {
            let reason = if !(r.t.is_finite() && r.u.is_finite()) {
                Some("non-finite observation time".to_string())
            } else if r.t < T::zero() || r.u > upper {
                Some(format!("times ({}, {}) outside [0, {upper}]", r.t, r.u))
            } else if r.t >= r.u {
                Some(format!("t = {} is not below u = {}", r.t, r.u))
            } else if r.u - r.t < epsilon - slack {
                Some(format!("u - t = {} below separation gap {epsilon}", r.u - r.t))
            } else {
                None
            };
            if let Some(reason) = reason {
                return Err(Error::InvalidRecord { index, reason });
            }
        }
        Ok(Self { records, upper, epsilon })
    }

    /// Uses the smallest observed `u - t` as separation gap.
    pub fn with_observed_gap(records: Vec<Record<T>>, upper: T) -> Result<Self> {
        let eps = records
            .iter()
            .map(|r| r.u - r.t)
            .fold(T::infinity(), T::min);
        if records.is_empty() {
            return Err(Error::EmptySample);
        }
        Self::new(records, upper, eps)
    }

    pub fn records(&self) -> &[Record<T>] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn upper(&self) -> T {
        self.upper
    }

    pub fn epsilon(&self) -> T {
        self.epsilon
    }

    pub fn count(&self, delta: Delta) -> usize {
        self.records.iter().filter(|r| r.delta == delta).count()
    }
}

/// Current status record: a single inspection time and `1{X <= t}`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurrentStatusRecord<T> {
    pub t: T,
    pub delta: bool,
}
