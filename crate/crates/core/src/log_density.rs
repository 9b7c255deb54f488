//! Log-density values with a rejection sentinel.
//!
//! Every derived quantity in the engine (objective values, log-likelihoods,
//! log-priors, log-posteriors) is carried as a [`LogDensity`]. The value
//! `-inf` is the rejection sentinel: it marks samples outside a prior's
//! support, failed model evaluations and non-finite model outputs. The type
//! never holds `NaN` or `+inf`, so sums of log-densities stay well defined.

use std::cmp::Ordering;
use std::fmt;
use std::iter::Sum;
use std::ops::Add;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Clone, Copy, PartialEq, PartialOrd, Default)]
pub struct LogDensity(f64);

impl LogDensity {
    /// The rejection sentinel.
    pub const REJECTED: LogDensity = LogDensity(f64::NEG_INFINITY);
    pub const ZERO: LogDensity = LogDensity(0.0);

    /// Wraps a raw value. `NaN` and `+inf` collapse onto the sentinel.
    pub fn new(value: f64) -> Self {
        if value.is_nan() || value == f64::INFINITY {
            Self::REJECTED
        } else {
            LogDensity(value)
        }
    }

    pub fn value(self) -> f64 {
        self.0
    }

    pub fn is_rejected(self) -> bool {
        self.0 == f64::NEG_INFINITY
    }

    pub fn is_finite(self) -> bool {
        !self.is_rejected()
    }

    /// Multiplies by a non-negative tempering exponent. `0 * -inf` is defined
    /// as `0` so that an untempered likelihood contributes nothing.
    pub fn tempered(self, exponent: f64) -> Self {
        debug_assert!(exponent >= 0.0);
        if exponent == 0.0 {
            Self::ZERO
        } else {
            LogDensity::new(self.0 * exponent)
        }
    }

    /// Total order; the sentinel sorts below every finite value.
    pub fn total_cmp(&self, other: &Self) -> Ordering {
        self.0.total_cmp(&other.0)
    }
}

impl Add for LogDensity {
    type Output = LogDensity;

    fn add(self, rhs: LogDensity) -> LogDensity {
        LogDensity::new(self.0 + rhs.0)
    }
}

impl Sum for LogDensity {
    fn sum<I: Iterator<Item = LogDensity>>(iter: I) -> LogDensity {
        iter.fold(LogDensity::ZERO, |acc, x| acc + x)
    }
}

impl From<f64> for LogDensity {
    fn from(value: f64) -> Self {
        LogDensity::new(value)
    }
}

impl fmt::Debug for LogDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_rejected() {
            write!(f, "LogDensity(-inf)")
        } else {
            write!(f, "LogDensity({:?})", self.0)
        }
    }
}

impl fmt::Display for LogDensity {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.is_rejected() {
            write!(f, "-inf")
        } else {
            write!(f, "{}", self.0)
        }
    }
}

impl Serialize for LogDensity {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        crate::ext_f64::serialize(&self.0, serializer)
    }
}

impl<'de> Deserialize<'de> for LogDensity {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        crate::ext_f64::deserialize(deserializer).map(LogDensity::new)
    }
}
