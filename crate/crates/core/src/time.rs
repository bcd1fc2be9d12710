//! Simulated time.
//!
//! All simulated time is an integer count of microseconds so that traces are
//! bit-comparable across runs and processes.

use std::fmt;

use serde::de::{self, Visitor};
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Simulated microseconds.
pub type Micros = u64;

pub const MICROS_PER_SECOND: Micros = 1_000_000;

/// A point in simulated time or "never".
///
/// On the wire this is either a JSON integer or the string `"inf"`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimeBound {
    At(Micros),
    Inf,
}

impl TimeBound {
    pub fn min(self, other: TimeBound) -> TimeBound {
        std::cmp::min(self, other)
    }

    pub fn finite(self) -> Option<Micros> {
        match self {
            TimeBound::At(t) => Some(t),
            TimeBound::Inf => None,
        }
    }

    pub fn is_inf(self) -> bool {
        matches!(self, TimeBound::Inf)
    }
}

impl From<Option<Micros>> for TimeBound {
    fn from(t: Option<Micros>) -> Self {
        t.map_or(TimeBound::Inf, TimeBound::At)
    }
}

impl fmt::Display for TimeBound {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TimeBound::At(t) => write!(f, "{t}"),
            TimeBound::Inf => f.write_str("inf"),
        }
    }
}

impl Serialize for TimeBound {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        match self {
            TimeBound::At(t) => serializer.serialize_u64(*t),
            TimeBound::Inf => serializer.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for TimeBound {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        struct TimeBoundVisitor;

        impl Visitor<'_> for TimeBoundVisitor {
            type Value = TimeBound;

            fn expecting(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str("a nonnegative integer or \"inf\"")
            }

            fn visit_u64<E: de::Error>(self, v: u64) -> Result<TimeBound, E> {
                Ok(TimeBound::At(v))
            }

            fn visit_i64<E: de::Error>(self, v: i64) -> Result<TimeBound, E> {
                u64::try_from(v).map(TimeBound::At).map_err(|_| E::invalid_value(de::Unexpected::Signed(v), &self))
            }

            fn visit_str<E: de::Error>(self, v: &str) -> Result<TimeBound, E> {
                if v == "inf" {
                    Ok(TimeBound::Inf)
                } else {
                    Err(E::invalid_value(de::Unexpected::Str(v), &self))
                }
            }
        }

        deserializer.deserialize_any(TimeBoundVisitor)
    }
}

/// Parses a human duration such as `60s`, `1500ms`, `2h` or a bare
/// microsecond count.
pub fn parse_duration(text: &str) -> Option<Micros> {
    let text = text.trim();
    let split = text.find(|c: char| !c.is_ascii_digit()).unwrap_or(text.len());
    let (digits, unit) = text.split_at(split);
    let value: Micros = digits.parse().ok()?;
    let scale = match unit {
        "" | "us" => 1,
        "ms" => 1_000,
        "s" => MICROS_PER_SECOND,
        "m" | "min" => 60 * MICROS_PER_SECOND,
        "h" => 3_600 * MICROS_PER_SECOND,
        _ => return None,
    };
    value.checked_mul(scale)
}
