//! Batch front end: configuration, number formatting and the studies behind
//! `skflow study`.

pub mod config;
pub mod study;

use std::fmt;

/// Rejected input: bad flags, bad config, unreadable files. Exit code 2.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

/// A run that completed but did not meet its criteria. Exit code 1.
#[derive(Debug)]
pub struct CriterionFailure(pub String);

impl fmt::Display for CriterionFailure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for CriterionFailure {}

pub fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

/// Exit code for an error returned by a command.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    if err.downcast_ref::<CriterionFailure>().is_some() {
        1
    } else {
        2
    }
}

/// `x` rounded to 12 significant digits.
pub fn round12(x: f64) -> f64 {
    if !x.is_finite() || x == 0.0 {
        return x;
    }
    format!("{x:.11e}").parse().unwrap_or(x)
}

/// `x` printed with at most 12 significant digits.
pub fn sig12(x: f64) -> String {
    format!("{}", round12(x))
}
