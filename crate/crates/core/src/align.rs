//! Spatial-temporal alignment of a cause series against an effect series.
//!
//! Shifting the cause series by the lag `s` pairs `cause[k]` with
//! `effect[k + s]`, so both carry the same traffic information at the same
//! index. The tail that has no partner is truncated, never padded.

use crate::error::{Error, Result};
use crate::lag::UNDEFINED_LAG;

/// Borrowed views of an aligned pair. `cause[k]` is original cause index `k`
/// and `effect[k]` is original effect index `k + lag`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AlignedPair<'a> {
    pub cause: &'a [f64],
    pub effect: &'a [f64],
    pub lag: usize,
    pub original_len: usize,
}

impl AlignedPair<'_> {
    pub fn len(&self) -> usize {
        self.cause.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cause.is_empty()
    }

    /// Whether the pair is long enough for an order-`var_order` Granger test.
    pub fn is_usable(&self, var_order: usize) -> bool {
        self.len() >= min_aligned_len(var_order)
    }
}

/// Shortest aligned length accepted for a VAR of order `m`: `m` presample
/// values plus at least `10 m` regression rows.
pub fn min_aligned_len(var_order: usize) -> usize {
    11 * var_order
}

pub fn align_pair<'a>(cause: &'a [f64], effect: &'a [f64], lag: i64) -> Result<AlignedPair<'a>> {
    if cause.len() != effect.len() {
        return Err(Error::Shape(format!(
            "cause has {} steps, effect has {}",
            cause.len(),
            effect.len()
        )));
    }
    if lag == UNDEFINED_LAG {
        return Err(Error::NotAlignable);
    }
    let t = cause.len();
    if lag < 0 || lag as usize >= t {
        return Err(Error::invalid(format!("lag {lag} outside [0, {t})")));
    }
    let s = lag as usize;
    Ok(AlignedPair {
        cause: &cause[..t - s],
        effect: &effect[s..],
        lag: s,
        original_len: t,
    })
}
