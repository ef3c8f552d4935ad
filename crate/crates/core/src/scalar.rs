//! Scalar abstraction shared by every solver.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, ToPrimitive};
use serde::de::DeserializeOwned;
use serde::Serialize;

/// Real field the solvers are generic over (`f32` or `f64`).
pub trait Scalar:
    Float
    + FromPrimitive
    + ToPrimitive
    + Sum
    + Debug
    + Display
    + Default
    + Send
    + Sync
    + Serialize
    + DeserializeOwned
    + 'static
{
    /// Tolerance for "sums to one" checks on probability vectors.
    fn normalization_tol() -> Self;

    /// Absolute tolerance used when deduplicating utilities on a grid.
    fn dedup_tol() -> Self;

    /// Converts an `f64` literal, saturating to infinity on overflow.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).unwrap_or_else(|| if x > 0.0 { Self::infinity() } else { Self::neg_infinity() })
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f64 {
    fn normalization_tol() -> Self {
        1e-12
    }

    fn dedup_tol() -> Self {
        1e-9
    }
}

impl Scalar for f32 {
    fn normalization_tol() -> Self {
        1e-5
    }

    fn dedup_tol() -> Self {
        1e-4
    }
}

/// Sup-norm distance between two equally sized slices.
pub fn sup_distance<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc.max((x - y).abs()))
}

/// Index of the first maximum, i.e. ties go to the lowest index.
pub fn argmax_first<T: Scalar>(values: impl IntoIterator<Item = T>) -> Option<(usize, T)> {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.into_iter().enumerate() {
        match best {
            Some((_, b)) if v <= b => {}
            _ => best = Some((i, v)),
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_breaks_ties_low() {
        assert_eq!(argmax_first([1.0, 3.0, 3.0, 2.0]), Some((1, 3.0)));
        assert_eq!(argmax_first(Vec::<f64>::new()), None);
    }

    #[test]
    fn sup_distance_is_max_abs() {
        assert_eq!(sup_distance(&[1.0f32, -2.0], &[0.5, 1.0]), 3.0);
    }
}
