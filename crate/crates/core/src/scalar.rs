//! Scalar abstraction shared by the numeric kernels.
//!
//! Simulator, aggregation and statistics code is written against [`Real`] so
//! it runs on `f32` or `f64`. Components backed by dense factorizations
//! (semantic axes, PCA, ridge regression) work in `f64` only.

use std::fmt::Debug;
use std::iter::Sum;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

/// Floating point scalar: `f32` or `f64`.
pub trait Real:
    Float + FloatConst + FromPrimitive + ToPrimitive + Sum + Default + Debug + Send + Sync + 'static
{
    /// Lossy conversion from `f64` constants.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("finite literal")
    }

    #[inline]
    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }

    /// `x` clamped to `[-pi, pi]`.
    #[inline]
    fn clip_angle(self) -> Self {
        let pi = Self::PI();
        self.max(-pi).min(pi)
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub(crate) fn l2_norm<T: Real>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

/// Divides `v` by its L2 norm in place. Returns `None` for an all-zero vector.
pub(crate) fn normalize_in_place<T: Real>(v: &mut [T]) -> Option<()> {
    let n = l2_norm(v);
    if n == T::zero() || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x = *x / n);
    Some(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_angle_bounds() {
        assert_eq!(10.0f64.clip_angle(), std::f64::consts::PI);
        assert_eq!((-10.0f32).clip_angle(), -std::f32::consts::PI);
        assert_eq!(0.5f64.clip_angle(), 0.5);
    }

    #[test]
    fn normalize_rejects_zero() {
        let mut z = [0.0f64; 3];
        assert!(normalize_in_place(&mut z).is_none());
        let mut v = [3.0f32, 4.0];
        normalize_in_place(&mut v).unwrap();
        assert!((v[0] - 0.6).abs() < 1e-6);
    }
}
