//! Scalar kernels shared by the hidden-variable models.

use std::ops::{Add, Div, Mul, Neg, Rem, Sub};

use num_traits::{Float, FromPrimitive, Num, One, Zero};

/// Heaviside step with `Θ(0) = ½`.
#[inline]
pub fn step<T: Float>(x: T) -> T {
    if x > T::zero() {
        T::one()
    } else if x < T::zero() {
        T::zero()
    } else {
        T::one() / (T::one() + T::one())
    }
}

/// Ramp function `R(x) = x Θ(x)`.
#[inline]
pub fn ramp<T: Float>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

/// Numerically safe softmax: the maximum logit is subtracted before exponentiation.
pub fn softmax<T: Float>(logits: &[T]) -> Vec<T> {
    let max = logits.iter().copied().fold(T::neg_infinity(), T::max);
    let exps: Vec<T> = logits.iter().map(|&l| (l - max).exp()).collect();
    let total = exps.iter().copied().fold(T::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / total).collect()
}

/// Forward-mode dual number carrying the gradient with respect to three inputs.
///
/// Only ring operations are needed by the polynomial evaluators that use it, so
/// division and `from_str_radix` are deliberately minimal.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Dual3<T> {
    pub value: T,
    pub grad: [T; 3],
}

impl<T: Float> Dual3<T> {
    pub fn constant(value: T) -> Self {
        Self {
            value,
            grad: [T::zero(); 3],
        }
    }

    /// The `axis`-th independent variable with the given value.
    pub fn variable(value: T, axis: usize) -> Self {
        let mut grad = [T::zero(); 3];
        grad[axis] = T::one();
        Self { value, grad }
    }
}

impl<T: Float> Add for Dual3<T> {
    type Output = Self;
    fn add(self, rhs: Self) -> Self {
        Self {
            value: self.value + rhs.value,
            grad: [
                self.grad[0] + rhs.grad[0],
                self.grad[1] + rhs.grad[1],
                self.grad[2] + rhs.grad[2],
            ],
        }
    }
}

impl<T: Float> Sub for Dual3<T> {
    type Output = Self;
    fn sub(self, rhs: Self) -> Self {
        Self {
            value: self.value - rhs.value,
            grad: [
                self.grad[0] - rhs.grad[0],
                self.grad[1] - rhs.grad[1],
                self.grad[2] - rhs.grad[2],
            ],
        }
    }
}

impl<T: Float> Mul for Dual3<T> {
    type Output = Self;
    fn mul(self, rhs: Self) -> Self {
        let (a, b) = (self.value, rhs.value);
        Self {
            value: a * b,
            grad: [
                self.grad[0] * b + a * rhs.grad[0],
                self.grad[1] * b + a * rhs.grad[1],
                self.grad[2] * b + a * rhs.grad[2],
            ],
        }
    }
}

impl<T: Float> Div for Dual3<T> {
    type Output = Self;
    fn div(self, rhs: Self) -> Self {
        let inv = T::one() / rhs.value;
        let q = self.value * inv;
        Self {
            value: q,
            grad: [
                (self.grad[0] - q * rhs.grad[0]) * inv,
                (self.grad[1] - q * rhs.grad[1]) * inv,
                (self.grad[2] - q * rhs.grad[2]) * inv,
            ],
        }
    }
}

impl<T: Float> Rem for Dual3<T> {
    type Output = Self;
    fn rem(self, rhs: Self) -> Self {
        // Only meaningful for constants; the evaluators never use it.
        Self::constant(self.value % rhs.value)
    }
}

impl<T: Float> Neg for Dual3<T> {
    type Output = Self;
    fn neg(self) -> Self {
        Self {
            value: -self.value,
            grad: [-self.grad[0], -self.grad[1], -self.grad[2]],
        }
    }
}

impl<T: Float> Zero for Dual3<T> {
    fn zero() -> Self {
        Self::constant(T::zero())
    }
    fn is_zero(&self) -> bool {
        self.value.is_zero() && self.grad.iter().all(|g| g.is_zero())
    }
}

impl<T: Float> One for Dual3<T> {
    fn one() -> Self {
        Self::constant(T::one())
    }
}

impl<T: Float> Num for Dual3<T> {
    type FromStrRadixErr = T::FromStrRadixErr;
    fn from_str_radix(s: &str, radix: u32) -> Result<Self, Self::FromStrRadixErr> {
        T::from_str_radix(s, radix).map(Self::constant)
    }
}

impl<T: Float + FromPrimitive> FromPrimitive for Dual3<T> {
    fn from_i64(n: i64) -> Option<Self> {
        T::from_i64(n).map(Self::constant)
    }
    fn from_u64(n: u64) -> Option<Self> {
        T::from_u64(n).map(Self::constant)
    }
    fn from_f64(n: f64) -> Option<Self> {
        T::from_f64(n).map(Self::constant)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn step_is_symmetric_at_zero() {
        assert_eq!(step(0.0_f64), 0.5);
        assert_eq!(step(1e-300_f64), 1.0);
        assert_eq!(step(-1e-30_f32), 0.0);
    }

    #[test]
    fn ramp_identities() {
        // R(xy) = R(x)R(y) + R(-x)R(-y), R(αx) = αR(x) for α ≥ 0
        let xs = [-2.5, -1.0, -0.3, 0.0, 0.4, 1.0, 3.0];
        for &x in &xs {
            for &y in &xs {
                let lhs = ramp(x * y);
                let rhs = ramp(x) * ramp(y) + ramp(-x) * ramp(-y);
                assert!((lhs - rhs).abs() < 1e-15, "x={x} y={y}");
            }
            for alpha in [0.0, 0.5, 2.0] {
                assert!((ramp(alpha * x) - alpha * ramp(x)).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn softmax_handles_large_gaps() {
        let q = softmax(&[0.0_f64, 40.0]);
        assert!(q[0] < 1e-12 && (q[1] - 1.0).abs() < 1e-12);
        let q = softmax(&[1000.0_f64, 1000.0]);
        assert_eq!(q, vec![0.5, 0.5]);
    }

    #[test]
    fn dual_product_rule() {
        let x = Dual3::variable(2.0_f64, 0);
        let y = Dual3::variable(3.0, 1);
        let f = x * x * y - y;
        assert_eq!(f.value, 9.0);
        assert_eq!(f.grad, [12.0, 3.0, 0.0]);
        // f / y = x² − 1
        let g = f / y;
        assert!((g.grad[0] - 4.0).abs() < 1e-15 && g.grad[1].abs() < 1e-15);
    }
}
