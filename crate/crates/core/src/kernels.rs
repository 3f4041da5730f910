//! Triweight kernel, its scalings, the integrated kernel and the boundary
//! correction coefficients.
//!
//! All kernel constants are closed-form polynomial integrals. The moment
//! routines are generic over any [`Num`] type with exact integer conversion,
//! so they can be evaluated in `f32`, `f64` or exactly in
//! [`num_rational::Ratio`].

use num_rational::Ratio;
use num_traits::{FromPrimitive, Num};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Coefficients of `(1 - x^2)^3 = 1 - 3x^2 + 3x^4 - x^6`.
const TRIWEIGHT_POLY: [i64; 4] = [1, -3, 3, -1];

#[inline]
fn ratio<T: Num + FromPrimitive>(p: i64, q: i64) -> T {
    T::from_i64(p).expect("integer conversion") / T::from_i64(q).expect("integer conversion")
}

fn powi<T: Num + Copy>(x: T, p: u32) -> T {
    (0..p).fold(T::one(), |acc, _| acc * x)
}

/// Triweight kernel `K(x) = 35/32 (1 - x^2)^3` on `[-1, 1]`, zero elsewhere.
#[inline]
pub fn triweight<T: Scalar>(x: T) -> T {
    if x.abs() > T::one() {
        return T::zero();
    }
    let s = T::one() - x * x;
    T::lit(35.0 / 32.0) * s * s * s
}

/// Positive kernel bandwidth, in the units of the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth<T>(T);

impl<T: Scalar> Bandwidth<T> {
    pub fn new(b: T) -> Result<Self> {
        if b > T::zero() && b.is_finite() {
            Ok(Self(b))
        } else {
            Err(Error::InvalidBandwidth(b.to_f64_lossy()))
        }
    }

    #[inline]
    pub fn get(self) -> T {
        self.0
    }

    /// `K_b(x) = K(x / b) / b`.
    #[inline]
    pub fn kernel(self, x: T) -> T {
        triweight(x / self.0) / self.0
    }

    /// `IK_b(x)`: the kernel integrated from `-inf` to `x / b`.
    #[inline]
    pub fn integrated(self, x: T) -> T {
        integrated_triweight(x / self.0)
    }
}

/// `K_b(x)`; rejects nonpositive bandwidths.
pub fn scaled_kernel<T: Scalar>(x: T, b: T) -> Result<T> {
    Ok(Bandwidth::new(b)?.kernel(x))
}

/// `IK_b(x) = int_{-inf}^{x/b} K(s) ds`; rejects nonpositive bandwidths.
pub fn integrated_kernel<T: Scalar>(x: T, b: T) -> Result<T> {
    Ok(Bandwidth::new(b)?.integrated(x))
}

/// Antiderivative of the triweight kernel normalised to 0 at -1 and 1 at 1.
#[inline]
fn integrated_triweight<T: Scalar>(s: T) -> T {
    if s <= -T::one() {
        return T::zero();
    }
    if s >= T::one() {
        return T::one();
    }
    let s2 = s * s;
    // s - s^3 + 3 s^5 / 5 - s^7 / 7, Horner in s^2
    let p = s * (T::one() + s2 * (-T::one() + s2 * (T::lit(0.6) - s2 / T::lit(7.0))));
    T::lit(0.5) + T::lit(35.0 / 32.0) * p
}

/// Truncated kernel moment `m_k(u) = int_{-1}^{u} x^k K(x) dx` for `u` in
/// `[-1, 1]`, as a closed-form polynomial of degree `k + 7`.
pub fn truncated_moment<T: Num + FromPrimitive + Copy>(k: u32, u: T) -> T {
    let minus_one = T::zero() - T::one();
    let mut acc = T::zero();
    for (j, &c) in TRIWEIGHT_POLY.iter().enumerate() {
        let p = k + 2 * j as u32 + 1;
        let term = (powi(u, p) - powi(minus_one, p)) * ratio(c, p as i64);
        acc = acc + term;
    }
    acc * ratio(35, 32)
}

/// The two kernel constants entering the asymptotic variance and bias.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelMoments<T> {
    /// `int K(u)^2 du` (350/429 for the triweight).
    pub m_squared: T,
    /// `int u^2 K(u) du` (1/9 for the triweight).
    pub m_two: T,
}

fn kernel_moments_in<T: Num + FromPrimitive + Copy>() -> KernelMoments<T> {
    // (35/32)^2 int_{-1}^{1} (1 - x^2)^6 dx, expanded binomially.
    const BINOM6: [i64; 7] = [1, 6, 15, 20, 15, 6, 1];
    let mut sq = T::zero();
    for (j, &c) in BINOM6.iter().enumerate() {
        let sign = if j % 2 == 0 { 1 } else { -1 };
        sq = sq + ratio::<T>(sign * c * 2, 2 * j as i64 + 1);
    }
    KernelMoments {
        m_squared: sq * ratio(35 * 35, 32 * 32),
        m_two: truncated_moment(2, T::one()),
    }
}

/// Kernel constants in the requested floating point type.
pub fn kernel_moments<T: Scalar>() -> KernelMoments<T> {
    let exact = kernel_moments_exact();
    let conv = |r: Ratio<i64>| T::lit(*r.numer() as f64 / *r.denom() as f64);
    KernelMoments {
        m_squared: conv(exact.m_squared),
        m_two: conv(exact.m_two),
    }
}

/// Kernel constants as exact rationals.
pub fn kernel_moments_exact() -> KernelMoments<Ratio<i64>> {
    kernel_moments_in()
}

/// Boundary kernel weights: `alpha(u) K(x) + beta(u) x K(x)` has unit mass and
/// zero first moment on the visible window `[-1, u]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCoefficients<T> {
    pub u: T,
    pub alpha: T,
    pub beta: T,
}

/// Solves the truncated-moment system for `(alpha(u), beta(u))`.
///
/// Values of `u` above 1 are clamped to 1 (interior behaviour, `alpha = 1`,
/// `beta = 0`); callers pass `t / b`, which exceeds 1 away from the edge.
pub fn boundary_coeffs<T: Scalar>(u: T) -> Result<BoundaryCoefficients<T>> {
    if u.is_nan() || u < T::zero() {
        return Err(Error::InvalidArgument(format!(
            "boundary coefficient argument must lie in [0, 1], got {u}"
        )));
    }
    let u = u.min(T::one());
    if u == T::one() {
        return Ok(BoundaryCoefficients { u, alpha: T::one(), beta: T::zero() });
    }
    let m0 = truncated_moment(0, u);
    let m1 = truncated_moment(1, u);
    let m2 = truncated_moment(2, u);
    let det = m0 * m2 - m1 * m1;
    if det <= T::zero() {
        return Err(Error::Singular(format!("boundary moment system at u = {u}")));
    }
    Ok(BoundaryCoefficients { u, alpha: m2 / det, beta: -m1 / det })
}

/// Exact boundary coefficients at a rational argument in `[0, 1]`.
pub fn boundary_coeffs_exact(u: Ratio<i64>) -> Result<BoundaryCoefficients<Ratio<i64>>> {
    let zero = Ratio::from_integer(0);
    let one = Ratio::from_integer(1);
    if u < zero || u > one {
        return Err(Error::InvalidArgument(format!("rational argument {u} outside [0, 1]")));
    }
    let m0 = truncated_moment(0, u);
    let m1 = truncated_moment(1, u);
    let m2 = truncated_moment(2, u);
    let det = m0 * m2 - m1 * m1;
    if det <= zero {
        return Err(Error::Singular(format!("boundary moment system at u = {u}")));
    }
    Ok(BoundaryCoefficients { u, alpha: m2 / det, beta: -m1 / det })
}
