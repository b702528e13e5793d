//! Digamma and trigamma evaluated with the standard asymptotic series after a
//! recurrence shift into the convergence region.

use num_traits::Float;

/// Arguments below this threshold are shifted upward with
/// `psi(x) = psi(x+1) - 1/x` before the asymptotic expansion is applied.
const SHIFT_THRESHOLD: f64 = 10.0;

fn c<F: Float>(v: f64) -> F {
    F::from(v).expect("constant representable in scalar type")
}

/// Digamma ψ(x) for x > 0, accurate to about 1e-12 in `f64`.
///
/// Returns `None` for non-positive or non-finite arguments.
pub fn digamma<F: Float>(x: F) -> Option<F> {
    if !(x > F::zero()) || !x.is_finite() {
        return None;
    }
    let mut x = x;
    let mut acc = F::zero();
    while x < c(SHIFT_THRESHOLD) {
        acc = acc - x.recip();
        x = x + F::one();
    }
    // Bernoulli-number tail of the asymptotic expansion, in increasing order.
    let inv2 = (x * x).recip();
    let tail_coeffs = [
        -1.0 / 12.0,
        1.0 / 120.0,
        -1.0 / 252.0,
        1.0 / 240.0,
        -1.0 / 132.0,
        691.0 / 32760.0,
        -1.0 / 12.0,
    ];
    let mut tail = F::zero();
    let mut pow = inv2;
    for &k in &tail_coeffs {
        tail = tail + c::<F>(k) * pow;
        pow = pow * inv2;
    }
    Some(acc + x.ln() - (x + x).recip() + tail)
}

/// Trigamma ψ'(x) for x > 0.
///
/// Returns `None` for non-positive or non-finite arguments.
pub fn trigamma<F: Float>(x: F) -> Option<F> {
    if !(x > F::zero()) || !x.is_finite() {
        return None;
    }
    let mut x = x;
    let mut acc = F::zero();
    while x < c(SHIFT_THRESHOLD) {
        acc = acc + (x * x).recip();
        x = x + F::one();
    }
    let inv = x.recip();
    let inv2 = inv * inv;
    let tail_coeffs = [
        1.0 / 6.0,
        -1.0 / 30.0,
        1.0 / 42.0,
        -1.0 / 30.0,
        5.0 / 66.0,
        -691.0 / 2730.0,
        7.0 / 6.0,
    ];
    let mut tail = F::zero();
    let mut pow = inv2 * inv;
    for &k in &tail_coeffs {
        tail = tail + c::<F>(k) * pow;
        pow = pow * inv2;
    }
    Some(acc + inv + inv2 * c(0.5) + tail)
}
