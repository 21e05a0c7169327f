//! Mish activation `x tanh(softplus(x))`.

/// Above this input Mish equals the identity to double precision.
const SATURATION: f64 = 20.0;

/// Value and derivative from a single exponential.
///
/// With `n = eˣ(eˣ + 2)`, `tanh(softplus(x)) = n / (n + 2)`.
#[inline]
pub fn mish_with_grad(x: f64) -> (f64, f64) {
    if x > SATURATION {
        return (x, 1.0);
    }
    let e = x.exp();
    let n = e * (e + 2.0);
    let r = 1.0 / (n + 2.0);
    let t = n * r;
    let grad = t + 4.0 * x * e * (1.0 + e) * r * r;
    (x * t, grad)
}

#[inline]
pub fn mish(x: f64) -> f64 {
    mish_with_grad(x).0
}

#[inline]
pub fn mish_grad(x: f64) -> f64 {
    mish_with_grad(x).1
}
