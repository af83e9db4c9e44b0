//! Swish `x * sigmoid(x)` and its first three derivatives.

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn swish(x: f64) -> f64 {
    x * sigmoid(x)
}

/// First derivative.
#[inline]
pub fn swish_d1(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 + x * (1.0 - s))
}

/// Second derivative.
#[inline]
pub fn swish_d2(x: f64) -> f64 {
    let s = sigmoid(x);
    s * (1.0 - s) * (2.0 + x * (1.0 - 2.0 * s))
}

/// Third derivative.
#[inline]
pub fn swish_d3(x: f64) -> f64 {
    let s = sigmoid(x);
    let g = s * (1.0 - s);
    let c = 1.0 - 2.0 * s;
    g * (c * (3.0 + x * c) - 2.0 * x * g)
}

/// `(swish, d1, d2, d3)` from a single sigmoid evaluation.
#[inline]
pub fn swish_all(x: f64) -> (f64, f64, f64, f64) {
    let s = sigmoid(x);
    let g = s * (1.0 - s);
    let c = 1.0 - 2.0 * s;
    (x * s, s * (1.0 + x * (1.0 - s)), g * (2.0 + x * c), g * (c * (3.0 + x * c) - 2.0 * x * g))
}
