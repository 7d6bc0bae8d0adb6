//! Dense univariate polynomials stored as coefficient slices, lowest degree first.

pub fn eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * x + c)
}

pub fn derivative_eval(coeffs: &[f64], x: f64) -> f64 {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .rev()
        .fold(0.0, |acc, (k, &c)| acc * x + k as f64 * c)
}

/// ∫₀ˣ p(u) du.
pub fn antiderivative_eval(coeffs: &[f64], x: f64) -> f64 {
    x * coeffs
        .iter()
        .enumerate()
        .rev()
        .fold(0.0, |acc, (k, &c)| acc * x + c / (k + 1) as f64)
}

/// ∫ₐᵇ p(u) du.
pub fn integral(coeffs: &[f64], a: f64, b: f64) -> f64 {
    antiderivative_eval(coeffs, b) - antiderivative_eval(coeffs, a)
}

/// Coefficient-wise `a − b`, padding the shorter operand with zeros.
pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    let n = a.len().max(b.len());
    (0..n)
        .map(|k| a.get(k).copied().unwrap_or(0.0) - b.get(k).copied().unwrap_or(0.0))
        .collect()
}
