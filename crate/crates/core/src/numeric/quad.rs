//! Adaptive Simpson quadrature.

use crate::error::{Error, Result};

const MAX_DEPTH: u32 = 50;
const PANELS: usize = 16;
const MAX_EVALS: usize = 20_000_000;

struct Simpson<'a, F> {
    f: &'a F,
    evals: usize,
    unresolved: f64,
}

impl<F: Fn(f64) -> f64> Simpson<'_, F> {
    fn eval(&mut self, x: f64) -> Result<f64> {
        self.evals += 1;
        if self.evals > MAX_EVALS {
            return Err(Error::Numeric("quadrature evaluation budget exhausted".into()));
        }
        let y = (self.f)(x);
        if y.is_finite() {
            Ok(y)
        } else {
            Err(Error::Numeric(format!("integrand is not finite at {x}")))
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn recurse(
        &mut self,
        a: f64,
        b: f64,
        fa: f64,
        fm: f64,
        fb: f64,
        whole: f64,
        tol: f64,
        depth: u32,
    ) -> Result<f64> {
        let m = 0.5 * (a + b);
        let (lm, rm) = (0.5 * (a + m), 0.5 * (m + b));
        let flm = self.eval(lm)?;
        let frm = self.eval(rm)?;
        let h = (b - a) / 12.0;
        let left = h * (fa + 4.0 * flm + fm);
        let right = h * (fm + 4.0 * frm + fb);
        let diff = left + right - whole;
        let rounding = 64.0 * f64::EPSILON * (left.abs() + right.abs());
        if diff.abs() <= 15.0 * tol || diff.abs() <= rounding {
            return Ok(left + right + diff / 15.0);
        }
        if depth >= MAX_DEPTH || m <= a || m >= b {
            self.unresolved += diff.abs() / 15.0;
            return Ok(left + right + diff / 15.0);
        }
        let l = self.recurse(a, m, fa, flm, fm, left, 0.5 * tol, depth + 1)?;
        let r = self.recurse(m, b, fm, frm, fb, right, 0.5 * tol, depth + 1)?;
        Ok(l + r)
    }
}

/// Integrates `f` over `[a, b]` to absolute tolerance `tol`.
///
/// The interval is first cut into a few fixed panels so that integrands which
/// happen to vanish at the coarse Simpson nodes are not accepted too early.
/// Fails when any evaluation is non-finite or when subintervals that hit the
/// depth limit leave more than `tol` of estimated error unresolved.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64> {
    if !(a.is_finite() && b.is_finite()) || !(tol > 0.0) {
        return Err(Error::Domain(format!("bad quadrature request on [{a}, {b}] with tol {tol}")));
    }
    if a == b {
        return Ok(0.0);
    }
    if a > b {
        return integrate(f, b, a, tol).map(|v| -v);
    }
    let mut s = Simpson { f: &f, evals: 0, unresolved: 0.0 };
    let width = (b - a) / PANELS as f64;
    let panel_tol = tol / PANELS as f64;
    let mut total = 0.0;
    let mut x0 = a;
    let mut f0 = s.eval(a)?;
    for k in 1..=PANELS {
        let x1 = if k == PANELS { b } else { a + width * k as f64 };
        let xm = 0.5 * (x0 + x1);
        let fm = s.eval(xm)?;
        let f1 = s.eval(x1)?;
        let whole = (x1 - x0) / 6.0 * (f0 + 4.0 * fm + f1);
        total += s.recurse(x0, x1, f0, fm, f1, whole, panel_tol, 0)?;
        x0 = x1;
        f0 = f1;
    }
    if s.unresolved > tol {
        return Err(Error::Numeric(format!(
            "adaptive Simpson did not converge on [{a}, {b}]: unresolved error {:.3e} exceeds {tol:e}",
            s.unresolved
        )));
    }
    Ok(total)
}
