//! Standard normal density, distribution and quantile functions.

// AS241 coefficients are kept exactly as published.
#![allow(clippy::excessive_precision)]

use std::f64::consts::{FRAC_1_SQRT_2, PI};

pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

pub fn cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x * FRAC_1_SQRT_2)
}

/// Inverse of [`cdf`] using Wichura's AS241 (PPND16) rational approximations,
/// accurate to about 1e-16 relative. Returns `-inf`/`+inf` at 0 and 1 and NaN
/// outside the unit interval.
pub fn quantile(p: f64) -> f64 {
    if p.is_nan() || !(0.0..=1.0).contains(&p) {
        return f64::NAN;
    }
    if p == 0.0 {
        return f64::NEG_INFINITY;
    }
    if p == 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        let num = (((((((2.509_080_928_730_122_672_7e3 * r + 3.343_057_558_358_812_810_5e4) * r
            + 6.726_577_092_700_870_085_3e4)
            * r
            + 4.592_195_393_154_987_145_7e4)
            * r
            + 1.373_169_376_550_946_112_5e4)
            * r
            + 1.971_590_950_306_551_442_7e3)
            * r
            + 1.331_416_678_917_843_774_5e2)
            * r
            + 3.387_132_872_796_366_608_0)
            * q;
        let den = ((((((5.226_495_278_852_854_561_0e3 * r + 2.872_908_573_572_194_267_4e4) * r
            + 3.930_789_580_009_271_061_0e4)
            * r
            + 2.121_379_430_158_659_586_7e4)
            * r
            + 5.394_196_021_424_751_107_7e3)
            * r
            + 6.871_870_074_920_579_083_0e2)
            * r
            + 4.231_333_070_160_091_125_2e1)
            * r
            + 1.0;
        return num / den;
    }
    let tail = if q < 0.0 { p } else { 1.0 - p };
    let mut r = (-tail.ln()).sqrt();
    let value = if r <= 5.0 {
        r -= 1.6;
        let num = ((((((7.745_450_142_783_414_076_4e-4 * r + 2.272_384_498_926_918_458_33e-2)
            * r
            + 2.417_807_251_774_506_117_7e-1)
            * r
            + 1.270_458_252_452_368_382_58)
            * r
            + 3.647_848_324_763_204_605_04)
            * r
            + 5.769_497_221_460_691_405_5)
            * r
            + 4.630_337_846_156_545_295_9)
            * r
            + 1.423_437_110_749_683_577_34;
        let den = ((((((1.050_750_071_644_416_843_24e-9 * r + 5.475_938_084_995_344_946e-4)
            * r
            + 1.519_866_656_361_645_719_66e-2)
            * r
            + 1.481_039_764_274_800_745_9e-1)
            * r
            + 6.897_673_349_851_000_045_5e-1)
            * r
            + 1.676_384_830_183_803_849_4)
            * r
            + 2.053_191_626_637_758_821_87)
            * r
            + 1.0;
        num / den
    } else {
        r -= 5.0;
        let num = ((((((2.010_334_399_292_288_132_65e-7 * r + 2.711_555_568_743_487_578_15e-5)
            * r
            + 1.242_660_947_388_078_438_6e-3)
            * r
            + 2.653_218_952_657_612_309_3e-2)
            * r
            + 2.965_605_718_285_048_912_3e-1)
            * r
            + 1.784_826_539_917_291_335_8)
            * r
            + 5.463_784_911_164_114_369_9)
            * r
            + 6.657_904_643_501_103_777_2;
        let den = ((((((2.044_263_103_389_939_785_64e-15 * r + 1.421_511_758_316_445_888_7e-7)
            * r
            + 1.846_318_317_510_054_681_8e-5)
            * r
            + 7.868_691_311_456_132_591e-4)
            * r
            + 1.487_536_129_085_061_485_25e-2)
            * r
            + 1.369_298_809_227_358_053_1e-1)
            * r
            + 5.998_322_065_558_879_376_9e-1)
            * r
            + 1.0;
        num / den
    };
    if q < 0.0 {
        -value
    } else {
        value
    }
}

/// Mean of a standard normal truncated to its lower `nu` probability mass:
/// (1/nu)∫₀^nu Φ⁻¹(u)du = −φ(Φ⁻¹(nu))/nu. Zero mass gives −∞.
pub fn lower_tail_mean(nu: f64) -> f64 {
    if nu <= 0.0 {
        return f64::NEG_INFINITY;
    }
    -pdf(quantile(nu)) / nu
}

/// Mean of a standard normal truncated to its upper `1 − nu` mass:
/// (1/(1−nu))∫_nu¹ Φ⁻¹(u)du = φ(Φ⁻¹(nu))/(1−nu).
pub fn upper_tail_mean(nu: f64) -> f64 {
    if nu >= 1.0 {
        return f64::INFINITY;
    }
    pdf(quantile(nu)) / (1.0 - nu)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Independent inverse: bisection on the erfc-based cdf.
    fn bisect_quantile(p: f64) -> f64 {
        let (mut lo, mut hi) = (-40.0_f64, 40.0_f64);
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            if cdf(mid) < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    #[test]
    fn known_values() {
        assert_eq!(quantile(0.5), 0.0);
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-14);
        assert!((quantile(0.025) + 1.959_963_984_540_054).abs() < 1e-14);
        assert!((quantile(1e-10) + 6.361_340_902_404_056).abs() < 1e-12);
        assert!((cdf(1.0) - 0.841_344_746_068_542_9).abs() < 1e-15);
        assert!((pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-16);
        assert_eq!(quantile(0.0), f64::NEG_INFINITY);
        assert!(quantile(1.5).is_nan());
    }

    #[test]
    fn tail_means_match_quadrature() {
        use crate::numeric::quad::integrate;
        for &nu in &[0.05, 0.1234, 0.37, 0.5, 0.8, 0.97] {
            let lower = integrate(quantile, 1e-12, nu, 1e-11).unwrap() / nu;
            assert!((lower - lower_tail_mean(nu)).abs() < 1e-9, "nu={nu}");
            // Mirror the upper tail onto small arguments, where 1 - p does not cancel.
            let upper = integrate(|w| -quantile(w), 1e-12, 1.0 - nu, 1e-11).unwrap() / (1.0 - nu);
            assert!((upper - upper_tail_mean(nu)).abs() < 1e-9, "nu={nu}");
        }
    }

    proptest! {
        #[test]
        fn quantile_agrees_with_bisection(p in 1e-12f64..(1.0 - 1e-12)) {
            let x = quantile(p);
            prop_assert!((x - bisect_quantile(p)).abs() < 1e-9);
        }

        #[test]
        fn quantile_inverts_cdf(x in -8.0f64..5.0) {
            prop_assert!((quantile(cdf(x)) - x).abs() < 1e-9 * (1.0 + x.abs()));
        }

        #[test]
        fn quantile_is_odd(p in 1e-9f64..0.5) {
            prop_assert!((quantile(p) + quantile(1.0 - p)).abs() < 1e-9);
        }
    }
}
