//! Scalar special functions: normal and Student t distribution functions.
#![allow(clippy::excessive_precision)]

use std::f64::consts::{PI, SQRT_2};

use libm::erfc;
use statrs::function::beta::beta_reg;
pub use statrs::function::gamma::{digamma, ln_gamma};

pub const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;
const FRAC_1_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

pub fn norm_pdf(x: f64) -> f64 {
    FRAC_1_SQRT_2PI * (-0.5 * x * x).exp()
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

/// `ln Φ(x)`, finite for every finite `x`.
pub fn log_norm_cdf(x: f64) -> f64 {
    if x > -30.0 {
        let p = norm_cdf(x);
        if p > 0.5 {
            (-norm_cdf(-x)).ln_1p()
        } else {
            p.ln()
        }
    } else {
        // Asymptotic series of the Mills ratio.
        let z2 = 1.0 / (x * x);
        let series = 1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2;
        -0.5 * x * x - LN_SQRT_2PI - (-x).ln() + series.ln()
    }
}

/// Inverse hazard `φ(x)/Φ(x)`, stable in the lower tail.
pub fn inv_mills(x: f64) -> f64 {
    if x > -30.0 {
        norm_pdf(x) / norm_cdf(x)
    } else {
        let z2 = 1.0 / (x * x);
        -x / (1.0 - z2 + 3.0 * z2 * z2 - 15.0 * z2 * z2 * z2)
    }
}

/// Standard normal quantile (Wichura's AS 241, about 1e-16 relative).
pub fn norm_quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q * poly(&AS241_A, r) / poly(&AS241_B, r);
    }
    let r = (-(p.min(1.0 - p)).ln()).sqrt();
    let x = if r <= 5.0 {
        let r = r - 1.6;
        poly(&AS241_C, r) / poly(&AS241_D, r)
    } else {
        let r = r - 5.0;
        poly(&AS241_E, r) / poly(&AS241_F, r)
    };
    if q < 0.0 {
        -x
    } else {
        x
    }
}

fn poly(c: &[f64; 8], x: f64) -> f64 {
    c.iter().rev().fold(0.0, |acc, &k| acc * x + k)
}

const AS241_A: [f64; 8] = [
    3.387_132_872_796_366_608,
    1.331_416_678_917_843_774_5e2,
    1.971_590_950_306_551_442_7e3,
    1.373_169_376_550_946_112_5e4,
    4.592_195_393_154_987_145_7e4,
    6.726_577_092_700_870_085_3e4,
    3.343_057_558_358_812_810_5e4,
    2.509_080_928_730_122_672_7e3,
];
const AS241_B: [f64; 8] = [
    1.0,
    4.231_333_070_160_091_125_2e1,
    6.871_870_074_920_579_083e2,
    5.394_196_021_424_751_107_7e3,
    2.121_379_430_158_659_586_7e4,
    3.930_789_580_009_271_061e4,
    2.872_908_573_572_194_267_4e4,
    5.226_495_278_852_854_561e3,
];
const AS241_C: [f64; 8] = [
    1.423_437_110_749_683_577_34,
    4.630_337_846_156_545_295_9,
    5.769_497_221_460_691_405_5,
    3.647_848_324_763_204_605_04,
    1.270_458_252_452_368_382_58,
    2.417_807_251_774_506_117_7e-1,
    2.272_384_498_926_918_458_33e-2,
    7.745_450_142_783_414_076_4e-4,
];
const AS241_D: [f64; 8] = [
    1.0,
    2.053_191_626_637_758_821_87,
    1.676_384_830_183_803_849_4,
    6.897_673_349_851_000_045_5e-1,
    1.481_039_764_274_800_745_9e-1,
    1.519_866_656_361_645_719_66e-2,
    5.475_938_084_995_344_946e-4,
    1.050_750_071_644_416_843_24e-9,
];
const AS241_E: [f64; 8] = [
    6.657_904_643_501_103_777_2,
    5.463_784_911_164_114_369_9,
    1.784_826_539_917_291_335_8,
    2.965_605_718_285_048_912_3e-1,
    2.653_218_952_657_612_309_3e-2,
    1.242_660_947_388_078_438_6e-3,
    2.711_555_568_743_487_578_15e-5,
    2.010_334_399_292_288_132_65e-7,
];
const AS241_F: [f64; 8] = [
    1.0,
    5.998_322_065_558_879_376_9e-1,
    1.369_298_809_227_358_053_1e-1,
    1.487_536_129_085_061_485_25e-2,
    7.868_691_311_456_132_591e-4,
    1.846_318_317_510_054_681_8e-5,
    1.421_511_758_316_445_888_7e-7,
    2.044_263_103_389_939_785_64e-15,
];

/// Standard Student t CDF; `nu = ∞` gives the normal CDF.
pub fn t_cdf(x: f64, nu: f64) -> f64 {
    if nu.is_infinite() {
        return norm_cdf(x);
    }
    if x.is_infinite() {
        return if x > 0.0 { 1.0 } else { 0.0 };
    }
    let tail = 0.5 * beta_reg(0.5 * nu, 0.5, nu / (nu + x * x));
    if x > 0.0 {
        1.0 - tail
    } else {
        tail
    }
}

/// Log density of a standard univariate Student t.
pub fn t_log_pdf(x: f64, nu: f64) -> f64 {
    if nu.is_infinite() {
        return -0.5 * x * x - LN_SQRT_2PI;
    }
    ln_gamma(0.5 * (nu + 1.0))
        - ln_gamma(0.5 * nu)
        - 0.5 * (nu * PI).ln()
        - 0.5 * (nu + 1.0) * (x * x / nu).ln_1p()
}

/// Bivariate standard normal density with correlation `r`.
pub fn bvn_pdf(x: f64, y: f64, r: f64) -> f64 {
    let s = 1.0 - r * r;
    (-(x * x - 2.0 * r * x * y + y * y) / (2.0 * s)).exp() / (2.0 * PI * s.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn normal_values() {
        assert!((norm_cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((norm_cdf(1.96) - 0.975_002_104_851_779_5).abs() < 1e-14);
        assert!((norm_pdf(0.0) - 0.398_942_280_401_432_7).abs() < 1e-16);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[
            1e-300,
            1e-20,
            1e-5,
            0.01,
            0.3,
            0.5,
            0.77,
            0.999,
            1.0 - 1e-12,
        ] {
            let x = norm_quantile(p);
            let back = norm_cdf(x);
            assert!(((back - p) / p).abs() < 1e-13, "p={p} x={x} back={back}");
        }
        assert!((norm_quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-15);
        assert_eq!(norm_quantile(0.5), 0.0);
    }

    #[test]
    fn log_cdf_is_continuous_across_branch() {
        let a = log_norm_cdf(-29.999_999);
        let b = log_norm_cdf(-30.000_001);
        assert!((a - b).abs() < 1e-4);
        assert!(log_norm_cdf(-1e4).is_finite());
        assert!((log_norm_cdf(10.0) - (-7.619_853_024_160_527e-24)).abs() < 1e-30);
    }

    #[test]
    fn inv_mills_is_continuous_across_branch() {
        let a = inv_mills(-29.999_999);
        let b = inv_mills(-30.000_001);
        assert!((a - b).abs() / a < 1e-6);
    }

    #[test]
    fn t_cdf_values() {
        assert!((t_cdf(0.0, 4.0) - 0.5).abs() < 1e-15);
        // Cauchy: 1/2 + atan(x)/π
        for &x in &[-3.0, -0.5, 0.7, 12.0] {
            let exact = 0.5 + f64::atan(x) / PI;
            assert!((t_cdf(x, 1.0) - exact).abs() < 1e-13);
        }
        // nu = 2: 1/2 + x / (2 sqrt(2 + x²))
        for &x in &[-2.0f64, 0.3, 4.0] {
            let exact = 0.5 + x / (2.0 * (2.0 + x * x).sqrt());
            assert!((t_cdf(x, 2.0) - exact).abs() < 1e-13);
        }
    }

    #[test]
    fn t_log_pdf_matches_cauchy() {
        let x = 1.7;
        let exact = -(PI * (1.0 + x * x)).ln();
        assert!((t_log_pdf(x, 1.0) - exact).abs() < 1e-13);
    }
}
