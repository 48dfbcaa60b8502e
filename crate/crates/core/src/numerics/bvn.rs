//! Bivariate and trivariate normal orthant probabilities.
//!
//! The bivariate routine is Genz's adaptation of the Drezner–Wesolowsky
//! method (accurate to about 1e-15). The trivariate routine integrates the
//! Plackett identity along a correlation path with adaptive Gauss–Kronrod.

use std::f64::consts::PI;

use super::quad;
use super::special::norm_cdf;

const GL6: ([f64; 3], [f64; 3]) = (
    [
        0.171_324_492_379_170_5,
        0.360_761_573_048_138_4,
        0.467_913_934_572_690_4,
    ],
    [
        0.932_469_514_203_152_2,
        0.661_209_386_466_264_7,
        0.238_619_186_083_197,
    ],
);
const GL12: ([f64; 6], [f64; 6]) = (
    [
        0.047_175_336_386_511_77,
        0.106_939_325_995_318_3,
        0.160_078_328_543_346_4,
        0.203_167_426_723_065_9,
        0.233_492_536_538_354_7,
        0.249_147_045_813_402_9,
    ],
    [
        0.981_560_634_246_719_1,
        0.904_117_256_370_475,
        0.769_902_674_194_305,
        0.587_317_954_286_617_1,
        0.367_831_498_998_180_2,
        0.125_233_408_511_469_2,
    ],
);
const GL20: ([f64; 10], [f64; 10]) = (
    [
        0.017_614_007_139_152_12,
        0.040_601_429_800_386_94,
        0.062_672_048_334_109_06,
        0.083_276_741_576_704_75,
        0.101_930_119_817_240_4,
        0.118_194_531_961_518_4,
        0.131_688_638_449_176_6,
        0.142_096_109_318_382_1,
        0.149_172_986_472_603_7,
        0.152_753_387_130_725_9,
    ],
    [
        0.993_128_599_185_094_9,
        0.963_971_927_277_913_8,
        0.912_234_428_251_326,
        0.839_116_971_822_218_8,
        0.746_331_906_460_150_8,
        0.636_053_680_726_515,
        0.510_867_001_950_827_1,
        0.373_706_088_715_419_6,
        0.227_785_851_141_645_1,
        0.076_526_521_133_497_33,
    ],
);

/// `P(X > h, Y > k)` for standard bivariate normal with correlation `r`.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    if h == f64::INFINITY || k == f64::INFINITY {
        return 0.0;
    }
    if h == f64::NEG_INFINITY {
        return if k == f64::NEG_INFINITY {
            1.0
        } else {
            norm_cdf(-k)
        };
    }
    if k == f64::NEG_INFINITY {
        return norm_cdf(-h);
    }
    if r == 0.0 {
        return norm_cdf(-h) * norm_cdf(-k);
    }
    let (w, x): (&[f64], &[f64]) = if r.abs() < 0.3 {
        (&GL6.0, &GL6.1)
    } else if r.abs() < 0.75 {
        (&GL12.0, &GL12.1)
    } else {
        (&GL20.0, &GL20.1)
    };
    let tp = 2.0 * PI;
    let mut k = k;
    let mut hk = h * k;
    let mut bvn = 0.0;
    if r.abs() < 0.925 {
        let hs = 0.5 * (h * h + k * k);
        let asr = 0.5 * r.asin();
        for (wi, xi) in w.iter().zip(x) {
            for sgn in [-1.0, 1.0] {
                let sn = (asr * (1.0 + sgn * xi)).sin();
                bvn += wi * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
            }
        }
        bvn = bvn * asr / tp + norm_cdf(-h) * norm_cdf(-k);
    } else {
        if r < 0.0 {
            k = -k;
            hk = -hk;
        }
        if r.abs() < 1.0 {
            let as_ = 1.0 - r * r;
            let mut a = as_.sqrt();
            let bs = (h - k) * (h - k);
            let c = (4.0 - hk) / 8.0;
            let d = (12.0 - hk) / 16.0;
            let asr = -0.5 * (bs / as_ + hk);
            if asr > -100.0 {
                bvn = a
                    * asr.exp()
                    * (1.0 - c * (bs - as_) * (1.0 - d * bs / 5.0) / 3.0 + c * d * as_ * as_ / 5.0);
            }
            if hk > -100.0 {
                let b = bs.sqrt();
                let sp = tp.sqrt() * norm_cdf(-b / a);
                bvn -= (-0.5 * hk).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs / 5.0) / 3.0);
            }
            a *= 0.5;
            let mut acc = 0.0;
            for (wi, xi) in w.iter().zip(x) {
                for sgn in [-1.0, 1.0] {
                    let xs = (a * (1.0 + sgn * xi)).powi(2);
                    let asr = -0.5 * (bs / xs + hk);
                    if asr > -100.0 {
                        let sp = 1.0 + c * xs * (1.0 + d * xs);
                        let rs = (1.0 - xs).sqrt();
                        let ep = (-0.5 * hk * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                        acc += wi * asr.exp() * (sp - ep);
                    }
                }
            }
            bvn = (a * acc - bvn) / tp;
        }
        if r > 0.0 {
            bvn += norm_cdf(-h.max(k));
        } else {
            bvn = -bvn + (norm_cdf(-h) - norm_cdf(-k)).max(0.0);
        }
    }
    bvn.clamp(0.0, 1.0)
}

/// `P(X ≤ b1, Y ≤ b2)` for standard bivariate normal with correlation `r`.
pub fn bvn_cdf(b1: f64, b2: f64, r: f64) -> f64 {
    bvn_upper(-b1, -b2, r)
}

/// `P(X1 ≤ b1, X2 ≤ b2, X3 ≤ b3)` for a standard trivariate normal with
/// correlations `r12, r13, r23`.
pub fn tvn_cdf(b: [f64; 3], r12: f64, r13: f64, r23: f64) -> f64 {
    if b.contains(&f64::NEG_INFINITY) {
        return 0.0;
    }
    // Reorder so the integration path runs over the two smallest correlations.
    let (mut h1, mut h2, mut h3) = (b[0], b[1], b[2]);
    let (mut s12, mut s13, mut s23) = (r12, r13, r23);
    if s12.abs() > s13.abs() {
        std::mem::swap(&mut h2, &mut h3);
        std::mem::swap(&mut s12, &mut s13);
    }
    if s13.abs() > s23.abs() {
        std::mem::swap(&mut h1, &mut h2);
        std::mem::swap(&mut s13, &mut s23);
    }
    let eps = 1e-14;
    if s12.abs() + s13.abs() < eps {
        return norm_cdf(h1) * bvn_cdf(h2, h3, s23);
    }
    if 1.0 - s23 < eps {
        return bvn_cdf(h1, h2.min(h3), s12);
    }
    if s23 + 1.0 < eps {
        return if h2 > -h3 {
            bvn_cdf(h1, h2, s12) - bvn_cdf(h1, -h3, s12)
        } else {
            0.0
        };
    }
    let base = norm_cdf(h1) * bvn_cdf(h2, h3, s23);
    let rua = s12.asin();
    let rub = s13.asin();
    let integrand = |t: f64| {
        let mut v = 0.0;
        if rua != 0.0 {
            let (r, rr) = sin_cos2(rua * t);
            v += rua * plackett(h1, h2, h3, (rub * t).sin(), s23, r, rr);
        }
        if rub != 0.0 {
            let (r, rr) = sin_cos2(rub * t);
            v += rub * plackett(h1, h3, h2, (rua * t).sin(), s23, r, rr);
        }
        v
    };
    let extra = quad::integrate(integrand, 0.0, 1.0, 1e-14, 64) / (2.0 * PI);
    (base + extra).clamp(0.0, 1.0)
}

fn sin_cos2(x: f64) -> (f64, f64) {
    let s = x.sin();
    let c = x.cos();
    (s, c * c)
}

/// Derivative integrand of the Plackett identity with respect to the
/// correlation `r` between the first two coordinates (scaled by 2π).
fn plackett(ba: f64, bb: f64, bc: f64, ra: f64, rb: f64, r: f64, rr: f64) -> f64 {
    let dt = rr * (rr - (ra - rb) * (ra - rb) - 2.0 * ra * rb * (1.0 - r));
    if dt <= 0.0 {
        return 0.0;
    }
    let bt = (bc * rr + ba * (r * rb - ra) + bb * (r * ra - rb)) / dt.sqrt();
    let ft = (ba - r * bb).powi(2) / rr + bb * bb;
    if bt > -10.0 && ft < 100.0 {
        let mut v = (-0.5 * ft).exp();
        if bt < 10.0 {
            v *= norm_cdf(bt);
        }
        v
    } else {
        0.0
    }
}

/// Univariate-conditioning reference for tests.
#[cfg(test)]
pub(crate) fn tvn_by_conditioning(b: [f64; 3], r12: f64, r13: f64, r23: f64) -> f64 {
    let s2 = (1.0 - r12 * r12).sqrt();
    let s3 = (1.0 - r13 * r13).sqrt();
    let rho = (r23 - r12 * r13) / (s2 * s3);
    use super::special::norm_pdf;
    let f = |x: f64| norm_pdf(x) * bvn_cdf((b[1] - r12 * x) / s2, (b[2] - r13 * x) / s3, rho);
    quad::integrate(f, -12.0, b[0].min(12.0), 1e-15, 400)
}
