//! Univariate and bivariate standard normal distribution functions.

use libm::erfc;
use statrs::function::erf::erfc_inv;
use std::f64::consts::{FRAC_1_SQRT_2, PI, SQRT_2};

const FRAC_1_2PI: f64 = 1.0 / (2.0 * PI);
const SQRT_2PI: f64 = 2.506_628_274_631_000_7;

/// Standard normal density.
pub fn pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / SQRT_2PI
}

/// Standard normal CDF, accurate in both tails.
pub fn cdf(x: f64) -> f64 {
    0.5 * erfc(-x * FRAC_1_SQRT_2)
}

/// Upper tail probability `1 - cdf(x)` without cancellation.
pub fn sf(x: f64) -> f64 {
    0.5 * erfc(x * FRAC_1_SQRT_2)
}

/// Inverse of [`cdf`] for `p` in (0, 1).
pub fn quantile(p: f64) -> f64 {
    -SQRT_2 * erfc_inv(2.0 * p)
}

// Gauss-Legendre half-rules (weight, abscissa) for 6, 12 and 20 points.
const GL6: [(f64, f64); 3] = [
    (0.171_324_492_379_170_5, -0.932_469_514_203_152_2),
    (0.360_761_573_048_138_4, -0.661_209_386_466_264_7),
    (0.467_913_934_572_690_4, -0.238_619_186_083_197_0),
];
const GL12: [(f64, f64); 6] = [
    (0.047_175_336_386_511_77, -0.981_560_634_246_719_1),
    (0.106_939_325_995_318_3, -0.904_117_256_370_475_0),
    (0.160_078_328_543_346_4, -0.769_902_674_194_305_0),
    (0.203_167_426_723_065_9, -0.587_317_954_286_617_1),
    (0.233_492_536_538_354_7, -0.367_831_498_998_180_2),
    (0.249_147_045_813_402_9, -0.125_233_408_511_469_2),
];
const GL20: [(f64, f64); 10] = [
    (0.017_614_007_139_152_12, -0.993_128_599_185_094_9),
    (0.040_601_429_800_386_94, -0.963_971_927_277_913_8),
    (0.062_672_048_334_109_06, -0.912_234_428_251_325_9),
    (0.083_276_741_576_704_75, -0.839_116_971_822_218_8),
    (0.101_930_119_817_240_4, -0.746_331_906_460_150_8),
    (0.118_194_531_961_518_4, -0.636_053_680_726_515_0),
    (0.131_688_638_449_176_6, -0.510_867_001_950_827_1),
    (0.142_096_109_318_382_1, -0.373_706_088_715_419_6),
    (0.149_172_986_472_603_7, -0.227_785_851_141_645_1),
    (0.152_753_387_130_725_9, -0.076_526_521_133_497_33),
];

/// `P(X > h, Y > k)` for standard bivariate normal `(X, Y)` with correlation `r`.
///
/// Drezner-Wesolowsky integration with Genz's double precision refinements
/// (including the |r| near 1 expansion); absolute error is around 1e-15.
pub fn bvn_upper(h: f64, k: f64, r: f64) -> f64 {
    let mut k = k;
    let mut hk = h * k;
    let rules: &[(f64, f64)] = if r.abs() < 0.3 {
        &GL6
    } else if r.abs() < 0.75 {
        &GL12
    } else {
        &GL20
    };

    if r.abs() < 0.925 {
        let mut bvn = 0.0;
        if r != 0.0 {
            let hs = (h * h + k * k) / 2.0;
            let asr = r.asin();
            for &(w, x) in rules {
                for sign in [-1.0, 1.0] {
                    let sn = (asr * (sign * x + 1.0) / 2.0).sin();
                    bvn += w * ((sn * hk - hs) / (1.0 - sn * sn)).exp();
                }
            }
            bvn *= asr / (4.0 * PI);
        }
        return bvn + sf(h) * sf(k);
    }

    if r < 0.0 {
        k = -k;
        hk = -hk;
    }
    let mut bvn = 0.0;
    if r.abs() < 1.0 {
        let a_s = (1.0 - r) * (1.0 + r);
        let mut a = a_s.sqrt();
        let b_s = (h - k) * (h - k);
        let c = (4.0 - hk) / 8.0;
        let d = (12.0 - hk) / 16.0;
        let asr = -(b_s / a_s + hk) / 2.0;
        if asr > -100.0 {
            bvn = a
                * asr.exp()
                * (1.0 - c * (b_s - a_s) * (1.0 - d * b_s / 5.0) / 3.0 + c * d * a_s * a_s / 5.0);
        }
        if -hk < 100.0 {
            let b = b_s.sqrt();
            bvn -= (-hk / 2.0).exp()
                * SQRT_2PI
                * cdf(-b / a)
                * b
                * (1.0 - c * b_s * (1.0 - d * b_s / 5.0) / 3.0);
        }
        a /= 2.0;
        for &(w, x) in rules {
            for sign in [-1.0, 1.0] {
                let xs = (a * (sign * x + 1.0)).powi(2);
                let rs = (1.0 - xs).sqrt();
                let asr = -(b_s / xs + hk) / 2.0;
                if asr > -100.0 {
                    bvn += a
                        * w
                        * asr.exp()
                        * ((-hk * (1.0 - rs) / (2.0 * (1.0 + rs))).exp() / rs
                            - (1.0 + c * xs * (1.0 + d * xs)));
                }
            }
        }
        bvn = -bvn * FRAC_1_2PI;
    }
    if r > 0.0 {
        bvn + sf(h.max(k))
    } else {
        bvn = -bvn;
        if k > h {
            bvn += if h < 0.0 { cdf(k) - cdf(h) } else { sf(h) - sf(k) };
        }
        bvn.max(0.0)
    }
}

/// `P(X < h, Y < k)` for standard bivariate normal with correlation `r`.
pub fn bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    bvn_upper(-h, -k, r)
}

#[cfg(test)]
mod tests {
    use super::*;

    // P(X<h, Y<k) = ∫_{-∞}^{k} φ(y) Φ((h - r y)/√(1-r²)) dy, composite Simpson.
    fn bvn_cdf_quadrature(h: f64, k: f64, r: f64) -> f64 {
        let lo = -12.0_f64;
        let hi = k.min(12.0);
        if hi <= lo {
            return 0.0;
        }
        let n = 20_000;
        let step = (hi - lo) / n as f64;
        let s = (1.0 - r * r).sqrt();
        let f = |y: f64| pdf(y) * cdf((h - r * y) / s);
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let y = lo + i as f64 * step;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(y);
        }
        acc * step / 3.0
    }

    #[test]
    fn univariate_basics() {
        assert!((cdf(0.0) - 0.5).abs() < 1e-16);
        assert!((cdf(1.959_963_984_540_054) - 0.975).abs() < 1e-14);
        assert!((quantile(0.975) - 1.959_963_984_540_054).abs() < 1e-12);
        assert!((sf(10.0) - 7.619_853_024_160_527e-24).abs() < 1e-36);
    }

    #[test]
    fn bvn_independent_orthant() {
        assert!((bvn_cdf(0.0, 0.0, 0.0) - 0.25).abs() < 1e-15);
        // Sheppard: P(X<0,Y<0) = 1/4 + asin(r)/(2π)
        for &r in &[-0.99, -0.95, -0.9, -0.5, 0.2, 0.5, 0.8, 0.93, 0.999] {
            let exact = 0.25 + f64::asin(r) / (2.0 * PI);
            assert!((bvn_cdf(0.0, 0.0, r) - exact).abs() < 1e-13, "r={r}");
        }
    }

    #[test]
    fn bvn_matches_quadrature() {
        let hs = [-2.5, -0.7, 0.0, 0.3, 1.8];
        let rs = [-0.97, -0.93, -0.6, -0.1, 0.0, 0.25, 0.7, 0.93, 0.97];
        for &h in &hs {
            for &k in &hs {
                for &r in &rs {
                    let a = bvn_cdf(h, k, r);
                    let b = bvn_cdf_quadrature(h, k, r);
                    assert!((a - b).abs() < 1e-10, "h={h} k={k} r={r}: {a} vs {b}");
                }
            }
        }
    }
}
