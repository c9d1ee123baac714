//! Univariate and bivariate standard-normal functions.
//!
//! The bivariate CDF follows Genz's BVNU scheme (Drezner-Wesolowsky with
//! Gauss-Legendre quadrature on the arcsine-transformed correlation, plus an
//! asymptotic expansion for |r| >= 0.925). Absolute error is below 1e-7.

use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::erf::erfc;
use std::f64::consts::{FRAC_1_SQRT_2, PI};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Standard-normal density.
#[inline]
pub fn pdf(x: f64) -> f64 {
    if x.is_infinite() {
        return 0.0;
    }
    INV_SQRT_2PI * (-0.5 * x * x).exp()
}

/// Standard-normal CDF.
#[inline]
pub fn cdf(x: f64) -> f64 {
    if x == f64::INFINITY {
        1.0
    } else if x == f64::NEG_INFINITY {
        0.0
    } else {
        0.5 * erfc(-x * FRAC_1_SQRT_2)
    }
}

/// Standard-normal quantile; returns +-inf at the endpoints.
pub fn quantile(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let x = Normal::standard().inverse_cdf(p);
    // One Halley step tightens the library value to near machine precision.
    let e = cdf(x) - p;
    let u = e / pdf(x);
    x - u / (1.0 + 0.5 * x * u)
}

struct Rule {
    w: &'static [f64],
    x: &'static [f64],
}

const GL6: Rule = Rule {
    w: &[0.171_324_492_379_170_5, 0.360_761_573_048_138_4, 0.467_913_934_572_690_4],
    x: &[0.932_469_514_203_152_2, 0.661_209_386_466_264_7, 0.238_619_186_083_197],
};

const GL12: Rule = Rule {
    w: &[
        0.047_175_336_386_511_77,
        0.106_939_325_995_318_3,
        0.160_078_328_543_346_4,
        0.203_167_426_723_065_9,
        0.233_492_536_538_354_7,
        0.249_147_045_813_402_9,
    ],
    x: &[
        0.981_560_634_246_719_1,
        0.904_117_256_370_475,
        0.769_902_674_194_317_7,
        0.587_317_954_286_617_1,
        0.367_831_498_998_180_2,
        0.125_233_408_511_469_2,
    ],
};

const GL20: Rule = Rule {
    w: &[
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
    x: &[
        0.993_128_599_185_094_9,
        0.963_971_927_277_913_8,
        0.912_234_428_251_325_9,
        0.839_116_971_822_218_8,
        0.746_331_906_460_150_8,
        0.636_053_680_726_515,
        0.510_867_001_950_827_1,
        0.373_706_088_715_419_6,
        0.227_785_851_141_645_1,
        0.076_526_521_133_497_33,
    ],
};

/// Bivariate standard-normal CDF at a fixed correlation.
///
/// Everything that depends only on `r` is computed once, so evaluating many
/// corners of a contingency table at the same correlation is cheap.
#[derive(Debug, Clone)]
pub struct BivariateNormal {
    r: f64,
    /// (weight, node) pairs on [0, 2] after mirroring.
    nodes: Vec<(f64, f64)>,
    /// For |r| < 0.925: (weight, sin(asr * t), 1 / (1 - sin^2)).
    arc: Vec<(f64, f64, f64)>,
    asr: f64,
}

impl BivariateNormal {
    pub fn new(r: f64) -> Self {
        let ar = r.abs();
        let rule = if ar < 0.3 {
            &GL6
        } else if ar < 0.75 {
            &GL12
        } else {
            &GL20
        };
        let mut nodes = Vec::with_capacity(2 * rule.w.len());
        for (&w, &x) in rule.w.iter().zip(rule.x) {
            nodes.push((w, 1.0 - x));
            nodes.push((w, 1.0 + x));
        }
        let asr = r.asin() / 2.0;
        let arc = if ar < 0.925 {
            nodes
                .iter()
                .map(|&(w, t)| {
                    let sn = (asr * t).sin();
                    (w, sn, 1.0 / (1.0 - sn * sn))
                })
                .collect()
        } else {
            Vec::new()
        };
        Self { r, nodes, arc, asr }
    }

    pub fn rho(&self) -> f64 {
        self.r
    }

    /// P(X <= h, Y <= k).
    pub fn cdf(&self, h: f64, k: f64) -> f64 {
        self.upper(-h, -k)
    }

    /// P(X > h, Y > k).
    pub fn upper(&self, dh: f64, dk: f64) -> f64 {
        if dh == f64::INFINITY || dk == f64::INFINITY {
            return 0.0;
        }
        if dh == f64::NEG_INFINITY {
            return if dk == f64::NEG_INFINITY { 1.0 } else { cdf(-dk) };
        }
        if dk == f64::NEG_INFINITY {
            return cdf(-dh);
        }
        if self.r == 0.0 {
            return cdf(-dh) * cdf(-dk);
        }
        const TP: f64 = 2.0 * PI;
        let r = self.r;
        let h = dh;
        let mut k = dk;
        let mut hk = h * k;
        let mut bvn;
        if r.abs() < 0.925 {
            let hs = (h * h + k * k) / 2.0;
            let s: f64 = self
                .arc
                .iter()
                .map(|&(w, sn, inv)| w * ((sn * hk - hs) * inv).exp())
                .sum();
            bvn = s * self.asr / TP + cdf(-h) * cdf(-k);
        } else {
            if r < 0.0 {
                k = -k;
                hk = -hk;
            }
            bvn = 0.0;
            if r.abs() < 1.0 {
                let as_ = 1.0 - r * r;
                let mut a = as_.sqrt();
                let bs = (h - k) * (h - k);
                let asr = -(bs / as_ + hk) / 2.0;
                let c = (4.0 - hk) / 8.0;
                let d = (12.0 - hk) / 80.0;
                if asr > -100.0 {
                    bvn = a * asr.exp() * (1.0 - c * (bs - as_) * (1.0 - d * bs) / 3.0 + c * d * as_ * as_);
                }
                if hk > -100.0 {
                    let b = bs.sqrt();
                    let sp = TP.sqrt() * cdf(-b / a);
                    bvn -= (-hk / 2.0).exp() * sp * b * (1.0 - c * bs * (1.0 - d * bs) / 3.0);
                }
                a /= 2.0;
                let mut s = 0.0;
                for &(w, t) in &self.nodes {
                    let xs = (a * t) * (a * t);
                    let asr = -(bs / xs + hk) / 2.0;
                    if asr > -100.0 {
                        let sp = 1.0 + c * xs * (1.0 + 5.0 * d * xs);
                        let rs = (1.0 - xs).sqrt();
                        let ep = (-(hk / 2.0) * xs / ((1.0 + rs) * (1.0 + rs))).exp() / rs;
                        s += w * asr.exp() * (sp - ep);
                    }
                }
                bvn = (a * s - bvn) / TP;
            }
            if r > 0.0 {
                bvn += cdf(-h.max(k));
            } else if h >= k {
                bvn = -bvn;
            } else {
                let l = if h < 0.0 { cdf(k) - cdf(h) } else { cdf(-h) - cdf(-k) };
                bvn = l - bvn;
            }
        }
        bvn.clamp(0.0, 1.0)
    }
}

/// One-shot bivariate CDF, P(X <= h, Y <= k) with correlation `r`.
pub fn bvn_cdf(h: f64, k: f64, r: f64) -> f64 {
    BivariateNormal::new(r).cdf(h, k)
}

/// Bivariate standard-normal density.
pub fn bvn_pdf(h: f64, k: f64, r: f64) -> f64 {
    let om = 1.0 - r * r;
    (-(h * h - 2.0 * r * h * k + k * k) / (2.0 * om)).exp() / (2.0 * PI * om.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute-force oracle: P(X<=h, Y<=k) = int_{-inf}^{h} phi(x) Phi((k - r x)/sqrt(1-r^2)) dx
    /// with composite Simpson on a fine grid.
    fn bvn_quadrature(h: f64, k: f64, r: f64) -> f64 {
        let lo = -9.0;
        let hi = h.min(9.0);
        if hi <= lo {
            return 0.0;
        }
        let n = 20_000;
        let dx = (hi - lo) / n as f64;
        let s = (1.0 - r * r).sqrt();
        let f = |x: f64| pdf(x) * cdf((k - r * x) / s);
        let mut acc = f(lo) + f(hi);
        for i in 1..n {
            let x = lo + i as f64 * dx;
            acc += if i % 2 == 1 { 4.0 } else { 2.0 } * f(x);
        }
        acc * dx / 3.0
    }

    #[test]
    fn bvn_matches_quadrature_oracle() {
        let pts = [-2.5, -1.2, -0.3, 0.0, 0.4, 1.1, 2.7];
        let rs = [-0.999, -0.95, -0.8, -0.5, -0.2, 0.05, 0.29, 0.31, 0.6, 0.76, 0.93, 0.99, 0.999];
        let mut worst: f64 = 0.0;
        for &r in &rs {
            let b = BivariateNormal::new(r);
            for &h in &pts {
                for &k in &pts {
                    let err = (b.cdf(h, k) - bvn_quadrature(h, k, r)).abs();
                    worst = worst.max(err);
                }
            }
        }
        assert!(worst < 1e-7, "max abs error {worst}");
    }

    #[test]
    fn bvn_infinite_limits() {
        let b = BivariateNormal::new(0.4);
        assert_eq!(b.cdf(f64::INFINITY, f64::INFINITY), 1.0);
        assert_eq!(b.cdf(f64::NEG_INFINITY, 0.3), 0.0);
        assert!((b.cdf(f64::INFINITY, 0.3) - cdf(0.3)).abs() < 1e-15);
        assert!((b.cdf(0.0, 0.0) - (0.25 + 0.4f64.asin() / (2.0 * PI))).abs() < 1e-12);
    }

    #[test]
    fn quantile_inverts_cdf() {
        for &p in &[1e-6, 0.025, 0.25, 0.5, 0.9, 0.999] {
            assert!((cdf(quantile(p)) - p).abs() < 1e-12);
        }
        assert!((quantile(0.25) + 0.674_489_750_196_081_7).abs() < 1e-9);
    }
}
