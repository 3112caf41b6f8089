//! The handful of distributions the sampler needs, in the parameterizations
//! used throughout the crate.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_8;

/// Inverse gamma with density `x^(-shape-1) exp(-rate / x)` up to a constant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InverseGamma {
    pub shape: f64,
    pub rate: f64,
}

impl InverseGamma {
    pub fn new(shape: f64, rate: f64) -> Result<Self> {
        if !(shape > 0.0 && shape.is_finite() && rate > 0.0 && rate.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "inverse gamma needs positive finite shape and rate, got ({shape}, {rate})"
            )));
        }
        Ok(Self { shape, rate })
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if x <= 0.0 || !x.is_finite() {
            return f64::NEG_INFINITY;
        }
        self.shape * self.rate.ln() - ln_gamma(self.shape) - (self.shape + 1.0) * x.ln()
            - self.rate / x
    }

    /// Mean, defined for `shape > 1`.
    pub fn mean(&self) -> f64 {
        if self.shape > 1.0 {
            self.rate / (self.shape - 1.0)
        } else {
            f64::INFINITY
        }
    }

    /// Variance, defined for `shape > 2`.
    pub fn variance(&self) -> f64 {
        if self.shape > 2.0 {
            let s1 = self.shape - 1.0;
            self.rate * self.rate / (s1 * s1 * (self.shape - 2.0))
        } else {
            f64::INFINITY
        }
    }

    pub fn mode(&self) -> f64 {
        self.rate / (self.shape + 1.0)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        // 1/Gamma(shape, scale = 1/rate)
        let g = Gamma::new(self.shape, 1.0 / self.rate)
            .expect("validated in constructor")
            .sample(rng);
        1.0 / g
    }
}

/// Standard normal CDF.
pub fn std_normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// `ln N(x; mean, var)`.
pub fn normal_ln_pdf(x: f64, mean: f64, var: f64) -> f64 {
    let d = x - mean;
    -LN_SQRT_2PI - 0.5 * var.ln() - 0.5 * d * d / var
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Half-Cauchy C+(0, 1) as the ratio of two independent normals.
pub fn half_cauchy<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    let num: f64 = std_normal(rng);
    let den: f64 = std_normal(rng);
    (num / den).abs()
}

/// Normal(mean, var) truncated to `[lower, upper]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TruncatedNormal {
    pub mean: f64,
    pub var: f64,
    pub lower: f64,
    pub upper: f64,
}

impl TruncatedNormal {
    pub fn new(mean: f64, var: f64, lower: f64, upper: f64) -> Result<Self> {
        if !(var > 0.0 && var.is_finite()) || !(lower < upper) || !mean.is_finite() {
            return Err(Error::InvalidArgument(format!(
                "truncated normal needs var > 0 and lower < upper, got var {var}, bounds [{lower}, {upper}]"
            )));
        }
        Ok(Self {
            mean,
            var,
            lower,
            upper,
        })
    }

    fn sd(&self) -> f64 {
        self.var.sqrt()
    }

    /// Probability mass of the untruncated normal inside the bounds.
    pub fn mass(&self) -> f64 {
        let sd = self.sd();
        let a = (self.lower - self.mean) / sd;
        let b = (self.upper - self.mean) / sd;
        if a > 0.0 {
            // both bounds in the upper tail: difference of survival functions
            std_normal_cdf(-a) - std_normal_cdf(-b)
        } else {
            std_normal_cdf(b) - std_normal_cdf(a)
        }
    }

    pub fn ln_pdf(&self, x: f64) -> f64 {
        if !(x >= self.lower && x <= self.upper) {
            return f64::NEG_INFINITY;
        }
        normal_ln_pdf(x, self.mean, self.var) - self.mass().ln()
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let sd = self.sd();
        if self.mass() > 0.05 {
            loop {
                let x = self.mean + sd * std_normal(rng);
                if x >= self.lower && x <= self.upper {
                    return x;
                }
            }
        }
        // inverse CDF on the side of the mean with the better tail resolution
        let a = (self.lower - self.mean) / sd;
        let b = (self.upper - self.mean) / sd;
        let n = statrs::distribution::Normal::standard();
        use statrs::distribution::ContinuousCDF;
        let z = if a > 0.0 {
            let (qa, qb) = (std_normal_cdf(-a), std_normal_cdf(-b));
            let q = qb + rng.random::<f64>() * (qa - qb);
            -n.inverse_cdf(q)
        } else {
            let (pa, pb) = (std_normal_cdf(a), std_normal_cdf(b));
            n.inverse_cdf(pa + rng.random::<f64>() * (pb - pa))
        };
        (self.mean + sd * z).clamp(self.lower, self.upper)
    }
}
