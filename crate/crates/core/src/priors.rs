//! Prior layers: the three horseshoe hierarchies, the inverse-gamma priors
//! on the structural variances, and the priors of the transition function.

use std::fmt;
use std::str::FromStr;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::dist::{InverseGamma, TruncatedNormal};
use crate::error::{Error, Result};
use crate::instruments::TransformRule;
use crate::model::ModelSpec;

pub const SCALE_FLOOR: f64 = 1e-300;
pub const SCALE_CEILING: f64 = 1e300;

/// Global and local scales of one horseshoe layer with their auxiliary
/// variables (half-Cauchy scales written as inverse-gamma mixtures).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HorseshoeHierarchy {
    /// lambda^2
    pub global_sq: f64,
    /// psi_j^2
    pub local_sq: Vec<f64>,
    /// xi
    pub aux_global: f64,
    /// zeta_j
    pub aux_local: Vec<f64>,
}

impl HorseshoeHierarchy {
    /// All scales and auxiliaries start at one.
    pub fn new(size: usize) -> Self {
        Self {
            global_sq: 1.0,
            local_sq: vec![1.0; size],
            aux_global: 1.0,
            aux_local: vec![1.0; size],
        }
    }

    pub fn len(&self) -> usize {
        self.local_sq.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_sq.is_empty()
    }

    /// Prior variance `lambda^2 psi_j^2` of element `j`.
    pub fn variance(&self, j: usize) -> f64 {
        self.global_sq * self.local_sq[j]
    }

    pub fn variances(&self) -> DVector<f64> {
        DVector::from_iterator(self.len(), self.local_sq.iter().map(|l| l * self.global_sq))
    }

    pub fn validate(&self, label: &str) -> Result<()> {
        let check = |name: String, v: f64| {
            if v.is_finite() && (SCALE_FLOOR..=SCALE_CEILING).contains(&v) {
                Ok(())
            } else {
                Err(Error::ScaleBreach { name, value: v })
            }
        };
        check(format!("{label}.global"), self.global_sq)?;
        check(format!("{label}.aux_global"), self.aux_global)?;
        for (j, (l, z)) in self.local_sq.iter().zip(&self.aux_local).enumerate() {
            check(format!("{label}.local[{j}]"), *l)?;
            check(format!("{label}.aux_local[{j}]"), *z)?;
        }
        Ok(())
    }
}

/// How the speed prior's `(mean, variance)` is turned into an inverse gamma.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum PhiPriorForm {
    /// Shape `a^2/b + 2`, rate `a (a^2/b + 1)`: mean `a`, variance `b`.
    #[default]
    MomentMatched,
    /// Shape `a^2/b`, rate `a/b` read literally as inverse-gamma parameters.
    Literal,
}

impl fmt::Display for PhiPriorForm {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhiPriorForm::MomentMatched => "moment_matched",
            PhiPriorForm::Literal => "literal",
        })
    }
}

impl FromStr for PhiPriorForm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "moment_matched" => Ok(PhiPriorForm::MomentMatched),
            "literal" => Ok(PhiPriorForm::Literal),
            other => Err(Error::Config(format!(
                "unknown phi prior form `{other}` (moment_matched|literal)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PriorConfig {
    pub sigma_shape: f64,
    pub sigma_scale: f64,
    pub gamma_mean: f64,
    pub gamma_var: f64,
    pub gamma_bounds: (f64, f64),
    pub phi_mean: f64,
    pub phi_var: f64,
    pub phi_form: PhiPriorForm,
    pub anchor_own_lag: f64,
}

impl Default for PriorConfig {
    fn default() -> Self {
        Self {
            sigma_shape: 3.0,
            sigma_scale: 0.3,
            gamma_mean: 0.0,
            gamma_var: 0.01,
            gamma_bounds: (f64::NEG_INFINITY, f64::INFINITY),
            phi_mean: 2.0,
            phi_var: 0.01,
            phi_form: PhiPriorForm::MomentMatched,
            anchor_own_lag: 0.95,
        }
    }
}

impl PriorConfig {
    /// Threshold support set to the observed signal range.
    pub fn with_signal_bounds(mut self, lower: f64, upper: f64) -> Self {
        self.gamma_bounds = (lower, upper);
        self
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::Config(format!("{name} must be positive and finite, got {v}")))
            }
        };
        pos("sigma_shape", self.sigma_shape)?;
        pos("sigma_scale", self.sigma_scale)?;
        pos("gamma_var", self.gamma_var)?;
        pos("phi_mean", self.phi_mean)?;
        pos("phi_var", self.phi_var)?;
        if !(self.gamma_bounds.0 < self.gamma_bounds.1) {
            return Err(Error::Config(format!(
                "gamma bounds must be ordered, got {:?}",
                self.gamma_bounds
            )));
        }
        if !self.anchor_own_lag.is_finite() || !self.gamma_mean.is_finite() {
            return Err(Error::Config("prior means must be finite".into()));
        }
        Ok(())
    }

    pub fn sigma_prior(&self) -> InverseGamma {
        InverseGamma {
            shape: self.sigma_shape,
            rate: self.sigma_scale,
        }
    }

    pub fn gamma_prior(&self) -> Result<TruncatedNormal> {
        TruncatedNormal::new(
            self.gamma_mean,
            self.gamma_var,
            self.gamma_bounds.0,
            self.gamma_bounds.1,
        )
    }

    pub fn phi_prior(&self) -> InverseGamma {
        let ratio = self.phi_mean * self.phi_mean / self.phi_var;
        match self.phi_form {
            PhiPriorForm::MomentMatched => InverseGamma {
                shape: ratio + 2.0,
                rate: self.phi_mean * (ratio + 1.0),
            },
            PhiPriorForm::Literal => InverseGamma {
                shape: ratio,
                rate: self.phi_mean / self.phi_var,
            },
        }
    }
}

/// Free elements of the triangular factor, their horseshoe layer and the
/// structural variances.
///
/// `h` holds, row by row, the coefficients of equation `m` on the reduced-form
/// residuals of equations `0..m`, i.e. the negated below-diagonal entries of
/// `H^-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct CovariancePriorState {
    pub h: DVector<f64>,
    pub hierarchy: HorseshoeHierarchy,
    pub sigma_sq: DVector<f64>,
}

impl CovariancePriorState {
    pub fn new(n_vars: usize, sigma_sq: f64) -> Self {
        let r = n_vars * (n_vars - 1) / 2;
        Self {
            h: DVector::zeros(r),
            hierarchy: HorseshoeHierarchy::new(r),
            sigma_sq: DVector::from_element(n_vars, sigma_sq),
        }
    }
}

/// Prior mean of the pooled coefficients: `own_lag` on the first own lag of
/// every log-level variable, zero elsewhere.
pub fn build_anchor_mean(
    transforms: &[TransformRule],
    spec: &ModelSpec,
    own_lag: f64,
) -> Result<DVector<f64>> {
    if transforms.len() != spec.n_vars {
        return Err(Error::Config(format!(
            "transformation metadata for {} variables, model has {}",
            transforms.len(),
            spec.n_vars
        )));
    }
    let mut a = DVector::zeros(spec.coefficient_count());
    for (m, rule) in transforms.iter().enumerate() {
        if rule.is_log_level() {
            a[spec.lag_index(m, 1, m)] = own_lag;
        }
    }
    Ok(a)
}

pub fn log_prior_gamma(gamma: f64, cfg: &PriorConfig) -> f64 {
    match cfg.gamma_prior() {
        Ok(tn) => tn.ln_pdf(gamma),
        Err(_) => f64::NEG_INFINITY,
    }
}

pub fn log_prior_phi(phi: f64, cfg: &PriorConfig) -> f64 {
    if !(phi > 0.0) {
        return f64::NEG_INFINITY;
    }
    cfg.phi_prior().ln_pdf(phi)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ShockTag;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn spec(m: usize, p: usize) -> ModelSpec {
        ModelSpec::new(m, p, ShockTag::Tg, 500).unwrap()
    }

    #[test]
    fn anchor_all_rates_is_zero() {
        let a = build_anchor_mean(&[TransformRule::Log100Yoy; 3], &spec(3, 2), 0.95).unwrap();
        assert!(a.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn anchor_marks_log_level_own_lag_only() {
        let s = spec(2, 1);
        let a = build_anchor_mean(&[TransformRule::Log100, TransformRule::None], &s, 0.95).unwrap();
        assert_eq!(a.len(), s.coefficient_count());
        for (j, v) in a.iter().enumerate() {
            if j == s.lag_index(0, 1, 0) {
                assert_eq!(*v, 0.95);
            } else {
                assert_eq!(*v, 0.0, "index {j}");
            }
        }
        assert!(matches!(
            build_anchor_mean(&[TransformRule::None], &s, 0.95),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn gamma_prior_support_and_mode() {
        let cfg = PriorConfig::default().with_signal_bounds(-1.5, 1.5);
        assert_eq!(log_prior_gamma(1.6, &cfg), f64::NEG_INFINITY);
        assert_eq!(log_prior_gamma(-1.51, &cfg), f64::NEG_INFINITY);
        let at0 = log_prior_gamma(0.0, &cfg);
        for g in [-0.3, -0.01, 0.01, 0.2] {
            assert!(log_prior_gamma(g, &cfg) < at0);
        }
    }

    #[test]
    fn gamma_prior_integrates_to_one() {
        // tight bounds so truncation actually matters
        let cfg = PriorConfig::default().with_signal_bounds(-0.05, 0.2);
        let n = 100_000;
        let (lo, hi) = cfg.gamma_bounds;
        let h = (hi - lo) / n as f64;
        // Simpson's rule
        let mut total = 0.0;
        for i in 0..=n {
            let x = lo + i as f64 * h;
            let w = if i == 0 || i == n { 1.0 } else if i % 2 == 1 { 4.0 } else { 2.0 };
            total += w * log_prior_gamma(x, &cfg).exp();
        }
        total *= h / 3.0;
        assert!((total - 1.0).abs() < 1e-6, "{total}");
    }

    #[test]
    fn phi_prior_support() {
        let cfg = PriorConfig::default();
        assert_eq!(log_prior_phi(0.0, &cfg), f64::NEG_INFINITY);
        assert_eq!(log_prior_phi(-1.0, &cfg), f64::NEG_INFINITY);
        assert!(log_prior_phi(2.0, &cfg).is_finite());
    }

    #[test]
    fn phi_prior_has_stated_mean_and_variance() {
        let cfg = PriorConfig::default();
        let ig = cfg.phi_prior();
        assert!((ig.mean() - 2.0).abs() < 1e-12);
        assert!((ig.variance() - 0.01).abs() < 1e-12);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 1_000_000;
        let xs: Vec<f64> = (0..n).map(|_| ig.sample(&mut rng)).collect();
        let mean = xs.iter().sum::<f64>() / n as f64;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n as f64;
        assert!((mean - 2.0).abs() / 2.0 < 0.01, "{mean}");
        assert!((var - 0.01).abs() / 0.01 < 0.01, "{var}");
    }

    #[test]
    fn phi_prior_mode_matches_grid_maximum() {
        for form in [PhiPriorForm::MomentMatched, PhiPriorForm::Literal] {
            let cfg = PriorConfig { phi_form: form, ..PriorConfig::default() };
            let ig = cfg.phi_prior();
            let closed = ig.mode();
            let (best, _) = (1..400_000)
                .map(|i| i as f64 * 1e-5)
                .map(|x| (x, log_prior_phi(x, &cfg)))
                .fold((0.0, f64::NEG_INFINITY), |acc, c| if c.1 > acc.1 { c } else { acc });
            assert!((best - closed).abs() < 2e-5, "{form}: grid {best} vs {closed}");
        }
        let literal = PriorConfig { phi_form: PhiPriorForm::Literal, ..PriorConfig::default() }.phi_prior();
        assert_eq!((literal.shape, literal.rate), (400.0, 200.0));
        assert!((literal.mode() - 200.0 / 401.0).abs() < 1e-15);
    }

    #[test]
    fn hierarchy_validation_catches_breach() {
        let mut h = HorseshoeHierarchy::new(3);
        assert!(h.validate("x").is_ok());
        h.local_sq[1] = 0.0;
        assert!(matches!(h.validate("x"), Err(Error::ScaleBreach { .. })));
        h.local_sq[1] = f64::INFINITY;
        assert!(h.validate("x").is_err());
    }
}
