//! Step 5: random-walk Metropolis for the threshold and speed, plus the
//! burn-in proposal adaptation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::dist::std_normal;
use crate::error::{Error, Result};
use crate::model::{weight_path, RegimeCoefficients, logistic};
use crate::priors::{log_prior_gamma, log_prior_phi, CovariancePriorState, PriorConfig};

use super::data::ModelData;

/// Proposal variances `(c_gamma, c_phi)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ProposalScales {
    pub gamma_var: f64,
    pub phi_var: f64,
}

impl Default for ProposalScales {
    fn default() -> Self {
        Self {
            gamma_var: 1e-3,
            phi_var: 1e-3,
        }
    }
}

/// Conditional Gaussian likelihood of the triangular system as a function of
/// `(gamma, phi)` with everything else held fixed.
///
/// The regime fits `W A_1'` and `W A_0'` are computed once, so each evaluation
/// costs `O(T M^2)`.
pub struct TransitionLikelihood<'a> {
    data: &'a ModelData,
    fit1: DMatrix<f64>,
    fit0: DMatrix<f64>,
    /// Strictly lower triangular: row `m` holds equation `m`'s residual loadings.
    g: DMatrix<f64>,
    sigma_sq: DVector<f64>,
}

impl<'a> TransitionLikelihood<'a> {
    pub fn new(
        data: &'a ModelData,
        coeffs: &RegimeCoefficients,
        cov: &CovariancePriorState,
    ) -> Self {
        let spec = &data.spec;
        let m = spec.n_vars;
        let mut g = DMatrix::zeros(m, m);
        for r in 1..m {
            let off = spec.covariance_offset(r);
            for c in 0..r {
                g[(r, c)] = cov.h[off + c];
            }
        }
        let fit1 = &data.base * coeffs.block(crate::model::Regime::One).transpose();
        let fit0 = &data.base * coeffs.block(crate::model::Regime::Zero).transpose();
        Self {
            data,
            fit1,
            fit0,
            g,
            sigma_sq: cov.sigma_sq.clone(),
        }
    }

    pub fn log_likelihood(&self, gamma: f64, phi: f64) -> f64 {
        let (t_obs, m) = self.data.y.shape();
        let log_norm: f64 = self
            .sigma_sq
            .iter()
            .map(|s| -0.5 * (2.0 * std::f64::consts::PI * s).ln())
            .sum::<f64>()
            * t_obs as f64;
        let mut eps = vec![0.0; m];
        let mut quad = 0.0;
        for t in 0..t_obs {
            let s = logistic(phi * (self.data.signal_lag[t] - gamma));
            for i in 0..m {
                let fit = s * self.fit1[(t, i)] + (1.0 - s) * self.fit0[(t, i)];
                eps[i] = self.data.y[(t, i)] - fit;
            }
            for i in 0..m {
                let mut eta = eps[i];
                for c in 0..i {
                    eta -= self.g[(i, c)] * eps[c];
                }
                quad += eta * eta / self.sigma_sq[i];
            }
        }
        log_norm - 0.5 * quad
    }

    pub fn log_target(&self, gamma: f64, phi: f64, priors: &PriorConfig) -> f64 {
        let lp = log_prior_gamma(gamma, priors) + log_prior_phi(phi, priors);
        if lp == f64::NEG_INFINITY {
            return lp;
        }
        lp + self.log_likelihood(gamma, phi)
    }
}

/// `ln omega` before truncation at zero; `-inf` when the proposal is outside
/// the prior support.
pub fn log_acceptance_ratio(
    lik: &TransitionLikelihood<'_>,
    current: (f64, f64),
    proposal: (f64, f64),
    priors: &PriorConfig,
) -> Result<f64> {
    let cur = lik.log_target(current.0, current.1, priors);
    if !cur.is_finite() {
        return Err(Error::Numerical(format!(
            "log target not finite at current (gamma, phi) = {current:?}: {cur}"
        )));
    }
    let prop = lik.log_target(proposal.0, proposal.1, priors);
    if prop == f64::NEG_INFINITY {
        return Ok(f64::NEG_INFINITY);
    }
    if prop.is_nan() {
        return Err(Error::Numerical(format!("log target NaN at {proposal:?}")));
    }
    Ok((prop - cur).min(0.0))
}

/// Outcome of one Metropolis step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MhOutcome {
    pub gamma: f64,
    pub phi: f64,
    pub accepted: bool,
    pub weights_changed: bool,
}

/// Proposes `gamma* ~ N(gamma, c_gamma)`, `phi* ~ N(phi, c_phi)` and accepts
/// with probability `omega`. The caller refreshes the S-dependent caches when
/// `accepted` is set.
pub fn mh_transition_step<R: Rng + ?Sized>(
    lik: &TransitionLikelihood<'_>,
    current: (f64, f64),
    scales: ProposalScales,
    priors: &PriorConfig,
    rng: &mut R,
) -> Result<MhOutcome> {
    let g_star = current.0 + scales.gamma_var.sqrt() * std_normal(rng);
    let p_star = current.1 + scales.phi_var.sqrt() * std_normal(rng);
    let u: f64 = rng.random();
    let log_omega = log_acceptance_ratio(lik, current, (g_star, p_star), priors)?;
    let accepted = u.ln() < log_omega;
    let (gamma, phi) = if accepted { (g_star, p_star) } else { current };
    Ok(MhOutcome {
        gamma,
        phi,
        accepted,
        weights_changed: accepted,
    })
}

/// Multiplicative burn-in rule on the window acceptance rate.
pub fn adapt_proposals(window_rate: f64, scales: ProposalScales, band: (f64, f64)) -> ProposalScales {
    let factor = if window_rate > band.1 {
        1.1
    } else if window_rate < band.0 {
        0.9
    } else {
        1.0
    };
    ProposalScales {
        gamma_var: scales.gamma_var * factor,
        phi_var: scales.phi_var * factor,
    }
}

/// Weight path for accepted `(gamma, phi)`.
pub fn refresh_weights(data: &ModelData, gamma: f64, phi: f64) -> Result<DVector<f64>> {
    weight_path(&data.signal_lag, gamma, phi)
}
