//! Metropolis-within-Gibbs sampler.
//!
//! One iteration runs, in order: the equation-by-equation coefficient draws,
//! the structural variances, the two regime and the pooling horseshoe layers
//! followed by the common mean, the covariance horseshoe layer, and the
//! random-walk step for `(gamma, phi)`.

pub mod coefficients;
pub mod data;
pub mod diagnostics;
pub mod horseshoe;
pub mod store;
pub mod transition;
pub mod variance;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{RegimeCoefficients, TransitionState};
use crate::priors::{CovariancePriorState, HorseshoeHierarchy, PriorConfig};

pub use coefficients::{coefficient_posterior, draw_coefficients_equation, GaussianPosterior};
pub use data::ModelData;
pub use diagnostics::{effective_sample_size, ChainDiagnostics, StabilityCounts};
pub use horseshoe::{
    draw_common_mean, update_horseshoe_covariance, update_horseshoe_pooling,
    update_horseshoe_regime,
};
pub use store::{Draw, DrawStore};
pub use transition::{adapt_proposals, mh_transition_step, ProposalScales, TransitionLikelihood};
pub use variance::{draw_variance, variance_posterior};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
    pub seed: u64,
    /// Independent stream of the seeded generator, one per chain.
    pub stream: u64,
    pub proposal: ProposalScales,
    pub adapt_window: usize,
    pub target_accept: (f64, f64),
    /// Skip the Metropolis step and keep `(init_gamma, init_phi)`.
    pub fix_transition: bool,
    /// Include the dependence of later equations on `A_m` when drawing
    /// equation `m`. Off reproduces the published triangular scheme.
    #[serde(default)]
    pub exact_triangular: bool,
    pub init_gamma: f64,
    pub init_phi: f64,
    pub init_sigma_sq: f64,
}

impl Default for ChainConfig {
    fn default() -> Self {
        Self {
            n_iter: 32_000,
            n_burn: 2_000,
            thin: 10,
            seed: 0,
            stream: 0,
            proposal: ProposalScales::default(),
            adapt_window: 20,
            target_accept: (0.25, 0.40),
            fix_transition: false,
            exact_triangular: false,
            init_gamma: 0.0,
            init_phi: 2.0,
            init_sigma_sq: 0.1,
        }
    }
}

impl ChainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.thin == 0 || self.n_burn >= self.n_iter {
            return Err(Error::Config(format!(
                "need thin >= 1 and n_burn < n_iter (thin {}, n_burn {}, n_iter {})",
                self.thin, self.n_burn, self.n_iter
            )));
        }
        if self.adapt_window == 0 {
            return Err(Error::Config("adapt_window must be >= 1".into()));
        }
        let ok = |v: f64| v > 0.0 && v.is_finite();
        if !ok(self.proposal.gamma_var) || !ok(self.proposal.phi_var) || !ok(self.init_sigma_sq) {
            return Err(Error::Config(
                "proposal scales and initial variance must be positive".into(),
            ));
        }
        let (lo, hi) = self.target_accept;
        if !(0.0 <= lo && lo < hi && hi <= 1.0) {
            return Err(Error::Config(format!("bad target acceptance band {:?}", self.target_accept)));
        }
        if !(self.init_phi >= 0.0 && self.init_phi.is_finite() && self.init_gamma.is_finite()) {
            return Err(Error::Config("initial (gamma, phi) must be finite with phi >= 0".into()));
        }
        Ok(())
    }

    /// `(n_iter - n_burn) / thin`.
    pub fn retained(&self) -> usize {
        (self.n_iter - self.n_burn) / self.thin
    }

    pub fn is_retained(&self, iteration: usize) -> bool {
        iteration > self.n_burn && (iteration - self.n_burn) % self.thin == 0
    }

    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hierarchies {
    pub regime1: HorseshoeHierarchy,
    pub regime0: HorseshoeHierarchy,
    pub pooling: HorseshoeHierarchy,
}

/// Full Gibbs state plus the S-dependent caches `Z`, `Z'Z`, `Z'Y` and the
/// reduced-form and structural residuals.
#[derive(Debug, Clone)]
pub struct SamplerState {
    pub coefficients: RegimeCoefficients,
    pub covariance: CovariancePriorState,
    pub hierarchies: Hierarchies,
    pub transition: TransitionState,
    pub proposal: ProposalScales,
    pub rng: ChaCha8Rng,
    pub(crate) design: DMatrix<f64>,
    pub(crate) gram: DMatrix<f64>,
    pub(crate) cross: DMatrix<f64>,
    pub(crate) reduced_resid: DMatrix<f64>,
    pub(crate) structural_resid: DMatrix<f64>,
    pub(crate) exact_triangular: bool,
}

impl SamplerState {
    /// Every coefficient layer at the anchor, `h = 0`, unit scales.
    pub fn initial(data: &ModelData, anchor: DVector<f64>, cfg: &ChainConfig) -> Result<Self> {
        let spec = &data.spec;
        let j = spec.coefficient_count();
        if anchor.len() != j {
            return Err(Error::InvalidArgument(format!(
                "anchor has {} entries, model needs {j}",
                anchor.len()
            )));
        }
        let transition = TransitionState::new(&data.signal_lag, cfg.init_gamma, cfg.init_phi)?;
        let t_obs = data.n_obs();
        let mut state = Self {
            coefficients: RegimeCoefficients::at_anchor(spec.n_vars, spec.lags, anchor),
            covariance: CovariancePriorState::new(spec.n_vars, cfg.init_sigma_sq),
            hierarchies: Hierarchies {
                regime1: HorseshoeHierarchy::new(j),
                regime0: HorseshoeHierarchy::new(j),
                pooling: HorseshoeHierarchy::new(j),
            },
            transition,
            proposal: cfg.proposal,
            rng: cfg.rng(),
            exact_triangular: cfg.exact_triangular,
            design: DMatrix::zeros(0, 0),
            gram: DMatrix::zeros(0, 0),
            cross: DMatrix::zeros(0, 0),
            reduced_resid: DMatrix::zeros(t_obs, spec.n_vars),
            structural_resid: DMatrix::zeros(t_obs, spec.n_vars),
        };
        state.refresh_design(data);
        state.recompute_residuals(data);
        Ok(state)
    }

    /// Rebuilds `Z`, `Z'Z` and `Z'Y` from the current weight path.
    pub fn refresh_design(&mut self, data: &ModelData) {
        self.design = data.design(&self.transition.weights);
        self.gram = self.design.tr_mul(&self.design);
        self.cross = self.design.tr_mul(&data.y);
    }

    /// Stacked `(a_1m, a_0m)` for equation `m`.
    fn equation_coefficients(&self, m: usize, k: usize) -> DVector<f64> {
        let c = &self.coefficients;
        let mut a = DVector::zeros(2 * k);
        a.rows_mut(0, k).copy_from(&c.regime1.rows(m * k, k));
        a.rows_mut(k, k).copy_from(&c.regime0.rows(m * k, k));
        a
    }

    fn refresh_equation_residuals(&mut self, m: usize, data: &ModelData) {
        let spec = &data.spec;
        let k = spec.regime_width();
        let a = self.equation_coefficients(m, k);
        let eps = data.y.column(m) - &self.design * a;
        let off = spec.covariance_offset(m);
        let mut eta = eps.clone();
        for i in 0..m {
            eta.axpy(-self.covariance.h[off + i], &self.reduced_resid.column(i), 1.0);
        }
        self.reduced_resid.set_column(m, &eps);
        self.structural_resid.set_column(m, &eta);
    }

    /// Recomputes both residual matrices from scratch.
    pub fn recompute_residuals(&mut self, data: &ModelData) {
        for m in 0..data.spec.n_vars {
            self.refresh_equation_residuals(m, data);
        }
    }

    pub(crate) fn set_equation(&mut self, m: usize, alpha: &DVector<f64>, data: &ModelData) {
        let spec = &data.spec;
        let k = spec.regime_width();
        let kk = spec.regressor_count();
        self.coefficients
            .regime1
            .rows_mut(m * k, k)
            .copy_from(&alpha.rows(0, k));
        self.coefficients
            .regime0
            .rows_mut(m * k, k)
            .copy_from(&alpha.rows(k, k));
        let off = spec.covariance_offset(m);
        for i in 0..m {
            self.covariance.h[off + i] = alpha[kk + i];
        }
        self.refresh_equation_residuals(m, data);
    }

    pub fn reduced_residuals(&self) -> &DMatrix<f64> {
        &self.reduced_resid
    }

    pub fn structural_residuals(&self) -> &DMatrix<f64> {
        &self.structural_resid
    }

    pub fn snapshot(&self, iteration: usize) -> Draw {
        Draw {
            iteration,
            a1: self.coefficients.regime1.clone(),
            a0: self.coefficients.regime0.clone(),
            a_tilde: self.coefficients.common_mean.clone(),
            h: self.covariance.h.clone(),
            sigma_sq: self.covariance.sigma_sq.clone(),
            gamma: self.transition.gamma,
            phi: self.transition.phi,
            weights: self.transition.weights.clone(),
        }
    }

    /// Steps 1 through 4.
    pub fn gibbs_sweep(&mut self, data: &ModelData, priors: &PriorConfig) -> Result<()> {
        let m_vars = data.spec.n_vars;
        for m in 0..m_vars {
            draw_coefficients_equation(m, data, self)?;
        }
        for m in 0..m_vars {
            let s = draw_variance(
                self.structural_resid.column(m).iter().copied(),
                priors,
                &mut self.rng,
            )?;
            if !(s > 0.0 && s.is_finite()) {
                return Err(Error::Numerical(format!("sigma^2 draw {s} for equation {m}")));
            }
            self.covariance.sigma_sq[m] = s;
        }
        let c = &self.coefficients;
        let h = &mut self.hierarchies;
        update_horseshoe_regime(&c.regime1, &c.common_mean, &mut h.regime1, &mut self.rng, "regime 1")?;
        update_horseshoe_regime(&c.regime0, &c.common_mean, &mut h.regime0, &mut self.rng, "regime 0")?;
        update_horseshoe_pooling(&c.common_mean, &c.anchor, &mut h.pooling, &mut self.rng)?;
        let a_tilde = draw_common_mean(
            &c.regime1,
            &c.regime0,
            &c.anchor,
            &h.regime1,
            &h.regime0,
            &h.pooling,
            &mut self.rng,
        );
        self.coefficients.common_mean = a_tilde;
        update_horseshoe_covariance(
            &self.covariance.h,
            &mut self.covariance.hierarchy,
            &mut self.rng,
        )?;
        Ok(())
    }

    /// Step 5. Returns whether the proposal was accepted.
    pub fn transition_step(&mut self, data: &ModelData, priors: &PriorConfig) -> Result<bool> {
        let lik = TransitionLikelihood::new(data, &self.coefficients, &self.covariance);
        let out = mh_transition_step(
            &lik,
            (self.transition.gamma, self.transition.phi),
            self.proposal,
            priors,
            &mut self.rng,
        )?;
        if out.accepted {
            self.transition = TransitionState::new(&data.signal_lag, out.gamma, out.phi)?;
            self.refresh_design(data);
        }
        Ok(out.accepted)
    }
}

/// A finished (or aborted) chain.
#[derive(Debug, Clone)]
pub struct ChainRun {
    pub store: DrawStore,
    pub diagnostics: ChainDiagnostics,
}

/// A fault together with everything retained before it.
#[derive(Debug)]
pub struct ChainFailure {
    pub error: Error,
    pub partial: ChainRun,
}

impl From<ChainFailure> for Error {
    fn from(f: ChainFailure) -> Self {
        f.error
    }
}

/// Threshold prior support intersected with the observed signal range.
pub fn effective_priors(data: &ModelData, priors: &PriorConfig) -> PriorConfig {
    let (lo, hi) = data.signal_bounds;
    let (plo, phi) = priors.gamma_bounds;
    priors.clone().with_signal_bounds(lo.max(plo), hi.min(phi))
}

/// Runs one chain from the initial state.
pub fn run_chain(
    data: &ModelData,
    priors: &PriorConfig,
    anchor: DVector<f64>,
    cfg: &ChainConfig,
) -> std::result::Result<ChainRun, ChainFailure> {
    let mut diag = ChainDiagnostics::new(cfg);
    let mut store = DrawStore::new(data.spec, data.dates.clone());
    let fail = |error: Error, store: DrawStore, diag: ChainDiagnostics| ChainFailure {
        error,
        partial: ChainRun {
            store,
            diagnostics: diag,
        },
    };
    if let Err(e) = cfg.validate() {
        return Err(fail(e, store, diag));
    }
    let priors = effective_priors(data, priors);
    if let Err(e) = priors.validate() {
        return Err(fail(e, store, diag));
    }
    let mut state = match SamplerState::initial(data, anchor, cfg) {
        Ok(s) => s,
        Err(e) => return Err(fail(e, store, diag)),
    };

    let mut window_accept = 0usize;
    let mut window_len = 0usize;
    for it in 1..=cfg.n_iter {
        let step = state.gibbs_sweep(data, &priors).and_then(|_| {
            if cfg.fix_transition {
                Ok(None)
            } else {
                state.transition_step(data, &priors).map(Some)
            }
        });
        let accepted = match step {
            Ok(a) => a,
            Err(e) => {
                diag.final_proposal = state.proposal;
                let err = Error::ChainFault {
                    iteration: it,
                    source: Box::new(e),
                };
                return Err(fail(err, store, diag));
            }
        };
        if let Some(acc) = accepted {
            diag.record(it <= cfg.n_burn, acc);
            if it <= cfg.n_burn {
                window_accept += acc as usize;
                window_len += 1;
                if window_len == cfg.adapt_window {
                    let rate = window_accept as f64 / window_len as f64;
                    state.proposal = adapt_proposals(rate, state.proposal, cfg.target_accept);
                    window_accept = 0;
                    window_len = 0;
                }
            }
        }
        if cfg.is_retained(it) {
            store.push(state.snapshot(it));
        }
        if it % 5000 == 0 {
            log::debug!("chain {}: iteration {it}/{}", cfg.stream, cfg.n_iter);
        }
    }
    diag.final_proposal = state.proposal;
    Ok(ChainRun {
        store,
        diagnostics: diag,
    })
}
