//! Step 2: structural error variances.

use rand::Rng;

use crate::dist::InverseGamma;
use crate::error::Result;
use crate::priors::PriorConfig;

/// `sigma_m^2 | . ~ IG(shape + T/2, scale + eta'eta / 2)`.
pub fn variance_posterior(n_obs: usize, ssr: f64, cfg: &PriorConfig) -> Result<InverseGamma> {
    InverseGamma::new(
        cfg.sigma_shape + n_obs as f64 / 2.0,
        cfg.sigma_scale + ssr / 2.0,
    )
}

/// Draws `sigma_m^2` from the structural residuals of equation `m`.
pub fn draw_variance<R: Rng + ?Sized>(
    residuals: impl IntoIterator<Item = f64>,
    cfg: &PriorConfig,
    rng: &mut R,
) -> Result<f64> {
    let (n, ssr) = residuals
        .into_iter()
        .fold((0usize, 0.0), |(n, s), e| (n + 1, s + e * e));
    Ok(variance_posterior(n, ssr, cfg)?.sample(rng))
}
