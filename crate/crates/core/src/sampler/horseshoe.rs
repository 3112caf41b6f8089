//! Steps 3 and 4: horseshoe scale updates via inverse-gamma auxiliary
//! variables, and the pooled common mean.

use nalgebra::DVector;
use rand::Rng;

use crate::dist::{std_normal, InverseGamma};
use crate::error::{Error, Result};
use crate::priors::HorseshoeHierarchy;

fn ig(shape: f64, rate: f64, name: &str) -> Result<InverseGamma> {
    InverseGamma::new(shape, rate).map_err(|_| Error::ScaleBreach {
        name: name.to_string(),
        value: rate,
    })
}

/// `psi_j^2 | . ~ IG(1, 1/zeta_j + r_j^2 / (2 lambda^2))`.
pub fn local_conditional(resid: f64, aux_local: f64, global_sq: f64) -> Result<InverseGamma> {
    ig(1.0, 1.0 / aux_local + resid * resid / (2.0 * global_sq), "local rate")
}

/// `lambda^2 | . ~ IG((n+1)/2, 1/xi + sum_j r_j^2 / (2 psi_j^2))`.
pub fn global_conditional(resid: &[f64], local_sq: &[f64], aux_global: f64) -> Result<InverseGamma> {
    let n = resid.len();
    let s: f64 = resid
        .iter()
        .zip(local_sq)
        .map(|(r, l)| r * r / (2.0 * l))
        .sum();
    ig((n as f64 + 1.0) / 2.0, 1.0 / aux_global + s, "global rate")
}

/// `zeta | . ~ IG(1, 1 + 1/psi^2)`, and likewise for `xi` given `lambda^2`.
pub fn aux_conditional(scale_sq: f64) -> Result<InverseGamma> {
    ig(1.0, 1.0 + 1.0 / scale_sq, "auxiliary rate")
}

/// One sweep over a hierarchy given the deviations `resid` it governs:
/// locals, global, local auxiliaries, global auxiliary.
pub fn update_hierarchy<R: Rng + ?Sized>(
    resid: &[f64],
    h: &mut HorseshoeHierarchy,
    rng: &mut R,
    label: &str,
) -> Result<()> {
    if resid.len() != h.len() {
        return Err(Error::InvalidArgument(format!(
            "{label}: {} deviations for a hierarchy of size {}",
            resid.len(),
            h.len()
        )));
    }
    if h.is_empty() {
        return Ok(());
    }
    for j in 0..h.len() {
        h.local_sq[j] = local_conditional(resid[j], h.aux_local[j], h.global_sq)?.sample(rng);
    }
    h.global_sq = global_conditional(resid, &h.local_sq, h.aux_global)?.sample(rng);
    for j in 0..h.len() {
        h.aux_local[j] = aux_conditional(h.local_sq[j])?.sample(rng);
    }
    h.aux_global = aux_conditional(h.global_sq)?.sample(rng);
    h.validate(label)
}

/// Regime layer: deviations `a_ij - a~_j`.
pub fn update_horseshoe_regime<R: Rng + ?Sized>(
    regime: &DVector<f64>,
    common_mean: &DVector<f64>,
    h: &mut HorseshoeHierarchy,
    rng: &mut R,
    label: &str,
) -> Result<()> {
    let resid: Vec<f64> = (regime - common_mean).iter().copied().collect();
    update_hierarchy(&resid, h, rng, label)
}

/// Pooling layer: deviations `a~_j - a_j` from the fixed anchor.
pub fn update_horseshoe_pooling<R: Rng + ?Sized>(
    common_mean: &DVector<f64>,
    anchor: &DVector<f64>,
    h: &mut HorseshoeHierarchy,
    rng: &mut R,
) -> Result<()> {
    let resid: Vec<f64> = (common_mean - anchor).iter().copied().collect();
    update_hierarchy(&resid, h, rng, "pooling")
}

/// Covariance layer: the free triangular elements themselves.
pub fn update_horseshoe_covariance<R: Rng + ?Sized>(
    h_free: &DVector<f64>,
    h: &mut HorseshoeHierarchy,
    rng: &mut R,
) -> Result<()> {
    let resid: Vec<f64> = h_free.iter().copied().collect();
    update_hierarchy(&resid, h, rng, "covariance")
}

/// Element-wise `(mean, variance)` of `a~_j | .`: the product of the two
/// regime Gaussians centred on `a_1j`, `a_0j` and the anchor Gaussian.
pub fn common_mean_conditional(
    regime1: &DVector<f64>,
    regime0: &DVector<f64>,
    anchor: &DVector<f64>,
    var1: &DVector<f64>,
    var0: &DVector<f64>,
    var_pool: &DVector<f64>,
) -> Vec<(f64, f64)> {
    (0..anchor.len())
        .map(|j| {
            let v = 1.0 / (1.0 / var1[j] + 1.0 / var0[j] + 1.0 / var_pool[j]);
            let m = v * (regime1[j] / var1[j] + regime0[j] / var0[j] + anchor[j] / var_pool[j]);
            (m, v)
        })
        .collect()
}

pub fn draw_common_mean<R: Rng + ?Sized>(
    regime1: &DVector<f64>,
    regime0: &DVector<f64>,
    anchor: &DVector<f64>,
    h1: &HorseshoeHierarchy,
    h0: &HorseshoeHierarchy,
    pool: &HorseshoeHierarchy,
    rng: &mut R,
) -> DVector<f64> {
    let cond = common_mean_conditional(
        regime1,
        regime0,
        anchor,
        &h1.variances(),
        &h0.variances(),
        &pool.variances(),
    );
    DVector::from_iterator(
        cond.len(),
        cond.iter().map(|(m, v)| m + v.sqrt() * std_normal(rng)),
    )
}
