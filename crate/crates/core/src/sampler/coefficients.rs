//! Step 1: equation-by-equation Gaussian draws of the regime coefficients
//! and the free elements of the triangular factor.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::dist::std_normal;
use crate::error::{Error, Result};

use super::data::ModelData;
use super::SamplerState;

/// `N(mean, precision^-1)` with the precision kept in Cholesky form.
#[derive(Debug, Clone)]
pub struct GaussianPosterior {
    pub mean: DVector<f64>,
    chol: Cholesky<f64, Dyn>,
}

impl GaussianPosterior {
    pub fn covariance(&self) -> DMatrix<f64> {
        self.chol.inverse()
    }

    pub fn precision_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// `mean + L^-T e` with `L L' = precision`.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> DVector<f64> {
        let e = DVector::from_fn(self.mean.len(), |_, _| std_normal(rng));
        let l = self.chol.l();
        let dev = l
            .transpose()
            .solve_upper_triangular(&e)
            .expect("Cholesky factor has a positive diagonal");
        &self.mean + dev
    }
}

/// Moments of `alpha | .` for one equation from its cross products:
/// precision `X'X / s2 + diag(1 / prior_var)`,
/// mean `precision^-1 (X'y / s2 + prior_mean / prior_var)`.
pub fn coefficient_posterior(
    xtx: &DMatrix<f64>,
    xty: &DVector<f64>,
    sigma_sq: f64,
    prior_mean: &DVector<f64>,
    prior_var: &DVector<f64>,
) -> Result<GaussianPosterior> {
    let n = xty.len();
    if xtx.shape() != (n, n) || prior_mean.len() != n || prior_var.len() != n {
        return Err(Error::InvalidArgument(format!(
            "posterior inputs disagree: X'X {:?}, X'y {n}, prior {} / {}",
            xtx.shape(),
            prior_mean.len(),
            prior_var.len()
        )));
    }
    let mut precision = xtx / sigma_sq;
    let mut rhs = xty / sigma_sq;
    for i in 0..n {
        let inv = 1.0 / prior_var[i];
        precision[(i, i)] += inv;
        rhs[i] += prior_mean[i] * inv;
    }
    let chol = match Cholesky::new(precision.clone()) {
        Some(c) => c,
        None => {
            let eig = precision.symmetric_eigenvalues();
            let (lo, hi) = (eig.min(), eig.max());
            let condition = if lo > 0.0 { hi / lo } else { f64::INFINITY };
            return Err(Error::NotPositiveDefinite { condition });
        }
    };
    let mean = chol.solve(&rhs);
    if mean.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("non-finite posterior mean".into()));
    }
    Ok(GaussianPosterior { mean, chol })
}

/// Cross products, prior mean and prior variance of equation `m` under the
/// current state. The regressors are `(z_t, e_{0t}, .., e_{m-1,t})`.
pub struct EquationSystem {
    pub xtx: DMatrix<f64>,
    pub xty: DVector<f64>,
    pub prior_mean: DVector<f64>,
    pub prior_var: DVector<f64>,
}

pub fn equation_system(m: usize, data: &ModelData, state: &SamplerState) -> EquationSystem {
    let spec = &data.spec;
    let k = spec.regime_width();
    let kk = spec.regressor_count();
    let km = kk + m;
    let e = state.reduced_resid.columns(0, m);
    let y_m = data.y.column(m);

    let mut xtx = DMatrix::zeros(km, km);
    xtx.view_mut((0, 0), (kk, kk)).copy_from(&state.gram);
    let mut xty = DVector::zeros(km);
    xty.rows_mut(0, kk).copy_from(&state.cross.column(m));
    if m > 0 {
        let ze = state.design.tr_mul(&e);
        xtx.view_mut((0, kk), (kk, m)).copy_from(&ze);
        xtx.view_mut((kk, 0), (m, kk)).copy_from(&ze.transpose());
        xtx.view_mut((kk, kk), (m, m)).copy_from(&e.tr_mul(&e));
        xty.rows_mut(kk, m).copy_from(&e.tr_mul(&y_m));
    }

    if state.exact_triangular {
        add_downstream_terms(m, data, state, &mut xtx, &mut xty);
    }

    let coeffs = &state.coefficients;
    let mut prior_mean = DVector::zeros(km);
    let mut prior_var = DVector::zeros(km);
    for c in 0..k {
        let j = m * k + c;
        prior_mean[c] = coeffs.common_mean[j];
        prior_mean[k + c] = coeffs.common_mean[j];
        prior_var[c] = state.hierarchies.regime1.variance(j);
        prior_var[k + c] = state.hierarchies.regime0.variance(j);
    }
    let off = spec.covariance_offset(m);
    for i in 0..m {
        prior_var[kk + i] = state.covariance.hierarchy.variance(off + i);
    }
    EquationSystem {
        xtx,
        xty,
        prior_mean,
        prior_var,
    }
}

/// `A_m` also enters `eta_j = eps_j - sum_i h_ji eps_i` for every `j > m`
/// through `eps_m = y_m - Z a_m`. Writing `eta_j = c_j + h_jm Z a_m`, each
/// later equation adds `h_jm^2 / s_j Z'Z` to the precision and
/// `-h_jm / s_j Z'c_j` to the linear term. Both are rescaled by `s_m`
/// because [`coefficient_posterior`] divides the data block by it.
fn add_downstream_terms(
    m: usize,
    data: &ModelData,
    state: &SamplerState,
    xtx: &mut DMatrix<f64>,
    xty: &mut DVector<f64>,
) {
    let spec = &data.spec;
    let kk = spec.regressor_count();
    let h = &state.covariance.h;
    let s = &state.covariance.sigma_sq;
    let eps = &state.reduced_resid;
    for j in m + 1..spec.n_vars {
        let off = spec.covariance_offset(j);
        let hjm = h[off + m];
        if hjm == 0.0 {
            continue;
        }
        let mut c = eps.column(j) - data.y.column(m) * hjm;
        for i in (0..j).filter(|i| *i != m) {
            c.axpy(-h[off + i], &eps.column(i), 1.0);
        }
        let w = s[m] / s[j];
        let mut block = xtx.view_mut((0, 0), (kk, kk));
        block += &state.gram * (w * hjm * hjm);
        let zc = state.design.tr_mul(&c);
        let mut top = xty.rows_mut(0, kk);
        top.axpy(-w * hjm, &zc, 1.0);
    }
}

/// Draws `alpha_m` and writes it back into the state, refreshing the
/// residual columns of equation `m`.
pub fn draw_coefficients_equation(
    m: usize,
    data: &ModelData,
    state: &mut SamplerState,
) -> Result<DVector<f64>> {
    let sys = equation_system(m, data, state);
    let post = coefficient_posterior(
        &sys.xtx,
        &sys.xty,
        state.covariance.sigma_sq[m],
        &sys.prior_mean,
        &sys.prior_var,
    )?;
    let alpha = post.sample(&mut state.rng);
    state.set_equation(m, &alpha, data);
    Ok(alpha)
}
