//! Reference computations for the sampler's conditionals.
//!
//! Everything here works on plain `Vec` rows with its own Gauss-Jordan
//! inverse and Cholesky factor; nothing calls into `nalgebra` or into the
//! sampler, so agreement is evidence rather than tautology.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::model::{InstrumentSeries, TimeSeriesPanel};
use crate::priors::PriorConfig;

pub type Mat = Vec<Vec<f64>>;

pub fn zeros(r: usize, c: usize) -> Mat {
    vec![vec![0.0; c]; r]
}

/// Inverse by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_jordan_inverse(a: &Mat) -> Result<Mat> {
    let n = a.len();
    let mut aug: Mat = a
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let mut r = row.clone();
            r.extend((0..n).map(|j| if i == j { 1.0 } else { 0.0 }));
            r
        })
        .collect();
    let scale = a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()));
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| aug[i][col].abs().total_cmp(&aug[j][col].abs()))
            .expect("non-empty range");
        if aug[piv][col].abs() <= scale * 1e-14 {
            return Err(Error::Numerical("oracle: singular matrix".into()));
        }
        aug.swap(col, piv);
        let d = aug[col][col];
        for v in aug[col].iter_mut() {
            *v /= d;
        }
        for r in 0..n {
            if r != col {
                let f = aug[r][col];
                if f != 0.0 {
                    for c in 0..2 * n {
                        aug[r][c] -= f * aug[col][c];
                    }
                }
            }
        }
    }
    Ok(aug.into_iter().map(|r| r[n..].to_vec()).collect())
}

/// Lower Cholesky factor.
pub fn cholesky(a: &Mat) -> Result<Mat> {
    let n = a.len();
    let mut l = zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let s: f64 = (0..j).map(|k| l[i][k] * l[j][k]).sum();
            if i == j {
                let d = a[i][i] - s;
                if !(d > 0.0) {
                    return Err(Error::Numerical("oracle: matrix not positive definite".into()));
                }
                l[i][i] = d.sqrt();
            } else {
                l[i][j] = (a[i][j] - s) / l[j][j];
            }
        }
    }
    Ok(l)
}

pub fn mat_vec(a: &Mat, x: &[f64]) -> Vec<f64> {
    a.iter().map(|r| r.iter().zip(x).map(|(u, v)| u * v).sum()).collect()
}

pub fn mat_mul(a: &Mat, b: &Mat) -> Mat {
    let (n, k, m) = (a.len(), b.len(), b[0].len());
    let mut out = zeros(n, m);
    for i in 0..n {
        for p in 0..k {
            let v = a[i][p];
            for j in 0..m {
                out[i][j] += v * b[p][j];
            }
        }
    }
    out
}

pub fn transpose(a: &Mat) -> Mat {
    let (n, m) = (a.len(), a[0].len());
    (0..m).map(|j| (0..n).map(|i| a[i][j]).collect()).collect()
}

fn logistic(u_lag: f64, gamma: f64, phi: f64) -> f64 {
    1.0 / (1.0 + (-phi * (u_lag - gamma)).exp())
}

/// `(mean, covariance)` of `N(m0, diag v0)` prior times Gaussian regression
/// likelihood with known variance, through normal equations and an explicit
/// inverse of the precision.
pub fn gls_posterior_oracle(
    y: &[f64],
    x: &Mat,
    sigma_sq: f64,
    prior_mean: &[f64],
    prior_var: &[f64],
) -> Result<(Vec<f64>, Mat)> {
    let k = prior_mean.len();
    let mut prec = zeros(k, k);
    let mut rhs = vec![0.0; k];
    for (row, yt) in x.iter().zip(y) {
        for i in 0..k {
            rhs[i] += row[i] * yt / sigma_sq;
            for j in 0..k {
                prec[i][j] += row[i] * row[j] / sigma_sq;
            }
        }
    }
    for i in 0..k {
        prec[i][i] += 1.0 / prior_var[i];
        rhs[i] += prior_mean[i] / prior_var[i];
    }
    let cov = gauss_jordan_inverse(&prec)?;
    let mean = mat_vec(&cov, &rhs);
    Ok((mean, cov))
}

/// Rows `w_t = (y_{t-1}, .., y_{t-P}, 1, x_t)` for `t = P..N`, built directly
/// from the panel.
pub fn oracle_base_rows(panel: &TimeSeriesPanel, instrument: &InstrumentSeries, lags: usize) -> Mat {
    let (n, m) = (panel.values.nrows(), panel.values.ncols());
    (lags..n)
        .map(|t| {
            let mut w = Vec::with_capacity(m * lags + 2);
            for l in 1..=lags {
                for v in 0..m {
                    w.push(panel.values[(t - l, v)]);
                }
            }
            w.push(1.0);
            w.push(instrument.values[t]);
            w
        })
        .collect()
}

/// Dependent rows `y_t` for `t = P..N`.
pub fn oracle_dependent_rows(panel: &TimeSeriesPanel, lags: usize) -> Mat {
    let (n, m) = (panel.values.nrows(), panel.values.ncols());
    (lags..n).map(|t| (0..m).map(|v| panel.values[(t, v)]).collect()).collect()
}

/// Regime weights computed directly from the signal.
pub fn oracle_weights(signal: &[f64], lags: usize, gamma: f64, phi: f64) -> Vec<f64> {
    (lags..signal.len())
        .map(|t| logistic(signal[t - 1], gamma, phi))
        .collect()
}

/// Everything except `(gamma, phi)` held fixed, in the original
/// (non-triangular) parameterization.
#[derive(Debug, Clone)]
pub struct GridProblem {
    pub y: Mat,
    pub w: Mat,
    pub u_lag: Vec<f64>,
    /// `M x k` regime blocks.
    pub block1: Mat,
    pub block0: Mat,
    /// Reduced-form covariance.
    pub omega: Mat,
    pub priors: PriorConfig,
}

impl GridProblem {
    /// `omega` built from the triangular loadings `h` and variances.
    pub fn omega_from(h: &[f64], sigma_sq: &[f64]) -> Result<Mat> {
        let m = sigma_sq.len();
        let mut inv_h = zeros(m, m);
        let mut r = 0;
        for i in 0..m {
            inv_h[i][i] = 1.0;
            for c in 0..i {
                inv_h[i][c] = -h[r];
                r += 1;
            }
        }
        let hh = gauss_jordan_inverse(&inv_h)?;
        let mut hs = hh.clone();
        for row in hs.iter_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v *= sigma_sq[j];
            }
        }
        Ok(mat_mul(&hs, &transpose(&hh)))
    }

    pub fn log_likelihood(&self, gamma: f64, phi: f64) -> Result<f64> {
        let m = self.omega.len();
        let inv = gauss_jordan_inverse(&self.omega)?;
        let l = cholesky(&self.omega)?;
        let log_det: f64 = 2.0 * (0..m).map(|i| l[i][i].ln()).sum::<f64>();
        let mut total = 0.0;
        for ((yt, wt), &u) in self.y.iter().zip(&self.w).zip(&self.u_lag) {
            let s = logistic(u, gamma, phi);
            let f1 = mat_vec(&self.block1, wt);
            let f0 = mat_vec(&self.block0, wt);
            let e: Vec<f64> = (0..m).map(|i| yt[i] - s * f1[i] - (1.0 - s) * f0[i]).collect();
            let q: f64 = (0..m).map(|i| (0..m).map(|j| e[i] * inv[i][j] * e[j]).sum::<f64>()).sum();
            total += -0.5 * (m as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + q);
        }
        Ok(total)
    }

    /// Log prior of `(gamma, phi)` from the textbook densities.
    pub fn log_prior(&self, gamma: f64, phi: f64) -> f64 {
        use statrs::distribution::{ContinuousCDF, Normal};
        let p = &self.priors;
        let (lo, hi) = p.gamma_bounds;
        if !(gamma >= lo && gamma <= hi) || !(phi > 0.0) {
            return f64::NEG_INFINITY;
        }
        let sd = p.gamma_var.sqrt();
        let n = Normal::new(p.gamma_mean, sd).expect("positive sd");
        let mass = n.cdf(hi) - n.cdf(lo);
        let lg = -0.5 * ((gamma - p.gamma_mean) / sd).powi(2)
            - (sd * (2.0 * std::f64::consts::PI).sqrt()).ln()
            - mass.ln();
        let ig = p.phi_prior();
        let (a, b) = (ig.shape, ig.rate);
        let lp = a * b.ln() - ln_gamma(a) - (a + 1.0) * phi.ln() - b / phi;
        lg + lp
    }

    pub fn log_target(&self, gamma: f64, phi: f64) -> Result<f64> {
        let lp = self.log_prior(gamma, phi);
        if lp == f64::NEG_INFINITY {
            return Ok(lp);
        }
        Ok(lp + self.log_likelihood(gamma, phi)?)
    }
}

/// Normalized cell probabilities of the target on a tensor grid.
#[derive(Debug, Clone)]
pub struct GridPosterior {
    pub gamma: Vec<f64>,
    pub phi: Vec<f64>,
    /// `probs[i][j]` at `(gamma[i], phi[j])`.
    pub probs: Mat,
}

impl GridPosterior {
    pub fn marginal_gamma(&self) -> Vec<f64> {
        self.probs.iter().map(|r| r.iter().sum()).collect()
    }

    pub fn marginal_phi(&self) -> Vec<f64> {
        (0..self.phi.len()).map(|j| self.probs.iter().map(|r| r[j]).sum()).collect()
    }

    pub fn mode(&self) -> (f64, f64) {
        let mut best = (0, 0);
        for i in 0..self.gamma.len() {
            for j in 0..self.phi.len() {
                if self.probs[i][j] > self.probs[best.0][best.1] {
                    best = (i, j);
                }
            }
        }
        (self.gamma[best.0], self.phi[best.1])
    }
}

/// Cell-centred grid of `n` points spanning `[lo, hi]`.
pub fn cell_centres(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    let w = (hi - lo) / n as f64;
    (0..n).map(|i| lo + (i as f64 + 0.5) * w).collect()
}

pub fn grid_posterior_oracle(problem: &GridProblem, gamma: &[f64], phi: &[f64]) -> Result<GridPosterior> {
    if gamma.len() > 200 || phi.len() > 200 {
        return Err(Error::InvalidArgument("grid limited to 200 x 200".into()));
    }
    let mut lt = zeros(gamma.len(), phi.len());
    let mut max = f64::NEG_INFINITY;
    for (i, &g) in gamma.iter().enumerate() {
        for (j, &p) in phi.iter().enumerate() {
            lt[i][j] = problem.log_target(g, p)?;
            max = max.max(lt[i][j]);
        }
    }
    if !max.is_finite() {
        return Err(Error::Numerical("grid has no support".into()));
    }
    let mut total = 0.0;
    for row in lt.iter_mut() {
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total += *v;
        }
    }
    for row in lt.iter_mut() {
        for v in row.iter_mut() {
            *v /= total;
        }
    }
    Ok(GridPosterior {
        gamma: gamma.to_vec(),
        phi: phi.to_vec(),
        probs: lt,
    })
}

// ---------------------------------------------------------------------------
// Linear Bayesian VAR oracle

fn inv_gamma_draw<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    let g: f64 = Gamma::new(shape, 1.0 / rate).expect("positive").sample(rng);
    1.0 / g
}

fn normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Draw from `N(P^-1 r, P^-1)` via the oracle Cholesky.
fn gaussian_from_precision<R: Rng + ?Sized>(prec: &Mat, rhs: &[f64], rng: &mut R) -> Result<Vec<f64>> {
    let n = rhs.len();
    let l = cholesky(prec)?;
    // forward: L z = r
    let mut z = vec![0.0; n];
    for i in 0..n {
        z[i] = (rhs[i] - (0..i).map(|k| l[i][k] * z[k]).sum::<f64>()) / l[i][i];
    }
    // backward: L' x = z + e
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s = z[i] + normal(rng) - ((i + 1)..n).map(|k| l[k][i] * x[k]).sum::<f64>();
        x[i] = s / l[i][i];
    }
    Ok(x)
}

#[derive(Debug, Clone)]
struct Scales {
    global: f64,
    local: Vec<f64>,
    aux_global: f64,
    aux_local: Vec<f64>,
}

impl Scales {
    fn new(n: usize) -> Self {
        Self {
            global: 1.0,
            local: vec![1.0; n],
            aux_global: 1.0,
            aux_local: vec![1.0; n],
        }
    }

    fn var(&self, j: usize) -> f64 {
        self.global * self.local[j]
    }

    fn update<R: Rng + ?Sized>(&mut self, dev: &[f64], rng: &mut R) {
        let n = dev.len();
        for j in 0..n {
            self.local[j] = inv_gamma_draw(1.0, 1.0 / self.aux_local[j] + dev[j] * dev[j] / (2.0 * self.global), rng);
        }
        let s: f64 = (0..n).map(|j| dev[j] * dev[j] / (2.0 * self.local[j])).sum();
        self.global = inv_gamma_draw((n as f64 + 1.0) / 2.0, 1.0 / self.aux_global + s, rng);
        for j in 0..n {
            self.aux_local[j] = inv_gamma_draw(1.0, 1.0 + 1.0 / self.local[j], rng);
        }
        self.aux_global = inv_gamma_draw(1.0, 1.0 + 1.0 / self.global, rng);
    }
}

/// Settings for [`linear_bvar_oracle`].
#[derive(Debug, Clone)]
pub struct LinearOracleConfig {
    pub n_iter: usize,
    pub n_burn: usize,
    pub thin: usize,
}

/// Posterior draws of the weighted coefficients `b = (a_1 + a_0) / 2` of the
/// model with `S_t = 1/2` throughout, i.e. the linear VAR `y_t = B w_t + e_t`,
/// `e_t ~ N(0, Omega)`, under the same hierarchical prior.
///
/// The chain works in `(b, d)` with `d = (a_1 - a_0) / 2`, draws `b` by
/// full-system GLS with `Omega^-1`, `d` from its prior conditional, and the
/// triangular covariance factor from regressions of the reduced-form
/// residuals.
pub fn linear_bvar_oracle<R: Rng + ?Sized>(
    y: &Mat,
    w: &Mat,
    anchor: &[f64],
    priors: &PriorConfig,
    cfg: &LinearOracleConfig,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>> {
    let t_obs = y.len();
    let m = y[0].len();
    let k = w[0].len();
    let j = m * k;
    let r = m * (m - 1) / 2;
    if anchor.len() != j {
        return Err(Error::InvalidArgument("anchor length".into()));
    }
    let mut b: Vec<f64>;
    let mut d = vec![0.0; j];
    let mut common = anchor.to_vec();
    let mut h = vec![0.0; r];
    let mut sigma = vec![0.1; m];
    let (mut s1, mut s0, mut sp, mut sh) = (Scales::new(j), Scales::new(j), Scales::new(j), Scales::new(r));

    let mut wtw = zeros(k, k);
    let mut wty = zeros(k, m);
    for (wt, yt) in w.iter().zip(y) {
        for a in 0..k {
            for c in 0..k {
                wtw[a][c] += wt[a] * wt[c];
            }
            for n in 0..m {
                wty[a][n] += wt[a] * yt[n];
            }
        }
    }

    let mut out = Vec::new();
    for it in 1..=cfg.n_iter {
        // Omega^-1 = (I - G)' Sigma^-1 (I - G)
        let mut ig = zeros(m, m);
        let mut idx = 0;
        for i in 0..m {
            ig[i][i] = 1.0;
            for c in 0..i {
                ig[i][c] = -h[idx];
                idx += 1;
            }
        }
        let mut omega_inv = zeros(m, m);
        for a in 0..m {
            for c in 0..m {
                omega_inv[a][c] = (0..m).map(|q| ig[q][a] * ig[q][c] / sigma[q]).sum();
            }
        }

        // b | d
        let mut prec = zeros(j, j);
        let mut rhs = vec![0.0; j];
        for e1 in 0..m {
            for e2 in 0..m {
                for a in 0..k {
                    for c in 0..k {
                        prec[e1 * k + a][e2 * k + c] = omega_inv[e1][e2] * wtw[a][c];
                    }
                }
            }
            for a in 0..k {
                rhs[e1 * k + a] = (0..m).map(|n| omega_inv[e1][n] * wty[a][n]).sum();
            }
        }
        for q in 0..j {
            let (v1, v0) = (s1.var(q), s0.var(q));
            let v = v1 * v0 / (v1 + v0);
            let mean = common[q] + d[q] * (v1 - v0) / (v1 + v0);
            prec[q][q] += 1.0 / v;
            rhs[q] += mean / v;
        }
        b = gaussian_from_precision(&prec, &rhs, rng)?;

        // d | b
        for q in 0..j {
            let (v1, v0) = (s1.var(q), s0.var(q));
            let v = v1 * v0 / (v1 + v0);
            let mean = (b[q] - common[q]) * (v1 - v0) / (v1 + v0);
            d[q] = mean + v.sqrt() * normal(rng);
        }

        // reduced-form residuals
        let eps: Mat = y
            .iter()
            .zip(w)
            .map(|(yt, wt)| (0..m).map(|e| yt[e] - (0..k).map(|c| b[e * k + c] * wt[c]).sum::<f64>()).collect())
            .collect();

        // h_m | . and sigma_m^2 | .
        let mut off = 0;
        for e in 0..m {
            if e > 0 {
                let x: Mat = eps.iter().map(|row| row[..e].to_vec()).collect();
                let mut p = zeros(e, e);
                let mut rr = vec![0.0; e];
                for (xt, row) in x.iter().zip(&eps) {
                    for a in 0..e {
                        rr[a] += xt[a] * row[e] / sigma[e];
                        for c in 0..e {
                            p[a][c] += xt[a] * xt[c] / sigma[e];
                        }
                    }
                }
                for a in 0..e {
                    p[a][a] += 1.0 / sh.var(off + a);
                }
                let draw = gaussian_from_precision(&p, &rr, rng)?;
                h[off..off + e].copy_from_slice(&draw);
            }
            let ssr: f64 = eps
                .iter()
                .map(|row| {
                    let eta = row[e] - (0..e).map(|c| h[off + c] * row[c]).sum::<f64>();
                    eta * eta
                })
                .sum();
            sigma[e] = inv_gamma_draw(priors.sigma_shape + t_obs as f64 / 2.0, priors.sigma_scale + ssr / 2.0, rng);
            off += e;
        }

        // hierarchy
        let a1: Vec<f64> = (0..j).map(|q| b[q] + d[q]).collect();
        let a0: Vec<f64> = (0..j).map(|q| b[q] - d[q]).collect();
        s1.update(&(0..j).map(|q| a1[q] - common[q]).collect::<Vec<_>>(), rng);
        s0.update(&(0..j).map(|q| a0[q] - common[q]).collect::<Vec<_>>(), rng);
        sp.update(&(0..j).map(|q| common[q] - anchor[q]).collect::<Vec<_>>(), rng);
        for q in 0..j {
            let (v1, v0, vp) = (s1.var(q), s0.var(q), sp.var(q));
            let v = 1.0 / (1.0 / v1 + 1.0 / v0 + 1.0 / vp);
            let mean = v * (a1[q] / v1 + a0[q] / v0 + anchor[q] / vp);
            common[q] = mean + v.sqrt() * normal(rng);
        }
        if r > 0 {
            sh.update(&h, rng);
        }

        if it > cfg.n_burn && (it - cfg.n_burn) % cfg.thin == 0 {
            out.push(b.clone());
        }
    }
    Ok(out)
}

/// Batch-means Monte Carlo standard error of the mean, `floor(sqrt(n))`
/// batches.
pub fn batch_means_se(x: &[f64]) -> f64 {
    let n = x.len();
    let n_batches = ((n as f64).sqrt().floor() as usize).max(2);
    let size = n / n_batches;
    let means: Vec<f64> = (0..n_batches)
        .map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / n_batches as f64;
    let var = means.iter().map(|m| (m - grand).powi(2)).sum::<f64>() / (n_batches - 1) as f64;
    (var / n_batches as f64).sqrt()
}
