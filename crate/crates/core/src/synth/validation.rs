//! End-to-end validation studies on the frozen fixture: coverage of credible
//! intervals, the Metropolis step against a brute-force grid, and the linear
//! special case against an independent linear-VAR sampler.

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::irf::quantile_sorted;
use crate::model::{Regime, ShockTag};
use crate::priors::{CovariancePriorState, PriorConfig};
use crate::sampler::transition::{adapt_proposals, mh_transition_step, ProposalScales, TransitionLikelihood};
use crate::sampler::{effective_priors, run_chain, ChainConfig, Draw, ModelData};

use super::generate::{fixture_parameters, generate, SyntheticData, TrueParameters};
use super::oracle::{
    batch_means_se, cell_centres, grid_posterior_oracle, linear_bvar_oracle, oracle_base_rows,
    oracle_dependent_rows, GridPosterior, GridProblem, LinearOracleConfig,
};

pub const FIXTURE_T: usize = 300;

/// The fixture panel for replicate `stream` of base seed `seed`.
pub fn fixture_data(params: &TrueParameters, seed: u64, stream: u64) -> Result<SyntheticData> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    generate(params, FIXTURE_T, &mut rng)
}

fn model_data(d: &SyntheticData, lags: usize) -> Result<ModelData> {
    ModelData::new(&d.panel, &d.signal, &d.instrument, lags, ShockTag::Tg)
}

// ---------------------------------------------------------------------------
// Coverage

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageEntry {
    pub name: String,
    pub truth: f64,
    pub covered: usize,
    pub replicates: usize,
}

impl CoverageEntry {
    pub fn rate(&self) -> f64 {
        self.covered as f64 / self.replicates.max(1) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub entries: Vec<CoverageEntry>,
    pub faults: Vec<(usize, String)>,
    pub acceptance: Vec<f64>,
}

type Extract = (String, f64, Box<dyn Fn(&Draw) -> f64 + Send + Sync>);

fn coverage_targets(p: &TrueParameters) -> Vec<Extract> {
    let m = p.n_vars();
    let k = p.coefficients.regime_width();
    let mut out: Vec<Extract> = vec![
        ("gamma".into(), p.gamma, Box::new(|d: &Draw| d.gamma)),
        ("phi".into(), p.phi, Box::new(|d: &Draw| d.phi)),
    ];
    for eq in 0..m {
        let j = eq * k + k - 1;
        out.push((format!("delta1_{}", eq + 1), p.coefficients.regime1[j], Box::new(move |d: &Draw| d.a1[j])));
        out.push((format!("delta0_{}", eq + 1), p.coefficients.regime0[j], Box::new(move |d: &Draw| d.a0[j])));
    }
    for eq in 0..m {
        out.push((format!("sigma_sq_{}", eq + 1), p.sigma_sq[eq], Box::new(move |d: &Draw| d.sigma_sq[eq])));
    }
    out
}

/// Fraction of replicates whose central `level` credible interval contains
/// the truth, per tracked parameter.
pub fn recovery_study(
    params: &TrueParameters,
    priors: &PriorConfig,
    chain: &ChainConfig,
    replicates: usize,
    seed: u64,
    level: f64,
) -> Result<CoverageReport> {
    let targets = coverage_targets(params);
    let (qlo, qhi) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let lags = params.lags();
    let j = params.coefficients.regime1.len();
    let outcomes: Vec<(usize, Result<(Vec<bool>, f64)>)> = (0..replicates)
        .into_par_iter()
        .map(|r| {
            let res = (|| {
                let data = fixture_data(params, seed, r as u64)?;
                let model = model_data(&data, lags)?;
                let cfg = ChainConfig {
                    seed: seed.wrapping_add(r as u64),
                    stream: r as u64,
                    ..chain.clone()
                };
                let run = run_chain(&model, priors, DVector::zeros(j), &cfg)?;
                let hits = targets
                    .iter()
                    .map(|(_, truth, f)| {
                        let mut v = run.store.trace(f);
                        v.sort_by(f64::total_cmp);
                        let (lo, hi) = (quantile_sorted(&v, qlo), quantile_sorted(&v, qhi));
                        lo <= *truth && *truth <= hi
                    })
                    .collect();
                Ok((hits, run.diagnostics.acceptance_post().unwrap_or(f64::NAN)))
            })();
            (r, res)
        })
        .collect();
    let mut entries: Vec<CoverageEntry> = targets
        .iter()
        .map(|(n, t, _)| CoverageEntry {
            name: n.clone(),
            truth: *t,
            covered: 0,
            replicates: 0,
        })
        .collect();
    let mut faults = Vec::new();
    let mut acceptance = Vec::new();
    for (r, o) in outcomes {
        match o {
            Ok((hits, acc)) => {
                for (e, h) in entries.iter_mut().zip(hits) {
                    e.replicates += 1;
                    e.covered += h as usize;
                }
                acceptance.push(acc);
            }
            Err(e) => faults.push((r, e.to_string())),
        }
    }
    Ok(CoverageReport {
        entries,
        faults,
        acceptance,
    })
}

// ---------------------------------------------------------------------------
// Metropolis step against the grid

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridComparison {
    pub total_variation: f64,
    pub tv_gamma: f64,
    pub tv_phi: f64,
    /// Chain mass that fell outside the grid box.
    pub outside: f64,
    pub acceptance: f64,
    pub proposal: ProposalScales,
    pub box_gamma: (f64, f64),
    pub box_phi: (f64, f64),
    pub samples: usize,
}

/// Settings for [`grid_mh_comparison`].
#[derive(Debug, Clone, PartialEq)]
pub struct GridStudy {
    pub grid: usize,
    pub burn: usize,
    pub samples: usize,
    pub adapt_window: usize,
    pub seed: u64,
}

impl Default for GridStudy {
    fn default() -> Self {
        Self {
            grid: 100,
            burn: 20_000,
            samples: 1_000_000,
            adapt_window: 20,
            seed: 17,
        }
    }
}

fn grid_problem(data: &SyntheticData, params: &TrueParameters, priors: &PriorConfig) -> Result<GridProblem> {
    let lags = params.lags();
    let to_rows = |b: nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> {
        (0..b.nrows()).map(|r| b.row(r).iter().copied().collect()).collect()
    };
    let u: Vec<f64> = data.signal.values.iter().copied().collect();
    Ok(GridProblem {
        y: oracle_dependent_rows(&data.panel, lags),
        w: oracle_base_rows(&data.panel, &data.instrument, lags),
        u_lag: (lags..u.len()).map(|t| u[t - 1]).collect(),
        block1: to_rows(params.coefficients.block(Regime::One)),
        block0: to_rows(params.coefficients.block(Regime::Zero)),
        omega: GridProblem::omega_from(
            params.h.as_slice(),
            params.sigma_sq.as_slice(),
        )?,
        priors: priors.clone(),
    })
}

/// Box where the log target is within `drop` of its maximum on a coarse
/// pass, widened by one coarse cell on each side.
fn support_box(problem: &GridProblem, g: (f64, f64), p: (f64, f64), drop: f64) -> Result<((f64, f64), (f64, f64))> {
    let n = 80;
    let gs = cell_centres(g.0, g.1, n);
    let ps = cell_centres(p.0, p.1, n);
    let mut lt = vec![vec![f64::NEG_INFINITY; n]; n];
    let mut max = f64::NEG_INFINITY;
    for i in 0..n {
        for j in 0..n {
            lt[i][j] = problem.log_target(gs[i], ps[j])?;
            max = max.max(lt[i][j]);
        }
    }
    let (mut gi, mut pj) = ((n, 0usize), (n, 0usize));
    for i in 0..n {
        for j in 0..n {
            if lt[i][j] > max - drop {
                gi = (gi.0.min(i), gi.1.max(i));
                pj = (pj.0.min(j), pj.1.max(j));
            }
        }
    }
    let (wg, wp) = ((g.1 - g.0) / n as f64, (p.1 - p.0) / n as f64);
    let lo_g = (g.0 + gi.0 as f64 * wg - wg).max(g.0);
    let hi_g = (g.0 + (gi.1 + 1) as f64 * wg + wg).min(g.1);
    let lo_p = (p.0 + pj.0 as f64 * wp - wp).max(p.0);
    let hi_p = (p.0 + (pj.1 + 1) as f64 * wp + wp).min(p.1);
    Ok(((lo_g, hi_g), (lo_p, hi_p)))
}

fn tv(a: &[f64], b: &[f64]) -> f64 {
    0.5 * a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>()
}

/// Long Metropolis-only chain over `(gamma, phi)` with every other parameter
/// at its true value, histogrammed on the grid where the oracle evaluates
/// the normalized target.
pub fn grid_mh_comparison(
    params: &TrueParameters,
    data: &SyntheticData,
    priors: &PriorConfig,
    study: &GridStudy,
) -> Result<(GridComparison, GridPosterior)> {
    let model = model_data(data, params.lags())?;
    let priors = effective_priors(&model, priors);
    let problem = grid_problem(data, params, &priors)?;

    let (lo, hi) = priors.gamma_bounds;
    let sd_g = priors.gamma_var.sqrt();
    let sd_p = priors.phi_var.sqrt();
    let g_range = ((priors.gamma_mean - 10.0 * sd_g).max(lo), (priors.gamma_mean + 10.0 * sd_g).min(hi));
    let p_range = ((priors.phi_mean - 10.0 * sd_p).max(1e-6), priors.phi_mean + 10.0 * sd_p);
    let (bg, bp) = support_box(&problem, g_range, p_range, 20.0)?;
    let gammas = cell_centres(bg.0, bg.1, study.grid);
    let phis = cell_centres(bp.0, bp.1, study.grid);
    let oracle = grid_posterior_oracle(&problem, &gammas, &phis)?;

    let cov = CovariancePriorState {
        h: params.h.clone(),
        hierarchy: crate::priors::HorseshoeHierarchy::new(params.h.len()),
        sigma_sq: params.sigma_sq.clone(),
    };
    let lik = TransitionLikelihood::new(&model, &params.coefficients, &cov);
    let mut rng = ChaCha8Rng::seed_from_u64(study.seed);
    let mut cur = (params.gamma, params.phi);
    let mut scales = ProposalScales::default();
    let band = (0.25, 0.40);
    let (mut acc_w, mut n_w) = (0usize, 0usize);
    for _ in 0..study.burn {
        let out = mh_transition_step(&lik, cur, scales, &priors, &mut rng)?;
        cur = (out.gamma, out.phi);
        acc_w += out.accepted as usize;
        n_w += 1;
        if n_w == study.adapt_window {
            scales = adapt_proposals(acc_w as f64 / n_w as f64, scales, band);
            acc_w = 0;
            n_w = 0;
        }
    }
    let n = study.grid;
    let (wg, wp) = ((bg.1 - bg.0) / n as f64, (bp.1 - bp.0) / n as f64);
    let mut counts = vec![0usize; n * n];
    let mut outside = 0usize;
    let mut accepted = 0usize;
    for _ in 0..study.samples {
        let out = mh_transition_step(&lik, cur, scales, &priors, &mut rng)?;
        cur = (out.gamma, out.phi);
        accepted += out.accepted as usize;
        let i = ((cur.0 - bg.0) / wg).floor();
        let j = ((cur.1 - bp.0) / wp).floor();
        if i >= 0.0 && j >= 0.0 && (i as usize) < n && (j as usize) < n {
            counts[i as usize * n + j as usize] += 1;
        } else {
            outside += 1;
        }
    }
    let total = study.samples as f64;
    let emp: Vec<f64> = counts.iter().map(|c| *c as f64 / total).collect();
    let grid: Vec<f64> = oracle.probs.iter().flatten().copied().collect();
    let out_frac = outside as f64 / total;
    let joint = tv(&emp, &grid) + 0.5 * out_frac;
    let emp_g: Vec<f64> = (0..n).map(|i| emp[i * n..(i + 1) * n].iter().sum()).collect();
    let emp_p: Vec<f64> = (0..n).map(|j| (0..n).map(|i| emp[i * n + j]).sum()).collect();
    Ok((
        GridComparison {
            total_variation: joint,
            tv_gamma: tv(&emp_g, &oracle.marginal_gamma()) + 0.5 * out_frac,
            tv_phi: tv(&emp_p, &oracle.marginal_phi()) + 0.5 * out_frac,
            outside: out_frac,
            acceptance: accepted as f64 / total,
            proposal: scales,
            box_gamma: bg,
            box_phi: bp,
            samples: study.samples,
        },
        oracle,
    ))
}

// ---------------------------------------------------------------------------
// Linear nesting

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NestingEntry {
    pub index: usize,
    pub sampler_mean: f64,
    pub sampler_se: f64,
    pub oracle_mean: f64,
    pub oracle_se: f64,
}

impl NestingEntry {
    /// `|difference| / combined MC SE`.
    pub fn z(&self) -> f64 {
        (self.sampler_mean - self.oracle_mean).abs()
            / (self.sampler_se.powi(2) + self.oracle_se.powi(2)).sqrt()
    }
}

/// Posterior means of `b = (a_1 + a_0) / 2` with `phi = 0` from the sampler
/// and from the linear-VAR oracle, each with a batch-means MC SE. The oracle
/// draws `b` from its exact full-system conditional, so with
/// `exact_triangular` off the comparison also measures the gap left by the
/// published equation-by-equation conditional.
pub fn linear_nesting_comparison(
    data: &SyntheticData,
    lags: usize,
    priors: &PriorConfig,
    n_iter: usize,
    n_burn: usize,
    thin: usize,
    seed: u64,
    exact_triangular: bool,
) -> Result<Vec<NestingEntry>> {
    let model = model_data(data, lags)?;
    let j = model.spec.coefficient_count();
    let cfg = ChainConfig {
        n_iter,
        n_burn,
        thin,
        seed,
        fix_transition: true,
        exact_triangular,
        init_gamma: 0.0,
        init_phi: 0.0,
        ..ChainConfig::default()
    };
    let run = run_chain(&model, priors, DVector::zeros(j), &cfg)?;
    if run.store.draws.iter().any(|d| d.weights.iter().any(|s| *s != 0.5)) {
        return Err(Error::Numerical("phi = 0 did not give S = 1/2".into()));
    }
    let y = oracle_dependent_rows(&data.panel, lags);
    let w = oracle_base_rows(&data.panel, &data.instrument, lags);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
    let _: u64 = rng.random();
    let oracle = linear_bvar_oracle(
        &y,
        &w,
        &vec![0.0; j],
        priors,
        &LinearOracleConfig { n_iter, n_burn, thin },
        &mut rng,
    )?;
    Ok((0..j)
        .map(|q| {
            let s: Vec<f64> = run.store.draws.iter().map(|d| 0.5 * (d.a1[q] + d.a0[q])).collect();
            let o: Vec<f64> = oracle.iter().map(|b| b[q]).collect();
            NestingEntry {
                index: q,
                sampler_mean: s.iter().sum::<f64>() / s.len() as f64,
                sampler_se: batch_means_se(&s),
                oracle_mean: o.iter().sum::<f64>() / o.len() as f64,
                oracle_se: batch_means_se(&o),
            }
        })
        .collect())
}

/// The fixture truth.
pub fn fixture() -> TrueParameters {
    fixture_parameters()
}

// ---------------------------------------------------------------------------
// Stationary moments of the averaged linear model

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MomentCheck {
    pub name: String,
    pub implied: f64,
    pub sample: f64,
    /// Scale the gap is judged against: the implied variance for second
    /// moments (autocovariances in autocorrelation units), the implied
    /// standard deviation for means.
    pub scale: f64,
}

impl MomentCheck {
    pub fn relative_gap(&self) -> f64 {
        (self.sample - self.implied).abs() / self.scale
    }
}

/// Simulates `n_obs` periods with `phi = 0` and compares means, variances
/// and first-order autocovariances with the values implied by the
/// averaged VAR, `Gamma = F Gamma F' + Q`.
pub fn stationary_moments(params: &TrueParameters, n_obs: usize, seed: u64) -> Result<Vec<MomentCheck>> {
    use nalgebra::DMatrix;
    let mut p = params.clone();
    p.phi = 0.0;
    let m = p.n_vars();
    let lags = p.lags();
    let mp = m * lags;
    let avg = (p.coefficients.block(Regime::One) + p.coefficients.block(Regime::Zero)) * 0.5;

    let mut f = DMatrix::zeros(mp, mp);
    f.view_mut((0, 0), (m, mp)).copy_from(&avg.columns(0, mp));
    for i in m..mp {
        f[(i, i - m)] = 1.0;
    }
    let c = avg.column(mp).into_owned();
    let delta = avg.column(mp + 1).into_owned();

    let mut ig = DMatrix::<f64>::identity(m, m);
    let mut idx = 0;
    for i in 0..m {
        for col in 0..i {
            ig[(i, col)] = -p.h[idx];
            idx += 1;
        }
    }
    let hmat = ig
        .try_inverse()
        .ok_or_else(|| Error::Numerical("I - G is singular".into()))?;
    let sigma = DMatrix::from_diagonal(&p.sigma_sq);
    let omega = &hmat * sigma * hmat.transpose();
    let mut q = DMatrix::zeros(mp, mp);
    let shock = omega + &delta * delta.transpose() * p.instrument_sd.powi(2);
    q.view_mut((0, 0), (m, m)).copy_from(&shock);

    // doubling: Gamma = sum_k F^k Q F'^k
    let mut gamma = q.clone();
    let mut fk = f.clone();
    for _ in 0..60 {
        gamma = &gamma + &fk * &gamma * fk.transpose();
        fk = &fk * &fk;
        if fk.amax() < 1e-300 {
            break;
        }
    }
    let sum_a = (0..lags).fold(DMatrix::<f64>::identity(m, m), |acc, l| acc - avg.columns(l * m, m));
    let mu = sum_a
        .lu()
        .solve(&c)
        .ok_or_else(|| Error::Numerical("I - sum A is singular".into()))?;
    let cov1 = (&f * &gamma).view((0, 0), (m, m)).into_owned();

    let data = {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        generate(&p, n_obs, &mut rng)?
    };
    let y = &data.panel.values;
    let n = y.nrows();
    let mean: Vec<f64> = (0..m).map(|i| y.column(i).mean()).collect();
    let autocov = |i: usize, j: usize, lag: usize| -> f64 {
        (lag..n)
            .map(|t| (y[(t, i)] - mean[i]) * (y[(t - lag, j)] - mean[j]))
            .sum::<f64>()
            / n as f64
    };
    let mut out = Vec::new();
    for i in 0..m {
        let sd = gamma[(i, i)].sqrt();
        out.push(MomentCheck {
            name: format!("mean_{}", i + 1),
            implied: mu[i],
            sample: mean[i],
            scale: sd,
        });
        out.push(MomentCheck {
            name: format!("var_{}", i + 1),
            implied: gamma[(i, i)],
            sample: autocov(i, i, 0),
            scale: gamma[(i, i)],
        });
        out.push(MomentCheck {
            name: format!("autocov1_{}", i + 1),
            implied: cov1[(i, i)],
            sample: autocov(i, i, 1),
            scale: gamma[(i, i)],
        });
    }
    Ok(out)
}
