#![allow(dead_code)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use stvar::date::monthly_range;
use stvar::dist::InverseGamma;
use stvar::io::RunConfig;
use stvar::priors::PriorConfig;
use stvar::sampler::coefficients::{coefficient_posterior, equation_system};
use stvar::sampler::horseshoe::{aux_conditional, common_mean_conditional, global_conditional, local_conditional};
use stvar::sampler::variance::variance_posterior;
use stvar::sampler::{effective_priors, ChainConfig, ModelData, SamplerState};
use stvar::synth::generate::{draw_from_prior, generate, SignalProcess};
use stvar::synth::oracle::{gls_posterior_oracle, oracle_base_rows, oracle_dependent_rows, oracle_weights};
use stvar::{ShockTag, TransitionState, YearMonth};

/// Largest relative discrepancy found for one family of conditionals.
#[derive(Debug, Clone)]
pub struct Discrepancy {
    pub what: String,
    pub rel: f64,
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / b.abs().max(f64::MIN_POSITIVE)
    }
}

/// Worst relative error over a vector, measured against its largest entry so
/// that entries that are zero up to rounding do not dominate.
fn rel_vec(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    a.iter().zip(b).map(|(x, y)| (x - y).abs() / scale).fold(0.0, f64::max)
}

fn ig_moments(d: &InverseGamma) -> [f64; 4] {
    [d.shape, d.rate, d.mean(), d.variance()]
}

fn ig_rel(a: &InverseGamma, shape: f64, rate: f64) -> f64 {
    let o = InverseGamma { shape, rate };
    ig_moments(a)
        .iter()
        .zip(ig_moments(&o))
        .filter(|(_, y)| y.is_finite())
        .map(|(x, y)| rel(*x, y))
        .fold(0.0, f64::max)
}

/// A sampler state a few sweeps away from its initial values, so that the
/// covariance loadings, scales and transition parameters are all generic.
pub fn warmed_state(n_vars: usize, lags: usize, seed: u64) -> (ModelData, SamplerState, PriorConfig) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = n_vars * lags + 2;
    let anchor = DVector::zeros(n_vars * k);
    let priors = PriorConfig::default();
    let params = draw_from_prior(
        n_vars,
        lags,
        &anchor,
        &priors,
        SignalProcess::unit_variance(0.9),
        1.0,
        &mut rng,
        1_000_000,
    )
    .expect("stable prior draw");
    let d = generate(&params, 80, &mut rng).expect("generate");
    let data = ModelData::new(&d.panel, &d.signal, &d.instrument, lags, ShockTag::Tg).expect("model data");
    let priors = effective_priors(&data, &priors);
    let cfg = ChainConfig {
        seed,
        ..ChainConfig::default()
    };
    let mut state = SamplerState::initial(&data, anchor, &cfg).expect("initial state");
    let (lo, hi) = data.signal_bounds;
    let gamma = lo + (hi - lo) * rng.random::<f64>();
    state.transition = TransitionState::new(&data.signal_lag, gamma, 1.0 + rng.random::<f64>()).unwrap();
    state.refresh_design(&data);
    state.recompute_residuals(&data);
    for _ in 0..5 {
        state.gibbs_sweep(&data, &priors).expect("sweep");
    }
    (data, state, priors)
}

/// Compares every Gaussian and inverse-gamma conditional of one Gibbs sweep
/// with quantities rebuilt from the raw panel by the oracle code path.
pub fn conditional_discrepancies(n_vars: usize, lags: usize, seed: u64) -> Vec<Discrepancy> {
    let (data, state, priors) = warmed_state(n_vars, lags, seed);
    let spec = data.spec;
    let k = spec.regime_width();
    let kk = spec.regressor_count();
    let c = &state.coefficients;
    let hs = &state.hierarchies;
    let cov = &state.covariance;

    // panel rebuilt from the model data: y rows plus the first P lag rows
    let w = oracle_rows(&data);
    let y = oracle_y(&data);
    let s = oracle_weights(&oracle_signal(&data), lags, state.transition.gamma, state.transition.phi);

    let t_obs = y.len();
    let fitted = |m: usize, t: usize| -> f64 {
        (0..k)
            .map(|i| w[t][i] * (s[t] * c.regime1[m * k + i] + (1.0 - s[t]) * c.regime0[m * k + i]))
            .sum()
    };
    let eps: Vec<Vec<f64>> = (0..n_vars).map(|m| (0..t_obs).map(|t| y[t][m] - fitted(m, t)).collect()).collect();

    let mut out = Vec::new();
    let mut gauss_mean = 0.0f64;
    let mut gauss_cov = 0.0f64;
    let mut var_err = 0.0f64;
    for m in 0..n_vars {
        let sys = equation_system(m, &data, &state);
        let post = coefficient_posterior(&sys.xtx, &sys.xty, cov.sigma_sq[m], &sys.prior_mean, &sys.prior_var).unwrap();

        let x: Vec<Vec<f64>> = (0..t_obs)
            .map(|t| {
                let mut row: Vec<f64> = (0..k).map(|i| w[t][i] * s[t]).collect();
                row.extend((0..k).map(|i| w[t][i] * (1.0 - s[t])));
                row.extend((0..m).map(|i| eps[i][t]));
                row
            })
            .collect();
        let ym: Vec<f64> = (0..t_obs).map(|t| y[t][m]).collect();
        let mut m0 = Vec::with_capacity(kk + m);
        let mut v0 = Vec::with_capacity(kk + m);
        for (layer, _) in [(&hs.regime1, 0), (&hs.regime0, 1)] {
            for i in 0..k {
                let j = m * k + i;
                m0.push(c.common_mean[j]);
                v0.push(layer.global_sq * layer.local_sq[j]);
            }
        }
        let off = m * (m.saturating_sub(1)) / 2;
        for i in 0..m {
            m0.push(0.0);
            v0.push(cov.hierarchy.global_sq * cov.hierarchy.local_sq[off + i]);
        }
        let (mean, covar) = gls_posterior_oracle(&ym, &x, cov.sigma_sq[m], &m0, &v0).unwrap();
        gauss_mean = gauss_mean.max(rel_vec(post.mean.as_slice(), &mean));
        let pc = post.covariance();
        let flat: Vec<f64> = covar.iter().flatten().copied().collect();
        let ours: Vec<f64> = (0..kk + m).flat_map(|r| (0..kk + m).map(move |q| (r, q))).map(|(r, q)| pc[(r, q)]).collect();
        gauss_cov = gauss_cov.max(rel_vec(&ours, &flat));

        // structural residuals and the variance conditional
        let ssr: f64 = (0..t_obs)
            .map(|t| {
                let e = eps[m][t] - (0..m).map(|i| cov.h[off + i] * eps[i][t]).sum::<f64>();
                e * e
            })
            .sum();
        let sampler_ssr: f64 = state.structural_residuals().column(m).iter().map(|e| e * e).sum();
        let d = variance_posterior(t_obs, sampler_ssr, &priors).unwrap();
        var_err = var_err.max(ig_rel(&d, priors.sigma_shape + t_obs as f64 / 2.0, priors.sigma_scale + ssr / 2.0));
    }
    out.push(Discrepancy { what: "coefficient mean".into(), rel: gauss_mean });
    out.push(Discrepancy { what: "coefficient covariance".into(), rel: gauss_cov });
    out.push(Discrepancy { what: "variance".into(), rel: var_err });

    // horseshoe layers: regime deviations, pooling deviations, loadings
    let layers = [
        ("regime 1", &hs.regime1, (0..c.regime1.len()).map(|j| c.regime1[j] - c.common_mean[j]).collect::<Vec<_>>()),
        ("regime 0", &hs.regime0, (0..c.regime0.len()).map(|j| c.regime0[j] - c.common_mean[j]).collect()),
        ("pooling", &hs.pooling, (0..c.anchor.len()).map(|j| c.common_mean[j] - c.anchor[j]).collect()),
        ("covariance", &cov.hierarchy, cov.h.iter().copied().collect()),
    ];
    for (name, h, r) in layers {
        let mut e = 0.0f64;
        for j in 0..r.len() {
            let d = local_conditional(r[j], h.aux_local[j], h.global_sq).unwrap();
            e = e.max(ig_rel(&d, 1.0, 1.0 / h.aux_local[j] + r[j] * r[j] / (2.0 * h.global_sq)));
            let a = aux_conditional(h.local_sq[j]).unwrap();
            e = e.max(ig_rel(&a, 1.0, 1.0 + 1.0 / h.local_sq[j]));
        }
        let mut rate = 1.0 / h.aux_global;
        for j in 0..r.len() {
            rate += r[j] * r[j] / (2.0 * h.local_sq[j]);
        }
        let g = global_conditional(&r, &h.local_sq, h.aux_global).unwrap();
        e = e.max(ig_rel(&g, (r.len() as f64 + 1.0) / 2.0, rate));
        let xi = aux_conditional(h.global_sq).unwrap();
        e = e.max(ig_rel(&xi, 1.0, 1.0 + 1.0 / h.global_sq));
        out.push(Discrepancy { what: format!("{name} scales"), rel: e });
    }

    // common mean: product of three Gaussians in information form
    let cm = common_mean_conditional(
        &c.regime1,
        &c.regime0,
        &c.anchor,
        &hs.regime1.variances(),
        &hs.regime0.variances(),
        &hs.pooling.variances(),
    );
    let mut e = 0.0f64;
    for (j, (mean, var)) in cm.iter().enumerate() {
        let p1 = 1.0 / (hs.regime1.global_sq * hs.regime1.local_sq[j]);
        let p0 = 1.0 / (hs.regime0.global_sq * hs.regime0.local_sq[j]);
        let pp = 1.0 / (hs.pooling.global_sq * hs.pooling.local_sq[j]);
        let prec = p1 + p0 + pp;
        let info = p1 * c.regime1[j] + p0 * c.regime0[j] + pp * c.anchor[j];
        e = e.max(rel(*var, 1.0 / prec)).max((mean - info / prec).abs() / (info / prec).abs().max(var.sqrt()));
    }
    out.push(Discrepancy { what: "common mean".into(), rel: e });
    out
}

fn oracle_signal(data: &ModelData) -> Vec<f64> {
    // u_{t-1} for estimation row t sits at panel row t+P-1; rows before P-1
    // are never read by the oracle weights
    let p = data.spec.lags;
    let mut u = vec![0.0; p - 1];
    u.extend(data.signal_lag.iter().copied());
    u.push(0.0);
    u
}

fn oracle_panel(data: &ModelData) -> (stvar::TimeSeriesPanel, stvar::InstrumentSeries) {
    // rebuild panel rows 0..N from the lag columns of the first row and y
    let p = data.spec.lags;
    let m = data.spec.n_vars;
    let n = data.n_obs() + p;
    let mut values = nalgebra::DMatrix::zeros(n, m);
    for l in 1..=p {
        for v in 0..m {
            values[(p - l, v)] = data.base[(0, (l - 1) * m + v)];
        }
    }
    for t in 0..data.n_obs() {
        for v in 0..m {
            values[(t + p, v)] = data.y[(t, v)];
        }
    }
    let dates = monthly_range(YearMonth::new(2000, 1).unwrap(), n);
    let names = (0..m).map(|i| format!("y{i}")).collect();
    let panel = stvar::TimeSeriesPanel::new(values, dates.clone(), names, vec![Default::default(); m]).unwrap();
    let mut x = vec![0.0; n];
    for t in 0..data.n_obs() {
        x[t + p] = data.base[(t, m * p + 1)];
    }
    let inst = stvar::InstrumentSeries::new(DVector::from_vec(x), dates, ShockTag::Tg);
    (panel, inst)
}

fn oracle_rows(data: &ModelData) -> Vec<Vec<f64>> {
    let (panel, inst) = oracle_panel(data);
    oracle_base_rows(&panel, &inst, data.spec.lags)
}

fn oracle_y(data: &ModelData) -> Vec<Vec<f64>> {
    let (panel, _) = oracle_panel(data);
    oracle_dependent_rows(&panel, data.spec.lags)
}

// ---------------------------------------------------------------------------
// Synthetic CSV inputs

pub const BASELINE: [&str; 13] = [
    "E3M", "GBY2", "GBY10", "ES50", "OAS", "HICP", "UNEMP", "IP", "EPU", "ISICI", "CSCCI", "CSU12", "CIE",
];

/// Positive-level series get a log transform in the baseline config.
fn is_level(name: &str) -> bool {
    matches!(name, "ES50" | "HICP" | "IP" | "EPU")
}

/// Writes `panel.csv` with the baseline columns plus TG, FG and QE
/// instruments from `start` for `n` months. QE is blank before 2014-01.
pub fn write_panel(dir: &Path, start: YearMonth, n: usize, seed: u64) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dates = monthly_range(start, n);
    let mut state = [0.0f64; 13];
    let mut s = String::from("date");
    for name in BASELINE.iter().chain(["TG", "FG", "QE"].iter()) {
        write!(s, ",{name}").unwrap();
    }
    s.push('\n');
    let qe_start = YearMonth::new(2014, 1).unwrap();
    for d in &dates {
        write!(s, "{d}").unwrap();
        for (i, name) in BASELINE.iter().enumerate() {
            let e: f64 = rng.sample(StandardNormal);
            state[i] = 0.8 * state[i] + 0.3 * e;
            let v = if is_level(name) { 100.0 * (0.05 * state[i] + 0.001 * d.ordinal() as f64 / 12.0).exp() } else { state[i] };
            write!(s, ",{v:.10}").unwrap();
        }
        for inst in ["TG", "FG", "QE"] {
            let e: f64 = rng.sample(StandardNormal);
            if inst == "QE" && *d < qe_start {
                s.push(',');
            } else {
                write!(s, ",{:.10}", 0.05 * e).unwrap();
            }
        }
        s.push('\n');
    }
    let path = dir.join("panel.csv");
    std::fs::write(&path, s).unwrap();
    path
}

/// Baseline key-value config pointing at `panel` with output in `out`.
pub fn baseline_config(panel: &Path, out: &Path) -> RunConfig {
    let text = format!(
        "data.panel = {}\n\
         data.variables = {}\n\
         transform.ES50 = log100\n\
         transform.HICP = log100_yoy\n\
         transform.IP = log100_yoy\n\
         transform.EPU = log100\n\
         transform.CIE = scale:10\n\
         output.dir = {}\n",
        panel.display(),
        BASELINE.join(","),
        out.display()
    );
    RunConfig::parse_str(&text).unwrap()
}

/// A three-variable, two-lag model on the same panel with a short chain.
pub fn small_config(panel: &Path, out: &Path) -> RunConfig {
    let mut cfg = baseline_config(panel, out);
    cfg.variables = vec!["E3M".into(), "GBY2".into(), "EPU".into()];
    cfg.lags = 2;
    cfg.chain.n_iter = 1_200;
    cfg.chain.n_burn = 200;
    cfg.chain.thin = 5;
    cfg.chain.seed = 42;
    cfg.validate().unwrap();
    cfg
}

// ---------------------------------------------------------------------------
// Preprocessing

/// Random panel of `m` AR(1) series and a white-noise instrument with some
/// leakage from the lagged panel.
pub fn random_purge_input(seed: u64, n: usize, m: usize) -> (stvar::TimeSeriesPanel, stvar::InstrumentSeries) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dates = monthly_range(YearMonth::new(1990, 1).unwrap(), n);
    let rho: f64 = rng.random_range(-0.9..0.9);
    let mut values = nalgebra::DMatrix::zeros(n, m);
    for t in 0..n {
        for v in 0..m {
            let e: f64 = rng.sample(StandardNormal);
            values[(t, v)] = if t == 0 { e } else { rho * values[(t - 1, v)] + e };
        }
    }
    let leak: f64 = rng.random_range(-2.0..2.0);
    let x = DVector::from_fn(n, |t, _| {
        let e: f64 = rng.sample(StandardNormal);
        e + if t > 0 { leak * values[(t - 1, 0)] } else { 0.0 }
    });
    let names = (0..m).map(|i| format!("v{i}")).collect();
    let panel = stvar::TimeSeriesPanel::new(values, dates.clone(), names, vec![Default::default(); m]).unwrap();
    (panel, stvar::InstrumentSeries::new(x, dates, ShockTag::Tg))
}

/// Largest `|<r, x_c>| / (|r| |x_c|)` between the purged instrument and
/// each regressor of the information set, built here from the raw series.
pub fn purge_orthogonality(panel: &stvar::TimeSeriesPanel, inst: &stvar::InstrumentSeries, lags: usize) -> f64 {
    let purged = stvar::instruments::purge_instrument(inst, panel, lags).unwrap();
    let n = panel.n_rows();
    let rows: Vec<usize> = (lags..n).collect();
    let r: Vec<f64> = rows.iter().map(|&t| purged.values[t]).collect();
    let mut cols: Vec<Vec<f64>> = vec![vec![1.0; rows.len()]];
    for l in 1..=lags {
        cols.push(rows.iter().map(|&t| inst.values[t - l]).collect());
    }
    for l in 0..=lags {
        for v in 0..panel.n_vars() {
            cols.push(rows.iter().map(|&t| panel.values[(t - l, v)]).collect());
        }
    }
    let norm = |a: &[f64]| a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nr = norm(&r);
    if nr == 0.0 {
        return 0.0;
    }
    cols.iter()
        .map(|c| r.iter().zip(c).map(|(a, b)| a * b).sum::<f64>().abs() / (nr * norm(c)))
        .fold(0.0, f64::max)
}

/// Largest gap between `detrend_standardize(v)` and the same applied to
/// `a v + b + c t` (sign-adjusted for `a < 0`).
pub fn detrend_affine_gap(seed: u64, n: usize, a: f64, b: f64, c: f64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dates = monthly_range(YearMonth::new(1990, 1).unwrap(), n);
    let mut level = 0.0;
    let v: Vec<f64> = (0..n)
        .map(|_| {
            let e: f64 = rng.sample(StandardNormal);
            level = 0.9 * level + e;
            level
        })
        .collect();
    let w: Vec<f64> = v.iter().enumerate().map(|(t, x)| a * x + b + c * t as f64).collect();
    let s = stvar::instruments::detrend_standardize(&v, &dates).unwrap();
    let s2 = stvar::instruments::detrend_standardize(&w, &dates).unwrap();
    let sign = a.signum();
    s.values.iter().zip(s2.values.iter()).map(|(x, y)| (x - sign * y).abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Pipeline

/// Cells `(t, h, m)` whose quantiles are not non-decreasing in level.
pub fn quantile_violations(s: &stvar::irf::IrfSurface) -> usize {
    let mut bad = 0;
    for t in 0..s.dates.len() {
        for h in 0..s.horizons.len() {
            for m in 0..s.variables.len() {
                let q: Vec<f64> = (0..s.quantiles.len()).map(|q| s.get(t, h, m, q)).collect();
                if q.iter().any(|v| !v.is_finite()) || q.windows(2).any(|w| w[0] > w[1]) {
                    bad += 1;
                }
            }
        }
    }
    bad
}

pub fn same_bytes(a: &Path, b: &Path) -> bool {
    std::fs::read(a).unwrap() == std::fs::read(b).unwrap()
}
