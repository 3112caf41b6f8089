//! Structural objects of the two-regime ST-VAR
//!
//! ```text
//! y_t = (A_11 y_{t-1} + .. + A_1P y_{t-P} + c_1 + d_1 x_t) S_t
//!     + (A_01 y_{t-1} + .. + A_0P y_{t-P} + c_0 + d_0 x_t) (1 - S_t) + e_t
//! S_t = 1 / (1 + exp(-phi (u_{t-1} - gamma)))
//! ```
//!
//! Coefficient vectors are stored equation-major: for regime `i` the entries
//! of equation `m` occupy `m*k .. (m+1)*k` with `k = M*P + 2`, ordered as
//! lag 1 (one entry per variable), .., lag P, intercept, instrument loading.

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::date::YearMonth;
use crate::error::{Error, Result};
use crate::instruments::TransformRule;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ShockTag {
    #[serde(rename = "TG")]
    Tg,
    #[serde(rename = "FG")]
    Fg,
    #[serde(rename = "QE")]
    Qe,
}

impl fmt::Display for ShockTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ShockTag::Tg => "TG",
            ShockTag::Fg => "FG",
            ShockTag::Qe => "QE",
        })
    }
}

impl FromStr for ShockTag {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "tg" => Ok(ShockTag::Tg),
            "fg" => Ok(ShockTag::Fg),
            "qe" => Ok(ShockTag::Qe),
            other => Err(Error::Config(format!("unknown shock `{other}` (tg|fg|qe)"))),
        }
    }
}

/// Dimensions of a model. `n_obs` is the usable sample after lag trimming.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_vars: usize,
    pub lags: usize,
    pub shock: ShockTag,
    pub n_obs: usize,
}

impl ModelSpec {
    pub fn new(n_vars: usize, lags: usize, shock: ShockTag, n_obs: usize) -> Result<Self> {
        if n_vars == 0 || lags == 0 {
            return Err(Error::InvalidArgument(format!(
                "need at least one variable and one lag, got M = {n_vars}, P = {lags}"
            )));
        }
        let spec = Self {
            n_vars,
            lags,
            shock,
            n_obs,
        };
        if n_obs <= spec.regressor_count() {
            return Err(Error::Data(format!(
                "insufficient sample: T = {n_obs} must exceed K = {}",
                spec.regressor_count()
            )));
        }
        Ok(spec)
    }

    /// Coefficients per equation and regime, `k = M*P + 2`.
    pub fn regime_width(&self) -> usize {
        self.n_vars * self.lags + 2
    }

    /// `J = M (M P + 2)`, the length of one regime's coefficient vector.
    pub fn coefficient_count(&self) -> usize {
        self.n_vars * self.regime_width()
    }

    /// `K = 2 (M P + 2)`, the length of the regressor vector `z_t`.
    pub fn regressor_count(&self) -> usize {
        2 * self.regime_width()
    }

    /// `R = M (M - 1) / 2`, the free elements of the unit lower-triangular factor.
    pub fn covariance_count(&self) -> usize {
        self.n_vars * (self.n_vars - 1) / 2
    }

    pub fn companion_dim(&self) -> usize {
        self.n_vars * self.lags
    }

    /// Position of the coefficient on lag `lag` (1-based) of variable `var`
    /// inside equation `eq`.
    pub fn lag_index(&self, eq: usize, lag: usize, var: usize) -> usize {
        eq * self.regime_width() + (lag - 1) * self.n_vars + var
    }

    pub fn intercept_index(&self, eq: usize) -> usize {
        eq * self.regime_width() + self.n_vars * self.lags
    }

    pub fn impact_index(&self, eq: usize) -> usize {
        eq * self.regime_width() + self.n_vars * self.lags + 1
    }

    /// Offset of equation `eq`'s free covariance elements inside the
    /// R-vector; equation `eq` owns `eq` of them.
    pub fn covariance_offset(&self, eq: usize) -> usize {
        eq * eq.saturating_sub(1) / 2
    }
}

/// Transformed endogenous series, one column per variable.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesPanel {
    pub values: DMatrix<f64>,
    pub dates: Vec<YearMonth>,
    pub names: Vec<String>,
    pub transforms: Vec<TransformRule>,
}

pub(crate) fn check_monthly(dates: &[YearMonth]) -> Result<()> {
    for w in dates.windows(2) {
        if w[1] != w[0].succ() {
            return Err(Error::Data(format!(
                "dates must be consecutive months: {} is followed by {}",
                w[0], w[1]
            )));
        }
    }
    Ok(())
}

impl TimeSeriesPanel {
    pub fn new(
        values: DMatrix<f64>,
        dates: Vec<YearMonth>,
        names: Vec<String>,
        transforms: Vec<TransformRule>,
    ) -> Result<Self> {
        if values.nrows() != dates.len() {
            return Err(Error::Data(format!(
                "{} rows but {} dates",
                values.nrows(),
                dates.len()
            )));
        }
        if values.ncols() != names.len() || names.len() != transforms.len() {
            return Err(Error::Data(format!(
                "{} columns, {} names, {} transformation records",
                values.ncols(),
                names.len(),
                transforms.len()
            )));
        }
        check_monthly(&dates)?;
        for (col, name) in names.iter().enumerate() {
            for (row, date) in dates.iter().enumerate() {
                if !values[(row, col)].is_finite() {
                    return Err(Error::Data(format!(
                        "missing or non-finite value for `{name}` at {date}"
                    )));
                }
            }
        }
        Ok(Self {
            values,
            dates,
            names,
            transforms,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn n_vars(&self) -> usize {
        self.values.ncols()
    }

    /// Rows `start..end` as a new panel.
    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            values: self.values.rows(start, end - start).into_owned(),
            dates: self.dates[start..end].to_vec(),
            names: self.names.clone(),
            transforms: self.transforms.clone(),
        }
    }
}

/// Standardized signal series `u_t`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSeries {
    pub values: DVector<f64>,
    pub dates: Vec<YearMonth>,
}

impl SignalSeries {
    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn bounds(&self) -> (f64, f64) {
        (self.values.min(), self.values.max())
    }

    /// Population mean and variance; within 1e-8 of (0, 1) for a
    /// standardized series.
    pub fn moments(&self) -> (f64, f64) {
        let n = self.values.len() as f64;
        let mean = self.values.sum() / n;
        let var = self.values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        (mean, var)
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            values: self.values.rows(start, end - start).into_owned(),
            dates: self.dates[start..end].to_vec(),
        }
    }
}

/// Monthly instrument surprises for a single shock.
#[derive(Debug, Clone, PartialEq)]
pub struct InstrumentSeries {
    pub values: DVector<f64>,
    pub dates: Vec<YearMonth>,
    pub shock: ShockTag,
    pub purged: bool,
    /// `false` where the instrument does not exist (values there are exactly 0).
    pub active: Vec<bool>,
    /// Fit of the purging regression, when purged.
    pub purge_r_squared: Option<f64>,
}

impl InstrumentSeries {
    pub fn new(values: DVector<f64>, dates: Vec<YearMonth>, shock: ShockTag) -> Self {
        let active = vec![true; values.len()];
        Self {
            values,
            dates,
            shock,
            purged: false,
            active,
            purge_r_squared: None,
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn slice(&self, start: usize, end: usize) -> Self {
        Self {
            values: self.values.rows(start, end - start).into_owned(),
            dates: self.dates[start..end].to_vec(),
            shock: self.shock,
            purged: self.purged,
            active: self.active[start..end].to_vec(),
            purge_r_squared: self.purge_r_squared,
        }
    }

    /// Sample standard deviation over the active entries.
    pub fn std_dev(&self) -> f64 {
        let vals: Vec<f64> = self
            .values
            .iter()
            .zip(&self.active)
            .filter(|(_, &a)| a)
            .map(|(v, _)| *v)
            .collect();
        let n = vals.len() as f64;
        let mean = vals.iter().sum::<f64>() / n;
        (vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Regime {
    /// Weighted by `S_t`.
    One,
    /// Weighted by `1 - S_t`.
    Zero,
}

/// Both regimes' stacked coefficients plus the pooled mean and its anchor.
#[derive(Debug, Clone, PartialEq)]
pub struct RegimeCoefficients {
    pub n_vars: usize,
    pub lags: usize,
    pub regime1: DVector<f64>,
    pub regime0: DVector<f64>,
    pub common_mean: DVector<f64>,
    pub anchor: DVector<f64>,
}

impl RegimeCoefficients {
    /// Every layer set to the anchor.
    pub fn at_anchor(n_vars: usize, lags: usize, anchor: DVector<f64>) -> Self {
        Self {
            n_vars,
            lags,
            regime1: anchor.clone(),
            regime0: anchor.clone(),
            common_mean: anchor.clone(),
            anchor,
        }
    }

    /// Builds coefficients from `M x (MP+2)` regime blocks.
    pub fn from_blocks(block1: &DMatrix<f64>, block0: &DMatrix<f64>) -> Result<Self> {
        let m = block1.nrows();
        let width = block1.ncols();
        if m == 0 || width < 3 || (width - 2) % m != 0 || block0.shape() != block1.shape() {
            return Err(Error::InvalidArgument(format!(
                "regime blocks must both be M x (MP+2), got {:?} and {:?}",
                block1.shape(),
                block0.shape()
            )));
        }
        let stack = |b: &DMatrix<f64>| DVector::from_iterator(m * width, b.transpose().iter().copied());
        let regime1 = stack(block1);
        let regime0 = stack(block0);
        let zeros = DVector::zeros(m * width);
        Ok(Self {
            n_vars: m,
            lags: (width - 2) / m,
            common_mean: (&regime1 + &regime0) * 0.5,
            regime1,
            regime0,
            anchor: zeros,
        })
    }

    pub fn regime_width(&self) -> usize {
        self.n_vars * self.lags + 2
    }

    pub fn stacked(&self, regime: Regime) -> &DVector<f64> {
        match regime {
            Regime::One => &self.regime1,
            Regime::Zero => &self.regime0,
        }
    }

    /// `A_i = (A_i1, .., A_iP, c_i, d_i)` as an `M x (MP+2)` matrix.
    pub fn block(&self, regime: Regime) -> DMatrix<f64> {
        let k = self.regime_width();
        let a = self.stacked(regime);
        DMatrix::from_fn(self.n_vars, k, |r, c| a[r * k + c])
    }

    /// `(A_i1, .., A_iP)` as an `M x MP` matrix.
    pub fn lag_matrix(&self, regime: Regime) -> DMatrix<f64> {
        let mp = self.n_vars * self.lags;
        self.block(regime).columns(0, mp).into_owned()
    }

    pub fn intercept(&self, regime: Regime) -> DVector<f64> {
        self.block(regime).column(self.n_vars * self.lags).into_owned()
    }

    /// Instrument loading `d_i`.
    pub fn impact(&self, regime: Regime) -> DVector<f64> {
        self.block(regime).column(self.n_vars * self.lags + 1).into_owned()
    }
}

/// Logistic regime weight `1 / (1 + exp(-phi (u_lag - gamma)))`.
///
/// Evaluated through `exp(-|x|)` so no intermediate overflows; the result
/// saturates at exactly 0 or 1 for very large arguments.
pub fn logistic_transition(u_lag: f64, gamma: f64, phi: f64) -> Result<f64> {
    if !(u_lag.is_finite() && gamma.is_finite() && phi.is_finite()) {
        return Err(Error::InvalidArgument(format!(
            "non-finite transition input (u = {u_lag}, gamma = {gamma}, phi = {phi})"
        )));
    }
    if phi < 0.0 {
        return Err(Error::InvalidArgument(format!("phi must be >= 0, got {phi}")));
    }
    Ok(logistic(phi * (u_lag - gamma)))
}

#[inline]
pub(crate) fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Threshold, speed and the weight path they imply.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionState {
    pub gamma: f64,
    pub phi: f64,
    pub weights: DVector<f64>,
}

impl TransitionState {
    /// `u_lag[t]` is the signal value one period before estimation row `t`.
    pub fn new(u_lag: &DVector<f64>, gamma: f64, phi: f64) -> Result<Self> {
        let weights = weight_path(u_lag, gamma, phi)?;
        Ok(Self {
            gamma,
            phi,
            weights,
        })
    }
}

pub fn weight_path(u_lag: &DVector<f64>, gamma: f64, phi: f64) -> Result<DVector<f64>> {
    let mut out = DVector::zeros(u_lag.len());
    for (w, &u) in out.iter_mut().zip(u_lag.iter()) {
        *w = logistic_transition(u, gamma, phi)?;
    }
    Ok(out)
}

/// Unweighted regressors `(y'_{t-1}, .., y'_{t-P}, 1, x_t)` for panel row `t`.
pub fn base_regressor(
    panel: &TimeSeriesPanel,
    instrument: &InstrumentSeries,
    t: usize,
    lags: usize,
) -> Result<DVector<f64>> {
    let n = panel.n_rows();
    if t < lags || t >= n || instrument.len() != n {
        return Err(Error::OutOfBounds {
            index: t,
            valid: format!("rows {lags}..{n} with an aligned instrument"),
        });
    }
    let m = panel.n_vars();
    let mut w = DVector::zeros(m * lags + 2);
    for p in 1..=lags {
        for v in 0..m {
            w[(p - 1) * m + v] = panel.values[(t - p, v)];
        }
    }
    w[m * lags] = 1.0;
    w[m * lags + 1] = instrument.values[t];
    Ok(w)
}

/// `z_t = (w_t S_t, w_t (1 - S_t))` for panel row `t` (0-based, `t >= P`).
pub fn build_regressor(
    panel: &TimeSeriesPanel,
    instrument: &InstrumentSeries,
    weight: f64,
    t: usize,
    spec: &ModelSpec,
) -> Result<DVector<f64>> {
    if panel.n_vars() != spec.n_vars {
        return Err(Error::InvalidArgument(format!(
            "panel has {} variables, spec expects {}",
            panel.n_vars(),
            spec.n_vars
        )));
    }
    let w = base_regressor(panel, instrument, t, spec.lags)?;
    let k = w.len();
    let mut z = DVector::zeros(2 * k);
    z.rows_mut(0, k).copy_from(&(&w * weight));
    z.rows_mut(k, k).copy_from(&(&w * (1.0 - weight)));
    Ok(z)
}

/// Companion matrices of both regimes (intercept and instrument excluded).
#[derive(Debug, Clone, PartialEq)]
pub struct CompanionPair {
    pub regime1: DMatrix<f64>,
    pub regime0: DMatrix<f64>,
    pub n_vars: usize,
    pub lags: usize,
}

fn companion(lag_matrix: &DMatrix<f64>, n_vars: usize, lags: usize) -> DMatrix<f64> {
    let mp = n_vars * lags;
    let mut c = DMatrix::zeros(mp, mp);
    c.rows_mut(0, n_vars).copy_from(lag_matrix);
    for i in n_vars..mp {
        c[(i, i - n_vars)] = 1.0;
    }
    c
}

pub fn companion_from(coeffs: &RegimeCoefficients, spec: &ModelSpec) -> Result<CompanionPair> {
    let j = spec.coefficient_count();
    if coeffs.n_vars != spec.n_vars
        || coeffs.lags != spec.lags
        || coeffs.regime1.len() != j
        || coeffs.regime0.len() != j
    {
        return Err(Error::InvalidArgument(format!(
            "coefficients (M = {}, P = {}, len {}) do not match spec (M = {}, P = {}, J = {j})",
            coeffs.n_vars,
            coeffs.lags,
            coeffs.regime1.len(),
            spec.n_vars,
            spec.lags
        )));
    }
    Ok(CompanionPair {
        regime1: companion(&coeffs.lag_matrix(Regime::One), spec.n_vars, spec.lags),
        regime0: companion(&coeffs.lag_matrix(Regime::Zero), spec.n_vars, spec.lags),
        n_vars: spec.n_vars,
        lags: spec.lags,
    })
}

impl CompanionPair {
    /// `M1 S + M0 (1 - S)`.
    pub fn weighted(&self, weight: f64) -> DMatrix<f64> {
        &self.regime1 * weight + &self.regime0 * (1.0 - weight)
    }

    /// The top `M` rows of one regime's companion.
    pub fn lag_block(&self, regime: Regime) -> DMatrix<f64> {
        let c = match regime {
            Regime::One => &self.regime1,
            Regime::Zero => &self.regime0,
        };
        c.rows(0, self.n_vars).into_owned()
    }
}

/// Largest eigenvalue modulus of a square matrix.
pub fn spectral_radius(m: &DMatrix<f64>) -> Result<f64> {
    if m.nrows() != m.ncols() {
        return Err(Error::InvalidArgument(format!(
            "spectral radius of a non-square {:?} matrix",
            m.shape()
        )));
    }
    if m.nrows() == 1 {
        return Ok(m[(0, 0)].abs());
    }
    if m.iter().all(|v| *v == 0.0) {
        return Ok(0.0);
    }
    let schur = nalgebra::linalg::Schur::try_new(m.clone(), 1e-14, 10_000)
        .ok_or_else(|| Error::Numerical("Schur decomposition did not converge".into()))?;
    Ok(schur
        .complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max))
}

/// Spectral radius of the `S`-weighted companion; `>= 1` means explosive.
pub fn max_abs_eigenvalue(pair: &CompanionPair, weight: f64) -> Result<f64> {
    if pair.regime1.shape() != pair.regime0.shape() {
        return Err(Error::InvalidArgument("companion shapes differ".into()));
    }
    spectral_radius(&pair.weighted(weight))
}

pub fn is_explosive(radius: f64) -> bool {
    !(radius < 1.0)
}
