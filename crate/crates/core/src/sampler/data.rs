use nalgebra::{DMatrix, DVector};

use crate::date::YearMonth;
use crate::error::{Error, Result};
use crate::model::{InstrumentSeries, ModelSpec, ShockTag, SignalSeries, TimeSeriesPanel};

/// Estimation-window view of the data, laid out for the sampler.
///
/// Row `t` corresponds to panel row `t + P`; the first `P` panel rows only
/// supply lags.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelData {
    pub spec: ModelSpec,
    /// `T x M` dependent variables.
    pub y: DMatrix<f64>,
    /// `T x (MP+2)` unweighted regressors `(y_{t-1}, .., y_{t-P}, 1, x_t)`.
    pub base: DMatrix<f64>,
    /// `u_{t-1}` for every estimation row.
    pub signal_lag: DVector<f64>,
    /// Support of the threshold prior.
    pub signal_bounds: (f64, f64),
    pub dates: Vec<YearMonth>,
}

impl ModelData {
    pub fn new(
        panel: &TimeSeriesPanel,
        signal: &SignalSeries,
        instrument: &InstrumentSeries,
        lags: usize,
        shock: ShockTag,
    ) -> Result<Self> {
        let n = panel.n_rows();
        if signal.len() != n || instrument.len() != n {
            return Err(Error::Data(format!(
                "panel ({n} rows), signal ({}) and instrument ({}) are not aligned",
                signal.len(),
                instrument.len()
            )));
        }
        if signal.dates != panel.dates || instrument.dates != panel.dates {
            return Err(Error::Data("series dates are not aligned".into()));
        }
        if n <= lags {
            return Err(Error::Data(format!("{n} rows cannot supply {lags} lags")));
        }
        let t_obs = n - lags;
        let spec = ModelSpec::new(panel.n_vars(), lags, shock, t_obs)?;
        let y = panel.values.rows(lags, t_obs).into_owned();
        let mut base = DMatrix::zeros(t_obs, spec.regime_width());
        for t in 0..t_obs {
            let w = crate::model::base_regressor(panel, instrument, t + lags, lags)?;
            base.row_mut(t).copy_from(&w.transpose());
        }
        let signal_lag = signal.values.rows(lags - 1, t_obs).into_owned();
        Ok(Self {
            spec,
            y,
            base,
            signal_lag,
            signal_bounds: signal.bounds(),
            dates: panel.dates[lags..].to_vec(),
        })
    }

    pub fn n_obs(&self) -> usize {
        self.y.nrows()
    }

    /// `T x K` design `Z` with rows `z_t' = (w_t' S_t, w_t' (1 - S_t))`.
    pub fn design(&self, weights: &DVector<f64>) -> DMatrix<f64> {
        let (t_obs, k) = self.base.shape();
        let mut z = DMatrix::zeros(t_obs, 2 * k);
        for t in 0..t_obs {
            let s = weights[t];
            for c in 0..k {
                let w = self.base[(t, c)];
                z[(t, c)] = w * s;
                z[(t, k + c)] = w * (1.0 - s);
            }
        }
        z
    }
}
