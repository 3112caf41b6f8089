//! Retained draws and their columnar CSV form.

use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::date::YearMonth;
use crate::error::{Error, Result};
use crate::model::{ModelSpec, RegimeCoefficients, ShockTag};

/// One retained state.
#[derive(Debug, Clone, PartialEq)]
pub struct Draw {
    pub iteration: usize,
    pub a1: DVector<f64>,
    pub a0: DVector<f64>,
    pub a_tilde: DVector<f64>,
    pub h: DVector<f64>,
    pub sigma_sq: DVector<f64>,
    pub gamma: f64,
    pub phi: f64,
    pub weights: DVector<f64>,
}

impl Draw {
    pub fn coefficients(&self, spec: &ModelSpec) -> RegimeCoefficients {
        RegimeCoefficients {
            n_vars: spec.n_vars,
            lags: spec.lags,
            regime1: self.a1.clone(),
            regime0: self.a0.clone(),
            common_mean: self.a_tilde.clone(),
            anchor: DVector::zeros(self.a1.len()),
        }
    }

    /// `H^-1 = I - G`, unit lower triangular.
    pub fn h_inverse(&self, n_vars: usize) -> DMatrix<f64> {
        let mut out = DMatrix::identity(n_vars, n_vars);
        let mut r = 0;
        for m in 1..n_vars {
            for i in 0..m {
                out[(m, i)] = -self.h[r];
                r += 1;
            }
        }
        out
    }

    /// `H` itself, by forward substitution on `H^-1`.
    pub fn h_factor(&self, n_vars: usize) -> DMatrix<f64> {
        let inv = self.h_inverse(n_vars);
        inv.solve_lower_triangular(&DMatrix::identity(n_vars, n_vars))
            .expect("unit diagonal")
    }

    /// Reduced-form covariance `Omega = H Sigma H'`.
    pub fn omega(&self, n_vars: usize) -> DMatrix<f64> {
        let h = self.h_factor(n_vars);
        &h * DMatrix::from_diagonal(&self.sigma_sq) * h.transpose()
    }
}

/// Append-only sequence of retained draws for one chain.
#[derive(Debug, Clone, PartialEq)]
pub struct DrawStore {
    pub spec: ModelSpec,
    pub dates: Vec<YearMonth>,
    pub draws: Vec<Draw>,
}

impl DrawStore {
    pub fn new(spec: ModelSpec, dates: Vec<YearMonth>) -> Self {
        Self {
            spec,
            dates,
            draws: Vec::new(),
        }
    }

    pub fn push(&mut self, draw: Draw) {
        self.draws.push(draw);
    }

    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }

    /// Concatenates chains in order.
    pub fn merge(stores: &[DrawStore]) -> Result<DrawStore> {
        let first = stores
            .first()
            .ok_or_else(|| Error::InvalidArgument("no stores to merge".into()))?;
        let mut out = DrawStore::new(first.spec, first.dates.clone());
        for s in stores {
            if s.spec != first.spec || s.dates != first.dates {
                return Err(Error::InvalidArgument("stores disagree on model or window".into()));
            }
            out.draws.extend(s.draws.iter().cloned());
        }
        Ok(out)
    }

    /// Scalar trace selected by `f`.
    pub fn trace<F: Fn(&Draw) -> f64>(&self, f: F) -> Vec<f64> {
        self.draws.iter().map(f).collect()
    }

    pub fn header(&self) -> Vec<String> {
        let spec = &self.spec;
        let mut cols = vec!["draw".to_string(), "iteration".into(), "gamma".into(), "phi".into()];
        cols.extend((0..spec.n_vars).map(|m| format!("sigma_sq_{m}")));
        let j = spec.coefficient_count();
        for name in ["a1", "a0", "a_tilde"] {
            cols.extend((0..j).map(|i| format!("{name}_{i}")));
        }
        cols.extend((0..spec.covariance_count()).map(|r| format!("h_{r}")));
        cols.extend(self.dates.iter().map(|d| format!("S_{d}")));
        cols
    }

    /// One column per scalar, one row per draw. Floats use the shortest
    /// representation that round-trips exactly.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(self.header())?;
        for (n, d) in self.draws.iter().enumerate() {
            let mut row = vec![n.to_string(), d.iteration.to_string(), d.gamma.to_string(), d.phi.to_string()];
            for v in d
                .sigma_sq
                .iter()
                .chain(d.a1.iter())
                .chain(d.a0.iter())
                .chain(d.a_tilde.iter())
                .chain(d.h.iter())
                .chain(d.weights.iter())
            {
                row.push(v.to_string());
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    /// Inverse of [`write_csv`](Self::write_csv); model sizes are recovered
    /// from the header.
    pub fn read_csv(path: &Path, shock: ShockTag) -> Result<DrawStore> {
        let mut r = csv::Reader::from_path(path)?;
        let header: Vec<String> = r.headers()?.iter().map(str::to_string).collect();
        let count = |p: &str| header.iter().filter(|h| h.starts_with(p)).count();
        let m = count("sigma_sq_");
        let j = count("a1_");
        let n_r = count("h_");
        let dates: Vec<YearMonth> = header
            .iter()
            .filter_map(|h| h.strip_prefix("S_"))
            .map(str::parse)
            .collect::<Result<_>>()?;
        if m == 0 || j % m != 0 || (j / m) < 3 || (j / m - 2) % m != 0 || n_r != m * (m - 1) / 2 {
            return Err(Error::Data(format!(
                "{}: header does not describe a model (M {m}, J {j}, R {n_r})",
                path.display()
            )));
        }
        let lags = (j / m - 2) / m;
        let spec = ModelSpec {
            n_vars: m,
            lags,
            shock,
            n_obs: dates.len(),
        };
        let expected = 4 + m + 3 * j + n_r + dates.len();
        if header.len() != expected {
            return Err(Error::Data(format!(
                "{}: {} columns, expected {expected}",
                path.display(),
                header.len()
            )));
        }
        let mut store = DrawStore::new(spec, dates);
        for (line, rec) in r.records().enumerate() {
            let rec = rec?;
            let vals: Vec<f64> = rec
                .iter()
                .map(|s| {
                    s.parse::<f64>().map_err(|_| {
                        Error::Data(format!("{}: row {}: bad number `{s}`", path.display(), line + 1))
                    })
                })
                .collect::<Result<_>>()?;
            let mut at = 4;
            let mut take = |n: usize| {
                let v = DVector::from_column_slice(&vals[at..at + n]);
                at += n;
                v
            };
            let sigma_sq = take(m);
            let a1 = take(j);
            let a0 = take(j);
            let a_tilde = take(j);
            let h = take(n_r);
            let weights = take(spec.n_obs);
            store.push(Draw {
                iteration: vals[1] as usize,
                gamma: vals[2],
                phi: vals[3],
                a1,
                a0,
                a_tilde,
                h,
                sigma_sq,
                weights,
            });
        }
        Ok(store)
    }
}
