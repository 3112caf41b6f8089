//! CSV ingestion and the validated data bundle handed to the sampler.

use std::collections::{BTreeMap, HashMap};
use std::path::{Path, PathBuf};

use log::info;
use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::date::YearMonth;
use crate::error::{Error, Result};
use crate::instruments::{detrend_standardize, purge_instrument, TransformRule};
use crate::model::{InstrumentSeries, ModelSpec, SignalSeries, TimeSeriesPanel};
use crate::sampler::ModelData;

use super::config::{MissingPolicy, RunConfig, SigmaTiming};

/// A date-indexed CSV table. Blank, `NA` and `NaN` cells are missing.
#[derive(Debug, Clone)]
pub struct RawTable {
    pub path: PathBuf,
    pub sha256: String,
    pub dates: Vec<YearMonth>,
    pub names: Vec<String>,
    pub columns: Vec<Vec<Option<f64>>>,
}

/// CSV line of data row `row` (the header is line 1).
fn line_of(row: usize) -> usize {
    row + 2
}

impl RawTable {
    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)
            .map_err(|e| Error::Data(format!("cannot read {}: {e}", path.display())))?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        let file = path.display();
        let mut rdr = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_reader(bytes.as_slice());
        let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
        if header.len() < 2 {
            return Err(Error::Data(format!("{file}: need a date column and at least one series")));
        }
        let names = header[1..].to_vec();
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() {
                return Err(Error::Data(format!("{file}: column {} has an empty name", i + 2)));
            }
            if names[..i].contains(n) {
                return Err(Error::Data(format!("{file}: column `{n}` appears twice")));
            }
        }
        let mut dates = Vec::new();
        let mut columns = vec![Vec::new(); names.len()];
        for (row, rec) in rdr.records().enumerate() {
            let rec = rec?;
            let line = line_of(row);
            if rec.len() != header.len() {
                return Err(Error::Data(format!(
                    "{file} line {line}: {} fields, header has {}",
                    rec.len(),
                    header.len()
                )));
            }
            let date: YearMonth = rec[0]
                .parse()
                .map_err(|e| Error::Data(format!("{file} line {line}, column `{}`: {e}", header[0])))?;
            if let Some(prev) = dates.last() {
                if date != YearMonth::succ(*prev) {
                    return Err(Error::Data(format!(
                        "{file} line {line}: {date} does not follow {prev}; dates must be consecutive months"
                    )));
                }
            }
            dates.push(date);
            for (c, cell) in rec.iter().skip(1).enumerate() {
                let v = match cell {
                    "" | "NA" | "NaN" | "nan" => None,
                    s => Some(s.parse::<f64>().map_err(|_| {
                        Error::Data(format!("{file} line {line}, column `{}`: `{s}` is not a number", names[c]))
                    })?),
                };
                if v.is_some_and(|x| !x.is_finite()) {
                    return Err(Error::Data(format!(
                        "{file} line {line}, column `{}`: non-finite value",
                        names[c]
                    )));
                }
                columns[c].push(v);
            }
        }
        if dates.is_empty() {
            return Err(Error::Data(format!("{file}: no data rows")));
        }
        Ok(Self {
            path: path.to_path_buf(),
            sha256,
            dates,
            names,
            columns,
        })
    }

    pub fn column(&self, name: &str) -> Result<&[Option<f64>]> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| self.columns[i].as_slice())
            .ok_or_else(|| {
                Error::Data(format!(
                    "column `{name}` not found in {} (columns: {})",
                    self.path.display(),
                    self.names.join(", ")
                ))
            })
    }

    fn index_of(&self, date: YearMonth) -> Option<usize> {
        let i = date.ordinal() - self.dates[0].ordinal();
        (0..self.dates.len() as i64).contains(&i).then_some(i as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FileRecord {
    pub path: String,
    pub sha256: String,
    pub rows: usize,
    pub first: String,
    pub last: String,
}

impl FileRecord {
    fn of(t: &RawTable) -> Self {
        Self {
            path: t.path.display().to_string(),
            sha256: t.sha256.clone(),
            rows: t.dates.len(),
            first: t.dates[0].to_string(),
            last: t.dates[t.dates.len() - 1].to_string(),
        }
    }
}

/// What was read and what was done to it.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub panel_file: FileRecord,
    pub instrument_file: Option<FileRecord>,
    pub window_start: String,
    pub window_end: String,
    pub rows_in_window: usize,
    pub rows_dropped_before: usize,
    pub rows_dropped_after: usize,
    pub effective_obs: usize,
    pub variables: Vec<String>,
    pub transforms: BTreeMap<String, String>,
    pub signal_column: String,
    pub signal_rule: String,
    pub instrument_column: String,
    pub instrument_inactive_months: usize,
    pub purged: bool,
    pub purge_r_squared: Option<f64>,
    pub sigma_x_pre_purge: f64,
    pub sigma_x_post_purge: f64,
    pub sigma_x_used: f64,
}

/// Everything estimation needs, validated and aligned on one window.
#[derive(Debug, Clone)]
pub struct LoadedData {
    pub panel: TimeSeriesPanel,
    pub signal: SignalSeries,
    pub instrument: InstrumentSeries,
    pub spec: ModelSpec,
    pub model: ModelData,
    /// Instrument standard deviation that scales the shock.
    pub sigma_x: f64,
    pub provenance: Provenance,
}

struct SeriesNeed<'a> {
    name: &'a str,
    values: &'a [Option<f64>],
    lost: usize,
}

fn present_span(values: &[Option<f64>]) -> Option<(usize, usize)> {
    let first = values.iter().position(Option::is_some)?;
    let last = values.iter().rposition(Option::is_some)?;
    Some((first, last))
}

/// Reads, transforms, aligns, detrends, purges and validates the inputs.
pub fn load_and_validate(cfg: &RunConfig) -> Result<LoadedData> {
    let panel_t = RawTable::read(&cfg.panel_path)?;
    let inst_t = match &cfg.instrument_path {
        Some(p) => Some(RawTable::read(p)?),
        None => None,
    };
    let inst_name = cfg.instrument_column_name();
    let inst_table = inst_t.as_ref().unwrap_or(&panel_t);
    let inst_raw = inst_table.column(&inst_name)?;
    if inst_raw.iter().all(Option::is_none) {
        return Err(Error::Data(format!(
            "instrument column `{inst_name}` in {} is empty",
            inst_table.path.display()
        )));
    }
    let variables: Vec<String> = if cfg.variables.is_empty() {
        panel_t
            .names
            .iter()
            .filter(|n| inst_t.is_some() || **n != inst_name)
            .cloned()
            .collect()
    } else {
        cfg.variables.clone()
    };
    if variables.is_empty() {
        return Err(Error::Config("no endogenous variables selected".into()));
    }
    for name in cfg.transforms.keys() {
        if !panel_t.names.contains(name) {
            return Err(Error::Config(format!(
                "transform.{name} refers to a column not in {}",
                cfg.panel_path.display()
            )));
        }
    }

    let file = panel_t.path.display().to_string();
    let mut needs = Vec::new();
    for v in variables.iter().chain(std::iter::once(&cfg.signal_column)) {
        needs.push(SeriesNeed {
            name: v,
            values: panel_t.column(v)?,
            lost: cfg.transform_for(v).rows_lost(),
        });
    }

    // instrument on the panel calendar
    let inst_on_panel: Vec<Option<f64>> = panel_t
        .dates
        .iter()
        .map(|d| inst_table.index_of(*d).and_then(|i| inst_raw[i]))
        .collect();

    // default window: the common sample
    let n_panel = panel_t.dates.len();
    let mut lo = 0usize;
    let mut hi = n_panel - 1;
    for s in &needs {
        let (f, l) = present_span(s.values)
            .ok_or_else(|| Error::Data(format!("{file}: column `{}` is empty", s.name)))?;
        lo = lo.max(f + s.lost);
        hi = hi.min(l);
    }
    if cfg.instrument_missing == MissingPolicy::Error {
        let (f, l) = present_span(&inst_on_panel).ok_or_else(|| {
            Error::Data(format!("instrument column `{inst_name}` has no values on the panel's dates"))
        })?;
        lo = lo.max(f);
        hi = hi.min(l);
    }
    let index = |d: YearMonth, what: &str| -> Result<usize> {
        panel_t.index_of(d).ok_or_else(|| {
            Error::Data(format!(
                "{what} {d} is outside the data range {} .. {} of {file}",
                panel_t.dates[0],
                panel_t.dates[n_panel - 1]
            ))
        })
    };
    let start = match cfg.sample_start {
        Some(d) => index(d, "sample.start")?,
        None => lo,
    };
    let end = match cfg.sample_end {
        Some(d) => index(d, "sample.end")?,
        None => hi,
    };
    if start > end {
        return Err(Error::Data(format!(
            "empty sample window: {} .. {} (common sample of the inputs is {} .. {})",
            panel_t.dates[start.min(n_panel - 1)],
            panel_t.dates[end],
            panel_t.dates[lo.min(n_panel - 1)],
            panel_t.dates[hi]
        )));
    }
    let n = end - start + 1;
    let dates = panel_t.dates[start..=end].to_vec();

    // endogenous and signal series
    let mut transformed: HashMap<&str, Vec<f64>> = HashMap::new();
    let mut rules = BTreeMap::new();
    for s in &needs {
        let rule = cfg.transform_for(s.name);
        if s.lost > start {
            return Err(Error::Data(format!(
                "column `{}`: window starts {} but {rule} needs {} earlier months",
                s.name, dates[0], s.lost
            )));
        }
        let from = start - s.lost;
        let mut raw = Vec::with_capacity(end + 1 - from);
        for row in from..=end {
            let v = s.values[row].ok_or_else(|| {
                Error::Data(format!(
                    "{file} line {}, column `{}` ({}): missing value inside the sample window",
                    line_of(row),
                    s.name,
                    panel_t.dates[row]
                ))
            })?;
            if matches!(rule, TransformRule::Log100 | TransformRule::Log100Yoy) && !(v > 0.0) {
                return Err(Error::Data(format!(
                    "{file} line {}, column `{}` ({}): {rule} needs positive values, got {v}",
                    line_of(row),
                    s.name,
                    panel_t.dates[row]
                )));
            }
            raw.push(v);
        }
        let out = crate::instruments::apply_transform(&raw, &panel_t.dates[from..=end], rule)?;
        debug_assert_eq!(out.values.len(), n);
        transformed.insert(s.name, out.values);
        rules.insert(s.name.to_string(), rule.to_string());
    }

    let values = DMatrix::from_fn(n, variables.len(), |r, c| transformed[variables[c].as_str()][r]);
    let panel = TimeSeriesPanel::new(
        values,
        dates.clone(),
        variables.clone(),
        variables.iter().map(|v| cfg.transform_for(v)).collect(),
    )?;
    let signal = detrend_standardize(&transformed[cfg.signal_column.as_str()], &dates)
        .map_err(|e| Error::Data(format!("signal `{}`: {e}", cfg.signal_column)))?;

    // instrument
    let mut inst_vals = Vec::with_capacity(n);
    let mut active = Vec::with_capacity(n);
    for (i, row) in (start..=end).enumerate() {
        match inst_on_panel[row] {
            Some(v) => {
                inst_vals.push(v);
                active.push(true);
            }
            None if cfg.instrument_missing == MissingPolicy::Inactive => {
                inst_vals.push(0.0);
                active.push(false);
            }
            None => {
                let where_ = match inst_table.index_of(dates[i]) {
                    Some(r) => format!("{} line {}", inst_table.path.display(), line_of(r)),
                    None => format!("{} (date absent)", inst_table.path.display()),
                };
                return Err(Error::Data(format!(
                    "{where_}, column `{inst_name}` ({}): missing instrument value inside the sample window",
                    dates[i]
                )));
            }
        }
    }
    let inactive = active.iter().filter(|a| !**a).count();
    if inactive == n {
        return Err(Error::Data(format!("instrument `{inst_name}` has no values inside the sample window")));
    }
    let mut instrument = InstrumentSeries::new(DVector::from_vec(inst_vals), dates.clone(), cfg.shock);
    instrument.active = active;
    let sigma_pre = instrument.std_dev();
    if cfg.purge {
        instrument = purge_instrument(&instrument, &panel, cfg.lags).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!(
                "purging `{inst_name}` over {} .. {}: {msg}; use fewer lags or variables, or set instrument.purge = false",
                dates[0],
                dates[n - 1]
            )),
            other => other,
        })?;
    }
    let sigma_post = instrument.std_dev();
    let sigma_x = match cfg.sigma_timing {
        SigmaTiming::PostPurge => sigma_post,
        SigmaTiming::PrePurge => sigma_pre,
    };
    if !(sigma_x > 0.0 && sigma_x.is_finite()) {
        return Err(Error::Data(format!("instrument `{inst_name}` has zero variance in the window")));
    }

    let model = ModelData::new(&panel, &signal, &instrument, cfg.lags, cfg.shock).map_err(|e| match e {
        Error::Data(msg) => Error::Data(format!("window {} .. {}: {msg}", dates[0], dates[n - 1])),
        other => other,
    })?;
    let spec = model.spec;

    let provenance = Provenance {
        panel_file: FileRecord::of(&panel_t),
        instrument_file: inst_t.as_ref().map(FileRecord::of),
        window_start: dates[0].to_string(),
        window_end: dates[n - 1].to_string(),
        rows_in_window: n,
        rows_dropped_before: start,
        rows_dropped_after: n_panel - 1 - end,
        effective_obs: spec.n_obs,
        variables,
        transforms: rules,
        signal_column: cfg.signal_column.clone(),
        signal_rule: cfg.transform_for(&cfg.signal_column).to_string(),
        instrument_column: inst_name,
        instrument_inactive_months: inactive,
        purged: instrument.purged,
        purge_r_squared: instrument.purge_r_squared,
        sigma_x_pre_purge: sigma_pre,
        sigma_x_post_purge: sigma_post,
        sigma_x_used: sigma_x,
    };
    info!(
        "loaded {} variables over {} .. {} (T = {}, K = {}), sigma_x = {sigma_x:.6}",
        spec.n_vars,
        provenance.window_start,
        provenance.window_end,
        spec.n_obs,
        spec.regressor_count()
    );
    Ok(LoadedData {
        panel,
        signal,
        instrument,
        spec,
        model,
        sigma_x,
        provenance,
    })
}
