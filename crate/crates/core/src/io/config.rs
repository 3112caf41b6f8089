//! Flat `key = value` run configuration.
//!
//! Every key has a default, so an empty file is a valid (if useless)
//! configuration. Unknown and repeated keys are rejected. The resolved
//! configuration can be written back as a sorted key map, which is what the
//! run manifest stores and what `--config manifest.json` reads.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use sha2::{Digest, Sha256};

use crate::date::YearMonth;
use crate::error::{Error, Result};
use crate::instruments::TransformRule;
use crate::irf::{ImpactMode, DEFAULT_HORIZONS, MIN_VALID_DRAWS};
use crate::model::ShockTag;
use crate::priors::PriorConfig;
use crate::sampler::ChainConfig;
use crate::synth::SbcConfig;

/// Which instrument standard deviation scales the shock.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SigmaTiming {
    #[default]
    PostPurge,
    PrePurge,
}

impl FromStr for SigmaTiming {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "post_purge" => Ok(Self::PostPurge),
            "pre_purge" => Ok(Self::PrePurge),
            _ => Err(Error::Config(format!("irf.sigma_x must be post_purge or pre_purge, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for SigmaTiming {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::PostPurge => "post_purge",
            Self::PrePurge => "pre_purge",
        })
    }
}

/// What to do with instrument months that are blank in the input.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MissingPolicy {
    /// Any blank inside the sample window is an error.
    #[default]
    Error,
    /// Blank months enter as zero and are excluded from purging and from
    /// the instrument standard deviation.
    Inactive,
}

impl FromStr for MissingPolicy {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "error" => Ok(Self::Error),
            "inactive" => Ok(Self::Inactive),
            _ => Err(Error::Config(format!("instrument.missing must be error or inactive, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for MissingPolicy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Error => "error",
            Self::Inactive => "inactive",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub panel_path: PathBuf,
    /// Separate instrument file; `None` reads the instrument from the panel.
    pub instrument_path: Option<PathBuf>,
    /// Empty means the upper-cased shock tag (`TG`, `FG`, `QE`).
    pub instrument_column: String,
    pub signal_column: String,
    /// Endogenous variables in model order; empty means every panel column
    /// other than the instrument.
    pub variables: Vec<String>,
    pub transforms: BTreeMap<String, TransformRule>,
    pub sample_start: Option<YearMonth>,
    pub sample_end: Option<YearMonth>,
    pub shock: ShockTag,
    pub lags: usize,
    pub chains: usize,
    pub chain: ChainConfig,
    pub priors: PriorConfig,
    pub horizons: Vec<usize>,
    pub impact_mode: ImpactMode,
    pub sigma_timing: SigmaTiming,
    pub min_valid_draws: usize,
    pub purge: bool,
    pub instrument_missing: MissingPolicy,
    pub output_dir: PathBuf,
    pub sbc: SbcConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            panel_path: PathBuf::from("data/panel.csv"),
            instrument_path: None,
            instrument_column: String::new(),
            signal_column: "EPU".into(),
            variables: Vec::new(),
            transforms: BTreeMap::new(),
            sample_start: None,
            sample_end: None,
            shock: ShockTag::Tg,
            lags: 4,
            chains: 1,
            chain: ChainConfig::default(),
            priors: PriorConfig::default(),
            horizons: DEFAULT_HORIZONS.to_vec(),
            impact_mode: ImpactMode::Weighted,
            sigma_timing: SigmaTiming::PostPurge,
            min_valid_draws: MIN_VALID_DRAWS,
            purge: true,
            instrument_missing: MissingPolicy::Error,
            output_dir: PathBuf::from("out"),
            sbc: SbcConfig::default(),
        }
    }
}

fn parse<T: FromStr>(key: &str, v: &str) -> Result<T>
where
    T::Err: Display,
{
    v.parse::<T>()
        .map_err(|e| Error::Config(format!("`{key}`: cannot parse `{v}`: {e}")))
}

fn parse_bool(key: &str, v: &str) -> Result<bool> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(Error::Config(format!("`{key}`: expected true or false, got `{v}`"))),
    }
}

fn parse_list<T: FromStr>(key: &str, v: &str) -> Result<Vec<T>>
where
    T::Err: Display,
{
    v.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

fn join<T: Display>(v: &[T]) -> String {
    v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",")
}

/// Parses `key = value` lines; `#` starts a comment. Returns the lines'
/// key map with line numbers for error messages.
pub fn parse_key_values(text: &str) -> Result<BTreeMap<String, String>> {
    let mut out = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`, got `{line}`", n + 1)))?;
        let k = k.trim().to_string();
        if k.is_empty() {
            return Err(Error::Config(format!("line {}: empty key", n + 1)));
        }
        if out.insert(k.clone(), v.trim().to_string()).is_some() {
            return Err(Error::Config(format!("line {}: `{k}` given twice", n + 1)));
        }
    }
    Ok(out)
}

impl RunConfig {
    /// Applies one key. Used for file entries and CLI overrides alike.
    pub fn set(&mut self, key: &str, v: &str) -> Result<()> {
        if let Some(name) = key.strip_prefix("transform.") {
            if name.is_empty() {
                return Err(Error::Config("`transform.` needs a column name".into()));
            }
            self.transforms.insert(name.to_string(), v.parse()?);
            return Ok(());
        }
        let opt_month = |v: &str| -> Result<Option<YearMonth>> {
            if v.is_empty() {
                Ok(None)
            } else {
                parse(key, v).map(Some)
            }
        };
        match key {
            "data.panel" => self.panel_path = v.into(),
            "data.instrument" => self.instrument_path = (!v.is_empty()).then(|| v.into()),
            "data.instrument_column" => self.instrument_column = v.into(),
            "data.signal_column" => self.signal_column = v.into(),
            "data.variables" => self.variables = parse_list(key, v)?,
            "sample.start" => self.sample_start = opt_month(v)?,
            "sample.end" => self.sample_end = opt_month(v)?,
            "model.shock" => self.shock = parse(key, v)?,
            "model.lags" => self.lags = parse(key, v)?,
            "chain.count" => self.chains = parse(key, v)?,
            "chain.n_iter" => self.chain.n_iter = parse(key, v)?,
            "chain.n_burn" => self.chain.n_burn = parse(key, v)?,
            "chain.thin" => self.chain.thin = parse(key, v)?,
            "chain.seed" => self.chain.seed = parse(key, v)?,
            "chain.adapt_window" => self.chain.adapt_window = parse(key, v)?,
            "chain.accept_low" => self.chain.target_accept.0 = parse(key, v)?,
            "chain.accept_high" => self.chain.target_accept.1 = parse(key, v)?,
            "chain.gamma_proposal_var" => self.chain.proposal.gamma_var = parse(key, v)?,
            "chain.phi_proposal_var" => self.chain.proposal.phi_var = parse(key, v)?,
            "chain.fix_transition" => self.chain.fix_transition = parse_bool(key, v)?,
            "chain.exact_triangular" => self.chain.exact_triangular = parse_bool(key, v)?,
            "chain.init_gamma" => self.chain.init_gamma = parse(key, v)?,
            "chain.init_phi" => self.chain.init_phi = parse(key, v)?,
            "chain.init_sigma_sq" => self.chain.init_sigma_sq = parse(key, v)?,
            "prior.sigma_shape" => self.priors.sigma_shape = parse(key, v)?,
            "prior.sigma_scale" => self.priors.sigma_scale = parse(key, v)?,
            "prior.gamma_mean" => self.priors.gamma_mean = parse(key, v)?,
            "prior.gamma_var" => self.priors.gamma_var = parse(key, v)?,
            "prior.gamma_lower" => self.priors.gamma_bounds.0 = parse(key, v)?,
            "prior.gamma_upper" => self.priors.gamma_bounds.1 = parse(key, v)?,
            "prior.phi_mean" => self.priors.phi_mean = parse(key, v)?,
            "prior.phi_var" => self.priors.phi_var = parse(key, v)?,
            "prior.phi_form" => self.priors.phi_form = parse(key, v)?,
            "prior.anchor" => self.priors.anchor_own_lag = parse(key, v)?,
            "irf.horizons" => self.horizons = parse_list(key, v)?,
            "irf.mode" => self.impact_mode = parse(key, v)?,
            "irf.sigma_x" => self.sigma_timing = v.parse()?,
            "irf.min_valid_draws" => self.min_valid_draws = parse(key, v)?,
            "instrument.purge" => self.purge = parse_bool(key, v)?,
            "instrument.missing" => self.instrument_missing = v.parse()?,
            "output.dir" => self.output_dir = v.into(),
            "sbc.replicates" => self.sbc.replicates = parse(key, v)?,
            "sbc.n_obs" => self.sbc.n_obs = parse(key, v)?,
            "sbc.n_vars" => self.sbc.n_vars = parse(key, v)?,
            "sbc.lags" => self.sbc.lags = parse(key, v)?,
            "sbc.seed" => self.sbc.seed = parse(key, v)?,
            "sbc.bins" => self.sbc.bins = parse(key, v)?,
            "sbc.n_iter" => self.sbc.chain.n_iter = parse(key, v)?,
            "sbc.n_burn" => self.sbc.chain.n_burn = parse(key, v)?,
            "sbc.thin" => self.sbc.chain.thin = parse(key, v)?,
            "sbc.adapt_window" => self.sbc.chain.adapt_window = parse(key, v)?,
            "sbc.sampler_sigma_scale" => self.sbc.sampler_priors.sigma_scale = parse(key, v)?,
            _ => return Err(Error::Config(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<Self> {
        let mut cfg = Self::default();
        for (k, v) in map {
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        Self::from_map(&parse_key_values(text)?)
    }

    /// Reads a `.conf` file, or the `config` object of a run manifest.
    /// Relative data and output paths resolve against the file's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg = if path.extension().is_some_and(|e| e == "json") {
            let v: serde_json::Value = serde_json::from_str(&text)?;
            let obj = v
                .get("config")
                .and_then(|c| c.as_object())
                .ok_or_else(|| Error::Config(format!("{} has no `config` object", path.display())))?;
            let mut map = BTreeMap::new();
            for (k, v) in obj {
                let s = v
                    .as_str()
                    .ok_or_else(|| Error::Config(format!("manifest key `{k}` is not a string")))?;
                map.insert(k.clone(), s.to_string());
            }
            Self::from_map(&map)?
        } else {
            Self::parse_str(&text)?
        };
        if let Some(base) = path.parent() {
            cfg.rebase(base);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.panel_path);
        if let Some(p) = self.instrument_path.as_mut() {
            fix(p);
        }
        fix(&mut self.output_dir);
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(1..=24).contains(&self.lags) {
            return bad(format!("model.lags must be in 1..=24, got {}", self.lags));
        }
        if !(1..=64).contains(&self.chains) {
            return bad(format!("chain.count must be in 1..=64, got {}", self.chains));
        }
        if self.horizons.is_empty() || self.horizons.iter().any(|h| *h > 600) {
            return bad("irf.horizons must be a non-empty list of integers <= 600".into());
        }
        if self.min_valid_draws == 0 {
            return bad("irf.min_valid_draws must be >= 1".into());
        }
        if self.signal_column.is_empty() {
            return bad("data.signal_column must not be empty".into());
        }
        if let (Some(a), Some(b)) = (self.sample_start, self.sample_end) {
            if b < a {
                return bad(format!("sample.end {b} is before sample.start {a}"));
            }
        }
        if self.sbc.bins < 2 || self.sbc.n_vars == 0 || self.sbc.lags == 0 {
            return bad("sbc.bins must be >= 2 and sbc sizes >= 1".into());
        }
        self.chain.validate()?;
        self.sbc.chain.validate()?;
        self.priors.validate()?;
        self.sbc.sampler_priors.validate()?;
        Ok(())
    }

    /// Every resolved setting as strings, keyed as in the config file.
    pub fn to_map(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        let month = |v: Option<YearMonth>| v.map(|d| d.to_string()).unwrap_or_default();
        put("data.panel", self.panel_path.display().to_string());
        put(
            "data.instrument",
            self.instrument_path.as_ref().map(|p| p.display().to_string()).unwrap_or_default(),
        );
        put("data.instrument_column", self.instrument_column.clone());
        put("data.signal_column", self.signal_column.clone());
        put("data.variables", self.variables.join(","));
        put("sample.start", month(self.sample_start));
        put("sample.end", month(self.sample_end));
        put("model.shock", self.shock.to_string());
        put("model.lags", self.lags.to_string());
        put("chain.count", self.chains.to_string());
        let c = &self.chain;
        put("chain.n_iter", c.n_iter.to_string());
        put("chain.n_burn", c.n_burn.to_string());
        put("chain.thin", c.thin.to_string());
        put("chain.seed", c.seed.to_string());
        put("chain.adapt_window", c.adapt_window.to_string());
        put("chain.accept_low", c.target_accept.0.to_string());
        put("chain.accept_high", c.target_accept.1.to_string());
        put("chain.gamma_proposal_var", c.proposal.gamma_var.to_string());
        put("chain.phi_proposal_var", c.proposal.phi_var.to_string());
        put("chain.fix_transition", c.fix_transition.to_string());
        put("chain.exact_triangular", c.exact_triangular.to_string());
        put("chain.init_gamma", c.init_gamma.to_string());
        put("chain.init_phi", c.init_phi.to_string());
        put("chain.init_sigma_sq", c.init_sigma_sq.to_string());
        let p = &self.priors;
        put("prior.sigma_shape", p.sigma_shape.to_string());
        put("prior.sigma_scale", p.sigma_scale.to_string());
        put("prior.gamma_mean", p.gamma_mean.to_string());
        put("prior.gamma_var", p.gamma_var.to_string());
        put("prior.gamma_lower", p.gamma_bounds.0.to_string());
        put("prior.gamma_upper", p.gamma_bounds.1.to_string());
        put("prior.phi_mean", p.phi_mean.to_string());
        put("prior.phi_var", p.phi_var.to_string());
        put("prior.phi_form", p.phi_form.to_string());
        put("prior.anchor", p.anchor_own_lag.to_string());
        put("irf.horizons", join(&self.horizons));
        put("irf.mode", self.impact_mode.to_string());
        put("irf.sigma_x", self.sigma_timing.to_string());
        put("irf.min_valid_draws", self.min_valid_draws.to_string());
        put("instrument.purge", self.purge.to_string());
        put("instrument.missing", self.instrument_missing.to_string());
        put("output.dir", self.output_dir.display().to_string());
        let s = &self.sbc;
        put("sbc.replicates", s.replicates.to_string());
        put("sbc.n_obs", s.n_obs.to_string());
        put("sbc.n_vars", s.n_vars.to_string());
        put("sbc.lags", s.lags.to_string());
        put("sbc.seed", s.seed.to_string());
        put("sbc.bins", s.bins.to_string());
        put("sbc.n_iter", s.chain.n_iter.to_string());
        put("sbc.n_burn", s.chain.n_burn.to_string());
        put("sbc.thin", s.chain.thin.to_string());
        put("sbc.adapt_window", s.chain.adapt_window.to_string());
        put("sbc.sampler_sigma_scale", s.sampler_priors.sigma_scale.to_string());
        for (name, rule) in &self.transforms {
            put(&format!("transform.{name}"), rule.to_string());
        }
        m
    }

    /// `key = value` lines in key order; the hashing form.
    pub fn canonical(&self) -> String {
        self.to_map()
            .iter()
            .map(|(k, v)| format!("{k} = {v}\n"))
            .collect()
    }

    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.canonical().as_bytes()))
    }

    pub fn instrument_column_name(&self) -> String {
        if self.instrument_column.is_empty() {
            self.shock.to_string().to_uppercase()
        } else {
            self.instrument_column.clone()
        }
    }

    pub fn transform_for(&self, column: &str) -> TransformRule {
        self.transforms.get(column).copied().unwrap_or_default()
    }
}
