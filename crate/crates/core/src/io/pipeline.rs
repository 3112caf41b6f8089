//! Run orchestration: load, sample, summarize, write.
//!
//! Chains run concurrently; every output file is written once, by this
//! thread, after the chains have joined. Nothing written depends on wall
//! time or thread scheduling, so outputs are a function of inputs, config
//! and seed.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result, StageExt};
use crate::irf::{compute_surface, IrfOptions, IrfSurface};
use crate::model::ModelSpec;
use crate::priors::build_anchor_mean;
use crate::sampler::diagnostics::{effective_sample_size, stability_counts, StabilityCounts};
use crate::sampler::store::{Draw, DrawStore};
use crate::sampler::transition::ProposalScales;
use crate::sampler::{run_chain, ChainConfig, ChainRun};
use crate::synth::sbc::sbc_procedure;
use crate::synth::validation::{
    fixture, fixture_data, grid_mh_comparison, linear_nesting_comparison, recovery_study, stationary_moments,
    GridStudy,
};
use crate::synth::SbcReport;

use super::config::RunConfig;
use super::data::{load_and_validate, LoadedData};

pub const MANIFEST: &str = "manifest.json";
pub const IRF_FILE: &str = "irf.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.json";

pub fn draws_file(chain: usize) -> String {
    format!("draws_chain{chain}.csv")
}

/// Model dimensions as printed by `--dry-run`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpecSummary {
    pub n_vars: usize,
    pub lags: usize,
    pub shock: String,
    pub n_obs: usize,
    pub regime_width: usize,
    pub coefficients_j: usize,
    pub regressors_k: usize,
    pub covariance_r: usize,
    pub retained_draws_per_chain: usize,
    pub window: (String, String),
    pub sigma_x: f64,
}

impl SpecSummary {
    pub fn new(data: &LoadedData, chain: &ChainConfig) -> Self {
        let s = data.spec;
        Self {
            n_vars: s.n_vars,
            lags: s.lags,
            shock: s.shock.to_string(),
            n_obs: s.n_obs,
            regime_width: s.regime_width(),
            coefficients_j: s.coefficient_count(),
            regressors_k: s.regressor_count(),
            covariance_r: s.covariance_count(),
            retained_draws_per_chain: chain.retained(),
            window: (data.provenance.window_start.clone(), data.provenance.window_end.clone()),
            sigma_x: data.sigma_x,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ChainSummary {
    pub chain: usize,
    pub seed: u64,
    pub stream: u64,
    pub draws: usize,
    pub acceptance_burn: Option<f64>,
    pub acceptance_post: Option<f64>,
    pub initial_proposal: ProposalScales,
    pub final_proposal: ProposalScales,
}

/// ESS spread over the members of one parameter group, ESS summed over
/// chains.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EssSummary {
    pub members: usize,
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunDiagnostics {
    pub chains: Vec<ChainSummary>,
    pub ess: BTreeMap<String, EssSummary>,
    pub stability: StabilityCounts,
    pub irf_excluded_total: usize,
    pub irf_excluded_max_per_date: usize,
}

#[derive(Debug, Clone)]
pub struct EstimateOutputs {
    pub dir: PathBuf,
    pub spec: ModelSpec,
    pub store: DrawStore,
    pub surface: IrfSurface,
    pub diagnostics: RunDiagnostics,
    /// Output file name to SHA-256.
    pub files: BTreeMap<String, String>,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    Ok(hex::encode(Sha256::digest(fs::read(path)?)))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

fn absolute(p: &Path) -> PathBuf {
    fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf())
}

/// The config as it goes into a manifest: data paths made absolute so the
/// manifest re-executes from anywhere.
fn manifest_config(cfg: &RunConfig) -> BTreeMap<String, String> {
    let mut c = cfg.clone();
    c.panel_path = absolute(&c.panel_path);
    c.instrument_path = c.instrument_path.as_deref().map(absolute);
    c.output_dir = absolute(&c.output_dir);
    c.to_map()
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::Config(format!("cannot create {}: {e}", dir.display())))
}

pub fn dry_run(cfg: &RunConfig) -> Result<(LoadedData, SpecSummary)> {
    cfg.validate().stage("config")?;
    let data = load_and_validate(cfg).stage("load")?;
    let summary = SpecSummary::new(&data, &cfg.chain);
    Ok((data, summary))
}

fn chain_config(cfg: &RunConfig, i: usize) -> ChainConfig {
    ChainConfig {
        seed: cfg.chain.seed.wrapping_add(i as u64),
        stream: i as u64,
        ..cfg.chain.clone()
    }
}

fn ess_groups(runs: &[ChainRun]) -> BTreeMap<String, EssSummary> {
    let spec = runs[0].store.spec;
    type Pick = Box<dyn Fn(&Draw, usize) -> f64 + Sync>;
    let groups: Vec<(&str, usize, Pick)> = vec![
        ("gamma", 1, Box::new(|d: &Draw, _| d.gamma)),
        ("phi", 1, Box::new(|d: &Draw, _| d.phi)),
        ("sigma_sq", spec.n_vars, Box::new(|d: &Draw, i| d.sigma_sq[i])),
        ("a1", spec.coefficient_count(), Box::new(|d: &Draw, i| d.a1[i])),
        ("a0", spec.coefficient_count(), Box::new(|d: &Draw, i| d.a0[i])),
        ("a_tilde", spec.coefficient_count(), Box::new(|d: &Draw, i| d.a_tilde[i])),
        ("h", spec.covariance_count(), Box::new(|d: &Draw, i| d.h[i])),
    ];
    let mut out = BTreeMap::new();
    for (name, n, pick) in &groups {
        if *n == 0 {
            continue;
        }
        let mut ess: Vec<f64> = (0..*n)
            .into_par_iter()
            .map(|i| {
                runs.iter()
                    .map(|r| effective_sample_size(&r.store.trace(|d| pick(d, i))))
                    .sum::<f64>()
            })
            .collect();
        ess.sort_by(f64::total_cmp);
        out.insert(
            name.to_string(),
            EssSummary {
                members: *n,
                min: ess[0],
                median: crate::irf::quantile_sorted(&ess, 0.5),
                max: ess[ess.len() - 1],
            },
        );
    }
    out
}

fn irf_options(cfg: &RunConfig) -> IrfOptions {
    IrfOptions {
        horizons: cfg.horizons.clone(),
        mode: cfg.impact_mode,
        min_valid: cfg.min_valid_draws,
    }
}

/// `estimate`: load, run the chains, write draws, IRF, diagnostics and the
/// manifest.
pub fn estimate(cfg: &RunConfig) -> Result<EstimateOutputs> {
    let (data, summary) = dry_run(cfg)?;
    let dir = cfg.output_dir.clone();
    ensure_dir(&dir)?;
    let anchor = build_anchor_mean(&data.panel.transforms, &data.spec, cfg.priors.anchor_own_lag).stage("priors")?;

    info!("running {} chain(s) of {} iterations", cfg.chains, cfg.chain.n_iter);
    let results: Vec<_> = (0..cfg.chains)
        .into_par_iter()
        .map(|i| run_chain(&data.model, &cfg.priors, anchor.clone(), &chain_config(cfg, i)))
        .collect();
    let mut runs = Vec::with_capacity(cfg.chains);
    let mut files = BTreeMap::new();
    for (i, r) in results.into_iter().enumerate() {
        match r {
            Ok(run) => {
                let name = draws_file(i);
                run.store.write_csv(&dir.join(&name)).stage("write")?;
                files.insert(name.clone(), sha256_file(&dir.join(&name))?);
                runs.push(run);
            }
            Err(fail) => {
                let name = format!("draws_chain{i}.partial.csv");
                if let Err(e) = fail.partial.store.write_csv(&dir.join(&name)) {
                    warn!("could not write partial draws for chain {i}: {e}");
                }
                return Err(Error::from(fail).in_stage("sampler"));
            }
        }
    }

    let chains: Vec<ChainSummary> = runs
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let c = chain_config(cfg, i);
            ChainSummary {
                chain: i,
                seed: c.seed,
                stream: c.stream,
                draws: r.store.len(),
                acceptance_burn: r.diagnostics.acceptance_burn(),
                acceptance_post: r.diagnostics.acceptance_post(),
                initial_proposal: r.diagnostics.initial_proposal,
                final_proposal: r.diagnostics.final_proposal,
            }
        })
        .collect();
    for c in &chains {
        if let Some(a) = c.acceptance_post {
            let (lo, hi) = cfg.chain.target_accept;
            if !(lo..=hi).contains(&a) && !cfg.chain.fix_transition {
                warn!("chain {}: post-burn-in acceptance {a:.3} outside [{lo}, {hi}]", c.chain);
            }
        }
    }
    let ess = ess_groups(&runs);
    let stores: Vec<DrawStore> = runs.iter().map(|r| r.store.clone()).collect();
    let store = DrawStore::merge(&stores).stage("sampler")?;
    let stability = stability_counts(&store).stage("diagnostics")?;

    let surface = compute_surface(&store, data.sigma_x, &data.panel.names, &irf_options(cfg)).stage("irf")?;
    surface.write_csv(&dir.join(IRF_FILE)).stage("write")?;
    files.insert(IRF_FILE.into(), sha256_file(&dir.join(IRF_FILE))?);

    let diagnostics = RunDiagnostics {
        chains,
        ess,
        stability,
        irf_excluded_total: surface.n_excluded.iter().sum(),
        irf_excluded_max_per_date: surface.n_excluded.iter().copied().max().unwrap_or(0),
    };
    write_json(&dir.join(DIAGNOSTICS_FILE), &diagnostics).stage("write")?;
    files.insert(DIAGNOSTICS_FILE.into(), sha256_file(&dir.join(DIAGNOSTICS_FILE))?);

    let manifest = json!({
        "command": "estimate",
        "version": env!("CARGO_PKG_VERSION"),
        "config": manifest_config(cfg),
        "config_hash": cfg.hash(),
        "model": summary,
        "provenance": data.provenance,
        "acceptance_post": diagnostics.chains.iter().map(|c| c.acceptance_post).collect::<Vec<_>>(),
        "stability": diagnostics.stability,
        "outputs": files,
    });
    write_json(&dir.join(MANIFEST), &manifest).stage("write")?;
    info!("wrote {} files to {}", files.len() + 1, dir.display());
    Ok(EstimateOutputs {
        dir,
        spec: data.spec,
        store,
        surface,
        diagnostics,
        files,
    })
}

/// Draw stores in `dir` named `draws_chain<i>.csv`, in chain order.
pub fn find_draw_stores(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found: Vec<(usize, PathBuf)> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let name = e.file_name().to_string_lossy().to_string();
            let i = name.strip_prefix("draws_chain")?.strip_suffix(".csv")?.parse().ok()?;
            Some((i, e.path()))
        })
        .collect();
    found.sort();
    if found.is_empty() {
        return Err(Error::Config(format!("no draws_chain<i>.csv files in {}", dir.display())));
    }
    Ok(found.into_iter().map(|(_, p)| p).collect())
}

/// `irf`: recompute the surface from saved draw stores. The data are
/// reloaded for `sigma_x`, variable names and the window check.
pub fn irf_from_stores(cfg: &RunConfig, stores: &[PathBuf]) -> Result<IrfSurface> {
    let (data, _) = dry_run(cfg)?;
    let mut loaded = Vec::new();
    let mut inputs = BTreeMap::new();
    for p in stores {
        let s = DrawStore::read_csv(p, cfg.shock).stage("read draws")?;
        if s.spec.n_vars != data.spec.n_vars || s.spec.lags != data.spec.lags || s.dates != data.model.dates {
            return Err(Error::Data(format!(
                "{} was not produced from this configuration's data (M, P or window differ)",
                p.display()
            ))
            .in_stage("read draws"));
        }
        inputs.insert(p.display().to_string(), sha256_file(p)?);
        loaded.push(s);
    }
    let store = DrawStore::merge(&loaded).stage("read draws")?;
    ensure_dir(&cfg.output_dir)?;
    let surface = compute_surface(&store, data.sigma_x, &data.panel.names, &irf_options(cfg)).stage("irf")?;
    let out = cfg.output_dir.join(IRF_FILE);
    surface.write_csv(&out).stage("write")?;
    let manifest = json!({
        "command": "irf",
        "version": env!("CARGO_PKG_VERSION"),
        "config": manifest_config(cfg),
        "config_hash": cfg.hash(),
        "draw_stores": inputs,
        "outputs": { IRF_FILE: sha256_file(&out)? },
    });
    write_json(&cfg.output_dir.join("irf_manifest.json"), &manifest).stage("write")?;
    Ok(surface)
}

/// `sbc`: simulation-based calibration with the configured sizes.
pub fn run_sbc(cfg: &RunConfig) -> Result<SbcReport> {
    cfg.validate().stage("config")?;
    ensure_dir(&cfg.output_dir)?;
    let report = sbc_procedure(&cfg.sbc).stage("sbc")?;
    let dir = &cfg.output_dir;
    report.write_histograms_csv(&dir.join("sbc_histograms.csv")).stage("write")?;
    report.write_summary_json(&dir.join("sbc_summary.json")).stage("write")?;
    let manifest = json!({
        "command": "sbc",
        "version": env!("CARGO_PKG_VERSION"),
        "config": manifest_config(cfg),
        "config_hash": cfg.hash(),
        "outputs": {
            "sbc_histograms.csv": sha256_file(&dir.join("sbc_histograms.csv"))?,
            "sbc_summary.json": sha256_file(&dir.join("sbc_summary.json"))?,
        },
    });
    write_json(&dir.join(MANIFEST), &manifest).stage("write")?;
    Ok(report)
}

/// `validate --studies`: the synthetic validation studies on the frozen
/// fixture, written to `validation.json`. Sizes are the acceptance-suite
/// settings scaled by `scale` (1.0 is full size).
pub fn run_studies(cfg: &RunConfig, scale: f64) -> Result<serde_json::Value> {
    ensure_dir(&cfg.output_dir)?;
    let sized = |n: usize| ((n as f64 * scale).round() as usize).max(1);
    let params = fixture();
    let priors = crate::priors::PriorConfig::default();
    let seed = cfg.chain.seed;

    let chain = ChainConfig {
        n_iter: sized(12_000).max(2_010),
        n_burn: 2_000,
        thin: 10,
        ..ChainConfig::default()
    };
    let coverage = recovery_study(&params, &priors, &chain, sized(100), 11 + seed, 0.68).stage("recovery")?;

    let data = fixture_data(&params, 7 + seed, 0).stage("grid")?;
    let study = GridStudy {
        samples: sized(1_000_000),
        seed: 17 + seed,
        ..GridStudy::default()
    };
    let (grid, _) = grid_mh_comparison(&params, &data, &priors, &study).stage("grid")?;

    let n = sized(40_000).max(10_000);
    let paper = linear_nesting_comparison(&data, 1, &priors, n, 5_000, 5, 3 + seed, false).stage("nesting")?;
    let exact = linear_nesting_comparison(&data, 1, &priors, n, 5_000, 5, 3 + seed, true).stage("nesting")?;
    let moments = stationary_moments(&params, 50_000, seed).stage("moments")?;

    let value = json!({
        "coverage": coverage,
        "grid": grid,
        "nesting_paper_scheme": paper,
        "nesting_exact_scheme": exact,
        "stationary_moments": moments,
    });
    write_json(&cfg.output_dir.join("validation.json"), &value).stage("write")?;
    Ok(value)
}
