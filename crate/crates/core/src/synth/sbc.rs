//! Simulation-based calibration: draw parameters from the prior, simulate,
//! sample, and check that the truth's rank among the retained draws is
//! uniform.

use std::path::Path;

use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::error::{Error, Result};
use crate::model::{ModelSpec, ShockTag};
use crate::priors::PriorConfig;
use crate::sampler::{run_chain, ChainConfig, Draw, ModelData};

use super::generate::{draw_from_prior, generate_with_signal, simulate_signal, SignalProcess, TrueParameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcConfig {
    pub n_vars: usize,
    pub lags: usize,
    pub n_obs: usize,
    pub replicates: usize,
    pub chain: ChainConfig,
    /// Prior the truth is drawn from.
    pub generator_priors: PriorConfig,
    /// Prior the sampler uses; differs from the above only in mutation runs.
    pub sampler_priors: PriorConfig,
    pub seed: u64,
    pub signal: SignalProcess,
    pub instrument_sd: f64,
    pub bins: usize,
    pub max_prior_tries: usize,
}

impl Default for SbcConfig {
    fn default() -> Self {
        Self {
            n_vars: 2,
            lags: 1,
            n_obs: 120,
            replicates: 200,
            chain: ChainConfig {
                n_iter: 4000,
                n_burn: 1000,
                thin: 10,
                adapt_window: 10,
                ..ChainConfig::default()
            },
            generator_priors: PriorConfig::default(),
            sampler_priors: PriorConfig::default(),
            seed: 1,
            signal: SignalProcess::default(),
            instrument_sd: 1.0,
            bins: 20,
            max_prior_tries: 100_000,
        }
    }
}

impl SbcConfig {
    /// Sampler uses a variance-prior scale ten times too small.
    pub fn mutated(mut self) -> Self {
        self.sampler_priors.sigma_scale = self.generator_priors.sigma_scale / 10.0;
        self
    }
}

/// A tracked scalar: its value in the truth and in a draw.
struct Statistic {
    name: String,
    truth: Box<dyn Fn(&TrueParameters) -> f64 + Sync + Send>,
    draw: Box<dyn Fn(&Draw) -> f64 + Sync + Send>,
}

fn statistics(spec: &ModelSpec) -> Vec<Statistic> {
    let mut out = vec![
        Statistic {
            name: "gamma".into(),
            truth: Box::new(|p| p.gamma),
            draw: Box::new(|d| d.gamma),
        },
        Statistic {
            name: "phi".into(),
            truth: Box::new(|p| p.phi),
            draw: Box::new(|d| d.phi),
        },
    ];
    for m in 0..spec.n_vars.min(2) {
        out.push(Statistic {
            name: format!("sigma_sq_{}", m + 1),
            truth: Box::new(move |p| p.sigma_sq[m]),
            draw: Box::new(move |d| d.sigma_sq[m]),
        });
    }
    let own = spec.lag_index(0, 1, 0);
    let cross = spec.lag_index(0, 1, 1.min(spec.n_vars - 1));
    let entries = [
        ("own_lag", own),
        ("cross_lag", cross),
        ("intercept", spec.intercept_index(0)),
        ("delta", spec.impact_index(0)),
    ];
    for (regime, is_one) in [("a1", true), ("a0", false)] {
        for (label, j) in entries {
            out.push(Statistic {
                name: format!("{regime}_{label}_1"),
                truth: Box::new(move |p| {
                    if is_one {
                        p.coefficients.regime1[j]
                    } else {
                        p.coefficients.regime0[j]
                    }
                }),
                draw: Box::new(move |d| if is_one { d.a1[j] } else { d.a0[j] }),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcParameter {
    pub name: String,
    pub ranks: Vec<usize>,
    pub histogram: Vec<usize>,
    pub chi_square: f64,
    pub p_value: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SbcReport {
    pub requested: usize,
    pub completed: usize,
    /// `(replicate, message)` for each sampler fault.
    pub faults: Vec<(usize, String)>,
    /// Draws retained per replicate; ranks lie in `0..=n_draws`.
    pub n_draws: usize,
    pub bins: usize,
    pub parameters: Vec<SbcParameter>,
    /// Post-adaptation acceptance rate per completed replicate.
    pub acceptance: Vec<f64>,
}

impl SbcReport {
    /// No parameter rejects uniformity at level `alpha`.
    pub fn all_uniform(&self, alpha: f64) -> bool {
        self.parameters.iter().all(|p| p.p_value > alpha)
    }

    pub fn parameter(&self, name: &str) -> Option<&SbcParameter> {
        self.parameters.iter().find(|p| p.name == name)
    }

    /// One row per (parameter, bin).
    pub fn write_histograms_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["parameter", "bin", "count", "expected"])?;
        let probs = bin_probabilities(self.n_draws, self.bins);
        for p in &self.parameters {
            for (b, c) in p.histogram.iter().enumerate() {
                w.write_record([
                    p.name.clone(),
                    b.to_string(),
                    c.to_string(),
                    (probs[b] * self.completed as f64).to_string(),
                ])?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_summary_json(&self, path: &Path) -> Result<()> {
        #[derive(Serialize)]
        struct Row<'a> {
            name: &'a str,
            chi_square: f64,
            p_value: f64,
        }
        #[derive(Serialize)]
        struct Summary<'a> {
            requested: usize,
            completed: usize,
            faults: &'a [(usize, String)],
            n_draws: usize,
            bins: usize,
            parameters: Vec<Row<'a>>,
        }
        let s = Summary {
            requested: self.requested,
            completed: self.completed,
            faults: &self.faults,
            n_draws: self.n_draws,
            bins: self.bins,
            parameters: self
                .parameters
                .iter()
                .map(|p| Row {
                    name: &p.name,
                    chi_square: p.chi_square,
                    p_value: p.p_value,
                })
                .collect(),
        };
        std::fs::write(path, serde_json::to_string_pretty(&s)?)?;
        Ok(())
    }
}

fn bin_of(rank: usize, n_draws: usize, bins: usize) -> usize {
    rank * bins / (n_draws + 1)
}

/// Exact probability of each bin under a uniform rank on `0..=n_draws`.
pub fn bin_probabilities(n_draws: usize, bins: usize) -> Vec<f64> {
    let mut counts = vec![0usize; bins];
    for r in 0..=n_draws {
        counts[bin_of(r, n_draws, bins)] += 1;
    }
    counts.iter().map(|c| *c as f64 / (n_draws + 1) as f64).collect()
}

/// Pearson statistic and upper-tail p-value with `bins - 1` degrees of
/// freedom.
pub fn chi_square_uniformity(ranks: &[usize], n_draws: usize, bins: usize) -> (Vec<usize>, f64, f64) {
    let mut hist = vec![0usize; bins];
    for &r in ranks {
        hist[bin_of(r, n_draws, bins)] += 1;
    }
    if ranks.is_empty() {
        return (hist, 0.0, 1.0);
    }
    let n = ranks.len() as f64;
    let probs = bin_probabilities(n_draws, bins);
    let stat: f64 = hist
        .iter()
        .zip(&probs)
        .map(|(o, p)| {
            let e = n * p;
            (*o as f64 - e).powi(2) / e
        })
        .sum();
    let dist = ChiSquared::new((bins - 1) as f64).expect("bins >= 2");
    (hist, stat, 1.0 - dist.cdf(stat))
}

struct ReplicateOutcome {
    ranks: Vec<usize>,
    acceptance: f64,
}

fn replicate(r: usize, cfg: &SbcConfig, stats: &[Statistic]) -> Result<ReplicateOutcome> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(r as u64);
    let n_rows = cfg.n_obs + cfg.lags;
    let u = simulate_signal(cfg.signal, n_rows, &mut rng);
    let kept = &u[u.len() - n_rows..];
    let lo = kept.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = kept.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let gen_priors = cfg.generator_priors.clone().with_signal_bounds(lo, hi);
    let j = cfg.n_vars * (cfg.n_vars * cfg.lags + 2);
    let anchor = DVector::zeros(j);
    let truth = draw_from_prior(
        cfg.n_vars,
        cfg.lags,
        &anchor,
        &gen_priors,
        cfg.signal,
        cfg.instrument_sd,
        &mut rng,
        cfg.max_prior_tries,
    )?;
    let data = generate_with_signal(&truth, &u, &mut rng)?;
    let model = ModelData::new(&data.panel, &data.signal, &data.instrument, cfg.lags, ShockTag::Tg)?;
    let chain = ChainConfig {
        seed: rng.random(),
        stream: r as u64,
        ..cfg.chain.clone()
    };
    let run = run_chain(&model, &cfg.sampler_priors, anchor, &chain)?;
    let ranks = stats
        .iter()
        .map(|s| {
            let t = (s.truth)(&truth);
            run.store.draws.iter().filter(|d| (s.draw)(d) < t).count()
        })
        .collect();
    Ok(ReplicateOutcome {
        ranks,
        acceptance: run.diagnostics.acceptance_post().unwrap_or(f64::NAN),
    })
}

/// Runs all replicates in parallel; faults are recorded and skipped.
pub fn sbc_procedure(cfg: &SbcConfig) -> Result<SbcReport> {
    if cfg.bins < 2 {
        return Err(Error::Config("SBC needs at least two bins".into()));
    }
    cfg.chain.validate()?;
    let spec = ModelSpec {
        n_vars: cfg.n_vars,
        lags: cfg.lags,
        shock: ShockTag::Tg,
        n_obs: cfg.n_obs,
    };
    let stats = statistics(&spec);
    let n_draws = cfg.chain.retained();
    let outcomes: Vec<(usize, Result<ReplicateOutcome>)> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| (r, replicate(r, cfg, &stats)))
        .collect();
    let mut faults = Vec::new();
    let mut per_param: Vec<Vec<usize>> = vec![Vec::new(); stats.len()];
    let mut acceptance = Vec::new();
    for (r, o) in outcomes {
        match o {
            Ok(o) => {
                for (slot, rank) in per_param.iter_mut().zip(o.ranks) {
                    slot.push(rank);
                }
                acceptance.push(o.acceptance);
            }
            Err(e) => faults.push((r, e.to_string())),
        }
    }
    let parameters = stats
        .iter()
        .zip(per_param)
        .map(|(s, ranks)| {
            let (histogram, chi_square, p_value) = chi_square_uniformity(&ranks, n_draws, cfg.bins);
            SbcParameter {
                name: s.name.clone(),
                ranks,
                histogram,
                chi_square,
                p_value,
            }
        })
        .collect();
    Ok(SbcReport {
        requested: cfg.replicates,
        completed: acceptance.len(),
        faults,
        n_draws,
        bins: cfg.bins,
        parameters,
        acceptance,
    })
}
