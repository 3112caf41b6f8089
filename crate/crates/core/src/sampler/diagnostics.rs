use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::model::{companion_from, is_explosive, max_abs_eigenvalue};

use super::store::DrawStore;
use super::transition::ProposalScales;
use super::ChainConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainDiagnostics {
    pub proposed_burn: usize,
    pub accepted_burn: usize,
    pub proposed_post: usize,
    pub accepted_post: usize,
    pub initial_proposal: ProposalScales,
    pub final_proposal: ProposalScales,
}

impl ChainDiagnostics {
    pub fn new(cfg: &ChainConfig) -> Self {
        Self {
            proposed_burn: 0,
            accepted_burn: 0,
            proposed_post: 0,
            accepted_post: 0,
            initial_proposal: cfg.proposal,
            final_proposal: cfg.proposal,
        }
    }

    pub(crate) fn record(&mut self, burn_in: bool, accepted: bool) {
        if burn_in {
            self.proposed_burn += 1;
            self.accepted_burn += accepted as usize;
        } else {
            self.proposed_post += 1;
            self.accepted_post += accepted as usize;
        }
    }

    pub fn acceptance_burn(&self) -> Option<f64> {
        (self.proposed_burn > 0).then(|| self.accepted_burn as f64 / self.proposed_burn as f64)
    }

    pub fn acceptance_post(&self) -> Option<f64> {
        (self.proposed_post > 0).then(|| self.accepted_post as f64 / self.proposed_post as f64)
    }
}

/// Retained draws whose companion matrix has spectral radius >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct StabilityCounts {
    pub draws: usize,
    pub explosive_regime1: usize,
    pub explosive_regime0: usize,
    /// At the sample-average transition weight of the draw.
    pub explosive_average: usize,
}

pub fn stability_counts(store: &DrawStore) -> Result<StabilityCounts> {
    let flags = store
        .draws
        .par_iter()
        .map(|d| -> Result<(bool, bool, bool)> {
            let pair = companion_from(&d.coefficients(&store.spec), &store.spec)?;
            let s_bar = d.weights.mean();
            Ok((
                is_explosive(max_abs_eigenvalue(&pair, 1.0)?),
                is_explosive(max_abs_eigenvalue(&pair, 0.0)?),
                is_explosive(max_abs_eigenvalue(&pair, s_bar)?),
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(StabilityCounts {
        draws: flags.len(),
        explosive_regime1: flags.iter().filter(|f| f.0).count(),
        explosive_regime0: flags.iter().filter(|f| f.1).count(),
        explosive_average: flags.iter().filter(|f| f.2).count(),
    })
}

/// Effective sample size with Geyer's initial monotone positive sequence.
pub fn effective_sample_size(x: &[f64]) -> f64 {
    let n = x.len();
    if n < 4 {
        return n as f64;
    }
    let mean = x.iter().sum::<f64>() / n as f64;
    let c0 = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n as f64;
    if c0 <= 0.0 {
        return n as f64;
    }
    let acf = |lag: usize| {
        (0..n - lag)
            .map(|t| (x[t] - mean) * (x[t + lag] - mean))
            .sum::<f64>()
            / (n as f64 * c0)
    };
    let mut sum = 0.0;
    let mut prev = f64::INFINITY;
    let mut k = 0;
    while 2 * k + 1 < n {
        let pair = acf(2 * k) + acf(2 * k + 1);
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev);
        sum += pair;
        prev = pair;
        k += 1;
    }
    let tau = 2.0 * sum - 1.0;
    n as f64 / tau.max(1.0 / n as f64)
}
