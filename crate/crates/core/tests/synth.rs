//! Synthetic generator and the grid oracle on the frozen fixture.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use stvar::model::Regime;
use stvar::priors::PriorConfig;
use stvar::sampler::{effective_priors, ModelData};
use stvar::synth::generate::{fixture_parameters, generate};
use stvar::synth::oracle::{cell_centres, grid_posterior_oracle, oracle_base_rows, oracle_dependent_rows, GridProblem};
use stvar::synth::validation::stationary_moments;
use stvar::ShockTag;

#[test]
fn long_linear_simulation_matches_implied_moments() {
    let checks = stationary_moments(&fixture_parameters(), 50_000, 0).unwrap();
    assert!(checks.len() >= 6);
    for c in &checks {
        assert!(c.relative_gap() < 0.02, "{}: implied {} sample {} (gap {:.4})", c.name, c.implied, c.sample, c.relative_gap());
    }
}

#[test]
fn sharply_identified_grid_mode_sits_on_the_truth() {
    let params = fixture_parameters();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let d = generate(&params, 20_000, &mut rng).unwrap();
    let model = ModelData::new(&d.panel, &d.signal, &d.instrument, 1, ShockTag::Tg).unwrap();
    let priors = effective_priors(&model, &PriorConfig::default());
    let rows = |b: nalgebra::DMatrix<f64>| -> Vec<Vec<f64>> { (0..b.nrows()).map(|r| b.row(r).iter().copied().collect()).collect() };
    let u: Vec<f64> = d.signal.values.iter().copied().collect();
    let problem = GridProblem {
        y: oracle_dependent_rows(&d.panel, 1),
        w: oracle_base_rows(&d.panel, &d.instrument, 1),
        u_lag: u[..u.len() - 1].to_vec(),
        block1: rows(params.coefficients.block(Regime::One)),
        block0: rows(params.coefficients.block(Regime::Zero)),
        omega: GridProblem::omega_from(params.h.as_slice(), params.sigma_sq.as_slice()).unwrap(),
        priors,
    };
    let (wg, wp) = (0.02, 0.05);
    let gammas = cell_centres(params.gamma - 20.0 * wg, params.gamma + 20.0 * wg, 40);
    let phis = cell_centres(params.phi - 20.0 * wp, params.phi + 20.0 * wp, 40);
    let post = grid_posterior_oracle(&problem, &gammas, &phis).unwrap();
    let (g, p) = post.mode();
    assert!((g - params.gamma).abs() <= wg && (p - params.phi).abs() <= wp, "mode ({g}, {p}) vs truth ({}, {})", params.gamma, params.phi);
}

#[test]
fn fixture_is_frozen() {
    let p = fixture_parameters();
    p.validate().unwrap();
    assert_eq!((p.n_vars(), p.lags()), (2, 1));
    assert_eq!(p.gamma, 0.02568127249698936);
    assert_eq!(p.phi, 2.1454677842627077);
}
