//! Lie splitting of the hybrid equation: a Fokker-Planck substep in `v_x`
//! followed by a lane-change substep in `v_y`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::{advance, assemble_operators, choose_dt, OperatorFields, SolverConfig};
use crate::grid::{GridDistribution, MomentSet};
use crate::mc::{deposit, nanbu_y_step, qy_gain_grid, stratified_sample};
use crate::model::ModelParams;
use crate::util::derive_seed;

/// How the lane-change substep is carried out.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum YPath {
    /// Stratified sampling, Nanbu step, deposit.
    #[default]
    MonteCarlo,
    /// Deterministic gain term on the grid.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HybridConfig {
    pub n_particles: usize,
    pub y_path: YPath,
    /// Probability that a vehicle changes lateral speed during one step.
    pub interaction_probability: f64,
    /// Record moments every `log_every`-th step (the last step always).
    pub log_every: usize,
}

impl Default for HybridConfig {
    fn default() -> Self {
        Self {
            n_particles: 10_000,
            y_path: YPath::MonteCarlo,
            interaction_probability: 1.0,
            log_every: 10,
        }
    }
}

impl HybridConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::param("n_particles", "must be at least 1"));
        }
        if !(0.0..=1.0).contains(&self.interaction_probability) {
            return Err(Error::param(
                "interaction_probability",
                "must lie in [0, 1]",
            ));
        }
        if self.log_every == 0 {
            return Err(Error::param("log_every", "must be at least 1"));
        }
        Ok(())
    }
}

/// Moments at one logged time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentRecord {
    pub tau: f64,
    pub moments: MomentSet,
}

#[derive(Clone, Debug)]
pub struct HybridState {
    pub dist: GridDistribution,
    pub tau: f64,
    pub theta: f64,
    pub steps: usize,
    pub moment_log: Vec<MomentRecord>,
}

impl HybridState {
    pub fn new(dist: GridDistribution, theta: f64) -> Self {
        let moments = dist.moments();
        Self {
            dist,
            tau: 0.0,
            theta,
            steps: 0,
            moment_log: vec![MomentRecord { tau: 0.0, moments }],
        }
    }
}

/// One splitting step of length `dtau`.
pub fn split_step(
    state: &HybridState,
    dtau: f64,
    params: &ModelParams,
    solver: &SolverConfig,
    config: &HybridConfig,
    seed: u64,
) -> Result<HybridState> {
    let fields = assemble_operators(&state.dist, params, solver.slope);
    let mut next = state.clone();
    step_with_fields(&mut next, &fields, dtau, params, solver, config, seed)?;
    Ok(next)
}

fn step_with_fields(
    state: &mut HybridState,
    fields: &OperatorFields,
    dtau: f64,
    params: &ModelParams,
    solver: &SolverConfig,
    config: &HybridConfig,
    seed: u64,
) -> Result<()> {
    advance(&mut state.dist, fields, dtau, solver)?;
    if let Some(k) = state.dist.values().iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite {
            tau: state.tau + dtau,
            detail: format!("cell {k} after the along-lane substep"),
        });
    }
    let u_x = state.dist.moments().u_x;
    let p = config.interaction_probability;
    state.dist = match config.y_path {
        YPath::MonteCarlo => {
            let ens = stratified_sample(&state.dist, config.n_particles, derive_seed(seed, 0))?;
            let ens = nanbu_y_step(&ens, u_x, state.theta, p, params, derive_seed(seed, 1))?;
            deposit(&ens, state.dist.grid())?
        }
        YPath::Oracle => {
            let gain = qy_gain_grid(&state.dist, u_x, state.theta, params)?;
            let values = state
                .dist
                .values()
                .iter()
                .zip(gain.values())
                .map(|(g, q)| (1.0 - p) * g + p * q)
                .collect();
            GridDistribution::from_values(*state.dist.grid(), values)?
        }
    };
    state.tau += dtau;
    state.steps += 1;
    Ok(())
}

/// Iterates [`split_step`] up to `horizon` with the step size chosen by the
/// solver's time-step policy.
pub fn evolve_hybrid(
    initial: &GridDistribution,
    theta: f64,
    params: &ModelParams,
    solver: &SolverConfig,
    config: &HybridConfig,
    horizon: f64,
    seed: u64,
) -> Result<HybridState> {
    params.validate()?;
    solver.validate()?;
    config.validate()?;
    if !(horizon >= 0.0 && horizon.is_finite()) {
        return Err(Error::param("horizon", "must be finite and non-negative"));
    }
    let mut state = HybridState::new(initial.clone(), theta);
    let grid = *initial.grid();
    let tol = 1e-12 * horizon.max(1.0);
    while horizon - state.tau > tol {
        let fields = assemble_operators(&state.dist, params, solver.slope);
        let mut dt = choose_dt(&fields, &grid, params, solver)?;
        if !dt.is_finite() || dt > horizon - state.tau {
            dt = horizon - state.tau;
        }
        let step_seed = derive_seed(seed, state.steps as u64);
        step_with_fields(&mut state, &fields, dt, params, solver, config, step_seed)?;
        if state.steps % config.log_every == 0 || horizon - state.tau <= tol {
            state.moment_log.push(MomentRecord {
                tau: state.tau,
                moments: state.dist.moments(),
            });
        }
    }
    Ok(state)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fp::DtPolicy;
    use crate::grid::VelocityGrid;
    use approx::assert_relative_eq;

    fn start(nx: usize, ny: usize) -> GridDistribution {
        let g = VelocityGrid::new(nx, ny, 1.0).unwrap();
        GridDistribution::from_product(g, |x| 1.0 + x, |y| 1.0 + 0.5 * y).unwrap()
    }

    #[test]
    fn degenerate_case_is_identity() {
        let d = start(10, 12);
        let params = ModelParams {
            sigma2: 0.0,
            rho: 0.0,
            ..ModelParams::default()
        };
        let solver = SolverConfig {
            dt_policy: DtPolicy::Fixed,
            dt_value: Some(0.01),
            ..SolverConfig::default()
        };
        let config = HybridConfig {
            interaction_probability: 0.0,
            y_path: YPath::Oracle,
            ..HybridConfig::default()
        };
        let mut s = HybridState::new(d.clone(), 0.2);
        for k in 0..5 {
            s = split_step(&s, 0.01, &params, &solver, &config, k).unwrap();
        }
        for (a, b) in s.dist.values().iter().zip(d.values()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-14);
        }
    }

    #[test]
    fn zero_density_only_relaxes_laterally() {
        let d = start(8, 20);
        let params = ModelParams {
            rho: 0.0,
            ..ModelParams::default()
        };
        let config = HybridConfig {
            y_path: YPath::Oracle,
            ..HybridConfig::default()
        };
        let s = split_step(
            &HybridState::new(d.clone(), 0.0),
            0.01,
            &params,
            &SolverConfig::default(),
            &config,
            0,
        )
        .unwrap();
        for (a, b) in s.dist.marginal_x().iter().zip(d.marginal_x()) {
            assert_relative_eq!(*a, b, epsilon = 1e-12);
        }
        assert!(s.dist.moments().var_y() < d.moments().var_y());
    }

    #[test]
    fn mass_is_preserved_each_step() {
        let d = start(20, 10);
        let params = ModelParams::default();
        let solver = SolverConfig::default();
        for path in [YPath::MonteCarlo, YPath::Oracle] {
            let config = HybridConfig {
                y_path: path,
                n_particles: 3000,
                ..HybridConfig::default()
            };
            let mut s = HybridState::new(d.clone(), 0.5);
            for k in 0..10 {
                s = split_step(&s, 0.004, &params, &solver, &config, k).unwrap();
                assert!((s.dist.mass() - 1.0).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn fp_substep_keeps_lateral_marginal() {
        let d = start(16, 9);
        let params = ModelParams::default();
        let config = HybridConfig {
            interaction_probability: 0.0,
            y_path: YPath::Oracle,
            ..HybridConfig::default()
        };
        let s = split_step(
            &HybridState::new(d.clone(), 0.0),
            0.005,
            &params,
            &SolverConfig::default(),
            &config,
            0,
        )
        .unwrap();
        for (a, b) in s.dist.marginal_y().iter().zip(d.marginal_y()) {
            assert_relative_eq!(*a, b, max_relative = 1e-12);
        }
    }

    #[test]
    fn short_horizon_returns_initial_state() {
        let d = start(6, 6);
        let s = evolve_hybrid(
            &d,
            0.0,
            &ModelParams::default(),
            &SolverConfig::default(),
            &HybridConfig::default(),
            0.0,
            1,
        )
        .unwrap();
        assert_eq!(s.dist, d);
        assert_eq!(s.steps, 0);
    }

    #[test]
    fn oracle_path_x_moments_ignore_theta() {
        let d = start(12, 15);
        let params = ModelParams::default();
        let config = HybridConfig {
            y_path: YPath::Oracle,
            log_every: 1,
            ..HybridConfig::default()
        };
        let run = |theta| {
            evolve_hybrid(
                &d,
                theta,
                &params,
                &SolverConfig::default(),
                &config,
                0.2,
                3,
            )
            .unwrap()
        };
        let (a, b) = (run(-0.8), run(0.6));
        for (ra, rb) in a.moment_log.iter().zip(&b.moment_log) {
            assert_relative_eq!(ra.moments.u_x, rb.moments.u_x, max_relative = 1e-12);
            assert_relative_eq!(ra.moments.e_x, rb.moments.e_x, max_relative = 1e-12);
        }
    }
}
