//! Flat JSON run configuration.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::diagram::{ProfileForm, SweepConfig};
use crate::error::{Error, Result};
use crate::fp::{DtPolicy, FluxVariant, SlopeForm, SolverConfig, Stepper};
use crate::grid::{GridDistribution, VelocityGrid};
use crate::hybrid::{HybridConfig, YPath};
use crate::model::{BetaMode, ModelParams, ReferenceMode, TargetClosure};

/// Shape of the starting density in `v_x`; `v_y` always starts uniform.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InitialShape {
    #[default]
    Uniform,
    /// `v^2 (1 - v)^2`, smooth and vanishing at both ends.
    Bump,
}

impl InitialShape {
    pub fn build(self, grid: VelocityGrid) -> Result<GridDistribution> {
        match self {
            InitialShape::Uniform => Ok(GridDistribution::initial_condition(grid)),
            InitialShape::Bump => {
                GridDistribution::from_product(grid, |v| v * v * (1.0 - v) * (1.0 - v), |_| 1.0)
            }
        }
    }
}

/// Every setting of a run in one flat document.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub delta: f64,
    pub dv_jump: f64,
    pub kappa: f64,
    pub sigma2: f64,
    pub epsilon: f64,
    pub beta_mode: BetaMode,
    pub beta0: f64,
    pub vbar_d: f64,
    pub lambda: f64,
    pub rho: f64,
    pub wx_mode: ReferenceMode,
    pub closure: TargetClosure,

    pub flux_variant: FluxVariant,
    pub stepper: Stepper,
    pub dt_policy: DtPolicy,
    pub dt_value: Option<f64>,
    pub slope: SlopeForm,
    pub steady_tol: f64,
    pub t_max: f64,
    pub log_every: usize,

    pub n_x: usize,
    pub n_y: usize,
    pub initial: InitialShape,
    pub nodes: usize,
    pub theta: f64,
    pub n_particles: usize,
    pub y_path: YPath,
    pub interaction_probability: f64,
    pub horizon: f64,
    pub seed: u64,
    pub out_dir: PathBuf,

    pub rho_grid: Vec<f64>,
    pub tail_fraction: f64,
    pub drift_tol: f64,
    pub profile_form: ProfileForm,

    pub dx_window: f64,
    pub dt_window: f64,
    pub lane_count: usize,
    /// Records beyond this position are ignored; `None` keeps all.
    pub road_length: Option<f64>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let m = ModelParams::default();
        let s = SolverConfig::default();
        let h = HybridConfig::default();
        let w = SweepConfig::default();
        Self {
            alpha: m.alpha,
            delta: m.delta,
            dv_jump: m.dv_jump,
            kappa: m.kappa,
            sigma2: m.sigma2,
            epsilon: m.epsilon,
            beta_mode: m.beta_mode,
            beta0: m.beta0,
            vbar_d: m.vbar_d,
            lambda: m.lambda,
            rho: m.rho,
            wx_mode: m.wx_mode,
            closure: m.closure,
            flux_variant: s.flux_variant,
            stepper: s.stepper,
            dt_policy: s.dt_policy,
            dt_value: s.dt_value,
            slope: s.slope,
            steady_tol: s.steady_tol,
            t_max: s.t_max,
            log_every: s.log_every,
            n_x: 40,
            n_y: 40,
            initial: InitialShape::Uniform,
            nodes: 5,
            theta: 0.0,
            n_particles: h.n_particles,
            y_path: h.y_path,
            interaction_probability: h.interaction_probability,
            horizon: 100.0,
            seed: 2024,
            out_dir: PathBuf::from("out"),
            rho_grid: vec![0.1, 0.3, 0.5, 0.7, 0.9],
            tail_fraction: w.tail_fraction,
            drift_tol: w.drift_tol,
            profile_form: ProfileForm::ClosureConsistent,
            dx_window: 100.0,
            dt_window: 5.0,
            lane_count: 1,
            road_length: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_json(&text)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn model(&self) -> ModelParams {
        ModelParams {
            alpha: self.alpha,
            delta: self.delta,
            dv_jump: self.dv_jump,
            kappa: self.kappa,
            sigma2: self.sigma2,
            epsilon: self.epsilon,
            beta_mode: self.beta_mode,
            beta0: self.beta0,
            vbar_d: self.vbar_d,
            lambda: self.lambda,
            rho: self.rho,
            wx_mode: self.wx_mode,
            closure: self.closure,
        }
    }

    pub fn solver(&self) -> SolverConfig {
        SolverConfig {
            flux_variant: self.flux_variant,
            stepper: self.stepper,
            dt_policy: self.dt_policy,
            dt_value: self.dt_value,
            slope: self.slope,
            steady_tol: self.steady_tol,
            t_max: self.t_max,
            log_every: self.log_every,
        }
    }

    pub fn hybrid(&self) -> HybridConfig {
        HybridConfig {
            n_particles: self.n_particles,
            y_path: self.y_path,
            interaction_probability: self.interaction_probability,
            log_every: self.log_every,
        }
    }

    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            horizon: self.horizon,
            tail_fraction: self.tail_fraction,
            drift_tol: self.drift_tol,
        }
    }

    pub fn grid(&self) -> Result<VelocityGrid> {
        VelocityGrid::new(self.n_x, self.n_y, self.epsilon)
    }

    pub fn initial_density(&self) -> Result<GridDistribution> {
        self.initial.build(self.grid()?)
    }

    /// Field-level and cross-field checks.
    pub fn validate(&self) -> Result<()> {
        self.model().validate()?;
        self.solver().validate()?;
        self.hybrid().validate()?;
        if self.n_x < 2 {
            return Err(Error::param("n_x", "need at least two cells"));
        }
        if self.n_y < 1 {
            return Err(Error::param("n_y", "need at least one cell"));
        }
        if self.nodes < 1 {
            return Err(Error::param("nodes", "need at least one collocation node"));
        }
        if !(-1.0..=1.0).contains(&self.theta) {
            return Err(Error::param("theta", "must lie in [-1, 1]"));
        }
        if !(self.horizon >= 0.0 && self.horizon.is_finite()) {
            return Err(Error::param("horizon", "must be finite and non-negative"));
        }
        if self.rho_grid.iter().any(|r| !(0.0..=1.0).contains(r)) {
            return Err(Error::param("rho_grid", "densities must lie in [0, 1]"));
        }
        if !(self.tail_fraction > 0.0 && self.tail_fraction <= 1.0) {
            return Err(Error::param("tail_fraction", "must lie in (0, 1]"));
        }
        if !(self.dx_window > 0.0 && self.dt_window > 0.0) {
            return Err(Error::param(
                "dx_window",
                "aggregation windows must be positive",
            ));
        }
        if self.lane_count == 0 {
            return Err(Error::param("lane_count", "must be at least 1"));
        }
        if self.road_length.is_some_and(|l| !(l > 0.0)) {
            return Err(Error::param("road_length", "must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_field_identical() {
        let cfg = RunConfig {
            rho: 0.7,
            flux_variant: FluxVariant::Rescaled,
            dt_value: Some(0.01),
            rho_grid: vec![0.2, 0.4],
            road_length: Some(640.0),
            ..RunConfig::default()
        };
        let text = cfg.to_json().unwrap();
        assert_eq!(RunConfig::from_json(&text).unwrap(), cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let err = RunConfig::from_json(r#"{"rho": 0.2, "rhoo": 0.3}"#).unwrap_err();
        assert!(err.to_string().contains("rhoo"));
    }

    #[test]
    fn invalid_values_name_the_field() {
        let err = RunConfig::from_json(r#"{"sigma2": -1.0}"#).unwrap_err();
        assert!(err.to_string().contains("sigma2"));
        let err = RunConfig::from_json(r#"{"interaction_probability": 2.0}"#).unwrap_err();
        assert!(err.to_string().contains("interaction_probability"));
    }

    #[test]
    fn partial_documents_take_defaults() {
        let cfg = RunConfig::from_json(r#"{"n_x": 80, "initial": "bump"}"#).unwrap();
        assert_eq!(cfg.n_x, 80);
        assert_eq!(cfg.initial, InitialShape::Bump);
        assert_eq!(cfg.sigma2, ModelParams::default().sigma2);
    }
}
