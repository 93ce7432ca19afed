//! Chang-Cooper finite-volume solver for the along-lane Fokker-Planck step.
//!
//! The equation is `d_tau g = d_v (C g + D d_v g)` in `v_x` with
//! `C = L + d_v D`, where `L` is the interaction drift and `D` already
//! carries the factor `sigma^2 / 2`. Each `v_y` row is an independent 1D
//! problem sharing the same interface fields.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{rel_l1_error, GridDistribution, VelocityGrid};
use crate::model::{nu, pow_kappa, ModelParams, ReferenceMode, TargetClosure};
use crate::util::Tridiagonal;

/// Form of the interface flux.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluxVariant {
    /// `F = C g_hat + D (g_{i+1} - g_i) / dv` with `lambda = dv C / D`.
    #[default]
    StandardSp,
    /// `F = (C / dv) g_hat + (D / 2) (g_{i+1} - g_i) / dv` with `lambda = C / D`.
    Rescaled,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stepper {
    Explicit,
    #[default]
    SemiImplicit,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DtPolicy {
    /// The positivity bound of the active stepper.
    Cfl,
    /// `dt_value`, refused when above the positivity bound.
    Fixed,
    /// `dv_x / sigma^2` capped by the positivity bound.
    #[default]
    SpacingOverSigma2,
}

/// Discretisation of `d_v D` at interfaces.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlopeForm {
    /// `(D(v_{i+1}) - D(v_i)) / dv` from cell-centre samples.
    #[default]
    Centered,
    /// `D_{i+1/2} ln(D(v_{i+1}) / D(v_i)) / dv`; exact for piecewise
    /// exponential `D` and robust across jumps of `D`.
    LogRatio,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub flux_variant: FluxVariant,
    pub stepper: Stepper,
    pub dt_policy: DtPolicy,
    pub dt_value: Option<f64>,
    pub slope: SlopeForm,
    pub steady_tol: f64,
    pub t_max: f64,
    /// Log every `log_every`-th step (the last step is always logged).
    pub log_every: usize,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            flux_variant: FluxVariant::StandardSp,
            stepper: Stepper::SemiImplicit,
            dt_policy: DtPolicy::SpacingOverSigma2,
            dt_value: None,
            slope: SlopeForm::Centered,
            steady_tol: 1e-8,
            t_max: 100.0,
            log_every: 100,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.steady_tol > 0.0 && self.steady_tol.is_finite()) {
            return Err(Error::param("steady_tol", "must be positive"));
        }
        if !(self.t_max > 0.0) {
            return Err(Error::param("t_max", "must be positive"));
        }
        if self.log_every == 0 {
            return Err(Error::param("log_every", "must be at least 1"));
        }
        match (self.dt_policy, self.dt_value) {
            (DtPolicy::Fixed, None) => {
                Err(Error::param("dt_value", "required by the fixed policy"))
            }
            (_, Some(v)) if !(v > 0.0 && v.is_finite()) => {
                Err(Error::param("dt_value", "must be positive"))
            }
            _ => Ok(()),
        }
    }
}

/// Drift, diffusion and diffusion slope at the `n_x + 1` interfaces.
#[derive(Clone, Debug, PartialEq)]
pub struct OperatorFields {
    pub drift: Vec<f64>,
    pub diffusion: Vec<f64>,
    pub slope: Vec<f64>,
    dv: f64,
}

impl OperatorFields {
    pub fn zeros(grid: &VelocityGrid) -> Self {
        let n = grid.n_x() + 1;
        Self {
            drift: vec![0.0; n],
            diffusion: vec![0.0; n],
            slope: vec![0.0; n],
            dv: grid.dv_x(),
        }
    }

    /// Samples drift `l(v)` and diffusion `d(v)` (with `sigma^2 / 2`
    /// included) on the grid; the slope comes from cell-centre samples of `d`.
    pub fn from_functions(
        grid: &VelocityGrid,
        l: impl Fn(f64) -> f64,
        d: impl Fn(f64) -> f64,
        slope: SlopeForm,
    ) -> Self {
        let n = grid.n_x();
        let drift = (0..=n).map(|i| l(grid.x_interface(i))).collect();
        let diffusion: Vec<f64> = (0..=n).map(|i| d(grid.x_interface(i))).collect();
        let centre: Vec<f64> = (0..n).map(|i| d(grid.x_center(i))).collect();
        let slope = slope_at_interfaces(&diffusion, &centre, grid.dv_x(), slope);
        Self {
            drift,
            diffusion,
            slope,
            dv: grid.dv_x(),
        }
    }

    pub fn len(&self) -> usize {
        self.drift.len()
    }

    pub fn is_empty(&self) -> bool {
        self.drift.is_empty()
    }

    /// `C = L + d_v D` at interface `i`.
    pub fn advection(&self, i: usize) -> f64 {
        self.drift[i] + self.slope[i]
    }

    /// Advection coefficient as it enters the flux of `variant`.
    pub fn flux_advection(&self, i: usize, variant: FluxVariant) -> f64 {
        match variant {
            FluxVariant::StandardSp => self.advection(i),
            FluxVariant::Rescaled => self.advection(i) / self.dv,
        }
    }

    pub fn max_flux_advection(&self, variant: FluxVariant) -> f64 {
        (0..self.len())
            .map(|i| self.flux_advection(i, variant).abs())
            .fold(0.0, f64::max)
    }

    pub fn max_diffusion(&self) -> f64 {
        self.diffusion.iter().copied().fold(0.0, f64::max)
    }

    /// Interface coefficients `(a, b)` with `F_{i+1/2} = a g_{i+1} + b g_i`.
    /// The two boundary interfaces carry no flux.
    pub fn flux_coefficients(&self, variant: FluxVariant) -> (Vec<f64>, Vec<f64>) {
        let n = self.len();
        let mut a = vec![0.0; n];
        let mut b = vec![0.0; n];
        for i in 1..n.saturating_sub(1) {
            let c = self.advection(i);
            let d = self.diffusion[i];
            let (c_hat, lam, d_eff) = match variant {
                FluxVariant::StandardSp => (c, if d > 0.0 { self.dv * c / d } else { f64::NAN }, d),
                FluxVariant::Rescaled => {
                    (c / self.dv, if d > 0.0 { c / d } else { f64::NAN }, 0.5 * d)
                }
            };
            let w = if d > 0.0 {
                chang_cooper_weight(lam)
            } else {
                upwind_weight(c)
            };
            a[i] = c_hat * (1.0 - w) + d_eff / self.dv;
            b[i] = c_hat * w - d_eff / self.dv;
            if variant == FluxVariant::StandardSp {
                // Exact values satisfy a >= 0 >= b; drop rounding residue.
                a[i] = a[i].max(0.0);
                b[i] = b[i].min(0.0);
            }
        }
        (a, b)
    }
}

fn slope_at_interfaces(iface: &[f64], centre: &[f64], dv: f64, form: SlopeForm) -> Vec<f64> {
    let n = centre.len();
    let mut out = vec![0.0; n + 1];
    for i in 1..n {
        let (l, r) = (centre[i - 1], centre[i]);
        out[i] = match form {
            SlopeForm::LogRatio if l > 0.0 && r > 0.0 => iface[i] * (r / l).ln() / dv,
            _ => (r - l) / dv,
        };
    }
    out
}

/// `delta = 1/lambda - 1/(e^lambda - 1)`, the Chang-Cooper interface weight.
pub fn chang_cooper_weight(lambda: f64) -> f64 {
    if lambda.is_nan() {
        return 0.5;
    }
    if lambda.abs() < 1e-3 {
        let l2 = lambda * lambda;
        return 0.5 - lambda / 12.0 + lambda * l2 / 720.0 - lambda * l2 * l2 / 30240.0;
    }
    if lambda > 500.0 {
        return 1.0 / lambda;
    }
    if lambda < -500.0 {
        return 1.0 + 1.0 / lambda;
    }
    (1.0 / lambda - 1.0 / lambda.exp_m1()).clamp(0.0, 1.0)
}

fn upwind_weight(c: f64) -> f64 {
    if c > 0.0 {
        0.0
    } else if c < 0.0 {
        1.0
    } else {
        0.5
    }
}

/// `(L, D)` contributions of one interaction against reference speed `w`,
/// without the rate `rho / 2`.
#[inline]
fn branch(v: f64, w: f64, p: f64, params: &ModelParams) -> (f64, f64) {
    if v < w {
        let (va, _) = params.targets(v, w);
        let da = nu(v) * pow_kappa((va - v).max(0.0), params.kappa);
        (p * (v - va), p * da * da)
    } else if v > w {
        let (_, vb) = params.targets(v, w);
        let db = nu(v) * pow_kappa((v - vb).max(0.0), params.kappa);
        ((1.0 - p) * (v - vb), (1.0 - p) * db * db)
    } else {
        (0.0, 0.0)
    }
}

/// Where a field is evaluated: interface `i` sits at `i dv`, centre `i` at
/// `(i + 1/2) dv`.
#[derive(Clone, Copy)]
enum Site {
    Interface(usize),
    Centre(usize),
}

/// Interaction averages `(L[g], D[g])` for one density, without the rate.
struct FieldEvaluator<'a> {
    params: &'a ModelParams,
    p: f64,
    grid: &'a VelocityGrid,
    mode: Reference,
}

enum Reference {
    Mean(f64),
    /// Midpoint quadrature over the x-marginal, cell by cell.
    Marginal {
        mass: Vec<f64>,
    },
    /// Same quadrature through prefix sums of `m w^k`; valid when `2 kappa`
    /// is an even integer so both branches are polynomial in `w`.
    Prefix {
        mass: Vec<f64>,
        prefix: Vec<[f64; 5]>,
        power: usize,
    },
}

fn power_sums(m: f64, w: f64) -> [f64; 5] {
    let mut out = [0.0; 5];
    let mut wk = 1.0;
    for o in out.iter_mut() {
        *o = m * wk;
        wk *= w;
    }
    out
}

const BINOMIAL: [[f64; 5]; 5] = [
    [1.0, 0.0, 0.0, 0.0, 0.0],
    [1.0, 1.0, 0.0, 0.0, 0.0],
    [1.0, 2.0, 1.0, 0.0, 0.0],
    [1.0, 3.0, 3.0, 1.0, 0.0],
    [1.0, 4.0, 6.0, 4.0, 1.0],
];

/// `sum_w m (v - c w)^K` from power sums of `w`.
fn shifted_power(v: f64, c: f64, sums: &[f64; 5], power: usize) -> f64 {
    let mut total = 0.0;
    for (k, s) in sums.iter().enumerate().take(power + 1) {
        total += BINOMIAL[power][k] * v.powi((power - k) as i32) * (-c).powi(k as i32) * s;
    }
    total
}

impl<'a> FieldEvaluator<'a> {
    fn new(dist: &GridDistribution, params: &'a ModelParams, grid: &'a VelocityGrid) -> Self {
        let p = params.accel_prob();
        let mode = match params.wx_mode {
            ReferenceMode::MeanField => Reference::Mean(dist.moments().u_x),
            ReferenceMode::Binary => {
                let dv = grid.dv_x();
                let mass: Vec<f64> = dist.marginal_x().iter().map(|g| g * dv).collect();
                let power = if params.kappa == 1.0 {
                    Some(2)
                } else if params.kappa == 2.0 {
                    Some(4)
                } else {
                    None
                };
                match power {
                    Some(power) => {
                        let mut prefix = Vec::with_capacity(mass.len() + 1);
                        let mut acc = [0.0; 5];
                        prefix.push(acc);
                        for (i, m) in mass.iter().enumerate() {
                            let s = power_sums(*m, grid.x_center(i));
                            for k in 0..5 {
                                acc[k] += s[k];
                            }
                            prefix.push(acc);
                        }
                        Reference::Prefix {
                            mass,
                            prefix,
                            power,
                        }
                    }
                    None => Reference::Marginal { mass },
                }
            }
        };
        Self {
            params,
            p,
            grid,
            mode,
        }
    }

    fn speed(&self, site: Site) -> f64 {
        match site {
            Site::Interface(i) => self.grid.x_interface(i),
            Site::Centre(i) => self.grid.x_center(i),
        }
    }

    /// A cell whose centre coincides with the evaluation speed is integrated
    /// as two halves so each half falls strictly in one branch.
    fn eval(&self, site: Site) -> (f64, f64) {
        let v = self.speed(site);
        let dv = self.grid.dv_x();
        match &self.mode {
            Reference::Mean(u) => branch(v, *u, self.p, self.params),
            Reference::Marginal { mass } => {
                let split = match site {
                    Site::Centre(i) => Some(i),
                    Site::Interface(_) => None,
                };
                let (mut l, mut d) = (0.0, 0.0);
                for (k, &m) in mass.iter().enumerate() {
                    if m == 0.0 {
                        continue;
                    }
                    let w = self.grid.x_center(k);
                    if split == Some(k) {
                        let h = 0.25 * dv;
                        let (l1, d1) = branch(v, w - h, self.p, self.params);
                        let (l2, d2) = branch(v, w + h, self.p, self.params);
                        l += 0.5 * m * (l1 + l2);
                        d += 0.5 * m * (d1 + d2);
                    } else {
                        let (lk, dk) = branch(v, w, self.p, self.params);
                        l += m * lk;
                        d += m * dk;
                    }
                }
                (l, d)
            }
            Reference::Prefix {
                mass,
                prefix,
                power,
            } => {
                let total = prefix[prefix.len() - 1];
                let (below, above) = match site {
                    Site::Interface(i) => {
                        let b = prefix[i];
                        (b, std::array::from_fn(|k| total[k] - b[k]))
                    }
                    Site::Centre(i) => {
                        let h = 0.25 * dv;
                        let lo = power_sums(0.5 * mass[i], v - h);
                        let hi = power_sums(0.5 * mass[i], v + h);
                        let b: [f64; 5] = std::array::from_fn(|k| prefix[i][k] + lo[k]);
                        let a: [f64; 5] =
                            std::array::from_fn(|k| total[k] - prefix[i + 1][k] + hi[k]);
                        (b, a)
                    }
                };
                self.polynomial_fields(v, &below, &above, *power)
            }
        }
    }

    fn polynomial_fields(
        &self,
        v: f64,
        below: &[f64; 5],
        above: &[f64; 5],
        power: usize,
    ) -> (f64, f64) {
        let p = self.p;
        let nu2 = nu(v) * nu(v);
        let (l_acc, d_acc, l_brk, d_brk) = match self.params.closure {
            TargetClosure::SpeedJump => {
                let va = (v + self.params.dv_jump).min(1.0);
                let gap = pow_kappa(va - v, self.params.kappa);
                (
                    (v - va) * above[0],
                    nu2 * gap * gap * above[0],
                    v * below[0] - p * below[1],
                    nu2 * shifted_power(v, p, below, power),
                )
            }
            TargetClosure::MeanSpeed => (
                v * above[0] - above[1],
                nu2 * shifted_power(v, 1.0, above, power),
                v * below[0] - below[1],
                nu2 * shifted_power(v, 1.0, below, power),
            ),
        };
        (p * l_acc + (1.0 - p) * l_brk, p * d_acc + (1.0 - p) * d_brk)
    }
}

/// Builds the interface fields for `dist` under `params`.
pub fn assemble_operators(
    dist: &GridDistribution,
    params: &ModelParams,
    slope: SlopeForm,
) -> OperatorFields {
    let grid = dist.grid();
    let n = grid.n_x();
    let dv = grid.dv_x();
    let rate = 0.5 * params.rho;
    let mut fields = OperatorFields::zeros(grid);
    if rate == 0.0 {
        return fields;
    }
    let evaluator = FieldEvaluator::new(dist, params, grid);
    let diff_scale = 0.5 * params.sigma2 * rate;
    for i in 0..=n {
        let (l, d) = evaluator.eval(Site::Interface(i));
        fields.drift[i] = rate * l;
        fields.diffusion[i] = diff_scale * d;
    }
    let centre: Vec<f64> = (0..n)
        .map(|i| diff_scale * evaluator.eval(Site::Centre(i)).1)
        .collect();
    fields.slope = slope_at_interfaces(&fields.diffusion, &centre, dv, slope);
    // The domain ends carry no diffusion.
    fields.diffusion[0] = 0.0;
    fields.diffusion[n] = 0.0;
    fields
}

/// Interface fluxes of every row, `n_y` blocks of `n_x + 1` values.
pub fn numerical_flux(
    dist: &GridDistribution,
    fields: &OperatorFields,
    variant: FluxVariant,
) -> Vec<f64> {
    let grid = dist.grid();
    let n = grid.n_x();
    let (a, b) = fields.flux_coefficients(variant);
    let mut out = Vec::with_capacity((n + 1) * grid.n_y());
    for j in 0..grid.n_y() {
        let row = dist.row(j);
        out.push(0.0);
        for i in 1..n {
            out.push(a[i] * row[i] + b[i] * row[i - 1]);
        }
        out.push(0.0);
    }
    out
}

/// Positivity bound of the explicit stepper.
pub fn cfl_explicit(fields: &OperatorFields, variant: FluxVariant) -> f64 {
    let dv = fields.dv;
    let den = 2.0 * (fields.max_flux_advection(variant) * dv + fields.max_diffusion());
    if den > 0.0 {
        dv * dv / den
    } else {
        f64::INFINITY
    }
}

/// Positivity bound of the semi-implicit stepper.
pub fn cfl_semi_implicit(fields: &OperatorFields, variant: FluxVariant) -> f64 {
    let c = fields.max_flux_advection(variant);
    if c > 0.0 {
        fields.dv / (2.0 * c)
    } else {
        f64::INFINITY
    }
}

pub fn cfl_bound(fields: &OperatorFields, variant: FluxVariant, stepper: Stepper) -> f64 {
    match stepper {
        Stepper::Explicit => cfl_explicit(fields, variant),
        Stepper::SemiImplicit => cfl_semi_implicit(fields, variant),
    }
}

fn check_dt(dt: f64, bound: f64) -> Result<()> {
    if !(dt >= 0.0) || dt > bound * (1.0 + 1e-12) {
        return Err(Error::CflViolation { dt, bound });
    }
    Ok(())
}

/// One forward-Euler step of the conservative scheme.
pub fn explicit_step(
    dist: &GridDistribution,
    fields: &OperatorFields,
    dt: f64,
    variant: FluxVariant,
) -> Result<GridDistribution> {
    check_dt(dt, cfl_explicit(fields, variant))?;
    let mut out = dist.clone();
    explicit_in_place(&mut out, fields, dt, variant);
    Ok(out)
}

fn explicit_in_place(
    dist: &mut GridDistribution,
    fields: &OperatorFields,
    dt: f64,
    variant: FluxVariant,
) {
    let n = dist.grid().n_x();
    let r = dt / fields.dv;
    let (a, b) = fields.flux_coefficients(variant);
    // Coefficient form of the flux difference; every term is non-negative
    // below the step bound, the clamp only removes rounding.
    let work = |row: &mut [f64]| {
        let old = row.to_vec();
        for i in 0..n {
            let (out_right, in_right) = if i + 1 < n {
                (b[i + 1], a[i + 1] * old[i + 1])
            } else {
                (0.0, 0.0)
            };
            let in_left = if i > 0 { -b[i] * old[i - 1] } else { 0.0 };
            let keep = (1.0 + r * (out_right - a[i])).max(0.0);
            row[i] = keep * old[i] + r * (in_right + in_left);
        }
    };
    for_each_row(dist, work);
}

/// One step with the unknown density inside the flux and coefficients frozen.
pub fn semi_implicit_step(
    dist: &GridDistribution,
    fields: &OperatorFields,
    dt: f64,
    variant: FluxVariant,
) -> Result<GridDistribution> {
    check_dt(dt, cfl_semi_implicit(fields, variant))?;
    let mut out = dist.clone();
    semi_implicit_in_place(&mut out, fields, dt, variant)?;
    Ok(out)
}

fn semi_implicit_in_place(
    dist: &mut GridDistribution,
    fields: &OperatorFields,
    dt: f64,
    variant: FluxVariant,
) -> Result<()> {
    let n = dist.grid().n_x();
    let r = dt / fields.dv;
    let (a, b) = fields.flux_coefficients(variant);
    let mut lower = vec![0.0; n];
    let mut diag = vec![0.0; n];
    let mut upper = vec![0.0; n];
    for i in 0..n {
        diag[i] = 1.0 - r * (b[i + 1] - a[i]);
        upper[i] = -r * a[i + 1];
        lower[i] = r * b[i];
    }
    let system = Tridiagonal::factor(&lower, &diag, &upper)
        .map_err(|(pivot, row)| Error::SingularSystem { pivot, row })?;
    for_each_row(dist, |row| system.solve_in_place(row));
    Ok(())
}

fn for_each_row(dist: &mut GridDistribution, work: impl Fn(&mut [f64]) + Sync + Send) {
    let n = dist.grid().n_x();
    let rows = dist.grid().n_y();
    let values = dist.values_mut();
    if rows >= 16 {
        values.par_chunks_mut(n).for_each(work);
    } else {
        values.chunks_mut(n).for_each(work);
    }
}

/// One row of the per-run log.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub mass: f64,
    pub min_value: f64,
    pub residual: f64,
}

#[derive(Clone, Debug)]
pub struct FpRun {
    pub dist: GridDistribution,
    pub time: f64,
    pub steps: usize,
    /// Whether the steady-state residual fell below tolerance.
    pub converged: bool,
    pub log: Vec<StepRecord>,
}

/// Time step for the next step of a run, before clipping to the horizon.
pub fn choose_dt(
    fields: &OperatorFields,
    grid: &VelocityGrid,
    params: &ModelParams,
    config: &SolverConfig,
) -> Result<f64> {
    let bound = cfl_bound(fields, config.flux_variant, config.stepper);
    match config.dt_policy {
        DtPolicy::Cfl => Ok(bound),
        DtPolicy::Fixed => {
            let dt = config
                .dt_value
                .ok_or_else(|| Error::param("dt_value", "required by the fixed policy"))?;
            check_dt(dt, bound)?;
            Ok(dt)
        }
        DtPolicy::SpacingOverSigma2 => {
            if params.sigma2 > 0.0 {
                Ok((grid.dv_x() / params.sigma2).min(bound))
            } else {
                Ok(bound)
            }
        }
    }
}

/// Advances `dist` in place by `dt` with fields frozen.
pub fn advance(
    dist: &mut GridDistribution,
    fields: &OperatorFields,
    dt: f64,
    config: &SolverConfig,
) -> Result<()> {
    let variant = config.flux_variant;
    match config.stepper {
        Stepper::Explicit => {
            check_dt(dt, cfl_explicit(fields, variant))?;
            explicit_in_place(dist, fields, dt, variant);
        }
        Stepper::SemiImplicit => {
            check_dt(dt, cfl_semi_implicit(fields, variant))?;
            semi_implicit_in_place(dist, fields, dt, variant)?;
        }
    }
    Ok(())
}

fn run(
    dist: &GridDistribution,
    config: &SolverConfig,
    fields_of: &dyn Fn(&GridDistribution) -> OperatorFields,
    dt_of: &dyn Fn(&OperatorFields) -> Result<f64>,
    duration: f64,
    stop_on_steady: bool,
) -> Result<FpRun> {
    config.validate()?;
    if !(duration >= 0.0) {
        return Err(Error::param("duration", "must be non-negative"));
    }
    let mut state = dist.clone();
    let mut time = 0.0;
    let mut steps = 0;
    let mut log = Vec::new();
    let mut converged = false;
    let eps = 1e-12 * duration.max(1.0);
    while duration - time > eps {
        let fields = fields_of(&state);
        let mut dt = dt_of(&fields)?;
        if !dt.is_finite() || dt > duration - time {
            dt = duration - time;
        }
        let previous = state.values().to_vec();
        advance(&mut state, &fields, dt, config)?;
        time += dt;
        steps += 1;
        if let Some(k) = state.values().iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                tau: time,
                detail: format!("cell {k} after step {steps}"),
            });
        }
        let residual = if dt > 0.0 {
            rel_l1_error(state.values(), &previous).unwrap_or(f64::INFINITY) / dt
        } else {
            0.0
        };
        let done = stop_on_steady && residual < config.steady_tol;
        if steps % config.log_every == 0 || done || duration - time <= eps {
            log.push(StepRecord {
                step: steps,
                time,
                dt,
                mass: state.mass(),
                min_value: state.min_value(),
                residual,
            });
        }
        if done {
            converged = true;
            break;
        }
    }
    Ok(FpRun {
        dist: state,
        time,
        steps,
        converged,
        log,
    })
}

/// Integrates the nonlinear equation over `duration`, reassembling the
/// fields before every step.
pub fn evolve_fp(
    dist: &GridDistribution,
    params: &ModelParams,
    config: &SolverConfig,
    duration: f64,
) -> Result<FpRun> {
    params.validate()?;
    let grid = *dist.grid();
    run(
        dist,
        config,
        &|g| assemble_operators(g, params, config.slope),
        &|f| choose_dt(f, &grid, params, config),
        duration,
        false,
    )
}

/// Runs until the residual `||g^{n+1} - g^n||_1 / (dt ||g^n||_1)` drops
/// below `steady_tol` or `t_max` is reached.
pub fn steady_state(
    dist: &GridDistribution,
    params: &ModelParams,
    config: &SolverConfig,
) -> Result<FpRun> {
    params.validate()?;
    let grid = *dist.grid();
    run(
        dist,
        config,
        &|g| assemble_operators(g, params, config.slope),
        &|f| choose_dt(f, &grid, params, config),
        config.t_max,
        true,
    )
}

/// Steady state of the linear problem with frozen `fields`.
pub fn steady_state_frozen(
    dist: &GridDistribution,
    fields: &OperatorFields,
    config: &SolverConfig,
) -> Result<FpRun> {
    run(
        dist,
        config,
        &|_| fields.clone(),
        &|f| match config.dt_policy {
            DtPolicy::Fixed => {
                let dt = config.dt_value.unwrap_or(0.0);
                check_dt(dt, cfl_bound(f, config.flux_variant, config.stepper))?;
                Ok(dt)
            }
            _ => Ok(cfl_bound(f, config.flux_variant, config.stepper)),
        },
        config.t_max,
        true,
    )
}
