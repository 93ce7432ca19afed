//! Equilibrium analysis: stationary longitudinal profiles, closed-form
//! lateral diagrams and simulated speed-density sweeps.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::SolverConfig;
use crate::grid::GridDistribution;
use crate::hybrid::{HybridConfig, MomentRecord};
use crate::model::{nu, pow_kappa, ModelParams};
use crate::uq::{run_ensemble, ThetaQuadrature};
use crate::util::{adaptive_simpson, adaptive_simpson_rel, derive_seed};

/// Which stationary formula to evaluate.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ProfileForm {
    /// Squared ratio prefactor and `1 / (V - v)` in the exponent, which
    /// assumes `nu = 1` and `kappa = 1`.
    #[default]
    AsPrinted,
    /// Zero-flux solution of the mean-field equation with the configured
    /// `nu` and `kappa`.
    ClosureConsistent,
}

/// Stationary longitudinal density for a reference mean speed `u_x`.
///
/// Each side of `u_x` carries its own constant; the two constants are fixed
/// by unit mass and mean `u_x`.
#[derive(Clone, Debug)]
pub struct StationaryProfile {
    pub u_x: f64,
    pub c_a: f64,
    pub c_b: f64,
    params: ModelParams,
    form: ProfileForm,
}

const QUAD_TOL: f64 = 1e-12;

impl StationaryProfile {
    fn v_a(&self, v: f64) -> f64 {
        self.params.targets(v, self.u_x).0
    }

    fn v_b(&self, v: f64) -> f64 {
        self.params.targets(v, self.u_x).1
    }

    /// `D^2` up to the branch probability, and the exponent integrand.
    fn branch_terms(&self, v: f64, accel: bool) -> (f64, f64) {
        let gap = if accel {
            self.v_a(v) - v
        } else {
            v - self.v_b(v)
        };
        match self.form {
            ProfileForm::AsPrinted => (gap * gap, 1.0 / gap),
            ProfileForm::ClosureConsistent => {
                let n = nu(v);
                let k = self.params.kappa;
                (
                    n * n * pow_kappa(gap, 2.0 * k),
                    1.0 / (n * n * pow_kappa(gap, 2.0 * k - 1.0)),
                )
            }
        }
    }

    /// Branch shape without its constant.
    fn shape(&self, v: f64) -> f64 {
        let u = self.u_x;
        let accel = v < u;
        let (q_u, _) = self.branch_terms(u, accel);
        let (q_v, _) = self.branch_terms(v, accel);
        if !(q_v > 0.0) || !q_v.is_finite() {
            return 0.0;
        }
        let (lo, hi) = if accel { (v, u) } else { (u, v) };
        let integral =
            adaptive_simpson_rel(&|s| self.branch_terms(s, accel).1, lo, hi, QUAD_TOL, 1e-11);
        let expo = -2.0 / self.params.sigma2 * integral;
        let out = q_u / q_v * expo.exp();
        if out.is_finite() {
            out
        } else {
            0.0
        }
    }

    /// Density at `v`.
    pub fn eval(&self, v: f64) -> f64 {
        if !(0.0..=1.0).contains(&v) {
            return 0.0;
        }
        let c = if v < self.u_x { self.c_a } else { self.c_b };
        c * self.shape(v)
    }

    /// Exact cell averages on `n` uniform cells of `[0, 1]`.
    pub fn cell_averages(&self, n: usize) -> Vec<f64> {
        let h = 1.0 / n as f64;
        (0..n)
            .map(|i| {
                let (a, b) = (i as f64 * h, (i + 1) as f64 * h);
                let f = |v: f64| self.eval(v);
                if a < self.u_x && self.u_x < b {
                    (adaptive_simpson(&f, a, self.u_x, 1e-11)
                        + adaptive_simpson(&f, self.u_x, b, 1e-11))
                        / h
                } else {
                    adaptive_simpson(&f, a, b, 1e-11) / h
                }
            })
            .collect()
    }

    /// Point values at the centres of `n` uniform cells.
    pub fn sample(&self, n: usize) -> Vec<f64> {
        let h = 1.0 / n as f64;
        (0..n).map(|i| self.eval((i as f64 + 0.5) * h)).collect()
    }
}

/// Builds the stationary profile for mean speed `u_x` under mean-field
/// interactions.
pub fn stationary_gx(
    u_x: f64,
    params: &ModelParams,
    form: ProfileForm,
) -> Result<StationaryProfile> {
    params.validate()?;
    if !(u_x > 0.0 && u_x < 1.0) {
        return Err(Error::Domain(format!("mean speed {u_x} outside (0, 1)")));
    }
    if !(params.sigma2 > 0.0) {
        return Err(Error::param(
            "sigma2",
            "must be positive for a stationary profile",
        ));
    }
    let mut prof = StationaryProfile {
        u_x,
        c_a: 1.0,
        c_b: 1.0,
        params: params.clone(),
        form,
    };
    let left =
        |f: &dyn Fn(f64) -> f64| adaptive_simpson(&|v| f(v) * prof.shape(v), 0.0, u_x, 1e-12);
    let right =
        |f: &dyn Fn(f64) -> f64| adaptive_simpson(&|v| f(v) * prof.shape(v), u_x, 1.0, 1e-12);
    let (m_a, m_b) = (left(&|_| 1.0), right(&|_| 1.0));
    let (s_a, s_b) = (left(&|v| v), right(&|v| v));
    // [m_a m_b; s_a s_b] [c_a; c_b] = [1; u_x]
    let det = m_a * s_b - m_b * s_a;
    let scale = (m_a.abs() + m_b.abs()) * (s_a.abs() + s_b.abs());
    if !det.is_finite() || det.abs() <= 1e-12 * scale || scale == 0.0 {
        return Err(Error::Degenerate(format!(
            "normalisation system is singular at u_x = {u_x}; with V_A = V_B = u_x the \
             stationary state is a point mass at u_x"
        )));
    }
    prof.c_a = (s_b - m_b * u_x) / det;
    prof.c_b = (m_a * u_x - s_a) / det;
    if prof.c_a < 0.0 || prof.c_b < 0.0 {
        return Err(Error::Degenerate(format!(
            "no non-negative profile with mean {u_x} (constants {}, {})",
            prof.c_a, prof.c_b
        )));
    }
    Ok(prof)
}

/// Closed-form equilibrium of the lateral dynamics averaged over `theta`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct YDiagram {
    pub uy_bar: f64,
    pub ey_bar: f64,
    pub var_ey: f64,
    pub halfwidth: f64,
}

/// Equilibrium lateral mean, energy, energy variance and band half-width
/// for `v_d = vbar_d + lambda P(rho) theta`, `theta ~ U(-1, 1)`.
pub fn analytic_y_diagram(rho: f64, params: &ModelParams) -> Result<YDiagram> {
    let p = crate::model::accel_probability(rho, params.delta)?;
    let a2 = (params.lambda * p).powi(2);
    let v2 = params.vbar_d * params.vbar_d;
    let ey_bar = v2 + a2 / 3.0;
    let var_ey = 4.0 * (v2 / 3.0 + a2 / 45.0) * a2;
    Ok(YDiagram {
        uy_bar: params.vbar_d,
        ey_bar,
        var_ey,
        halfwidth: (ey_bar + var_ey.sqrt()).sqrt(),
    })
}

/// One density of a simulated speed-density diagram.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagramPoint {
    pub rho: f64,
    pub ux_inf: f64,
    pub uy_bar_inf: f64,
    pub ey_bar_inf: f64,
    pub var_ey_inf: f64,
    pub iy: f64,
    pub band_lo: f64,
    pub band_hi: f64,
    /// False when the moments still drift over the averaging window.
    pub equilibrated: bool,
}

/// Tail statistics of one moment log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TailAverage {
    pub u_x: f64,
    pub u_y: f64,
    pub e_y: f64,
    /// Largest change of a tail mean between the two halves of the window.
    pub drift: f64,
}

/// Averages the records in the last `fraction` of the logged time span.
pub fn tail_average(log: &[MomentRecord], fraction: f64) -> Result<TailAverage> {
    let last = log
        .last()
        .ok_or_else(|| Error::Input("empty moment log".into()))?;
    let start = last.tau * (1.0 - fraction);
    let tail: Vec<&MomentRecord> = log.iter().filter(|r| r.tau >= start).collect();
    let mean = |rs: &[&MomentRecord], f: fn(&MomentRecord) -> f64| {
        rs.iter().map(|r| f(r)).sum::<f64>() / rs.len() as f64
    };
    let fields: [fn(&MomentRecord) -> f64; 3] =
        [|r| r.moments.u_x, |r| r.moments.u_y, |r| r.moments.e_y];
    let half = tail.len() / 2;
    let drift = if half >= 1 {
        fields
            .iter()
            .map(|f| (mean(&tail[..half], *f) - mean(&tail[half..], *f)).abs())
            .fold(0.0, f64::max)
    } else {
        0.0
    };
    Ok(TailAverage {
        u_x: mean(&tail, fields[0]),
        u_y: mean(&tail, fields[1]),
        e_y: mean(&tail, fields[2]),
        drift,
    })
}

/// Settings of a simulated diagram.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepConfig {
    pub horizon: f64,
    /// Fraction of the horizon averaged for equilibrium values.
    pub tail_fraction: f64,
    /// Largest tail drift still counted as equilibrium.
    pub drift_tol: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            horizon: 100.0,
            tail_fraction: 0.1,
            drift_tol: 1e-2,
        }
    }
}

/// Runs the collocation ensemble at every density and reduces it to
/// diagram points. Point `k` uses `derive_seed(seed, k)`.
#[allow(clippy::too_many_arguments)]
pub fn diagram_sweep(
    rhos: &[f64],
    initial: &GridDistribution,
    params: &ModelParams,
    solver: &SolverConfig,
    hybrid: &HybridConfig,
    quadrature: &ThetaQuadrature,
    sweep: &SweepConfig,
    seed: u64,
) -> Result<Vec<DiagramPoint>> {
    let mut out = Vec::with_capacity(rhos.len());
    for (k, &rho) in rhos.iter().enumerate() {
        let p = ModelParams {
            rho,
            ..params.clone()
        };
        let sol = run_ensemble(
            initial,
            &p,
            solver,
            hybrid,
            quadrature,
            sweep.horizon,
            derive_seed(seed, k as u64),
        )?;
        let tails = sol
            .states
            .iter()
            .map(|s| tail_average(&s.moment_log, sweep.tail_fraction))
            .collect::<Result<Vec<_>>>()?;
        let uy: Vec<f64> = tails.iter().map(|t| t.u_y).collect();
        let ey: Vec<f64> = tails.iter().map(|t| t.e_y).collect();
        let uy_bar = quadrature.mean(&uy);
        let ey_bar = quadrature.mean(&ey);
        let var_ey = quadrature.variance(&ey);
        let iy = ey_bar + var_ey.sqrt();
        let equilibrated = tails.iter().all(|t| t.drift <= sweep.drift_tol);
        out.push(DiagramPoint {
            rho,
            ux_inf: tails[0].u_x,
            uy_bar_inf: uy_bar,
            ey_bar_inf: ey_bar,
            var_ey_inf: var_ey,
            iy,
            band_lo: uy_bar - iy.sqrt(),
            band_hi: uy_bar + iy.sqrt(),
            equilibrated,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ReferenceMode, TargetClosure};
    use crate::uq::gauss_legendre;
    use approx::assert_relative_eq;

    fn mf(rho: f64, sigma2: f64) -> ModelParams {
        ModelParams {
            rho,
            sigma2,
            wx_mode: ReferenceMode::MeanField,
            ..ModelParams::default()
        }
    }

    #[test]
    fn profile_meets_its_constraints() {
        for form in [ProfileForm::AsPrinted, ProfileForm::ClosureConsistent] {
            let prof = stationary_gx(0.4, &mf(0.5, 10.0), form).unwrap();
            let mass = adaptive_simpson(&|v| prof.eval(v), 0.0, 0.4, 1e-13)
                + adaptive_simpson(&|v| prof.eval(v), 0.4, 1.0, 1e-13);
            let mean = adaptive_simpson(&|v| v * prof.eval(v), 0.0, 0.4, 1e-13)
                + adaptive_simpson(&|v| v * prof.eval(v), 0.4, 1.0, 1e-13);
            assert_relative_eq!(mass, 1.0, epsilon = 1e-8);
            assert_relative_eq!(mean, 0.4, epsilon = 1e-8);
        }
    }

    #[test]
    fn profile_spreads_with_noise() {
        let var = |s2| {
            let prof = stationary_gx(0.5, &mf(0.5, s2), ProfileForm::AsPrinted).unwrap();
            let c = prof.cell_averages(400);
            c.iter()
                .enumerate()
                .map(|(i, g)| ((i as f64 + 0.5) / 400.0 - 0.5).powi(2) * g / 400.0)
                .sum::<f64>()
        };
        let (a, b, c) = (var(5.0), var(10.0), var(15.0));
        assert!(a < b && b < c, "{a} {b} {c}");
    }

    #[test]
    fn mean_speed_closure_is_degenerate() {
        let p = ModelParams {
            closure: TargetClosure::MeanSpeed,
            ..mf(0.5, 10.0)
        };
        assert!(matches!(
            stationary_gx(0.5, &p, ProfileForm::AsPrinted),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn analytic_band() {
        let p = ModelParams {
            lambda: 0.5,
            epsilon: 1.0,
            ..ModelParams::default()
        };
        let d = analytic_y_diagram(0.0, &p).unwrap();
        assert_relative_eq!(
            d.halfwidth,
            (1.0 / 3.0 + 2.0 / 45f64.sqrt()).sqrt() * 0.5,
            epsilon = 1e-15
        );
        assert!((d.halfwidth - 0.4).abs() < 0.01);
        assert_eq!(analytic_y_diagram(1.0, &p).unwrap().halfwidth, 0.0);
        let q = ModelParams {
            vbar_d: -0.0109,
            ..p
        };
        assert_eq!(analytic_y_diagram(0.4, &q).unwrap().uy_bar, -0.0109);
    }

    #[test]
    fn quadrature_reproduces_closed_forms() {
        let p = ModelParams {
            lambda: 0.4,
            vbar_d: 0.1,
            ..ModelParams::default()
        };
        let d = analytic_y_diagram(0.3, &p).unwrap();
        for m in 3..8 {
            let q = gauss_legendre(m).unwrap();
            let ey: Vec<f64> = q
                .nodes
                .iter()
                .map(|&t| p.desired_speed(t).powi(2))
                .collect();
            assert_relative_eq!(q.mean(&ey), d.ey_bar, epsilon = 1e-10);
            assert_relative_eq!(q.variance(&ey), d.var_ey, epsilon = 1e-10);
        }
    }

    #[test]
    fn tail_average_reports_drift() {
        let rec = |tau: f64, u: f64| MomentRecord {
            tau,
            moments: crate::grid::MomentSet {
                u_x: u,
                u_y: 0.0,
                e_x: 0.0,
                e_y: 0.0,
            },
        };
        let flat: Vec<_> = (0..=100).map(|k| rec(k as f64, 0.3)).collect();
        let t = tail_average(&flat, 0.1).unwrap();
        assert_relative_eq!(t.u_x, 0.3, epsilon = 1e-15);
        assert!(t.drift < 1e-15);
        let ramp: Vec<_> = (0..=100).map(|k| rec(k as f64, k as f64 / 10.0)).collect();
        assert!(tail_average(&ramp, 0.1).unwrap().drift > 0.4);
    }
}
