//! Microscopic interaction rules and closure functions.
//!
//! Speeds are dimensionless: `v_x` lives in `[0, 1]` and `v_y` in
//! `[-epsilon, epsilon]`. Everything here is a pure function of its
//! arguments; random draws come in as explicit arguments or through a
//! caller-owned generator.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the lateral relaxation rate depends on the mean longitudinal speed.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BetaMode {
    /// `beta(u_x) = beta0`.
    #[default]
    Constant,
    /// `beta(u_x) = beta0 * u_x`.
    LinearInUx,
}

/// Reference speed `W_x` that selects between acceleration and braking.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReferenceMode {
    /// `W_x = w_x`, the speed of a leading vehicle.
    #[default]
    Binary,
    /// `W_x = u_x`, the mean longitudinal speed.
    MeanField,
}

/// Choice of the target speeds `V_A`, `V_B`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TargetClosure {
    /// `V_A = min(v_x + dv, 1)`, `V_B = P(rho) W_x`.
    #[default]
    SpeedJump,
    /// `V_A = V_B = W_x`; the simplified setting used for the moment laws.
    MeanSpeed,
}

/// Microscopic and closure constants of the model.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
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
}

impl Default for ModelParams {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            delta: 1.0,
            dv_jump: 0.2,
            kappa: 1.0,
            sigma2: 10.0,
            epsilon: 1.0,
            beta_mode: BetaMode::Constant,
            beta0: 0.5,
            vbar_d: 0.0,
            lambda: 0.1,
            rho: 0.3,
            wx_mode: ReferenceMode::Binary,
            closure: TargetClosure::SpeedJump,
        }
    }
}

impl ModelParams {
    /// Checks every range and cross-field invariant.
    pub fn validate(&self) -> Result<()> {
        fn finite(field: &'static str, v: f64) -> Result<()> {
            if v.is_finite() {
                Ok(())
            } else {
                Err(Error::param(field, format!("{v} is not finite")))
            }
        }
        finite("alpha", self.alpha)?;
        finite("dv_jump", self.dv_jump)?;
        finite("kappa", self.kappa)?;
        finite("sigma2", self.sigma2)?;
        finite("epsilon", self.epsilon)?;
        finite("beta0", self.beta0)?;
        finite("vbar_d", self.vbar_d)?;
        finite("lambda", self.lambda)?;
        finite("rho", self.rho)?;
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::param("alpha", "must lie in (0, 1]"));
        }
        if self.delta.is_nan() || self.delta < 0.0 {
            return Err(Error::param("delta", "must be >= 0"));
        }
        if self.dv_jump <= 0.0 {
            return Err(Error::param("dv_jump", "must be > 0"));
        }
        if self.kappa < 1.0 {
            return Err(Error::param("kappa", "must be >= 1"));
        }
        if self.sigma2 < 0.0 {
            return Err(Error::param("sigma2", "must be >= 0"));
        }
        if !(self.epsilon > 0.0 && self.epsilon <= 1.0) {
            return Err(Error::param("epsilon", "must lie in (0, 1]"));
        }
        if !(self.beta0 > 0.0 && self.beta0 <= 1.0) {
            return Err(Error::param("beta0", "must lie in (0, 1]"));
        }
        if !(self.vbar_d > -1.0 && self.vbar_d < 1.0) {
            return Err(Error::param("vbar_d", "must lie in (-1, 1)"));
        }
        if self.lambda <= 0.0 {
            return Err(Error::param("lambda", "must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.rho) {
            return Err(Error::param("rho", "must lie in [0, 1]"));
        }
        // P attains its maximum at rho = 0.
        let p_max = accel_probability(0.0, self.delta)?;
        let reach = self.vbar_d.abs() + self.lambda * p_max;
        if reach > self.epsilon + 1e-12 {
            return Err(Error::param(
                "lambda",
                format!(
                    "|vbar_d| + lambda * max P = {reach} exceeds epsilon = {}",
                    self.epsilon
                ),
            ));
        }
        Ok(())
    }

    /// `P(rho)` for the configured density. Assumes validated parameters.
    pub fn accel_prob(&self) -> f64 {
        1.0 - self.rho.powf(self.delta)
    }

    /// Relaxation rate `beta(u_x)`.
    pub fn beta(&self, u_x: f64) -> f64 {
        match self.beta_mode {
            BetaMode::Constant => self.beta0,
            BetaMode::LinearInUx => self.beta0 * u_x,
        }
    }

    /// Target speeds `(V_A, V_B)` for a vehicle at `v_x` facing reference `w_x`.
    pub fn targets(&self, v_x: f64, w_x: f64) -> (f64, f64) {
        match self.closure {
            TargetClosure::SpeedJump => ((v_x + self.dv_jump).min(1.0), self.accel_prob() * w_x),
            TargetClosure::MeanSpeed => (w_x, w_x),
        }
    }

    /// `v_d(theta) = vbar_d + lambda P(rho) theta`.
    pub fn desired_speed(&self, theta: f64) -> f64 {
        self.vbar_d + self.lambda * self.accel_prob() * theta
    }
}

/// Probability of accelerating, `P(rho) = 1 - rho^delta`.
pub fn accel_probability(rho: f64, delta: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&rho) {
        return Err(Error::Domain(format!("density {rho} outside [0, 1]")));
    }
    if delta.is_nan() || delta < 0.0 {
        return Err(Error::Domain(format!("exponent {delta} is negative")));
    }
    Ok(1.0 - rho.powf(delta))
}

/// Density at which `P(rho) = 1/2`.
pub fn critical_density(delta: f64) -> Result<f64> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::Domain(
            "no critical density exists for a non-positive exponent".into(),
        ));
    }
    Ok(0.5f64.powf(1.0 / delta))
}

/// `(V_A, V_B) = (min(v_x + dv, 1), P W_x)` for the speed-jump closure.
pub fn target_speeds(v_x: f64, w_x: f64, accel_prob: f64, dv_jump: f64) -> Result<(f64, f64)> {
    unit_interval("v_x", v_x)?;
    unit_interval("W_x", w_x)?;
    unit_interval("P", accel_prob)?;
    if dv_jump <= 0.0 {
        return Err(Error::Domain("speed jump must be positive".into()));
    }
    Ok(((v_x + dv_jump).min(1.0), accel_prob * w_x))
}

/// `nu(v) = v (1 - v)`, which switches the fluctuations off at the domain ends.
#[inline]
pub fn nu(v_x: f64) -> f64 {
    v_x * (1.0 - v_x)
}

#[inline]
pub(crate) fn pow_kappa(base: f64, kappa: f64) -> f64 {
    if kappa == 1.0 {
        base
    } else if kappa == 2.0 {
        base * base
    } else {
        base.powf(kappa)
    }
}

/// `(D_A, D_B) = (nu (V_A - v)^kappa, nu (v - V_B)^kappa)`.
pub fn diffusion_coefficients(v_x: f64, v_a: f64, v_b: f64, kappa: f64) -> Result<(f64, f64)> {
    unit_interval("v_x", v_x)?;
    if kappa < 1.0 {
        return Err(Error::Domain(format!("kappa = {kappa} < 1")));
    }
    if v_a < v_x {
        return Err(Error::Domain(format!("V_A = {v_a} below v_x = {v_x}")));
    }
    if v_b > v_x {
        return Err(Error::Domain(format!("V_B = {v_b} above v_x = {v_x}")));
    }
    let n = nu(v_x);
    Ok((
        n * pow_kappa(v_a - v_x, kappa),
        n * pow_kappa(v_x - v_b, kappa),
    ))
}

/// Admissible noise amplitudes for one density.
///
/// `accel` is `(1 - alpha P) / sqrt(alpha P)`; `braking` is the mirror bound
/// `(1 - alpha (1-P)) / sqrt(alpha (1-P))` required by the braking branch.
/// A `None` means the branch has zero weight (`P = 0` or `P = 1`) and cannot
/// move the speed. `lower` is `(alpha (1-P) - 1) / sqrt(alpha (1-P))`, which is
/// vacuous whenever it is negative.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct XiBounds {
    pub accel: Option<f64>,
    pub braking: Option<f64>,
    pub lower: Option<f64>,
}

impl XiBounds {
    /// Largest `|xi|` admissible in every active branch.
    pub fn admissible(&self) -> f64 {
        let a = self.accel.unwrap_or(f64::INFINITY);
        let b = self.braking.unwrap_or(f64::INFINITY);
        a.min(b)
    }

    pub fn lower_is_vacuous(&self) -> bool {
        self.lower.is_none_or(|l| l <= 0.0)
    }
}

pub fn xi_admissible_halfwidth(rho: f64, alpha: f64, delta: f64) -> Result<XiBounds> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::Domain(format!("alpha = {alpha} outside (0, 1]")));
    }
    let p = accel_probability(rho, delta)?;
    let q = 1.0 - p;
    let bound = |w: f64| (w > 0.0).then(|| (1.0 - alpha * w) / (alpha * w).sqrt());
    Ok(XiBounds {
        accel: bound(p),
        braking: bound(q),
        lower: (q > 0.0).then(|| (alpha * q - 1.0) / (alpha * q).sqrt()),
    })
}

/// Post-interaction longitudinal speed. The leader is left unchanged.
///
/// `xi` must respect the bound of the branch that fires; otherwise the draw
/// is rejected and the caller should resample.
pub fn x_interaction(v_x: f64, w_x: f64, params: &ModelParams, xi: f64) -> Result<f64> {
    unit_interval("v_x", v_x)?;
    unit_interval("W_x", w_x)?;
    let p = params.accel_prob();
    let (v_a, v_b) = params.targets(v_x, w_x);
    let nu_v = nu(v_x);
    let out = if v_x < w_x {
        let weight = params.alpha * p;
        if weight <= 0.0 {
            return Ok(v_x);
        }
        let bound = (1.0 - weight) / weight.sqrt();
        if xi.abs() > bound {
            return Err(Error::RejectedDraw { xi, bound });
        }
        let d_a = nu_v * pow_kappa(v_a - v_x, params.kappa);
        v_x + weight * (v_a - v_x) + weight.sqrt() * d_a * xi
    } else if v_x > w_x {
        let weight = params.alpha * (1.0 - p);
        if weight <= 0.0 {
            return Ok(v_x);
        }
        let bound = (1.0 - weight) / weight.sqrt();
        if xi.abs() > bound {
            return Err(Error::RejectedDraw { xi, bound });
        }
        let d_b = nu_v * pow_kappa(v_x - v_b, params.kappa);
        v_x + weight * (v_b - v_x) + weight.sqrt() * d_b * xi
    } else {
        v_x
    };
    // The bounds keep the exact value inside [0, 1]; clamp only absorbs rounding.
    Ok(out.clamp(0.0, 1.0))
}

/// Desired lateral speed for an uncertainty draw `theta` in `[-1, 1]`.
pub fn desired_speed(theta: f64, params: &ModelParams) -> Result<f64> {
    if !(-1.0..=1.0).contains(&theta) {
        return Err(Error::Domain(format!("theta = {theta} outside [-1, 1]")));
    }
    Ok(params.desired_speed(theta))
}

/// Relaxation of the lateral speed towards `v_d(theta)`.
pub fn y_interaction(v_y: f64, u_x: f64, theta: f64, params: &ModelParams) -> Result<f64> {
    let beta = params.beta(u_x);
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::param(
            "beta0",
            format!("effective beta {beta} outside [0, 1]"),
        ));
    }
    let v_d = desired_speed(theta, params)?;
    let eps = params.epsilon;
    Ok(((1.0 - beta) * v_y + beta * v_d).clamp(-eps, eps))
}

/// Law of the longitudinal fluctuation `xi`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseLaw {
    #[default]
    TwoPoint,
    Uniform,
}

/// Zero-mean, compactly supported fluctuation with a configured variance.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub law: NoiseLaw,
    pub variance: f64,
}

impl NoiseSpec {
    pub fn new(law: NoiseLaw, variance: f64) -> Result<Self> {
        if !(variance > 0.0 && variance.is_finite()) {
            return Err(Error::param(
                "noise_variance",
                "must be positive and finite",
            ));
        }
        Ok(Self { law, variance })
    }

    pub fn support_halfwidth(&self) -> f64 {
        let s = self.variance.sqrt();
        match self.law {
            NoiseLaw::TwoPoint => s,
            NoiseLaw::Uniform => 3f64.sqrt() * s,
        }
    }

    /// Fails when the support pokes outside the admissible amplitude.
    pub fn check_admissible(&self, bounds: &XiBounds) -> Result<()> {
        let limit = bounds.admissible();
        if self.support_halfwidth() > limit {
            return Err(Error::param(
                "noise_variance",
                format!(
                    "support half-width {} exceeds admissible bound {limit}",
                    self.support_halfwidth()
                ),
            ));
        }
        Ok(())
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let h = self.support_halfwidth();
        match self.law {
            NoiseLaw::TwoPoint => {
                if rng.random::<bool>() {
                    h
                } else {
                    -h
                }
            }
            NoiseLaw::Uniform => h * (2.0 * rng.random::<f64>() - 1.0),
        }
    }
}

fn unit_interval(name: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::Domain(format!("{name} = {v} outside [0, 1]")))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    #[test]
    fn accel_probability_examples() {
        assert_eq!(accel_probability(0.0, 1.0).unwrap(), 1.0);
        assert_eq!(accel_probability(1.0, 2.0).unwrap(), 0.0);
        assert_eq!(accel_probability(0.5, 1.0).unwrap(), 0.5);
        assert!(accel_probability(1.5, 1.0).is_err());
        assert!(accel_probability(0.5, -1.0).is_err());
    }

    #[test]
    fn accel_probability_is_monotone() {
        for delta in [0.5, 1.0, 2.0, 4.0] {
            let mut prev = f64::INFINITY;
            for k in 0..=200 {
                let p = accel_probability(k as f64 / 200.0, delta).unwrap();
                assert!((0.0..=1.0).contains(&p));
                assert!(p <= prev);
                prev = p;
            }
        }
    }

    #[test]
    fn critical_density_examples() {
        assert_eq!(critical_density(1.0).unwrap(), 0.5);
        assert_relative_eq!(
            critical_density(2.0).unwrap(),
            0.7071067812,
            epsilon = 1e-10
        );
        assert_eq!(critical_density(f64::INFINITY).unwrap(), 1.0);
        assert!(critical_density(0.0).is_err());
    }

    #[test]
    fn target_speed_examples() {
        let (va, _) = target_speeds(0.95, 0.5, 0.3, 0.2).unwrap();
        assert_eq!(va, 1.0);
        let (_, vb) = target_speeds(0.3, 0.6, 0.0, 0.2).unwrap();
        assert_eq!(vb, 0.0);
        let (va, vb) = target_speeds(0.3, 0.6, 0.5, 0.2).unwrap();
        assert_relative_eq!(va, 0.5, epsilon = 1e-15);
        assert_relative_eq!(vb, 0.3, epsilon = 1e-15);
    }

    #[test]
    fn diffusion_coefficient_examples() {
        assert_eq!(
            diffusion_coefficients(0.0, 0.4, 0.0, 2.0).unwrap(),
            (0.0, 0.0)
        );
        assert_eq!(
            diffusion_coefficients(1.0, 1.0, 0.2, 1.0).unwrap(),
            (0.0, 0.0)
        );
        let (da, db) = diffusion_coefficients(0.5, 0.7, 0.2, 1.0).unwrap();
        assert_relative_eq!(da, 0.05, epsilon = 1e-15);
        assert_relative_eq!(db, 0.075, epsilon = 1e-15);
        assert!(diffusion_coefficients(0.5, 0.4, 0.2, 1.0).is_err());
        assert!(diffusion_coefficients(0.5, 0.7, 0.6, 1.0).is_err());
    }

    #[test]
    fn x_interaction_examples() {
        let mut p = params();
        p.alpha = 1.0;
        p.rho = 0.0;
        assert_relative_eq!(
            x_interaction(0.3, 0.5, &p, 0.0).unwrap(),
            0.5,
            epsilon = 1e-15
        );
        p.rho = 1.0;
        assert_eq!(x_interaction(0.6, 0.5, &p, 0.0).unwrap(), 0.0);
        assert_eq!(x_interaction(0.42, 0.42, &p, 0.3).unwrap(), 0.42);
    }

    #[test]
    fn x_interaction_rejects_large_noise() {
        let mut p = params();
        p.alpha = 1.0;
        p.rho = 0.0;
        // P = 1 and alpha = 1: no noise is admissible when accelerating.
        assert!(matches!(
            x_interaction(0.3, 0.5, &p, 0.1),
            Err(Error::RejectedDraw { .. })
        ));
    }

    #[test]
    fn xi_bounds_examples() {
        let b = xi_admissible_halfwidth(0.0, 1.0, 1.0).unwrap();
        assert_eq!(b.accel, Some(0.0));
        assert_eq!(b.braking, None);

        let b = xi_admissible_halfwidth(0.5, 0.04, 1.0).unwrap();
        let expected = (1.0 - 0.02) / 0.02f64.sqrt();
        assert_relative_eq!(b.accel.unwrap(), expected, epsilon = 1e-12);
        assert_relative_eq!(b.accel.unwrap(), 6.9296, epsilon = 1e-4);
        assert!(b.lower.unwrap() < 0.0);
        assert!(b.lower_is_vacuous());

        let b = xi_admissible_halfwidth(1.0, 0.5, 1.0).unwrap();
        assert_eq!(b.accel, None);
        assert!(b.braking.is_some());
    }

    #[test]
    fn desired_speed_examples() {
        let mut p = params();
        p.vbar_d = 0.1;
        assert_eq!(desired_speed(0.0, &p).unwrap(), 0.1);
        p.rho = 1.0;
        assert_eq!(desired_speed(1.0, &p).unwrap(), 0.1);
        p.vbar_d = 0.0;
        p.rho = 0.0;
        p.lambda = 0.5;
        assert_eq!(desired_speed(1.0, &p).unwrap(), 0.5);
        assert!(desired_speed(1.2, &p).is_err());
    }

    #[test]
    fn y_interaction_examples() {
        let mut p = params();
        p.rho = 0.0;
        p.lambda = 0.2;
        p.vbar_d = 0.0;
        p.beta0 = 1.0;
        assert_relative_eq!(
            y_interaction(0.4, 0.5, -1.0, &p).unwrap(),
            -0.2,
            epsilon = 1e-15
        );
        p.beta0 = 0.5;
        assert_relative_eq!(
            y_interaction(0.4, 0.5, -1.0, &p).unwrap(),
            0.1,
            epsilon = 1e-15
        );
        p.beta_mode = BetaMode::LinearInUx;
        assert_eq!(y_interaction(0.4, 0.0, -1.0, &p).unwrap(), 0.4);
        p.beta0 = 0.8;
        assert!(y_interaction(0.4, 1.5, 0.0, &p).is_err());
    }

    #[test]
    fn validate_rejects_unreachable_desired_speed() {
        let mut p = params();
        p.epsilon = 0.3;
        p.lambda = 0.5;
        assert!(matches!(
            p.validate(),
            Err(Error::InvalidParam {
                field: "lambda",
                ..
            })
        ));
        assert!(params().validate().is_ok());
    }

    #[test]
    fn noise_moments() {
        for law in [NoiseLaw::TwoPoint, NoiseLaw::Uniform] {
            let spec = NoiseSpec::new(law, 0.04).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(11);
            let n = 1_000_000;
            let (mut s1, mut s2) = (0.0, 0.0);
            for _ in 0..n {
                let x = spec.sample(&mut rng);
                assert!(x.abs() <= spec.support_halfwidth());
                s1 += x;
                s2 += x * x;
            }
            let mean = s1 / n as f64;
            let var = s2 / n as f64 - mean * mean;
            let sd = spec.variance.sqrt();
            assert!(mean.abs() <= 4.0 * sd / 1e3, "{law:?} mean {mean}");
            assert!(
                (var / spec.variance - 1.0).abs() < 0.01,
                "{law:?} var {var}"
            );
        }
    }

    #[test]
    fn noise_admissibility() {
        let bounds = xi_admissible_halfwidth(0.5, 0.04, 1.0).unwrap();
        assert!(NoiseSpec::new(NoiseLaw::Uniform, 1.0)
            .unwrap()
            .check_admissible(&bounds)
            .is_ok());
        assert!(NoiseSpec::new(NoiseLaw::TwoPoint, 100.0)
            .unwrap()
            .check_admissible(&bounds)
            .is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(10_000))]

            #[test]
            fn x_interaction_stays_in_unit_interval(
                v in 0.0f64..=1.0,
                w in 0.0f64..=1.0,
                rho in 0.0f64..=1.0,
                alpha in 0.001f64..=1.0,
                kappa in 1.0f64..3.0,
                jump in 0.01f64..0.5,
                u in -1.0f64..=1.0,
                mean_speed in any::<bool>(),
            ) {
                let p = ModelParams {
                    alpha,
                    rho,
                    kappa,
                    dv_jump: jump,
                    closure: if mean_speed { TargetClosure::MeanSpeed } else { TargetClosure::SpeedJump },
                    ..ModelParams::default()
                };
                let bound = xi_admissible_halfwidth(rho, alpha, p.delta).unwrap().admissible();
                let xi = if bound.is_finite() { u * bound } else { u };
                let out = x_interaction(v, w, &p, xi).unwrap();
                prop_assert!((0.0..=1.0).contains(&out));
            }

            #[test]
            fn y_interaction_stays_in_lateral_domain(
                eps in 0.05f64..=1.0,
                frac in -1.0f64..=1.0,
                ux in 0.0f64..=1.0,
                theta in -1.0f64..=1.0,
                beta0 in 0.001f64..=1.0,
                rho in 0.0f64..=1.0,
                linear in any::<bool>(),
            ) {
                let p = ModelParams {
                    epsilon: eps,
                    vbar_d: 0.3 * eps,
                    lambda: 0.7 * eps,
                    beta0,
                    rho,
                    beta_mode: if linear { BetaMode::LinearInUx } else { BetaMode::Constant },
                    ..ModelParams::default()
                };
                p.validate().unwrap();
                let out = y_interaction(frac * eps, ux, theta, &p).unwrap();
                prop_assert!(out.abs() <= eps);
            }
        }
    }
}
