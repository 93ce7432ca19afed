//! Monte Carlo machinery for the lane-change collision operator.
//!
//! Grid densities are turned into particles by stratified sampling, relaxed
//! with the Nanbu step and deposited back. [`qy_gain_grid`] evaluates the
//! gain term deterministically and serves as a noise-free reference.

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{GridDistribution, MomentSet, VelocityGrid};
use crate::model::{x_interaction, y_interaction, ModelParams, NoiseSpec, ReferenceMode};
use crate::util::stream_rng;

/// Particles per generator stream in the parallel updates.
const CHUNK: usize = 8192;

/// Sample of `(v_x, v_y)` pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct ParticleEnsemble {
    pub pairs: Vec<(f64, f64)>,
    /// Seed the ensemble was drawn or last updated with.
    pub seed: u64,
}

impl ParticleEnsemble {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// Empirical moments.
    pub fn moments(&self) -> MomentSet {
        let n = self.pairs.len().max(1) as f64;
        let mut m = MomentSet::default();
        for &(x, y) in &self.pairs {
            m.u_x += x;
            m.u_y += y;
            m.e_x += x * x;
            m.e_y += y * y;
        }
        m.u_x /= n;
        m.u_y /= n;
        m.e_x /= n;
        m.e_y /= n;
        m
    }

    /// Standard errors of the sample means `(u_x, u_y)`.
    pub fn mean_std_errors(&self) -> (f64, f64) {
        let m = self.moments();
        let n = self.pairs.len() as f64;
        if n < 2.0 {
            return (f64::INFINITY, f64::INFINITY);
        }
        let c = n / (n - 1.0);
        (
            (m.var_x().max(0.0) * c / n).sqrt(),
            (m.var_y().max(0.0) * c / n).sqrt(),
        )
    }
}

/// Draws exactly `n` particles with per-cell quotas.
///
/// Each cell receives `floor(n p_c)` particles; the remaining ones go to the
/// largest fractional parts, ties broken by a seeded random key. Positions
/// are uniform within their cell.
pub fn stratified_sample(dist: &GridDistribution, n: usize, seed: u64) -> Result<ParticleEnsemble> {
    if n == 0 {
        return Err(Error::param("n_particles", "must be at least 1"));
    }
    let grid = *dist.grid();
    let mass = dist.mass();
    if !(mass > 0.0 && mass.is_finite()) {
        return Err(Error::Degenerate(format!("cannot sample from mass {mass}")));
    }
    let scale = grid.cell_area() / mass * n as f64;
    let mut rng = stream_rng(seed, 0);
    let mut quotas = Vec::with_capacity(grid.len());
    let mut remainders = Vec::with_capacity(grid.len());
    let mut assigned = 0usize;
    for (k, v) in dist.values().iter().enumerate() {
        let target = v * scale;
        let q = target.floor();
        quotas.push(q as usize);
        assigned += q as usize;
        let frac = target - q;
        if frac > 0.0 {
            remainders.push((frac, rng.random::<u64>(), k));
        }
    }
    if assigned > n {
        return Err(Error::Internal(format!("quotas sum to {assigned} > {n}")));
    }
    remainders.sort_unstable_by(|a, b| b.0.total_cmp(&a.0).then(b.1.cmp(&a.1)));
    let missing = n - assigned;
    if missing > remainders.len() {
        return Err(Error::Internal(
            "not enough cells for residual particles".into(),
        ));
    }
    for r in &remainders[..missing] {
        quotas[r.2] += 1;
    }
    let (dx, dy) = (grid.dv_x(), grid.dv_y());
    let eps = grid.epsilon();
    let mut pairs = Vec::with_capacity(n);
    for j in 0..grid.n_y() {
        let y0 = -eps + j as f64 * dy;
        for i in 0..grid.n_x() {
            let x0 = i as f64 * dx;
            for _ in 0..quotas[grid.index(i, j)] {
                let x = (x0 + dx * rng.random::<f64>()).min(1.0);
                let y = (y0 + dy * rng.random::<f64>()).min(eps);
                pairs.push((x, y));
            }
        }
    }
    Ok(ParticleEnsemble { pairs, seed })
}

/// One Nanbu step of the lane-change operator: every particle relaxes its
/// lateral speed with probability `p_interact`.
pub fn nanbu_y_step(
    ens: &ParticleEnsemble,
    u_x: f64,
    theta: f64,
    p_interact: f64,
    params: &ModelParams,
    seed: u64,
) -> Result<ParticleEnsemble> {
    if !(0.0..=1.0).contains(&p_interact) {
        return Err(Error::param(
            "interaction_probability",
            format!("{p_interact} outside [0, 1]"),
        ));
    }
    // Validates beta and theta once for the whole ensemble.
    y_interaction(0.0, u_x, theta, params)?;
    let mut out = ens.clone();
    out.seed = seed;
    out.pairs
        .par_chunks_mut(CHUNK)
        .enumerate()
        .try_for_each(|(c, chunk)| -> Result<()> {
            let mut rng = stream_rng(seed, c as u64);
            for p in chunk.iter_mut() {
                if rng.random::<f64>() < p_interact {
                    p.1 = y_interaction(p.1, u_x, theta, params)?;
                }
            }
            Ok(())
        })?;
    Ok(out)
}

/// Histogram of the particles on `grid`, scaled to unit mass.
pub fn deposit(ens: &ParticleEnsemble, grid: &VelocityGrid) -> Result<GridDistribution> {
    if ens.is_empty() {
        return Err(Error::Degenerate("empty ensemble".into()));
    }
    let counts = ens
        .pairs
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<Vec<u64>> {
            let mut h = vec![0u64; grid.len()];
            for &(x, y) in chunk {
                match (grid.x_cell(x), grid.y_cell(y)) {
                    (Some(i), Some(j)) => h[grid.index(i, j)] += 1,
                    _ => {
                        return Err(Error::Internal(format!(
                            "particle ({x}, {y}) outside the velocity domain"
                        )))
                    }
                }
            }
            Ok(h)
        })
        .try_reduce(
            || vec![0u64; grid.len()],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                Ok(a)
            },
        )?;
    let w = 1.0 / (ens.len() as f64 * grid.cell_area());
    GridDistribution::from_values(*grid, counts.into_iter().map(|c| c as f64 * w).collect())
}

/// Deterministic gain term of the lane-change operator on the grid.
///
/// Each cell receives the mass that a minmod piecewise-linear reconstruction
/// places on the pre-image of the cell under the relaxation map. For
/// `beta = 1` every column collapses into the cell holding `v_d(theta)`.
pub fn qy_gain_grid(
    dist: &GridDistribution,
    u_x: f64,
    theta: f64,
    params: &ModelParams,
) -> Result<GridDistribution> {
    let beta = params.beta(u_x);
    if !(0.0..=1.0).contains(&beta) {
        return Err(Error::param(
            "beta0",
            format!("effective beta {beta} outside [0, 1]"),
        ));
    }
    let v_d = crate::model::desired_speed(theta, params)?;
    let grid = *dist.grid();
    let (nx, ny) = (grid.n_x(), grid.n_y());
    let eps = grid.epsilon();
    let dy = grid.dv_y();
    let mut out = vec![0.0; grid.len()];
    if beta >= 1.0 {
        let jd = grid
            .y_cell(v_d)
            .ok_or_else(|| Error::Domain(format!("v_d = {v_d} outside [-eps, eps]")))?;
        for i in 0..nx {
            let column: f64 = (0..ny).map(|j| dist.value(i, j)).sum();
            out[grid.index(i, jd)] = column;
        }
        return GridDistribution::from_values(grid, out);
    }
    let pre = |v: f64| (v - beta * v_d) / (1.0 - beta);
    let mut column = vec![0.0; ny];
    let mut slopes = vec![0.0; ny];
    for i in 0..nx {
        for j in 0..ny {
            column[j] = dist.value(i, j);
        }
        minmod_slopes(&column, dy, &mut slopes);
        let before: f64 = column.iter().sum();
        let mut after = 0.0;
        for j in 0..ny {
            let lo = pre(-eps + j as f64 * dy);
            let hi = pre(-eps + (j + 1) as f64 * dy);
            let m = reconstruction_mass(&column, &slopes, eps, dy, lo, hi) / dy;
            out[grid.index(i, j)] = m;
            after += m;
        }
        if before > 0.0 {
            let drift = (after - before).abs() / before;
            if drift > 1e-3 {
                return Err(Error::Internal(format!(
                    "gain term lost {drift:e} of the mass in column {i}"
                )));
            }
            let s = before / after;
            for j in 0..ny {
                out[grid.index(i, j)] *= s;
            }
        }
    }
    GridDistribution::from_values(grid, out)
}

fn minmod_slopes(f: &[f64], h: f64, slopes: &mut [f64]) {
    let n = f.len();
    for j in 0..n {
        slopes[j] = if j == 0 || j + 1 == n {
            0.0
        } else {
            let l = (f[j] - f[j - 1]) / h;
            let r = (f[j + 1] - f[j]) / h;
            if l * r <= 0.0 {
                0.0
            } else if l.abs() < r.abs() {
                l
            } else {
                r
            }
        };
    }
}

/// Integral of the reconstruction over `[lo, hi]` intersected with the domain.
fn reconstruction_mass(f: &[f64], slopes: &[f64], eps: f64, h: f64, lo: f64, hi: f64) -> f64 {
    let lo = lo.max(-eps);
    let hi = hi.min(eps);
    if hi <= lo {
        return 0.0;
    }
    let n = f.len();
    let first = (((lo + eps) / h).floor() as usize).min(n - 1);
    let last = (((hi + eps) / h).floor() as usize).min(n - 1);
    let mut total = 0.0;
    for j in first..=last {
        let a = -eps + j as f64 * h;
        let c = a + 0.5 * h;
        let l = lo.max(a);
        let r = hi.min(a + h);
        if r > l {
            total += f[j] * (r - l) + 0.5 * slopes[j] * ((r - c).powi(2) - (l - c).powi(2));
        }
    }
    total
}

/// Settings of the particle-level Boltzmann simulation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleConfig {
    pub n_particles: usize,
    /// Ratio of lateral to longitudinal interaction frequency.
    pub gamma: f64,
    pub horizon: f64,
    pub dt: f64,
    /// Number of equally spaced recording times after `t = 0`.
    pub n_samples: usize,
    /// Longitudinal fluctuation; `None` switches the noise off.
    pub noise: Option<NoiseSpec>,
    pub theta: f64,
}

impl Default for OracleConfig {
    fn default() -> Self {
        Self {
            n_particles: 10_000,
            gamma: 0.1,
            horizon: 50.0,
            dt: 0.05,
            n_samples: 10,
            noise: None,
            theta: 0.0,
        }
    }
}

/// Moments of the particle system at one recording time.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OracleSample {
    pub t: f64,
    pub moments: MomentSet,
    pub se_u_x: f64,
    pub se_u_y: f64,
}

/// Direct simulation of the unscaled Boltzmann-type model.
///
/// Per step of length `dt` each vehicle interacts along the lane with
/// probability `rho / 2 * dt` and across lanes with probability
/// `gamma * rho * dt`. Binary interactions pick a random leader from the
/// state at the start of the step; the leader is left unchanged.
pub fn particle_boltzmann_oracle(
    params: &ModelParams,
    initial: &ParticleEnsemble,
    config: &OracleConfig,
    seed: u64,
) -> Result<Vec<OracleSample>> {
    params.validate()?;
    if config.n_particles < 1000 || initial.len() != config.n_particles {
        return Err(Error::param(
            "n_particles",
            "needs at least 1000 particles matching the initial ensemble",
        ));
    }
    if !(config.gamma > 0.0 && config.gamma <= 1.0) {
        return Err(Error::param("gamma", "must lie in (0, 1]"));
    }
    if !(config.dt > 0.0 && config.horizon > 0.0) || config.n_samples == 0 {
        return Err(Error::param(
            "dt",
            "dt, horizon and n_samples must be positive",
        ));
    }
    let px = 0.5 * params.rho * config.dt;
    let py = config.gamma * params.rho * config.dt;
    if px > 1.0 || py > 1.0 {
        return Err(Error::param(
            "dt",
            format!("interaction probabilities {px}, {py} per step exceed 1"),
        ));
    }
    let steps = (config.horizon / config.dt).round() as usize;
    let every = (steps / config.n_samples).max(1);
    let mut state = initial.clone();
    let mut out = vec![record(&state, 0.0)];
    let mut rng = stream_rng(seed, u64::MAX);
    let n = state.len();
    for step in 1..=steps {
        let snapshot: Vec<f64> = state.pairs.iter().map(|p| p.0).collect();
        let u_x = snapshot.iter().sum::<f64>() / n as f64;
        for k in 0..n {
            if rng.random::<f64>() < px {
                let w_x = match params.wx_mode {
                    ReferenceMode::MeanField => u_x,
                    ReferenceMode::Binary => {
                        let mut other = rng.random_range(0..n - 1);
                        if other >= k {
                            other += 1;
                        }
                        snapshot[other]
                    }
                };
                state.pairs[k].0 = interact_x(snapshot[k], w_x, params, config, &mut rng)?;
            }
            if rng.random::<f64>() < py {
                state.pairs[k].1 = y_interaction(state.pairs[k].1, u_x, config.theta, params)?;
            }
        }
        if step % every == 0 || step == steps {
            out.push(record(&state, step as f64 * config.dt));
        }
    }
    Ok(out)
}

fn interact_x<R: Rng>(
    v_x: f64,
    w_x: f64,
    params: &ModelParams,
    config: &OracleConfig,
    rng: &mut R,
) -> Result<f64> {
    let Some(noise) = config.noise else {
        return x_interaction(v_x, w_x, params, 0.0);
    };
    for _ in 0..1000 {
        match x_interaction(v_x, w_x, params, noise.sample(rng)) {
            Err(Error::RejectedDraw { .. }) => continue,
            other => return other,
        }
    }
    Err(Error::param("noise", "draws are rejected persistently"))
}

fn record(ens: &ParticleEnsemble, t: f64) -> OracleSample {
    let (se_u_x, se_u_y) = ens.mean_std_errors();
    OracleSample {
        t,
        moments: ens.moments(),
        se_u_x,
        se_u_y,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::rel_l1_between;
    use approx::assert_relative_eq;

    fn params() -> ModelParams {
        ModelParams::default()
    }

    fn smooth(nx: usize, ny: usize) -> GridDistribution {
        let g = VelocityGrid::new(nx, ny, 1.0).unwrap();
        GridDistribution::from_product(
            g,
            |x| 0.2 + x * (1.0 - x),
            |y| (-(y - 0.2).powi(2) / 0.1).exp(),
        )
        .unwrap()
    }

    #[test]
    fn point_mass_samples_stay_in_cell() {
        let g = VelocityGrid::new(5, 4, 1.0).unwrap();
        let d = GridDistribution::point_mass(g, 3, 1).unwrap();
        let ens = stratified_sample(&d, 1000, 1).unwrap();
        assert_eq!(ens.len(), 1000);
        let back = deposit(&ens, &g).unwrap();
        assert_eq!(back, d);
    }

    #[test]
    fn uniform_density_gets_equal_quotas() {
        let g = VelocityGrid::new(4, 5, 1.0).unwrap();
        let d = GridDistribution::initial_condition(g);
        let ens = stratified_sample(&d, 200, 3).unwrap();
        let back = deposit(&ens, &g).unwrap();
        for v in back.values() {
            assert_relative_eq!(*v, 0.5, epsilon = 1e-12);
        }
    }

    #[test]
    fn sample_size_is_exact_and_deterministic() {
        let d = smooth(7, 9);
        for n in [1, 13, 997, 5000] {
            let a = stratified_sample(&d, n, 11).unwrap();
            assert_eq!(a.len(), n);
            assert_eq!(a, stratified_sample(&d, n, 11).unwrap());
        }
    }

    #[test]
    fn deposit_mass_is_one() {
        let d = smooth(10, 10);
        let ens = stratified_sample(&d, 777, 5).unwrap();
        assert_relative_eq!(
            deposit(&ens, d.grid()).unwrap().mass(),
            1.0,
            epsilon = 1e-13
        );
    }

    #[test]
    fn nanbu_identity_and_full_relaxation() {
        let d = smooth(8, 8);
        let ens = stratified_sample(&d, 2000, 2).unwrap();
        let p = ModelParams {
            beta0: 1.0,
            ..params()
        };
        let same = nanbu_y_step(&ens, 0.5, 0.3, 0.0, &p, 9).unwrap();
        assert_eq!(same.pairs, ens.pairs);
        let full = nanbu_y_step(&ens, 0.5, 0.3, 1.0, &p, 9).unwrap();
        let vd = p.desired_speed(0.3);
        for (a, b) in full.pairs.iter().zip(&ens.pairs) {
            assert_eq!(a.0, b.0);
            assert_relative_eq!(a.1, vd, epsilon = 1e-15);
        }
    }

    #[test]
    fn nanbu_half_relaxation_moves_mean_halfway() {
        let d = smooth(8, 16);
        let ens = stratified_sample(&d, 20_000, 4).unwrap();
        let p = params();
        let vd = p.desired_speed(-0.7);
        let out = nanbu_y_step(&ens, 0.5, -0.7, 1.0, &p, 4).unwrap();
        let expected = 0.5 * ens.moments().u_y + 0.5 * vd;
        let se = out.mean_std_errors().1;
        assert!((out.moments().u_y - expected).abs() <= 3.0 * se + 1e-12);
    }

    #[test]
    fn nanbu_rejects_bad_probability() {
        let ens = stratified_sample(&smooth(4, 4), 10, 0).unwrap();
        assert!(nanbu_y_step(&ens, 0.5, 0.0, 1.5, &params(), 0).is_err());
        assert!(nanbu_y_step(&ens, 0.5, 0.0, -0.1, &params(), 0).is_err());
    }

    #[test]
    fn deposit_rejects_outside_particles() {
        let g = VelocityGrid::new(4, 4, 0.5).unwrap();
        let ens = ParticleEnsemble {
            pairs: vec![(0.5, 0.9)],
            seed: 0,
        };
        assert!(matches!(deposit(&ens, &g), Err(Error::Internal(_))));
    }

    #[test]
    fn gain_identity_for_zero_relaxation() {
        let d = smooth(6, 12);
        let p = ModelParams {
            beta_mode: crate::model::BetaMode::LinearInUx,
            ..params()
        };
        let out = qy_gain_grid(&d, 0.0, 0.4, &p).unwrap();
        for (a, b) in out.values().iter().zip(d.values()) {
            assert_relative_eq!(*a, *b, epsilon = 1e-13);
        }
    }

    #[test]
    fn gain_of_uniform_density_contracts_support() {
        let g = VelocityGrid::new(1, 40, 1.0).unwrap();
        let d = GridDistribution::initial_condition(g);
        let p = ModelParams {
            lambda: 0.1,
            ..params()
        };
        // v_d(0) = vbar_d = 0.
        let out = qy_gain_grid(&d, 0.5, 0.0, &p).unwrap();
        for j in 0..40 {
            let y = g.y_center(j);
            let expect = if y.abs() < 0.5 { 1.0 } else { 0.0 };
            assert_relative_eq!(out.value(0, j), expect, epsilon = 1e-12);
        }
    }

    #[test]
    fn gain_maps_point_mass_to_relaxed_point() {
        let g = VelocityGrid::new(1, 41, 1.0).unwrap();
        // Cell 30 is centred at v0; with beta = 1/2 and v_d = 0 the image
        // of the cell is centred at v0 / 2, covering half a cell.
        let d = GridDistribution::point_mass(g, 0, 30).unwrap();
        let p = ModelParams {
            lambda: 0.1,
            ..params()
        };
        let out = qy_gain_grid(&d, 0.5, 0.0, &p).unwrap();
        let v0 = g.y_center(30);
        let m = out.moments();
        assert_relative_eq!(m.u_y, 0.5 * v0, epsilon = 0.5 * g.dv_y());
        assert_relative_eq!(out.mass(), 1.0, epsilon = 1e-13);
    }

    #[test]
    fn gain_delta_limit() {
        let d = smooth(3, 21);
        let p = ModelParams {
            beta0: 1.0,
            ..params()
        };
        let out = qy_gain_grid(&d, 0.5, 1.0, &p).unwrap();
        let jd = d.grid().y_cell(p.desired_speed(1.0)).unwrap();
        assert_eq!(out.marginal_x(), d.marginal_x());
        for j in 0..21 {
            if j != jd {
                assert_eq!(out.value(1, j), 0.0);
            }
        }
    }

    #[test]
    fn nanbu_matches_gain_oracle() {
        let d = smooth(5, 41);
        let p = params();
        let ens = stratified_sample(&d, 100_000, 8).unwrap();
        let mc = deposit(&nanbu_y_step(&ens, 0.5, 0.6, 1.0, &p, 8).unwrap(), d.grid()).unwrap();
        let oracle = qy_gain_grid(&deposit(&ens, d.grid()).unwrap(), 0.5, 0.6, &p).unwrap();
        assert!(rel_l1_between(&mc, &oracle).unwrap() < 0.05);
    }

    #[test]
    fn x_marginal_untouched_by_nanbu() {
        let d = smooth(9, 17);
        let ens = stratified_sample(&d, 5000, 1).unwrap();
        let out = nanbu_y_step(&ens, 0.4, -0.2, 1.0, &params(), 3).unwrap();
        let counts = |e: &ParticleEnsemble| {
            let mut h = vec![0usize; 9];
            e.pairs
                .iter()
                .for_each(|p| h[d.grid().x_cell(p.0).unwrap()] += 1);
            h
        };
        assert_eq!(counts(&out), counts(&ens));
        let (a, b) = (
            deposit(&out, d.grid()).unwrap().marginal_x(),
            deposit(&ens, d.grid()).unwrap().marginal_x(),
        );
        for (x, y) in a.iter().zip(&b) {
            assert_relative_eq!(*x, *y, max_relative = 1e-12);
        }
    }

    #[test]
    fn oracle_refuses_large_steps() {
        let d = smooth(4, 4);
        let ens = stratified_sample(&d, 1000, 0).unwrap();
        let cfg = OracleConfig {
            n_particles: 1000,
            dt: 10.0,
            ..OracleConfig::default()
        };
        assert!(particle_boltzmann_oracle(&params(), &ens, &cfg, 0).is_err());
    }
}
