//! Stochastic collocation in the uncertain parameter `theta ~ U(-1, 1)`.

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fp::SolverConfig;
use crate::grid::{GridDistribution, MomentSet, VelocityGrid};
use crate::hybrid::{evolve_hybrid, HybridConfig, HybridState};
use crate::model::ModelParams;
use crate::util::derive_seed;

/// Gauss-Legendre nodes on `[-1, 1]` with weights summing to one.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ThetaQuadrature {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl ThetaQuadrature {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Weighted mean of `values` sampled at the nodes.
    pub fn mean(&self, values: &[f64]) -> f64 {
        self.weights.iter().zip(values).map(|(w, v)| w * v).sum()
    }

    /// Weighted variance, floored at zero. Exactly zero for equal values.
    pub fn variance(&self, values: &[f64]) -> f64 {
        pairwise_variance(&self.weights, values).max(0.0)
    }

    /// Integral of `f` against the uniform density on `[-1, 1]`.
    pub fn integrate(&self, f: impl Fn(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(x, w)| w * f(*x))
            .sum()
    }
}

/// `(P_m(x), P_m'(x))` by the three-term recurrence.
fn legendre(m: usize, x: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, x);
    if m == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=m {
        let k = k as f64;
        let p2 = ((2.0 * k - 1.0) * x * p1 - (k - 1.0) * p0) / k;
        p0 = p1;
        p1 = p2;
    }
    let dp = m as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, dp)
}

/// `m`-point Gauss-Legendre rule for the uniform density on `[-1, 1]`.
///
/// Nodes come from the eigenvalues of the symmetric Jacobi matrix and are
/// then polished by Newton's method on `P_m`.
pub fn gauss_legendre(m: usize) -> Result<ThetaQuadrature> {
    if m == 0 {
        return Err(Error::param("nodes", "need at least one collocation node"));
    }
    let jacobi = DMatrix::from_fn(m, m, |i, j| {
        if i + 1 == j || j + 1 == i {
            let k = i.max(j) as f64;
            k / (4.0 * k * k - 1.0).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut nodes: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    nodes.sort_by(f64::total_cmp);
    let mut weights = Vec::with_capacity(m);
    for x in nodes.iter_mut() {
        for _ in 0..3 {
            let (p, dp) = legendre(m, *x);
            if dp != 0.0 {
                *x -= p / dp;
            }
        }
        let (_, dp) = legendre(m, *x);
        weights.push(1.0 / ((1.0 - *x * *x) * dp * dp));
    }
    // Enforce the exact symmetry of the rule.
    for k in 0..m / 2 {
        let x = 0.5 * (nodes[m - 1 - k] - nodes[k]);
        let w = 0.5 * (weights[k] + weights[m - 1 - k]);
        nodes[k] = -x;
        nodes[m - 1 - k] = x;
        weights[k] = w;
        weights[m - 1 - k] = w;
    }
    if m % 2 == 1 {
        nodes[m / 2] = 0.0;
    }
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Ok(ThetaQuadrature { nodes, weights })
}

/// Per-node hybrid solutions.
#[derive(Clone, Debug)]
pub struct EnsembleSolution {
    pub quadrature: ThetaQuadrature,
    pub states: Vec<HybridState>,
}

/// Runs [`evolve_hybrid`] at every node, seeding node `k` with
/// `derive_seed(master_seed, k)`.
#[allow(clippy::too_many_arguments)]
pub fn run_ensemble(
    initial: &GridDistribution,
    params: &ModelParams,
    solver: &SolverConfig,
    config: &HybridConfig,
    quadrature: &ThetaQuadrature,
    horizon: f64,
    master_seed: u64,
) -> Result<EnsembleSolution> {
    if quadrature.is_empty() || quadrature.nodes.len() != quadrature.weights.len() {
        return Err(Error::param("nodes", "malformed quadrature"));
    }
    let states = quadrature
        .nodes
        .par_iter()
        .enumerate()
        .map(|(k, &theta)| {
            evolve_hybrid(
                initial,
                theta,
                params,
                solver,
                config,
                horizon,
                derive_seed(master_seed, k as u64),
            )
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EnsembleSolution {
        quadrature: quadrature.clone(),
        states,
    })
}

impl EnsembleSolution {
    pub fn grid(&self) -> &VelocityGrid {
        self.states[0].dist.grid()
    }

    pub fn densities(&self) -> Vec<&GridDistribution> {
        self.states.iter().map(|s| &s.dist).collect()
    }
}

/// Cellwise `theta`-expectation of node densities.
pub fn expected_distribution(
    quadrature: &ThetaQuadrature,
    densities: &[&GridDistribution],
) -> Result<GridDistribution> {
    let grid = *check_family(quadrature, densities)?;
    let mut out = vec![0.0; grid.len()];
    for (w, d) in quadrature.weights.iter().zip(densities) {
        out.iter_mut()
            .zip(d.values())
            .for_each(|(o, v)| *o += w * v);
    }
    GridDistribution::from_values(grid, out)
}

/// Cellwise `theta`-variance of a family of densities.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceField {
    pub grid: VelocityGrid,
    pub values: Vec<f64>,
    /// Largest magnitude removed when flooring rounding negatives at zero.
    pub floor_correction: f64,
}

pub fn theta_variance_distribution(
    quadrature: &ThetaQuadrature,
    densities: &[&GridDistribution],
) -> Result<VarianceField> {
    let grid = *check_family(quadrature, densities)?;
    let mut column = vec![0.0; densities.len()];
    let mut values = vec![0.0; grid.len()];
    for (c, out) in values.iter_mut().enumerate() {
        for (slot, d) in column.iter_mut().zip(densities) {
            *slot = d.values()[c];
        }
        *out = pairwise_variance(&quadrature.weights, &column);
    }
    // The pairwise form cannot go negative; the floor guards against
    // malformed weights.
    let mut floor_correction: f64 = 0.0;
    for v in values.iter_mut() {
        if *v < 0.0 {
            floor_correction = floor_correction.max(-*v);
            *v = 0.0;
        }
    }
    Ok(VarianceField {
        grid,
        values,
        floor_correction,
    })
}

/// `sum_{k<l} w_k w_l (v_k - v_l)^2`, the variance for weights summing to
/// one, without cancellation against the mean.
fn pairwise_variance(weights: &[f64], values: &[f64]) -> f64 {
    let mut total = 0.0;
    for k in 0..values.len() {
        for l in k + 1..values.len() {
            let d = values[k] - values[l];
            total += weights[k] * weights[l] * d * d;
        }
    }
    total
}

fn check_family<'a>(
    quadrature: &ThetaQuadrature,
    densities: &[&'a GridDistribution],
) -> Result<&'a VelocityGrid> {
    if densities.is_empty() || densities.len() != quadrature.len() {
        return Err(Error::GridMismatch(format!(
            "{} densities for {} nodes",
            densities.len(),
            quadrature.len()
        )));
    }
    let grid = densities[0].grid();
    if densities.iter().any(|d| d.grid() != grid) {
        return Err(Error::GridMismatch(
            "node densities live on different grids".into(),
        ));
    }
    Ok(grid)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MomentKind {
    UX,
    UY,
    EX,
    EY,
}

impl MomentKind {
    pub fn of(self, m: &MomentSet) -> f64 {
        match self {
            MomentKind::UX => m.u_x,
            MomentKind::UY => m.u_y,
            MomentKind::EX => m.e_x,
            MomentKind::EY => m.e_y,
        }
    }
}

/// `theta`-expectation of a final-state moment.
pub fn expected_moment(sol: &EnsembleSolution, which: MomentKind) -> f64 {
    let v: Vec<f64> = sol
        .states
        .iter()
        .map(|s| which.of(&s.dist.moments()))
        .collect();
    sol.quadrature.mean(&v)
}

/// `theta`-variance of a final-state moment.
pub fn theta_variance_moment(sol: &EnsembleSolution, which: MomentKind) -> f64 {
    let v: Vec<f64> = sol
        .states
        .iter()
        .map(|s| which.of(&s.dist.moments()))
        .collect();
    sol.quadrature.variance(&v)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hybrid::YPath;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    #[test]
    fn small_rules() {
        let q = gauss_legendre(1).unwrap();
        assert_eq!(q.nodes, vec![0.0]);
        assert_relative_eq!(q.weights[0], 1.0, epsilon = 1e-15);
        let q = gauss_legendre(2).unwrap();
        assert_relative_eq!(q.nodes[1], 0.577_350_269_189_625_8, epsilon = 1e-15);
        assert_relative_eq!(q.nodes[0], -0.577_350_269_189_625_8, epsilon = 1e-15);
        assert_relative_eq!(q.weights[0], 0.5, epsilon = 1e-15);
        assert!(gauss_legendre(0).is_err());
    }

    #[test]
    fn five_point_rule_matches_closed_form() {
        let q = gauss_legendre(5).unwrap();
        let r = (10.0f64 / 7.0).sqrt();
        let outer = (5.0 + 2.0 * r).sqrt() / 3.0;
        let inner = (5.0 - 2.0 * r).sqrt() / 3.0;
        assert_relative_eq!(q.nodes[4], outer, epsilon = 1e-15);
        assert_relative_eq!(q.nodes[3], inner, epsilon = 1e-15);
        assert_relative_eq!(q.weights[2], 128.0 / 450.0, epsilon = 1e-14);
    }

    proptest! {
        #[test]
        fn exact_for_low_degree(m in 1usize..40) {
            let q = gauss_legendre(m).unwrap();
            prop_assert!((q.weights.iter().sum::<f64>() - 1.0).abs() < 1e-14);
            prop_assert!(q.nodes.iter().all(|x| x.abs() < 1.0));
            prop_assert!(q.weights.iter().all(|w| *w > 0.0));
            for p in 0..(2 * m) {
                let exact = if p % 2 == 1 { 0.0 } else { 1.0 / (p as f64 + 1.0) };
                let got = q.integrate(|x| x.powi(p as i32));
                prop_assert!((got - exact).abs() <= 1e-12 * exact.max(1e-3), "m={} p={} got={}", m, p, got);
            }
        }
    }

    #[test]
    fn two_point_variance() {
        let g = VelocityGrid::new(3, 1, 1.0).unwrap();
        let a = GridDistribution::from_values(g, vec![1.0, 2.0, 3.0]).unwrap();
        let b = GridDistribution::from_values(g, vec![3.0, 2.0, 0.0]).unwrap();
        let q = ThetaQuadrature {
            nodes: vec![-0.5, 0.5],
            weights: vec![0.5, 0.5],
        };
        let mean = expected_distribution(&q, &[&a, &b]).unwrap();
        assert_eq!(mean.values(), &[2.0, 2.0, 1.5]);
        let var = theta_variance_distribution(&q, &[&a, &b]).unwrap();
        assert_eq!(var.values, vec![1.0, 0.0, 2.25]);
        let same = theta_variance_distribution(&q, &[&a, &a]).unwrap();
        assert!(same.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn oracle_ensemble_without_uncertainty_is_flat() {
        let g = VelocityGrid::new(8, 9, 1.0).unwrap();
        let d = GridDistribution::from_product(g, |x| 1.0 + x, |y| 1.0 + y * 0.3).unwrap();
        let params = ModelParams {
            lambda: 1e-300,
            ..ModelParams::default()
        };
        let config = HybridConfig {
            y_path: YPath::Oracle,
            ..HybridConfig::default()
        };
        let q = gauss_legendre(3).unwrap();
        let sol =
            run_ensemble(&d, &params, &SolverConfig::default(), &config, &q, 0.05, 1).unwrap();
        let var = theta_variance_distribution(&q, &sol.densities()).unwrap();
        let worst = var.values.iter().cloned().fold(0.0, f64::max);
        assert!(worst < 1e-20, "{worst}");
        let mean = expected_distribution(&q, &sol.densities()).unwrap();
        assert_relative_eq!(mean.mass(), 1.0, epsilon = 1e-10);
    }

    #[test]
    fn odd_moment_vanishes_by_symmetry() {
        for m in 1..8 {
            assert!(gauss_legendre(m).unwrap().integrate(|x| x.powi(3)).abs() < 1e-16);
        }
    }
}
