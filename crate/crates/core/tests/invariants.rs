use hybrid_traffic::fp::{evolve_fp, DtPolicy, FluxVariant, SolverConfig, Stepper};
use hybrid_traffic::mc::{deposit, nanbu_y_step, stratified_sample};
use hybrid_traffic::model::{ModelParams, ReferenceMode};
use hybrid_traffic::{GridDistribution, VelocityGrid};
use proptest::prelude::*;

fn positive_density(n_x: usize, n_y: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(0.0f64..1.0, n_x * n_y)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn fp_keeps_mass_and_sign(
        values in positive_density(16, 3),
        rho in 0.05f64..0.95,
        sigma2 in 1.0f64..20.0,
        explicit in any::<bool>(),
        mean_field in any::<bool>(),
    ) {
        prop_assume!(values.iter().sum::<f64>() > 1e-3);
        let grid = VelocityGrid::new(16, 3, 1.0).unwrap();
        let start = GridDistribution::normalized(grid, values).unwrap();
        let params = ModelParams {
            rho,
            sigma2,
            wx_mode: if mean_field { ReferenceMode::MeanField } else { ReferenceMode::Binary },
            ..ModelParams::default()
        };
        let solver = SolverConfig {
            flux_variant: FluxVariant::StandardSp,
            stepper: if explicit { Stepper::Explicit } else { Stepper::SemiImplicit },
            dt_policy: DtPolicy::Cfl,
            ..SolverConfig::default()
        };
        let run = evolve_fp(&start, &params, &solver, 0.5).unwrap();
        prop_assert!((run.dist.mass() - 1.0).abs() < 1e-12);
        prop_assert!(run.dist.min_value() >= 0.0);
        prop_assert!(run.log.iter().all(|r| r.min_value >= 0.0));
    }

    #[test]
    fn restriction_preserves_mass(values in positive_density(24, 6)) {
        prop_assume!(values.iter().sum::<f64>() > 1e-3);
        let fine = VelocityGrid::new(24, 6, 0.5).unwrap();
        let coarse = VelocityGrid::new(6, 3, 0.5).unwrap();
        let dist = GridDistribution::normalized(fine, values).unwrap();
        let r = dist.restrict_to(&coarse).unwrap();
        prop_assert!((r.mass() - dist.mass()).abs() < 1e-12);
    }

    #[test]
    fn lane_change_stays_in_domain(
        epsilon in 0.2f64..1.0,
        theta in -1.0f64..1.0,
        p in 0.0f64..1.0,
        seed in any::<u64>(),
    ) {
        let grid = VelocityGrid::new(8, 9, epsilon).unwrap();
        let dist = GridDistribution::initial_condition(grid);
        let params = ModelParams { epsilon, ..ModelParams::default() };
        let ens = stratified_sample(&dist, 2000, seed).unwrap();
        let next = nanbu_y_step(&ens, 0.5, theta, p, &params, seed ^ 1).unwrap();
        prop_assert_eq!(next.len(), ens.len());
        prop_assert!(next.pairs.iter().all(|&(_, y)| y.abs() <= epsilon));
        prop_assert!(next.pairs.iter().zip(&ens.pairs).all(|(a, b)| a.0 == b.0));
        let back = deposit(&next, &grid).unwrap();
        prop_assert!((back.mass() - 1.0).abs() < 1e-12);
    }
}
