use rand::Rng as _;
use vbboost::divergence::random_mixture;
use vbboost::gaussian::{in_family, FamilyConstraints};
use vbboost::lmo::{lmo_grid_oracle, lmo_objective_quadrature, solve_lmo, GridResolution, LmoConfig};
use vbboost::quadrature::QuadratureSpec;
use vbboost::seed::{derive_seed, rng_from_seed};
use vbboost::{GaussianMixture, IsotropicGaussian, PosteriorTarget};

struct Instance {
    c: FamilyConstraints,
    psi: GaussianMixture,
    target: PosteriorTarget,
}

fn instance(seed: u64) -> Instance {
    let c = FamilyConstraints::new(1.0, 0.3, 1.5, 1).unwrap();
    let mut rng = rng_from_seed(seed);
    let psi = random_mixture(&c, &mut rng);
    let mu = rng.random_range(-1.2..1.2);
    let sd = rng.random_range(0.25..0.6);
    let shift = rng.random_range(-10.0..10.0);
    let comp = IsotropicGaussian::scalar(mu, sd).unwrap();
    let target = PosteriorTarget::new(1, move |x| comp.log_density(x).unwrap() + shift);
    Instance { c, psi, target }
}

#[test]
fn solver_matches_grid_oracle_on_random_instances() {
    let spec = QuadratureSpec::default();
    let coarse = GridResolution {
        mu_points: 101,
        sigma_points: 11,
    };
    for i in 0..20 {
        let inst = instance(derive_seed(21, i, 0));
        let config = LmoConfig {
            seed: i,
            ..Default::default()
        };
        let got = solve_lmo(&inst.psi, &inst.target, &inst.c, &config, 1.0).unwrap();
        let oracle = lmo_grid_oracle(&inst.psi, &inst.target, &inst.c, coarse).unwrap();
        let exact = lmo_objective_quadrature(&got.component, &inst.psi, &inst.target, &spec).unwrap();
        assert!(got.feasible && in_family(&got.component, &inst.c));
        assert!(exact <= oracle.objective + 1e-2, "instance {i}: {exact} vs oracle {}", oracle.objective);
    }
}

#[test]
fn argmin_ignores_the_normalizer() {
    let inst = instance(5);
    let config = LmoConfig::default();
    let a = solve_lmo(&inst.psi, &inst.target, &inst.c, &config, 1.0).unwrap();
    let b = solve_lmo(&inst.psi, &inst.target.shifted(7.25), &inst.c, &config, 1.0).unwrap();
    assert_eq!(a.component, b.component);
    assert!((a.objective - 7.25 - b.objective).abs() < 1e-9);
}

#[test]
fn every_restart_descends() {
    for i in 0..5 {
        let inst = instance(derive_seed(33, i, 0));
        let config = LmoConfig {
            restarts: 6,
            seed: i,
            ..Default::default()
        };
        let res = solve_lmo(&inst.psi, &inst.target, &inst.c, &config, 1.0).unwrap();
        assert_eq!(res.descent_paths.len(), 6);
        for path in &res.descent_paths {
            assert!(!path.is_empty());
            assert!(path.windows(2).all(|w| w[1] <= w[0]), "{path:?}");
        }
        let best = res.descent_paths.iter().filter_map(|p| p.last()).cloned().fold(f64::INFINITY, f64::min);
        assert!(res.objective <= best + 1e-9 * (1.0 + best.abs()));
    }
}

#[test]
fn results_stay_feasible_in_two_dimensions() {
    let c = FamilyConstraints::new(0.7, 0.2, 1.8, 2).unwrap();
    for i in 0..5 {
        let mut rng = rng_from_seed(derive_seed(44, i, 0));
        let psi = random_mixture(&c, &mut rng);
        // a target far outside the ball pushes the solution onto the boundary
        let comp = IsotropicGaussian::new(vec![3.0, -2.0], 0.3).unwrap();
        let t = PosteriorTarget::new(2, move |x| comp.log_density(x).unwrap());
        let res = solve_lmo(&psi, &t, &c, &LmoConfig::default(), 1.0).unwrap();
        assert!(res.feasible && in_family(&res.component, &c), "{:?}", res.component);
        let norm = res.component.mean().iter().map(|m| m * m).sum::<f64>().sqrt();
        assert!(norm > 0.69, "{norm}");
    }
}

#[test]
fn grid_refinement_never_worsens_the_oracle() {
    let inst = instance(8);
    let coarse = GridResolution {
        mu_points: 21,
        sigma_points: 5,
    };
    let a = lmo_grid_oracle(&inst.psi, &inst.target, &inst.c, coarse).unwrap();
    let b = lmo_grid_oracle(&inst.psi, &inst.target, &inst.c, coarse.refined()).unwrap();
    assert!(b.objective <= a.objective);
}

#[test]
fn solver_is_deterministic_given_the_seed() {
    let inst = instance(9);
    let config = LmoConfig {
        seed: 77,
        ..Default::default()
    };
    let a = solve_lmo(&inst.psi, &inst.target, &inst.c, &config, 1.0).unwrap();
    let b = solve_lmo(&inst.psi, &inst.target, &inst.c, &config, 1.0).unwrap();
    assert_eq!(a, b);
}
