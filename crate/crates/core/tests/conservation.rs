use poisson_coalgebra::dynamics::{integrate, IntegratorConfig, Method};
use poisson_coalgebra::systems::{PotentialSpec, SystemSpec};
use poisson_coalgebra::PhasePoint;

#[test]
fn undeformed_chain_conserves_casimirs_over_ten_thousand_steps() {
    let spec = SystemSpec::new(3, 0.0, PotentialSpec::Harmonic { omega: 1.0 }, false).unwrap();
    let x0 = PhasePoint::new(vec![0.1, -0.07, 0.08], vec![0.03, 0.12, -0.05]).unwrap();
    let traj = integrate(&spec, &x0, &IntegratorConfig::new(1e-3, 10_000, Method::ImplicitMidpoint)).unwrap();
    let drift = traj.max_drift();
    // C2 and C3 are quadratic in (q, p) at z = 0, so the midpoint rule keeps them exactly
    assert!(drift[1] < 1e-9 && drift[2] < 1e-9, "{drift:?}");
    assert!(drift[0] < 1e-8, "{drift:?}");
}

#[test]
fn rk4_drift_is_fourth_order() {
    let spec = SystemSpec::new(3, 0.2, PotentialSpec::Quartic, false).unwrap();
    let x0 = PhasePoint::new(vec![0.4, -0.3, 0.2], vec![0.1, 0.5, -0.2]).unwrap();
    let run = |dt: f64, steps: usize| {
        integrate(&spec, &x0, &IntegratorConfig::new(dt, steps, Method::Rk4)).unwrap().max_drift()[0]
    };
    let ratio = run(4e-3, 2_500) / run(2e-3, 5_000);
    assert!((12.0..20.0).contains(&ratio), "{ratio}");
}
