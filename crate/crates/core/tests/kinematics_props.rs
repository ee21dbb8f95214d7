mod common;

use handsim::kinematics::{solve_fourbar, LinkageGeometry};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn assemblable(seed: u64) -> Option<LinkageGeometry> {
    let g = common::random_geometry(&mut ChaCha8Rng::seed_from_u64(seed));
    g.check_assemblable(91).ok().map(|_| g)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn solver_matches_brute_force_oracle(seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let Some(g) = assemblable(seed) else { return Ok(()) };
        let (lo, hi) = g.theta_range_rad();
        let theta = lo + frac * (hi - lo);
        let pose = solve_fourbar(&g, theta).unwrap();
        let c = common::fourbar_oracle(&g, theta).expect("oracle closure");
        prop_assert!((pose.joint_c - c).norm() < 1e-6, "{:?} vs {:?}", pose.joint_c, c);
    }

    #[test]
    fn loop_closes(seed in any::<u64>(), frac in 0.0f64..=1.0) {
        let Some(g) = assemblable(seed) else { return Ok(()) };
        let (lo, hi) = g.theta_range_rad();
        let pose = solve_fourbar(&g, lo + frac * (hi - lo)).unwrap();
        let sum = pose.joint_b + (pose.joint_c - pose.joint_b) + (pose.joint_d - pose.joint_c) - pose.joint_d;
        prop_assert!(sum.norm() < 1e-9);
        prop_assert!(pose.closure_residual(&g) < 1e-9);
    }

    #[test]
    fn coupler_angle_has_no_jumps(seed in any::<u64>()) {
        let Some(g) = assemblable(seed) else { return Ok(()) };
        let n = ((g.theta_max - g.theta_min) / 0.1).round() as usize + 1;
        let angles: Vec<f64> = g.travel_samples(n).map(|t| solve_fourbar(&g, t).unwrap().coupler_angle).collect();
        for w in angles.windows(2) {
            let d = (w[1] - w[0] + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
            prop_assert!(d.abs() < 0.05, "step of {d} rad");
        }
    }

    #[test]
    fn power_of_two_scaling_is_exact(seed in any::<u64>(), e in -3i32..=3, frac in 0.0f64..=1.0) {
        let Some(g) = assemblable(seed) else { return Ok(()) };
        let k = 2f64.powi(e);
        let (lo, hi) = g.theta_range_rad();
        let theta = lo + frac * (hi - lo);
        let a = solve_fourbar(&g, theta).unwrap();
        let b = solve_fourbar(&g.scaled(k), theta).unwrap();
        prop_assert_eq!(b.joint_c, a.joint_c * k);
        prop_assert_eq!(b.fingertip, a.fingertip * k);
        prop_assert_eq!(b.coupler_angle, a.coupler_angle);
    }

    #[test]
    fn scaling_is_equivariant(seed in any::<u64>(), k in 0.2f64..5.0, frac in 0.0f64..=1.0) {
        let Some(g) = assemblable(seed) else { return Ok(()) };
        let (lo, hi) = g.theta_range_rad();
        let theta = lo + frac * (hi - lo);
        let a = solve_fourbar(&g, theta).unwrap();
        let b = solve_fourbar(&g.scaled(k), theta).unwrap();
        prop_assert!((b.fingertip - a.fingertip * k).norm() <= 1e-12 * k * g.chain_length());
        prop_assert!((b.coupler_angle - a.coupler_angle).abs() < 1e-12);
    }
}

#[test]
fn default_geometry_agrees_with_oracle_over_travel() {
    let g = LinkageGeometry::default();
    for theta in g.travel_samples(901) {
        let c = common::fourbar_oracle(&g, theta).unwrap();
        assert!((solve_fourbar(&g, theta).unwrap().joint_c - c).norm() < 1e-9);
    }
}
