use handsim::plant::{sense_current, step_motor, MotorParams, MotorState};
use proptest::prelude::*;

proptest! {
    #[test]
    fn unpowered_joint_never_moves(
        angle in -2.0f64..2.0,
        loads in prop::collection::vec(-1e6f64..1e6, 1..200),
        u in -6.0f64..6.0,
    ) {
        let p = MotorParams::default();
        let mut s = MotorState { output_angle: angle, powered: false, ..Default::default() };
        for load in loads {
            s = step_motor(&p, &s, u, load, 1e-4);
            prop_assert_eq!(s.output_angle, angle);
        }
    }

    #[test]
    fn coasting_energy_does_not_grow(w0 in -2000.0f64..2000.0, i0 in -1.5f64..1.5) {
        let p = MotorParams::default();
        let mut s = MotorState { rotor_speed: w0, current: i0, ..MotorState::powered() };
        let energy = |s: &MotorState| 0.5 * p.rotor_inertia * s.rotor_speed.powi(2) + 0.5 * p.inductance * s.current.powi(2);
        let mut e = energy(&s);
        for _ in 0..2000 {
            s = step_motor(&p, &s, 0.0, 0.0, 1e-5);
            let next = energy(&s);
            prop_assert!(next <= e * (1.0 + 1e-12) + 1e-18, "{next} > {e}");
            e = next;
        }
    }

    #[test]
    fn voltage_is_clamped_and_sense_unsigned(us in prop::collection::vec(-100.0f64..100.0, 1..100)) {
        let p = MotorParams::default();
        let mut s = MotorState::powered();
        for u in us {
            s = step_motor(&p, &s, u, 0.0, 1e-4);
            prop_assert!(s.applied_voltage.abs() <= p.supply_voltage);
            prop_assert!(sense_current(&s) >= 0.0);
        }
    }
}
