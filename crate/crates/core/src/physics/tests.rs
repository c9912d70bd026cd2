use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::*;

fn obj(pos: Vec2, vel: Vec2) -> ObjectState {
    ObjectState {
        pos,
        vel,
        mass: 1.0,
        radius: 0.0625,
        charge: 0.0,
        visible: true,
        color: 0,
    }
}

fn spec(law: ForceLaw) -> SimSpec {
    SimSpec::builtin(law)
}

#[test]
fn builtin_configs_parse_and_round_trip() {
    for law in ForceLaw::ALL {
        let s = spec(law);
        assert_eq!(s.law, law);
        assert_eq!(SimSpec::from_toml(&s.to_toml()).unwrap(), s);
        assert_eq!(s.dt() * s.stride as f64, 1.0);
    }
    assert_eq!(spec(ForceLaw::Spring).spring_rest, 0.45);
    assert_eq!(spec(ForceLaw::Drift).friction, 0.0);
}

#[test]
fn unknown_config_key_rejected() {
    let text = format!("{}\nbogus = 1\n", ForceLaw::Drift.builtin_config());
    assert!(SimSpec::from_toml(&text).is_err());
}

#[test]
fn spring_rest_length_has_no_force() {
    let mut s = spec(ForceLaw::Spring);
    s.spring_k = 1.0;
    let f = pairwise_force(&s, &obj([0.5, 0.5], [0.0; 2]), &obj([0.05, 0.5], [0.0; 2])).unwrap();
    assert!(f[0].abs() < 1e-15 && f[1].abs() < 1e-15, "{f:?}");
}

#[test]
fn stretched_spring_pulls_target_toward_source() {
    let mut s = spec(ForceLaw::Spring);
    s.spring_k = 1.0;
    // d = p_i - p_j = (0.9, 0)
    let f = pairwise_force(&s, &obj([0.95, 0.5], [0.0; 2]), &obj([0.05, 0.5], [0.0; 2])).unwrap();
    assert!((f[0] - 0.45).abs() < 1e-12 && f[1] == 0.0, "{f:?}");
}

#[test]
fn gravity_unit_distance() {
    let mut s = spec(ForceLaw::Gravity);
    s.gravity_g = 1.0;
    s.gravity_max_force = 10.0;
    let f = pairwise_force(&s, &obj([1.0, 0.0], [0.0; 2]), &obj([0.0, 0.0], [0.0; 2])).unwrap();
    assert_eq!(f, [1.0, 0.0]);
    s.gravity_max_force = 0.25;
    let f = pairwise_force(&s, &obj([0.0, 1.0], [0.0; 2]), &obj([0.0, 0.0], [0.0; 2])).unwrap();
    assert_eq!(f, [0.0, 0.25]);
}

#[test]
fn coincident_centers_are_an_error() {
    let s = spec(ForceLaw::Spring);
    let a = obj([0.3, 0.3], [0.0; 2]);
    assert!(matches!(
        pairwise_force(&s, &a, &a),
        Err(PhysicsError::CoincidentCenters)
    ));
}

#[test]
fn like_charges_on_triangle_push_outward_equally() {
    let mut s = spec(ForceLaw::MagneticBilliards);
    s.coulomb_k = 1.0;
    s.friction = 0.0;
    let centroid = [0.5, 0.5];
    let objects: Vec<ObjectState> = (0..3)
        .map(|k| {
            let a = std::f64::consts::TAU * k as f64 / 3.0;
            ObjectState {
                charge: 1.0,
                ..obj([0.5 + 0.2 * a.cos(), 0.5 + 0.2 * a.sin()], [0.0; 2])
            }
        })
        .collect();
    let state = SystemState { objects };
    // summed pairwise Coulomb oracle, written out independently
    for (i, o) in state.objects.iter().enumerate() {
        let mut expected = [0.0, 0.0];
        for (j, p) in state.objects.iter().enumerate() {
            if i != j {
                let d = [o.pos[0] - p.pos[0], o.pos[1] - p.pos[1]];
                let r3 = (d[0] * d[0] + d[1] * d[1]).powf(1.5);
                expected[0] += d[0] / r3;
                expected[1] += d[1] / r3;
            }
        }
        let got = net_forces(&s, &state).unwrap()[i];
        assert!((got[0] - expected[0]).abs() < 1e-12 && (got[1] - expected[1]).abs() < 1e-12);
        let radial = [o.pos[0] - centroid[0], o.pos[1] - centroid[1]];
        let cross = got[0] * radial[1] - got[1] * radial[0];
        let dot = got[0] * radial[0] + got[1] * radial[1];
        assert!(cross.abs() < 1e-9 && dot > 0.0);
    }
    let mags: Vec<f64> = net_forces(&s, &state)
        .unwrap()
        .iter()
        .map(|f| f[0].hypot(f[1]))
        .collect();
    assert!((mags[0] - mags[1]).abs() < 1e-12 && (mags[1] - mags[2]).abs() < 1e-12);
}

#[test]
fn drift_advances_by_velocity_per_frame() {
    let s = spec(ForceLaw::Drift);
    let mut state = SystemState {
        objects: vec![obj([0.3, 0.4], [0.01, 0.0])],
    };
    advance_frame(&mut state, &s).unwrap();
    assert!((state.objects[0].pos[0] - 0.31).abs() < 1e-15);
    assert_eq!(state.objects[0].pos[1], 0.4);
}

#[test]
fn drift_trajectory_is_linear() {
    let s = spec(ForceLaw::Drift);
    let traj = simulate(&s).unwrap();
    let first = &traj.frames[0];
    for (t, frame) in traj.frames.iter().enumerate() {
        for (o, o0) in frame.objects.iter().zip(&first.objects) {
            for axis in 0..2 {
                let expected = o0.pos[axis] + t as f64 * o0.vel[axis];
                assert!((o.pos[axis] - expected).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn drift_objects_visible_through_frame_32() {
    let mut s = spec(ForceLaw::Drift);
    for seed in 0..50 {
        s.seed = seed;
        let traj = simulate(&s).unwrap();
        for frame in &traj.frames[..=32] {
            for o in &frame.objects {
                assert!(o.pos.iter().all(|&p| p > -o.radius && p < 1.0 + o.radius));
            }
        }
    }
}

#[test]
fn two_body_spring_substep_conserves_momentum() {
    let mut s = spec(ForceLaw::Spring);
    s.friction = 0.0;
    let mut state = SystemState {
        objects: vec![
            obj([0.2, 0.5], [0.01, 0.0]),
            obj([0.8, 0.55], [-0.01, 0.002]),
        ],
    };
    let p0 = state.momentum();
    step(&mut state, &s).unwrap();
    let p1 = state.momentum();
    assert!((p0[0] - p1[0]).abs() < 1e-18 && (p0[1] - p1[1]).abs() < 1e-18);
}

#[test]
fn init_enforces_zero_momentum_and_centered_mass() {
    for law in [ForceLaw::Spring, ForceLaw::Gravity, ForceLaw::Drift] {
        let mut s = spec(law);
        s.n_objects = 6;
        s.variable_mass = true;
        let state = init_system(&s, &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
        let p = state.momentum();
        assert!(p[0].abs() < 1e-9 && p[1].abs() < 1e-9, "{law:?} {p:?}");
        if law != ForceLaw::Drift {
            let c = state.center_of_mass();
            assert!((c[0] - 0.5).abs() < 1e-9 && (c[1] - 0.5).abs() < 1e-9);
        }
    }
}

#[test]
fn init_is_deterministic_and_non_overlapping() {
    let mut s = spec(ForceLaw::Billiards);
    s.n_objects = 6;
    let a = init_system(&s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    let b = init_system(&s, &mut ChaCha8Rng::seed_from_u64(9)).unwrap();
    assert_eq!(a, b);
    for (i, p) in a.objects.iter().enumerate() {
        assert!(p.pos.iter().all(|&x| (0.1..0.9).contains(&x)));
        for q in &a.objects[i + 1..] {
            assert!((p.pos[0] - q.pos[0]).hypot(p.pos[1] - q.pos[1]) >= p.radius + q.radius);
        }
    }
}

#[test]
fn variable_mass_follows_area() {
    let mut s = spec(ForceLaw::Spring);
    s.variable_mass = true;
    let st = init_system(&s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    for o in &st.objects {
        assert!((o.mass - s.density * o.radius * o.radius).abs() < 1e-12);
        assert!(o.radius >= s.radius_range[0] && o.radius <= s.radius_range[1]);
    }
}

#[test]
fn invisible_flag_hides_exactly_one() {
    let mut s = spec(ForceLaw::Spring);
    s.invisible = true;
    let st = init_system(&s, &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    assert_eq!(st.objects.iter().filter(|o| !o.visible).count(), 1);
}

#[test]
fn crowded_box_is_an_error() {
    let mut s = spec(ForceLaw::Billiards);
    s.n_objects = 200;
    s.max_init_attempts = 50;
    assert!(matches!(
        init_system(&s, &mut ChaCha8Rng::seed_from_u64(0)),
        Err(PhysicsError::Crowded { .. })
    ));
}

#[test]
fn gravity_starts_counter_clockwise() {
    let mut s = spec(ForceLaw::Gravity);
    s.tangent_noise = 0.0;
    let st = init_system(&s, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
    // screen coordinates have y down: counter-clockwise on screen means a
    // positive angular momentum in the (x, -y) frame
    let l: f64 = st
        .objects
        .iter()
        .map(|o| (o.pos[0] - 0.5) * -o.vel[1] - -(o.pos[1] - 0.5) * o.vel[0])
        .sum();
    assert!(l > 0.0);
}

#[test]
fn billiards_stay_in_bounds() {
    let mut s = spec(ForceLaw::Billiards);
    s.n_objects = 6;
    for seed in 0..10 {
        s.seed = seed;
        for frame in simulate(&s).unwrap().frames {
            for o in &frame.objects {
                assert!(o.pos.iter().all(|&p| p >= o.radius && p <= 1.0 - o.radius));
            }
        }
    }
}

#[test]
fn same_seed_same_trajectory() {
    for law in ForceLaw::ALL {
        let s = spec(law);
        assert_eq!(simulate(&s).unwrap(), simulate(&s).unwrap());
    }
}

#[test]
fn mirrored_initial_state_gives_mirrored_trajectory() {
    for law in ForceLaw::ALL {
        let mut s = spec(law);
        s.seed = 17;
        let init = init_system(&s, &mut ChaCha8Rng::seed_from_u64(17)).unwrap();
        let a = run(&init, &s, 40).unwrap();
        let b = run(&init.mirrored_x(), &s, 40).unwrap();
        let mirrored = Trajectory {
            frames: b.frames.iter().map(SystemState::mirrored_x).collect(),
        };
        assert!(a.max_position_deviation(&mirrored) < 1e-9, "{law:?}");
    }
}

#[test]
fn drift_rk4_is_linear() {
    let s = spec(ForceLaw::Drift);
    let init = init_system(&s, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    let traj = rk4_reference(&init, &s, 10).unwrap();
    for (t, f) in traj.frames.iter().enumerate() {
        for (o, o0) in f.objects.iter().zip(&init.objects) {
            assert!((o.pos[0] - (o0.pos[0] + t as f64 * o0.vel[0])).abs() < 1e-14);
        }
    }
}

#[test]
fn rk4_circular_orbit_keeps_radius() {
    // Equal masses a distance d apart orbit their barycenter at radius d/2
    // with speed v, where G m^2 / d^2 = m v^2 / (d/2), i.e. v^2 = G m / (2d).
    let mut s = spec(ForceLaw::Gravity);
    s.gravity_g = 1e-3;
    s.gravity_max_force = 1.0;
    s.center_stiffness = 0.0;
    s.friction = 0.0;
    let d = 0.3;
    let v = (s.gravity_g * 1.0 / (2.0 * d)).sqrt();
    let init = SystemState {
        objects: vec![
            obj([0.5 - d / 2.0, 0.5], [0.0, -v]),
            obj([0.5 + d / 2.0, 0.5], [0.0, v]),
        ],
    };
    let period = std::f64::consts::PI * d / v;
    let traj = rk4_reference(&init, &s, period.ceil() as usize).unwrap();
    for f in &traj.frames {
        let sep = (f.objects[0].pos[0] - f.objects[1].pos[0])
            .hypot(f.objects[0].pos[1] - f.objects[1].pos[1]);
        assert!(
            (sep / 2.0 - d / 2.0).abs() < 1e-4,
            "radius drift {}",
            sep / 2.0 - d / 2.0
        );
    }
}

#[test]
fn rk4_spring_period_matches_reduced_mass_oscillator() {
    let mut s = spec(ForceLaw::Spring);
    s.friction = 0.0;
    s.spring_k = 0.005;
    // stretched 0.1 past rest, released from rest
    let init = SystemState {
        objects: vec![
            obj([0.5 - 0.275, 0.5], [0.0; 2]),
            obj([0.5 + 0.275, 0.5], [0.0; 2]),
        ],
    };
    let expected = std::f64::consts::TAU * (0.5f64 / s.spring_k).sqrt();
    let traj = rk4_reference(&init, &s, (2.0 * expected) as usize).unwrap();
    let sep: Vec<f64> = traj
        .frames
        .iter()
        .map(|f| f.objects[1].pos[0] - f.objects[0].pos[0] - 0.45)
        .collect();
    // first two upward zero crossings, linearly interpolated
    let crossings: Vec<f64> = sep
        .windows(2)
        .enumerate()
        .filter(|(_, w)| w[0] < 0.0 && w[1] >= 0.0)
        .map(|(i, w)| i as f64 + w[0] / (w[0] - w[1]))
        .collect();
    let measured = crossings[1] - crossings[0];
    assert!(
        (measured - expected).abs() / expected < 0.01,
        "{measured} vs {expected}"
    );
}

#[test]
fn capped_gravity_bounds_velocity() {
    let mut s = spec(ForceLaw::Gravity);
    s.center_stiffness = 0.0;
    s.friction = 0.0;
    s.gravity_g = 1e-2;
    s.gravity_max_force = 1e-3;
    let init = SystemState {
        objects: vec![obj([0.45, 0.5], [0.0, 0.0]), obj([0.55, 0.5], [0.0, 0.0])],
    };
    let traj = run(&init, &s, 64).unwrap();
    for (t, f) in traj.frames.iter().enumerate() {
        for o in &f.objects {
            let speed = o.vel[0].hypot(o.vel[1]);
            assert!(speed <= t as f64 * s.gravity_max_force / o.mass + 1e-15);
        }
    }
}

#[test]
fn calibration_hits_target_displacement() {
    let s = spec(ForceLaw::Drift);
    let c = calibrate(&s, 0.01, 4, 20).unwrap();
    assert!((c.mean_displacement - 0.01).abs() < 1e-3, "{c:?}");
}

#[test]
fn time_scaling_replays_the_same_path_faster() {
    let mut s = spec(ForceLaw::Spring);
    s.stride = 400;
    let init = init_system(&s, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
    let fast = time_scaled(&s, 2.0);
    let mut fast_init = init.clone();
    for o in &mut fast_init.objects {
        o.vel = [2.0 * o.vel[0], 2.0 * o.vel[1]];
    }
    let slow = rk4_reference(&init, &s, 20).unwrap();
    let quick = rk4_reference(&fast_init, &fast, 10).unwrap();
    for k in 0..=10 {
        for (a, b) in slow.frames[2 * k]
            .objects
            .iter()
            .zip(&quick.frames[k].objects)
        {
            assert!((a.pos[0] - b.pos[0]).abs() < 1e-9 && (a.pos[1] - b.pos[1]).abs() < 1e-9);
        }
    }
}

#[test]
fn audit_counts_collisions_and_conserves_energy() {
    let a = audit_billiards(&SimSpec::builtin(ForceLaw::Billiards), 50, 20_000).unwrap();
    assert!(a.pair_collisions >= 50);
    assert!(
        a.energy_drift < 1e-9 && a.pair_momentum_error < 1e-12,
        "{a:?}"
    );
    assert!(audit_billiards(&SimSpec::builtin(ForceLaw::Spring), 1, 1).is_err());
}

#[test]
fn frictionless_momentum_is_constant_per_frame() {
    for law in [ForceLaw::Spring, ForceLaw::Gravity, ForceLaw::Drift] {
        assert!(
            momentum_drift(&SimSpec::builtin(law), 20).unwrap() < 1e-9,
            "{law:?}"
        );
    }
}
