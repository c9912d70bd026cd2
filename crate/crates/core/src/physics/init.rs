use rand::Rng;

use super::state::{ObjectState, SystemState};
use super::{ForceLaw, PhysicsError, SimSpec};

/// Random initial condition.
///
/// Positions are uniform in a centered box of width `spec.init_box` with
/// overlapping placements rejected. Gravity starts every ball on a
/// counter-clockwise (as seen on screen) tangent about the frame center plus
/// a small uniform kick; other systems draw velocity components uniformly in
/// `[-velocity_max, velocity_max]`. Spring, gravity and drift have their net
/// momentum removed, and spring and gravity are recentered so the center of
/// mass sits at `(0.5, 0.5)`.
pub fn init_system<R: Rng>(spec: &SimSpec, rng: &mut R) -> Result<SystemState, PhysicsError> {
    let n = spec.n_objects;
    let radii: Vec<f64> = (0..n)
        .map(|_| {
            if spec.variable_mass {
                rng.gen_range(spec.radius_range[0]..=spec.radius_range[1])
            } else {
                spec.radius
            }
        })
        .collect();
    let masses: Vec<f64> = radii
        .iter()
        .map(|&r| {
            if spec.variable_mass {
                spec.density * r * r
            } else {
                spec.mass
            }
        })
        .collect();

    let lo = 0.5 - spec.init_box / 2.0;
    let hi = 0.5 + spec.init_box / 2.0;
    let mut positions: Vec<[f64; 2]> = Vec::with_capacity(n);
    for i in 0..n {
        let mut placed = false;
        for _ in 0..spec.max_init_attempts {
            let p = [rng.gen_range(lo..hi), rng.gen_range(lo..hi)];
            let clear = positions
                .iter()
                .zip(&radii)
                .all(|(q, &rq)| (p[0] - q[0]).hypot(p[1] - q[1]) >= radii[i] + rq);
            if clear {
                positions.push(p);
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(PhysicsError::Crowded {
                attempts: spec.max_init_attempts,
            });
        }
    }

    let charges: Vec<f64> = (0..n)
        .map(|_| {
            if spec.law == ForceLaw::MagneticBilliards {
                rng.gen_range(spec.charge_range[0]..=spec.charge_range[1])
            } else {
                0.0
            }
        })
        .collect();

    let mut velocities = draw_velocities(spec, &positions, &masses, rng);
    if spec.law == ForceLaw::Drift {
        let mut ok = drift_stays_visible(spec, &positions, &radii, &velocities);
        for _ in 1..spec.max_init_attempts {
            if ok {
                break;
            }
            velocities = draw_velocities(spec, &positions, &masses, rng);
            ok = drift_stays_visible(spec, &positions, &radii, &velocities);
        }
        if !ok {
            let s = drift_rescale(spec, &positions, &radii, &velocities);
            for v in &mut velocities {
                v[0] *= s;
                v[1] *= s;
            }
        }
    }

    if matches!(spec.law, ForceLaw::Spring | ForceLaw::Gravity) {
        let total: f64 = masses.iter().sum();
        let com = positions
            .iter()
            .zip(&masses)
            .fold([0.0, 0.0], |a, (p, &m)| {
                [a[0] + m * p[0] / total, a[1] + m * p[1] / total]
            });
        for p in &mut positions {
            p[0] += 0.5 - com[0];
            p[1] += 0.5 - com[1];
        }
    }

    let hidden = if spec.invisible {
        Some(rng.gen_range(0..n))
    } else {
        None
    };
    let objects = (0..n)
        .map(|i| ObjectState {
            pos: positions[i],
            vel: velocities[i],
            mass: masses[i],
            radius: radii[i],
            charge: charges[i],
            visible: hidden != Some(i),
            color: i,
        })
        .collect();
    Ok(SystemState { objects })
}

fn draw_velocities<R: Rng>(
    spec: &SimSpec,
    positions: &[[f64; 2]],
    masses: &[f64],
    rng: &mut R,
) -> Vec<[f64; 2]> {
    let mut vel: Vec<[f64; 2]> = positions
        .iter()
        .map(|p| {
            if spec.law == ForceLaw::Gravity {
                let (dx, dy) = (p[0] - 0.5, p[1] - 0.5);
                let w = spec.tangent_speed;
                let s = spec.tangent_noise;
                let kick = if s > 0.0 {
                    [rng.gen_range(-s..=s), rng.gen_range(-s..=s)]
                } else {
                    [0.0, 0.0]
                };
                // y points down the rows, so (dy, -dx) turns counter-clockwise on screen
                [w * dy + kick[0], -w * dx + kick[1]]
            } else {
                let m = spec.velocity_max;
                if m > 0.0 {
                    [rng.gen_range(-m..=m), rng.gen_range(-m..=m)]
                } else {
                    [0.0, 0.0]
                }
            }
        })
        .collect();
    if matches!(
        spec.law,
        ForceLaw::Spring | ForceLaw::Gravity | ForceLaw::Drift
    ) {
        let total: f64 = masses.iter().sum();
        let p = vel
            .iter()
            .zip(masses)
            .fold([0.0, 0.0], |a, (v, &m)| [a[0] + m * v[0], a[1] + m * v[1]]);
        for v in &mut vel {
            v[0] -= p[0] / total;
            v[1] -= p[1] / total;
        }
    }
    vel
}

/// Whether every ball still overlaps the frame after `drift_min_frames`.
/// Motion is linear, so checking the end point suffices.
fn drift_stays_visible(spec: &SimSpec, pos: &[[f64; 2]], radii: &[f64], vel: &[[f64; 2]]) -> bool {
    drift_rescale(spec, pos, radii, vel) >= 1.0
}

/// Largest factor `<= 1` by which all velocities can be scaled so that no
/// ball fully leaves the frame before `drift_min_frames`.
fn drift_rescale(spec: &SimSpec, pos: &[[f64; 2]], radii: &[f64], vel: &[[f64; 2]]) -> f64 {
    let t = spec.drift_min_frames as f64;
    let mut factor = f64::INFINITY;
    for ((p, &r), v) in pos.iter().zip(radii).zip(vel) {
        for axis in 0..2 {
            let travel = v[axis] * t;
            let room = if travel < 0.0 {
                p[axis] + r
            } else {
                1.0 + r - p[axis]
            };
            if travel != 0.0 {
                factor = factor.min(room / travel.abs());
            }
        }
    }
    factor.min(1.0)
}
