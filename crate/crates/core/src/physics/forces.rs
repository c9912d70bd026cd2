use super::state::{norm, sub, ObjectState, SystemState, Vec2};
use super::{ForceLaw, PhysicsError, SimSpec};

/// Force exerted by `source` on `target`.
///
/// With `d = source.pos - target.pos`:
/// spring `k (|d| - rest) d^`, gravity `G m_s m_t d^ / |d|^2` capped in
/// magnitude, magnetic `-k q_s q_t d^ / |d|^2`, and zero otherwise.
pub fn pairwise_force(
    spec: &SimSpec,
    source: &ObjectState,
    target: &ObjectState,
) -> Result<Vec2, PhysicsError> {
    if matches!(spec.law, ForceLaw::Billiards | ForceLaw::Drift) {
        return Ok([0.0, 0.0]);
    }
    let d = sub(source.pos, target.pos);
    let dist = norm(d);
    if !(dist > 0.0) {
        return Err(PhysicsError::CoincidentCenters);
    }
    let unit = [d[0] / dist, d[1] / dist];
    let magnitude = match spec.law {
        ForceLaw::Spring => spec.spring_k * (dist - spec.spring_rest),
        ForceLaw::Gravity => {
            (spec.gravity_g * source.mass * target.mass / (dist * dist)).min(spec.gravity_max_force)
        }
        ForceLaw::MagneticBilliards => {
            -spec.coulomb_k * source.charge * target.charge / (dist * dist)
        }
        ForceLaw::Billiards | ForceLaw::Drift => unreachable!(),
    };
    Ok([magnitude * unit[0], magnitude * unit[1]])
}

/// Net force on every object: pairwise terms (applied equal and opposite),
/// the gravity system's pull toward the frame center, and area-proportional
/// friction.
pub fn net_forces(spec: &SimSpec, state: &SystemState) -> Result<Vec<Vec2>, PhysicsError> {
    let objs = &state.objects;
    let mut forces = vec![[0.0, 0.0]; objs.len()];
    if !matches!(spec.law, ForceLaw::Billiards | ForceLaw::Drift) {
        for i in 0..objs.len() {
            for j in i + 1..objs.len() {
                let f = pairwise_force(spec, &objs[i], &objs[j])?;
                forces[j][0] += f[0];
                forces[j][1] += f[1];
                forces[i][0] -= f[0];
                forces[i][1] -= f[1];
            }
        }
    }
    for (f, o) in forces.iter_mut().zip(objs) {
        if spec.law == ForceLaw::Gravity {
            f[0] -= spec.center_stiffness * (o.pos[0] - 0.5);
            f[1] -= spec.center_stiffness * (o.pos[1] - 0.5);
        }
        let drag = spec.friction * o.radius * o.radius;
        f[0] -= drag * o.vel[0];
        f[1] -= drag * o.vel[1];
    }
    Ok(forces)
}
