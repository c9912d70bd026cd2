use super::forces::net_forces;
use super::{PhysicsError, SimSpec, SystemState, Trajectory};

fn derivative(spec: &SimSpec, state: &SystemState) -> Result<Vec<[f64; 4]>, PhysicsError> {
    let forces = net_forces(spec, state)?;
    Ok(state
        .objects
        .iter()
        .zip(forces)
        .map(|(o, f)| [o.vel[0], o.vel[1], f[0] / o.mass, f[1] / o.mass])
        .collect())
}

fn offset(state: &SystemState, k: &[[f64; 4]], h: f64) -> SystemState {
    let mut s = state.clone();
    for (o, d) in s.objects.iter_mut().zip(k) {
        o.pos[0] += h * d[0];
        o.pos[1] += h * d[1];
        o.vel[0] += h * d[2];
        o.vel[1] += h * d[3];
    }
    s
}

/// Classical fourth-order Runge-Kutta at the spec's substep, without
/// collision handling. A test oracle for smooth-force systems.
pub fn rk4_reference(
    initial: &SystemState,
    spec: &SimSpec,
    n_frames: usize,
) -> Result<Trajectory, PhysicsError> {
    let dt = spec.dt();
    let mut state = initial.clone();
    let mut frames = vec![state.clone()];
    for _ in 0..n_frames {
        for _ in 0..spec.stride {
            let k1 = derivative(spec, &state)?;
            let k2 = derivative(spec, &offset(&state, &k1, dt / 2.0))?;
            let k3 = derivative(spec, &offset(&state, &k2, dt / 2.0))?;
            let k4 = derivative(spec, &offset(&state, &k3, dt))?;
            for (i, o) in state.objects.iter_mut().enumerate() {
                let inc =
                    |c: usize| dt / 6.0 * (k1[i][c] + 2.0 * k2[i][c] + 2.0 * k3[i][c] + k4[i][c]);
                o.pos[0] += inc(0);
                o.pos[1] += inc(1);
                o.vel[0] += inc(2);
                o.vel[1] += inc(3);
            }
        }
        frames.push(state.clone());
    }
    Ok(Trajectory { frames })
}
