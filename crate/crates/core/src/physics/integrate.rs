use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::collide::{resolve_collisions, Contacts};
use super::forces::net_forces;
use super::init::init_system;
use super::{PhysicsError, SimSpec, SystemState, Trajectory};

/// One semi-implicit Euler substep of length `spec.dt()`, followed by
/// collision resolution for the billiards family.
pub fn step(state: &mut SystemState, spec: &SimSpec) -> Result<Contacts, PhysicsError> {
    let dt = spec.dt();
    let forces = net_forces(spec, state)?;
    for (o, f) in state.objects.iter_mut().zip(&forces) {
        o.vel[0] += f[0] / o.mass * dt;
        o.vel[1] += f[1] / o.mass * dt;
        o.pos[0] += o.vel[0] * dt;
        o.pos[1] += o.vel[1] * dt;
    }
    let contacts = if spec.law.is_bounded() {
        resolve_collisions(state)
    } else {
        Contacts::default()
    };
    if !state.is_finite() {
        return Err(PhysicsError::NonFinite { frame: 0 });
    }
    Ok(contacts)
}

/// Advances one rendered frame (`spec.stride` substeps).
pub fn advance_frame(state: &mut SystemState, spec: &SimSpec) -> Result<Contacts, PhysicsError> {
    let mut total = Contacts::default();
    for _ in 0..spec.stride {
        let c = step(state, spec)?;
        total.pairs += c.pairs;
        total.walls += c.walls;
    }
    Ok(total)
}

/// Integrates `n_frames` rendered frames from `initial`; the result holds
/// `n_frames + 1` states.
pub fn run(
    initial: &SystemState,
    spec: &SimSpec,
    n_frames: usize,
) -> Result<Trajectory, PhysicsError> {
    let mut frames = Vec::with_capacity(n_frames + 1);
    let mut state = initial.clone();
    frames.push(state.clone());
    for frame in 1..=n_frames {
        advance_frame(&mut state, spec).map_err(|e| match e {
            PhysicsError::NonFinite { .. } => PhysicsError::NonFinite { frame },
            other => other,
        })?;
        frames.push(state.clone());
    }
    Ok(Trajectory { frames })
}

/// Initializes from `spec.seed` and records `spec.frames` rendered frames.
pub fn simulate(spec: &SimSpec) -> Result<Trajectory, PhysicsError> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let initial = init_system(spec, &mut rng)?;
    run(&initial, spec, spec.frames - 1)
}
