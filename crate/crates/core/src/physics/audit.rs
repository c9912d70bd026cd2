use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::collide::{resolve_pair_collisions, resolve_wall_contacts};
use super::forces::net_forces;
use super::init::init_system;
use super::integrate::{advance_frame, run};
use super::rk4::rk4_reference;
use super::state::{norm, sub, SystemState};
use super::{PhysicsError, SimSpec};

fn momentum_scale(state: &SystemState) -> f64 {
    state
        .objects
        .iter()
        .map(|o| o.mass * norm(o.vel))
        .sum::<f64>()
        .max(f64::MIN_POSITIVE)
}

/// Conservation measured over a frictionless billiards run.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BilliardsAudit {
    pub pair_collisions: usize,
    pub wall_contacts: usize,
    pub frames: usize,
    /// Largest `|E(t) - E(0)| / E(0)` seen at any substep.
    pub energy_drift: f64,
    /// Largest momentum change across a ball-ball resolution, relative to
    /// the summed momentum magnitudes. Walls exchange momentum with the
    /// frame and are excluded.
    pub pair_momentum_error: f64,
}

/// Runs `spec` without friction until `collisions` ball-ball bounces have
/// happened or `max_frames` frames have passed.
pub fn audit_billiards(
    spec: &SimSpec,
    collisions: usize,
    max_frames: usize,
) -> Result<BilliardsAudit, PhysicsError> {
    if !spec.law.is_bounded() {
        return Err(PhysicsError::Config(format!(
            "{} has no collisions",
            spec.law.name()
        )));
    }
    let mut s = spec.clone();
    s.friction = 0.0;
    let mut state = init_system(&s, &mut ChaCha8Rng::seed_from_u64(s.seed))?;
    let e0 = state.kinetic_energy();
    let dt = s.dt();
    let mut audit = BilliardsAudit {
        pair_collisions: 0,
        wall_contacts: 0,
        frames: 0,
        energy_drift: 0.0,
        pair_momentum_error: 0.0,
    };
    while audit.pair_collisions < collisions && audit.frames < max_frames {
        for _ in 0..s.stride {
            let forces = net_forces(&s, &state)?;
            for (o, f) in state.objects.iter_mut().zip(&forces) {
                o.vel[0] += f[0] / o.mass * dt;
                o.vel[1] += f[1] / o.mass * dt;
                o.pos[0] += o.vel[0] * dt;
                o.pos[1] += o.vel[1] * dt;
            }
            let before = state.momentum();
            let pairs = resolve_pair_collisions(&mut state);
            if pairs > 0 {
                let err = norm(sub(state.momentum(), before)) / momentum_scale(&state);
                audit.pair_momentum_error = audit.pair_momentum_error.max(err);
            }
            audit.pair_collisions += pairs;
            audit.wall_contacts += resolve_wall_contacts(&mut state);
            audit.energy_drift = audit
                .energy_drift
                .max((state.kinetic_energy() - e0).abs() / e0);
        }
        audit.frames += 1;
    }
    Ok(audit)
}

/// Largest per-frame momentum change over `frames` frames with friction and
/// the centering force removed, relative to the summed momentum magnitudes.
pub fn momentum_drift(spec: &SimSpec, frames: usize) -> Result<f64, PhysicsError> {
    let mut s = spec.clone();
    s.friction = 0.0;
    s.center_stiffness = 0.0;
    let mut state = init_system(&s, &mut ChaCha8Rng::seed_from_u64(s.seed))?;
    let scale = momentum_scale(&state);
    let mut worst = 0.0f64;
    for _ in 0..frames {
        let before = state.momentum();
        advance_frame(&mut state, &s)?;
        worst = worst.max(norm(sub(state.momentum(), before)) / scale);
    }
    Ok(worst)
}

/// Largest position gap between the Euler integrator and the RK4 oracle over
/// `frames` frames, across `sims` seeds starting at `spec.seed`.
pub fn integrator_deviation(
    spec: &SimSpec,
    sims: usize,
    frames: usize,
) -> Result<f64, PhysicsError> {
    let mut worst = 0.0f64;
    for k in 0..sims {
        let mut s = spec.clone();
        s.seed = spec.seed.wrapping_add(k as u64);
        let init = init_system(&s, &mut ChaCha8Rng::seed_from_u64(s.seed))?;
        let euler = run(&init, &s, frames)?;
        let oracle = rk4_reference(&init, &s, frames)?;
        worst = worst.max(euler.max_position_deviation(&oracle));
    }
    Ok(worst)
}
