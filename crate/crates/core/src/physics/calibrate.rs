use super::integrate::simulate;
use super::state::{norm, sub};
use super::{PhysicsError, SimSpec};

/// Result of tuning a spec toward a target mean per-frame displacement.
#[derive(Clone, Debug)]
pub struct Calibration {
    /// Factor applied by [`time_scaled`] to the input spec.
    pub scale: f64,
    pub mean_displacement: f64,
    pub spec: SimSpec,
}

/// Speeds the dynamics up by `s` without changing the shape of smooth
/// trajectories: forces scale by `s^2`, friction and initial speeds by `s`,
/// so `x_scaled(t) = x(s t)`.
pub fn time_scaled(spec: &SimSpec, s: f64) -> SimSpec {
    let mut out = spec.clone();
    let s2 = s * s;
    out.spring_k *= s2;
    out.gravity_g *= s2;
    out.gravity_max_force *= s2;
    out.center_stiffness *= s2;
    out.coulomb_k *= s2;
    out.friction *= s;
    out.velocity_max *= s;
    out.tangent_speed *= s;
    out.tangent_noise *= s;
    out
}

/// Mean distance a ball moves between consecutive rendered frames, averaged
/// over `sims` simulations seeded `spec.seed..spec.seed + sims`.
pub fn mean_displacement(spec: &SimSpec, sims: usize) -> Result<f64, PhysicsError> {
    let mut total = 0.0;
    let mut count = 0usize;
    for k in 0..sims {
        let mut s = spec.clone();
        s.seed = spec.seed.wrapping_add(k as u64);
        let traj = simulate(&s)?;
        for w in traj.frames.windows(2) {
            for (a, b) in w[0].objects.iter().zip(&w[1].objects) {
                total += norm(sub(b.pos, a.pos));
                count += 1;
            }
        }
    }
    Ok(total / count.max(1) as f64)
}

/// Geometric bisection on the time scale so that the mean per-frame
/// displacement lands near `target` framewidths.
pub fn calibrate(
    spec: &SimSpec,
    target: f64,
    sims: usize,
    iterations: usize,
) -> Result<Calibration, PhysicsError> {
    let (mut lo, mut hi) = (0.01f64, 100.0f64);
    let eval = |s: f64| mean_displacement(&time_scaled(spec, s), sims);
    let mut best = (1.0, eval(1.0)?);
    for _ in 0..iterations {
        let mid = (lo * hi).sqrt();
        let d = eval(mid)?;
        if (d - target).abs() < (best.1 - target).abs() {
            best = (mid, d);
        }
        if d < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(Calibration {
        scale: best.0,
        mean_displacement: best.1,
        spec: time_scaled(spec, best.0),
    })
}
