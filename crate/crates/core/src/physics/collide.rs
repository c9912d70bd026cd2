use super::state::{SystemState, Vec2};

/// Counts of contacts resolved during one call.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Contacts {
    pub pairs: usize,
    pub walls: usize,
}

/// 1D elastic exchange along the contact normal.
pub fn elastic_1d(m1: f64, u1: f64, m2: f64, u2: f64) -> (f64, f64) {
    let total = m1 + m2;
    (
        ((m1 - m2) * u1 + 2.0 * m2 * u2) / total,
        ((m2 - m1) * u2 + 2.0 * m1 * u1) / total,
    )
}

/// Elastic ball-ball bounces for overlapping, approaching pairs in ascending
/// `(i, j)` order. Tangential velocity components are untouched.
pub fn resolve_pair_collisions(state: &mut SystemState) -> usize {
    let objs = &mut state.objects;
    let mut count = 0;
    for i in 0..objs.len() {
        for j in i + 1..objs.len() {
            let d: Vec2 = [
                objs[j].pos[0] - objs[i].pos[0],
                objs[j].pos[1] - objs[i].pos[1],
            ];
            let dist = d[0].hypot(d[1]);
            if dist >= objs[i].radius + objs[j].radius || dist == 0.0 {
                continue;
            }
            let n = [d[0] / dist, d[1] / dist];
            let ui = objs[i].vel[0] * n[0] + objs[i].vel[1] * n[1];
            let uj = objs[j].vel[0] * n[0] + objs[j].vel[1] * n[1];
            // separating already
            if ui - uj <= 0.0 {
                continue;
            }
            let (ui2, uj2) = elastic_1d(objs[i].mass, ui, objs[j].mass, uj);
            for (k, du) in [(i, ui2 - ui), (j, uj2 - uj)] {
                objs[k].vel[0] += du * n[0];
                objs[k].vel[1] += du * n[1];
            }
            count += 1;
        }
    }
    count
}

/// Reflects the normal velocity of balls touching a frame edge and clamps
/// their centers into `[r, 1 - r]`.
pub fn resolve_wall_contacts(state: &mut SystemState) -> usize {
    let mut count = 0;
    for o in &mut state.objects {
        for axis in 0..2 {
            let (lo, hi) = (o.radius, 1.0 - o.radius);
            if o.pos[axis] < lo {
                o.pos[axis] = lo;
                if o.vel[axis] < 0.0 {
                    o.vel[axis] = -o.vel[axis];
                    count += 1;
                }
            } else if o.pos[axis] > hi {
                o.pos[axis] = hi;
                if o.vel[axis] > 0.0 {
                    o.vel[axis] = -o.vel[axis];
                    count += 1;
                }
            }
        }
    }
    count
}

/// Pairs first, walls last.
pub fn resolve_collisions(state: &mut SystemState) -> Contacts {
    let pairs = resolve_pair_collisions(state);
    let walls = resolve_wall_contacts(state);
    Contacts { pairs, walls }
}
