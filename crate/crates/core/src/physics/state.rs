/// 2-vector in framewidth units.
pub type Vec2 = [f64; 2];

#[inline]
pub(crate) fn sub(a: Vec2, b: Vec2) -> Vec2 {
    [a[0] - b[0], a[1] - b[1]]
}

#[inline]
pub(crate) fn norm(a: Vec2) -> f64 {
    a[0].hypot(a[1])
}

/// One ball. Positions span `[0, 1]^2` over the visible frame with `y`
/// pointing down the image rows; velocities are in framewidths per rendered
/// frame.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ObjectState {
    pub pos: Vec2,
    pub vel: Vec2,
    pub mass: f64,
    pub radius: f64,
    pub charge: f64,
    pub visible: bool,
    /// Palette slot; also the fixed occlusion rank and the state-code slot.
    pub color: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SystemState {
    pub objects: Vec<ObjectState>,
}

impl SystemState {
    pub fn momentum(&self) -> Vec2 {
        self.objects.iter().fold([0.0, 0.0], |acc, o| {
            [acc[0] + o.mass * o.vel[0], acc[1] + o.mass * o.vel[1]]
        })
    }

    pub fn kinetic_energy(&self) -> f64 {
        self.objects
            .iter()
            .map(|o| 0.5 * o.mass * (o.vel[0] * o.vel[0] + o.vel[1] * o.vel[1]))
            .sum()
    }

    pub fn center_of_mass(&self) -> Vec2 {
        let total: f64 = self.objects.iter().map(|o| o.mass).sum();
        let s = self.objects.iter().fold([0.0, 0.0], |acc, o| {
            [acc[0] + o.mass * o.pos[0], acc[1] + o.mass * o.pos[1]]
        });
        [s[0] / total, s[1] / total]
    }

    pub fn is_finite(&self) -> bool {
        self.objects
            .iter()
            .all(|o| o.pos.iter().chain(&o.vel).all(|x| x.is_finite()))
    }

    /// `[px, py, vx, vy]` per object, in slot order.
    pub fn kinematics(&self) -> Vec<[f64; 4]> {
        self.objects
            .iter()
            .map(|o| [o.pos[0], o.pos[1], o.vel[0], o.vel[1]])
            .collect()
    }

    /// Copy with positions and velocities replaced, physical properties kept.
    pub fn with_kinematics(&self, kin: &[[f64; 4]]) -> SystemState {
        let objects = self
            .objects
            .iter()
            .zip(kin)
            .map(|(o, k)| ObjectState {
                pos: [k[0], k[1]],
                vel: [k[2], k[3]],
                ..*o
            })
            .collect();
        SystemState { objects }
    }

    /// Reflection about the vertical line `x = 0.5`.
    pub fn mirrored_x(&self) -> SystemState {
        let objects = self
            .objects
            .iter()
            .map(|o| ObjectState {
                pos: [1.0 - o.pos[0], o.pos[1]],
                vel: [-o.vel[0], o.vel[1]],
                ..*o
            })
            .collect();
        SystemState { objects }
    }
}

/// Sequence of rendered-frame states; index 0 is the initial condition.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub frames: Vec<SystemState>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn max_position_deviation(&self, other: &Trajectory) -> f64 {
        self.frames
            .iter()
            .zip(&other.frames)
            .flat_map(|(a, b)| {
                a.objects
                    .iter()
                    .zip(&b.objects)
                    .map(|(x, y)| norm(sub(x.pos, y.pos)))
            })
            .fold(0.0, f64::max)
    }
}
