use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PhysicsError;
use crate::render::RenderSettings;

/// Which pairwise interaction drives a system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ForceLaw {
    Spring,
    Gravity,
    Billiards,
    MagneticBilliards,
    Drift,
}

impl ForceLaw {
    pub const ALL: [ForceLaw; 5] = [
        ForceLaw::Spring,
        ForceLaw::Gravity,
        ForceLaw::Billiards,
        ForceLaw::MagneticBilliards,
        ForceLaw::Drift,
    ];

    /// Systems whose balls collide with each other and with the frame edges.
    pub fn is_bounded(self) -> bool {
        matches!(self, ForceLaw::Billiards | ForceLaw::MagneticBilliards)
    }

    pub fn name(self) -> &'static str {
        match self {
            ForceLaw::Spring => "spring",
            ForceLaw::Gravity => "gravity",
            ForceLaw::Billiards => "billiards",
            ForceLaw::MagneticBilliards => "magnetic-billiards",
            ForceLaw::Drift => "drift",
        }
    }

    /// Shipped configuration file for this system.
    pub fn builtin_config(self) -> &'static str {
        match self {
            ForceLaw::Spring => include_str!("../../configs/spring.toml"),
            ForceLaw::Gravity => include_str!("../../configs/gravity.toml"),
            ForceLaw::Billiards => include_str!("../../configs/billiards.toml"),
            ForceLaw::MagneticBilliards => include_str!("../../configs/magnetic-billiards.toml"),
            ForceLaw::Drift => include_str!("../../configs/drift.toml"),
        }
    }
}

impl std::str::FromStr for ForceLaw {
    type Err = PhysicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ForceLaw::ALL
            .into_iter()
            .find(|l| l.name() == s)
            .ok_or_else(|| PhysicsError::Config(format!("unknown force law {s:?}")))
    }
}

/// Everything needed to regenerate a simulation: force law, constants,
/// integrator settings, initialization ranges and render settings.
///
/// Time is measured in rendered frames, lengths in framewidths. The
/// integrator substep is `1 / stride` frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimSpec {
    pub law: ForceLaw,
    pub n_objects: usize,
    pub frames: usize,
    pub stride: usize,
    pub seed: u64,

    pub radius: f64,
    pub mass: f64,
    pub variable_mass: bool,
    pub radius_range: [f64; 2],
    pub density: f64,
    pub invisible: bool,

    pub spring_k: f64,
    pub spring_rest: f64,
    pub gravity_g: f64,
    pub gravity_max_force: f64,
    pub center_stiffness: f64,
    pub coulomb_k: f64,
    pub charge_range: [f64; 2],
    pub friction: f64,

    pub init_box: f64,
    pub velocity_max: f64,
    pub tangent_speed: f64,
    pub tangent_noise: f64,
    pub drift_min_frames: usize,
    pub max_init_attempts: usize,

    pub render: RenderSettings,
}

impl SimSpec {
    pub fn builtin(law: ForceLaw) -> Self {
        Self::from_toml(law.builtin_config()).expect("shipped config parses")
    }

    pub fn from_toml(text: &str) -> Result<Self, PhysicsError> {
        let spec: SimSpec =
            toml::from_str(text).map_err(|e| PhysicsError::Config(e.to_string()))?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("SimSpec serializes")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PhysicsError> {
        let text = std::fs::read_to_string(path.as_ref())
            .map_err(|e| PhysicsError::Config(format!("{}: {e}", path.as_ref().display())))?;
        Self::from_toml(&text)
    }

    /// Integrator substep, in rendered frames.
    pub fn dt(&self) -> f64 {
        1.0 / self.stride as f64
    }

    pub fn validate(&self) -> Result<(), PhysicsError> {
        let bad = |m: &str| Err(PhysicsError::Config(m.to_string()));
        if self.n_objects == 0 {
            return bad("n_objects must be positive");
        }
        if self.frames == 0 || self.stride == 0 {
            return bad("frames and stride must be positive");
        }
        if !(self.radius > 0.0 && self.mass > 0.0 && self.density > 0.0) {
            return bad("radius, mass and density must be positive");
        }
        if self.radius_range[0] <= 0.0 || self.radius_range[0] > self.radius_range[1] {
            return bad("radius_range must be a positive interval");
        }
        if self.charge_range[0] > self.charge_range[1] {
            return bad("charge_range is empty");
        }
        if !(self.init_box > 0.0 && self.init_box <= 1.0) {
            return bad("init_box must lie in (0, 1]");
        }
        for (name, v) in [
            ("spring_k", self.spring_k),
            ("spring_rest", self.spring_rest),
            ("gravity_g", self.gravity_g),
            ("gravity_max_force", self.gravity_max_force),
            ("center_stiffness", self.center_stiffness),
            ("coulomb_k", self.coulomb_k),
            ("friction", self.friction),
            ("velocity_max", self.velocity_max),
            ("tangent_noise", self.tangent_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(PhysicsError::Config(format!(
                    "{name} must be finite and non-negative"
                )));
            }
        }
        if self.max_init_attempts == 0 {
            return bad("max_init_attempts must be positive");
        }
        self.render.validate().map_err(PhysicsError::Config)
    }
}
