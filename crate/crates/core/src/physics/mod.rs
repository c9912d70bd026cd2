//! Deterministic 2D multi-body simulation for the five force systems.

mod audit;
mod calibrate;
mod collide;
mod forces;
mod init;
mod integrate;
mod rk4;
mod spec;
mod state;

pub use audit::{audit_billiards, integrator_deviation, momentum_drift, BilliardsAudit};
pub use calibrate::{calibrate, mean_displacement, time_scaled, Calibration};
pub use collide::{
    elastic_1d, resolve_collisions, resolve_pair_collisions, resolve_wall_contacts, Contacts,
};
pub use forces::{net_forces, pairwise_force};
pub use init::init_system;
pub use integrate::{advance_frame, run, simulate, step};
pub use rk4::rk4_reference;
pub use spec::{ForceLaw, SimSpec};
pub use state::{ObjectState, SystemState, Trajectory, Vec2};

#[derive(Debug, thiserror::Error)]
pub enum PhysicsError {
    #[error("two objects share a center; pairwise force undefined")]
    CoincidentCenters,
    #[error("non-finite state at frame {frame}")]
    NonFinite { frame: usize },
    #[error("could not place objects without overlap after {attempts} attempts")]
    Crowded { attempts: usize },
    #[error("config: {0}")]
    Config(String),
}

#[cfg(test)]
mod tests;
