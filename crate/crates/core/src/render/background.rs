use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{load_cifar_backgrounds, CifarSplit, Frame, RenderError, RenderSettings, FRAME_SIZE};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BackgroundKind {
    Cifar,
    ProceduralNoise,
    Solid,
}

/// Pool of static backgrounds; one is picked per simulation.
#[derive(Clone, Debug)]
pub enum BackgroundSource {
    Images { origin: String, images: Vec<Frame> },
    Procedural { seed: u64 },
    Solid([u8; 3]),
}

impl BackgroundSource {
    /// Builds the pool described by `settings` for one split. Train and test
    /// draw from disjoint CIFAR files or disjoint procedural seeds.
    pub fn from_settings(
        settings: &RenderSettings,
        split: CifarSplit,
        seed: u64,
    ) -> Result<Self, RenderError> {
        let procedural = BackgroundSource::Procedural {
            seed: seed ^ split.salt(),
        };
        match settings.background {
            BackgroundKind::Solid => Ok(BackgroundSource::Solid(settings.solid_color)),
            BackgroundKind::ProceduralNoise => Ok(procedural),
            BackgroundKind::Cifar => match load_cifar_backgrounds(&settings.cifar_dir, split) {
                Ok(records) if !records.is_empty() => Ok(BackgroundSource::Images {
                    origin: format!("cifar:{}:{}", settings.cifar_dir, split.name()),
                    images: records.into_iter().map(|r| r.image).collect(),
                }),
                Ok(_) | Err(RenderError::Io(_)) if settings.fallback_procedural => Ok(procedural),
                Ok(_) => Err(RenderError::NoBackgrounds(settings.cifar_dir.clone())),
                Err(e) => Err(e),
            },
        }
    }

    /// Human-readable identity of the pool, stored in dataset manifests.
    pub fn describe(&self) -> String {
        match self {
            BackgroundSource::Images { origin, .. } => origin.clone(),
            BackgroundSource::Procedural { seed } => format!("procedural:{seed}"),
            BackgroundSource::Solid(c) => format!("solid:{},{},{}", c[0], c[1], c[2]),
        }
    }

    /// Picks a background; returns its id within the pool and the image.
    pub fn draw<R: Rng>(&self, rng: &mut R) -> (u64, Frame) {
        match self {
            BackgroundSource::Images { images, .. } => {
                let i = rng.gen_range(0..images.len());
                (i as u64, images[i].clone())
            }
            BackgroundSource::Procedural { seed } => {
                let id = u64::from(rng.gen::<u32>());
                (id, procedural_background(seed ^ id))
            }
            BackgroundSource::Solid(c) => (0, Frame::solid(*c)),
        }
    }

    /// Re-creates the background with the given id.
    pub fn get(&self, id: u64) -> Option<Frame> {
        match self {
            BackgroundSource::Images { images, .. } => images.get(id as usize).cloned(),
            BackgroundSource::Procedural { seed } => Some(procedural_background(seed ^ id)),
            BackgroundSource::Solid(c) => Some(Frame::solid(*c)),
        }
    }
}

/// Smooth colored value noise: two octaves of bilinearly interpolated random
/// lattices, muted so the palette colors stay distinguishable.
pub fn procedural_background(seed: u64) -> Frame {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut field = vec![[0.0f64; 3]; FRAME_SIZE * FRAME_SIZE];
    for (cells, amplitude) in [(4usize, 1.0f64), (8, 0.5)] {
        let lattice: Vec<[f64; 3]> = (0..(cells + 1) * (cells + 1))
            .map(|_| [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()])
            .collect();
        for row in 0..FRAME_SIZE {
            for col in 0..FRAME_SIZE {
                let fy = (row as f64 + 0.5) / FRAME_SIZE as f64 * cells as f64;
                let fx = (col as f64 + 0.5) / FRAME_SIZE as f64 * cells as f64;
                let (iy, ix) = ((fy as usize).min(cells - 1), (fx as usize).min(cells - 1));
                let (ty, tx) = (fy - iy as f64, fx - ix as f64);
                let at = |y: usize, x: usize| lattice[y * (cells + 1) + x];
                for ch in 0..3 {
                    let top = at(iy, ix)[ch] * (1.0 - tx) + at(iy, ix + 1)[ch] * tx;
                    let bottom = at(iy + 1, ix)[ch] * (1.0 - tx) + at(iy + 1, ix + 1)[ch] * tx;
                    field[row * FRAME_SIZE + col][ch] +=
                        amplitude * (top * (1.0 - ty) + bottom * ty);
                }
            }
        }
    }
    let mut frame = Frame::solid([0, 0, 0]);
    for row in 0..FRAME_SIZE {
        for col in 0..FRAME_SIZE {
            let v = field[row * FRAME_SIZE + col];
            // field in [0, 1.5]; map into a mid-gray band
            let rgb = v.map(|x| (40.0 + x / 1.5 * 140.0).round().clamp(0.0, 255.0) as u8);
            frame.set_pixel(row, col, rgb);
        }
    }
    frame
}
