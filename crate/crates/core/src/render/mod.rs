//! Anti-aliased rasterization of system states onto 32x32 RGB frames.

mod background;
mod cifar;

use serde::{Deserialize, Serialize};

pub use background::{procedural_background, BackgroundKind, BackgroundSource};
pub use cifar::{
    decode_cifar, encode_cifar, load_cifar_backgrounds, CifarRecord, CifarSplit, CIFAR_RECORD_BYTES,
};

use crate::physics::SystemState;

pub const FRAME_SIZE: usize = 32;
pub const FRAME_BYTES: usize = FRAME_SIZE * FRAME_SIZE * 3;

#[derive(Debug, thiserror::Error)]
pub enum RenderError {
    #[error("CIFAR file {path}: size {size} is not a multiple of {CIFAR_RECORD_BYTES}")]
    CifarFormat { path: String, size: usize },
    #[error("no background images available from {0}")]
    NoBackgrounds(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// 32x32 RGB image, row-major, 3 bytes per pixel.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Frame {
    pixels: Vec<u8>,
}

impl std::fmt::Debug for Frame {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "Frame({} bytes)", self.pixels.len())
    }
}

impl Frame {
    pub fn solid(rgb: [u8; 3]) -> Self {
        Self {
            pixels: rgb.iter().copied().cycle().take(FRAME_BYTES).collect(),
        }
    }

    pub fn from_bytes(bytes: Vec<u8>) -> Option<Self> {
        (bytes.len() == FRAME_BYTES).then_some(Self { pixels: bytes })
    }

    pub fn bytes(&self) -> &[u8] {
        &self.pixels
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * FRAME_SIZE + col) * 3;
        [self.pixels[i], self.pixels[i + 1], self.pixels[i + 2]]
    }

    pub fn set_pixel(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * FRAME_SIZE + col) * 3;
        self.pixels[i..i + 3].copy_from_slice(&rgb);
    }
}

/// Object colors indexed by color slot; a higher slot draws on top.
#[derive(Clone, Debug, PartialEq)]
pub struct Palette {
    pub colors: Vec<[u8; 3]>,
}

impl Default for Palette {
    fn default() -> Self {
        Self {
            colors: vec![
                [255, 32, 32],
                [32, 240, 32],
                [40, 80, 255],
                [250, 230, 20],
                [240, 40, 240],
                [20, 230, 240],
            ],
        }
    }
}

impl Palette {
    pub fn color(&self, slot: usize) -> [u8; 3] {
        self.colors[slot % self.colors.len()]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RenderSettings {
    /// Subsamples per pixel along each axis.
    pub supersample: usize,
    pub background: BackgroundKind,
    /// Directory holding CIFAR-10 binary batches (only for `cifar`).
    pub cifar_dir: String,
    /// Use procedural backgrounds when the CIFAR files are missing.
    pub fallback_procedural: bool,
    pub solid_color: [u8; 3],
}

impl RenderSettings {
    pub fn validate(&self) -> Result<(), String> {
        if self.supersample == 0 {
            return Err("supersample must be positive".into());
        }
        Ok(())
    }
}

/// Draws every visible object as a filled disc over `background`.
///
/// Each pixel touched by a disc is the rounded mean of an `ss x ss` grid of
/// point samples; each sample takes the color of the highest-ranked disc
/// containing it, or the background. Pixels no disc reaches keep the
/// background bytes unchanged.
pub fn render_frame(
    state: &SystemState,
    background: &Frame,
    palette: &Palette,
    supersample: usize,
) -> Frame {
    let n = FRAME_SIZE as f64;
    let mut discs: Vec<(usize, [f64; 2], f64, [u8; 3])> = state
        .objects
        .iter()
        .filter(|o| o.visible)
        .map(|o| {
            (
                o.color,
                [o.pos[0] * n, o.pos[1] * n],
                o.radius * n,
                palette.color(o.color),
            )
        })
        .collect();
    // topmost first
    discs.sort_by_key(|d| std::cmp::Reverse(d.0));

    let mut touched = [false; FRAME_SIZE * FRAME_SIZE];
    for &(_, c, r, _) in &discs {
        if !(c[0].is_finite() && c[1].is_finite()) {
            continue;
        }
        let clamp = |v: f64| v.max(0.0).min(n - 1.0) as usize;
        if c[0] + r < 0.0 || c[1] + r < 0.0 || c[0] - r >= n || c[1] - r >= n {
            continue;
        }
        let (x0, x1) = (clamp((c[0] - r).floor()), clamp((c[0] + r).floor()));
        let (y0, y1) = (clamp((c[1] - r).floor()), clamp((c[1] + r).floor()));
        for row in y0..=y1 {
            for col in x0..=x1 {
                touched[row * FRAME_SIZE + col] = true;
            }
        }
    }

    let mut out = background.clone();
    let ss = supersample;
    let count = (ss * ss) as u32;
    for row in 0..FRAME_SIZE {
        for col in 0..FRAME_SIZE {
            if !touched[row * FRAME_SIZE + col] {
                continue;
            }
            let bg = background.pixel(row, col);
            let mut sum = [0u32; 3];
            for sy in 0..ss {
                let py = row as f64 + (sy as f64 + 0.5) / ss as f64;
                for sx in 0..ss {
                    let px = col as f64 + (sx as f64 + 0.5) / ss as f64;
                    let color = discs
                        .iter()
                        .find(|(_, c, r, _)| {
                            let (dx, dy) = (px - c[0], py - c[1]);
                            dx * dx + dy * dy < r * r
                        })
                        .map_or(bg, |d| d.3);
                    for ch in 0..3 {
                        sum[ch] += color[ch] as u32;
                    }
                }
            }
            let mean = sum.map(|s| ((s + count / 2) / count) as u8);
            out.set_pixel(row, col, mean);
        }
    }
    out
}

/// Per-pixel maximum over a sequence of frames.
pub fn max_composite(frames: &[Frame]) -> Option<Frame> {
    let mut it = frames.iter();
    let mut acc = it.next()?.clone();
    for f in it {
        for (a, &b) in acc.pixels.iter_mut().zip(&f.pixels) {
            *a = (*a).max(b);
        }
    }
    Some(acc)
}
