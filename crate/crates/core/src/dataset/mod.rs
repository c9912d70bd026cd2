//! On-disk datasets of rendered simulations and their ground-truth states.
//!
//! A split directory holds `manifest.toml`, `frames.bin` (bytes in
//! `[sim][frame][row][col][channel]` order) and `states.bin` (little-endian
//! f32 in `[sim][frame][object][px, py, vx, vy]` order).

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::physics::{init_system, simulate, ForceLaw, PhysicsError, SimSpec, SystemState};
use crate::render::{
    render_frame, BackgroundSource, CifarSplit, Frame, Palette, RenderError, FRAME_BYTES,
};

pub const FORMAT_VERSION: u32 = 1;
/// Frames fed to the encoder before prediction starts.
pub const OBSERVED: usize = 6;
/// Future steps supervised during training.
pub const HORIZON: usize = 8;
/// Length of one training window.
pub const WINDOW: usize = OBSERVED + HORIZON;

pub const MANIFEST_FILE: &str = "manifest.toml";
pub const FRAMES_FILE: &str = "frames.bin";
pub const STATES_FILE: &str = "states.bin";

#[derive(Debug, thiserror::Error)]
pub enum DatasetError {
    #[error(transparent)]
    Physics(#[from] PhysicsError),
    #[error(transparent)]
    Render(#[from] RenderError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("dataset format: {0}")]
    Format(String),
    #[error("{dir} already holds a different dataset")]
    Incompatible { dir: String },
}

pub type Split = CifarSplit;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub system: ForceLaw,
    pub n_objects: usize,
    pub frames: usize,
    pub split: String,
    pub simulations: usize,
    /// Dataset seed; every simulation's seed is derived from it, the split and
    /// the simulation index.
    pub seed: u64,
    pub background: String,
    pub background_ids: Vec<u64>,
    pub spec: SimSpec,
}

impl DatasetManifest {
    pub fn split(&self) -> Result<Split, DatasetError> {
        match self.split.as_str() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            other => Err(DatasetError::Format(format!("unknown split {other:?}"))),
        }
    }

    pub fn frames_len(&self) -> usize {
        self.simulations * self.frames * FRAME_BYTES
    }

    pub fn states_len(&self) -> usize {
        self.simulations * self.frames * self.n_objects * 4
    }
}

/// Seed of simulation `index` in a split.
pub fn sim_seed(seed: u64, split: Split, index: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ split.salt());
    rng.set_stream(index as u64);
    // keep seeds representable as TOML integers
    rng.gen::<u64>() >> 1
}

/// One contiguous window of a simulation.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingSample {
    pub sim: usize,
    pub start: usize,
    /// `WINDOW` frames of `FRAME_BYTES` each.
    pub frames: Vec<u8>,
    /// `WINDOW x n_objects x 4` states.
    pub states: Vec<f32>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    frames: Vec<u8>,
    states: Vec<f32>,
}

impl Dataset {
    pub fn from_parts(
        manifest: DatasetManifest,
        frames: Vec<u8>,
        states: Vec<f32>,
    ) -> Result<Self, DatasetError> {
        if frames.len() != manifest.frames_len() {
            return Err(DatasetError::Format(format!(
                "frames payload is {} bytes, manifest implies {}",
                frames.len(),
                manifest.frames_len()
            )));
        }
        if states.len() != manifest.states_len() {
            return Err(DatasetError::Format(format!(
                "states payload has {} values, manifest implies {}",
                states.len(),
                manifest.states_len()
            )));
        }
        if manifest.background_ids.len() != manifest.simulations {
            return Err(DatasetError::Format(
                "one background id per simulation expected".into(),
            ));
        }
        Ok(Self {
            manifest,
            frames,
            states,
        })
    }

    pub fn len(&self) -> usize {
        self.manifest.simulations
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_objects(&self) -> usize {
        self.manifest.n_objects
    }

    pub fn frames_per_sim(&self) -> usize {
        self.manifest.frames
    }

    pub fn frame_bytes(&self) -> &[u8] {
        &self.frames
    }

    pub fn state_values(&self) -> &[f32] {
        &self.states
    }

    pub fn frame(&self, sim: usize, t: usize) -> &[u8] {
        let i = (sim * self.manifest.frames + t) * FRAME_BYTES;
        &self.frames[i..i + FRAME_BYTES]
    }

    /// `n_objects x 4` values for one frame.
    pub fn state(&self, sim: usize, t: usize) -> &[f32] {
        let n = self.manifest.n_objects * 4;
        let i = (sim * self.manifest.frames + t) * n;
        &self.states[i..i + n]
    }

    /// The spec that regenerates simulation `sim`.
    pub fn sim_spec(&self, sim: usize) -> Result<SimSpec, DatasetError> {
        let mut spec = self.manifest.spec.clone();
        spec.seed = sim_seed(self.manifest.seed, self.manifest.split()?, sim);
        Ok(spec)
    }

    /// Initial condition of simulation `sim`, including masses, radii and
    /// charges that the state payload does not store.
    pub fn initial_state(&self, sim: usize) -> Result<SystemState, DatasetError> {
        let spec = self.sim_spec(sim)?;
        Ok(init_system(
            &spec,
            &mut ChaCha8Rng::seed_from_u64(spec.seed),
        )?)
    }

    /// Background image simulation `sim` was rendered over.
    pub fn background(&self, sim: usize) -> Result<Frame, DatasetError> {
        let m = &self.manifest;
        let source = BackgroundSource::from_settings(&m.spec.render, m.split()?, m.seed)?;
        source.get(m.background_ids[sim]).ok_or_else(|| {
            DatasetError::Format(format!("background {} missing", m.background_ids[sim]))
        })
    }

    pub fn window(&self, sim: usize, start: usize, len: usize) -> TrainingSample {
        let f = self.manifest.frames;
        let n = self.manifest.n_objects * 4;
        let fi = (sim * f + start) * FRAME_BYTES;
        let si = (sim * f + start) * n;
        TrainingSample {
            sim,
            start,
            frames: self.frames[fi..fi + len * FRAME_BYTES].to_vec(),
            states: self.states[si..si + len * n].to_vec(),
        }
    }
}

/// Simulates and renders `simulations` runs of `spec` for one split.
pub fn generate(
    spec: &SimSpec,
    split: Split,
    simulations: usize,
    seed: u64,
) -> Result<Dataset, DatasetError> {
    spec.validate()?;
    let backgrounds = BackgroundSource::from_settings(&spec.render, split, seed)?;
    let palette = Palette::default();
    let mut frames = Vec::with_capacity(simulations * spec.frames * FRAME_BYTES);
    let mut states = Vec::with_capacity(simulations * spec.frames * spec.n_objects * 4);
    let mut background_ids = Vec::with_capacity(simulations);
    for sim in 0..simulations {
        let mut s = spec.clone();
        s.seed = sim_seed(seed, split, sim);
        let mut bg_rng = ChaCha8Rng::seed_from_u64(s.seed);
        bg_rng.set_stream(1);
        let (id, background) = backgrounds.draw(&mut bg_rng);
        background_ids.push(id);
        for state in simulate(&s)?.frames {
            frames.extend_from_slice(
                render_frame(&state, &background, &palette, spec.render.supersample).bytes(),
            );
            for k in state.kinematics() {
                states.extend(k.iter().map(|&x| x as f32));
            }
        }
    }
    let manifest = DatasetManifest {
        format_version: FORMAT_VERSION,
        system: spec.law,
        n_objects: spec.n_objects,
        frames: spec.frames,
        split: split.name().to_string(),
        simulations,
        seed,
        background: backgrounds.describe(),
        background_ids,
        spec: spec.clone(),
    };
    Dataset::from_parts(manifest, frames, states)
}

pub fn write_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<(), DatasetError> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir)?;
    let manifest_path = dir.join(MANIFEST_FILE);
    if manifest_path.exists() {
        let existing = read_manifest(dir)?;
        if existing != dataset.manifest {
            return Err(DatasetError::Incompatible {
                dir: dir.display().to_string(),
            });
        }
    }
    let text =
        toml::to_string(&dataset.manifest).map_err(|e| DatasetError::Format(e.to_string()))?;
    fs::write(&manifest_path, text)?;
    fs::write(dir.join(FRAMES_FILE), &dataset.frames)?;
    let mut out = BufWriter::new(fs::File::create(dir.join(STATES_FILE))?);
    for v in &dataset.states {
        out.write_all(&v.to_le_bytes())?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_manifest(dir: impl AsRef<Path>) -> Result<DatasetManifest, DatasetError> {
    let text = fs::read_to_string(dir.as_ref().join(MANIFEST_FILE))?;
    let manifest: DatasetManifest =
        toml::from_str(&text).map_err(|e| DatasetError::Format(e.to_string()))?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(DatasetError::Format(format!(
            "unsupported format version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}

pub fn read_dataset(dir: impl AsRef<Path>) -> Result<Dataset, DatasetError> {
    let dir = dir.as_ref();
    let manifest = read_manifest(dir)?;
    let frames = fs::read(dir.join(FRAMES_FILE))?;
    let raw = fs::read(dir.join(STATES_FILE))?;
    if raw.len() % 4 != 0 {
        return Err(DatasetError::Format(format!(
            "states payload of {} bytes is not whole f32s",
            raw.len()
        )));
    }
    let states = raw
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    Dataset::from_parts(manifest, frames, states)
}

/// Uniformly random `(simulation, start)` windows of `WINDOW` frames.
pub fn sample_batch<R: Rng>(
    dataset: &Dataset,
    batch_size: usize,
    rng: &mut R,
) -> Vec<TrainingSample> {
    let max_start = dataset.frames_per_sim() - WINDOW;
    (0..batch_size)
        .map(|_| {
            let sim = rng.gen_range(0..dataset.len());
            let start = rng.gen_range(0..=max_start);
            dataset.window(sim, start, WINDOW)
        })
        .collect()
}
