//! The visual interaction network, its baselines, and a shared rollout
//! interface.
//!
//! All networks work on row-batched state codes: a code for `batch`
//! sequences of `n` objects is a `[batch * n, 64]` matrix whose rows are
//! ordered by sequence, then by slot. Slot `i` always belongs to the object
//! with color index `i`.

mod dynamics;
mod encoder;
mod layers;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use dynamics::{HISTORY, LSTM_HIDDEN, OFFSETS};
pub use encoder::{coordinate_channels, PAIR_CODE};

use crate::dataset::OBSERVED;
use crate::numeric::{Checkpoint, NumericError, ParamStore, Scalar, Tape, Tensor, Var};
use dynamics::{InCore, LstmPredictor, OffsetPredictor};
use encoder::VisualEncoder;
use layers::Dense;

/// Width of one state-code slot.
pub const CODE: usize = 64;
/// Decoded state per object: `px, py, vx, vy`.
pub const STATE_DIM: usize = 4;

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error(transparent)]
    Numeric(#[from] NumericError),
    #[error("model input: {0}")]
    Input(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ModelVariant {
    Vin,
    VisualRnn,
    VisualLstm,
    VinNoRelations,
    VisionGroundTruthDynamics,
    InFromState,
    LstmFromState,
}

impl ModelVariant {
    pub const ALL: [ModelVariant; 7] = [
        ModelVariant::Vin,
        ModelVariant::VisualRnn,
        ModelVariant::VisualLstm,
        ModelVariant::VinNoRelations,
        ModelVariant::VisionGroundTruthDynamics,
        ModelVariant::InFromState,
        ModelVariant::LstmFromState,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ModelVariant::Vin => "vin",
            ModelVariant::VisualRnn => "visual-rnn",
            ModelVariant::VisualLstm => "visual-lstm",
            ModelVariant::VinNoRelations => "vin-no-relations",
            ModelVariant::VisionGroundTruthDynamics => "vision-gt-dynamics",
            ModelVariant::InFromState => "in-from-state",
            ModelVariant::LstmFromState => "lstm-from-state",
        }
    }

    /// Whether the model reads frames (and so has an encoder).
    pub fn is_visual(self) -> bool {
        !matches!(
            self,
            ModelVariant::InFromState | ModelVariant::LstmFromState
        )
    }
}

impl std::fmt::Display for ModelVariant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ModelVariant {
    type Err = ModelError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        ModelVariant::ALL
            .into_iter()
            .find(|v| v.name() == s)
            .ok_or_else(|| ModelError::Input(format!("unknown variant {s:?}")))
    }
}

#[derive(Clone, Debug)]
enum Dynamics {
    Offsets(OffsetPredictor),
    Lstm(LstmPredictor),
    /// Single core estimating the code of the last observed frame.
    Current(InCore),
}

/// What a model observes before predicting.
#[derive(Clone, Copy, Debug)]
pub enum Observation<'a> {
    /// `batch` sequences of 6 frames, `[sample][frame][row][col][channel]`.
    Frames { data: &'a [u8], batch: usize },
    /// `batch` sequences of 4 states, `[sample][step][object][px, py, vx, vy]`.
    States { data: &'a [f32], batch: usize },
}

impl Observation<'_> {
    pub fn batch(&self) -> usize {
        match *self {
            Observation::Frames { batch, .. } | Observation::States { batch, .. } => batch,
        }
    }
}

/// Network weights plus the wiring that interprets them.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    variant: ModelVariant,
    n_objects: usize,
    encoder: Option<VisualEncoder>,
    embed: Option<Dense>,
    dynamics: Dynamics,
    decoder: Dense,
    pub params: ParamStore<T>,
}

impl<T: Scalar> Model<T> {
    /// Freshly initialized weights drawn from `seed`.
    pub fn new(variant: ModelVariant, n_objects: usize, seed: u64) -> Self {
        assert!(n_objects > 0, "a model needs at least one object slot");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let (encoder, embed) = if variant.is_visual() {
            (
                Some(VisualEncoder::new(&mut store, &mut rng, n_objects)),
                None,
            )
        } else {
            (
                None,
                Some(Dense::new(
                    &mut store, &mut rng, "embed", STATE_DIM, CODE, false,
                )),
            )
        };
        let dynamics = match variant {
            ModelVariant::Vin | ModelVariant::InFromState => {
                Dynamics::Offsets(OffsetPredictor::interaction(&mut store, &mut rng, true))
            }
            ModelVariant::VinNoRelations => {
                Dynamics::Offsets(OffsetPredictor::interaction(&mut store, &mut rng, false))
            }
            ModelVariant::VisualRnn => {
                Dynamics::Offsets(OffsetPredictor::flat(&mut store, &mut rng, n_objects))
            }
            ModelVariant::VisualLstm | ModelVariant::LstmFromState => {
                Dynamics::Lstm(LstmPredictor::new(&mut store, &mut rng, n_objects))
            }
            ModelVariant::VisionGroundTruthDynamics => {
                Dynamics::Current(InCore::new(&mut store, &mut rng, "dynamics.current", true))
            }
        };
        let decoder = Dense::new(&mut store, &mut rng, "decoder", CODE, STATE_DIM, false);
        Self {
            variant,
            n_objects,
            encoder,
            embed,
            dynamics,
            decoder,
            params: store,
        }
    }

    pub fn variant(&self) -> ModelVariant {
        self.variant
    }

    pub fn n_objects(&self) -> usize {
        self.n_objects
    }

    /// Total number of scalar weights.
    pub fn param_count(&self) -> usize {
        self.params.count()
    }

    /// Weights of every parameter whose name starts with `prefix`.
    pub fn param_count_with_prefix(&self, prefix: &str) -> usize {
        self.params
            .iter()
            .filter(|(n, _)| n.starts_with(prefix))
            .map(|(_, t)| t.len())
            .sum()
    }

    pub fn cast<U: Scalar>(&self) -> Model<U> {
        Model {
            variant: self.variant,
            n_objects: self.n_objects,
            encoder: self.encoder.clone(),
            embed: self.embed,
            dynamics: self.dynamics.clone(),
            decoder: self.decoder,
            params: self.params.cast(),
        }
    }

    /// State codes for the observed window: 6 frames give 4 codes (one per
    /// three-frame window), 4 states give 4 embedded codes.
    pub fn observe(
        &self,
        tape: &Tape<'_, T>,
        obs: &Observation<'_>,
    ) -> Result<Vec<Var>, ModelError> {
        match (*obs, &self.encoder, &self.embed) {
            (Observation::Frames { data, batch }, Some(_), _) => {
                self.encode_frames(tape, data, batch, OBSERVED)
            }
            (Observation::States { data, batch }, _, Some(_)) => {
                self.embed_states(tape, data, batch, HISTORY)
            }
            _ => Err(ModelError::Input(format!(
                "{} cannot observe this input",
                self.variant
            ))),
        }
    }

    /// Codes for every three-frame window of `n_frames` frames.
    pub fn encode_frames(
        &self,
        tape: &Tape<'_, T>,
        frames: &[u8],
        batch: usize,
        n_frames: usize,
    ) -> Result<Vec<Var>, ModelError> {
        let enc = self
            .encoder
            .as_ref()
            .ok_or_else(|| ModelError::Input(format!("{} has no encoder", self.variant)))?;
        enc.encode(tape, frames, batch, n_frames)
    }

    /// One code per state step via the shared 4 -> 64 embedding.
    pub fn embed_states(
        &self,
        tape: &Tape<'_, T>,
        states: &[f32],
        batch: usize,
        steps: usize,
    ) -> Result<Vec<Var>, ModelError> {
        let embed = self
            .embed
            .ok_or_else(|| ModelError::Input(format!("{} reads frames", self.variant)))?;
        let per = self.n_objects * STATE_DIM;
        if states.len() != batch * steps * per {
            return Err(ModelError::Input(format!(
                "{} state values for {batch}x{steps} steps",
                states.len()
            )));
        }
        (0..steps)
            .map(|t| {
                let mut rows = Vec::with_capacity(batch * per);
                for b in 0..batch {
                    let s = &states[(b * steps + t) * per..][..per];
                    rows.extend(s.iter().map(|&v| T::from_f64(v as f64)));
                }
                let x = tape.constant(Tensor::new(&[batch * self.n_objects, STATE_DIM], rows)?);
                Ok(embed.forward(tape, x)?)
            })
            .collect()
    }

    /// Next code from exactly four codes, oldest first.
    pub fn predict(&self, tape: &Tape<'_, T>, history: &[Var]) -> Result<Var, ModelError> {
        Ok(*self
            .rollout_codes(tape, history, 1)?
            .last()
            .expect("one step"))
    }

    /// Rolls the predictor forward `horizon` steps on its own outputs.
    pub fn rollout_codes(
        &self,
        tape: &Tape<'_, T>,
        history: &[Var],
        horizon: usize,
    ) -> Result<Vec<Var>, ModelError> {
        if history.len() != HISTORY {
            return Err(ModelError::Input(format!(
                "predictor needs {HISTORY} codes, got {}",
                history.len()
            )));
        }
        if horizon == 0 {
            return Err(ModelError::Input(
                "rollout horizon must be at least 1".into(),
            ));
        }
        let n = self.n_objects;
        let mut out = Vec::with_capacity(horizon);
        match &self.dynamics {
            Dynamics::Offsets(p) => {
                let mut window = history.to_vec();
                for _ in 0..horizon {
                    let next = p.forward(tape, &window, n)?;
                    window.remove(0);
                    window.push(next);
                    out.push(next);
                }
            }
            Dynamics::Lstm(p) => {
                let rows = tape.shape(history[0])[0];
                let mut state = p.initial_state(tape, rows / n);
                let mut next = history[0];
                for &code in history {
                    (next, state) = p.step(tape, code, state, n)?;
                }
                out.push(next);
                while out.len() < horizon {
                    (next, state) = p.step(tape, next, state, n)?;
                    out.push(next);
                }
            }
            Dynamics::Current(_) => {
                return Err(ModelError::Input(format!(
                    "{} rolls out with the physics engine",
                    self.variant
                )));
            }
        }
        Ok(out)
    }

    /// Estimate of the code of the most recent observed frame (only for the
    /// ground-truth-dynamics variant).
    pub fn estimate_current(&self, tape: &Tape<'_, T>, history: &[Var]) -> Result<Var, ModelError> {
        match &self.dynamics {
            Dynamics::Current(core) => {
                let last = *history
                    .last()
                    .ok_or_else(|| ModelError::Input("empty history".into()))?;
                core.forward(tape, last, self.n_objects)
            }
            _ => Err(ModelError::Input(format!(
                "{} predicts future states",
                self.variant
            ))),
        }
    }

    /// Applies the interaction core reading temporal offset `offset` (any
    /// offset for the ground-truth-dynamics variant's single core).
    pub fn interaction_core(
        &self,
        tape: &Tape<'_, T>,
        code: Var,
        offset: usize,
    ) -> Result<Var, ModelError> {
        let missing = || {
            ModelError::Input(format!(
                "{} has no interaction core at offset {offset}",
                self.variant
            ))
        };
        match &self.dynamics {
            Dynamics::Current(core) => core.forward(tape, code, self.n_objects),
            Dynamics::Offsets(p) => {
                let i = OFFSETS
                    .iter()
                    .position(|&k| k == offset)
                    .ok_or_else(missing)?;
                match &p.cores[i] {
                    dynamics::OffsetCore::Interaction(core) => {
                        core.forward(tape, code, self.n_objects)
                    }
                    dynamics::OffsetCore::Flat(_) => Err(missing()),
                }
            }
            Dynamics::Lstm(_) => Err(missing()),
        }
    }

    /// Shared 64 -> 4 affine map per slot: `[rows, 64] -> [rows, 4]`.
    pub fn decode(&self, tape: &Tape<'_, T>, code: Var) -> Result<Var, ModelError> {
        Ok(self.decoder.forward(tape, code)?)
    }

    /// Decoded states for `horizon` predicted steps, each `[batch * n, 4]`.
    pub fn rollout(
        &self,
        obs: &Observation<'_>,
        horizon: usize,
    ) -> Result<Vec<Tensor<T>>, ModelError> {
        let tape = Tape::with_params(&self.params);
        let codes = self.observe(&tape, obs)?;
        let predicted = self.rollout_codes(&tape, &codes, horizon)?;
        predicted
            .into_iter()
            .map(|c| Ok(tape.value(self.decode(&tape, c)?).clone()))
            .collect()
    }
}

impl Model<f32> {
    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint::new(&self.params)
            .with_meta("variant", self.variant.name())
            .with_meta("n_objects", self.n_objects.to_string())
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self, ModelError> {
        let meta = |k: &str| {
            ckpt.meta
                .get(k)
                .ok_or_else(|| ModelError::Checkpoint(format!("missing {k}")))
        };
        let variant: ModelVariant = meta("variant")?.parse()?;
        let n: usize = meta("n_objects")?
            .parse()
            .map_err(|_| ModelError::Checkpoint("bad n_objects".into()))?;
        let mut model = Model::new(variant, n, 0);
        model.params.assign_from(&ckpt.params)?;
        Ok(model)
    }
}
