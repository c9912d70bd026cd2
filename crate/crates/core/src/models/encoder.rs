use rand::Rng;

use super::layers::{Conv, Dense, Mlp};
use super::{ModelError, CODE};
use crate::numeric::{ParamStore, Scalar, Tape, Tensor, Var};
use crate::render::{FRAME_BYTES, FRAME_SIZE};

/// Width of a frame-pair candidate vector.
pub const PAIR_CODE: usize = 32;

/// Channels of the five conv/pool stages that shrink 32x32 to 1x1.
const POOL_CHANNELS: [usize; 5] = [16, 16, 16, 32, 32];

/// CNN from two stacked frames to a length-32 vector.
#[derive(Clone, Debug)]
pub(crate) struct PairEncoder {
    wide: [Conv; 2],
    narrow: [Conv; 2],
    merge: [Conv; 2],
    pool: Vec<Conv>,
}

impl PairEncoder {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R) -> Self {
        let wide = [
            Conv::new(store, rng, "encoder.wide.0", 10, 6, 4),
            Conv::new(store, rng, "encoder.wide.1", 10, 4, 4),
        ];
        let narrow = [
            Conv::new(store, rng, "encoder.narrow.0", 3, 6, 16),
            Conv::new(store, rng, "encoder.narrow.1", 3, 16, 16),
        ];
        let merge = [
            Conv::new(store, rng, "encoder.merge.0", 3, 20, 16),
            Conv::new(store, rng, "encoder.merge.1", 3, 16, 16),
        ];
        let mut pool = Vec::with_capacity(POOL_CHANNELS.len());
        let mut c_in = 16 + 2;
        for (i, &c) in POOL_CHANNELS.iter().enumerate() {
            pool.push(Conv::new(
                store,
                rng,
                &format!("encoder.pool.{i}"),
                3,
                c_in,
                c,
            ));
            c_in = c;
        }
        Self {
            wide,
            narrow,
            merge,
            pool,
        }
    }

    /// `pairs: [P, 32, 32, 6]` -> `[P, 32]`.
    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, pairs: Var) -> Result<Var, ModelError> {
        let p = tape.shape(pairs)[0];
        let a = self.wide[1].forward(tape, self.wide[0].forward(tape, pairs)?)?;
        let b = self.narrow[1].forward(tape, self.narrow[0].forward(tape, pairs)?)?;
        let mut x = tape.concat(&[a, b])?;
        x = self.merge[1].forward(tape, self.merge[0].forward(tape, x)?)?;
        let coords = tape.constant(coordinate_channels(p));
        x = tape.concat(&[x, coords])?;
        let (last, hidden) = self.pool.split_last().expect("five pool stages");
        for conv in hidden {
            x = tape.maxpool2(conv.forward(tape, x)?)?;
        }
        // no ReLU on the last stage so the pair code can carry signed values
        x = tape.maxpool2(last.forward_linear(tape, x)?)?;
        Ok(tape.reshape(x, &[p, PAIR_CODE])?)
    }
}

/// Two constant channels per pixel: column and row scaled to `[0, 1]`.
pub fn coordinate_channels<T: Scalar>(images: usize) -> Tensor<T> {
    let last = (FRAME_SIZE - 1) as f64;
    let mut data = Vec::with_capacity(images * FRAME_SIZE * FRAME_SIZE * 2);
    for _ in 0..images {
        for row in 0..FRAME_SIZE {
            for col in 0..FRAME_SIZE {
                data.push(T::from_f64(col as f64 / last));
                data.push(T::from_f64(row as f64 / last));
            }
        }
    }
    Tensor::new(&[images, FRAME_SIZE, FRAME_SIZE, 2], data).expect("coordinate grid")
}

/// Frame-pair encoder, per-pair projection to slots, and the slot MLP that
/// merges two consecutive pairs into a state code.
#[derive(Clone, Debug)]
pub(crate) struct VisualEncoder {
    pub pair: PairEncoder,
    pub to_slots: Dense,
    pub slot_mlp: Mlp,
    pub n_objects: usize,
}

impl VisualEncoder {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        n_objects: usize,
    ) -> Self {
        let pair = PairEncoder::new(store, rng);
        let to_slots = Dense::new(
            store,
            rng,
            "encoder.to_slots",
            PAIR_CODE,
            n_objects * CODE,
            false,
        );
        let slot_mlp = Mlp::new(store, rng, "encoder.slot", 2 * CODE, &[CODE, CODE]);
        Self {
            pair,
            to_slots,
            slot_mlp,
            n_objects,
        }
    }

    /// Encodes `batch` sequences of `n_frames` consecutive frames (bytes in
    /// `[sample][frame][row][col][channel]` order) into `n_frames - 2` state
    /// codes, each `[batch * n_objects, 64]` with rows ordered by sample then
    /// slot. Code `w` summarizes frames `w, w + 1, w + 2`.
    pub fn encode<T: Scalar>(
        &self,
        tape: &Tape<'_, T>,
        frames: &[u8],
        batch: usize,
        n_frames: usize,
    ) -> Result<Vec<Var>, ModelError> {
        if n_frames < 3 || frames.len() != batch * n_frames * FRAME_BYTES {
            return Err(ModelError::Input(format!(
                "{} frame bytes for {batch} sequences of {n_frames} frames",
                frames.len()
            )));
        }
        let pairs_per = n_frames - 1;
        let px = FRAME_SIZE * FRAME_SIZE;
        let scale = 1.0 / 255.0;
        let mut stacked = Vec::with_capacity(batch * pairs_per * px * 6);
        for b in 0..batch {
            for t in 0..pairs_per {
                let f1 = &frames[(b * n_frames + t) * FRAME_BYTES..][..FRAME_BYTES];
                let f2 = &frames[(b * n_frames + t + 1) * FRAME_BYTES..][..FRAME_BYTES];
                for i in 0..px {
                    for f in [f1, f2] {
                        stacked.extend(
                            f[3 * i..3 * i + 3]
                                .iter()
                                .map(|&v| T::from_f64(v as f64 * scale)),
                        );
                    }
                }
            }
        }
        let input = tape.constant(Tensor::new(
            &[batch * pairs_per, FRAME_SIZE, FRAME_SIZE, 6],
            stacked,
        )?);
        let pair_codes = self.pair.forward(tape, input)?;
        let slots = self.to_slots.forward(tape, pair_codes)?;
        let n = self.n_objects;
        let slots = tape.reshape(slots, &[batch * pairs_per * n, CODE])?;

        let windows = n_frames - 2;
        let mut first = Vec::with_capacity(windows * batch * n);
        let mut second = Vec::with_capacity(windows * batch * n);
        for w in 0..windows {
            for b in 0..batch {
                for i in 0..n {
                    first.push((b * pairs_per + w) * n + i);
                    second.push((b * pairs_per + w + 1) * n + i);
                }
            }
        }
        let joined = tape.concat(&[
            tape.gather_rows(slots, &first)?,
            tape.gather_rows(slots, &second)?,
        ])?;
        let codes = self.slot_mlp.forward(tape, joined)?;
        let rows = batch * n;
        (0..windows)
            .map(|w| Ok(tape.gather_rows(codes, &(w * rows..(w + 1) * rows).collect::<Vec<_>>())?))
            .collect()
    }
}
