//! Dense tensors, a reverse-mode tape, Adam, and checkpoint files.

mod adam;
mod checkpoint;
pub mod gradcheck;
mod params;
mod scalar;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::Checkpoint;
pub use params::{ParamId, ParamStore};
pub use scalar::Scalar;
pub use tape::{Gradients, Tape, Var};
pub use tensor::Tensor;

#[derive(Debug, thiserror::Error)]
pub enum NumericError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value in {what}")]
    NonFinite { what: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// LSTM cell parameters: `[input, 4h]`, `[h, 4h]`, `[4h]`, gates ordered
/// input, forget, candidate, output.
#[derive(Clone, Copy, Debug)]
pub struct LstmWeights {
    pub w_input: Var,
    pub w_hidden: Var,
    pub bias: Var,
}

/// One step of a standard LSTM on row-batched vectors.
///
/// `input: [B, n]`, `hidden`/`cell: [B, h]`; returns `(hidden', cell')`.
pub fn lstm_cell<T: Scalar>(
    tape: &Tape<'_, T>,
    input: Var,
    hidden: Var,
    cell: Var,
    w: LstmWeights,
) -> Result<(Var, Var), NumericError> {
    let h = tape.shape(hidden)[1];
    if tape.shape(cell) != tape.shape(hidden) || tape.shape(w.w_hidden) != [h, 4 * h] {
        return Err(NumericError::Shape(format!(
            "lstm hidden {:?} cell {:?} recurrent weights {:?}",
            tape.shape(hidden),
            tape.shape(cell),
            tape.shape(w.w_hidden)
        )));
    }
    let zx = tape.matmul(input, w.w_input)?;
    let zh = tape.matmul(hidden, w.w_hidden)?;
    let z = tape.add(zx, zh)?;
    let z = tape.add_bias(z, w.bias)?;
    let i = tape.sigmoid(tape.slice(z, 0, h)?);
    let f = tape.sigmoid(tape.slice(z, h, 2 * h)?);
    let g = tape.tanh(tape.slice(z, 2 * h, 3 * h)?);
    let o = tape.sigmoid(tape.slice(z, 3 * h, 4 * h)?);
    let kept = tape.mul(f, cell)?;
    let written = tape.mul(i, g)?;
    let cell_next = tape.add(kept, written)?;
    let hidden_next = tape.mul(o, tape.tanh(cell_next))?;
    Ok((hidden_next, cell_next))
}
