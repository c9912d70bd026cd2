use rand::Rng;

use super::layers::{Dense, Mlp};
use super::{ModelError, CODE};
use crate::numeric::{lstm_cell, LstmWeights, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// Number of past codes the offset predictors read.
pub const HISTORY: usize = 4;
/// Temporal offsets of the three cores; offset `k` reads the code `k` steps
/// back from the prediction.
pub const OFFSETS: [usize; 3] = [4, 2, 1];

pub const LSTM_HIDDEN: usize = 128;

/// Interaction-network core on a row-batched state code.
#[derive(Clone, Debug)]
pub(crate) struct InCore {
    self_mlp: Mlp,
    relation: Option<Mlp>,
    affector: Mlp,
    output: Mlp,
}

impl InCore {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        relations: bool,
    ) -> Self {
        let self_mlp = Mlp::new(store, rng, &format!("{name}.self"), CODE, &[CODE, CODE]);
        let relation = relations.then(|| {
            Mlp::new(
                store,
                rng,
                &format!("{name}.relation"),
                2 * CODE,
                &[CODE, CODE, CODE],
            )
        });
        let affector = Mlp::new(
            store,
            rng,
            &format!("{name}.affector"),
            CODE,
            &[CODE, CODE, CODE],
        );
        let output = Mlp::new(store, rng, &format!("{name}.output"), 2 * CODE, &[32, CODE]);
        Self {
            self_mlp,
            relation,
            affector,
            output,
        }
    }

    #[cfg(test)]
    pub fn without_relations(&self) -> Self {
        Self {
            relation: None,
            ..self.clone()
        }
    }

    /// `code: [batch * n, 64]` -> `[batch * n, 64]`.
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<'_, T>,
        code: Var,
        n: usize,
    ) -> Result<Var, ModelError> {
        let rows = tape.shape(code)[0];
        let mut update = self.self_mlp.forward(tape, code)?;
        if let Some(relation) = self.relation.as_ref().filter(|_| n > 1) {
            // ordered pairs (i, j), i != j, grouped by receiver i with j ascending
            let (mut receiver, mut sender) = (Vec::new(), Vec::new());
            for b in 0..rows / n {
                for i in 0..n {
                    for j in (0..n).filter(|&j| j != i) {
                        receiver.push(b * n + i);
                        sender.push(b * n + j);
                    }
                }
            }
            let pairs = tape.concat(&[
                tape.gather_rows(code, &receiver)?,
                tape.gather_rows(code, &sender)?,
            ])?;
            let effects = relation.forward(tape, pairs)?;
            update = tape.add(update, tape.scatter_add_rows(effects, &receiver, rows)?)?;
        }
        let affect = self.affector.forward(tape, update)?;
        Ok(self.output.forward(tape, tape.concat(&[code, affect])?)?)
    }
}

/// Core applied at each temporal offset.
#[derive(Clone, Debug)]
pub(crate) enum OffsetCore {
    Interaction(InCore),
    /// MLP over the whole flattened code.
    Flat(Mlp),
}

impl OffsetCore {
    fn forward<T: Scalar>(
        &self,
        tape: &Tape<'_, T>,
        code: Var,
        n: usize,
    ) -> Result<Var, ModelError> {
        match self {
            OffsetCore::Interaction(core) => core.forward(tape, code, n),
            OffsetCore::Flat(mlp) => {
                let rows = tape.shape(code)[0];
                let flat = tape.reshape(code, &[rows / n, n * CODE])?;
                Ok(tape.reshape(mlp.forward(tape, flat)?, &[rows, CODE])?)
            }
        }
    }
}

/// Three offset cores plus a slot-wise aggregator.
#[derive(Clone, Debug)]
pub(crate) struct OffsetPredictor {
    pub cores: Vec<OffsetCore>,
    pub aggregator: Mlp,
}

impl OffsetPredictor {
    pub fn interaction<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        relations: bool,
    ) -> Self {
        let cores = OFFSETS
            .iter()
            .map(|k| {
                OffsetCore::Interaction(InCore::new(
                    store,
                    rng,
                    &format!("dynamics.core{k}"),
                    relations,
                ))
            })
            .collect();
        let aggregator = Mlp::new(store, rng, "dynamics.aggregator", 3 * CODE, &[32, CODE]);
        Self { cores, aggregator }
    }

    pub fn flat<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, n: usize) -> Self {
        let cores = OFFSETS
            .iter()
            .map(|k| {
                let sizes = [CODE, CODE, CODE, CODE, n * CODE];
                OffsetCore::Flat(Mlp::new(
                    store,
                    rng,
                    &format!("dynamics.core{k}"),
                    n * CODE,
                    &sizes,
                ))
            })
            .collect();
        let aggregator = Mlp::new(store, rng, "dynamics.aggregator", 3 * CODE, &[32, CODE]);
        Self { cores, aggregator }
    }

    /// Next code from exactly four consecutive codes, oldest first.
    pub fn forward<T: Scalar>(
        &self,
        tape: &Tape<'_, T>,
        history: &[Var],
        n: usize,
    ) -> Result<Var, ModelError> {
        if history.len() != HISTORY {
            return Err(ModelError::Input(format!(
                "predictor needs {HISTORY} codes, got {}",
                history.len()
            )));
        }
        let candidates = OFFSETS
            .iter()
            .zip(&self.cores)
            .map(|(&k, core)| core.forward(tape, history[HISTORY - k], n))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(self.aggregator.forward(tape, tape.concat(&candidates)?)?)
    }
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmParams {
    w_input: ParamId,
    w_hidden: ParamId,
    bias: ParamId,
}

/// Pre-MLP on the flattened code, LSTM, post-MLP back to per-slot vectors
/// and a slot-wise head to full codes.
#[derive(Clone, Debug)]
pub(crate) struct LstmPredictor {
    pre: Mlp,
    cell: LstmParams,
    post: Mlp,
    head: Mlp,
}

/// Recurrent state carried across steps, `[batch, 128]` each.
#[derive(Clone, Copy, Debug)]
pub(crate) struct LstmState {
    pub hidden: Var,
    pub cell: Var,
}

impl LstmPredictor {
    pub fn new<T: Scalar, R: Rng>(store: &mut ParamStore<T>, rng: &mut R, n: usize) -> Self {
        let pre = Mlp::new(store, rng, "dynamics.pre", n * CODE, &[CODE, CODE]);
        let gates = 4 * LSTM_HIDDEN;
        let wi = Dense::new(store, rng, "dynamics.lstm.input", CODE, gates, false);
        let wh = store.insert("dynamics.lstm.hidden.w", {
            let a = (3.0 / LSTM_HIDDEN as f64).sqrt();
            let data = (0..LSTM_HIDDEN * gates)
                .map(|_| T::from_f64(rng.gen_range(-a..=a)))
                .collect();
            Tensor::new(&[LSTM_HIDDEN, gates], data).expect("lstm shape")
        });
        let cell = LstmParams {
            w_input: wi.w,
            w_hidden: wh,
            bias: wi.b,
        };
        let post = Mlp::new(store, rng, "dynamics.post", LSTM_HIDDEN, &[32, n * 32]);
        let head = Mlp::new(store, rng, "dynamics.head", 32, &[32, CODE]);
        Self {
            pre,
            cell,
            post,
            head,
        }
    }

    pub fn initial_state<T: Scalar>(&self, tape: &Tape<'_, T>, batch: usize) -> LstmState {
        let zeros = || tape.constant(Tensor::zeros(&[batch, LSTM_HIDDEN]));
        LstmState {
            hidden: zeros(),
            cell: zeros(),
        }
    }

    /// Consumes one code and returns the predicted next code.
    pub fn step<T: Scalar>(
        &self,
        tape: &Tape<'_, T>,
        code: Var,
        state: LstmState,
        n: usize,
    ) -> Result<(Var, LstmState), ModelError> {
        let rows = tape.shape(code)[0];
        let flat = tape.reshape(code, &[rows / n, n * CODE])?;
        let x = self.pre.forward(tape, flat)?;
        let w = LstmWeights {
            w_input: tape.param(self.cell.w_input),
            w_hidden: tape.param(self.cell.w_hidden),
            bias: tape.param(self.cell.bias),
        };
        let (hidden, cell) = lstm_cell(tape, x, state.hidden, state.cell, w)?;
        let slots = tape.reshape(self.post.forward(tape, hidden)?, &[rows, 32])?;
        let next = self.head.forward(tape, slots)?;
        Ok((next, LstmState { hidden, cell }))
    }
}
