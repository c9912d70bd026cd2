//! Finite-difference verification of every differentiable tape operation.
//!
//! Each case builds a small random instance in `f64`, reduces the output to a
//! scalar through a random projection, and compares the tape's gradient with
//! central differences of the forward pass alone.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{lstm_cell, LstmWeights, NumericError, Tape, Tensor, Var};

pub const FD_STEP: f64 = 1e-5;
pub const REL_TOLERANCE: f64 = 1e-4;

/// Outcome of checking one operation over several random instances.
#[derive(Clone, Debug)]
pub struct OpCheck {
    pub op: &'static str,
    pub instances: usize,
    pub max_rel_error: f64,
}

impl OpCheck {
    pub fn passed(&self, tolerance: f64) -> bool {
        self.max_rel_error <= tolerance
    }
}

/// Relative error with an absolute floor for gradients that are ~0.
pub fn rel_error(analytic: f64, numeric: f64) -> f64 {
    let scale = analytic.abs().max(numeric.abs());
    if scale < 1e-7 {
        (analytic - numeric).abs()
    } else {
        (analytic - numeric).abs() / scale
    }
}

type Build = fn(&Tape<'_, f64>, &[Var]) -> Result<Var, NumericError>;

struct Case {
    name: &'static str,
    inputs: fn(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
    build: Build,
}

fn uniform(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values bounded away from zero so ReLU kinks stay out of the FD stencil.
fn away_from_zero(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n = shape.iter().product();
    let data = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen::<bool>() {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, data).unwrap()
}

/// Distinct values on a 1e-2 grid so no pooling window has a near-tie.
fn distinct(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor<f64> {
    let n: usize = shape.iter().product();
    let mut values: Vec<f64> = (0..n)
        .map(|i| i as f64 * 1e-2 - 0.5 * n as f64 * 1e-2)
        .collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        values.swap(i, j);
    }
    Tensor::new(shape, values).unwrap()
}

fn cases() -> Vec<Case> {
    vec![
        Case {
            name: "matmul",
            inputs: |r| vec![uniform(r, &[3, 4]), uniform(r, &[4, 5])],
            build: |t, v| t.matmul(v[0], v[1]),
        },
        Case {
            name: "add_bias",
            inputs: |r| vec![uniform(r, &[2, 3, 4]), uniform(r, &[4])],
            build: |t, v| t.add_bias(v[0], v[1]),
        },
        Case {
            name: "linear",
            inputs: |r| vec![uniform(r, &[1, 6]), uniform(r, &[6, 4]), uniform(r, &[4])],
            build: |t, v| t.linear(v[0], v[1], v[2]),
        },
        Case {
            name: "add",
            inputs: |r| vec![uniform(r, &[3, 3]), uniform(r, &[3, 3])],
            build: |t, v| t.add(v[0], v[1]),
        },
        Case {
            name: "sub",
            inputs: |r| vec![uniform(r, &[3, 3]), uniform(r, &[3, 3])],
            build: |t, v| t.sub(v[0], v[1]),
        },
        Case {
            name: "mul",
            inputs: |r| vec![uniform(r, &[3, 3]), uniform(r, &[3, 3])],
            build: |t, v| t.mul(v[0], v[1]),
        },
        Case {
            name: "scale",
            inputs: |r| vec![uniform(r, &[7])],
            build: |t, v| Ok(t.scale(v[0], -1.75)),
        },
        Case {
            name: "relu",
            inputs: |r| vec![away_from_zero(r, &[4, 5])],
            build: |t, v| Ok(t.relu(v[0])),
        },
        Case {
            name: "sigmoid",
            inputs: |r| vec![uniform(r, &[4, 5])],
            build: |t, v| Ok(t.sigmoid(v[0])),
        },
        Case {
            name: "tanh",
            inputs: |r| vec![uniform(r, &[4, 5])],
            build: |t, v| Ok(t.tanh(v[0])),
        },
        Case {
            name: "concat",
            inputs: |r| {
                vec![
                    uniform(r, &[3, 2]),
                    uniform(r, &[3, 4]),
                    uniform(r, &[3, 1]),
                ]
            },
            build: |t, v| t.concat(&[v[0], v[1], v[2]]),
        },
        Case {
            name: "reshape",
            inputs: |r| vec![uniform(r, &[2, 6])],
            build: |t, v| t.reshape(v[0], &[3, 4]),
        },
        Case {
            name: "slice",
            inputs: |r| vec![uniform(r, &[3, 6])],
            build: |t, v| t.slice(v[0], 1, 4),
        },
        Case {
            name: "gather_rows",
            inputs: |r| vec![uniform(r, &[4, 3])],
            build: |t, v| t.gather_rows(v[0], &[2, 0, 2, 3, 1]),
        },
        Case {
            name: "scatter_add_rows",
            inputs: |r| vec![uniform(r, &[5, 3])],
            build: |t, v| t.scatter_add_rows(v[0], &[1, 0, 1, 2, 1], 3),
        },
        Case {
            name: "conv2d_k3",
            inputs: |r| vec![uniform(r, &[1, 5, 5, 1]), uniform(r, &[3, 3, 1, 1])],
            build: |t, v| t.conv2d(v[0], v[1]),
        },
        Case {
            name: "conv2d_k4_even",
            inputs: |r| vec![uniform(r, &[2, 6, 6, 2]), uniform(r, &[4, 4, 2, 3])],
            build: |t, v| t.conv2d(v[0], v[1]),
        },
        Case {
            name: "conv2d_k1",
            inputs: |r| vec![uniform(r, &[1, 3, 4, 3]), uniform(r, &[1, 1, 3, 2])],
            build: |t, v| t.conv2d(v[0], v[1]),
        },
        Case {
            name: "maxpool2",
            inputs: |r| vec![distinct(r, &[2, 4, 6, 2])],
            build: |t, v| t.maxpool2(v[0]),
        },
        Case {
            name: "sum",
            inputs: |r| vec![uniform(r, &[2, 5])],
            build: |t, v| Ok(t.sum(v[0])),
        },
        Case {
            name: "mse",
            inputs: |r| vec![uniform(r, &[3, 4]), uniform(r, &[3, 4])],
            build: |t, v| t.mse(v[0], v[1]),
        },
        Case {
            name: "lstm_cell_3_steps",
            inputs: |r| {
                vec![
                    uniform(r, &[2, 3]),
                    uniform(r, &[2, 3]),
                    uniform(r, &[2, 3]),
                    uniform(r, &[3, 16]),
                    uniform(r, &[4, 16]),
                    uniform(r, &[16]),
                ]
            },
            build: |t, v| {
                let w = LstmWeights {
                    w_input: v[3],
                    w_hidden: v[4],
                    bias: v[5],
                };
                let zero = t.constant(Tensor::zeros(&[2, 4]));
                let (mut h, mut c) = (zero, zero);
                for &x in &v[..3] {
                    (h, c) = lstm_cell(t, x, h, c, w)?;
                }
                t.concat(&[h, c])
            },
        },
        Case {
            name: "composed_conv_relu_pool_linear",
            inputs: |r| {
                vec![
                    uniform(r, &[1, 4, 4, 2]),
                    uniform(r, &[3, 3, 2, 2]),
                    uniform(r, &[8, 3]),
                    uniform(r, &[3]),
                ]
            },
            build: |t, v| {
                let c = t.conv2d(v[0], v[1])?;
                let p = t.maxpool2(t.tanh(c))?;
                let flat = t.reshape(p, &[1, 8])?;
                t.linear(flat, v[2], v[3])
            },
        },
    ]
}

fn projected_loss(
    build: Build,
    inputs: &[Tensor<f64>],
    weights: &Tensor<f64>,
) -> Result<f64, NumericError> {
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let out = build(&tape, &vars)?;
    let value = tape.value(out);
    Ok(value
        .data()
        .iter()
        .zip(weights.data())
        .map(|(a, b)| a * b)
        .sum())
}

fn check_instance(case: &Case, rng: &mut ChaCha8Rng) -> Result<f64, NumericError> {
    let inputs = (case.inputs)(rng);
    let tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|x| tape.variable(x.clone())).collect();
    let out = (case.build)(&tape, &vars)?;
    let out_shape = tape.shape(out);
    let weights = uniform(rng, &out_shape);
    let w = tape.constant(weights.clone());
    let loss = tape.sum(tape.mul(out, w)?);
    let grads = tape.backward(loss)?;

    let mut worst = 0.0f64;
    for (k, var) in vars.iter().enumerate() {
        let analytic = grads
            .wrt(*var)
            .unwrap_or_else(|| Tensor::zeros(inputs[k].shape()));
        for i in 0..inputs[k].len() {
            let mut plus = inputs.clone();
            plus[k].data_mut()[i] += FD_STEP;
            let mut minus = inputs.clone();
            minus[k].data_mut()[i] -= FD_STEP;
            let numeric = (projected_loss(case.build, &plus, &weights)?
                - projected_loss(case.build, &minus, &weights)?)
                / (2.0 * FD_STEP);
            worst = worst.max(rel_error(analytic.data()[i], numeric));
        }
    }
    Ok(worst)
}

/// Runs every case on `instances` random draws.
pub fn check_all(instances: usize, seed: u64) -> Result<Vec<OpCheck>, NumericError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    cases()
        .iter()
        .map(|case| {
            let mut worst = 0.0f64;
            for _ in 0..instances {
                worst = worst.max(check_instance(case, &mut rng)?);
            }
            Ok(OpCheck {
                op: case.name,
                instances,
                max_rel_error: worst,
            })
        })
        .collect()
}
