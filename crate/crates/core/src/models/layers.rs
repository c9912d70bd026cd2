use rand::Rng;

use crate::numeric::{NumericError, ParamId, ParamStore, Scalar, Tape, Tensor, Var};

/// Uniform weights in `[-a, a]`; `a = sqrt(6 / fan_in)` ahead of a ReLU and
/// `sqrt(3 / fan_in)` for linear outputs.
fn uniform<T: Scalar, R: Rng>(
    rng: &mut R,
    shape: &[usize],
    fan_in: usize,
    relu: bool,
) -> Tensor<T> {
    let a = if relu {
        (6.0 / fan_in as f64).sqrt()
    } else {
        (3.0 / fan_in as f64).sqrt()
    };
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64(rng.gen_range(-a..=a))).collect();
    Tensor::new(shape, data).expect("shape and data agree")
}

/// Affine map `x w + b` on row-batched inputs.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Dense {
    pub w: ParamId,
    pub b: ParamId,
}

impl Dense {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        input: usize,
        output: usize,
        relu: bool,
    ) -> Self {
        let w = store.insert(
            format!("{name}.w"),
            uniform(rng, &[input, output], input, relu),
        );
        let b = store.insert(format!("{name}.b"), Tensor::zeros(&[output]));
        Self { w, b }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, x: Var) -> Result<Var, NumericError> {
        tape.linear(x, tape.param(self.w), tape.param(self.b))
    }
}

/// Stack of dense layers with ReLU between them and a linear last layer.
#[derive(Clone, Debug)]
pub(crate) struct Mlp {
    pub layers: Vec<Dense>,
}

impl Mlp {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        input: usize,
        sizes: &[usize],
    ) -> Self {
        let mut layers = Vec::with_capacity(sizes.len());
        let mut width = input;
        for (i, &size) in sizes.iter().enumerate() {
            let hidden = i + 1 < sizes.len();
            layers.push(Dense::new(
                store,
                rng,
                &format!("{name}.{i}"),
                width,
                size,
                hidden,
            ));
            width = size;
        }
        Self { layers }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, mut x: Var) -> Result<Var, NumericError> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(tape, x)?;
            if i + 1 < self.layers.len() {
                x = tape.relu(x);
            }
        }
        Ok(x)
    }
}

/// Size-preserving convolution followed by a bias and ReLU.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Conv {
    pub kernel: ParamId,
    pub bias: ParamId,
}

impl Conv {
    pub fn new<T: Scalar, R: Rng>(
        store: &mut ParamStore<T>,
        rng: &mut R,
        name: &str,
        k: usize,
        c_in: usize,
        c_out: usize,
    ) -> Self {
        let kernel = store.insert(
            format!("{name}.w"),
            uniform(rng, &[k, k, c_in, c_out], k * k * c_in, true),
        );
        let bias = store.insert(format!("{name}.b"), Tensor::zeros(&[c_out]));
        Self { kernel, bias }
    }

    pub fn forward<T: Scalar>(&self, tape: &Tape<'_, T>, x: Var) -> Result<Var, NumericError> {
        Ok(tape.relu(self.forward_linear(tape, x)?))
    }

    pub fn forward_linear<T: Scalar>(
        &self,
        tape: &Tape<'_, T>,
        x: Var,
    ) -> Result<Var, NumericError> {
        let y = tape.conv2d(x, tape.param(self.kernel))?;
        tape.add_bias(y, tape.param(self.bias))
    }
}
